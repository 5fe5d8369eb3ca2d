use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use ralstm::corpus::{delexicalize, Example, Vocab};
use ralstm::model::checkpoint;

use super::{config_value, resolve_config};
use crate::args::InspectArgs;
use crate::data::load_sources;
use crate::error::{CliError, CliResult};
use crate::rundir::{RunDir, RunManifest};

fn distinct_das(xs: &[Example]) -> usize {
    xs.iter().map(|e| e.da.render()).collect::<BTreeSet<_>>().len()
}

pub fn inspect(args: &InspectArgs, argv: &[String], stdout: &mut dyn Write) -> CliResult<()> {
    if args.data.is_empty() && args.checkpoint.is_none() {
        return Err(CliError::usage("give --data and/or --checkpoint"));
    }
    let cfg = resolve_config(&args.config, Vec::new())?;
    let mut out = String::new();
    let mut manifest = RunManifest::new("inspect", argv, config_value(&cfg));

    if !args.data.is_empty() {
        let sources = load_sources(&args.data, cfg.split_ratio())?;
        for d in &sources.domains {
            let s = &d.splits;
            let all: Vec<&Example> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
            let lens: Vec<usize> = all.iter().map(|e| e.reference.split_whitespace().count()).collect();
            let unmatched: usize = all
                .iter()
                .map(|e| delexicalize(&e.reference, &e.da, &d.schema).unmatched.len())
                .sum();
            let vocab = Vocab::from_examples(&d.schema, &s.train);
            let delex = d.schema.slots.iter().filter(|x| x.delexicalizable).count();
            let _ = writeln!(out, "domain {} ({})", d.name, d.dir.display());
            let _ = writeln!(
                out,
                "  acts {}, slots {} ({delex} delexicalized)",
                d.schema.acts.len(),
                d.schema.slots.len()
            );
            let _ = writeln!(
                out,
                "  split train {} / validation {} / test {}",
                s.train.len(),
                s.validation.len(),
                s.test.len()
            );
            let _ = writeln!(
                out,
                "  distinct DAs {} / {} / {}",
                distinct_das(&s.train),
                distinct_das(&s.validation),
                distinct_das(&s.test)
            );
            let _ = writeln!(out, "  vocabulary {} tokens (training split)", vocab.len());
            if !lens.is_empty() {
                let _ = writeln!(
                    out,
                    "  references: mean {:.1} words, max {}",
                    lens.iter().sum::<usize>() as f64 / lens.len() as f64,
                    lens.iter().max().unwrap()
                );
            }
            let _ = writeln!(out, "  slot values not found verbatim in their reference: {unmatched}");
        }
        if sources.domains.len() > 1 {
            let (a, b, c) = sources.pooled.counts();
            let _ = writeln!(
                out,
                "pooled {}: {} acts, {} slots, split {a} / {b} / {c}",
                sources.schema.name,
                sources.schema.acts.len(),
                sources.schema.slots.len()
            );
        }
        let _ = writeln!(out, "dataset hash {}", sources.hash);
        manifest.sources = sources.records();
        manifest.dataset_hash = Some(sources.hash);
    }

    if let Some(path) = &args.checkpoint {
        let (header, model) = checkpoint::load(path)?;
        let _ = writeln!(out, "checkpoint {}", path.display());
        let _ = writeln!(
            out,
            "  variant {}, hidden {}, {} tensors, {} parameters",
            model.variant(),
            model.hidden(),
            header.num_params,
            model.params.num_scalars()
        );
        let _ = writeln!(out, "  vocabulary hash {}", header.vocab_hash);
        let _ = writeln!(
            out,
            "  config {}",
            serde_json::to_string(&header.config).expect("config serializes")
        );
        manifest.checkpoint = Some(path.clone());
        manifest.vocab_hash = Some(header.vocab_hash);
    }

    stdout
        .write_all(out.as_bytes())
        .map_err(|e| CliError::data(format!("stdout: {e}")))?;
    if let Some(dir) = args.out.as_deref() {
        let dir = RunDir::acquire(dir)?;
        dir.write("inspect.txt", &out)?;
        manifest.save(&dir)?;
    }
    Ok(())
}
