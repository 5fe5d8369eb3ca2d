use std::io::Write;
use std::path::PathBuf;

use ralstm::corpus::SplitRatio;
use ralstm::generator::evaluate as evaluate_split;
use ralstm::metrics::{render_table, to_tsv, EvalReport};

use super::{checkpoint_label, config_value, load_located, locate, resolve_config};
use crate::args::EvaluateArgs;
use crate::data::load_sources;
use crate::error::{CliError, CliResult};
use crate::rundir::{RunDir, RunManifest, MANIFEST_FILE};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TSV: &str = "report.tsv";

/// Data directories and split ratio recorded by the `train` run.
fn run_sources(run: &std::path::Path) -> CliResult<(Vec<PathBuf>, SplitRatio)> {
    let manifest = RunManifest::read(&run.join(MANIFEST_FILE))?;
    let split: [u32; 3] = manifest
        .config
        .get("split")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or([3, 1, 1]);
    Ok((
        manifest.sources.iter().map(|s| s.path.clone()).collect(),
        SplitRatio {
            train: split[0],
            validation: split[1],
            test: split[2],
        },
    ))
}

pub fn evaluate(args: &EvaluateArgs, argv: &[String], stdout: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve_config(&args.config, args.beam.overrides())?;
    let (dirs, ratio) = match (&args.data[..], &args.source.run) {
        ([], Some(run)) => run_sources(run)?,
        ([], None) => return Err(CliError::usage("give --data or a --run with a manifest")),
        (data, _) => (data.to_vec(), cfg.split_ratio()),
    };
    let sources = load_sources(&dirs, ratio)?;
    sources.check_hash(args.config.expect_dataset.as_deref())?;
    let located = locate(
        args.source.run.as_deref(),
        &args.source.checkpoints,
        args.source.vocab.as_deref(),
        args.per_seed,
    )?;
    let (vocab, models) = load_located(&located)?;
    let dir = args.out.as_deref().map(RunDir::acquire).transpose()?;

    let multi = sources.domains.len() > 1;
    let mut tables = Vec::new();
    for domain in &sources.domains {
        let examples = args.split.pick(&domain.splits);
        if examples.is_empty() {
            log::warn!("{}: the {:?} split is empty, skipped", domain.name, args.split);
            continue;
        }
        let mut reports: Vec<EvalReport> = Vec::with_capacity(models.len());
        for (path, model) in &models {
            let label = if multi {
                format!("{}/{}", domain.name, checkpoint_label(path))
            } else {
                checkpoint_label(path)
            };
            reports.push(evaluate_split(model, &vocab, examples, &cfg.beam, &label)?);
        }
        tables.push((domain.name.clone(), reports));
    }
    if tables.is_empty() {
        return Err(CliError::data(format!("the {:?} split is empty in every source", args.split)));
    }

    let all: Vec<EvalReport> = tables.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let mut text = String::new();
    if args.tsv {
        text = to_tsv(&all);
    } else {
        for (name, reports) in &tables {
            if multi {
                text.push_str(&format!("{name}\n"));
            }
            text.push_str(&render_table(reports));
        }
    }
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| CliError::data(format!("stdout: {e}")))?;

    if let Some(dir) = &dir {
        dir.write(REPORT_JSON, serde_json::to_string_pretty(&all).expect("reports serialize"))?;
        dir.write(REPORT_TSV, to_tsv(&all))?;
        let mut manifest = RunManifest::new("evaluate", argv, config_value(&cfg));
        manifest.sources = sources.records();
        manifest.dataset_hash = Some(sources.hash.clone());
        manifest.vocab_hash = Some(vocab.hash());
        manifest.checkpoint = models.first().map(|(p, _)| p.clone());
        manifest.save(dir)?;
    }
    Ok(())
}
