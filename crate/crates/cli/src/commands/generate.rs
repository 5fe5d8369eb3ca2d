use std::fmt::Write as _;
use std::io::{Read, Write};

use ralstm::corpus::parse_da;
use ralstm::generator::generate_for_da;

use super::{config_value, load_located, locate, resolve_config};
use crate::args::GenerateArgs;
use crate::error::{io_err, CliError, CliResult};
use crate::rundir::{RunDir, RunManifest};

pub const GENERATIONS_FILE: &str = "generations.tsv";
pub const TSV_HEADER: &str = "da\trank\ttext\tF\terr\tR";

fn read_input(path: &std::path::Path) -> CliResult<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .map_err(|e| CliError::data(format!("stdin: {e}")))?;
        Ok(s)
    } else {
        std::fs::read_to_string(path).map_err(|e| io_err(path, e))
    }
}

pub fn generate(args: &GenerateArgs, argv: &[String], stdout: &mut dyn Write) -> CliResult<()> {
    if args.source.checkpoints.len() > 1 {
        return Err(CliError::usage("generate takes a single --checkpoint"));
    }
    let cfg = resolve_config(&args.config, args.beam.overrides())?;
    let located = locate(
        args.source.run.as_deref(),
        &args.source.checkpoints,
        args.source.vocab.as_deref(),
        false,
    )?;
    let (vocab, mut models) = load_located(&located)?;
    let (ckpt, model) = models.pop().expect("one checkpoint");
    let input = read_input(&args.input)?;

    let dir = args.out.as_deref().map(RunDir::acquire).transpose()?;
    let mut tsv = String::new();
    let mut count = 0;
    for (lineno, line) in input.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let da = parse_da(line).map_err(|e| {
            CliError::data(format!("{}:{}: {e}", args.input.display(), lineno + 1))
        })?;
        let gen = generate_for_da(&model, &vocab, &da, &cfg.beam, args.s_trace).map_err(|e| {
            let e = CliError::from(e);
            CliError {
                message: format!("{}:{}: {}", args.input.display(), lineno + 1, e.message),
                ..e
            }
        })?;
        count += 1;
        if count == 1 {
            tsv.push_str(TSV_HEADER);
            tsv.push('\n');
        }
        for (rank, (c, text)) in gen.candidates.iter().zip(&gen.texts).enumerate() {
            let _ = writeln!(
                tsv,
                "{line}\t{}\t{text}\t{:.6}\t{:.6}\t{:.6}",
                rank + 1,
                c.cost,
                c.err,
                c.score
            );
        }
        if let (Some(dir), Some(trace)) = (&dir, &gen.s_trace) {
            dir.write(
                &format!("s-trace/da-{count:04}.tsv"),
                format!("# {line}\n{}", trace.to_tsv()),
            )?;
        }
    }
    stdout
        .write_all(tsv.as_bytes())
        .map_err(|e| CliError::data(format!("stdout: {e}")))?;

    if let Some(dir) = &dir {
        dir.write(GENERATIONS_FILE, &tsv)?;
        let mut manifest = RunManifest::new("generate", argv, config_value(&cfg));
        manifest.vocab_hash = Some(vocab.hash());
        manifest.checkpoint = Some(ckpt);
        manifest.save(dir)?;
    }
    log::info!("generated for {count} DAs");
    Ok(())
}
