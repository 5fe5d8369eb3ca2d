use std::io::Write;

use ralstm::corpus::Vocab;
use ralstm::generator::evaluate as evaluate_split;
use ralstm::metrics::render_table;
use ralstm::model::embeddings::{apply_pretrained, load_embeddings};
use ralstm::trainer::{self, init_model, MultiSeedReport, SeedRun, TrainConfig, TrainData, CHECKPOINT_FILE};
use serde_json::Value;

use super::{config_value, load_model, resolve_config};
use crate::args::TrainArgs;
use crate::config::SelectOn;
use crate::data::{load_sources, load_vocab, vocab_beside, VOCAB_FILE};
use crate::error::{io_err, CliError, CliResult};
use crate::rundir::{RunDir, RunManifest};

pub const REPORT_FILE: &str = "report.json";
pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.toml";

pub fn train(args: &TrainArgs, argv: &[String], stdout: &mut dyn Write) -> CliResult<()> {
    let mut flags = args.model.overrides();
    flags.extend(args.beam.overrides());
    let mut cfg = resolve_config(&args.config, flags)?;
    let sources = load_sources(&args.data, cfg.split_ratio())?;
    sources.check_hash(args.config.expect_dataset.as_deref())?;

    let (vocab, warm) = match &args.init_from {
        Some(ckpt) => {
            let vocab = load_vocab(&vocab_beside(ckpt)?)?;
            let model = load_model(ckpt, &vocab)?;
            if model.hidden() != cfg.train.hidden || model.variant() != cfg.train.variant {
                log::info!(
                    "warm start: using the checkpoint's hidden size {} and variant {}",
                    model.hidden(),
                    model.variant()
                );
            }
            cfg.train.hidden = model.hidden();
            cfg.train.variant = model.variant();
            (vocab, Some(model))
        }
        None => (Vocab::from_examples(&sources.schema, &sources.pooled.train), None),
    };
    let embeddings = match (&cfg.embeddings, &warm) {
        (Some(path), None) => Some(load_embeddings(path)?),
        _ => None,
    };

    let dir = RunDir::acquire(&args.out)?;
    dir.write(VOCAB_FILE, vocab.to_json())?;
    dir.write(
        CONFIG_FILE,
        toml::to_string(&cfg).map_err(|e| CliError::usage(e.to_string()))?,
    )?;
    let mut manifest = RunManifest::new("train", argv, config_value(&cfg));
    manifest.seed = Some(cfg.train.seed);
    manifest.sources = sources.records();
    manifest.dataset_hash = Some(sources.hash.clone());
    manifest.vocab_hash = Some(vocab.hash());
    manifest.checkpoint = Some(dir.join(CHECKPOINT_FILE));
    manifest.init_from = args.init_from.clone();
    manifest.save(&dir)?;

    let validation = match cfg.select_on {
        SelectOn::Validation => &sources.pooled.validation,
        SelectOn::Train => &sources.pooled.train,
    };
    let data = TrainData {
        vocab: &vocab,
        train: &sources.pooled.train,
        validation,
    };
    let mut log = dir.create(LOG_FILE)?;
    let mut runs = Vec::with_capacity(cfg.runs);
    for i in 0..cfg.runs {
        let seed = cfg.train.seed.wrapping_add(i as u64);
        let run_cfg = TrainConfig {
            seed,
            ..cfg.train_config()
        };
        let out = if cfg.runs == 1 {
            dir.path().to_path_buf()
        } else {
            dir.join(format!("seed-{seed}"))
        };
        let init = match (&warm, &embeddings) {
            (Some(m), _) => Some(m.clone()),
            (None, Some(emb)) => {
                let mut m = init_model(&vocab, &run_cfg)?;
                let set = apply_pretrained(&mut m, &vocab, emb)?;
                log::info!("seed {seed}: {set} of {} token embeddings pretrained", vocab.len());
                Some(m)
            }
            (None, None) => None,
        };
        let mut log_err = None;
        let outcome = trainer::train(&data, &run_cfg, init, Some(&out), &mut |rec| {
            let mut line = serde_json::to_value(rec).expect("record serializes");
            if let Value::Object(m) = &mut line {
                m.insert("seed".into(), seed.into());
            }
            if let Err(e) = writeln!(log, "{line}") {
                log_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = log_err {
            return Err(io_err(&dir.join(LOG_FILE), e));
        }
        let test = if sources.pooled.test.is_empty() {
            None
        } else {
            Some(evaluate_split(
                &outcome.model,
                &vocab,
                &sources.pooled.test,
                &cfg.beam,
                &format!("seed-{seed}"),
            )?)
        };
        log::info!(
            "seed {seed}: {} after {} epochs, best epoch {}",
            outcome.report.stop_reason,
            outcome.report.stopped_epoch,
            outcome.report.best_epoch
        );
        runs.push(SeedRun {
            report: outcome.report,
            test,
        });
    }

    let summary = MultiSeedReport::from_runs(runs);
    let best_seed = summary.runs[summary.selected].report.seed;
    if cfg.runs > 1 {
        let from = dir.join(format!("seed-{best_seed}")).join(CHECKPOINT_FILE);
        let to = dir.join(CHECKPOINT_FILE);
        std::fs::copy(&from, &to).map_err(|e| io_err(&from, e))?;
    }
    dir.write(
        REPORT_FILE,
        serde_json::to_string_pretty(&summary).expect("report serializes"),
    )?;

    let tests: Vec<_> = summary.runs.iter().filter_map(|r| r.test.clone()).collect();
    let w = |e: std::io::Error| CliError::data(format!("stdout: {e}"));
    if !tests.is_empty() {
        writeln!(stdout, "test split").map_err(w)?;
        write!(stdout, "{}", render_table(&tests)).map_err(w)?;
    }
    let picked = &summary.runs[summary.selected].report;
    writeln!(
        stdout,
        "selected seed {best_seed} (epoch {}, validation loss {:.4}{}) -> {}",
        picked.best_epoch,
        picked.best_val_loss,
        picked
            .best_val_bleu
            .map(|b| format!(", validation BLEU {b:.4}"))
            .unwrap_or_default(),
        dir.join(CHECKPOINT_FILE).display()
    )
    .map_err(w)?;
    Ok(())
}
