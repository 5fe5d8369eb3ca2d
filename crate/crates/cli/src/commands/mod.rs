mod evaluate;
mod generate;
mod gradcheck;
mod inspect;
mod train;

use std::path::{Path, PathBuf};

use ralstm::corpus::Vocab;
use ralstm::model::{checkpoint, Model};
use ralstm::trainer::CHECKPOINT_FILE;
use serde_json::Value;

pub use evaluate::evaluate;
pub use generate::generate;
pub use gradcheck::gradcheck;
pub use inspect::inspect;
pub use train::train;

use crate::args::ConfigArgs;
use crate::config::{resolve, RunConfig};
use crate::data::{load_vocab, vocab_beside};
use crate::error::{CliError, CliResult};

/// Defaults < config file < `--set` < named flags.
pub(crate) fn resolve_config(c: &ConfigArgs, flags: Vec<(String, Value)>) -> CliResult<RunConfig> {
    let layer = c.file_layer()?;
    let mut overrides = c.assignments()?;
    overrides.extend(flags);
    resolve(layer.as_ref(), &overrides)
}

pub(crate) fn config_value(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Checkpoint files for a model source, with the vocabulary they share.
pub(crate) struct Located {
    pub checkpoints: Vec<PathBuf>,
    pub vocab_path: PathBuf,
}

/// `seed-<n>` subdirectories of a run that hold a checkpoint, by seed.
pub(crate) fn seed_checkpoints(run: &Path) -> Vec<PathBuf> {
    let mut found: Vec<(u64, PathBuf)> = std::fs::read_dir(run)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let seed: u64 = name.strip_prefix("seed-")?.parse().ok()?;
            let ckpt = e.path().join(CHECKPOINT_FILE);
            ckpt.is_file().then_some((seed, ckpt))
        })
        .collect();
    found.sort();
    found.into_iter().map(|(_, p)| p).collect()
}

pub(crate) fn locate(
    run: Option<&Path>,
    checkpoints: &[PathBuf],
    vocab: Option<&Path>,
    per_seed: bool,
) -> CliResult<Located> {
    let checkpoints = match (run, checkpoints.is_empty()) {
        (_, false) => checkpoints.to_vec(),
        (Some(run), true) => {
            let seeds = if per_seed { seed_checkpoints(run) } else { Vec::new() };
            if seeds.is_empty() {
                vec![run.join(CHECKPOINT_FILE)]
            } else {
                seeds
            }
        }
        (None, true) => return Err(CliError::usage("give --run or --checkpoint")),
    };
    let vocab_path = match (vocab, run) {
        (Some(v), _) => v.to_path_buf(),
        (None, Some(run)) if run.join(crate::data::VOCAB_FILE).is_file() => run.join(crate::data::VOCAB_FILE),
        (None, _) => vocab_beside(&checkpoints[0])?,
    };
    Ok(Located {
        checkpoints,
        vocab_path,
    })
}

pub(crate) fn load_model(path: &Path, vocab: &Vocab) -> CliResult<Model> {
    if !path.is_file() {
        return Err(CliError::data(format!("{}: no such checkpoint", path.display())));
    }
    Ok(checkpoint::load_for_vocab(path, &vocab.hash())?)
}

pub(crate) fn load_located(located: &Located) -> CliResult<(Vocab, Vec<(PathBuf, Model)>)> {
    let vocab = load_vocab(&located.vocab_path)?;
    let models = located
        .checkpoints
        .iter()
        .map(|p| Ok((p.clone(), load_model(p, &vocab)?)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok((vocab, models))
}

/// Short label for a checkpoint: its `seed-<n>` directory, else the run
/// directory name, else the file stem.
pub(crate) fn checkpoint_label(path: &Path) -> String {
    let parent = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned());
    match parent {
        Some(p) if !p.is_empty() => p,
        _ => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into()),
    }
}
