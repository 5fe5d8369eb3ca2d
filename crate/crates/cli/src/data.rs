//! Dataset directories given with `--data`.

use std::path::{Path, PathBuf};

use ralstm::corpus::{load_dataset, DomainSchema, Example, SplitRatio, Splits, Vocab};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, CliResult};

pub const SCHEMA_FILE: &str = "schema.toml";
pub const VOCAB_FILE: &str = "vocab.json";

pub struct Domain {
    pub name: String,
    pub dir: PathBuf,
    pub schema: DomainSchema,
    pub splits: Splits,
}

/// Every `--data` directory, plus the pooled view used for training.
pub struct Sources {
    pub domains: Vec<Domain>,
    pub schema: DomainSchema,
    pub pooled: Splits,
    /// SHA-256 over schemas and split contents, in order.
    pub hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub path: PathBuf,
    pub domain: String,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn pick<'a>(&self, s: &'a Splits) -> &'a [Example] {
        match self {
            SplitName::Train => &s.train,
            SplitName::Validation => &s.validation,
            SplitName::Test => &s.test,
        }
    }
}

pub fn load_sources(dirs: &[PathBuf], ratio: SplitRatio) -> CliResult<Sources> {
    if dirs.is_empty() {
        return Err(CliError::usage("at least one --data directory is required"));
    }
    let mut domains = Vec::with_capacity(dirs.len());
    let mut hasher = Sha256::new();
    for dir in dirs {
        let schema_path = dir.join(SCHEMA_FILE);
        if !schema_path.is_file() {
            return Err(CliError::data(format!(
                "{}: no {SCHEMA_FILE} (each data directory needs a domain schema)",
                dir.display()
            )));
        }
        let schema = DomainSchema::load(&schema_path)?;
        let splits = load_dataset(dir, ratio)?;
        for ex in splits.train.iter().chain(&splits.validation).chain(&splits.test) {
            schema
                .check(&ex.da)
                .map_err(|e| CliError::data(format!("{}: {}: {e}", dir.display(), ex.da_text)))?;
        }
        hasher.update(schema.to_toml_string().as_bytes());
        for (tag, split) in [("train", &splits.train), ("validation", &splits.validation), ("test", &splits.test)] {
            hasher.update(tag.as_bytes());
            for ex in split {
                hasher.update(ex.da_text.as_bytes());
                hasher.update(b"\t");
                hasher.update(ex.reference.as_bytes());
                hasher.update(b"\n");
            }
        }
        let name = if schema.name.is_empty() {
            dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        } else {
            schema.name.clone()
        };
        domains.push(Domain {
            name,
            dir: dir.clone(),
            schema,
            splits,
        });
    }
    let schema = if domains.len() == 1 {
        domains[0].schema.clone()
    } else {
        DomainSchema::merge(&domains.iter().map(|d| d.schema.clone()).collect::<Vec<_>>())?
    };
    let mut pooled = Splits::default();
    for d in &domains {
        pooled.extend(d.splits.clone());
    }
    Ok(Sources {
        domains,
        schema,
        pooled,
        hash: hex::encode(hasher.finalize()),
    })
}

impl Sources {
    pub fn records(&self) -> Vec<SourceRecord> {
        self.domains
            .iter()
            .map(|d| {
                let (train, validation, test) = d.splits.counts();
                SourceRecord {
                    path: d.dir.clone(),
                    domain: d.name.clone(),
                    train,
                    validation,
                    test,
                }
            })
            .collect()
    }

    pub fn check_hash(&self, expected: Option<&str>) -> CliResult<()> {
        match expected {
            Some(h) if h != self.hash => Err(CliError::data(format!(
                "dataset changed since the manifest was written (hash {} now, {h} recorded)",
                self.hash
            ))),
            _ => Ok(()),
        }
    }
}

pub fn load_vocab(path: &Path) -> CliResult<Vocab> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(Vocab::from_json(&text)?)
}

/// `vocab.json` next to a checkpoint, or one directory up for the per-seed
/// subdirectories of a multi-run directory.
pub fn vocab_beside(checkpoint: &Path) -> CliResult<PathBuf> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    [dir.join(VOCAB_FILE), dir.join("..").join(VOCAB_FILE)]
        .into_iter()
        .find(|p| p.is_file())
        .ok_or_else(|| {
            CliError::data(format!(
                "no {VOCAB_FILE} found beside {}; pass --vocab",
                checkpoint.display()
            ))
        })
}
