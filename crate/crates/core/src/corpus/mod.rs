//! Dialogue acts, domain schemas, delexicalization, vocabularies and dataset
//! loading.

mod cache;
mod da;
mod dataset;
mod delex;
mod schema;
mod vocab;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use cache::{read_delex_cache, write_delex_cache, CACHE_HEADER};
pub use da::{parse_da, sort_pairs_for_encoder, DialogueAct, ParseDaError, SlotPair, SlotValue};
pub use dataset::{load_dataset, load_file, Example, SplitRatio, Splits};
pub use delex::{
    delexicalize, is_delexicalizable, lexicalize, normalize, slot_of_token, slot_token, tokenize,
    DelexicalizedUtterance, Lexicalized, SlotOccurrence, SLOT_PREFIX,
};
pub use schema::{encode_da_features, DaFeatureVector, DomainSchema, SlotSpec};
pub use vocab::{EncodedDa, Vocab, BOS, BOS_ID, EOS, EOS_ID, PAD, PAD_ID, UNK, UNK_ID, VALUE_DELEX};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no data found in {0}")]
    NoData(PathBuf),
    #[error("{file}:{line}:{column}: malformed JSON: {message}")]
    Json {
        file: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{file}: entry {entry}: {message}")]
    Entry {
        file: PathBuf,
        entry: usize,
        message: String,
    },
    #[error("{file}:{line}: entry {entry}: {source}")]
    Da {
        file: PathBuf,
        line: usize,
        entry: usize,
        source: ParseDaError,
    },
    #[error("schema: {0}")]
    Schema(String),
    #[error("act type '{0}' is not in the domain schema")]
    UnknownAct(String),
    #[error("slot '{0}' is not in the domain schema")]
    UnknownSlot(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("delex cache line {line}: {message}")]
    Cache { line: usize, message: String },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One training sentence: the DA, its delexicalized reference and the
/// original reference text.
#[derive(Clone, Debug, PartialEq)]
pub struct DelexExample {
    pub da: DialogueAct,
    pub tokens: Vec<String>,
    pub reference: String,
}

/// Delexicalizes every example of a split.
pub fn delexicalize_all(examples: &[Example], schema: &DomainSchema) -> Vec<DelexExample> {
    examples
        .iter()
        .map(|ex| DelexExample {
            da: ex.da.clone(),
            tokens: delexicalize(&ex.reference, &ex.da, schema).tokens,
            reference: ex.reference.clone(),
        })
        .collect()
}
