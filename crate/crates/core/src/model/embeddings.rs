//! Pretrained word vectors in whitespace-separated text form
//! (`token v1 v2 ... vn` per line).

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::Vocab;
use crate::error::{Error, Result};

use super::Model;

pub struct PretrainedEmbeddings {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

pub fn parse_embeddings(text: &str) -> Result<PretrainedEmbeddings> {
    let mut dim = None;
    let mut vectors = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("embedding line {}: {e}", i + 1)))?;
        // word2vec-style "count dim" header line
        if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
            continue;
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Config(format!(
                    "embedding line {}: expected {d} values, found {}",
                    i + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        vectors.insert(token.to_lowercase(), values);
    }
    Ok(PretrainedEmbeddings {
        dim: dim.unwrap_or(0),
        vectors,
    })
}

pub fn load_embeddings(path: &Path) -> Result<PretrainedEmbeddings> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text)
}

/// Copies pretrained vectors into the decoder token table. Tokens without a
/// vector keep their random initialization. Returns how many rows were set.
pub fn apply_pretrained(model: &mut Model, vocab: &Vocab, emb: &PretrainedEmbeddings) -> Result<usize> {
    let n = model.hidden();
    if emb.vectors.is_empty() {
        return Ok(0);
    }
    if emb.dim != n {
        return Err(Error::Config(format!(
            "pretrained vectors have dimension {}, model hidden size is {n}",
            emb.dim
        )));
    }
    let table = model.params.value_mut(model.ids.decoder.tok_emb);
    let mut hits = 0;
    for id in 0..vocab.len() {
        if let Some(v) = emb.vectors.get(vocab.token(id)) {
            table.row_mut(id).copy_from_slice(v);
            hits += 1;
        }
    }
    Ok(hits)
}
