//! Line-oriented cache of delexicalized sentences.
//!
//! ```text
//! #ralstm-delex-cache v1
//! inform(name='x';food='thai')<TAB>SLOT_NAME serves SLOT_FOOD food
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use super::{parse_da, CorpusError, DialogueAct};

pub const CACHE_HEADER: &str = "#ralstm-delex-cache v1";

pub fn write_delex_cache<'a>(
    path: &Path,
    entries: impl IntoIterator<Item = (&'a DialogueAct, &'a [String])>,
) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let write = || -> std::io::Result<()> {
        writeln!(w, "{CACHE_HEADER}")?;
        for (da, tokens) in entries {
            writeln!(w, "{}\t{}", da.render(), tokens.join(" "))?;
        }
        w.flush()
    };
    write().map_err(|e| CorpusError::io(path, e))
}

pub fn read_delex_cache(path: &Path) -> Result<Vec<(DialogueAct, Vec<String>)>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut lines = std::io::BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h == CACHE_HEADER => {}
        _ => {
            return Err(CorpusError::Cache {
                line: 1,
                message: format!("missing header '{CACHE_HEADER}'"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        let line_no = i + 2;
        let (da, toks) = line.split_once('\t').ok_or(CorpusError::Cache {
            line: line_no,
            message: "expected DA<TAB>tokens".into(),
        })?;
        let da = parse_da(da).map_err(|e| CorpusError::Cache {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((da, toks.split_whitespace().map(str::to_string).collect()));
    }
    Ok(out)
}
