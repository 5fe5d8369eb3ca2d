//! RNNLG-style JSON datasets: arrays of `[da, reference, ...]` entries.

use std::path::{Path, PathBuf};

use super::{parse_da, CorpusError, DialogueAct};

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub da: DialogueAct,
    /// DA string as it appears in the source file.
    pub da_text: String,
    pub reference: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    /// Appends another dataset's splits (multi-domain pooling).
    pub fn extend(&mut self, other: Splits) {
        self.train.extend(other.train);
        self.validation.extend(other.validation);
        self.test.extend(other.test);
    }
}

/// Train/validation/test proportions applied when a directory holds a single
/// unsplit data file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: u32,
    pub validation: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio {
            train: 3,
            validation: 1,
            test: 1,
        }
    }
}

impl SplitRatio {
    /// Sizes for `total` items. Validation and test are rounded down and the
    /// remainder goes to training.
    pub fn sizes(&self, total: usize) -> (usize, usize, usize) {
        let sum = (self.train + self.validation + self.test).max(1) as usize;
        let val = total * self.validation as usize / sum;
        let test = total * self.test as usize / sum;
        (total - val - test, val, test)
    }
}

const SPLIT_FILES: [[&str; 2]; 3] = [
    ["train.json", "train.json"],
    ["valid.json", "validation.json"],
    ["test.json", "test.json"],
];

fn line_of(text: &str, needle: &str) -> usize {
    text.find(needle)
        .map(|pos| text[..pos].matches('\n').count() + 1)
        .unwrap_or(0)
}

/// Parses one JSON file. Lines starting with `#` or `//` are treated as comments.
pub fn load_file(path: &Path) -> Result<Vec<Example>, CorpusError> {
    let raw = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let cleaned: String = raw
        .lines()
        .map(|l| {
            let t = l.trim_start();
            if t.starts_with('#') || t.starts_with("//") {
                ""
            } else {
                l
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    let entries: Vec<Vec<serde_json::Value>> =
        serde_json::from_str(&cleaned).map_err(|e| CorpusError::Json {
            file: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
    let mut out = Vec::with_capacity(entries.len());
    for (i, entry) in entries.iter().enumerate() {
        let (Some(da_text), Some(reference)) = (
            entry.first().and_then(|v| v.as_str()),
            entry.get(1).and_then(|v| v.as_str()),
        ) else {
            return Err(CorpusError::Entry {
                file: path.to_path_buf(),
                entry: i,
                message: "expected [da, reference, ...] strings".into(),
            });
        };
        let da = parse_da(da_text).map_err(|source| CorpusError::Da {
            file: path.to_path_buf(),
            line: line_of(&cleaned, da_text),
            entry: i,
            source,
        })?;
        out.push(Example {
            da,
            da_text: da_text.to_string(),
            reference: reference.to_string(),
        });
    }
    Ok(out)
}

fn find_split_file(dir: &Path, names: [&str; 2]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

/// Loads a dataset directory.
///
/// When `train.json`, `valid.json` (or `validation.json`) and `test.json`
/// exist they are used as given. Otherwise every other `*.json` file is read
/// in name order, concatenated, and cut sequentially according to `ratio`.
pub fn load_dataset(dir: &Path, ratio: SplitRatio) -> Result<Splits, CorpusError> {
    if !dir.is_dir() {
        return Err(CorpusError::NoData(dir.to_path_buf()));
    }
    let split_paths: Vec<Option<PathBuf>> =
        SPLIT_FILES.iter().map(|names| find_split_file(dir, *names)).collect();
    if split_paths.iter().all(Option::is_some) {
        let mut loaded = split_paths
            .into_iter()
            .map(|p| load_file(&p.expect("checked above")));
        let splits = Splits {
            train: loaded.next().expect("three files")?,
            validation: loaded.next().expect("three files")?,
            test: loaded.next().expect("three files")?,
        };
        if splits.train.is_empty() {
            return Err(CorpusError::NoData(dir.to_path_buf()));
        }
        return Ok(splits);
    }

    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CorpusError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut all = Vec::new();
    for f in &files {
        all.extend(load_file(f)?);
    }
    if all.is_empty() {
        return Err(CorpusError::NoData(dir.to_path_buf()));
    }
    let (n_train, n_val, _) = ratio.sizes(all.len());
    let test = all.split_off(n_train + n_val);
    let validation = all.split_off(n_train);
    Ok(Splits {
        train: all,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_sizes() {
        assert_eq!(SplitRatio::default().sizes(60), (36, 12, 12));
        assert_eq!(SplitRatio::default().sizes(7), (5, 1, 1));
    }

    #[test]
    fn empty_directory_has_no_data() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_dataset(dir.path(), SplitRatio::default()),
            Err(CorpusError::NoData(_))
        ));
    }

    #[test]
    fn pre_split_files_are_used_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let entry = r#"["inform(name='a')", "a is here", "a is here"]"#;
        std::fs::write(dir.path().join("train.json"), format!("[{entry},{entry}]")).unwrap();
        std::fs::write(dir.path().join("valid.json"), format!("[{entry}]")).unwrap();
        std::fs::write(dir.path().join("test.json"), "# comment\n[]").unwrap();
        let s = load_dataset(dir.path(), SplitRatio::default()).unwrap();
        assert_eq!(s.counts(), (2, 1, 0));
        assert_eq!(s.train[0].reference, "a is here");
    }

    #[test]
    fn malformed_json_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("data.json"), "[\n[\"inform()\", \"x\"],\n[oops]\n]").unwrap();
        match load_dataset(dir.path(), SplitRatio::default()) {
            Err(CorpusError::Json { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_da_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("data.json"),
            "[\n[\"inform()\", \"x\"],\n[\"inform(a='b\", \"y\"]\n]",
        )
        .unwrap();
        match load_dataset(dir.path(), SplitRatio::default()) {
            Err(CorpusError::Da { line, entry, .. }) => assert_eq!((line, entry), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
