//! Layered run configuration: built-in defaults, then a config file, then
//! command-line overrides.

use std::path::{Path, PathBuf};

use ralstm::corpus::SplitRatio;
use ralstm::generator::BeamConfig;
use ralstm::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{io_err, CliError, CliResult};

/// Which split picks the checkpoint during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectOn {
    #[default]
    Validation,
    /// Score the training split instead. Only useful for overfitting checks.
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Independently initialized runs, seeds `train.seed`, `train.seed + 1`, ...
    pub runs: usize,
    /// Train:validation:test proportions for unsplit data directories.
    pub split: [u32; 3],
    pub select_on: SelectOn,
    /// Optional text embedding file for the decoder token table.
    pub embeddings: Option<PathBuf>,
    /// `train.eval_beam` is always a copy of `beam`.
    pub train: TrainConfig,
    pub beam: BeamConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            runs: 5,
            split: [3, 1, 1],
            select_on: SelectOn::Validation,
            embeddings: None,
            train: TrainConfig::default(),
            beam: BeamConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn split_ratio(&self) -> SplitRatio {
        SplitRatio {
            train: self.split[0],
            validation: self.split[1],
            test: self.split[2],
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            eval_beam: self.beam,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = self.train_config().validate();
        if self.runs == 0 {
            problems.push("runs must be at least 1".into());
        }
        if self.split.iter().sum::<u32>() == 0 || self.split[0] == 0 {
            problems.push(format!("split needs a nonzero training share, got {:?}", self.split));
        }
        problems
    }
}

/// One layer of settings as a JSON object tree.
pub type Layer = Value;

/// Reads a config file. TOML is the normal format; a JSON file is taken as
/// a run manifest (its `config` member) or as a bare config object.
pub fn read_layer(path: &Path) -> CliResult<Layer> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    if path.extension().is_some_and(|x| x == "json") {
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        return Ok(match v.get("config") {
            Some(c) if v.get("argv").is_some() => c.clone(),
            _ => v,
        });
    }
    let t: toml::Value =
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    serde_json::to_value(t).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Parses `key.path=value`. The value is read as a TOML literal and falls
/// back to a plain string, so `train.target_train_loss=0.01` and
/// `select_on=train` both work.
pub fn parse_assignment(s: &str) -> CliResult<(String, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("expected KEY=VALUE, got '{s}'")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::usage(format!("empty key in '{s}'")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("parsed key"))
            .map_err(|e| CliError::usage(e.to_string()))?,
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

fn merge(base: &mut Value, layer: &Value, prefix: &str, unknown: &mut Vec<String>) {
    let (Value::Object(b), Value::Object(l)) = (&mut *base, layer) else {
        *base = layer.clone();
        return;
    };
    for (k, v) in l {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match b.get_mut(k) {
            Some(slot @ Value::Object(_)) if v.is_object() => merge(slot, v, &path, unknown),
            Some(slot) => *slot = v.clone(),
            None => unknown.push(path),
        }
    }
}

fn set_path(root: &mut Value, path: &str, value: Value, unknown: &mut Vec<String>) {
    let mut nested = Map::new();
    let parts: Vec<&str> = path.split('.').collect();
    let mut leaf = value;
    for part in parts.iter().skip(1).rev() {
        nested.insert(part.to_string(), leaf);
        leaf = Value::Object(std::mem::take(&mut nested));
    }
    let mut top = Map::new();
    top.insert(parts[0].to_string(), leaf);
    merge(root, &Value::Object(top), "", unknown);
}

/// Defaults, then `file`, then each override in order. Every problem is
/// reported in a single error.
pub fn resolve(file: Option<&Layer>, overrides: &[(String, Value)]) -> CliResult<RunConfig> {
    let mut tree = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    let mut unknown = Vec::new();
    if let Some(layer) = file {
        let mut layer = layer.clone();
        // manifests carry the copy; anything else is a misplaced setting
        if let Some(copy) = layer.get_mut("train").and_then(|t| t.as_object_mut()).and_then(|t| t.remove("eval_beam")) {
            if layer.get("beam") != Some(&copy) {
                return Err(CliError::usage("set beam options under [beam], not train.eval_beam"));
            }
        }
        merge(&mut tree, &layer, "", &mut unknown);
    }
    for (k, v) in overrides {
        set_path(&mut tree, k, v.clone(), &mut unknown);
    }
    let mut problems: Vec<String> = unknown.iter().map(|k| format!("unknown setting '{k}'")).collect();
    let cfg = match serde_json::from_value::<RunConfig>(tree) {
        Ok(mut cfg) => {
            cfg.train.eval_beam = cfg.beam;
            problems.extend(cfg.validate());
            Some(cfg)
        }
        Err(e) => {
            problems.push(e.to_string());
            None
        }
    };
    match cfg {
        Some(cfg) if problems.is_empty() => Ok(cfg),
        _ => Err(CliError::usage(format!(
            "invalid configuration:\n  {}",
            problems.join("\n  ")
        ))),
    }
}
