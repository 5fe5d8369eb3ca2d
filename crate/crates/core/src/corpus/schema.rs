use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, DialogueAct};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    /// Value slots are replaced by `SLOT_<NAME>` tokens; enumerable slots
    /// (yes/no/dontcare style) are always realized lexically.
    #[serde(default = "default_true")]
    pub delexicalizable: bool,
}

fn default_true() -> bool {
    true
}

/// Acts and slots of one domain, loaded from a TOML file:
///
/// ```toml
/// name = "restaurant"
/// acts = ["inform", "request"]
///
/// [[slots]]
/// name = "food"
///
/// [[slots]]
/// name = "kidsallowed"
/// delexicalizable = false
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSchema {
    #[serde(default)]
    pub name: String,
    pub acts: Vec<String>,
    pub slots: Vec<SlotSpec>,
}

impl DomainSchema {
    pub fn from_toml_str(text: &str) -> Result<Self, CorpusError> {
        let schema: DomainSchema =
            toml::from_str(text).map_err(|e| CorpusError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CorpusError::Schema(msg) => CorpusError::Schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.acts.is_empty() {
            return Err(CorpusError::Schema("schema lists no acts".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.acts {
            if a.is_empty() || !seen.insert(format!("act:{a}")) {
                return Err(CorpusError::Schema(format!("empty or duplicate act '{a}'")));
            }
        }
        for s in &self.slots {
            if s.name.is_empty() || !seen.insert(format!("slot:{}", s.name)) {
                return Err(CorpusError::Schema(format!("empty or duplicate slot '{}'", s.name)));
            }
        }
        Ok(())
    }

    /// Union of several domains for pooled training: acts and slots in
    /// first-appearance order. A slot that is delexicalizable in one domain
    /// and not in another is an error.
    pub fn merge(schemas: &[DomainSchema]) -> Result<DomainSchema, CorpusError> {
        let mut out = DomainSchema {
            name: schemas.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join("+"),
            acts: Vec::new(),
            slots: Vec::new(),
        };
        for schema in schemas {
            for a in &schema.acts {
                if !out.acts.contains(a) {
                    out.acts.push(a.clone());
                }
            }
            for s in &schema.slots {
                match out.slots.iter().find(|x| x.name == s.name) {
                    Some(x) if x.delexicalizable != s.delexicalizable => {
                        return Err(CorpusError::Schema(format!(
                            "slot '{}' is delexicalizable in one domain but not in another",
                            s.name
                        )))
                    }
                    Some(_) => {}
                    None => out.slots.push(s.clone()),
                }
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn act_index(&self, act: &str) -> Option<usize> {
        self.acts.iter().position(|a| a == act)
    }

    pub fn slot_index(&self, slot: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == slot)
    }

    pub fn is_delexicalizable(&self, slot: &str) -> bool {
        self.slots.iter().any(|s| s.name == slot && s.delexicalizable)
    }

    /// Length of the DA feature vector: one bit per act plus one per slot.
    pub fn feature_len(&self) -> usize {
        self.acts.len() + self.slots.len()
    }

    /// Column labels for the feature vector, e.g. `act:inform`, `slot:food`.
    pub fn feature_names(&self) -> Vec<String> {
        self.acts
            .iter()
            .map(|a| format!("act:{a}"))
            .chain(self.slots.iter().map(|s| format!("slot:{}", s.name)))
            .collect()
    }

    /// Checks that the act and every slot are known.
    pub fn check(&self, da: &DialogueAct) -> Result<(), CorpusError> {
        if self.act_index(&da.act).is_none() {
            return Err(CorpusError::UnknownAct(da.act.clone()));
        }
        for p in &da.pairs {
            if self.slot_index(&p.slot).is_none() {
                return Err(CorpusError::UnknownSlot(p.slot.clone()));
            }
        }
        Ok(())
    }
}

/// Binary act-plus-slots indicator vector that seeds the decoder's DA state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DaFeatureVector {
    pub bits: Vec<bool>,
}

impl DaFeatureVector {
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn weight(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// One bit for the act, one bit per distinct slot present in the DA.
pub fn encode_da_features(
    da: &DialogueAct,
    schema: &DomainSchema,
) -> Result<DaFeatureVector, CorpusError> {
    let mut bits = vec![false; schema.feature_len()];
    let act = schema
        .act_index(&da.act)
        .ok_or_else(|| CorpusError::UnknownAct(da.act.clone()))?;
    bits[act] = true;
    for p in &da.pairs {
        let slot = schema
            .slot_index(&p.slot)
            .ok_or_else(|| CorpusError::UnknownSlot(p.slot.clone()))?;
        bits[schema.acts.len() + slot] = true;
    }
    Ok(DaFeatureVector { bits })
}
