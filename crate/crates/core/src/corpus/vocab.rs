use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    delex::{is_delexicalizable, slot_token},
    delexicalize_all, encode_da_features, sort_pairs_for_encoder, CorpusError, DialogueAct, DomainSchema,
    Example, SlotValue,
};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Encoder-side placeholders. Slot index 1 and value index 1 fill the single
/// pseudo pair used for DAs without any pairs.
const ENC_UNK: &str = "<unk>";
const ENC_EMPTY: &str = "<empty>";
/// Value token for every delexicalizable literal.
pub const VALUE_DELEX: &str = "<delex>";
const SPECIAL_VALUES: [&str; 5] = ["<absent>", "none", "yes", "no", "dontcare"];

/// Output tokens plus the encoder's slot and value tables.
///
/// Indices are assigned deterministically (specials, slot tokens, then words
/// by descending frequency with ties broken alphabetically) and survive a
/// JSON round trip unchanged.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub schema: DomainSchema,
    pub tokens: Vec<String>,
    pub enc_slots: Vec<String>,
    pub enc_values: Vec<String>,
    #[serde(skip)]
    token_index: HashMap<String, usize>,
    #[serde(skip)]
    slot_index: HashMap<String, usize>,
    #[serde(skip)]
    value_index: HashMap<String, usize>,
}

/// Integer view of a DA as consumed by the encoder and decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDa {
    pub act: usize,
    /// Pairs in encoder order (sorted by slot name); never empty.
    pub slots: Vec<usize>,
    pub values: Vec<usize>,
    /// Initial DA feature vector `s₀`.
    pub features: Vec<f64>,
    /// Slot or value lookups that fell back to the unknown entry.
    pub unknown: usize,
}

impl Vocab {
    /// Builds a vocabulary from delexicalized training sentences and their DAs.
    pub fn build<'a>(
        schema: &DomainSchema,
        sentences: impl IntoIterator<Item = (&'a DialogueAct, &'a [String])>,
    ) -> Vocab {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut literal_values: BTreeMap<String, ()> = BTreeMap::new();
        for (da, tokens) in sentences {
            for t in tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for p in &da.pairs {
                if let SlotValue::Text(v) = &p.value {
                    if !is_delexicalizable(p, schema) {
                        literal_values.insert(v.to_lowercase(), ());
                    }
                }
            }
        }
        let mut tokens: Vec<String> = [PAD, BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        for s in schema.slots.iter().filter(|s| s.delexicalizable) {
            tokens.push(slot_token(&s.name));
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !tokens.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        tokens.extend(words.into_iter().map(|(w, _)| w));

        let enc_slots = [ENC_UNK, ENC_EMPTY]
            .iter()
            .map(|s| s.to_string())
            .chain(schema.slots.iter().map(|s| s.name.clone()))
            .collect();
        let enc_values = [ENC_UNK, ENC_EMPTY, VALUE_DELEX]
            .iter()
            .chain(SPECIAL_VALUES.iter())
            .map(|s| s.to_string())
            .chain(literal_values.into_keys())
            .collect();
        Vocab::from_parts(schema.clone(), tokens, enc_slots, enc_values)
    }

    /// Delexicalizes `examples` (normally the training split) and builds
    /// from the result.
    pub fn from_examples(schema: &DomainSchema, examples: &[Example]) -> Vocab {
        let delex = delexicalize_all(examples, schema);
        Vocab::build(schema, delex.iter().map(|d| (&d.da, d.tokens.as_slice())))
    }

    pub fn from_parts(
        schema: DomainSchema,
        tokens: Vec<String>,
        enc_slots: Vec<String>,
        enc_values: Vec<String>,
    ) -> Vocab {
        let mut v = Vocab {
            schema,
            tokens,
            enc_slots,
            enc_values,
            token_index: HashMap::new(),
            slot_index: HashMap::new(),
            value_index: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        let index = |xs: &[String]| xs.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        self.token_index = index(&self.tokens);
        self.slot_index = index(&self.enc_slots);
        self.value_index = index(&self.enc_values);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_id(&self, token: &str) -> usize {
        self.token_index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.token_id(t)).collect()
    }

    pub fn words(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Tokens the generator may emit: everything except PAD, BOS and UNK.
    pub fn emittable(&self, id: usize) -> bool {
        !matches!(id, PAD_ID | BOS_ID | UNK_ID)
    }

    pub fn num_enc_slots(&self) -> usize {
        self.enc_slots.len()
    }

    pub fn num_enc_values(&self) -> usize {
        self.enc_values.len()
    }

    pub fn num_acts(&self) -> usize {
        self.schema.acts.len()
    }

    pub fn feature_len(&self) -> usize {
        self.schema.feature_len()
    }

    fn enc_value_key(&self, slot: &str, value: &SlotValue) -> String {
        match value {
            SlotValue::Text(_) if self.schema.is_delexicalizable(slot) => VALUE_DELEX.to_string(),
            SlotValue::Text(v) => v.to_lowercase(),
            special => special.special_name().unwrap_or(ENC_UNK).to_string(),
        }
    }

    /// Maps a schema-valid DA to encoder/decoder indices.
    pub fn encode_da(&self, da: &DialogueAct) -> Result<EncodedDa, CorpusError> {
        self.schema.check(da)?;
        let features = encode_da_features(da, &self.schema)?.to_f64();
        let act = self
            .schema
            .act_index(&da.act)
            .ok_or_else(|| CorpusError::UnknownAct(da.act.clone()))?;
        let sorted = sort_pairs_for_encoder(da);
        let mut unknown = 0;
        let mut slots = Vec::new();
        let mut values = Vec::new();
        for p in &sorted.pairs {
            let s = self.slot_index.get(&p.slot).copied().unwrap_or_else(|| {
                unknown += 1;
                0
            });
            let key = self.enc_value_key(&p.slot, &p.value);
            let v = self.value_index.get(&key).copied().unwrap_or_else(|| {
                unknown += 1;
                0
            });
            slots.push(s);
            values.push(v);
        }
        if slots.is_empty() {
            slots.push(1);
            values.push(1);
        }
        if unknown > 0 {
            log::warn!("{unknown} unknown encoder slot/value entries in {da}");
        }
        Ok(EncodedDa {
            act,
            slots,
            values,
            features,
            unknown,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Vocab, CorpusError> {
        let mut v: Vocab =
            serde_json::from_str(text).map_err(|e| CorpusError::Vocab(e.to_string()))?;
        v.reindex();
        Ok(v)
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("vocab serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
