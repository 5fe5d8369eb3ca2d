//! Finite-difference check of the whole model on a synthetic instance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{grad_check_with_bias, GradCheckReport, ParamId};
use crate::corpus::{slot_token, DialogueAct, DomainSchema, SlotPair, SlotSpec, SlotValue, Vocab, EOS_ID};
use crate::error::{Error, Result};
use crate::model::{CellVariant, Model, ModelConfig};
use crate::trainer::sequence_nll;

pub const MAX_CHECK_HIDDEN: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CheckDims {
    pub hidden: usize,
    /// Slot-value pairs in the DA.
    pub pairs: usize,
    /// Target tokens, EOS included.
    pub steps: usize,
    pub vocab: usize,
    pub seed: u64,
    /// Parameters are drawn uniformly from `±scale`. At the ±0.08 training
    /// init the attention path barely moves the loss and finite differences
    /// cannot resolve its gradient.
    pub scale: f64,
    pub epsilon: f64,
}

impl Default for CheckDims {
    fn default() -> Self {
        CheckDims {
            hidden: 4,
            pairs: 3,
            steps: 3,
            vocab: 12,
            seed: 7,
            scale: 1.0,
            epsilon: 1e-5,
        }
    }
}

impl CheckDims {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) || self.hidden > MAX_CHECK_HIDDEN {
            problems.push(format!(
                "gradcheck hidden size must be even and at most {MAX_CHECK_HIDDEN}, got {}",
                self.hidden
            ));
        }
        if self.pairs == 0 {
            problems.push("gradcheck needs at least one slot-value pair".into());
        }
        if self.steps == 0 {
            problems.push("gradcheck needs at least one step".into());
        }
        let min_vocab = 4 + self.pairs.saturating_sub(1) + 1;
        if self.vocab < min_vocab.max(5) {
            problems.push(format!(
                "gradcheck vocabulary must have at least {} tokens for {} pairs",
                min_vocab.max(5),
                self.pairs
            ));
        }
        if !(self.scale > 0.0 && self.epsilon > 0.0) {
            problems.push("scale and epsilon must be positive".into());
        }
        problems
    }
}

/// Vocabulary, DA and targets for a check instance. The last slot is not
/// delexicalizable and carries `yes`, the others carry literal text.
pub fn check_instance(dims: &CheckDims) -> (Vocab, DialogueAct, Vec<usize>) {
    let names: Vec<String> = (0..dims.pairs).map(|i| format!("slot{i}")).collect();
    let schema = DomainSchema {
        name: "gradcheck".into(),
        acts: vec!["inform".into(), "confirm".into()],
        slots: names
            .iter()
            .enumerate()
            .map(|(i, s)| SlotSpec {
                name: s.clone(),
                delexicalizable: dims.pairs == 1 || i + 1 < dims.pairs,
            })
            .collect(),
    };
    let mut tokens: Vec<String> = ["<pad>", "<s>", "</s>", "<unk>"].iter().map(|s| s.to_string()).collect();
    for s in schema.slots.iter().filter(|s| s.delexicalizable) {
        tokens.push(slot_token(&s.name));
    }
    let mut w = 0;
    while tokens.len() < dims.vocab {
        tokens.push(format!("w{w}"));
        w += 1;
    }
    let enc_slots = ["<unk>", "<empty>"].iter().map(|s| s.to_string()).chain(names.iter().cloned()).collect();
    let enc_values = ["<unk>", "<empty>", "<delex>", "<absent>", "none", "yes", "no", "dontcare"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let pairs = schema
        .slots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.delexicalizable {
                SlotPair::text(&s.name, &format!("value {i}"))
            } else {
                SlotPair::new(&s.name, SlotValue::Yes)
            }
        })
        .collect();
    let da = DialogueAct::new("inform", pairs);
    // cycle through the non-special tokens and finish on EOS
    let body: Vec<usize> = (0..dims.steps - 1).map(|t| 4 + (t * 5) % (dims.vocab - 4)).collect();
    let targets = body.into_iter().chain([EOS_ID]).collect();
    let vocab = Vocab::from_parts(schema, tokens, enc_slots, enc_values);
    (vocab, da, targets)
}

/// Gradient check of the sequence NLL through encoder, aligner and decoder.
/// `analytic_scale` other than one corrupts the backpropagated gradient and
/// must make the check fail.
pub fn check_model(dims: &CheckDims, variant: CellVariant, analytic_scale: f64) -> Result<GradCheckReport> {
    let problems = dims.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let (vocab, da, targets) = check_instance(dims);
    let encoded = vocab.encode_da(&da)?;
    let mut model = Model::init(ModelConfig::for_vocab(&vocab, dims.hidden, variant), dims.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(dims.seed);
    let ids: Vec<ParamId> = model.params.ids().collect();
    for id in ids {
        for v in model.params.value_mut(id).data_mut() {
            *v = rng.gen_range(-dims.scale..dims.scale);
        }
    }
    let model = model;
    grad_check_with_bias(
        |g| -> Result<_> {
            let logits = model.teacher_forced_logits(g, &encoded, &targets, |_| None)?;
            Ok(sequence_nll(g, &logits, &targets)?.loss)
        },
        &model.params,
        dims.epsilon,
        analytic_scale,
    )
}
