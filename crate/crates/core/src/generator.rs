//! Over-generation with beam search, slot-error reranking and lexicalization.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, LOG_FLOOR};
use crate::corpus::{
    is_delexicalizable, lexicalize, parse_da, slot_of_token, tokenize, DialogueAct, DomainSchema,
    EncodedDa, Example, Vocab, BOS_ID, EOS_ID, PAD_ID, UNK_ID,
};
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, corpus_err, DaEval, EvalReport};
use crate::model::{DecoderState, Model};
use crate::trainer::sequence_nll;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Finished candidates collected before the search stops.
    pub overgen: usize,
    pub top_k: usize,
    pub lambda: f64,
    /// Hard cap on decoder steps (the EOS step included).
    pub max_length: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_width: 10,
            overgen: 20,
            top_k: 5,
            lambda: 1000.0,
            max_length: 80,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.beam_width == 0 {
            problems.push("beam width must be at least 1".to_string());
        }
        if self.overgen == 0 {
            problems.push("overgen count must be at least 1".to_string());
        }
        if self.top_k == 0 || self.top_k > self.overgen {
            problems.push(format!(
                "top-k must be between 1 and the overgen count ({}), got {}",
                self.overgen, self.top_k
            ));
        }
        if self.max_length == 0 {
            problems.push("max length must be at least 1".to_string());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            problems.push(format!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        problems
    }
}

/// A finished beam entry before slot scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted token ids, EOS excluded.
    pub ids: Vec<usize>,
    /// Sum of per-step negative log probabilities, EOS step included when
    /// the hypothesis is not truncated.
    pub cost: f64,
    /// Stopped by the length cap rather than EOS.
    pub truncated: bool,
}

fn emittable(id: usize) -> bool {
    !matches!(id, PAD_ID | BOS_ID | UNK_ID)
}

fn cmp_cost_then_ids(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search over emittable tokens. Every step keeps the `beam_width`
/// cheapest expansions; expansions ending in EOS (or hitting the length cap)
/// leave the beam as finished hypotheses. Stops once `overgen` hypotheses
/// have finished or nothing is left to expand, and returns at most `overgen`
/// of them ordered by cost.
pub fn beam_search(model: &Model, da: &EncodedDa, cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    struct Live {
        ids: Vec<usize>,
        cost: f64,
        state: DecoderState,
        input: usize,
    }
    let mut g = Graph::new(&model.params);
    let cond = model.condition(&mut g, da)?;
    let init = model.initial_state(&mut g, &cond);
    let mut live = vec![Live {
        ids: Vec::new(),
        cost: 0.0,
        state: init,
        input: BOS_ID,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for t in 0..cfg.max_length {
        let mut next_states = Vec::with_capacity(live.len());
        let mut expansions: Vec<(usize, usize, f64)> = Vec::new();
        for (hi, h) in live.iter().enumerate() {
            let out = model.step(&mut g, &cond, &h.state, h.input, None)?;
            let probs = g.softmax(out.logits)?;
            for (k, &p) in g.value(probs).data().iter().enumerate() {
                if emittable(k) {
                    expansions.push((hi, k, h.cost - p.max(LOG_FLOOR).ln()));
                }
            }
            next_states.push(out.state);
        }
        // Every live hypothesis has length t, so comparing prefix then token
        // is the lexicographic order of the extended sequences.
        expansions.sort_by(|a, b| {
            a.2.total_cmp(&b.2)
                .then_with(|| live[a.0].ids.cmp(&live[b.0].ids))
                .then_with(|| a.1.cmp(&b.1))
        });
        expansions.truncate(cfg.beam_width);

        let last_step = t + 1 == cfg.max_length;
        let mut survivors = Vec::new();
        for (hi, k, cost) in expansions {
            let prev = &live[hi];
            if k == EOS_ID {
                finished.push(Hypothesis {
                    ids: prev.ids.clone(),
                    cost,
                    truncated: false,
                });
                continue;
            }
            let mut ids = prev.ids.clone();
            ids.push(k);
            if last_step {
                finished.push(Hypothesis {
                    ids,
                    cost,
                    truncated: true,
                });
            } else {
                survivors.push(Live {
                    ids,
                    cost,
                    state: next_states[hi],
                    input: k,
                });
            }
        }
        live = survivors;
        if finished.len() >= cfg.overgen || live.is_empty() {
            break;
        }
    }
    finished.sort_by(|a, b| cmp_cost_then_ids((a.cost, &a.ids), (b.cost, &b.ids)));
    finished.truncate(cfg.overgen);
    Ok(finished)
}

/// Teacher-forced cost of a token sequence: the NLL of `ids`, plus the EOS
/// step unless `truncated`. Independent of the beam's bookkeeping.
pub fn score_tokens(model: &Model, da: &EncodedDa, ids: &[usize], truncated: bool) -> Result<f64> {
    let mut targets = ids.to_vec();
    if !truncated {
        targets.push(EOS_ID);
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut g = Graph::new(&model.params);
    let logits = model.teacher_forced_logits(&mut g, da, &targets, |_| None)?;
    let nll = sequence_nll(&mut g, &logits, &targets)?;
    Ok(g.value(nll.loss).item())
}

/// Missing/redundant slot counts of one output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SlotErr {
    pub missing: usize,
    pub redundant: usize,
    /// Delexicalizable slot mentions in the DA, duplicates counted.
    pub required: usize,
    /// `(missing + redundant) / required`, zero when nothing is required.
    pub err: f64,
}

impl SlotErr {
    pub fn new(missing: usize, redundant: usize, required: usize) -> Self {
        let err = if required == 0 {
            0.0
        } else {
            (missing + redundant) as f64 / required as f64
        };
        SlotErr {
            missing,
            redundant,
            required,
            err,
        }
    }
}

/// Compares slot-token counts in a delexicalized output with the
/// multiplicity of each delexicalizable slot in the DA.
pub fn slot_err(tokens: &[String], da: &DialogueAct, schema: &DomainSchema) -> SlotErr {
    let mut required: BTreeMap<String, usize> = BTreeMap::new();
    for p in da.pairs.iter().filter(|p| is_delexicalizable(p, schema)) {
        *required.entry(p.slot.clone()).or_default() += 1;
    }
    let mut emitted: BTreeMap<String, usize> = BTreeMap::new();
    for slot in tokens.iter().filter_map(|t| slot_of_token(t)) {
        *emitted.entry(slot).or_default() += 1;
    }
    let missing = required
        .iter()
        .map(|(s, &r)| r.saturating_sub(emitted.get(s).copied().unwrap_or(0)))
        .sum();
    let redundant = emitted
        .iter()
        .map(|(s, &e)| e.saturating_sub(required.get(s).copied().unwrap_or(0)))
        .sum();
    SlotErr::new(missing, redundant, required.values().sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub ids: Vec<usize>,
    /// Delexicalized tokens.
    pub tokens: Vec<String>,
    /// Model cost F.
    pub cost: f64,
    pub slot: SlotErr,
    pub err: f64,
    /// Rerank score R = F + λ·err.
    pub score: f64,
    pub truncated: bool,
}

pub fn to_candidates(
    hyps: Vec<Hypothesis>,
    vocab: &Vocab,
    da: &DialogueAct,
    lambda: f64,
) -> Vec<Candidate> {
    hyps.into_iter()
        .map(|h| {
            let tokens = vocab.words(&h.ids);
            let slot = slot_err(&tokens, da, &vocab.schema);
            Candidate {
                ids: h.ids,
                tokens,
                cost: h.cost,
                slot,
                err: slot.err,
                score: h.cost + lambda * slot.err,
                truncated: h.truncated,
            }
        })
        .collect()
}

/// Orders by R ascending, then F, then tokens; keeps the first `top_k`.
pub fn rerank(mut candidates: Vec<Candidate>, lambda: f64, top_k: usize) -> Vec<Candidate> {
    for c in &mut candidates {
        c.score = c.cost + lambda * c.err;
    }
    candidates.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.cost.total_cmp(&b.cost))
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    candidates.truncate(top_k);
    candidates
}

/// Per-step values of the DA feature vector `s_t` while reading a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct STrace {
    pub columns: Vec<String>,
    /// Token emitted at each step.
    pub tokens: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl STrace {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\ttoken");
        for c in &self.columns {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (t, (tok, row)) in self.tokens.iter().zip(&self.rows).enumerate() {
            let _ = write!(out, "{}\t{tok}", t + 1);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Feeds BOS and `ids` (plus EOS unless `truncated`) through the decoder and
/// records `s_t` after each emitted token.
pub fn export_s_trace(
    model: &Model,
    vocab: &Vocab,
    da: &EncodedDa,
    ids: &[usize],
    truncated: bool,
) -> Result<STrace> {
    let mut targets = ids.to_vec();
    if !truncated {
        targets.push(EOS_ID);
    }
    let mut g = Graph::new(&model.params);
    let cond = model.condition(&mut g, da)?;
    let mut state = model.initial_state(&mut g, &cond);
    let mut input = BOS_ID;
    let mut rows = Vec::with_capacity(targets.len());
    for &tok in &targets {
        let out = model.step(&mut g, &cond, &state, input, None)?;
        state = out.state;
        rows.push(g.value(state.s).data().to_vec());
        input = tok;
    }
    Ok(STrace {
        columns: vocab.schema.feature_names(),
        tokens: vocab.words(&targets),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub da: DialogueAct,
    /// Reranked top-k.
    pub candidates: Vec<Candidate>,
    /// Lexicalized text of each candidate.
    pub texts: Vec<String>,
    pub s_trace: Option<STrace>,
}

pub fn generate_for_da(
    model: &Model,
    vocab: &Vocab,
    da: &DialogueAct,
    cfg: &BeamConfig,
    with_trace: bool,
) -> Result<Generation> {
    let encoded = vocab.encode_da(da)?;
    let hyps = beam_search(model, &encoded, cfg)?;
    let candidates = rerank(to_candidates(hyps, vocab, da, cfg.lambda), cfg.lambda, cfg.top_k);
    let texts = candidates
        .iter()
        .map(|c| lexicalize(&c.tokens, da, &vocab.schema).text)
        .collect();
    let s_trace = match (with_trace, candidates.first()) {
        (true, Some(top)) => Some(export_s_trace(model, vocab, &encoded, &top.ids, top.truncated)?),
        _ => None,
    };
    Ok(Generation {
        da: da.clone(),
        candidates,
        texts,
        s_trace,
    })
}

/// Parse, over-generate, rerank and lexicalize.
pub fn generate(
    model: &Model,
    vocab: &Vocab,
    da_text: &str,
    cfg: &BeamConfig,
    with_trace: bool,
) -> Result<Generation> {
    let da = parse_da(da_text)?;
    generate_for_da(model, vocab, &da, cfg, with_trace)
}

/// Groups examples by DA (first-appearance order) with all their
/// references, normalized by the tokenizer.
pub fn group_references(examples: &[Example]) -> Vec<(DialogueAct, Vec<Vec<String>>)> {
    let mut order: Vec<(DialogueAct, Vec<Vec<String>>)> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for ex in examples {
        let key = ex.da.render();
        let refs = tokenize(&ex.reference);
        match index.get(&key) {
            Some(&i) => order[i].1.push(refs),
            None => {
                index.insert(key, order.len());
                order.push((ex.da.clone(), vec![refs]));
            }
        }
    }
    order
}

/// Generates the top-ranked output for each distinct DA and scores the set.
pub fn evaluate(
    model: &Model,
    vocab: &Vocab,
    examples: &[Example],
    cfg: &BeamConfig,
    label: &str,
) -> Result<EvalReport> {
    let groups = group_references(examples);
    if groups.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    let mut hyps = Vec::with_capacity(groups.len());
    let mut refs = Vec::with_capacity(groups.len());
    let mut per_da = Vec::with_capacity(groups.len());
    let one = BeamConfig { top_k: 1, ..*cfg };
    for (da, group) in groups {
        let gen = generate_for_da(model, vocab, &da, &one, false)?;
        let (text, slot) = match gen.candidates.first() {
            Some(c) => (gen.texts[0].clone(), c.slot),
            None => (String::new(), slot_err(&[], &da, &vocab.schema)),
        };
        hyps.push(tokenize(&text));
        per_da.push(DaEval {
            da: da.render(),
            hypothesis: text,
            references: group.iter().map(|r| r.join(" ")).collect(),
            slot,
        });
        refs.push(group);
    }
    let bleu = corpus_bleu(&hyps, &refs)?;
    let slots: Vec<SlotErr> = per_da.iter().map(|d| d.slot).collect();
    Ok(EvalReport {
        label: label.to_string(),
        bleu,
        err: corpus_err(&slots),
        per_da,
    })
}
