//! Encoder, aligner and refinement/adjustment LSTM decoder.
//!
//! Dimension plan for hidden size `n`: slot and value embeddings are `n/2`
//! each so a pair embedding has size `n`; the act embedding has size `n`, so
//! the DA representation `d_t` has size `2n` and the decoder LSTM reads the
//! `4n`-dimensional concatenation `[x_t; d_t; h_{t-1}]`.

pub mod cell;
pub mod check;
pub mod checkpoint;
pub mod embeddings;
pub mod encoder;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::corpus::{EncodedDa, Vocab, BOS_ID};
use crate::error::{Error, Result};

pub use cell::{CellVariant, DecoderState, StepOutput};
pub use encoder::{AttentionMemory, EncodedSequence};

pub const INIT_SCALE: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

/// Shapes that fully determine the parameter layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub variant: CellVariant,
    pub vocab_size: usize,
    pub num_acts: usize,
    pub num_enc_slots: usize,
    pub num_enc_values: usize,
    pub feature_len: usize,
}

impl ModelConfig {
    pub fn for_vocab(vocab: &Vocab, hidden: usize, variant: CellVariant) -> Self {
        ModelConfig {
            hidden,
            variant,
            vocab_size: vocab.len(),
            num_acts: vocab.num_acts(),
            num_enc_slots: vocab.num_enc_slots(),
            num_enc_values: vocab.num_enc_values(),
            feature_len: vocab.feature_len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hidden size must be a positive even number, got {}",
                self.hidden
            )));
        }
        if self.vocab_size < 5 || self.num_acts == 0 || self.feature_len == 0 {
            return Err(Error::Config("vocabulary or schema is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    /// `[4n, in + n]`, gate rows ordered input, forget, output, candidate.
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    pub slot_emb: ParamId,
    pub value_emb: ParamId,
    pub forward: LstmParams,
    pub backward: LstmParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignerParams {
    pub w_a: ParamId,
    pub u_a: ParamId,
    /// Stored as a `[1, n]` row.
    pub v_a: ParamId,
    pub act_emb: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefinementParams {
    pub w_rd: ParamId,
    pub w_rh: ParamId,
    pub w_cr: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdjustmentParams {
    pub w_ax: ParamId,
    pub w_ah: ParamId,
    pub w_os: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderParams {
    pub tok_emb: ParamId,
    /// `[4n, 4n]` over `[x_t; d_t; h_{t-1}]`.
    pub w_lstm: ParamId,
    pub b_lstm: ParamId,
    pub refinement: Option<RefinementParams>,
    pub adjustment: Option<AdjustmentParams>,
    pub w_ho: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamIds {
    pub encoder: EncoderParams,
    pub aligner: AlignerParams,
    pub decoder: DecoderParams,
}

/// Parameter names and shapes for a configuration, in registration order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let n = cfg.hidden;
    let m = n / 2;
    let k = cfg.feature_len;
    let mut layout = vec![
        ("enc.slot_emb", vec![cfg.num_enc_slots, m]),
        ("enc.value_emb", vec![cfg.num_enc_values, m]),
        ("enc.fwd.w", vec![4 * n, 2 * n]),
        ("enc.fwd.b", vec![4 * n]),
        ("enc.bwd.w", vec![4 * n, 2 * n]),
        ("enc.bwd.b", vec![4 * n]),
        ("align.w_a", vec![n, n]),
        ("align.u_a", vec![n, n]),
        ("align.v_a", vec![1, n]),
        ("align.act_emb", vec![cfg.num_acts, n]),
        ("dec.tok_emb", vec![cfg.vocab_size, n]),
        ("dec.w_lstm", vec![4 * n, 4 * n]),
        ("dec.b_lstm", vec![4 * n]),
    ];
    if cfg.variant.has_refinement() {
        layout.push(("dec.w_rd", vec![n, 2 * n]));
        layout.push(("dec.w_rh", vec![n, n]));
        layout.push(("dec.w_cr", vec![n, n]));
    }
    if cfg.variant.has_adjustment() {
        layout.push(("dec.w_ax", vec![k, n]));
        layout.push(("dec.w_ah", vec![k, n]));
        layout.push(("dec.w_os", vec![n, k]));
    }
    layout.push(("dec.w_ho", vec![cfg.vocab_size, n]));
    layout.into_iter().map(|(s, d)| (s.to_string(), d)).collect()
}

fn resolve_ids(cfg: &ModelConfig, store: &ParamStore) -> Result<ParamIds> {
    let id = |name: &str| {
        store
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    };
    let refinement = if cfg.variant.has_refinement() {
        Some(RefinementParams {
            w_rd: id("dec.w_rd")?,
            w_rh: id("dec.w_rh")?,
            w_cr: id("dec.w_cr")?,
        })
    } else {
        None
    };
    let adjustment = if cfg.variant.has_adjustment() {
        Some(AdjustmentParams {
            w_ax: id("dec.w_ax")?,
            w_ah: id("dec.w_ah")?,
            w_os: id("dec.w_os")?,
        })
    } else {
        None
    };
    Ok(ParamIds {
        encoder: EncoderParams {
            slot_emb: id("enc.slot_emb")?,
            value_emb: id("enc.value_emb")?,
            forward: LstmParams {
                w: id("enc.fwd.w")?,
                b: id("enc.fwd.b")?,
            },
            backward: LstmParams {
                w: id("enc.bwd.w")?,
                b: id("enc.bwd.b")?,
            },
        },
        aligner: AlignerParams {
            w_a: id("align.w_a")?,
            u_a: id("align.u_a")?,
            v_a: id("align.v_a")?,
            act_emb: id("align.act_emb")?,
        },
        decoder: DecoderParams {
            tok_emb: id("dec.tok_emb")?,
            w_lstm: id("dec.w_lstm")?,
            b_lstm: id("dec.b_lstm")?,
            refinement,
            adjustment,
            w_ho: id("dec.w_ho")?,
        },
    })
}

/// A complete generator: configuration plus trained weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub ids: ParamIds,
}

/// Per-DA graph nodes shared by every decoder step.
#[derive(Clone, Debug)]
pub struct Conditioning {
    pub encoded: EncodedSequence,
    pub memory: AttentionMemory,
    pub act_embed: NodeId,
    pub s0: NodeId,
}

/// Dropout masks for one decoder step (already scaled by `1/(1-rate)`).
#[derive(Clone, Copy, Debug)]
pub struct StepMasks {
    pub input: NodeId,
    pub output: NodeId,
}

impl Model {
    /// Fresh model: recurrent and embedding matrices uniform in ±0.08, biases
    /// zero except the LSTM forget gates, which start at +1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.hidden;
        let mut store = ParamStore::new();
        for (name, shape) in param_layout(&config) {
            let mut t = Tensor::zeros(&shape);
            if name.ends_with(".b") || name.ends_with("b_lstm") {
                for v in &mut t.data_mut()[n..2 * n] {
                    *v = FORGET_BIAS;
                }
            } else {
                for v in t.data_mut() {
                    *v = rng.gen_range(-INIT_SCALE..INIT_SCALE);
                }
            }
            store.register(&name, t)?;
        }
        Model::from_params(config, store)
    }

    /// Wraps an existing store, checking every expected tensor is present with
    /// the right shape and nothing else is.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Model> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for this configuration, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape) in &layout {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if params.value(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params.value(id).shape()
                )));
            }
        }
        let ids = resolve_ids(&config, &params)?;
        Ok(Model {
            config,
            params,
            ids,
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn variant(&self) -> CellVariant {
        self.config.variant
    }

    /// Encodes the DA: pair embeddings, BiLSTM states, attention keys, act
    /// embedding and the initial feature vector.
    pub fn condition(&self, g: &mut Graph, da: &EncodedDa) -> Result<Conditioning> {
        let z = encoder::embed_pairs(g, &self.ids.encoder, da)?;
        let encoded = encoder::bilstm_encode(g, &self.ids.encoder, &z, self.hidden())?;
        let memory = AttentionMemory::new(g, &self.ids.aligner, &encoded)?;
        let table = g.param(self.ids.aligner.act_emb);
        let act_embed = g.select(table, da.act)?;
        let s0 = g.input(Tensor::vector(da.features.clone()));
        Ok(Conditioning {
            encoded,
            memory,
            act_embed,
            s0,
        })
    }

    pub fn initial_state(&self, g: &mut Graph, cond: &Conditioning) -> DecoderState {
        let n = self.hidden();
        DecoderState {
            h: g.input(Tensor::zeros(&[n])),
            c: g.input(Tensor::zeros(&[n])),
            s: cond.s0,
        }
    }

    /// One decoder step reading `token`.
    pub fn step(
        &self,
        g: &mut Graph,
        cond: &Conditioning,
        state: &DecoderState,
        token: usize,
        masks: Option<StepMasks>,
    ) -> Result<StepOutput> {
        cell::decoder_step(g, self, cond, state, token, masks)
    }

    /// Teacher-forced logits for `targets` (which should end with EOS). The
    /// decoder reads BOS followed by `targets[..len-1]`.
    pub fn teacher_forced_logits(
        &self,
        g: &mut Graph,
        da: &EncodedDa,
        targets: &[usize],
        mut masks: impl FnMut(&mut Graph) -> Option<StepMasks>,
    ) -> Result<Vec<NodeId>> {
        let cond = self.condition(g, da)?;
        let mut state = self.initial_state(g, &cond);
        let mut logits = Vec::with_capacity(targets.len());
        let mut input = BOS_ID;
        for &target in targets {
            let m = masks(g);
            let out = self.step(g, &cond, &state, input, m)?;
            logits.push(out.logits);
            state = out.state;
            input = target;
        }
        Ok(logits)
    }
}
