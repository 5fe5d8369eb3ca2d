//! Slot-value pair embeddings, bidirectional LSTM encoder and the aligner.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::corpus::EncodedDa;
use crate::error::Result;

use super::{AlignerParams, EncoderParams, LstmParams};

/// `z_i = u_i ⊕ v_i` for every pair, in encoder order.
pub fn embed_pairs(g: &mut Graph, p: &EncoderParams, da: &EncodedDa) -> Result<Vec<NodeId>> {
    let slots = g.param(p.slot_emb);
    let values = g.param(p.value_emb);
    da.slots
        .iter()
        .zip(&da.values)
        .map(|(&s, &v)| {
            let u = g.select(slots, s)?;
            let v = g.select(values, v)?;
            Ok(g.concat(&[u, v])?)
        })
        .collect()
}

/// Standard LSTM step; returns `(h, c)`.
pub fn lstm_cell(
    g: &mut Graph,
    p: &LstmParams,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    n: usize,
) -> Result<(NodeId, NodeId)> {
    let w = g.param(p.w);
    let b = g.param(p.b);
    let xh = g.concat(&[x, h_prev])?;
    let pre = g.matmul(w, xh)?;
    let pre = g.add(pre, b)?;
    let i = g.slice(pre, 0, n)?;
    let i = g.sigmoid(i)?;
    let f = g.slice(pre, n, n)?;
    let f = g.sigmoid(f)?;
    let o = g.slice(pre, 2 * n, n)?;
    let o = g.sigmoid(o)?;
    let cand = g.slice(pre, 3 * n, n)?;
    let cand = g.tanh(cand)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Encoder output `E`. `states[i] = forward[i] + backward[i]`.
#[derive(Clone, Debug)]
pub struct EncodedSequence {
    pub states: Vec<NodeId>,
    pub forward: Vec<NodeId>,
    pub backward: Vec<NodeId>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

pub fn bilstm_encode(
    g: &mut Graph,
    p: &EncoderParams,
    z: &[NodeId],
    n: usize,
) -> Result<EncodedSequence> {
    let run = |g: &mut Graph, lstm: &LstmParams, order: &mut dyn Iterator<Item = usize>| {
        let mut h = g.input(Tensor::zeros(&[n]));
        let mut c = g.input(Tensor::zeros(&[n]));
        let mut out = vec![h; z.len()];
        for i in order {
            (h, c) = lstm_cell(g, lstm, z[i], h, c, n)?;
            out[i] = h;
        }
        Ok::<_, crate::Error>(out)
    };
    let forward = run(g, &p.forward, &mut (0..z.len()))?;
    let backward = run(g, &p.backward, &mut (0..z.len()).rev())?;
    let states = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| g.add(f, b))
        .collect::<Result<_, _>>()?;
    Ok(EncodedSequence {
        states,
        forward,
        backward,
    })
}

/// Per-DA attention precomputation: `W_a e_i` for each state and the matrix
/// whose columns are the `e_i`.
#[derive(Clone, Debug)]
pub struct AttentionMemory {
    pub keys: Vec<NodeId>,
    pub values: NodeId,
    pub len: usize,
}

impl AttentionMemory {
    pub fn new(g: &mut Graph, p: &AlignerParams, enc: &EncodedSequence) -> Result<Self> {
        let w_a = g.param(p.w_a);
        let keys = enc
            .states
            .iter()
            .map(|&e| g.matmul(w_a, e))
            .collect::<Result<_, _>>()?;
        let values = g.columns(&enc.states)?;
        Ok(AttentionMemory {
            keys,
            values,
            len: enc.states.len(),
        })
    }
}

/// Attention over encoder states given the previous decoder hidden state.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    /// Alignment scores `v_aᵀ tanh(W_a e_i + U_a h)`.
    pub scores: NodeId,
    pub weights: NodeId,
    pub context: NodeId,
}

pub fn attend(
    g: &mut Graph,
    p: &AlignerParams,
    memory: &AttentionMemory,
    h_prev: NodeId,
) -> Result<Attention> {
    let u_a = g.param(p.u_a);
    let v_a = g.param(p.v_a);
    let query = g.matmul(u_a, h_prev)?;
    let mut scores = Vec::with_capacity(memory.len);
    for &key in &memory.keys {
        let pre = g.add(key, query)?;
        let act = g.tanh(pre)?;
        scores.push(g.matmul(v_a, act)?);
    }
    let scores = g.concat(&scores)?;
    let weights = g.softmax(scores)?;
    let context = g.matmul(memory.values, weights)?;
    Ok(Attention {
        scores,
        weights,
        context,
    })
}

/// `d_t = a ⊕ context`.
pub fn da_representation(g: &mut Graph, act_embed: NodeId, context: NodeId) -> Result<NodeId> {
    Ok(g.concat(&[act_embed, context])?)
}
