//! The decoder cell: refinement gate, DA-conditioned LSTM and adjustment cell.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

use super::encoder::{attend, da_representation, Attention};
use super::{AdjustmentParams, Conditioning, DecoderParams, Model, RefinementParams, StepMasks};

/// Which parts of the cell are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellVariant {
    #[default]
    Full,
    /// Token embedding fed directly; no `tanh(W_cr r_t)` cell term.
    WithoutRefinement,
    /// `h_t = h̃_t` and the DA vector is never decayed.
    WithoutAdjustment,
}

impl CellVariant {
    pub const ALL: [CellVariant; 3] = [
        CellVariant::Full,
        CellVariant::WithoutRefinement,
        CellVariant::WithoutAdjustment,
    ];

    pub fn has_refinement(self) -> bool {
        self != CellVariant::WithoutRefinement
    }

    pub fn has_adjustment(self) -> bool {
        self != CellVariant::WithoutAdjustment
    }

    /// Short command-line name.
    pub fn short_name(self) -> &'static str {
        match self {
            CellVariant::Full => "full",
            CellVariant::WithoutRefinement => "wo-r",
            CellVariant::WithoutAdjustment => "wo-a",
        }
    }
}

impl fmt::Display for CellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellVariant::Full => "full",
            CellVariant::WithoutRefinement => "without-refinement",
            CellVariant::WithoutAdjustment => "without-adjustment",
        })
    }
}

impl FromStr for CellVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "full" | "ralstm" => Ok(CellVariant::Full),
            "wo-r" | "without-refinement" => Ok(CellVariant::WithoutRefinement),
            "wo-a" | "without-adjustment" => Ok(CellVariant::WithoutAdjustment),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected full, wo-r or wo-a)"
            ))),
        }
    }
}

/// Recurrent state carried between decoder steps.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: NodeId,
    pub c: NodeId,
    /// Decaying DA feature vector.
    pub s: NodeId,
}

/// Refinement gate `r = σ(W_rd d + W_rh h_prev)` and refined input
/// `x = r ⊙ w_embed`. Returns `(x, r)`.
pub fn refine(
    g: &mut Graph,
    p: &RefinementParams,
    w_embed: NodeId,
    d: NodeId,
    h_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let w_rd = g.param(p.w_rd);
    let w_rh = g.param(p.w_rh);
    let a = g.matmul(w_rd, d)?;
    let b = g.matmul(w_rh, h_prev)?;
    let pre = g.add(a, b)?;
    let r = g.sigmoid(pre)?;
    let x = g.mul(r, w_embed)?;
    Ok((x, r))
}

#[derive(Clone, Copy, Debug)]
pub struct LstmOutput {
    pub h_tilde: NodeId,
    pub c: NodeId,
    pub input_gate: NodeId,
    pub forget_gate: NodeId,
    pub output_gate: NodeId,
}

/// Gates from `W_{4n,4n} [x; d; h_prev] + b`; the cell update gains
/// `tanh(W_cr r)` when a refinement gate is supplied.
#[allow(clippy::too_many_arguments)]
pub fn lstm_step(
    g: &mut Graph,
    p: &DecoderParams,
    x: NodeId,
    d: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    refinement: Option<(&RefinementParams, NodeId)>,
    n: usize,
) -> Result<LstmOutput> {
    let w = g.param(p.w_lstm);
    let b = g.param(p.b_lstm);
    let input = g.concat(&[x, d, h_prev])?;
    let pre = g.matmul(w, input)?;
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
    let mut c = g.add(keep, write)?;
    if let Some((rp, r)) = refinement {
        let w_cr = g.param(rp.w_cr);
        let proj = g.matmul(w_cr, r)?;
        let term = g.tanh(proj)?;
        c = g.add(c, term)?;
    }
    let tc = g.tanh(c)?;
    let h_tilde = g.mul(o, tc)?;
    Ok(LstmOutput {
        h_tilde,
        c,
        input_gate: i,
        forget_gate: f,
        output_gate: o,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct AdjustOutput {
    /// `a_t = σ(W_ax x + W_ah h̃)`
    pub gate: NodeId,
    /// `s_t = s_{t-1} ⊙ a_t`
    pub s: NodeId,
    /// `o ⊙ tanh(σ(W_os s_t))`
    pub h_a: NodeId,
}

pub fn adjust(
    g: &mut Graph,
    p: &AdjustmentParams,
    x: NodeId,
    h_tilde: NodeId,
    s_prev: NodeId,
    o: NodeId,
) -> Result<AdjustOutput> {
    let w_ax = g.param(p.w_ax);
    let w_ah = g.param(p.w_ah);
    let w_os = g.param(p.w_os);
    let a = g.matmul(w_ax, x)?;
    let b = g.matmul(w_ah, h_tilde)?;
    let pre = g.add(a, b)?;
    let gate = g.sigmoid(pre)?;
    let s = g.mul(s_prev, gate)?;
    let proj = g.matmul(w_os, s)?;
    let c_a = g.sigmoid(proj)?;
    let t = g.tanh(c_a)?;
    let h_a = g.mul(o, t)?;
    Ok(AdjustOutput { gate, s, h_a })
}

#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    /// Unnormalized next-token scores `W_ho h_t`.
    pub logits: NodeId,
    pub attention: Attention,
    pub d: NodeId,
    pub refinement_gate: Option<NodeId>,
    pub adjustment: Option<AdjustOutput>,
    pub lstm: LstmOutput,
}

pub fn decoder_step(
    g: &mut Graph,
    model: &Model,
    cond: &Conditioning,
    state: &DecoderState,
    token: usize,
    masks: Option<StepMasks>,
) -> Result<StepOutput> {
    let n = model.hidden();
    let dec = &model.ids.decoder;
    let table = g.param(dec.tok_emb);
    let mut w_embed = g.select(table, token)?;
    if let Some(m) = masks {
        w_embed = g.mul(w_embed, m.input)?;
    }

    let attention = attend(g, &model.ids.aligner, &cond.memory, state.h)?;
    let d = da_representation(g, cond.act_embed, attention.context)?;

    let (x, r) = match &dec.refinement {
        Some(rp) => {
            let (x, r) = refine(g, rp, w_embed, d, state.h)?;
            (x, Some((rp, r)))
        }
        None => (w_embed, None),
    };
    let lstm = lstm_step(g, dec, x, d, state.h, state.c, r, n)?;

    let (h, s, adjustment) = match &dec.adjustment {
        Some(ap) => {
            let adj = adjust(g, ap, x, lstm.h_tilde, state.s, lstm.output_gate)?;
            (g.add(lstm.h_tilde, adj.h_a)?, adj.s, Some(adj))
        }
        None => (lstm.h_tilde, state.s, None),
    };

    let out_h = match masks {
        Some(m) => g.mul(h, m.output)?,
        None => h,
    };
    let w_ho = g.param(dec.w_ho);
    let logits = g.matmul(w_ho, out_h)?;
    Ok(StepOutput {
        state: DecoderState { h, c: lstm.c, s },
        logits,
        attention,
        d,
        refinement_gate: r.map(|(_, r)| r),
        adjustment,
        lstm,
    })
}
