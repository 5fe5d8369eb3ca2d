//! Plain-f64 reference implementations used as test oracles. Nothing here
//! touches the autodiff graph.
#![allow(dead_code)]

use ralstm::autodiff::{ParamId, Tensor};
use ralstm::corpus::{DomainSchema, EncodedDa, SlotSpec, Vocab};
use ralstm::model::{CellVariant, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn matvec(t: &Tensor, x: &[f64]) -> Vec<f64> {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    assert_eq!(c, x.len());
    (0..r)
        .map(|i| (0..c).map(|j| t.data()[i * c + j] * x[j]).sum())
        .collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn p(m: &Model, id: ParamId) -> &Tensor {
    m.params.value(id)
}

pub fn row(t: &Tensor, r: usize) -> Vec<f64> {
    t.row(r).to_vec()
}

/// Standard LSTM: gates i, f, o, candidate from `W [x; h] + b`.
pub fn lstm(w: &Tensor, b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let pre = add(&matvec(w, &cat(&[x, h])), b);
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for k in 0..n {
        let i = sig(pre[k]);
        let f = sig(pre[n + k]);
        let o = sig(pre[2 * n + k]);
        let g = pre[3 * n + k].tanh();
        c2[k] = f * c[k] + i * g;
        h2[k] = o * c2[k].tanh();
    }
    (h2, c2)
}

pub fn pair_embeddings(m: &Model, da: &EncodedDa) -> Vec<Vec<f64>> {
    let e = &m.ids.encoder;
    da.slots
        .iter()
        .zip(&da.values)
        .map(|(&s, &v)| cat(&[p(m, e.slot_emb).row(s), p(m, e.value_emb).row(v)]))
        .collect()
}

pub struct Encoded {
    pub states: Vec<Vec<f64>>,
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
}

pub fn encode(m: &Model, da: &EncodedDa) -> Encoded {
    let n = m.hidden();
    let z = pair_embeddings(m, da);
    let e = &m.ids.encoder;
    let run = |w: ParamId, b: ParamId, order: Vec<usize>| {
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut out = vec![vec![]; z.len()];
        for i in order {
            let (h2, c2) = lstm(p(m, w), p(m, b).data(), &z[i], &h, &c);
            h = h2;
            c = c2;
            out[i] = h.clone();
        }
        out
    };
    let forward = run(e.forward.w, e.forward.b, (0..z.len()).collect());
    let backward = run(e.backward.w, e.backward.b, (0..z.len()).rev().collect());
    let states = forward.iter().zip(&backward).map(|(f, b)| add(f, b)).collect();
    Encoded {
        states,
        forward,
        backward,
    }
}

/// `(scores, β, context)` with `score_i = v_aᵀ tanh(W_a e_i + U_a h)`.
pub fn attend(m: &Model, states: &[Vec<f64>], h: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let a = &m.ids.aligner;
    let q = matvec(p(m, a.u_a), h);
    let v = p(m, a.v_a).data();
    let scores: Vec<f64> = states
        .iter()
        .map(|e| {
            let k = matvec(p(m, a.w_a), e);
            (0..q.len()).map(|j| v[j] * (k[j] + q[j]).tanh()).sum()
        })
        .collect();
    let beta = softmax(&scores);
    let n = h.len();
    let mut ctx = vec![0.0; n];
    for (b, e) in beta.iter().zip(states) {
        for j in 0..n {
            ctx[j] += b * e[j];
        }
    }
    (scores, beta, ctx)
}

#[derive(Clone, Debug)]
pub struct State {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub s: Vec<f64>,
}

pub struct StepTrace {
    pub state: State,
    pub logits: Vec<f64>,
    pub beta: Vec<f64>,
    pub r: Option<Vec<f64>>,
    pub h_tilde: Vec<f64>,
    pub gate_a: Option<Vec<f64>>,
}

/// One decoder step written out component by component.
pub fn step(m: &Model, da: &EncodedDa, enc: &Encoded, st: &State, token: usize) -> StepTrace {
    let n = m.hidden();
    let d = &m.ids.decoder;
    let w = p(m, d.tok_emb).row(token).to_vec();
    let (_, beta, ctx) = attend(m, &enc.states, &st.h);
    let act = p(m, m.ids.aligner.act_emb).row(da.act).to_vec();
    let dt = cat(&[&act, &ctx]);
    let (x, r) = match &d.refinement {
        Some(rp) => {
            let pre = add(&matvec(p(m, rp.w_rd), &dt), &matvec(p(m, rp.w_rh), &st.h));
            let r: Vec<f64> = pre.iter().map(|&v| sig(v)).collect();
            (mul(&r, &w), Some(r))
        }
        None => (w.clone(), None),
    };
    let pre = add(&matvec(p(m, d.w_lstm), &cat(&[&x, &dt, &st.h])), p(m, d.b_lstm).data());
    let extra = match (&d.refinement, &r) {
        (Some(rp), Some(r)) => matvec(p(m, rp.w_cr), r).iter().map(|v| v.tanh()).collect(),
        _ => vec![0.0; n],
    };
    let mut c = vec![0.0; n];
    let mut o = vec![0.0; n];
    let mut h_tilde = vec![0.0; n];
    for k in 0..n {
        let i = sig(pre[k]);
        let f = sig(pre[n + k]);
        o[k] = sig(pre[2 * n + k]);
        let g = pre[3 * n + k].tanh();
        c[k] = f * st.c[k] + i * g + extra[k];
        h_tilde[k] = o[k] * c[k].tanh();
    }
    let (h, s, gate_a) = match &d.adjustment {
        Some(ap) => {
            let pre = add(&matvec(p(m, ap.w_ax), &x), &matvec(p(m, ap.w_ah), &h_tilde));
            let a: Vec<f64> = pre.iter().map(|&v| sig(v)).collect();
            let s = mul(&st.s, &a);
            let ca: Vec<f64> = matvec(p(m, ap.w_os), &s).iter().map(|&v| sig(v)).collect();
            let ha: Vec<f64> = (0..n).map(|k| o[k] * ca[k].tanh()).collect();
            (add(&h_tilde, &ha), s, Some(a))
        }
        None => (h_tilde.clone(), st.s.clone(), None),
    };
    let logits = matvec(p(m, d.w_ho), &h);
    StepTrace {
        state: State { h, c, s },
        logits,
        beta,
        r,
        h_tilde,
        gate_a,
    }
}

pub fn initial_state(m: &Model, da: &EncodedDa) -> State {
    State {
        h: vec![0.0; m.hidden()],
        c: vec![0.0; m.hidden()],
        s: da.features.clone(),
    }
}

/// `−Σ ln softmax(logits_t)[y_t]` computed by unrolling [`step`].
pub fn sequence_nll(m: &Model, da: &EncodedDa, targets: &[usize]) -> f64 {
    let enc = encode(m, da);
    let mut st = initial_state(m, da);
    let mut input = ralstm::corpus::BOS_ID;
    let mut total = 0.0;
    for &y in targets {
        let out = step(m, da, &enc, &st, input);
        total -= softmax(&out.logits)[y].ln();
        st = out.state;
        input = y;
    }
    total
}

/// Two-act, three-slot schema with a 12-token vocabulary:
/// specials (4), SLOT_NAME, SLOT_FOOD, and six words.
pub fn tiny_vocab() -> Vocab {
    let schema = DomainSchema {
        name: "tiny".into(),
        acts: vec!["inform".into(), "confirm".into()],
        slots: vec![
            SlotSpec {
                name: "food".into(),
                delexicalizable: true,
            },
            SlotSpec {
                name: "kids".into(),
                delexicalizable: false,
            },
            SlotSpec {
                name: "name".into(),
                delexicalizable: true,
            },
        ],
    };
    let tokens = [
        "<pad>", "<s>", "</s>", "<unk>", "SLOT_FOOD", "SLOT_NAME", "is", "a", "place", "serving",
        "kids", "ok",
    ];
    let enc_slots = ["<unk>", "<empty>", "food", "kids", "name"];
    let enc_values = ["<unk>", "<empty>", "<delex>", "<absent>", "none", "yes", "no", "dontcare"];
    let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
    Vocab::from_parts(schema, s(&tokens), s(&enc_slots), s(&enc_values))
}

pub fn tiny_model(vocab: &Vocab, variant: CellVariant, hidden: usize, seed: u64) -> Model {
    Model::init(ModelConfig::for_vocab(vocab, hidden, variant), seed).unwrap()
}

/// Replaces every parameter with uniform draws in `±scale`.
pub fn randomize(m: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = m.params.ids().collect();
    for id in ids {
        for v in m.params.value_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn zero_all(m: &mut Model) {
    let ids: Vec<ParamId> = m.params.ids().collect();
    for id in ids {
        m.params.value_mut(id).fill(0.0);
    }
}

pub fn toy_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}
