mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use ralstm::corpus::{parse_da, DomainSchema, EncodedDa, SlotSpec, Vocab, BOS_ID, EOS_ID};
use ralstm::generator::{
    beam_search, generate, rerank, score_tokens, slot_err, to_candidates, BeamConfig, Candidate, SlotErr,
};
use ralstm::model::{CellVariant, Model};

/// Vocabulary whose only emittable tokens are `words` and EOS.
fn word_vocab(words: &[&str]) -> Vocab {
    let schema = DomainSchema {
        name: "words".into(),
        acts: vec!["inform".into()],
        slots: vec![SlotSpec {
            name: "kids".into(),
            delexicalizable: false,
        }],
    };
    let mut tokens: Vec<String> = ["<pad>", "<s>", "</s>", "<unk>"].iter().map(|s| s.to_string()).collect();
    tokens.extend(words.iter().map(|w| w.to_string()));
    let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect();
    Vocab::from_parts(
        schema,
        tokens,
        s(&["<unk>", "<empty>", "kids"]),
        s(&["<unk>", "<empty>", "<delex>", "<absent>", "none", "yes", "no", "dontcare"]),
    )
}

fn model_for(vocab: &Vocab, seed: u64) -> Model {
    let mut m = tiny_model(vocab, CellVariant::Full, 4, seed);
    randomize(&mut m, seed, 1.0);
    m
}

fn encoded(vocab: &Vocab, text: &str) -> EncodedDa {
    vocab.encode_da(&parse_da(text).unwrap()).unwrap()
}

/// Every sequence over `word_ids` of length < `max_len` followed by EOS, plus
/// every length-`max_len` sequence without EOS.
fn enumerate(word_ids: &[usize], max_len: usize) -> Vec<(Vec<usize>, bool)> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for len in 0..=max_len {
        for seq in &frontier {
            out.push((seq.clone(), len == max_len));
        }
        frontier = frontier
            .iter()
            .flat_map(|s| {
                word_ids.iter().map(move |&w| {
                    let mut t = s.clone();
                    t.push(w);
                    t
                })
            })
            .collect();
    }
    out
}

fn oracle_cost(m: &Model, da: &EncodedDa, ids: &[usize], truncated: bool) -> f64 {
    let mut targets = ids.to_vec();
    if !truncated {
        targets.push(EOS_ID);
    }
    sequence_nll(m, da, &targets)
}

#[test]
fn wide_beam_enumerates_every_sequence() {
    for words in [&["a"][..], &["a", "b"][..]] {
        let vocab = word_vocab(words);
        let ids: Vec<usize> = (4..4 + words.len()).collect();
        let all = enumerate(&ids, 3);
        assert_eq!(all.len(), if words.len() == 1 { 4 } else { 15 });
        for seed in 0..5 {
            let m = model_for(&vocab, seed);
            let da = encoded(&vocab, "inform(kids=yes)");
            let cfg = BeamConfig {
                beam_width: 30,
                overgen: 30,
                top_k: 30,
                lambda: 0.0,
                max_length: 3,
            };
            let got = beam_search(&m, &da, &cfg).unwrap();
            let mut expected: Vec<(Vec<usize>, bool, f64)> = all
                .iter()
                .map(|(s, t)| (s.clone(), *t, oracle_cost(&m, &da, s, *t)))
                .collect();
            expected.sort_by(|a, b| a.2.total_cmp(&b.2).then_with(|| a.0.cmp(&b.0)));
            assert_eq!(got.len(), expected.len());
            for (h, (ids, truncated, cost)) in got.iter().zip(&expected) {
                assert_eq!(&h.ids, ids);
                assert_eq!(h.truncated, *truncated);
                assert!((h.cost - cost).abs() < 1e-9, "{} vs {cost}", h.cost);
            }
        }
    }
}

#[test]
fn width_one_is_greedy_decoding() {
    let vocab = tiny_vocab();
    for seed in 0..10 {
        let m = model_for(&vocab, seed);
        let da = encoded(&vocab, "inform(name='x';food='y';kids=yes)");
        let cfg = BeamConfig {
            beam_width: 1,
            overgen: 1,
            top_k: 1,
            lambda: 0.0,
            max_length: 12,
        };
        let got = beam_search(&m, &da, &cfg).unwrap();
        assert_eq!(got.len(), 1);

        // step-by-step argmax over emittable tokens with the oracle cell
        let enc = encode(&m, &da);
        let mut st = initial_state(&m, &da);
        let mut input = BOS_ID;
        let mut ids = Vec::new();
        let mut cost = 0.0;
        let mut truncated = true;
        for _ in 0..cfg.max_length {
            let out = step(&m, &da, &enc, &st, input);
            let probs = softmax(&out.logits);
            let (best, p) = probs
                .iter()
                .enumerate()
                .filter(|(k, _)| vocab.emittable(*k))
                .fold((0, -1.0), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc });
            cost -= p.ln();
            if best == EOS_ID {
                truncated = false;
                break;
            }
            ids.push(best);
            st = out.state;
            input = best;
        }
        assert_eq!(got[0].ids, ids, "seed {seed}");
        assert_eq!(got[0].truncated, truncated);
        assert!((got[0].cost - cost).abs() < 1e-9);
        let rescored = score_tokens(&m, &da, &got[0].ids, got[0].truncated).unwrap();
        assert!((rescored - got[0].cost).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn beam_costs_match_independent_rescoring(seed in 0u64..10_000, width in 1usize..6) {
        let vocab = tiny_vocab();
        let m = model_for(&vocab, seed);
        let da = encoded(&vocab, "inform(name='x';food='y')");
        let cfg = BeamConfig { beam_width: width, overgen: 8, top_k: 1, lambda: 0.0, max_length: 6 };
        let hyps = beam_search(&m, &da, &cfg).unwrap();
        prop_assert!(!hyps.is_empty() && hyps.len() <= 8);
        let mut seen = std::collections::BTreeSet::new();
        for h in &hyps {
            prop_assert!(seen.insert((h.ids.clone(), h.truncated)), "duplicate candidate");
            prop_assert!(h.truncated == (h.ids.len() == cfg.max_length));
            prop_assert!(h.ids.iter().all(|&k| vocab.emittable(k) && k != EOS_ID));
            let rescored = score_tokens(&m, &da, &h.ids, h.truncated).unwrap();
            prop_assert!((rescored - h.cost).abs() < 1e-9);
            prop_assert!((oracle_cost(&m, &da, &h.ids, h.truncated) - h.cost).abs() < 1e-9);
        }
        for w in hyps.windows(2) {
            prop_assert!(w[0].cost <= w[1].cost);
        }
    }
}

fn candidate(cost: f64, err: f64, tokens: Vec<String>) -> Candidate {
    Candidate {
        ids: vec![],
        tokens,
        cost,
        slot: SlotErr::default(),
        err,
        score: f64::NAN,
        truncated: false,
    }
}

fn candidates_strategy() -> impl Strategy<Value = Vec<Candidate>> {
    prop::collection::vec(
        (
            // coarse grid so that ties in F and R actually occur
            (0u32..20).prop_map(|c| c as f64 * 0.5),
            prop::sample::select(vec![0.0, 0.25, 0.5, 1.0, 1.5]),
            prop::collection::vec(prop::sample::select(vec!["a", "b", "SLOT_NAME"]), 0..4),
        )
            .prop_map(|(c, e, t)| candidate(c, e, t.into_iter().map(String::from).collect())),
        1..25,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rerank_matches_reference_sort(
        cands in candidates_strategy(),
        lambda in prop::sample::select(vec![0.0, 1.0, 3.0, 1000.0]),
        k in 1usize..30,
    ) {
        let got = rerank(cands.clone(), lambda, k);
        // selection-sort oracle on explicit (R, F, tokens) keys
        let mut rest: Vec<(f64, f64, Vec<String>)> =
            cands.iter().map(|c| (c.cost + lambda * c.err, c.cost, c.tokens.clone())).collect();
        let mut oracle = Vec::new();
        while !rest.is_empty() {
            let mut best = 0;
            for i in 1..rest.len() {
                let (a, b) = (&rest[i], &rest[best]);
                if a.0 < b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2))) {
                    best = i;
                }
            }
            oracle.push(rest.remove(best));
        }
        oracle.truncate(k);
        prop_assert_eq!(got.len(), oracle.len());
        for (c, o) in got.iter().zip(&oracle) {
            prop_assert_eq!(c.score, c.cost + lambda * c.err);
            prop_assert_eq!((c.score, c.cost, &c.tokens), (o.0, o.1, &o.2));
        }
        if lambda == 0.0 {
            for w in got.windows(2) {
                prop_assert!(w[0].cost <= w[1].cost);
            }
        }
    }

    #[test]
    fn large_lambda_puts_error_free_first(
        costs in prop::collection::vec(0.0f64..100.0, 2..20),
        errs in prop::collection::vec(prop::sample::select(vec![0.0, 1.0 / 6.0, 0.25, 0.5, 2.0]), 2..20),
    ) {
        let cands: Vec<Candidate> = costs
            .iter()
            .zip(&errs)
            .map(|(&c, &e)| candidate(c, e, vec![]))
            .collect();
        let max_f = cands.iter().map(|c| c.cost).fold(f64::MIN, f64::max);
        let min_f = cands.iter().map(|c| c.cost).fold(f64::MAX, f64::min);
        let min_err = cands.iter().map(|c| c.err).filter(|&e| e > 0.0).fold(f64::INFINITY, f64::min);
        prop_assume!(min_err.is_finite());
        // a hair above the bound so that rounding in F + λ·err cannot produce a tie
        let lambda = (max_f - min_f) / min_err * (1.0 + 1e-12) + 1e-9;
        let ranked = rerank(cands.clone(), lambda, cands.len());
        let first_bad = ranked.iter().position(|c| c.err > 0.0).unwrap();
        prop_assert!(ranked[first_bad..].iter().all(|c| c.err > 0.0));
    }

    #[test]
    fn err_ignores_order_of_plain_words(
        words in prop::collection::vec(prop::sample::select(vec!["is", "a", "place", "SLOT_NAME", "SLOT_FOOD"]), 0..10),
        shuffle_seed in any::<u64>(),
    ) {
        let vocab = tiny_vocab();
        let da = parse_da("inform(name='x';food='y';name='z')").unwrap();
        let tokens: Vec<String> = words.iter().map(|s| s.to_string()).collect();
        let base = slot_err(&tokens, &da, &vocab.schema);
        // permute only the non-slot words, keeping slot tokens in place
        let mut plain: Vec<String> = tokens.iter().filter(|t| !t.starts_with("SLOT_")).cloned().collect();
        use rand::seq::SliceRandom;
        plain.shuffle(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(shuffle_seed));
        let mut it = plain.into_iter();
        let reordered: Vec<String> =
            tokens.iter().map(|t| if t.starts_with("SLOT_") { t.clone() } else { it.next().unwrap() }).collect();
        prop_assert_eq!(slot_err(&reordered, &da, &vocab.schema), base);
        // and the slot error is recomputed from counts alone
        let mut need: BTreeMap<&str, usize> = BTreeMap::new();
        need.insert("SLOT_NAME", 2);
        need.insert("SLOT_FOOD", 1);
        let have = |s: &str| tokens.iter().filter(|t| *t == s).count();
        let p: usize = need.iter().map(|(s, &n)| n.saturating_sub(have(s))).sum();
        let q: usize = need.iter().map(|(s, &n)| have(s).saturating_sub(n)).sum();
        prop_assert_eq!((base.missing, base.redundant, base.required), (p, q, 3));
    }
}

#[test]
fn candidate_err_is_computed_before_lexicalization() {
    let vocab = tiny_vocab();
    let m = model_for(&vocab, 3);
    let da_text = "inform(name='x';food='y')";
    let gen = generate(&m, &vocab, da_text, &BeamConfig { max_length: 8, ..Default::default() }, false).unwrap();
    let da = parse_da(da_text).unwrap();
    for (c, text) in gen.candidates.iter().zip(&gen.texts) {
        assert_eq!(c.slot, slot_err(&c.tokens, &da, &vocab.schema));
        assert_eq!(c.score, c.cost + 1000.0 * c.err);
        // the lexicalized string no longer has the filled slot tokens
        assert!(c.slot.redundant > 0 || !text.contains("SLOT_"));
    }
}

#[test]
fn top_one_is_prefix_of_top_five() {
    let vocab = tiny_vocab();
    for seed in 0..5 {
        let m = model_for(&vocab, seed);
        let run = |k| {
            let cfg = BeamConfig { top_k: k, max_length: 8, ..Default::default() };
            generate(&m, &vocab, "inform(name='x';food='y')", &cfg, false).unwrap()
        };
        let (one, five) = (run(1), run(5));
        assert_eq!(one.candidates.len(), 1);
        assert_eq!(five.candidates.len(), 5);
        assert_eq!(one.candidates[0], five.candidates[0]);
        assert_eq!(one.texts[0], five.texts[0]);
    }
}

#[test]
fn da_without_delexicalizable_slots_scores_zero() {
    let vocab = tiny_vocab();
    let m = model_for(&vocab, 8);
    let gen = generate(&m, &vocab, "inform(kids=yes)", &BeamConfig { max_length: 8, ..Default::default() }, true)
        .unwrap();
    assert!(!gen.candidates.is_empty());
    for c in &gen.candidates {
        assert_eq!(c.slot.required, 0);
        assert_eq!(c.err, 0.0);
        assert_eq!(c.score, c.cost);
    }
    let trace = gen.s_trace.unwrap();
    let top = &gen.candidates[0];
    assert_eq!(trace.rows.len(), top.ids.len() + usize::from(!top.truncated));
}

#[test]
fn to_candidates_keeps_beam_order_and_costs() {
    let vocab = word_vocab(&["a", "b"]);
    let m = model_for(&vocab, 1);
    let da = encoded(&vocab, "inform(kids=no)");
    let cfg = BeamConfig { beam_width: 4, overgen: 6, top_k: 6, lambda: 5.0, max_length: 4 };
    let hyps = beam_search(&m, &da, &cfg).unwrap();
    let cands = to_candidates(hyps.clone(), &vocab, &parse_da("inform(kids=no)").unwrap(), 5.0);
    for (h, c) in hyps.iter().zip(&cands) {
        assert_eq!(h.ids, c.ids);
        assert_eq!(h.cost, c.cost);
        assert_eq!(c.tokens, vocab.words(&h.ids));
    }
}
