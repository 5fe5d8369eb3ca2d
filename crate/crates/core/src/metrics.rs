//! Corpus BLEU-4 and slot error rate aggregates.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::SlotErr;

pub const MAX_ORDER: usize = 4;
/// Precision assigned to an order with candidates but no matches.
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuScore {
    pub bleu: f64,
    pub brevity_penalty: f64,
    /// Clipped matches and hypothesis n-gram totals for n = 1..4.
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub precisions: [f64; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn lower(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

/// Corpus-level BLEU-4 over tokenized text with clipped counts against
/// several references per hypothesis and the closest-reference-length
/// brevity penalty.
///
/// An order whose hypothesis count is zero across the whole corpus (every
/// hypothesis is shorter than `n`) is left out of the geometric mean rather
/// than forcing the score to zero. An order with candidates but no matches
/// gets precision `ε`, which keeps the score invariant when the corpus is
/// duplicated.
pub fn corpus_bleu(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<BleuScore> {
    if hypotheses.is_empty() {
        return Err(Error::Config("BLEU needs at least one hypothesis".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Config(format!(
            "{} hypotheses but {} reference groups",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (hyp, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Config("empty reference group".into()));
        }
        let hyp = lower(hyp);
        let refs: Vec<Vec<String>> = refs.iter().map(|r| lower(r)).collect();
        hyp_len += hyp.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap();
        for n in 1..=MAX_ORDER {
            let counts = ngrams(&hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (g, c) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in counts {
                totals[n - 1] += c;
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        precisions[n] = if matches[n] == 0 {
            BLEU_EPSILON
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_sum += precisions[n].ln();
        orders += 1;
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if orders == 0 {
        0.0
    } else {
        brevity_penalty * (log_sum / orders as f64).exp()
    };
    Ok(BleuScore {
        bleu,
        brevity_penalty,
        matches,
        totals,
        precisions,
        hyp_len,
        ref_len,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrAggregate {
    /// `(Σp + Σq) / ΣN`
    pub corpus: f64,
    /// Mean of per-DA ERR over DAs with `N > 0`.
    pub mean: f64,
    pub missing: usize,
    pub redundant: usize,
    pub required: usize,
}

pub fn corpus_err(items: &[SlotErr]) -> ErrAggregate {
    let missing: usize = items.iter().map(|e| e.missing).sum();
    let redundant: usize = items.iter().map(|e| e.redundant).sum();
    let required: usize = items.iter().map(|e| e.required).sum();
    let scored: Vec<f64> = items.iter().filter(|e| e.required > 0).map(|e| e.err).collect();
    ErrAggregate {
        corpus: if required == 0 {
            0.0
        } else {
            (missing + redundant) as f64 / required as f64
        },
        mean: if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        },
        missing,
        redundant,
        required,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DaEval {
    pub da: String,
    pub hypothesis: String,
    pub references: Vec<String>,
    pub slot: SlotErr,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub label: String,
    pub bleu: BleuScore,
    pub err: ErrAggregate,
    pub per_da: Vec<DaEval>,
}

/// Human-readable table, one row per report plus a mean row when there is
/// more than one.
pub fn render_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>8}  {:>8}  {:>5}\n",
        "model", "BLEU", "ERR", "ERR-mean", "DAs"
    );
    let row = |out: &mut String, label: &str, bleu: f64, err: f64, mean: f64, n: String| {
        let _ = writeln!(
            out,
            "{label:<width$}  {bleu:>7.4}  {:>7.2}%  {:>7.2}%  {n:>5}",
            err * 100.0,
            mean * 100.0
        );
    };
    for r in reports {
        row(&mut out, &r.label, r.bleu.bleu, r.err.corpus, r.err.mean, r.per_da.len().to_string());
    }
    if reports.len() > 1 {
        let k = reports.len() as f64;
        let mean = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        row(
            &mut out,
            "mean",
            mean(&|r| r.bleu.bleu),
            mean(&|r| r.err.corpus),
            mean(&|r| r.err.mean),
            "-".into(),
        );
    }
    out
}

/// Tab-separated summary with the same columns as [`render_table`].
pub fn to_tsv(reports: &[EvalReport]) -> String {
    let mut out = String::from("model\tbleu\terr_corpus\terr_mean\tmissing\tredundant\trequired\tdas\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
            r.label,
            r.bleu.bleu,
            r.err.corpus,
            r.err.mean,
            r.err.missing,
            r.err.redundant,
            r.err.required,
            r.per_da.len()
        );
    }
    out
}
