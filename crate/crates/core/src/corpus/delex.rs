//! Tokenization and slot-value (de)lexicalization.

use super::{DialogueAct, DomainSchema, SlotPair};

pub const SLOT_PREFIX: &str = "SLOT_";

const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '(', ')', '"'];

/// Lowercases, pads punctuation with spaces and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut padded = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if PUNCTUATION.contains(&c) {
            padded.push(' ');
            padded.push(c);
            padded.push(' ');
        } else {
            padded.extend(c.to_lowercase());
        }
    }
    padded.split_whitespace().map(str::to_string).collect()
}

/// `tokenize` followed by a single-space join.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

pub fn slot_token(slot: &str) -> String {
    format!("{SLOT_PREFIX}{}", slot.to_uppercase())
}

/// Slot name carried by a `SLOT_<NAME>` token.
pub fn slot_of_token(token: &str) -> Option<String> {
    token
        .strip_prefix(SLOT_PREFIX)
        .filter(|rest| !rest.is_empty())
        .map(str::to_lowercase)
}

/// Whether a pair is realized through a slot token.
pub fn is_delexicalizable(pair: &SlotPair, schema: &DomainSchema) -> bool {
    pair.value.text().is_some() && schema.is_delexicalizable(&pair.slot)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotOccurrence {
    /// Index of the slot token in the delexicalized token list.
    pub position: usize,
    pub slot: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DelexicalizedUtterance {
    pub tokens: Vec<String>,
    /// Replaced spans in left-to-right order.
    pub occurrences: Vec<SlotOccurrence>,
    /// Delexicalizable pairs whose value was not found in the text.
    pub unmatched: Vec<SlotPair>,
}

/// Replaces every delexicalizable value found in `text` by its slot token.
///
/// Matching is on token boundaries after [`tokenize`], so it is
/// case-insensitive. Longer values are placed first; among equal lengths the
/// DA order decides, and each pair claims the leftmost free occurrence.
pub fn delexicalize(text: &str, da: &DialogueAct, schema: &DomainSchema) -> DelexicalizedUtterance {
    let tokens = tokenize(text);
    let mut owner: Vec<Option<usize>> = vec![None; tokens.len()];
    // (start, len, pair index)
    let mut spans: Vec<(usize, usize, usize)> = Vec::new();
    let mut unmatched = Vec::new();

    let mut order: Vec<(usize, Vec<String>, usize)> = da
        .pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| is_delexicalizable(p, schema))
        .map(|(i, p)| {
            let v = p.value.text().unwrap_or_default();
            (i, tokenize(v), normalize(v).chars().count())
        })
        .collect();
    order.sort_by_key(|o| std::cmp::Reverse(o.2));

    for (pair_idx, value_tokens, _) in order {
        let k = value_tokens.len();
        let found = if k == 0 || k > tokens.len() {
            None
        } else {
            (0..=tokens.len() - k).find(|&start| {
                owner[start..start + k].iter().all(Option::is_none)
                    && tokens[start..start + k] == value_tokens[..]
            })
        };
        match found {
            Some(start) => {
                for o in &mut owner[start..start + k] {
                    *o = Some(pair_idx);
                }
                spans.push((start, k, pair_idx));
            }
            None => unmatched.push(da.pairs[pair_idx].clone()),
        }
    }
    spans.sort_unstable();

    let mut out = Vec::with_capacity(tokens.len());
    let mut occurrences = Vec::new();
    let mut i = 0;
    let mut next_span = spans.iter().peekable();
    while i < tokens.len() {
        match next_span.peek() {
            Some(&&(start, len, pair_idx)) if start == i => {
                let pair = &da.pairs[pair_idx];
                occurrences.push(SlotOccurrence {
                    position: out.len(),
                    slot: pair.slot.clone(),
                    value: tokens[start..start + len].join(" "),
                });
                out.push(slot_token(&pair.slot));
                i += len;
                next_span.next();
            }
            _ => {
                out.push(tokens[i].clone());
                i += 1;
            }
        }
    }
    DelexicalizedUtterance {
        tokens: out,
        occurrences,
        unmatched,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicalized {
    pub text: String,
    /// Slot tokens left in place because the DA had no remaining pair for them.
    pub unfilled: Vec<String>,
}

/// Substitutes slot tokens with DA values. The k-th `SLOT_X` takes the k-th
/// delexicalizable pair with slot `x`.
pub fn lexicalize(tokens: &[String], da: &DialogueAct, schema: &DomainSchema) -> Lexicalized {
    let mut used = vec![false; da.pairs.len()];
    let mut words = Vec::with_capacity(tokens.len());
    let mut unfilled = Vec::new();
    for tok in tokens {
        let Some(slot) = slot_of_token(tok) else {
            words.push(tok.clone());
            continue;
        };
        let next = da
            .pairs
            .iter()
            .enumerate()
            .find(|(i, p)| !used[*i] && p.slot == slot && is_delexicalizable(p, schema));
        match next {
            Some((i, p)) => {
                used[i] = true;
                words.push(normalize(p.value.text().unwrap_or_default()));
            }
            None => {
                unfilled.push(tok.clone());
                words.push(tok.clone());
            }
        }
    }
    Lexicalized {
        text: words.join(" "),
        unfilled,
    }
}
