//! Dialogue-act grammar: `?act(slot=value; slot='quoted value', slot)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Value side of a slot-value pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SlotValue {
    Text(String),
    None,
    Yes,
    No,
    DontCare,
    /// Slot mentioned without a value, as in `request(area)`.
    Absent,
}

impl SlotValue {
    /// Maps the reserved words to their special variants.
    pub fn from_raw(raw: &str) -> SlotValue {
        match raw.trim().to_lowercase().as_str() {
            "" => SlotValue::Absent,
            "none" => SlotValue::None,
            "yes" => SlotValue::Yes,
            "no" => SlotValue::No,
            "dontcare" | "dont_care" | "don't care" => SlotValue::DontCare,
            _ => SlotValue::Text(raw.trim().to_string()),
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            SlotValue::Text(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_special(&self) -> bool {
        !matches!(self, SlotValue::Text(_))
    }

    /// Name used for the encoder value vocabulary and canonical rendering.
    pub fn special_name(&self) -> Option<&'static str> {
        match self {
            SlotValue::Text(_) => None,
            SlotValue::None => Some("none"),
            SlotValue::Yes => Some("yes"),
            SlotValue::No => Some("no"),
            SlotValue::DontCare => Some("dontcare"),
            SlotValue::Absent => Some("<absent>"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotPair {
    pub slot: String,
    pub value: SlotValue,
}

impl SlotPair {
    pub fn new(slot: &str, value: SlotValue) -> Self {
        SlotPair {
            slot: slot.to_string(),
            value,
        }
    }

    pub fn text(slot: &str, value: &str) -> Self {
        SlotPair::new(slot, SlotValue::Text(value.to_string()))
    }
}

/// An act type with its ordered slot-value pairs. Duplicate slots are kept.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogueAct {
    /// Act name without the question marker.
    pub act: String,
    /// Whether the source carried the `?` prefix.
    pub question: bool,
    pub pairs: Vec<SlotPair>,
}

impl DialogueAct {
    pub fn new(act: &str, pairs: Vec<SlotPair>) -> Self {
        DialogueAct {
            act: act.to_string(),
            question: false,
            pairs,
        }
    }

    /// Act name as written in the source, including any `?` prefix.
    pub fn act_label(&self) -> String {
        if self.question {
            format!("?{}", self.act)
        } else {
            self.act.clone()
        }
    }

    /// Canonical form accepted back by [`parse_da`].
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DialogueAct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.act_label())?;
        for (i, pair) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            match &pair.value {
                SlotValue::Absent => write!(f, "{}", pair.slot)?,
                SlotValue::Text(t) if t.contains('\'') => write!(f, "{}=\"{}\"", pair.slot, t)?,
                SlotValue::Text(t) => write!(f, "{}='{}'", pair.slot, t)?,
                special => write!(f, "{}={}", pair.slot, special.special_name().unwrap_or(""))?,
            }
        }
        f.write_str(")")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("dialogue act parse error at byte {offset}: {message}")]
pub struct ParseDaError {
    pub offset: usize,
    pub message: String,
}

fn err(offset: usize, message: impl Into<String>) -> ParseDaError {
    ParseDaError {
        offset,
        message: message.into(),
    }
}

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    /// Consumes characters until one of `stops` (not consumed).
    fn take_until(&mut self, stops: &[char]) -> &'a str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if stops.contains(&c) {
                break;
            }
            self.bump();
        }
        &self.src[start..self.pos]
    }
}

const SEPARATORS: [char; 2] = [';', ','];

/// Parses a dialogue act such as `inform(name='Bar crudo'; food='raw food')`.
pub fn parse_da(text: &str) -> Result<DialogueAct, ParseDaError> {
    let mut sc = Scanner { src: text, pos: 0 };
    sc.skip_ws();
    let question = if sc.peek() == Some('?') {
        sc.bump();
        true
    } else {
        false
    };
    let act_start = sc.pos;
    let act = sc.take_until(&['(', ')', '\'', '"', '=', ';', ',']).trim();
    if act.is_empty() {
        return Err(err(act_start, "empty act type"));
    }
    if act.chars().any(char::is_whitespace) {
        return Err(err(act_start, format!("act type '{act}' contains whitespace")));
    }
    match sc.peek() {
        Some('(') => {
            sc.bump();
        }
        Some(c) => return Err(err(sc.pos, format!("expected '(' after act type, found '{c}'"))),
        None => return Err(err(sc.pos, "expected '(' after act type")),
    }

    let mut pairs = Vec::new();
    loop {
        sc.skip_ws();
        match sc.peek() {
            None => return Err(err(sc.pos, "unbalanced parentheses: missing ')'")),
            Some(')') => {
                sc.bump();
                break;
            }
            _ => {}
        }
        let slot_start = sc.pos;
        let slot = sc.take_until(&['=', ';', ',', ')', '(', '\'', '"']).trim();
        if slot.is_empty() {
            return Err(err(slot_start, "empty slot name"));
        }
        let value = match sc.peek() {
            Some('=') => {
                sc.bump();
                sc.skip_ws();
                match sc.peek() {
                    Some(q @ ('\'' | '"')) => {
                        let quote_at = sc.pos;
                        sc.bump();
                        let inner = sc.take_until(&[q]);
                        if sc.bump() != Some(q) {
                            return Err(err(quote_at, "unbalanced quote"));
                        }
                        sc.skip_ws();
                        SlotValue::from_raw(inner)
                    }
                    _ => {
                        let raw = sc.take_until(&[';', ',', ')', '(', '\'', '"']);
                        match sc.peek() {
                            Some('(') => {
                                return Err(err(sc.pos, "unbalanced parentheses: unexpected '('"))
                            }
                            Some('\'' | '"') => {
                                return Err(err(sc.pos, "unbalanced quote inside unquoted value"))
                            }
                            _ => {}
                        }
                        SlotValue::from_raw(raw)
                    }
                }
            }
            Some(';' | ',' | ')') => SlotValue::Absent,
            Some(c) => return Err(err(sc.pos, format!("unexpected '{c}' after slot name"))),
            None => return Err(err(sc.pos, "unbalanced parentheses: missing ')'")),
        };
        pairs.push(SlotPair::new(slot, value));
        match sc.peek() {
            Some(c) if SEPARATORS.contains(&c) => {
                sc.bump();
            }
            Some(')') => {}
            Some(c) => return Err(err(sc.pos, format!("expected separator, found '{c}'"))),
            None => return Err(err(sc.pos, "unbalanced parentheses: missing ')'")),
        }
    }
    sc.skip_ws();
    if sc.pos < text.len() {
        return Err(err(sc.pos, "trailing characters after ')'"));
    }
    Ok(DialogueAct {
        act: act.to_string(),
        question,
        pairs,
    })
}

/// Stable sort of pairs by slot name, the order the encoder reads them in.
pub fn sort_pairs_for_encoder(da: &DialogueAct) -> DialogueAct {
    let mut sorted = da.clone();
    sorted.pairs.sort_by(|a, b| a.slot.cmp(&b.slot));
    sorted
}
