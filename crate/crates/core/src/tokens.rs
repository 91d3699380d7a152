//! Protocol marker tokens and the default whitespace tokenizer.

use serde::{Deserialize, Serialize};

pub const EOPA: &str = "[EOPA]";
pub const EOA: &str = "[EOA]";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const INTERRUPT: &str = "[INTERRUPT]";
pub const NO_INTERRUPT: &str = "[NO_INTERRUPT]";
pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";

/// The marker strings used by the protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerVocabulary {
    pub eopa: String,
    pub eoa: String,
    pub think_open: String,
    pub think_close: String,
    pub interrupt: String,
    pub no_interrupt: String,
}

impl Default for MarkerVocabulary {
    fn default() -> Self {
        Self {
            eopa: EOPA.into(),
            eoa: EOA.into(),
            think_open: THINK_OPEN.into(),
            think_close: THINK_CLOSE.into(),
            interrupt: INTERRUPT.into(),
            no_interrupt: NO_INTERRUPT.into(),
        }
    }
}

impl MarkerVocabulary {
    pub fn all(&self) -> [&str; 6] {
        [
            &self.eopa,
            &self.eoa,
            &self.think_open,
            &self.think_close,
            &self.interrupt,
            &self.no_interrupt,
        ]
    }
}

/// Every marker the tokenizer keeps as a single token.
pub const MARKERS: [&str; 8] = [
    EOPA,
    EOA,
    THINK_OPEN,
    THINK_CLOSE,
    INTERRUPT,
    NO_INTERRUPT,
    TOOL_CALL_OPEN,
    TOOL_CALL_CLOSE,
];

pub fn is_marker(token: &str) -> bool {
    MARKERS.contains(&token)
}

/// Splits on whitespace and cuts known markers out of the surrounding text,
/// so `"done</think>"` becomes `["done", "</think>"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in text.split_whitespace() {
        split_markers(piece, &mut out);
    }
    out
}

fn split_markers(mut piece: &str, out: &mut Vec<String>) {
    while !piece.is_empty() {
        let hit = MARKERS
            .iter()
            .filter_map(|m| piece.find(m).map(|pos| (pos, *m)))
            .min_by_key(|&(pos, m)| (pos, std::cmp::Reverse(m.len())));
        match hit {
            Some((pos, marker)) => {
                if pos > 0 {
                    out.push(piece[..pos].to_string());
                }
                out.push(marker.to_string());
                piece = &piece[pos + marker.len()..];
            }
            None => {
                out.push(piece.to_string());
                return;
            }
        }
    }
}

/// Joins tokens back into text with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(t.as_ref());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_are_distinct() {
        let v = MarkerVocabulary::default();
        let all = v.all();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
            assert_eq!(tokenize(a), vec![a.to_string()]);
        }
    }

    #[test]
    fn splits_glued_markers() {
        assert_eq!(
            tokenize("  so 6*4=24[INTERRUPT]</think> ok"),
            ["so", "6*4=24", "[INTERRUPT]", "</think>", "ok"]
        );
        assert_eq!(tokenize("<think>x</think>"), ["<think>", "x", "</think>"]);
        assert_eq!(tokenize("a[EOPA]b[EOA]"), ["a", "[EOPA]", "b", "[EOA]"]);
        assert!(tokenize(" \n\t").is_empty());
    }

    #[test]
    fn detokenize_roundtrips_on_spaced_text() {
        let t = tokenize("hello there [EOA]");
        assert_eq!(detokenize(&t), "hello there [EOA]");
    }
}
