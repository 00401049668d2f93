//! Byte-level tokenizer over the printable ASCII template alphabet.
//!
//! Ids 0..4 are reserved specials, id 4 is the newline and the 95 printable
//! characters `' '..='~'` follow. The literal strings `<answer>` and
//! `</answer>` always encode to their special ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const ANSWER_OPEN: u32 = 2;
pub const ANSWER_CLOSE: u32 = 3;
const NEWLINE: u32 = 4;
const FIRST_PRINTABLE: u32 = 5;

pub const ANSWER_OPEN_TEXT: &str = "<answer>";
pub const ANSWER_CLOSE_TEXT: &str = "</answer>";

/// Number of token ids.
pub const VOCAB_SIZE: usize = 5 + 95;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn starts_with(&self, prefix: &TokenSequence) -> bool {
        self.0.starts_with(&prefix.0)
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(v: Vec<u32>) -> Self {
        TokenSequence(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub size: usize,
    pub pad: u32,
    pub bos: u32,
    pub answer_open: u32,
    pub answer_close: u32,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            size: VOCAB_SIZE,
            pad: PAD,
            bos: BOS,
            answer_open: ANSWER_OPEN,
            answer_close: ANSWER_CLOSE,
        }
    }
}

fn encode_char(c: char) -> Result<u32> {
    match c {
        '\n' => Ok(NEWLINE),
        ' '..='~' => Ok(FIRST_PRINTABLE + (c as u32 - ' ' as u32)),
        _ => Err(Error::UnmappedChar(c)),
    }
}

pub fn tokenize(text: &str) -> Result<TokenSequence> {
    let mut out = Vec::with_capacity(text.len());
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if rest.starts_with(ANSWER_OPEN_TEXT) {
            out.push(ANSWER_OPEN);
            rest = &rest[ANSWER_OPEN_TEXT.len()..];
        } else if rest.starts_with(ANSWER_CLOSE_TEXT) {
            out.push(ANSWER_CLOSE);
            rest = &rest[ANSWER_CLOSE_TEXT.len()..];
        } else {
            out.push(encode_char(c)?);
            rest = &rest[c.len_utf8()..];
        }
    }
    Ok(TokenSequence(out))
}

/// Renders one token id. PAD and BOS render as `<pad>` / `<bos>` markers,
/// which never occur in templates.
pub fn token_text(id: u32) -> Result<&'static str> {
    const PRINTABLE: &str = " !\"#$%&'()*+,-./0123456789:;<=>?@ABCDEFGHIJKLMNOPQRSTUVWXYZ[\\]^_`abcdefghijklmnopqrstuvwxyz{|}~";
    match id {
        PAD => Ok("<pad>"),
        BOS => Ok("<bos>"),
        ANSWER_OPEN => Ok(ANSWER_OPEN_TEXT),
        ANSWER_CLOSE => Ok(ANSWER_CLOSE_TEXT),
        NEWLINE => Ok("\n"),
        id if (id as usize) < VOCAB_SIZE => {
            let i = (id - FIRST_PRINTABLE) as usize;
            Ok(&PRINTABLE[i..i + 1])
        }
        id => Err(Error::UnknownToken {
            id,
            size: VOCAB_SIZE,
        }),
    }
}

pub fn detokenize(tokens: &TokenSequence) -> Result<String> {
    let mut s = String::with_capacity(tokens.len());
    for &id in tokens.as_slice() {
        s.push_str(token_text(id)?);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_empty_sequence() {
        assert!(tokenize("").unwrap().is_empty());
    }

    #[test]
    fn answer_markers_are_single_specials() {
        assert_eq!(tokenize("<answer>").unwrap().0, vec![ANSWER_OPEN]);
        assert_eq!(tokenize("</answer>").unwrap().0, vec![ANSWER_CLOSE]);
        let t = tokenize("a<answer>b</answer>").unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.0[1], ANSWER_OPEN);
        assert_eq!(t.0[3], ANSWER_CLOSE);
    }

    #[test]
    fn partial_markers_stay_characters() {
        let t = tokenize("<answe").unwrap();
        assert_eq!(t.len(), 6);
        assert!(!t.0.contains(&ANSWER_OPEN));
    }

    #[test]
    fn unmapped_character_is_rejected() {
        assert!(matches!(tokenize("caf\u{e9}"), Err(Error::UnmappedChar('\u{e9}'))));
        assert!(matches!(tokenize("a\tb"), Err(Error::UnmappedChar('\t'))));
    }

    #[test]
    fn specials_are_distinct_and_in_range() {
        let v = Vocabulary::default();
        let ids = [v.pad, v.bos, v.answer_open, v.answer_close];
        for (i, a) in ids.iter().enumerate() {
            assert!((*a as usize) < v.size);
            for b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn unknown_id_rejected() {
        assert!(detokenize(&TokenSequence(vec![VOCAB_SIZE as u32])).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_on_template_alphabet(s in "[ -~\n]{0,200}") {
            let t = tokenize(&s).unwrap();
            prop_assert!(t.0.iter().all(|&id| (id as usize) < VOCAB_SIZE));
            prop_assert_eq!(detokenize(&t).unwrap(), s);
        }
    }
}
