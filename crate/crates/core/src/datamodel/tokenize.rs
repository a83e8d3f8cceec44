use serde::{Deserialize, Serialize};

use super::{Role, Token};

/// Token granularity. Edits are defined over whatever granularity is used,
/// so a corpus must be processed with one mode end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// One token per CJK scalar; contiguous Latin letters/digits grouped.
    CharCjk,
    /// Whitespace split with punctuation detached into single-char tokens.
    WhitespacePunct,
}

impl TokenizerMode {
    pub fn from_lang(lang: &str) -> Option<Self> {
        match lang {
            "zh" => Some(TokenizerMode::CharCjk),
            "en" => Some(TokenizerMode::WhitespacePunct),
            _ => None,
        }
    }

    /// Joins token texts so that re-tokenizing yields the same tokens.
    pub fn join<S: AsRef<str>>(self, texts: &[S]) -> String {
        match self {
            TokenizerMode::WhitespacePunct => texts
                .iter()
                .map(AsRef::as_ref)
                .collect::<Vec<_>>()
                .join(" "),
            TokenizerMode::CharCjk => {
                let mut out = String::new();
                let mut prev_word = false;
                for t in texts {
                    let t = t.as_ref();
                    let word = t.chars().next().is_some_and(is_word_char);
                    if word && prev_word {
                        out.push(' ');
                    }
                    out.push_str(t);
                    prev_word = t.chars().last().is_some_and(is_word_char);
                }
                out
            }
        }
    }
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // ext A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F) // ext B and beyond
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() && !is_cjk(c)
}

/// Splits `text` into token strings.
pub fn split(text: &str, mode: TokenizerMode) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if mode == TokenizerMode::CharCjk && is_cjk(c) {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        } else if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Tokenizes `text`. Tokens are tagged [`Role::Incomplete`] with positions
/// from 0; callers placing them elsewhere retag via [`super::Utterance`].
pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<Token> {
    split(text, mode)
        .into_iter()
        .enumerate()
        .map(|(position, text)| Token {
            text,
            position,
            role: Role::Incomplete,
        })
        .collect()
}
