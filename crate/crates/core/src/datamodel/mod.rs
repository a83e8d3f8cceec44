//! Dialogue types, tokenization, dataset ingestion and model-input assembly.
//!
//! The model input is laid out as
//!
//! ```text
//! [ query template | u_1 ... u_{N-1} | u_N | [END] ]
//!   query_range      history_range     incomplete_range  sentinel_index
//! ```
//!
//! Rows of an edit matrix index the first two blocks (the "context"), columns
//! index the incomplete utterance plus the sentinel.

mod io;
mod tokenize;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::querygen::QueryTemplate;

pub use io::{load_dialogues, parse_jsonl_record, parse_tsv_record, DataFormat};
pub use tokenize::{is_cjk, split, tokenize, TokenizerMode};

/// Reserved text of the sentinel token appended after the incomplete utterance.
pub const SENTINEL: &str = "[END]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Query,
    History,
    Incomplete,
    Sentinel,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Query, Role::History, Role::Incomplete, Role::Sentinel];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub position: usize,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub tokens: Vec<Token>,
    pub speaker_turn: usize,
}

impl Utterance {
    pub fn new(text: &str, mode: TokenizerMode, speaker_turn: usize, role: Role) -> Self {
        Self::from_texts(split(text, mode), speaker_turn, role)
    }

    pub fn from_texts<I, S>(texts: I, speaker_turn: usize, role: Role) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = texts
            .into_iter()
            .enumerate()
            .map(|(position, text)| Token {
                text: text.into(),
                position,
                role,
            })
            .collect();
        Utterance {
            tokens,
            speaker_turn,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn render(&self, mode: TokenizerMode) -> String {
        mode.join(&self.texts())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub mode: TokenizerMode,
    pub history: Vec<Utterance>,
    pub incomplete: Utterance,
    pub rewritten: Option<Utterance>,
}

impl Dialogue {
    /// Builds a dialogue from raw strings, tokenizing each turn with `mode`.
    pub fn from_text<S: AsRef<str>>(
        id: impl Into<String>,
        mode: TokenizerMode,
        history: &[S],
        incomplete: &str,
        rewritten: Option<&str>,
    ) -> Self {
        let history: Vec<Utterance> = history
            .iter()
            .enumerate()
            .map(|(turn, text)| Utterance::new(text.as_ref(), mode, turn, Role::History))
            .collect();
        let turn = history.len();
        Dialogue {
            id: id.into(),
            mode,
            incomplete: Utterance::new(incomplete, mode, turn, Role::Incomplete),
            rewritten: rewritten.map(|r| Utterance::new(r, mode, turn, Role::Incomplete)),
            history,
        }
    }
}

/// The concatenated model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSequence {
    pub tokens: Vec<Token>,
    pub query_range: Range<usize>,
    pub history_range: Range<usize>,
    /// One interval per history utterance, in turn order.
    pub history_turns: Vec<Range<usize>>,
    pub incomplete_range: Range<usize>,
    pub sentinel_index: usize,
}

impl InputSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of edit-matrix rows: query plus history.
    pub fn n_rows(&self) -> usize {
        self.history_range.end
    }

    /// Number of edit-matrix columns: incomplete tokens plus the sentinel.
    pub fn n_cols(&self) -> usize {
        self.incomplete_range.len() + 1
    }

    /// Absolute position of edit-matrix column `col`.
    pub fn col_position(&self, col: usize) -> usize {
        self.incomplete_range.start + col
    }

    pub fn text(&self, index: usize) -> &str {
        &self.tokens[index].text
    }
}

/// Concatenates query ⊕ history ⊕ incomplete ⊕ `[END]`.
pub fn build_input_sequence(query: &QueryTemplate, dialogue: &Dialogue) -> InputSequence {
    let mut texts: Vec<(&str, Role)> = Vec::new();
    texts.extend(query.tokens.iter().map(|t| (t.text.as_str(), Role::Query)));
    let query_range = 0..texts.len();

    let mut history_turns = Vec::with_capacity(dialogue.history.len());
    for utt in &dialogue.history {
        let start = texts.len();
        texts.extend(utt.tokens.iter().map(|t| (t.text.as_str(), Role::History)));
        history_turns.push(start..texts.len());
    }
    let history_range = query_range.end..texts.len();

    texts.extend(
        dialogue
            .incomplete
            .tokens
            .iter()
            .map(|t| (t.text.as_str(), Role::Incomplete)),
    );
    let incomplete_range = history_range.end..texts.len();
    texts.push((SENTINEL, Role::Sentinel));

    let tokens = texts
        .into_iter()
        .enumerate()
        .map(|(position, (text, role))| Token {
            text: text.to_owned(),
            position,
            role,
        })
        .collect::<Vec<_>>();
    let sentinel_index = tokens.len() - 1;
    InputSequence {
        tokens,
        query_range,
        history_range,
        history_turns,
        incomplete_range,
        sentinel_index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querygen::{build_query, PronounLexicon, QueryOptions};

    fn template_of(texts: &[&str]) -> QueryTemplate {
        QueryTemplate::plain(Utterance::from_texts(texts.iter().copied(), 0, Role::Query))
    }

    #[test]
    fn length_bookkeeping() {
        let d = Dialogue {
            id: "0".into(),
            mode: TokenizerMode::WhitespacePunct,
            history: vec![
                Utterance::from_texts(["a", "b", "c"], 0, Role::History),
                Utterance::from_texts(["d", "e", "f", "g"], 1, Role::History),
            ],
            incomplete: Utterance::from_texts(["w", "x", "y", "z"], 2, Role::Incomplete),
            rewritten: None,
        };
        let q = template_of(&["q1", "q2", "q3", "q4", "q5"]);
        let seq = build_input_sequence(&q, &d);
        assert_eq!(seq.len(), 17);
        assert_eq!(seq.sentinel_index, 16);
        assert_eq!(seq.text(16), SENTINEL);
        assert_eq!(seq.query_range, 0..5);
        assert_eq!(seq.history_range, 5..12);
        assert_eq!(seq.history_turns, vec![5..8, 8..12]);
        assert_eq!(seq.incomplete_range, 12..16);
        assert_eq!(
            seq.query_range.len() + seq.history_range.len() + seq.incomplete_range.len() + 1,
            seq.len()
        );
        assert!(seq.tokens.iter().enumerate().all(|(i, t)| t.position == i));
    }

    #[test]
    fn empty_history_gives_empty_interval() {
        let d = Dialogue::from_text::<&str>("0", TokenizerMode::WhitespacePunct, &[], "x y", None);
        let q = template_of(&["x", "y", "[UNK]"]);
        let seq = build_input_sequence(&q, &d);
        assert_eq!(seq.query_range, 0..3);
        assert_eq!(seq.history_range, 3..3);
        assert_eq!(seq.incomplete_range, 3..5);
        assert_eq!(seq.n_rows(), 3);
        assert_eq!(seq.n_cols(), 3);
    }

    #[test]
    fn table_one_incomplete_range() {
        let d = Dialogue::from_text(
            "t1",
            TokenizerMode::CharCjk,
            &["史密斯需要在附近找一家昂贵的餐馆。", "史密斯关心菜肴的类型吗？"],
            "不，他不关心。",
            Some("不，史密斯不关心菜肴的类型。"),
        );
        let q = build_query(
            &d.incomplete,
            &PronounLexicon::default_zh(),
            None,
            &QueryOptions::unified(true),
        )
        .unwrap();
        let seq = build_input_sequence(&q, &d);
        assert_eq!(seq.incomplete_range.len(), 7);
        let inc: Vec<&str> = seq.incomplete_range.clone().map(|i| seq.text(i)).collect();
        assert_eq!(inc, ["不", "，", "他", "不", "关", "心", "。"]);
        assert_eq!(seq.history_turns.len(), 2);
        assert_eq!(seq.history_turns[0].len(), 17);
        assert_eq!(seq.history_turns[1].len(), 12);
    }
}
