//! Synthetic dialogue generators used as test oracles. Each generator builds
//! the gold rewrite first and derives the incomplete utterance from it, so
//! the expected output is known by construction.
#![allow(dead_code)]

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub id: String,
    pub lang: &'static str,
    pub history: Vec<String>,
    pub incomplete: String,
    pub rewritten: String,
}

impl Synthetic {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "id": self.id,
            "lang": self.lang,
            "history": self.history,
            "incomplete": self.incomplete,
            "rewritten": self.rewritten,
        })
    }
}

pub fn write_jsonl(path: &Path, items: &[Synthetic]) {
    let mut f = std::fs::File::create(path).unwrap();
    for s in items {
        writeln!(f, "{}", s.to_json()).unwrap();
    }
}

const FEMALE: &[&str] = &["alice", "carol", "erin", "grace"];
const MALE: &[&str] = &["bob", "dave", "frank", "henry"];
const ADJ: &[&str] = &["red", "old", "new", "small", "big", "green"];
const NOUN: &[&str] = &["car", "book", "house", "phone", "guitar", "bike", "lamp", "camera"];
const PAST: &[&str] = &["bought", "sold", "painted", "fixed", "found", "lost"];
const BASE: &[&str] = &["buy", "sell", "paint", "fix", "find", "lose"];
const FILLER: &[&str] = &["really", "what happened next", "tell me more", "no way", "go on"];

fn pick<'a, R: Rng>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).unwrap()
}

/// Small English dialogues covering pronoun substitution, end insertion,
/// start insertion and unchanged utterances.
pub fn templated<R: Rng>(rng: &mut R, id: usize) -> Synthetic {
    let female = rng.gen_bool(0.5);
    let name = pick(rng, if female { FEMALE } else { MALE });
    let pron = if female { "she" } else { "he" };
    let adj = pick(rng, ADJ);
    let noun = pick(rng, NOUN);
    let v = rng.gen_range(0..PAST.len());
    let np = format!("the {adj} {noun}");
    let history = vec![format!("{name} {} {np} yesterday", PAST[v]), pick(rng, FILLER).to_owned()];
    let (incomplete, rewritten) = match rng.gen_range(0..5) {
        0 => (format!("yes {pron} {} it", PAST[v]), format!("yes {name} {} {np}", PAST[v])),
        1 => ("i also like".to_owned(), format!("i also like {np}")),
        2 => ("wants the same thing too".to_owned(), format!("{name} wants the same thing too")),
        3 => (format!("why did {pron} {} it", BASE[v]), format!("why did {name} {} {np}", BASE[v])),
        _ => ("sounds good".to_owned(), "sounds good".to_owned()),
    };
    Synthetic {
        id: format!("t{id}"),
        lang: "en",
        history,
        incomplete,
        rewritten,
    }
}

const EN_WORDS: &[&str] = &[
    "apple", "river", "stone", "cloud", "paper", "window", "garden", "silver", "music", "table", "forest",
    "candle", "pencil", "ocean", "bridge", "market", "winter", "summer", "coffee", "ticket",
];
const EN_FRESH: &[&str] = &["so", "well", "okay", "sure", "then", "maybe", "please", "now"];
const EN_PRON: &[&str] = &["it", "they", "that", "this", "he", "she"];
const ZH_CHARS: &[&str] = &[
    "山", "水", "花", "书", "车", "门", "饭", "茶", "雨", "风", "鱼", "鸟", "灯", "钱", "路", "桥", "歌", "画",
];
const ZH_FRESH: &[&str] = &["好", "吧", "啊", "呢", "嗯", "哦"];
const ZH_PRON: &[&str] = &["他", "她", "它", "这个", "那个"];

/// Random dialogue: random history turns; the gold rewrite is fresh filler
/// around a span copied from one history turn; the incomplete utterance drops
/// that span or replaces it with a pronoun.
pub fn random<R: Rng>(rng: &mut R, id: usize) -> Synthetic {
    let zh = rng.gen_bool(0.5);
    let (words, fresh, prons, sep) = if zh {
        (ZH_CHARS, ZH_FRESH, ZH_PRON, "")
    } else {
        (EN_WORDS, EN_FRESH, EN_PRON, " ")
    };
    let n_turns = rng.gen_range(1..=3);
    let history: Vec<Vec<&str>> = (0..n_turns)
        .map(|_| (0..rng.gen_range(2..=8)).map(|_| pick(rng, words)).collect())
        .collect();
    let turn = &history[rng.gen_range(0..n_turns)];
    let start = rng.gen_range(0..turn.len());
    let end = rng.gen_range(start + 1..=turn.len().min(start + 4));
    let span = &turn[start..end];
    let prefix: Vec<&str> = (0..rng.gen_range(0..=3)).map(|_| pick(rng, fresh)).collect();
    let suffix: Vec<&str> = (0..rng.gen_range(0..=2)).map(|_| pick(rng, fresh)).collect();
    let pronominal = rng.gen_bool(0.5);
    let join = |parts: &[&str]| parts.join(sep);
    let rewritten: Vec<&str> = prefix.iter().chain(span).chain(&suffix).copied().collect();
    let incomplete: Vec<&str> = if pronominal {
        prefix
            .iter()
            .copied()
            .chain([pick(rng, prons)])
            .chain(suffix.iter().copied())
            .collect()
    } else {
        prefix.iter().chain(&suffix).copied().collect()
    };
    Synthetic {
        id: format!("r{id}"),
        lang: if zh { "zh" } else { "en" },
        history: history.iter().map(|t| join(t)).collect(),
        incomplete: join(&incomplete),
        rewritten: join(&rewritten),
    }
}
