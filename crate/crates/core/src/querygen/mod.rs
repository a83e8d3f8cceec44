//! Coreference/ellipsis query templates.
//!
//! A template is the incomplete utterance with marker tokens: pronoun matches
//! are replaced by `[COREF]`, and when no pronoun matches, `[ELLIP]` is placed
//! where the dependency structure suggests an omitted subject or object. With
//! `unify` both markers render as `[UNK]`.
//!
//! Ellipsis placement:
//!
//! | subject | object | markers          |
//! |---------|--------|------------------|
//! | yes     | no     | end              |
//! | no      | yes    | beginning        |
//! | no      | no     | beginning + end  |
//! | yes     | yes    | beginning + end  |

mod lexicon;
mod parse;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::datamodel::{Role, Token, Utterance};
use crate::error::{Error, Result};

pub use lexicon::{PhraseSet, PronounLexicon, VerbList};
pub use parse::{
    heuristic_parse, parse_conllu, read_conllu, ConlluSentence, DependencyParse, ParseRow,
    RelationLabels, Structure,
};

pub const COREF: &str = "[COREF]";
pub const ELLIP: &str = "[ELLIP]";
pub const UNIFIED: &str = "[UNK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    Coref,
    Ellip,
}

impl MarkerKind {
    pub fn text(self, unified: bool) -> &'static str {
        match (unified, self) {
            (true, _) => UNIFIED,
            (false, MarkerKind::Coref) => COREF,
            (false, MarkerKind::Ellip) => ELLIP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    /// Index of the marker token in the template.
    pub position: usize,
    pub kind: MarkerKind,
    /// Incomplete-utterance tokens the marker replaced (empty for ellipsis).
    pub replaced: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindSummary {
    CorefOnly,
    EllipsisOnly,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub tokens: Vec<Token>,
    pub markers: Vec<Marker>,
    pub kind_summary: KindSummary,
    pub unified: bool,
}

impl QueryTemplate {
    /// Template without markers: a copy of `utterance`.
    pub fn plain(utterance: Utterance) -> Self {
        QueryTemplate {
            tokens: retag(utterance.tokens.into_iter().map(|t| t.text)),
            markers: Vec::new(),
            kind_summary: KindSummary::None,
            unified: false,
        }
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Renders every marker as `[UNK]`; marker kinds are kept.
    pub fn unify(mut self) -> Self {
        for m in &self.markers {
            self.tokens[m.position].text = UNIFIED.to_owned();
        }
        self.unified = true;
        self
    }

    /// Reconstructs the source utterance texts from the template.
    pub fn restore(&self, source: &Utterance) -> Vec<String> {
        let mut out = Vec::with_capacity(source.len());
        let mut markers = self.markers.iter().peekable();
        for (i, tok) in self.tokens.iter().enumerate() {
            match markers.peek() {
                Some(m) if m.position == i => {
                    out.extend(source.tokens[m.replaced.clone()].iter().map(|t| t.text.clone()));
                    markers.next();
                }
                _ => out.push(tok.text.clone()),
            }
        }
        out
    }
}

fn retag(texts: impl IntoIterator<Item = String>) -> Vec<Token> {
    texts
        .into_iter()
        .enumerate()
        .map(|(position, text)| Token {
            text,
            position,
            role: Role::Query,
        })
        .collect()
}

/// Replaces each interval in `spans` (sorted, disjoint) by one `[COREF]`.
fn coref_template(incomplete: &Utterance, spans: &[Range<usize>]) -> QueryTemplate {
    let mut texts = Vec::new();
    let mut markers = Vec::new();
    let mut i = 0;
    for span in spans {
        texts.extend(incomplete.tokens[i..span.start].iter().map(|t| t.text.clone()));
        markers.push(Marker {
            position: texts.len(),
            kind: MarkerKind::Coref,
            replaced: span.clone(),
        });
        texts.push(COREF.to_owned());
        i = span.end;
    }
    texts.extend(incomplete.tokens[i..].iter().map(|t| t.text.clone()));
    QueryTemplate {
        tokens: retag(texts),
        markers,
        kind_summary: KindSummary::CorefOnly,
        unified: false,
    }
}

/// Replaces every lexicon match by `[COREF]`; `None` when nothing matches.
pub fn match_coref(incomplete: &Utterance, lexicon: &PronounLexicon) -> Option<QueryTemplate> {
    let spans = lexicon.phrases().find_all(&incomplete.tokens);
    if spans.is_empty() {
        None
    } else {
        Some(coref_template(incomplete, &spans))
    }
}

pub fn detect_ellipsis(
    incomplete: &Utterance,
    parse: &DependencyParse,
    labels: &RelationLabels,
) -> Result<QueryTemplate> {
    parse.check_alignment(incomplete)?;
    let s = labels.classify(parse);
    let (begin, end) = match (s.has_subject, s.has_object) {
        (true, false) => (false, true),
        (false, true) => (true, false),
        _ => (true, true),
    };
    let n = incomplete.len();
    let mut texts = Vec::with_capacity(n + 2);
    let mut markers = Vec::new();
    let marker = |position| Marker {
        position,
        kind: MarkerKind::Ellip,
        replaced: 0..0,
    };
    if begin {
        markers.push(marker(0));
        texts.push(ELLIP.to_owned());
    }
    texts.extend(incomplete.tokens.iter().map(|t| t.text.clone()));
    if end {
        markers.push(Marker {
            replaced: n..n,
            ..marker(texts.len())
        });
        texts.push(ELLIP.to_owned());
    }
    Ok(QueryTemplate {
        tokens: retag(texts),
        markers,
        kind_summary: KindSummary::EllipsisOnly,
        unified: false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QueryOptions {
    pub unify: bool,
    pub labels: RelationLabels,
}

impl QueryOptions {
    pub fn unified(unify: bool) -> Self {
        QueryOptions {
            unify,
            ..Default::default()
        }
    }
}

fn finish(template: QueryTemplate, opts: &QueryOptions) -> QueryTemplate {
    if opts.unify {
        template.unify()
    } else {
        template
    }
}

/// Inference-time template: coreference markers from the lexicon, otherwise
/// ellipsis markers from `parse`.
pub fn build_query(
    incomplete: &Utterance,
    lexicon: &PronounLexicon,
    parse: Option<&DependencyParse>,
    opts: &QueryOptions,
) -> Result<QueryTemplate> {
    if let Some(t) = match_coref(incomplete, lexicon) {
        return Ok(finish(t, opts));
    }
    ellipsis_or_plain(incomplete, parse, opts)
}

/// Training-time template: coreference markers at the gold substitution
/// intervals, otherwise ellipsis markers from `parse`.
pub fn build_query_gold(
    incomplete: &Utterance,
    gold_substitutions: &[Range<usize>],
    parse: Option<&DependencyParse>,
    opts: &QueryOptions,
) -> Result<QueryTemplate> {
    if !gold_substitutions.is_empty() {
        let mut spans = gold_substitutions.to_vec();
        spans.sort_by_key(|r| (r.start, r.end));
        if spans.windows(2).any(|w| w[0].end > w[1].start)
            || spans.iter().any(|r| r.is_empty() || r.end > incomplete.len())
        {
            return Err(Error::Config(
                "gold substitution intervals must be non-empty, disjoint and in range".into(),
            ));
        }
        return Ok(finish(coref_template(incomplete, &spans), opts));
    }
    ellipsis_or_plain(incomplete, parse, opts)
}

fn ellipsis_or_plain(
    incomplete: &Utterance,
    parse: Option<&DependencyParse>,
    opts: &QueryOptions,
) -> Result<QueryTemplate> {
    if incomplete.is_empty() {
        return Ok(QueryTemplate::plain(incomplete.clone()));
    }
    let parse = parse.ok_or(Error::ParseRequired)?;
    detect_ellipsis(incomplete, parse, &opts.labels).map(|t| finish(t, opts))
}
