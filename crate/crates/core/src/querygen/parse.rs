//! Dependency parses consumed from CoNLL-U, plus a lexical fallback.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lexicon::VerbList;
use crate::datamodel::{Token, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseRow {
    pub form: String,
    /// 1-based head index; 0 marks the root.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyParse {
    rows: Vec<ParseRow>,
}

impl DependencyParse {
    /// Validates a single root, in-range heads and acyclicity.
    pub fn new(rows: Vec<ParseRow>) -> Result<Self> {
        let n = rows.len();
        let roots = rows.iter().filter(|r| r.head == 0).count();
        if roots != 1 {
            return Err(Error::Parse(format!("expected exactly one root, found {roots}")));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.head > n) {
            return Err(Error::Parse(format!(
                "token {} has head {} outside 0..={n}",
                i + 1,
                r.head
            )));
        }
        for start in 0..n {
            let mut cur = start + 1;
            let mut steps = 0;
            while cur != 0 {
                cur = rows[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(Error::Parse(format!("cycle through token {}", start + 1)));
                }
            }
        }
        Ok(DependencyParse { rows })
    }

    pub fn rows(&self) -> &[ParseRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Errors unless FORM matches the utterance token texts one to one.
    pub fn check_alignment(&self, utterance: &Utterance) -> Result<()> {
        if self.rows.len() != utterance.len() {
            return Err(Error::Alignment(format!(
                "parse has {} rows, utterance has {} tokens",
                self.rows.len(),
                utterance.len()
            )));
        }
        for (i, (row, tok)) in self.rows.iter().zip(&utterance.tokens).enumerate() {
            if row.form != tok.text {
                return Err(Error::Alignment(format!(
                    "token {}: parse form `{}` vs utterance `{}`",
                    i + 1,
                    row.form,
                    tok.text
                )));
            }
        }
        Ok(())
    }
}

/// A parsed CoNLL-U sentence with its `# sent_id` (or `# id`) comment, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConlluSentence {
    pub id: Option<String>,
    pub parse: DependencyParse,
}

/// Reads the ID, FORM, HEAD and DEPREL columns of a CoNLL-U document.
/// Multiword ranges (`1-2`) and empty nodes (`1.1`) are skipped.
pub fn parse_conllu(text: &str) -> Result<Vec<ConlluSentence>> {
    let mut out = Vec::new();
    let mut id = None;
    let mut rows = Vec::new();
    let mut finish = |id: &mut Option<String>, rows: &mut Vec<ParseRow>| -> Result<()> {
        if !rows.is_empty() {
            out.push(ConlluSentence {
                id: id.take(),
                parse: DependencyParse::new(std::mem::take(rows))?,
            });
        }
        *id = None;
        Ok(())
    };
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut id, &mut rows)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                let key = key.trim();
                if key == "sent_id" || key == "id" {
                    id = Some(value.trim().to_owned());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(Error::Parse(format!(
                "line {}: expected 10 tab-separated columns, found {}",
                line_no + 1,
                cols.len()
            )));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let index: usize = cols[0]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad ID `{}`", line_no + 1, cols[0])))?;
        if index != rows.len() + 1 {
            return Err(Error::Parse(format!(
                "line {}: token IDs must be consecutive from 1",
                line_no + 1
            )));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad HEAD `{}`", line_no + 1, cols[6])))?;
        rows.push(ParseRow {
            form: cols[1].to_owned(),
            head,
            deprel: cols[7].to_owned(),
        });
    }
    finish(&mut id, &mut rows)?;
    Ok(out)
}

pub fn read_conllu(path: impl AsRef<Path>) -> Result<Vec<ConlluSentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(&text)
}

/// Which DEPREL labels count as subject and object relations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationLabels {
    pub subject: BTreeSet<String>,
    pub object: BTreeSet<String>,
}

impl Default for RelationLabels {
    /// UD labels plus the LTP equivalents (SBV, VOB, IOB, FOB).
    fn default() -> Self {
        let set = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        RelationLabels {
            subject: set(&["nsubj", "nsubj:pass", "nsubjpass", "SBV"]),
            object: set(&["obj", "dobj", "iobj", "VOB", "IOB", "FOB"]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Structure {
    pub has_subject: bool,
    pub has_object: bool,
}

impl RelationLabels {
    pub fn classify(&self, parse: &DependencyParse) -> Structure {
        Structure {
            has_subject: parse.rows.iter().any(|r| self.subject.contains(&r.deprel)),
            has_object: parse.rows.iter().any(|r| self.object.contains(&r.deprel)),
        }
    }
}

fn is_content(tok: &Token) -> bool {
    tok.text.chars().any(char::is_alphanumeric)
}

/// Degraded-mode parse from a verb list: the first verb-list hit is the root,
/// the first content token before it is `nsubj`, the first content token after
/// it is `obj`, and everything else attaches to the root as `dep`. Without a
/// verb hit the first token is the root and no subject/object is produced.
pub fn heuristic_parse(utterance: &Utterance, verbs: &VerbList) -> Result<DependencyParse> {
    let toks = &utterance.tokens;
    if toks.is_empty() {
        return Err(Error::Parse("cannot parse an empty utterance".into()));
    }
    let verb = (0..toks.len()).find_map(|i| verbs.0.longest_match_at(toks, i).map(|l| (i, l)));
    let mut rows: Vec<ParseRow> = toks
        .iter()
        .map(|t| ParseRow {
            form: t.text.clone(),
            head: 1,
            deprel: "dep".into(),
        })
        .collect();
    match verb {
        Some((start, len)) => {
            let root = start + 1;
            for r in rows.iter_mut() {
                r.head = root;
            }
            rows[start].head = 0;
            rows[start].deprel = "root".into();
            if let Some(s) = (0..start).find(|&i| is_content(&toks[i])) {
                rows[s].deprel = "nsubj".into();
            }
            if let Some(o) = (start + len..toks.len()).find(|&i| is_content(&toks[i])) {
                rows[o].deprel = "obj".into();
            }
        }
        None => {
            rows[0].head = 0;
            rows[0].deprel = "root".into();
        }
    }
    DependencyParse::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Role, TokenizerMode};

    const SAMPLE: &str = "# sent_id = 7\n# text = Li Ming used to be\n\
1\tLi\tLi\tPROPN\t_\t_\t2\tcompound\t_\t_\n\
2\tMing\tMing\tPROPN\t_\t_\t5\tnsubj\t_\t_\n\
3\tused\tuse\tVERB\t_\t_\t5\tdep\t_\t_\n\
4\tto\tto\tPART\t_\t_\t5\tmark\t_\t_\n\
5\tbe\tbe\tAUX\t_\t_\t0\troot\t_\t_\n\n";

    #[test]
    fn reads_conllu_subset() {
        let sents = parse_conllu(SAMPLE).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].id.as_deref(), Some("7"));
        let p = &sents[0].parse;
        assert_eq!(p.len(), 5);
        assert_eq!(p.rows()[1].deprel, "nsubj");
        let s = RelationLabels::default().classify(p);
        assert!(s.has_subject && !s.has_object);
    }

    #[test]
    fn skips_multiword_and_empty_nodes() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n1\tdo\t_\t_\t_\t_\t0\troot\t_\t_\n2\tn't\t_\t_\t_\t_\t1\tadvmod\t_\t_\n1.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let sents = parse_conllu(text).unwrap();
        assert_eq!(sents[0].parse.len(), 2);
    }

    #[test]
    fn rejects_bad_trees() {
        let row = |h: usize| ParseRow {
            form: "x".into(),
            head: h,
            deprel: "dep".into(),
        };
        assert!(DependencyParse::new(vec![row(0), row(0)]).is_err());
        assert!(DependencyParse::new(vec![row(0), row(5)]).is_err());
        assert!(DependencyParse::new(vec![row(0), row(3), row(2)]).is_err());
        assert!(DependencyParse::new(vec![row(2), row(0), row(2)]).is_ok());
    }

    #[test]
    fn alignment_mismatch() {
        let p = parse_conllu(SAMPLE).unwrap().remove(0).parse;
        let ok = Utterance::new("Li Ming used to be", TokenizerMode::WhitespacePunct, 0, Role::Incomplete);
        p.check_alignment(&ok).unwrap();
        let bad = Utterance::new("Li Ming was", TokenizerMode::WhitespacePunct, 0, Role::Incomplete);
        assert!(matches!(p.check_alignment(&bad), Err(Error::Alignment(_))));
    }

    #[test]
    fn heuristic_sv_without_object() {
        let u = Utterance::new("李明曾经是", TokenizerMode::CharCjk, 0, Role::Incomplete);
        let p = heuristic_parse(&u, &VerbList::default_zh()).unwrap();
        let s = RelationLabels::default().classify(&p);
        assert!(s.has_subject && !s.has_object);
        assert_eq!(p.rows()[4].deprel, "root");
    }

    #[test]
    fn heuristic_without_verb() {
        let u = Utterance::new("the red one", TokenizerMode::WhitespacePunct, 0, Role::Incomplete);
        let p = heuristic_parse(&u, &VerbList::default_en()).unwrap();
        let s = RelationLabels::default().classify(&p);
        assert!(!s.has_subject && !s.has_object);
    }
}
