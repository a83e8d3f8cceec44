//! Shared per-example plumbing: lexicons, parses, query templates, supervision.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use iurkit::datamodel::{build_input_sequence, load_dialogues, Dialogue, InputSequence, TokenizerMode};
use iurkit::querygen::{
    build_query, build_query_gold, heuristic_parse, read_conllu, DependencyParse, PronounLexicon, QueryOptions,
    QueryTemplate, VerbList,
};
use iurkit::scoring::{read_ctxvec, EncoderMode, ImportedVectors, Model};
use iurkit::supervision::{build_edit_matrix, substitution_intervals, EditMatrix, ExampleReport};

use crate::config::{QueryMode, RunConfig};

/// Everything needed to turn a dialogue into a model input.
pub struct Resources {
    lexicons: HashMap<TokenizerMode, PronounLexicon>,
    verbs: HashMap<TokenizerMode, VerbList>,
    parses: Option<HashMap<String, DependencyParse>>,
    pub options: QueryOptions,
}

const MODES: [TokenizerMode; 2] = [TokenizerMode::CharCjk, TokenizerMode::WhitespacePunct];

impl Resources {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let mut lexicons = HashMap::new();
        let mut verbs = HashMap::new();
        for mode in MODES {
            let lex = match &cfg.lexicon {
                Some(p) => PronounLexicon::from_file(p, mode)?,
                None => PronounLexicon::default_for(mode),
            };
            lexicons.insert(mode, lex);
            let v = match &cfg.verbs {
                Some(p) => VerbList::from_file(p, mode)?,
                None => VerbList::default_for(mode),
            };
            verbs.insert(mode, v);
        }
        let parses = match &cfg.parses {
            Some(p) => {
                let mut map = HashMap::new();
                for (i, s) in read_conllu(p)?.into_iter().enumerate() {
                    let id = s.id.unwrap_or_else(|| i.to_string());
                    if map.insert(id.clone(), s.parse).is_some() {
                        bail!("{}: duplicate sentence id {id:?}", p.display());
                    }
                }
                Some(map)
            }
            None => {
                log::warn!("no --parses given; ellipsis detection uses the verb-list heuristic");
                None
            }
        };
        Ok(Resources {
            lexicons,
            verbs,
            parses,
            options: QueryOptions {
                unify: cfg.unify_markers,
                labels: cfg.labels.clone(),
            },
        })
    }

    pub fn lexicon(&self, mode: TokenizerMode) -> &PronounLexicon {
        &self.lexicons[&mode]
    }

    /// Parse of the incomplete utterance: from the CoNLL-U file when it has
    /// this id, otherwise the heuristic.
    pub fn parse_for(&self, d: &Dialogue) -> Result<Option<DependencyParse>> {
        if let Some(p) = self.parses.as_ref().and_then(|m| m.get(&d.id)) {
            p.check_alignment(&d.incomplete)
                .with_context(|| format!("parse of example {:?}", d.id))?;
            return Ok(Some(p.clone()));
        }
        if d.incomplete.is_empty() {
            return Ok(None);
        }
        if self.parses.is_some() {
            log::debug!("example {:?}: no parse in file, using the heuristic", d.id);
        }
        Ok(Some(heuristic_parse(&d.incomplete, &self.verbs[&d.mode])?))
    }

    pub fn query(&self, d: &Dialogue, mode: QueryMode) -> Result<QueryTemplate> {
        let parse = self.parse_for(d)?;
        let q = match mode {
            QueryMode::Predicted => build_query(&d.incomplete, self.lexicon(d.mode), parse.as_ref(), &self.options),
            QueryMode::Gold => {
                let gold = d.rewritten.as_ref().with_context(|| format!("example {:?} has no gold rewrite", d.id))?;
                let subs = substitution_intervals(&d.incomplete, gold);
                build_query_gold(&d.incomplete, &subs, parse.as_ref(), &self.options)
            }
        };
        q.with_context(|| format!("query template of example {:?}", d.id))
    }

    pub fn supervise(&self, d: &Dialogue, mode: QueryMode) -> Result<Supervised> {
        let query = self.query(d, mode)?;
        let input = build_input_sequence(&query, d);
        let (matrix, report) =
            build_edit_matrix(d, &input).with_context(|| format!("supervision of example {:?}", d.id))?;
        Ok(Supervised {
            query,
            input,
            matrix,
            report,
        })
    }
}

pub struct Supervised {
    pub query: QueryTemplate,
    pub input: InputSequence,
    pub matrix: EditMatrix,
    pub report: ExampleReport,
}

/// Loads a dataset and rejects duplicate ids.
pub fn load_dataset(path: &Path, cfg: &RunConfig) -> Result<Vec<Dialogue>> {
    let dialogues =
        load_dialogues(path, cfg.format.into()).with_context(|| format!("cannot load {}", path.display()))?;
    let mut seen = HashSet::new();
    for d in &dialogues {
        if !seen.insert(d.id.as_str()) {
            bail!("{}: duplicate example id {:?}", path.display(), d.id);
        }
    }
    Ok(dialogues)
}

/// Imported vectors when the model needs them.
pub fn vectors_for(model_mode: EncoderMode, d_model: usize, cfg: &RunConfig) -> Result<Option<ImportedVectors>> {
    if model_mode != EncoderMode::ImportedVectors {
        return Ok(None);
    }
    let path = cfg
        .vectors
        .as_deref()
        .context("imported-vector models need --vectors <file.ctxvec>")?;
    let v = read_ctxvec(path)?;
    if v.d_model != d_model {
        bail!("{}: vectors have d_model {}, model expects {d_model}", path.display(), v.d_model);
    }
    Ok(Some(v))
}

pub fn load_vectors(model: &Model, cfg: &RunConfig) -> Result<Option<ImportedVectors>> {
    vectors_for(model.config.mode, model.config.d_model, cfg)
}

/// File-name-safe rendering of an example id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("a/b c"), "a_b_c");
        assert_eq!(file_stem("x-1.2"), "x-1.2");
    }

    #[test]
    fn table_one_query_without_parses() {
        let res = Resources::load(&RunConfig::default()).unwrap();
        let d = Dialogue::from_text(
            "0",
            TokenizerMode::CharCjk,
            &["你知道史密斯先生吗？", "我知道，他是个厨师。"],
            "不，他不关心。",
            Some("不，史密斯不关心。"),
        );
        let q = res.query(&d, QueryMode::Predicted).unwrap();
        assert_eq!(d.mode.join(&q.texts()), "不，[UNK]不关心。");
    }
}
