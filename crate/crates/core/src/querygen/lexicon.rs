use std::collections::BTreeSet;
use std::path::Path;

use crate::datamodel::{split, Token, TokenizerMode};
use crate::error::{Error, Result};

/// A set of surface phrases matched as exact token subsequences,
/// longest phrase first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseSet {
    mode: TokenizerMode,
    surfaces: BTreeSet<String>,
    /// Tokenized phrases, sorted by descending token length then lexically.
    phrases: Vec<Vec<String>>,
}

impl PhraseSet {
    pub fn new<I, S>(mode: TokenizerMode, surfaces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = PhraseSet {
            mode,
            surfaces: BTreeSet::new(),
            phrases: Vec::new(),
        };
        set.extend(surfaces);
        if set.phrases.is_empty() {
            return Err(Error::Lexicon("lexicon has no entries".into()));
        }
        Ok(set)
    }

    /// Reads one surface form per line; blank lines and `#` comments are skipped.
    pub fn from_file(path: impl AsRef<Path>, mode: TokenizerMode) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, mode)
    }

    pub fn parse(text: &str, mode: TokenizerMode) -> Result<Self> {
        let lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(mode, lines)
    }

    pub fn extend<I, S>(&mut self, surfaces: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for s in surfaces {
            let s = s.as_ref().trim();
            let toks = split(s, self.mode);
            if toks.is_empty() || !self.surfaces.insert(s.to_owned()) {
                continue;
            }
            if !self.phrases.contains(&toks) {
                self.phrases.push(toks);
            }
        }
        self.phrases
            .sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.surfaces.contains(surface)
    }

    /// Length (in tokens) of the longest phrase starting at `start`.
    pub fn longest_match_at(&self, tokens: &[Token], start: usize) -> Option<usize> {
        let rest = &tokens[start..];
        self.phrases
            .iter()
            .find(|p| {
                p.len() <= rest.len() && p.iter().zip(rest).all(|(a, b)| *a == b.text)
            })
            .map(Vec::len)
    }

    /// Non-overlapping matches, scanned left to right, longest phrase wins at
    /// each start position.
    pub fn find_all(&self, tokens: &[Token]) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            match self.longest_match_at(tokens, i) {
                Some(len) => {
                    out.push(i..i + len);
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Pronouns and referring noun phrases replaced by coreference markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PronounLexicon(pub PhraseSet);

const ZH_PRONOUNS: &[&str] = &[
    "他", "她", "它", "他们", "她们", "它们", "这", "那", "这样", "这个", "那个", "这些", "那些",
];

const EN_PRONOUNS: &[&str] = &[
    "he", "she", "it", "they", "him", "her", "them", "this", "that", "these", "those", "one",
];

fn with_capitalized(words: &[&str]) -> Vec<String> {
    words
        .iter()
        .flat_map(|w| {
            let mut c = w.chars();
            let cap = c
                .next()
                .map(|f| f.to_uppercase().chain(c).collect::<String>())
                .unwrap_or_default();
            [w.to_string(), cap]
        })
        .collect()
}

impl PronounLexicon {
    pub fn default_zh() -> Self {
        PronounLexicon(PhraseSet::new(TokenizerMode::CharCjk, ZH_PRONOUNS).expect("non-empty"))
    }

    /// English pronouns, lower-case and sentence-initial capitalized.
    pub fn default_en() -> Self {
        PronounLexicon(
            PhraseSet::new(TokenizerMode::WhitespacePunct, with_capitalized(EN_PRONOUNS))
                .expect("non-empty"),
        )
    }

    pub fn default_for(mode: TokenizerMode) -> Self {
        match mode {
            TokenizerMode::CharCjk => Self::default_zh(),
            TokenizerMode::WhitespacePunct => Self::default_en(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>, mode: TokenizerMode) -> Result<Self> {
        PhraseSet::from_file(path, mode).map(PronounLexicon)
    }

    /// Adds referring expressions harvested from training data.
    pub fn augment<I, S>(&mut self, surfaces: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.0.extend(surfaces)
    }

    pub fn phrases(&self) -> &PhraseSet {
        &self.0
    }
}

/// Copulas and verbs consulted by the heuristic SVO parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbList(pub PhraseSet);

const ZH_VERBS: &[&str] = &[
    "是", "有", "要", "想", "找", "找到", "考", "关心", "喜欢", "去", "来", "说", "做", "看",
    "知道", "需要", "买", "吃", "用", "叫", "在",
];

const EN_VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "am", "has", "have", "had", "do", "does", "did", "want",
    "wants", "need", "needs", "like", "likes", "care", "cares", "find", "finds", "go", "goes",
    "see", "sees", "know", "knows", "get", "gets", "make", "makes", "take", "takes", "say",
    "says", "buy", "buys", "use", "uses", "love", "loves",
];

impl VerbList {
    pub fn default_zh() -> Self {
        VerbList(PhraseSet::new(TokenizerMode::CharCjk, ZH_VERBS).expect("non-empty"))
    }

    pub fn default_en() -> Self {
        VerbList(
            PhraseSet::new(TokenizerMode::WhitespacePunct, with_capitalized(EN_VERBS))
                .expect("non-empty"),
        )
    }

    pub fn default_for(mode: TokenizerMode) -> Self {
        match mode {
            TokenizerMode::CharCjk => Self::default_zh(),
            TokenizerMode::WhitespacePunct => Self::default_en(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>, mode: TokenizerMode) -> Result<Self> {
        PhraseSet::from_file(path, mode).map(VerbList)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::tokenize;

    #[test]
    fn longest_first() {
        let lex = PronounLexicon::default_zh();
        let toks = tokenize("他们说这个", TokenizerMode::CharCjk);
        assert_eq!(lex.phrases().find_all(&toks), vec![0..2, 3..5]);
    }

    #[test]
    fn file_parsing_skips_comments() {
        let set = PhraseSet::parse("# pronouns\nhe\n\n  she \n#it\n", TokenizerMode::WhitespacePunct)
            .unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.contains("she"));
        assert!(!set.contains("it"));
    }

    #[test]
    fn empty_lexicon_is_rejected() {
        assert!(PhraseSet::parse("# nothing\n\n", TokenizerMode::CharCjk).is_err());
    }

    #[test]
    fn english_defaults_cover_sentence_initial_forms() {
        let lex = PronounLexicon::default_en();
        assert!(lex.phrases().contains("He"));
        assert!(lex.phrases().contains("they"));
    }
}
