use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textproc;

pub type TokenId = u32;

pub const BLANK: &str = "<blk>";
pub const UNK: &str = "<unk>";
pub const BLANK_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;

/// Token inventory shared by posteriors, graphs and language models.
///
/// Index 0 is always the CTC blank and index 1 the unknown token; lookups of
/// strings outside the inventory resolve to [`UNK_ID`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != BLANK || tokens[1] != UNK {
            return Err(Error::Format(format!(
                "vocabulary must start with {BLANK} and {UNK}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.contains('\n') {
                return Err(Error::Format(format!("invalid token at index {i}")));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Builds a vocabulary from token occurrences: specials first, then by
    /// descending frequency, ties broken lexicographically.
    pub fn from_counts<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tok in tokens {
            if tok == BLANK || tok == UNK {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut all = vec![BLANK.to_string(), UNK.to_string()];
        all.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Self::from_tokens(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Reads plain-text corpus files, tokenizes them and builds a vocabulary over
/// the speakable tokens (punctuation is never emitted acoustically).
pub fn build_vocab<P: AsRef<Path>>(corpus_files: &[P]) -> Result<Vocab> {
    let mut all = Vec::new();
    for p in corpus_files {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        all.extend(
            textproc::tokenize(&text)
                .into_iter()
                .filter(|t| textproc::is_speakable(t)),
        );
    }
    Vocab::from_counts(all.iter().map(String::as_str))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &Vocab) -> Vec<&str> {
        v.tokens().iter().map(String::as_str).collect()
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = Vocab::from_counts(["B", "A"]).unwrap();
        assert_eq!(toks(&v), [BLANK, UNK, "A", "B"]);
    }

    #[test]
    fn frequency_order() {
        let v = Vocab::from_counts(["A", "B", "B", "B"]).unwrap();
        assert_eq!(toks(&v), [BLANK, UNK, "B", "A"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            Vocab::from_counts(std::iter::empty()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn lookup_falls_back_to_unk() {
        let v = Vocab::from_counts(["A"]).unwrap();
        assert_eq!(v.lookup("zzz"), UNK_ID);
        assert_eq!(v.lookup(BLANK), BLANK_ID);
    }

    #[test]
    fn duplicates_rejected() {
        let t = vec![BLANK.into(), UNK.into(), "a".into(), "a".into()];
        assert!(Vocab::from_tokens(t).is_err());
    }

    #[test]
    fn build_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "B A").unwrap();
        let v = build_vocab(&[&p]).unwrap();
        assert_eq!(toks(&v), [BLANK, UNK, "A", "B"]);
        std::fs::write(&p, "我我你。").unwrap();
        let v = build_vocab(&[&p]).unwrap();
        assert_eq!(toks(&v), [BLANK, UNK, "我", "你"]);
        let out = dir.path().join("v.txt");
        v.write(&out).unwrap();
        assert_eq!(Vocab::read(&out).unwrap(), v);
    }
}
