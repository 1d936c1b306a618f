use std::collections::HashMap;
use std::path::Path;

use crate::error::{contract, CoreError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SENT: usize = 4;
pub const SPECIALS: [&str; 5] = ["[PAD]", "[BOS]", "[EOS]", "[UNK]", "[SENT]"];

/// Lowercases, splits on whitespace, trims surrounding punctuation and
/// drops tokens without a letter.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| w.chars().any(char::is_alphabetic))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Tokens seen at least `min_freq` times, by descending count then
/// alphabetically, after the five specials.
pub fn build_vocab<'a, I, S>(corpus: I, min_freq: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    if min_freq == 0 {
        return Err(contract("build_vocab: min_freq must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpus {
        for tok in sentence {
            *counts.entry(tok.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && !SPECIALS.contains(&t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::from_tokens(SPECIALS.iter().copied().chain(kept.into_iter().map(|(t, _)| t)))
}

impl Vocabulary {
    /// `tokens` must start with the specials in order.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(contract("vocabulary must begin with [PAD] [BOS] [EOS] [UNK] [SENT]"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(contract(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Space-joined words, stopping at the first [EOS].
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_tokens(text.lines())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_string).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The heart is Normal."), ["the", "heart", "is", "normal"]);
        assert!(tokenize("123 ***").is_empty());
        assert_eq!(tokenize("no pleural effusion"), ["no", "pleural", "effusion"]);
        assert_eq!(tokenize("  (left-sided),  x2 "), ["left-sided", "x2"]);
    }

    #[test]
    fn vocab_examples() {
        let corpus = [toks("b a a c"), toks("a b d")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 1).unwrap();
        assert_eq!(v.len(), 9);
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.token(i), *s);
        }
        assert_eq!(v.token(5), "a");
        assert_eq!(v.token(6), "b");
        assert_eq!(v.token(7), "c");
        assert_eq!(v.token(8), "d");

        let v = build_vocab(corpus.iter().map(Vec::as_slice), 2).unwrap();
        assert_eq!(v.id("c"), UNK);
        assert_eq!(v.id("b"), 6);
        assert!(build_vocab(corpus.iter().map(Vec::as_slice), 0).is_err());
    }

    #[test]
    fn detokenize_stops_at_eos() {
        let corpus = [toks("x y")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 1).unwrap();
        let ids = v.encode(&["x", "y"]);
        assert_eq!(v.detokenize(&[ids[0], ids[1], EOS, ids[0]]), "x y");
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = [toks("p q q")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 1).unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
        std::fs::write(&path, "a\nb\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }
}
