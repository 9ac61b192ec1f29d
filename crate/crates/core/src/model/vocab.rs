use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<bos>"];

/// Lowercased word tokens: alphanumeric runs stay together, every other
/// non-whitespace character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from a full id→token list whose first three entries are the
    /// reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..3] != RESERVED.map(String::from) {
            return Err(ModelError::InvalidVocab(
                "expected reserved tokens followed by at least one word".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(ModelError::InvalidVocab(format!("duplicate token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = ModelError;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Tokens seen at least `min_count` times, ordered by (count desc, token asc),
/// after the three reserved ids.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Vocab> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for line in corpus {
        for tok in tokenize(line.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
        .collect();
    if kept.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t))
        .collect();
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize("Is it OK? and 1+1=2"),
            ["is", "it", "ok", "?", "and", "1", "+", "1", "=", "2"]
        );
        assert_eq!(
            tokenize("not_equivalent\nAnswer:"),
            ["not", "_", "equivalent", "answer", ":"]
        );
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn count_then_lexical_order() {
        let v = build_vocab(&["a b", "a"], 1).unwrap();
        assert_eq!(&v.tokens()[3..], ["a", "b"]);
        let v = build_vocab(&["z y", "y x", "x"], 1).unwrap();
        assert_eq!(&v.tokens()[3..], ["x", "y", "z"]);
    }

    #[test]
    fn unseen_and_rare_tokens_are_unk() {
        let v = build_vocab(&["a a b"], 2).unwrap();
        assert_eq!(v.encode("a b c"), vec![3, UNK, UNK]);
    }

    #[test]
    fn size_matches_counting_oracle() {
        let corpus = ["the cat sat", "the dog sat down", "a cat, a dog!", "the end"];
        for min in 1..=3 {
            let mut counts = BTreeMap::new();
            for l in corpus {
                for t in l
                    .to_lowercase()
                    .replace(',', " , ")
                    .replace('!', " ! ")
                    .split_whitespace()
                {
                    *counts.entry(t.to_string()).or_insert(0) += 1;
                }
            }
            let expected = counts.values().filter(|&&c| c >= min).count();
            let v = build_vocab(&corpus, min).unwrap();
            assert_eq!(v.len(), expected + 3);
            let distinct: BTreeSet<_> = v.tokens().iter().collect();
            assert_eq!(distinct.len(), v.len());
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(build_vocab::<&str>(&[], 1), Err(ModelError::EmptyCorpus)));
        assert!(matches!(build_vocab(&["a"], 5), Err(ModelError::EmptyCorpus)));
    }

    #[test]
    fn serde_round_trip() {
        let v = build_vocab(&["hello world hello"], 1).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("world"), 4);
        assert!(serde_json::from_str::<Vocab>(r#"["a","b"]"#).is_err());
    }
}
