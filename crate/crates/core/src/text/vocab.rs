// SPDX-License-Identifier: Apache-2.0
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TextError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Lowercases and splits on whitespace; every non-alphanumeric,
/// non-whitespace character becomes a token of its own.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = TextError;

    fn try_from(tokens: Vec<String>) -> Result<Self, TextError> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Frequency-ranked vocabulary. Ties are broken lexicographically, tokens
    /// seen fewer than `min_freq` times are dropped, and the total size
    /// (specials included) never exceeds `cap`.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_freq: usize, cap: usize) -> Result<Self, TextError> {
        if corpus.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        if cap < SPECIALS.len() {
            return Err(TextError::CapTooSmall(cap));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for w in split_words(doc.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq.max(1) && !SPECIALS.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap - SPECIALS.len());

        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Wraps an explicit token list, which must start with the four specials.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TextError> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS {
            return Err(TextError::BadVocabulary(
                "the first four tokens must be <pad> <unk> <bos> <eos>".into(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(TextError::BadVocabulary(format!("invalid token at line {}", i + 1)));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(TextError::BadVocabulary(format!("duplicate token `{t}`")));
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

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// One token per line; the line index is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self, TextError> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Fixed-length id sequence plus its real-token mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m).count()
    }

    /// Tokens of the real positions between BOS and EOS.
    pub fn content_tokens<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.ids
            .iter()
            .zip(&self.attention_mask)
            .filter(|&(&id, &m)| m && id != BOS && id != EOS)
            .map(|(&id, _)| vocab.token(id).unwrap_or("<unk>"))
            .collect()
    }
}

/// `BOS words... EOS PAD...`, truncated so that EOS is always the last real token.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence, TextError> {
    if max_len < 2 {
        return Err(TextError::MaxLenTooSmall(max_len));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(
        split_words(text)
            .iter()
            .take(max_len - 2)
            .map(|w| vocab.id(w).unwrap_or(UNK)),
    );
    ids.push(EOS);
    let real = ids.len();
    ids.resize(max_len, PAD);
    let attention_mask = (0..max_len).map(|i| i < real).collect();
    Ok(TokenSequence { ids, attention_mask })
}
