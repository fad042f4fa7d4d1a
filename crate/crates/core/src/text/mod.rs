// SPDX-License-Identifier: Apache-2.0
//! Clinical-summary text: tokenizer, vocabulary and the structured summary schema.

mod summary;
mod vocab;

pub use summary::{validate_summary, Section, SectionBody, SummaryRecord};
pub use vocab::{split_words, tokenize, TokenSequence, Vocabulary, BOS, EOS, PAD, UNK};

use thiserror::Error;

pub const DEFAULT_MAX_LEN: usize = 128;
pub const DEFAULT_VOCAB_CAP: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TextError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary cap {0} leaves no room for the four special tokens")]
    CapTooSmall(usize),
    #[error("missing required sections: {}", .0.join(", "))]
    MissingRequiredSection(Vec<String>),
    #[error("malformed vocabulary file: {0}")]
    BadVocabulary(String),
    #[error("max_len must be at least 2, got {0}")]
    MaxLenTooSmall(usize),
}
