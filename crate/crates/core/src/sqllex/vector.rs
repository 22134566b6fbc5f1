use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::lexer::{lex, LexWarning, TokenKind};
use super::{KeywordVocabulary, SqlLexError};

/// Keyword occurrences of a statement, in source order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordTokens {
    pub keywords: Vec<String>,
    pub warnings: Vec<LexWarning>,
}

/// Returns the in-order vocabulary keywords of `sql`, uppercased.
///
/// Words inside string literals, quoted identifiers and comments are never
/// reported. A word directly after a `.` is a qualified column name and is
/// not a keyword.
pub fn tokenize_keywords(sql: &str, vocab: &KeywordVocabulary) -> Vec<String> {
    tokenize_keywords_with_warnings(sql, vocab).keywords
}

pub fn tokenize_keywords_with_warnings(sql: &str, vocab: &KeywordVocabulary) -> KeywordTokens {
    let lexed = lex(sql);
    let mut keywords = Vec::new();
    let mut prev_dot = false;
    for token in &lexed.tokens {
        if token.kind == TokenKind::Word && !prev_dot {
            if let Some(kw) = vocab.lookup(token.text(sql)) {
                keywords.push(kw.to_string());
            }
        }
        prev_dot = token.kind == TokenKind::Dot;
    }
    KeywordTokens {
        keywords,
        warnings: lexed.warnings,
    }
}

/// Sparse keyword-frequency vector. Absent keys are zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlVector {
    pub vocab: String,
    pub counts: BTreeMap<String, u32>,
}

impl SqlVector {
    pub fn empty(vocab: &KeywordVocabulary) -> Self {
        Self {
            vocab: vocab.version().to_string(),
            counts: BTreeMap::new(),
        }
    }

    pub fn get(&self, keyword: &str) -> u32 {
        self.counts.get(keyword).copied().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.counts.is_empty()
    }

    /// Squared Euclidean norm.
    pub fn norm_sq(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c) * u64::from(c)).sum()
    }

    pub fn dot(&self, other: &SqlVector) -> Result<u64, SqlLexError> {
        self.check_vocab(other)?;
        let (small, large) = if self.counts.len() <= other.counts.len() {
            (self, other)
        } else {
            (other, self)
        };
        Ok(small
            .counts
            .iter()
            .map(|(k, &c)| u64::from(c) * u64::from(large.get(k)))
            .sum())
    }

    /// Multiplies every count by `k`; `k = 0` yields the zero vector.
    pub fn scaled(&self, k: u32) -> SqlVector {
        SqlVector {
            vocab: self.vocab.clone(),
            counts: if k == 0 {
                BTreeMap::new()
            } else {
                self.counts.iter().map(|(kw, &c)| (kw.clone(), c * k)).collect()
            },
        }
    }

    fn check_vocab(&self, other: &SqlVector) -> Result<(), SqlLexError> {
        if self.vocab == other.vocab {
            Ok(())
        } else {
            Err(SqlLexError::VocabularyMismatch {
                left: self.vocab.clone(),
                right: other.vocab.clone(),
            })
        }
    }
}

pub fn vectorize(sql: &str, vocab: &KeywordVocabulary) -> SqlVector {
    let mut v = SqlVector::empty(vocab);
    for kw in tokenize_keywords(sql, vocab) {
        *v.counts.entry(kw).or_insert(0) += 1;
    }
    v
}

/// Cosine similarity of two count vectors, in `[0, 1]`. Zero when either
/// vector is all-zero.
pub fn cosine(a: &SqlVector, b: &SqlVector) -> Result<f64, SqlLexError> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm_sq(), b.norm_sq());
    if na == 0 || nb == 0 {
        return Ok(0.0);
    }
    let denom = ((u128::from(na) * u128::from(nb)) as f64).sqrt();
    Ok((dot as f64 / denom).min(1.0))
}

/// Exact similarity of one candidate against a fixed query, kept as the
/// pair `(dot, candidate norm²)` so candidates can be ordered without
/// floating point rounding. The query norm is shared and cancels out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ExactScore {
    dot: u64,
    norm_sq: u64,
}

impl ExactScore {
    pub(crate) fn new(query: &SqlVector, candidate: &SqlVector) -> Result<Self, SqlLexError> {
        let dot = if query.is_zero() { 0 } else { query.dot(candidate)? };
        Ok(Self {
            dot,
            norm_sq: candidate.norm_sq(),
        })
    }

    /// Compares dot₁/√n₁ with dot₂/√n₂; zero-norm candidates score 0.
    pub(crate) fn cmp_similarity(&self, other: &Self) -> Ordering {
        let lhs = u128::from(self.dot) * u128::from(self.dot) * u128::from(other.norm_sq.max(1));
        let rhs = u128::from(other.dot) * u128::from(other.dot) * u128::from(self.norm_sq.max(1));
        let (lhs, rhs) = match (self.norm_sq == 0, other.norm_sq == 0) {
            (true, true) => (0, 0),
            (true, false) => (0, rhs),
            (false, true) => (lhs, 0),
            (false, false) => (lhs, rhs),
        };
        lhs.cmp(&rhs)
    }
}
