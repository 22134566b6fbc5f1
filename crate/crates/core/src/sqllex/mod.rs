//! SQL keyword lexing, sparse keyword-frequency vectors and exemplar ranking.

use std::path::PathBuf;

mod lexer;
mod rank;
mod structure;
mod vector;
mod vocab;

pub use lexer::{lex, LexWarning, LexWarningKind, Lexed, Token, TokenKind};
pub use rank::{rank_by_vector, rank_examples, Exemplar, Ranked};
pub use structure::{has_top_level_order_by, structural_features, Feature};
pub use vector::{cosine, tokenize_keywords, tokenize_keywords_with_warnings, vectorize, KeywordTokens, SqlVector};
pub use vocab::KeywordVocabulary;

#[derive(Debug, thiserror::Error)]
pub enum SqlLexError {
    #[error("vocabulary mismatch: `{left}` vs `{right}`")]
    VocabularyMismatch { left: String, right: String },
    #[error("vocabulary line {line}: {message}")]
    VocabularyFormat { line: usize, message: String },
    #[error("cannot read vocabulary {path}: {source}")]
    VocabularyIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
