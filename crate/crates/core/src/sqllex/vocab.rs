use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::SqlLexError;

const DEFAULT_VOCABULARY: &str = include_str!("../../data/sql_keywords.txt");

/// Ordered set of uppercase keywords; positions define vector dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordVocabulary {
    version: String,
    keywords: Vec<String>,
    index: HashMap<String, usize>,
}

impl KeywordVocabulary {
    /// The bundled SQLite keyword list plus aggregate function names.
    pub fn sqlite_default() -> Self {
        Self::parse(DEFAULT_VOCABULARY).expect("bundled vocabulary is well formed")
    }

    pub fn from_file(path: &Path) -> Result<Self, SqlLexError> {
        let text = std::fs::read_to_string(path).map_err(|source| SqlLexError::VocabularyIo {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses the vocabulary file format: one uppercase keyword per line,
    /// blank lines and `#` comments ignored. A `# version: <tag>` comment sets
    /// the version tag; otherwise the tag is derived from the keyword list.
    pub fn parse(text: &str) -> Result<Self, SqlLexError> {
        let mut version = None;
        let mut keywords = Vec::new();
        let mut index = HashMap::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(tag) = comment.trim().strip_prefix("version:") {
                    version = Some(tag.trim().to_string());
                }
                continue;
            }
            let valid = line
                .bytes()
                .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
                && line.as_bytes()[0].is_ascii_uppercase();
            if !valid {
                return Err(SqlLexError::VocabularyFormat {
                    line: lineno + 1,
                    message: format!("`{line}` is not an uppercase keyword"),
                });
            }
            if index.insert(line.to_string(), keywords.len()).is_some() {
                return Err(SqlLexError::VocabularyFormat {
                    line: lineno + 1,
                    message: format!("duplicate keyword `{line}`"),
                });
            }
            keywords.push(line.to_string());
        }

        let version = version.unwrap_or_else(|| {
            let digest = Sha256::digest(keywords.join("\n").as_bytes());
            format!("sha256:{}", &hex::encode(digest)[..12])
        });
        Ok(Self {
            version,
            keywords,
            index,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    /// Looks up a word case-insensitively, returning the canonical keyword.
    pub fn lookup(&self, word: &str) -> Option<&str> {
        if word.bytes().any(|b| b.is_ascii_lowercase()) {
            let upper = word.to_ascii_uppercase();
            self.index.get(&upper).map(|&i| self.keywords[i].as_str())
        } else {
            self.index.get(word).map(|&i| self.keywords[i].as_str())
        }
    }

    pub fn position(&self, keyword: &str) -> Option<usize> {
        self.index.get(keyword).copied()
    }
}
