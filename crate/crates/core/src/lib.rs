//! Bootstraps, validates and exports step-by-step SQL-building
//! chain-of-thought rationales for text-to-SQL training corpora.

pub mod bootstrap;
pub mod corpus;
pub mod demo;
pub mod evalharness;
pub mod execval;
pub mod export;
pub mod jsonl;
mod parallel;
pub mod percent;
pub mod rationale;
pub mod rationalizer;
pub mod registry;
pub mod sqllex;
