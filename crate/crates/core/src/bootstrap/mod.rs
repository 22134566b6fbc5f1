//! Dynamic few-shot bootstrapping of validated rationales.
//!
//! Each iteration ranks the positive records of a frozen repository
//! snapshot against every uncovered instance's gold SQL, prompts the
//! teacher with the top-n exemplars, and keeps completions whose final
//! SQL reproduces the gold result.

mod prompt;
mod repository;
mod run;
mod teacher;

pub use prompt::{
    build_prompt, build_rationalization_prompt, parse_prompt, schema_with_evidence, ParsedPrompt, PromptError, PromptExemplar,
    RATIONALE_INSTRUCTION, RATIONALIZATION_INSTRUCTION,
};
pub use repository::{LoopState, Repository, RepositoryStore, Stage, ValidatedCotRecord};
pub use run::{
    bootstrap_loop, load_seeds, select_decoding, BootstrapConfig, BootstrapError, BootstrapOutcome, Bootstrapper, FailureKind,
    InstanceFailure, IterationReport, IterationSummary, SeedCot,
};
pub(crate) use run::{failure_for, open_cached, Attempt, Generator, SessionCache};
pub use teacher::{
    complete_with_retry, DecodingMode, DecodingParams, HttpTeacher, RecordingTeacher, ReplayTeacher, RetryPolicy, TeacherClient,
    TeacherError, TeacherRequest, TeacherResponse, TokenUsage, TranscriptEntry, TEACHER_API_KEY_ENV, TEACHER_URL_ENV,
};
#[cfg(test)]
pub(crate) use repository::tests as repo_fixtures;
