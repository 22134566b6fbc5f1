//! Pipeline configuration file (TOML, or JSON when the extension is `.json`).

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cotsql_core::bootstrap::{BootstrapConfig, TEACHER_API_KEY_ENV, TEACHER_URL_ENV};
use cotsql_core::corpus::CorpusFormat;
use cotsql_core::export::StageLabels;
use cotsql_core::rationalizer::{RationalizerConfig, SuccessRule};

/// Invalid configuration or a missing input path.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    #[serde(default = "default_format")]
    pub corpus_format: String,
    pub registry: PathBuf,
    pub seeds_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/repository.jsonl`.
    pub repository: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
}

fn default_format() -> String {
    "generic_jsonl".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    Mock,
    Replay,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub kind: ClientKind,
    /// Chat-completions URL. Falls back to the URL environment variable.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Transcript to replay from, or to record into when `record` is set.
    pub transcript: Option<PathBuf>,
    pub record: bool,
    /// Success rule of the mock client.
    pub mock_rule: Option<SuccessRule>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            kind: ClientKind::Mock,
            endpoint: None,
            api_key_env: TEACHER_API_KEY_ENV.into(),
            timeout_secs: 120,
            transcript: None,
            record: false,
            mock_rule: None,
        }
    }
}

impl ClientConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs.max(1))
    }

    pub fn endpoint(&self) -> Result<String> {
        if let Some(e) = &self.endpoint {
            return Ok(e.clone());
        }
        std::env::var(TEACHER_URL_ENV)
            .map_err(|_| ConfigError(format!("no endpoint configured and {TEACHER_URL_ENV} is not set")).into())
    }

    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    pub workers: usize,
    /// Sample values per column when rendering a missing schema.
    pub schema_sample_rows: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            schema_sample_rows: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub cleaning: CleaningConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub teacher: ClientConfig,
    #[serde(default)]
    pub rationalizer: RationalizerConfig,
    #[serde(default)]
    pub rationalizer_client: ClientConfig,
    #[serde(default)]
    pub labels: StageLabels,
}

const SECRET_HINTS: [&str; 4] = ["key", "token", "secret", "password"];

fn find_secret(value: &toml::Value, path: &str) -> Option<String> {
    let toml::Value::Table(t) = value else {
        return None;
    };
    for (k, v) in t {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        let lower = k.to_ascii_lowercase();
        if lower != "api_key_env" && SECRET_HINTS.iter().any(|h| lower.contains(h)) {
            return Some(here);
        }
        if let Some(found) = find_secret(v, &here) {
            return Some(found);
        }
    }
    None
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let raw: toml::Value = if is_json {
            let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            toml::Value::try_from(json).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        };
        if let Some(field) = find_secret(&raw, "") {
            bail!(ConfigError(format!(
                "{}: field `{field}` looks like a credential; secrets are read from environment variables only (see `api_key_env`)",
                path.display()
            )));
        }
        let mut config: PipelineConfig = raw.try_into().map_err(|e: toml::de::Error| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut config.paths;
        for field in [&mut p.corpus, &mut p.registry, &mut p.seeds_dir, &mut p.output_dir] {
            resolve(base, field);
        }
        for field in [&mut p.repository, &mut p.dev, &mut p.vocabulary].into_iter().flatten() {
            resolve(base, field);
        }
        for client in [&mut config.teacher, &mut config.rationalizer_client] {
            if let Some(t) = &mut client.transcript {
                resolve(base, t);
            }
        }
        config.corpus_format()?;
        config
            .bootstrap
            .validate()
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn corpus_format(&self) -> Result<CorpusFormat> {
        self.paths
            .corpus_format
            .parse()
            .map_err(|e: String| ConfigError(e).into())
    }

    pub fn repository(&self) -> PathBuf {
        self.paths
            .repository
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("repository.jsonl"))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }

    /// Fails unless every listed input exists.
    pub fn require(&self, inputs: &[(&str, &Path)]) -> Result<()> {
        for (what, path) in inputs {
            if !path.exists() {
                bail!(ConfigError(format!("{what} not found: {}", path.display())));
            }
        }
        Ok(())
    }

    /// Checks the inputs that every command reads.
    pub fn validate_common(&self) -> Result<()> {
        self.require(&[("registry", &self.paths.registry)])?;
        if let Some(v) = &self.paths.vocabulary {
            self.require(&[("vocabulary", v)])?;
        }
        Ok(())
    }
}

/// The configuration written by `demo init`.
pub fn demo_config() -> String {
    "\
[paths]
corpus = \"corpus.jsonl\"
registry = \"registry.toml\"
seeds_dir = \"seeds\"
output_dir = \"work\"
dev = \"dev.jsonl\"

[cleaning]
workers = 4
schema_sample_rows = 3

[bootstrap]
few_shot_n = 3
max_iterations = 16
sampling_temperature = 0.7
workers = 4

[teacher]
kind = \"mock\"
mock_rule = { rule = \"feature_budget\", budget = 1 }

[rationalizer]
attempts = 1

[rationalizer_client]
kind = \"mock\"
mock_rule = { rule = \"always\" }
"
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    const MINIMAL: &str = "[paths]\ncorpus = \"c.jsonl\"\nregistry = \"/abs/r.toml\"\nseeds_dir = \"s\"\noutput_dir = \"out\"\n";

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let c = PipelineConfig::load(&write(dir.path(), "p.toml", MINIMAL)).unwrap();
        assert_eq!(c.paths.corpus, dir.path().join("c.jsonl"));
        assert_eq!(c.paths.registry, Path::new("/abs/r.toml"));
        assert_eq!(c.repository(), dir.path().join("out/repository.jsonl"));
        assert_eq!(c.teacher.kind, ClientKind::Mock);
        assert_eq!(c.teacher.api_key_env, TEACHER_API_KEY_ENV);
    }

    #[test]
    fn secret_like_keys_are_refused_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        for extra in ["[teacher]\napi_key = \"x\"", "[rationalizer_client]\nauth_token = \"x\"", "password = \"x\""] {
            let text = if extra.starts_with('[') { format!("{MINIMAL}{extra}\n") } else { format!("{extra}\n{MINIMAL}") };
            let err = PipelineConfig::load(&write(dir.path(), "p.toml", &text)).unwrap_err();
            assert!(err.to_string().contains("credential"), "{err}");
        }
        let ok = format!("{MINIMAL}[teacher]\napi_key_env = \"MY_KEY\"\n");
        assert_eq!(PipelineConfig::load(&write(dir.path(), "p.toml", &ok)).unwrap().teacher.api_key_env, "MY_KEY");
    }

    #[test]
    fn bad_values_fail_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let fmt = MINIMAL.replace("[paths]\n", "[paths]\ncorpus_format = \"csv\"\n");
        assert!(PipelineConfig::load(&write(dir.path(), "p.toml", &fmt)).is_err());
        let n = format!("{MINIMAL}[bootstrap]\nfew_shot_n = 0\n");
        assert!(PipelineConfig::load(&write(dir.path(), "p.toml", &n)).is_err());
    }

    #[test]
    fn demo_config_parses() {
        let dir = tempfile::tempdir().unwrap();
        let c = PipelineConfig::load(&write(dir.path(), "cotsql.toml", &demo_config())).unwrap();
        assert_eq!(c.rationalizer_client.mock_rule, Some(SuccessRule::Always));
        assert_eq!(c.teacher.mock_rule, Some(SuccessRule::default()));
    }
}
