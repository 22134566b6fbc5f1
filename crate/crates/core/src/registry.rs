//! Registered SQLite databases and the shared execution settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const DEFAULT_TIMEOUT_SECS: f64 = 30.0;
pub const DEFAULT_ROW_CAP: usize = 100_000;

/// How result sets are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonMode {
    /// Row order matters iff the gold query has a top-level ORDER BY.
    #[default]
    Auto,
    /// Always compare rows as multisets.
    Multiset,
    /// Always compare rows as sequences.
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecSettings {
    pub timeout_secs: f64,
    pub row_cap: usize,
    /// Absolute tolerance for non-integral reals. Zero means exact.
    pub float_epsilon: f64,
    pub comparison: ComparisonMode,
}

impl Default for ExecSettings {
    fn default() -> Self {
        Self {
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            row_cap: DEFAULT_ROW_CAP,
            float_epsilon: 0.0,
            comparison: ComparisonMode::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseEntry {
    pub path: PathBuf,
    /// Overrides the registry-wide timeout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatabaseRegistry {
    databases: BTreeMap<String, DatabaseEntry>,
    pub settings: ExecSettings,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("cannot read registry {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid registry {path}: {message}")]
    Format { path: PathBuf, message: String },
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum EntrySpec {
    Path(PathBuf),
    Full(DatabaseEntry),
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default)]
    timeout_secs: Option<f64>,
    #[serde(default)]
    row_cap: Option<usize>,
    #[serde(default)]
    float_epsilon: Option<f64>,
    #[serde(default)]
    comparison: Option<ComparisonMode>,
    databases: BTreeMap<String, EntrySpec>,
}

impl DatabaseRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_database(mut self, db_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        self.insert(db_id, path);
        self
    }

    pub fn insert(&mut self, db_id: impl Into<String>, path: impl Into<PathBuf>) {
        self.databases.insert(
            db_id.into(),
            DatabaseEntry {
                path: path.into(),
                timeout_secs: None,
            },
        );
    }

    pub fn insert_entry(&mut self, db_id: impl Into<String>, entry: DatabaseEntry) {
        self.databases.insert(db_id.into(), entry);
    }

    /// Loads a TOML (`.toml`) or JSON registry. Relative database paths are
    /// resolved against the registry file's directory.
    ///
    /// ```toml
    /// timeout_secs = 30
    /// [databases]
    /// college = "dbs/college.sqlite"
    /// shop = { path = "dbs/shop.sqlite", timeout_secs = 5 }
    /// ```
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let format_err = |message: String| RegistryError::Format {
            path: path.to_path_buf(),
            message,
        };
        let file: RegistryFile = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| format_err(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let mut registry = DatabaseRegistry::new();
        let defaults = ExecSettings::default();
        registry.settings = ExecSettings {
            timeout_secs: file.timeout_secs.unwrap_or(defaults.timeout_secs),
            row_cap: file.row_cap.unwrap_or(defaults.row_cap),
            float_epsilon: file.float_epsilon.unwrap_or(defaults.float_epsilon),
            comparison: file.comparison.unwrap_or(defaults.comparison),
        };
        if registry.settings.timeout_secs.is_nan() || registry.settings.timeout_secs <= 0.0 {
            return Err(format_err("timeout_secs must be positive".into()));
        }
        if registry.settings.float_epsilon.is_nan() || registry.settings.float_epsilon < 0.0 {
            return Err(format_err("float_epsilon must be non-negative".into()));
        }
        for (db_id, spec) in file.databases {
            let mut entry = match spec {
                EntrySpec::Path(p) => DatabaseEntry {
                    path: p,
                    timeout_secs: None,
                },
                EntrySpec::Full(e) => e,
            };
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
            registry.databases.insert(db_id, entry);
        }
        Ok(registry)
    }

    /// Writes the registry as TOML with paths as given.
    pub fn to_toml(&self) -> String {
        let file = RegistryFile {
            timeout_secs: Some(self.settings.timeout_secs),
            row_cap: Some(self.settings.row_cap),
            float_epsilon: Some(self.settings.float_epsilon),
            comparison: Some(self.settings.comparison),
            databases: self
                .databases
                .iter()
                .map(|(k, v)| {
                    let spec = match v.timeout_secs {
                        None => EntrySpec::Path(v.path.clone()),
                        Some(_) => EntrySpec::Full(v.clone()),
                    };
                    (k.clone(), spec)
                })
                .collect(),
        };
        toml::to_string(&file).expect("registry serializes")
    }

    pub fn get(&self, db_id: &str) -> Option<&DatabaseEntry> {
        self.databases.get(db_id)
    }

    pub fn db_ids(&self) -> impl Iterator<Item = &str> {
        self.databases.keys().map(String::as_str)
    }

    pub fn timeout_for(&self, db_id: &str) -> Duration {
        let secs = self
            .databases
            .get(db_id)
            .and_then(|e| e.timeout_secs)
            .unwrap_or(self.settings.timeout_secs);
        Duration::from_secs_f64(secs.max(0.0))
    }

    /// Database ids referenced by `ids` that do not resolve to an existing file.
    pub fn unresolved<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut missing: Vec<String> = ids
            .into_iter()
            .filter(|id| self.databases.get(*id).is_none_or(|e| !e.path.is_file()))
            .map(str::to_string)
            .collect();
        missing.sort();
        missing.dedup();
        missing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_toml_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.toml");
        std::fs::write(
            &path,
            "timeout_secs = 2.5\ncomparison = \"multiset\"\n[databases]\na = \"dbs/a.sqlite\"\nb = { path = \"/abs/b.sqlite\", timeout_secs = 1 }\n",
        )
        .unwrap();
        let reg = DatabaseRegistry::load(&path).unwrap();
        assert_eq!(reg.get("a").unwrap().path, dir.path().join("dbs/a.sqlite"));
        assert_eq!(reg.get("b").unwrap().path, PathBuf::from("/abs/b.sqlite"));
        assert_eq!(reg.timeout_for("a"), Duration::from_millis(2500));
        assert_eq!(reg.timeout_for("b"), Duration::from_secs(1));
        assert_eq!(reg.settings.comparison, ComparisonMode::Multiset);
        assert_eq!(reg.settings.row_cap, DEFAULT_ROW_CAP);
        assert_eq!(reg.unresolved(["a", "zzz"]), ["a", "zzz"]);
    }

    #[test]
    fn load_json_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.json");
        std::fs::write(&path, r#"{"databases": {"x": "x.db"}}"#).unwrap();
        let reg = DatabaseRegistry::load(&path).unwrap();
        assert_eq!(reg.timeout_for("x"), Duration::from_secs(30));
        assert_eq!(reg.settings.float_epsilon, 0.0);
    }

    #[test]
    fn toml_round_trip() {
        let mut reg = DatabaseRegistry::new().with_database("a", "/tmp/a.sqlite");
        reg.insert_entry(
            "b",
            DatabaseEntry {
                path: "/tmp/b.sqlite".into(),
                timeout_secs: Some(0.5),
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.toml");
        std::fs::write(&path, reg.to_toml()).unwrap();
        assert_eq!(DatabaseRegistry::load(&path).unwrap(), reg);
    }

    #[test]
    fn rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.toml");
        std::fs::write(&path, "bogus = 1\n[databases]\n").unwrap();
        assert!(DatabaseRegistry::load(&path).is_err());
    }
}
