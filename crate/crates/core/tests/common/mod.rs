#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cotsql_core::bootstrap::{load_seeds, BootstrapConfig, Bootstrapper, IterationReport, Repository, RepositoryStore};
use cotsql_core::corpus::{clean_corpus, fill_missing_schemas, load_corpus, CorpusFormat, TrainInstance};
use cotsql_core::demo::{write_demo, DemoLayout};
use cotsql_core::export::{coverage_report, export_finetune_set, CotVariant, CoverageReport, CoverageScope, StageLabels};
use cotsql_core::rationalizer::{apply_rationalizer, ProceduralTeacher, RationalizerConfig, RationalizerOutcome, SuccessRule};
use cotsql_core::registry::DatabaseRegistry;
use cotsql_core::sqllex::KeywordVocabulary;

pub struct DemoRun {
    pub layout: DemoLayout,
    pub registry: DatabaseRegistry,
    pub corpus: Vec<TrainInstance>,
    pub store: RepositoryStore,
    /// Covered instances after seeding, then after each iteration.
    pub covered_per_iteration: Vec<usize>,
    pub reports: Vec<IterationReport>,
    pub after_bootstrap: Repository,
    pub rationalizer: RationalizerOutcome,
    pub repository: Repository,
    pub coverage: CoverageReport,
    pub exports: Vec<PathBuf>,
}

pub fn demo_inputs(dir: &Path) -> (DemoLayout, DatabaseRegistry, Vec<TrainInstance>) {
    let layout = write_demo(dir).unwrap();
    let registry = DatabaseRegistry::load(&layout.registry).unwrap();
    let mut corpus = load_corpus(&layout.corpus, CorpusFormat::GenericJsonl).unwrap();
    fill_missing_schemas(&mut corpus, &registry, 3).unwrap();
    let (corpus, report) = clean_corpus(&corpus, &registry, 4);
    assert!(report.rejected.is_empty());
    (layout, registry, corpus)
}

/// clean, bootstrap with the mock teacher, rationalize with the mock
/// rationalizer, then export every variant.
pub fn run_demo(dir: &Path) -> DemoRun {
    let (layout, registry, corpus) = demo_inputs(dir);
    let vocab = KeywordVocabulary::sqlite_default();
    let teacher = ProceduralTeacher::new(&corpus, &registry, SuccessRule::default()).unwrap();
    let config = BootstrapConfig {
        max_iterations: 3,
        ..Default::default()
    };
    let boot = Bootstrapper::new(&corpus, &registry, &vocab, &teacher, config).unwrap();
    let (seeds, rejected) = boot.validate_seeds(&load_seeds(&layout.seeds_dir).unwrap()).unwrap();
    assert!(rejected.is_empty());
    let seeded = seeds.len();

    let store = RepositoryStore::new(dir.join("repository.jsonl"));
    let outcome = boot.bootstrap_loop(seeds, Some(&store)).unwrap();
    let mut covered_per_iteration = vec![seeded];
    let mut running = seeded;
    for r in &outcome.reports {
        let fresh: std::collections::BTreeSet<&str> = r.new_records.iter().map(|x| x.instance_id.as_str()).collect();
        running += fresh.len();
        covered_per_iteration.push(running);
    }

    let rationalizer_client = ProceduralTeacher::new(&corpus, &registry, SuccessRule::Always).unwrap();
    let rationalized = apply_rationalizer(
        &corpus,
        &outcome.repository,
        &rationalizer_client,
        &registry,
        &vocab,
        &RationalizerConfig::default(),
    );
    store.append(&rationalized.records).unwrap();
    let repository = store.load().unwrap();

    let coverage = coverage_report(&corpus, &repository, &StageLabels::default());
    let out = dir.join("out");
    std::fs::create_dir_all(&out).unwrap();
    let mut exports = Vec::new();
    for variant in CotVariant::ALL {
        for scope in [CoverageScope::CoveredOnly, CoverageScope::Full] {
            let path = out.join(format!("finetune_{}_{}.jsonl", variant.as_str(), scope.as_str()));
            export_finetune_set(&corpus, &repository, variant, scope, &path).unwrap();
            exports.push(path);
        }
    }

    DemoRun {
        layout,
        registry,
        corpus,
        store,
        covered_per_iteration,
        reports: outcome.reports,
        after_bootstrap: outcome.repository,
        rationalizer: rationalized,
        repository,
        coverage,
        exports,
    }
}

/// Repository file with the `created_at` field removed from every line.
pub fn repository_without_timestamps(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            v.as_object_mut().unwrap().remove("created_at");
            v.to_string() + "\n"
        })
        .collect()
}

/// Ten instances over one small database: 1 syntax error, 1 slow query,
/// 2 empty results and 6 good ones. Queries time out after 0.3 s.
pub fn cleaning_fixture(dir: &Path) -> (DatabaseRegistry, Vec<TrainInstance>) {
    let db = dir.join("clean.sqlite");
    cotsql_core::demo::build_database(
        &db,
        "CREATE TABLE t (id INTEGER PRIMARY KEY, name TEXT, score REAL);
         INSERT INTO t VALUES (1, 'a', 1.5), (2, 'b', 2.0), (3, 'c', NULL);",
    )
    .unwrap();
    let registry_path = dir.join("clean_registry.toml");
    std::fs::write(&registry_path, "timeout_secs = 0.3\n[databases]\nclean = \"clean.sqlite\"\n").unwrap();
    let registry = DatabaseRegistry::load(&registry_path).unwrap();
    let golds = [
        "SELECT name FROM t",
        "SELEC * FROM t",
        "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c WHERE x < 1000000000) SELECT COUNT(*) FROM c",
        "SELECT name FROM t WHERE id > 100",
        "SELECT id FROM t WHERE name = 'zzz'",
        "SELECT COUNT(*) FROM t",
        "SELECT MAX(score) FROM t WHERE id > 100",
        "SELECT id, score FROM t ORDER BY id",
        "SELECT name FROM t WHERE score IS NULL",
        "SELECT AVG(score) FROM t",
    ];
    let instances = golds
        .iter()
        .enumerate()
        .map(|(i, sql)| TrainInstance {
            instance_id: format!("c{i:02}"),
            db_id: "clean".into(),
            question: format!("question {i}"),
            gold_sql: (*sql).into(),
            schema_text: String::new(),
            difficulty: cotsql_core::corpus::Difficulty::Simple,
            evidence: None,
        })
        .collect();
    (registry, instances)
}

pub mod oracle {
    use std::collections::BTreeMap;

    use cotsql_core::execval::{ResultTable, Value};
    use cotsql_core::sqllex::{vectorize, Exemplar, KeywordVocabulary, SqlVector};
    use rand::seq::SliceRandom;
    use rand::Rng;

    const KEYWORDS: &[&str] = &[
        "SELECT", "FROM", "WHERE", "JOIN", "ON", "AND", "OR", "GROUP", "BY", "ORDER", "LIMIT", "AS", "DISTINCT", "NOT", "IN",
        "LIKE", "UNION", "CASE", "WHEN", "THEN", "ELSE", "END", "HAVING", "COUNT", "MAX", "AVG", "EXISTS", "BETWEEN",
    ];
    const IDENTS: &[&str] = &["t1", "t2", "name", "score", "city", "x", "order_id", "popularity"];
    // Fragments that contain keyword text but must not be counted.
    const DECOYS: &[&str] = &["'SELECT FROM'", "t1.order", "\"group\"", "-- WHERE AND\n", "/* JOIN ON */", "[limit]", "'it''s NOT'"];

    /// A random statement-like string and its true keyword counts.
    pub fn random_sql(rng: &mut impl Rng) -> (String, BTreeMap<String, u32>) {
        let mut parts = Vec::new();
        let mut counts = BTreeMap::new();
        for _ in 0..rng.gen_range(0..25) {
            match rng.gen_range(0..10) {
                0..=4 => {
                    let kw = KEYWORDS[rng.gen_range(0..KEYWORDS.len())];
                    *counts.entry(kw.to_string()).or_insert(0) += 1;
                    let word = if rng.gen_bool(0.3) { kw.to_ascii_lowercase() } else { kw.to_string() };
                    parts.push(word);
                }
                5..=7 => parts.push(IDENTS[rng.gen_range(0..IDENTS.len())].to_string()),
                8 => parts.push(DECOYS[rng.gen_range(0..DECOYS.len())].to_string()),
                _ => parts.push(["=", ",", "(", ")", "*", "1", "2.5"][rng.gen_range(0..7)].to_string()),
            }
        }
        (parts.join(" "), counts)
    }

    pub struct Rec {
        pub id: String,
        pub vector: SqlVector,
        pub counts: BTreeMap<String, u32>,
    }

    impl Exemplar for Rec {
        fn instance_id(&self) -> &str {
            &self.id
        }
        fn sql_vector(&self) -> &SqlVector {
            &self.vector
        }
    }

    /// 100 records; some are exact copies or scalar multiples of others so
    /// that ties occur.
    pub fn random_repository(rng: &mut impl Rng, vocab: &KeywordVocabulary) -> Vec<Rec> {
        let mut sqls: Vec<(String, BTreeMap<String, u32>)> = Vec::new();
        for i in 0..100 {
            let entry = if i >= 10 && rng.gen_bool(0.2) {
                let (s, c) = sqls[rng.gen_range(0..sqls.len())].clone();
                if rng.gen_bool(0.5) {
                    (format!("{s} {s}"), c.into_iter().map(|(k, v)| (k, v * 2)).collect())
                } else {
                    (s, c)
                }
            } else {
                random_sql(rng)
            };
            sqls.push(entry);
        }
        let mut ids: Vec<usize> = (0..100).collect();
        ids.shuffle(rng);
        sqls.into_iter()
            .zip(ids)
            .map(|((sql, counts), id)| Rec {
                id: format!("r{id:03}"),
                vector: vectorize(&sql, vocab),
                counts,
            })
            .collect()
    }

    fn dot(a: &BTreeMap<String, u32>, b: &BTreeMap<String, u32>) -> u128 {
        a.iter().map(|(k, v)| u128::from(*v) * u128::from(*b.get(k).unwrap_or(&0))).sum()
    }

    /// Scores every record against the query and fully sorts by descending
    /// cosine (compared exactly as dot²/norm² cross products), then id.
    pub fn brute_force_rank<'a>(query: &BTreeMap<String, u32>, repo: &'a [Rec], exclude: Option<&str>, n: usize) -> Vec<&'a str> {
        let mut all: Vec<(u128, u128, &Rec)> = repo
            .iter()
            .filter(|r| Some(r.id.as_str()) != exclude)
            .map(|r| {
                let d = dot(query, &r.counts);
                let norm = dot(&r.counts, &r.counts);
                if d == 0 || norm == 0 {
                    (0, 1, r)
                } else {
                    (d * d, norm, r)
                }
            })
            .collect();
        all.sort_by(|(da, na, a), (db, nb, b)| (db * na).cmp(&(da * nb)).then_with(|| a.id.cmp(&b.id)));
        all.into_iter().take(n).map(|(_, _, r)| r.id.as_str()).collect()
    }

    fn random_value(rng: &mut impl Rng) -> Value {
        match rng.gen_range(0..6) {
            0 => Value::Null,
            1 | 2 => Value::Integer(rng.gen_range(-3..4)),
            3 => Value::real([0.5, 2.0, -1.25, 3.0][rng.gen_range(0..4)]),
            4 => Value::Text(["a", "b", "", "A"][rng.gen_range(0..4)].to_string()),
            _ => Value::blob(&[rng.gen_range(0..3)]),
        }
    }

    /// Up to 6 columns and 50 rows with NULLs and duplicate rows.
    pub fn random_table(rng: &mut impl Rng) -> ResultTable {
        let cols = rng.gen_range(1..=6);
        let n = rng.gen_range(0..=50);
        let mut rows: Vec<Vec<Value>> = Vec::with_capacity(n);
        for _ in 0..n {
            if !rows.is_empty() && rng.gen_bool(0.2) {
                let dup = rows[rng.gen_range(0..rows.len())].clone();
                rows.push(dup);
            } else {
                rows.push((0..cols).map(|_| random_value(rng)).collect());
            }
        }
        ResultTable::new(cols, rows)
    }

    /// A second table related to `a`: shuffled, perturbed, truncated or
    /// unrelated.
    pub fn variant_of(a: &ResultTable, rng: &mut impl Rng) -> ResultTable {
        let mut rows = a.rows.clone();
        rows.shuffle(rng);
        match rng.gen_range(0..5) {
            0 => ResultTable::new(a.column_count, rows),
            1 if !rows.is_empty() => {
                let r = rng.gen_range(0..rows.len());
                let c = rng.gen_range(0..a.column_count);
                rows[r][c] = random_value(rng);
                ResultTable::new(a.column_count, rows)
            }
            2 if !rows.is_empty() => {
                let r = rng.gen_range(0..rows.len());
                if rng.gen_bool(0.5) {
                    rows.remove(r);
                } else {
                    let dup = rows[r].clone();
                    rows[0] = dup;
                }
                ResultTable::new(a.column_count, rows)
            }
            3 => ResultTable::new(a.column_count, a.rows.clone()),
            _ => random_table(rng),
        }
    }

    fn key(v: &Value) -> String {
        match v {
            Value::Null => "n".into(),
            Value::Integer(i) => format!("i{i}"),
            Value::Real(r) => format!("r{r:?}"),
            Value::Text(t) => format!("t{t}"),
            Value::Blob(b) => format!("b{b}"),
        }
    }

    /// Equality by sorting rows of string keys.
    pub fn oracle_equal(a: &ResultTable, b: &ResultTable, order_sensitive: bool) -> bool {
        let canon = |t: &ResultTable| {
            let mut rows: Vec<Vec<String>> = t.rows.iter().map(|r| r.iter().map(key).collect()).collect();
            if !order_sensitive {
                rows.sort();
            }
            rows
        };
        a.column_count == b.column_count && canon(a) == canon(b)
    }
}

/// 10,000 instances whose stage coverages come out at 53.18 / 73.86 / 99.02.
pub fn synthetic_coverage() -> (Vec<TrainInstance>, Repository) {
    use cotsql_core::bootstrap::{DecodingMode, Stage, ValidatedCotRecord};
    use cotsql_core::execval::{Label, Verdict, VerdictDetail};

    let vocab = KeywordVocabulary::sqlite_default();
    let cot = cotsql_core::rationale::parse_cot("**Step 1: Plan**\n--\n\nPlan.\n\n**Step 2: Query**\n--\n\n```sql\nSELECT 1\n```\n").unwrap();
    let verdict = Verdict {
        label: Label::Positive,
        detail: VerdictDetail::Match,
        step_execution: Vec::new(),
        mismatch: None,
        error: None,
    };
    let template = ValidatedCotRecord::new("t", &cot, verdict, Stage::Teacher, 1, DecodingMode::Greedy, &vocab).unwrap();
    let corpus: Vec<TrainInstance> = (0..10_000)
        .map(|i| TrainInstance {
            instance_id: format!("i{i:05}"),
            db_id: "db".into(),
            question: "q".into(),
            gold_sql: "SELECT 1".into(),
            schema_text: String::new(),
            difficulty: Default::default(),
            evidence: None,
        })
        .collect();
    let mut repo = Repository::new();
    for (i, inst) in corpus.iter().enumerate() {
        let (stage, iteration) = match i {
            0..=1 => (Stage::Seed, 0),
            2..=5317 => (Stage::Teacher, 1),
            5318..=7385 => (Stage::Teacher, 2 + (i % 12) as u32),
            7386..=9901 => (Stage::Rationalizer, 0),
            _ => continue,
        };
        let mut r = template.clone();
        r.instance_id = inst.instance_id.clone();
        r.stage = stage;
        r.iteration = iteration;
        repo.insert(r);
    }
    (corpus, repo)
}
