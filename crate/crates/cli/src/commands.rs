use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use cotsql_core::bootstrap::{
    load_seeds, BootstrapError, Bootstrapper, HttpTeacher, RecordingTeacher, RepositoryStore, ReplayTeacher, Stage,
    TeacherClient, TeacherError,
};
use cotsql_core::corpus::{clean_corpus, fill_missing_schemas, load_corpus, render_schema_fallback, write_corpus, CorpusError, CorpusFormat, TrainInstance};
use cotsql_core::demo::{write_demo, DemoError};
use cotsql_core::evalharness::{diff_reports, score_predictions, EvalError, EvalReport, PredictionFile};
use cotsql_core::execval::ExecError;
use cotsql_core::export::{coverage_report, export_finetune_set, CotVariant, CoverageScope, ExportError};
use cotsql_core::jsonl::{self, JsonlError};
use cotsql_core::rationalizer::{
    apply_rationalizer, export_rationalization_trainset, triage_inconsistencies, InconsistencyFlag, ProceduralTeacher,
    RationalizerError, ReviewDecision, SuccessRule,
};
use cotsql_core::registry::{DatabaseRegistry, RegistryError};
use cotsql_core::sqllex::{KeywordVocabulary, SqlLexError};

use crate::config::{demo_config, ClientConfig, ClientKind, ConfigError, PipelineConfig};
use crate::{BootstrapArgs, Cli, Command, DemoCommand, RationalizeArgs, ReportCommand};

const CLEANED: &str = "cleaned.jsonl";
const CLEANING_REPORT: &str = "cleaning_report.json";
const ITERATIONS: &str = "iterations.jsonl";
const FLAGS: &str = "flags.jsonl";
const RATIONALIZE_SUMMARY: &str = "rationalize_summary.json";
const TRAINSET: &str = "rationalization_trainset.jsonl";
const TRIAGE_AUDIT: &str = "triage_audit.json";
const COVERAGE: &str = "coverage.json";

/// Short machine-readable name for the innermost known error in the chain.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        let kind = if cause.is::<ConfigError>() {
            "config"
        } else if cause.is::<BootstrapError>() {
            "bootstrap"
        } else if cause.is::<CorpusError>() {
            "corpus"
        } else if cause.is::<RegistryError>() {
            "registry"
        } else if cause.is::<EvalError>() {
            "eval"
        } else if cause.is::<ExportError>() {
            "export"
        } else if cause.is::<RationalizerError>() {
            "rationalizer"
        } else if cause.is::<TeacherError>() {
            "teacher"
        } else if cause.is::<ExecError>() {
            "execution"
        } else if cause.is::<SqlLexError>() {
            "vocabulary"
        } else if cause.is::<DemoError>() {
            "demo"
        } else if cause.is::<JsonlError>() || cause.is::<std::io::Error>() {
            "io"
        } else {
            continue;
        };
        return kind;
    }
    "internal"
}

fn emit(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Demo(DemoCommand::Init { dir }) = &cli.command {
        return demo_init(dir);
    }
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Some(dir) = cli.output_dir {
        config.paths.output_dir = dir;
    }
    if let Some(w) = cli.workers {
        let w = w.max(1);
        config.cleaning.workers = w;
        config.bootstrap.workers = w;
        config.rationalizer.workers = w;
    }
    config.validate_common()?;
    std::fs::create_dir_all(&config.paths.output_dir)
        .with_context(|| format!("cannot create output directory {}", config.paths.output_dir.display()))?;
    let ctx = Ctx::new(config)?;
    match cli.command {
        Command::Clean => ctx.clean(),
        Command::Bootstrap(args) => ctx.bootstrap(args),
        Command::Rationalize(args) => ctx.rationalize(args),
        Command::Trainset => ctx.trainset(),
        Command::Triage { decisions } => ctx.triage(&decisions),
        Command::Export { variant, scope } => ctx.export(variant.as_deref(), scope.as_deref()),
        Command::Eval { predictions, dev, name } => ctx.eval(&predictions, dev, &name),
        Command::Report(r) => ctx.report(r),
        Command::Compact => ctx.compact(),
        Command::RenderSchema { db_id } => ctx.render_schema(&db_id),
        Command::Demo(_) => unreachable!("handled before the config is loaded"),
    }
}

fn demo_init(dir: &Path) -> Result<()> {
    let layout = write_demo(dir)?;
    let config = dir.join("cotsql.toml");
    std::fs::write(&config, demo_config()).with_context(|| format!("cannot write {}", config.display()))?;
    emit(&json!({
        "command": "demo init",
        "config": config,
        "corpus": layout.corpus,
        "dev": layout.dev,
        "baseline_predictions": layout.baseline_predictions,
        "cot_predictions": layout.cot_predictions,
    }))
}

struct Ctx {
    config: PipelineConfig,
    registry: DatabaseRegistry,
    vocab: KeywordVocabulary,
}

impl Ctx {
    fn new(config: PipelineConfig) -> Result<Self> {
        let registry = DatabaseRegistry::load(&config.paths.registry)?;
        let vocab = match &config.paths.vocabulary {
            Some(p) => KeywordVocabulary::from_file(p)?,
            None => KeywordVocabulary::sqlite_default(),
        };
        Ok(Self { config, registry, vocab })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out(name)
    }

    fn store(&self) -> RepositoryStore {
        RepositoryStore::new(self.config.repository())
    }

    fn cleaned(&self) -> Result<Vec<TrainInstance>> {
        let path = self.out(CLEANED);
        if !path.exists() {
            bail!(ConfigError(format!("cleaned corpus not found: {} (run `cotsql clean` first)", path.display())));
        }
        Ok(load_corpus(&path, CorpusFormat::GenericJsonl)?)
    }

    fn client(&self, cfg: &ClientConfig, kind: ClientKind, corpus: &[TrainInstance], default_rule: SuccessRule, transcript: &str) -> Result<Box<dyn TeacherClient>> {
        let transcript = cfg.transcript.clone().unwrap_or_else(|| self.out(transcript));
        let inner: Box<dyn TeacherClient> = match kind {
            ClientKind::Mock => {
                let rule = cfg.mock_rule.clone().unwrap_or(default_rule);
                Box::new(ProceduralTeacher::new(corpus, &self.registry, rule).map_err(ConfigError)?)
            }
            ClientKind::Replay => {
                self.config.require(&[("transcript", &transcript)])?;
                return Ok(Box::new(ReplayTeacher::load(&transcript)?));
            }
            ClientKind::Http => Box::new(HttpTeacher::new(cfg.endpoint()?, cfg.api_key(), cfg.timeout())),
        };
        Ok(if cfg.record {
            Box::new(RecordingTeacher::new(inner, transcript))
        } else {
            inner
        })
    }

    fn log_coverage(&self, corpus: &[TrainInstance]) -> Result<()> {
        let repo = self.store().load()?;
        let report = coverage_report(corpus, &repo, &self.config.labels);
        for row in &report.rows {
            tracing::info!(stage = %row.stage, covered = row.covered, total = row.total, percent = %row.percent, "coverage");
        }
        write_json(&self.out(COVERAGE), &report)
    }

    fn clean(&self) -> Result<()> {
        let paths = &self.config.paths;
        self.config.require(&[("corpus", &paths.corpus)])?;
        let mut corpus = load_corpus(&paths.corpus, self.config.corpus_format()?)?;
        let total = corpus.len();
        fill_missing_schemas(&mut corpus, &self.registry, self.config.cleaning.schema_sample_rows)?;
        let (kept, report) = clean_corpus(&corpus, &self.registry, self.config.cleaning.workers);
        write_corpus(&self.out(CLEANED), &kept)?;
        write_json(&self.out(CLEANING_REPORT), &report)?;
        tracing::info!(total, kept = report.kept, rejected = report.rejected.len(), "cleaning finished");
        emit(&json!({
            "command": "clean",
            "total": total,
            "kept": report.kept,
            "rejected": report.rejected.len(),
            "cleaned": self.out(CLEANED),
        }))
    }

    fn bootstrap(&self, args: BootstrapArgs) -> Result<()> {
        let seeds_dir = args.seeds_dir.unwrap_or_else(|| self.config.paths.seeds_dir.clone());
        self.config.require(&[("seeds directory", &seeds_dir)])?;
        let corpus = match &args.corpus {
            Some(p) => {
                self.config.require(&[("corpus", p)])?;
                load_corpus(p, self.config.corpus_format()?)?
            }
            None => self.cleaned()?,
        };
        let mut bconf = self.config.bootstrap.clone();
        if let Some(n) = args.max_iterations {
            bconf.max_iterations = n;
        }
        let kind = args.teacher.unwrap_or(self.config.teacher.kind);
        let teacher = self.client(&self.config.teacher, kind, &corpus, SuccessRule::default(), "teacher_transcript.jsonl")?;
        let boot = Bootstrapper::new(&corpus, &self.registry, &self.vocab, teacher.as_ref(), bconf)?;
        let (seeds, rejected) = boot.validate_seeds(&load_seeds(&seeds_dir)?)?;
        for r in &rejected {
            tracing::warn!(instance = %r.instance_id, kind = ?r.kind, message = %r.message, "seed rejected");
        }
        if seeds.is_empty() {
            return Err(BootstrapError::AllSeedsInvalid { rejected: rejected.len() }.into());
        }
        let seeded = seeds.len();
        let store = self.store();
        let outcome = boot.bootstrap_loop(seeds, Some(&store))?;

        let mut covered: BTreeSet<&str> = outcome.repository.covered_instances();
        covered.retain(|id| corpus.iter().any(|i| i.instance_id == *id));
        let mut running = covered.len().saturating_sub(outcome.reports.iter().map(|r| r.new_records.len()).sum::<usize>());
        let summaries: Vec<_> = outcome
            .reports
            .iter()
            .map(|r| {
                running += r.new_records.len();
                r.summary(running, corpus.len())
            })
            .collect();
        jsonl::append(&self.out(ITERATIONS), &summaries)?;
        self.log_coverage(&corpus)?;
        emit(&json!({
            "command": "bootstrap",
            "seeds_valid": seeded,
            "seeds_rejected": rejected.len(),
            "iterations": summaries,
            "completed_iterations": outcome.state.completed_iterations,
            "plateau": outcome.state.plateau,
            "covered": covered.len(),
            "total": corpus.len(),
            "repository": store.path(),
        }))
    }

    fn rationalize(&self, args: RationalizeArgs) -> Result<()> {
        let store = self.store();
        self.config.require(&[("repository", store.path())])?;
        let corpus = self.cleaned()?;
        let mut rconf = self.config.rationalizer.clone();
        if let Some(n) = args.attempts {
            rconf.attempts = n;
        }
        let kind = args.model.unwrap_or(self.config.rationalizer_client.kind);
        let client = self.client(
            &self.config.rationalizer_client,
            kind,
            &corpus,
            SuccessRule::Always,
            "rationalizer_transcript.jsonl",
        )?;
        let mut repo = store.load()?;
        let outcome = apply_rationalizer(&corpus, &repo, client.as_ref(), &self.registry, &self.vocab, &rconf);
        let fresh: Vec<_> = outcome
            .records
            .iter()
            .chain(&outcome.negative_records)
            .filter(|r| repo.insert((*r).clone()))
            .cloned()
            .collect();
        store.append(&fresh)?;
        jsonl::write_all(&self.out(FLAGS), &outcome.flags)?;
        for f in &outcome.failures {
            tracing::warn!(instance = %f.instance_id, kind = ?f.kind, message = %f.message, "rationalization failed");
        }
        // The file holds repository state, so a re-run rewrites it unchanged.
        let state = json!({
            "rationalized": repo.covered_where(|r| r.stage == Stage::Rationalizer).len(),
            "flags": outcome.flags.len(),
            "covered": repo.covered_instances().len(),
            "total": corpus.len(),
        });
        write_json(&self.out(RATIONALIZE_SUMMARY), &state)?;
        self.log_coverage(&corpus)?;
        emit(&json!({
            "command": "rationalize",
            "new_positive": outcome.records.len(),
            "negative": outcome.negative_records.len(),
            "failed": outcome.failures.len(),
            "state": state,
        }))
    }

    fn trainset(&self) -> Result<()> {
        let corpus = self.cleaned()?;
        let repo = self.store().load()?;
        let n = export_rationalization_trainset(&repo, &corpus, &self.out(TRAINSET))?;
        emit(&json!({ "command": "trainset", "examples": n, "path": self.out(TRAINSET) }))
    }

    fn triage(&self, decisions: &Path) -> Result<()> {
        self.config.require(&[("decisions", decisions), ("flags", &self.out(FLAGS))])?;
        let corpus = self.cleaned()?;
        let flags: Vec<InconsistencyFlag> = jsonl::read_all(&self.out(FLAGS))?;
        let decisions: Vec<ReviewDecision> = jsonl::read_all(decisions)?;
        let outcome = triage_inconsistencies(&corpus, &flags, &decisions)?;
        write_corpus(&self.out(CLEANED), &outcome.corpus)?;
        write_json(&self.out(TRIAGE_AUDIT), &outcome.audit)?;
        emit(&json!({
            "command": "triage",
            "excluded": outcome.audit.excluded,
            "gold_replaced": outcome.audit.gold_replaced,
            "returned_to_pending": outcome.audit.returned_to_pending,
            "unreviewed": outcome.audit.unreviewed,
            "pending": outcome.pending,
            "corpus": outcome.corpus.len(),
        }))
    }

    fn export(&self, variant: Option<&str>, scope: Option<&str>) -> Result<()> {
        let variants = match variant {
            Some(v) => vec![v.parse::<CotVariant>().map_err(ConfigError)?],
            None => CotVariant::ALL.to_vec(),
        };
        let scopes = match scope {
            Some(s) => vec![s.parse::<CoverageScope>().map_err(ConfigError)?],
            None => vec![CoverageScope::CoveredOnly, CoverageScope::Full],
        };
        if scopes.contains(&CoverageScope::Full) && !self.out(RATIONALIZE_SUMMARY).exists() {
            bail!(ConfigError("the full scope needs a completed rationalization (run `cotsql rationalize` first)".into()));
        }
        let corpus = self.cleaned()?;
        let repo = self.store().load()?;
        let mut files = Vec::new();
        for v in &variants {
            for s in &scopes {
                let path = self.out(&format!("finetune_{}_{}.jsonl", v.as_str(), s.as_str()));
                let n = export_finetune_set(&corpus, &repo, *v, *s, &path)?;
                tracing::info!(variant = v.as_str(), scope = s.as_str(), examples = n, "exported");
                files.push(json!({ "variant": v, "scope": s, "examples": n, "path": path }));
            }
        }
        emit(&json!({ "command": "export", "files": files }))
    }

    fn eval(&self, predictions: &Path, dev: Option<PathBuf>, name: &str) -> Result<()> {
        let dev = dev
            .or_else(|| self.config.paths.dev.clone())
            .ok_or_else(|| ConfigError("no dev set: pass --dev or set paths.dev".into()))?;
        self.config.require(&[("dev set", &dev), ("predictions", predictions)])?;
        let devset = load_corpus(&dev, CorpusFormat::GenericJsonl)?;
        let preds = PredictionFile::load(predictions)?;
        let report = score_predictions(&devset, &preds, &self.registry, self.config.cleaning.workers)?;
        let path = self.out(&format!("eval_{name}.json"));
        write_json(&path, &report)?;
        eprint!("{}", report.to_text());
        emit(&json!({
            "command": "eval",
            "name": name,
            "total": report.total.accuracy,
            "correct": report.total.correct,
            "count": report.total.count,
            "report": path,
        }))
    }

    fn report(&self, command: ReportCommand) -> Result<()> {
        match command {
            ReportCommand::Coverage => {
                let corpus = self.cleaned()?;
                let repo = self.store().load()?;
                let report = coverage_report(&corpus, &repo, &self.config.labels);
                write_json(&self.out(COVERAGE), &report)?;
                print!("{}", report.to_text());
            }
            ReportCommand::Diff { a, b } => {
                let (ra, rb): (EvalReport, EvalReport) = (read_json(&a)?, read_json(&b)?);
                print!("{}", diff_reports(&ra, &rb)?.to_text());
            }
            ReportCommand::Table { reports } => {
                let mut loaded = Vec::new();
                for spec in &reports {
                    let (name, path) = spec
                        .split_once('=')
                        .ok_or_else(|| ConfigError(format!("expected name=path, got `{spec}`")))?;
                    loaded.push((name.to_string(), read_json::<EvalReport>(Path::new(path))?));
                }
                let rows: Vec<(&str, &EvalReport)> = loaded.iter().map(|(n, r)| (n.as_str(), r)).collect();
                print!("{}", EvalReport::table(&rows));
            }
        }
        Ok(())
    }

    fn compact(&self) -> Result<()> {
        let store = self.store();
        self.config.require(&[("repository", store.path())])?;
        let (before, after) = store.compact()?;
        emit(&json!({ "command": "compact", "before": before, "after": after }))
    }

    fn render_schema(&self, db_id: &str) -> Result<()> {
        if self.registry.get(db_id).is_none() {
            bail!(ConfigError(format!("database `{db_id}` is not in the registry")));
        }
        print!("{}", render_schema_fallback(db_id, &self.registry, self.config.cleaning.schema_sample_rows)?);
        Ok(())
    }
}
