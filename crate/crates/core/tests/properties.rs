mod common;

use std::collections::BTreeMap;

use cotsql_core::bootstrap::{load_seeds, BootstrapConfig, Bootstrapper, DecodingMode, Repository, Stage, ValidatedCotRecord};
use cotsql_core::corpus::{load_corpus, write_corpus, CorpusFormat, Difficulty, TrainInstance};
use cotsql_core::evalharness::{score_predictions, PredictionFile};
use cotsql_core::execval::{compare_results, CompareOptions, Label, ResultTable, Value, Verdict, VerdictDetail};
use cotsql_core::export::{select_cot_variant, CotVariant};
use cotsql_core::rationale::{parse_cot, serialize_cot, CotRationale, CotStep};
use cotsql_core::rationalizer::{procedural_rationalize, ProceduralTeacher, SuccessRule};
use cotsql_core::sqllex::{cosine, lex, rank_by_vector, tokenize_keywords, Exemplar, KeywordVocabulary, SqlVector, TokenKind};
use proptest::prelude::*;

fn vocab() -> KeywordVocabulary {
    KeywordVocabulary::sqlite_default()
}

fn sql_vector(counts: BTreeMap<String, u32>) -> SqlVector {
    SqlVector {
        vocab: vocab().version().to_string(),
        counts: counts.into_iter().filter(|(_, c)| *c > 0).collect(),
    }
}

fn counts_strategy() -> impl Strategy<Value = BTreeMap<String, u32>> {
    prop::collection::btree_map(
        prop::sample::select(vec!["SELECT", "FROM", "WHERE", "JOIN", "GROUP", "BY", "ORDER", "COUNT", "MAX", "AND"]).prop_map(String::from),
        0u32..6,
        0..8,
    )
}

struct Rec {
    id: String,
    v: SqlVector,
}

impl Exemplar for Rec {
    fn instance_id(&self) -> &str {
        &self.id
    }
    fn sql_vector(&self) -> &SqlVector {
        &self.v
    }
}

proptest! {
    #[test]
    fn lexer_tokens_are_ordered_substrings(sql in any::<String>()) {
        let lexed = lex(&sql);
        let mut end = 0;
        for t in &lexed.tokens {
            prop_assert!(t.span.start >= end && t.span.end > t.span.start && t.span.end <= sql.len());
            prop_assert!(sql.is_char_boundary(t.span.start) && sql.is_char_boundary(t.span.end));
            end = t.span.end;
        }
        let words: Vec<String> = lexed
            .tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Word)
            .map(|t| t.text(&sql).to_ascii_uppercase())
            .collect();
        for kw in tokenize_keywords(&sql, &vocab()) {
            prop_assert_eq!(kw.to_ascii_uppercase(), kw.clone());
            prop_assert!(words.contains(&kw));
        }
    }

    #[test]
    fn keywords_inside_literals_and_comments_are_ignored(
        head in "[a-z ]{0,12}( SELECT| FROM| where| t\\.x)*",
        hidden in "(SELECT|FROM|WHERE|JOIN| |x)*",
    ) {
        let v = vocab();
        let base = tokenize_keywords(&head, &v);
        for wrapped in [
            format!("{head} '{hidden}'"),
            format!("{head} \"{hidden}\""),
            format!("{head} -- {hidden}"),
            format!("{head} /* {hidden} */"),
        ] {
            prop_assert_eq!(tokenize_keywords(&wrapped, &v), base.clone());
        }
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(a in counts_strategy(), b in counts_strategy()) {
        let (a, b) = (sql_vector(a), sql_vector(b));
        let ab = cosine(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn ranking_is_scale_invariant_and_deterministic(
        query in counts_strategy(),
        repo in prop::collection::vec(counts_strategy(), 0..30),
        k in 1u32..50,
        n in 0usize..6,
    ) {
        let q = sql_vector(query);
        let repo: Vec<Rec> = repo
            .into_iter()
            .enumerate()
            .map(|(i, c)| Rec { id: format!("{:02}", (i * 7) % 30), v: sql_vector(c) })
            .collect();
        let order = |q: &SqlVector| -> Vec<String> {
            rank_by_vector(q, None, &repo, n).unwrap().iter().map(|r| r.exemplar.id.clone()).collect()
        };
        let plain = order(&q);
        prop_assert_eq!(plain.len(), n.min(repo.len()));
        prop_assert_eq!(order(&q.scaled(k)), plain.clone());
        prop_assert_eq!(order(&q), plain);
    }
}

fn text_line() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 ,.:()'`*_-]{0,30}[A-Za-z0-9.)]".prop_map(|mut s| {
        while s.contains("**") {
            s = s.replace("**", "*");
        }
        s
    })
}

fn prose() -> impl Strategy<Value = String> {
    prop::collection::vec(text_line(), 0..4).prop_map(|lines| lines.join("\n"))
}

fn step_strategy() -> impl Strategy<Value = (String, String, Option<String>, String)> {
    (
        text_line(),
        prose(),
        prop::option::of(prop::collection::vec("SELECT [a-z_]{1,8}( FROM [a-z]{1,6})?", 1..4).prop_map(|l| l.join("\n"))),
        prose(),
    )
}

fn cot_strategy() -> impl Strategy<Value = CotRationale> {
    (
        prop::collection::vec(step_strategy(), 1..7),
        "SELECT [a-z]{1,8} FROM [a-z]{1,8}",
        prop::option::of(text_line()),
    )
        .prop_map(|(mut steps, last_sql, trailer)| {
            steps.push(("Write the final query".into(), String::new(), Some(last_sql), String::new()));
            let n = steps.len();
            CotRationale {
                steps: steps
                    .into_iter()
                    .enumerate()
                    .map(|(i, (title, prose, sql, notes))| CotStep {
                        index: i as u32 + 1,
                        title,
                        prose,
                        notes: if sql.is_some() && i + 1 < n { notes } else { String::new() },
                        sql,
                    })
                    .collect(),
                trailer,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn rationale_round_trips(cot in cot_strategy()) {
        let md = serialize_cot(&cot).unwrap();
        let back = parse_cot(&md).unwrap();
        prop_assert_eq!(&back, &cot);
        prop_assert_eq!(serialize_cot(&back).unwrap(), md);
        let fences = cot.steps.iter().filter(|s| s.sql.is_some()).count();
        prop_assert_eq!(back.sql_steps().count(), fences);
    }

    #[test]
    fn serializable_text_always_round_trips(
        title in "[^\n*]{1,20}",
        prose in "(Step|\\*\\*|```sql|```|--|#| |x|\n){0,12}",
        sql in "(SELECT|```| |x|\n){1,8}",
    ) {
        let cot = CotRationale {
            steps: vec![
                CotStep { index: 1, title: title.trim().to_string(), prose: prose.trim().to_string(), sql: None, notes: String::new() },
                CotStep { index: 2, title: "Final".into(), prose: String::new(), sql: Some(sql), notes: String::new() },
            ],
            trailer: None,
        };
        if let Ok(md) = serialize_cot(&cot) {
            prop_assert_eq!(parse_cot(&md).unwrap(), cot);
        }
    }
}

fn value_strategy() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        (-3i64..4).prop_map(Value::Integer),
        prop::sample::select(vec![0.5, 2.0, -1.25]).prop_map(Value::real),
        "[ab]{0,2}".prop_map(Value::Text),
        (0u8..3).prop_map(|b| Value::blob(&[b])),
    ]
}

fn table_strategy() -> impl Strategy<Value = ResultTable> {
    (1usize..=6).prop_flat_map(|cols| {
        prop::collection::vec(prop::collection::vec(value_strategy(), cols), 0..50).prop_map(move |rows| ResultTable::new(cols, rows))
    })
}

proptest! {
    #[test]
    fn comparison_is_an_equivalence_check(a in table_strategy(), b in table_strategy(), seed in any::<u64>()) {
        for opts in [CompareOptions::multiset(), CompareOptions::sequence()] {
            prop_assert!(compare_results(&a, &a, opts).unwrap());
            prop_assert_eq!(compare_results(&a, &b, opts).unwrap(), compare_results(&b, &a, opts).unwrap());
        }
        use rand::{seq::SliceRandom, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut pa = a.clone();
        pa.rows.shuffle(&mut rng);
        let mut pb = b.clone();
        pb.rows.shuffle(&mut rng);
        let m = CompareOptions::multiset();
        prop_assert_eq!(compare_results(&pa, &pb, m).unwrap(), compare_results(&a, &b, m).unwrap());
    }

    #[test]
    fn generic_jsonl_round_trips(instances in prop::collection::vec(
        (
            "[a-z0-9_]{1,8}",
            "[a-z]{1,6}",
            any::<String>(),
            any::<String>(),
            any::<String>(),
            prop::sample::select(Difficulty::ALL.to_vec()),
            prop::option::of(".{1,10}"),
        ),
        0..6,
    )) {
        let instances: Vec<TrainInstance> = instances
            .into_iter()
            .enumerate()
            .map(|(i, (id, db, question, gold_sql, schema_text, difficulty, evidence))| TrainInstance {
                instance_id: format!("{id}_{i}"), db_id: db, question, gold_sql, schema_text, difficulty, evidence,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &instances).unwrap();
        prop_assert_eq!(load_corpus(&path, CorpusFormat::GenericJsonl).unwrap(), instances);
    }

    #[test]
    fn short_variant_never_has_more_steps_than_long(lengths in prop::collection::vec(1usize..8, 1..6)) {
        let v = vocab();
        let verdict = Verdict {
            label: Label::Positive,
            detail: VerdictDetail::Match,
            step_execution: Vec::new(),
            mismatch: None,
            error: None,
        };
        let records: Vec<ValidatedCotRecord> = lengths
            .iter()
            .enumerate()
            .map(|(i, &extra)| {
                let mut md = String::new();
                for s in 1..=extra {
                    md.push_str(&format!("**Step {s}: Part {i}**\n--\n\nText {s}.\n\n"));
                }
                md.push_str(&format!("**Step {}: Final**\n--\n\n```sql\nSELECT {i}\n```\n", extra + 1));
                let cot = parse_cot(&md).unwrap();
                ValidatedCotRecord::new("x", &cot, verdict.clone(), Stage::Teacher, 1, DecodingMode::Greedy, &v).unwrap()
            })
            .collect();
        let refs: Vec<&ValidatedCotRecord> = records.iter().collect();
        let short = select_cot_variant(&refs, CotVariant::CotShort).unwrap();
        let long = select_cot_variant(&refs, CotVariant::CotLong).unwrap();
        prop_assert!(short.step_count <= long.step_count);
        prop_assert_eq!(short.step_count, lengths.iter().min().unwrap() + 1);
        prop_assert_eq!(long.step_count, lengths.iter().max().unwrap() + 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bootstrap_is_monotone_bounded_and_deterministic(budget in 0usize..3, few_shot_n in 1usize..5, max_iterations in 1u32..6) {
        let dir = tempfile::tempdir().unwrap();
        let (layout, registry, corpus) = common::demo_inputs(dir.path());
        let v = vocab();
        let teacher = ProceduralTeacher::new(&corpus, &registry, SuccessRule::FeatureBudget { features: Vec::new(), budget }).unwrap();
        let config = BootstrapConfig { few_shot_n, max_iterations, ..Default::default() };
        let boot = Bootstrapper::new(&corpus, &registry, &v, &teacher, config).unwrap();
        let (seeds, _) = boot.validate_seeds(&load_seeds(&layout.seeds_dir).unwrap()).unwrap();
        let a = boot.bootstrap_loop(seeds.clone(), None).unwrap();
        let b = boot.bootstrap_loop(seeds.clone(), None).unwrap();
        prop_assert!(a.reports.len() as u32 <= max_iterations);

        let key = |r: &Repository| r.records().iter().map(|x| (x.instance_id.clone(), x.cot_hash.clone())).collect::<Vec<_>>();
        prop_assert_eq!(key(&a.repository), key(&b.repository));

        let mut covered: std::collections::BTreeSet<String> = seeds.iter().map(|s| s.instance_id.clone()).collect();
        for r in &a.reports {
            let before = covered.clone();
            covered.extend(r.new_records.iter().map(|x| x.instance_id.clone()));
            prop_assert!(covered.is_superset(&before));
            prop_assert!(r.new_records.iter().all(|x| !before.contains(&x.instance_id)));
        }
        prop_assert_eq!(covered.len(), a.repository.covered_instances().len());
    }
}

#[test]
fn cot_predictions_score_like_their_final_sql() {
    let dir = tempfile::tempdir().unwrap();
    let (layout, registry, _) = common::demo_inputs(dir.path());
    let dev = load_corpus(&layout.dev, CorpusFormat::GenericJsonl).unwrap();
    let mut as_cot = Vec::new();
    let mut as_sql = Vec::new();
    for (i, inst) in dev.iter().enumerate() {
        let mut target = inst.clone();
        if i % 3 == 0 {
            target.gold_sql = format!("SELECT * FROM ({}) LIMIT 0", inst.gold_sql);
        }
        let cot = procedural_rationalize(&target, &registry).unwrap();
        as_sql.push((inst.instance_id.clone(), cot.final_sql().to_string()));
        as_cot.push((inst.instance_id.clone(), serialize_cot(&cot).unwrap()));
    }
    let a = score_predictions(&dev, &PredictionFile::from_pairs(as_cot).unwrap(), &registry, 2).unwrap();
    let mut reversed = as_sql.clone();
    reversed.reverse();
    let b = score_predictions(&dev, &PredictionFile::from_pairs(reversed).unwrap(), &registry, 3).unwrap();
    assert_eq!(a, b);
    assert!(a.total.correct > 0 && a.total.correct < dev.len());
}
