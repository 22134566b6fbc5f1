use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use cotsql_bench::{query, rationale_markdown, repository, tables};
use cotsql_core::execval::{compare_results, CompareOptions};
use cotsql_core::rationale::parse_cot;
use cotsql_core::sqllex::{rank_examples, tokenize_keywords, KeywordVocabulary};

fn lexing(c: &mut Criterion) {
    let vocab = KeywordVocabulary::sqlite_default();
    let sql = query(0xff);
    c.bench_function("tokenize_keywords", |b| b.iter(|| tokenize_keywords(black_box(&sql), &vocab)));
}

fn ranking(c: &mut Criterion) {
    let vocab = KeywordVocabulary::sqlite_default();
    let mut group = c.benchmark_group("rank_examples");
    for n in [1_000, 10_000] {
        let repo = repository(n, &vocab);
        let q = query(37);
        group.bench_with_input(BenchmarkId::from_parameter(n), &repo, |b, repo| {
            b.iter(|| rank_examples(black_box(&q), Some("ex_000037"), repo, 3, &vocab).unwrap())
        });
    }
    group.finish();
}

fn comparing(c: &mut Criterion) {
    let mut group = c.benchmark_group("compare_results");
    for rows in [100, 10_000] {
        let (a, b) = tables(rows);
        group.bench_with_input(BenchmarkId::new("multiset", rows), &(a, b), |bench, (a, b)| {
            bench.iter(|| assert!(compare_results(a, b, CompareOptions::multiset()).unwrap()))
        });
    }
    group.finish();
}

fn parsing(c: &mut Criterion) {
    let md = rationale_markdown(8);
    c.bench_function("parse_cot/8_steps", |b| b.iter(|| parse_cot(black_box(&md)).unwrap()));
}

criterion_group!(benches, lexing, ranking, comparing, parsing);
criterion_main!(benches);
