use super::vector::{cosine, vectorize, ExactScore};
use super::{KeywordVocabulary, SqlLexError, SqlVector};

/// Anything that can be offered as a few-shot exemplar.
pub trait Exemplar {
    fn instance_id(&self) -> &str;
    /// Keyword vector of the exemplar's final SQL.
    fn sql_vector(&self) -> &SqlVector;
    /// Only validated-positive exemplars may be selected.
    fn is_eligible(&self) -> bool {
        true
    }
    /// Secondary tie-break between exemplars of the same instance.
    fn tie_key(&self) -> &str {
        ""
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Ranked<'a, E> {
    pub exemplar: &'a E,
    pub score: f64,
}

/// Selects the `n` eligible exemplars most similar to `query_sql`.
///
/// Ordering is by descending cosine, then ascending instance id, then
/// ascending tie key. Exemplars belonging to `exclude_instance` are skipped.
/// Similarities are compared exactly, so the order is unchanged when the
/// query vector is scaled.
pub fn rank_examples<'a, E: Exemplar>(
    query_sql: &str,
    exclude_instance: Option<&str>,
    repo: &'a [E],
    n: usize,
    vocab: &KeywordVocabulary,
) -> Result<Vec<Ranked<'a, E>>, SqlLexError> {
    let query = vectorize(query_sql, vocab);
    rank_by_vector(&query, exclude_instance, repo, n)
}

pub fn rank_by_vector<'a, E: Exemplar>(
    query: &SqlVector,
    exclude_instance: Option<&str>,
    repo: &'a [E],
    n: usize,
) -> Result<Vec<Ranked<'a, E>>, SqlLexError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut scored = Vec::with_capacity(repo.len());
    for ex in repo {
        if !ex.is_eligible() || exclude_instance == Some(ex.instance_id()) {
            continue;
        }
        scored.push((ExactScore::new(query, ex.sql_vector())?, ex));
    }
    scored.sort_by(|(sa, a), (sb, b)| {
        sb.cmp_similarity(sa)
            .then_with(|| a.instance_id().cmp(b.instance_id()))
            .then_with(|| a.tie_key().cmp(b.tie_key()))
    });
    scored.truncate(n);
    scored
        .into_iter()
        .map(|(_, ex)| {
            Ok(Ranked {
                exemplar: ex,
                score: cosine(query, ex.sql_vector())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Ex {
        id: String,
        v: SqlVector,
        ok: bool,
    }

    impl Exemplar for Ex {
        fn instance_id(&self) -> &str {
            &self.id
        }
        fn sql_vector(&self) -> &SqlVector {
            &self.v
        }
        fn is_eligible(&self) -> bool {
            self.ok
        }
    }

    fn repo(vocab: &KeywordVocabulary, items: &[(&str, &str)]) -> Vec<Ex> {
        items
            .iter()
            .map(|(id, sql)| Ex {
                id: id.to_string(),
                v: vectorize(sql, vocab),
                ok: true,
            })
            .collect()
    }

    #[test]
    fn zero_n_is_empty() {
        let vocab = KeywordVocabulary::sqlite_default();
        let r = repo(&vocab, &[("a", "SELECT 1")]);
        assert!(rank_examples("SELECT 1", None, &r, 0, &vocab).unwrap().is_empty());
    }

    #[test]
    fn exact_multiset_ranks_first() {
        let vocab = KeywordVocabulary::sqlite_default();
        let r = repo(
            &vocab,
            &[
                ("e1", "SELECT a FROM t"),
                ("e2", "SELECT a FROM t JOIN u ON t.id = u.id"),
                ("e3", "SELECT COUNT(*) FROM t GROUP BY a"),
                ("e4", "SELECT a FROM t JOIN u ON x = y WHERE b = 1"),
                ("e5", "SELECT DISTINCT a FROM t ORDER BY a"),
            ],
        );
        let top = rank_examples("select b from s join v on p = q where c > 2", None, &r, 3, &vocab).unwrap();
        assert_eq!(top[0].exemplar.id, "e4");
        assert_eq!(top[0].score, 1.0);
        assert_eq!(top.len(), 3);
        assert!(top.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn ties_break_by_instance_id_and_self_is_excluded() {
        let vocab = KeywordVocabulary::sqlite_default();
        let r = repo(
            &vocab,
            &[("c", "SELECT a FROM t"), ("a", "SELECT b FROM u"), ("q", "SELECT a FROM t"), ("b", "SELECT c FROM v")],
        );
        let top = rank_examples("SELECT z FROM w", Some("q"), &r, 10, &vocab).unwrap();
        let ids: Vec<&str> = top.iter().map(|r| r.exemplar.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn ineligible_exemplars_are_skipped() {
        let vocab = KeywordVocabulary::sqlite_default();
        let mut r = repo(&vocab, &[("a", "SELECT 1"), ("b", "SELECT 2")]);
        r[0].ok = false;
        let top = rank_examples("SELECT 3", None, &r, 5, &vocab).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].exemplar.id, "b");
    }
}
