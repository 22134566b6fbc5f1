//! Token-level structural probes used by validation and the offline mocks.

use std::collections::BTreeSet;

use super::lexer::{lex, TokenKind};

/// True when the outermost query carries an `ORDER BY` (an `ORDER` word at
/// parenthesis depth 0). This is a lexical heuristic, not a parse.
pub fn has_top_level_order_by(sql: &str) -> bool {
    let tokens = lex(sql).tokens;
    tokens.iter().enumerate().any(|(i, t)| {
        t.depth == 0
            && t.is_word(sql, "ORDER")
            && tokens.get(i + 1).is_some_and(|n| n.is_word(sql, "BY"))
            && (i == 0 || tokens[i - 1].kind != TokenKind::Dot)
    })
}

/// Coarse structural features of a statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    Join,
    GroupBy,
    Having,
    OrderBy,
    Limit,
    Distinct,
    Case,
    Subquery,
    SetOperation,
    CommonTableExpression,
    Window,
    Exists,
    Aggregate,
}

impl Feature {
    pub const ALL: [Feature; 13] = [
        Feature::Join,
        Feature::GroupBy,
        Feature::Having,
        Feature::OrderBy,
        Feature::Limit,
        Feature::Distinct,
        Feature::Case,
        Feature::Subquery,
        Feature::SetOperation,
        Feature::CommonTableExpression,
        Feature::Window,
        Feature::Exists,
        Feature::Aggregate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Join => "join",
            Feature::GroupBy => "group_by",
            Feature::Having => "having",
            Feature::OrderBy => "order_by",
            Feature::Limit => "limit",
            Feature::Distinct => "distinct",
            Feature::Case => "case",
            Feature::Subquery => "subquery",
            Feature::SetOperation => "set_operation",
            Feature::CommonTableExpression => "cte",
            Feature::Window => "window",
            Feature::Exists => "exists",
            Feature::Aggregate => "aggregate",
        }
    }

    pub fn from_name(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.name() == name)
    }
}

pub fn structural_features(sql: &str) -> BTreeSet<Feature> {
    let lexed = lex(sql);
    let mut out = BTreeSet::new();
    let mut prev_dot = false;
    for (i, t) in lexed.tokens.iter().enumerate() {
        let qualified = prev_dot;
        prev_dot = t.kind == TokenKind::Dot;
        if t.kind != TokenKind::Word || qualified {
            continue;
        }
        let next_is_paren = lexed
            .tokens
            .get(i + 1)
            .is_some_and(|n| n.kind == TokenKind::LParen);
        let word = t.text(sql).to_ascii_uppercase();
        let feature = match word.as_str() {
            "JOIN" => Feature::Join,
            "GROUP" => Feature::GroupBy,
            "HAVING" => Feature::Having,
            "ORDER" => Feature::OrderBy,
            "LIMIT" => Feature::Limit,
            "DISTINCT" => Feature::Distinct,
            "CASE" => Feature::Case,
            "SELECT" if t.depth > 0 => Feature::Subquery,
            "UNION" | "INTERSECT" | "EXCEPT" => Feature::SetOperation,
            "WITH" if i == 0 => Feature::CommonTableExpression,
            "OVER" => Feature::Window,
            "EXISTS" => Feature::Exists,
            "COUNT" | "SUM" | "AVG" | "MIN" | "MAX" if next_is_paren => Feature::Aggregate,
            _ => continue,
        };
        out.insert(feature);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_level_order_detection() {
        assert!(has_top_level_order_by("SELECT a FROM t ORDER BY a"));
        assert!(!has_top_level_order_by("SELECT a FROM (SELECT a FROM t ORDER BY a)"));
        assert!(!has_top_level_order_by("SELECT RANK() OVER (ORDER BY n) FROM t"));
        assert!(!has_top_level_order_by("SELECT 'ORDER BY' FROM t -- ORDER BY"));
        assert!(!has_top_level_order_by("SELECT t.order FROM t"));
    }

    #[test]
    fn features_of_worked_query() {
        let f = structural_features(
            "SELECT COUNT(ra.student_id) FROM prof JOIN ra ON prof.prof_id = ra.prof_id \
             WHERE prof.popularity = (SELECT MAX(popularity) FROM prof) AND ra.capability = 5",
        );
        assert_eq!(
            f,
            BTreeSet::from([Feature::Join, Feature::Subquery, Feature::Aggregate])
        );
    }

    #[test]
    fn feature_names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(Feature::from_name(f.name()), Some(f));
        }
    }
}
