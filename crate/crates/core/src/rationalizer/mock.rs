//! An offline stand-in for teacher and rationalizer models.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::procedural::procedural_rationalize_in;
use crate::bootstrap::{parse_prompt, TeacherClient, TeacherError, TeacherRequest, TeacherResponse};
use crate::corpus::TrainInstance;
use crate::execval::Session;
use crate::rationale::{parse_cot, serialize_cot, CotRationale, CotStep};
use crate::registry::DatabaseRegistry;
use crate::sqllex::{structural_features, Feature};

/// Final SQL of a deliberately wrong answer: it returns no rows, and gold
/// queries that survived cleaning always return some.
pub const WRONG_ANSWER_SQL: &str = "SELECT NULL WHERE 0";

/// When the mock produces a correct rationale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SuccessRule {
    Always,
    Never,
    /// Succeeds iff at most `budget` of the gold statement's structural
    /// features (restricted to `features`, or all when empty) are absent
    /// from every exemplar's final SQL. Answer-aware prompts always succeed.
    FeatureBudget {
        #[serde(default)]
        features: Vec<String>,
        budget: usize,
    },
}

impl Default for SuccessRule {
    fn default() -> Self {
        SuccessRule::FeatureBudget {
            features: Vec::new(),
            budget: 1,
        }
    }
}

/// Answers with [`procedural_rationalize_in`] output for its reference
/// corpus, or with a wrong answer when its rule says so. The target instance
/// is taken from `request.instance_id`, or else matched on the prompt's
/// question.
pub struct ProceduralTeacher {
    instances: HashMap<String, TrainInstance>,
    by_question: HashMap<String, String>,
    registry: DatabaseRegistry,
    rule: SuccessRule,
    tracked: Option<BTreeSet<Feature>>,
}

impl ProceduralTeacher {
    pub fn new(corpus: &[TrainInstance], registry: &DatabaseRegistry, rule: SuccessRule) -> Result<Self, String> {
        let tracked = match &rule {
            SuccessRule::FeatureBudget { features, .. } if !features.is_empty() => Some(
                features
                    .iter()
                    .map(|f| Feature::from_name(f).ok_or_else(|| format!("unknown feature `{f}`")))
                    .collect::<Result<BTreeSet<_>, _>>()?,
            ),
            _ => None,
        };
        Ok(Self {
            instances: corpus.iter().map(|i| (i.instance_id.clone(), i.clone())).collect(),
            by_question: corpus
                .iter()
                .map(|i| (i.question.trim().to_string(), i.instance_id.clone()))
                .collect(),
            registry: registry.clone(),
            rule,
            tracked,
        })
    }

    fn features(&self, sql: &str) -> BTreeSet<Feature> {
        let all = structural_features(sql);
        match &self.tracked {
            Some(t) => all.intersection(t).copied().collect(),
            None => all,
        }
    }

    fn succeeds(&self, gold_sql: &str, exemplars: &[(String, String)], answer_aware: bool) -> bool {
        match &self.rule {
            SuccessRule::Always => true,
            SuccessRule::Never => false,
            SuccessRule::FeatureBudget { budget, .. } => {
                if answer_aware {
                    return true;
                }
                let known: BTreeSet<Feature> = exemplars
                    .iter()
                    .filter_map(|(_, md)| parse_cot(md).ok())
                    .flat_map(|cot| self.features(cot.final_sql()))
                    .collect();
                self.features(gold_sql).difference(&known).count() <= *budget
            }
        }
    }
}

fn wrong_answer(tables_hint: &str) -> CotRationale {
    CotRationale {
        steps: vec![
            CotStep {
                index: 1,
                title: "Identify the required tables and columns".into(),
                prose: tables_hint.into(),
                sql: None,
                notes: String::new(),
            },
            CotStep {
                index: 2,
                title: "Write the final query".into(),
                prose: "Return the answer.".into(),
                sql: Some(WRONG_ANSWER_SQL.into()),
                notes: String::new(),
            },
        ],
        trailer: None,
    }
}

impl TeacherClient for ProceduralTeacher {
    fn complete(&self, request: &TeacherRequest) -> Result<TeacherResponse, TeacherError> {
        let parsed = parse_prompt(&request.prompt)
            .ok_or_else(|| TeacherError::Rejected("prompt does not follow the source layout".into()))?;
        let id = request
            .instance_id
            .clone()
            .or_else(|| self.by_question.get(&parsed.question).cloned())
            .ok_or_else(|| TeacherError::Rejected("cannot identify the target instance".into()))?;
        let instance = self
            .instances
            .get(&id)
            .ok_or_else(|| TeacherError::Rejected(format!("unknown instance `{id}`")))?;
        // The reference gold is used even when the prompt carries one, so a
        // corrupted gold in the prompt yields a mismatching answer.
        let target = instance;
        let cot = if self.succeeds(&target.gold_sql, &parsed.exemplars, parsed.gold_sql.is_some()) {
            let session = Session::open(&self.registry, &target.db_id).map_err(|e| TeacherError::Rejected(e.to_string()))?;
            procedural_rationalize_in(&session, target)
        } else {
            wrong_answer("The question needs a single value.")
        };
        let text = serialize_cot(&cot).map_err(|e| TeacherError::Rejected(e.to_string()))?;
        Ok(TeacherResponse::text(text))
    }
}
