//! Text-to-SQL: schema filtering, generation with a rewrite pass, and the
//! explain/execute refinement chain.

mod filter;
mod generate;
pub mod ident;
mod refine;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::db::{Database, SchemaSnapshot};
use crate::domain::{ClarifiedTask, DecompositionPlan, QueryResult, SqlArtifact, SqlStatus, Value};
use crate::hdc::HdcArtifacts;
use crate::llm::{CallError, Caller};
use crate::vector::{IndexError, VectorIndex};

pub use filter::{reduce_subsets, table_block_line};
pub use generate::subset_violations;
pub use ident::{analyze, rewrite, Analysis, ColumnRef};

pub mod tags {
    pub const FILTER: &str = "sql.filter";
    pub const GENERATE: &str = "sql.generate";
    pub const GENERATE_RETRY: &str = "sql.generate.retry";
    pub const REFINE: &str = "sql.refine";
}

/// Rows of an earlier step shown to later steps.
pub const PRIOR_PREVIEW_ROWS: usize = 20;

#[derive(Debug, Error)]
pub enum SqlError {
    #[error("no table of `{0}` is relevant to the task")]
    EmptySubset(String),
    #[error(transparent)]
    Call(#[from] CallError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("generated SQL leaves the chosen schema: {}", .0.join(", "))]
    OutOfSubsetReference(Vec<String>),
    #[error("refinement gave up: {}", .0.error.clone().unwrap_or_default())]
    RefinementExhausted(Box<SqlArtifact>),
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct SubsetEntry {
    pub table: String,
    pub columns: Vec<String>,
}

/// Tables and columns a task needs, in first-seen order.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq, Default)]
pub struct SchemaSubset {
    pub entries: Vec<SubsetEntry>,
}

impl SchemaSubset {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, table: &str) -> Option<&SubsetEntry> {
        self.entries.iter().find(|e| e.table.eq_ignore_ascii_case(table))
    }

    pub fn tables(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.table.as_str()).collect()
    }

    pub fn contains(&self, table: &str, column: &str) -> bool {
        self.entry(table)
            .is_some_and(|e| e.columns.iter().any(|c| c.eq_ignore_ascii_case(column)))
    }

    /// Entries that do not resolve against `schema`, and duplicate pairs.
    pub fn problems(&self, schema: &SchemaSnapshot) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            let Some(t) = schema.table(&e.table) else {
                out.push(format!("unknown table `{}`", e.table));
                continue;
            };
            for c in &e.columns {
                if t.column(c).is_none() {
                    out.push(format!("unknown column `{}.{}`", e.table, c));
                }
                if !seen.insert((e.table.to_ascii_lowercase(), c.to_ascii_lowercase())) {
                    out.push(format!("duplicate `{}.{}`", e.table, c));
                }
            }
        }
        out
    }
}

/// What an earlier plan step left for the later ones.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorStep {
    pub description: String,
    pub sql: String,
    pub preview: Option<QueryResult>,
    pub error: Option<String>,
}

impl PriorStep {
    fn from_outcome(task: &ClarifiedTask, outcome: &Outcome) -> Self {
        Self {
            description: task.refined_task.clone(),
            sql: outcome.artifact.sql.clone(),
            preview: outcome.result.as_ref().map(|r| r.preview(PRIOR_PREVIEW_ROWS)),
            error: outcome.artifact.error.clone(),
        }
    }
}

/// An artifact and, when it executed, the rows behind its preview.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub artifact: SqlArtifact,
    pub result: Option<QueryResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanRun {
    pub outcomes: Vec<Outcome>,
    /// One-based step numbers that did not execute.
    pub failed_steps: Vec<usize>,
}

impl PlanRun {
    pub fn artifacts(&self) -> Vec<SqlArtifact> {
        self.outcomes.iter().map(|o| o.artifact.clone()).collect()
    }
}

/// Stable id for an artifact of `task` at position `step` of a run.
pub fn artifact_id(database: &str, task: &ClarifiedTask, step: usize) -> String {
    let mut h = Sha256::new();
    h.update(database.as_bytes());
    h.update([0]);
    h.update(task.original_question.as_bytes());
    h.update([0]);
    h.update(task.refined_task.as_bytes());
    h.update([0]);
    h.update(step.to_le_bytes());
    let digest = h.finalize();
    let mut out = String::from("sql-");
    for b in &digest[..8] {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Compact rendering of a result for prompts: header then one line per row.
pub fn result_lines(result: &QueryResult, rows: usize) -> Vec<String> {
    let mut out = vec![result.column_names().join(" | ")];
    for row in result.rows.iter().take(rows) {
        let cells: Vec<String> = row
            .iter()
            .map(|v| match v {
                Value::Text(s) => crate::hdc::clip_chars(&crate::hdc::one_line(s), 60),
                other => other.to_string(),
            })
            .collect();
        out.push(cells.join(" | "));
    }
    out
}

/// Question to SQL against one database and its data context.
pub struct SqlEngine<'a> {
    pub caller: Caller<'a>,
    pub index: &'a VectorIndex,
    pub hdc: &'a HdcArtifacts,
    pub db: &'a dyn Database,
}

impl<'a> SqlEngine<'a> {
    pub fn new(caller: Caller<'a>, index: &'a VectorIndex, hdc: &'a HdcArtifacts, db: &'a dyn Database) -> Self {
        Self { caller, index, hdc, db }
    }

    fn schema(&self) -> &SchemaSnapshot {
        &self.hdc.schema
    }

    fn unanswerable(&self, task: &ClarifiedTask, step: usize, reason: String) -> Outcome {
        Outcome {
            artifact: SqlArtifact {
                id: artifact_id(&self.hdc.database, task, step),
                task: task.clone(),
                sql: String::new(),
                status: SqlStatus::Failed,
                answerable: false,
                refinement_trace: Vec::new(),
                result_preview: None,
                error: Some(reason),
            },
            result: None,
        }
    }

    fn failed(&self, task: &ClarifiedTask, step: usize, sql: String, reason: String) -> Outcome {
        let mut o = self.unanswerable(task, step, reason);
        o.artifact.sql = sql;
        o.artifact.answerable = true;
        o
    }

    /// Filter, generate and refine for one task. Never fails: problems end
    /// up in the artifact.
    pub fn answer(&self, task: &ClarifiedTask, prior: &[PriorStep], step: usize) -> Outcome {
        let subset = match self.filter_schema(task, self.caller.config.schema_filter_top_n) {
            Ok(s) => s,
            Err(SqlError::EmptySubset(db)) => {
                return self.unanswerable(task, step, format!("not answerable: no table of `{db}` fits the task"))
            }
            Err(e) => return self.failed(task, step, String::new(), e.to_string()),
        };
        let sql = match self.generate_sql(task, &subset, prior) {
            Ok(s) if s.trim().is_empty() => {
                return self.unanswerable(task, step, "not answerable: no query fits the task".into())
            }
            Ok(s) => s,
            Err(e) => return self.failed(task, step, String::new(), e.to_string()),
        };
        match self.refine_outcome(task, &sql, step) {
            Ok(o) => o,
            Err(SqlError::RefinementExhausted(a)) => Outcome {
                artifact: *a,
                result: None,
            },
            Err(e) => self.failed(task, step, sql, e.to_string()),
        }
    }

    /// One artifact per plan step, in order; later steps see earlier ones.
    pub fn run_subtasks(&self, plan: &DecompositionPlan) -> PlanRun {
        let tasks: Vec<ClarifiedTask> = if plan.single_sql_answerable || plan.subtasks.is_empty() {
            vec![plan.parent.clone()]
        } else {
            plan.subtasks
                .iter()
                .map(|s| ClarifiedTask {
                    original_question: plan.parent.original_question.clone(),
                    main_concepts: plan.parent.main_concepts.clone(),
                    ambiguities: plan.parent.ambiguities.clone(),
                    refined_task: s.description.clone(),
                    detailed_description: if s.detail.trim().is_empty() {
                        s.description.clone()
                    } else {
                        s.detail.clone()
                    },
                })
                .collect()
        };
        let mut prior: Vec<PriorStep> = Vec::new();
        let mut run = PlanRun {
            outcomes: Vec::new(),
            failed_steps: Vec::new(),
        };
        for (i, task) in tasks.iter().enumerate() {
            let outcome = self.answer(task, &prior, i);
            if outcome.artifact.status != SqlStatus::Executed {
                run.failed_steps.push(i + 1);
            }
            prior.push(PriorStep::from_outcome(task, &outcome));
            run.outcomes.push(outcome);
        }
        run
    }
}
