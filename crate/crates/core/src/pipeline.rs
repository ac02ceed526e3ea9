//! One question end to end: clarify, decompose, answer each step, chart.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::recommend_chart;
use crate::db::Database;
use crate::domain::{ChartSpec, ClarifiedTask, DecompositionPlan, PipelineConfig, SqlArtifact, SqlStatus};
use crate::hdc::{BuildReport, HdcArtifacts, HdcBuilder, HdcError};
use crate::llm::{Caller, Gateway};
use crate::question::{FeedbackLedger, QuestionEngine, QuestionError};
use crate::sql::SqlEngine;
use crate::vector::VectorIndex;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("data context for `{0}` is not built")]
    NotReady(String),
    #[error(transparent)]
    Question(#[from] QuestionError),
    #[error(transparent)]
    Hdc(#[from] HdcError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Everything produced for one question.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct AnswerBundle {
    pub database: String,
    pub question: String,
    pub clarified: ClarifiedTask,
    pub plan: DecompositionPlan,
    pub artifacts: Vec<SqlArtifact>,
    /// One chart per artifact; a table for those that did not execute.
    pub charts: Vec<ChartSpec>,
    /// One-based plan steps that did not execute.
    pub failed_steps: Vec<usize>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl AnswerBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn executed(&self) -> impl Iterator<Item = (&SqlArtifact, &ChartSpec)> {
        self.artifacts
            .iter()
            .zip(&self.charts)
            .filter(|(a, _)| a.status == SqlStatus::Executed)
    }

    /// Id under which the plan can be rated.
    pub fn plan_id(&self) -> String {
        format!("plan-{}", self.artifacts.first().map(|a| a.id.trim_start_matches("sql-")).unwrap_or("none"))
    }
}

/// Shared handles for one datasource.
pub struct Pipeline {
    pub gateway: Arc<Gateway>,
    pub index: Arc<VectorIndex>,
    pub db: Arc<dyn Database>,
    pub config: PipelineConfig,
    pub ledger: FeedbackLedger,
}

impl Pipeline {
    pub fn new(gateway: Arc<Gateway>, index: Arc<VectorIndex>, db: Arc<dyn Database>, config: PipelineConfig) -> Self {
        Self {
            gateway,
            index,
            db,
            config,
            ledger: FeedbackLedger::new(),
        }
    }

    pub fn caller(&self) -> Caller<'_> {
        Caller::new(&self.gateway, &self.config)
    }

    pub fn build_hdc(&self) -> Result<(HdcArtifacts, BuildReport), HdcError> {
        HdcBuilder::new(self.gateway.clone(), self.index.clone(), self.db.clone(), self.config.clone()).build()
    }

    pub fn ask(&self, hdc: &HdcArtifacts, question: &str) -> Result<AnswerBundle, PipelineError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism.max(1))
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        pool.install(|| self.ask_inner(hdc, question))
    }

    fn ask_inner(&self, hdc: &HdcArtifacts, question: &str) -> Result<AnswerBundle, PipelineError> {
        let caller = self.caller();
        let questions = QuestionEngine::new(caller, &self.index, hdc);
        let clarified = match questions.clarify(question) {
            Ok(c) => c,
            Err(QuestionError::NoContext(db)) => return Err(PipelineError::NotReady(db)),
            Err(e) => return Err(e.into()),
        };
        let (plan, mut notes) = questions.decompose(&clarified)?;
        let engine = SqlEngine::new(caller, &self.index, hdc, self.db.as_ref());
        let run = engine.run_subtasks(&plan);
        let mut artifacts = Vec::with_capacity(run.outcomes.len());
        let mut charts = Vec::with_capacity(run.outcomes.len());
        for o in run.outcomes {
            let chart = match &o.result {
                Some(r) => recommend_chart(Some(&caller), &o.artifact.task, r),
                None => ChartSpec::table(),
            };
            if let Some(e) = &o.artifact.error {
                notes.push(format!("{}: {}", o.artifact.id, e));
            }
            if o.artifact.status == SqlStatus::Executed {
                self.ledger
                    .register(&o.artifact.id, &hdc.database, "sql", &o.artifact.task.refined_task, &o.artifact.sql);
            }
            artifacts.push(o.artifact);
            charts.push(chart);
        }
        let bundle = AnswerBundle {
            database: hdc.database.clone(),
            question: question.to_string(),
            clarified,
            plan,
            artifacts,
            charts,
            failed_steps: run.failed_steps,
            notes,
        };
        let steps: Vec<String> = bundle.plan.subtasks.iter().map(|s| s.description.clone()).collect();
        if !steps.is_empty() {
            self.ledger.register(
                &bundle.plan_id(),
                &hdc.database,
                "plan",
                &bundle.clarified.refined_task,
                &steps.join("; "),
            );
        }
        Ok(bundle)
    }

    /// Records a rating for an artifact or plan of an earlier answer.
    pub fn feedback(&self, id: &str, satisfied: bool) -> Result<(), QuestionError> {
        self.ledger.record(&self.index, id, satisfied)
    }
}
