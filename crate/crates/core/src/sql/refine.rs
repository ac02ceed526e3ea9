use super::ident::{analyze, rewrite};
use super::{artifact_id, tags, Outcome, SqlEngine, SqlError};
use crate::db::DbError;
use crate::domain::{ClarifiedTask, ErrorClass, QueryResult, RefineRound, RefineStage, SqlArtifact, SqlStatus};
use crate::hdc::one_line;
use crate::llm::output::extract_sql;
use crate::prompt::{catalog, Prompt};

struct Failure {
    stage: RefineStage,
    class: ErrorClass,
    text: String,
    /// False when no rewrite of the SQL can help, e.g. a lost connection.
    repairable: bool,
}

impl Failure {
    fn from_db(stage: RefineStage, e: DbError) -> Self {
        match e {
            DbError::Engine { message, class } => Self {
                stage,
                class,
                text: message,
                repairable: true,
            },
            DbError::NonReadOnlyStatement(kw) => Self {
                stage,
                class: ErrorClass::Other,
                text: format!("statement is not read-only: {kw}"),
                repairable: true,
            },
            DbError::UnknownTable(t) => Self {
                stage,
                class: ErrorClass::UnknownRelation,
                text: format!("no such table: {t}"),
                repairable: true,
            },
            other => Self {
                stage,
                class: ErrorClass::Other,
                text: other.to_string(),
                repairable: false,
            },
        }
    }
}

impl SqlEngine<'_> {
    fn refine_prompt(&self, task: &ClarifiedTask, sql: &str, failure: &Failure) -> String {
        let stage = match failure.stage {
            RefineStage::Explain => "explain",
            RefineStage::Execute => "execute",
        };
        Prompt::new(catalog::REFINE_SQL, catalog::REFINE_SQL_TEXT)
            .field("DIALECT", self.db.dialect().name())
            .field("REQUEST", one_line(&task.refined_task))
            .field("STAGE", stage)
            .field("ERROR_CLASS", failure.class.to_string())
            .section("ERROR", one_line(&failure.text))
            .section("SQL", sql.trim())
            .output("SQL only")
            .render()
    }

    /// Identifiers the engine accepted but the schema does not know, such as
    /// a double-quoted name the engine read as a string.
    fn soundness(&self, sql: &str) -> Option<Failure> {
        let a = analyze(sql, self.schema());
        if let Some(t) = a.unknown_tables.first() {
            return Some(Failure {
                stage: RefineStage::Explain,
                class: ErrorClass::UnknownRelation,
                text: format!("no such table: {t}"),
                repairable: true,
            });
        }
        a.unresolved.first().map(|c| Failure {
            stage: RefineStage::Explain,
            class: ErrorClass::UnknownColumn,
            text: format!("no such column: {c}"),
            repairable: true,
        })
    }

    fn check(&self, sql: &str) -> Result<QueryResult, Failure> {
        match self.db.explain(sql) {
            Ok(o) if o.ok => {}
            Ok(o) => {
                return Err(Failure {
                    stage: RefineStage::Explain,
                    class: o.error_class.unwrap_or(ErrorClass::Other),
                    text: o.error_text.unwrap_or_default(),
                    repairable: true,
                })
            }
            Err(e) => return Err(Failure::from_db(RefineStage::Explain, e)),
        }
        if let Some(f) = self.soundness(sql) {
            return Err(f);
        }
        self.db
            .execute(sql, self.caller.config.result_row_limit)
            .map_err(|e| Failure::from_db(RefineStage::Execute, e))
    }

    /// Explain, then execute; each failure is fed back for a replacement
    /// until it runs or the repair budget is spent.
    pub fn refine_chain(&self, task: &ClarifiedTask, sql: &str) -> Result<SqlArtifact, SqlError> {
        self.refine_outcome(task, sql, 0).map(|o| o.artifact)
    }

    pub(crate) fn refine_outcome(&self, task: &ClarifiedTask, sql: &str, step: usize) -> Result<Outcome, SqlError> {
        let max_rounds = self.caller.config.max_refine_rounds;
        let mut artifact = SqlArtifact {
            id: artifact_id(&self.hdc.database, task, step),
            task: task.clone(),
            sql: sql.to_string(),
            status: SqlStatus::Generated,
            answerable: true,
            refinement_trace: Vec::new(),
            result_preview: None,
            error: None,
        };
        let mut round = 0;
        loop {
            let failure = match self.check(&artifact.sql) {
                Ok(result) => {
                    artifact.status = SqlStatus::Executed;
                    artifact.result_preview = Some(result.preview(self.caller.config.preview_rows));
                    return Ok(Outcome {
                        artifact,
                        result: Some(result),
                    });
                }
                Err(f) => f,
            };
            if failure.stage == RefineStage::Execute {
                artifact.status = SqlStatus::ExplainOk;
            }
            let reason = format!("{}: {}", failure.class, failure.text);
            if !failure.repairable || round >= max_rounds {
                artifact.status = SqlStatus::Failed;
                artifact.error = Some(reason);
                return Err(SqlError::RefinementExhausted(Box::new(artifact)));
            }
            round += 1;
            let prompt = self.refine_prompt(task, &artifact.sql, &failure);
            let replacement = match self.caller.text(tags::REFINE, prompt, None) {
                Ok(text) => {
                    let s = extract_sql(&text);
                    if s.is_empty() {
                        s
                    } else {
                        rewrite(&s, self.schema())
                    }
                }
                Err(e) => {
                    artifact.status = SqlStatus::Failed;
                    artifact.error = Some(format!("{reason}; repair call failed: {e}"));
                    return Err(SqlError::RefinementExhausted(Box::new(artifact)));
                }
            };
            artifact.refinement_trace.push(RefineRound {
                round,
                stage: failure.stage,
                input_sql: artifact.sql.clone(),
                error_class: failure.class,
                error_text: failure.text,
                replacement_sql: replacement.clone(),
            });
            if replacement.is_empty() {
                artifact.status = SqlStatus::Failed;
                artifact.error = Some(format!("{reason}; no replacement was proposed"));
                return Err(SqlError::RefinementExhausted(Box::new(artifact)));
            }
            artifact.sql = replacement;
        }
    }
}
