use super::ident::{analyze, rewrite};
use super::{result_lines, tags, PriorStep, SchemaSubset, SqlEngine, SqlError};
use crate::db::SchemaSnapshot;
use crate::domain::ClarifiedTask;
use crate::hdc::{clip_chars, one_line};
use crate::llm::output::extract_sql;
use crate::llm::with_correction;
use crate::prompt::{catalog, Prompt};
use crate::question::{FewShotPair, QuestionEngine};
use crate::sqltext::{check_read_only, StatementCheck};

const PRIOR_SQL_CHARS: usize = 600;

/// Everything in `sql` that falls outside `subset` or the schema. Primary
/// key columns of subset tables are always allowed for joins.
pub fn subset_violations(sql: &str, schema: &SchemaSnapshot, subset: &SchemaSubset) -> Vec<String> {
    let mut out = Vec::new();
    match check_read_only(sql) {
        StatementCheck::ReadOnly => {}
        StatementCheck::Empty => return out,
        StatementCheck::MultipleStatements => out.push("more than one statement".to_string()),
        StatementCheck::NotReadOnly(kw) => out.push(format!("statement kind {kw} is not allowed")),
    }
    let a = analyze(sql, schema);
    for t in &a.unknown_tables {
        out.push(format!("table `{t}` does not exist"));
    }
    for t in &a.tables {
        if subset.entry(t).is_none() {
            out.push(format!("table `{t}` is not among the chosen tables"));
        }
    }
    for c in &a.columns {
        let Some(entry) = subset.entry(&c.table) else {
            continue;
        };
        let is_key = schema
            .table(&c.table)
            .is_some_and(|m| m.primary_key().iter().any(|k| k.eq_ignore_ascii_case(&c.column)));
        if !is_key && !entry.columns.iter().any(|x| x.eq_ignore_ascii_case(&c.column)) {
            out.push(format!("column `{}.{}` is not among the chosen columns", c.table, c.column));
        }
    }
    for u in &a.unresolved {
        out.push(format!("`{u}` does not resolve to a column"));
    }
    out
}

impl SqlEngine<'_> {
    fn schema_lines(&self, subset: &SchemaSubset) -> Vec<String> {
        subset
            .entries
            .iter()
            .map(|e| {
                let meta = self.schema().table(&e.table);
                let cols: Vec<String> = e
                    .columns
                    .iter()
                    .map(|c| {
                        let ty = meta
                            .and_then(|m| m.column(c))
                            .map(|m| m.declared_type.as_str())
                            .unwrap_or("");
                        if ty.is_empty() {
                            c.clone()
                        } else {
                            format!("{c} ({ty})")
                        }
                    })
                    .collect();
                format!("- {}: {}", e.table, cols.join(", "))
            })
            .collect()
    }

    fn relationship_lines(&self, subset: &SchemaSubset) -> Vec<String> {
        self.hdc
            .relationships
            .iter()
            .filter(|r| subset.entry(&r.referencing_table).is_some() && subset.entry(&r.referenced_table).is_some())
            .map(|r| {
                format!(
                    "- {}.{} -> {}.{}",
                    r.referencing_table, r.foreign_key_column, r.referenced_table, r.primary_key_column
                )
            })
            .collect()
    }

    fn prior_lines(&self, prior: &[PriorStep]) -> Vec<String> {
        let mut out = Vec::new();
        for (i, p) in prior.iter().enumerate() {
            out.push(format!("- step {}: {}", i + 1, one_line(&p.description)));
            if !p.sql.is_empty() {
                out.push(format!("  sql: {}", clip_chars(&one_line(&p.sql), PRIOR_SQL_CHARS)));
            }
            match (&p.preview, &p.error) {
                (Some(r), _) => {
                    for l in result_lines(r, super::PRIOR_PREVIEW_ROWS) {
                        out.push(format!("  | {l}"));
                    }
                }
                (None, Some(e)) => out.push(format!("  failed: {}", one_line(e))),
                _ => {}
            }
        }
        out
    }

    fn generate_prompt(
        &self,
        task: &ClarifiedTask,
        subset: &SchemaSubset,
        examples: &[FewShotPair],
        prior: &[String],
    ) -> String {
        let mut p = Prompt::new(catalog::GENERATE_SQL, catalog::GENERATE_SQL_TEXT)
            .field("DIALECT", self.db.dialect().name())
            .field("REQUEST", one_line(&task.refined_task))
            .section("DETAILS", one_line(&task.detailed_description))
            .section("SCHEMA", self.schema_lines(subset).join("\n"));
        let rels = self.relationship_lines(subset);
        if !rels.is_empty() {
            p = p.section("RELATIONSHIPS", rels.join("\n"));
        }
        if !examples.is_empty() {
            let lines: Vec<String> = examples
                .iter()
                .map(|e| format!("- question: {} | sql: {}", one_line(&e.question), one_line(&e.answer_payload)))
                .collect();
            p = p.section("EXAMPLES", lines.join("\n"));
        }
        if !prior.is_empty() {
            p = p.section("PREVIOUS STEPS", prior.join("\n"));
        }
        p.output("SQL only, or nothing when no query fits").render()
    }

    /// SQL for `task` over `subset`, rewritten to qualified, quoted form.
    /// An empty string means the model found no fitting query.
    pub fn generate_sql(&self, task: &ClarifiedTask, subset: &SchemaSubset, prior: &[PriorStep]) -> Result<String, SqlError> {
        if subset.is_empty() {
            return Err(SqlError::EmptySubset(self.hdc.database.clone()));
        }
        let questions = QuestionEngine::new(self.caller, self.index, self.hdc);
        let examples = questions.examples(&task.refined_task, "sql").unwrap_or_default();
        let prior_lines = self.prior_lines(prior);
        let prompt = self
            .caller
            .fit_prefix(examples.len(), |k| self.generate_prompt(task, subset, &examples[..k], &prior_lines))
            .or_else(|| {
                // earlier steps are the first thing to give up
                let kept = self
                    .caller
                    .fit_prefix(prior_lines.len(), |k| self.generate_prompt(task, subset, &[], &prior_lines[..k]))?;
                Some(kept)
            })
            .map(|(_, p)| p)
            .unwrap_or_else(|| self.generate_prompt(task, subset, &[], &[]));
        let first = extract_sql(&self.caller.text(tags::GENERATE, prompt.clone(), None)?);
        if first.is_empty() {
            return Ok(String::new());
        }
        let problems = subset_violations(&first, self.schema(), subset);
        if problems.is_empty() {
            return Ok(rewrite(&first, self.schema()));
        }
        let note = format!(
            "the previous query was rejected: {}. Use only the tables and columns listed under SCHEMA. Previous query: {}",
            problems.join("; "),
            one_line(&first)
        );
        let second = extract_sql(&self.caller.text(tags::GENERATE_RETRY, with_correction(&prompt, &note), None)?);
        if second.is_empty() {
            return Ok(String::new());
        }
        let remaining = subset_violations(&second, self.schema(), subset);
        if remaining.is_empty() {
            Ok(rewrite(&second, self.schema()))
        } else {
            Err(SqlError::OutOfSubsetReference(remaining))
        }
    }
}
