use std::collections::BTreeMap;

use serde::Deserialize;

use super::{clip_chars, meta, one_line, HdcBuilder, HdcError};
use crate::db::{ColumnMeta, TableMeta};
use crate::domain::ColumnSummary;
use crate::llm::CallError;
use crate::prompt::{catalog, Prompt};
use crate::vector::Namespace;

/// Longest sample value shown to the model, in characters.
const SAMPLE_CHARS: usize = 60;
const COMMENT_CHARS: usize = 200;
const TERM_CHARS: usize = 200;
/// Domain terms below this similarity are not injected.
pub(crate) const DOMAIN_TERM_MIN_SCORE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnBlock {
    pub table: String,
    pub columns: Vec<ColumnMeta>,
    /// 1-based position of the block within its table.
    pub ordinal: usize,
}

/// Vertical split of a table into blocks of at most `group_size` columns,
/// keeping declared column order.
pub fn partition_columns(table: &TableMeta, group_size: usize) -> Vec<ColumnBlock> {
    assert!(group_size >= 1, "group_size must be >= 1");
    table
        .columns
        .chunks(group_size)
        .enumerate()
        .map(|(i, cols)| ColumnBlock {
            table: table.name.clone(),
            columns: cols.to_vec(),
            ordinal: i + 1,
        })
        .collect()
}

pub(crate) fn column_vector_id(database: &str, table: &str, column: &str) -> String {
    format!("{database}.{table}.{column}")
}

#[derive(Deserialize)]
struct ColumnReply {
    #[serde(default)]
    columns: Vec<ColumnItem>,
}

#[derive(Deserialize)]
struct ColumnItem {
    #[serde(alias = "name")]
    column: String,
    #[serde(default)]
    description: String,
}

/// Per-column sample values, keyed by column name.
pub type ColumnSamples = BTreeMap<String, Vec<String>>;

fn seed_for(base: u64, table: &str) -> u64 {
    table
        .bytes()
        .fold(base ^ 0x9e37_79b9_7f4a_7c15, |h, b| h.rotate_left(5) ^ u64::from(b))
}

impl HdcBuilder {
    pub(crate) fn column_samples(&self, table: &TableMeta) -> Result<ColumnSamples, HdcError> {
        let n = self.config.sample_rows_per_column;
        let mut out: ColumnSamples = table.columns.iter().map(|c| (c.name.clone(), Vec::new())).collect();
        if n == 0 || table.columns.is_empty() {
            return Ok(out);
        }
        let rows = self
            .db
            .sample_rows(&table.name, n, seed_for(self.config.sample_seed, &table.name))?;
        for row in rows {
            for (col, value) in table.columns.iter().zip(row) {
                if value.is_null() {
                    continue;
                }
                let text = clip_chars(&one_line(&value.to_string()), SAMPLE_CHARS);
                out.entry(col.name.clone()).or_default().push(text);
            }
        }
        Ok(out)
    }

    fn domain_terms(&self, query: &str) -> Result<Vec<String>, HdcError> {
        if self.config.domain_term_count == 0 || self.index.is_empty(Namespace::DomainTerm) {
            return Ok(Vec::new());
        }
        Ok(self
            .index
            .search(Namespace::DomainTerm, query, self.config.domain_term_count)?
            .into_iter()
            .filter(|h| h.score >= DOMAIN_TERM_MIN_SCORE)
            .map(|h| clip_chars(&one_line(&h.text), TERM_CHARS))
            .collect())
    }

    fn column_prompt(&self, database: &str, block: &ColumnBlock, samples: &ColumnSamples, terms: &[String]) -> String {
        let lines: Vec<String> = block
            .columns
            .iter()
            .map(|c| {
                let shown = samples.get(&c.name).map(|v| v.join(", ")).unwrap_or_default();
                let mut line = format!("- {} | {} | samples: {}", c.name, c.declared_type, shown);
                if let Some(comment) = &c.comment {
                    line.push_str(&format!(" | comment: {}", clip_chars(&one_line(comment), COMMENT_CHARS)));
                }
                line
            })
            .collect();
        let mut p = Prompt::new(catalog::COLUMN_SUMMARY, catalog::COLUMN_SUMMARY_TEXT)
            .field("DATABASE", database)
            .field("TABLE", &block.table)
            .field("BLOCK", block.ordinal.to_string());
        if !terms.is_empty() {
            let body: Vec<String> = terms.iter().map(|t| format!("- {t}")).collect();
            p = p.section("DOMAIN TERMS", body.join("\n"));
        }
        p.section("COLUMNS", lines.join("\n"))
            .output(r#"{"columns": [{"column": "<column name>", "description": "<one sentence>"}]}"#)
            .render()
    }

    /// Describes every column of `block` and persists the summaries.
    pub fn summarize_columns(
        &self,
        database: &str,
        block: &ColumnBlock,
        samples: &ColumnSamples,
    ) -> Result<Vec<ColumnSummary>, HdcError> {
        let query = format!(
            "{} {}",
            block.table,
            block.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(" ")
        );
        let terms = self.domain_terms(&query)?;
        let context = format!("table {} block {}", block.table, block.ordinal);
        let prompt = self.column_prompt(database, block, samples, &terms);
        let reply: ColumnReply = self
            .caller()
            .json(super::tags::COLUMN_SUMMARY, prompt)
            .map_err(HdcError::call(context.clone()))?;
        let mut described: BTreeMap<String, String> = reply
            .columns
            .into_iter()
            .filter(|i| !i.description.trim().is_empty())
            .map(|i| (i.column.to_ascii_lowercase(), one_line(&i.description)))
            .collect();

        let missing: Vec<ColumnMeta> = block
            .columns
            .iter()
            .filter(|c| !described.contains_key(&c.name.to_ascii_lowercase()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            let retry_block = ColumnBlock {
                table: block.table.clone(),
                columns: missing.clone(),
                ordinal: block.ordinal,
            };
            let prompt = self.column_prompt(database, &retry_block, samples, &terms);
            let retry = format!("{}.retry", super::tags::COLUMN_SUMMARY);
            if let Ok(reply) = self.caller().json::<ColumnReply>(&retry, prompt) {
                for i in reply.columns {
                    if !i.description.trim().is_empty() {
                        described
                            .entry(i.column.to_ascii_lowercase())
                            .or_insert_with(|| one_line(&i.description));
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(block.columns.len());
        for c in &block.columns {
            let mut description = described.remove(&c.name.to_ascii_lowercase()).unwrap_or_else(|| {
                self.note(format!("{context}: no description for column {}", c.name));
                format!("Column {} of table {}, stored as {}.", c.name, block.table, c.declared_type)
            });
            if let Some(comment) = c.comment.as_deref().map(one_line).filter(|s| !s.is_empty()) {
                if !description.ends_with(&comment) {
                    description = format!("{description} {comment}");
                }
            }
            let summary = ColumnSummary {
                database: database.to_string(),
                table: block.table.clone(),
                column: c.name.clone(),
                declared_type: c.declared_type.clone(),
                description,
                comment: c.comment.clone(),
                sample_values: samples.get(&c.name).cloned().unwrap_or_default(),
                vector_id: column_vector_id(database, &block.table, &c.name),
            };
            self.index.upsert_text(
                Namespace::ColumnDesc,
                &summary.vector_id,
                &format!("{}.{}: {}", summary.table, summary.column, summary.description),
                meta(&[
                    ("database", database),
                    ("table", &summary.table),
                    ("column", &summary.column),
                    ("type", &summary.declared_type),
                ]),
            )?;
            out.push(summary);
        }
        Ok(out)
    }

    /// Like [`summarize_columns`](Self::summarize_columns) but halves a block
    /// whose prompt exceeds the budget until each part fits.
    pub(crate) fn summarize_columns_adaptive(
        &self,
        database: &str,
        block: &ColumnBlock,
        samples: &ColumnSamples,
    ) -> Result<Vec<ColumnSummary>, HdcError> {
        // a prompt over budget, or a reply cut off by the output cap, both
        // shrink with the block
        match self.summarize_columns(database, block, samples) {
            Err(HdcError::Call {
                source: CallError::Budget { .. } | CallError::Malformed { .. },
                ..
            }) if block.columns.len() > 1 => {
                let mid = block.columns.len() / 2;
                let mut out = Vec::with_capacity(block.columns.len());
                for part in [&block.columns[..mid], &block.columns[mid..]] {
                    let sub = ColumnBlock {
                        table: block.table.clone(),
                        columns: part.to_vec(),
                        ordinal: block.ordinal,
                    };
                    out.extend(self.summarize_columns_adaptive(database, &sub, samples)?);
                }
                Ok(out)
            }
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n: usize) -> TableMeta {
        TableMeta {
            name: "t".into(),
            columns: (0..n)
                .map(|i| ColumnMeta {
                    name: format!("c{i}"),
                    declared_type: "INTEGER".into(),
                    comment: None,
                })
                .collect(),
            declared_keys: vec![],
            row_count_estimate: 0,
        }
    }

    #[test]
    fn partition_sizes() {
        let sizes = |n, g| partition_columns(&table(n), g).iter().map(|b| b.columns.len()).collect::<Vec<_>>();
        assert_eq!(sizes(100, 40), vec![40, 40, 20]);
        assert_eq!(sizes(1, 40), vec![1]);
        assert_eq!(sizes(80, 80), vec![80]);
        assert!(sizes(0, 40).is_empty());
        let blocks = partition_columns(&table(7), 3);
        let names: Vec<String> = blocks.iter().flat_map(|b| b.columns.iter().map(|c| c.name.clone())).collect();
        assert_eq!(names, table(7).columns.iter().map(|c| c.name.clone()).collect::<Vec<_>>());
        assert_eq!(blocks.iter().map(|b| b.ordinal).collect::<Vec<_>>(), vec![1, 2, 3]);
    }
}
