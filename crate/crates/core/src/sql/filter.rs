use rayon::prelude::*;
use serde::Deserialize;

use super::{tags, SchemaSubset, SqlEngine, SqlError, SubsetEntry};
use crate::domain::ClarifiedTask;
use crate::hdc::{clip_chars, one_line, HdcArtifacts};
use crate::prompt::{catalog, Prompt};
use crate::vector::Namespace;

const DESC_CHARS: usize = 200;

#[derive(Deserialize, Default)]
#[serde(default)]
struct FilterReply {
    tables: Vec<FilterItem>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct FilterItem {
    #[serde(alias = "name")]
    table: String,
    columns: Vec<String>,
}

/// Merges map results: first-seen table order, first-seen column order,
/// no duplicate pair.
pub fn reduce_subsets(parts: Vec<SchemaSubset>) -> SchemaSubset {
    let mut out = SchemaSubset::default();
    for part in parts {
        for e in part.entries {
            let at = match out.entries.iter().position(|x| x.table.eq_ignore_ascii_case(&e.table)) {
                Some(i) => i,
                None => {
                    out.entries.push(SubsetEntry {
                        table: e.table.clone(),
                        columns: Vec::new(),
                    });
                    out.entries.len() - 1
                }
            };
            for c in e.columns {
                let cols = &mut out.entries[at].columns;
                if !cols.iter().any(|x| x.eq_ignore_ascii_case(&c)) {
                    cols.push(c);
                }
            }
        }
    }
    out
}

/// One table of a filter prompt: a header line, then one line per column.
/// `detailed` false keeps names and types only.
pub fn table_block_line(hdc: &HdcArtifacts, table: &str, detailed: bool) -> String {
    let Some(meta) = hdc.schema.table(table) else {
        return String::new();
    };
    let desc = hdc
        .table(table)
        .map(|t| clip_chars(&one_line(&t.nl_description), DESC_CHARS))
        .unwrap_or_default();
    let mut lines = vec![if detailed && !desc.is_empty() {
        format!("- {}: {}", meta.name, desc)
    } else {
        format!("- {}:", meta.name)
    }];
    for c in &meta.columns {
        let summary = hdc
            .columns_of(&meta.name)
            .find(|s| s.column == c.name)
            .map(|s| clip_chars(&one_line(&s.description), DESC_CHARS));
        match summary {
            Some(s) if detailed && !s.is_empty() => lines.push(format!("  - {} ({}): {}", c.name, c.declared_type, s)),
            _ => lines.push(format!("  - {} ({})", c.name, c.declared_type)),
        }
    }
    lines.join("\n")
}

impl SqlEngine<'_> {
    fn filter_prompt(&self, task: &ClarifiedTask, blocks: &[String]) -> String {
        Prompt::new(catalog::SCHEMA_FILTER, catalog::SCHEMA_FILTER_TEXT)
            .field("REQUEST", one_line(&task.refined_task))
            .section("DETAILS", one_line(&task.detailed_description))
            .section("TABLES", blocks.join("\n"))
            .output(r#"{"tables": [{"table": "", "columns": [""]}]}"#)
            .render()
    }

    /// Coarse stage: the `top_n` tables whose descriptions are closest.
    pub fn coarse_tables(&self, task: &ClarifiedTask, top_n: usize) -> Result<Vec<String>, SqlError> {
        if self.hdc.schema.tables.len() == 1 {
            return Ok(vec![self.hdc.schema.tables[0].name.clone()]);
        }
        let db = self.hdc.database.as_str();
        let query = format!("{} {}", task.refined_task, task.detailed_description);
        let hits = self.index.search_filtered(Namespace::TableDesc, &query, top_n.max(1), |d| {
            d.metadata.get("database").map(String::as_str) == Some(db)
        })?;
        let mut out: Vec<String> = Vec::new();
        for h in hits {
            if let Some(t) = h.metadata.get("table").and_then(|t| self.hdc.schema.table(t)) {
                if !out.contains(&t.name) {
                    out.push(t.name.clone());
                }
            }
        }
        if out.is_empty() {
            // no descriptions indexed: fall back to schema order
            out = self.hdc.schema.tables.iter().take(top_n).map(|t| t.name.clone()).collect();
        }
        Ok(out)
    }

    /// Groups tables so each map prompt stays within half the prompt budget.
    pub fn filter_blocks(&self, task: &ClarifiedTask, tables: &[String]) -> Vec<Vec<String>> {
        let half = (self.caller.prompt_limit() / 2).max(1);
        let fits = |lines: &[String]| self.caller.tokens(&self.filter_prompt(task, lines)) <= half;
        let mut blocks: Vec<Vec<String>> = Vec::new();
        let mut current: Vec<String> = Vec::new();
        for t in tables {
            let detailed = table_block_line(self.hdc, t, true);
            let line = if fits(std::slice::from_ref(&detailed)) {
                detailed
            } else {
                table_block_line(self.hdc, t, false)
            };
            let mut trial = current.clone();
            trial.push(line.clone());
            if current.is_empty() || fits(&trial) {
                current = trial;
            } else {
                blocks.push(std::mem::take(&mut current));
                current.push(line);
            }
        }
        if !current.is_empty() {
            blocks.push(current);
        }
        blocks
    }

    fn map_block(&self, task: &ClarifiedTask, block: &[String]) -> Result<SchemaSubset, SqlError> {
        let prompt = self.filter_prompt(task, block);
        let reply: FilterReply = self.caller.json(tags::FILTER, prompt)?;
        let allowed: Vec<&str> = block
            .iter()
            .filter_map(|l| l.lines().next())
            .filter_map(|l| l.strip_prefix("- "))
            .map(|l| l.split(':').next().unwrap_or(l).trim())
            .collect();
        let mut entries = Vec::new();
        for item in reply.tables {
            let Some(meta) = self.hdc.schema.table(item.table.trim()) else {
                log::warn!("schema filter named unknown table `{}`", item.table);
                continue;
            };
            if !allowed.iter().any(|a| a.eq_ignore_ascii_case(&meta.name)) {
                continue;
            }
            let mut columns: Vec<String> = Vec::new();
            for c in item.columns {
                match meta.column(c.trim()) {
                    Some(col) if !columns.contains(&col.name) => columns.push(col.name.clone()),
                    Some(_) => {}
                    None => log::warn!("schema filter named unknown column `{}.{}`", meta.name, c),
                }
            }
            if columns.is_empty() {
                continue;
            }
            entries.push(SubsetEntry {
                table: meta.name.clone(),
                columns,
            });
        }
        Ok(SchemaSubset { entries })
    }

    /// Coarse retrieval, then a per-block LLM filter merged in block order.
    pub fn filter_schema(&self, task: &ClarifiedTask, top_n: usize) -> Result<SchemaSubset, SqlError> {
        let tables = self.coarse_tables(task, top_n)?;
        if tables.is_empty() {
            return Err(SqlError::EmptySubset(self.hdc.database.clone()));
        }
        let blocks = self.filter_blocks(task, &tables);
        let parts: Vec<Result<SchemaSubset, SqlError>> =
            blocks.par_iter().map(|b| self.map_block(task, b)).collect();
        let mut ok = Vec::new();
        let mut first_err = None;
        for p in parts {
            match p {
                Ok(s) => ok.push(s),
                Err(e) => {
                    log::warn!("schema filter block failed: {e}");
                    first_err.get_or_insert(e);
                }
            }
        }
        let subset = reduce_subsets(ok);
        if subset.is_empty() {
            return Err(first_err.unwrap_or_else(|| SqlError::EmptySubset(self.hdc.database.clone())));
        }
        Ok(subset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(items: &[(&str, &[&str])]) -> SchemaSubset {
        SchemaSubset {
            entries: items
                .iter()
                .map(|(t, cs)| SubsetEntry {
                    table: t.to_string(),
                    columns: cs.iter().map(|c| c.to_string()).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn reduce_keeps_first_seen() {
        let merged = reduce_subsets(vec![part(&[("A", &["x"])]), part(&[("A", &["x"])]), part(&[("B", &["y"])])]);
        assert_eq!(merged, part(&[("A", &["x"]), ("B", &["y"])]));
        let merged = reduce_subsets(vec![part(&[("B", &["y"]), ("A", &["x"])]), part(&[("A", &["z", "x"])])]);
        assert_eq!(merged, part(&[("B", &["y"]), ("A", &["x", "z"])]));
    }
}
