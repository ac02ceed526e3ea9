use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value as Json;

use super::columns::ColumnBlock;
use super::{clip_chars, clip_tokens, meta, one_line, tags, HdcBuilder, HdcError};
use crate::db::{DeclaredKey, TableMeta};
use crate::domain::{ColumnSummary, TableSummary, TableType, MAX_KEY_ATTRIBUTES};
use crate::llm::with_correction;
use crate::prompt::{catalog, Prompt};
use crate::vector::Namespace;

const DESCRIPTION_CHARS: usize = 400;

/// Partial descriptions of one table, in block order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DescriptionBatch {
    pub table: String,
    pub entries: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReduceOutcome {
    pub text: String,
    /// Recursion depth, counting the final single-entry pass.
    pub levels: usize,
    pub calls: usize,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct ProfileReply {
    primary_key_candidates: Vec<Json>,
    primary_key: Json,
    key_attributes: Vec<String>,
    table_type: String,
    main_entity: String,
    nl_description: String,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct KeyReply {
    primary_key: Json,
}

/// A key given as `"a"`, `"a+b"`, `"a, b"` or `["a", "b"]`, as `a+b`.
fn key_text(v: &Json) -> String {
    match v {
        Json::String(s) => s
            .split(['+', ','])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("+"),
        Json::Array(items) => items
            .iter()
            .map(key_text)
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("+"),
        _ => String::new(),
    }
}

/// Resolves every part of a key against the table, returning declared spelling.
fn resolve_key(table: &TableMeta, key: &str) -> Option<String> {
    if key.is_empty() {
        return None;
    }
    key.split('+')
        .map(|part| {
            let part = part.rsplit('.').next().unwrap_or(part).trim();
            table.column(part).map(|c| c.name.clone())
        })
        .collect::<Option<Vec<_>>>()
        .map(|parts| parts.join("+"))
}

fn resolve_attributes(table: &TableMeta, attrs: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for a in attrs {
        let name = a.rsplit('.').next().unwrap_or(a).trim();
        if let Some(col) = table.column(name) {
            if !out.contains(&col.name) {
                out.push(col.name.clone());
            }
        }
    }
    out
}

fn fallback_type(table: &TableMeta) -> TableType {
    let fks = table
        .declared_keys
        .iter()
        .filter(|k| matches!(k, DeclaredKey::Foreign { .. }))
        .count();
    if fks >= 2 {
        TableType::Fact
    } else {
        TableType::Dimension
    }
}

impl HdcBuilder {
    fn map_prompt(&self, database: &str, block: &ColumnBlock, descriptions: &[String]) -> String {
        let lines: Vec<String> = block
            .columns
            .iter()
            .zip(descriptions)
            .map(|(c, d)| format!("- {} ({}): {}", c.name, c.declared_type, d))
            .collect();
        Prompt::new(catalog::TABLE_MAP, catalog::TABLE_MAP_TEXT)
            .field("DATABASE", database)
            .field("TABLE", &block.table)
            .field("BLOCK", block.ordinal.to_string())
            .section("COLUMN DESCRIPTIONS", lines.join("\n"))
            .output("A short paragraph of plain text.")
            .render()
    }

    /// Entry cap for map and reduce outputs: half the reduce group budget,
    /// so any two entries always fit one group.
    fn entry_cap(&self) -> usize {
        (self.reduce_budget() / 2).max(1)
    }

    fn map_block(&self, database: &str, block: &ColumnBlock, known: &[ColumnSummary]) -> Result<Vec<String>, HdcError> {
        let descriptions: Vec<String> = block
            .columns
            .iter()
            .map(|c| {
                let id = super::columns::column_vector_id(database, &block.table, &c.name);
                let text = self
                    .index
                    .get(Namespace::ColumnDesc, &id)
                    .map(|d| d.text.split_once(": ").map(|(_, t)| t.to_string()).unwrap_or(d.text))
                    .or_else(|| known.iter().find(|k| k.vector_id == id).map(|k| k.description.clone()))
                    .unwrap_or_default();
                clip_chars(&one_line(&text), DESCRIPTION_CHARS)
            })
            .collect();
        let prompt = self.map_prompt(database, block, &descriptions);
        if !self.caller().fits(&prompt) && block.columns.len() > 1 {
            let mid = block.columns.len() / 2;
            let mut out = Vec::new();
            for part in [&block.columns[..mid], &block.columns[mid..]] {
                let sub = ColumnBlock {
                    table: block.table.clone(),
                    columns: part.to_vec(),
                    ordinal: block.ordinal,
                };
                out.extend(self.map_block(database, &sub, known)?);
            }
            return Ok(out);
        }
        let context = format!("table {} block {}", block.table, block.ordinal);
        let text = self
            .caller()
            .text(tags::TABLE_MAP, prompt, Some(self.entry_cap()))
            .map_err(HdcError::call(context))?;
        Ok(vec![clip_tokens(&self.caller(), &one_line(&text), self.entry_cap())])
    }

    /// Map phase: one description per block, computed concurrently and
    /// returned in block order.
    pub fn map_table_blocks(
        &self,
        database: &str,
        table: &TableMeta,
        blocks: &[ColumnBlock],
        known: &[ColumnSummary],
    ) -> Result<DescriptionBatch, HdcError> {
        let parts: Vec<Result<Vec<String>, HdcError>> =
            blocks.par_iter().map(|b| self.map_block(database, b, known)).collect();
        let mut entries = Vec::with_capacity(blocks.len());
        for p in parts {
            entries.extend(p?);
        }
        Ok(DescriptionBatch {
            table: table.name.clone(),
            entries,
        })
    }

    fn reduce_prompt(&self, table: &str, entries: &[String]) -> String {
        let lines: Vec<String> = entries.iter().map(|e| format!("- {}", one_line(e))).collect();
        Prompt::new(catalog::TABLE_REDUCE, catalog::TABLE_REDUCE_TEXT)
            .field("TABLE", table)
            .section("PARTIAL DESCRIPTIONS", lines.join("\n"))
            .output("One paragraph of plain text.")
            .render()
    }

    /// Reduce phase: greedily packs entries into groups of at most
    /// `max_tokens`, merges each group with one call and recurses until a
    /// single entry is left, which gets a final pass of its own.
    pub fn reduce_table_descriptions(
        &self,
        batch: &DescriptionBatch,
        max_tokens: usize,
    ) -> Result<ReduceOutcome, HdcError> {
        if batch.entries.is_empty() {
            return Err(HdcError::EmptyBatch(batch.table.clone()));
        }
        let caller = self.caller();
        let cap = (max_tokens / 2).max(1);
        let mut current = batch.entries.clone();
        let mut levels = 0;
        let mut calls = 0;
        loop {
            levels += 1;
            let sizes: Vec<usize> = current.iter().map(|e| caller.tokens(e)).collect();
            if let Some(&too_big) = sizes.iter().find(|&&s| s > max_tokens) {
                return Err(HdcError::ReduceBudget {
                    entry_tokens: too_big,
                    max_tokens,
                });
            }
            let context = format!("table {} reduce level {levels}", batch.table);
            if current.len() == 1 {
                let text = caller
                    .text(tags::TABLE_REDUCE, self.reduce_prompt(&batch.table, &current), Some(cap))
                    .map_err(HdcError::call(context))?;
                return Ok(ReduceOutcome {
                    text: clip_tokens(&caller, &one_line(&text), cap),
                    levels,
                    calls: calls + 1,
                });
            }
            let mut groups: Vec<Vec<String>> = Vec::new();
            let mut group: Vec<String> = Vec::new();
            let mut used = 0;
            for (entry, size) in current.into_iter().zip(sizes) {
                if !group.is_empty() && used + size > max_tokens {
                    groups.push(std::mem::take(&mut group));
                    used = 0;
                }
                used += size;
                group.push(entry);
            }
            if !group.is_empty() {
                groups.push(group);
            }
            let mut next = Vec::with_capacity(groups.len());
            for g in &groups {
                let text = caller
                    .text(tags::TABLE_REDUCE, self.reduce_prompt(&batch.table, g), Some(cap))
                    .map_err(HdcError::call(context.clone()))?;
                calls += 1;
                next.push(clip_tokens(&caller, &one_line(&text), cap));
            }
            current = next;
        }
    }

    fn profile_prompt(&self, table: &TableMeta, description: &str, shown: usize) -> String {
        let pk = table.primary_key();
        let mut lines: Vec<String> = table
            .columns
            .iter()
            .take(shown)
            .map(|c| {
                let mut line = format!("- {} | {}", c.name, c.declared_type);
                if pk.iter().any(|k| k == &c.name) {
                    line.push_str(" | primary key");
                }
                if let Some(comment) = &c.comment {
                    line.push_str(&format!(" | comment: {}", clip_chars(&one_line(comment), 120)));
                }
                line
            })
            .collect();
        if shown < table.columns.len() {
            lines.push(format!("- ... {} more columns", table.columns.len() - shown));
        }
        Prompt::new(catalog::TABLE_PROFILE, catalog::TABLE_PROFILE_TEXT)
            .field("TABLE", &table.name)
            .section("DESCRIPTION", one_line(description))
            .section("COLUMNS", lines.join("\n"))
            .output(
                r#"{"primary_key_candidates": ["<column or a+b>"], "primary_key": "<chosen key>", "key_attributes": ["<column>"], "table_type": "dimension|bridge|fact", "main_entity": "<entity>", "nl_description": "<text>"}"#,
            )
            .render()
    }

    fn fitted_profile_prompt(&self, table: &TableMeta, description: &str) -> Result<String, HdcError> {
        self.caller()
            .fit_prefix(table.columns.len(), |k| self.profile_prompt(table, description, k))
            .map(|(_, p)| p)
            .ok_or_else(|| {
                let p = self.profile_prompt(table, description, 0);
                HdcError::Call {
                    context: format!("table {} profile", table.name),
                    source: crate::llm::CallError::Budget {
                        tag: tags::TABLE_PROFILE.into(),
                        prompt_tokens: self.caller().tokens(&p),
                        limit: self.caller().prompt_limit(),
                    },
                }
            })
    }

    fn choose_key(&self, table: &TableMeta, description: &str, reply: &ProfileReply) -> Result<String, HdcError> {
        let candidates: Vec<String> = reply
            .primary_key_candidates
            .iter()
            .filter_map(|c| resolve_key(table, &key_text(c)))
            .fold(Vec::new(), |mut acc, k| {
                if !acc.contains(&k) {
                    acc.push(k);
                }
                acc
            });
        let proposed = resolve_key(table, &key_text(&reply.primary_key));
        if let Some(k) = &proposed {
            if candidates.len() <= 1 || candidates.contains(k) {
                return Ok(k.clone());
            }
        }
        if candidates.len() > 1 {
            let body: Vec<String> = candidates.iter().map(|c| format!("- {c}")).collect();
            let prompt = Prompt::new(catalog::TABLE_PRIMARY_KEY, catalog::TABLE_PRIMARY_KEY_TEXT)
                .field("TABLE", &table.name)
                .section("DESCRIPTION", clip_chars(&one_line(description), 2000))
                .section("CANDIDATES", body.join("\n"))
                .output(r#"{"primary_key": "<one candidate>"}"#)
                .render();
            let chosen: KeyReply = self
                .caller()
                .json(tags::PRIMARY_KEY, prompt)
                .map_err(HdcError::call(format!("table {} primary key", table.name)))?;
            if let Some(k) = resolve_key(table, &key_text(&chosen.primary_key)) {
                return Ok(k);
            }
            return Ok(candidates[0].clone());
        }
        if let Some(k) = candidates.into_iter().next() {
            return Ok(k);
        }
        let declared = table.primary_key();
        if !declared.is_empty() {
            return Ok(declared.join("+"));
        }
        self.note(format!("table {}: no usable primary key proposed", table.name));
        Ok(table.columns.first().map(|c| c.name.clone()).unwrap_or_default())
    }

    /// Profiles a table from its reduced description and persists the summary.
    pub fn derive_table_profile(
        &self,
        database: &str,
        table: &TableMeta,
        description: &str,
    ) -> Result<TableSummary, HdcError> {
        let prompt = self.fitted_profile_prompt(table, description)?;
        let context = format!("table {} profile", table.name);
        let mut reply: ProfileReply = self
            .caller()
            .json(tags::TABLE_PROFILE, prompt.clone())
            .map_err(HdcError::call(context.clone()))?;
        let mut attributes = resolve_attributes(table, &reply.key_attributes);
        if attributes.len() > MAX_KEY_ATTRIBUTES {
            let note = format!(
                "key_attributes must list at most {MAX_KEY_ATTRIBUTES} columns; the previous reply listed {}",
                attributes.len()
            );
            let retry_tag = format!("{}.retry", tags::TABLE_PROFILE);
            let corrected = with_correction(&prompt, &note);
            if self.caller().fits(&corrected) {
                reply = self
                    .caller()
                    .json(&retry_tag, corrected)
                    .map_err(HdcError::call(context.clone()))?;
                attributes = resolve_attributes(table, &reply.key_attributes);
            }
        }
        let chosen_primary_key = self.choose_key(table, description, &reply)?;
        let table_type = TableType::parse(&reply.table_type).unwrap_or_else(|| {
            self.note(format!("table {}: unknown table type `{}`", table.name, reply.table_type));
            fallback_type(table)
        });
        let main_entity = Some(one_line(&reply.main_entity))
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| table.name.clone());
        let nl_description = Some(one_line(&reply.nl_description))
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| one_line(description));
        let summary = TableSummary {
            table: table.name.clone(),
            description: one_line(description),
            chosen_primary_key,
            key_attributes: attributes,
            table_type,
            main_entity,
            nl_description,
            vector_id: format!("{database}.{}", table.name),
        };
        if summary.key_attributes.len() > MAX_KEY_ATTRIBUTES {
            return Err(HdcError::Validation {
                table: table.name.clone(),
                message: format!(
                    "{} key attributes after a corrective re-prompt",
                    summary.key_attributes.len()
                ),
                profile: Box::new(summary),
            });
        }
        self.persist_table(database, &summary)?;
        Ok(summary)
    }

    pub(crate) fn persist_table(&self, database: &str, summary: &TableSummary) -> Result<(), HdcError> {
        let text = format!("{}: {} {}", summary.table, summary.nl_description, summary.description);
        self.index.upsert_text(
            Namespace::TableDesc,
            &summary.vector_id,
            &text,
            meta(&[
                ("database", database),
                ("table", &summary.table),
                ("table_type", &summary.table_type.to_string()),
            ]),
        )?;
        Ok(())
    }
}
