use std::collections::BTreeMap;

use serde::Deserialize;

use super::{clip_chars, meta, one_line, tags, HdcBuilder, HdcError};
use crate::db::{SchemaSnapshot, TableMeta};
use crate::domain::{EntitySummary, RelationshipType, TableRelationship, TableSummary};
use crate::llm::CallError;
use crate::prompt::{catalog, Prompt};
use crate::vector::Namespace;

const CANDIDATE_DESCRIPTION_CHARS: usize = 240;

#[derive(Deserialize, Default)]
#[serde(default)]
struct RelationshipReply {
    relationships: Vec<RelationshipItem>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct RelationshipItem {
    referencing_table: String,
    referenced_table: String,
    foreign_key_column: String,
    primary_key_column: String,
    relationship_type: String,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct EntityReply {
    entities: Vec<EntityItem>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct EntityItem {
    name: String,
    summary: String,
    key_attributes: Vec<String>,
    member_tables: Vec<String>,
}

/// Tables ranked by undirected relationship degree, ties by name ascending.
/// Tables without relationships are never candidates.
pub fn rank_entity_candidates(tables: &[String], relationships: &[TableRelationship], top_n: usize) -> Vec<(String, usize)> {
    let mut degree: BTreeMap<&str, usize> = tables.iter().map(|t| (t.as_str(), 0)).collect();
    for r in relationships {
        for end in [&r.referencing_table, &r.referenced_table] {
            if let Some(d) = degree.get_mut(end.as_str()) {
                *d += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = degree
        .into_iter()
        .filter(|(_, d)| *d > 0)
        .map(|(t, d)| (t.to_string(), d))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    ranked
}

struct Candidate {
    name: String,
    description: String,
    columns: Vec<String>,
}

impl HdcBuilder {
    /// Stage 1: up to `similar_count` other tables of the same database whose
    /// descriptions are nearest to this table's.
    fn similar_tables(&self, database: &str, table: &str, similar_count: usize) -> Result<Vec<String>, HdcError> {
        if similar_count == 0 {
            return Ok(Vec::new());
        }
        let own_id = format!("{database}.{table}");
        let query = match self.index.get(Namespace::TableDesc, &own_id) {
            Some(doc) => doc.vector,
            None => self.index.embed(table)?,
        };
        let hits = self.index.search_vector(Namespace::TableDesc, &query, similar_count, |d| {
            d.id != own_id && d.metadata.get("database").map(String::as_str) == Some(database)
        })?;
        Ok(hits
            .into_iter()
            .filter_map(|h| h.metadata.get("table").cloned())
            .collect())
    }

    fn relationship_prompt(&self, database: &str, table: &TableMeta, own_shown: usize, candidates: &[Candidate]) -> String {
        let pk = table.primary_key();
        let mut own: Vec<String> = table
            .columns
            .iter()
            .take(own_shown)
            .map(|c| {
                let mark = if pk.contains(&c.name) { " | primary key" } else { "" };
                format!("- {} | {}{mark}", c.name, c.declared_type)
            })
            .collect();
        if own_shown < table.columns.len() {
            own.push(format!("- ... {} more columns", table.columns.len() - own_shown));
        }
        let cands: Vec<String> = candidates
            .iter()
            .map(|c| format!("- {} | {} | columns: {}", c.name, c.description, c.columns.join(", ")))
            .collect();
        Prompt::new(catalog::RELATIONSHIPS, catalog::RELATIONSHIPS_TEXT)
            .field("DATABASE", database)
            .field("TABLE", &table.name)
            .section("TABLE COLUMNS", own.join("\n"))
            .section("CANDIDATE TABLES", cands.join("\n"))
            .output(
                r#"{"relationships": [{"referencing_table": "", "referenced_table": "", "foreign_key_column": "", "primary_key_column": "", "relationship_type": "1:1|1:N"}]}"#,
            )
            .render()
    }

    /// Two-stage discovery for one table: a similarity search for candidate
    /// tables, then exactly one model call over the table and its candidates.
    pub fn discover_relationships(
        &self,
        database: &str,
        table: &TableMeta,
        schema: &SchemaSnapshot,
        similar_count: usize,
    ) -> Result<Vec<TableRelationship>, HdcError> {
        let names = self.similar_tables(database, &table.name, similar_count)?;
        let candidates: Vec<Candidate> = names
            .iter()
            .filter_map(|n| schema.table(n))
            .map(|m| Candidate {
                name: m.name.clone(),
                description: self
                    .index
                    .get(Namespace::TableDesc, &format!("{database}.{}", m.name))
                    .map(|d| clip_chars(&one_line(d.text.split_once(": ").map(|x| x.1).unwrap_or(&d.text)), CANDIDATE_DESCRIPTION_CHARS))
                    .unwrap_or_default(),
                columns: m.columns.iter().map(|c| c.name.clone()).collect(),
            })
            .collect();
        let caller = self.caller();
        let all_cols = table.columns.len();
        let prompt = caller
            .fit_prefix(candidates.len(), |k| self.relationship_prompt(database, table, all_cols, &candidates[..k]))
            .or_else(|| caller.fit_prefix(all_cols, |k| self.relationship_prompt(database, table, k, &[])))
            .map(|(_, p)| p)
            .ok_or_else(|| HdcError::Call {
                context: format!("table {} relationships", table.name),
                source: CallError::Budget {
                    tag: tags::RELATIONSHIPS.into(),
                    prompt_tokens: caller.tokens(&self.relationship_prompt(database, table, 0, &[])),
                    limit: caller.prompt_limit(),
                },
            })?;
        let context = format!("table {} relationships", table.name);
        let reply: RelationshipReply = caller
            .json(tags::RELATIONSHIPS, prompt)
            .map_err(HdcError::call(context.clone()))?;

        let mut out: Vec<TableRelationship> = Vec::new();
        for item in reply.relationships {
            let resolved = (|| {
                let from = schema.table(item.referencing_table.trim())?;
                let to = schema.table(item.referenced_table.trim())?;
                let fk = from.column(item.foreign_key_column.rsplit('.').next()?.trim())?;
                let pk = to.column(item.primary_key_column.rsplit('.').next()?.trim())?;
                if from.name != table.name && to.name != table.name {
                    return None;
                }
                Some(TableRelationship {
                    referencing_table: from.name.clone(),
                    referenced_table: to.name.clone(),
                    foreign_key_column: fk.name.clone(),
                    primary_key_column: pk.name.clone(),
                    relationship_type: RelationshipType::normalize(&item.relationship_type),
                    self_reference: from.name == to.name,
                })
            })();
            match resolved {
                Some(rel) if !out.iter().any(|r| r.edge_id() == rel.edge_id()) => out.push(rel),
                Some(_) => {}
                None => self.note(format!(
                    "{context}: dropped unresolvable relationship {}.{} -> {}.{}",
                    item.referencing_table, item.foreign_key_column, item.referenced_table, item.primary_key_column
                )),
            }
        }
        Ok(out)
    }

    pub(crate) fn persist_relationship(&self, database: &str, rel: &TableRelationship) -> Result<(), HdcError> {
        let kind = serde_json::to_value(rel.relationship_type)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let text = format!(
            "{}.{} references {}.{} ({kind})",
            rel.referencing_table, rel.foreign_key_column, rel.referenced_table, rel.primary_key_column
        );
        self.index.upsert_text(
            Namespace::TableRel,
            &format!("{database}:{}", rel.edge_id()),
            &text,
            meta(&[
                ("database", database),
                ("referencing_table", &rel.referencing_table),
                ("referenced_table", &rel.referenced_table),
            ]),
        )?;
        Ok(())
    }

    fn entity_prompt(&self, database: &str, candidates: &[&TableSummary], relationships: &[TableRelationship]) -> String {
        let tables: Vec<String> = candidates
            .iter()
            .map(|t| {
                format!(
                    "- {} | key attributes: {} | {}",
                    t.table,
                    t.key_attributes.join(", "),
                    clip_chars(&one_line(&t.nl_description), CANDIDATE_DESCRIPTION_CHARS)
                )
            })
            .collect();
        let rels: Vec<String> = relationships
            .iter()
            .filter(|r| {
                candidates.iter().any(|c| c.table == r.referencing_table)
                    && candidates.iter().any(|c| c.table == r.referenced_table)
            })
            .map(|r| format!("- {}", r.edge_id()))
            .collect();
        Prompt::new(catalog::ENTITIES, catalog::ENTITIES_TEXT)
            .field("DATABASE", database)
            .section("TABLES", tables.join("\n"))
            .section("RELATIONSHIPS", rels.join("\n"))
            .output(r#"{"entities": [{"name": "", "summary": "", "key_attributes": [""], "member_tables": [""]}]}"#)
            .render()
    }

    /// Groups the most connected tables into entities with one model call.
    pub fn extract_entities(
        &self,
        database: &str,
        tables: &[TableSummary],
        relationships: &[TableRelationship],
        top_n: usize,
    ) -> Result<Vec<EntitySummary>, HdcError> {
        let names: Vec<String> = tables.iter().map(|t| t.table.clone()).collect();
        let ranked = rank_entity_candidates(&names, relationships, top_n);
        if ranked.is_empty() {
            return Ok(Vec::new());
        }
        let candidates: Vec<&TableSummary> = ranked
            .iter()
            .filter_map(|(n, _)| tables.iter().find(|t| &t.table == n))
            .collect();
        let caller = self.caller();
        let (shown, prompt) = caller
            .fit_prefix(candidates.len(), |k| self.entity_prompt(database, &candidates[..k], relationships))
            .filter(|(k, _)| *k > 0)
            .ok_or_else(|| HdcError::Call {
                context: "entities".into(),
                source: CallError::Budget {
                    tag: tags::ENTITIES.into(),
                    prompt_tokens: caller.tokens(&self.entity_prompt(database, &candidates[..1], relationships)),
                    limit: caller.prompt_limit(),
                },
            })?;
        let candidates = &candidates[..shown];
        let reply: EntityReply = caller
            .json(tags::ENTITIES, prompt)
            .map_err(HdcError::call("entities"))?;

        let mut out: Vec<EntitySummary> = Vec::new();
        for item in reply.entities {
            let mut members: Vec<String> = Vec::new();
            for m in &item.member_tables {
                if let Some(t) = candidates.iter().find(|c| c.table.eq_ignore_ascii_case(m.trim())) {
                    if !members.contains(&t.table) {
                        members.push(t.table.clone());
                    }
                }
            }
            if members.is_empty() {
                self.note(format!("entity `{}` has no valid member tables; dropped", item.name));
                continue;
            }
            let allowed: Vec<&String> = candidates
                .iter()
                .filter(|c| members.contains(&c.table))
                .flat_map(|c| c.key_attributes.iter())
                .collect();
            let mut key_attributes: Vec<String> = Vec::new();
            for a in &item.key_attributes {
                let bare = a.rsplit('.').next().unwrap_or(a).trim();
                if let Some(found) = allowed.iter().find(|x| x.eq_ignore_ascii_case(bare)) {
                    if !key_attributes.contains(found) {
                        key_attributes.push((*found).clone());
                    }
                }
            }
            if key_attributes.is_empty() {
                key_attributes = candidates
                    .iter()
                    .filter(|c| members.contains(&c.table))
                    .filter_map(|c| c.key_attributes.first().cloned())
                    .collect();
            }
            let name = Some(one_line(&item.name))
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| members.join(" & "));
            if out.iter().any(|e| e.name.eq_ignore_ascii_case(&name)) {
                continue;
            }
            let summary = Some(one_line(&item.summary))
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| format!("Tables {}.", members.join(", ")));
            out.push(EntitySummary {
                name,
                summary,
                key_attributes,
                member_tables: members,
            });
        }
        for e in &out {
            self.index.upsert_text(
                Namespace::Entity,
                &format!("{database}:entity:{}", e.name),
                &format!("{}: {}", e.name, e.summary),
                meta(&[("database", database), ("members", &e.member_tables.join(","))]),
            )?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: &str, b: &str) -> TableRelationship {
        TableRelationship {
            referencing_table: a.into(),
            referenced_table: b.into(),
            foreign_key_column: "x".into(),
            primary_key_column: "id".into(),
            relationship_type: RelationshipType::OneToMany,
            self_reference: a == b,
        }
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ranking_by_degree_then_name() {
        // degrees a:3, b:2, c:1, d:0
        let rels = vec![rel("a", "b"), rel("a", "c"), rel("a", "b")];
        let ranked = rank_entity_candidates(&names(&["a", "b", "c", "d"]), &rels, 2);
        assert_eq!(ranked, vec![("a".to_string(), 3), ("b".to_string(), 2)]);

        let ranked = rank_entity_candidates(&names(&["b", "a"]), &[rel("a", "b"), rel("b", "a")], 1);
        assert_eq!(ranked, vec![("a".to_string(), 2)]);

        assert!(rank_entity_candidates(&names(&["a"]), &[], 5).is_empty());
    }
}
