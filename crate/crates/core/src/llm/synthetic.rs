//! A deterministic stand-in model that answers every pipeline prompt with a
//! well-formed reply derived only from the prompt text. Used for dry runs,
//! budget audits over generated schemas, and as the fallback behind
//! hand-written scripts.

use serde_json::{json, Value};

use super::{truncate_to_tokens, CompletionRequest, LlmError, LlmProvider, ProviderReply};
use crate::prompt::{catalog, field_of, section_of, task_of};

#[derive(Clone, Debug, Default)]
pub struct SyntheticProvider;

impl SyntheticProvider {
    pub fn new() -> Self {
        Self
    }
}

impl LlmProvider for SyntheticProvider {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<ProviderReply, LlmError> {
        let prompt = request.prompt.as_str();
        let task = task_of(prompt).unwrap_or("");
        let text = match task {
            catalog::COLUMN_SUMMARY => column_summary(prompt),
            catalog::TABLE_MAP => table_map(prompt),
            catalog::TABLE_REDUCE => table_reduce(prompt),
            catalog::TABLE_PROFILE => table_profile(prompt),
            catalog::TABLE_PRIMARY_KEY => primary_key(prompt),
            catalog::RELATIONSHIPS => relationships(prompt),
            catalog::ENTITIES => entities(prompt),
            catalog::DATABASE_SUMMARY => database_summary(prompt),
            catalog::SUGGEST_QUESTIONS => questions(prompt),
            catalog::CLARIFY => clarify(prompt),
            catalog::DECOMPOSE => json!({"single_sql_answerable": true, "subtasks": []}).to_string(),
            catalog::SCHEMA_FILTER => schema_filter(prompt),
            catalog::GENERATE_SQL => generate_sql(prompt),
            catalog::REFINE_SQL => section_of(prompt, "SQL").join("\n"),
            catalog::CHART_VERIFY => {
                let proposed = field_of(prompt, "PROPOSED").unwrap_or("table");
                json!({"appropriate": true, "chart_type": proposed}).to_string()
            }
            other => {
                return Err(LlmError::MalformedResponse(format!(
                    "synthetic provider has no behaviour for task `{other}`"
                )))
            }
        };
        Ok(ProviderReply::text(truncate_to_tokens(&text, request.max_output_tokens)))
    }
}

/// Splits `- a | b | c` list lines into trimmed cells.
fn cells(line: &str) -> Vec<&str> {
    line.trim_start()
        .strip_prefix("- ")
        .unwrap_or(line)
        .split(" | ")
        .map(str::trim)
        .collect()
}

fn list_lines<'a>(prompt: &'a str, section: &str) -> Vec<Vec<&'a str>> {
    section_of(prompt, section)
        .into_iter()
        .filter(|l| l.trim_start().starts_with("- "))
        .map(cells)
        .collect()
}

fn column_summary(prompt: &str) -> String {
    let table = field_of(prompt, "TABLE").unwrap_or("table");
    let columns: Vec<Value> = list_lines(prompt, "COLUMNS")
        .into_iter()
        .filter_map(|c| {
            let name = *c.first()?;
            let ty = c.get(1).copied().unwrap_or("");
            Some(json!({
                "column": name,
                "description": format!("The {name} attribute of {table}, stored as {ty}."),
            }))
        })
        .collect();
    json!({ "columns": columns }).to_string()
}

fn table_map(prompt: &str) -> String {
    let table = field_of(prompt, "TABLE").unwrap_or("table");
    let block = field_of(prompt, "BLOCK").unwrap_or("1");
    let names: Vec<&str> = section_of(prompt, "COLUMN DESCRIPTIONS")
        .into_iter()
        .filter_map(|l| l.trim_start().strip_prefix("- "))
        .filter_map(|l| l.split_whitespace().next())
        .collect();
    format!("Block {block} of {table} holds {}.", names.join(", "))
}

fn table_reduce(prompt: &str) -> String {
    section_of(prompt, "PARTIAL DESCRIPTIONS")
        .into_iter()
        .filter_map(|l| l.trim_start().strip_prefix("- "))
        .collect::<Vec<_>>()
        .join(" ")
}

fn table_columns(prompt: &str) -> Vec<(String, String, bool)> {
    list_lines(prompt, "COLUMNS")
        .into_iter()
        .filter_map(|c| {
            let name = c.first()?.to_string();
            let ty = c.get(1).copied().unwrap_or("").to_string();
            let pk = c.contains(&"primary key");
            Some((name, ty, pk))
        })
        .collect()
}

fn table_profile(prompt: &str) -> String {
    let table = field_of(prompt, "TABLE").unwrap_or("table");
    let columns = table_columns(prompt);
    let pk = columns
        .iter()
        .find(|c| c.2)
        .or_else(|| columns.iter().find(|c| c.0 == "id"))
        .or(columns.first())
        .map(|c| c.0.clone())
        .unwrap_or_default();
    let refs = columns.iter().filter(|c| c.0.ends_with("_id")).count();
    let table_type = match refs {
        0 | 1 => "dimension",
        _ if columns.len() <= refs + 1 => "bridge",
        _ => "fact",
    };
    let attrs: Vec<&str> = columns.iter().take(5).map(|c| c.0.as_str()).collect();
    json!({
        "primary_key_candidates": [pk],
        "primary_key": pk,
        "key_attributes": attrs,
        "table_type": table_type,
        "main_entity": table,
        "nl_description": format!("Each row of {table} is one {table} record."),
    })
    .to_string()
}

fn primary_key(prompt: &str) -> String {
    let first = list_lines(prompt, "CANDIDATES")
        .into_iter()
        .find_map(|c| c.first().map(|s| s.to_string()))
        .unwrap_or_default();
    json!({ "primary_key": first }).to_string()
}

fn singular(name: &str) -> &str {
    name.strip_suffix("es")
        .filter(|s| s.ends_with('s') || s.ends_with('x'))
        .or_else(|| name.strip_suffix('s'))
        .unwrap_or(name)
}

fn relationships(prompt: &str) -> String {
    let table = field_of(prompt, "TABLE").unwrap_or("");
    let own: Vec<String> = list_lines(prompt, "TABLE COLUMNS")
        .into_iter()
        .filter_map(|c| c.first().map(|s| s.to_string()))
        .collect();
    let mut tables: Vec<(String, Vec<String>)> = vec![(table.to_string(), own.clone())];
    for c in list_lines(prompt, "CANDIDATE TABLES") {
        let Some(name) = c.first() else { continue };
        let cols = c
            .iter()
            .find_map(|x| x.strip_prefix("columns: "))
            .map(|x| x.split(", ").map(str::to_string).collect())
            .unwrap_or_default();
        tables.push((name.to_string(), cols));
    }
    let mut rels = Vec::new();
    let mut link = |from: &str, fk: &str, to: &str| {
        rels.push(json!({
            "referencing_table": from,
            "referenced_table": to,
            "foreign_key_column": fk,
            "primary_key_column": "id",
            "relationship_type": "1:N",
        }));
    };
    for (name, cols) in &tables {
        for col in cols {
            let Some(base) = col.strip_suffix("_id") else { continue };
            for (target, target_cols) in &tables {
                let involves_probe = name == table || target == table;
                if involves_probe && singular(target) == base && target_cols.iter().any(|c| c == "id") {
                    link(name, col, target);
                }
            }
        }
    }
    json!({ "relationships": rels }).to_string()
}

fn entities(prompt: &str) -> String {
    let rows = list_lines(prompt, "TABLES");
    let members: Vec<&str> = rows.iter().filter_map(|c| c.first().copied()).collect();
    let attrs: Vec<&str> = rows
        .iter()
        .filter_map(|c| c.iter().find_map(|x| x.strip_prefix("key attributes: ")))
        .flat_map(|x| x.split(", ").take(1))
        .filter(|x| !x.is_empty())
        .collect();
    let Some(first) = members.first() else {
        return json!({ "entities": [] }).to_string();
    };
    json!({
        "entities": [{
            "name": format!("{first} group"),
            "summary": format!("Tables connected around {first}."),
            "key_attributes": attrs,
            "member_tables": members,
        }]
    })
    .to_string()
}

fn database_summary(prompt: &str) -> String {
    let db = field_of(prompt, "DATABASE").unwrap_or("database");
    json!({
        "purpose": format!("Records the operations captured in {db}."),
        "domain": "General business operations",
        "business_impact": "Supports reporting and operational decisions.",
        "real_world_example": "An analyst reviewing weekly activity.",
        "user_friendly_description": format!("{db} holds operational records for analysis."),
        "short_summary": format!("Operational records of {db}"),
    })
    .to_string()
}

fn questions(prompt: &str) -> String {
    let subject = list_lines(prompt, "ENTITIES")
        .first()
        .and_then(|c| c.first().map(|s| s.to_string()))
        .unwrap_or_else(|| "the data".to_string());
    let qs: Vec<Value> = [
        ("descriptive", format!("What does {subject} look like overall?")),
        ("inferential", format!("What can a sample of {subject} tell us about all records?")),
        ("diagnostic", format!("Why did {subject} change recently?")),
        ("predictive", format!("How will {subject} evolve next month?")),
        ("prescriptive", format!("What should be done to improve {subject}?")),
    ]
    .into_iter()
    .map(|(t, q)| json!({"text": q, "analysis_type": t}))
    .collect();
    json!({ "questions": qs }).to_string()
}

fn clarify(prompt: &str) -> String {
    let question = field_of(prompt, "QUESTION").unwrap_or("");
    let mut refined = question.to_string();
    for line in section_of(prompt, "GLOSSARY") {
        let Some((term, meaning)) = line.strip_prefix("- ").and_then(|l| l.split_once(": ")) else {
            continue;
        };
        let words: Vec<&str> = refined.split(' ').collect();
        if words.iter().any(|w| w.trim_matches(|c: char| !c.is_alphanumeric()) == term) {
            refined = words
                .iter()
                .map(|w| {
                    if w.trim_matches(|c: char| !c.is_alphanumeric()) == term {
                        w.replacen(term, &format!("{term} ({meaning})"), 1)
                    } else {
                        w.to_string()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
        }
    }
    json!({
        "main_concepts": [],
        "ambiguities": [],
        "refined_task": refined,
        "detailed_description": refined,
    })
    .to_string()
}

fn schema_filter(prompt: &str) -> String {
    let mut tables: Vec<Value> = Vec::new();
    let mut current: Option<(String, Vec<String>)> = None;
    for line in section_of(prompt, "TABLES") {
        if let Some(rest) = line.strip_prefix("- ") {
            if let Some((t, cols)) = current.take() {
                tables.push(json!({"table": t, "columns": cols}));
            }
            let name = rest.split(':').next().unwrap_or(rest).trim().to_string();
            current = Some((name, Vec::new()));
        } else if let Some(rest) = line.trim_start().strip_prefix("- ") {
            if let Some((_, cols)) = current.as_mut() {
                if let Some(col) = rest.split_whitespace().next() {
                    cols.push(col.to_string());
                }
            }
        }
    }
    if let Some((t, cols)) = current {
        tables.push(json!({"table": t, "columns": cols}));
    }
    json!({ "tables": tables }).to_string()
}

fn generate_sql(prompt: &str) -> String {
    section_of(prompt, "SCHEMA")
        .into_iter()
        .find_map(|l| l.strip_prefix("- "))
        .and_then(|l| l.split(':').next())
        .map(|t| format!("SELECT COUNT(*) FROM `{}`", t.trim()))
        .unwrap_or_default()
}
