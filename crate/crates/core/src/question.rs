//! Question clarification against the data context and decomposition into
//! single-query steps, with procedure and worked-example retrieval.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Ambiguity, ClarifiedTask, DecompositionPlan, Subtask};
use crate::hdc::HdcArtifacts;
use crate::llm::{CallError, Caller};
use crate::prompt::{catalog, Prompt};
use crate::vector::{IndexError, Namespace, VectorIndex};

pub mod tags {
    pub const CLARIFY: &str = "question.clarify";
    pub const DECOMPOSE: &str = "question.decompose";
}

/// Similarity floor for glossary entries found by search rather than by name.
pub const DOMAIN_TERM_MIN_SCORE: f64 = 0.2;
const CONTEXT_TABLES: usize = 8;
const LINE_CHARS: usize = 240;

#[derive(Debug, Error)]
pub enum QuestionError {
    #[error("no data context for database `{0}`; build it first")]
    NoContext(String),
    #[error(transparent)]
    Call(#[from] CallError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("unknown artifact `{0}`")]
    UnknownArtifact(String),
    #[error("{path}: line {line}: {message}")]
    Ingest { path: String, line: usize, message: String },
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct SopDocument {
    pub id: String,
    pub domain_tag: String,
    pub steps: Vec<String>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct DomainTerm {
    pub term: String,
    pub definition: String,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct FewShotPair {
    pub id: String,
    pub question: String,
    /// A decomposition plan or SQL text.
    pub answer_payload: String,
    pub satisfaction_marked: bool,
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn clip(text: &str, max: usize) -> String {
    let line = one_line(text);
    if line.chars().count() <= max {
        return line;
    }
    let mut out: String = line.chars().take(max).collect();
    out.push_str("...");
    out
}

fn meta(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, QuestionError> {
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| QuestionError::Ingest {
        path: shown.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| QuestionError::Ingest {
            path: shown.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| QuestionError::Ingest {
            path: shown.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn add_domain_term(index: &VectorIndex, term: &DomainTerm) -> Result<(), QuestionError> {
    index.upsert_text(
        Namespace::DomainTerm,
        &format!("term:{}", term.term.to_ascii_lowercase()),
        &format!("{}: {}", term.term, one_line(&term.definition)),
        meta(&[("term", &term.term)]),
    )?;
    Ok(())
}

pub fn add_sop(index: &VectorIndex, sop: &SopDocument) -> Result<(), QuestionError> {
    if sop.steps.iter().all(|s| s.trim().is_empty()) {
        return Err(QuestionError::Ingest {
            path: sop.id.clone(),
            line: 0,
            message: "procedure has no steps".into(),
        });
    }
    let steps = serde_json::to_string(&sop.steps).expect("steps serialize");
    index.upsert_text(
        Namespace::Sop,
        &format!("sop:{}", sop.id),
        &sop.domain_tag,
        meta(&[("steps", &steps), ("domain_tag", &sop.domain_tag)]),
    )?;
    Ok(())
}

/// Loads `{"term", "definition"}` lines; returns how many were stored.
pub fn load_domain_terms(index: &VectorIndex, path: &Path) -> Result<usize, QuestionError> {
    let terms: Vec<DomainTerm> = read_ndjson(path)?;
    for t in &terms {
        add_domain_term(index, t)?;
    }
    Ok(terms.len())
}

/// Loads `{"id", "domain_tag", "steps"}` lines; returns how many were stored.
pub fn load_sops(index: &VectorIndex, path: &Path) -> Result<usize, QuestionError> {
    let sops: Vec<SopDocument> = read_ndjson(path)?;
    for s in &sops {
        add_sop(index, s)?;
    }
    Ok(sops.len())
}

/// Glossary entries for `text`: terms named verbatim first, then the nearest
/// others above the similarity floor.
pub fn glossary_for(index: &VectorIndex, text: &str, k: usize) -> Result<Vec<String>, QuestionError> {
    if k == 0 || index.is_empty(Namespace::DomainTerm) {
        return Ok(Vec::new());
    }
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|w| !w.is_empty())
        .map(|w| w.to_ascii_lowercase())
        .collect();
    let mut out: Vec<(String, String)> = index
        .list(Namespace::DomainTerm)
        .into_iter()
        .filter(|d| {
            d.metadata
                .get("term")
                .is_some_and(|t| words.contains(&t.to_ascii_lowercase()))
        })
        .map(|d| (d.id, d.text))
        .collect();
    out.sort();
    for hit in index.search(Namespace::DomainTerm, text, k)? {
        if hit.score >= DOMAIN_TERM_MIN_SCORE && !out.iter().any(|(id, _)| *id == hit.id) {
            out.push((hit.id, hit.text));
        }
    }
    out.truncate(k);
    Ok(out.into_iter().map(|(_, t)| clip(&t, LINE_CHARS)).collect())
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct ClarifyReply {
    main_concepts: Vec<String>,
    ambiguities: Vec<AmbiguityItem>,
    refined_task: String,
    detailed_description: String,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct AmbiguityItem {
    concept: String,
    explanation: String,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct DecomposeReply {
    single_sql_answerable: Option<bool>,
    subtasks: Vec<SubtaskItem>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct SubtaskItem {
    description: String,
    detail: String,
}

/// Makes a clarification satisfy the task invariants: a non-empty refined
/// task and ambiguities that name a listed concept and explain it.
pub fn normalize_clarified(question: &str, mut task: ClarifiedTask) -> ClarifiedTask {
    task.original_question = question.to_string();
    task.main_concepts = task
        .main_concepts
        .iter()
        .map(|c| one_line(c))
        .filter(|c| !c.is_empty())
        .fold(Vec::new(), |mut acc, c| {
            if !acc.contains(&c) {
                acc.push(c);
            }
            acc
        });
    task.ambiguities.retain(|a| !a.concept.trim().is_empty() && !a.explanation.trim().is_empty());
    for a in &mut task.ambiguities {
        a.concept = one_line(&a.concept);
        a.explanation = one_line(&a.explanation);
        if !task.main_concepts.iter().any(|c| c.eq_ignore_ascii_case(&a.concept)) {
            task.main_concepts.push(a.concept.clone());
        }
    }
    if task.refined_task.trim().is_empty() {
        task.refined_task = question.to_string();
    }
    if task.detailed_description.trim().is_empty() {
        task.detailed_description = task.refined_task.clone();
    }
    task
}

/// Enforces single query ⟺ no steps and distinct step descriptions.
pub fn normalize_plan(parent: ClarifiedTask, single: Option<bool>, steps: Vec<Subtask>) -> (DecompositionPlan, Vec<String>) {
    let mut notes = Vec::new();
    let mut subtasks: Vec<Subtask> = Vec::new();
    for s in steps {
        let description = one_line(&s.description);
        if description.is_empty() {
            continue;
        }
        if subtasks.iter().any(|x| x.description == description) {
            notes.push(format!("duplicate step `{description}` dropped"));
            continue;
        }
        subtasks.push(Subtask {
            description,
            detail: one_line(&s.detail),
        });
    }
    let single = match single {
        Some(true) if !subtasks.is_empty() => {
            notes.push(format!("single-query plan listed {} steps; steps dropped", subtasks.len()));
            subtasks.clear();
            true
        }
        Some(false) if subtasks.is_empty() => {
            notes.push("multi-step plan listed no steps; treated as a single query".into());
            true
        }
        Some(flag) => flag,
        None => subtasks.is_empty(),
    };
    (
        DecompositionPlan {
            parent,
            single_sql_answerable: single,
            subtasks,
        },
        notes,
    )
}

/// Read-only access to one database's data context for question handling.
pub struct QuestionEngine<'a> {
    pub caller: Caller<'a>,
    pub index: &'a VectorIndex,
    pub hdc: &'a HdcArtifacts,
}

impl<'a> QuestionEngine<'a> {
    pub fn new(caller: Caller<'a>, index: &'a VectorIndex, hdc: &'a HdcArtifacts) -> Self {
        Self { caller, index, hdc }
    }

    fn context_tables(&self, question: &str) -> Result<Vec<String>, QuestionError> {
        let db = self.hdc.database.as_str();
        let hits = self
            .index
            .search_filtered(Namespace::TableDesc, question, CONTEXT_TABLES, |d| {
                d.metadata.get("database").map(String::as_str) == Some(db)
            })?;
        Ok(hits
            .into_iter()
            .filter_map(|h| h.metadata.get("table").and_then(|t| self.hdc.table(t)))
            .map(|t| format!("- {} | {}", t.table, clip(&t.nl_description, LINE_CHARS)))
            .collect())
    }

    fn clarify_prompt(&self, question: &str, tables: &[String], glossary: &[String]) -> String {
        let entities: Vec<String> = self
            .hdc
            .entities
            .iter()
            .map(|e| format!("- {} | {}", e.name, clip(&e.summary, LINE_CHARS)))
            .collect();
        let mut p = Prompt::new(catalog::CLARIFY, catalog::CLARIFY_TEXT)
            .field("QUESTION", one_line(question))
            .section("DATABASE", clip(&self.hdc.summary.user_friendly_description, 4 * LINE_CHARS));
        if !entities.is_empty() {
            p = p.section("ENTITIES", entities.join("\n"));
        }
        p = p.section("TABLES", tables.join("\n"));
        if !glossary.is_empty() {
            let lines: Vec<String> = glossary.iter().map(|g| format!("- {g}")).collect();
            p = p.section("GLOSSARY", lines.join("\n"));
        }
        p.output(
            r#"{"main_concepts": [""], "ambiguities": [{"concept": "", "explanation": ""}], "refined_task": "", "detailed_description": ""}"#,
        )
        .render()
    }

    /// Resolves vague concepts and abbreviations in `question` without asking
    /// the user back; the readings chosen are returned as ambiguities.
    pub fn clarify(&self, question: &str) -> Result<ClarifiedTask, QuestionError> {
        if self.hdc.tables.is_empty() || self.index.is_empty(Namespace::TableDesc) {
            return Err(QuestionError::NoContext(self.hdc.database.clone()));
        }
        let tables = self.context_tables(question)?;
        let glossary = glossary_for(self.index, question, self.caller.config.domain_term_count)?;
        let prompt = self
            .caller
            .fit_prefix(tables.len(), |k| self.clarify_prompt(question, &tables[..k], &glossary))
            .map(|(_, p)| p)
            .unwrap_or_else(|| self.clarify_prompt(question, &[], &[]));
        let reply: ClarifyReply = self.caller.json(tags::CLARIFY, prompt)?;
        let task = ClarifiedTask {
            original_question: question.to_string(),
            main_concepts: reply.main_concepts,
            ambiguities: reply
                .ambiguities
                .into_iter()
                .map(|a| Ambiguity {
                    concept: a.concept,
                    explanation: a.explanation,
                })
                .collect(),
            refined_task: one_line(&reply.refined_task),
            detailed_description: one_line(&reply.detailed_description),
        };
        Ok(normalize_clarified(question, task))
    }

    /// The procedure whose domain tag is closest to the task, if close enough.
    pub fn select_sop(&self, task: &ClarifiedTask) -> Result<Option<Vec<String>>, QuestionError> {
        if self.index.is_empty(Namespace::Sop) {
            return Ok(None);
        }
        let hit = self.index.search(Namespace::Sop, &task.refined_task, 1)?.into_iter().next();
        Ok(hit
            .filter(|h| h.score >= self.caller.config.sop_min_score)
            .and_then(|h| h.metadata.get("steps").and_then(|s| serde_json::from_str(s).ok())))
    }

    /// Stored satisfied examples nearest to the task.
    pub fn examples(&self, text: &str, kind: &str) -> Result<Vec<FewShotPair>, QuestionError> {
        let k = self.caller.config.fewshot_count;
        if k == 0 || self.index.is_empty(Namespace::FewshotSql) {
            return Ok(Vec::new());
        }
        let db = self.hdc.database.as_str();
        let hits = self.index.search_filtered(Namespace::FewshotSql, text, k, |d| {
            d.metadata.get("kind").map(String::as_str) == Some(kind)
                && d.metadata.get("database").map(String::as_str) == Some(db)
        })?;
        Ok(hits
            .into_iter()
            .map(|h| FewShotPair {
                id: h.id,
                question: h.metadata.get("question").cloned().unwrap_or(h.text),
                answer_payload: h.metadata.get("payload").cloned().unwrap_or_default(),
                satisfaction_marked: true,
            })
            .collect())
    }

    fn decompose_prompt(&self, task: &ClarifiedTask, sop: Option<&[String]>, examples: &[FewShotPair]) -> String {
        let mut p = Prompt::new(catalog::DECOMPOSE, catalog::DECOMPOSE_TEXT)
            .field("REQUEST", one_line(&task.refined_task))
            .section("DETAILS", one_line(&task.detailed_description));
        if let Some(steps) = sop {
            let lines: Vec<String> = steps.iter().enumerate().map(|(i, s)| format!("{}. {}", i + 1, one_line(s))).collect();
            p = p.section("PROCEDURE", lines.join("\n"));
        }
        if !examples.is_empty() {
            let lines: Vec<String> = examples
                .iter()
                .map(|e| format!("- question: {} | plan: {}", one_line(&e.question), one_line(&e.answer_payload)))
                .collect();
            p = p.section("EXAMPLES", lines.join("\n"));
        }
        p.output(r#"{"single_sql_answerable": true, "subtasks": [{"description": "", "detail": ""}]}"#)
            .render()
    }

    /// Decides whether one query answers the task and otherwise lists the
    /// steps, each answerable by one query.
    pub fn decompose(&self, task: &ClarifiedTask) -> Result<(DecompositionPlan, Vec<String>), QuestionError> {
        let sop = self.select_sop(task)?;
        let examples = self.examples(&task.refined_task, "plan")?;
        let prompt = self
            .caller
            .fit_prefix(examples.len(), |k| self.decompose_prompt(task, sop.as_deref(), &examples[..k]))
            .map(|(_, p)| p)
            .unwrap_or_else(|| self.decompose_prompt(task, None, &[]));
        let reply: DecomposeReply = self.caller.json(tags::DECOMPOSE, prompt)?;
        let steps = reply
            .subtasks
            .into_iter()
            .map(|s| Subtask {
                description: s.description,
                detail: s.detail,
            })
            .collect();
        let (plan, notes) = normalize_plan(task.clone(), reply.single_sql_answerable, steps);
        for n in &notes {
            log::warn!("decomposition: {n}");
        }
        Ok((plan, notes))
    }
}

/// Artifacts a user may rate. Satisfied ones become retrievable examples.
#[derive(Default)]
pub struct FeedbackLedger {
    known: Mutex<BTreeMap<String, (String, FewShotPair)>>,
}

impl FeedbackLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes `id` rateable; `kind` is `plan` or `sql`.
    pub fn register(&self, id: &str, database: &str, kind: &str, question: &str, payload: &str) {
        let pair = FewShotPair {
            id: id.to_string(),
            question: question.to_string(),
            answer_payload: payload.to_string(),
            satisfaction_marked: false,
        };
        self.known
            .lock()
            .expect("feedback lock poisoned")
            .insert(id.to_string(), (format!("{database}\u{1f}{kind}"), pair));
    }

    pub fn get(&self, id: &str) -> Option<FewShotPair> {
        self.known.lock().expect("feedback lock poisoned").get(id).map(|(_, p)| p.clone())
    }

    /// Idempotent: rating the same artifact twice leaves one example.
    pub fn record(&self, index: &VectorIndex, id: &str, satisfied: bool) -> Result<(), QuestionError> {
        let mut known = self.known.lock().expect("feedback lock poisoned");
        let (scope, pair) = known.get_mut(id).ok_or_else(|| QuestionError::UnknownArtifact(id.to_string()))?;
        let (database, kind) = scope.split_once('\u{1f}').unwrap_or((scope.as_str(), "sql"));
        let doc_id = format!("fewshot:{id}");
        pair.satisfaction_marked = satisfied;
        if satisfied {
            index.upsert_text(
                Namespace::FewshotSql,
                &doc_id,
                &pair.question,
                meta(&[
                    ("database", database),
                    ("kind", kind),
                    ("question", &pair.question),
                    ("payload", &pair.answer_payload),
                ]),
            )?;
        } else {
            index.delete(Namespace::FewshotSql, &doc_id)?;
        }
        Ok(())
    }
}
