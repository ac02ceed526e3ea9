//! Hierarchical data context construction.
//!
//! The build runs bottom-up: column summaries per block, table descriptions
//! by map-reduce over the blocks, table profiles, relationships, entities,
//! a database summary and finally suggested questions. Every artifact is
//! written to the vector index under the database's name.

mod columns;
mod graph;
mod overview;
mod tables;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::db::{Database, DbError, SchemaSnapshot, TableMeta};
use crate::domain::{
    ColumnSummary, DatabaseSummary, EntitySummary, PipelineConfig, SuggestedQuestion, TableRelationship,
    TableSummary,
};
use crate::llm::{CallError, Caller, Gateway, TagUsage};
use crate::vector::{IndexError, Namespace, VectorIndex};

pub use columns::{partition_columns, ColumnBlock};
pub use graph::rank_entity_candidates;
pub use tables::{DescriptionBatch, ReduceOutcome};

pub mod tags {
    pub const COLUMN_SUMMARY: &str = "hdc.column_summary";
    pub const TABLE_MAP: &str = "hdc.table_map";
    pub const TABLE_REDUCE: &str = "hdc.table_reduce";
    pub const TABLE_PROFILE: &str = "hdc.table_profile";
    pub const PRIMARY_KEY: &str = "hdc.primary_key";
    pub const RELATIONSHIPS: &str = "hdc.relationships";
    pub const ENTITIES: &str = "hdc.entities";
    pub const DB_SUMMARY: &str = "hdc.db_summary";
    pub const QUESTIONS: &str = "hdc.questions";
}

#[derive(Debug, Error)]
pub enum HdcError {
    #[error("{context}: {source}")]
    Call {
        context: String,
        #[source]
        source: CallError,
    },
    #[error("reduce cannot progress: an entry of {entry_tokens} tokens exceeds the {max_tokens} token group budget")]
    ReduceBudget { entry_tokens: usize, max_tokens: usize },
    #[error("empty description batch for table {0}")]
    EmptyBatch(String),
    #[error("table {table}: {message}")]
    Validation {
        table: String,
        message: String,
        profile: Box<TableSummary>,
    },
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl HdcError {
    /// True for every variant that signals a token budget violation.
    pub fn is_budget(&self) -> bool {
        matches!(
            self,
            HdcError::ReduceBudget { .. }
                | HdcError::Call {
                    source: CallError::Budget { .. },
                    ..
                }
        )
    }

    pub(crate) fn call(context: impl Into<String>) -> impl FnOnce(CallError) -> HdcError {
        let context = context.into();
        move |source| HdcError::Call { context, source }
    }
}

/// Everything the build produced, in a deterministic order.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct HdcArtifacts {
    pub database: String,
    pub schema: SchemaSnapshot,
    pub columns: Vec<ColumnSummary>,
    pub tables: Vec<TableSummary>,
    pub relationships: Vec<TableRelationship>,
    pub entities: Vec<EntitySummary>,
    pub summary: DatabaseSummary,
    pub questions: Vec<SuggestedQuestion>,
}

impl HdcArtifacts {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifacts serialize")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn table(&self, name: &str) -> Option<&TableSummary> {
        self.tables.iter().find(|t| t.table.eq_ignore_ascii_case(name))
    }

    pub fn columns_of<'a>(&'a self, table: &'a str) -> impl Iterator<Item = &'a ColumnSummary> + 'a {
        self.columns.iter().filter(move |c| c.table.eq_ignore_ascii_case(table))
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct StageTiming {
    pub stage: String,
    pub millis: u64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SkippedTable {
    pub table: String,
    pub stage: String,
    pub error: String,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub struct BuildCounts {
    pub tables_total: usize,
    pub tables_summarized: usize,
    pub columns_total: usize,
    pub columns_summarized: usize,
    pub relationships: usize,
    pub entities: usize,
    pub questions: usize,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub struct BuildReport {
    pub database: String,
    pub provider: String,
    pub parallelism: usize,
    pub stages: Vec<StageTiming>,
    pub counts: BuildCounts,
    pub skipped: Vec<SkippedTable>,
    pub warnings: Vec<String>,
    pub relationship_searches: usize,
    /// Deepest reduce recursion seen over all tables.
    pub max_reduce_levels: usize,
    /// Reduce recursion depth per summarized table.
    #[serde(default)]
    pub reduce_levels: BTreeMap<String, usize>,
    pub usage: BTreeMap<String, TagUsage>,
    pub total: TagUsage,
}

impl BuildReport {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self).expect("report serializes"))
    }
}

/// Collapses whitespace so free text can sit on one prompt line and never
/// starts a new prompt section.
pub(crate) fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn clip_chars(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let mut out: String = text.chars().take(max_chars).collect();
    out.push_str("...");
    out
}

/// Longest char prefix of `text` within `max_tokens`.
pub(crate) fn clip_tokens(caller: &Caller, text: &str, max_tokens: usize) -> String {
    if caller.tokens(text) <= max_tokens {
        return text.to_string();
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let (mut lo, mut hi) = (0usize, chars.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        let end = chars.get(mid).map(|c| c.0).unwrap_or(text.len());
        if caller.tokens(&text[..end]) <= max_tokens {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let end = chars.get(lo).map(|c| c.0).unwrap_or(text.len());
    text[..end].trim_end().to_string()
}

pub(crate) fn meta(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Namespaces the build owns; a rebuild replaces their contents per database.
/// Output tokens reserved for one column description.
pub const OUTPUT_TOKENS_PER_COLUMN: usize = 32;

pub const HDC_NAMESPACES: [Namespace; 5] = [
    Namespace::ColumnDesc,
    Namespace::TableDesc,
    Namespace::TableRel,
    Namespace::Entity,
    Namespace::DbSummary,
];

pub struct HdcBuilder {
    gateway: Arc<Gateway>,
    index: Arc<VectorIndex>,
    db: Arc<dyn Database>,
    config: PipelineConfig,
    notes: Mutex<Vec<String>>,
}

struct TableOutcome {
    columns: Vec<ColumnSummary>,
    summary: TableSummary,
    reduce_levels: usize,
}

impl HdcBuilder {
    pub fn new(gateway: Arc<Gateway>, index: Arc<VectorIndex>, db: Arc<dyn Database>, config: PipelineConfig) -> Self {
        Self {
            gateway,
            index,
            db,
            config,
            notes: Mutex::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub(crate) fn caller(&self) -> Caller<'_> {
        Caller::new(&self.gateway, &self.config)
    }

    pub(crate) fn note(&self, message: String) {
        log::warn!("{message}");
        self.notes.lock().expect("notes lock poisoned").push(message);
    }

    fn take_notes(&self) -> Vec<String> {
        let mut notes = std::mem::take(&mut *self.notes.lock().expect("notes lock poisoned"));
        notes.sort();
        notes
    }

    /// Per-group reduce budget, never above half the prompt limit so the
    /// reduce template always has room.
    pub fn reduce_budget(&self) -> usize {
        self.config
            .effective_reduce_max_tokens()
            .min(self.caller().prompt_limit() / 2)
            .max(1)
    }

    /// Columns per block: the configured group size, further bounded by the
    /// provider's context window and by the output budget.
    pub fn group_size(&self) -> usize {
        self.config
            .column_group_size
            .min(self.gateway.profile().column_group_bound())
            .min(self.config.max_output_tokens / OUTPUT_TOKENS_PER_COLUMN)
            .max(1)
    }

    /// Removes every document the previous build of `database` left behind.
    pub fn clear_database(&self, database: &str) -> Result<(), HdcError> {
        for ns in HDC_NAMESPACES {
            for doc in self.index.list(ns) {
                if doc.metadata.get("database").map(String::as_str) == Some(database) {
                    self.index.delete(ns, &doc.id)?;
                }
            }
        }
        Ok(())
    }

    fn table_pipeline(&self, database: &str, table: &TableMeta) -> Result<TableOutcome, (String, HdcError)> {
        let samples = self
            .column_samples(table)
            .map_err(|e| ("sample_rows".to_string(), e))?;
        let blocks = partition_columns(table, self.group_size());
        let per_block: Vec<Result<Vec<ColumnSummary>, HdcError>> = blocks
            .par_iter()
            .map(|b| self.summarize_columns_adaptive(database, b, &samples))
            .collect();
        let mut columns = Vec::with_capacity(table.columns.len());
        for r in per_block {
            columns.extend(r.map_err(|e| ("column_summary".to_string(), e))?);
        }
        let batch = self
            .map_table_blocks(database, table, &blocks, &columns)
            .map_err(|e| ("table_map".to_string(), e))?;
        let reduced = self
            .reduce_table_descriptions(&batch, self.reduce_budget())
            .map_err(|e| ("table_reduce".to_string(), e))?;
        let summary = match self.derive_table_profile(database, table, &reduced.text) {
            Ok(s) => s,
            Err(HdcError::Validation { table: t, message, profile }) => {
                let mut profile = *profile;
                profile.key_attributes.truncate(crate::domain::MAX_KEY_ATTRIBUTES);
                self.note(format!("table {t}: {message}; truncated key attributes"));
                self.persist_table(database, &profile)
                    .map_err(|e| ("table_profile".to_string(), e))?;
                profile
            }
            Err(e) => return Err(("table_profile".to_string(), e)),
        };
        Ok(TableOutcome {
            columns,
            summary,
            reduce_levels: reduced.levels,
        })
    }

    /// Runs the complete build against the builder's database.
    pub fn build(&self) -> Result<(HdcArtifacts, BuildReport), HdcError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.parallelism.max(1))
            .build()
            .map_err(|e| HdcError::Pool(e.to_string()))?;
        pool.install(|| self.build_inner())
    }

    fn build_inner(&self) -> Result<(HdcArtifacts, BuildReport), HdcError> {
        let mut report = BuildReport {
            provider: self.gateway.provider_name().to_string(),
            parallelism: self.config.parallelism.max(1),
            ..BuildReport::default()
        };
        let stage = |name: &str, started: Instant, report: &mut BuildReport| {
            report.stages.push(StageTiming {
                stage: name.to_string(),
                millis: started.elapsed().as_millis() as u64,
            });
        };

        let started = Instant::now();
        let schema = self.db.introspect()?;
        let database = schema.database.clone();
        report.database = database.clone();
        self.clear_database(&database)?;
        stage("introspect", started, &mut report);

        let started = Instant::now();
        let outcomes: Vec<Result<TableOutcome, (String, HdcError)>> = schema
            .tables
            .par_iter()
            .map(|t| self.table_pipeline(&database, t))
            .collect();
        let mut columns = Vec::new();
        let mut tables = Vec::new();
        for (meta, outcome) in schema.tables.iter().zip(outcomes) {
            match outcome {
                Ok(o) => {
                    report.max_reduce_levels = report.max_reduce_levels.max(o.reduce_levels);
                    report.reduce_levels.insert(meta.name.clone(), o.reduce_levels);
                    columns.extend(o.columns);
                    tables.push(o.summary);
                }
                Err((stage_name, e)) => {
                    for c in &meta.columns {
                        self.index
                            .delete(Namespace::ColumnDesc, &columns::column_vector_id(&database, &meta.name, &c.name))?;
                    }
                    report.skipped.push(SkippedTable {
                        table: meta.name.clone(),
                        stage: stage_name,
                        error: e.to_string(),
                    });
                }
            }
        }
        stage("tables", started, &mut report);

        let started = Instant::now();
        let summarized: Vec<&TableMeta> = schema
            .tables
            .iter()
            .filter(|m| tables.iter().any(|t| t.table == m.name))
            .collect();
        let per_table: Vec<Result<Vec<TableRelationship>, HdcError>> = summarized
            .par_iter()
            .map(|m| self.discover_relationships(&database, m, &schema, self.config.relationship_similar_count))
            .collect();
        report.relationship_searches = summarized.len();
        let mut relationships: Vec<TableRelationship> = Vec::new();
        for (meta, r) in summarized.iter().zip(per_table) {
            match r {
                Ok(found) => {
                    for rel in found {
                        if !relationships.iter().any(|x| x.edge_id() == rel.edge_id()) {
                            relationships.push(rel);
                        }
                    }
                }
                Err(e) => report.skipped.push(SkippedTable {
                    table: meta.name.clone(),
                    stage: "relationships".into(),
                    error: e.to_string(),
                }),
            }
        }
        for rel in &relationships {
            self.persist_relationship(&database, rel)?;
        }
        stage("relationships", started, &mut report);

        let started = Instant::now();
        let entities = self.extract_entities(&database, &tables, &relationships, self.config.entity_top_n)?;
        stage("entities", started, &mut report);

        let started = Instant::now();
        let summary = self.summarize_database(&database, &entities, &tables)?;
        stage("database_summary", started, &mut report);

        let started = Instant::now();
        let questions = self.suggest_questions(&database, &summary, &entities, &tables)?;
        stage("questions", started, &mut report);

        self.index.flush()?;
        report.counts = BuildCounts {
            tables_total: schema.tables.len(),
            tables_summarized: tables.len(),
            columns_total: schema.column_count(),
            columns_summarized: columns.len(),
            relationships: relationships.len(),
            entities: entities.len(),
            questions: questions.len(),
        };
        report.warnings = self.take_notes();
        report.usage = self.gateway.usage();
        report.total = self.gateway.total_usage();
        let artifacts = HdcArtifacts {
            database,
            schema,
            columns,
            tables,
            relationships,
            entities,
            summary,
            questions,
        };
        Ok((artifacts, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ProviderProfile;
    use crate::llm::SyntheticProvider;

    #[test]
    fn clip_tokens_respects_budget() {
        let gw = Gateway::new(Arc::new(SyntheticProvider), ProviderProfile::unbounded("t"));
        let config = PipelineConfig::default();
        let c = Caller::new(&gw, &config);
        let text = "abcdefghij".repeat(10);
        let clipped = clip_tokens(&c, &text, 7);
        assert_eq!(c.tokens(&clipped), 7);
        assert!(text.starts_with(&clipped));
        assert_eq!(clip_tokens(&c, "short", 7), "short");
    }

    #[test]
    fn one_line_flattens_sections() {
        assert_eq!(one_line("a\n### TASK: x\n  b"), "a ### TASK: x b");
    }

    #[test]
    fn group_size_and_reduce_budget_follow_the_provider() {
        let mut profile = ProviderProfile::unbounded("small");
        profile.context_window_tokens = 1024;
        let gw = Arc::new(Gateway::new(Arc::new(SyntheticProvider), profile));
        let index = Arc::new(VectorIndex::in_memory(Arc::new(crate::vector::StubEmbedder::new(8))));
        let db: Arc<dyn Database> = Arc::new(crate::db::SqliteDatabase::from_sql("e", "").unwrap());
        let config = PipelineConfig {
            max_output_tokens: 256,
            ..PipelineConfig::default()
        };
        let b = HdcBuilder::new(gw, index, db, config);
        // 1024/16 = 64 by window, 256/32 = 8 by output
        assert_eq!(b.group_size(), 8);
        // prompt limit is 1024 - 256
        assert_eq!(b.reduce_budget(), 384);
    }
}
