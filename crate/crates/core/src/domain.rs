//! Cross-module data artifacts of the exploration pipeline.
//!
//! Every type here is a plain value object with a canonical snake_case JSON
//! form. Invariants are checked by [`Validate`], which only reports and never
//! mutates or fails.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Every tunable of the pipeline in one place.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(default)]
pub struct PipelineConfig {
    /// Columns per LLM batch; 40 suits large frontier models, 80 smaller ones.
    pub column_group_size: usize,
    pub relationship_similar_count: usize,
    pub entity_top_n: usize,
    pub schema_filter_top_n: usize,
    pub max_prompt_tokens: usize,
    pub max_output_tokens: usize,
    /// Per-group budget for the table description reduce phase. When unset it
    /// is derived from `max_prompt_tokens`.
    pub reduce_max_tokens: Option<usize>,
    pub max_refine_rounds: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub sample_rows_per_column: usize,
    pub sample_seed: u64,
    pub parallelism: usize,
    pub domain_term_count: usize,
    pub fewshot_count: usize,
    pub sop_min_score: f64,
    pub result_row_limit: usize,
    pub preview_rows: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            column_group_size: 40,
            relationship_similar_count: 20,
            entity_top_n: 20,
            schema_filter_top_n: 30,
            max_prompt_tokens: 12_000,
            max_output_tokens: 2_048,
            reduce_max_tokens: None,
            max_refine_rounds: 3,
            temperature: 0.0,
            top_p: 1.0,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            sample_rows_per_column: 3,
            sample_seed: 7,
            parallelism: 4,
            domain_term_count: 5,
            fewshot_count: 3,
            sop_min_score: 0.3,
            result_row_limit: 200,
            preview_rows: 20,
        }
    }
}

impl PipelineConfig {
    /// Budget for one reduce group, leaving room for the reduce template.
    pub fn effective_reduce_max_tokens(&self) -> usize {
        self.reduce_max_tokens
            .unwrap_or_else(|| (self.max_prompt_tokens / 2).max(1))
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct ColumnSummary {
    pub database: String,
    pub table: String,
    pub column: String,
    pub declared_type: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub sample_values: Vec<String>,
    pub vector_id: String,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum TableType {
    Dimension,
    Bridge,
    Fact,
}

impl TableType {
    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "dimension" | "dim" => Some(Self::Dimension),
            "bridge" | "junction" | "link" => Some(Self::Bridge),
            "fact" => Some(Self::Fact),
            _ => None,
        }
    }
}

impl fmt::Display for TableType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dimension => "dimension",
            Self::Bridge => "bridge",
            Self::Fact => "fact",
        })
    }
}

pub const MAX_KEY_ATTRIBUTES: usize = 5;
pub const MAX_SHORT_SUMMARY_WORDS: usize = 10;

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct TableSummary {
    pub table: String,
    pub description: String,
    /// Composite keys are joined with `+`, e.g. `order_id+line_no`.
    pub chosen_primary_key: String,
    pub key_attributes: Vec<String>,
    pub table_type: TableType,
    pub main_entity: String,
    pub nl_description: String,
    pub vector_id: String,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationshipType {
    #[serde(rename = "1:1")]
    OneToOne,
    #[serde(rename = "1:N")]
    OneToMany,
}

impl RelationshipType {
    /// Anything other than an explicit one-to-one (N:M included) becomes 1:N.
    pub fn normalize(text: &str) -> Self {
        let compact: String = text
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase();
        match compact.as_str() {
            "1:1" | "one-to-one" | "onetoone" | "one_to_one" => Self::OneToOne,
            _ => Self::OneToMany,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TableRelationship {
    pub referencing_table: String,
    pub referenced_table: String,
    pub foreign_key_column: String,
    pub primary_key_column: String,
    pub relationship_type: RelationshipType,
    #[serde(default)]
    pub self_reference: bool,
}

impl TableRelationship {
    pub fn edge_id(&self) -> String {
        format!(
            "{}.{}->{}.{}",
            self.referencing_table,
            self.foreign_key_column,
            self.referenced_table,
            self.primary_key_column
        )
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct EntitySummary {
    pub name: String,
    pub summary: String,
    pub key_attributes: Vec<String>,
    pub member_tables: Vec<String>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq, Default)]
pub struct DatabaseSummary {
    pub purpose: String,
    pub domain: String,
    pub business_impact: String,
    pub real_world_example: String,
    pub user_friendly_description: String,
    pub short_summary: String,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisType {
    Descriptive,
    Inferential,
    Diagnostic,
    Predictive,
    Prescriptive,
}

impl AnalysisType {
    pub const ALL: [AnalysisType; 5] = [
        Self::Descriptive,
        Self::Inferential,
        Self::Diagnostic,
        Self::Predictive,
        Self::Prescriptive,
    ];

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "descriptive" => Some(Self::Descriptive),
            "inferential" => Some(Self::Inferential),
            "diagnostic" => Some(Self::Diagnostic),
            "predictive" => Some(Self::Predictive),
            "prescriptive" => Some(Self::Prescriptive),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Descriptive => "descriptive",
            Self::Inferential => "inferential",
            Self::Diagnostic => "diagnostic",
            Self::Predictive => "predictive",
            Self::Prescriptive => "prescriptive",
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct SuggestedQuestion {
    pub text: String,
    pub analysis_type: AnalysisType,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct Ambiguity {
    pub concept: String,
    pub explanation: String,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct ClarifiedTask {
    pub original_question: String,
    pub main_concepts: Vec<String>,
    pub ambiguities: Vec<Ambiguity>,
    pub refined_task: String,
    pub detailed_description: String,
}

impl ClarifiedTask {
    /// A task that needs no clarification.
    pub fn verbatim(question: &str) -> Self {
        Self {
            original_question: question.to_string(),
            main_concepts: Vec::new(),
            ambiguities: Vec::new(),
            refined_task: question.to_string(),
            detailed_description: question.to_string(),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct Subtask {
    pub description: String,
    pub detail: String,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct DecompositionPlan {
    pub parent: ClarifiedTask,
    pub single_sql_answerable: bool,
    pub subtasks: Vec<Subtask>,
}

/// A JSON-compatible cell value.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct ResultColumn {
    pub name: String,
    pub declared_type: String,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub struct QueryResult {
    pub columns: Vec<ResultColumn>,
    pub rows: Vec<Vec<Value>>,
    pub truncated: bool,
}

impl QueryResult {
    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Copy holding at most `limit` rows.
    pub fn preview(&self, limit: usize) -> QueryResult {
        QueryResult {
            columns: self.columns.clone(),
            rows: self.rows.iter().take(limit).cloned().collect(),
            truncated: self.truncated || self.rows.len() > limit,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SqlStatus {
    Generated,
    ExplainOk,
    Executed,
    Failed,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RefineStage {
    Explain,
    Execute,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    UnknownRelation,
    UnknownColumn,
    TypeError,
    SyntaxError,
    Other,
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::UnknownRelation => "unknown_relation",
            Self::UnknownColumn => "unknown_column",
            Self::TypeError => "type_error",
            Self::SyntaxError => "syntax_error",
            Self::Other => "other",
        })
    }
}

/// One failed check of the refinement chain and the SQL proposed in response.
/// `replacement_sql` is empty when the round budget ran out before a repair.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct RefineRound {
    pub round: usize,
    pub stage: RefineStage,
    pub input_sql: String,
    pub error_class: ErrorClass,
    pub error_text: String,
    pub replacement_sql: String,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SqlArtifact {
    pub id: String,
    pub task: ClarifiedTask,
    pub sql: String,
    pub status: SqlStatus,
    #[serde(default = "default_true")]
    pub answerable: bool,
    pub refinement_trace: Vec<RefineRound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_preview: Option<QueryResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn default_true() -> bool {
    true
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ChartType {
    Pie,
    Line,
    Bar,
    Table,
}

impl fmt::Display for ChartType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pie => "pie",
            Self::Line => "line",
            Self::Bar => "bar",
            Self::Table => "table",
        })
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ChartBindings {
    Pie {
        label: String,
        value: String,
    },
    XY {
        x: String,
        y: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pivot_column: Option<String>,
    },
    None,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct ChartSpec {
    pub chart_type: ChartType,
    pub bindings: ChartBindings,
}

impl ChartSpec {
    pub fn table() -> Self {
        Self {
            chart_type: ChartType::Table,
            bindings: ChartBindings::None,
        }
    }

    pub fn bound_columns(&self) -> Vec<&str> {
        match &self.bindings {
            ChartBindings::Pie { label, value } => vec![label, value],
            ChartBindings::XY { x, y, pivot_column } => {
                let mut out = vec![x.as_str(), y.as_str()];
                if let Some(p) = pivot_column {
                    out.push(p);
                }
                out
            }
            ChartBindings::None => Vec::new(),
        }
    }

    /// Checks bindings against the columns of the result the chart is drawn from.
    pub fn validate_against(&self, result_columns: &[String]) -> ValidationReport {
        let mut report = self.validate();
        for col in self.bound_columns() {
            if !result_columns.iter().any(|c| c == col) {
                report.push("bindings", format!("column `{col}` not in result schema"));
            }
        }
        report
    }

    pub fn describe(&self) -> String {
        match &self.bindings {
            ChartBindings::Pie { label, value } => {
                format!("pie chart: slices labelled by `{label}`, sized by `{value}`")
            }
            ChartBindings::XY { x, y, pivot_column } => {
                let series = pivot_column
                    .as_ref()
                    .map(|p| format!(", one series per `{p}`"))
                    .unwrap_or_default();
                format!("{} chart: x = `{x}`, y = `{y}`{series}", self.chart_type)
            }
            ChartBindings::None => "table".to_string(),
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, field: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.to_string(),
            message: message.into(),
        });
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.message.contains(needle) || v.field.contains(needle))
    }
}

/// Structural invariant checks. Pure and total.
pub trait Validate {
    fn validate(&self) -> ValidationReport;
}

fn non_empty(report: &mut ValidationReport, field: &str, value: &str) {
    if value.trim().is_empty() {
        report.push(field, "must be non-empty");
    }
}

impl Validate for PipelineConfig {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let counts = [
            ("column_group_size", self.column_group_size),
            ("relationship_similar_count", self.relationship_similar_count),
            ("entity_top_n", self.entity_top_n),
            ("schema_filter_top_n", self.schema_filter_top_n),
            ("max_prompt_tokens", self.max_prompt_tokens),
            ("max_output_tokens", self.max_output_tokens),
            ("max_refine_rounds", self.max_refine_rounds),
            ("sample_rows_per_column", self.sample_rows_per_column),
            ("parallelism", self.parallelism),
            ("result_row_limit", self.result_row_limit),
        ];
        for (field, value) in counts {
            if value < 1 {
                r.push(field, "must be >= 1");
            }
        }
        if self.reduce_max_tokens == Some(0) {
            r.push("reduce_max_tokens", "must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            r.push("temperature", "must be within [0, 1]");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            r.push("top_p", "must be within (0, 1]");
        }
        r
    }
}

impl Validate for ColumnSummary {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        non_empty(&mut r, "table", &self.table);
        non_empty(&mut r, "column", &self.column);
        non_empty(&mut r, "description", &self.description);
        r
    }
}

impl Validate for TableSummary {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        non_empty(&mut r, "table", &self.table);
        non_empty(&mut r, "description", &self.description);
        if self.key_attributes.len() > MAX_KEY_ATTRIBUTES {
            r.push(
                "key_attributes",
                format!(
                    "key_attributes length ≤ {MAX_KEY_ATTRIBUTES} violated ({})",
                    self.key_attributes.len()
                ),
            );
        }
        r
    }
}

impl Validate for TableRelationship {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        non_empty(&mut r, "referencing_table", &self.referencing_table);
        non_empty(&mut r, "referenced_table", &self.referenced_table);
        non_empty(&mut r, "foreign_key_column", &self.foreign_key_column);
        non_empty(&mut r, "primary_key_column", &self.primary_key_column);
        if self.referencing_table == self.referenced_table && !self.self_reference {
            r.push("self_reference", "self-referencing edge must be flagged");
        }
        if self.referencing_table != self.referenced_table && self.self_reference {
            r.push("self_reference", "flag set on an edge between distinct tables");
        }
        r
    }
}

impl Validate for EntitySummary {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        non_empty(&mut r, "name", &self.name);
        if self.member_tables.is_empty() {
            r.push("member_tables", "must be non-empty");
        }
        r
    }
}

impl Validate for DatabaseSummary {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        non_empty(&mut r, "purpose", &self.purpose);
        non_empty(&mut r, "domain", &self.domain);
        non_empty(&mut r, "business_impact", &self.business_impact);
        non_empty(&mut r, "real_world_example", &self.real_world_example);
        non_empty(&mut r, "user_friendly_description", &self.user_friendly_description);
        non_empty(&mut r, "short_summary", &self.short_summary);
        let words = word_count(&self.short_summary);
        if words > MAX_SHORT_SUMMARY_WORDS {
            r.push(
                "short_summary",
                format!("short_summary has {words} words, limit {MAX_SHORT_SUMMARY_WORDS}"),
            );
        }
        r
    }
}

impl Validate for SuggestedQuestion {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        non_empty(&mut r, "text", &self.text);
        r
    }
}

impl Validate for ClarifiedTask {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        non_empty(&mut r, "refined_task", &self.refined_task);
        for amb in &self.ambiguities {
            if !self.main_concepts.iter().any(|c| c == &amb.concept) {
                r.push(
                    "ambiguities",
                    format!("concept `{}` not among main_concepts", amb.concept),
                );
            }
            if amb.explanation.trim().is_empty() {
                r.push("ambiguities", format!("explanation for `{}` is empty", amb.concept));
            }
        }
        r
    }
}

impl Validate for DecompositionPlan {
    fn validate(&self) -> ValidationReport {
        let mut r = self.parent.validate();
        if self.single_sql_answerable && !self.subtasks.is_empty() {
            r.push("subtasks", "single_sql_answerable plan must have no subtasks");
        }
        if !self.single_sql_answerable && self.subtasks.is_empty() {
            r.push("subtasks", "multi-step plan must list subtasks");
        }
        let mut seen = BTreeSet::new();
        for st in &self.subtasks {
            if !seen.insert(st.description.as_str()) {
                r.push("subtasks", format!("duplicate subtask `{}`", st.description));
            }
        }
        r
    }
}

impl Validate for SqlArtifact {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let mut last_round = 0;
        for entry in &self.refinement_trace {
            if entry.round <= last_round {
                r.push("refinement_trace", "round numbers must strictly increase");
            }
            last_round = entry.round;
        }
        if self.status == SqlStatus::Executed {
            if let Some(last) = self.refinement_trace.last() {
                if last.replacement_sql.trim().is_empty() {
                    r.push("status", "executed artifact ends with an unresolved trace entry");
                }
            }
            if self.sql.trim().is_empty() {
                r.push("sql", "executed artifact has empty sql");
            }
        }
        if let Some(preview) = &self.result_preview {
            let arity = preview.columns.len();
            if preview.rows.iter().any(|row| row.len() != arity) {
                r.push("result_preview", "row arity differs from column count");
            }
        }
        r
    }
}

impl SqlArtifact {
    pub fn validate_rounds(&self, max_refine_rounds: usize) -> ValidationReport {
        let mut r = self.validate();
        let bound = max_refine_rounds * 2;
        if self.refinement_trace.len() > bound {
            r.push(
                "refinement_trace",
                format!("trace length {} exceeds {bound}", self.refinement_trace.len()),
            );
        }
        r
    }
}

impl Validate for ChartSpec {
    fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let ok = matches!(
            (self.chart_type, &self.bindings),
            (ChartType::Pie, ChartBindings::Pie { .. })
                | (ChartType::Line, ChartBindings::XY { .. })
                | (ChartType::Bar, ChartBindings::XY { .. })
                | (ChartType::Table, ChartBindings::None)
        );
        if !ok {
            r.push("bindings", format!("bindings do not fit a {} chart", self.chart_type));
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_summary(attrs: usize) -> TableSummary {
        TableSummary {
            table: "orders".into(),
            description: "Customer orders".into(),
            chosen_primary_key: "id".into(),
            key_attributes: (0..attrs).map(|i| format!("a{i}")).collect(),
            table_type: TableType::Fact,
            main_entity: "order".into(),
            nl_description: "One row per order".into(),
            vector_id: "orders".into(),
        }
    }

    #[test]
    fn six_key_attributes_flagged() {
        let report = table_summary(6).validate();
        assert!(report.mentions("key_attributes length ≤ 5"));
        assert!(table_summary(5).validate().is_valid());
    }

    #[test]
    fn two_word_summary_is_valid() {
        let summary = DatabaseSummary {
            purpose: "p".into(),
            domain: "d".into(),
            business_impact: "b".into(),
            real_world_example: "r".into(),
            user_friendly_description: "u".into(),
            short_summary: "Sales data".into(),
        };
        assert!(summary.validate().is_valid());
        let long = DatabaseSummary {
            short_summary: "one two three four five six seven eight nine ten eleven".into(),
            ..summary
        };
        assert!(long.validate().mentions("short_summary"));
    }

    #[test]
    fn single_sql_plan_with_subtask_flagged() {
        let plan = DecompositionPlan {
            parent: ClarifiedTask::verbatim("q"),
            single_sql_answerable: true,
            subtasks: vec![Subtask {
                description: "step".into(),
                detail: "detail".into(),
            }],
        };
        assert!(!plan.validate().is_valid());
    }

    #[test]
    fn duplicate_subtasks_flagged() {
        let st = Subtask {
            description: "same".into(),
            detail: "x".into(),
        };
        let plan = DecompositionPlan {
            parent: ClarifiedTask::verbatim("q"),
            single_sql_answerable: false,
            subtasks: vec![st.clone(), st],
        };
        assert!(plan.validate().mentions("duplicate"));
    }

    #[test]
    fn self_reference_must_be_flagged() {
        let mut rel = TableRelationship {
            referencing_table: "emp".into(),
            referenced_table: "emp".into(),
            foreign_key_column: "manager_id".into(),
            primary_key_column: "id".into(),
            relationship_type: RelationshipType::OneToMany,
            self_reference: false,
        };
        assert!(!rel.validate().is_valid());
        rel.self_reference = true;
        assert!(rel.validate().is_valid());
    }

    #[test]
    fn relationship_type_normalization() {
        assert_eq!(RelationshipType::normalize("1: 1"), RelationshipType::OneToOne);
        assert_eq!(RelationshipType::normalize("1:N"), RelationshipType::OneToMany);
        assert_eq!(RelationshipType::normalize("N:M"), RelationshipType::OneToMany);
        let json = serde_json::to_string(&RelationshipType::OneToOne).unwrap();
        assert_eq!(json, "\"1:1\"");
    }

    #[test]
    fn chart_table_requires_empty_bindings() {
        assert!(ChartSpec::table().validate().is_valid());
        let bad = ChartSpec {
            chart_type: ChartType::Table,
            bindings: ChartBindings::Pie {
                label: "a".into(),
                value: "b".into(),
            },
        };
        assert!(!bad.validate().is_valid());
        let pie = ChartSpec {
            chart_type: ChartType::Pie,
            bindings: ChartBindings::Pie {
                label: "status".into(),
                value: "n".into(),
            },
        };
        assert!(pie.validate_against(&["status".into(), "n".into()]).is_valid());
        assert!(!pie.validate_against(&["status".into()]).is_valid());
    }

    #[test]
    fn ambiguity_must_reference_a_concept() {
        let task = ClarifiedTask {
            original_question: "Which product is the best?".into(),
            main_concepts: vec!["product".into()],
            ambiguities: vec![Ambiguity {
                concept: "best".into(),
                explanation: "by revenue".into(),
            }],
            refined_task: "Top product by revenue".into(),
            detailed_description: String::new(),
        };
        assert!(!task.validate().is_valid());
    }

    #[test]
    fn config_ranges() {
        assert!(PipelineConfig::default().validate().is_valid());
        let cfg = PipelineConfig {
            temperature: 1.5,
            top_p: 0.0,
            column_group_size: 0,
            ..PipelineConfig::default()
        };
        let r = cfg.validate();
        assert_eq!(r.violations.len(), 3);
    }

    #[test]
    fn executed_artifact_with_unresolved_trace_flagged() {
        let artifact = SqlArtifact {
            id: "a".into(),
            task: ClarifiedTask::verbatim("q"),
            sql: "SELECT 1".into(),
            status: SqlStatus::Executed,
            answerable: true,
            refinement_trace: vec![RefineRound {
                round: 1,
                stage: RefineStage::Explain,
                input_sql: "SELECT x".into(),
                error_class: ErrorClass::UnknownColumn,
                error_text: "no such column: x".into(),
                replacement_sql: String::new(),
            }],
            result_preview: None,
            error: None,
        };
        assert!(!artifact.validate().is_valid());
    }
}
