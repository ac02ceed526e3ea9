//! Prompt construction.
//!
//! Every prompt has the same sectioned layout so that scripted test doubles
//! can match on stable markers and prompt dumps diff cleanly:
//!
//! ```text
//! ### TASK: TABLE_MAP
//! <instructions>
//! ### TABLE: orders
//! <section body>
//! ### OUTPUT FORMAT:
//! <format description>
//! ```
//!
//! The instruction texts live in [`catalog`].

use std::fmt::Write;

pub const TASK_MARKER: &str = "### TASK: ";

#[derive(Clone, Debug)]
pub struct Prompt {
    task: &'static str,
    instructions: String,
    sections: Vec<(String, String)>,
    output_format: Option<String>,
}

impl Prompt {
    pub fn new(task: &'static str, instructions: impl Into<String>) -> Self {
        Self {
            task,
            instructions: instructions.into(),
            sections: Vec::new(),
            output_format: None,
        }
    }

    /// A one-line section rendered as `### NAME: value`.
    pub fn field(mut self, name: &str, value: impl AsRef<str>) -> Self {
        self.sections
            .push((format!("{name}: {}", value.as_ref().trim()), String::new()));
        self
    }

    /// A multi-line section rendered as `### NAME:` followed by the body.
    pub fn section(mut self, name: &str, body: impl Into<String>) -> Self {
        self.sections.push((format!("{name}:"), body.into()));
        self
    }

    pub fn output(mut self, format: impl Into<String>) -> Self {
        self.output_format = Some(format.into());
        self
    }

    pub fn task(&self) -> &'static str {
        self.task
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TASK_MARKER}{}", self.task);
        let _ = writeln!(out, "{}", self.instructions.trim_end());
        for (header, body) in &self.sections {
            let _ = writeln!(out, "### {header}");
            if !body.is_empty() {
                let _ = writeln!(out, "{}", body.trim_end());
            }
        }
        if let Some(format) = &self.output_format {
            let _ = writeln!(out, "### OUTPUT FORMAT:");
            let _ = writeln!(out, "{}", format.trim_end());
        }
        out
    }
}

/// Reads the task marker back out of a rendered prompt.
pub fn task_of(prompt: &str) -> Option<&str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(TASK_MARKER))
        .map(str::trim)
}

/// Returns the value of a one-line `### NAME: value` section.
pub fn field_of<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let prefix = format!("### {name}: ");
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(prefix.as_str()))
        .map(str::trim)
}

/// Returns the body lines of a multi-line `### NAME:` section.
pub fn section_of<'a>(prompt: &'a str, name: &str) -> Vec<&'a str> {
    let header = format!("### {name}:");
    let mut lines = prompt.lines();
    for line in lines.by_ref() {
        if line.trim_end() == header {
            break;
        }
    }
    lines.take_while(|l| !l.starts_with("### ")).collect()
}

/// Instruction texts for every LLM call the pipeline makes.
pub mod catalog {
    pub const COLUMN_SUMMARY: &str = "COLUMN_SUMMARY";
    pub const TABLE_MAP: &str = "TABLE_MAP";
    pub const TABLE_REDUCE: &str = "TABLE_REDUCE";
    pub const TABLE_PROFILE: &str = "TABLE_PROFILE";
    pub const TABLE_PRIMARY_KEY: &str = "TABLE_PRIMARY_KEY";
    pub const RELATIONSHIPS: &str = "RELATIONSHIPS";
    pub const ENTITIES: &str = "ENTITIES";
    pub const DATABASE_SUMMARY: &str = "DATABASE_SUMMARY";
    pub const SUGGEST_QUESTIONS: &str = "SUGGEST_QUESTIONS";
    pub const CLARIFY: &str = "CLARIFY";
    pub const DECOMPOSE: &str = "DECOMPOSE";
    pub const SCHEMA_FILTER: &str = "SCHEMA_FILTER";
    pub const GENERATE_SQL: &str = "GENERATE_SQL";
    pub const REFINE_SQL: &str = "REFINE_SQL";
    pub const CHART_VERIFY: &str = "CHART_VERIFY";

    /// Marker placed in every corrective re-prompt.
    pub const CORRECTION: &str = "### CORRECTION:";

    pub const COLUMN_SUMMARY_TEXT: &str = "Document each column listed below. Work through it in order: \
look at the column name, its declared type, the sample values and any comment; resolve abbreviations \
with the glossary entries given; then write a single sentence saying what the column holds and how \
its values are formatted.";

    pub const TABLE_MAP_TEXT: &str = "The table below is too wide to describe at once, so it was cut into \
column blocks. Write a short paragraph about what this block of columns says about the table, based \
on the column descriptions.";

    pub const TABLE_REDUCE_TEXT: &str = "Combine the partial table descriptions below into one description \
of the whole table. Keep each distinct fact once and stay brief.";

    pub const TABLE_PROFILE_TEXT: &str = "Profile the table below step by step. \
First, name the columns that could serve as primary key and pick the single best one. \
Second, name up to five columns that matter most for understanding the table. \
Third, say whether the table is a dimension, bridge or fact table. \
Fourth, name the real-world thing each row is about. \
Fifth, describe the table in plain language.";

    pub const TABLE_PRIMARY_KEY_TEXT: &str = "More than one primary key was proposed for the table below. \
Pick the one column (or column combination) that identifies a row best.";

    pub const RELATIONSHIPS_TEXT: &str = "Find the foreign key links between the focus table and the other \
tables listed (a table may also point at itself). Report, per link, the table holding the foreign key, \
the table it points to, the foreign key column, the target key column and whether the link is 1:1 or 1:N. \
Use only the tables and columns shown. Answer with an empty list if there are no links.";

    pub const ENTITIES_TEXT: &str = "The tables below have the most links to other tables. Group them \
into business entities. Per entity give a name for the group, a short account of what it is for and \
what it reveals about the data, key attributes chosen from the grouped tables' key attributes, and \
the member table names.";

    pub const DATABASE_SUMMARY_TEXT: &str = "Describe the data source below, step by step, with these fields: \
purpose (what it is for, not which entities it has); domain; business impact (plainly, how it helps \
running, analysing or deciding); real-world example (a concrete situation where it is used); \
user-friendly description (merge the fields above into a friendly overview); short summary \
(at most 10 words, derived from the overview).";

    pub const SUGGEST_QUESTIONS_TEXT: &str = "Propose questions an analyst could explore with this \
database, based on the summary and entities below. Cover every analysis type at least once: \
descriptive, inferential, diagnostic, predictive and prescriptive.";

    pub const CLARIFY_TEXT: &str = "Make the user's question precise using the data context below. \
Go step by step: list the concepts and variables the question uses; decide for each whether the \
data context leaves it open to more than one reading; for each unclear one, explain the reading that \
the available data supports; restate the task with those readings applied so the goal is explicit; \
finally describe the restated task in detail with its goal, expected result and caveats. \
Spell out abbreviations found among the glossary entries.";

    pub const DECOMPOSE_TEXT: &str = "Start by deciding whether one SQL query can answer the task. \
If not, split it into an ordered list of steps, each answerable by one SQL query and each with a \
detailed description. When a procedure is provided follow it, and use the worked examples as a guide.";

    pub const SCHEMA_FILTER_TEXT: &str = "Reason step by step. From the table and column summaries below, \
choose the tables and columns needed for the task. Choose only from what is listed and answer with \
an empty list if nothing applies.";

    pub const GENERATE_SQL_TEXT: &str = "Write a single SQL query for the task, step by step: find the words \
in the task that point at tables or columns; tie each one to a concrete table and column from the \
schema below; build the query from those ties and the listed relationships, and return nothing if \
no query fits; then clean it up by writing columns as table.column whenever more than one table is \
used, checking each column sits in the table it is attributed to, and wrapping every table and \
column name in backticks.";

    pub const REFINE_SQL_TEXT: &str = "The database rejected the SQL query below. Read the error and \
return a fixed query for the same task. Reply with SQL only.";

    pub const CHART_VERIFY_TEXT: &str = "A chart type was suggested for the query result below. \
Pie: shares of a whole across categories. Line: one measure moving along an ordered axis such as time. \
Bar: side-by-side comparison of groups. Table: anything else. Check whether the suggestion suits \
the task and the data, and if it does not, choose one of the alternatives.";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_round_trip() {
        let p = Prompt::new("TABLE_MAP", "Describe.")
            .field("TABLE", "orders")
            .section("COLUMNS", "- id | INTEGER\n- amount | REAL")
            .output("text")
            .render();
        assert_eq!(task_of(&p), Some("TABLE_MAP"));
        assert_eq!(field_of(&p, "TABLE"), Some("orders"));
        assert_eq!(section_of(&p, "COLUMNS"), vec!["- id | INTEGER", "- amount | REAL"]);
        assert!(section_of(&p, "MISSING").is_empty());
    }
}
