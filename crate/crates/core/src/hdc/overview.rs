use serde::Deserialize;

use super::{clip_chars, meta, one_line, tags, HdcBuilder, HdcError};
use crate::domain::{word_count, AnalysisType, DatabaseSummary, EntitySummary, SuggestedQuestion, TableSummary};
use crate::llm::{with_correction, CallError, Caller};
use crate::prompt::{catalog, Prompt};
use crate::vector::Namespace;

pub(crate) const SHORT_SUMMARY_WORDS: usize = 10;
const LINE_CHARS: usize = 240;

#[derive(Deserialize, Default)]
#[serde(default)]
struct QuestionReply {
    questions: Vec<QuestionItem>,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct QuestionItem {
    #[serde(alias = "question")]
    text: String,
    #[serde(alias = "type")]
    analysis_type: String,
}

fn summary_problems(s: &DatabaseSummary) -> Vec<String> {
    let mut out = Vec::new();
    for (name, value) in summary_fields(s) {
        if value.trim().is_empty() {
            out.push(format!("field {name} is empty"));
        }
    }
    let words = word_count(&s.short_summary);
    if words > SHORT_SUMMARY_WORDS {
        out.push(format!("short_summary has {words} words, at most {SHORT_SUMMARY_WORDS} are allowed"));
    }
    out
}

fn summary_fields(s: &DatabaseSummary) -> [(&'static str, &String); 6] {
    [
        ("purpose", &s.purpose),
        ("domain", &s.domain),
        ("business_impact", &s.business_impact),
        ("real_world_example", &s.real_world_example),
        ("user_friendly_description", &s.user_friendly_description),
        ("short_summary", &s.short_summary),
    ]
}

fn tidy(s: DatabaseSummary) -> DatabaseSummary {
    DatabaseSummary {
        purpose: one_line(&s.purpose),
        domain: one_line(&s.domain),
        business_impact: one_line(&s.business_impact),
        real_world_example: one_line(&s.real_world_example),
        user_friendly_description: one_line(&s.user_friendly_description),
        short_summary: one_line(&s.short_summary),
    }
}

/// Mechanical repair used only after the corrective call still failed.
fn force_valid(database: &str, mut s: DatabaseSummary) -> DatabaseSummary {
    let fallback = if s.user_friendly_description.trim().is_empty() {
        format!("Data held in {database}.")
    } else {
        s.user_friendly_description.clone()
    };
    for v in [
        &mut s.purpose,
        &mut s.domain,
        &mut s.business_impact,
        &mut s.real_world_example,
        &mut s.user_friendly_description,
    ] {
        if v.trim().is_empty() {
            *v = fallback.clone();
        }
    }
    if s.short_summary.trim().is_empty() {
        s.short_summary = format!("Overview of {database}");
    }
    s.short_summary = s
        .short_summary
        .split_whitespace()
        .take(SHORT_SUMMARY_WORDS)
        .collect::<Vec<_>>()
        .join(" ");
    s
}

impl HdcBuilder {
    fn summary_prompt(&self, database: &str, entities: &[EntitySummary], tables: &[TableSummary], shown: usize) -> String {
        let p = Prompt::new(catalog::DATABASE_SUMMARY, catalog::DATABASE_SUMMARY_TEXT).field("DATABASE", database);
        let p = if entities.is_empty() {
            let lines: Vec<String> = tables
                .iter()
                .take(shown)
                .map(|t| format!("- {} | {}", t.table, clip_chars(&one_line(&t.nl_description), LINE_CHARS)))
                .collect();
            p.section("TABLES", lines.join("\n"))
        } else {
            let lines: Vec<String> = entities
                .iter()
                .take(shown)
                .map(|e| {
                    format!(
                        "- {} | {} | members: {}",
                        e.name,
                        clip_chars(&one_line(&e.summary), LINE_CHARS),
                        e.member_tables.join(", ")
                    )
                })
                .collect();
            p.section("ENTITIES", lines.join("\n"))
        };
        p.output(
            r#"{"purpose": "", "domain": "", "business_impact": "", "real_world_example": "", "user_friendly_description": "", "short_summary": ""}"#,
        )
        .render()
    }

    fn fitted<F: Fn(usize) -> String>(&self, caller: &Caller, tag: &str, n: usize, build: F) -> Result<String, HdcError> {
        caller
            .fit_prefix(n, &build)
            .map(|(_, p)| p)
            .ok_or_else(|| HdcError::Call {
                context: tag.to_string(),
                source: CallError::Budget {
                    tag: tag.to_string(),
                    prompt_tokens: caller.tokens(&build(0)),
                    limit: caller.prompt_limit(),
                },
            })
    }

    /// Database-level overview built from the entities, or from the table
    /// summaries when no entity could be formed.
    pub fn summarize_database(
        &self,
        database: &str,
        entities: &[EntitySummary],
        tables: &[TableSummary],
    ) -> Result<DatabaseSummary, HdcError> {
        let caller = self.caller();
        let n = if entities.is_empty() { tables.len() } else { entities.len() };
        let prompt = self.fitted(&caller, tags::DB_SUMMARY, n, |k| {
            self.summary_prompt(database, entities, tables, k)
        })?;
        let first: DatabaseSummary = caller
            .json(tags::DB_SUMMARY, prompt.clone())
            .map_err(HdcError::call("database summary"))?;
        let mut summary = tidy(first);
        let problems = summary_problems(&summary);
        if !problems.is_empty() {
            let retry = format!("{}.retry", tags::DB_SUMMARY);
            let corrected = with_correction(&prompt, &problems.join("; "));
            let second = if caller.fits(&corrected) {
                caller.json::<DatabaseSummary>(&retry, corrected).ok().map(tidy)
            } else {
                None
            };
            match second {
                Some(s) if summary_problems(&s).is_empty() => summary = s,
                other => {
                    let base = other.unwrap_or(summary);
                    self.note(format!("database summary repaired mechanically: {}", problems.join("; ")));
                    summary = force_valid(database, base);
                }
            }
        }
        self.index.upsert_text(
            Namespace::DbSummary,
            &format!("{database}:summary"),
            &format!("{}: {}", summary.short_summary, summary.user_friendly_description),
            meta(&[("database", database)]),
        )?;
        Ok(summary)
    }

    fn question_prompt(&self, summary: &DatabaseSummary, entities: &[EntitySummary], tables: &[TableSummary], shown: usize) -> String {
        let lines: Vec<String> = if entities.is_empty() {
            tables
                .iter()
                .take(shown)
                .map(|t| format!("- {} | {}", t.table, clip_chars(&one_line(&t.nl_description), LINE_CHARS)))
                .collect()
        } else {
            entities
                .iter()
                .take(shown)
                .map(|e| format!("- {} | {}", e.name, clip_chars(&one_line(&e.summary), LINE_CHARS)))
                .collect()
        };
        Prompt::new(catalog::SUGGEST_QUESTIONS, catalog::SUGGEST_QUESTIONS_TEXT)
            .section("SUMMARY", one_line(&summary.user_friendly_description))
            .section("ENTITIES", lines.join("\n"))
            .output(r#"{"questions": [{"text": "", "analysis_type": "descriptive|inferential|diagnostic|predictive|prescriptive"}]}"#)
            .render()
    }

    fn collect_questions(&self, reply: QuestionReply, out: &mut Vec<SuggestedQuestion>) {
        for q in reply.questions {
            let text = one_line(&q.text);
            let Some(kind) = AnalysisType::parse(&q.analysis_type) else {
                if !text.is_empty() {
                    self.note(format!("question with unknown analysis type `{}` dropped", q.analysis_type));
                }
                continue;
            };
            if text.is_empty() || out.iter().any(|x| x.text == text) {
                continue;
            }
            out.push(SuggestedQuestion { text, analysis_type: kind });
        }
    }

    /// Starter questions covering every analysis type.
    pub fn suggest_questions(
        &self,
        database: &str,
        summary: &DatabaseSummary,
        entities: &[EntitySummary],
        tables: &[TableSummary],
    ) -> Result<Vec<SuggestedQuestion>, HdcError> {
        let caller = self.caller();
        let n = if entities.is_empty() { tables.len() } else { entities.len() };
        let prompt = self.fitted(&caller, tags::QUESTIONS, n, |k| self.question_prompt(summary, entities, tables, k))?;
        let reply: QuestionReply = caller
            .json(tags::QUESTIONS, prompt.clone())
            .map_err(HdcError::call("suggested questions"))?;
        let mut out = Vec::new();
        self.collect_questions(reply, &mut out);

        let missing = |out: &[SuggestedQuestion]| -> Vec<AnalysisType> {
            AnalysisType::ALL
                .into_iter()
                .filter(|t| !out.iter().any(|q| q.analysis_type == *t))
                .collect()
        };
        let lacking = missing(&out);
        if !lacking.is_empty() {
            let names: Vec<&str> = lacking.iter().map(|t| t.as_str()).collect();
            let corrected = with_correction(&prompt, &format!("add questions for the missing analysis types: {}", names.join(", ")));
            let retry = format!("{}.retry", tags::QUESTIONS);
            if caller.fits(&corrected) {
                if let Ok(reply) = caller.json::<QuestionReply>(&retry, corrected) {
                    self.collect_questions(reply, &mut out);
                }
            }
        }
        let subject = entities
            .first()
            .map(|e| e.name.clone())
            .or_else(|| tables.first().map(|t| t.table.clone()))
            .unwrap_or_else(|| database.to_string());
        for kind in missing(&out) {
            self.note(format!("no {} question suggested; template used", kind.as_str()));
            out.push(SuggestedQuestion {
                text: template_question(kind, &subject),
                analysis_type: kind,
            });
        }
        out.sort_by_key(|q| q.analysis_type);
        Ok(out)
    }
}

fn template_question(kind: AnalysisType, subject: &str) -> String {
    match kind {
        AnalysisType::Descriptive => format!("How many records does {subject} have, broken down by category?"),
        AnalysisType::Inferential => format!("Is the difference between groups in {subject} larger than chance?"),
        AnalysisType::Diagnostic => format!("Which factors explain the changes seen in {subject}?"),
        AnalysisType::Predictive => format!("What will {subject} look like over the next period?"),
        AnalysisType::Prescriptive => format!("What action would most improve the results in {subject}?"),
    }
}
