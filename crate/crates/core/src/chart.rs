//! Chart recommendation from the result set alone: column kinds are inferred
//! from declared types and values, then an ordered rule table picks a chart.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{ChartBindings, ChartSpec, ChartType, ClarifiedTask, QueryResult, Value};
use crate::llm::Caller;
use crate::prompt::{catalog, Prompt};

pub const TAG: &str = "chart.verify";
/// Most slices a pie may have.
pub const PIE_MAX_CATEGORIES: usize = 12;
/// Most series a line pivot may split into.
pub const LINE_MAX_SERIES: usize = 6;
/// Text columns below this distinct ratio are categorical.
pub const CATEGORICAL_RATIO: f64 = 0.2;
/// Text columns with at most this many distinct values are categorical.
pub const CATEGORICAL_MAX_DISTINCT: usize = 20;
const PROMPT_ROWS: usize = 5;

static TEMPORAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\d{4}-\d{2}(-\d{2})?([ T]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?)?$").expect("valid regex")
});

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    NumericContinuous,
    NumericDiscrete,
    Categorical,
    Temporal,
    Boolean,
    Text,
}

impl ColumnKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, Self::NumericContinuous | Self::NumericDiscrete)
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct InferredColumn {
    pub name: String,
    pub kind: ColumnKind,
    pub distinct_ratio: f64,
    pub distinct: usize,
}

fn declared_is(declared: &str, needles: &[&str]) -> bool {
    let d = declared.to_ascii_uppercase();
    needles.iter().any(|n| d.contains(n))
}

fn value_key(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Integer(i) => format!("i{i}"),
        Value::Real(r) => format!("r{r}"),
        Value::Text(s) => format!("t{s}"),
    }
}

fn classify(declared: &str, values: &[&Value], distinct: usize, ratio: f64) -> ColumnKind {
    if declared_is(declared, &["BOOL"]) {
        return ColumnKind::Boolean;
    }
    if values.is_empty() {
        return if declared_is(declared, &["DATE", "TIME"]) {
            ColumnKind::Temporal
        } else if declared_is(declared, &["REAL", "FLOA", "DOUB", "DEC", "NUM"]) {
            ColumnKind::NumericContinuous
        } else if declared_is(declared, &["INT"]) {
            ColumnKind::NumericDiscrete
        } else {
            ColumnKind::Text
        };
    }
    let texts: Vec<&str> = values
        .iter()
        .filter_map(|v| match v {
            Value::Text(s) => Some(s.trim()),
            _ => None,
        })
        .collect();
    if texts.is_empty() {
        let fractional = values
            .iter()
            .any(|v| matches!(v, Value::Real(r) if r.fract() != 0.0));
        let real_declared = declared_is(declared, &["REAL", "FLOA", "DOUB", "DEC", "NUM"]);
        return if fractional || real_declared {
            ColumnKind::NumericContinuous
        } else {
            ColumnKind::NumericDiscrete
        };
    }
    if texts.len() == values.len() {
        if texts
            .iter()
            .all(|t| matches!(t.to_ascii_lowercase().as_str(), "true" | "false" | "yes" | "no"))
        {
            return ColumnKind::Boolean;
        }
        if texts.iter().all(|t| TEMPORAL.is_match(t)) {
            return ColumnKind::Temporal;
        }
        if ratio < CATEGORICAL_RATIO || distinct <= CATEGORICAL_MAX_DISTINCT {
            return ColumnKind::Categorical;
        }
    }
    ColumnKind::Text
}

/// One inferred kind per result column; nulls are ignored.
pub fn infer_column_types(result: &QueryResult) -> Vec<InferredColumn> {
    result
        .columns
        .iter()
        .enumerate()
        .map(|(i, col)| {
            let values: Vec<&Value> = result
                .rows
                .iter()
                .filter_map(|r| r.get(i))
                .filter(|v| !v.is_null())
                .collect();
            let distinct = values.iter().map(|v| value_key(v)).collect::<BTreeSet<_>>().len();
            let ratio = if values.is_empty() {
                0.0
            } else {
                distinct as f64 / values.len() as f64
            };
            InferredColumn {
                name: col.name.clone(),
                kind: classify(&col.declared_type, &values, distinct, ratio),
                distinct_ratio: ratio,
                distinct,
            }
        })
        .collect()
}

fn pie(cols: &[InferredColumn]) -> Option<ChartSpec> {
    if cols.len() != 2 {
        return None;
    }
    let (label, value) = match (cols[0].kind, cols[1].kind) {
        (ColumnKind::Categorical, k) if k.is_numeric() => (&cols[0], &cols[1]),
        (k, ColumnKind::Categorical) if k.is_numeric() => (&cols[1], &cols[0]),
        _ => return None,
    };
    (label.distinct <= PIE_MAX_CATEGORIES).then(|| ChartSpec {
        chart_type: ChartType::Pie,
        bindings: ChartBindings::Pie {
            label: label.name.clone(),
            value: value.name.clone(),
        },
    })
}

/// `x`, a numeric `y` and, for three columns, the remaining one as pivot.
fn xy(
    cols: &[InferredColumn],
    chart_type: ChartType,
    x_ok: impl Fn(&InferredColumn) -> bool,
    pivot_ok: impl Fn(&InferredColumn) -> bool,
) -> Option<ChartSpec> {
    if !(2..=3).contains(&cols.len()) {
        return None;
    }
    for (xi, x) in cols.iter().enumerate().filter(|(_, c)| x_ok(c)) {
        for (yi, y) in cols.iter().enumerate() {
            if yi == xi || !y.kind.is_numeric() {
                continue;
            }
            let rest: Vec<&InferredColumn> = (0..cols.len()).filter(|i| *i != xi && *i != yi).map(|i| &cols[i]).collect();
            let pivot = match rest.as_slice() {
                [] => None,
                [p] if pivot_ok(p) => Some(p.name.clone()),
                _ => continue,
            };
            return Some(ChartSpec {
                chart_type,
                bindings: ChartBindings::XY {
                    x: x.name.clone(),
                    y: y.name.clone(),
                    pivot_column: pivot,
                },
            });
        }
    }
    None
}

fn line(cols: &[InferredColumn]) -> Option<ChartSpec> {
    xy(
        cols,
        ChartType::Line,
        |c| matches!(c.kind, ColumnKind::Temporal | ColumnKind::NumericContinuous),
        |p| p.kind == ColumnKind::Categorical && p.distinct <= LINE_MAX_SERIES,
    )
}

fn bar(cols: &[InferredColumn]) -> Option<ChartSpec> {
    xy(
        cols,
        ChartType::Bar,
        |c| c.kind == ColumnKind::Categorical,
        |p| p.kind == ColumnKind::Categorical,
    )
}

/// Every rule that matches, in rule order, always ending with the table.
pub fn propose_charts(columns: &[InferredColumn], row_count: usize) -> Vec<ChartSpec> {
    let mut out: Vec<ChartSpec> = Vec::new();
    if row_count > 0 {
        out.extend([pie(columns), line(columns), bar(columns)].into_iter().flatten());
    }
    out.push(ChartSpec::table());
    out
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct VerifyReply {
    appropriate: bool,
    chart_type: String,
}

fn verify_prompt(task: &ClarifiedTask, result: &QueryResult, columns: &[InferredColumn], proposals: &[ChartSpec]) -> String {
    let cols: Vec<String> = columns
        .iter()
        .map(|c| {
            let kind = serde_json::to_value(c.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            format!("- {} | {kind} | distinct: {}", c.name, c.distinct)
        })
        .collect();
    let rows: Vec<String> = result
        .rows
        .iter()
        .take(PROMPT_ROWS)
        .map(|r| format!("- {}", r.iter().map(|v| v.to_string().split_whitespace().collect::<Vec<_>>().join(" ")).collect::<Vec<_>>().join(" | ")))
        .collect();
    let alternatives: Vec<String> = proposals[1..].iter().map(|p| format!("- {}", p.describe())).collect();
    Prompt::new(catalog::CHART_VERIFY, catalog::CHART_VERIFY_TEXT)
        .field("REQUEST", task.refined_task.split_whitespace().collect::<Vec<_>>().join(" "))
        .field("PROPOSED", proposals[0].chart_type.to_string())
        .section("PROPOSAL", format!("- {}", proposals[0].describe()))
        .section("ALTERNATIVES", alternatives.join("\n"))
        .section("COLUMNS", cols.join("\n"))
        .section("ROWS", rows.join("\n"))
        .output(r#"{"appropriate": true, "chart_type": "pie|line|bar|table"}"#)
        .render()
}

/// Rule proposal checked by one advisory model call. A rejection moves to
/// the alternative the model names, or the next rule; failures keep the
/// rule's first choice.
pub fn recommend_chart(caller: Option<&Caller>, task: &ClarifiedTask, result: &QueryResult) -> ChartSpec {
    let columns = infer_column_types(result);
    let proposals = propose_charts(&columns, result.rows.len());
    let Some(caller) = caller.filter(|_| proposals.len() > 1) else {
        return proposals[0].clone();
    };
    let prompt = verify_prompt(task, result, &columns, &proposals);
    let reply = match caller.json::<VerifyReply>(TAG, prompt) {
        Ok(r) => r,
        Err(e) => {
            log::info!("chart verification skipped: {e}");
            return proposals[0].clone();
        }
    };
    if reply.appropriate {
        return proposals[0].clone();
    }
    let named = reply.chart_type.trim().to_ascii_lowercase();
    proposals[1..]
        .iter()
        .find(|p| p.chart_type.to_string() == named)
        .unwrap_or(&proposals[1])
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ResultColumn;

    fn result(cols: &[(&str, &str)], rows: Vec<Vec<Value>>) -> QueryResult {
        QueryResult {
            columns: cols
                .iter()
                .map(|(n, t)| ResultColumn {
                    name: n.to_string(),
                    declared_type: t.to_string(),
                })
                .collect(),
            rows,
            truncated: false,
        }
    }

    fn kinds(r: &QueryResult) -> Vec<ColumnKind> {
        infer_column_types(r).into_iter().map(|c| c.kind).collect()
    }

    #[test]
    fn kinds_from_values() {
        let dates = result(&[("d", "")], vec![vec![Value::Text("2024-01-02".into())]]);
        assert_eq!(kinds(&dates), vec![ColumnKind::Temporal]);
        let ids = result(&[("id", "INTEGER")], (0..50).map(|i| vec![Value::Integer(i)]).collect());
        let c = &infer_column_types(&ids)[0];
        assert_eq!((c.kind, c.distinct_ratio), (ColumnKind::NumericDiscrete, 1.0));
        let four = result(
            &[("s", "TEXT")],
            (0..100).map(|i| vec![Value::Text(["a", "b", "c", "d"][i % 4].into())]).collect(),
        );
        let c = &infer_column_types(&four)[0];
        assert_eq!(c.kind, ColumnKind::Categorical);
        assert!((c.distinct_ratio - 0.04).abs() < 1e-12);
        let names = result(&[("n", "TEXT")], (0..30).map(|i| vec![Value::Text(format!("n{i}"))]).collect());
        assert_eq!(kinds(&names), vec![ColumnKind::Text]);
        let real = result(&[("x", "")], vec![vec![Value::Real(1.5)], vec![Value::Integer(2)]]);
        assert_eq!(kinds(&real), vec![ColumnKind::NumericContinuous]);
    }

    #[test]
    fn first_matching_rule_wins() {
        let r = result(
            &[("city", "TEXT"), ("n", "")],
            vec![vec![Value::Text("a".into()), Value::Integer(1)], vec![Value::Text("b".into()), Value::Integer(2)]],
        );
        let spec = recommend_chart(None, &ClarifiedTask::verbatim("q"), &r);
        assert_eq!(
            spec.bindings,
            ChartBindings::Pie {
                label: "city".into(),
                value: "n".into()
            }
        );
        let empty = result(&[("city", "TEXT"), ("n", "INTEGER")], vec![]);
        assert_eq!(recommend_chart(None, &ClarifiedTask::verbatim("q"), &empty), ChartSpec::table());
    }
}
