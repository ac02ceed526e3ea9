//! Strict literal typing for engines that coerce silently. A non-numeric
//! string literal used in arithmetic, or compared against a column declared
//! numeric, is rejected the way a strictly typed engine would reject it.

use std::collections::HashMap;

use super::SchemaSnapshot;
use crate::sqltext::{significant, unquote_str, Token, TokenKind};

/// Declared column types keyed by lower-cased table, then column.
#[derive(Clone, Debug, Default)]
pub struct ColumnTypes {
    tables: HashMap<String, HashMap<String, String>>,
}

impl ColumnTypes {
    pub fn from_snapshot(snapshot: &SchemaSnapshot) -> Self {
        let tables = snapshot
            .tables
            .iter()
            .map(|t| {
                let cols = t
                    .columns
                    .iter()
                    .map(|c| (c.name.to_ascii_lowercase(), c.declared_type.clone()))
                    .collect();
                (t.name.to_ascii_lowercase(), cols)
            })
            .collect();
        Self { tables }
    }

    fn numeric_kind(&self, tables: &[String], column: &str) -> Option<&'static str> {
        let column = column.to_ascii_lowercase();
        let kinds: Vec<Option<&'static str>> = tables
            .iter()
            .filter_map(|t| self.tables.get(t))
            .filter_map(|cols| cols.get(&column))
            .map(|ty| numeric_type_name(ty))
            .collect();
        match kinds.first() {
            Some(Some(k)) if kinds.iter().all(Option::is_some) => Some(k),
            _ => None,
        }
    }
}

fn numeric_type_name(declared: &str) -> Option<&'static str> {
    let t = declared.to_ascii_uppercase();
    if t.contains("INT") {
        Some("integer")
    } else if t.contains("CHAR") || t.contains("TEXT") || t.contains("CLOB") {
        None
    } else if t.contains("REAL") || t.contains("FLOA") || t.contains("DOUB") {
        Some("real")
    } else if t.contains("NUM") || t.contains("DEC") {
        Some("numeric")
    } else {
        None
    }
}

const ARITHMETIC: &[&str] = &["+", "-", "*", "/", "%"];
const COMPARISON: &[&str] = &["=", "==", "<>", "!=", "<", ">", "<=", ">="];

fn is_any_punct(t: Option<&Token>, set: &[&str]) -> bool {
    t.is_some_and(|t| t.kind == TokenKind::Punct && set.contains(&t.text))
}

/// Column reference ending at `idx` (inclusive), read leftwards: `col` or `q.col`.
fn column_left(toks: &[Token], idx: usize) -> Option<(Option<String>, String)> {
    let col = toks.get(idx)?.ident()?;
    if idx >= 2 && toks[idx - 1].is_punct(".") {
        return Some((toks[idx - 2].ident(), col));
    }
    Some((None, col))
}

/// Column reference starting at `idx`, read rightwards.
fn column_right(toks: &[Token], idx: usize) -> Option<(Option<String>, String)> {
    let first = toks.get(idx)?.ident()?;
    if toks.get(idx + 1).is_some_and(|t| t.is_punct(".")) {
        let col = toks.get(idx + 2)?.ident()?;
        return Some((Some(first), col));
    }
    Some((None, first))
}

/// Returns the engine-style error message for the first offending literal.
pub fn check_literal_types(sql: &str, types: &ColumnTypes) -> Option<String> {
    let toks = significant(sql);
    let referenced: Vec<String> = toks
        .iter()
        .filter_map(|t| t.ident())
        .map(|s| s.to_ascii_lowercase())
        .filter(|s| types.tables.contains_key(s))
        .collect();
    for (i, t) in toks.iter().enumerate() {
        if t.kind != TokenKind::Str {
            continue;
        }
        let value = unquote_str(t.text);
        if value.trim().parse::<f64>().is_ok() {
            continue;
        }
        let prev = i.checked_sub(1).and_then(|p| toks.get(p));
        let next = toks.get(i + 1);
        let err = |kind: &str| Some(format!("invalid input syntax for type {kind}: '{value}'"));
        if is_any_punct(prev, ARITHMETIC) || is_any_punct(next, ARITHMETIC) {
            return err("integer");
        }
        let other = if is_any_punct(prev, COMPARISON) && i >= 2 {
            column_left(&toks, i - 2)
        } else if is_any_punct(next, COMPARISON) {
            column_right(&toks, i + 2)
        } else {
            None
        };
        let Some((qualifier, column)) = other else { continue };
        let scope: Vec<String> = match qualifier.map(|q| q.to_ascii_lowercase()) {
            Some(q) if types.tables.contains_key(&q) => vec![q],
            _ => referenced.clone(),
        };
        if let Some(kind) = types.numeric_kind(&scope, &column) {
            return err(kind);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::db::{ColumnMeta, TableMeta};

    fn types() -> ColumnTypes {
        let col = |n: &str, t: &str| ColumnMeta {
            name: n.into(),
            declared_type: t.into(),
            comment: None,
        };
        ColumnTypes::from_snapshot(&SchemaSnapshot {
            database: "d".into(),
            tables: vec![TableMeta {
                name: "orders".into(),
                columns: vec![col("id", "INTEGER"), col("status", "TEXT"), col("amount", "REAL")],
                declared_keys: vec![],
                row_count_estimate: 0,
            }],
        })
    }

    #[test]
    fn rejects_text_against_numeric() {
        let t = types();
        assert_eq!(
            check_literal_types("SELECT * FROM orders WHERE id = 'abc'", &t).as_deref(),
            Some("invalid input syntax for type integer: 'abc'")
        );
        assert!(check_literal_types("SELECT * FROM orders o WHERE 'x' < o.amount", &t).is_some());
        assert!(check_literal_types("SELECT 'abc' + 1", &t).is_some());
    }

    #[test]
    fn accepts_well_typed() {
        let t = types();
        assert_eq!(check_literal_types("SELECT * FROM orders WHERE status = 'paid'", &t), None);
        assert_eq!(check_literal_types("SELECT * FROM orders WHERE id = '42'", &t), None);
        assert_eq!(check_literal_types("SELECT 'a' || 'b' FROM orders", &t), None);
        assert_eq!(check_literal_types("SELECT id FROM orders WHERE status LIKE 'p%'", &t), None);
    }
}
