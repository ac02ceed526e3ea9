//! Identifier roles in a SQL statement, recovered from tokens and clause
//! context only. Drives the reference checks and the rewrite pass.

use std::collections::{BTreeMap, BTreeSet};

use crate::db::SchemaSnapshot;
use crate::sqltext::{backtick, is_keyword, significant, Token, TokenKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Clause {
    None,
    With,
    Select,
    From,
    Where,
    /// GROUP BY, ORDER BY and HAVING, where output aliases win over columns.
    Grouping,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Paren {
    Query,
    Function,
    Using,
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Table,
    CteRef,
    CteName,
    TableAlias,
    DerivedAlias,
    OutputAlias,
    Qualifier,
    QualifiedColumn,
    UsingColumn,
    Column { grouping: bool },
    Function,
}

#[derive(Clone, Debug)]
struct Item {
    tok: usize,
    role: Role,
    name: String,
}

fn lower(s: &str) -> String {
    s.to_ascii_lowercase()
}

fn is_ident(t: &Token) -> bool {
    match t.kind {
        TokenKind::QuotedIdent => true,
        TokenKind::Word => !is_keyword(t.text),
        _ => false,
    }
}

fn ends_operand(t: &Token) -> bool {
    is_ident(t) || t.is_punct(")") || matches!(t.kind, TokenKind::Str | TokenKind::Number)
}

struct Shape<'a> {
    toks: Vec<Token<'a>>,
    items: Vec<Item>,
    tables: Vec<String>,
    table_aliases: BTreeMap<String, String>,
    ctes: BTreeSet<String>,
    soft_aliases: BTreeSet<String>,
}

fn classify<'a>(sql: &'a str, schema: &SchemaSnapshot) -> Shape<'a> {
    let toks = significant(sql);
    let mut frames: Vec<(Paren, Clause)> = vec![(Paren::Query, Clause::None)];
    let mut items: Vec<Item> = Vec::new();
    let mut ctes: BTreeSet<String> = BTreeSet::new();
    // CTE names are visible before their first use, collect them up front
    for (i, t) in toks.iter().enumerate() {
        if is_ident(t)
            && toks.get(i + 1).is_some_and(|n| n.is_word("AS"))
            && toks.get(i + 2).is_some_and(|n| n.is_punct("("))
            && i > 0
            && (toks[i - 1].is_word("WITH") || toks[i - 1].is_punct(",") || toks[i - 1].is_word("RECURSIVE"))
        {
            ctes.insert(lower(&t.ident().unwrap_or_default()));
        }
    }
    for i in 0..toks.len() {
        let t = toks[i];
        let prev = i.checked_sub(1).map(|p| toks[p]);
        let next = toks.get(i + 1).copied();
        if t.is_punct("(") {
            let kind = if next.is_some_and(|n| n.is_word("SELECT") || n.is_word("WITH")) {
                Paren::Query
            } else if prev.is_some_and(|p| p.is_word("USING")) {
                Paren::Using
            } else if prev.is_some_and(|p| {
                p.kind == TokenKind::Word && !p.is_word("IN") && !p.is_word("AS") && !p.is_word("ON") && !p.is_word("OVER")
                    && !p.is_word("AND") && !p.is_word("OR") && !p.is_word("NOT") && !p.is_word("WHERE")
                    && !p.is_word("SELECT") && !p.is_word("BY") && !p.is_word("FROM") && !p.is_word("JOIN")
            }) {
                Paren::Function
            } else {
                Paren::Plain
            };
            let inherited = frames.last().map(|f| f.1).unwrap_or(Clause::None);
            let clause = match kind {
                Paren::Query => Clause::None,
                Paren::Function | Paren::Using | Paren::Plain if inherited == Clause::From => Clause::Other,
                _ => inherited,
            };
            frames.push((kind, clause));
            continue;
        }
        if t.is_punct(")") {
            if frames.len() > 1 {
                frames.pop();
            }
            continue;
        }
        let (paren, clause) = *frames.last().expect("frame stack never empty");
        if t.kind == TokenKind::Word && is_keyword(t.text) {
            let dotted = prev.is_some_and(|p| p.is_punct(".")) || next.is_some_and(|n| n.is_punct("."));
            if !dotted {
                if paren != Paren::Function {
                    let set = match t.text.to_ascii_uppercase().as_str() {
                        "WITH" => Some(Clause::With),
                        "SELECT" => Some(Clause::Select),
                        "FROM" | "JOIN" => Some(Clause::From),
                        "WHERE" | "ON" => Some(Clause::Where),
                        "GROUP" | "ORDER" | "HAVING" => Some(Clause::Grouping),
                        "LIMIT" | "OFFSET" | "WINDOW" => Some(Clause::Other),
                        "UNION" | "INTERSECT" | "EXCEPT" => Some(Clause::None),
                        _ => None,
                    };
                    if let Some(c) = set {
                        frames.last_mut().expect("frame").1 = c;
                    }
                }
                continue;
            }
        } else if !is_ident(&t) {
            continue;
        }
        let name = t.ident().unwrap_or_default();
        let prev_is = |w: &str| prev.is_some_and(|p| p.is_word(w));
        let role = if t.kind == TokenKind::Word && next.is_some_and(|n| n.is_punct("(")) {
            Role::Function
        } else if next.is_some_and(|n| n.is_punct(".")) {
            Role::Qualifier
        } else if prev.is_some_and(|p| p.is_punct(".")) {
            Role::QualifiedColumn
        } else if ctes.contains(&lower(&name)) && next.is_some_and(|n| n.is_word("AS")) && clause == Clause::With {
            Role::CteName
        } else if prev_is("AS") {
            let before = i.checked_sub(2).map(|p| toks[p]);
            match clause {
                Clause::From if before.is_some_and(|b| b.is_punct(")")) => Role::DerivedAlias,
                Clause::From => Role::TableAlias,
                _ => Role::OutputAlias,
            }
        } else if prev.is_some_and(|p| ends_operand(&p)) && paren != Paren::Using {
            match clause {
                Clause::From if prev.is_some_and(|p| p.is_punct(")")) => Role::DerivedAlias,
                Clause::From => Role::TableAlias,
                Clause::Select => Role::OutputAlias,
                _ => Role::Column {
                    grouping: clause == Clause::Grouping,
                },
            }
        } else if paren == Paren::Using {
            Role::UsingColumn
        } else if clause == Clause::From {
            if ctes.contains(&lower(&name)) {
                Role::CteRef
            } else {
                Role::Table
            }
        } else {
            Role::Column {
                grouping: clause == Clause::Grouping,
            }
        };
        items.push(Item { tok: i, role, name });
    }

    let mut tables: Vec<String> = Vec::new();
    let mut table_aliases: BTreeMap<String, String> = BTreeMap::new();
    let mut soft_aliases: BTreeSet<String> = BTreeSet::new();
    let mut last_table: Option<String> = None;
    for it in &items {
        match it.role {
            Role::Table => {
                let canon = schema.table(&it.name).map(|m| m.name.clone()).unwrap_or_else(|| it.name.clone());
                if !tables.contains(&canon) {
                    tables.push(canon.clone());
                }
                last_table = Some(canon);
            }
            Role::CteRef => last_table = None,
            Role::TableAlias => match &last_table {
                Some(t) => {
                    table_aliases.insert(lower(&it.name), t.clone());
                }
                None => {
                    soft_aliases.insert(lower(&it.name));
                }
            },
            Role::DerivedAlias | Role::OutputAlias | Role::CteName => {
                soft_aliases.insert(lower(&it.name));
            }
            _ => {}
        }
    }
    Shape {
        toks,
        items,
        tables,
        table_aliases,
        ctes,
        soft_aliases,
    }
}

impl Shape<'_> {
    fn qualifier_table(&self, q: &str) -> Option<String> {
        let q = lower(q);
        if let Some(t) = self.table_aliases.get(&q) {
            return Some(t.clone());
        }
        self.tables.iter().find(|t| lower(t) == q).cloned()
    }

    fn is_soft(&self, name: &str) -> bool {
        let n = lower(name);
        self.soft_aliases.contains(&n) || self.ctes.contains(&n)
    }

    /// Referenced schema tables holding `column`.
    fn owners(&self, schema: &SchemaSnapshot, column: &str) -> Vec<String> {
        self.tables
            .iter()
            .filter(|t| schema.table(t).is_some_and(|m| m.column(column).is_some()))
            .cloned()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Analysis {
    /// Schema tables named in FROM/JOIN, first-seen order.
    pub tables: Vec<String>,
    pub unknown_tables: Vec<String>,
    pub columns: Vec<ColumnRef>,
    pub unresolved: Vec<String>,
}

pub fn analyze(sql: &str, schema: &SchemaSnapshot) -> Analysis {
    let shape = classify(sql, schema);
    let mut out = Analysis::default();
    let push_col = |out: &mut Analysis, table: String, column: String| {
        let r = ColumnRef { table, column };
        if !out.columns.contains(&r) {
            out.columns.push(r);
        }
    };
    for t in &shape.tables {
        if schema.table(t).is_some() {
            out.tables.push(t.clone());
        } else if !out.unknown_tables.contains(t) {
            out.unknown_tables.push(t.clone());
        }
    }
    for (k, it) in shape.items.iter().enumerate() {
        match it.role {
            Role::QualifiedColumn => {
                let q = k
                    .checked_sub(1)
                    .map(|p| &shape.items[p])
                    .filter(|p| p.role == Role::Qualifier)
                    .map(|p| p.name.clone())
                    .unwrap_or_default();
                match shape.qualifier_table(&q) {
                    Some(table) => match schema.table(&table).and_then(|m| m.column(&it.name)) {
                        Some(c) => push_col(&mut out, table.clone(), c.name.clone()),
                        None if schema.table(&table).is_some() => out.unresolved.push(format!("{q}.{}", it.name)),
                        None => {}
                    },
                    None if shape.is_soft(&q) => {}
                    None => out.unresolved.push(format!("{q}.{}", it.name)),
                }
            }
            Role::Column { .. } | Role::UsingColumn => {
                let owners = shape.owners(schema, &it.name);
                if let Some(first) = owners.first() {
                    let canon = schema.table(first).and_then(|m| m.column(&it.name)).map(|c| c.name.clone());
                    for o in &owners {
                        push_col(&mut out, o.clone(), canon.clone().unwrap_or_else(|| it.name.clone()));
                    }
                } else if !shape.is_soft(&it.name) && !out.unresolved.contains(&it.name) {
                    out.unresolved.push(it.name.clone());
                }
            }
            Role::Qualifier
                if shape.qualifier_table(&it.name).is_none() && !shape.is_soft(&it.name) && !out.unresolved.contains(&it.name) =>
            {
                out.unresolved.push(it.name.clone());
            }
            _ => {}
        }
    }
    out
}

/// Backticks every identifier and, when more than one table is involved,
/// qualifies bare columns with their owning table (or its alias).
pub fn rewrite(sql: &str, schema: &SchemaSnapshot) -> String {
    let shape = classify(sql, schema);
    let multi = shape.tables.len() > 1;
    let alias_of = |table: &str| -> String {
        let hits: Vec<&String> = shape
            .table_aliases
            .iter()
            .filter(|(_, t)| t.as_str() == table)
            .map(|(a, _)| a)
            .collect();
        match hits.as_slice() {
            [one] => {
                // keep the alias spelling used in the statement
                shape
                    .items
                    .iter()
                    .find(|it| it.role == Role::TableAlias && lower(&it.name) == **one)
                    .map(|it| it.name.clone())
                    .unwrap_or_else(|| (*one).clone())
            }
            _ => table.to_string(),
        }
    };
    let aliased_twice = |table: &str| shape.table_aliases.values().filter(|t| t.as_str() == table).count() > 1;
    let mut replacements: Vec<(usize, usize, String)> = Vec::new();
    for it in &shape.items {
        let tok = shape.toks[it.tok];
        let text = match it.role {
            Role::Function => continue,
            Role::Column { grouping } if multi => {
                let soft_first = grouping && shape.is_soft(&it.name);
                let owners = shape.owners(schema, &it.name);
                match owners.as_slice() {
                    [owner] if !soft_first && !aliased_twice(owner) => {
                        format!("{}.{}", backtick(&alias_of(owner)), backtick(&it.name))
                    }
                    _ => backtick(&it.name),
                }
            }
            _ => backtick(&it.name),
        };
        if text != tok.text {
            replacements.push((tok.start, tok.end(), text));
        }
    }
    let mut out = String::with_capacity(sql.len() + replacements.len() * 4);
    let mut at = 0;
    for (start, end, text) in replacements {
        out.push_str(&sql[at..start]);
        out.push_str(&text);
        at = end;
    }
    out.push_str(&sql[at..]);
    out
}
