use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags, Row};

use super::typecheck::{check_literal_types, ColumnTypes};
use super::{
    classify_error, reservoir_sample, ColumnMeta, Database, DbError, DeclaredKey, Dialect, ExplainOutcome,
    SchemaSnapshot, TableMeta,
};
use crate::domain::{ErrorClass, QueryResult, ResultColumn, Value};
use crate::sqltext::{check_read_only, is_mutating, significant, tokenize, StatementCheck, TokenKind};

const POOL_SIZE: usize = 4;

static MEMORY_DB_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// SQLite adapter over a small pool of read-only connections.
pub struct SqliteDatabase {
    name: String,
    pool: Vec<Mutex<Connection>>,
    next: AtomicUsize,
    strict_types: bool,
    types: OnceLock<ColumnTypes>,
}

fn conn_err(e: rusqlite::Error) -> DbError {
    DbError::ConnectionFailed(e.to_string())
}

fn engine_err(e: rusqlite::Error) -> DbError {
    let message = e.to_string();
    DbError::Engine {
        class: classify_error(Dialect::Sqlite, &message),
        message,
    }
}

impl SqliteDatabase {
    /// Opens an existing database file read-only.
    pub fn open_file(path: &Path) -> Result<Self, DbError> {
        if !path.is_file() {
            return Err(DbError::ConnectionFailed(format!("no database file at {}", path.display())));
        }
        let flags = OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI;
        let pool = (0..POOL_SIZE)
            .map(|_| Connection::open_with_flags(path, flags).map(Mutex::new))
            .collect::<Result<Vec<_>, _>>()
            .map_err(conn_err)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "database".into());
        Self::finish(name, pool)
    }

    /// Builds an in-memory database from a SQL script.
    pub fn from_sql(name: &str, script: &str) -> Result<Self, DbError> {
        let id = MEMORY_DB_COUNTER.fetch_add(1, Ordering::Relaxed);
        let uri = format!("file:edakit-{}-{id}?mode=memory&cache=shared", std::process::id());
        let flags = OpenFlags::SQLITE_OPEN_READ_WRITE
            | OpenFlags::SQLITE_OPEN_CREATE
            | OpenFlags::SQLITE_OPEN_URI
            | OpenFlags::SQLITE_OPEN_NO_MUTEX;
        let loader = Connection::open_with_flags(&uri, flags).map_err(conn_err)?;
        loader
            .execute_batch(script)
            .map_err(|e| DbError::ConnectionFailed(format!("loading {name}: {e}")))?;
        let mut pool = vec![loader];
        for _ in 1..POOL_SIZE {
            pool.push(Connection::open_with_flags(&uri, flags).map_err(conn_err)?);
        }
        for conn in &pool {
            conn.execute_batch("PRAGMA query_only = 1;").map_err(conn_err)?;
        }
        Self::finish(name.to_string(), pool.into_iter().map(Mutex::new).collect())
    }

    /// Loads `schema.sql` (when present) and then every other `*.sql` file of
    /// `dir` in name order.
    pub fn from_fixture_dir(dir: &Path) -> Result<Self, DbError> {
        let entries = std::fs::read_dir(dir)
            .map_err(|e| DbError::ConnectionFailed(format!("{}: {e}", dir.display())))?;
        let mut files: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "sql"))
            .collect();
        files.sort_by_key(|p| (p.file_name().is_none_or(|n| n != "schema.sql"), p.clone()));
        if files.is_empty() {
            return Err(DbError::ConnectionFailed(format!("no .sql files in {}", dir.display())));
        }
        let mut script = String::new();
        for f in &files {
            let text = std::fs::read_to_string(f)
                .map_err(|e| DbError::ConnectionFailed(format!("{}: {e}", f.display())))?;
            script.push_str(&text);
            script.push('\n');
        }
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "fixtures".into());
        Self::from_sql(&name, &script)
    }

    fn finish(name: String, pool: Vec<Mutex<Connection>>) -> Result<Self, DbError> {
        Ok(Self {
            name,
            pool,
            next: AtomicUsize::new(0),
            strict_types: true,
            types: OnceLock::new(),
        })
    }

    /// Turns the strict literal type check on or off.
    pub fn with_strict_types(mut self, strict: bool) -> Self {
        self.strict_types = strict;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn with_conn<T>(&self, f: impl FnOnce(&Connection) -> Result<T, DbError>) -> Result<T, DbError> {
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        for k in 0..self.pool.len() {
            if let Ok(conn) = self.pool[(start + k) % self.pool.len()].try_lock() {
                return f(&conn);
            }
        }
        let conn = self.pool[start % self.pool.len()]
            .lock()
            .map_err(|_| DbError::ConnectionFailed("connection lock poisoned".into()))?;
        f(&conn)
    }

    fn column_types(&self) -> Result<&ColumnTypes, DbError> {
        if let Some(t) = self.types.get() {
            return Ok(t);
        }
        let snapshot = self.introspect()?;
        Ok(self.types.get_or_init(|| ColumnTypes::from_snapshot(&snapshot)))
    }

    fn type_error(&self, sql: &str) -> Result<Option<String>, DbError> {
        if !self.strict_types {
            return Ok(None);
        }
        Ok(check_literal_types(sql, self.column_types()?))
    }

    fn resolve_table(&self, conn: &Connection, table: &str) -> Result<String, DbError> {
        conn.query_row(
            "SELECT name FROM sqlite_schema WHERE type IN ('table', 'view') AND name = ?1 COLLATE NOCASE",
            [table],
            |r| r.get::<_, String>(0),
        )
        .map_err(|_| DbError::UnknownTable(table.to_string()))
    }
}

fn quote(ident: &str) -> String {
    format!("\"{}\"", ident.replace('"', "\"\""))
}

fn row_values(row: &Row, n: usize) -> rusqlite::Result<Vec<Value>> {
    (0..n)
        .map(|i| {
            Ok(match row.get_ref(i)? {
                ValueRef::Null => Value::Null,
                ValueRef::Integer(v) => Value::Integer(v),
                ValueRef::Real(v) => Value::Real(v),
                ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Value::Text(format!("<blob {} bytes>", b.len())),
            })
        })
        .collect()
}

/// Column comments written as `--` or `/* */` remarks in a CREATE TABLE
/// statement. A remark after a column's trailing comma on the same line
/// belongs to that column.
pub(crate) fn column_comments(ddl: &str) -> HashMap<String, String> {
    let toks = tokenize(ddl);
    let mut depth = 0i32;
    let mut segments: Vec<(Option<String>, Vec<String>)> = Vec::new();
    let mut closed_by_comma: Option<usize> = None;
    for t in toks {
        match t.kind {
            TokenKind::Space => {
                if t.text.contains('\n') {
                    closed_by_comma = None;
                }
            }
            TokenKind::Comment => {
                if depth < 1 {
                    continue;
                }
                let text = t
                    .text
                    .trim_start_matches("--")
                    .trim_start_matches("/*")
                    .trim_end_matches("*/")
                    .trim()
                    .to_string();
                if text.is_empty() {
                    continue;
                }
                let target = closed_by_comma.or(segments.len().checked_sub(1));
                if let Some(seg) = target.and_then(|i| segments.get_mut(i)) {
                    seg.1.push(text);
                }
            }
            _ => {
                closed_by_comma = None;
                if t.is_punct("(") {
                    depth += 1;
                    if depth == 1 {
                        segments.push((None, Vec::new()));
                    }
                } else if t.is_punct(")") {
                    depth -= 1;
                } else if depth == 1 && t.is_punct(",") {
                    closed_by_comma = Some(segments.len() - 1);
                    segments.push((None, Vec::new()));
                } else if depth == 1 {
                    if let Some(seg) = segments.last_mut() {
                        if seg.0.is_none() {
                            seg.0 = t.ident();
                        }
                    }
                }
            }
        }
    }
    segments
        .into_iter()
        .filter_map(|(name, comments)| {
            let name = name?;
            (!comments.is_empty()).then(|| (name.to_ascii_lowercase(), comments.join(" ")))
        })
        .collect()
}

/// Removes a leading `EXPLAIN [QUERY PLAN]` so the caller's statement can be planned.
fn strip_explain(sql: &str) -> &str {
    let toks = significant(sql);
    if !toks.first().is_some_and(|t| t.is_word("EXPLAIN")) {
        return sql;
    }
    let mut k = 1;
    if toks.get(1).is_some_and(|t| t.is_word("QUERY")) && toks.get(2).is_some_and(|t| t.is_word("PLAN")) {
        k = 3;
    }
    toks.get(k).map(|t| &sql[t.start..]).unwrap_or("")
}

fn trim_semicolons(sql: &str) -> &str {
    sql.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace())
}

impl Database for SqliteDatabase {
    fn dialect(&self) -> Dialect {
        Dialect::Sqlite
    }

    fn introspect(&self) -> Result<SchemaSnapshot, DbError> {
        self.with_conn(|conn| {
            let mut stmt = conn
                .prepare(
                    "SELECT name, coalesce(sql, '') FROM sqlite_schema \
                     WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
                )
                .map_err(engine_err)?;
            let listed: Vec<(String, String)> = stmt
                .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))
                .map_err(engine_err)?
                .collect::<Result<_, _>>()
                .map_err(engine_err)?;
            let mut tables = Vec::with_capacity(listed.len());
            for (name, ddl) in listed {
                let comments = column_comments(&ddl);
                let mut info = conn
                    .prepare(&format!("PRAGMA table_info({})", quote(&name)))
                    .map_err(engine_err)?;
                let cols: Vec<(String, String, i64)> = info
                    .query_map([], |r| Ok((r.get(1)?, r.get(2)?, r.get(5)?)))
                    .map_err(engine_err)?
                    .collect::<Result<_, _>>()
                    .map_err(engine_err)?;
                let mut pk: Vec<(i64, String)> =
                    cols.iter().filter(|c| c.2 > 0).map(|c| (c.2, c.0.clone())).collect();
                pk.sort();
                let columns = cols
                    .into_iter()
                    .map(|(cname, ty, _)| ColumnMeta {
                        comment: comments.get(&cname.to_ascii_lowercase()).cloned(),
                        name: cname,
                        declared_type: ty,
                    })
                    .collect();
                let mut declared_keys = Vec::new();
                if !pk.is_empty() {
                    declared_keys.push(DeclaredKey::Primary {
                        columns: pk.into_iter().map(|p| p.1).collect(),
                    });
                }
                let mut fks = conn
                    .prepare(&format!("PRAGMA foreign_key_list({})", quote(&name)))
                    .map_err(engine_err)?;
                let fk_rows: Vec<(String, String, Option<String>)> = fks
                    .query_map([], |r| Ok((r.get(2)?, r.get(3)?, r.get(4)?)))
                    .map_err(engine_err)?
                    .collect::<Result<_, _>>()
                    .map_err(engine_err)?;
                for (referenced_table, column, to) in fk_rows {
                    declared_keys.push(DeclaredKey::Foreign {
                        column,
                        referenced_column: to.unwrap_or_else(|| "rowid".into()),
                        referenced_table,
                    });
                }
                let row_count_estimate: i64 = conn
                    .query_row(&format!("SELECT COUNT(*) FROM {}", quote(&name)), [], |r| r.get(0))
                    .map_err(engine_err)?;
                tables.push(TableMeta {
                    name,
                    columns,
                    declared_keys,
                    row_count_estimate: row_count_estimate.max(0) as u64,
                });
            }
            Ok(SchemaSnapshot {
                database: self.name.clone(),
                tables,
            })
        })
    }

    fn sample_rows(&self, table: &str, n: usize, seed: u64) -> Result<Vec<Vec<Value>>, DbError> {
        self.with_conn(|conn| {
            let table = self.resolve_table(conn, table)?;
            let mut stmt = conn
                .prepare(&format!("SELECT * FROM {}", quote(&table)))
                .map_err(engine_err)?;
            let width = stmt.column_count();
            let mut failure = None;
            let rows = stmt.query_map([], |r| row_values(r, width)).map_err(engine_err)?;
            let stream = rows.map_while(|r| match r {
                Ok(v) => Some(v),
                Err(e) => {
                    failure = Some(e);
                    None
                }
            });
            let sample = reservoir_sample(stream, n, seed);
            match failure {
                Some(e) => Err(engine_err(e)),
                None => Ok(sample),
            }
        })
    }

    fn explain(&self, sql: &str) -> Result<ExplainOutcome, DbError> {
        match check_read_only(sql) {
            StatementCheck::ReadOnly => {}
            StatementCheck::Empty => {
                return Ok(ExplainOutcome::error("incomplete input".into(), ErrorClass::SyntaxError))
            }
            StatementCheck::MultipleStatements => {
                return Ok(ExplainOutcome::error(
                    "only a single statement is allowed".into(),
                    ErrorClass::Other,
                ))
            }
            // an unknown lead word is a typo, left to the planner to report
            StatementCheck::NotReadOnly(kw) if !is_mutating(&kw) => {}
            StatementCheck::NotReadOnly(kw) => {
                return Ok(ExplainOutcome::error(
                    format!("statement is not read-only: {kw}"),
                    ErrorClass::Other,
                ))
            }
        }
        let inner = trim_semicolons(strip_explain(sql));
        if let Some(message) = self.type_error(inner)? {
            return Ok(ExplainOutcome::error(message, ErrorClass::TypeError));
        }
        self.with_conn(|conn| {
            let mut stmt = match conn.prepare(&format!("EXPLAIN QUERY PLAN {inner}")) {
                Ok(s) => s,
                Err(e) => {
                    let message = e.to_string();
                    let class = classify_error(Dialect::Sqlite, &message);
                    return Ok(ExplainOutcome::error(message, class));
                }
            };
            let plan = stmt
                .query_map([], |r| r.get::<_, String>(3))
                .and_then(|rows| rows.collect::<Result<Vec<_>, _>>());
            match plan {
                Ok(lines) => Ok(ExplainOutcome::plan(lines.join("\n"))),
                Err(e) => {
                    let message = e.to_string();
                    let class = classify_error(Dialect::Sqlite, &message);
                    Ok(ExplainOutcome::error(message, class))
                }
            }
        })
    }

    fn execute(&self, sql: &str, row_limit: usize) -> Result<QueryResult, DbError> {
        match check_read_only(sql) {
            StatementCheck::ReadOnly => {}
            StatementCheck::Empty => {
                return Err(DbError::Engine {
                    message: "incomplete input".into(),
                    class: ErrorClass::SyntaxError,
                })
            }
            StatementCheck::MultipleStatements => {
                return Err(DbError::NonReadOnlyStatement("multiple statements".into()))
            }
            StatementCheck::NotReadOnly(kw) => return Err(DbError::NonReadOnlyStatement(kw)),
        }
        let sql = trim_semicolons(sql);
        if let Some(message) = self.type_error(sql)? {
            return Err(DbError::Engine {
                message,
                class: ErrorClass::TypeError,
            });
        }
        self.with_conn(|conn| {
            let mut stmt = conn.prepare(sql).map_err(engine_err)?;
            let columns: Vec<ResultColumn> = stmt
                .columns()
                .iter()
                .map(|c| ResultColumn {
                    name: c.name().to_string(),
                    declared_type: c.decl_type().unwrap_or("").to_string(),
                })
                .collect();
            let width = columns.len();
            let mut rows = stmt.query([]).map_err(engine_err)?;
            let mut out = Vec::new();
            let mut truncated = false;
            while let Some(row) = rows.next().map_err(engine_err)? {
                if out.len() == row_limit {
                    truncated = true;
                    break;
                }
                out.push(row_values(row, width).map_err(engine_err)?);
            }
            Ok(QueryResult {
                columns,
                rows: out,
                truncated,
            })
        })
    }
}
