use std::sync::OnceLock;

use mysql::prelude::Queryable;
use mysql::{Opts, Pool, PooledConn};

use super::typecheck::{check_literal_types, ColumnTypes};
use super::{
    classify_error, ColumnMeta, Database, DbError, DeclaredKey, Dialect, ExplainOutcome, SchemaSnapshot, TableMeta,
};
use crate::domain::{ErrorClass, QueryResult, ResultColumn, Value};
use crate::sqltext::{backtick, check_read_only, is_mutating, StatementCheck};

/// MySQL adapter. Every statement runs inside a read-only transaction that
/// is rolled back afterwards.
pub struct MysqlDatabase {
    name: String,
    pool: Pool,
    types: OnceLock<ColumnTypes>,
}

fn engine_err(e: mysql::Error) -> DbError {
    let message = match &e {
        mysql::Error::MySqlError(m) => m.message.clone(),
        other => other.to_string(),
    };
    DbError::Engine {
        class: classify_error(Dialect::Mysql, &message),
        message,
    }
}

fn to_value(v: mysql::Value) -> Value {
    match v {
        mysql::Value::NULL => Value::Null,
        mysql::Value::Int(i) => Value::Integer(i),
        mysql::Value::UInt(u) => i64::try_from(u).map(Value::Integer).unwrap_or(Value::Real(u as f64)),
        mysql::Value::Float(f) => Value::Real(f as f64),
        mysql::Value::Double(f) => Value::Real(f),
        mysql::Value::Bytes(b) => Value::Text(String::from_utf8_lossy(&b).into_owned()),
        mysql::Value::Date(y, mo, d, h, mi, s, _) => {
            if (h, mi, s) == (0, 0, 0) {
                Value::Text(format!("{y:04}-{mo:02}-{d:02}"))
            } else {
                Value::Text(format!("{y:04}-{mo:02}-{d:02} {h:02}:{mi:02}:{s:02}"))
            }
        }
        mysql::Value::Time(neg, days, h, mi, s, _) => {
            let sign = if neg { "-" } else { "" };
            Value::Text(format!("{sign}{:02}:{mi:02}:{s:02}", days * 24 + h as u32))
        }
    }
}

impl MysqlDatabase {
    pub fn connect(url: &str) -> Result<Self, DbError> {
        let opts = Opts::from_url(url).map_err(|e| DbError::InvalidUrl(e.to_string()))?;
        let name = opts.get_db_name().unwrap_or("mysql").to_string();
        let pool = Pool::new(opts).map_err(|e| DbError::ConnectionFailed(e.to_string()))?;
        Ok(Self {
            name,
            pool,
            types: OnceLock::new(),
        })
    }

    fn conn(&self) -> Result<PooledConn, DbError> {
        self.pool
            .get_conn()
            .map_err(|e| DbError::ConnectionFailed(e.to_string()))
    }

    fn column_types(&self) -> Result<&ColumnTypes, DbError> {
        if let Some(t) = self.types.get() {
            return Ok(t);
        }
        let snapshot = self.introspect()?;
        Ok(self.types.get_or_init(|| ColumnTypes::from_snapshot(&snapshot)))
    }

    fn read_only<T>(&self, f: impl FnOnce(&mut PooledConn) -> Result<T, DbError>) -> Result<T, DbError> {
        let mut conn = self.conn()?;
        conn.query_drop("START TRANSACTION READ ONLY").map_err(engine_err)?;
        let out = f(&mut conn);
        let _ = conn.query_drop("ROLLBACK");
        out
    }
}

impl Database for MysqlDatabase {
    fn dialect(&self) -> Dialect {
        Dialect::Mysql
    }

    fn introspect(&self) -> Result<SchemaSnapshot, DbError> {
        let mut conn = self.conn()?;
        let listed: Vec<(String, Option<u64>)> = conn
            .query(
                "SELECT TABLE_NAME, TABLE_ROWS FROM information_schema.TABLES \
                 WHERE TABLE_SCHEMA = DATABASE() AND TABLE_TYPE = 'BASE TABLE' ORDER BY TABLE_NAME",
            )
            .map_err(engine_err)?;
        let cols: Vec<(String, String, String, String, String)> = conn
            .query(
                "SELECT TABLE_NAME, COLUMN_NAME, COLUMN_TYPE, COLUMN_COMMENT, COLUMN_KEY \
                 FROM information_schema.COLUMNS WHERE TABLE_SCHEMA = DATABASE() \
                 ORDER BY TABLE_NAME, ORDINAL_POSITION",
            )
            .map_err(engine_err)?;
        let fks: Vec<(String, String, String, String)> = conn
            .query(
                "SELECT TABLE_NAME, COLUMN_NAME, REFERENCED_TABLE_NAME, REFERENCED_COLUMN_NAME \
                 FROM information_schema.KEY_COLUMN_USAGE \
                 WHERE TABLE_SCHEMA = DATABASE() AND REFERENCED_TABLE_NAME IS NOT NULL \
                 ORDER BY TABLE_NAME, ORDINAL_POSITION",
            )
            .map_err(engine_err)?;
        let tables = listed
            .into_iter()
            .map(|(name, rows)| {
                let own: Vec<_> = cols.iter().filter(|c| c.0 == name).collect();
                let pk: Vec<String> = own.iter().filter(|c| c.4 == "PRI").map(|c| c.1.clone()).collect();
                let mut declared_keys = Vec::new();
                if !pk.is_empty() {
                    declared_keys.push(DeclaredKey::Primary { columns: pk });
                }
                for fk in fks.iter().filter(|f| f.0 == name) {
                    declared_keys.push(DeclaredKey::Foreign {
                        column: fk.1.clone(),
                        referenced_table: fk.2.clone(),
                        referenced_column: fk.3.clone(),
                    });
                }
                TableMeta {
                    columns: own
                        .iter()
                        .map(|c| ColumnMeta {
                            name: c.1.clone(),
                            declared_type: c.2.clone(),
                            comment: (!c.3.is_empty()).then(|| c.3.clone()),
                        })
                        .collect(),
                    name,
                    declared_keys,
                    row_count_estimate: rows.unwrap_or(0),
                }
            })
            .collect();
        Ok(SchemaSnapshot {
            database: self.name.clone(),
            tables,
        })
    }

    fn sample_rows(&self, table: &str, n: usize, seed: u64) -> Result<Vec<Vec<Value>>, DbError> {
        let snapshot = self.introspect()?;
        let Some(meta) = snapshot.table(table) else {
            return Err(DbError::UnknownTable(table.to_string()));
        };
        let sql = format!("SELECT * FROM {} ORDER BY RAND({seed}) LIMIT {n}", backtick(&meta.name));
        self.read_only(|conn| {
            let rows: Vec<mysql::Row> = conn.query(sql).map_err(engine_err)?;
            Ok(rows.into_iter().map(|r| r.unwrap().into_iter().map(to_value).collect()).collect())
        })
    }

    fn explain(&self, sql: &str) -> Result<ExplainOutcome, DbError> {
        match check_read_only(sql) {
            StatementCheck::ReadOnly => {}
            StatementCheck::NotReadOnly(kw) if !is_mutating(&kw) => {}
            StatementCheck::Empty => {
                return Ok(ExplainOutcome::error("empty statement".into(), ErrorClass::SyntaxError))
            }
            other => return Ok(ExplainOutcome::error(format!("refused: {other:?}"), ErrorClass::Other)),
        }
        if let Some(message) = check_literal_types(sql, self.column_types()?) {
            return Ok(ExplainOutcome::error(message, ErrorClass::TypeError));
        }
        let body = sql.trim().trim_end_matches(';');
        let mut conn = self.conn()?;
        match conn.query::<mysql::Row, _>(format!("EXPLAIN {body}")) {
            Ok(rows) => {
                let lines: Vec<String> = rows
                    .into_iter()
                    .map(|r| {
                        r.unwrap()
                            .into_iter()
                            .map(|v| match to_value(v) {
                                Value::Null => "NULL".to_string(),
                                Value::Integer(i) => i.to_string(),
                                Value::Real(f) => f.to_string(),
                                Value::Text(t) => t,
                            })
                            .collect::<Vec<_>>()
                            .join(" | ")
                    })
                    .collect();
                Ok(ExplainOutcome::plan(lines.join("\n")))
            }
            Err(e) => match engine_err(e) {
                DbError::Engine { message, class } => Ok(ExplainOutcome::error(message, class)),
                other => Err(other),
            },
        }
    }

    fn execute(&self, sql: &str, row_limit: usize) -> Result<QueryResult, DbError> {
        match check_read_only(sql) {
            StatementCheck::ReadOnly => {}
            StatementCheck::NotReadOnly(kw) => return Err(DbError::NonReadOnlyStatement(kw)),
            StatementCheck::MultipleStatements => {
                return Err(DbError::NonReadOnlyStatement("multiple statements".into()))
            }
            StatementCheck::Empty => {
                return Err(DbError::Engine {
                    message: "empty statement".into(),
                    class: ErrorClass::SyntaxError,
                })
            }
        }
        if let Some(message) = check_literal_types(sql, self.column_types()?) {
            return Err(DbError::Engine {
                message,
                class: ErrorClass::TypeError,
            });
        }
        let body = sql.trim().trim_end_matches(';').to_string();
        self.read_only(|conn| {
            let mut result = conn.query_iter(body).map_err(engine_err)?;
            let columns: Vec<ResultColumn> = result
                .columns()
                .as_ref()
                .iter()
                .map(|c| ResultColumn {
                    name: c.name_str().into_owned(),
                    declared_type: format!("{:?}", c.column_type()),
                })
                .collect();
            let mut rows = Vec::new();
            let mut truncated = false;
            if let Some(set) = result.iter() {
                for row in set {
                    let row = row.map_err(engine_err)?;
                    if rows.len() == row_limit {
                        truncated = true;
                        break;
                    }
                    rows.push(row.unwrap().into_iter().map(to_value).collect());
                }
            }
            Ok(QueryResult {
                columns,
                rows,
                truncated,
            })
        })
    }
}
