//! On-disk registry of datasources and their built data contexts.
//!
//! ```text
//! <root>/datasources/<id>/datasource.json   url and introspection snapshot
//! <root>/datasources/<id>/index/            vector index
//! <root>/datasources/<id>/hdc.json          build artifacts
//! <root>/datasources/<id>/build_report.json
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::db::{open_database, DataSourceUrl, Database, DbError, SchemaSnapshot};
use crate::domain::PipelineConfig;
use crate::hdc::{BuildReport, HdcArtifacts, HdcError};
use crate::llm::Gateway;
use crate::pipeline::Pipeline;
use crate::vector::{Embedder, IndexError, VectorIndex};

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Hdc(#[from] HdcError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("datasource `{0}` is not ingested")]
    NotIngested(String),
    #[error("datasource `{0}` has no data context; build it first")]
    NotBuilt(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> WorkspaceError + '_ {
    move |e| WorkspaceError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct DataSourceRecord {
    pub id: String,
    /// Normalized connection URL; file paths are absolute.
    pub url: String,
    pub database: String,
    pub tables: Vec<String>,
    pub column_count: usize,
    pub schema: SchemaSnapshot,
}

/// Makes file paths absolute so the same source always gets the same id.
pub fn normalize_url(url: &str) -> Result<String, DbError> {
    let absolute = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    Ok(match DataSourceUrl::parse(url)? {
        DataSourceUrl::SqliteFile(p) => format!("sqlite:{}", absolute(&p).display()),
        DataSourceUrl::Fixtures(p) => format!("fixtures:{}", absolute(&p).display()),
        DataSourceUrl::Mysql(u) => u,
    })
}

/// Stable id of a connection URL.
pub fn datasource_id(url: &str) -> Result<String, DbError> {
    let digest = Sha256::digest(normalize_url(url)?.as_bytes());
    Ok(format!("ds-{}", digest[..6].iter().map(|b| format!("{b:02x}")).collect::<String>()))
}

#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, id: &str) -> PathBuf {
        self.root.join("datasources").join(id)
    }

    pub fn hdc_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("hdc.json")
    }

    pub fn report_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("build_report.json")
    }

    /// Connects, introspects and stores the snapshot. Re-ingesting a URL
    /// refreshes the snapshot under the same id.
    pub fn ingest(&self, url: &str) -> Result<DataSourceRecord, WorkspaceError> {
        let url = normalize_url(url)?;
        let id = datasource_id(&url)?;
        let db = open_database(&url)?;
        let schema = db.introspect()?;
        let record = DataSourceRecord {
            id: id.clone(),
            url,
            database: schema.database.clone(),
            tables: schema.tables.iter().map(|t| t.name.clone()).collect(),
            column_count: schema.column_count(),
            schema,
        };
        let dir = self.dir(&id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join("datasource.json");
        let text = serde_json::to_string_pretty(&record).expect("record serializes");
        std::fs::write(&path, text).map_err(io_err(&path))?;
        Ok(record)
    }

    /// Looks a datasource up by id or by its URL.
    pub fn record(&self, id_or_url: &str) -> Result<DataSourceRecord, WorkspaceError> {
        let id = if id_or_url.starts_with("ds-") {
            id_or_url.to_string()
        } else {
            datasource_id(id_or_url).map_err(|_| WorkspaceError::NotIngested(id_or_url.to_string()))?
        };
        let path = self.dir(&id).join("datasource.json");
        let text = std::fs::read_to_string(&path).map_err(|_| WorkspaceError::NotIngested(id_or_url.to_string()))?;
        serde_json::from_str(&text).map_err(|e| WorkspaceError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn list(&self) -> Vec<DataSourceRecord> {
        let Ok(entries) = std::fs::read_dir(self.root.join("datasources")) else {
            return Vec::new();
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        ids.iter().filter_map(|id| self.record(id).ok()).collect()
    }

    pub fn open_db(&self, record: &DataSourceRecord) -> Result<Arc<dyn Database>, WorkspaceError> {
        Ok(open_database(&record.url)?)
    }

    pub fn open_index(&self, record: &DataSourceRecord, embedder: Arc<dyn Embedder>) -> Result<VectorIndex, WorkspaceError> {
        Ok(VectorIndex::open(self.dir(&record.id).join("index"), embedder)?)
    }

    pub fn load_hdc(&self, record: &DataSourceRecord) -> Result<Option<HdcArtifacts>, WorkspaceError> {
        let path = self.hdc_path(&record.id);
        if !path.exists() {
            return Ok(None);
        }
        HdcArtifacts::load(&path).map(Some).map_err(io_err(&path))
    }

    /// Builds the data context into `index` and stores artifacts and report.
    pub fn build(
        &self,
        record: &DataSourceRecord,
        gateway: Arc<Gateway>,
        index: Arc<VectorIndex>,
        config: &PipelineConfig,
    ) -> Result<(HdcArtifacts, BuildReport), WorkspaceError> {
        let db = self.open_db(record)?;
        let pipeline = Pipeline::new(gateway, index.clone(), db, config.clone());
        let (hdc, report) = pipeline.build_hdc()?;
        index.flush()?;
        let path = self.hdc_path(&record.id);
        hdc.save(&path).map_err(io_err(&path))?;
        let path = self.report_path(&record.id);
        report.save(&path).map_err(io_err(&path))?;
        Ok((hdc, report))
    }

    /// A ready pipeline and its artifacts for answering questions.
    pub fn pipeline(
        &self,
        record: &DataSourceRecord,
        gateway: Arc<Gateway>,
        embedder: Arc<dyn Embedder>,
        config: &PipelineConfig,
    ) -> Result<(Pipeline, HdcArtifacts), WorkspaceError> {
        let hdc = self.load_hdc(record)?.ok_or_else(|| WorkspaceError::NotBuilt(record.id.clone()))?;
        let index = Arc::new(self.open_index(record, embedder)?);
        let db = self.open_db(record)?;
        Ok((Pipeline::new(gateway, index, db, config.clone()), hdc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_stable_across_spellings() {
        let here = std::env::current_dir().unwrap();
        let rel = datasource_id("fixtures:.").unwrap();
        let abs = datasource_id(&format!("fixtures:{}", here.display())).unwrap();
        assert_eq!(rel, abs);
        assert_ne!(rel, datasource_id("sqlite:.").unwrap());
        assert!(rel.starts_with("ds-") && rel.len() == 15);
        assert!(datasource_id("postgres://x").is_err());
    }
}
