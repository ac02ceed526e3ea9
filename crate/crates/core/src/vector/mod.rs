//! Namespaced exact cosine-similarity index with optional on-disk persistence.
//!
//! # On-disk layout
//!
//! A persistent index is a directory holding one JSON-lines file per
//! namespace, `<namespace>.jsonl`. The first line is a header:
//!
//! ```text
//! {"format":"edakit-vector-index","version":1,"namespace":"table_desc","dimension":64}
//! ```
//!
//! Every following line is a record, appended as writes happen:
//!
//! ```text
//! {"op":"upsert","doc":{"namespace":"table_desc","id":"orders","text":"...","vector":[...],"metadata":{...}}}
//! {"op":"delete","id":"orders"}
//! ```
//!
//! Replaying the records in order rebuilds the namespace. [`VectorIndex::compact`]
//! rewrites each file with only the live documents.

mod embed;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{Embedder, HttpEmbedder, StubEmbedder, StubMode};

use crate::llm::LlmError;

pub const FORMAT_NAME: &str = "edakit-vector-index";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector has {got} dimensions, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("search requires k >= 1")]
    InvalidK,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding failed: {0}")]
    Embed(#[from] LlmError),
    #[error("index io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt index file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    ColumnDesc,
    TableDesc,
    TableRel,
    Entity,
    DbSummary,
    DomainTerm,
    FewshotSql,
    Sop,
}

impl Namespace {
    pub const ALL: [Namespace; 8] = [
        Self::ColumnDesc,
        Self::TableDesc,
        Self::TableRel,
        Self::Entity,
        Self::DbSummary,
        Self::DomainTerm,
        Self::FewshotSql,
        Self::Sop,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ColumnDesc => "column_desc",
            Self::TableDesc => "table_desc",
            Self::TableRel => "table_rel",
            Self::Entity => "entity",
            Self::DbSummary => "db_summary",
            Self::DomainTerm => "domain_term",
            Self::FewshotSql => "fewshot_sql",
            Self::Sop => "sop",
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct IndexedDocument {
    pub namespace: Namespace,
    pub id: String,
    pub text: String,
    pub vector: Vec<f32>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SearchHit {
    pub id: String,
    pub score: f64,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

/// Cosine similarity; zero-norm inputs score 0 against everything.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Descending score, ascending id on ties.
pub fn rank_hits(hits: &mut [SearchHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    namespace: Namespace,
    dimension: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Record {
    Upsert { doc: IndexedDocument },
    Delete { id: String },
}

#[derive(Default)]
struct Space {
    docs: BTreeMap<String, IndexedDocument>,
    log: Option<BufWriter<File>>,
}

pub struct VectorIndex {
    dim: usize,
    embedder: Arc<dyn Embedder>,
    dir: Option<PathBuf>,
    spaces: BTreeMap<Namespace, RwLock<Space>>,
}

impl VectorIndex {
    pub fn in_memory(embedder: Arc<dyn Embedder>) -> Self {
        let spaces = Namespace::ALL
            .iter()
            .map(|ns| (*ns, RwLock::new(Space::default())))
            .collect();
        Self {
            dim: embedder.dimension(),
            embedder,
            dir: None,
            spaces,
        }
    }

    /// Opens (or creates) a persistent index in `dir`, replaying every namespace file.
    pub fn open(dir: impl AsRef<Path>, embedder: Arc<dyn Embedder>) -> Result<Self, IndexError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|source| IndexError::Io {
            path: dir.clone(),
            source,
        })?;
        let dim = embedder.dimension();
        let mut spaces = BTreeMap::new();
        for ns in Namespace::ALL {
            let path = dir.join(format!("{}.jsonl", ns.as_str()));
            let docs = if path.exists() {
                replay(&path, ns, dim)?
            } else {
                write_snapshot(&path, ns, dim, &BTreeMap::new())?;
                BTreeMap::new()
            };
            let log = open_append(&path)?;
            spaces.insert(
                ns,
                RwLock::new(Space {
                    docs,
                    log: Some(log),
                }),
            );
        }
        Ok(Self {
            dim,
            embedder,
            dir: Some(dir),
            spaces,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>, IndexError> {
        if text.trim().is_empty() {
            return Err(IndexError::EmptyText);
        }
        let v = self.embedder.embed(text)?;
        if v.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(v)
    }

    fn space(&self, ns: Namespace) -> &RwLock<Space> {
        &self.spaces[&ns]
    }

    pub fn upsert(&self, doc: IndexedDocument) -> Result<(), IndexError> {
        if doc.vector.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: doc.vector.len(),
            });
        }
        let mut space = self.space(doc.namespace).write().expect("index lock poisoned");
        if let Some(log) = space.log.as_mut() {
            self.append(log, doc.namespace, &Record::Upsert { doc: doc.clone() })?;
        }
        space.docs.insert(doc.id.clone(), doc);
        Ok(())
    }

    /// Embeds `text` and stores it under `(namespace, id)`.
    pub fn upsert_text(
        &self,
        namespace: Namespace,
        id: &str,
        text: &str,
        metadata: BTreeMap<String, String>,
    ) -> Result<(), IndexError> {
        let vector = self.embed(text)?;
        self.upsert(IndexedDocument {
            namespace,
            id: id.to_string(),
            text: text.to_string(),
            vector,
            metadata,
        })
    }

    pub fn delete(&self, namespace: Namespace, id: &str) -> Result<bool, IndexError> {
        let mut space = self.space(namespace).write().expect("index lock poisoned");
        if !space.docs.contains_key(id) {
            return Ok(false);
        }
        if let Some(log) = space.log.as_mut() {
            self.append(log, namespace, &Record::Delete { id: id.to_string() })?;
        }
        space.docs.remove(id);
        Ok(true)
    }

    /// Removes every document of a namespace.
    pub fn clear(&self, namespace: Namespace) -> Result<(), IndexError> {
        let mut space = self.space(namespace).write().expect("index lock poisoned");
        space.docs.clear();
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.jsonl", namespace.as_str()));
            space.log = None;
            write_snapshot(&path, namespace, self.dim, &space.docs)?;
            space.log = Some(open_append(&path)?);
        }
        Ok(())
    }

    pub fn get(&self, namespace: Namespace, id: &str) -> Option<IndexedDocument> {
        self.space(namespace)
            .read()
            .expect("index lock poisoned")
            .docs
            .get(id)
            .cloned()
    }

    /// All documents of a namespace in id order.
    pub fn list(&self, namespace: Namespace) -> Vec<IndexedDocument> {
        self.space(namespace)
            .read()
            .expect("index lock poisoned")
            .docs
            .values()
            .cloned()
            .collect()
    }

    pub fn len(&self, namespace: Namespace) -> usize {
        self.space(namespace).read().expect("index lock poisoned").docs.len()
    }

    pub fn is_empty(&self, namespace: Namespace) -> bool {
        self.len(namespace) == 0
    }

    pub fn search(&self, namespace: Namespace, query: &str, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search_filtered(namespace, query, k, |_| true)
    }

    pub fn search_filtered(
        &self,
        namespace: Namespace,
        query: &str,
        k: usize,
        filter: impl Fn(&IndexedDocument) -> bool,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if self.is_empty(namespace) {
            return Ok(Vec::new());
        }
        let q = self.embed(query)?;
        self.search_vector(namespace, &q, k, filter)
    }

    /// Exact top-k by cosine over a consistent snapshot of the namespace.
    pub fn search_vector(
        &self,
        namespace: Namespace,
        query: &[f32],
        k: usize,
        filter: impl Fn(&IndexedDocument) -> bool,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let space = self.space(namespace).read().expect("index lock poisoned");
        let mut hits: Vec<SearchHit> = space
            .docs
            .values()
            .filter(|d| filter(d))
            .map(|d| SearchHit {
                id: d.id.clone(),
                score: cosine(query, &d.vector),
                text: d.text.clone(),
                metadata: d.metadata.clone(),
            })
            .collect();
        drop(space);
        rank_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }

    /// Rewrites each namespace file with only its live documents.
    pub fn compact(&self) -> Result<(), IndexError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        for ns in Namespace::ALL {
            let mut space = self.space(ns).write().expect("index lock poisoned");
            let path = dir.join(format!("{}.jsonl", ns.as_str()));
            if let Some(mut log) = space.log.take() {
                log.flush().map_err(|source| IndexError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
            write_snapshot(&path, ns, self.dim, &space.docs)?;
            space.log = Some(open_append(&path)?);
        }
        Ok(())
    }

    pub fn flush(&self) -> Result<(), IndexError> {
        for (ns, space) in &self.spaces {
            let mut space = space.write().expect("index lock poisoned");
            if let Some(log) = space.log.as_mut() {
                log.flush().map_err(|source| IndexError::Io {
                    path: self.file_path(*ns),
                    source,
                })?;
            }
        }
        Ok(())
    }

    /// Compacts and flushes; the index stays usable.
    pub fn close(self) -> Result<(), IndexError> {
        self.compact()?;
        self.flush()
    }

    fn file_path(&self, ns: Namespace) -> PathBuf {
        self.dir
            .as_deref()
            .unwrap_or(Path::new("."))
            .join(format!("{}.jsonl", ns.as_str()))
    }

    fn append(&self, log: &mut BufWriter<File>, ns: Namespace, record: &Record) -> Result<(), IndexError> {
        let path = self.file_path(ns);
        let line = serde_json::to_string(record).map_err(|e| IndexError::Corrupt {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|source| IndexError::Io { path, source })
    }
}

fn open_append(path: &Path) -> Result<BufWriter<File>, IndexError> {
    OpenOptions::new()
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|source| IndexError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn write_snapshot(
    path: &Path,
    ns: Namespace,
    dim: usize,
    docs: &BTreeMap<String, IndexedDocument>,
) -> Result<(), IndexError> {
    let io = |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("jsonl.tmp");
    let mut out = BufWriter::new(File::create(&tmp).map_err(io)?);
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        namespace: ns,
        dimension: dim,
    };
    writeln!(out, "{}", to_line(&header)).map_err(io)?;
    for doc in docs.values() {
        writeln!(out, "{}", to_line(&Record::Upsert { doc: doc.clone() })).map_err(io)?;
    }
    out.flush().map_err(io)?;
    drop(out);
    fs::rename(&tmp, path).map_err(io)
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("index records always serialize")
}

fn replay(path: &Path, ns: Namespace, dim: usize) -> Result<BTreeMap<String, IndexedDocument>, IndexError> {
    let corrupt = |reason: String| IndexError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| corrupt("missing header".into()))?
        .map_err(|e| corrupt(e.to_string()))?;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    if header.namespace != ns {
        return Err(corrupt(format!("header names namespace {:?}", header.namespace)));
    }
    if header.dimension != dim {
        return Err(IndexError::DimensionMismatch {
            expected: dim,
            got: header.dimension,
        });
    }
    let mut docs = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| corrupt(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(&line) {
            Ok(Record::Upsert { doc }) => {
                docs.insert(doc.id.clone(), doc);
            }
            Ok(Record::Delete { id }) => {
                docs.remove(&id);
            }
            Err(e) => return Err(corrupt(format!("record {}: {e}", n + 2))),
        }
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index() -> VectorIndex {
        VectorIndex::in_memory(Arc::new(StubEmbedder::new(32)))
    }

    #[test]
    fn stub_is_deterministic_and_self_similar() {
        let e = StubEmbedder::new(16);
        let a = e.embed("a").unwrap();
        assert_eq!(a, StubEmbedder::new(16).embed("a").unwrap());
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn self_retrieval_and_replace() {
        let idx = index();
        idx.upsert_text(Namespace::TableDesc, "t1", "orders placed by users", BTreeMap::new())
            .unwrap();
        idx.upsert_text(Namespace::TableDesc, "t2", "product catalogue", BTreeMap::new())
            .unwrap();
        let hits = idx.search(Namespace::TableDesc, "orders placed by users", 1).unwrap();
        assert_eq!(hits[0].id, "t1");
        assert!((hits[0].score - 1.0).abs() < 1e-6);

        idx.upsert_text(Namespace::TableDesc, "t1", "warehouse stock", BTreeMap::new())
            .unwrap();
        assert_eq!(idx.len(Namespace::TableDesc), 2);
        assert_eq!(idx.get(Namespace::TableDesc, "t1").unwrap().text, "warehouse stock");
        let hits = idx.search(Namespace::TableDesc, "warehouse stock", 1).unwrap();
        assert_eq!(hits[0].id, "t1");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_namespace_and_population_cap() {
        let idx = index();
        assert!(idx.search(Namespace::Entity, "x", 5).unwrap().is_empty());
        for i in 0..3 {
            idx.upsert_text(Namespace::Entity, &format!("e{i}"), &format!("entity {i}"), BTreeMap::new())
                .unwrap();
        }
        assert_eq!(idx.search(Namespace::Entity, "x", 10).unwrap().len(), 3);
        assert!(matches!(idx.search(Namespace::Entity, "x", 0), Err(IndexError::InvalidK)));
    }

    #[test]
    fn dimension_mismatch() {
        let idx = index();
        let doc = IndexedDocument {
            namespace: Namespace::Sop,
            id: "s".into(),
            text: "t".into(),
            vector: vec![1.0; 3],
            metadata: BTreeMap::new(),
        };
        assert!(matches!(
            idx.upsert(doc),
            Err(IndexError::DimensionMismatch { expected: 32, got: 3 })
        ));
    }

    #[test]
    fn equal_angle_ties_order_by_id() {
        let idx = VectorIndex::in_memory(Arc::new(StubEmbedder::new(3)));
        for (id, v) in [("b", [1.0, 1.0, 0.0]), ("a", [1.0, 0.0, 1.0]), ("c", [0.0, 1.0, 1.0])] {
            idx.upsert(IndexedDocument {
                namespace: Namespace::TableDesc,
                id: id.into(),
                text: id.into(),
                vector: v.to_vec(),
                metadata: BTreeMap::new(),
            })
            .unwrap();
        }
        let hits = idx
            .search_vector(Namespace::TableDesc, &[1.0, 0.0, 0.0], 3, |_| true)
            .unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn zero_vector_scores_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let embedder: Arc<dyn Embedder> = Arc::new(StubEmbedder::new(8));
        let before;
        {
            let idx = VectorIndex::open(dir.path(), embedder.clone()).unwrap();
            for i in 0..20 {
                idx.upsert_text(Namespace::ColumnDesc, &format!("c{i}"), &format!("column {i}"), BTreeMap::new())
                    .unwrap();
            }
            idx.upsert_text(Namespace::ColumnDesc, "c3", "replaced", BTreeMap::new())
                .unwrap();
            idx.delete(Namespace::ColumnDesc, "c4").unwrap();
            before = idx.search(Namespace::ColumnDesc, "column 7", 5).unwrap();
            idx.flush().unwrap();
        }
        let idx = VectorIndex::open(dir.path(), embedder.clone()).unwrap();
        assert_eq!(idx.len(Namespace::ColumnDesc), 19);
        assert_eq!(idx.search(Namespace::ColumnDesc, "column 7", 5).unwrap(), before);
        idx.close().unwrap();

        let text = fs::read_to_string(dir.path().join("column_desc.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 20, "header plus 19 live docs after compaction");
        let idx = VectorIndex::open(dir.path(), embedder).unwrap();
        assert_eq!(idx.search(Namespace::ColumnDesc, "column 7", 5).unwrap(), before);
    }
}
