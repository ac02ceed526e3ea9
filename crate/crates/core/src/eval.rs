//! Execution accuracy over a Spider-layout benchmark.
//!
//! Layout: `<dir>/<split>.json` holds a list of `{db_id, question, query}`
//! records, optionally with `difficulty` or `hardness`. Each database lives
//! in `<dir>/database/<db_id>/`, either as `<db_id>.sqlite` or as
//! `schema.sql` plus an optional `data.sql`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::db::{Database, DbError, SqliteDatabase};
use crate::domain::{PipelineConfig, QueryResult, SqlArtifact, SqlStatus, Value};
use crate::hdc::HdcArtifacts;
use crate::llm::Gateway;
use crate::pipeline::Pipeline;
use crate::sqltext::has_top_level_order_by;
use crate::vector::{Embedder, Namespace, VectorIndex};

/// Spider test EX reported for the full system at full scale.
pub const REFERENCE_EX: f64 = 86.3;
pub const NUMERIC_TOLERANCE: f64 = 1e-6;
const GOLD_ROW_LIMIT: usize = 100_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |e| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub index: usize,
    pub db_id: String,
    pub question: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<String>,
}

impl EvalCase {
    /// Cache key: stable across runs and insensitive to selection order.
    pub fn key(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.db_id, &self.question, &self.gold] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        h.finalize()[..12].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Deserialize)]
struct RawCase {
    db_id: String,
    question: String,
    #[serde(alias = "SQL", alias = "gold")]
    query: String,
    #[serde(default, alias = "hardness")]
    difficulty: Option<String>,
}

pub fn load_cases(dir: &Path, split: &str) -> Result<Vec<EvalCase>, EvalError> {
    let path = dir.join(format!("{split}.json"));
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let raw: Vec<RawCase> = serde_json::from_str(&text).map_err(|e| EvalError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(index, r)| EvalCase {
            index,
            db_id: r.db_id,
            question: r.question,
            gold: r.query,
            difficulty: r.difficulty,
        })
        .collect())
}

/// First `max` cases, or a seeded sample of `max` kept in file order.
pub fn select_cases(mut cases: Vec<EvalCase>, max: Option<usize>, seed: Option<u64>) -> Vec<EvalCase> {
    let Some(max) = max else { return cases };
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cases.shuffle(&mut rng);
        cases.truncate(max);
        cases.sort_by_key(|c| c.index);
    } else {
        cases.truncate(max);
    }
    cases
}

/// Benchmark gold SQL relies on the engine's own coercions, so the strict
/// literal check is off here.
pub fn open_benchmark_db(dir: &Path, db_id: &str) -> Result<SqliteDatabase, DbError> {
    let base = dir.join("database").join(db_id);
    let file = base.join(format!("{db_id}.sqlite"));
    if file.exists() {
        return SqliteDatabase::open_file(&file).map(|d| d.with_strict_types(false));
    }
    if base.join("schema.sql").exists() {
        return SqliteDatabase::from_fixture_dir(&base).map(|d| d.with_strict_types(false));
    }
    Err(DbError::ConnectionFailed(format!("no database files under {}", base.display())))
}

#[derive(Clone, Debug, PartialEq)]
enum Cell {
    Null,
    Num(f64),
    Text(String),
}

fn cell(v: &Value) -> Cell {
    match v {
        Value::Null => Cell::Null,
        Value::Integer(i) => Cell::Num(*i as f64),
        Value::Real(r) => Cell::Num(*r),
        Value::Text(s) => Cell::Text(s.trim().to_string()),
    }
}

fn cells_equal(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Null, Cell::Null) => true,
        (Cell::Num(x), Cell::Num(y)) => (x - y).abs() <= NUMERIC_TOLERANCE * 1f64.max(x.abs()).max(y.abs()),
        (Cell::Text(x), Cell::Text(y)) => x == y,
        _ => false,
    }
}

fn rows_equal(a: &[Cell], b: &[Cell]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y))
}

fn sort_key(row: &[Cell]) -> Vec<(u8, f64, String)> {
    row.iter()
        .map(|c| match c {
            Cell::Null => (0, 0.0, String::new()),
            Cell::Num(n) => (1, *n, String::new()),
            Cell::Text(s) => (2, 0.0, s.clone()),
        })
        .collect()
}

/// Result equality after normalization. Unordered comparison is multiset
/// equality, so a duplicated row counts.
pub fn results_match(gold: &QueryResult, predicted: &QueryResult, ordered: bool) -> bool {
    if gold.columns.len() != predicted.columns.len() || gold.rows.len() != predicted.rows.len() {
        return false;
    }
    let norm = |r: &QueryResult| -> Vec<Vec<Cell>> { r.rows.iter().map(|row| row.iter().map(cell).collect()).collect() };
    let (g, p) = (norm(gold), norm(predicted));
    if ordered {
        return g.iter().zip(&p).all(|(a, b)| rows_equal(a, b));
    }
    let by_key = |mut rows: Vec<Vec<Cell>>| {
        rows.sort_by(|a, b| sort_key(a).partial_cmp(&sort_key(b)).unwrap_or(std::cmp::Ordering::Equal));
        rows
    };
    let (gs, ps) = (by_key(g), by_key(p));
    if gs.iter().zip(&ps).all(|(a, b)| rows_equal(a, b)) {
        return true;
    }
    // tolerance can reorder near-equal numbers, fall back to matching
    let mut used = vec![false; ps.len()];
    gs.iter().all(|row| {
        match ps.iter().enumerate().find(|(i, q)| !used[*i] && rows_equal(row, q)) {
            Some((i, _)) => {
                used[i] = true;
                true
            }
            None => false,
        }
    })
}

/// EX for one pair of statements on `db`. A failing prediction is wrong; a
/// failing gold statement is an error.
pub fn execution_match(db: &dyn Database, gold: &str, predicted: &str) -> Result<bool, String> {
    let g = db.execute(gold, GOLD_ROW_LIMIT).map_err(|e| format!("gold failed: {e}"))?;
    if predicted.trim().is_empty() {
        return Ok(false);
    }
    let Ok(p) = db.execute(predicted, GOLD_ROW_LIMIT) else {
        return Ok(false);
    };
    Ok(results_match(&g, &p, has_top_level_order_by(gold)))
}

/// What the system under test produced for one case.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub struct Prediction {
    pub sql: String,
    #[serde(default)]
    pub artifacts: Vec<SqlArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Prediction {
    /// The SQL to score: the last step that executed, else the last step.
    pub fn from_artifacts(artifacts: Vec<SqlArtifact>) -> Self {
        let sql = artifacts
            .iter()
            .rev()
            .find(|a| a.status == SqlStatus::Executed)
            .or(artifacts.last())
            .map(|a| a.sql.clone())
            .unwrap_or_default();
        Self {
            sql,
            artifacts,
            error: None,
        }
    }
}

pub trait Predictor: Sync {
    /// Called once per database, sequentially, before any prediction.
    fn prepare(&self, _db_id: &str, _db: &Arc<dyn Database>) {}
    fn predict(&self, case: &EvalCase, db: &Arc<dyn Database>) -> Prediction;
}

/// Scores given SQL, for checking the metric itself.
pub struct FixedPredictor(pub HashMap<usize, String>);

impl Predictor for FixedPredictor {
    fn predict(&self, case: &EvalCase, _db: &Arc<dyn Database>) -> Prediction {
        Prediction {
            sql: self.0.get(&case.index).cloned().unwrap_or_default(),
            ..Prediction::default()
        }
    }
}

/// Runs the full pipeline per case. Each database gets its data context once;
/// with `context_dir` set it is stored there and reused by later runs.
pub struct PipelinePredictor {
    gateway: Arc<Gateway>,
    embedder: Arc<dyn Embedder>,
    config: PipelineConfig,
    context_dir: Option<PathBuf>,
    contexts: Mutex<HashMap<String, ContextCell>>,
}

type ContextCell = Arc<OnceLock<Result<Context, String>>>;

struct Context {
    pipeline: Pipeline,
    hdc: HdcArtifacts,
}

impl PipelinePredictor {
    pub fn new(gateway: Arc<Gateway>, embedder: Arc<dyn Embedder>, config: PipelineConfig, context_dir: Option<PathBuf>) -> Self {
        Self {
            gateway,
            embedder,
            config,
            context_dir,
            contexts: Mutex::new(HashMap::new()),
        }
    }

    fn context(&self, db_id: &str, db: &Arc<dyn Database>) -> Result<Context, String> {
        let index = match &self.context_dir {
            Some(dir) => VectorIndex::open(dir.join(db_id).join("index"), self.embedder.clone()).map_err(|e| e.to_string())?,
            None => VectorIndex::in_memory(self.embedder.clone()),
        };
        let pipeline = Pipeline::new(self.gateway.clone(), Arc::new(index), db.clone(), self.config.clone());
        let saved = self.context_dir.as_ref().map(|d| d.join(db_id).join("hdc.json"));
        if let Some(path) = &saved {
            if let Ok(hdc) = HdcArtifacts::load(path) {
                if !pipeline.index.is_empty(Namespace::TableDesc) {
                    return Ok(Context { pipeline, hdc });
                }
            }
        }
        let (hdc, _) = pipeline.build_hdc().map_err(|e| e.to_string())?;
        if let Some(path) = &saved {
            pipeline.index.flush().map_err(|e| e.to_string())?;
            hdc.save(path).map_err(|e| e.to_string())?;
        }
        Ok(Context { pipeline, hdc })
    }
}

impl PipelinePredictor {
    fn cell(&self, db_id: &str) -> ContextCell {
        self.contexts
            .lock()
            .expect("context lock poisoned")
            .entry(db_id.to_string())
            .or_default()
            .clone()
    }
}

impl Predictor for PipelinePredictor {
    // Builds run their own parallel stages; doing them inside the case pool
    // lets a blocked worker steal a case waiting on the same cell.
    fn prepare(&self, db_id: &str, db: &Arc<dyn Database>) {
        self.cell(db_id).get_or_init(|| self.context(db_id, db));
    }

    fn predict(&self, case: &EvalCase, db: &Arc<dyn Database>) -> Prediction {
        let cell = self.cell(&case.db_id);
        let ctx = match cell.get_or_init(|| self.context(&case.db_id, db)) {
            Ok(c) => c,
            Err(e) => {
                return Prediction {
                    error: Some(format!("data context: {e}")),
                    ..Prediction::default()
                }
            }
        };
        match ctx.pipeline.ask(&ctx.hdc, &case.question) {
            Ok(bundle) => Prediction::from_artifacts(bundle.artifacts),
            Err(e) => Prediction {
                error: Some(e.to_string()),
                ..Prediction::default()
            },
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub key: String,
    pub case: EvalCase,
    pub predicted: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub trace: Vec<SqlArtifact>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
pub struct Tally {
    pub total: usize,
    pub correct: usize,
    pub ex: f64,
}

impl Tally {
    fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
        self.ex = 100.0 * self.correct as f64 / self.total as f64;
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub split: String,
    pub overall: Tally,
    pub by_difficulty: BTreeMap<String, Tally>,
    pub reference_ex: f64,
    pub reference_note: String,
    pub resumed: usize,
    pub cases: Vec<CaseResult>,
}

impl EvalReport {
    pub fn summary_lines(&self) -> Vec<String> {
        let mut out = vec![format!(
            "EX {:.1}% ({}/{}) on {}",
            self.overall.ex, self.overall.correct, self.overall.total, self.split
        )];
        for (d, t) in &self.by_difficulty {
            out.push(format!("  {d}: {:.1}% ({}/{})", t.ex, t.correct, t.total));
        }
        out.push(format!("reference: {:.1}% ({})", self.reference_ex, self.reference_note));
        out
    }
}

/// Completed case results, one JSON object per line, appended as they finish.
pub struct ResultCache {
    path: PathBuf,
    done: HashMap<String, CaseResult>,
    writer: Mutex<()>,
}

impl ResultCache {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let path = path.into();
        let mut done = HashMap::new();
        if path.exists() {
            let f = std::fs::File::open(&path).map_err(io_err(&path))?;
            for line in std::io::BufReader::new(f).lines() {
                let line = line.map_err(io_err(&path))?;
                // a torn last line from an interrupted run is dropped
                if let Ok(r) = serde_json::from_str::<CaseResult>(&line) {
                    done.insert(r.key.clone(), r);
                }
            }
        }
        Ok(Self {
            path,
            done,
            writer: Mutex::new(()),
        })
    }

    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }

    fn get(&self, key: &str) -> Option<&CaseResult> {
        self.done.get(key)
    }

    fn append(&self, r: &CaseResult) -> Result<(), EvalError> {
        let _guard = self.writer.lock().expect("cache lock poisoned");
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        let line = serde_json::to_string(r).expect("case result serializes");
        writeln!(f, "{line}").map_err(io_err(&self.path))
    }
}

pub struct EvalOptions {
    pub split: String,
    pub max_questions: Option<usize>,
    pub seed: Option<u64>,
    pub parallelism: usize,
}

/// Runs `predictor` over the selected cases and scores each prediction.
pub fn run_eval(
    dir: &Path,
    options: &EvalOptions,
    predictor: &dyn Predictor,
    cache: Option<&ResultCache>,
) -> Result<EvalReport, EvalError> {
    let cases = select_cases(load_cases(dir, &options.split)?, options.max_questions, options.seed);
    let db_ids: BTreeSet<String> = cases.iter().map(|c| c.db_id.clone()).collect();
    let mut dbs: HashMap<String, Result<Arc<dyn Database>, String>> = HashMap::new();
    for id in db_ids {
        let opened = open_benchmark_db(dir, &id)
            .map(|d| Arc::new(d) as Arc<dyn Database>)
            .map_err(|e| e.to_string());
        dbs.insert(id, opened);
    }
    for (id, db) in &dbs {
        let pending = cases
            .iter()
            .any(|c| &c.db_id == id && cache.and_then(|k| k.get(&c.key())).is_none());
        if let (true, Ok(db)) = (pending, db) {
            predictor.prepare(id, db);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let resumed = Mutex::new(0usize);
    let results: Vec<Result<CaseResult, EvalError>> = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let key = case.key();
                if let Some(done) = cache.and_then(|c| c.get(&key)) {
                    *resumed.lock().expect("counter lock") += 1;
                    return Ok(done.clone());
                }
                let result = score_case(case, key, &dbs[&case.db_id], predictor);
                if let Some(c) = cache {
                    c.append(&result)?;
                }
                Ok(result)
            })
            .collect()
    });
    let mut overall = Tally::default();
    let mut by_difficulty: BTreeMap<String, Tally> = BTreeMap::new();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        overall.add(r.correct);
        if let Some(d) = &r.case.difficulty {
            by_difficulty.entry(d.clone()).or_default().add(r.correct);
        }
        out.push(r);
    }
    Ok(EvalReport {
        split: options.split.clone(),
        overall,
        by_difficulty,
        reference_ex: REFERENCE_EX,
        reference_note: "Spider test EX of the full system with a frontier model, full benchmark; not comparable at this scale".into(),
        resumed: resumed.into_inner().expect("counter lock"),
        cases: out,
    })
}

fn score_case(
    case: &EvalCase,
    key: String,
    db: &Result<Arc<dyn Database>, String>,
    predictor: &dyn Predictor,
) -> CaseResult {
    let fail = |error: String| CaseResult {
        key: key.clone(),
        case: case.clone(),
        predicted: String::new(),
        correct: false,
        error: Some(error),
        trace: Vec::new(),
    };
    let db = match db {
        Ok(d) => d,
        Err(e) => return fail(e.clone()),
    };
    let p = predictor.predict(case, db);
    let (correct, error) = match execution_match(db.as_ref(), &case.gold, &p.sql) {
        Ok(c) => (c, p.error),
        Err(e) => (false, Some(e)),
    };
    CaseResult {
        key,
        case: case.clone(),
        predicted: p.sql,
        correct,
        error,
        trace: p.artifacts,
    }
}
