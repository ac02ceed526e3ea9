//! One line per acceptance criterion. Run with
//! `cargo test -p edakit-cli --test acceptance -- --nocapture` to see them.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edakit_cli::{cmd_ask, cmd_build_hdc, cmd_eval, cmd_ingest, Env, EvalArgs};
use edakit_core::chart::{infer_column_types, recommend_chart, ColumnKind, InferredColumn};
use edakit_core::db::{Database, SqliteDatabase};
use edakit_core::domain::{
    ChartBindings, ChartType, ClarifiedTask, ErrorClass, PipelineConfig, QueryResult, RefineStage, ResultColumn,
    SqlStatus, Value,
};
use edakit_core::eval::execution_match;
use edakit_core::hdc::{tags, HdcBuilder};
use edakit_core::llm::{Caller, Gateway, LlmProvider, ProviderProfile, ScriptRule, ScriptedProvider, SyntheticProvider};
use edakit_core::sql::SqlEngine;
use edakit_core::vector::{Embedder, IndexedDocument, Namespace, StubEmbedder, VectorIndex};

type Outcome = Result<String, String>;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn dir_url(dir: &Path) -> String {
    format!("fixtures:{}", dir.display())
}

fn shop_db() -> Arc<dyn Database> {
    Arc::new(SqliteDatabase::from_fixture_dir(&root().join("fixtures/shop")).expect("fixture loads"))
}

fn unbounded(provider: Arc<dyn LlmProvider>) -> Arc<Gateway> {
    Arc::new(Gateway::new(provider, ProviderProfile::unbounded("acceptance")))
}

fn p1_end_to_end() -> Outcome {
    let started = Instant::now();
    let home = tempfile::tempdir().map_err(|e| e.to_string())?;
    let env = Env::new(home.path(), None).map_err(|e| e.to_string())?;
    let url = dir_url(&root().join("fixtures/shop"));
    let provider = format!("scripted:{}", root().join("fixtures/shop/script.json").display());
    cmd_ingest(&env, &url).map_err(|e| e.to_string())?;
    let built = cmd_build_hdc(&env, &url, &provider, None).map_err(|e| e.to_string())?;
    let hdc = &built.hdc;

    let total = hdc.schema.column_count();
    ensure(total == 15 && hdc.schema.tables.len() == 3, format!("fixture shape {} tables {total} columns", hdc.schema.tables.len()))?;
    let described = hdc.columns.iter().filter(|c| !c.description.trim().is_empty()).count();
    ensure(described == total, format!("{described}/{total} column summaries"))?;
    ensure(hdc.tables.len() == 3, format!("{} table summaries", hdc.tables.len()))?;
    for t in &hdc.tables {
        ensure(t.key_attributes.len() <= 5, format!("{} has {} key attributes", t.table, t.key_attributes.len()))?;
    }
    ensure(
        hdc.relationships.iter().any(|r| {
            (r.referencing_table.as_str(), r.foreign_key_column.as_str(), r.referenced_table.as_str(), r.primary_key_column.as_str())
                == ("orders", "user_id", "users", "id")
        }),
        "seeded orders.user_id -> users.id missing",
    )?;

    let questions: Vec<String> =
        serde_json::from_str(&std::fs::read_to_string(root().join("fixtures/shop/questions.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure(questions.len() == 5, "five fixture questions")?;
    let mut executed = 0;
    for q in &questions {
        let bundle = cmd_ask(&env, &url, &provider, q).map_err(|e| format!("{q}: {e}"))?;
        let mut ran = false;
        for (artifact, chart) in bundle.executed() {
            ran = true;
            let cols = artifact.result_preview.as_ref().map(|p| p.column_names()).unwrap_or_default();
            let report = chart.validate_against(&cols);
            ensure(report.is_valid(), format!("{q}: chart {report:?}"))?;
        }
        executed += usize::from(ran);
    }
    ensure(executed >= 4, format!("{executed}/5 executed"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, format!("took {secs:.2}s"))?;
    Ok(format!("{described}/{total} columns, fk found, {executed}/5 executed with valid charts, {secs:.2}s"))
}

/// Seeded schema of up to 50 tables and 500 columns with a few rows each.
fn random_schema(seed: u64) -> (String, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = match seed {
        0 => 1,
        1 => 50,
        _ => rng.random_range(1..=50usize),
    };
    let budget = 500usize;
    let mut ddl = String::new();
    let mut widths = Vec::with_capacity(tables);
    let types = ["INTEGER", "REAL", "TEXT", "TEXT", "NUMERIC"];
    for t in 0..tables {
        let left = budget - widths.iter().sum::<usize>() - (tables - t - 1);
        let width = match seed {
            0 => 500,
            1 => 10,
            _ => rng.random_range(1..=left.min(1000 / tables).max(1)),
        };
        widths.push(width);
        let mut cols = vec!["id INTEGER PRIMARY KEY".to_string()];
        let mut kinds = vec!["INTEGER"];
        for c in 1..width {
            if t > 0 && c == 1 && rng.random_bool(0.6) {
                let parent = rng.random_range(0..t);
                cols.push(format!("t{parent}_id INTEGER REFERENCES t{parent}(id)"));
                kinds.push("INTEGER");
                continue;
            }
            let ty = *types.choose(&mut rng).unwrap();
            cols.push(format!("c{c} {ty}"));
            kinds.push(ty);
        }
        ddl.push_str(&format!("CREATE TABLE t{t} ({});\n", cols.join(", ")));
        for row in 1..=3 {
            let values: Vec<String> = kinds
                .iter()
                .enumerate()
                .map(|(i, k)| match (i, *k) {
                    (0, _) => row.to_string(),
                    (_, "TEXT") => format!("'v{}'", rng.random_range(0..50)),
                    (_, "REAL") | (_, "NUMERIC") => format!("{:.2}", rng.random_range(0.0..100.0)),
                    _ => rng.random_range(1..=3).to_string(),
                })
                .collect();
            ddl.push_str(&format!("INSERT INTO t{t} VALUES ({});\n", values.join(", ")));
        }
    }
    (ddl, widths)
}

fn p2_token_budget() -> Outcome {
    let window = 4096;
    let config = PipelineConfig {
        max_prompt_tokens: 12_000,
        max_output_tokens: 512,
        parallelism: 4,
        ..PipelineConfig::default()
    };
    let mut profile = ProviderProfile::unbounded("small-window");
    profile.context_window_tokens = window;
    let mut deepest = 0;
    let mut max_columns = 0;
    for seed in 0..50u64 {
        let (ddl, widths) = random_schema(seed);
        let columns: usize = widths.iter().sum();
        ensure(columns <= 500 && widths.len() <= 50, format!("seed {seed}: generator produced {columns} columns"))?;
        max_columns = max_columns.max(columns);
        let db: Arc<dyn Database> = Arc::new(SqliteDatabase::from_sql(&format!("rand{seed}"), &ddl).map_err(|e| e.to_string())?);
        let gateway = Arc::new(Gateway::new(Arc::new(SyntheticProvider::new()), profile.clone()));
        let index = Arc::new(VectorIndex::in_memory(Arc::new(StubEmbedder::bag_of_words(32))));
        // odd seeds also squeeze the reduce budget to force deeper recursion
        let config = PipelineConfig {
            reduce_max_tokens: (seed % 2 == 1).then_some(120),
            ..config.clone()
        };
        let builder = HdcBuilder::new(gateway.clone(), index, db, config.clone());
        let group = builder.group_size();
        let (_, report) = builder.build().map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(gateway.overflow_count() == 0, format!("seed {seed}: {} context overflows", gateway.overflow_count()))?;
        ensure(report.skipped.is_empty(), format!("seed {seed}: skipped {:?}", report.skipped))?;
        for (tag, usage) in gateway.usage() {
            let peak = usage.max_prompt_tokens as usize + config.max_output_tokens;
            ensure(peak <= window, format!("seed {seed}: {tag} peaked at {peak} tokens"))?;
        }
        for (i, width) in widths.iter().enumerate() {
            let entries = width.div_ceil(group);
            let bound = (entries as f64).log2().ceil() as usize + 1;
            let levels = report.reduce_levels.get(&format!("t{i}")).copied().ok_or(format!("seed {seed}: t{i} not reduced"))?;
            ensure(levels <= bound, format!("seed {seed}: t{i} {levels} levels > {bound} for {entries} entries"))?;
            deepest = deepest.max(levels);
        }
    }
    Ok(format!("50 schemas up to {max_columns} columns, 0 overflows, deepest reduce {deepest} levels within bound"))
}

fn chain(n: usize) -> String {
    (0..n)
        .map(|i| {
            if i == 0 {
                "CREATE TABLE t0 (id INTEGER PRIMARY KEY, name TEXT);".to_string()
            } else {
                format!("CREATE TABLE t{i} (id INTEGER PRIMARY KEY, t{p}_id INTEGER REFERENCES t{p}(id), v REAL);", p = i - 1)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn p3_linear_relationships() -> Outcome {
    let mut seen = Vec::new();
    for n in [1usize, 5, 20] {
        let db: Arc<dyn Database> = Arc::new(SqliteDatabase::from_sql(&format!("chain{n}"), &chain(n)).map_err(|e| e.to_string())?);
        let gateway = unbounded(Arc::new(SyntheticProvider::new()));
        let index = Arc::new(VectorIndex::in_memory(Arc::new(StubEmbedder::bag_of_words(32))));
        let builder = HdcBuilder::new(gateway.clone(), index, db, PipelineConfig::default());
        let (art, _) = builder.build().map_err(|e| e.to_string())?;
        let calls = gateway.tag_usage(tags::RELATIONSHIPS).calls as usize;
        ensure(calls == n, format!("n={n}: {calls} relationship completions"))?;
        ensure(art.relationships.len() == n - 1, format!("n={n}: {} edges", art.relationships.len()))?;
        seen.push(format!("{n}->{calls}"));
    }
    Ok(format!("relationship completions {}", seen.join(", ")))
}

struct Fault {
    sql: &'static str,
    /// Pairs of (text the real engine error must contain, replacement).
    fixes: &'static [(&'static str, &'static str)],
    class: ErrorClass,
    stage: RefineStage,
}

const FAULTS: [Fault; 10] = [
    Fault {
        sql: "SELECT SUM(total) FROM orders",
        fixes: &[("no such column: total", "SELECT SUM(amount) FROM orders")],
        class: ErrorClass::UnknownColumn,
        stage: RefineStage::Explain,
    },
    Fault {
        sql: "SELECT username FROM users ORDER BY username",
        fixes: &[("no such column: username", "SELECT name FROM users ORDER BY name")],
        class: ErrorClass::UnknownColumn,
        stage: RefineStage::Explain,
    },
    Fault {
        sql: "SELECT u.town, COUNT(*) FROM users u GROUP BY u.town",
        fixes: &[("no such column: u.town", "SELECT u.city, COUNT(*) FROM users u GROUP BY u.city")],
        class: ErrorClass::UnknownColumn,
        stage: RefineStage::Explain,
    },
    Fault {
        sql: "SELECT p.category, SUM(o.qty) FROM orders o JOIN products p ON p.sku = o.sku GROUP BY p.category",
        fixes: &[
            (
                "no such column: o.qty",
                "SELECT p.category, SUM(o.quantity * p.unit_price) FROM orders o JOIN products p ON p.sku = o.sku GROUP BY p.category",
            ),
            (
                "no such column: p.unit_price",
                "SELECT p.category, SUM(o.quantity * p.price) FROM orders o JOIN products p ON p.sku = o.sku GROUP BY p.category",
            ),
        ],
        class: ErrorClass::UnknownColumn,
        stage: RefineStage::Explain,
    },
    Fault {
        sql: "SELECT COUNT(*) FROM customers",
        fixes: &[("no such table: customers", "SELECT COUNT(*) FROM users")],
        class: ErrorClass::UnknownRelation,
        stage: RefineStage::Explain,
    },
    Fault {
        sql: "SELECT o.id FROM orders o JOIN product p ON p.sku = o.sku",
        fixes: &[("no such table: product", "SELECT o.id FROM orders o JOIN products p ON p.sku = o.sku")],
        class: ErrorClass::UnknownRelation,
        stage: RefineStage::Explain,
    },
    Fault {
        sql: "SELECT amount FROM orders WHERE id = 'abc'",
        fixes: &[("invalid input syntax for type integer: 'abc'", "SELECT amount FROM orders WHERE id = 3")],
        class: ErrorClass::TypeError,
        stage: RefineStage::Explain,
    },
    Fault {
        sql: "SELECT name FROM users WHERE id = 'two' + 1",
        fixes: &[("'two'", "SELECT name FROM users WHERE id = 2 + 1")],
        class: ErrorClass::TypeError,
        stage: RefineStage::Explain,
    },
    Fault {
        sql: "SELECT json_extract(name, '$.first') FROM users",
        fixes: &[("malformed JSON", "SELECT name FROM users")],
        class: ErrorClass::TypeError,
        stage: RefineStage::Execute,
    },
    Fault {
        sql: "SELECT abs(-9223372036854775807 - 1) FROM users",
        fixes: &[("integer overflow", "SELECT COUNT(*) FROM users")],
        class: ErrorClass::TypeError,
        stage: RefineStage::Execute,
    },
];

fn p4_refinement_corpus() -> Outcome {
    let db = shop_db();
    let config = PipelineConfig::default();
    let index = Arc::new(VectorIndex::in_memory(Arc::new(StubEmbedder::bag_of_words(64))));
    let builder = HdcBuilder::new(unbounded(Arc::new(SyntheticProvider::new())), index.clone(), db.clone(), config.clone());
    let (hdc, _) = builder.build().map_err(|e| e.to_string())?;
    let mut rounds = Vec::new();
    for (i, f) in FAULTS.iter().enumerate() {
        // fixes only fire when the refine prompt carries the real engine error
        let rules = f
            .fixes
            .iter()
            .map(|(needle, fix)| ScriptRule::contains(&["### TASK: REFINE_SQL", *needle], *fix))
            .collect();
        let provider: Arc<dyn LlmProvider> = Arc::new(ScriptedProvider::new(rules).strict(true));
        let gateway = Gateway::new(provider, ProviderProfile::unbounded("faults"));
        let engine = SqlEngine::new(Caller::new(&gateway, &config), &index, &hdc, db.as_ref());
        let a = engine
            .refine_chain(&ClarifiedTask::verbatim("fault"), f.sql)
            .map_err(|e| format!("case {}: {e}", i + 1))?;
        let trace = &a.refinement_trace;
        ensure(a.status == SqlStatus::Executed, format!("case {}: {:?}", i + 1, a.status))?;
        ensure(!trace.is_empty() && trace.len() <= config.max_refine_rounds, format!("case {}: {} rounds", i + 1, trace.len()))?;
        ensure(trace.len() == f.fixes.len(), format!("case {}: {} rounds for {} faults", i + 1, trace.len(), f.fixes.len()))?;
        for (round, (entry, (needle, _))) in trace.iter().zip(f.fixes).enumerate() {
            ensure(entry.round == round + 1, format!("case {}: round numbering", i + 1))?;
            ensure(entry.error_text.contains(needle), format!("case {}: error {:?}", i + 1, entry.error_text))?;
        }
        ensure(trace[0].stage == f.stage, format!("case {}: stage {:?}", i + 1, trace[0].stage))?;
        ensure(trace[0].error_class == f.class, format!("case {}: class {}", i + 1, trace[0].error_class))?;
        let v = a.validate_rounds(config.max_refine_rounds);
        ensure(v.is_valid(), format!("case {}: {v:?}", i + 1))?;
        let last = &trace[trace.len() - 1];
        ensure(a.sql == last.replacement_sql, format!("case {}: final sql is not the last replacement", i + 1))?;
        rounds.push(trace.len());
    }
    Ok(format!("10/10 repaired, rounds {rounds:?}"))
}

fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn p5_vector_exactness() -> Outcome {
    let embedder = Arc::new(StubEmbedder::new(24));
    let index = VectorIndex::in_memory(embedder.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let words = ["alpha", "beta", "gamma", "delta", "omega", "kappa", "sigma", "theta"];
    let mut docs: Vec<(String, Vec<f32>)> = Vec::new();
    let put = |id: String, vector: Vec<f32>, docs: &mut Vec<(String, Vec<f32>)>| {
        index
            .upsert(IndexedDocument {
                namespace: Namespace::ColumnDesc,
                id: id.clone(),
                text: id.clone(),
                vector: vector.clone(),
                metadata: BTreeMap::new(),
            })
            .unwrap();
        docs.push((id, vector));
    };
    let mut anchors = Vec::new();
    for i in 0..980 {
        let text: Vec<&str> = (0..4).map(|_| *words.choose(&mut rng).unwrap()).collect();
        let text = format!("{} {i}", text.join(" "));
        let v = embedder.embed(&text).unwrap();
        if i % 98 == 0 {
            anchors.push(v.clone());
        }
        put(format!("d{i:04}"), v, &mut docs);
    }
    // exact ties: copies and positive rescalings of anchor vectors under other ids
    for (a, v) in anchors.iter().enumerate() {
        put(format!("a{a}-copy"), v.clone(), &mut docs);
        put(format!("z{a}-double"), v.iter().map(|x| x * 2.0).collect(), &mut docs);
    }
    ensure(docs.len() == 1000, format!("{} docs", docs.len()))?;
    let mut queries: Vec<Vec<f32>> = anchors.clone();
    for q in 0..20 {
        queries.push(embedder.embed(&format!("query {q}")).unwrap());
    }
    let mut tie_groups = 0;
    for (qi, q) in queries.iter().enumerate() {
        let mut expected: Vec<(f64, &str)> = docs.iter().map(|(id, v)| (oracle_cosine(q, v), id.as_str())).collect();
        expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        expected.truncate(10);
        let got = index.search_vector(Namespace::ColumnDesc, q, 10, |_| true).map_err(|e| e.to_string())?;
        let got_ids: Vec<&str> = got.iter().map(|h| h.id.as_str()).collect();
        let want_ids: Vec<&str> = expected.iter().map(|e| e.1).collect();
        ensure(got_ids == want_ids, format!("query {qi}: {got_ids:?} != {want_ids:?}"))?;
        for (h, (s, _)) in got.iter().zip(&expected) {
            ensure((h.score - s).abs() < 1e-9, format!("query {qi}: score {} vs {s}", h.score))?;
        }
        tie_groups += usize::from(expected.windows(2).any(|w| w[0].0 == w[1].0));
    }
    ensure(tie_groups >= anchors.len(), format!("only {tie_groups} queries hit ties"))?;
    Ok(format!("{} queries over 1000 docs match the oracle, {tie_groups} with exact ties", queries.len()))
}

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

fn text(s: impl Into<String>) -> Value {
    Value::Text(s.into())
}

/// The decision table restated over inferred kinds.
fn oracle_chart(cols: &[InferredColumn], rows: usize) -> ChartType {
    use ColumnKind::*;
    if rows == 0 {
        return ChartType::Table;
    }
    let num = |c: &InferredColumn| c.kind.is_numeric();
    let cat = |c: &InferredColumn| c.kind == Categorical;
    if cols.len() == 2 && ((cat(&cols[0]) && num(&cols[1]) && cols[0].distinct <= 12) || (cat(&cols[1]) && num(&cols[0]) && cols[1].distinct <= 12)) {
        return ChartType::Pie;
    }
    let fits = |x_ok: &dyn Fn(&InferredColumn) -> bool, pivot_ok: &dyn Fn(&InferredColumn) -> bool| {
        if cols.len() < 2 || cols.len() > 3 {
            return false;
        }
        let n = cols.len();
        (0..n).any(|x| {
            (0..n).any(|y| {
                x != y
                    && x_ok(&cols[x])
                    && num(&cols[y])
                    && (0..n).filter(|p| *p != x && *p != y).all(|p| pivot_ok(&cols[p]))
            })
        })
    };
    if fits(&|c| matches!(c.kind, Temporal | NumericContinuous), &|p| cat(p) && p.distinct <= 6) {
        return ChartType::Line;
    }
    if fits(&cat, &cat) {
        return ChartType::Bar;
    }
    ChartType::Table
}

fn p6_chart_table() -> Outcome {
    let task = ClarifiedTask::verbatim("chart");
    let cats = |n: usize| -> Vec<Value> { (0..n).map(|i| text(format!("c{i}"))).collect() };
    let months = ["2024-01", "2024-02", "2024-03", "2024-04"];
    let rows_of = |cols: Vec<Vec<Value>>| -> Vec<Vec<Value>> {
        let n = cols[0].len();
        (0..n).map(|r| cols.iter().map(|c| c[r].clone()).collect()).collect()
    };
    let ints = |n: usize| -> Vec<Value> { (0..n).map(|i| Value::Integer(i as i64 * 3 + 1)).collect() };
    let reals = |n: usize| -> Vec<Value> { (0..n).map(|i| Value::Real(i as f64 + 0.5)).collect() };
    let rows: Vec<(&str, QueryResult, ChartType, Option<&str>)> = vec![
        ("categorical + numeric", result(&[("city", "TEXT"), ("n", "")], rows_of(vec![cats(5), ints(5)])), ChartType::Pie, None),
        ("numeric + categorical", result(&[("n", ""), ("city", "TEXT")], rows_of(vec![ints(5), cats(5)])), ChartType::Pie, None),
        ("12 categories", result(&[("c", "TEXT"), ("n", "")], rows_of(vec![cats(12), ints(12)])), ChartType::Pie, None),
        ("13 categories", result(&[("c", "TEXT"), ("n", "")], rows_of(vec![cats(13), ints(13)])), ChartType::Bar, None),
        (
            "temporal + numeric",
            result(&[("month", ""), ("revenue", "")], rows_of(vec![months.iter().map(|m| text(*m)).collect(), reals(4)])),
            ChartType::Line,
            None,
        ),
        (
            "temporal + numeric + series",
            result(
                &[("month", ""), ("tier", "TEXT"), ("revenue", "")],
                (0..12).map(|i| vec![text(months[i % 4]), text(["a", "b", "c"][i / 4]), Value::Real(i as f64 + 0.25)]).collect(),
            ),
            ChartType::Line,
            Some("tier"),
        ),
        ("continuous + numeric", result(&[("x", "REAL"), ("y", "REAL")], rows_of(vec![reals(30), reals(30)])), ChartType::Line, None),
        (
            "categorical + numeric + categorical",
            result(
                &[("city", "TEXT"), ("tier", "TEXT"), ("n", "INTEGER")],
                (0..15).map(|i| vec![text(format!("c{}", i % 5)), text(["a", "b", "c"][i % 3]), Value::Integer(i as i64)]).collect(),
            ),
            ChartType::Bar,
            Some("tier"),
        ),
        (
            "temporal + numeric + 8 series",
            result(
                &[("month", ""), ("s", "TEXT"), ("v", "")],
                (0..32).map(|i| vec![text(months[i % 4]), text(format!("s{}", i / 4)), Value::Real(i as f64 + 0.5)]).collect(),
            ),
            ChartType::Table,
            None,
        ),
        (
            "free text + integer",
            result(&[("name", "TEXT"), ("n", "INTEGER")], (0..40).map(|i| vec![text(format!("name {i}")), Value::Integer(i)]).collect()),
            ChartType::Table,
            None,
        ),
        (
            "seven heterogeneous columns",
            result(
                &[("a", "TEXT"), ("b", "INTEGER"), ("c", "REAL"), ("d", ""), ("e", "TEXT"), ("f", "BOOLEAN"), ("g", "")],
                (0..4)
                    .map(|i| vec![text("x"), Value::Integer(i), Value::Real(0.5), text("2024-01-01"), text("y"), Value::Integer(1), Value::Null])
                    .collect(),
            ),
            ChartType::Table,
            None,
        ),
        ("no rows", result(&[("city", "TEXT"), ("n", "INTEGER")], vec![]), ChartType::Table, None),
    ];
    for (name, r, want, pivot) in &rows {
        let spec = recommend_chart(None, &task, r);
        ensure(spec.chart_type == *want, format!("{name}: got {} want {want}", spec.chart_type))?;
        ensure(spec.validate_against(&r.column_names()).is_valid(), format!("{name}: invalid bindings"))?;
        if let ChartBindings::XY { pivot_column, .. } = &spec.bindings {
            ensure(pivot_column.as_deref() == *pivot, format!("{name}: pivot {pivot_column:?}"))?;
        }
        ensure(oracle_chart(&infer_column_types(r), r.rows.len()) == *want, format!("{name}: oracle disagrees"))?;
    }

    // totality over random results: always a spec, table whenever no rule applies
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tables = 0;
    for _ in 0..600 {
        let ncols = rng.random_range(1..=4usize);
        let nrows = rng.random_range(0..=25usize);
        let decl: Vec<(String, String)> = (0..ncols)
            .map(|i| (format!("k{i}"), ["", "TEXT", "INTEGER", "REAL", "BOOLEAN"].choose(&mut rng).unwrap().to_string()))
            .collect();
        let gens: Vec<usize> = (0..ncols).map(|_| rng.random_range(0..6)).collect();
        let rows: Vec<Vec<Value>> = (0..nrows)
            .map(|_| {
                gens.iter()
                    .map(|g| match g {
                        0 => Value::Integer(rng.random_range(0..4)),
                        1 => Value::Real(rng.random_range(0.0..9.0)),
                        2 => text(["n", "s", "e", "w"].choose(&mut rng).unwrap().to_string()),
                        3 => text(format!("2024-0{}-1{}", rng.random_range(1..10), rng.random_range(0..10))),
                        4 => text(format!("free {}", rng.random_range(0..1000))),
                        _ => Value::Null,
                    })
                    .collect()
            })
            .collect();
        let cols: Vec<(&str, &str)> = decl.iter().map(|(n, t)| (n.as_str(), t.as_str())).collect();
        let r = result(&cols, rows);
        let spec = catch_unwind(AssertUnwindSafe(|| recommend_chart(None, &task, &r))).map_err(|_| "recommend_chart panicked".to_string())?;
        ensure(spec.validate_against(&r.column_names()).is_valid(), "random result got invalid bindings")?;
        let want = oracle_chart(&infer_column_types(&r), r.rows.len());
        ensure(spec.chart_type == want, format!("random result: got {} oracle {want}", spec.chart_type))?;
        tables += usize::from(spec.chart_type == ChartType::Table);
    }
    Ok(format!("{} table rows hold, 600 random results total ({tables} fell back to table)", rows.len()))
}

fn p7_ex_metric() -> Outcome {
    let db = SqliteDatabase::from_fixture_dir(&root().join("fixtures/shop")).map_err(|e| e.to_string())?;
    let m = |g: &str, p: &str| execution_match(&db, g, p);
    let identical = [
        "SELECT COUNT(*) FROM users",
        "SELECT name FROM users WHERE city = 'Lisbon'",
        "SELECT city, COUNT(*) FROM users GROUP BY city",
        "SELECT DISTINCT category FROM products ORDER BY category",
        "SELECT u.name, SUM(o.amount) AS s FROM orders o JOIN users u ON u.id = o.user_id GROUP BY u.name ORDER BY s DESC LIMIT 3",
    ];
    let full = identical.iter().filter(|s| m(s, s) == Ok(true)).count();
    ensure(full == 5, format!("identical pairs {full}/5"))?;
    let disjoint = [
        ("SELECT id FROM users WHERE id <= 2", "SELECT id FROM users WHERE id > 2"),
        ("SELECT name FROM users", "SELECT sku FROM products"),
    ];
    let zero = disjoint.iter().filter(|(g, p)| m(g, p) == Ok(true)).count();
    ensure(zero == 0, format!("disjoint pairs matched {zero}"))?;
    ensure(
        m("SELECT city FROM users", "SELECT DISTINCT city FROM users") == Ok(false),
        "duplicate multiset discrepancy accepted",
    )?;
    ensure(
        m("SELECT user_id FROM orders", "SELECT user_id FROM orders ORDER BY user_id DESC") == Ok(true),
        "unordered gold rejected a reordering",
    )?;
    ensure(
        m("SELECT id FROM users ORDER BY id", "SELECT id FROM users ORDER BY id DESC") == Ok(false),
        "ordered gold accepted a reversed order",
    )?;
    ensure(m("SELECT id FROM users ORDER BY id", "SELECT id FROM users ORDER BY id") == Ok(true), "ordered identity")?;
    Ok("identity 100%, disjoint 0%, duplicates and order enforced".into())
}

fn p8_parallel_determinism() -> Outcome {
    let build = |p: usize| -> Result<(Vec<u8>, Vec<Vec<IndexedDocument>>), String> {
        let home = tempfile::tempdir().map_err(|e| e.to_string())?;
        let env = Env::new(home.path(), None).map_err(|e| e.to_string())?;
        let url = dir_url(&root().join("fixtures/shop"));
        let provider = format!("scripted:{}", root().join("fixtures/shop/script.json").display());
        let record = cmd_ingest(&env, &url).map_err(|e| e.to_string())?;
        cmd_build_hdc(&env, &record.id, &provider, Some(p)).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(env.workspace.hdc_path(&record.id)).map_err(|e| e.to_string())?;
        let index = env.workspace.open_index(&record, env.settings.embedder().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let docs = edakit_core::hdc::HDC_NAMESPACES.iter().map(|ns| index.list(*ns)).collect();
        Ok((bytes, docs))
    };
    let (one, docs_one) = build(1)?;
    let (four, docs_four) = build(4)?;
    ensure(one == four, "hdc artifacts differ between parallelism 1 and 4")?;
    ensure(docs_one == docs_four, "indexed documents differ between parallelism 1 and 4")?;
    Ok(format!("{} artifact bytes and {} indexed documents identical", one.len(), docs_one.iter().map(Vec::len).sum::<usize>()))
}

/// Needs EDAKIT_LIVE_PROVIDER (for example `http:openai`), EDAKIT_SPIDER_DIR and
/// usually EDAKIT_LIVE_CONFIG with the provider profile.
fn p9_live_eval() -> Option<Outcome> {
    let provider = std::env::var("EDAKIT_LIVE_PROVIDER").ok()?;
    let spider = PathBuf::from(std::env::var("EDAKIT_SPIDER_DIR").ok()?);
    let config = std::env::var("EDAKIT_LIVE_CONFIG").ok().map(PathBuf::from);
    Some((|| {
        let home = tempfile::tempdir().map_err(|e| e.to_string())?;
        let env = Env::new(home.path(), config.as_deref()).map_err(|e| e.to_string())?;
        let args = EvalArgs {
            benchmark_dir: &spider,
            split: "dev",
            provider: &provider,
            max_questions: Some(10),
            seed: Some(0),
            cache: None,
            parallelism: None,
        };
        let report = cmd_eval(&env, &args).map_err(|e| e.to_string())?;
        ensure(report.overall.total == 10, format!("{} questions scored", report.overall.total))?;
        ensure(report.cases.iter().all(|c| !c.trace.is_empty() || c.error.is_some()), "a question has neither trace nor error")?;
        let lines = report.summary_lines();
        ensure(lines.iter().any(|l| l.contains("86.3")), "report does not cite the reference figure")?;
        Ok(lines.join("; "))
    })())
}

#[test]
fn acceptance() {
    type Criterion = Box<dyn Fn() -> Option<Outcome>>;
    let criteria: Vec<(&str, Criterion)> = vec![
        ("P1", Box::new(|| Some(p1_end_to_end()))),
        ("P2", Box::new(|| Some(p2_token_budget()))),
        ("P3", Box::new(|| Some(p3_linear_relationships()))),
        ("P4", Box::new(|| Some(p4_refinement_corpus()))),
        ("P5", Box::new(|| Some(p5_vector_exactness()))),
        ("P6", Box::new(|| Some(p6_chart_table()))),
        ("P7", Box::new(|| Some(p7_ex_metric()))),
        ("P8", Box::new(|| Some(p8_parallel_determinism()))),
        ("P9", Box::new(p9_live_eval)),
    ];
    let mut failed = Vec::new();
    for (name, run) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Some(Err(format!("panicked: {msg}")))
        });
        match outcome {
            Some(Ok(detail)) => println!("{name} PASS {detail}"),
            Some(Err(detail)) => {
                println!("{name} FAIL {detail}");
                failed.push(*name);
            }
            None => println!("{name} SKIP live provider not configured (non-blocking)"),
        }
    }
    if failed.contains(&"P9") {
        println!("P9 is non-blocking");
        failed.retain(|n| *n != "P9");
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
