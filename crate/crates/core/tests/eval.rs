use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use edakit_core::db::Database;
use edakit_core::eval::{
    execution_match, load_cases, open_benchmark_db, run_eval, EvalCase, EvalOptions, FixedPredictor, Prediction, Predictor,
    ResultCache, REFERENCE_EX,
};

fn bench() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/spider_mini")
}

fn options() -> EvalOptions {
    EvalOptions {
        split: "dev".into(),
        max_questions: None,
        seed: None,
        parallelism: 2,
    }
}

fn gold() -> HashMap<usize, String> {
    load_cases(&bench(), "dev").unwrap().into_iter().map(|c| (c.index, c.gold)).collect()
}

#[test]
fn identical_sql_scores_full_marks() {
    let report = run_eval(&bench(), &options(), &FixedPredictor(gold()), None).unwrap();
    assert_eq!(report.overall.total, 5);
    assert_eq!(report.overall.correct, 5);
    assert_eq!(report.overall.ex, 100.0);
    assert_eq!(report.by_difficulty["easy"].total, 2);
    assert_eq!(report.by_difficulty["hard"].correct, 1);
    assert_eq!(report.reference_ex, REFERENCE_EX);
    assert!(report.summary_lines().iter().any(|l| l.contains("86.3")));
}

#[test]
fn disjoint_results_score_zero() {
    // same shapes as gold, rows that cannot coincide
    let preds: HashMap<usize, String> = [
        (0, "SELECT count(*) + 1000 FROM users"),
        (1, "SELECT name FROM users WHERE city = 'Faro'"),
        (2, "SELECT city || '?', count(*) FROM users GROUP BY city"),
        (3, "SELECT DISTINCT sku FROM products ORDER BY sku LIMIT 3"),
        (4, "SELECT name, -1 FROM users LIMIT 3"),
    ]
    .into_iter()
    .map(|(i, s)| (i, s.to_string()))
    .collect();
    let report = run_eval(&bench(), &options(), &FixedPredictor(preds), None).unwrap();
    assert_eq!(report.overall.correct, 0);
    assert_eq!(report.overall.ex, 0.0);
    assert!(report.cases.iter().all(|c| !c.correct && c.error.is_none()));
}

#[test]
fn duplicates_break_multiset_equality() {
    let db = open_benchmark_db(&bench(), "shop").unwrap();
    // Lisbon, Lisbon, Porto against Lisbon, Porto, Porto: same set and size
    let gold = "SELECT city FROM users WHERE id IN (1, 2, 3)";
    assert_eq!(execution_match(&db, gold, "SELECT city FROM users WHERE id IN (1, 2, 5)"), Ok(false));
    assert_eq!(execution_match(&db, "SELECT DISTINCT city FROM users", "SELECT city FROM users"), Ok(false));
    assert_eq!(execution_match(&db, gold, "SELECT city FROM users WHERE id IN (3, 2, 1) ORDER BY city DESC"), Ok(true));
}

#[test]
fn order_matters_only_when_gold_orders() {
    let db = open_benchmark_db(&bench(), "shop").unwrap();
    let asc = "SELECT name FROM users ORDER BY name";
    let desc = "SELECT name FROM users ORDER BY name DESC";
    assert_eq!(execution_match(&db, asc, desc), Ok(false));
    assert_eq!(execution_match(&db, asc, asc), Ok(true));
    assert_eq!(execution_match(&db, "SELECT name FROM users", desc), Ok(true));
    // an ORDER BY inside a subquery does not make the outer result ordered
    let inner = "SELECT name FROM (SELECT name FROM users ORDER BY name LIMIT 8)";
    assert_eq!(execution_match(&db, inner, desc), Ok(true));
}

#[test]
fn failing_or_empty_predictions_are_incorrect() {
    let db = open_benchmark_db(&bench(), "shop").unwrap();
    assert_eq!(execution_match(&db, "SELECT 1", ""), Ok(false));
    assert_eq!(execution_match(&db, "SELECT 1", "SELECT nope FROM users"), Ok(false));
    assert!(execution_match(&db, "SELECT nope FROM users", "SELECT 1").is_err());
    // engine coercions are allowed for benchmark statements
    assert_eq!(execution_match(&db, "SELECT name FROM users WHERE id = '3'", "SELECT 'Cleo'"), Ok(true));
}

struct Counting {
    inner: FixedPredictor,
    calls: AtomicUsize,
}

impl Predictor for Counting {
    fn predict(&self, case: &EvalCase, db: &Arc<dyn Database>) -> Prediction {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict(case, db)
    }
}

#[test]
fn cached_results_are_reused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    let mut preds = gold();
    preds.insert(2, "SELECT city, 0 FROM users GROUP BY city".into());
    let predictor = Counting {
        inner: FixedPredictor(preds),
        calls: AtomicUsize::new(0),
    };
    let first = run_eval(&bench(), &options(), &predictor, Some(&ResultCache::open(&path).unwrap())).unwrap();
    assert_eq!(predictor.calls.load(Ordering::SeqCst), 5);
    assert_eq!(first.overall.correct, 4);
    assert_eq!(first.resumed, 0);

    // a torn trailing line from an interrupted run is ignored
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"key\": \"trunc");
    std::fs::write(&path, text).unwrap();

    let second = run_eval(&bench(), &options(), &predictor, Some(&ResultCache::open(&path).unwrap())).unwrap();
    assert_eq!(predictor.calls.load(Ordering::SeqCst), 5);
    assert_eq!(second.resumed, 5);
    assert_eq!(second.overall, first.overall);
    assert_eq!(second.by_difficulty, first.by_difficulty);
}

#[test]
fn seeded_subsets_are_reproducible() {
    let mut o = options();
    o.max_questions = Some(3);
    o.seed = Some(11);
    let a = run_eval(&bench(), &o, &FixedPredictor(gold()), None).unwrap();
    let b = run_eval(&bench(), &o, &FixedPredictor(gold()), None).unwrap();
    let ids = |r: &edakit_core::eval::EvalReport| r.cases.iter().map(|c| c.case.index).collect::<Vec<_>>();
    assert_eq!(ids(&a).len(), 3);
    assert_eq!(ids(&a), ids(&b));
}
