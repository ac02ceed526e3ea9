use std::sync::{Arc, Mutex};

use edakit_core::db::{Database, SqliteDatabase};
use edakit_core::domain::PipelineConfig;
use edakit_core::hdc::{partition_columns, tags, DescriptionBatch, HdcBuilder, HdcError};
use edakit_core::llm::{Gateway, LlmProvider, ProviderProfile, ScriptRule, ScriptedProvider, SyntheticProvider};
use edakit_core::prompt::section_of;
use edakit_core::vector::{StubEmbedder, VectorIndex};

fn builder(provider: Arc<dyn LlmProvider>, db: Arc<dyn Database>) -> HdcBuilder {
    let gateway = Arc::new(Gateway::new(provider, ProviderProfile::unbounded("test")));
    let index = Arc::new(VectorIndex::in_memory(Arc::new(StubEmbedder::new(16))));
    HdcBuilder::new(gateway, index, db, PipelineConfig::default())
}

fn empty_db() -> Arc<dyn Database> {
    Arc::new(SqliteDatabase::from_sql("empty", "").unwrap())
}

/// Reducer that concatenates its inputs and logs the group size of each call.
fn concatenating(log: Arc<Mutex<Vec<usize>>>) -> Arc<dyn LlmProvider> {
    Arc::new(ScriptedProvider::new(vec![ScriptRule::dynamic(&["### TASK: TABLE_REDUCE"], move |p| {
        let entries: Vec<&str> = section_of(p, "PARTIAL DESCRIPTIONS")
            .into_iter()
            .filter_map(|l| l.strip_prefix("- "))
            .collect();
        log.lock().unwrap().push(entries.len());
        entries.concat()
    })]))
}

fn batch(entries: Vec<String>) -> DescriptionBatch {
    DescriptionBatch {
        table: "t".into(),
        entries,
    }
}

#[test]
fn three_entries_of_six_under_ten() {
    let log = Arc::new(Mutex::new(Vec::new()));
    let b = builder(concatenating(log.clone()), empty_db());
    // 18 chars is 6 tokens under the chars/3 heuristic
    let entries = vec!["a".repeat(18), "b".repeat(18), "c".repeat(18)];
    let out = b.reduce_table_descriptions(&batch(entries), 10).unwrap();
    // pass 1 keeps each 6-token entry alone; outputs are capped at 5 tokens,
    // so pass 2 pairs two of them, pass 3 merges the last pair, then the final pass
    assert_eq!(*log.lock().unwrap(), vec![1, 1, 1, 2, 1, 2, 1]);
    assert_eq!(out.levels, 4);
    assert_eq!(out.calls, 7);
    assert!(b.gateway().count_tokens(&out.text) <= 5);
    assert_eq!(b.gateway().tag_usage(tags::TABLE_REDUCE).calls, 7);
}

#[test]
fn single_entry_is_one_call() {
    let log = Arc::new(Mutex::new(Vec::new()));
    let b = builder(concatenating(log.clone()), empty_db());
    let out = b.reduce_table_descriptions(&batch(vec!["only".into()]), 100).unwrap();
    assert_eq!(out.text, "only");
    assert_eq!((out.levels, out.calls), (1, 1));
    assert_eq!(*log.lock().unwrap(), vec![1]);
}

#[test]
fn oversized_entry_is_a_budget_error() {
    let b = builder(concatenating(Arc::default()), empty_db());
    let err = b
        .reduce_table_descriptions(&batch(vec!["x".into(), "y".repeat(40)]), 10)
        .unwrap_err();
    assert!(matches!(err, HdcError::ReduceBudget { entry_tokens: 14, max_tokens: 10 }));
    assert!(err.is_budget());
    assert_eq!(b.gateway().total_usage().calls, 0);
}

#[test]
fn levels_stay_within_log_bound_when_pairs_fit() {
    for n in 1..=40usize {
        let b = builder(concatenating(Arc::default()), empty_db());
        let entries: Vec<String> = (0..n).map(|i| format!("{:0>12}", i)).collect();
        let out = b.reduce_table_descriptions(&batch(entries), 8).unwrap();
        let bound = (n as f64).log2().ceil() as usize + 1;
        assert!(out.levels <= bound, "n={n}: {} levels > {bound}", out.levels);
    }
}

#[test]
fn map_entries_follow_block_order() {
    let cols: Vec<String> = (0..24).map(|i| format!("c{i:02} INTEGER")).collect();
    let db: Arc<dyn Database> =
        Arc::new(SqliteDatabase::from_sql("wide", &format!("CREATE TABLE w ({});", cols.join(", "))).unwrap());
    let schema = db.introspect().unwrap();
    let table = &schema.tables[0];
    let blocks = partition_columns(table, 3);
    let sequential = {
        let b = builder(Arc::new(SyntheticProvider::new()), db.clone());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        pool.install(|| b.map_table_blocks("wide", table, &blocks, &[]).unwrap())
    };
    let parallel = {
        let b = builder(Arc::new(SyntheticProvider::new()), db.clone());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        pool.install(|| b.map_table_blocks("wide", table, &blocks, &[]).unwrap())
    };
    assert_eq!(sequential, parallel);
    assert_eq!(parallel.entries.len(), 8);
    for (i, e) in parallel.entries.iter().enumerate() {
        assert!(e.starts_with(&format!("Block {} of w", i + 1)), "{e}");
    }
}
