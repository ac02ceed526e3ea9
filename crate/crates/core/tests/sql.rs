use std::path::PathBuf;
use std::sync::Arc;

use edakit_core::db::{Database, SqliteDatabase};
use edakit_core::domain::{
    ClarifiedTask, DecompositionPlan, PipelineConfig, RefineStage, SqlStatus, Subtask,
};
use edakit_core::hdc::{HdcArtifacts, HdcBuilder};
use edakit_core::llm::{Caller, Gateway, LlmProvider, ProviderProfile, ScriptRule, ScriptedProvider, SyntheticProvider};
use edakit_core::sql::{tags, SchemaSubset, SqlEngine, SqlError, SubsetEntry};
use edakit_core::vector::{StubEmbedder, VectorIndex};

struct Fixture {
    db: Arc<dyn Database>,
    index: VectorIndex,
    hdc: HdcArtifacts,
    config: PipelineConfig,
}

fn shop_db() -> Arc<dyn Database> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/shop");
    Arc::new(SqliteDatabase::from_fixture_dir(&dir).expect("fixture loads"))
}

fn fixture_with(db: Arc<dyn Database>) -> Fixture {
    let config = PipelineConfig::default();
    let index = Arc::new(VectorIndex::in_memory(Arc::new(StubEmbedder::bag_of_words(64))));
    let gateway = Arc::new(Gateway::new(Arc::new(SyntheticProvider::new()), ProviderProfile::unbounded("build")));
    let builder = HdcBuilder::new(gateway, index.clone(), db.clone(), config.clone());
    let (hdc, _) = builder.build().expect("hdc builds");
    drop(builder);
    let index = Arc::try_unwrap(index).ok().expect("index released");
    Fixture { db, index, hdc, config }
}

fn fixture() -> Fixture {
    fixture_with(shop_db())
}

fn gateway(rules: Vec<ScriptRule>) -> Gateway {
    let provider: Arc<dyn LlmProvider> = Arc::new(ScriptedProvider::new(rules).with_fallback(Arc::new(SyntheticProvider::new())));
    Gateway::new(provider, ProviderProfile::unbounded("test"))
}

fn engine<'a>(f: &'a Fixture, gw: &'a Gateway) -> SqlEngine<'a> {
    SqlEngine::new(Caller::new(gw, &f.config), &f.index, &f.hdc, f.db.as_ref())
}

fn subset(items: &[(&str, &[&str])]) -> SchemaSubset {
    SchemaSubset {
        entries: items
            .iter()
            .map(|(t, cs)| SubsetEntry {
                table: t.to_string(),
                columns: cs.iter().map(|c| c.to_string()).collect(),
            })
            .collect(),
    }
}

#[test]
fn scripted_filter_gives_the_expected_subset() {
    let f = fixture();
    let gw = gateway(vec![ScriptRule::contains(
        &["### TASK: SCHEMA_FILTER"],
        r#"{"tables":[{"table":"orders","columns":["user_id","id"]},{"table":"users","columns":["id","name"]},{"table":"ghost","columns":["x"]}]}"#,
    )]);
    let e = engine(&f, &gw);
    let got = e.filter_schema(&ClarifiedTask::verbatim("total orders per user"), 30).unwrap();
    assert_eq!(got, subset(&[("orders", &["user_id", "id"]), ("users", &["id", "name"])]));
    assert!(got.problems(&f.hdc.schema).is_empty());
}

#[test]
fn filter_blocks_respect_half_the_budget() {
    let mut f = fixture();
    f.config.max_prompt_tokens = 700;
    let gw = gateway(vec![]);
    let e = engine(&f, &gw);
    let task = ClarifiedTask::verbatim("total amount per city");
    let tables = e.coarse_tables(&task, 30).unwrap();
    assert_eq!(tables.len(), 3);
    let blocks = e.filter_blocks(&task, &tables);
    assert!(blocks.len() > 1, "{blocks:?}");
    let flat: Vec<String> = blocks.concat();
    assert_eq!(flat.len(), 3);
    let got = e.filter_schema(&task, 30).unwrap();
    assert_eq!(got.entries.len(), 3);
    assert_eq!(gw.tag_usage(tags::FILTER).calls as usize, blocks.len());
}

#[test]
fn single_table_database_filters_within_it() {
    let db: Arc<dyn Database> =
        Arc::new(SqliteDatabase::from_sql("solo", "CREATE TABLE t (id INTEGER PRIMARY KEY, v TEXT); INSERT INTO t VALUES (1,'a');").unwrap());
    let f = fixture_with(db);
    let gw = gateway(vec![]);
    let e = engine(&f, &gw);
    let task = ClarifiedTask::verbatim("how many rows");
    assert_eq!(e.coarse_tables(&task, 30).unwrap(), vec!["t"]);
    let s = e.filter_schema(&task, 30).unwrap();
    assert_eq!(s.tables(), vec!["t"]);
}

#[test]
fn empty_filter_reply_is_not_answerable() {
    let f = fixture();
    let gw = gateway(vec![ScriptRule::contains(&["### TASK: SCHEMA_FILTER"], r#"{"tables":[]}"#)]);
    let e = engine(&f, &gw);
    let task = ClarifiedTask::verbatim("weather on mars");
    assert!(matches!(e.filter_schema(&task, 30), Err(SqlError::EmptySubset(_))));
    let o = e.answer(&task, &[], 0);
    assert!(!o.artifact.answerable);
    assert_eq!(o.artifact.status, SqlStatus::Failed);
    assert_eq!(gw.tag_usage(tags::GENERATE).calls, 0);
}

#[test]
fn join_is_rewritten_qualified_and_quoted() {
    let f = fixture();
    let gw = gateway(vec![ScriptRule::contains(
        &["### TASK: GENERATE_SQL"],
        "```sql\nSELECT name, COUNT(*) AS n FROM users JOIN orders ON users.id = user_id GROUP BY name ORDER BY n DESC;\n```",
    )]);
    let e = engine(&f, &gw);
    let s = subset(&[("orders", &["user_id", "id"]), ("users", &["id", "name"])]);
    let sql = e.generate_sql(&ClarifiedTask::verbatim("total orders per user"), &s, &[]).unwrap();
    assert_eq!(
        sql,
        "SELECT `users`.`name`, COUNT(*) AS `n` FROM `users` JOIN `orders` ON `users`.`id` = `orders`.`user_id` GROUP BY `users`.`name` ORDER BY `n` DESC"
    );
    let a = e.refine_chain(&ClarifiedTask::verbatim("total orders per user"), &sql).unwrap();
    assert_eq!(a.status, SqlStatus::Executed);
    assert!(a.refinement_trace.is_empty());
}

#[test]
fn empty_generation_means_not_answerable() {
    let f = fixture();
    let gw = gateway(vec![ScriptRule::contains(&["### TASK: GENERATE_SQL"], "   ")]);
    let e = engine(&f, &gw);
    let s = subset(&[("users", &["id"])]);
    assert_eq!(e.generate_sql(&ClarifiedTask::verbatim("q"), &s, &[]).unwrap(), "");
    let o = e.answer(&ClarifiedTask::verbatim("q"), &[], 0);
    assert!(!o.artifact.answerable);
    assert!(o.artifact.sql.is_empty());
}

#[test]
fn out_of_subset_reference_is_reprompted_once() {
    let f = fixture();
    let gw = gateway(vec![
        ScriptRule::contains(&["### TASK: GENERATE_SQL", "### CORRECTION:"], "SELECT COUNT(*) FROM users"),
        ScriptRule::contains(&["### TASK: GENERATE_SQL"], "SELECT COUNT(*) FROM products"),
    ]);
    let e = engine(&f, &gw);
    let s = subset(&[("users", &["id"])]);
    let sql = e.generate_sql(&ClarifiedTask::verbatim("how many users"), &s, &[]).unwrap();
    assert_eq!(sql, "SELECT COUNT(*) FROM `users`");
    assert_eq!(gw.tag_usage(tags::GENERATE_RETRY).calls, 1);

    let gw = gateway(vec![ScriptRule::contains(&["### TASK: GENERATE_SQL"], "SELECT city FROM users")]);
    let e = engine(&f, &gw);
    match e.generate_sql(&ClarifiedTask::verbatim("cities"), &s, &[]) {
        Err(SqlError::OutOfSubsetReference(v)) => assert!(v[0].contains("users.city"), "{v:?}"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(gw.tag_usage(tags::GENERATE_RETRY).calls, 1);
}

#[test]
fn unknown_column_is_fixed_in_one_round() {
    let f = fixture();
    let gw = gateway(vec![ScriptRule::contains(
        &["### TASK: REFINE_SQL", "no such column: total"],
        "SELECT SUM(amount) FROM orders",
    )]);
    let e = engine(&f, &gw);
    let a = e.refine_chain(&ClarifiedTask::verbatim("revenue"), "SELECT SUM(total) FROM orders").unwrap();
    assert_eq!(a.status, SqlStatus::Executed);
    assert_eq!(a.refinement_trace.len(), 1);
    let r = &a.refinement_trace[0];
    assert_eq!((r.round, r.stage), (1, RefineStage::Explain));
    assert_eq!(r.replacement_sql, "SELECT SUM(`amount`) FROM `orders`");
    assert_eq!(a.sql, r.replacement_sql);
    assert!(a.validate_rounds(3).is_valid());
    let preview = a.result_preview.unwrap();
    assert_eq!(preview.rows.len(), 1);
}

#[test]
fn valid_sql_needs_no_rounds() {
    let f = fixture();
    let gw = gateway(vec![]);
    let a = engine(&f, &gw).refine_chain(&ClarifiedTask::verbatim("n"), "SELECT COUNT(*) FROM users").unwrap();
    assert_eq!(a.status, SqlStatus::Executed);
    assert!(a.refinement_trace.is_empty());
    assert_eq!(gw.tag_usage(tags::REFINE).calls, 0);
}

#[test]
fn fixer_that_never_fixes_exhausts_the_budget() {
    let f = fixture();
    let gw = gateway(vec![ScriptRule::contains(&["### TASK: REFINE_SQL"], "SELECT nope FROM users")]);
    let e = engine(&f, &gw);
    match e.refine_chain(&ClarifiedTask::verbatim("n"), "SELECT nope FROM users") {
        Err(SqlError::RefinementExhausted(a)) => {
            assert_eq!(a.status, SqlStatus::Failed);
            assert_eq!(a.refinement_trace.len(), f.config.max_refine_rounds);
            assert!(a.refinement_trace.len() <= 2 * f.config.max_refine_rounds);
            let rounds: Vec<usize> = a.refinement_trace.iter().map(|r| r.round).collect();
            assert_eq!(rounds, vec![1, 2, 3]);
            assert!(a.error.as_deref().unwrap().contains("no such column"));
            assert!(a.validate_rounds(f.config.max_refine_rounds).is_valid());
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(gw.tag_usage(tags::REFINE).calls as usize, f.config.max_refine_rounds);
}

#[test]
fn execute_time_failure_is_fed_back() {
    let f = fixture();
    let gw = gateway(vec![ScriptRule::contains(
        &["### TASK: REFINE_SQL", "### STAGE: execute"],
        "SELECT name FROM users",
    )]);
    let e = engine(&f, &gw);
    let a = e
        .refine_chain(&ClarifiedTask::verbatim("names"), "SELECT json_extract(name, '$.x') FROM users")
        .unwrap();
    assert_eq!(a.status, SqlStatus::Executed);
    assert_eq!(a.refinement_trace.len(), 1);
    assert_eq!(a.refinement_trace[0].stage, RefineStage::Execute);
    assert!(a.refinement_trace[0].error_text.to_lowercase().contains("json"));
}

#[test]
fn plan_steps_run_in_order_and_failures_are_flagged() {
    let f = fixture();
    let gw = gateway(vec![
        ScriptRule::contains(&["### TASK: GENERATE_SQL", "### REQUEST: count users"], "SELECT COUNT(*) FROM users"),
        ScriptRule::contains(&["### TASK: GENERATE_SQL", "### REQUEST: broken step"], "SELECT nope FROM users"),
        ScriptRule::contains(&["### TASK: GENERATE_SQL", "### REQUEST: count orders", "step 2: broken step"], "SELECT COUNT(*) FROM orders"),
        ScriptRule::contains(&["### TASK: REFINE_SQL"], "SELECT nope FROM users"),
    ]);
    let e = engine(&f, &gw);
    let plan = DecompositionPlan {
        parent: ClarifiedTask::verbatim("users and orders"),
        single_sql_answerable: false,
        subtasks: ["count users", "broken step", "count orders"]
            .iter()
            .map(|d| Subtask {
                description: d.to_string(),
                detail: String::new(),
            })
            .collect(),
    };
    let run = e.run_subtasks(&plan);
    let statuses: Vec<SqlStatus> = run.outcomes.iter().map(|o| o.artifact.status).collect();
    assert_eq!(statuses, vec![SqlStatus::Executed, SqlStatus::Failed, SqlStatus::Executed]);
    assert_eq!(run.failed_steps, vec![2]);
    let ids: Vec<String> = run.artifacts().iter().map(|a| a.id.clone()).collect();
    assert_eq!(ids.iter().collect::<std::collections::BTreeSet<_>>().len(), 3);

    let single = DecompositionPlan {
        parent: ClarifiedTask::verbatim("count users"),
        single_sql_answerable: true,
        subtasks: vec![],
    };
    assert_eq!(e.run_subtasks(&single).outcomes.len(), 1);
}
