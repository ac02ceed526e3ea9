//! Command implementations behind the `edakit` binary. Each `cmd_*` returns
//! structured output so it can be driven from tests; `run` adds printing and
//! exit codes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};

use edakit_core::config::{ProviderSpec, Settings};
use edakit_core::db::{DataSourceUrl, DbError};
use edakit_core::domain::SqlStatus;
use edakit_core::eval::{run_eval, EvalOptions, EvalReport, PipelinePredictor, ResultCache};
use edakit_core::hdc::{BuildReport, HdcArtifacts};
use edakit_core::llm::Gateway;
use edakit_core::pipeline::{AnswerBundle, PipelineError};
use edakit_core::question::{load_domain_terms, load_sops};
use edakit_core::workspace::{DataSourceRecord, Workspace, WorkspaceError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_READY: i32 = 3;
pub const EXIT_CONNECTION: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "edakit", version, about = "Explore relational data with natural-language questions")]
pub struct Cli {
    /// State directory holding datasources, indexes and jobs.
    #[arg(long, global = true, env = "EDAKIT_HOME", default_value = ".edakit")]
    pub home: PathBuf,
    /// TOML file with pipeline settings and provider profiles.
    #[arg(long, global = true, env = "EDAKIT_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ProviderArg {
    /// `synthetic`, `scripted:<file>` or `http:<profile>`.
    #[arg(long, default_value = "synthetic")]
    pub provider: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Register a database (`sqlite:<file>`, `fixtures:<dir>`, `mysql://...`).
    Ingest { url: String },
    /// Build the hierarchical data context of a datasource.
    BuildHdc {
        /// Datasource id or URL.
        datasource: String,
        #[command(flatten)]
        provider: ProviderArg,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Answer one question.
    Ask {
        datasource: String,
        question: String,
        #[command(flatten)]
        provider: ProviderArg,
        /// Print the answer bundle as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Execution accuracy over a Spider-layout benchmark directory.
    Eval {
        benchmark_dir: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        #[command(flatten)]
        provider: ProviderArg,
        #[arg(long)]
        max_questions: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSONL file of finished questions; re-runs skip them.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Where to write the full JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[command(flatten)]
        provider: ProviderArg,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 64)]
        queue_capacity: usize,
        /// Environment variable holding the key clients must send.
        #[arg(long)]
        api_key_env: Option<String>,
    },
    /// Load domain terms (JSON lines) for a datasource.
    LoadTerms { datasource: String, file: PathBuf },
    /// Load standard procedures (JSON lines) for a datasource.
    LoadSops { datasource: String, file: PathBuf },
}

/// Shared state of one invocation.
pub struct Env {
    pub workspace: Workspace,
    pub settings: Settings,
}

impl Env {
    pub fn new(home: &Path, config: Option<&Path>) -> Result<Self> {
        Ok(Self {
            workspace: Workspace::new(home),
            settings: Settings::load_or_default(config)?,
        })
    }

    pub fn gateway(&self, provider: &str) -> Result<Arc<Gateway>> {
        let spec = ProviderSpec::parse(provider)?;
        Ok(Arc::new(self.settings.gateway(&spec)?))
    }
}

pub fn cmd_ingest(env: &Env, url: &str) -> Result<DataSourceRecord> {
    DataSourceUrl::parse(url)?;
    Ok(env.workspace.ingest(url)?)
}

pub struct BuildOutcome {
    pub record: DataSourceRecord,
    pub hdc: HdcArtifacts,
    pub report: BuildReport,
    pub report_path: PathBuf,
}

pub fn cmd_build_hdc(env: &Env, datasource: &str, provider: &str, parallelism: Option<usize>) -> Result<BuildOutcome> {
    let record = env.workspace.record(datasource)?;
    let gateway = env.gateway(provider)?;
    let mut config = env.settings.pipeline.clone();
    if let Some(p) = parallelism {
        config.parallelism = p.max(1);
    }
    let index = Arc::new(env.workspace.open_index(&record, env.settings.embedder()?)?);
    let (hdc, report) = env.workspace.build(&record, gateway, index, &config)?;
    let report_path = env.workspace.report_path(&record.id);
    Ok(BuildOutcome {
        record,
        hdc,
        report,
        report_path,
    })
}

pub fn cmd_ask(env: &Env, datasource: &str, provider: &str, question: &str) -> Result<AnswerBundle> {
    let record = env.workspace.record(datasource)?;
    let gateway = env.gateway(provider)?;
    let (pipeline, hdc) = env
        .workspace
        .pipeline(&record, gateway, env.settings.embedder()?, &env.settings.pipeline)?;
    Ok(pipeline.ask(&hdc, question)?)
}

pub struct EvalArgs<'a> {
    pub benchmark_dir: &'a Path,
    pub split: &'a str,
    pub provider: &'a str,
    pub max_questions: Option<usize>,
    pub seed: Option<u64>,
    pub cache: Option<&'a Path>,
    pub parallelism: Option<usize>,
}

pub fn cmd_eval(env: &Env, args: &EvalArgs) -> Result<EvalReport> {
    if !args.benchmark_dir.join(format!("{}.json", args.split)).exists() {
        bail!("{} has no {}.json", args.benchmark_dir.display(), args.split);
    }
    let gateway = env.gateway(args.provider)?;
    let contexts = env.workspace.root().join("eval").join(args.provider.replace([':', '/', '\\'], "_"));
    let predictor = PipelinePredictor::new(gateway, env.settings.embedder()?, env.settings.pipeline.clone(), Some(contexts));
    let cache = args.cache.map(ResultCache::open).transpose()?;
    let options = EvalOptions {
        split: args.split.to_string(),
        max_questions: args.max_questions,
        seed: args.seed,
        parallelism: args.parallelism.unwrap_or(env.settings.pipeline.parallelism),
    };
    Ok(run_eval(args.benchmark_dir, &options, &predictor, cache.as_ref())?)
}

pub fn render_record(r: &DataSourceRecord) -> String {
    format!(
        "datasource {}\n  url: {}\n  database: {}\n  tables ({}): {}\n  columns: {}\n",
        r.id,
        r.url,
        r.database,
        r.tables.len(),
        r.tables.join(", "),
        r.column_count
    )
}

pub fn render_build(o: &BuildOutcome) -> String {
    let r = &o.report;
    let c = &r.counts;
    let mut out = String::new();
    let _ = writeln!(out, "data context for {} ({}) built with {}", o.record.id, r.database, r.provider);
    let _ = writeln!(out, "  tables summarized: {}/{}", c.tables_summarized, c.tables_total);
    let _ = writeln!(out, "  columns summarized: {}/{}", c.columns_summarized, c.columns_total);
    let _ = writeln!(
        out,
        "  relationships: {}  entities: {}  questions: {}",
        c.relationships, c.entities, c.questions
    );
    for s in &r.stages {
        let _ = writeln!(out, "  stage {:<14} {:>8} ms", s.stage, s.millis);
    }
    let _ = writeln!(
        out,
        "  tokens: {} in, {} out over {} calls (cost {:.4})",
        r.total.input_tokens, r.total.output_tokens, r.total.calls, r.total.cost
    );
    for s in &r.skipped {
        let _ = writeln!(out, "  skipped {} at {}: {}", s.table, s.stage, s.error);
    }
    for w in &r.warnings {
        let _ = writeln!(out, "  warning: {w}");
    }
    let _ = writeln!(out, "  report: {}", o.report_path.display());
    out
}

pub fn render_bundle(b: &AnswerBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "question: {}", b.question);
    let _ = writeln!(out, "clarified: {}", b.clarified.refined_task);
    for a in &b.clarified.ambiguities {
        let _ = writeln!(out, "  ambiguous: {}: {}", a.concept, a.explanation);
    }
    if b.plan.subtasks.len() > 1 {
        let _ = writeln!(out, "plan:");
        for (i, s) in b.plan.subtasks.iter().enumerate() {
            let _ = writeln!(out, "  {}. {}", i + 1, s.description);
        }
    }
    for (i, (a, chart)) in b.artifacts.iter().zip(&b.charts).enumerate() {
        let _ = writeln!(out, "\n[step {}] {}", i + 1, a.task.refined_task);
        if !a.answerable {
            let _ = writeln!(out, "  not answerable: {}", a.error.as_deref().unwrap_or("no matching schema"));
            continue;
        }
        let _ = writeln!(out, "  sql: {}", a.sql);
        for r in &a.refinement_trace {
            let _ = writeln!(
                out,
                "  refine round {} ({:?}, {}): {}",
                r.round, r.stage, r.error_class, r.error_text
            );
        }
        match a.status {
            SqlStatus::Executed => {
                if let Some(p) = &a.result_preview {
                    let _ = writeln!(out, "  columns: {}", p.column_names().join(" | "));
                    for row in &p.rows {
                        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                        let _ = writeln!(out, "    {}", cells.join(" | "));
                    }
                    if p.truncated {
                        let _ = writeln!(out, "    ...");
                    }
                }
                let _ = writeln!(out, "  chart: {}", chart.describe());
            }
            _ => {
                let _ = writeln!(out, "  failed: {}", a.error.as_deref().unwrap_or("unknown error"));
            }
        }
    }
    out
}

/// Exit code for an error chain.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(w) = cause.downcast_ref::<WorkspaceError>() {
            return match w {
                WorkspaceError::NotIngested(_) | WorkspaceError::NotBuilt(_) => EXIT_NOT_READY,
                WorkspaceError::Db(DbError::ConnectionFailed(_)) => EXIT_CONNECTION,
                WorkspaceError::Db(DbError::InvalidUrl(_)) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            };
        }
        if let Some(PipelineError::NotReady(_)) = cause.downcast_ref::<PipelineError>() {
            return EXIT_NOT_READY;
        }
        if let Some(DbError::InvalidUrl(_)) = cause.downcast_ref::<DbError>() {
            return EXIT_USAGE;
        }
        if cause.downcast_ref::<edakit_core::config::ConfigError>().is_some() {
            return EXIT_USAGE;
        }
    }
    EXIT_FAILURE
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    log::info!("shutting down; waiting for running jobs");
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_serve(env: Env, host: &str, port: u16, provider: &str, workers: usize, queue_capacity: usize, api_key_env: Option<&str>) -> Result<()> {
    let api_key = match api_key_env {
        Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
        None => None,
    };
    let config = edakit_server::ServerConfig {
        workspace: env.workspace,
        settings: env.settings,
        provider: ProviderSpec::parse(provider)?,
        workers,
        queue_capacity,
        api_key,
        gateway: None,
    };
    let state = edakit_server::AppState::new(config).map_err(anyhow::Error::msg)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("cannot listen on {host}:{port}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        edakit_server::serve(listener, state, shutdown_signal()).await?;
        Ok(())
    })
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Runs one command, printing its output.
pub fn run(cli: Cli) -> Result<()> {
    let env = Env::new(&cli.home, cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { url } => {
            let r = cmd_ingest(&env, &url)?;
            print!("{}", render_record(&r));
        }
        Command::BuildHdc {
            datasource,
            provider,
            parallelism,
        } => {
            let started = Instant::now();
            let o = cmd_build_hdc(&env, &datasource, &provider.provider, parallelism)?;
            print!("{}", render_build(&o));
            println!("  wall time: {} ms", started.elapsed().as_millis());
        }
        Command::Ask {
            datasource,
            question,
            provider,
            json,
        } => {
            let bundle = cmd_ask(&env, &datasource, &provider.provider, &question)?;
            if json {
                println!("{}", bundle.to_json());
            } else {
                print!("{}", render_bundle(&bundle));
            }
        }
        Command::Eval {
            benchmark_dir,
            split,
            provider,
            max_questions,
            seed,
            cache,
            report,
            parallelism,
        } => {
            let r = cmd_eval(
                &env,
                &EvalArgs {
                    benchmark_dir: &benchmark_dir,
                    split: &split,
                    provider: &provider.provider,
                    max_questions,
                    seed,
                    cache: cache.as_deref(),
                    parallelism,
                },
            )?;
            for c in &r.cases {
                let mark = if c.correct { "ok " } else { "miss" };
                println!("{mark} [{}] {}", c.case.index, c.case.question);
                if let Some(e) = &c.error {
                    println!("     error: {e}");
                }
            }
            for line in r.summary_lines() {
                println!("{line}");
            }
            if r.resumed > 0 {
                println!("resumed {} cached questions", r.resumed);
            }
            if let Some(path) = report {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                std::fs::write(&path, serde_json::to_string_pretty(&r)?)?;
                println!("report: {}", path.display());
            }
        }
        Command::Serve {
            port,
            host,
            provider,
            workers,
            queue_capacity,
            api_key_env,
        } => cmd_serve(env, &host, port, &provider.provider, workers, queue_capacity, api_key_env.as_deref())?,
        Command::LoadTerms { datasource, file } => {
            let record = env.workspace.record(&datasource)?;
            let index = env.workspace.open_index(&record, env.settings.embedder()?)?;
            let n = load_domain_terms(&index, &file)?;
            index.flush()?;
            print_json(&serde_json::json!({ "datasource": record.id, "domain_terms": n }))?;
        }
        Command::LoadSops { datasource, file } => {
            let record = env.workspace.record(&datasource)?;
            let index = env.workspace.open_index(&record, env.settings.embedder()?)?;
            let n = load_sops(&index, &file)?;
            index.flush()?;
            print_json(&serde_json::json!({ "datasource": record.id, "sops": n }))?;
        }
    }
    Ok(())
}
