use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use featforge::data::{load_csv, DataError, TargetSpec, Task};
use featforge::llm::{LlmError, API_KEY_ENV};
use featforge::memory::load_jsonl;
use featforge::rl::PolicyNet;
use featforge::search::{export, run, AgentKind, Backends, RouterMode, SearchConfig, SearchError};
use serde::Serialize;

use crate::{config, CliError, CliResult, RunArgs, TaskArg};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const RESULT_FILE: &str = "result.json";

#[derive(Debug, Serialize)]
struct DatasetInfo {
    path: String,
    target: String,
    task: Task,
    rows: usize,
    columns: usize,
    fingerprint: String,
}

#[derive(Debug, Serialize)]
struct Artifacts {
    manifest: String,
    trace: String,
    result: String,
    best_features: String,
    provenance_json: String,
    provenance_txt: String,
}

#[derive(Debug, Serialize)]
struct Versions {
    featforge: &'static str,
    trace_format: u32,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    config: SearchConfig,
    policy: Option<String>,
    preload: Option<String>,
    dataset: DatasetInfo,
    artifacts: Artifacts,
    versions: Versions,
    created_unix: u64,
}

fn data_error(e: DataError) -> CliError {
    CliError::data(e)
}

fn search_error(e: SearchError) -> CliError {
    match e {
        SearchError::Config(_) | SearchError::Llm(LlmError::InvalidConfig(_)) => {
            CliError::config(e)
        }
        SearchError::Data(_) => CliError::data(e),
        other => CliError::internal(other),
    }
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::internal(format!("{}: {e}", path.display()))
}

pub fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(path) => config::load(path)?,
        None => config::FileConfig::default(),
    };
    let (mut search, policy_path) = config::resolve(args, &file);
    let task = match args.task {
        TaskArg::Class => Task::Classification,
        TaskArg::Regr => Task::Regression,
    };
    search.dataset = args
        .data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    search.validate().map_err(search_error)?;

    let policy = match &policy_path {
        Some(path) => Some(
            PolicyNet::load(path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    if search.router == RouterMode::Ppo && policy.is_none() {
        log::warn!("ppo router without --policy uses untrained weights");
    }
    let needs_llm = search.router == RouterMode::Llm || search.agents == AgentKind::Llm;
    if needs_llm && std::env::var(API_KEY_ENV).map_or(true, |k| k.is_empty()) {
        log::warn!("{API_KEY_ENV} is not set; requests are sent without an API key");
    }

    let frame = load_csv(&args.data, &TargetSpec::parse(&args.target), task).map_err(data_error)?;

    let out = &args.out;
    fs::create_dir_all(out).map_err(io_error(out))?;
    let path_of = |name: &str| -> PathBuf { out.join(name) };
    let manifest = RunManifest {
        config: search.clone(),
        policy: policy_path.as_ref().map(|p| p.display().to_string()),
        preload: args.preload.as_ref().map(|p| p.display().to_string()),
        dataset: DatasetInfo {
            path: args.data.display().to_string(),
            target: frame.target_name().to_string(),
            task,
            rows: frame.n_rows(),
            columns: frame.n_features(),
            fingerprint: frame.fingerprint(),
        },
        artifacts: Artifacts {
            manifest: MANIFEST_FILE.into(),
            trace: TRACE_FILE.into(),
            result: RESULT_FILE.into(),
            best_features: "best_features.csv".into(),
            provenance_json: "provenance.json".into(),
            provenance_txt: "provenance.txt".into(),
        },
        versions: Versions {
            featforge: env!("CARGO_PKG_VERSION"),
            trace_format: 1,
        },
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let manifest_path = path_of(MANIFEST_FILE);
    let manifest_json = serde_json::to_string_pretty(&manifest).map_err(CliError::internal)?;
    fs::write(&manifest_path, manifest_json).map_err(io_error(&manifest_path))?;

    let prior = match &args.preload {
        Some(path) => {
            load_jsonl(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        }
        None => Vec::new(),
    };
    let backends = Backends {
        policy,
        transport: None,
        prior,
    };
    let result = run(&frame, &search, &backends).map_err(search_error)?;

    result
        .write_trace(path_of(TRACE_FILE))
        .map_err(search_error)?;
    export(&result, &frame, out).map_err(search_error)?;
    let summary = result.summary(&frame);
    let result_path = path_of(RESULT_FILE);
    let summary_json = serde_json::to_string_pretty(&summary).map_err(CliError::internal)?;
    fs::write(&result_path, summary_json).map_err(io_error(&result_path))?;

    println!(
        "best {} {:.4} vs baseline {:.4} ({:+.4}) with {} features (iteration {}, step {})",
        summary.primary_metric,
        summary.best.primary,
        summary.baseline.primary,
        summary.improvement,
        summary.best_features.len(),
        summary.best_iteration,
        summary.best_step
    );
    println!(
        "{} {:.4} vs {:.4}; {} records, {} evaluations, {} fallbacks",
        summary.secondary_metric,
        summary.best.secondary,
        summary.baseline.secondary,
        summary.records,
        summary.stats.evaluations,
        summary.stats.fallbacks
    );
    println!("artifacts in {}", out.display());
    Ok(())
}
