//! The restart search: `m` iterations of `n` router-gated actions, each
//! evaluated and logged to memory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, AgentBackend, AgentContext, AgentError, Outcome, RouterPolicy};
use crate::data::{DataError, Frame, Task};
use crate::eval::{EvalConfig, EvalError, Evaluator, ScoreReport};
use crate::expr::OperatorSet;
use crate::llm::{LiveTransport, LlmClient, LlmConfig, LlmError, LlmStats, Transport};
use crate::memory::{
    ActionRecord, AgentRole, Decision, LlmExchange, MemoryConfig, MemoryError, MemoryPool,
};
use crate::pipeline::{FeatureSet, PipelineError, SetLimits};
use crate::rl::{featurize, PolicyNet, SearchProgress};

pub const ROUTER_STREAM: u64 = 1;
pub const GENERATOR_STREAM: u64 = 2;
pub const SELECTOR_STREAM: u64 = 3;
pub const MEMORY_STREAM: u64 = 4;
pub const LLM_STREAM: u64 = 5;

/// Independent random stream `stream` of `seed`.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        "unknown {} `{other}` (expected one of: {})",
                        stringify!($name),
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

keyword_enum!(RouterMode { Ppo => "ppo", Llm => "llm", Uniform => "uniform" });
keyword_enum!(AgentKind { Heuristic => "heuristic", Llm => "llm" });
keyword_enum!(Variant {
    Full => "full",
    NoRl => "no_rl",
    NoRouter => "no_router",
    NoLong => "no_long",
    NoShort => "no_short",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub iterations: usize,
    pub steps: usize,
    pub router: RouterMode,
    pub agents: AgentKind,
    pub use_long_memory: bool,
    pub use_short_memory: bool,
    pub seed: u64,
    pub eval: EvalConfig,
    pub limits: SetLimits,
    pub memory: MemoryConfig,
    pub operators: OperatorSet,
    pub llm: LlmConfig,
    /// Dataset label stored on records.
    pub dataset: String,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            steps: 6,
            router: RouterMode::Ppo,
            agents: AgentKind::Heuristic,
            use_long_memory: true,
            use_short_memory: true,
            seed: 42,
            eval: EvalConfig::default(),
            limits: SetLimits::default(),
            memory: MemoryConfig::default(),
            operators: OperatorSet::default(),
            llm: LlmConfig::default(),
            dataset: "dataset".to_string(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.iterations == 0 || self.steps == 0 {
            return Err(SearchError::Config(
                "iterations and steps must be at least 1".into(),
            ));
        }
        if self.eval.folds < 2 {
            return Err(SearchError::Config("at least 2 folds are required".into()));
        }
        if self.limits.min_features == 0 {
            return Err(SearchError::Config(
                "min_features must be at least 1".into(),
            ));
        }
        if self.operators.unary.is_empty() && self.operators.binary.is_empty() {
            return Err(SearchError::Config("operator roster is empty".into()));
        }
        if self.router == RouterMode::Llm || self.agents == AgentKind::Llm {
            self.llm.validate()?;
        }
        Ok(())
    }

    /// The configuration of an ablation variant.
    pub fn ablate(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        match variant {
            Variant::Full => {}
            Variant::NoRl => c.router = RouterMode::Ppo,
            Variant::NoRouter => c.router = RouterMode::Uniform,
            Variant::NoLong => c.use_long_memory = false,
            Variant::NoShort => c.use_short_memory = false,
        }
        c
    }
}

/// Trained policy, transport and prior records supplied by the caller.
#[derive(Clone, Default)]
pub struct Backends {
    pub policy: Option<PolicyNet>,
    pub transport: Option<Arc<dyn Transport>>,
    /// Records of an earlier run, eligible as long-term demonstrations only.
    pub prior: Vec<ActionRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub evaluations: usize,
    pub cache_hits: usize,
    pub noops: usize,
    pub fallbacks: usize,
    pub llm: LlmStats,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_set: FeatureSet,
    pub best_record: ActionRecord,
    pub best_report: ScoreReport,
    pub baseline_report: ScoreReport,
    pub pool: MemoryPool,
    pub stats: RunStats,
}

impl SearchResult {
    pub fn improvement(&self) -> f64 {
        self.best_report.primary - self.baseline_report.primary
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::of(&self.best_set)
    }

    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<(), SearchError> {
        Ok(self.pool.save_jsonl(path)?)
    }

    pub fn summary(&self, frame: &Frame) -> ResultSummary {
        let (primary, secondary) = frame.task().metric_names();
        ResultSummary {
            dataset: self.best_record.dataset.clone(),
            task: frame.task(),
            primary_metric: primary.to_string(),
            secondary_metric: secondary.to_string(),
            baseline: MetricPair::of(&self.baseline_report),
            best: MetricPair::of(&self.best_report),
            improvement: self.improvement(),
            records: self.pool.len(),
            best_iteration: self.best_record.iteration,
            best_step: self.best_record.step,
            best_features: self.best_set.live_names(),
            provenance: self.provenance(),
            stats: self.stats,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub primary: f64,
    pub secondary: f64,
}

impl MetricPair {
    fn of(r: &ScoreReport) -> Self {
        Self {
            primary: r.primary,
            secondary: r.secondary,
        }
    }
}

/// The single-object result summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub dataset: String,
    pub task: Task,
    pub primary_metric: String,
    pub secondary_metric: String,
    pub baseline: MetricPair,
    pub best: MetricPair,
    pub improvement: f64,
    pub records: usize,
    pub best_iteration: u32,
    pub best_step: u32,
    pub best_features: Vec<String>,
    pub provenance: Provenance,
    pub stats: RunStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedFeature {
    pub name: String,
    pub infix: String,
    pub postfix: String,
}

/// Where the columns of a feature set came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kept_originals: Vec<String>,
    pub dropped_originals: Vec<String>,
    pub generated: Vec<GeneratedFeature>,
}

impl Provenance {
    pub fn of(set: &FeatureSet) -> Self {
        Self {
            kept_originals: set.live_base().iter().map(|s| s.to_string()).collect(),
            dropped_originals: set.dropped_base().iter().map(|s| s.to_string()).collect(),
            generated: set
                .live_derived()
                .into_iter()
                .map(|e| GeneratedFeature {
                    name: e.name().to_string(),
                    infix: e.render_infix(),
                    postfix: e.render_postfix(),
                })
                .collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "generated {} new features while removing {} of {} original features\n",
            self.generated.len(),
            self.dropped_originals.len(),
            self.kept_originals.len() + self.dropped_originals.len()
        );
        s.push_str(&format!(
            "kept originals ({}): {}\n",
            self.kept_originals.len(),
            self.kept_originals.join(", ")
        ));
        s.push_str(&format!(
            "dropped originals ({}): {}\n",
            self.dropped_originals.len(),
            self.dropped_originals.join(", ")
        ));
        s.push_str(&format!("generated ({}):\n", self.generated.len()));
        for g in &self.generated {
            s.push_str(&format!("  {} = {}\n", g.name, g.infix));
        }
        s
    }
}

/// Mutable state threaded through one iteration.
struct Cursor {
    set: FeatureSet,
    report: ScoreReport,
    previous: Option<f64>,
    last: Option<Decision>,
}

struct Acted {
    next: Option<(FeatureSet, String)>,
    noop_reason: String,
    fallback: bool,
    exchanges: Vec<LlmExchange>,
}

fn absorb<T>(outcome: Outcome<T>, acted: &mut Acted) -> Result<T, AgentError> {
    acted.fallback |= outcome.fallback;
    acted.exchanges.extend(outcome.exchange);
    outcome.result
}

pub fn run(
    frame: &Frame,
    config: &SearchConfig,
    backends: &Backends,
) -> Result<SearchResult, SearchError> {
    config.validate()?;
    let started = Instant::now();
    let evaluator = Evaluator::new(
        frame,
        EvalConfig {
            seed: config.seed,
            ..config.eval
        },
    )?;

    let needs_llm = config.router == RouterMode::Llm || config.agents == AgentKind::Llm;
    let client = if needs_llm {
        let transport: Arc<dyn Transport> = match &backends.transport {
            Some(t) => t.clone(),
            None => Arc::new(LiveTransport::new(&config.llm)),
        };
        let jitter_seed = rand::Rng::gen(&mut component_rng(config.seed, LLM_STREAM));
        Some(Arc::new(LlmClient::new(
            config.llm.clone(),
            transport,
            jitter_seed,
        )?))
    } else {
        None
    };
    let router = match config.router {
        RouterMode::Uniform => RouterPolicy::Uniform,
        RouterMode::Ppo => RouterPolicy::Ppo(
            backends
                .policy
                .clone()
                .unwrap_or_else(|| PolicyNet::new(config.seed)),
        ),
        RouterMode::Llm => RouterPolicy::Llm(client.clone().expect("client")),
    };
    let backend = match config.agents {
        AgentKind::Heuristic => AgentBackend::Heuristic,
        AgentKind::Llm => AgentBackend::Llm(client.clone().expect("client")),
    };

    let mut router_rng = component_rng(config.seed, ROUTER_STREAM);
    let mut gen_rng = component_rng(config.seed, GENERATOR_STREAM);
    let mut sel_rng = component_rng(config.seed, SELECTOR_STREAM);
    let mut mem_rng = component_rng(config.seed, MEMORY_STREAM);

    let initial = FeatureSet::initial(frame, config.limits);
    let baseline_report = evaluator.evaluate(frame, &initial)?;
    let baseline_state = featurize(
        frame,
        &initial,
        &SearchProgress {
            iterations: config.iterations,
            steps: config.steps,
            ..SearchProgress::default()
        },
    );
    let mut pool = MemoryPool::new(config.memory);
    pool.preload(backends.prior.iter().cloned());
    pool.append(ActionRecord {
        iteration: 0,
        step: 0,
        decision: None,
        detail: "baseline".into(),
        token_sequence: initial.token_sequence(),
        score: baseline_report.primary,
        report: baseline_report.clone(),
        state: baseline_state,
        behavior_prob: 1.0,
        noop: false,
        fallback: false,
        feature_set: initial.to_record(),
        dataset: config.dataset.clone(),
        exchanges: Vec::new(),
    })?;
    let mut best_score = baseline_report.primary;
    let mut stats = RunStats::default();

    for i in 0..config.iterations {
        let mut cur = Cursor {
            set: initial.clone(),
            report: baseline_report.clone(),
            previous: None,
            last: None,
        };
        for j in 1..=config.steps {
            let progress = SearchProgress {
                iteration: i,
                iterations: config.iterations,
                step: j - 1,
                steps: config.steps,
                current_score: Some(cur.report.primary),
                best_score: Some(best_score),
                previous_score: cur.previous,
                last_decision: cur.last,
            };
            let state = featurize(frame, &cur.set, &progress);
            let mut acted = Acted {
                next: None,
                noop_reason: String::new(),
                fallback: false,
                exchanges: Vec::new(),
            };
            let (decision, prob) = {
                let demos = if config.use_long_memory {
                    pool.long_term_sample(&mut mem_rng)
                } else {
                    Vec::new()
                };
                let short = |role| {
                    if config.use_short_memory {
                        pool.short_term(i as u32, role)
                    } else {
                        Vec::new()
                    }
                };
                let ctx = AgentContext::new(frame, &cur.set, config.dataset.as_str())?
                    .with_operators(config.operators.clone())
                    .with_remaining_steps(config.steps - j + 1)
                    .with_importances(cur.report.importances.clone())
                    .with_state(state)
                    .with_demos(demos);
                let routed = absorb(
                    agents::route(
                        &router,
                        &state,
                        &ctx.clone().with_short_term(short(AgentRole::Router)),
                        &mut router_rng,
                    ),
                    &mut acted,
                )?;
                match routed.decision {
                    Decision::Generate => {
                        let ctx = ctx.with_short_term(short(AgentRole::Generator));
                        match absorb(agents::generate(&backend, &ctx, &mut gen_rng), &mut acted) {
                            Ok(action) => {
                                let (next, report) = cur.set.apply_generation(&action, frame)?;
                                if report.accepted.is_empty() {
                                    acted.noop_reason = format!(
                                        "nothing accepted ({} duplicate, {} constant, {} over cap)",
                                        report.duplicates, report.constant, report.truncated
                                    );
                                } else {
                                    let shown: Vec<String> = action
                                        .exprs
                                        .iter()
                                        .filter(|e| report.accepted.iter().any(|n| n == e.name()))
                                        .map(|e| e.render_infix())
                                        .collect();
                                    acted.next =
                                        Some((next, format!("generate {}", shown.join(", "))));
                                }
                            }
                            Err(e) => acted.noop_reason = e.to_string(),
                        }
                    }
                    Decision::Select => {
                        let ctx = ctx.with_short_term(short(AgentRole::Selector));
                        match absorb(agents::select(&backend, &ctx, &mut sel_rng), &mut acted) {
                            Ok(action) => {
                                let (next, report) = cur.set.apply_selection(&action)?;
                                if report.dropped.is_empty() {
                                    acted.noop_reason = "nothing dropped".into();
                                } else {
                                    acted.next =
                                        Some((next, format!("drop {}", report.dropped.join(", "))));
                                }
                            }
                            Err(e) => acted.noop_reason = e.to_string(),
                        }
                    }
                }
                (routed.decision, routed.prob)
            };

            let noop = acted.next.is_none();
            let (set, detail, report) = match acted.next {
                Some((next, detail)) => {
                    let report = evaluator.evaluate(frame, &next)?;
                    (next, detail, report)
                }
                None => {
                    stats.noops += 1;
                    (
                        cur.set.clone(),
                        format!("no-op: {}", acted.noop_reason),
                        cur.report.clone(),
                    )
                }
            };
            if acted.fallback {
                stats.fallbacks += 1;
            }
            let score = report.primary;
            pool.append(ActionRecord {
                iteration: i as u32,
                step: j as u32,
                decision: Some(decision),
                detail: format!("{decision}: {detail}"),
                token_sequence: set.token_sequence(),
                score,
                report: report.clone(),
                state,
                behavior_prob: prob,
                noop,
                fallback: acted.fallback,
                feature_set: set.to_record(),
                dataset: config.dataset.clone(),
                exchanges: acted.exchanges,
            })?;
            best_score = best_score.max(score);
            cur = Cursor {
                set,
                previous: Some(cur.report.primary),
                report,
                last: Some(decision),
            };
        }
    }

    let best_record = pool.best()?.clone();
    let best_set = FeatureSet::from_record(&best_record.feature_set, config.limits)?;
    stats.evaluations = evaluator.evaluations();
    stats.cache_hits = evaluator.cache_hits();
    stats.llm = client.map(|c| c.stats()).unwrap_or_default();
    stats.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(SearchResult {
        best_set,
        best_report: best_record.report.clone(),
        best_record,
        baseline_report,
        pool,
        stats,
    })
}

pub fn run_ablation(
    frame: &Frame,
    config: &SearchConfig,
    backends: &Backends,
    variant: Variant,
) -> Result<SearchResult, SearchError> {
    let backends = match variant {
        Variant::NoRl => Backends {
            policy: None,
            ..backends.clone()
        },
        _ => backends.clone(),
    };
    run(frame, &config.ablate(variant), &backends)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportPaths {
    pub csv: PathBuf,
    pub provenance_json: PathBuf,
    pub provenance_txt: PathBuf,
}

/// Writes the best matrix with its target as CSV, plus a provenance report
/// in JSON and text form, into `dir`.
pub fn export(
    result: &SearchResult,
    frame: &Frame,
    dir: impl AsRef<Path>,
) -> Result<ExportPaths, SearchError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let paths = ExportPaths {
        csv: dir.join("best_features.csv"),
        provenance_json: dir.join("provenance.json"),
        provenance_txt: dir.join("provenance.txt"),
    };
    let matrix = result.best_set.materialize(frame)?;
    let mut w = csv::Writer::from_path(&paths.csv)?;
    let mut header = matrix.names.clone();
    header.push(frame.target_name().to_string());
    w.write_record(&header)?;
    let labels = frame.class_labels();
    for r in 0..matrix.n_rows {
        let mut row: Vec<String> = matrix.columns.iter().map(|c| c[r].to_string()).collect();
        let y = frame.target()[r];
        row.push(match frame.task() {
            Task::Classification => labels[y as usize].clone(),
            Task::Regression => y.to_string(),
        });
        w.write_record(&row)?;
    }
    w.flush()?;
    let provenance = result.provenance();
    fs::write(
        &paths.provenance_json,
        serde_json::to_string_pretty(&provenance)?,
    )?;
    fs::write(&paths.provenance_txt, provenance.render())?;
    Ok(paths)
}
