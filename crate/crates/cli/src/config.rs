use std::path::{Path, PathBuf};

use featforge::eval::ModelKind;
use featforge::search::{AgentKind, RouterMode, SearchConfig};
use serde::Deserialize;

use crate::{CliError, CliResult, RunArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub llm: LlmSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub iterations: Option<usize>,
    pub steps: Option<usize>,
    pub router: Option<RouterMode>,
    pub agents: Option<AgentKind>,
    pub seed: Option<u64>,
    pub long_memory: Option<bool>,
    pub short_memory: Option<bool>,
    pub policy: Option<PathBuf>,
    pub min_features: Option<usize>,
    pub top_pool: Option<usize>,
    pub demos: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub model: Option<ModelKind>,
    pub folds: Option<usize>,
    pub trees: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub token_budget: Option<usize>,
}

pub fn load(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
}

/// Flags override the file, which overrides the defaults.
pub fn resolve(args: &RunArgs, file: &FileConfig) -> (SearchConfig, Option<PathBuf>) {
    let mut c = SearchConfig::default();
    let (s, e, l) = (&file.search, &file.eval, &file.llm);

    c.iterations = args.iterations.or(s.iterations).unwrap_or(c.iterations);
    c.steps = args.steps.or(s.steps).unwrap_or(c.steps);
    c.router = args.router.or(s.router).unwrap_or(c.router);
    c.agents = args.agents.or(s.agents).unwrap_or(c.agents);
    c.seed = args.seed.or(s.seed).unwrap_or(c.seed);
    c.use_long_memory = !args.no_long_memory && s.long_memory.unwrap_or(true);
    c.use_short_memory = !args.no_short_memory && s.short_memory.unwrap_or(true);
    c.limits.min_features = s.min_features.unwrap_or(c.limits.min_features);
    c.memory.top_pool = s.top_pool.unwrap_or(c.memory.top_pool);
    c.memory.demos = s.demos.unwrap_or(c.memory.demos);

    c.eval.model = args.model.or(e.model).unwrap_or(c.eval.model);
    c.eval.folds = args.folds.or(e.folds).unwrap_or(c.eval.folds);
    c.eval.n_trees = e.trees.unwrap_or(c.eval.n_trees);

    if let Some(v) = args.endpoint.clone().or(l.endpoint.clone()) {
        c.llm.endpoint = v;
    }
    if let Some(v) = args.llm_model.clone().or(l.model.clone()) {
        c.llm.model = v;
    }
    c.llm.temperature = l.temperature.unwrap_or(c.llm.temperature);
    c.llm.max_tokens = l.max_tokens.unwrap_or(c.llm.max_tokens);
    c.llm.timeout_secs = l.timeout_secs.unwrap_or(c.llm.timeout_secs);
    c.llm.max_retries = l.max_retries.unwrap_or(c.llm.max_retries);
    c.llm.token_budget = l.token_budget.unwrap_or(c.llm.token_budget);

    let policy = args.policy.clone().or(s.policy.clone());
    (c, policy)
}
