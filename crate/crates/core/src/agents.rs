//! Router, generator and selector policies with heuristic and
//! language-model backends.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::data::{pearson, ColumnStats, DataError, Frame, Task};
use crate::expr::{parse_expr, ExprError, FeatureExpr, Operator, OperatorSet, Token};
use crate::llm::{estimate_tokens, LlmClient, LlmError};
use crate::memory::{ActionRecord, AgentRole, Decision, LlmExchange};
use crate::pipeline::{FeatureSet, GenerationAction, SelectionAction, CONSTANT_STD};
use crate::rl::{PolicyNet, RouterState};

/// Candidates drawn per heuristic generation.
pub const GENERATOR_CANDIDATES: usize = 8;
/// Most expressions accepted per generation action.
pub const MAX_NEW_FEATURES: usize = 3;
/// Operand sampling smoothing added to |corr|.
pub const OPERAND_SMOOTHING: f64 = 0.05;
/// Fraction of live features dropped per heuristic selection.
pub const DROP_RATE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("could not parse reply: {0}")]
    ParseFailure(String),
    #[error("no valid action: {0}")]
    NoValidAction(String),
    #[error("prompt needs {tokens} tokens, budget is {budget}")]
    ContextOverflow { tokens: usize, budget: usize },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSummary {
    pub expr: FeatureExpr,
    pub stats: ColumnStats,
    pub target_corr: f64,
}

impl FeatureSummary {
    pub fn name(&self) -> &str {
        self.expr.name()
    }
}

/// Everything an agent sees when it acts.
#[derive(Debug, Clone)]
pub struct AgentContext<'a> {
    pub frame: &'a Frame,
    pub set: &'a FeatureSet,
    pub task_name: String,
    pub features: Vec<FeatureSummary>,
    /// Live column values, aligned with `features`.
    pub columns: Vec<Vec<f64>>,
    pub short_term: Vec<&'a ActionRecord>,
    pub demos: Vec<&'a ActionRecord>,
    pub operators: OperatorSet,
    pub remaining_steps: usize,
    /// Model importances aligned with `features`, when known.
    pub importances: Option<Vec<f64>>,
    pub state: Option<RouterState>,
}

impl<'a> AgentContext<'a> {
    pub fn new(
        frame: &'a Frame,
        set: &'a FeatureSet,
        task_name: impl Into<String>,
    ) -> Result<Self, AgentError> {
        let matrix = set.materialize(frame)?;
        let features = set
            .live()
            .into_iter()
            .zip(&matrix.columns)
            .map(|(expr, col)| FeatureSummary {
                expr,
                stats: ColumnStats::of(col),
                target_corr: pearson(col, frame.target()).abs(),
            })
            .collect();
        Ok(Self {
            frame,
            set,
            task_name: task_name.into(),
            features,
            columns: matrix.columns,
            short_term: Vec::new(),
            demos: Vec::new(),
            operators: OperatorSet::default(),
            remaining_steps: 0,
            importances: None,
            state: None,
        })
    }

    pub fn with_short_term(mut self, records: Vec<&'a ActionRecord>) -> Self {
        self.short_term = records;
        self
    }

    pub fn with_demos(mut self, records: Vec<&'a ActionRecord>) -> Self {
        self.demos = records;
        self
    }

    pub fn with_operators(mut self, operators: OperatorSet) -> Self {
        self.operators = operators;
        self
    }

    pub fn with_remaining_steps(mut self, n: usize) -> Self {
        self.remaining_steps = n;
        self
    }

    /// Ignored unless aligned with the live features.
    pub fn with_importances(mut self, importances: Option<Vec<f64>>) -> Self {
        self.importances = importances.filter(|v| v.len() == self.features.len());
        self
    }

    pub fn with_state(mut self, state: RouterState) -> Self {
        self.state = Some(state);
        self
    }

    pub fn live_names(&self) -> Vec<&str> {
        self.features.iter().map(FeatureSummary::name).collect()
    }

    /// Resolves generator reply strings. Live derived names may be used as
    /// operands and are expanded into their expressions.
    pub fn generation_from(&self, exprs: &[String]) -> Result<GenerationAction, AgentError> {
        let names = self.live_names();
        let limits = self.set.limits().expr;
        let mut out = Vec::new();
        for text in exprs {
            let parsed = parse_expr(text, &names, limits)
                .map_err(|e| AgentError::ParseFailure(e.to_string()))?;
            let mut tokens = Vec::with_capacity(parsed.tokens().len());
            for t in parsed.tokens() {
                match t {
                    Token::Feature(n) => match self.features.iter().find(|f| f.name() == n) {
                        Some(f) if !f.expr.is_base() => {
                            tokens.extend(f.expr.tokens().iter().cloned())
                        }
                        _ => tokens.push(t.clone()),
                    },
                    _ => tokens.push(t.clone()),
                }
            }
            let expr = FeatureExpr::new(tokens, limits)
                .map_err(|e: ExprError| AgentError::ParseFailure(e.to_string()))?;
            out.push(expr);
        }
        if out.is_empty() {
            return Err(AgentError::ParseFailure("no expressions proposed".into()));
        }
        out.truncate(MAX_NEW_FEATURES);
        Ok(GenerationAction { exprs: out })
    }

    /// Validates selector reply names against the live features.
    pub fn selection_from(&self, drop: &[String]) -> Result<SelectionAction, AgentError> {
        if drop.is_empty() {
            return Err(AgentError::ParseFailure("empty drop list".into()));
        }
        let names = self.live_names();
        if let Some(bad) = drop.iter().find(|d| !names.contains(&d.as_str())) {
            return Err(AgentError::ParseFailure(format!(
                "`{bad}` is not a live feature"
            )));
        }
        let floor = self.set.limits().min_features;
        if names.len() <= floor {
            return Err(AgentError::NoValidAction(format!(
                "{} live features at floor",
                names.len()
            )));
        }
        Ok(SelectionAction {
            drop: drop.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    /// Reply schema expected back.
    pub schema: AgentRole,
}

impl PromptBundle {
    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.system) + estimate_tokens(&self.user)
    }
}

const STATE_LABELS: [&str; 12] = [
    "live/base feature ratio",
    "log base feature count",
    "step fraction",
    "iteration fraction",
    "current score",
    "best score",
    "score delta",
    "mean pairwise |corr|",
    "mean target |corr|",
    "derived fraction",
    "classification flag",
    "last decision",
];

fn system_text(role: AgentRole) -> &'static str {
    match role {
        AgentRole::Router => {
            "You coordinate an automated feature engineering search. At each step decide whether the \
             feature set should grow through feature generation or shrink through feature selection."
        }
        AgentRole::Generator => {
            "You create new tabular features by applying mathematical operators to existing features. \
             Expressions are written in postfix notation, for example `f1 f2 *` or `f3 sin`."
        }
        AgentRole::Selector => {
            "You remove redundant or irrelevant features from a tabular feature set to improve the \
             downstream model."
        }
    }
}

fn reply_instructions(role: AgentRole) -> &'static str {
    match role {
        AgentRole::Router => {
            "Reply with a single JSON object: {\"decision\": \"generation\" or \"selection\", \"reason\": string}."
        }
        AgentRole::Generator => {
            "Reply with a single JSON object: {\"new_features\": [postfix expression strings, 1 to 3], \"reason\": string}. \
             Use only the listed feature names and operators."
        }
        AgentRole::Selector => {
            "Reply with a single JSON object: {\"drop\": [feature names], \"reason\": string}. \
             Name only listed features."
        }
    }
}

fn user_text(role: AgentRole, ctx: &AgentContext<'_>, demos: &[&ActionRecord]) -> String {
    let mut s = String::new();
    let task = match ctx.frame.task() {
        Task::Classification => "classification",
        Task::Regression => "regression",
    };
    let (metric, _) = ctx.frame.task().metric_names();
    let _ = writeln!(
        s,
        "Task: {} ({task}, target `{}`), metric {metric}.",
        ctx.task_name,
        ctx.frame.target_name()
    );
    let _ = writeln!(s, "Remaining steps: {}", ctx.remaining_steps);
    if role == AgentRole::Router {
        if let Some(state) = &ctx.state {
            s.push_str("\nState:\n");
            for (label, v) in STATE_LABELS.iter().zip(state.0) {
                let _ = writeln!(s, "{label}: {v:.4}");
            }
        }
    }
    if role == AgentRole::Generator {
        let _ = writeln!(s, "Operators: {}", ctx.operators.symbols().join(" "));
    }
    s.push_str("\nFeatures (name | expression | mean | std | min | max | |corr| with target):\n");
    for f in &ctx.features {
        let _ = writeln!(
            s,
            "{} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4}",
            f.name(),
            f.expr.render_infix(),
            f.stats.mean,
            f.stats.std,
            f.stats.min,
            f.stats.max,
            f.target_corr
        );
    }
    if !ctx.short_term.is_empty() {
        s.push_str("\nRecent steps:\n");
        for r in &ctx.short_term {
            let _ = writeln!(s, "step {}: {} → {:.4}", r.step, r.detail, r.score);
        }
    }
    if !demos.is_empty() {
        s.push_str("\nTop demonstrations:\n");
        for r in demos {
            let _ = writeln!(s, "{} → {:.4}", r.token_sequence, r.score);
        }
    }
    s.push('\n');
    s.push_str(reply_instructions(role));
    s.push('\n');
    s
}

/// Renders the prompt for `role`. Demonstrations are evicted oldest
/// first until the prompt fits `budget` tokens.
pub fn build_prompt(
    role: AgentRole,
    ctx: &AgentContext<'_>,
    budget: usize,
) -> Result<PromptBundle, AgentError> {
    let mut demos = ctx.demos.clone();
    loop {
        let bundle = PromptBundle {
            system: system_text(role).to_string(),
            user: user_text(role, ctx, &demos),
            schema: role,
        };
        let tokens = bundle.estimated_tokens();
        if tokens <= budget {
            return Ok(bundle);
        }
        let oldest = demos
            .iter()
            .enumerate()
            .min_by_key(|(i, r)| (r.iteration, r.step, *i))
            .map(|(i, _)| i);
        match oldest {
            Some(i) => {
                demos.remove(i);
            }
            None => return Err(AgentError::ContextOverflow { tokens, budget }),
        }
    }
}

/// A schema-valid reply, before resolution against a context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Decision(Decision),
    NewFeatures(Vec<String>),
    Drop(Vec<String>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RouterReply {
    decision: Decision,
    #[serde(default)]
    #[allow(dead_code)]
    reason: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorReply {
    new_features: Vec<String>,
    #[serde(default)]
    #[allow(dead_code)]
    reason: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectorReply {
    drop: Vec<String>,
    #[serde(default)]
    #[allow(dead_code)]
    reason: String,
}

/// The first balanced `{...}` block, honoring JSON strings.
pub fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn parse_reply(role: AgentRole, text: &str) -> Result<Reply, AgentError> {
    let json = first_json_object(text)
        .ok_or_else(|| AgentError::ParseFailure("no JSON object in reply".into()))?;
    let fail = |e: serde_json::Error| AgentError::ParseFailure(e.to_string());
    Ok(match role {
        AgentRole::Router => Reply::Decision(
            serde_json::from_str::<RouterReply>(json)
                .map_err(fail)?
                .decision,
        ),
        AgentRole::Generator => Reply::NewFeatures(
            serde_json::from_str::<GeneratorReply>(json)
                .map_err(fail)?
                .new_features,
        ),
        AgentRole::Selector => Reply::Drop(
            serde_json::from_str::<SelectorReply>(json)
                .map_err(fail)?
                .drop,
        ),
    })
}

/// Result of one agent call, with fallback bookkeeping.
#[derive(Debug)]
pub struct Outcome<T> {
    pub result: Result<T, AgentError>,
    pub fallback: bool,
    pub exchange: Option<LlmExchange>,
}

impl<T> Outcome<T> {
    fn direct(result: Result<T, AgentError>) -> Self {
        Self {
            result,
            fallback: false,
            exchange: None,
        }
    }
}

#[derive(Clone)]
pub enum RouterPolicy {
    Uniform,
    Ppo(PolicyNet),
    Llm(Arc<LlmClient>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Routed {
    pub decision: Decision,
    /// Probability of the returned decision under the acting policy.
    pub prob: f64,
}

fn uniform_route<R: Rng + ?Sized>(rng: &mut R) -> Routed {
    let decision = if rng.gen_bool(0.5) {
        Decision::Generate
    } else {
        Decision::Select
    };
    Routed {
        decision,
        prob: 0.5,
    }
}

/// Samples a decision from the policy's softmax.
pub fn ppo_route<R: Rng + ?Sized>(policy: &PolicyNet, state: &RouterState, rng: &mut R) -> Routed {
    let p = policy.probs(state);
    let u: f64 = rng.gen();
    let action = if u < p[0] { 0 } else { 1 };
    Routed {
        decision: Decision::from_index(action),
        prob: p[action].clamp(f64::MIN_POSITIVE, 1.0),
    }
}

/// Routes one step. The language-model router falls back to a uniform
/// draw when the call or its reply fails.
pub fn route<R: Rng + ?Sized>(
    policy: &RouterPolicy,
    state: &RouterState,
    ctx: &AgentContext<'_>,
    rng: &mut R,
) -> Outcome<Routed> {
    match policy {
        RouterPolicy::Uniform => Outcome::direct(Ok(uniform_route(rng))),
        RouterPolicy::Ppo(net) => Outcome::direct(Ok(ppo_route(net, state, rng))),
        RouterPolicy::Llm(client) => {
            let (reply, exchange) = ask(client, AgentRole::Router, ctx);
            match reply.and_then(|r| match r {
                Reply::Decision(d) => Ok(d),
                _ => Err(AgentError::ParseFailure("wrong reply kind".into())),
            }) {
                Ok(decision) => Outcome {
                    result: Ok(Routed {
                        decision,
                        prob: 0.5,
                    }),
                    fallback: false,
                    exchange,
                },
                Err(e) => fallback(e, exchange, uniform_route(rng)),
            }
        }
    }
}

fn fallback<T>(error: AgentError, mut exchange: Option<LlmExchange>, value: T) -> Outcome<T> {
    log::warn!("language-model agent failed, falling back: {error}");
    if let Some(x) = exchange.as_mut() {
        x.error = Some(error.to_string());
    }
    Outcome {
        result: Ok(value),
        fallback: true,
        exchange,
    }
}

fn fallback_result<T>(
    error: AgentError,
    mut exchange: Option<LlmExchange>,
    result: Result<T, AgentError>,
) -> Outcome<T> {
    log::warn!("language-model agent failed, falling back: {error}");
    if let Some(x) = exchange.as_mut() {
        x.error = Some(error.to_string());
    }
    Outcome {
        result,
        fallback: true,
        exchange,
    }
}

/// One prompt/reply round trip; the exchange is kept for the trace.
fn ask(
    client: &LlmClient,
    role: AgentRole,
    ctx: &AgentContext<'_>,
) -> (Result<Reply, AgentError>, Option<LlmExchange>) {
    let bundle = match build_prompt(role, ctx, client.config().token_budget) {
        Ok(b) => b,
        Err(e) => return (Err(e), None),
    };
    let mut exchange = LlmExchange {
        role,
        system: bundle.system.clone(),
        user: bundle.user.clone(),
        reply: None,
        error: None,
    };
    match client.complete(role, &bundle) {
        Ok(c) => {
            exchange.reply = Some(c.text.clone());
            (parse_reply(role, &c.text), Some(exchange))
        }
        Err(e) => (Err(e.into()), Some(exchange)),
    }
}

#[derive(Clone)]
pub enum AgentBackend {
    Heuristic,
    Llm(Arc<LlmClient>),
}

fn weighted_index<R: Rng + ?Sized>(weights: &[f64], exclude: Option<usize>, rng: &mut R) -> usize {
    let total: f64 = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, w)| w)
        .sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        last = i;
        if u < *w {
            return i;
        }
        u -= w;
    }
    last
}

/// A scored candidate expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub expr: FeatureExpr,
    /// |corr(candidate column, target)|.
    pub proxy: f64,
}

/// Draws up to [`GENERATOR_CANDIDATES`] distinct, valid, non-constant
/// candidates not already live.
pub fn draw_candidates<R: Rng + ?Sized>(ctx: &AgentContext<'_>, rng: &mut R) -> Vec<Candidate> {
    let n = ctx.features.len();
    if n == 0 {
        return Vec::new();
    }
    let ops: Vec<Operator> = ctx
        .operators
        .operators()
        .into_iter()
        .filter(|op| op.arity() <= n)
        .collect();
    if ops.is_empty() {
        return Vec::new();
    }
    let weights: Vec<f64> = ctx
        .features
        .iter()
        .map(|f| f.target_corr + OPERAND_SMOOTHING)
        .collect();
    let limits = ctx.set.limits().expr;
    let mut out: Vec<Candidate> = Vec::new();
    for _ in 0..GENERATOR_CANDIDATES {
        let op = ops[rng.gen_range(0..ops.len())];
        let a = weighted_index(&weights, None, rng);
        let (expr, values) = match op {
            Operator::Unary(u) => {
                let e = FeatureExpr::unary(u, &ctx.features[a].expr, limits);
                (
                    e,
                    ctx.columns[a]
                        .iter()
                        .map(|&x| u.apply(x))
                        .collect::<Vec<f64>>(),
                )
            }
            Operator::Binary(b) => {
                let c = weighted_index(&weights, Some(a), rng);
                let e =
                    FeatureExpr::binary(b, &ctx.features[a].expr, &ctx.features[c].expr, limits);
                let v = ctx.columns[a]
                    .iter()
                    .zip(&ctx.columns[c])
                    .map(|(&x, &y)| b.apply(x, y))
                    .collect();
                (e, v)
            }
        };
        let Ok(expr) = expr else { continue };
        let key = expr.canonical_key();
        if ctx.set.contains(&expr) || out.iter().any(|c| c.expr.canonical_key() == key) {
            continue;
        }
        if ColumnStats::of(&values).std < CONSTANT_STD {
            continue;
        }
        let proxy = pearson(&values, ctx.frame.target()).abs();
        out.push(Candidate { expr, proxy });
    }
    out
}

/// Keeps the best candidates: the top one plus any within half its proxy,
/// at most [`MAX_NEW_FEATURES`].
pub fn rank_candidates(mut candidates: Vec<Candidate>) -> Vec<FeatureExpr> {
    candidates.sort_by(|a, b| b.proxy.total_cmp(&a.proxy));
    let Some(best) = candidates.first().map(|c| c.proxy) else {
        return Vec::new();
    };
    candidates
        .into_iter()
        .take(MAX_NEW_FEATURES)
        .filter(|c| c.proxy >= 0.5 * best)
        .map(|c| c.expr)
        .collect()
}

pub fn heuristic_generate<R: Rng + ?Sized>(
    ctx: &AgentContext<'_>,
    rng: &mut R,
) -> Result<GenerationAction, AgentError> {
    if ctx.features.is_empty() {
        return Err(AgentError::NoValidAction("no live features".into()));
    }
    if ctx.set.live_count() >= ctx.set.max_features() {
        return Err(AgentError::NoValidAction("feature cap reached".into()));
    }
    let exprs = rank_candidates(draw_candidates(ctx, rng));
    if exprs.is_empty() {
        return Err(AgentError::NoValidAction(
            "every candidate was a duplicate or constant".into(),
        ));
    }
    Ok(GenerationAction { exprs })
}

/// Drops the ⌈10%⌉ least important live features, honoring the floor.
pub fn heuristic_select(ctx: &AgentContext<'_>) -> Result<SelectionAction, AgentError> {
    let live = ctx.features.len();
    let floor = ctx.set.limits().min_features;
    if live <= floor {
        return Err(AgentError::NoValidAction(format!(
            "{live} live features at floor"
        )));
    }
    let k = ((live as f64 * DROP_RATE).ceil() as usize).clamp(1, live - floor);
    let scores: Vec<f64> = match &ctx.importances {
        Some(imp) => imp.clone(),
        None => ctx.features.iter().map(|f| f.target_corr).collect(),
    };
    let mut order: Vec<usize> = (0..live).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    Ok(SelectionAction {
        drop: order[..k]
            .iter()
            .map(|&i| ctx.features[i].name().to_string())
            .collect(),
    })
}

pub fn generate<R: Rng + ?Sized>(
    backend: &AgentBackend,
    ctx: &AgentContext<'_>,
    rng: &mut R,
) -> Outcome<GenerationAction> {
    match backend {
        AgentBackend::Heuristic => Outcome::direct(heuristic_generate(ctx, rng)),
        AgentBackend::Llm(client) => {
            let (reply, exchange) = ask(client, AgentRole::Generator, ctx);
            let action = reply.and_then(|r| match r {
                Reply::NewFeatures(exprs) => ctx.generation_from(&exprs),
                _ => Err(AgentError::ParseFailure("wrong reply kind".into())),
            });
            match action {
                Ok(a) => Outcome {
                    result: Ok(a),
                    fallback: false,
                    exchange,
                },
                Err(e) => fallback_result(e, exchange, heuristic_generate(ctx, rng)),
            }
        }
    }
}

pub fn select<R: Rng + ?Sized>(
    backend: &AgentBackend,
    ctx: &AgentContext<'_>,
    _rng: &mut R,
) -> Outcome<SelectionAction> {
    match backend {
        AgentBackend::Heuristic => Outcome::direct(heuristic_select(ctx)),
        AgentBackend::Llm(client) => {
            if ctx.features.len() <= ctx.set.limits().min_features {
                return Outcome::direct(heuristic_select(ctx));
            }
            let (reply, exchange) = ask(client, AgentRole::Selector, ctx);
            let action = reply.and_then(|r| match r {
                Reply::Drop(names) => ctx.selection_from(&names),
                _ => Err(AgentError::ParseFailure("wrong reply kind".into())),
            });
            match action {
                Ok(a) => Outcome {
                    result: Ok(a),
                    fallback: false,
                    exchange,
                },
                Err(e) => fallback_result(e, exchange, heuristic_select(ctx)),
            }
        }
    }
}
