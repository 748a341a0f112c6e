//! Downstream scoring S(F, Y): k-fold cross-validated model performance.

pub mod forest;
pub mod linear;
pub mod metrics;
pub mod neighbors;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ColumnStats, DataError, FeatureMatrix, FoldPlan, Frame, Task};
use crate::pipeline::FeatureSet;

pub use forest::{ForestParams, Objective, RandomForest};
pub use metrics::{metrics, LengthMismatch};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no live features")]
    NoLiveFeatures,
    #[error("every fold was degenerate (training rows with a single class)")]
    DegenerateFold,
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[serde(rename = "rf")]
    RandomForest,
    #[serde(rename = "knn")]
    KNearest,
    Linear,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rf" => Ok(ModelKind::RandomForest),
            "knn" => Ok(ModelKind::KNearest),
            "linear" => Ok(ModelKind::Linear),
            other => Err(format!(
                "unknown model `{other}` (expected rf, knn or linear)"
            )),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::RandomForest => "rf",
            ModelKind::KNearest => "knn",
            ModelKind::Linear => "linear",
        })
    }
}

pub const KNN_K: usize = 5;
pub const RIDGE_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model: ModelKind,
    pub folds: usize,
    pub seed: u64,
    pub n_trees: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::RandomForest,
            folds: 5,
            seed: 42,
            n_trees: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub primary: f64,
    pub secondary: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

/// Cross-validated scores. `primary` is macro-F1 or 1 − MSE on the
/// standardized target; `secondary` is accuracy or R².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub primary: f64,
    pub secondary: f64,
    pub folds: Vec<FoldScore>,
    pub model: ModelKind,
    pub task: Task,
    /// Fold-averaged forest importances, one per matrix column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importances: Option<Vec<f64>>,
    /// Excluded from serialization so traces stay reproducible.
    #[serde(skip)]
    pub wall_time_ms: f64,
}

impl ScoreReport {
    pub fn skipped_folds(&self) -> Vec<usize> {
        self.folds
            .iter()
            .filter(|f| f.skipped)
            .map(|f| f.fold)
            .collect()
    }
}

enum Fitted {
    Forest(RandomForest),
    Knn(neighbors::KNearest),
    Ridge(linear::Ridge),
    Logistic(linear::Logistic),
}

impl Fitted {
    fn predict(&self, columns: &[Vec<f64>], n: usize) -> Vec<f64> {
        match self {
            Fitted::Forest(m) => m.predict(columns, n),
            Fitted::Knn(m) => m.predict(columns, n),
            Fitted::Ridge(m) => m.predict(columns, n),
            Fitted::Logistic(m) => m.predict(columns, n),
        }
    }
}

fn take_rows(columns: &[Vec<f64>], rows: &[usize]) -> Vec<Vec<f64>> {
    columns
        .iter()
        .map(|c| rows.iter().map(|&r| c[r]).collect())
        .collect()
}

fn fit(
    model: ModelKind,
    task: Task,
    n_classes: usize,
    columns: &[Vec<f64>],
    y: &[f64],
    seed: u64,
    n_trees: usize,
) -> Fitted {
    match (model, task) {
        (ModelKind::RandomForest, _) => {
            let objective = match task {
                Task::Classification => Objective::Gini { n_classes },
                Task::Regression => Objective::Variance,
            };
            let params = ForestParams {
                seed,
                n_trees,
                ..ForestParams::default()
            };
            Fitted::Forest(RandomForest::fit(columns, y, objective, &params))
        }
        (ModelKind::KNearest, Task::Classification) => {
            Fitted::Knn(neighbors::KNearest::fit(columns, y, KNN_K, Some(n_classes)))
        }
        (ModelKind::KNearest, Task::Regression) => {
            Fitted::Knn(neighbors::KNearest::fit(columns, y, KNN_K, None))
        }
        (ModelKind::Linear, Task::Classification) => {
            Fitted::Logistic(linear::Logistic::fit(columns, y, n_classes, RIDGE_LAMBDA))
        }
        (ModelKind::Linear, Task::Regression) => {
            Fitted::Ridge(linear::Ridge::fit(columns, y, RIDGE_LAMBDA))
        }
    }
}

struct FoldOutcome {
    score: FoldScore,
    importances: Option<Vec<f64>>,
}

/// Scores a materialized matrix with k-fold cross-validation.
pub fn evaluate_matrix(
    matrix: &FeatureMatrix,
    target: &[f64],
    task: Task,
    n_classes: usize,
    plan: &FoldPlan,
    config: &EvalConfig,
) -> Result<ScoreReport, EvalError> {
    let started = Instant::now();
    if matrix.n_cols() == 0 {
        return Err(EvalError::NoLiveFeatures);
    }
    let outcomes: Vec<FoldOutcome> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = plan.split(fold);
            let skipped = FoldOutcome {
                score: FoldScore {
                    fold,
                    primary: 0.0,
                    secondary: 0.0,
                    skipped: true,
                },
                importances: None,
            };
            if train.is_empty() || test.is_empty() {
                return skipped;
            }
            let x_train = take_rows(&matrix.columns, &train);
            let x_test = take_rows(&matrix.columns, &test);
            let mut y_train: Vec<f64> = train.iter().map(|&r| target[r]).collect();
            let y_test: Vec<f64> = test.iter().map(|&r| target[r]).collect();

            let mut scale = None;
            if task == Task::Classification {
                let first = y_train[0];
                if y_train.iter().all(|&y| y == first) {
                    return skipped;
                }
            } else {
                let s = ColumnStats::of(&y_train);
                let std = if s.std > 0.0 { s.std } else { 1.0 };
                y_train.iter_mut().for_each(|y| *y = (*y - s.mean) / std);
                scale = Some((s.mean, std));
            }
            let fold_seed = config.seed.wrapping_add(fold as u64);
            let model = fit(
                config.model,
                task,
                n_classes,
                &x_train,
                &y_train,
                fold_seed,
                config.n_trees,
            );
            let mut pred = model.predict(&x_test, test.len());
            let (primary, secondary) = match task {
                Task::Classification => (
                    metrics::macro_f1(&pred, &y_test),
                    metrics::accuracy(&pred, &y_test),
                ),
                Task::Regression => {
                    let (mean, std) = scale.expect("regression scale");
                    pred.iter_mut().for_each(|p| *p = *p * std + mean);
                    metrics::regression_scores(&pred, &y_test, scale)
                }
            };
            let importances = match &model {
                Fitted::Forest(f) => Some(f.importances().to_vec()),
                _ => None,
            };
            FoldOutcome {
                score: FoldScore {
                    fold,
                    primary,
                    secondary,
                    skipped: false,
                },
                importances,
            }
        })
        .collect();

    let used: Vec<&FoldOutcome> = outcomes.iter().filter(|o| !o.score.skipped).collect();
    if used.is_empty() {
        return Err(EvalError::DegenerateFold);
    }
    let m = used.len() as f64;
    let primary = used.iter().map(|o| o.score.primary).sum::<f64>() / m;
    let secondary = used.iter().map(|o| o.score.secondary).sum::<f64>() / m;
    let importances = if config.model == ModelKind::RandomForest {
        let mut acc = vec![0.0; matrix.n_cols()];
        for o in &used {
            if let Some(imp) = &o.importances {
                for (a, v) in acc.iter_mut().zip(imp) {
                    *a += v / m;
                }
            }
        }
        Some(acc)
    } else {
        None
    };
    for o in outcomes.iter().filter(|o| o.score.skipped) {
        log::warn!("fold {} skipped: degenerate training split", o.score.fold);
    }
    Ok(ScoreReport {
        primary,
        secondary,
        folds: outcomes.into_iter().map(|o| o.score).collect(),
        model: config.model,
        task,
        importances,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Scores feature sets of one frame, caching by the set's canonical key.
#[derive(Debug)]
pub struct Evaluator {
    config: EvalConfig,
    plan: FoldPlan,
    cache: RwLock<HashMap<String, ScoreReport>>,
    evaluations: AtomicUsize,
    hits: AtomicUsize,
}

impl Evaluator {
    pub fn new(frame: &Frame, config: EvalConfig) -> Result<Self, EvalError> {
        let plan = frame.kfolds(config.folds, config.seed)?;
        Ok(Self {
            config,
            plan,
            cache: RwLock::new(HashMap::new()),
            evaluations: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn plan(&self) -> &FoldPlan {
        &self.plan
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn evaluate(&self, frame: &Frame, set: &FeatureSet) -> Result<ScoreReport, EvalError> {
        let key = set.canonical_key();
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        if set.live_count() == 0 {
            return Err(EvalError::NoLiveFeatures);
        }
        let matrix = set.materialize(frame)?;
        let report = evaluate_matrix(
            &matrix,
            frame.target(),
            frame.task(),
            frame.n_classes(),
            &self.plan,
            &self.config,
        )?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.cache
            .write()
            .expect("cache lock")
            .insert(key, report.clone());
        Ok(report)
    }
}

/// One-shot evaluation without caching.
pub fn evaluate(
    frame: &Frame,
    set: &FeatureSet,
    model: ModelKind,
    plan: &FoldPlan,
    seed: u64,
) -> Result<ScoreReport, EvalError> {
    let config = EvalConfig {
        model,
        folds: plan.k,
        seed,
        ..EvalConfig::default()
    };
    let matrix = set.materialize(frame)?;
    evaluate_matrix(
        &matrix,
        frame.target(),
        frame.task(),
        frame.n_classes(),
        plan,
        &config,
    )
}
