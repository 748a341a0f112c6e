//! Multi-agent automated feature engineering for tabular data.
//!
//! A router picks between feature generation and feature selection at each
//! step; generator and selector agents propose postfix expressions and drop
//! lists; every candidate set is scored by cross-validation and logged to a
//! memory pool that feeds later prompts and offline router training.

pub mod agents;
pub mod data;
pub mod eval;
pub mod expr;
pub mod llm;
pub mod memory;
pub mod pipeline;
pub mod rl;
pub mod search;

pub use data::{load_csv, ColumnStats, Frame, TargetSpec, Task};
pub use eval::{EvalConfig, Evaluator, ModelKind, ScoreReport};
pub use expr::{parse_expr, parse_postfix, FeatureExpr, OperatorSet};
pub use memory::{ActionRecord, Decision, MemoryPool};
pub use pipeline::{FeatureSet, GenerationAction, SelectionAction, SetLimits};
pub use rl::{PolicyNet, PpoConfig, RouterState};
pub use search::{run, run_ablation, Backends, SearchConfig, SearchResult};
