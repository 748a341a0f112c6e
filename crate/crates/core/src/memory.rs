//! Append-only memory pool of action records, with short-term (current
//! iteration) views and long-term demonstration sampling.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::ScoreReport;
use crate::pipeline::FeatureSetRecord;
use crate::rl::RouterState;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("record ({iteration}, {step}) already exists")]
    DuplicateKey { iteration: u32, step: u32 },
    #[error("record ({iteration}, {step}) has a non-finite score")]
    NonFiniteScore { iteration: u32, step: u32 },
    #[error("memory pool is empty")]
    EmptyPool,
    #[error("trace line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// The router's binary choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "generation")]
    Generate,
    #[serde(rename = "selection")]
    Select,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Generate => "generation",
            Decision::Select => "selection",
        }
    }

    /// Policy action index: 0 = generate, 1 = select.
    pub fn index(self) -> usize {
        match self {
            Decision::Generate => 0,
            Decision::Select => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Decision::Generate
        } else {
            Decision::Select
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Router,
    Generator,
    Selector,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Router => "router",
            AgentRole::Generator => "generator",
            AgentRole::Selector => "selector",
        }
    }

    fn sees(self, decision: Decision) -> bool {
        match self {
            AgentRole::Router => true,
            AgentRole::Generator => decision == Decision::Generate,
            AgentRole::Selector => decision == Decision::Select,
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One prompt/reply exchange with a language model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub role: AgentRole,
    pub system: String,
    pub user: String,
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One step of the search. Step 0 of iteration 0 is the raw-feature
/// baseline (no decision); action steps are numbered from 1, so record
/// `(i, j)` holds the feature set after the j-th action of iteration i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub iteration: u32,
    pub step: u32,
    pub decision: Option<Decision>,
    /// How the generator or selector acted.
    pub detail: String,
    pub token_sequence: String,
    pub score: f64,
    pub report: ScoreReport,
    pub state: RouterState,
    pub behavior_prob: f64,
    #[serde(default)]
    pub noop: bool,
    /// Set when a language-model agent failed and a fallback acted instead.
    #[serde(default)]
    pub fallback: bool,
    pub feature_set: FeatureSetRecord,
    #[serde(default)]
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<LlmExchange>,
}

impl ActionRecord {
    pub fn key(&self) -> (u32, u32) {
        (self.iteration, self.step)
    }

    pub fn is_baseline(&self) -> bool {
        self.decision.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryConfig {
    /// Size T of the top-performing pool.
    pub top_pool: usize,
    /// Demonstrations K drawn per prompt.
    pub demos: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            top_pool: 20,
            demos: 4,
        }
    }
}

/// Chronological, append-only store. Cloning is cheap and yields an
/// independent snapshot.
#[derive(Debug, Clone, Default)]
pub struct MemoryPool {
    records: Vec<Arc<ActionRecord>>,
    prior: Vec<Arc<ActionRecord>>,
    keys: HashSet<(u32, u32)>,
    config: MemoryConfig,
}

impl MemoryPool {
    pub fn new(config: MemoryConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn config(&self) -> MemoryConfig {
        self.config
    }

    /// Adds records from an earlier run as long-term candidates only.
    pub fn preload<I: IntoIterator<Item = ActionRecord>>(&mut self, records: I) {
        self.prior.extend(
            records
                .into_iter()
                .filter(|r| r.score.is_finite())
                .map(Arc::new),
        );
    }

    pub fn append(&mut self, record: ActionRecord) -> Result<(), MemoryError> {
        let (iteration, step) = record.key();
        if !record.score.is_finite() {
            return Err(MemoryError::NonFiniteScore { iteration, step });
        }
        if !self.keys.insert(record.key()) {
            return Err(MemoryError::DuplicateKey { iteration, step });
        }
        self.records.push(Arc::new(record));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ActionRecord> {
        self.records.iter().map(Arc::as_ref)
    }

    pub fn get(&self, i: usize) -> Option<&ActionRecord> {
        self.records.get(i).map(Arc::as_ref)
    }

    /// This iteration's actions visible to `role`, in step order.
    pub fn short_term(&self, iteration: u32, role: AgentRole) -> Vec<&ActionRecord> {
        self.records()
            .filter(|r| r.iteration == iteration)
            .filter(|r| r.decision.is_some_and(|d| role.sees(d)))
            .collect()
    }

    /// Indices (into prior ++ records) of the top-T records by score,
    /// earliest first on ties.
    fn top_indices(&self) -> Vec<usize> {
        let all: Vec<&ActionRecord> = self
            .prior
            .iter()
            .chain(&self.records)
            .map(Arc::as_ref)
            .collect();
        let mut idx: Vec<usize> = (0..all.len()).collect();
        idx.sort_by(|&a, &b| all[b].score.total_cmp(&all[a].score).then(a.cmp(&b)));
        idx.truncate(self.config.top_pool);
        idx
    }

    /// Records eligible as long-term demonstrations.
    pub fn top(&self) -> Vec<&ActionRecord> {
        let all: Vec<&ActionRecord> = self
            .prior
            .iter()
            .chain(&self.records)
            .map(Arc::as_ref)
            .collect();
        self.top_indices().into_iter().map(|i| all[i]).collect()
    }

    /// Uniformly samples min(K, |top-T|) distinct records from the top-T.
    pub fn long_term_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<&ActionRecord> {
        let top = self.top();
        if top.is_empty() {
            return Vec::new();
        }
        let k = self.config.demos.min(top.len());
        sample(rng, top.len(), k)
            .into_iter()
            .map(|i| top[i])
            .collect()
    }

    /// Highest-scoring record, earliest on ties.
    pub fn best(&self) -> Result<&ActionRecord, MemoryError> {
        let mut best: Option<&ActionRecord> = None;
        for r in self.records() {
            if best.is_none_or(|b| r.score > b.score) {
                best = Some(r);
            }
        }
        best.ok_or(MemoryError::EmptyPool)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), MemoryError> {
        for r in self.records() {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<(), MemoryError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Reads one record per non-empty line.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<ActionRecord>, MemoryError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ActionRecord =
            serde_json::from_str(&line).map_err(|e| MemoryError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<ActionRecord>, MemoryError> {
    let file = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(file))
}

/// Rebuilds a pool from a trace, enforcing key uniqueness.
pub fn pool_from_records(
    records: Vec<ActionRecord>,
    config: MemoryConfig,
) -> Result<MemoryPool, MemoryError> {
    let mut pool = MemoryPool::new(config);
    for r in records {
        pool.append(r)?;
    }
    Ok(pool)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::data::Task;
    use crate::eval::ModelKind;

    pub fn record(
        iteration: u32,
        step: u32,
        decision: Option<Decision>,
        score: f64,
    ) -> ActionRecord {
        ActionRecord {
            iteration,
            step,
            decision,
            detail: String::new(),
            token_sequence: format!("f{iteration}_{step}"),
            score,
            report: ScoreReport {
                primary: score,
                secondary: score,
                folds: Vec::new(),
                model: ModelKind::RandomForest,
                task: Task::Regression,
                importances: None,
                wall_time_ms: 0.0,
            },
            state: RouterState::default(),
            behavior_prob: 0.5,
            noop: false,
            fallback: false,
            feature_set: FeatureSetRecord {
                base: vec![],
                derived: vec![],
                mask: vec![],
            },
            dataset: "test".into(),
            exchanges: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::record;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn append_and_duplicates() {
        let mut pool = MemoryPool::new(MemoryConfig::default());
        pool.append(record(0, 0, None, 0.5)).unwrap();
        assert_eq!(pool.len(), 1);
        assert!(matches!(
            pool.append(record(0, 0, Some(Decision::Generate), 0.1)),
            Err(MemoryError::DuplicateKey { .. })
        ));
        assert!(matches!(
            pool.append(record(0, 1, Some(Decision::Generate), f64::NAN)),
            Err(MemoryError::NonFiniteScore { .. })
        ));
        for i in 0..30 {
            for j in 1..=6 {
                pool.append(record(i, j, Some(Decision::Select), 0.1))
                    .unwrap();
            }
        }
        assert_eq!(pool.len(), 181);
    }

    #[test]
    fn short_term_filters() {
        let mut pool = MemoryPool::new(MemoryConfig::default());
        pool.append(record(0, 0, None, 0.5)).unwrap();
        pool.append(record(0, 1, Some(Decision::Generate), 0.5))
            .unwrap();
        pool.append(record(0, 2, Some(Decision::Select), 0.5))
            .unwrap();
        pool.append(record(0, 3, Some(Decision::Generate), 0.5))
            .unwrap();
        assert_eq!(pool.short_term(0, AgentRole::Generator).len(), 2);
        assert_eq!(pool.short_term(0, AgentRole::Selector).len(), 1);
        assert_eq!(pool.short_term(0, AgentRole::Router).len(), 3);
        assert!(pool.short_term(1, AgentRole::Router).is_empty());
        let steps: Vec<u32> = pool
            .short_term(0, AgentRole::Router)
            .iter()
            .map(|r| r.step)
            .collect();
        assert_eq!(steps, vec![1, 2, 3]);
    }

    #[test]
    fn best_prefers_earliest_tie() {
        let mut pool = MemoryPool::new(MemoryConfig::default());
        assert!(matches!(pool.best(), Err(MemoryError::EmptyPool)));
        pool.append(record(0, 0, None, 0.7)).unwrap();
        assert_eq!(pool.best().unwrap().key(), (0, 0));
        pool.append(record(0, 1, Some(Decision::Generate), 0.9))
            .unwrap();
        pool.append(record(0, 2, Some(Decision::Generate), 0.9))
            .unwrap();
        assert_eq!(pool.best().unwrap().key(), (0, 1));
    }

    #[test]
    fn single_record_sample() {
        let mut pool = MemoryPool::new(MemoryConfig::default());
        pool.append(record(0, 0, None, 0.7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = pool.long_term_sample(&mut rng);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].key(), (0, 0));
    }

    #[test]
    fn preloaded_records_join_top_pool_only() {
        let mut pool = MemoryPool::new(MemoryConfig {
            top_pool: 2,
            demos: 2,
        });
        pool.preload(vec![record(0, 1, Some(Decision::Generate), 0.99)]);
        pool.append(record(0, 1, Some(Decision::Generate), 0.5))
            .unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.top()[0].score, 0.99);
        assert_eq!(pool.best().unwrap().score, 0.5);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut pool = MemoryPool::new(MemoryConfig::default());
        pool.append(record(0, 0, None, 0.7)).unwrap();
        pool.append(record(0, 1, Some(Decision::Select), 0.8))
            .unwrap();
        let mut buf = Vec::new();
        pool.write_jsonl(&mut buf).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(&back[1], pool.get(1).unwrap());
        assert!(matches!(
            read_jsonl("{not json}\n".as_bytes()),
            Err(MemoryError::Malformed { line: 1, .. })
        ));
    }
}
