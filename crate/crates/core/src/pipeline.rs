//! The evolving feature set: base columns plus derived expressions under a
//! live mask, transformed by generation and selection actions.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{materialize, ColumnStats, DataError, FeatureMatrix, Frame};
use crate::expr::{parse_expr, ExprError, ExprLimits, FeatureExpr};

/// Derived columns with a smaller standard deviation are rejected.
pub const CONSTANT_STD: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("feature `{0}` is not live")]
    UnknownFeature(String),
    #[error("selection action is empty")]
    EmptyAction,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid feature set record: {0}")]
    InvalidRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetLimits {
    pub min_features: usize,
    /// Live-feature cap as a multiple of the base column count.
    pub max_features_factor: usize,
    pub expr: ExprLimits,
}

impl Default for SetLimits {
    fn default() -> Self {
        Self {
            min_features: 2,
            max_features_factor: 4,
            expr: ExprLimits::default(),
        }
    }
}

/// New expressions proposed by the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationAction {
    pub exprs: Vec<FeatureExpr>,
}

/// Live features to drop, highest drop priority first.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionAction {
    pub drop: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub accepted: Vec<String>,
    pub duplicates: usize,
    pub constant: usize,
    /// Expressions not applied because the live-feature cap was reached.
    pub truncated: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub dropped: Vec<String>,
    /// Requested drops discarded to keep the live count at the floor.
    pub trimmed: Vec<String>,
}

impl SelectionReport {
    pub fn floor_bound(&self) -> bool {
        !self.trimmed.is_empty()
    }
}

/// Serialized form: `{base: [names], derived: [postfix], mask: [0/1]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSetRecord {
    pub base: Vec<String>,
    pub derived: Vec<String>,
    pub mask: Vec<u8>,
}

/// Base schema, derived expressions and a mask over both.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    base: Arc<[String]>,
    derived: Vec<FeatureExpr>,
    mask: Vec<bool>,
    limits: SetLimits,
}

impl FeatureSet {
    /// The raw feature set with every base column live.
    pub fn initial(frame: &Frame, limits: SetLimits) -> Self {
        Self {
            base: frame.names().to_vec().into(),
            derived: Vec::new(),
            mask: vec![true; frame.n_features()],
            limits,
        }
    }

    pub fn base(&self) -> &[String] {
        &self.base
    }

    pub fn derived(&self) -> &[FeatureExpr] {
        &self.derived
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn limits(&self) -> SetLimits {
        self.limits
    }

    pub fn max_features(&self) -> usize {
        (self.limits.max_features_factor * self.base.len()).max(self.limits.min_features)
    }

    pub fn live_count(&self) -> usize {
        self.mask.iter().filter(|b| **b).count()
    }

    pub fn derived_live_count(&self) -> usize {
        self.mask[self.base.len()..].iter().filter(|b| **b).count()
    }

    /// Live features as expressions, base columns first.
    pub fn live(&self) -> Vec<FeatureExpr> {
        self.live_refs().into_iter().map(|(_, e)| e).collect()
    }

    /// (mask index, expression) for live features in order.
    fn live_refs(&self) -> Vec<(usize, FeatureExpr)> {
        let nb = self.base.len();
        let mut out = Vec::with_capacity(self.live_count());
        for (i, name) in self.base.iter().enumerate() {
            if self.mask[i] {
                out.push((i, FeatureExpr::column(name.clone())));
            }
        }
        for (j, e) in self.derived.iter().enumerate() {
            if self.mask[nb + j] {
                out.push((nb + j, e.clone()));
            }
        }
        out
    }

    pub fn live_names(&self) -> Vec<String> {
        self.live().iter().map(|e| e.name().to_string()).collect()
    }

    pub fn live_base(&self) -> Vec<&str> {
        self.base
            .iter()
            .zip(&self.mask)
            .filter(|(_, live)| **live)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn dropped_base(&self) -> Vec<&str> {
        self.base
            .iter()
            .zip(&self.mask)
            .filter(|(_, live)| !**live)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn live_derived(&self) -> Vec<&FeatureExpr> {
        let nb = self.base.len();
        self.derived
            .iter()
            .enumerate()
            .filter(|(j, _)| self.mask[nb + j])
            .map(|(_, e)| e)
            .collect()
    }

    fn live_keys(&self) -> HashSet<String> {
        self.live().iter().map(FeatureExpr::canonical_key).collect()
    }

    /// True when an equivalent expression is already live.
    pub fn contains(&self, expr: &FeatureExpr) -> bool {
        let key = expr.canonical_key();
        self.live().iter().any(|e| e.canonical_key() == key)
    }

    /// Ordered canonical keys of live features; the score-cache key.
    pub fn canonical_key(&self) -> String {
        self.live()
            .iter()
            .map(FeatureExpr::canonical_key)
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Comma-joined postfix renderings of live features.
    pub fn token_sequence(&self) -> String {
        crate::expr::render_postfix_list(self.live().iter())
    }

    pub fn materialize(&self, frame: &Frame) -> Result<FeatureMatrix, DataError> {
        materialize(frame, &self.derived, &self.mask, 1)
    }

    /// Appends accepted expressions as live derived features.
    ///
    /// Duplicates (by canonical key, including single base columns) and
    /// near-constant columns are dropped silently; expressions beyond the
    /// live-feature cap are truncated and counted in the report.
    pub fn apply_generation(
        &self,
        action: &GenerationAction,
        frame: &Frame,
    ) -> Result<(FeatureSet, GenerationReport), PipelineError> {
        let mut next = self.clone();
        let mut report = GenerationReport::default();
        let mut keys = self.live_keys();
        let base_names: HashSet<&str> = self.base.iter().map(String::as_str).collect();
        let cap = self.max_features();

        for expr in &action.exprs {
            let key = expr.canonical_key();
            if keys.contains(&key) || base_names.contains(key.as_str()) {
                report.duplicates += 1;
                continue;
            }
            let values = expr.evaluate(frame)?;
            if ColumnStats::of(&values).std < CONSTANT_STD {
                report.constant += 1;
                continue;
            }
            if next.live_count() >= cap {
                report.truncated += 1;
                continue;
            }
            next.derived.push(expr.clone());
            next.mask.push(true);
            keys.insert(key);
            report.accepted.push(expr.name().to_string());
        }
        Ok((next, report))
    }

    /// F ⊙ s: clears mask bits. The drop list is trimmed from its tail when
    /// it would take the live count below the floor.
    pub fn apply_selection(
        &self,
        action: &SelectionAction,
    ) -> Result<(FeatureSet, SelectionReport), PipelineError> {
        if action.drop.is_empty() {
            return Err(PipelineError::EmptyAction);
        }
        let live = self.live_refs();
        let mut targets: Vec<usize> = Vec::new();
        for name in &action.drop {
            let idx = live
                .iter()
                .find(|(_, e)| e.name() == name)
                .map(|(i, _)| *i)
                .ok_or_else(|| PipelineError::UnknownFeature(name.clone()))?;
            if !targets.contains(&idx) {
                targets.push(idx);
            }
        }
        let allowed = live.len().saturating_sub(self.limits.min_features);
        let mut report = SelectionReport::default();
        let mut next = self.clone();
        for (rank, idx) in targets.into_iter().enumerate() {
            let name = self.name_at(idx);
            if rank < allowed {
                next.mask[idx] = false;
                report.dropped.push(name);
            } else {
                report.trimmed.push(name);
            }
        }
        if report.floor_bound() {
            log::warn!(
                "selection trimmed {} drop(s) to keep {} live features",
                report.trimmed.len(),
                self.limits.min_features
            );
        }
        Ok((next, report))
    }

    fn name_at(&self, idx: usize) -> String {
        let nb = self.base.len();
        if idx < nb {
            self.base[idx].clone()
        } else {
            self.derived[idx - nb].name().to_string()
        }
    }

    pub fn to_record(&self) -> FeatureSetRecord {
        FeatureSetRecord {
            base: self.base.to_vec(),
            derived: self
                .derived
                .iter()
                .map(FeatureExpr::render_postfix)
                .collect(),
            mask: self.mask.iter().map(|&b| u8::from(b)).collect(),
        }
    }

    pub fn from_record(
        record: &FeatureSetRecord,
        limits: SetLimits,
    ) -> Result<Self, PipelineError> {
        let derived = record
            .derived
            .iter()
            .map(|s| parse_expr(s, &record.base, limits.expr))
            .collect::<Result<Vec<_>, _>>()?;
        if record.mask.len() != record.base.len() + derived.len() {
            return Err(PipelineError::InvalidRecord(format!(
                "mask has {} bits for {} features",
                record.mask.len(),
                record.base.len() + derived.len()
            )));
        }
        let mask = record
            .mask
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(PipelineError::InvalidRecord(format!("mask bit {other}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            base: record.base.clone().into(),
            derived,
            mask,
            limits,
        })
    }
}

impl Serialize for FeatureSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_record().serialize(serializer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use crate::expr::parse_postfix;

    fn frame() -> Frame {
        let a: Vec<f64> = (0..12).map(|i| f64::from(i) * 0.5).collect();
        let b: Vec<f64> = (0..12).map(|i| f64::from((i * 7) % 5)).collect();
        let c: Vec<f64> = (0..12).map(|i| f64::from(i).sin()).collect();
        let y: Vec<f64> = (0..12).map(f64::from).collect();
        Frame::from_columns(
            vec![("a".into(), a), ("b".into(), b), ("c".into(), c)],
            y,
            Task::Regression,
        )
        .unwrap()
    }

    fn gen(f: &Frame, text: &str) -> GenerationAction {
        GenerationAction {
            exprs: parse_postfix(text, f.names(), ExprLimits::default()).unwrap(),
        }
    }

    #[test]
    fn generation_adds_and_dedups() {
        let f = frame();
        let fs = FeatureSet::initial(&f, SetLimits::default());
        let (fs1, r) = fs.apply_generation(&gen(&f, "a b +"), &f).unwrap();
        assert_eq!(r.accepted.len(), 1);
        assert_eq!(fs1.live_count(), 4);
        assert_eq!(fs1.token_sequence(), "a, b, c, a b +");

        let (fs2, r) = fs1.apply_generation(&gen(&f, "b a +"), &f).unwrap();
        assert_eq!(r.accepted.len(), 0);
        assert_eq!(r.duplicates, 1);
        assert_eq!(fs2, fs1);

        let (_, r) = fs1.apply_generation(&gen(&f, "a a -"), &f).unwrap();
        assert_eq!((r.accepted.len(), r.constant), (0, 1));

        let (_, r) = fs1.apply_generation(&gen(&f, "a"), &f).unwrap();
        assert_eq!(r.duplicates, 1);
    }

    #[test]
    fn generation_respects_cap() {
        let f = frame();
        let limits = SetLimits {
            max_features_factor: 1,
            min_features: 2,
            ..SetLimits::default()
        };
        let fs = FeatureSet::initial(&f, limits);
        let (fs1, r) = fs.apply_generation(&gen(&f, "a b +, a c *"), &f).unwrap();
        assert_eq!(r.truncated, 2);
        assert_eq!(fs1.live_count(), 3);
    }

    #[test]
    fn selection_and_floor() {
        let f = frame();
        let fs = FeatureSet::initial(&f, SetLimits::default());
        let (fs1, r) = fs
            .apply_selection(&SelectionAction {
                drop: vec!["c".into()],
            })
            .unwrap();
        assert_eq!(r.dropped, vec!["c".to_string()]);
        assert_eq!(fs1.live_names(), vec!["a", "b"]);

        let (fs2, r) = fs1
            .apply_selection(&SelectionAction {
                drop: vec!["a".into(), "b".into()],
            })
            .unwrap();
        assert!(r.floor_bound());
        assert_eq!(fs2, fs1);

        assert!(matches!(
            fs1.apply_selection(&SelectionAction {
                drop: vec!["c".into()]
            }),
            Err(PipelineError::UnknownFeature(_))
        ));
        assert!(matches!(
            fs1.apply_selection(&SelectionAction { drop: vec![] }),
            Err(PipelineError::EmptyAction)
        ));
    }

    #[test]
    fn trimming_keeps_highest_priority_drops() {
        let f = frame();
        let fs = FeatureSet::initial(&f, SetLimits::default());
        let (fs1, r) = fs
            .apply_selection(&SelectionAction {
                drop: vec!["b".into(), "a".into(), "c".into()],
            })
            .unwrap();
        assert_eq!(r.dropped, vec!["b".to_string()]);
        assert_eq!(r.trimmed, vec!["a".to_string(), "c".to_string()]);
        assert_eq!(fs1.live_names(), vec!["a", "c"]);
    }

    #[test]
    fn drop_then_regenerate() {
        let f = frame();
        let fs = FeatureSet::initial(&f, SetLimits::default());
        let (fs1, _) = fs.apply_generation(&gen(&f, "a b *"), &f).unwrap();
        let name = fs1.live_derived()[0].name().to_string();
        let (fs2, _) = fs1
            .apply_selection(&SelectionAction {
                drop: vec![name.clone()],
            })
            .unwrap();
        assert_eq!(fs2.live_count(), 3);
        let (fs3, r) = fs2.apply_generation(&gen(&f, "b a *"), &f).unwrap();
        assert_eq!(r.accepted, vec![name]);
        assert_eq!(fs3.live_count(), 4);
        assert_eq!(fs3.derived().len(), 2);
    }

    #[test]
    fn record_round_trip() {
        let f = frame();
        let fs = FeatureSet::initial(&f, SetLimits::default());
        let (fs1, _) = fs.apply_generation(&gen(&f, "a b *, c sin"), &f).unwrap();
        let (fs2, _) = fs1
            .apply_selection(&SelectionAction {
                drop: vec!["a".into()],
            })
            .unwrap();
        let json = serde_json::to_string(&fs2).unwrap();
        assert_eq!(
            json,
            r#"{"base":["a","b","c"],"derived":["a b *","c sin"],"mask":[0,1,1,1,1]}"#
        );
        let rec: FeatureSetRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(
            FeatureSet::from_record(&rec, SetLimits::default()).unwrap(),
            fs2
        );
    }
}
