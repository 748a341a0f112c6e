//! CART random forest (gini for classification, variance for regression).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// What the trees are fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Gini { n_classes: usize },
    Variance,
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class distribution (classification) or a single mean (regression).
    Leaf(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_for(&self, columns: &[Vec<f64>], row: usize) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if columns[*feature][row] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// Running sufficient statistics for one side of a split.
#[derive(Clone)]
struct Acc {
    n: f64,
    sum: f64,
    sumsq: f64,
    counts: Vec<f64>,
}

impl Acc {
    fn new(objective: Objective) -> Self {
        let k = match objective {
            Objective::Gini { n_classes } => n_classes,
            Objective::Variance => 0,
        };
        Self {
            n: 0.0,
            sum: 0.0,
            sumsq: 0.0,
            counts: vec![0.0; k],
        }
    }

    #[inline]
    fn add(&mut self, y: f64, objective: Objective, weight: f64) {
        self.n += weight;
        match objective {
            Objective::Gini { .. } => self.counts[y as usize] += weight,
            Objective::Variance => {
                self.sum += weight * y;
                self.sumsq += weight * y * y;
            }
        }
    }

    /// Impurity times sample count.
    #[inline]
    fn weighted_impurity(&self, objective: Objective) -> f64 {
        if self.n <= 0.0 {
            return 0.0;
        }
        match objective {
            Objective::Gini { .. } => {
                let sq: f64 = self.counts.iter().map(|c| c * c).sum();
                self.n - sq / self.n
            }
            Objective::Variance => (self.sumsq - self.sum * self.sum / self.n).max(0.0),
        }
    }

    fn leaf_value(&self, objective: Objective) -> Vec<f64> {
        match objective {
            Objective::Gini { .. } => self.counts.iter().map(|c| c / self.n.max(1.0)).collect(),
            Objective::Variance => vec![if self.n > 0.0 { self.sum / self.n } else { 0.0 }],
        }
    }
}

struct Builder<'a> {
    columns: &'a [Vec<f64>],
    y: &'a [f64],
    objective: Objective,
    params: &'a ForestParams,
    mtry: usize,
    importances: Vec<f64>,
    nodes: Vec<Node>,
    /// Bootstrap multiplicity per row.
    weights: Vec<f64>,
    scratch: Vec<(u64, f64, f64)>,
}

/// Monotone map from f64 (total order) to u64.
#[inline]
fn order_key(v: f64) -> u64 {
    let b = (v + 0.0).to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

#[inline]
fn from_order_key(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl Builder<'_> {
    fn accumulate(&self, rows: &[usize]) -> Acc {
        let mut acc = Acc::new(self.objective);
        for &r in rows {
            acc.add(self.y[r], self.objective, self.weights[r]);
        }
        acc
    }

    fn best_split(
        &mut self,
        rows: &[usize],
        parent: &Acc,
        rng: &mut ChaCha8Rng,
    ) -> Option<BestSplit> {
        let d = self.columns.len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let parent_imp = parent.weighted_impurity(self.objective);
        let min_leaf = self.params.min_samples_leaf as f64;

        let mut best: Option<BestSplit> = None;
        let mut examined = 0;
        for f in features {
            if examined >= self.mtry {
                break;
            }
            let col = &self.columns[f];
            self.scratch.clear();
            self.scratch.extend(
                rows.iter()
                    .map(|&r| (order_key(col[r]), self.y[r], self.weights[r])),
            );
            let first = self.scratch[0].0;
            if self.scratch.iter().all(|p| p.0 == first) {
                // constant within the node; does not count toward mtry
                continue;
            }
            examined += 1;
            self.scratch.sort_unstable_by_key(|p| p.0);

            let mut left = Acc::new(self.objective);
            let mut right = parent.clone();
            for i in 0..self.scratch.len() - 1 {
                let (k, yv, w) = self.scratch[i];
                left.add(yv, self.objective, w);
                right.add(yv, self.objective, -w);
                let next_k = self.scratch[i + 1].0;
                if next_k == k || left.n < min_leaf || right.n < min_leaf {
                    continue;
                }
                let child = left.weighted_impurity(self.objective)
                    + right.weighted_impurity(self.objective);
                let decrease = parent_imp - child;
                if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                    let (v, next) = (from_order_key(k), from_order_key(next_k));
                    let mut threshold = v + (next - v) / 2.0;
                    if !(threshold < next) {
                        threshold = v;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        decrease,
                    });
                }
            }
        }
        best.filter(|b| b.decrease > 1e-12 * parent_imp.abs().max(1e-300))
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let acc = self.accumulate(&rows);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(acc.leaf_value(self.objective)));
        let pure = acc.weighted_impurity(self.objective) <= 1e-12;
        if depth >= self.params.max_depth || acc.n < self.params.min_samples_split as f64 || pure {
            return id;
        }
        let Some(split) = self.best_split(&rows, &acc, rng) else {
            return id;
        };
        let col = &self.columns[split.feature];
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&row| col[row] <= split.threshold);
        if l.is_empty() || r.is_empty() {
            return id;
        }
        self.importances[split.feature] += split.decrease;
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// A fitted forest.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
    objective: Objective,
    importances: Vec<f64>,
}

/// √d features per split, at least one.
pub fn default_mtry(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1)
}

impl RandomForest {
    /// Fits on column-major `columns` (all of length `y.len()`).
    /// Classification targets are class codes `0..n_classes`.
    pub fn fit(
        columns: &[Vec<f64>],
        y: &[f64],
        objective: Objective,
        params: &ForestParams,
    ) -> Self {
        let n = y.len();
        let d = columns.len();
        let mtry = default_mtry(d);
        let fitted: Vec<(Tree, Vec<f64>)> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64 + 1);
                // bootstrap duplicates become row weights
                let mut weights = vec![0.0; n];
                if params.bootstrap {
                    for _ in 0..n {
                        weights[rng.gen_range(0..n)] += 1.0;
                    }
                } else {
                    weights.fill(1.0);
                }
                let rows: Vec<usize> = (0..n).filter(|&r| weights[r] > 0.0).collect();
                let mut b = Builder {
                    columns,
                    y,
                    objective,
                    params,
                    mtry,
                    importances: vec![0.0; d],
                    weights,
                    nodes: Vec::new(),
                    scratch: Vec::with_capacity(n),
                };
                b.build(rows, 0, &mut rng);
                (Tree { nodes: b.nodes }, b.importances)
            })
            .collect();

        let mut importances = vec![0.0; d];
        let mut trees = Vec::with_capacity(fitted.len());
        for (tree, imp) in fitted {
            let total: f64 = imp.iter().sum();
            if total > 0.0 {
                for (acc, v) in importances.iter_mut().zip(&imp) {
                    *acc += v / total;
                }
            }
            trees.push(tree);
        }
        let total: f64 = importances.iter().sum();
        if total > 0.0 {
            for v in &mut importances {
                *v /= total;
            }
        }
        Self {
            trees,
            objective,
            importances,
        }
    }

    /// Mean impurity decrease per feature, normalized to sum to one
    /// (all zeros if no split was ever made).
    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    /// Averaged leaf values per row: class probabilities or a mean.
    pub fn predict_raw(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<Vec<f64>> {
        let width = match self.objective {
            Objective::Gini { n_classes } => n_classes,
            Objective::Variance => 1,
        };
        (0..n_rows)
            .map(|row| {
                let mut acc = vec![0.0; width];
                for t in &self.trees {
                    for (a, v) in acc.iter_mut().zip(t.leaf_for(columns, row)) {
                        *a += v;
                    }
                }
                let m = self.trees.len().max(1) as f64;
                acc.iter_mut().for_each(|a| *a /= m);
                acc
            })
            .collect()
    }

    pub fn predict(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        self.predict_raw(columns, n_rows)
            .into_iter()
            .map(|p| match self.objective {
                Objective::Variance => p[0],
                Objective::Gini { .. } => argmax(&p) as f64,
            })
            .collect()
    }
}

/// First index of the maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> ForestParams {
        ForestParams {
            n_trees: 20,
            seed,
            ..ForestParams::default()
        }
    }

    #[test]
    fn separable_classes() {
        let x: Vec<f64> = (0..40).map(f64::from).collect();
        let y: Vec<f64> = (0..40).map(|i| f64::from(u8::from(i >= 20))).collect();
        let cols = vec![x];
        let rf = RandomForest::fit(&cols, &y, Objective::Gini { n_classes: 2 }, &params(1));
        assert_eq!(rf.predict(&cols, 40), y);
        assert_eq!(rf.importances(), &[1.0]);
    }

    #[test]
    fn constant_feature_has_zero_importance() {
        let x: Vec<f64> = (0..50).map(|i| f64::from(i) * 0.3).collect();
        let c = vec![2.0; 50];
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let rf = RandomForest::fit(&[c, x], &y, Objective::Variance, &params(3));
        assert_eq!(rf.importances()[0], 0.0);
        assert!((rf.importances()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let x: Vec<f64> = (0..60).map(|i| (f64::from(i) * 0.7).sin()).collect();
        let z: Vec<f64> = (0..60).map(|i| (f64::from(i) * 1.3).cos()).collect();
        let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a * b).collect();
        let cols = vec![x, z];
        let a = RandomForest::fit(&cols, &y, Objective::Variance, &params(5)).predict(&cols, 60);
        let b = RandomForest::fit(&cols, &y, Objective::Variance, &params(5)).predict(&cols, 60);
        assert_eq!(a, b);
    }

    #[test]
    fn order_key_is_monotone() {
        let vals = [
            f64::NEG_INFINITY,
            -1e300,
            -2.5,
            -1e-300,
            -0.0,
            0.0,
            1e-300,
            3.0,
            1e300,
            f64::INFINITY,
        ];
        for w in vals.windows(2) {
            assert!(order_key(w[0]) <= order_key(w[1]));
            assert_eq!(from_order_key(order_key(w[1])), w[1]);
        }
        assert_eq!(order_key(-0.0), order_key(0.0));
    }

    #[test]
    fn mtry_floor() {
        assert_eq!(default_mtry(1), 1);
        assert_eq!(default_mtry(4), 2);
        assert_eq!(default_mtry(25), 5);
        assert_eq!(default_mtry(30), 5);
    }
}
