//! Ridge regression and L2-regularized multinomial logistic regression,
//! both on standardized features.

use nalgebra::{DMatrix, DVector};

use crate::data::ColumnStats;

fn standardize(columns: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    columns
        .iter()
        .map(|c| {
            let s = ColumnStats::of(c);
            (s.mean, if s.std > 0.0 { s.std } else { 1.0 })
        })
        .unzip()
}

fn design(columns: &[Vec<f64>], means: &[f64], scales: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, columns.len(), |r, j| {
        (columns[j][r] - means[j]) / scales[j]
    })
}

#[derive(Debug, Clone)]
pub struct Ridge {
    means: Vec<f64>,
    scales: Vec<f64>,
    coef: DVector<f64>,
    intercept: f64,
}

impl Ridge {
    /// Minimizes ‖y − Xβ − b‖² + λ‖β‖²; the intercept is not penalized.
    pub fn fit(columns: &[Vec<f64>], y: &[f64], lambda: f64) -> Self {
        let n = y.len();
        let (means, scales) = standardize(columns);
        let x = design(columns, &means, &scales, n);
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let d = columns.len();
        let gram = x.transpose() * &x + DMatrix::identity(d, d) * lambda;
        let rhs = x.transpose() * yc;
        let coef = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(d)),
        };
        Self {
            means,
            scales,
            coef,
            intercept: y_mean,
        }
    }

    pub fn predict(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        let x = design(columns, &self.means, &self.scales, n_rows);
        (x * &self.coef)
            .iter()
            .map(|v| v + self.intercept)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Logistic {
    means: Vec<f64>,
    scales: Vec<f64>,
    /// (d + 1) × C, last row is the bias.
    weights: DMatrix<f64>,
}

impl Logistic {
    pub const ITERATIONS: usize = 300;
    pub const STEP: f64 = 0.5;

    /// Full-batch gradient descent on mean cross-entropy + λ/(2n)‖W‖².
    pub fn fit(columns: &[Vec<f64>], y: &[f64], n_classes: usize, lambda: f64) -> Self {
        let n = y.len();
        let d = columns.len();
        let (means, scales) = standardize(columns);
        let mut x = design(columns, &means, &scales, n).insert_column(d, 1.0);
        x.iter_mut().for_each(|v| {
            if !v.is_finite() {
                *v = 0.0;
            }
        });
        let mut onehot = DMatrix::<f64>::zeros(n, n_classes);
        for (r, &c) in y.iter().enumerate() {
            onehot[(r, c as usize)] = 1.0;
        }
        let mut w = DMatrix::<f64>::zeros(d + 1, n_classes);
        let xt = x.transpose();
        for _ in 0..Self::ITERATIONS {
            let mut p = &x * &w;
            softmax_rows(&mut p);
            let mut grad = &xt * (p - &onehot) / n as f64;
            for i in 0..d {
                for c in 0..n_classes {
                    grad[(i, c)] += lambda / n as f64 * w[(i, c)];
                }
            }
            w -= grad * Self::STEP;
        }
        Self {
            means,
            scales,
            weights: w,
        }
    }

    pub fn predict(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        let d = columns.len();
        let x = design(columns, &self.means, &self.scales, n_rows).insert_column(d, 1.0);
        let scores = x * &self.weights;
        (0..n_rows)
            .map(|r| {
                let row: Vec<f64> = scores.row(r).iter().copied().collect();
                super::forest::argmax(&row) as f64
            })
            .collect()
    }
}

fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ridge_recovers_line() {
        let x: Vec<f64> = (0..100).map(|i| f64::from(i) / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        let m = Ridge::fit(std::slice::from_ref(&x), &y, 1e-9);
        for (p, t) in m.predict(&[x], 100).iter().zip(&y) {
            assert!((p - t).abs() < 1e-6);
        }
    }

    #[test]
    fn logistic_separates() {
        let x: Vec<f64> = (0..60).map(|i| f64::from(i) - 30.0).collect();
        let y: Vec<f64> = x.iter().map(|v| f64::from(u8::from(*v > 0.0))).collect();
        let m = Logistic::fit(std::slice::from_ref(&x), &y, 2, 1.0);
        let acc = m
            .predict(&[x], 60)
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
        assert!(acc >= 58);
    }
}
