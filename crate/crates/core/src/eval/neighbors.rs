//! k-nearest neighbours on z-scored features.

use crate::data::ColumnStats;

#[derive(Debug, Clone)]
pub struct KNearest {
    k: usize,
    means: Vec<f64>,
    scales: Vec<f64>,
    /// Row-major standardized training points.
    points: Vec<Vec<f64>>,
    y: Vec<f64>,
    n_classes: Option<usize>,
}

impl KNearest {
    /// `n_classes = None` fits a regressor.
    pub fn fit(columns: &[Vec<f64>], y: &[f64], k: usize, n_classes: Option<usize>) -> Self {
        let (means, scales): (Vec<f64>, Vec<f64>) = columns
            .iter()
            .map(|c| {
                let s = ColumnStats::of(c);
                (s.mean, if s.std > 0.0 { s.std } else { 1.0 })
            })
            .unzip();
        let points = (0..y.len())
            .map(|r| {
                columns
                    .iter()
                    .enumerate()
                    .map(|(j, c)| (c[r] - means[j]) / scales[j])
                    .collect()
            })
            .collect();
        Self {
            k: k.max(1),
            means,
            scales,
            points,
            y: y.to_vec(),
            n_classes,
        }
    }

    pub fn predict(&self, columns: &[Vec<f64>], n_rows: usize) -> Vec<f64> {
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.points.len());
        let mut query = vec![0.0; self.means.len()];
        (0..n_rows)
            .map(|r| {
                for (j, q) in query.iter_mut().enumerate() {
                    *q = (columns[j][r] - self.means[j]) / self.scales[j];
                }
                dist.clear();
                dist.extend(self.points.iter().enumerate().map(|(i, p)| {
                    let d: f64 = p.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, i)
                }));
                let k = self.k.min(dist.len());
                dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let nearest = &dist[..k];
                match self.n_classes {
                    None => nearest.iter().map(|(_, i)| self.y[*i]).sum::<f64>() / k as f64,
                    Some(c) => {
                        let mut votes = vec![0usize; c];
                        for (_, i) in nearest {
                            votes[self.y[*i] as usize] += 1;
                        }
                        // ties go to the lowest class code
                        let mut best = 0;
                        for (cls, v) in votes.iter().enumerate() {
                            if *v > votes[best] {
                                best = cls;
                            }
                        }
                        best as f64
                    }
                }
            })
            .collect()
    }
}
