//! Voter outputs: score matrices, labeled samples, the RBF kernel layer and
//! auto-complementation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `values[(j, i)]` is the output of voter `i` on example `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: DMatrix<f64>,
    voter_names: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(values: DMatrix<f64>, voter_names: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        if voter_names.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} names for {} voters",
                voter_names.len(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (j, i) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::InvalidValue(format!("non-finite score at row {j}, voter {i}")));
        }
        Ok(ScoreMatrix { values, voter_names })
    }

    /// Voters named `h1..hn`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("ragged score rows".into()));
        }
        let values = DMatrix::from_fn(rows.len(), n, |j, i| rows[j][i]);
        Self::new(values, default_names("h", n))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn voter_names(&self) -> &[String] {
        &self.voter_names
    }

    pub fn num_examples(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_voters(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, j: usize) -> Vec<f64> {
        self.values.row(j).iter().copied().collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let values = self.values.select_rows(rows);
        ScoreMatrix {
            values,
            voter_names: self.voter_names.clone(),
        }
    }
}

pub(crate) fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Scores plus labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    scores: ScoreMatrix,
    labels: Vec<f64>,
}

impl LabeledSample {
    pub fn new(scores: ScoreMatrix, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != scores.num_examples() {
            return Err(Error::Dimension(format!(
                "{} labels for {} examples",
                labels.len(),
                scores.num_examples()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidValue(format!("label {bad} is not -1 or +1")));
        }
        Ok(LabeledSample { scores, labels })
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn num_examples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_voters(&self) -> usize {
        self.scores.num_voters()
    }

    pub fn positives(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&j| self.labels[j] > 0.0).collect()
    }

    pub fn negatives(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&j| self.labels[j] < 0.0).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        LabeledSample {
            scores: self.scores.select_rows(rows),
            labels: rows.iter().map(|&j| self.labels[j]).collect(),
        }
    }

    pub fn with_scores(&self, scores: ScoreMatrix) -> Result<Self> {
        LabeledSample::new(scores, self.labels.clone())
    }
}

/// Returns the `m × 2n` family `[h_1..h_n, -h_1..-h_n]`.
pub fn auto_complement(scores: &ScoreMatrix) -> ScoreMatrix {
    let (m, n) = scores.values.shape();
    let values = DMatrix::from_fn(m, 2 * n, |j, i| {
        if i < n {
            scores.values[(j, i)]
        } else {
            -scores.values[(j, i - n)]
        }
    });
    let mut names = scores.voter_names.clone();
    names.extend(scores.voter_names.iter().map(|s| format!("{s}_neg")));
    ScoreMatrix {
        values,
        voter_names: names,
    }
}

/// Gaussian kernel voters `k(·, x_t) = exp(-gamma ‖· - x_t‖²)` anchored at the
/// score vectors of a stacking sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfKernelLayer {
    gamma: f64,
    support: Vec<Vec<f64>>,
    support_names: Vec<String>,
}

impl RbfKernelLayer {
    pub fn new(gamma: f64, support: Vec<Vec<f64>>, support_names: Vec<String>) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidValue(format!("kernel gamma must be positive, got {gamma}")));
        }
        if support.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = support[0].len();
        if support.iter().any(|r| r.len() != n) || support_names.len() != support.len() {
            return Err(Error::Dimension("inconsistent kernel support".into()));
        }
        if support.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite kernel support entry".into()));
        }
        Ok(RbfKernelLayer {
            gamma,
            support,
            support_names,
        })
    }

    /// Every row of `scores` becomes a voter, named `k1..ks`.
    pub fn from_sample(gamma: f64, scores: &ScoreMatrix) -> Result<Self> {
        let support = (0..scores.num_examples()).map(|j| scores.row(j)).collect();
        Self::new(gamma, support, default_names("k", scores.num_examples()))
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn support_names(&self) -> &[String] {
        &self.support_names
    }
}

/// Evaluates the kernel voters on every row of `scores`.
pub fn rbf_expand(layer: &RbfKernelLayer, scores: &ScoreMatrix) -> Result<ScoreMatrix> {
    let n = layer.support[0].len();
    if scores.num_voters() != n {
        return Err(Error::Dimension(format!(
            "kernel expects {n} score columns, got {}",
            scores.num_voters()
        )));
    }
    let m = scores.num_examples();
    let values = DMatrix::from_fn(m, layer.support.len(), |j, t| {
        let dist: f64 = layer.support[t]
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let d = scores.values[(j, i)] - s;
                d * d
            })
            .sum();
        (-layer.gamma * dist).exp()
    });
    Ok(ScoreMatrix {
        values,
        voter_names: layer.support_names.clone(),
    })
}

/// Median squared distance between distinct rows; pairs are taken from at
/// most the first 1000 rows.
pub fn median_squared_distance(scores: &ScoreMatrix) -> f64 {
    let rows = scores.num_examples().min(1000);
    let mut d = Vec::with_capacity(rows * rows.saturating_sub(1) / 2);
    for a in 0..rows {
        for b in (a + 1)..rows {
            let dist = (0..scores.num_voters())
                .map(|i| (scores.values[(a, i)] - scores.values[(b, i)]).powi(2))
                .sum::<f64>();
            d.push(dist);
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// `{2^k : k = -6..4}` divided by the median squared distance of `scores`.
pub fn default_gamma_grid(scores: &ScoreMatrix) -> Vec<f64> {
    let med = median_squared_distance(scores);
    (-6..=4).map(|k| 2f64.powi(k) / med).collect()
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Columns with zero variance keep scale 1.
    pub fn fit(scores: &ScoreMatrix) -> Self {
        let m = scores.num_examples() as f64;
        let (mean, scale) = (0..scores.num_voters())
            .map(|i| {
                let col = scores.values.column(i);
                let mean = col.sum() / m;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
                let sd = var.sqrt();
                (mean, if sd > 0.0 { sd } else { 1.0 })
            })
            .unzip();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, scores: &ScoreMatrix) -> Result<ScoreMatrix> {
        if scores.num_voters() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "standardizer expects {} columns, got {}",
                self.mean.len(),
                scores.num_voters()
            )));
        }
        let values = DMatrix::from_fn(scores.num_examples(), scores.num_voters(), |j, i| {
            (scores.values[(j, i)] - self.mean[i]) / self.scale[i]
        });
        ScoreMatrix::new(values, scores.voter_names.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn complement_of_single_row() {
        let s = ScoreMatrix::from_rows(&[vec![0.5, -0.2]]).unwrap();
        let c = auto_complement(&s);
        assert_eq!(c.row(0), vec![0.5, -0.2, -0.5, 0.2]);
        assert_eq!(c.voter_names()[2], "h1_neg");
    }

    #[test]
    fn zero_column_complement_is_zero() {
        let s = ScoreMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 2.0]]).unwrap();
        let c = auto_complement(&s);
        assert!(c.values().column(2).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rbf_hand_values() {
        let layer = RbfKernelLayer::new(1.0, vec![vec![0.0, 0.0]], vec!["k1".into()]).unwrap();
        let q = ScoreMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let k = rbf_expand(&layer, &q).unwrap();
        assert!((k.values()[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k.values()[(0, 0)] - 0.3679).abs() < 1e-4);
        assert_eq!(k.values()[(1, 0)], 1.0);
    }

    #[test]
    fn rbf_degenerate_gamma() {
        let s = ScoreMatrix::from_rows(&[vec![3.0, -2.0], vec![0.1, 5.0]]).unwrap();
        let layer = RbfKernelLayer::from_sample(1e-12, &s).unwrap();
        let q = ScoreMatrix::from_rows(&[vec![-4.0, 1.0]]).unwrap();
        let k = rbf_expand(&layer, &q).unwrap();
        assert!(k.values().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn rbf_column_mismatch() {
        let layer = RbfKernelLayer::new(1.0, vec![vec![0.0, 0.0]], vec!["k1".into()]).unwrap();
        let q = ScoreMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(rbf_expand(&layer, &q), Err(Error::Dimension(_))));
        assert!(RbfKernelLayer::new(0.0, vec![vec![0.0]], vec!["k".into()]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ScoreMatrix::from_rows(&[vec![f64::NAN]]).is_err());
        assert!(ScoreMatrix::from_rows(&[]).is_err());
        let s = ScoreMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(LabeledSample::new(s.clone(), vec![0.0]).is_err());
        assert!(LabeledSample::new(s, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn standardizer_centers_columns() {
        let s = ScoreMatrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let st = Standardizer::fit(&s);
        let t = st.apply(&s).unwrap();
        assert_eq!(t.row(0), vec![-1.0, 0.0]);
        assert_eq!(t.row(1), vec![1.0, 0.0]);
    }

    #[test]
    fn gamma_grid_uses_median_distance() {
        let s = ScoreMatrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        // squared distances 1, 4, 9 -> median 4
        assert_eq!(median_squared_distance(&s), 4.0);
        let grid = default_gamma_grid(&s);
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[6], 0.25);
    }

    fn matrix(max_rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-3.0..3.0f64, cols), 1..max_rows)
    }

    proptest! {
        #[test]
        fn complement_halves_cancel(rows in matrix(8, 3)) {
            let s = ScoreMatrix::from_rows(&rows).unwrap();
            let c = auto_complement(&s);
            for j in 0..s.num_examples() {
                for i in 0..3 {
                    prop_assert_eq!(c.values()[(j, i)] + c.values()[(j, i + 3)], 0.0);
                }
            }
        }

        #[test]
        fn negating_input_swaps_halves(rows in matrix(8, 2)) {
            let s = ScoreMatrix::from_rows(&rows).unwrap();
            let neg = ScoreMatrix::new(-s.values().clone(), s.voter_names().to_vec()).unwrap();
            let a = auto_complement(&s);
            let b = auto_complement(&neg);
            for j in 0..s.num_examples() {
                for i in 0..2 {
                    prop_assert_eq!(a.values()[(j, i)], b.values()[(j, i + 2)]);
                    prop_assert_eq!(a.values()[(j, i + 2)], b.values()[(j, i)]);
                }
            }
        }

        #[test]
        fn rbf_gram_is_bounded_symmetric_psd(rows in matrix(12, 3), gamma in 0.01..2.0f64) {
            let s = ScoreMatrix::from_rows(&rows).unwrap();
            let layer = RbfKernelLayer::from_sample(gamma, &s).unwrap();
            let k = rbf_expand(&layer, &s).unwrap();
            prop_assert!(k.values().iter().all(|&v| v > 0.0 && v <= 1.0));
            let g = k.values();
            prop_assert_eq!(g.clone(), g.transpose());
            let eig = nalgebra::SymmetricEigen::new(g.clone());
            prop_assert!(eig.eigenvalues.min() >= -1e-9);
        }
    }
}
