//! Reference fusion rules: best single voter, highest-magnitude voter,
//! unweighted sum and AP-weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::average_precision;
use crate::mincq::sign;
use crate::voters::{LabeledSample, ScoreMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineVote {
    HBest { index: usize },
    HighestMargin,
    Sum,
    /// Nonnegative weights summing to one.
    MapWeighted { weights: Vec<f64> },
}

fn voter_aps(sample: &LabeledSample) -> Result<Vec<f64>> {
    let scores = sample.scores();
    (0..sample.num_voters())
        .map(|i| {
            let column: Vec<f64> = scores.values().column(i).iter().copied().collect();
            average_precision(&column, sample.labels())
        })
        .collect()
}

/// Voter with the highest AP on `sample`; ties go to the lowest index.
pub fn fit_h_best(sample: &LabeledSample) -> Result<BaselineVote> {
    let aps = voter_aps(sample)?;
    let mut best = 0;
    for (i, ap) in aps.iter().enumerate() {
        if *ap > aps[best] {
            best = i;
        }
    }
    Ok(BaselineVote::HBest { index: best })
}

/// Sign of the entry with the largest magnitude; ties go to the lowest index.
pub fn predict_highest_margin(row: &[f64]) -> Result<f64> {
    highest_margin_score(row).map(sign)
}

/// The entry with the largest magnitude.
pub fn highest_margin_score(row: &[f64]) -> Result<f64> {
    let first = *row.first().ok_or(Error::EmptyInput)?;
    Ok(row
        .iter()
        .copied()
        .fold(first, |best, h| if h.abs() > best.abs() { h } else { best }))
}

pub fn predict_sum(row: &[f64]) -> (f64, f64) {
    let s: f64 = row.iter().sum();
    (s, sign(s))
}

pub fn fit_map_weighted(sample: &LabeledSample) -> Result<BaselineVote> {
    let aps = voter_aps(sample)?;
    let total: f64 = aps.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(BaselineVote::MapWeighted {
        weights: aps.iter().map(|a| a / total).collect(),
    })
}

impl BaselineVote {
    pub fn score(&self, row: &[f64]) -> Result<f64> {
        match self {
            BaselineVote::HBest { index } => row.get(*index).copied().ok_or_else(|| {
                Error::Dimension(format!("voter {index} missing from row of {}", row.len()))
            }),
            BaselineVote::HighestMargin => highest_margin_score(row),
            BaselineVote::Sum => Ok(predict_sum(row).0),
            BaselineVote::MapWeighted { weights } => {
                if weights.len() != row.len() {
                    return Err(Error::Dimension(format!(
                        "{} weights for {} scores",
                        weights.len(),
                        row.len()
                    )));
                }
                Ok(weights.iter().zip(row).map(|(w, h)| w * h).sum())
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        self.score(row).map(sign)
    }

    pub fn scores(&self, scores: &ScoreMatrix) -> Result<Vec<f64>> {
        (0..scores.num_examples())
            .map(|j| self.score(&scores.row(j)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mincq::{to_majority_vote, QuasiUniformWeights};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(rows: &[Vec<f64>], labels: &[f64]) -> LabeledSample {
        LabeledSample::new(ScoreMatrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    fn random_sample(seed: u64, m: usize, n: usize) -> LabeledSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<f64> = (0..m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        labels[0] = 1.0;
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|y| (0..n).map(|_| 0.2 * y + rng.random_range(-1.0..1.0)).collect())
            .collect();
        sample(&rows, &labels)
    }

    #[test]
    fn h_best_picks_the_perfect_voter() {
        let s = sample(
            &[vec![0.1, 0.9], vec![0.8, -0.7], vec![-0.3, 0.4]],
            &[1.0, -1.0, 1.0],
        );
        assert_eq!(fit_h_best(&s).unwrap(), BaselineVote::HBest { index: 1 });
    }

    #[test]
    fn h_best_ties_go_low() {
        let s = sample(&[vec![0.5, 0.5], vec![-0.5, -0.5]], &[1.0, -1.0]);
        assert_eq!(fit_h_best(&s).unwrap(), BaselineVote::HBest { index: 0 });
        let none = sample(&[vec![0.5]], &[-1.0]);
        assert_eq!(fit_h_best(&none), Err(Error::NoPositives));
    }

    #[test]
    fn h_best_matches_exhaustive_scan() {
        for seed in 0..10 {
            let s = random_sample(seed, 40, 3);
            let aps = voter_aps(&s).unwrap();
            let BaselineVote::HBest { index } = fit_h_best(&s).unwrap() else {
                panic!()
            };
            assert!(aps.iter().all(|a| aps[index] >= *a));
            assert!(aps[..index].iter().all(|a| *a < aps[index]));
        }
    }

    #[test]
    fn highest_margin_examples() {
        assert_eq!(predict_highest_margin(&[0.1, -0.9]).unwrap(), -1.0);
        assert_eq!(predict_highest_margin(&[0.5]).unwrap(), 1.0);
        assert_eq!(predict_highest_margin(&[0.3, -0.3]).unwrap(), 1.0);
        assert_eq!(predict_highest_margin(&[-0.3, 0.3]).unwrap(), -1.0);
        assert_eq!(predict_highest_margin(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn sum_examples() {
        let (s, y) = predict_sum(&[0.2, -0.5, 0.4]);
        assert_abs_diff_eq!(s, 0.1, epsilon = 1e-15);
        assert_eq!(y, 1.0);
        assert_eq!(predict_sum(&[0.0, 0.0]), (0.0, 1.0));
        assert_eq!(predict_sum(&[-0.2, 0.5, -0.4]).0, -predict_sum(&[0.2, -0.5, 0.4]).0);
    }

    #[test]
    fn map_weighted_weights() {
        let single = sample(&[vec![0.3], vec![-0.2]], &[1.0, -1.0]);
        assert_eq!(
            fit_map_weighted(&single).unwrap(),
            BaselineVote::MapWeighted { weights: vec![1.0] }
        );
        // APs 1/2 and 1
        let two = sample(&[vec![0.1, 0.9], vec![0.8, -0.7]], &[1.0, -1.0]);
        let BaselineVote::MapWeighted { weights } = fit_map_weighted(&two).unwrap() else {
            panic!()
        };
        assert_abs_diff_eq!(weights[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(weights[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn map_weighted_matches_formula() {
        for seed in 0..5 {
            let s = random_sample(seed, 30, 4);
            let aps = voter_aps(&s).unwrap();
            let total: f64 = aps.iter().sum();
            let vote = fit_map_weighted(&s).unwrap();
            for j in 0..s.num_examples() {
                let row = s.scores().row(j);
                let direct: f64 = (0..4).map(|i| aps[i] / total * row[i]).sum();
                assert_abs_diff_eq!(vote.score(&row).unwrap(), direct, epsilon = 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn sum_agrees_with_uniform_quasi_weights(row in prop::collection::vec(-3.0..3.0f64, 1..8)) {
            let n = row.len();
            // q = 1/n puts all mass on the original voters: w = 1/n
            let q = QuasiUniformWeights::new(vec![1.0 / n as f64; n]).unwrap();
            let vote = to_majority_vote(&q, &vec![String::new(); n], 0.0);
            let (s, y) = predict_sum(&row);
            let h = vote.vote_score(&row).unwrap();
            prop_assert!((h * n as f64 - s).abs() <= 1e-12 * (1.0 + s.abs()));
            if h.abs() > 1e-12 {
                prop_assert_eq!(sign(h), y);
            }
        }

        #[test]
        fn map_weights_form_a_distribution(seed in 0u64..1000) {
            let s = random_sample(seed, 20, 3);
            if let Ok(BaselineVote::MapWeighted { weights }) = fit_map_weighted(&s) {
                prop_assert!(weights.iter().all(|w| *w >= 0.0));
                prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }
}
