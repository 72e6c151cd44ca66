//! Risk, Q-margin moments, the C-bound and ranking metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mincq::{sign, MajorityVote};
use crate::voters::LabeledSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Applicable,
    /// First moment not positive.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CBoundReport {
    pub first_moment: f64,
    pub second_moment: f64,
    /// `1 - first² / second`, present only when `first > 0`.
    pub c_bound: Option<f64>,
    pub empirical_risk: f64,
    pub status: BoundStatus,
}

fn check_dims(vote: &MajorityVote, sample: &LabeledSample) -> Result<()> {
    if vote.vote_weights.len() != sample.num_voters() {
        return Err(Error::Dimension(format!(
            "vote has {} voters, sample has {}",
            vote.vote_weights.len(),
            sample.num_voters()
        )));
    }
    Ok(())
}

/// `(1/m) Σ y H(x)` and `(1/m) Σ H(x)²`.
pub fn q_margin_moments(vote: &MajorityVote, sample: &LabeledSample) -> Result<(f64, f64)> {
    check_dims(vote, sample)?;
    let scores = vote.scores(sample.scores())?;
    Ok(margin_moments(&scores, sample.labels()))
}

pub(crate) fn margin_moments(scores: &[f64], labels: &[f64]) -> (f64, f64) {
    let m = scores.len() as f64;
    let first = scores.iter().zip(labels).map(|(h, y)| y * h).sum::<f64>() / m;
    let second = scores.iter().map(|h| h * h).sum::<f64>() / m;
    (first, second)
}

pub fn zero_one_risk(vote: &MajorityVote, sample: &LabeledSample) -> Result<f64> {
    check_dims(vote, sample)?;
    let scores = vote.scores(sample.scores())?;
    Ok(risk_of_scores(&scores, sample.labels()))
}

pub fn risk_of_scores(scores: &[f64], labels: &[f64]) -> f64 {
    let errors = scores
        .iter()
        .zip(labels)
        .filter(|(h, y)| sign(**h) != **y)
        .count();
    errors as f64 / scores.len() as f64
}

pub fn c_bound(vote: &MajorityVote, sample: &LabeledSample) -> Result<CBoundReport> {
    check_dims(vote, sample)?;
    let scores = vote.scores(sample.scores())?;
    Ok(c_bound_of_scores(&scores, sample.labels()))
}

pub fn c_bound_of_scores(scores: &[f64], labels: &[f64]) -> CBoundReport {
    let (first, second) = margin_moments(scores, labels);
    let risk = risk_of_scores(scores, labels);
    if first > 0.0 {
        CBoundReport {
            first_moment: first,
            second_moment: second,
            c_bound: Some((1.0 - first * first / second).clamp(0.0, 1.0)),
            empirical_risk: risk,
            status: BoundStatus::Applicable,
        }
    } else {
        CBoundReport {
            first_moment: first,
            second_moment: second,
            c_bound: None,
            empirical_risk: risk,
            status: BoundStatus::NotApplicable,
        }
    }
}

/// Indices sorted by descending score; equal scores keep index order.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

fn check_lengths(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Mean of Prec@j over the ranks j of the positive examples.
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let m_pos = labels.iter().filter(|y| **y > 0.0).count();
    if m_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &j) in ranking_order(scores).iter().enumerate() {
        if labels[j] > 0.0 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / m_pos as f64)
}

/// Fraction of positives among the top `j` examples.
pub fn prec_at(scores: &[f64], labels: &[f64], j: usize) -> Result<f64> {
    check_lengths(scores, labels)?;
    if j == 0 || j > scores.len() {
        return Err(Error::RankOutOfRange {
            rank: j,
            len: scores.len(),
        });
    }
    let hits = ranking_order(scores)[..j]
        .iter()
        .filter(|&&k| labels[k] > 0.0)
        .count();
    Ok(hits as f64 / j as f64)
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voters::ScoreMatrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn identity_vote(n: usize) -> MajorityVote {
        MajorityVote {
            vote_weights: vec![1.0; n],
            voter_names: vec![String::new(); n],
            margin_mu: 0.0,
        }
    }

    fn one_voter(values: &[f64], labels: &[f64]) -> LabeledSample {
        let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
        LabeledSample::new(ScoreMatrix::from_rows(&rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn constant_margin_moments() {
        let s = one_voter(&[0.5, -0.5], &[1.0, -1.0]);
        let (f, q) = q_margin_moments(&identity_vote(1), &s).unwrap();
        assert_eq!((f, q), (0.5, 0.25));
        let report = c_bound(&identity_vote(1), &s).unwrap();
        assert_eq!(report.c_bound, Some(0.0));
        assert_eq!(report.status, BoundStatus::Applicable);
    }

    #[test]
    fn two_point_margins() {
        let s = one_voter(&[1.0, 0.5], &[1.0, 1.0]);
        let (f, q) = q_margin_moments(&identity_vote(1), &s).unwrap();
        assert_eq!((f, q), (0.75, 0.625));
        let report = c_bound(&identity_vote(1), &s).unwrap();
        assert_abs_diff_eq!(report.c_bound.unwrap(), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn zero_first_moment_is_not_applicable() {
        let s = one_voter(&[0.5, 0.5], &[1.0, -1.0]);
        let report = c_bound(&identity_vote(1), &s).unwrap();
        assert_eq!(report.first_moment, 0.0);
        assert_eq!(report.status, BoundStatus::NotApplicable);
        assert_eq!(report.c_bound, None);
    }

    #[test]
    fn risk_extremes() {
        let s = one_voter(&[0.3, -0.2, 0.9], &[1.0, -1.0, 1.0]);
        assert_eq!(zero_one_risk(&identity_vote(1), &s).unwrap(), 0.0);
        let mut anti = identity_vote(1);
        anti.vote_weights[0] = -1.0;
        assert_eq!(zero_one_risk(&anti, &s).unwrap(), 1.0);
        // sign[0] = +1
        let z = one_voter(&[0.0, 0.0], &[1.0, -1.0]);
        assert_eq!(zero_one_risk(&identity_vote(1), &z).unwrap(), 0.5);
        assert!(zero_one_risk(&identity_vote(2), &s).is_err());
    }

    #[test]
    fn average_precision_hand_cases() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[1.0, -1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(ap, 5.0 / 6.0, epsilon = 1e-15);
        assert_eq!(average_precision(&[3.0, 2.0, 1.0, 0.0], &[1.0, 1.0, -1.0, -1.0]).unwrap(), 1.0);
        let worst = average_precision(&[4.0, 3.0, 2.0, 1.0], &[-1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(worst, 0.25, epsilon = 1e-15);
        assert_eq!(average_precision(&[1.0], &[-1.0]), Err(Error::NoPositives));
    }

    #[test]
    fn ties_keep_index_order() {
        // positive at index 1, tied with a negative at index 0 -> ranked second
        let ap = average_precision(&[0.5, 0.5], &[-1.0, 1.0]).unwrap();
        assert_eq!(ap, 0.5);
        assert_eq!(ranking_order(&[0.5, 0.7, 0.5]), vec![1, 0, 2]);
    }

    #[test]
    fn precision_at_rank() {
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(prec_at(&scores, &labels, 1).unwrap(), 1.0);
        assert_eq!(prec_at(&scores, &labels, 2).unwrap(), 0.5);
        assert_eq!(prec_at(&scores, &labels, 4).unwrap(), 0.5);
        assert!(matches!(prec_at(&scores, &labels, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(prec_at(&scores, &labels, 5), Err(Error::RankOutOfRange { .. })));
    }

    #[test]
    fn map_is_mean() {
        assert_eq!(mean_average_precision(&[1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(mean_average_precision(&[0.2, 0.4]).unwrap(), 0.3, epsilon = 1e-15);
        assert_eq!(mean_average_precision(&[]), Err(Error::EmptyInput));
        let aps: Vec<f64> = (0..20).map(|k| (k as f64 * 0.37).fract()).collect();
        let mut recount = 0.0;
        for a in &aps {
            recount += a;
        }
        assert_abs_diff_eq!(mean_average_precision(&aps).unwrap(), recount / 20.0, epsilon = 1e-15);
    }

    fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..30).prop_flat_map(|m| {
            (
                prop::collection::vec(-5.0..5.0f64, m),
                prop::collection::vec(prop::bool::ANY, m),
            )
                .prop_map(|(s, l)| {
                    let mut labels: Vec<f64> = l.iter().map(|b| if *b { 1.0 } else { -1.0 }).collect();
                    labels[0] = 1.0;
                    (s, labels)
                })
        })
    }

    proptest! {
        #[test]
        fn ap_invariant_under_increasing_maps((scores, labels) in scored_labels(), a in 0.1..4.0f64, b in -3.0..3.0f64) {
            let base = average_precision(&scores, &labels).unwrap();
            let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
            prop_assert_eq!(average_precision(&exp, &labels).unwrap(), base);
            prop_assert_eq!(average_precision(&affine, &labels).unwrap(), base);
        }

        #[test]
        fn ap_is_one_iff_positives_lead((scores, labels) in scored_labels()) {
            let ap = average_precision(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            let order = ranking_order(&scores);
            let m_pos = labels.iter().filter(|y| **y > 0.0).count();
            let leads = order[..m_pos].iter().all(|&j| labels[j] > 0.0);
            prop_assert_eq!(ap == 1.0, leads);
        }

        #[test]
        fn second_moment_dominates_first_squared((scores, labels) in scored_labels()) {
            let (f, s) = margin_moments(&scores, &labels);
            prop_assert!(s >= f * f - 1e-12);
            let report = c_bound_of_scores(&scores, &labels);
            if let Some(c) = report.c_bound {
                prop_assert!((0.0..=1.0).contains(&c));
                prop_assert!(report.empirical_risk <= c + 1e-12);
            }
        }
    }
}
