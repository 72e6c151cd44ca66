//! Order-preserving extensions: the C-bound program plus a hinge penalty on
//! positive/negative score inversions.
//!
//! Pairwise (`PW`) keeps one slack per positive/negative pair; averaged
//! (`PWav`) compares each positive to the mean negative and keeps one slack
//! per positive. Slack rows are written against the vote weights
//! `w = 2q - 1/n`, so each one becomes `2·dᵀq - ξ ≤ (1/n)·Σ d`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mincq::{
    assemble, canonicalize_duplicates, check_margin, clamp_to_box, MincqMatrices,
    QuasiUniformWeights,
};
use crate::qp::{solve_qp, QpProblem, QpStatus, SparseRows, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::voters::LabeledSample;

/// Default limit on `m⁺·m⁻` for the full pairwise program.
pub const DEFAULT_MAX_PAIRS: usize = 50_000;

/// The β grid used when none is supplied.
pub fn default_beta_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingVariant {
    /// One slack per positive/negative pair.
    Pw,
    /// One slack per positive, against the negative average.
    Pwav,
}

/// Row `(j⁺, j⁻)` at index `j⁺·m⁻ + j⁻`: `(h(x_{j⁻}) - h(x_{j⁺})) / (m⁺m⁻)`.
pub fn pairwise_differences(sample: &LabeledSample) -> Result<DMatrix<f64>> {
    let (pos, neg) = split_classes(sample)?;
    let h = sample.scores().values();
    let n = sample.num_voters();
    let scale = 1.0 / (pos.len() * neg.len()) as f64;
    let mut out = DMatrix::zeros(pos.len() * neg.len(), n);
    for (a, &jp) in pos.iter().enumerate() {
        for (b, &jn) in neg.iter().enumerate() {
            for i in 0..n {
                out[(a * neg.len() + b, i)] = scale * (h[(jn, i)] - h[(jp, i)]);
            }
        }
    }
    Ok(out)
}

/// Row `j⁺`: `Σ_{j⁻} (h(x_{j⁻}) - h(x_{j⁺})) / (m⁺m⁻)`.
pub fn averaged_differences(sample: &LabeledSample) -> Result<DMatrix<f64>> {
    let (pos, neg) = split_classes(sample)?;
    let h = sample.scores().values();
    let n = sample.num_voters();
    let (mp, mn) = (pos.len() as f64, neg.len() as f64);
    let neg_sum: Vec<f64> = (0..n).map(|i| neg.iter().map(|&j| h[(j, i)]).sum()).collect();
    Ok(DMatrix::from_fn(pos.len(), n, |a, i| {
        (neg_sum[i] - mn * h[(pos[a], i)]) / (mp * mn)
    }))
}

fn split_classes(sample: &LabeledSample) -> Result<(Vec<usize>, Vec<usize>)> {
    let pos = sample.positives();
    let neg = sample.negatives();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::ClassMissing);
    }
    Ok((pos, neg))
}

/// Everything the two ranking programs are built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseProblem {
    pub base: MincqMatrices,
    pub beta: f64,
    pub variant: RankingVariant,
    /// `pairwise_differences` for `Pw`, `averaged_differences` for `Pwav`.
    pub diff: DMatrix<f64>,
}

impl PairwiseProblem {
    pub fn new(sample: &LabeledSample, mu: f64, beta: f64, variant: RankingVariant) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidBeta(beta));
        }
        let diff = match variant {
            RankingVariant::Pw => pairwise_differences(sample)?,
            RankingVariant::Pwav => averaged_differences(sample)?,
        };
        let base = assemble(sample, mu)?;
        Ok(PairwiseProblem {
            base,
            beta,
            variant,
            diff,
        })
    }

    /// Variables `(q, ξ)`; the quadratic block over `ξ` is zero.
    pub fn to_qp(&self) -> Result<QpProblem> {
        let n = self.base.n();
        let k = self.diff.nrows();
        let v = n + k;
        let inv_n = 1.0 / n as f64;

        let mut quad = SparseRows::new(v);
        for i in 0..n {
            quad.push_row((0..n).map(|c| (c, self.base.m_mat[(i, c)])));
        }
        for _ in 0..k {
            quad.push_row([]);
        }
        let mut lin: Vec<f64> = self.base.a_vec.iter().map(|a| -a).collect();
        lin.extend(std::iter::repeat_n(self.beta, k));

        let mut rows = SparseRows::new(v);
        let mut rhs = Vec::with_capacity(k);
        for r in 0..k {
            let d = self.diff.row(r);
            rows.push_row(
                (0..n)
                    .map(|i| (i, 2.0 * d[i]))
                    .chain(std::iter::once((n + r, -1.0))),
            );
            rhs.push(inv_n * d.sum());
        }

        let lower = vec![0.0; v];
        let mut upper = vec![inv_n; n];
        upper.extend(std::iter::repeat_n(f64::INFINITY, k));

        let mut eq_row = self.base.m_vec.clone();
        eq_row.extend(std::iter::repeat_n(0.0, k));
        Ok(QpProblem::new(quad, lin, lower, upper)?
            .with_equality(eq_row, self.base.eq_rhs)?
            .with_inequalities(rows, rhs)?)
    }

    /// `max(0, dᵣᵀ w)` for every slack row.
    pub fn hinge_values(&self, q: &[f64]) -> Vec<f64> {
        let inv_n = 1.0 / q.len() as f64;
        (0..self.diff.nrows())
            .map(|r| {
                let e: f64 = self
                    .diff
                    .row(r)
                    .iter()
                    .zip(q)
                    .map(|(d, qi)| d * (2.0 * qi - inv_n))
                    .sum();
                e.max(0.0)
            })
            .collect()
    }
}

pub fn build_pw_qp(sample: &LabeledSample, mu: f64, beta: f64) -> Result<QpProblem> {
    PairwiseProblem::new(sample, mu, beta, RankingVariant::Pw)?.to_qp()
}

pub fn build_pwav_qp(sample: &LabeledSample, mu: f64, beta: f64) -> Result<QpProblem> {
    PairwiseProblem::new(sample, mu, beta, RankingVariant::Pwav)?.to_qp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingFit {
    pub weights: QuasiUniformWeights,
    /// Slack values, recomputed as the exact hinge of the returned weights.
    pub slacks: Vec<f64>,
    /// Slack values as returned by the solver.
    pub solver_slacks: Vec<f64>,
    pub objective: f64,
}

pub fn solve_ranking(
    sample: &LabeledSample,
    mu: f64,
    beta: f64,
    variant: RankingVariant,
) -> Result<RankingFit> {
    let problem = PairwiseProblem::new(sample, mu, beta, variant)?;
    check_margin(&problem.base, mu)?;
    let qp = problem.to_qp()?;
    let sol = solve_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::SolverFailed {
            status: sol.status,
            kkt_residual: sol.kkt_residual,
        });
    }
    let n = sample.num_voters();
    let mut q = sol.x[..n].to_vec();
    canonicalize_duplicates(sample.scores(), &mut q);
    clamp_to_box(&mut q);
    // For fixed q the slack block is separable and its minimizer is the hinge itself.
    let slacks = problem.hinge_values(&q);
    let mut x = q.clone();
    x.extend_from_slice(&slacks);
    Ok(RankingFit {
        objective: qp.objective(&x),
        weights: QuasiUniformWeights::new(q)?,
        solver_slacks: sol.x[n..].to_vec(),
        slacks,
    })
}
