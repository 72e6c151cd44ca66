//! The C-bound minimization program over quasi-uniform weights.
//!
//! With the voter family auto-complemented and the weight of each voter plus
//! its complement fixed at `1/n`, the whole program lives on the first `n`
//! weights `q ∈ [0, 1/n]ⁿ` and the deployed vote is `H(x) = Σ (2qᵢ - 1/n) hᵢ(x)`.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::qp::{solve_qp, QpProblem, QpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::voters::{LabeledSample, ScoreMatrix};

/// Tolerance on the `[0, 1/n]` box when accepting externally supplied weights.
pub const BOX_TOL: f64 = 1e-9;

/// The μ grid used when none is supplied: `10^-4, 10^-3.5, …, 10^-0.5`.
pub fn default_mu_grid() -> Vec<f64> {
    (0..8).map(|k| 10f64.powf(-4.0 + 0.5 * k as f64)).collect()
}

/// Weights of the first `n` voters of the auto-complemented family; voter
/// `i + n` implicitly carries `1/n - q_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiUniformWeights {
    q: Vec<f64>,
}

impl QuasiUniformWeights {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::EmptyInput);
        }
        let cap = 1.0 / q.len() as f64;
        if let Some(bad) = q.iter().find(|&&qi| !(qi >= -BOX_TOL && qi <= cap + BOX_TOL)) {
            return Err(Error::InvalidValue(format!("weight {bad} outside [0, {cap}]")));
        }
        Ok(QuasiUniformWeights { q })
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// All `2n` weights, first the voters then their complements.
    pub fn full_distribution(&self) -> Vec<f64> {
        let cap = 1.0 / self.n() as f64;
        self.q.iter().copied().chain(self.q.iter().map(|q| cap - q)).collect()
    }

    /// `wᵢ = 2qᵢ - 1/n`.
    pub fn vote_weights(&self) -> Vec<f64> {
        let inv_n = 1.0 / self.n() as f64;
        self.q.iter().map(|q| 2.0 * q - inv_n).collect()
    }

    pub fn from_vote_weights(w: &[f64]) -> Result<Self> {
        let inv_n = 1.0 / w.len() as f64;
        Self::new(w.iter().map(|wi| 0.5 * (wi + inv_n)).collect())
    }
}

/// A deployable weighted vote `H(x) = Σ wᵢ hᵢ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MajorityVote {
    pub vote_weights: Vec<f64>,
    pub voter_names: Vec<String>,
    pub margin_mu: f64,
}

pub fn to_majority_vote(q: &QuasiUniformWeights, names: &[String], mu: f64) -> MajorityVote {
    MajorityVote {
        vote_weights: q.vote_weights(),
        voter_names: names.to_vec(),
        margin_mu: mu,
    }
}

/// `+1` iff `score ≥ 0`.
pub fn sign(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl MajorityVote {
    pub fn vote_score(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.vote_weights.len() {
            return Err(Error::Dimension(format!(
                "vote has {} voters, row has {} scores",
                self.vote_weights.len(),
                row.len()
            )));
        }
        Ok(self.vote_weights.iter().zip(row).map(|(w, h)| w * h).sum())
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        self.vote_score(row).map(sign)
    }

    pub fn scores(&self, scores: &ScoreMatrix) -> Result<Vec<f64>> {
        (0..scores.num_examples())
            .map(|j| self.vote_score(&scores.row(j)))
            .collect()
    }
}

/// `M_S`, `m_S`, `A_S` and the equality right-hand side for one sample and margin.
#[derive(Debug, Clone, PartialEq)]
pub struct MincqMatrices {
    pub m_mat: DMatrix<f64>,
    pub m_vec: Vec<f64>,
    pub a_vec: Vec<f64>,
    pub eq_rhs: f64,
}

impl MincqMatrices {
    pub fn n(&self) -> usize {
        self.m_vec.len()
    }

    /// `(1/n) Σ |m_S[i]|`, the first moment reached at the best box corner.
    pub fn max_first_moment(&self) -> f64 {
        self.m_vec.iter().map(|v| v.abs()).sum::<f64>() / self.n() as f64
    }
}

pub fn assemble(sample: &LabeledSample, mu: f64) -> Result<MincqMatrices> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidMargin(mu));
    }
    let h = sample.scores().values();
    let (m, n) = h.shape();
    let (mf, nf) = (m as f64, n as f64);
    let mut m_mat = h.transpose() * h;
    for i in 0..n {
        for k in 0..i {
            m_mat[(k, i)] = m_mat[(i, k)];
        }
    }
    m_mat /= mf;
    let y = sample.labels();
    let m_vec: Vec<f64> = (0..n)
        .map(|i| (0..m).map(|j| y[j] * h[(j, i)]).sum::<f64>() / mf)
        .collect();
    let row_sums: Vec<f64> = (0..m).map(|j| h.row(j).sum()).collect();
    let a_vec: Vec<f64> = (0..n)
        .map(|i| (0..m).map(|j| h[(j, i)] * row_sums[j]).sum::<f64>() / (nf * mf))
        .collect();
    let label_weighted: f64 = (0..m)
        .map(|j| y[j] * (0..n).map(|i| h[(j, i)]).sum::<f64>())
        .sum();
    let eq_rhs = mu / 2.0 + label_weighted / (2.0 * nf * mf);
    Ok(MincqMatrices {
        m_mat,
        m_vec,
        a_vec,
        eq_rhs,
    })
}

/// `min qᵀ M_S q - A_Sᵀ q  s.t.  m_Sᵀ q = eq_rhs,  0 ≤ q ≤ 1/n`.
pub fn build_mincq_qp(mats: &MincqMatrices, n: usize) -> Result<QpProblem> {
    if mats.n() != n || mats.m_mat.shape() != (n, n) {
        return Err(Error::Dimension(format!("matrices do not describe {n} voters")));
    }
    let cap = 1.0 / n as f64;
    let p = QpProblem::from_dense(
        &mats.m_mat,
        mats.a_vec.iter().map(|a| -a).collect(),
        vec![0.0; n],
        vec![cap; n],
    )?
    .with_equality(mats.m_vec.clone(), mats.eq_rhs)?;
    Ok(p)
}

pub(crate) fn check_margin(mats: &MincqMatrices, mu: f64) -> Result<()> {
    let max = mats.max_first_moment();
    if mu > max {
        Err(Error::MarginInfeasible {
            mu,
            max_first_moment: max,
        })
    } else {
        Ok(())
    }
}

/// Averages weights over bitwise-identical score columns so that the
/// reported solution does not depend on how the solver broke the tie.
pub(crate) fn canonicalize_duplicates(scores: &ScoreMatrix, q: &mut [f64]) {
    let n = scores.num_voters();
    let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let key = scores.values().column(i).iter().map(|v| v.to_bits()).collect();
        groups.entry(key).or_default().push(i);
    }
    for members in groups.values().filter(|g| g.len() > 1) {
        let avg = members.iter().map(|&i| q[i]).sum::<f64>() / members.len() as f64;
        for &i in members {
            q[i] = avg;
        }
    }
}

pub(crate) fn clamp_to_box(q: &mut [f64]) {
    let cap = 1.0 / q.len() as f64;
    for qi in q.iter_mut() {
        *qi = qi.clamp(0.0, cap);
    }
}

pub fn solve_mincq(sample: &LabeledSample, mu: f64) -> Result<QuasiUniformWeights> {
    let mats = assemble(sample, mu)?;
    check_margin(&mats, mu)?;
    let n = sample.num_voters();
    let problem = build_mincq_qp(&mats, n)?;
    let sol = solve_qp(&problem, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::SolverFailed {
            status: sol.status,
            kkt_residual: sol.kkt_residual,
        });
    }
    let mut q = sol.x;
    canonicalize_duplicates(sample.scores(), &mut q);
    clamp_to_box(&mut q);
    QuasiUniformWeights::new(q)
}
