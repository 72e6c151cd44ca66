#![allow(dead_code)]

use mincq::mincq::{assemble, build_mincq_qp};
use mincq::qp::{brute_force_qp, QpProblem, QpSolution, QpStatus, SparseRows};
use mincq::synth::{generate, SynthSpec};
use mincq::voters::{LabeledSample, ScoreMatrix};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random convex QP with at most three variables and a finite box. Every
/// third instance is a MinCq program built from a small synthetic sample.
pub fn random_small_qp(rng: &mut ChaCha8Rng, index: usize) -> QpProblem {
    if index % 3 == 2 {
        let n = rng.random_range(1..=3);
        let spec = SynthSpec {
            m: rng.random_range(10..40),
            error_rates: (0..n).map(|_| rng.random_range(0.05..0.45)).collect(),
            correlation: rng.random_range(0.0..1.0),
            positive_ratio: 0.5,
            seed: rng.random(),
        };
        let sample = generate(&spec).unwrap();
        let mats = assemble(&sample, 1.0).unwrap();
        let mu = rng.random_range(0.05..0.9) * mats.max_first_moment();
        let mats = assemble(&sample, mu).unwrap();
        return build_mincq_qp(&mats, n).unwrap();
    }
    let v = rng.random_range(1..=3);
    let rank = rng.random_range(0..=v);
    let b = DMatrix::from_fn(rank, v, |_, _| rng.random_range(-1.5..1.5));
    let q = b.transpose() * &b;
    let lin: Vec<f64> = (0..v).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lower: Vec<f64> = (0..v).map(|_| rng.random_range(-1.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.2..1.5)).collect();
    let inside: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(l, u)| l + rng.random_range(0.0..1.0) * (u - l))
        .collect();
    let mut p = QpProblem::from_dense(&q, lin, lower, upper).unwrap();
    if v > 1 && rng.random_bool(0.5) {
        let a: Vec<f64> = (0..v).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rhs = a.iter().zip(&inside).map(|(a, x)| a * x).sum();
        p = p.with_equality(a, rhs).unwrap();
    }
    if rng.random_bool(0.3) {
        let g: Vec<f64> = (0..v).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rhs = g.iter().zip(&inside).map(|(g, x)| g * x).sum::<f64>() + rng.random_range(0.0..0.3);
        let mut rows = SparseRows::new(v);
        rows.push_row(g.into_iter().enumerate());
        p = p.with_inequalities(rows, vec![rhs]).unwrap();
    }
    p
}

fn with_box(p: &QpProblem, lower: Vec<f64>, upper: Vec<f64>) -> QpProblem {
    let mut out = QpProblem::new(p.quad().clone(), p.lin().to_vec(), lower, upper).unwrap();
    if let Some(eq) = p.equality() {
        out = out.with_equality(eq.row.clone(), eq.rhs).unwrap();
    }
    if p.ineq_rows().nrows() > 0 {
        out = out
            .with_inequalities(p.ineq_rows().clone(), p.ineq_rhs().to_vec())
            .unwrap();
    }
    out
}

/// Exhaustive grid search followed by a shrinking pattern search: each pass
/// re-runs the grid oracle on a window around the incumbent, keeping the
/// window size while the incumbent still moves to the window edge. Every
/// pass is a plain oracle call on a sub-box, so the result is always the
/// objective of a feasible grid point.
pub fn refined_oracle(p: &QpProblem) -> QpSolution {
    let v = p.num_vars();
    let width = (0..v)
        .map(|j| p.upper()[j] - p.lower()[j])
        .fold(0.0, f64::max);
    let mut step = width / 60.0;
    let mut best = brute_force_qp(p, step).unwrap();
    if best.status != QpStatus::Optimal {
        return best;
    }
    for _ in 0..60 {
        if step < 1e-10 * (1.0 + width) {
            break;
        }
        let radius = 5.0 * step;
        let lower: Vec<f64> = (0..v).map(|j| (best.x[j] - radius).max(p.lower()[j])).collect();
        let upper: Vec<f64> = (0..v).map(|j| (best.x[j] + radius).min(p.upper()[j])).collect();
        let local = brute_force_qp(&with_box(p, lower.clone(), upper.clone()), step / 5.0).unwrap();
        let mut at_edge = false;
        if local.status == QpStatus::Optimal && local.objective < best.objective {
            at_edge = (0..v).any(|j| {
                let inner_lo = lower[j] > p.lower()[j] && local.x[j] <= lower[j] + 0.1 * step;
                let inner_hi = upper[j] < p.upper()[j] && local.x[j] >= upper[j] - 0.1 * step;
                inner_lo || inner_hi
            });
            best = local;
        }
        if !at_edge {
            step /= 5.0;
        }
    }
    best
}

/// AP straight from the definition: rank of `j` is one plus the number of
/// examples placed before it.
pub fn ap_by_definition(scores: &[f64], labels: &[f64]) -> f64 {
    let m = scores.len();
    let before = |k: usize, j: usize| scores[k] > scores[j] || (scores[k] == scores[j] && k < j);
    let mut total = 0.0;
    let mut positives = 0;
    for j in 0..m {
        if labels[j] <= 0.0 {
            continue;
        }
        positives += 1;
        let rank = 1 + (0..m).filter(|&k| before(k, j)).count();
        let hits = 1 + (0..m).filter(|&k| labels[k] > 0.0 && before(k, j)).count();
        total += hits as f64 / rank as f64;
    }
    total / positives as f64
}

pub fn random_rows(rng: &mut ChaCha8Rng, m: usize, n: usize, scale: f64) -> ScoreMatrix {
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(-scale..scale)).collect())
        .collect();
    ScoreMatrix::from_rows(&rows).unwrap()
}

pub fn flip_sample(rng: &mut ChaCha8Rng, m: usize, n: usize) -> LabeledSample {
    let spec = SynthSpec {
        m,
        error_rates: (0..n).map(|_| rng.random_range(0.1..0.4)).collect(),
        correlation: rng.random_range(0.0..0.8),
        positive_ratio: rng.random_range(0.3..0.7),
        seed: rng.random(),
    };
    generate(&spec).unwrap()
}
