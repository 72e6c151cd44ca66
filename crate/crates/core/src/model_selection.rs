//! Stratified k-fold splitting and cross-validated grid search on mean AP.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::average_precision;
use crate::mincq::assemble;
use crate::pipeline::{fit, FitConfig, FittedModel, Variant};
use crate::ranking::DEFAULT_MAX_PAIRS;
use crate::voters::{rbf_expand, LabeledSample, RbfKernelLayer, Standardizer};

/// Fold index per example. With labels, positives and negatives are dealt
/// round-robin separately so every fold's class counts differ by at most one.
pub fn kfold_split(m: usize, folds: usize, seed: u64, labels: Option<&[f64]>) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidValue(format!("need at least 2 folds, got {folds}")));
    }
    if folds > m {
        return Err(Error::TooManyFolds { folds, m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match labels {
        Some(y) => {
            if y.len() != m {
                return Err(Error::Dimension(format!("{} labels for {m} examples", y.len())));
            }
            let (pos, neg): (Vec<usize>, Vec<usize>) = (0..m).partition(|&j| y[j] > 0.0);
            vec![pos, neg]
        }
        None => vec![(0..m).collect()],
    };
    let mut assignment = vec![0; m];
    let mut next = 0;
    for mut group in groups {
        group.shuffle(&mut rng);
        for j in group {
            assignment[j] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub mu_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    /// Used only when `kernel_layer` is set.
    pub gamma_grid: Vec<f64>,
    pub variant: Variant,
    pub kernel_layer: bool,
    pub standardize: bool,
    pub seed: u64,
    pub max_pairs: usize,
    /// Worker threads; 0 picks the default.
    #[serde(skip)]
    pub threads: usize,
}

impl CvConfig {
    pub fn new(variant: Variant, folds: usize, seed: u64) -> Self {
        CvConfig {
            folds,
            mu_grid: crate::mincq::default_mu_grid(),
            beta_grid: crate::ranking::default_beta_grid(),
            gamma_grid: Vec::new(),
            variant,
            kernel_layer: false,
            standardize: false,
            seed,
            max_pairs: DEFAULT_MAX_PAIRS,
            threads: 0,
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        let check = |name: &str, grid: &[f64]| {
            if grid.is_empty() {
                return Err(Error::InvalidValue(format!("{name} grid is empty")));
            }
            if let Some(v) = grid.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidValue(format!("{name} grid entry {v} is not positive")));
            }
            Ok(())
        };
        check("mu", &self.mu_grid)?;
        if self.variant != Variant::Plain {
            check("beta", &self.beta_grid)?;
        }
        if self.kernel_layer {
            check("gamma", &self.gamma_grid)?;
        }
        if self.folds < 2 {
            return Err(Error::InvalidValue(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.folds > m {
            return Err(Error::TooManyFolds { folds: self.folds, m });
        }
        Ok(())
    }

    /// Cells ordered by (β, μ, gamma) ascending, so earlier cells win ties.
    fn cells(&self) -> Vec<CellParams> {
        let sorted = |grid: &[f64]| {
            let mut g = grid.to_vec();
            g.sort_by(f64::total_cmp);
            g.dedup();
            g
        };
        let betas: Vec<Option<f64>> = match self.variant {
            Variant::Plain => vec![None],
            _ => sorted(&self.beta_grid).into_iter().map(Some).collect(),
        };
        let gammas: Vec<Option<f64>> = if self.kernel_layer {
            sorted(&self.gamma_grid).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        let mus = sorted(&self.mu_grid);
        let mut cells = Vec::new();
        for beta in &betas {
            for mu in &mus {
                for gamma in &gammas {
                    cells.push(CellParams {
                        mu: *mu,
                        beta: *beta,
                        gamma: *gamma,
                    });
                }
            }
        }
        cells
    }

    pub fn fit_config(&self, params: &CellParams) -> FitConfig {
        FitConfig {
            variant: self.variant,
            mu: params.mu,
            beta: params.beta,
            gamma: params.gamma,
            standardize: self.standardize,
            max_pairs: self.max_pairs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub mu: f64,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub params: CellParams,
    /// `None` when the cell was skipped.
    pub mean_map: Option<f64>,
    /// Population standard deviation over scored folds.
    pub std_map: Option<f64>,
    /// Held-out AP per fold; `None` for folds without positives.
    pub fold_ap: Vec<Option<f64>>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: CellParams,
    pub best_mean_map: f64,
    pub cells: Vec<CellResult>,
    pub fold_assignment: Vec<usize>,
    pub config: CvConfig,
}

/// Held-out AP of one cell on one fold. `Ok(None)`: fold has no positives.
fn evaluate(
    sample: &LabeledSample,
    assignment: &[usize],
    fold: usize,
    cfg: &FitConfig,
) -> Result<Option<f64>> {
    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..sample.num_examples()).partition(|&j| assignment[j] == fold);
    let held_out = sample.select_rows(&test);
    if held_out.positives().is_empty() {
        return Ok(None);
    }
    let model = fit(&sample.select_rows(&train), cfg)?;
    let scores = model.scores(held_out.scores())?;
    average_precision(&scores, held_out.labels()).map(Some)
}

/// Checks that `params.mu` is reachable on the full sample's voters.
fn full_sample_feasible(sample: &LabeledSample, cfg: &FitConfig) -> Result<()> {
    let standardized = if cfg.standardize {
        Standardizer::fit(sample.scores()).apply(sample.scores())?
    } else {
        sample.scores().clone()
    };
    let voters = match cfg.gamma {
        Some(g) => rbf_expand(&RbfKernelLayer::from_sample(g, &standardized)?, &standardized)?,
        None => standardized,
    };
    let mats = assemble(&sample.with_scores(voters)?, cfg.mu)?;
    let max = mats.max_first_moment();
    if cfg.mu > max {
        return Err(Error::MarginInfeasible {
            mu: cfg.mu,
            max_first_moment: max,
        });
    }
    Ok(())
}

fn run_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

pub fn grid_search_cv(sample: &LabeledSample, config: &CvConfig) -> Result<CvResult> {
    let m = sample.num_examples();
    config.validate(m)?;
    let assignment = kfold_split(m, config.folds, config.seed, Some(sample.labels()))?;
    let cells = config.cells();
    let folds = config.folds;

    let (feasible, outcomes): (Vec<Result<()>>, Vec<Result<Option<f64>>>) =
        run_pool(config.threads, || {
            let feasible = cells
                .par_iter()
                .map(|c| full_sample_feasible(sample, &config.fit_config(c)))
                .collect();
            let outcomes = (0..cells.len() * folds)
                .into_par_iter()
                .map(|t| evaluate(sample, &assignment, t % folds, &config.fit_config(&cells[t / folds])))
                .collect();
            (feasible, outcomes)
        });

    let mut results = Vec::with_capacity(cells.len());
    for (c, params) in cells.iter().enumerate() {
        let per_fold = &outcomes[c * folds..(c + 1) * folds];
        let failure = feasible[c]
            .as_ref()
            .err()
            .or_else(|| per_fold.iter().find_map(|r| r.as_ref().err()));
        let fold_ap: Vec<Option<f64>> = per_fold
            .iter()
            .map(|r| r.as_ref().ok().copied().flatten())
            .collect();
        let scored: Vec<f64> = fold_ap.iter().flatten().copied().collect();
        let mut cell = CellResult {
            params: *params,
            mean_map: None,
            std_map: None,
            fold_ap,
            skipped: None,
        };
        if let Some(e) = failure {
            cell.skipped = Some(e.to_string());
        } else if scored.is_empty() {
            cell.skipped = Some("no fold contains a positive example".into());
        } else {
            let k = scored.len() as f64;
            let mean = scored.iter().sum::<f64>() / k;
            let var = scored.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k;
            cell.mean_map = Some(mean);
            cell.std_map = Some(var.sqrt());
        }
        results.push(cell);
    }

    let mut best: Option<(usize, f64)> = None;
    for (c, cell) in results.iter().enumerate() {
        if let Some(mean) = cell.mean_map {
            if best.is_none_or(|(_, b)| mean > b) {
                best = Some((c, mean));
            }
        }
    }
    let (best_idx, best_mean_map) = best.ok_or(Error::NoFeasibleCell)?;
    Ok(CvResult {
        best: cells[best_idx],
        best_mean_map,
        cells: results,
        fold_assignment: assignment,
        config: config.clone(),
    })
}

/// Trains the selected cell on the full sample.
pub fn refit(sample: &LabeledSample, config: &CvConfig, result: &CvResult) -> Result<FittedModel> {
    fit(sample, &config.fit_config(&result.best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voters::ScoreMatrix;
    use rand::{Rng, SeedableRng};

    fn random_sample(seed: u64, m: usize, n: usize) -> LabeledSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<f64> = (0..m).map(|_| if rng.random::<f64>() < 0.35 { 1.0 } else { -1.0 }).collect();
        labels[0] = 1.0;
        labels[1] = 1.0;
        labels[2] = -1.0;
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|y| (0..n).map(|i| 0.3 * y * (i + 1) as f64 / n as f64 + rng.random_range(-1.0..1.0)).collect())
            .collect();
        LabeledSample::new(ScoreMatrix::from_rows(&rows).unwrap(), labels).unwrap()
    }

    #[test]
    fn equal_fold_sizes() {
        let a = kfold_split(10, 5, 7, None).unwrap();
        for f in 0..5 {
            assert_eq!(a.iter().filter(|&&x| x == f).count(), 2);
        }
        assert_eq!(a, kfold_split(10, 5, 7, None).unwrap());
        assert_ne!(a, kfold_split(10, 5, 8, None).unwrap());
    }

    #[test]
    fn stratified_split_three_positives() {
        let labels = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        for seed in 0..20 {
            let a = kfold_split(10, 2, seed, Some(&labels)).unwrap();
            let mut pos = [0; 2];
            for j in 0..3 {
                pos[a[j]] += 1;
            }
            pos.sort();
            assert_eq!(pos, [1, 2]);
            assert_eq!(a.iter().filter(|&&x| x == 0).count(), 5);
        }
    }

    #[test]
    fn split_errors() {
        assert_eq!(kfold_split(3, 4, 0, None), Err(Error::TooManyFolds { folds: 4, m: 3 }));
        assert!(kfold_split(3, 1, 0, None).is_err());
    }

    #[test]
    fn single_cell_grid() {
        let s = random_sample(1, 40, 3);
        let mut cfg = CvConfig::new(Variant::Plain, 3, 5);
        cfg.mu_grid = vec![0.01];
        let r = grid_search_cv(&s, &cfg).unwrap();
        assert_eq!(r.best.mu, 0.01);
        assert_eq!(r.cells.len(), 1);
        assert_eq!(Some(r.best_mean_map), r.cells[0].mean_map);
    }

    #[test]
    fn infeasible_margin_is_skipped() {
        let s = random_sample(2, 40, 3);
        let mut cfg = CvConfig::new(Variant::Plain, 3, 5);
        cfg.mu_grid = vec![0.01, 50.0];
        let r = grid_search_cv(&s, &cfg).unwrap();
        assert_eq!(r.best.mu, 0.01);
        assert!(r.cells[1].skipped.is_some());
        assert_eq!(r.cells[1].mean_map, None);
        cfg.mu_grid = vec![50.0];
        assert_eq!(grid_search_cv(&s, &cfg), Err(Error::NoFeasibleCell));
    }

    #[test]
    fn matches_sequential_rerun() {
        let s = random_sample(3, 60, 3);
        let mut cfg = CvConfig::new(Variant::Pwav, 3, 11);
        cfg.mu_grid = vec![0.005, 0.02];
        cfg.beta_grid = vec![0.1, 10.0];
        cfg.threads = 4;
        let parallel = grid_search_cv(&s, &cfg).unwrap();
        let assignment = kfold_split(60, 3, 11, Some(s.labels())).unwrap();
        assert_eq!(parallel.fold_assignment, assignment);
        let mut best: Option<(CellParams, f64)> = None;
        for beta in [0.1, 10.0] {
            for mu in [0.005, 0.02] {
                let fc = FitConfig::new(Variant::Pwav, mu).with_beta(beta);
                let aps: Vec<f64> = (0..3)
                    .filter_map(|f| evaluate(&s, &assignment, f, &fc).unwrap())
                    .collect();
                let mean = aps.iter().sum::<f64>() / aps.len() as f64;
                if best.is_none_or(|(_, b)| mean > b) {
                    best = Some((CellParams { mu, beta: Some(beta), gamma: None }, mean));
                }
            }
        }
        let (params, mean) = best.unwrap();
        assert_eq!(parallel.best, params);
        assert_eq!(parallel.best_mean_map, mean);
        cfg.threads = 1;
        let serial = grid_search_cv(&s, &cfg).unwrap();
        assert_eq!(serial.cells, parallel.cells);
        assert_eq!(serial.best, parallel.best);
    }

    #[test]
    fn kernel_grid_and_refit() {
        let s = random_sample(4, 30, 2);
        let mut cfg = CvConfig::new(Variant::Plain, 3, 2);
        cfg.kernel_layer = true;
        cfg.mu_grid = vec![0.001];
        cfg.gamma_grid = vec![0.5, 2.0];
        let r = grid_search_cv(&s, &cfg).unwrap();
        assert_eq!(r.cells.len(), 2);
        let model = refit(&s, &cfg, &r).unwrap();
        assert_eq!(model.kernel.as_ref().map(|k| k.gamma()), r.best.gamma);
    }
}
