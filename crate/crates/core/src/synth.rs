//! Synthetic voter scores with controllable error rates and diversity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voters::{LabeledSample, ScoreMatrix};

/// Common-cause flip model: with probability `correlation` one shared
/// uniform draw decides every voter's error event, otherwise each voter
/// draws its own. Voter `i` errs when that draw falls below `error_rates[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub m: usize,
    pub error_rates: Vec<f64>,
    pub correlation: f64,
    pub positive_ratio: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn uniform(m: usize, n_voters: usize, error_rate: f64, correlation: f64, seed: u64) -> Self {
        SynthSpec {
            m,
            error_rates: vec![error_rate; n_voters],
            correlation,
            positive_ratio: 0.5,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.error_rates.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(r) = self.error_rates.iter().find(|r| !(0.0..0.5).contains(*r)) {
            return Err(Error::InvalidValue(format!("error rate {r} outside [0, 0.5)")));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::InvalidValue(format!(
                "correlation {} outside [0, 1]",
                self.correlation
            )));
        }
        if !(self.positive_ratio > 0.0 && self.positive_ratio < 1.0) {
            return Err(Error::InvalidValue(format!(
                "positive ratio {} outside (0, 1)",
                self.positive_ratio
            )));
        }
        Ok(())
    }
}

fn draw_label(rng: &mut ChaCha8Rng, ratio: f64) -> f64 {
    if rng.random::<f64>() < ratio {
        1.0
    } else {
        -1.0
    }
}

/// Voter outputs are `±y·u` with `u` uniform on `(0, 1]`.
pub fn generate(spec: &SynthSpec) -> Result<LabeledSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = Vec::with_capacity(spec.m);
    let mut rows = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let y = draw_label(&mut rng, spec.positive_ratio);
        let shared = rng.random::<f64>() < spec.correlation;
        let common: f64 = rng.random();
        let row: Vec<f64> = spec
            .error_rates
            .iter()
            .map(|&rate| {
                let draw = if shared { common } else { rng.random() };
                let u = 1.0 - rng.random::<f64>();
                if draw < rate {
                    -y * u
                } else {
                    y * u
                }
            })
            .collect();
        labels.push(y);
        rows.push(row);
    }
    LabeledSample::new(ScoreMatrix::from_rows(&rows)?, labels)
}

/// One precise anchor voter that misses a fraction of the positives,
/// plus noisier voters that see every positive.
///
/// The anchor scores negatives around `-0.5`, detected positives around
/// `+1` and missed ("hard") positives around `-1`, all with spread
/// `anchor_noise`. The other voters output `base_signal·y + N(0, base_noise²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardPositiveSpec {
    pub m: usize,
    pub n_voters: usize,
    pub positive_ratio: f64,
    pub hard_fraction: f64,
    pub anchor_noise: f64,
    pub base_signal: f64,
    pub base_noise: f64,
    pub seed: u64,
}

impl HardPositiveSpec {
    pub fn new(m: usize, seed: u64) -> Self {
        HardPositiveSpec {
            m,
            n_voters: 5,
            positive_ratio: 1.0 / 3.0,
            hard_fraction: 0.3,
            anchor_noise: 0.2,
            base_signal: 0.4,
            base_noise: 1.0,
            seed,
        }
    }
}

pub fn generate_hard_positives(spec: &HardPositiveSpec) -> Result<LabeledSample> {
    if spec.m == 0 || spec.n_voters == 0 {
        return Err(Error::EmptyInput);
    }
    if !(spec.positive_ratio > 0.0 && spec.positive_ratio < 1.0) {
        return Err(Error::InvalidValue(format!(
            "positive ratio {} outside (0, 1)",
            spec.positive_ratio
        )));
    }
    if !(0.0..=1.0).contains(&spec.hard_fraction) {
        return Err(Error::InvalidValue(format!(
            "hard fraction {} outside [0, 1]",
            spec.hard_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels = Vec::with_capacity(spec.m);
    let mut rows = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let y = draw_label(&mut rng, spec.positive_ratio);
        let hard = y > 0.0 && rng.random::<f64>() < spec.hard_fraction;
        let center = match (y > 0.0, hard) {
            (false, _) => -0.5,
            (true, false) => 1.0,
            (true, true) => -1.0,
        };
        let mut row = Vec::with_capacity(spec.n_voters);
        let z: f64 = StandardNormal.sample(&mut rng);
        row.push(center + spec.anchor_noise * z);
        for _ in 1..spec.n_voters {
            let z: f64 = StandardNormal.sample(&mut rng);
            row.push(spec.base_signal * y + spec.base_noise * z);
        }
        labels.push(y);
        rows.push(row);
    }
    LabeledSample::new(ScoreMatrix::from_rows(&rows)?, labels)
}
