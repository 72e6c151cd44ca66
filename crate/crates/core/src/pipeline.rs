//! End-to-end fusion model: optional standardization, optional kernel layer,
//! then a MinCq-family solve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mincq::{sign, solve_mincq, to_majority_vote, MajorityVote, QuasiUniformWeights};
use crate::ranking::{solve_ranking, RankingVariant, DEFAULT_MAX_PAIRS};
use crate::voters::{rbf_expand, LabeledSample, RbfKernelLayer, ScoreMatrix, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Pw,
    Pwav,
}

impl Variant {
    pub fn ranking(self) -> Option<RankingVariant> {
        match self {
            Variant::Plain => None,
            Variant::Pw => Some(RankingVariant::Pw),
            Variant::Pwav => Some(RankingVariant::Pwav),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Pw => "pw",
            Variant::Pwav => "pwav",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "pw" => Ok(Variant::Pw),
            "pwav" => Ok(Variant::Pwav),
            other => Err(Error::InvalidValue(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub variant: Variant,
    pub mu: f64,
    /// Required by the ranking variants, ignored by `Plain`.
    pub beta: Option<f64>,
    /// Enables the kernel layer with this bandwidth.
    pub gamma: Option<f64>,
    pub standardize: bool,
    /// Guard on `m⁺·m⁻` for `Pw`.
    pub max_pairs: usize,
}

impl FitConfig {
    pub fn new(variant: Variant, mu: f64) -> Self {
        FitConfig {
            variant,
            mu,
            beta: None,
            gamma: None,
            standardize: false,
            max_pairs: DEFAULT_MAX_PAIRS,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = Some(beta);
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub variant: Variant,
    /// Names of the score columns the model consumes.
    pub input_names: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub kernel: Option<RbfKernelLayer>,
    pub weights: QuasiUniformWeights,
    pub vote: MajorityVote,
    pub mu: f64,
    pub beta: Option<f64>,
}

impl FittedModel {
    /// Maps raw input scores to the voter outputs the weights apply to.
    pub fn voter_outputs(&self, scores: &ScoreMatrix) -> Result<ScoreMatrix> {
        if scores.num_voters() != self.input_names.len() {
            return Err(Error::Dimension(format!(
                "model expects {} score columns, got {}",
                self.input_names.len(),
                scores.num_voters()
            )));
        }
        let standardized = match &self.standardizer {
            Some(s) => s.apply(scores)?,
            None => scores.clone(),
        };
        match &self.kernel {
            Some(layer) => rbf_expand(layer, &standardized),
            None => Ok(standardized),
        }
    }

    pub fn scores(&self, scores: &ScoreMatrix) -> Result<Vec<f64>> {
        self.vote.scores(&self.voter_outputs(scores)?)
    }

    pub fn predict(&self, scores: &ScoreMatrix) -> Result<Vec<f64>> {
        Ok(self.scores(scores)?.into_iter().map(sign).collect())
    }
}

pub fn fit(sample: &LabeledSample, config: &FitConfig) -> Result<FittedModel> {
    let standardizer = config.standardize.then(|| Standardizer::fit(sample.scores()));
    let standardized = match &standardizer {
        Some(s) => s.apply(sample.scores())?,
        None => sample.scores().clone(),
    };
    let kernel = match config.gamma {
        Some(gamma) => Some(RbfKernelLayer::from_sample(gamma, &standardized)?),
        None => None,
    };
    let voters = match &kernel {
        Some(layer) => rbf_expand(layer, &standardized)?,
        None => standardized,
    };
    let train = sample.with_scores(voters)?;

    let weights = match config.variant.ranking() {
        None => solve_mincq(&train, config.mu)?,
        Some(variant) => {
            let beta = config.beta.ok_or(Error::InvalidBeta(f64::NAN))?;
            if variant == RankingVariant::Pw {
                let pairs = train.positives().len() * train.negatives().len();
                if pairs > config.max_pairs {
                    return Err(Error::PairsTooLarge {
                        pairs,
                        limit: config.max_pairs,
                    });
                }
            }
            solve_ranking(&train, config.mu, beta, variant)?.weights
        }
    };
    let vote = to_majority_vote(&weights, train.scores().voter_names(), config.mu);
    Ok(FittedModel {
        variant: config.variant,
        input_names: sample.scores().voter_names().to_vec(),
        standardizer,
        kernel,
        weights,
        vote,
        mu: config.mu,
        beta: config.variant.ranking().and(config.beta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{average_precision, zero_one_risk};

    fn sample(rows: &[Vec<f64>], labels: &[f64]) -> LabeledSample {
        LabeledSample::new(ScoreMatrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    fn perfect() -> LabeledSample {
        sample(&[vec![0.9], vec![0.4], vec![-0.3], vec![-0.8]], &[1.0, 1.0, -1.0, -1.0])
    }

    #[test]
    fn perfect_voter_fits_exactly() {
        for variant in [Variant::Plain, Variant::Pw, Variant::Pwav] {
            let cfg = FitConfig::new(variant, 0.1).with_beta(1.0);
            let model = fit(&perfect(), &cfg).unwrap();
            let s = perfect();
            let scores = model.scores(s.scores()).unwrap();
            assert_eq!(average_precision(&scores, s.labels()).unwrap(), 1.0);
            assert_eq!(zero_one_risk(&model.vote, &s).unwrap(), 0.0);
            assert_eq!(model.beta.is_some(), variant != Variant::Plain);
        }
    }

    #[test]
    fn ranking_needs_beta() {
        let cfg = FitConfig::new(Variant::Pwav, 0.1);
        assert!(matches!(fit(&perfect(), &cfg), Err(Error::InvalidBeta(_))));
    }

    #[test]
    fn pair_guard() {
        let mut cfg = FitConfig::new(Variant::Pw, 0.1).with_beta(1.0);
        cfg.max_pairs = 3;
        assert_eq!(
            fit(&perfect(), &cfg),
            Err(Error::PairsTooLarge { pairs: 4, limit: 3 })
        );
        cfg.variant = Variant::Pwav;
        assert!(fit(&perfect(), &cfg).is_ok());
    }

    #[test]
    fn kernel_and_standardized_pipeline() {
        let s = sample(
            &[vec![2.0, 1.0], vec![1.5, 0.2], vec![-1.0, -0.5], vec![-2.0, 0.1], vec![0.7, 0.9]],
            &[1.0, 1.0, -1.0, -1.0, 1.0],
        );
        let mut cfg = FitConfig::new(Variant::Plain, 0.01).with_gamma(0.5);
        cfg.standardize = true;
        let model = fit(&s, &cfg).unwrap();
        assert_eq!(model.vote.vote_weights.len(), 5);
        assert_eq!(model.vote.voter_names[0], "k1");
        let outputs = model.voter_outputs(s.scores()).unwrap();
        // each support point has distance zero to itself
        for j in 0..5 {
            assert_eq!(outputs.values()[(j, j)], 1.0);
        }
        assert!(model.scores(&ScoreMatrix::from_rows(&[vec![1.0]]).unwrap()).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::Plain, Variant::Pw, Variant::Pwav] {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("mincq".parse::<Variant>().is_err());
    }
}
