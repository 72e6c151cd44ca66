use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use mincq::baselines::{fit_h_best, fit_map_weighted, BaselineVote};
use mincq::error::{Error, Result};
use mincq::io::{
    load_model, read_scores_csv, save_model, to_canonical_json, write_scores_csv, ModelFile,
    ScoreData, TrainingInfo,
};
use mincq::metrics::{average_precision, c_bound_of_scores, risk_of_scores};
use mincq::mincq::sign;
use mincq::model_selection::{grid_search_cv, refit, CvConfig};
use mincq::pipeline::{fit, FitConfig, FittedModel, Variant};
use mincq::qp::{QpError, QpStatus};
use mincq::ranking::DEFAULT_MAX_PAIRS;
use mincq::synth::{generate, generate_hard_positives, HardPositiveSpec, SynthSpec};
use mincq::voters::{default_gamma_grid, ScoreMatrix};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mincq", version, about = "Majority-vote late fusion of classifier scores")]
pub struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model at fixed hyperparameters.
    Fit(FitArgs),
    /// Select hyperparameters by cross-validated MAP, then train.
    Cv(CvArgs),
    /// Write the score and label of every row.
    Predict(PredictArgs),
    /// Risk, AP and C-bound of a model on labeled scores.
    Eval(ModelScoresArgs),
    /// Evaluate a reference fusion rule.
    Baseline(BaselineArgs),
    /// C-bound report of a model on labeled scores.
    Bound(ModelScoresArgs),
    /// Generate a synthetic labeled score file.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Plain,
    Pw,
    Pwav,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Plain => Variant::Plain,
            VariantArg::Pw => Variant::Pw,
            VariantArg::Pwav => Variant::Pwav,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long)]
    pub mu: f64,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Use RBF kernel voters anchored at the training rows.
    #[arg(long, requires = "gamma")]
    pub kernel: bool,
    #[arg(long, requires = "kernel")]
    pub gamma: Option<f64>,
    /// Standardize score columns before fusion.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_PAIRS)]
    pub max_pairs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_enum)]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',')]
    pub mu_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub beta_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', requires = "kernel")]
    pub gamma_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub kernel: bool,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_PAIRS)]
    pub max_pairs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelScoresArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineKind {
    Hbest,
    Margin,
    Sum,
    Mapw,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub kind: BaselineKind,
    /// Labeled scores used to fit `hbest` and `mapw`, and evaluated unless `--test` is given.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Optional per-row predictions.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Common-cause flip model.
    Flip,
    /// Precise anchor voter that misses some positives.
    Hard,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Flip)]
    pub kind: SynthKind,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 5)]
    pub voters: usize,
    /// Per-voter error rate, or a comma-separated list (flip model).
    #[arg(long, value_delimiter = ',', default_value = "0.3")]
    pub error_rate: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub correlation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub positive_ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::MarginInfeasible { .. } | Error::NoFeasibleCell => EXIT_INFEASIBLE,
        Error::SolverFailed {
            status: QpStatus::Infeasible,
            ..
        } => EXIT_INFEASIBLE,
        Error::SolverFailed { .. } | Error::Qp(QpError::OracleTooLarge(_)) => EXIT_OTHER,
        Error::Qp(QpError::InvalidProblem(_)) => EXIT_OTHER,
        _ => EXIT_INPUT,
    }
}

pub fn error_json(e: &Error) -> Value {
    let mut v = json!({ "error": e.to_string(), "exit_code": exit_code(e) });
    if let Error::MarginInfeasible {
        max_first_moment, ..
    } = e
    {
        v["max_first_moment"] = json!(max_first_moment);
    }
    v
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn emit(json_out: bool, value: &Value) -> Result<()> {
    if json_out {
        print!("{}", to_canonical_json(value)?);
    } else if let Some(obj) = value.as_object() {
        for (k, v) in obj {
            println!("{k}: {v}");
        }
    }
    Ok(())
}

fn save(model: &FittedModel, path: &Path, m: usize, seed: Option<u64>) -> Result<()> {
    let info = TrainingInfo {
        m,
        n: model.input_names.len(),
        seed,
        timestamp: now(),
    };
    save_model(&ModelFile::from_model(model, info), path)
}

fn load(path: &Path) -> Result<FittedModel> {
    load_model(path)?.into_model()
}

fn evaluation(scores: &[f64], labels: &[f64]) -> Result<Value> {
    let report = c_bound_of_scores(scores, labels);
    Ok(json!({
        "m": scores.len(),
        "risk": risk_of_scores(scores, labels),
        "average_precision": average_precision(scores, labels)?,
        "c_bound": serde_json::to_value(report).map_err(|e| Error::Schema(e.to_string()))?,
    }))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => {
            let sample = read_scores_csv(&a.scores)?.into_labeled()?;
            let cfg = FitConfig {
                variant: a.variant.into(),
                mu: a.mu,
                beta: a.beta,
                gamma: a.gamma.filter(|_| a.kernel),
                standardize: a.standardize,
                max_pairs: a.max_pairs,
            };
            let model = fit(&sample, &cfg)?;
            save(&model, &a.out, sample.num_examples(), None)?;
            emit(
                cli.json,
                &json!({
                    "model": a.out.display().to_string(),
                    "variant": cfg.variant.as_str(),
                    "vote_weights": model.vote.vote_weights,
                }),
            )
        }
        Command::Cv(a) => {
            let sample = read_scores_csv(&a.scores)?.into_labeled()?;
            let mut cfg = CvConfig::new(a.variant.into(), a.folds, a.seed);
            if let Some(g) = a.mu_grid {
                cfg.mu_grid = g;
            }
            if let Some(g) = a.beta_grid {
                cfg.beta_grid = g;
            }
            cfg.kernel_layer = a.kernel;
            cfg.gamma_grid = match a.gamma_grid {
                Some(g) => g,
                None if a.kernel => default_gamma_grid(sample.scores()),
                None => Vec::new(),
            };
            cfg.standardize = a.standardize;
            cfg.max_pairs = a.max_pairs;
            cfg.threads = threads_from_env()?;
            let result = grid_search_cv(&sample, &cfg)?;
            std::fs::write(&a.report, to_canonical_json(&result)?)?;
            let model = refit(&sample, &cfg, &result)?;
            save(&model, &a.out, sample.num_examples(), Some(a.seed))?;
            emit(
                cli.json,
                &json!({
                    "best": serde_json::to_value(result.best).map_err(|e| Error::Schema(e.to_string()))?,
                    "best_mean_map": result.best_mean_map,
                    "model": a.out.display().to_string(),
                    "report": a.report.display().to_string(),
                }),
            )
        }
        Command::Predict(a) => {
            let model = load(&a.model)?;
            let data = read_scores_csv(&a.scores)?;
            let scores = model.scores(data.scores())?;
            let labels: Vec<f64> = scores.iter().copied().map(sign).collect();
            let table = ScoreMatrix::new(
                nalgebra::DMatrix::from_fn(scores.len(), 1, |j, _| scores[j]),
                vec!["score".into()],
            )?;
            write_scores_csv(&a.out, &table, Some(&labels))?;
            emit(cli.json, &json!({ "rows": scores.len(), "out": a.out.display().to_string() }))
        }
        Command::Eval(a) => {
            let model = load(&a.model)?;
            let sample = read_scores_csv(&a.scores)?.into_labeled()?;
            let scores = model.scores(sample.scores())?;
            // evaluation results always go to stdout as JSON
            print!("{}", to_canonical_json(&evaluation(&scores, sample.labels())?)?);
            Ok(())
        }
        Command::Bound(a) => {
            let model = load(&a.model)?;
            let sample = read_scores_csv(&a.scores)?.into_labeled()?;
            let scores = model.scores(sample.scores())?;
            let report = c_bound_of_scores(&scores, sample.labels());
            emit(
                cli.json,
                &serde_json::to_value(report).map_err(|e| Error::Schema(e.to_string()))?,
            )
        }
        Command::Baseline(a) => {
            let train = read_scores_csv(&a.scores)?;
            let vote = match a.kind {
                BaselineKind::Hbest => fit_h_best(&train.clone().into_labeled()?)?,
                BaselineKind::Mapw => fit_map_weighted(&train.clone().into_labeled()?)?,
                BaselineKind::Margin => BaselineVote::HighestMargin,
                BaselineKind::Sum => BaselineVote::Sum,
            };
            let test = match &a.test {
                Some(p) => read_scores_csv(p)?,
                None => train,
            };
            let scores = vote.scores(test.scores())?;
            if let Some(out) = &a.out {
                let labels: Vec<f64> = scores.iter().copied().map(sign).collect();
                let table = ScoreMatrix::new(
                    nalgebra::DMatrix::from_fn(scores.len(), 1, |j, _| scores[j]),
                    vec!["score".into()],
                )?;
                write_scores_csv(out, &table, Some(&labels))?;
            }
            let mut value = json!({
                "baseline": serde_json::to_value(&vote).map_err(|e| Error::Schema(e.to_string()))?,
            });
            if let ScoreData::Labeled(s) = &test {
                value["evaluation"] = evaluation(&scores, s.labels())?;
            }
            emit(cli.json, &value)
        }
        Command::Synth(a) => {
            let sample = match a.kind {
                SynthKind::Flip => {
                    let rates = match a.error_rate.as_slice() {
                        [r] => vec![*r; a.voters],
                        many => many.to_vec(),
                    };
                    generate(&SynthSpec {
                        m: a.m,
                        error_rates: rates,
                        correlation: a.correlation,
                        positive_ratio: a.positive_ratio,
                        seed: a.seed,
                    })?
                }
                SynthKind::Hard => {
                    let mut spec = HardPositiveSpec::new(a.m, a.seed);
                    spec.n_voters = a.voters;
                    spec.positive_ratio = a.positive_ratio;
                    generate_hard_positives(&spec)?
                }
            };
            write_scores_csv(&a.out, sample.scores(), Some(sample.labels()))?;
            emit(
                cli.json,
                &json!({ "m": sample.num_examples(), "voters": sample.num_voters(), "out": a.out.display().to_string() }),
            )
        }
    }
}

fn threads_from_env() -> Result<usize> {
    match std::env::var("MINCQ_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidValue(format!("MINCQ_THREADS='{v}' is not a count"))),
        Err(_) => Ok(0),
    }
}
