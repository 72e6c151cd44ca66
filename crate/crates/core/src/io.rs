//! CSV score files and JSON model files.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mincq::{MajorityVote, QuasiUniformWeights};
use crate::pipeline::{FittedModel, Variant};
use crate::voters::{LabeledSample, RbfKernelLayer, ScoreMatrix, Standardizer};

pub const LABEL_COLUMN: &str = "label";
pub const SCHEMA_VERSION: u32 = 1;

/// Contents of a score file, with or without a `label` column.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreData {
    Labeled(LabeledSample),
    Unlabeled(ScoreMatrix),
}

impl ScoreData {
    pub fn scores(&self) -> &ScoreMatrix {
        match self {
            ScoreData::Labeled(s) => s.scores(),
            ScoreData::Unlabeled(s) => s,
        }
    }

    pub fn into_labeled(self) -> Result<LabeledSample> {
        match self {
            ScoreData::Labeled(s) => Ok(s),
            ScoreData::Unlabeled(_) => Err(Error::Schema(format!("missing '{LABEL_COLUMN}' column"))),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

pub fn read_scores_csv(path: &Path) -> Result<ScoreData> {
    read_scores(File::open(path).map_err(|e| io_error(path, e))?)
}

/// Rows are numbered from 1, excluding the header.
pub fn read_scores<R: Read>(reader: R) -> Result<ScoreData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    for (i, h) in header.iter().enumerate() {
        if header[..i].contains(h) {
            return Err(Error::Schema(format!("duplicate column '{h}'")));
        }
    }
    let label_col = header.iter().position(|h| h == LABEL_COLUMN);
    let names: Vec<String> = header.iter().filter(|h| *h != LABEL_COLUMN).cloned().collect();
    if names.is_empty() {
        return Err(Error::Schema("no score columns".into()));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut m = 0;
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { len, expected_len, .. } => Error::Schema(format!(
                "row {row} has {len} fields, expected {expected_len}"
            )),
            _ => Error::Schema(format!("row {row}: {e}")),
        })?;
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column: header[c].clone(),
                value: field.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidValue(format!(
                    "row {row}, column '{}': non-finite value {field}",
                    header[c]
                )));
            }
            if Some(c) == label_col {
                labels.push(match v {
                    1.0 => 1.0,
                    -1.0 | 0.0 => -1.0,
                    _ => {
                        return Err(Error::InvalidValue(format!(
                            "row {row}: label {field} is not in {{-1, 0, 1}}"
                        )))
                    }
                });
            } else {
                values.push(v);
            }
        }
        m += 1;
    }
    if m == 0 {
        return Err(Error::EmptyInput);
    }
    let matrix = nalgebra::DMatrix::from_row_slice(m, names.len(), &values);
    let scores = ScoreMatrix::new(matrix, names)?;
    match label_col {
        Some(_) => Ok(ScoreData::Labeled(LabeledSample::new(scores, labels)?)),
        None => Ok(ScoreData::Unlabeled(scores)),
    }
}

pub fn write_scores<W: Write>(writer: W, scores: &ScoreMatrix, labels: Option<&[f64]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = scores.voter_names().iter().map(String::as_str).collect();
    if labels.is_some() {
        header.push(LABEL_COLUMN);
    }
    let to_io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(to_io)?;
    for j in 0..scores.num_examples() {
        let mut record: Vec<String> = scores.row(j).iter().map(|v| v.to_string()).collect();
        if let Some(y) = labels {
            record.push(y[j].to_string());
        }
        w.write_record(&record).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scores_csv(path: &Path, scores: &ScoreMatrix, labels: Option<&[f64]>) -> Result<()> {
    write_scores(File::create(path).map_err(|e| io_error(path, e))?, scores, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub gamma: f64,
    pub support: Vec<Vec<f64>>,
    pub support_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingInfo {
    pub m: usize,
    pub n: usize,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// On-disk model. `voter_names` are the input score columns; with a kernel
/// layer the weights apply to `kernel.support_names` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub variant: Variant,
    pub voter_names: Vec<String>,
    pub q: Vec<f64>,
    pub vote_weights: Vec<f64>,
    pub mu: f64,
    pub beta: Option<f64>,
    pub kernel: Option<KernelSection>,
    pub standardization: Option<Standardizer>,
    pub training: TrainingInfo,
}

impl ModelFile {
    pub fn from_model(model: &FittedModel, training: TrainingInfo) -> Self {
        ModelFile {
            schema_version: SCHEMA_VERSION,
            variant: model.variant,
            voter_names: model.input_names.clone(),
            q: model.weights.q().to_vec(),
            vote_weights: model.vote.vote_weights.clone(),
            mu: model.mu,
            beta: model.beta,
            kernel: model.kernel.as_ref().map(|k| KernelSection {
                gamma: k.gamma(),
                support: k.support().to_vec(),
                support_names: k.support_names().to_vec(),
            }),
            standardization: model.standardizer.clone(),
            training,
        }
    }

    pub fn into_model(self) -> Result<FittedModel> {
        let kernel = match self.kernel {
            Some(k) => Some(RbfKernelLayer::new(k.gamma, k.support, k.support_names)?),
            None => None,
        };
        let weight_names = match &kernel {
            Some(k) => k.support_names().to_vec(),
            None => self.voter_names.clone(),
        };
        if self.q.len() != weight_names.len() || self.vote_weights.len() != self.q.len() {
            return Err(Error::Schema(format!(
                "{} q entries and {} vote weights for {} voters",
                self.q.len(),
                self.vote_weights.len(),
                weight_names.len()
            )));
        }
        if let Some(k) = &kernel {
            if k.support()[0].len() != self.voter_names.len() {
                return Err(Error::Schema("kernel support width differs from voter count".into()));
            }
        }
        let weights = QuasiUniformWeights::new(self.q)?;
        let consistent = weights
            .vote_weights()
            .iter()
            .zip(&self.vote_weights)
            .all(|(a, b)| (a - b).abs() <= 1e-12);
        if !consistent {
            return Err(Error::Schema("vote weights do not match q".into()));
        }
        Ok(FittedModel {
            variant: self.variant,
            input_names: self.voter_names,
            standardizer: self.standardization,
            kernel,
            weights,
            vote: MajorityVote {
                vote_weights: self.vote_weights,
                voter_names: weight_names,
                margin_mu: self.mu,
            },
            mu: self.mu,
            beta: self.beta,
        })
    }
}

/// Compact JSON whose floats carry 17 significant digits.
struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes with sorted keys and 17-digit floats.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // round-tripping through `Value` sorts object keys
    let tree: Value = serde_json::to_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    tree.serialize(&mut ser).map_err(|e| Error::Schema(e.to_string()))?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

pub fn save_model(model: &ModelFile, path: &Path) -> Result<()> {
    std::fs::write(path, to_canonical_json(model)?).map_err(|e| io_error(path, e))?;
    Ok(())
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let tree: Value = serde_json::from_str(text).map_err(|e| Error::UnsupportedSchema(e.to_string()))?;
    match tree.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(Error::UnsupportedSchema(format!("schema version {v}"))),
        None => return Err(Error::UnsupportedSchema("missing schema_version".into())),
    }
    serde_json::from_value(tree).map_err(|e| Error::UnsupportedSchema(e.to_string()))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    parse_model(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
}
