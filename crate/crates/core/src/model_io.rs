//! Trained model and dataset files, the ReLU forward pass and its decisions.
//!
//! Model files are JSON with explicit shape fields; matrices are row-major
//! arrays of arrays:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "kind": "binary",
//!   "preactivated": false,
//!   "input_dim": 1,
//!   "hidden_units": 1,
//!   "outputs": 1,
//!   "hidden_weights": [[1.0]],
//!   "hidden_bias": [0.0],
//!   "head_weights": [[1.0]],
//!   "head_bias": [0.0]
//! }
//! ```
//!
//! With `"preactivated": true` the dataset columns are the hidden
//! pre-activations themselves; `input_dim`, `hidden_weights` and
//! `hidden_bias` must then be absent.
//!
//! Datasets are headerless numeric CSV (`.csv`) or JSON (`.json`), either a
//! bare matrix or `{"features": [[...]], "labels": [...]}`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("non-finite weight in {0}")]
    NonFiniteWeight(&'static str),
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("operation requires a {expected} model")]
    KindMismatch { expected: &'static str },
    #[error("target {target} at sample {index} is outside [0, {classes})")]
    InvalidTarget {
        index: usize,
        target: usize,
        classes: usize,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Binary,
    Multiclass,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Binary => "binary",
            ModelKind::Multiclass => "multiclass",
        }
    }
}

/// Hidden affine map `y = W x + b1`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// A trained single-hidden-layer ReLU network with a fixed affine head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    kind: ModelKind,
    hidden: Option<HiddenLayer>,
    head_weights: Matrix,
    head_bias: Vec<f64>,
}

impl MlpModel {
    /// Validating constructor. `hidden = None` builds a preactivated model.
    pub fn new(
        kind: ModelKind,
        hidden: Option<HiddenLayer>,
        head_weights: Matrix,
        head_bias: Vec<f64>,
    ) -> Result<Self> {
        let (k, m) = head_weights.shape();
        if m == 0 {
            return Err(ModelError::Schema("hidden width must be at least 1".into()));
        }
        if k == 0 {
            return Err(ModelError::Schema("head must have at least one output".into()));
        }
        match kind {
            ModelKind::Binary if k != 1 => {
                return Err(ModelError::Schema(format!(
                    "binary model must have exactly one head row, found {k}"
                )))
            }
            ModelKind::Multiclass if k < 2 => {
                return Err(ModelError::Schema(
                    "multiclass model needs at least two head rows".into(),
                ))
            }
            _ => {}
        }
        if head_bias.len() != k {
            return Err(ModelError::Schema(format!(
                "head_bias has {} entries, head has {k} rows",
                head_bias.len()
            )));
        }
        if !head_weights.all_finite() {
            return Err(ModelError::NonFiniteWeight("head_weights"));
        }
        if head_bias.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteWeight("head_bias"));
        }
        if let Some(h) = &hidden {
            if h.weights.rows() != m {
                return Err(ModelError::Schema(format!(
                    "hidden_weights has {} rows, head expects {m} hidden units",
                    h.weights.rows()
                )));
            }
            if h.weights.cols() == 0 {
                return Err(ModelError::Schema("input dimension must be at least 1".into()));
            }
            if h.bias.len() != m {
                return Err(ModelError::Schema(format!(
                    "hidden_bias has {} entries, expected {m}",
                    h.bias.len()
                )));
            }
            if !h.weights.all_finite() {
                return Err(ModelError::NonFiniteWeight("hidden_weights"));
            }
            if h.bias.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteWeight("hidden_bias"));
            }
        }
        Ok(Self {
            kind,
            hidden,
            head_weights,
            head_bias,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn is_preactivated(&self) -> bool {
        self.hidden.is_none()
    }

    pub fn hidden(&self) -> Option<&HiddenLayer> {
        self.hidden.as_ref()
    }

    /// Hidden width `m`.
    pub fn hidden_units(&self) -> usize {
        self.head_weights.cols()
    }

    /// Number of head rows `K` (1 for binary).
    pub fn outputs(&self) -> usize {
        self.head_weights.rows()
    }

    /// Number of decision classes (2 for binary).
    pub fn num_classes(&self) -> usize {
        match self.kind {
            ModelKind::Binary => 2,
            ModelKind::Multiclass => self.outputs(),
        }
    }

    /// Column count a dataset must have for this model.
    pub fn input_width(&self) -> usize {
        self.hidden
            .as_ref()
            .map_or(self.hidden_units(), |h| h.weights.cols())
    }

    pub fn head_weights(&self) -> &Matrix {
        &self.head_weights
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.head_bias
    }

    pub fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_width() {
            return Err(ModelError::DimensionMismatch {
                context: "dataset columns",
                expected: self.input_width(),
                found: x.cols(),
            });
        }
        Ok(())
    }

    /// Hidden pre-activations `y[i, j] = W[j] . x_i + b1[j]` (the input itself
    /// when preactivated).
    pub fn preactivations(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let Some(h) = &self.hidden else {
            return Ok(x.clone());
        };
        let m = self.hidden_units();
        let data: Vec<f64> = (0..x.rows())
            .into_par_iter()
            .flat_map_iter(|i| {
                let xi = x.row(i);
                (0..m).map(move |j| dot(h.weights.row(j), xi) + h.bias[j])
            })
            .collect();
        Ok(Matrix::from_flat(x.rows(), m, data))
    }

    /// Applies the fixed head to already-activated hidden outputs.
    pub fn apply_head(&self, activated: &Matrix) -> Result<Matrix> {
        if activated.cols() != self.hidden_units() {
            return Err(ModelError::DimensionMismatch {
                context: "hidden outputs",
                expected: self.hidden_units(),
                found: activated.cols(),
            });
        }
        let k = self.outputs();
        let data: Vec<f64> = (0..activated.rows())
            .into_par_iter()
            .flat_map_iter(|i| {
                let hi = activated.row(i);
                (0..k).map(move |c| dot(self.head_weights.row(c), hi) + self.head_bias[c])
            })
            .collect();
        Ok(Matrix::from_flat(activated.rows(), k, data))
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            schema_version: Some(MODEL_SCHEMA_VERSION),
            kind: Some(self.kind),
            preactivated: Some(self.is_preactivated()),
            input_dim: self.hidden.as_ref().map(|h| h.weights.cols()),
            hidden_units: Some(self.hidden_units()),
            outputs: Some(self.outputs()),
            hidden_weights: self.hidden.as_ref().map(|h| h.weights.clone()),
            hidden_bias: self.hidden.as_ref().map(|h| h.bias.clone()),
            head_weights: Some(self.head_weights.clone()),
            head_bias: Some(self.head_bias.clone()),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        file.into_model()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    schema_version: Option<u32>,
    kind: Option<ModelKind>,
    #[serde(default)]
    preactivated: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_dim: Option<usize>,
    hidden_units: Option<usize>,
    outputs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_weights: Option<Matrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_bias: Option<Vec<f64>>,
    head_weights: Option<Matrix>,
    head_bias: Option<Vec<f64>>,
}

fn required<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| ModelError::Schema(format!("missing field `{name}`")))
}

impl ModelFile {
    fn into_model(self) -> Result<MlpModel> {
        if let Some(v) = self.schema_version {
            if v != MODEL_SCHEMA_VERSION {
                return Err(ModelError::Schema(format!("unsupported schema_version {v}")));
            }
        }
        let kind = required(self.kind, "kind")?;
        let preactivated = self.preactivated.unwrap_or(false);
        let m = required(self.hidden_units, "hidden_units")?;
        let k = required(self.outputs, "outputs")?;
        let head_weights = required(self.head_weights, "head_weights")?;
        let head_bias = required(self.head_bias, "head_bias")?;
        if head_weights.shape() != (k, m) {
            return Err(ModelError::Schema(format!(
                "head_weights shape {:?} does not match outputs x hidden_units = ({k}, {m})",
                head_weights.shape()
            )));
        }
        let hidden = if preactivated {
            if self.hidden_weights.is_some() || self.hidden_bias.is_some() || self.input_dim.is_some() {
                return Err(ModelError::Schema(
                    "preactivated model must not carry a hidden block".into(),
                ));
            }
            None
        } else {
            let d = required(self.input_dim, "input_dim")?;
            let weights = required(self.hidden_weights, "hidden_weights")?;
            let bias = required(self.hidden_bias, "hidden_bias")?;
            if weights.shape() != (m, d) {
                return Err(ModelError::Schema(format!(
                    "hidden_weights shape {:?} does not match hidden_units x input_dim = ({m}, {d})",
                    weights.shape()
                )));
            }
            Some(HiddenLayer { weights, bias })
        };
        MlpModel::new(kind, hidden, head_weights, head_bias)
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let text = read_text(path.as_ref())?;
    MlpModel::from_json(&text)
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_json() + "\n").map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Feature matrix with optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DatasetFile {
    Bare(Matrix),
    Object {
        features: Matrix,
        #[serde(default)]
        labels: Option<Vec<usize>>,
    },
}

/// Loads a dataset, choosing CSV or JSON by file extension.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let text = read_text(path)?;
    let ds = match ext.as_deref() {
        Some("json") => parse_dataset_json(&text)?,
        _ => Dataset {
            features: parse_csv_matrix(&text)?,
            labels: None,
        },
    };
    if ds.features.rows() == 0 {
        return Err(ModelError::Schema(format!("{} contains no samples", path.display())));
    }
    if !ds.features.all_finite() {
        return Err(ModelError::Schema(format!("{} contains non-finite values", path.display())));
    }
    if let Some(labels) = &ds.labels {
        if labels.len() != ds.features.rows() {
            return Err(ModelError::DimensionMismatch {
                context: "dataset labels",
                expected: ds.features.rows(),
                found: labels.len(),
            });
        }
    }
    Ok(ds)
}

pub fn parse_dataset_json(text: &str) -> Result<Dataset> {
    let file: DatasetFile =
        serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
    Ok(match file {
        DatasetFile::Bare(features) => Dataset {
            features,
            labels: None,
        },
        DatasetFile::Object { features, labels } => Dataset { features, labels },
    })
}

pub fn parse_csv_matrix(text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ModelError::Schema(format!("csv: {e}")))?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| {
                    ModelError::Schema(format!("csv row {}: `{field}` is not a number", line + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Matrix::from_rows(&rows).ok_or_else(|| ModelError::Schema("csv rows have unequal lengths".into()))
}

/// Loads integer labels: a JSON array or a one-column CSV.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        return serde_json::from_str(&text).map_err(|e| ModelError::Schema(e.to_string()));
    }
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<usize>()
                .map_err(|_| ModelError::Schema(format!("label `{l}` is not a class index")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    ReluDecisions,
    Supplied,
}

/// Calibration features plus the decisions a replacement must preserve.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSet {
    pub features: Matrix,
    pub targets: Vec<usize>,
    pub target_source: TargetSource,
}

impl CalibrationSet {
    /// Targets are the trained ReLU model's own decisions.
    pub fn from_relu(model: &MlpModel, features: Matrix) -> Result<Self> {
        let targets = relu_decisions(model, &features)?;
        Ok(Self {
            features,
            targets,
            target_source: TargetSource::ReluDecisions,
        })
    }

    /// Externally supplied targets.
    pub fn with_targets(model: &MlpModel, features: Matrix, targets: Vec<usize>) -> Result<Self> {
        model.check_input(&features)?;
        if features.rows() == 0 {
            return Err(ModelError::Schema("calibration set is empty".into()));
        }
        if targets.len() != features.rows() {
            return Err(ModelError::DimensionMismatch {
                context: "calibration targets",
                expected: features.rows(),
                found: targets.len(),
            });
        }
        let classes = model.num_classes();
        if let Some((index, &target)) = targets.iter().enumerate().find(|(_, &t)| t >= classes) {
            return Err(ModelError::InvalidTarget {
                index,
                target,
                classes,
            });
        }
        Ok(Self {
            features,
            targets,
            target_source: TargetSource::Supplied,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Output scores and their decisions.
///
/// Binary models have one score column; the decision is 1 iff the score is
/// strictly positive. Multiclass decisions take the first maximal logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logits {
    pub values: Matrix,
    pub decisions: Vec<usize>,
}

impl Logits {
    pub fn from_values(values: Matrix) -> Self {
        let decisions = values.iter_rows().map(decide).collect();
        Self { values, decisions }
    }
}

/// Decision for one row of scores.
pub fn decide(scores: &[f64]) -> usize {
    if scores.len() == 1 {
        return usize::from(scores[0] > 0.0);
    }
    let mut best = 0;
    for (c, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = c;
        }
    }
    best
}

pub fn forward_relu(model: &MlpModel, x: &Matrix) -> Result<Logits> {
    let activated = model.preactivations(x)?.map(|v| v.max(0.0));
    Ok(Logits::from_values(model.apply_head(&activated)?))
}

pub fn relu_decisions(model: &MlpModel, x: &Matrix) -> Result<Vec<usize>> {
    if x.rows() == 0 {
        return Err(ModelError::Schema("dataset is empty".into()));
    }
    Ok(forward_relu(model, x)?.decisions)
}
