//! Plaintext evaluation of polynomialized models and agreement metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::PolyActivation;
use crate::cascade::QuadCoeffs;
use crate::matrix::Matrix;
use crate::model_io::{Logits, MlpModel, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("decision vectors differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// A scalar activation applied to every hidden pre-activation.
pub trait ScalarActivation {
    fn eval(&self, u: f64) -> f64;
}

impl ScalarActivation for QuadCoeffs {
    fn eval(&self, u: f64) -> f64 {
        self.apply(u)
    }
}

impl ScalarActivation for PolyActivation {
    fn eval(&self, u: f64) -> f64 {
        self.apply(u)
    }
}

/// Hidden layer with the given activation, then the unchanged head.
pub fn forward_poly<A: ScalarActivation + ?Sized>(model: &MlpModel, act: &A, x: &Matrix) -> Result<Logits> {
    let activated = model.preactivations(x)?.map(|u| act.eval(u));
    Ok(Logits::from_values(model.apply_head(&activated)?))
}

/// Binary decisions against a non-zero threshold (`score > threshold`).
pub fn shifted_decisions(logits: &Logits, threshold: f64) -> Vec<usize> {
    if logits.values.cols() != 1 || threshold == 0.0 {
        return logits.decisions.clone();
    }
    logits
        .values
        .iter_rows()
        .map(|r| usize::from(r[0] > threshold))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n: usize,
    /// Percentage of equal decisions.
    pub agreement: f64,
    pub mismatch_indices: Vec<usize>,
    /// Accuracy of the second decision vector against labels, in percent.
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
}

impl AgreementStats {
    pub fn mismatches(&self) -> usize {
        self.mismatch_indices.len()
    }
}

pub fn percentage(hits: usize, n: usize) -> f64 {
    if n == 0 {
        100.0
    } else {
        100.0 * hits as f64 / n as f64
    }
}

/// Compares decision vectors `a` (reference) and `b` (candidate); the
/// optional labels score `b`.
pub fn evaluate(a: &[usize], b: &[usize], labels: Option<&[usize]>) -> Result<AgreementStats> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mismatch_indices: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
    let n = a.len();
    let (accuracy, macro_f1) = match labels {
        None => (None, None),
        Some(y) => {
            if y.len() != n {
                return Err(EvalError::LengthMismatch {
                    left: n,
                    right: y.len(),
                });
            }
            let hits = (0..n).filter(|&i| y[i] == b[i]).count();
            (Some(percentage(hits, n)), Some(macro_f1(y, b)))
        }
    };
    Ok(AgreementStats {
        n,
        agreement: percentage(n - mismatch_indices.len(), n),
        mismatch_indices,
        accuracy,
        macro_f1,
    })
}

/// Unweighted mean of per-class F1 over every class index seen in either
/// vector; a class with a zero denominator scores 0.
pub fn macro_f1(labels: &[usize], predicted: &[usize]) -> f64 {
    let classes = labels.iter().chain(predicted).copied().max().map_or(0, |c| c + 1);
    if classes == 0 {
        return 0.0;
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&y, &p) in labels.iter().zip(predicted) {
        if y == p {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let total: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    total / classes as f64
}

/// Top-1 minus top-2 score per row; `|score|` for single-output heads.
pub fn top_margins(values: &Matrix) -> Vec<f64> {
    values
        .iter_rows()
        .map(|r| {
            if r.len() == 1 {
                return r[0].abs();
            }
            let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &v in r {
                if v > a {
                    b = a;
                    a = v;
                } else if v > b {
                    b = v;
                }
            }
            a - b
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub decisions: Vec<usize>,
    pub logits: Matrix,
    pub agreement_vs_relu: f64,
    pub mismatch_indices: Vec<usize>,
    pub accuracy_vs_labels: Option<f64>,
    pub macro_f1: Option<f64>,
    pub per_sample_margin: Vec<f64>,
}

/// Runs the polynomialized model on `x` and scores it against the ReLU
/// decisions (and labels, when given).
pub fn eval_record<A: ScalarActivation + ?Sized>(
    model: &MlpModel,
    act: &A,
    x: &Matrix,
    threshold: f64,
    labels: Option<&[usize]>,
) -> Result<EvalRecord> {
    let relu = crate::model_io::forward_relu(model, x)?;
    let poly = forward_poly(model, act, x)?;
    let decisions = shifted_decisions(&poly, threshold);
    let stats = evaluate(&relu.decisions, &decisions, labels)?;
    let shifted = if threshold != 0.0 && poly.values.cols() == 1 {
        poly.values.map(|v| v - threshold)
    } else {
        poly.values.clone()
    };
    Ok(EvalRecord {
        per_sample_margin: top_margins(&shifted),
        decisions,
        logits: poly.values,
        agreement_vs_relu: stats.agreement,
        mismatch_indices: stats.mismatch_indices,
        accuracy_vs_labels: stats.accuracy,
        macro_f1: stats.macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::{forward_relu, HiddenLayer, ModelKind};

    fn preact_binary(a: &[f64], b: f64) -> MlpModel {
        MlpModel::new(
            ModelKind::Binary,
            None,
            Matrix::from_rows(&[a.to_vec()]).unwrap(),
            vec![b],
        )
        .unwrap()
    }

    #[test]
    fn square_coefficients_score() {
        let model = preact_binary(&[1.0, 1.0], 0.0);
        let x = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let q = QuadCoeffs { alpha: 1.0, beta: 0.0, eta: 0.0 };
        assert_eq!(forward_poly(&model, &q, &x).unwrap().values[(0, 0)], 5.0);
    }

    #[test]
    fn identity_matches_relu_on_nonnegative_inputs() {
        let model = preact_binary(&[1.0, 1.0], 1.0);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let q = QuadCoeffs { alpha: 0.0, beta: 1.0, eta: 0.0 };
        let p = forward_poly(&model, &q, &x).unwrap();
        assert_eq!(p.values[(0, 0)], 4.0);
        assert_eq!(p, forward_relu(&model, &x).unwrap());
    }

    #[test]
    fn degree_seven_horner_matches_power_sum() {
        let act = PolyActivation::from_coefficients(
            vec![0.1, -0.3, 0.7, 0.05, -0.02, 0.011, 0.003, -0.0007],
            [-3.0, 3.0],
        );
        let hidden = HiddenLayer {
            weights: Matrix::from_rows(&[vec![1.0, -0.5], vec![0.3, 2.0], vec![-1.2, 0.4]]).unwrap(),
            bias: vec![0.1, -0.2, 0.0],
        };
        let model = MlpModel::new(
            ModelKind::Multiclass,
            Some(hidden.clone()),
            Matrix::from_rows(&[vec![1.0, 0.5, -1.0], vec![-0.2, 0.3, 0.9]]).unwrap(),
            vec![0.0, 0.1],
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![0.7, -1.1], vec![-2.0, 0.25]]).unwrap();
        let got = forward_poly(&model, &act, &x).unwrap();
        for i in 0..2 {
            let y: Vec<f64> = (0..3)
                .map(|j| hidden.weights[(j, 0)] * x[(i, 0)] + hidden.weights[(j, 1)] * x[(i, 1)] + hidden.bias[j])
                .collect();
            for c in 0..2 {
                let mut s = model.head_bias()[c];
                for j in 0..3 {
                    let p: f64 = act.coefficients.iter().enumerate().map(|(k, a)| a * y[j].powi(k as i32)).sum();
                    s += model.head_weights()[(c, j)] * p;
                }
                assert!((got.values[(i, c)] - s).abs() <= 1e-12 * s.abs().max(1.0));
            }
        }
    }

    #[test]
    fn agreement_examples() {
        let s = evaluate(&[0, 1, 1], &[0, 1, 1], None).unwrap();
        assert_eq!(s.agreement, 100.0);
        assert!(s.mismatch_indices.is_empty());
        let s = evaluate(&[0, 1, 1], &[0, 1, 0], None).unwrap();
        assert!((s.agreement - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.mismatch_indices, vec![2]);
        let s = evaluate(&[0, 1, 0, 1], &[0, 1, 0, 1], Some(&[0, 1, 0, 1])).unwrap();
        assert_eq!(s.macro_f1, Some(1.0));
        assert_eq!(s.accuracy, Some(100.0));
        assert!(matches!(
            evaluate(&[0], &[0, 1], None),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn absent_class_scores_zero() {
        // class 1 never labelled, predicted once: its F1 is 0
        let f = macro_f1(&[0, 0, 2], &[0, 1, 2]);
        assert!((f - (2.0 / 3.0 + 0.0 + 1.0) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn margins_are_top_two_gaps() {
        let v = Matrix::from_rows(&[vec![1.0, 3.0, 2.0], vec![5.0, 5.0, 0.0]]).unwrap();
        assert_eq!(top_margins(&v), vec![1.0, 0.0]);
        let b = Matrix::from_rows(&[vec![-2.5]]).unwrap();
        assert_eq!(top_margins(&b), vec![2.5]);
    }
}
