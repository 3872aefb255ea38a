//! Lifted statistics through which a shared quadratic acts on the scores.
//!
//! For a binary head `a, b` and hidden pre-activations `y`, the replaced
//! score is `α Q + β H + (1 - β) b + η B` with `Q = Σ a_j y_j²`,
//! `H = Σ a_j y_j + b` and `B = Σ a_j`. For a `K`-class head each pair of a
//! sample and a non-target class contributes the row
//! `(ΔQ, ΔL, ΔB, Δb)`, with `L` the bias-free linear statistic, so that the
//! pairwise logit margin is `α ΔQ + β ΔL + η ΔB + Δb`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom2d::Point2;
use crate::matrix::Matrix;
use crate::model_io::{MlpModel, ModelError, ModelKind, Result};

/// Planar lift `(Q_i, H_i)` of a binary calibration set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryLiftCloud {
    pub points: Vec<Point2>,
    /// `true` for positive targets.
    pub labels: Vec<bool>,
    /// `B = Σ_j a_j`.
    pub weight_sum: f64,
    pub head_bias: f64,
}

impl BinaryLiftCloud {
    pub fn positive_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i]).collect()
    }

    pub fn negative_indices(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| !self.labels[i]).collect()
    }

    pub fn positives(&self) -> Vec<Point2> {
        self.positive_indices().into_iter().map(|i| self.points[i]).collect()
    }

    pub fn negatives(&self) -> Vec<Point2> {
        self.negative_indices().into_iter().map(|i| self.points[i]).collect()
    }

    /// Replaced binary score of sample `i` evaluated through the lift.
    pub fn score(&self, i: usize, alpha: f64, beta: f64, eta: f64) -> f64 {
        let p = self.points[i];
        alpha * p.x + beta * p.y + (1.0 - beta) * self.head_bias + eta * self.weight_sum
    }
}

/// Per-class statistics `Q_c`, `L_c` (bias-free), `B_c` and head bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub q: Matrix,
    pub l: Matrix,
    pub weight_sums: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl ClassStats {
    pub fn samples(&self) -> usize {
        self.q.rows()
    }

    pub fn classes(&self) -> usize {
        self.weight_sums.len()
    }

    /// Replaced logits `α Q_c + β L_c + η B_c + b_c` for sample `i`.
    pub fn logits(&self, i: usize, alpha: f64, beta: f64, eta: f64) -> Vec<f64> {
        (0..self.classes())
            .map(|c| {
                alpha * self.q[(i, c)] + beta * self.l[(i, c)] + eta * self.weight_sums[c]
                    + self.head_bias[c]
            })
            .collect()
    }
}

/// Rows `(ΔQ, ΔL, ΔB, Δb)` for every `(sample, competitor)` pair.
///
/// Rows of one sample are contiguous, competitors in ascending class order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseLiftSet {
    pub rows: Vec<[f64; 4]>,
    /// `(sample, competitor)` for each row.
    pub index: Vec<(usize, usize)>,
    pub samples: usize,
    pub classes: usize,
}

impl PairwiseLiftSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row range of sample `i`.
    pub fn sample_rows(&self, i: usize) -> std::ops::Range<usize> {
        let per = self.classes - 1;
        i * per..(i + 1) * per
    }

    /// Pairwise logit margin `M_{i,c}(α, β, η)` of a row.
    pub fn margin(&self, row: usize, alpha: f64, beta: f64, eta: f64) -> f64 {
        let z = &self.rows[row];
        alpha * z[0] + beta * z[1] + eta * z[2] + z[3]
    }
}

/// Homogeneous margin `θ̄ · z̄`, summed in coordinate order.
pub fn homogeneous_margin(theta: &[f64; 4], row: &[f64; 4]) -> f64 {
    theta[0] * row[0] + theta[1] * row[1] + theta[2] * row[2] + theta[3] * row[3]
}

pub fn hidden_preacts(model: &MlpModel, x: &Matrix) -> Result<Matrix> {
    model.preactivations(x)
}

pub fn binary_lift(model: &MlpModel, preacts: &Matrix, targets: &[usize]) -> Result<BinaryLiftCloud> {
    if model.kind() != ModelKind::Binary {
        return Err(ModelError::KindMismatch { expected: "binary" });
    }
    check_preacts(model, preacts, targets.len())?;
    let a = model.head_weights().row(0);
    let b = model.head_bias()[0];
    let points = (0..preacts.rows())
        .into_par_iter()
        .map(|i| {
            let y = preacts.row(i);
            let mut q = 0.0;
            let mut h = 0.0;
            for (aj, yj) in a.iter().zip(y) {
                q += aj * yj * yj;
                h += aj * yj;
            }
            Point2::new(q, h + b)
        })
        .collect();
    Ok(BinaryLiftCloud {
        points,
        labels: targets.iter().map(|&t| t == 1).collect(),
        weight_sum: a.iter().sum(),
        head_bias: b,
    })
}

pub fn class_stats(model: &MlpModel, preacts: &Matrix) -> Result<ClassStats> {
    if model.kind() != ModelKind::Multiclass {
        return Err(ModelError::KindMismatch {
            expected: "multiclass",
        });
    }
    check_preacts(model, preacts, preacts.rows())?;
    let k = model.outputs();
    let head = model.head_weights();
    let per_sample: Vec<(Vec<f64>, Vec<f64>)> = (0..preacts.rows())
        .into_par_iter()
        .map(|i| {
            let y = preacts.row(i);
            let mut q = vec![0.0; k];
            let mut l = vec![0.0; k];
            for c in 0..k {
                for (acj, yj) in head.row(c).iter().zip(y) {
                    q[c] += acj * yj * yj;
                    l[c] += acj * yj;
                }
            }
            (q, l)
        })
        .collect();
    let n = preacts.rows();
    let mut q = Matrix::zeros(n, k);
    let mut l = Matrix::zeros(n, k);
    for (i, (qi, li)) in per_sample.into_iter().enumerate() {
        q.row_mut(i).copy_from_slice(&qi);
        l.row_mut(i).copy_from_slice(&li);
    }
    Ok(ClassStats {
        q,
        l,
        weight_sums: (0..k).map(|c| head.row(c).iter().sum()).collect(),
        head_bias: model.head_bias().to_vec(),
    })
}

pub fn pairwise_lifts(stats: &ClassStats, targets: &[usize]) -> Result<PairwiseLiftSet> {
    let k = stats.classes();
    if k < 2 {
        return Err(ModelError::KindMismatch {
            expected: "multiclass",
        });
    }
    if targets.len() != stats.samples() {
        return Err(ModelError::DimensionMismatch {
            context: "targets",
            expected: stats.samples(),
            found: targets.len(),
        });
    }
    if let Some((index, &target)) = targets.iter().enumerate().find(|(_, &t)| t >= k) {
        return Err(ModelError::InvalidTarget {
            index,
            target,
            classes: k,
        });
    }
    let mut rows = Vec::with_capacity(targets.len() * (k - 1));
    let mut index = Vec::with_capacity(rows.capacity());
    for (i, &t) in targets.iter().enumerate() {
        for c in (0..k).filter(|&c| c != t) {
            rows.push([
                stats.q[(i, t)] - stats.q[(i, c)],
                stats.l[(i, t)] - stats.l[(i, c)],
                stats.weight_sums[t] - stats.weight_sums[c],
                stats.head_bias[t] - stats.head_bias[c],
            ]);
            index.push((i, c));
        }
    }
    Ok(PairwiseLiftSet {
        rows,
        index,
        samples: targets.len(),
        classes: k,
    })
}

fn check_preacts(model: &MlpModel, preacts: &Matrix, n: usize) -> Result<()> {
    if preacts.cols() != model.hidden_units() {
        return Err(ModelError::DimensionMismatch {
            context: "pre-activation columns",
            expected: model.hidden_units(),
            found: preacts.cols(),
        });
    }
    if preacts.rows() != n {
        return Err(ModelError::DimensionMismatch {
            context: "targets",
            expected: preacts.rows(),
            found: n,
        });
    }
    Ok(())
}

/// On-disk lift cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftCache {
    Binary(BinaryLiftCloud),
    Pairwise(PairwiseLiftSet),
}

impl LiftCache {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string(self).expect("lift serialization cannot fail");
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::HiddenLayer;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn binary(a: &[f64], b: f64) -> MlpModel {
        MlpModel::new(ModelKind::Binary, None, m(&[a]), vec![b]).unwrap()
    }

    #[test]
    fn preacts_hand_cases() {
        let model = binary(&[1.0, 1.0], 0.0);
        assert_eq!(hidden_preacts(&model, &m(&[&[2.0, 1.0]])).unwrap(), m(&[&[2.0, 1.0]]));

        let model = MlpModel::new(
            ModelKind::Binary,
            Some(HiddenLayer {
                weights: Matrix::identity(2),
                bias: vec![1.0, -1.0],
            }),
            m(&[&[1.0, 1.0]]),
            vec![0.0],
        )
        .unwrap();
        assert_eq!(hidden_preacts(&model, &m(&[&[0.0, 0.0]])).unwrap(), m(&[&[1.0, -1.0]]));

        let model = MlpModel::new(
            ModelKind::Binary,
            Some(HiddenLayer {
                weights: m(&[&[2.0, 3.0]]),
                bias: vec![0.0],
            }),
            m(&[&[1.0]]),
            vec![0.0],
        )
        .unwrap();
        assert_eq!(hidden_preacts(&model, &m(&[&[1.0, 1.0]])).unwrap(), m(&[&[5.0]]));
    }

    #[test]
    fn binary_lift_hand_cases() {
        let cloud = binary_lift(&binary(&[2.0, 1.0], 0.5), &m(&[&[1.0, -1.0]]), &[1]).unwrap();
        assert_eq!(cloud.points[0], Point2::new(3.0, 1.5));
        assert_eq!(cloud.weight_sum, 3.0);

        let cloud = binary_lift(&binary(&[1.0, -1.0], 0.0), &m(&[&[2.0, 1.0]]), &[0]).unwrap();
        assert_eq!(cloud.points[0], Point2::new(3.0, 1.0));
        assert_eq!(cloud.weight_sum, 0.0);
        assert_eq!(cloud.labels, vec![false]);

        let cloud = binary_lift(&binary(&[4.0, -7.0], 0.5), &m(&[&[0.0, 0.0]]), &[1]).unwrap();
        assert_eq!(cloud.points[0], Point2::new(0.0, 0.5));
    }

    fn two_class() -> MlpModel {
        MlpModel::new(
            ModelKind::Multiclass,
            None,
            m(&[&[1.0, 0.0], &[0.0, 1.0]]),
            vec![0.5, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn class_stats_hand_cases() {
        let stats = class_stats(&two_class(), &m(&[&[2.0, 3.0], &[0.0, 0.0]])).unwrap();
        assert_eq!(stats.q.row(0), &[4.0, 9.0]);
        assert_eq!(stats.l.row(0), &[2.0, 3.0]);
        assert_eq!(stats.q.row(1), &[0.0, 0.0]);
        assert_eq!(stats.weight_sums, vec![1.0, 1.0]);

        let model = MlpModel::new(ModelKind::Multiclass, None, m(&[&[1.0, 1.0], &[0.0, 0.0]]), vec![0.0, 0.0])
            .unwrap();
        let stats = class_stats(&model, &m(&[&[1.0, -2.0]])).unwrap();
        assert_eq!((stats.q[(0, 0)], stats.l[(0, 0)]), (5.0, -1.0));
    }

    #[test]
    fn kind_mismatch() {
        assert!(class_stats(&binary(&[1.0], 0.0), &m(&[&[1.0]])).is_err());
        assert!(binary_lift(&two_class(), &m(&[&[1.0, 1.0]]), &[0]).is_err());
    }

    #[test]
    fn pairwise_row_hand_case() {
        let stats = ClassStats {
            q: m(&[&[3.0, 1.0]]),
            l: m(&[&[2.0, 0.0]]),
            weight_sums: vec![1.0, 1.0],
            head_bias: vec![0.5, 0.0],
        };
        let lifts = pairwise_lifts(&stats, &[0]).unwrap();
        assert_eq!(lifts.rows, vec![[2.0, 2.0, 0.0, 0.5]]);
        // identity activation: margin = ΔL + Δb
        assert_eq!(lifts.margin(0, 0.0, 1.0, 0.0), 2.5);
    }

    #[test]
    fn pairwise_row_count_law() {
        let model = MlpModel::new(
            ModelKind::Multiclass,
            None,
            m(&[&[1.0], &[2.0], &[3.0]]),
            vec![0.0; 3],
        )
        .unwrap();
        let stats = class_stats(&model, &m(&[&[1.0], &[2.0]])).unwrap();
        let lifts = pairwise_lifts(&stats, &[0, 2]).unwrap();
        assert_eq!(lifts.len(), 4);
        assert_eq!(lifts.index, vec![(0, 1), (0, 2), (1, 0), (1, 1)]);
        assert_eq!(lifts.sample_rows(1), 2..4);
    }

    #[test]
    fn lift_cache_round_trip() {
        let cloud = binary_lift(&binary(&[2.0, 1.0], 0.5), &m(&[&[1.0, -1.0]]), &[1]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lifts.json");
        let cache = LiftCache::Binary(cloud);
        cache.save(&path).unwrap();
        assert_eq!(LiftCache::load(&path).unwrap(), cache);
    }
}
