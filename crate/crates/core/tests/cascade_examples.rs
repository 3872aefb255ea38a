//! Worked cascade examples on small hand-built and seeded models.

mod common;

use quadrelu::cascade::{quantize_and_certify, CascadeOptions, Regime, ThresholdMode};
use quadrelu::model_io::{relu_decisions, CalibrationSet, MlpModel, ModelKind};
use quadrelu::{fit, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn preact(kind: ModelKind, head: &[Vec<f64>], bias: &[f64]) -> MlpModel {
    MlpModel::new(kind, None, Matrix::from_rows(head).unwrap(), bias.to_vec()).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Matrix {
    Matrix::from_flat(n, m, (0..n * m).map(|_| rng.gen_range(-2.0..2.0)).collect())
}

#[test]
fn separable_toy_is_hard_and_exact() {
    let model = preact(ModelKind::Binary, &[vec![1.0, 0.5]], &[-0.2]);
    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.3], vec![2.0, 1.0], vec![-0.5, -1.0]]).unwrap();
    let cal = CalibrationSet::from_relu(&model, x).unwrap();
    let rep = fit(&model, &cal, &CascadeOptions::default()).unwrap();
    assert_eq!(rep.regime, Regime::Hard);
    assert!(rep.exact);
    assert_eq!(rep.cal_mismatches, 0);
    assert_eq!(rep.threshold, 0.0);
    assert!(rep.certificate.unwrap().feasible);
}

#[test]
fn coincident_lifts_with_opposite_targets_leave_hard_regime() {
    let model = preact(ModelKind::Binary, &[vec![1.0, 1.0]], &[0.0]);
    // rows 0 and 1 share a lift point but carry different targets
    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, -1.0], vec![2.0, 2.0]]).unwrap();
    let cal = CalibrationSet::with_targets(&model, x, vec![1, 0, 0, 1]).unwrap();
    let rep = fit(&model, &cal, &CascadeOptions::default()).unwrap();
    assert_ne!(rep.regime, Regime::Hard);
    assert!(!rep.exact);
    assert!(!rep.certificate.as_ref().unwrap().feasible);
    assert!(rep.cal_mismatches >= 1);
    assert!(!rep.selection_trace.is_empty());
}

#[test]
fn full_cap_scan_reproduces_hard_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = preact(ModelKind::Binary, &[vec![1.0, -0.7, 0.4]], &[0.3]);
    let x = random_rows(&mut rng, 60, 3);
    let cal = CalibrationSet::from_relu(&model, x).unwrap();
    let hard = fit(&model, &cal, &CascadeOptions::default()).unwrap();
    assert_eq!(hard.regime, Regime::Hard);
    let opts = CascadeOptions {
        mu_grid: vec![1.0],
        skip_hard: true,
        ..Default::default()
    };
    let rch = fit(&model, &cal, &opts).unwrap();
    assert_eq!(rch.regime, Regime::Rch { mu: 1.0 });
    let dir = |a: f64, b: f64| {
        let n = a.hypot(b);
        (a / n, b / n)
    };
    let h = dir(hard.coeffs.alpha, hard.coeffs.beta);
    let r = dir(rch.coeffs.alpha, rch.coeffs.beta);
    assert!((h.0 - r.0).abs() < 1e-8 && (h.1 - r.1).abs() < 1e-8);
    assert!((hard.coeffs.eta - rch.coeffs.eta).abs() < 1e-6 * hard.coeffs.eta.abs().max(1.0));
    assert_eq!(rch.cal_mismatches, 0);
}

#[test]
fn two_class_paths_agree_on_feasibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..12 {
        let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = rng.gen_range(-0.5..0.5);
        let n = if trial % 2 == 0 { 12 } else { 80 };
        let x = random_rows(&mut rng, n, 4);
        let binary = preact(ModelKind::Binary, &[a.clone()], &[b]);
        let multi = preact(ModelKind::Multiclass, &[vec![0.0; 4], a], &[0.0, b]);
        let tb = relu_decisions(&binary, &x).unwrap();
        if tb.iter().all(|&t| t == tb[0]) {
            continue;
        }
        assert_eq!(tb, relu_decisions(&multi, &x).unwrap());
        let rb = fit(&binary, &CalibrationSet::from_relu(&binary, x.clone()).unwrap(), &CascadeOptions::default()).unwrap();
        let rm = fit(&multi, &CalibrationSet::from_relu(&multi, x).unwrap(), &CascadeOptions::default()).unwrap();
        assert_eq!(rb.exact, rm.exact, "trial {trial}: {} vs {}", rb.regime, rm.regime);
        if rb.exact {
            assert_eq!(rm.regime, Regime::Hard);
            assert_eq!((rb.cal_mismatches, rm.cal_mismatches), (0, 0));
        }
    }
}

#[test]
fn free_threshold_keeps_eta_zero() {
    let model = preact(ModelKind::Binary, &[vec![1.0, 0.5]], &[-0.2]);
    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.3], vec![2.0, 1.0], vec![-0.5, -1.0]]).unwrap();
    let cal = CalibrationSet::from_relu(&model, x).unwrap();
    let opts = CascadeOptions {
        threshold_mode: ThresholdMode::Free,
        ..Default::default()
    };
    let rep = fit(&model, &cal, &opts).unwrap();
    assert_eq!(rep.regime, Regime::Hard);
    assert_eq!(rep.coeffs.eta, 0.0);
    assert_eq!(rep.cal_mismatches, 0);
}

#[test]
fn rounding_inside_radius_is_certified() {
    let model = preact(ModelKind::Binary, &[vec![1.0, 0.5]], &[-0.2]);
    let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.3], vec![2.0, 1.0], vec![-0.5, -1.0]]).unwrap();
    let cal = CalibrationSet::from_relu(&model, x).unwrap();
    let rep = fit(&model, &cal, &CascadeOptions::default()).unwrap();
    let q = quantize_and_certify(&rep, &model, &cal, 1e-4).unwrap();
    let qr = q.quantization.unwrap();
    assert!(qr.certified);
    assert_eq!(qr.mismatches, 0);
    assert!(q.exact);
    let coarse = quantize_and_certify(&rep, &model, &cal, 10.0).unwrap();
    assert!(!coarse.quantization.unwrap().certified);
}

#[test]
fn multiclass_identity_regime_is_hard() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let raw = common::RawMlp::random(&mut rng, 5, 8, 4, 6.0);
    let x = common::random_features(&mut rng, 200, 5);
    let model = raw.model();
    let cal = CalibrationSet::from_relu(&model, x.clone()).unwrap();
    let rep = fit(&model, &cal, &CascadeOptions::default()).unwrap();
    assert_eq!(rep.regime, Regime::Hard);
    let q = rep.coeffs;
    let own: Vec<usize> = x
        .iter_rows()
        .map(|r| raw.decision(r, |u| q.alpha * u * u + q.beta * u + q.eta, 0.0))
        .collect();
    assert_eq!(own, raw.relu_decisions(&x));
}
