//! Property tests over randomly drawn inputs.

mod common;

use proptest::prelude::*;
use quadrelu::evaluator::{evaluate, forward_poly};
use quadrelu::geom2d::{convex_hull, separation_certificate, Point2, SEPARATION_THRESHOLD};
use quadrelu::lift::{binary_lift, class_stats, pairwise_lifts, PairwiseLiftSet};
use quadrelu::model_io::{relu_decisions, MlpModel, ModelKind};
use quadrelu::qpsolvers::{rch_closest_point, soft_objective};
use quadrelu::{Matrix, QuadCoeffs};

fn points(max: usize) -> impl Strategy<Value = Vec<Point2>> {
    prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y)| Point2::new(x, y)), 1..max)
}

fn preact_model(kind: ModelKind, head: Vec<Vec<f64>>, bias: Vec<f64>) -> MlpModel {
    MlpModel::new(kind, None, Matrix::from_rows(&head).unwrap(), bias).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hull_encloses_every_input(pts in points(40)) {
        let hull = convex_hull(&pts).unwrap();
        let v = &hull.vertices;
        prop_assert!(v.iter().all(|p| pts.contains(p)));
        if v.len() >= 3 {
            let scale = pts.iter().map(|p| p.norm()).fold(1.0, f64::max);
            for p in &pts {
                for i in 0..v.len() {
                    let e = v[(i + 1) % v.len()] - v[i];
                    prop_assert!(e.cross(*p - v[i]) >= -1e-9 * scale * scale);
                }
            }
        }
    }

    #[test]
    fn certificate_agrees_with_axis_oracle(p in points(25), m in points(25)) {
        let cert = separation_certificate(&p, &m).unwrap();
        let oracle = common::axis_oracle(&p, &m);
        if cert.feasible {
            prop_assert!((cert.margin - oracle).abs() <= 1e-9);
        } else {
            prop_assert!(oracle <= 1e-9);
        }
    }

    #[test]
    fn reduced_distance_grows_as_caps_shrink(p in points(20), m in points(20)) {
        let mut prev: Option<(f64, f64)> = None;
        for mu in [1.0f64, 0.6, 0.3, 0.1, 0.02] {
            let s = rch_closest_point(&p, &m, mu.max(1.0 / p.len() as f64), mu.max(1.0 / m.len() as f64)).unwrap();
            if let Some((d, gap)) = prev {
                prop_assert!(d * d <= s.distance * s.distance + gap + 1e-12);
            }
            prev = Some((s.distance, s.gap));
        }
    }

    #[test]
    fn binary_lift_score_matches_forward_pass(
        head in prop::collection::vec(-2.0f64..2.0, 3),
        b in -1.0f64..1.0,
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..12),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
        eta in -2.0f64..2.0,
    ) {
        let model = preact_model(ModelKind::Binary, vec![head], vec![b]);
        let x = Matrix::from_rows(&rows).unwrap();
        let targets = relu_decisions(&model, &x).unwrap();
        let cloud = binary_lift(&model, &x, &targets).unwrap();
        let q = QuadCoeffs { alpha, beta, eta };
        let direct = forward_poly(&model, &q, &x).unwrap();
        for i in 0..rows.len() {
            let s = direct.values[(i, 0)];
            prop_assert!((cloud.score(i, alpha, beta, eta) - s).abs() <= 1e-9 * s.abs().max(1.0));
        }
    }

    #[test]
    fn pairwise_margin_matches_logit_gap(
        head in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 3),
        bias in prop::collection::vec(-1.0f64..1.0, 3),
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..8),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
        eta in -2.0f64..2.0,
    ) {
        let model = preact_model(ModelKind::Multiclass, head, bias);
        let x = Matrix::from_rows(&rows).unwrap();
        let targets = relu_decisions(&model, &x).unwrap();
        let lifts = pairwise_lifts(&class_stats(&model, &x).unwrap(), &targets).unwrap();
        let logits = forward_poly(&model, &QuadCoeffs { alpha, beta, eta }, &x).unwrap().values;
        for (r, &(i, c)) in lifts.index.iter().enumerate() {
            let gap = logits[(i, targets[i])] - logits[(i, c)];
            prop_assert!((lifts.margin(r, alpha, beta, eta) - gap).abs() <= 1e-9 * gap.abs().max(1.0));
        }
    }

    #[test]
    fn soft_objective_is_convex_along_segments(
        rows in prop::collection::vec(prop::array::uniform4(-2.0f64..2.0), 2..10),
        a in prop::array::uniform4(-3.0f64..3.0),
        b in prop::array::uniform4(-3.0f64..3.0),
        t in 0.0f64..1.0,
        c in 0.01f64..10.0,
    ) {
        let n = rows.len();
        let set = PairwiseLiftSet { index: (0..n).map(|r| (r, 1)).collect(), samples: n, rows, classes: 2 };
        let mid: [f64; 4] = std::array::from_fn(|k| t * a[k] + (1.0 - t) * b[k]);
        let lhs = soft_objective(&set, &mid, c);
        let rhs = t * soft_objective(&set, &a, c) + (1.0 - t) * soft_objective(&set, &b, c);
        prop_assert!(lhs <= rhs + 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn agreement_is_symmetric_and_accounts_for_changes(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
    ) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let ab = evaluate(&a, &b, None).unwrap();
        let ba = evaluate(&b, &a, None).unwrap();
        prop_assert_eq!(&ab.mismatch_indices, &ba.mismatch_indices);
        prop_assert_eq!(ab.agreement, ba.agreement);
        let changed = (0..a.len()).filter(|&i| a[i] != b[i]).count();
        prop_assert_eq!(ab.mismatches(), changed);
        let expected = 100.0 * (a.len() - changed) as f64 / a.len() as f64;
        prop_assert!((ab.agreement - expected).abs() < 1e-12);
    }
}

#[test]
fn separation_threshold_is_strict() {
    let p = [Point2::new(0.0, 0.0)];
    let m = [Point2::new(SEPARATION_THRESHOLD / 2.0, 0.0)];
    assert!(!separation_certificate(&p, &m).unwrap().feasible);
    let m = [Point2::new(1e-6, 0.0)];
    assert!(separation_certificate(&p, &m).unwrap().feasible);
}
