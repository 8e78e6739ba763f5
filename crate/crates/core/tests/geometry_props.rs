//! Property tests of the polytope distance and duality routines.

use crossflow::geometry::{
    base_polytope, dual_feasible, dual_objective, primal_distance, separating_hyperplane, solve_dual,
    transform_polytope, DualCertificate, Polytope, Pose, FEASIBILITY_TOL,
};
use proptest::prelude::*;

fn rect(l: f64, w: f64, pose: Pose) -> Polytope {
    transform_polytope(&base_polytope(l, w).unwrap(), pose)
}

fn pose() -> impl Strategy<Value = Pose> {
    (-10.0..10.0f64, -10.0..10.0f64, -7.0..7.0f64).prop_map(|(x, y, t)| Pose::new(x, y, t))
}

fn dims() -> impl Strategy<Value = (f64, f64)> {
    (0.5..6.0f64, 0.5..3.0f64)
}

/// Nonnegative `lambda` with `A' lambda = g` for a rectangle: split `g` on two
/// adjacent edge normals and use the opposite rows for negative parts.
fn rect_multipliers(p: &Polytope, g: [f64; 2]) -> Vec<f64> {
    let a = p.a();
    let (n0, n1) = (a[0], a[2]);
    let det = n0[0] * n1[1] - n0[1] * n1[0];
    let c0 = (g[0] * n1[1] - g[1] * n1[0]) / det;
    let c1 = (n0[0] * g[1] - n0[1] * g[0]) / det;
    vec![c0.max(0.0), (-c0).max(0.0), c1.max(0.0), (-c1).max(0.0)]
}

/// A feasible certificate built from arbitrary nonnegative weights on `P`.
fn projected_certificate(p: &Polytope, q: &Polytope, weights: [f64; 4]) -> DualCertificate {
    let a = p.a();
    let mut s = [0.0, 0.0];
    for (r, w) in a.iter().zip(weights) {
        s[0] -= r[0] * w;
        s[1] -= r[1] * w;
    }
    let scale = 1.0 / s[0].hypot(s[1]).max(1.0);
    let s = [s[0] * scale, s[1] * scale];
    DualCertificate {
        lambda_pq: rect_multipliers(p, [-s[0], -s[1]]),
        lambda_qp: rect_multipliers(q, s),
        s,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn transform_membership((l, w) in dims(), p in pose(), px in -15.0..15.0f64, py in -15.0..15.0f64) {
        let moved = rect(l, w, p);
        let (s, c) = p.theta.sin_cos();
        let (dx, dy) = (px - p.x, py - p.y);
        let body = [c * dx + s * dy, -s * dx + c * dy];
        let inside_body = body[0].abs() <= l / 2.0 && body[1].abs() <= w / 2.0;
        // Skip points within rounding distance of the boundary.
        let margin = (body[0].abs() - l / 2.0).abs().min((body[1].abs() - w / 2.0).abs());
        prop_assume!(margin > 1e-9);
        prop_assert_eq!(moved.contains([px, py], 0.0), inside_body);
    }

    #[test]
    fn weak_duality((l1, w1) in dims(), (l2, w2) in dims(), p1 in pose(), p2 in pose(),
                    weights in prop::array::uniform4(0.0..3.0f64)) {
        let p = rect(l1, w1, p1);
        let q = rect(l2, w2, p2);
        let cert = projected_certificate(&p, &q, weights);
        prop_assert!(dual_feasible(&p, &q, &cert, 1e-9).unwrap());
        let d = primal_distance(&p, &q).unwrap();
        prop_assert!(dual_objective(&p, &q, &cert).unwrap() <= d + 1e-9);
    }

    #[test]
    fn euclidean_invariance((l1, w1) in dims(), (l2, w2) in dims(), p1 in pose(), p2 in pose(), m in pose()) {
        let moved = |p: Pose| {
            let (s, c) = m.theta.sin_cos();
            Pose::new(c * p.x - s * p.y + m.x, s * p.x + c * p.y + m.y, p.theta + m.theta)
        };
        let d0 = primal_distance(&rect(l1, w1, p1), &rect(l2, w2, p2)).unwrap();
        let d1 = primal_distance(&rect(l1, w1, moved(p1)), &rect(l2, w2, moved(p2))).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-9, "{} vs {}", d0, d1);
    }

    #[test]
    fn symmetric_in_arguments((l1, w1) in dims(), (l2, w2) in dims(), p1 in pose(), p2 in pose()) {
        let p = rect(l1, w1, p1);
        let q = rect(l2, w2, p2);
        prop_assert_eq!(primal_distance(&p, &q).unwrap(), primal_distance(&q, &p).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn strong_duality_and_separation((l1, w1) in dims(), (l2, w2) in dims(), p1 in pose(), p2 in pose()) {
        let p = rect(l1, w1, p1);
        let q = rect(l2, w2, p2);
        let d = primal_distance(&p, &q).unwrap();
        prop_assume!(d > 1e-3);
        let (cert, obj) = solve_dual(&p, &q).unwrap();
        prop_assert!((obj - d).abs() <= 1e-6, "dual {} primal {}", obj, d);
        prop_assert!(dual_feasible(&p, &q, &cert, FEASIBILITY_TOL).unwrap());

        let h = separating_hyperplane(&p, &q, &cert).unwrap();
        let gap_p = p.vertices().iter().map(|v| -h.signed_distance(*v)).fold(f64::INFINITY, f64::min);
        let gap_q = q.vertices().iter().map(|v| h.signed_distance(*v)).fold(f64::INFINITY, f64::min);
        prop_assert!(gap_p >= obj / 2.0 - 1e-9 && gap_q >= obj / 2.0 - 1e-9, "{} {} {}", gap_p, gap_q, obj);
        prop_assert!(gap_p + gap_q >= obj - 1e-9);
    }

    #[test]
    fn any_positive_certificate_separates((l1, w1) in dims(), (l2, w2) in dims(), p1 in pose(), p2 in pose(),
                                          k in 0.1..1.0f64) {
        let p = rect(l1, w1, p1);
        let q = rect(l2, w2, p2);
        prop_assume!(primal_distance(&p, &q).unwrap() > 1e-3);
        let (cert, _) = solve_dual(&p, &q).unwrap();
        // Shrinking keeps the certificate feasible with a smaller objective.
        let weaker = cert.scaled(k);
        let obj = dual_objective(&p, &q, &weaker).unwrap();
        let h = separating_hyperplane(&p, &q, &weaker).unwrap();
        let gap_p = p.vertices().iter().map(|v| -h.signed_distance(*v)).fold(f64::INFINITY, f64::min);
        let gap_q = q.vertices().iter().map(|v| h.signed_distance(*v)).fold(f64::INFINITY, f64::min);
        prop_assert!(gap_p + gap_q >= obj - 1e-9);
    }
}

#[test]
fn intersecting_pairs_have_no_dual_separation() {
    let p = rect(2.0, 2.0, Pose::default());
    let q = rect(2.0, 2.0, Pose::new(0.5, 0.3, 0.4));
    assert_eq!(primal_distance(&p, &q).unwrap(), 0.0);
    assert!(separating_hyperplane(&p, &q, &DualCertificate::zeros(4, 4)).is_err());
}
