//! Property tests of scenario ingestion, road geometry and the lower bound.

use crossflow::geometry::{primal_distance, transform_polytope, Polytope, Pose};
use crossflow::scenario::{
    accelerate_then_cruise_time, build_road_boundaries, generate_scenario, load_scenario, theoretical_lower_bound,
    GeneratorOptions, IntersectionLayout,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn serialization_round_trips(n in 1usize..=16, seed in 0u64..1000, right in any::<bool>(), gamma in 0.0..10.0f64) {
        let mut scn = generate_scenario(n, seed, GeneratorOptions { allow_right_turns: right }).unwrap();
        scn.weights.gamma = gamma;
        let back = load_scenario(&scn.to_json()).unwrap();
        prop_assert_eq!(back, scn);
    }

    #[test]
    fn generated_fleets_are_nested_and_start_clear(seed in 0u64..1000, n in 2usize..=16) {
        let big = generate_scenario(n, seed, GeneratorOptions::default()).unwrap();
        let small = generate_scenario(n - 1, seed, GeneratorOptions::default()).unwrap();
        prop_assert_eq!(&big.vehicles[..n - 1], &small.vehicles[..]);
        prop_assert!(big.vehicles.iter().any(|v| (v.terminal.theta - v.initial.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-6));
        let foot = big.footprint();
        for (i, a) in big.vehicles.iter().enumerate() {
            prop_assert_eq!(a.initial.v, 10.0);
            for b in &big.vehicles[..i] {
                let d = primal_distance(&transform_polytope(&foot, a.initial_pose()), &transform_polytope(&foot, b.initial_pose())).unwrap();
                prop_assert!(d >= big.safety.d_min);
            }
        }
    }

    #[test]
    fn nested_fleets_share_the_bound(seed in 0u64..1000, n in 3usize..=16) {
        let lb = |k| theoretical_lower_bound(&generate_scenario(k, seed, GeneratorOptions::default()).unwrap());
        prop_assert_eq!(lb(n), lb(2));
    }

    #[test]
    fn lower_bound_is_monotone(d in 1.0..200.0f64, extra in 0.0..50.0f64, v0 in 0.5..25.0f64,
                               a in 0.5..5.0f64, da in 0.0..2.0f64, vmax in 25.0..40.0f64, dv in 0.0..10.0f64) {
        let t = accelerate_then_cruise_time(d, v0, a + da, vmax + dv);
        prop_assert!(accelerate_then_cruise_time(d + extra, v0, a + da, vmax + dv) >= t);
        prop_assert!(accelerate_then_cruise_time(d, v0, a, vmax + dv) >= t - 1e-12);
        prop_assert!(accelerate_then_cruise_time(d, v0, a + da, vmax) >= t - 1e-12);
    }

    #[test]
    fn lower_bound_matches_kinematics(d in 1.0..200.0f64, v0 in 0.5..24.0f64, a in 0.5..5.0f64) {
        let vmax = 25.0;
        let t = accelerate_then_cruise_time(d, v0, a, vmax);
        let t_acc = ((vmax - v0) / a).min(t);
        let covered = v0 * t_acc + 0.5 * a * t_acc * t_acc + (v0 + a * t_acc) * (t - t_acc);
        prop_assert!((covered - d).abs() < 1e-9 * d.max(1.0));
    }

    #[test]
    fn scenario_bound_is_the_farthest_vehicle(n in 1usize..=16, seed in 0u64..1000) {
        let scn = generate_scenario(n, seed, GeneratorOptions::default()).unwrap();
        let lb = theoretical_lower_bound(&scn);
        let per: Vec<f64> = scn.vehicles.iter()
            .map(|v| accelerate_then_cruise_time(v.displacement(), v.initial_speed(), scn.limits.a_max, scn.limits.v_max))
            .collect();
        prop_assert!(per.iter().all(|&t| t <= lb));
        prop_assert!(per.contains(&lb));
    }
}

fn rotated_quarter(p: &Polytope) -> Polytope {
    transform_polytope(p, Pose::new(0.0, 0.0, std::f64::consts::FRAC_PI_2))
}

#[test]
fn road_blocks_are_disjoint_and_quarter_symmetric() {
    for layout in [IntersectionLayout::default(), IntersectionLayout { road_half_width: 7.5, arm_extent: 60.0 }] {
        let blocks = build_road_boundaries(&layout);
        for i in 0..4 {
            for j in 0..i {
                assert!(primal_distance(&blocks[i], &blocks[j]).unwrap() >= 2.0 * layout.road_half_width - 1e-12);
            }
        }
        // A quarter turn maps the block set onto itself.
        for b in &blocks {
            let turned = rotated_quarter(b);
            let mut tv = turned.vertices();
            tv.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let matched = blocks.iter().any(|o| {
                let mut ov = o.vertices();
                ov.sort_by(|a, b| a.partial_cmp(b).unwrap());
                ov.iter().zip(&tv).all(|(p, q)| (p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9)
            });
            assert!(matched);
        }
    }
}
