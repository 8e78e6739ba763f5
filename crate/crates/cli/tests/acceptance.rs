//! Acceptance gate: one PASS/FAIL line per criterion at pinned tolerances.
//! Exits non-zero when any hard criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use crossflow::ad::SparsityPattern;
use crossflow::analysis::{
    energy, metrics, pareto_sweep, validate, ValidationOptions, J_PER_KWH,
};
use crossflow::geometry::{
    base_polytope, dual_feasible, dual_objective, primal_distance, solve_dual, transform_polytope, DualCertificate,
    Polytope, Pose,
};
use crossflow::nlp::{NlpProblem, SolverConfig};
use crossflow::ocp::{assemble, initial_guess, GuessPath, OcpOptions, Trajectory};
use crossflow::planner::{plan, Plan};
use crossflow::scenario::{generate_scenario, load_scenario, theoretical_lower_bound, GeneratorOptions, Scenario};
use crossflow::vehicle::{integrate, ControlInput, VehicleParams, VehicleState};
use crossflow::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCENARIO_ONE: &str = "../../scenarios/scenario_one_2cav.json";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario_one() -> Scenario {
    load_scenario(&fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join(SCENARIO_ONE)).unwrap()).unwrap()
}

fn random_rect(rng: &mut ChaCha8Rng) -> Polytope {
    let base = base_polytope(rng.random_range(0.5..6.0), rng.random_range(0.5..3.0)).unwrap();
    let pose = Pose::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(-3.2..3.2));
    transform_polytope(&base, pose)
}

/// Nonnegative multipliers reproducing `g` as a combination of rectangle rows.
fn rect_multipliers(p: &Polytope, g: [f64; 2]) -> Vec<f64> {
    let (n0, n1) = (p.a()[0], p.a()[2]);
    let det = n0[0] * n1[1] - n0[1] * n1[0];
    let c0 = (g[0] * n1[1] - g[1] * n1[0]) / det;
    let c1 = (n0[0] * g[1] - n0[1] * g[0]) / det;
    vec![c0.max(0.0), (-c0).max(0.0), c1.max(0.0), (-c1).max(0.0)]
}

/// Random weights on `P` projected onto the dual feasible set.
fn random_certificate(rng: &mut ChaCha8Rng, p: &Polytope, q: &Polytope) -> DualCertificate {
    let mut s = [0.0, 0.0];
    for r in p.a() {
        let w: f64 = rng.random_range(0.0..3.0);
        s[0] -= r[0] * w;
        s[1] -= r[1] * w;
    }
    let k = 1.0 / s[0].hypot(s[1]).max(1.0);
    let s = [s[0] * k, s[1] * k];
    DualCertificate { lambda_pq: rect_multipliers(p, [-s[0], -s[1]]), lambda_qp: rect_multipliers(q, s), s }
}

fn c1_duality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pairs: Vec<(Polytope, Polytope)> = (0..1000).map(|_| (random_rect(&mut rng), random_rect(&mut rng))).collect();
    let mut weak_fail = 0;
    for (p, q) in &pairs {
        let cert = random_certificate(&mut rng, p, q);
        let feasible = dual_feasible(p, q, &cert, 1e-9).unwrap();
        if !feasible || dual_objective(p, q, &cert).unwrap() > primal_distance(p, q).unwrap() + 1e-9 {
            weak_fail += 1;
        }
    }
    let separated: Vec<&(Polytope, Polytope)> =
        pairs.iter().filter(|(p, q)| primal_distance(p, q).unwrap() > 0.0).take(200).collect();
    let worst = separated
        .iter()
        .map(|(p, q)| (solve_dual(p, q).unwrap().1 - primal_distance(p, q).unwrap()).abs())
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        weak_fail == 0 && separated.len() == 200 && worst <= 1e-6 && secs < 10.0,
        format!("weak-duality failures {weak_fail}/1000, strong gap max {worst:.2e} on {} pairs, {secs:.2} s", separated.len()),
    )
}

fn c2_geometry() -> Outcome {
    let sq = |x: f64, th: f64| transform_polytope(&base_polytope(1.0, 1.0).unwrap(), Pose::new(x, 0.0, th));
    let d1 = primal_distance(&sq(0.0, 0.0), &sq(3.0, 0.0)).unwrap();
    let d2 = primal_distance(&sq(0.0, 0.0), &sq(0.5, 0.0)).unwrap();
    let d3 = primal_distance(&sq(0.0, 0.0), &sq(3.0, std::f64::consts::FRAC_PI_4)).unwrap();
    let e3 = 3.0 - 0.5 - 2f64.sqrt() / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut checked = 0;
    while checked < 1000 {
        let (l, w) = (rng.random_range(0.5..6.0), rng.random_range(0.5..3.0));
        let pose = Pose::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-7.0..7.0));
        let pt = [pose.x + rng.random_range(-4.0..4.0), pose.y + rng.random_range(-4.0..4.0)];
        let (s, c) = pose.theta.sin_cos();
        let (dx, dy) = (pt[0] - pose.x, pt[1] - pose.y);
        let body = [c * dx + s * dy, -s * dx + c * dy];
        if (body[0].abs() - l / 2.0).abs() < 1e-9 || (body[1].abs() - w / 2.0).abs() < 1e-9 {
            continue;
        }
        let expect = body[0].abs() <= l / 2.0 && body[1].abs() <= w / 2.0;
        let moved = transform_polytope(&base_polytope(l, w).unwrap(), pose);
        if moved.contains(pt, 0.0) != expect {
            mismatches += 1;
        }
        checked += 1;
    }
    outcome(
        d1 == 2.0 && d2 == 0.0 && (d3 - e3).abs() < 1e-9 && mismatches == 0,
        format!("distances {d1}, {d2}, {d3:.6}; transform mismatches {mismatches}/1000"),
    )
}

fn c3_dynamics() -> Outcome {
    let p = VehicleParams::default();
    let s0 = VehicleState { v: 10.0, x: -35.0, y: -2.5, ..Default::default() };
    let cruise = *integrate(&s0, &[ControlInput::default(); 40], 0.05, &p).unwrap().last().unwrap();
    let accel = *integrate(&s0, &[ControlInput { a: 2.0, delta: 0.0 }; 40], 0.05, &p).unwrap().last().unwrap();
    let e_cruise = (cruise.x - -15.0).abs().max((cruise.y - -2.5).abs());
    let e_accel = (accel.v - 14.0).abs().max((accel.x - s0.x - 24.0).abs());
    let smooth = |steps: usize| {
        *integrate(&s0, &vec![ControlInput { a: 1.0, delta: 0.05 }; steps], 2.0 / steps as f64, &p)
            .unwrap()
            .last()
            .unwrap()
    };
    let coarse = 80;
    let reference = smooth(16 * coarse);
    let err = |s: VehicleState| (s.x - reference.x).hypot(s.y - reference.y);
    let ratio = err(smooth(coarse)) / err(smooth(2 * coarse));
    outcome(
        e_cruise <= 1e-9 && e_accel <= 1e-9 && (ratio / 16.0 - 1.0).abs() <= 0.2,
        format!("closed-form errors {e_cruise:.1e}, {e_accel:.1e}; convergence ratio {ratio:.2}"),
    )
}

fn c4_gradients() -> Outcome {
    let start = Instant::now();
    let scn = scenario_one();
    let (nlp, layout) = assemble(&scn, &scn.transcription, &OcpOptions::default()).unwrap();
    let n = nlp.n_vars();
    let m = nlp.n_cons();
    let structure = nlp.jacobian_structure().to_vec();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &(r, c) in &structure {
        rows[r].push(c);
    }
    for r in rows.iter_mut() {
        r.sort_unstable();
        r.dedup();
    }
    let colors = SparsityPattern { n_cols: n, rows: rows.clone() }.color_columns();
    let n_colors = colors.iter().max().map_or(0, |c| c + 1);
    let guess = initial_guess(&scn, &layout, GuessPath::Curved).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + a.abs().max(b.abs()));
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x: Vec<f64> = guess
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let (lo, hi) = (nlp.var_lower()[i], nlp.var_upper()[i]);
                let y = v + rng.random_range(-0.05..0.05);
                // Stay strictly inside the box.
                let shrink = |b: f64| if b.is_finite() { 1e-3 * (1.0 + b.abs()) } else { 0.0 };
                let (lo, hi) = (lo + shrink(lo), hi - shrink(hi));
                if lo < hi { y.clamp(lo, hi) } else { 0.5 * (lo + hi) }
            })
            .collect();
        let mut g = vec![0.0; n];
        nlp.gradient(&x, &mut g).unwrap();
        let mut xp = x.clone();
        for i in 0..n {
            xp[i] = x[i] + h;
            let fp = nlp.objective(&xp).unwrap();
            xp[i] = x[i] - h;
            let fm = nlp.objective(&xp).unwrap();
            xp[i] = x[i];
            worst = worst.max(rel(g[i], (fp - fm) / (2.0 * h)));
        }
        let mut jv = vec![0.0; structure.len()];
        nlp.jacobian_values(&x, &mut jv).unwrap();
        let mut analytic: std::collections::HashMap<(usize, usize), f64> = Default::default();
        for (&rc, v) in structure.iter().zip(&jv) {
            *analytic.entry(rc).or_default() += v;
        }
        let (mut cp, mut cm) = (vec![0.0; m], vec![0.0; m]);
        for k in 0..n_colors {
            let mut xp = x.clone();
            let mut xm = x.clone();
            for i in (0..n).filter(|&i| colors[i] == k) {
                xp[i] += h;
                xm[i] -= h;
            }
            nlp.constraints(&xp, &mut cp).unwrap();
            nlp.constraints(&xm, &mut cm).unwrap();
            for r in 0..m {
                let fd = (cp[r] - cm[r]) / (2.0 * h);
                match rows[r].iter().find(|&&c| colors[c] == k) {
                    Some(&c) => worst = worst.max(rel(analytic[&(r, c)], fd)),
                    None => worst = worst.max(rel(0.0, fd)),
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-5 && secs < 60.0,
        format!("{n} variables, {m} rows, {n_colors} colors; worst relative error {worst:.2e}; {secs:.1} s"),
    )
}

fn c5_bound() -> Outcome {
    let lb = theoretical_lower_bound(&scenario_one());
    outcome((lb - 4.27).abs() <= 0.01, format!("lower bound {lb:.4} s vs 4.27 s"))
}

fn c6_two_cav(p: &Plan, scn: &Scenario, secs: f64) -> Outcome {
    let opts = ValidationOptions::for_scenario(scn);
    let report = validate(scn, &p.solution.trajectories, &opts).unwrap();
    let m = metrics(scn, &p.solution.trajectories, &opts, &report).unwrap();
    let t = m.crossing_time;
    outcome(
        p.converged()
            && (4.27..=4.80).contains(&t)
            && report.passed()
            && report.min_pair_clearance >= scn.safety.d_min - 0.02
            && secs < 300.0,
        format!(
            "status {}, crossing time {t:.4} s, validation {}, min pair clearance {:.4} m, {secs:.1} s",
            p.report.status,
            if report.passed() { "pass" } else { "fail" },
            report.min_pair_clearance
        ),
    )
}

fn c7_nested() -> Outcome {
    let start = Instant::now();
    let mut times = Vec::new();
    let mut notes = Vec::new();
    for n in 2..=4 {
        let scn = generate_scenario(n, 1, GeneratorOptions::default()).unwrap();
        let p = plan(&scn, &OcpOptions::default(), &SolverConfig::default()).unwrap();
        let opts = ValidationOptions::for_scenario(&scn);
        let report = validate(&scn, &p.solution.trajectories, &opts).unwrap();
        let t = metrics(&scn, &p.solution.trajectories, &opts, &report).map(|m| m.crossing_time).unwrap_or(f64::NAN);
        notes.push(format!(
            "{n} CAVs {t:.4} s (bound {:.4}, {}, validation {})",
            theoretical_lower_bound(&scn),
            p.report.status,
            if report.passed() { "pass" } else { "fail" }
        ));
        times.push(if p.converged() { t } else { f64::NAN });
    }
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / lo;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        spread < 0.03 && secs < 1800.0,
        format!("seed 1: {}; spread {:.1}%; {secs:.0} s", notes.join(", "), 100.0 * spread),
    )
}

fn c8_energy() -> Outcome {
    let straight = |accels: &[f64], dt: f64| {
        let mut tr = Trajectory { vehicle_id: "a".into(), times: vec![], states: vec![], controls: vec![] };
        let (mut v, mut x) = (10.0, 0.0);
        for (k, &a) in accels.iter().enumerate() {
            tr.times.push(k as f64 * dt);
            tr.states.push(VehicleState { v, x, ..Default::default() });
            tr.controls.push(ControlInput { a, delta: 0.0 });
            x += v * dt + 0.5 * a * dt * dt;
            v += a * dt;
        }
        tr
    };
    let e = energy(&straight(&[2.5; 41], 0.05), 1204.0);
    let closed = 1204.0 * (15.0f64 * 15.0 - 100.0) / 2.0 / J_PER_KWH;
    let rel_err = ((e - closed) / closed).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let accels: Vec<f64> = (0..400).map(|_| rng.random_range(-3.0..3.0)).collect();
    let tr = straight(&accels, 0.02);
    let whole = energy(&tr, 1204.0);
    let part = |a: usize, b: usize| Trajectory {
        vehicle_id: tr.vehicle_id.clone(),
        times: tr.times[a..b].to_vec(),
        states: tr.states[a..b].to_vec(),
        controls: tr.controls[a..b].to_vec(),
    };
    let worst = (0..100)
        .map(|_| {
            let k = rng.random_range(1..tr.len() - 1);
            (energy(&part(0, k + 1), 1204.0) + energy(&part(k, tr.len()), 1204.0) - whole).abs()
        })
        .fold(0.0, f64::max);
    // 0.020903 is the closed form rounded to six decimals.
    outcome(
        rel_err <= 1e-6 && (closed - 0.020903).abs() < 5e-7 && worst <= 1e-12,
        format!("energy {e:.9} kWh (closed form {closed:.9}, rel {rel_err:.1e}); additivity worst {worst:.1e} over 100 splits"),
    )
}

fn c9_pareto(scn: &Scenario) -> Outcome {
    // Decades from a negligible energy term to one that dominates.
    let gammas = [0.0, 0.01, 0.1, 1.0, 10.0];
    let pts = pareto_sweep(scn, &gammas, &OcpOptions::default(), &SolverConfig::default()).unwrap();
    let ok: Vec<(f64, f64, f64, bool)> =
        pts.iter().filter_map(|p| p.outcome.clone().ok().map(|(t, e)| (p.gamma, t, e, p.dominated))).collect();
    let mut front: Vec<&(f64, f64, f64, bool)> = ok.iter().filter(|p| !p.3).collect();
    front.sort_by(|a, b| a.1.total_cmp(&b.1));
    let decreasing = front.windows(2).all(|w| w[1].2 < w[0].2);
    let min_time = ok.iter().find(|p| p.0 == 0.0).map(|p| p.1);
    let fastest = min_time.is_some_and(|t0| ok.iter().all(|p| t0 <= p.1));
    let table: Vec<String> = pts
        .iter()
        .map(|p| match &p.outcome {
            Ok((t, e)) => format!("g={} t={t:.4} E={e:.5}{}", p.gamma, if p.dominated { "*" } else { "" }),
            Err(msg) => format!("g={} failed ({msg})", p.gamma),
        })
        .collect();
    outcome(
        ok.len() == gammas.len() && decreasing && fastest,
        format!("{} (* dominated); front size {}", table.join(", "), front.len()),
    )
}

fn c10_bang_bang(p: &Plan, scn: &Scenario) -> Outcome {
    let opts = ValidationOptions::for_scenario(scn);
    let report = validate(scn, &p.solution.trajectories, &opts).unwrap();
    let m = metrics(scn, &p.solution.trajectories, &opts, &report).unwrap();
    outcome(m.bang_bang_fraction > 0.5, format!("fraction of samples at |a| >= 0.95 a_max: {:.3}", m.bang_bang_fraction))
}

fn c11_determinism(scn: &Scenario) -> Outcome {
    let exe = env!("CARGO_BIN_EXE_crossflow");
    let dir = tempfile::tempdir().unwrap();
    let scn_path = Path::new(env!("CARGO_MANIFEST_DIR")).join(SCENARIO_ONE);
    let run = |args: &[&str]| Command::new(exe).args(args).output().unwrap();
    let mut differing = Vec::new();
    let out = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    for tag in ["a", "b"] {
        run(&["solve", scn_path.to_str().unwrap(), "--out", &out(&format!("solve_{tag}"))]);
        run(&["generate", "4", "--seed", "1", "--out", &out(&format!("gen_{tag}.json"))]);
    }
    for f in ["trajectory.csv", "profiles.csv", "iterations.tsv", "validation.txt", "metrics.txt", "manifest.json"] {
        if fs::read(dir.path().join("solve_a").join(f)).ok() != fs::read(dir.path().join("solve_b").join(f)).ok() {
            differing.push(f.to_string());
        }
    }
    if fs::read(out("gen_a.json")).ok() != fs::read(out("gen_b.json")).ok() {
        differing.push("generate".into());
    }
    let bound: Vec<Vec<u8>> = (0..2).map(|_| run(&["bound", scn_path.to_str().unwrap()]).stdout).collect();
    if bound[0] != bound[1] {
        differing.push("bound".into());
    }
    let traj = dir.path().join("solve_a").join("trajectory.csv");
    let v: Vec<Vec<u8>> = (0..2).map(|_| run(&["validate", scn_path.to_str().unwrap(), traj.to_str().unwrap()]).stdout).collect();
    if v[0] != v[1] {
        differing.push("validate".into());
    }
    // Parallel and sequential evaluation give the same iterates.
    let (mut nlp, layout) = assemble(scn, &scn.transcription, &OcpOptions::default()).unwrap();
    let x0 = initial_guess(scn, &layout, GuessPath::Curved).unwrap();
    let cfg = SolverConfig { max_iters: 25, ..SolverConfig::default() };
    let par = crossflow::nlp::solve(&nlp, &x0, &cfg).unwrap();
    nlp.set_exec(Exec::Sequential);
    let seq = crossflow::nlp::solve(&nlp, &x0, &cfg).unwrap();
    if par.x.iter().zip(&seq.x).any(|(a, b)| a.to_bits() != b.to_bits()) {
        differing.push("parallel-vs-sequential".into());
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            "solve (6 artifacts), generate, bound, validate and parallel/sequential iterates byte-identical".into()
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn main() {
    // Run only under `cargo test`; ignore harness flags such as `--nocapture`.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let total = Instant::now();
    let scn = scenario_one();
    let solve_start = Instant::now();
    let two = plan(&scn, &OcpOptions::default(), &SolverConfig::default()).unwrap();
    let two_secs = solve_start.elapsed().as_secs_f64();

    let results: Vec<(u32, &str, bool, Outcome)> = vec![
        (1, "duality suite", true, c1_duality()),
        (2, "geometry oracles", true, c2_geometry()),
        (3, "dynamics and integration", true, c3_dynamics()),
        (4, "gradient checks", true, c4_gradients()),
        (5, "lower bound", true, c5_bound()),
        (6, "two-CAV solve", true, c6_two_cav(&two, &scn, two_secs)),
        (7, "nested crossing times", true, c7_nested()),
        (8, "energy identities", true, c8_energy()),
        (9, "Pareto sweep", true, c9_pareto(&scn)),
        (10, "bang-bang (soft)", false, c10_bang_bang(&two, &scn)),
        (11, "determinism", true, c11_determinism(&scn)),
    ];
    let mut hard_failures = 0;
    println!();
    for (id, name, hard, o) in &results {
        let tag = match (o.pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        if !o.pass && *hard {
            hard_failures += 1;
        }
        println!("criterion {id:>2} {tag} {name}: {}", o.detail);
    }
    let elapsed = Duration::from_secs_f64(total.elapsed().as_secs_f64());
    println!("acceptance: {} of {} hard criteria passed in {:.0} s", 10 - hard_failures, 10, elapsed.as_secs_f64());
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
