//! Independent audit of solutions and the reported metrics.

use std::fmt::Write as _;

use thiserror::Error;

use crate::exec::{with_thread_cap, Exec};
use crate::geometry::{primal_distance, GeometryError, Pose};
use crate::nlp::SolverConfig;
use crate::ocp::{OcpOptions, Trajectory};
use crate::planner::plan;
use crate::scenario::{build_road_boundaries, footprint_at, Scenario};
use crate::vehicle::{ControlInput, VehicleState};

/// Joules per kilowatt-hour.
pub const J_PER_KWH: f64 = 3.6e6;
pub const DEFAULT_SAMPLE_DT: f64 = 0.01;
pub const DEFAULT_CLEARANCE_SLACK: f64 = 0.02;
pub const DEFAULT_ARRIVAL_TOL: PoseTolerance = PoseTolerance { position: 0.5, heading: 0.1 };
/// Relative tolerance on state and input limits.
pub const DEFAULT_LIMIT_TOL: f64 = 0.01;
/// Fraction of `a_max` above which a sample counts as saturated.
pub const BANG_BANG_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTolerance {
    pub position: f64,
    pub heading: f64,
}

impl PoseTolerance {
    fn within(&self, s: &VehicleState, target: Pose) -> bool {
        (s.x - target.x).hypot(s.y - target.y) <= self.position && (s.theta - target.theta).abs() <= self.heading
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("horizon mismatch: {0}")]
    Horizon(String),
    #[error("vehicle {0} never reaches its terminal pose")]
    NotArrived(String),
    #[error("trajectory set does not match the scenario fleet: {0}")]
    Fleet(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

type Result<T> = std::result::Result<T, AnalysisError>;

/// Piecewise interpolant of one trajectory.
///
/// A trajectory with `1 + K*d` samples is read as `K` collocation segments of
/// `d + 1` points sharing end points and interpolated by Lagrange polynomials;
/// any other sample count falls back to linear interpolation. Controls are
/// piecewise constant per segment.
pub struct Interpolant<'a> {
    traj: &'a Trajectory,
    seg: usize,
}

impl<'a> Interpolant<'a> {
    pub fn new(traj: &'a Trajectory, degree: usize) -> Self {
        let n = traj.len();
        let seg = if degree >= 1 && n > 1 && (n - 1) % degree == 0 { degree } else { 1 };
        Self { traj, seg }
    }

    fn segment(&self, t: f64) -> usize {
        let times = &self.traj.times;
        let n_seg = (times.len() - 1) / self.seg;
        let mut k = 0;
        while k + 1 < n_seg && t > times[(k + 1) * self.seg] {
            k += 1;
        }
        k
    }

    pub fn state(&self, t: f64) -> VehicleState {
        let tr = self.traj;
        if tr.len() == 1 {
            return tr.states[0];
        }
        let k = self.segment(t);
        let idx = k * self.seg..=(k + 1) * self.seg;
        let ts = &tr.times[idx.clone()];
        let mut acc = [0.0; 6];
        for (m, i) in idx.enumerate() {
            let mut l = 1.0;
            for (q, &tq) in ts.iter().enumerate() {
                if q != m {
                    l *= (t - tq) / (ts[m] - tq);
                }
            }
            let s = tr.states[i].to_array();
            for c in 0..6 {
                acc[c] += l * s[c];
            }
        }
        VehicleState::from_array(acc)
    }

    pub fn control(&self, t: f64) -> ControlInput {
        let tr = self.traj;
        if tr.len() == 1 {
            return tr.controls[0];
        }
        tr.controls[self.segment(t) * self.seg + 1]
    }
}

/// Sample times `0, dt, 2dt, ..., t_end` (the end always included).
pub fn sample_times(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let mut out: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
    out.push(t_end);
    out
}

/// Resamples a trajectory on `times`.
pub fn resample(traj: &Trajectory, degree: usize, times: &[f64]) -> Trajectory {
    let ip = Interpolant::new(traj, degree);
    Trajectory {
        vehicle_id: traj.vehicle_id.clone(),
        times: times.to_vec(),
        states: times.iter().map(|&t| ip.state(t)).collect(),
        controls: times.iter().map(|&t| ip.control(t)).collect(),
    }
}

fn common_horizon(trajs: &[Trajectory]) -> Result<f64> {
    let first = trajs.first().ok_or_else(|| AnalysisError::Fleet("no trajectories".into()))?;
    let check = |tr: &Trajectory| -> Result<(f64, f64)> {
        if tr.is_empty() || tr.states.len() != tr.len() || tr.controls.len() != tr.len() {
            return Err(AnalysisError::Horizon(format!("{} has inconsistent sample arrays", tr.vehicle_id)));
        }
        if tr.times.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(AnalysisError::Horizon(format!("{} has non-monotone times", tr.vehicle_id)));
        }
        Ok((tr.times[0], *tr.times.last().unwrap()))
    };
    let (t0, t1) = check(first)?;
    for tr in &trajs[1..] {
        let (a, b) = check(tr)?;
        if (a - t0).abs() > 1e-9 || (b - t1).abs() > 1e-9 {
            return Err(AnalysisError::Horizon(format!(
                "{} spans [{a}, {b}] but {} spans [{t0}, {t1}]",
                tr.vehicle_id, first.vehicle_id
            )));
        }
    }
    if t0.abs() > 1e-9 {
        return Err(AnalysisError::Horizon(format!("horizon starts at {t0}, expected 0")));
    }
    Ok(t1)
}

/// Pairs each scenario vehicle with its trajectory by id.
pub fn match_fleet<'a>(scn: &Scenario, trajs: &'a [Trajectory]) -> Result<Vec<&'a Trajectory>> {
    if trajs.len() != scn.vehicles.len() {
        return Err(AnalysisError::Fleet(format!(
            "{} trajectories for {} vehicles",
            trajs.len(),
            scn.vehicles.len()
        )));
    }
    scn.vehicles
        .iter()
        .map(|v| {
            trajs
                .iter()
                .find(|t| t.vehicle_id == v.id)
                .ok_or_else(|| AnalysisError::Fleet(format!("no trajectory for vehicle {}", v.id)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    PairClearance,
    BoundaryClearance,
    StateLimit,
    InputLimit,
    TerminalPose,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::PairClearance => "pair_clearance",
            ViolationKind::BoundaryClearance => "boundary_clearance",
            ViolationKind::StateLimit => "state_limit",
            ViolationKind::InputLimit => "input_limit",
            ViolationKind::TerminalPose => "terminal_pose",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Vehicle ids, boundary names or limit fields involved.
    pub subject: String,
    pub time: f64,
    pub magnitude: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub min_pair_clearance: f64,
    pub min_boundary_clearance: f64,
    pub samples: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// One line per violation after a header and a summary line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "status\t{}", if self.passed() { "pass" } else { "fail" });
        let _ = writeln!(s, "samples\t{}", self.samples);
        let _ = writeln!(s, "min_pair_clearance\t{}", fmt_num(self.min_pair_clearance));
        let _ = writeln!(s, "min_boundary_clearance\t{}", fmt_num(self.min_boundary_clearance));
        let _ = writeln!(s, "kind\tsubject\ttime\tmagnitude\tthreshold");
        for v in &self.violations {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                v.kind.as_str(),
                v.subject,
                fmt_num(v.time),
                fmt_num(v.magnitude),
                fmt_num(v.threshold)
            );
        }
        s
    }
}

/// Fixed 9-significant-digit rendering used by all text artifacts.
pub fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{v:.8e}");
    let parsed: f64 = s.parse().unwrap_or(v);
    let short = format!("{parsed}");
    if short.len() <= s.len() {
        short
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub sample_dt: f64,
    pub clearance_slack: f64,
    pub pose_tol: PoseTolerance,
    pub limit_tol: f64,
    /// Collocation degree used to interpolate between samples.
    pub degree: usize,
}

impl ValidationOptions {
    pub fn for_scenario(scn: &Scenario) -> Self {
        Self {
            sample_dt: DEFAULT_SAMPLE_DT,
            clearance_slack: DEFAULT_CLEARANCE_SLACK,
            pose_tol: DEFAULT_ARRIVAL_TOL,
            limit_tol: DEFAULT_LIMIT_TOL,
            degree: scn.transcription.degree,
        }
    }
}

fn limit_violations(scn: &Scenario, id: &str, t: f64, s: &VehicleState, u: &ControlInput, tol: f64, out: &mut Vec<Violation>) {
    let lim = &scn.limits;
    let slack = |b: f64| b.abs() * tol;
    let mut push = |kind, field: &str, value: f64, bound: f64| {
        out.push(Violation { kind, subject: format!("{id}.{field}"), time: t, magnitude: value, threshold: bound })
    };
    if s.r.abs() > lim.r_max + slack(lim.r_max) {
        push(ViolationKind::StateLimit, "r", s.r, lim.r_max);
    }
    if s.beta.abs() > lim.beta_max + slack(lim.beta_max) {
        push(ViolationKind::StateLimit, "beta", s.beta, lim.beta_max);
    }
    if s.v > lim.v_max + slack(lim.v_max) {
        push(ViolationKind::StateLimit, "v", s.v, lim.v_max);
    }
    if s.v < lim.v_min - slack(lim.v_min) {
        push(ViolationKind::StateLimit, "v", s.v, lim.v_min);
    }
    if u.a.abs() > lim.a_max + slack(lim.a_max) {
        push(ViolationKind::InputLimit, "a", u.a, lim.a_max);
    }
    if u.delta.abs() > lim.delta_max + slack(lim.delta_max) {
        push(ViolationKind::InputLimit, "delta", u.delta, lim.delta_max);
    }
}

/// Dense audit of a solution: exact footprint distances, limits and terminal
/// pose, at `opts.sample_dt` spacing.
pub fn validate(scn: &Scenario, trajs: &[Trajectory], opts: &ValidationOptions) -> Result<ValidationReport> {
    if !(opts.sample_dt > 0.0) {
        return Err(AnalysisError::Argument(format!("sample_dt must be positive, got {}", opts.sample_dt)));
    }
    let fleet = match_fleet(scn, trajs)?;
    let owned: Vec<Trajectory> = fleet.iter().map(|t| (*t).clone()).collect();
    let t_end = common_horizon(&owned)?;
    let times = sample_times(t_end, opts.sample_dt);
    let dense: Vec<Trajectory> = owned.iter().map(|t| resample(t, opts.degree, &times)).collect();
    let boundaries = build_road_boundaries(&scn.layout);
    let n = dense.len();

    let per_sample = Exec::Parallel.map(times.len(), |k| -> Result<(Vec<Violation>, f64, f64)> {
        let t = times[k];
        let mut v = Vec::new();
        let feet: Vec<_> = dense
            .iter()
            .map(|tr| {
                let s = tr.states[k];
                footprint_at(scn, Pose::new(s.x, s.y, s.theta))
            })
            .collect();
        let mut min_pair = f64::INFINITY;
        let mut min_bnd = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let d = primal_distance(&feet[i], &feet[j])?;
                min_pair = min_pair.min(d);
                let thr = scn.safety.d_min - opts.clearance_slack;
                if d < thr {
                    v.push(Violation {
                        kind: ViolationKind::PairClearance,
                        subject: format!("{}~{}", dense[i].vehicle_id, dense[j].vehicle_id),
                        time: t,
                        magnitude: d,
                        threshold: thr,
                    });
                }
            }
            for (r, blk) in boundaries.iter().enumerate() {
                let d = primal_distance(&feet[i], blk)?;
                min_bnd = min_bnd.min(d);
                let thr = scn.safety.d_rmin - opts.clearance_slack;
                if d < thr {
                    v.push(Violation {
                        kind: ViolationKind::BoundaryClearance,
                        subject: format!("{}~boundary{r}", dense[i].vehicle_id),
                        time: t,
                        magnitude: d,
                        threshold: thr,
                    });
                }
            }
            limit_violations(scn, &dense[i].vehicle_id, t, &dense[i].states[k], &dense[i].controls[k], opts.limit_tol, &mut v);
        }
        Ok((v, min_pair, min_bnd))
    });
    let mut violations = Vec::new();
    let mut min_pair = f64::INFINITY;
    let mut min_bnd = f64::INFINITY;
    for r in per_sample {
        let (v, p, b) = r?;
        violations.extend(v);
        min_pair = min_pair.min(p);
        min_bnd = min_bnd.min(b);
    }
    for (spec, tr) in scn.vehicles.iter().zip(&fleet) {
        let last = tr.states.last().unwrap();
        let target = spec.terminal_pose();
        let pos_err = (last.x - target.x).hypot(last.y - target.y);
        let head_err = (last.theta - target.theta).abs();
        if pos_err > opts.pose_tol.position {
            violations.push(Violation {
                kind: ViolationKind::TerminalPose,
                subject: format!("{}.position", spec.id),
                time: t_end,
                magnitude: pos_err,
                threshold: opts.pose_tol.position,
            });
        }
        if head_err > opts.pose_tol.heading {
            violations.push(Violation {
                kind: ViolationKind::TerminalPose,
                subject: format!("{}.heading", spec.id),
                time: t_end,
                magnitude: head_err,
                threshold: opts.pose_tol.heading,
            });
        }
    }
    Ok(ValidationReport { violations, min_pair_clearance: min_pair, min_boundary_clearance: min_bnd, samples: times.len() })
}

/// Earliest time after which every vehicle stays within `tol` of its target,
/// judged on the trajectory samples.
pub fn crossing_time(scn: &Scenario, trajs: &[Trajectory], tol: PoseTolerance) -> Result<f64> {
    let fleet = match_fleet(scn, trajs)?;
    let mut worst: f64 = 0.0;
    for (spec, tr) in scn.vehicles.iter().zip(fleet) {
        let target = spec.terminal_pose();
        let inside: Vec<bool> = tr.states.iter().map(|s| tol.within(s, target)).collect();
        if !inside.last().copied().unwrap_or(false) {
            return Err(AnalysisError::NotArrived(spec.id.clone()));
        }
        let entry = match inside.iter().rposition(|&b| !b) {
            Some(i) => tr.times[i + 1],
            None => tr.times[0],
        };
        worst = worst.max(entry);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnergyConvention {
    /// Braking subtracts.
    #[default]
    Signed,
    /// Only traction work counts: integrand `max(0, a v)`.
    TractionOnly,
}

/// `m * integral(a v dt)` by the trapezoid rule, in kWh.
pub fn energy(traj: &Trajectory, mass: f64) -> f64 {
    energy_with(traj, mass, EnergyConvention::Signed)
}

pub fn energy_with(traj: &Trajectory, mass: f64, conv: EnergyConvention) -> f64 {
    let power = |k: usize| {
        let p = traj.controls[k].a * traj.states[k].v;
        match conv {
            EnergyConvention::Signed => p,
            EnergyConvention::TractionOnly => p.max(0.0),
        }
    };
    let mut joules = 0.0;
    for k in 1..traj.len() {
        joules += 0.5 * (power(k - 1) + power(k)) * (traj.times[k] - traj.times[k - 1]);
    }
    mass * joules / J_PER_KWH
}

/// Time-weighted mean and population standard deviation of speed over all
/// vehicles.
pub fn speed_stats(trajs: &[Trajectory]) -> (f64, f64) {
    let mut w_sum = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for tr in trajs {
        let n = tr.len();
        for k in 0..n {
            let left = if k > 0 { tr.times[k] - tr.times[k - 1] } else { 0.0 };
            let right = if k + 1 < n { tr.times[k + 1] - tr.times[k] } else { 0.0 };
            let w = if n == 1 { 1.0 } else { 0.5 * (left + right) };
            let v = tr.states[k].v;
            w_sum += w;
            m1 += w * v;
            m2 += w * v * v;
        }
    }
    if w_sum == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = m1 / w_sum;
    (mean, (m2 / w_sum - mean * mean).max(0.0).sqrt())
}

/// Maximum `|a|` and maximum `|jerk|`, the jerk by central differences of the
/// acceleration samples (one-sided at the ends).
pub fn comfort(traj: &Trajectory) -> (f64, f64) {
    let n = traj.len();
    let a: Vec<f64> = traj.controls.iter().map(|u| u.a).collect();
    let t = &traj.times;
    let max_a = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if n < 2 {
        return (max_a, 0.0);
    }
    let mut max_j = 0.0f64;
    for k in 0..n {
        let (i0, i1) = if k == 0 {
            (0, 1)
        } else if k + 1 == n {
            (n - 2, n - 1)
        } else {
            (k - 1, k + 1)
        };
        let dt = t[i1] - t[i0];
        if dt > 0.0 {
            max_j = max_j.max(((a[i1] - a[i0]) / dt).abs());
        }
    }
    (max_a, max_j)
}

/// One sample per collocation segment at its midpoint, carrying that
/// segment's control. Jerk of piecewise-constant controls is measured on this.
pub fn control_samples(traj: &Trajectory, degree: usize) -> Trajectory {
    let ip = Interpolant::new(traj, degree);
    let n_seg = (traj.len().max(1) - 1) / ip.seg;
    let times: Vec<f64> = (0..n_seg)
        .map(|k| 0.5 * (traj.times[k * ip.seg] + traj.times[(k + 1) * ip.seg]))
        .collect();
    resample(traj, degree, &times)
}

/// Fraction of samples with `|a| >= level * a_max`.
pub fn bang_bang_fraction(trajs: &[Trajectory], a_max: f64, level: f64) -> f64 {
    let total: usize = trajs.iter().map(|t| t.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let hits: usize =
        trajs.iter().flat_map(|t| t.controls.iter()).filter(|u| u.a.abs() >= level * a_max).count();
    hits as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub crossing_time: f64,
    pub lower_bound: f64,
    pub energy: Vec<(String, f64)>,
    pub total_energy: f64,
    pub mean_speed: f64,
    pub speed_std: f64,
    pub travelled_distance: f64,
    pub max_jerk: f64,
    pub max_accel: f64,
    pub min_pair_clearance: f64,
    pub min_boundary_clearance: f64,
    pub bang_bang_fraction: f64,
}

impl MetricsReport {
    /// Flat `key<TAB>value` document.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: f64| {
            let _ = writeln!(s, "{k}\t{}", fmt_num(v));
        };
        kv("crossing_time_s", self.crossing_time);
        kv("lower_bound_s", self.lower_bound);
        kv("total_energy_kwh", self.total_energy);
        kv("mean_speed_mps", self.mean_speed);
        kv("speed_std_mps", self.speed_std);
        kv("travelled_distance_m", self.travelled_distance);
        kv("max_jerk_mps3", self.max_jerk);
        kv("max_accel_mps2", self.max_accel);
        kv("min_pair_clearance_m", self.min_pair_clearance);
        kv("min_boundary_clearance_m", self.min_boundary_clearance);
        kv("bang_bang_fraction", self.bang_bang_fraction);
        for (id, e) in &self.energy {
            kv(&format!("energy_kwh.{id}"), *e);
        }
        s
    }
}

/// All metrics of a solution. Dense quantities use the `opts.sample_dt` grid.
pub fn metrics(scn: &Scenario, trajs: &[Trajectory], opts: &ValidationOptions, validation: &ValidationReport) -> Result<MetricsReport> {
    let fleet = match_fleet(scn, trajs)?;
    let owned: Vec<Trajectory> = fleet.iter().map(|t| (*t).clone()).collect();
    let t_end = common_horizon(&owned)?;
    let times = sample_times(t_end, opts.sample_dt);
    let dense: Vec<Trajectory> = owned.iter().map(|t| resample(t, opts.degree, &times)).collect();
    let crossing = crossing_time(scn, &owned, DEFAULT_ARRIVAL_TOL)?;
    let energy: Vec<(String, f64)> =
        dense.iter().map(|t| (t.vehicle_id.clone(), energy(t, scn.vehicle_params.m))).collect();
    let (mean_speed, speed_std) = speed_stats(&dense);
    let travelled_distance: f64 = dense
        .iter()
        .map(|t| (1..t.len()).map(|k| 0.5 * (t.states[k].v + t.states[k - 1].v) * (t.times[k] - t.times[k - 1])).sum::<f64>())
        .sum();
    let (mut max_accel, mut max_jerk) = (0.0f64, 0.0f64);
    for t in &owned {
        let (a, j) = comfort(&control_samples(t, opts.degree));
        max_accel = max_accel.max(a);
        max_jerk = max_jerk.max(j);
    }
    Ok(MetricsReport {
        crossing_time: crossing,
        lower_bound: crate::scenario::theoretical_lower_bound(scn),
        total_energy: energy.iter().map(|e| e.1).sum(),
        energy,
        mean_speed,
        speed_std,
        travelled_distance,
        max_jerk,
        max_accel,
        min_pair_clearance: validation.min_pair_clearance,
        min_boundary_clearance: validation.min_boundary_clearance,
        bang_bang_fraction: bang_bang_fraction(&dense, scn.limits.a_max, BANG_BANG_LEVEL),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub gamma: f64,
    /// `(crossing_time, total_energy)` or the failure reason.
    pub outcome: std::result::Result<(f64, f64), String>,
    pub dominated: bool,
}

/// Flags every successful point that another successful point weakly
/// dominates; of exact duplicates only the first is kept.
pub fn mark_dominated(points: &mut [ParetoPoint]) {
    let vals: Vec<Option<(f64, f64)>> = points.iter().map(|p| p.outcome.clone().ok()).collect();
    for i in 0..points.len() {
        points[i].dominated = match vals[i] {
            None => true,
            Some((ti, ei)) => vals.iter().enumerate().any(|(j, v)| match *v {
                Some((tj, ej)) if j != i => {
                    let weakly = tj <= ti && ej <= ei;
                    let strictly = tj < ti || ej < ei;
                    weakly && (strictly || j < i)
                }
                _ => false,
            }),
        };
    }
}

/// Independent solves per `gamma`, run concurrently, returned in input order.
pub fn pareto_sweep(scn: &Scenario, gammas: &[f64], ocp: &OcpOptions, solver: &SolverConfig) -> Result<Vec<ParetoPoint>> {
    if gammas.is_empty() {
        return Err(AnalysisError::Argument("no gamma values".into()));
    }
    if let Some(g) = gammas.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
        return Err(AnalysisError::Argument(format!("gamma must be finite and non-negative, got {g}")));
    }
    let run = |g: f64| -> std::result::Result<(f64, f64), String> {
        let mut s = scn.clone();
        s.weights.gamma = g;
        let p = plan(&s, ocp, solver).map_err(|e| e.to_string())?;
        if !p.converged() {
            return Err(format!("solver status {}", p.report.status));
        }
        let opts = ValidationOptions::for_scenario(&s);
        let trajs = &p.solution.trajectories;
        let t = crossing_time(&s, trajs, DEFAULT_ARRIVAL_TOL).map_err(|e| e.to_string())?;
        let times = sample_times(p.solution.tf, opts.sample_dt);
        let e = trajs.iter().map(|tr| energy(&resample(tr, opts.degree, &times), s.vehicle_params.m)).sum();
        Ok((t, e))
    };
    let outcomes = with_thread_cap(|| Exec::Parallel.map(gammas.len(), |i| run(gammas[i])));
    let mut points: Vec<ParetoPoint> = gammas
        .iter()
        .zip(outcomes)
        .map(|(&gamma, outcome)| ParetoPoint { gamma, outcome, dominated: false })
        .collect();
    mark_dominated(&mut points);
    Ok(points)
}

/// `gamma<TAB>crossing_time<TAB>energy<TAB>dominated<TAB>status` table.
pub fn pareto_table(points: &[ParetoPoint]) -> String {
    let mut s = String::from("gamma\tcrossing_time_s\ttotal_energy_kwh\tdominated\tstatus\n");
    for p in points {
        match &p.outcome {
            Ok((t, e)) => {
                let _ = writeln!(s, "{}\t{}\t{}\t{}\tok", fmt_num(p.gamma), fmt_num(*t), fmt_num(*e), p.dominated);
            }
            Err(msg) => {
                let _ = writeln!(s, "{}\tnan\tnan\t{}\tfailed: {msg}", fmt_num(p.gamma), p.dominated);
            }
        }
    }
    s
}
