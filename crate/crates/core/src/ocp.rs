//! Transcription of the crossing problem into a sparse NLP.
//!
//! Every vehicle carries, per collocation interval `k`, a start state `S_k`,
//! `d` node states `X_{k,j}` and one piecewise-constant control `u_k`. All
//! vehicles share a single free final time `t_f`; dynamics are written on the
//! normalized horizon `tau in [0, 1]` and scaled by `t_f`.
//!
//! Collision avoidance uses the dual of the minimum-distance problem at every
//! collocation node: for a vehicle pair `(i, j)` the node carries multipliers
//! `lambda_ij`, `lambda_ji` and a vector `s` with
//!
//! ```text
//! -b_i' lambda_ij - b_j' lambda_ji >= d_min
//! A_i' lambda_ij + s = 0,  A_j' lambda_ji - s = 0,  s's <= 1,  lambda >= 0
//! ```
//!
//! where `(A_i, b_i)` is the footprint moved to the node pose. Road boundaries
//! use the same block with constant `(A_r, b_r)` and `d_rmin`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{Scalar, VectorFunction};
use crate::collocation::{collocation_coefficients, CollocationCoefficients, CollocationError, CollocationScheme};
use crate::exec::Exec;
use crate::geometry::{solve_dual, transform_polytope, DualCertificate, Polytope, Pose};
use crate::nlp::{Element, ElementNlp, ElementNlpParts, NlpError, Target};
use crate::scenario::{build_road_boundaries, theoretical_lower_bound, Scenario};
use crate::vehicle::{derived_params, ControlInput, DerivedParams, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranscriptionConfig {
    pub intervals: usize,
    pub degree: usize,
    pub scheme: CollocationScheme,
}

impl Default for TranscriptionConfig {
    fn default() -> Self {
        Self { intervals: 15, degree: 5, scheme: CollocationScheme::Radau }
    }
}

impl TranscriptionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.intervals == 0 {
            return Err("intervals must be at least 1".into());
        }
        if !(1..=9).contains(&self.degree) {
            return Err(format!("degree must be in 1..=9, got {}", self.degree));
        }
        if self.scheme != CollocationScheme::Radau {
            return Err(format!("unsupported collocation scheme {:?}", self.scheme));
        }
        Ok(())
    }
}

/// Assembly switches that are not part of the scenario document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcpOptions {
    /// Drop vehicle pairs whose straight corridors stay far apart.
    pub prune_pairs: bool,
    pub include_boundaries: bool,
    /// Half-widths `(position, heading)` of the band around the target pose
    /// imposed on the final node as linear rows; `(0, 0)` is exact arrival and
    /// `None` leaves the terminal pose to the objective alone.
    pub terminal_box: Option<(f64, f64)>,
    /// Require each node's separating hyperplane to also separate the poses
    /// of the preceding node, so that clearance holds between nodes.
    pub swept: bool,
    pub guess: GuessPath,
    pub exec: Exec,
}

/// Path followed by the initial guess between initial and terminal pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuessPath {
    /// Cubic curve tangent to the initial and terminal headings, with heading
    /// taken from the curve tangent.
    #[default]
    Curved,
    /// Straight-line interpolation of `(x, y, theta)`.
    Linear,
}

impl Default for OcpOptions {
    fn default() -> Self {
        Self { prune_pairs: false, include_boundaries: true, terminal_box: Some((0.0, 0.0)), swept: true, guess: GuessPath::Curved, exec: Exec::Parallel }
    }
}

/// Clearance margin beyond the inflated corridors below which a pair is kept.
pub const PRUNE_MARGIN: f64 = 2.0;

/// Upper bound on every polytope multiplier. All polytopes in the problem are
/// rectangles with unit row normals, so subtracting the common part of each
/// opposite-face pair maps any feasible certificate to one with entries at
/// most 1 and no smaller objective, so any cap of at least 1 leaves the set of
/// certified poses unchanged. The cap keeps the barrier from inflating
/// multipliers along the opposite-face null directions; it sits well above 1
/// so that it is never active at a solution.
pub const DUAL_CAP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    #[error("invalid transcription: {0}")]
    Config(String),
    #[error(transparent)]
    Collocation(#[from] CollocationError),
    #[error(transparent)]
    Nlp(#[from] NlpError),
    #[error("decision vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Dual variables of one vehicle pair or vehicle-boundary pair, stored per node
/// as `[lambda_1 (rows_1), lambda_2 (rows_2), s (2)]`.
///
/// With sweeping enabled, node `n` also carries `[lambda_1, lambda_2]` of a
/// second certificate for the poses of node `n - 1` (the start state for the
/// first node) that reuses the hyperplane normal `s` of node `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualBlock {
    pub first: usize,
    /// Second vehicle index, or boundary index for boundary blocks.
    pub second: usize,
    pub base: usize,
    pub sweep: Option<usize>,
}

/// Index map of the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionLayout {
    pub n_vehicles: usize,
    pub intervals: usize,
    pub degree: usize,
    pub footprint_rows: usize,
    pub boundary_rows: usize,
    vehicle_base: Vec<usize>,
    pub tf: usize,
    pub pairs: Vec<DualBlock>,
    pub boundaries: Vec<DualBlock>,
    pub n_vars: usize,
}

pub const N_STATE: usize = 6;
pub const N_CONTROL: usize = 2;
const IX: usize = 3;
const IY: usize = 4;
const ITH: usize = 5;

impl DecisionLayout {
    pub fn new(
        n_vehicles: usize,
        cfg: &TranscriptionConfig,
        footprint_rows: usize,
        boundary_rows: usize,
        pairs: &[(usize, usize)],
        boundaries: &[(usize, usize)],
        swept: bool,
    ) -> Self {
        let (k, d) = (cfg.intervals, cfg.degree);
        let per_vehicle = N_STATE * k + N_STATE * k * d + N_CONTROL * k;
        let vehicle_base: Vec<usize> = (0..n_vehicles).map(|v| v * per_vehicle).collect();
        let tf = n_vehicles * per_vehicle;
        let mut next = tf + 1;
        let nodes = k * d;
        let pair_width = 2 * footprint_rows + 2;
        let pairs = pairs
            .iter()
            .map(|&(i, j)| {
                let b = DualBlock { first: i, second: j, base: next, sweep: None };
                next += nodes * pair_width;
                b
            })
            .collect::<Vec<_>>();
        let bnd_width = footprint_rows + boundary_rows + 2;
        let boundaries = boundaries
            .iter()
            .map(|&(i, r)| {
                let b = DualBlock { first: i, second: r, base: next, sweep: None };
                next += nodes * bnd_width;
                b
            })
            .collect::<Vec<_>>();
        let (mut pairs, mut boundaries) = (pairs, boundaries);
        if swept {
            for b in pairs.iter_mut() {
                b.sweep = Some(next);
                next += nodes * 2 * footprint_rows;
            }
            for b in boundaries.iter_mut() {
                b.sweep = Some(next);
                next += nodes * (footprint_rows + boundary_rows);
            }
        }
        Self {
            n_vehicles,
            intervals: k,
            degree: d,
            footprint_rows,
            boundary_rows,
            vehicle_base,
            tf,
            pairs,
            boundaries,
            n_vars: next,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.intervals * self.degree
    }

    /// First index of the start state `S_k`.
    pub fn start(&self, v: usize, k: usize) -> usize {
        self.vehicle_base[v] + N_STATE * k
    }

    /// First index of node state `X_{k,j}`, `j` in `0..degree`.
    pub fn node(&self, v: usize, k: usize, j: usize) -> usize {
        self.vehicle_base[v] + N_STATE * self.intervals + N_STATE * (k * self.degree + j)
    }

    /// First index of control `u_k`.
    pub fn control(&self, v: usize, k: usize) -> usize {
        self.vehicle_base[v] + N_STATE * self.intervals * (1 + self.degree) + N_CONTROL * k
    }

    pub fn pair_width(&self) -> usize {
        2 * self.footprint_rows + 2
    }

    pub fn boundary_width(&self) -> usize {
        self.footprint_rows + self.boundary_rows + 2
    }

    /// First dual index of pair block `p` at global node `node = k*degree + j`.
    pub fn pair_node(&self, p: usize, node: usize) -> usize {
        self.pairs[p].base + node * self.pair_width()
    }

    pub fn boundary_node(&self, b: usize, node: usize) -> usize {
        self.boundaries[b].base + node * self.boundary_width()
    }

    /// First index of the swept multipliers of pair block `p` at `node`.
    pub fn pair_sweep(&self, p: usize, node: usize) -> Option<usize> {
        self.pairs[p].sweep.map(|b| b + node * 2 * self.footprint_rows)
    }

    pub fn boundary_sweep(&self, b: usize, node: usize) -> Option<usize> {
        self.boundaries[b].sweep.map(|s| s + node * (self.footprint_rows + self.boundary_rows))
    }

    /// First index of the state preceding global node `node`: the previous
    /// node, or the start state for node 0.
    pub fn previous_state(&self, v: usize, node: usize) -> usize {
        if node == 0 {
            self.start(v, 0)
        } else {
            let p = node - 1;
            self.node(v, p / self.degree, p % self.degree)
        }
    }

    /// Human-readable name of variable `i`.
    pub fn describe(&self, ids: &[String], i: usize) -> String {
        const STATE: [&str; 6] = ["r", "beta", "V", "x", "y", "theta"];
        if i == self.tf {
            return "t_f".into();
        }
        if i < self.tf {
            let per = self.tf / self.n_vehicles.max(1);
            let v = i / per;
            let off = i % per;
            let id = &ids[v];
            let n_start = N_STATE * self.intervals;
            let n_nodes = N_STATE * self.intervals * self.degree;
            return if off < n_start {
                format!("{id}.S[{}].{}", off / N_STATE, STATE[off % N_STATE])
            } else if off < n_start + n_nodes {
                let o = off - n_start;
                let node = o / N_STATE;
                format!("{id}.X[{},{}].{}", node / self.degree, node % self.degree, STATE[o % N_STATE])
            } else {
                let o = off - n_start - n_nodes;
                format!("{id}.u[{}].{}", o / N_CONTROL, ["a", "delta"][o % N_CONTROL])
            };
        }
        let dual_name = |blk: &DualBlock, width: usize, r1: usize, second: String| {
            let o = i - blk.base;
            let node = o / width;
            let w = o % width;
            let part = if w < r1 {
                format!("lambda1[{w}]")
            } else if w < width - 2 {
                format!("lambda2[{}]", w - r1)
            } else {
                format!("s[{}]", w - (width - 2))
            };
            format!("{}~{}.node[{node}].{part}", ids[blk.first], second)
        };
        let pw = self.pair_width();
        for blk in &self.pairs {
            if i >= blk.base && i < blk.base + self.n_nodes() * pw {
                return dual_name(blk, pw, self.footprint_rows, ids[blk.second].clone());
            }
        }
        let bw = self.boundary_width();
        for blk in &self.boundaries {
            if i >= blk.base && i < blk.base + self.n_nodes() * bw {
                return dual_name(blk, bw, self.footprint_rows, format!("boundary{}", blk.second));
            }
        }
        let sweep_name = |blk: &DualBlock, width: usize, second: String| -> Option<String> {
            let b = blk.sweep?;
            if i < b || i >= b + self.n_nodes() * width {
                return None;
            }
            let (node, w) = ((i - b) / width, (i - b) % width);
            let part = if w < self.footprint_rows {
                format!("lambda1[{w}]")
            } else {
                format!("lambda2[{}]", w - self.footprint_rows)
            };
            Some(format!("{}~{}.sweep[{node}].{part}", ids[blk.first], second))
        };
        for blk in &self.pairs {
            if let Some(n) = sweep_name(blk, 2 * self.footprint_rows, ids[blk.second].clone()) {
                return n;
            }
        }
        for blk in &self.boundaries {
            let w = self.footprint_rows + self.boundary_rows;
            if let Some(n) = sweep_name(blk, w, format!("boundary{}", blk.second)) {
                return n;
            }
        }
        format!("x[{i}]")
    }
}

/// Footprint row `k` moved to heading `theta`: `a_k R(theta)`.
fn rotated_row<T: Scalar>(a: [f64; 2], c: T, s: T) -> [T; 2] {
    [c * a[0] - s * a[1], s * a[0] + c * a[1]]
}

/// Nonlinear pieces of the transcribed problem.
#[derive(Debug, Clone)]
pub enum OcpElement {
    /// `-(t_f / K) f(X, u)` added to the six defect rows of one node.
    /// Locals: `[X (6), a, delta, t_f]`.
    Defect { vars: Vec<usize>, targets: Vec<Target>, params: VehicleParams, derived: DerivedParams, intervals: usize },
    /// `alpha * t_f^2`. Locals: `[t_f]`.
    Time { vars: Vec<usize>, targets: Vec<Target>, alpha: f64 },
    /// `(t_f / K) w_j [(z - z_T)' Q (z - z_T) + gamma a^2]`. Locals: `[x, y, theta, a, t_f]`.
    Running { vars: Vec<usize>, targets: Vec<Target>, weight: f64, target: [f64; 3], q: [f64; 9], gamma: f64 },
    /// Vehicle pair block. Locals: `[x_i, y_i, th_i, x_j, y_j, th_j, lambda_ij, lambda_ji, s]`.
    /// Rows: distance, the four equalities and, if `norm_row`, `|s|^2 <= 1`.
    Pair { vars: Vec<usize>, targets: Vec<Target>, base_a: Vec<[f64; 2]>, base_b: Vec<f64>, norm_row: bool },
    /// Vehicle-boundary block. Locals: `[x_i, y_i, th_i, lambda_ir, lambda_ri, s]`.
    Boundary {
        vars: Vec<usize>,
        targets: Vec<Target>,
        base_a: Vec<[f64; 2]>,
        base_b: Vec<f64>,
        obstacle: Polytope,
        norm_row: bool,
    },
}

impl Element for OcpElement {
    fn vars(&self) -> &[usize] {
        match self {
            OcpElement::Defect { vars, .. }
            | OcpElement::Time { vars, .. }
            | OcpElement::Running { vars, .. }
            | OcpElement::Pair { vars, .. }
            | OcpElement::Boundary { vars, .. } => vars,
        }
    }

    fn targets(&self) -> &[Target] {
        match self {
            OcpElement::Defect { targets, .. }
            | OcpElement::Time { targets, .. }
            | OcpElement::Running { targets, .. }
            | OcpElement::Pair { targets, .. }
            | OcpElement::Boundary { targets, .. } => targets,
        }
    }

    fn eval<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        match self {
            OcpElement::Defect { params, derived, intervals, .. } => {
                let f = crate::vehicle::dynamics_generic(&x[..6], &x[6..8], params, derived);
                let h = x[8] / *intervals as f64;
                for c in 0..6 {
                    out[c] = -(h * f[c]);
                }
            }
            OcpElement::Time { alpha, .. } => {
                out[0] = x[0] * x[0] * *alpha;
            }
            OcpElement::Running { weight, target, q, gamma, .. } => {
                let e = [x[0] - target[0], x[1] - target[1], x[2] - target[2]];
                let mut quad = T::zero();
                for r in 0..3 {
                    for c in 0..3 {
                        let qrc = q[3 * r + c];
                        if qrc != 0.0 {
                            quad += e[r] * e[c] * qrc;
                        }
                    }
                }
                if *gamma != 0.0 {
                    quad += x[3] * x[3] * *gamma;
                }
                out[0] = x[4] * quad * *weight;
            }
            OcpElement::Pair { base_a, base_b, norm_row, .. } => {
                let rows = base_a.len();
                let li = &x[6..6 + rows];
                let lj = &x[6 + rows..6 + 2 * rows];
                let s = [x[6 + 2 * rows], x[7 + 2 * rows]];
                let (ci, si) = (x[2].cos(), x[2].sin());
                let (cj, sj) = (x[5].cos(), x[5].sin());
                // With the equality rows holding, -b_i.l_i - b_j.l_j equals
                // s.(t_i - t_j) - b~.(l_i + l_j); this form has no rotation terms.
                let mut dist = s[0] * (x[0] - x[3]) + s[1] * (x[1] - x[4]);
                let mut gi = [s[0], s[1]];
                let mut gj = [-s[0], -s[1]];
                for k in 0..rows {
                    let ai = rotated_row(base_a[k], ci, si);
                    let aj = rotated_row(base_a[k], cj, sj);
                    dist -= (li[k] + lj[k]) * base_b[k];
                    gi[0] += ai[0] * li[k];
                    gi[1] += ai[1] * li[k];
                    gj[0] += aj[0] * lj[k];
                    gj[1] += aj[1] * lj[k];
                }
                out[0] = dist;
                out[1] = gi[0];
                out[2] = gi[1];
                out[3] = gj[0];
                out[4] = gj[1];
                if *norm_row {
                    out[5] = s[0] * s[0] + s[1] * s[1];
                }
            }
            OcpElement::Boundary { base_a, base_b, obstacle, norm_row, .. } => {
                let rows = base_a.len();
                let rr = obstacle.rows();
                let li = &x[3..3 + rows];
                let lr = &x[3 + rows..3 + rows + rr];
                let s = [x[3 + rows + rr], x[4 + rows + rr]];
                let (c, sn) = (x[2].cos(), x[2].sin());
                // Obstacle expressed in the vehicle-centred frame.
                let mut dist = T::zero();
                let mut gi = [s[0], s[1]];
                let mut gr = [-s[0], -s[1]];
                for k in 0..rows {
                    let ai = rotated_row(base_a[k], c, sn);
                    dist -= li[k] * base_b[k];
                    gi[0] += ai[0] * li[k];
                    gi[1] += ai[1] * li[k];
                }
                for k in 0..rr {
                    let a = obstacle.a()[k];
                    let br = T::cst(obstacle.b()[k]) - x[0] * a[0] - x[1] * a[1];
                    dist -= lr[k] * br;
                    gr[0] += lr[k] * a[0];
                    gr[1] += lr[k] * a[1];
                }
                out[0] = dist;
                out[1] = gi[0];
                out[2] = gi[1];
                out[3] = gr[0];
                out[4] = gr[1];
                if *norm_row {
                    out[5] = s[0] * s[0] + s[1] * s[1];
                }
            }
        }
    }
}

pub type OcpNlp = ElementNlp<OcpElement>;

/// The objective as a standalone function of the full decision vector.
pub struct ObjectiveFunction {
    n: usize,
    elements: Vec<OcpElement>,
}

impl VectorFunction for ObjectiveFunction {
    fn n_in(&self) -> usize {
        self.n
    }
    fn n_out(&self) -> usize {
        1
    }
    fn eval<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        let mut acc = T::zero();
        let mut local = Vec::new();
        let mut o = [T::zero()];
        for e in &self.elements {
            local.clear();
            local.extend(e.vars().iter().map(|&v| x[v]));
            e.eval(&local, &mut o);
            acc += o[0];
        }
        out[0] = acc;
    }
}

impl ObjectiveFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut out = [0.0];
        self.eval(x, &mut out);
        out[0]
    }
}

fn objective_elements(layout: &DecisionLayout, scn: &Scenario, coeffs: &CollocationCoefficients) -> Vec<OcpElement> {
    let w = &scn.weights;
    let mut out = vec![OcpElement::Time { vars: vec![layout.tf], targets: vec![Target::Objective], alpha: w.alpha }];
    let q_zero = w.q.iter().all(|&v| v == 0.0);
    if q_zero && w.gamma == 0.0 {
        return out;
    }
    for (v, spec) in scn.vehicles.iter().enumerate() {
        let target = [spec.terminal.x, spec.terminal.y, spec.terminal.theta];
        for k in 0..layout.intervals {
            let u = layout.control(v, k);
            for j in 0..layout.degree {
                let xn = layout.node(v, k, j);
                out.push(OcpElement::Running {
                    vars: vec![xn + IX, xn + IY, xn + ITH, u, layout.tf],
                    targets: vec![Target::Objective],
                    weight: coeffs.quadrature[j] / layout.intervals as f64,
                    target,
                    q: w.q,
                    gamma: w.gamma,
                });
            }
        }
    }
    out
}

/// The objective `alpha t_f^2 + integral of the pose-error and acceleration
/// terms`, with the integral taken by the collocation quadrature.
pub fn build_objective(layout: &DecisionLayout, scn: &Scenario) -> Result<ObjectiveFunction, OcpError> {
    let cfg = TranscriptionConfig { intervals: layout.intervals, degree: layout.degree, scheme: CollocationScheme::Radau };
    let coeffs = collocation_coefficients(cfg.degree, cfg.scheme)?;
    Ok(ObjectiveFunction { n: layout.n_vars, elements: objective_elements(layout, scn, &coeffs) })
}

fn segment_distance(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> f64 {
    let cross = |o: [f64; 2], p: [f64; 2], q: [f64; 2]| (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0]);
    let d1 = cross(b0, b1, a0);
    let d2 = cross(b0, b1, a1);
    let d3 = cross(a0, a1, b0);
    let d4 = cross(a0, a1, b1);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    let pd = |p: [f64; 2], s0: [f64; 2], s1: [f64; 2]| {
        let d = [s1[0] - s0[0], s1[1] - s0[1]];
        let l2 = d[0] * d[0] + d[1] * d[1];
        let t = if l2 > 0.0 { (((p[0] - s0[0]) * d[0] + (p[1] - s0[1]) * d[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
        (p[0] - s0[0] - t * d[0]).hypot(p[1] - s0[1] - t * d[1])
    };
    pd(a0, b0, b1).min(pd(a1, b0, b1)).min(pd(b0, a0, a1)).min(pd(b1, a0, a1))
}

/// Vehicle pairs that receive collision blocks.
pub fn collision_pairs(scn: &Scenario, prune: bool) -> Vec<(usize, usize)> {
    let n = scn.vehicles.len();
    let diag = scn.vehicle_params.body_length.hypot(scn.vehicle_params.body_width);
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if prune {
                let (a, b) = (&scn.vehicles[i], &scn.vehicles[j]);
                let d = segment_distance(
                    [a.initial.x, a.initial.y],
                    [a.terminal.x, a.terminal.y],
                    [b.initial.x, b.initial.y],
                    [b.terminal.x, b.terminal.y],
                );
                if d - diag - scn.safety.d_min >= PRUNE_MARGIN {
                    continue;
                }
            }
            out.push((i, j));
        }
    }
    out
}

/// Bounds `[lower, upper]` on the free final time.
pub fn final_time_bounds(scn: &Scenario) -> (f64, f64) {
    let lb = theoretical_lower_bound(scn);
    (0.5 * lb, (4.0 * lb).max(1.0))
}

/// Builds the NLP and its layout.
pub fn assemble(scn: &Scenario, cfg: &TranscriptionConfig, opts: &OcpOptions) -> Result<(OcpNlp, DecisionLayout), OcpError> {
    cfg.validate().map_err(OcpError::Config)?;
    let coeffs = collocation_coefficients(cfg.degree, cfg.scheme)?;
    let base = scn.footprint();
    let blocks = build_road_boundaries(&scn.layout);
    let nv = scn.vehicles.len();
    let pairs = collision_pairs(scn, opts.prune_pairs);
    let bnd: Vec<(usize, usize)> = if opts.include_boundaries {
        (0..nv).flat_map(|v| (0..blocks.len()).map(move |r| (v, r))).collect()
    } else {
        Vec::new()
    };
    let layout = DecisionLayout::new(nv, cfg, base.rows(), blocks[0].rows(), &pairs, &bnd, opts.swept);
    let (k_int, d) = (cfg.intervals, cfg.degree);
    let lim = &scn.limits;
    let inf = f64::INFINITY;

    let mut x_lo = vec![-inf; layout.n_vars];
    let mut x_hi = vec![inf; layout.n_vars];
    let mut c_lo = Vec::new();
    let mut c_hi = Vec::new();
    let mut linear = Vec::new();
    let mut elements = Vec::new();
    let row = |lo: f64, hi: f64, c_lo: &mut Vec<f64>, c_hi: &mut Vec<f64>| {
        c_lo.push(lo);
        c_hi.push(hi);
        c_lo.len() - 1
    };
    let derived = derived_params(&scn.vehicle_params);
    let state_lim = [lim.r_max, lim.beta_max];

    for (v, spec) in scn.vehicles.iter().enumerate() {
        let x0 = [0.0, 0.0, spec.initial.v, spec.initial.x, spec.initial.y, spec.initial.theta];
        let s0 = layout.start(v, 0);
        for c in 0..N_STATE {
            let r = row(x0[c], x0[c], &mut c_lo, &mut c_hi);
            linear.push((r, s0 + c, 1.0));
        }
        for k in 0..k_int {
            let u = layout.control(v, k);
            x_lo[u] = -lim.a_max;
            x_hi[u] = lim.a_max;
            x_lo[u + 1] = -lim.delta_max;
            x_hi[u + 1] = lim.delta_max;
            // Polynomial basis: tau_0 -> S_k, tau_{m+1} -> X_{k,m}.
            let basis = |m: usize| if m == 0 { layout.start(v, k) } else { layout.node(v, k, m - 1) };
            for j in 0..d {
                let xn = layout.node(v, k, j);
                for c in 0..2 {
                    x_lo[xn + c] = -state_lim[c];
                    x_hi[xn + c] = state_lim[c];
                }
                x_lo[xn + 2] = lim.v_min;
                x_hi[xn + 2] = lim.v_max;
                let mut targets = Vec::with_capacity(N_STATE);
                for c in 0..N_STATE {
                    let r = row(0.0, 0.0, &mut c_lo, &mut c_hi);
                    for m in 0..=d {
                        linear.push((r, basis(m) + c, coeffs.derivative[j][m]));
                    }
                    targets.push(Target::Row(r));
                }
                let mut vars: Vec<usize> = (0..N_STATE).map(|c| xn + c).collect();
                vars.extend([u, u + 1, layout.tf]);
                elements.push(OcpElement::Defect {
                    vars,
                    targets,
                    params: scn.vehicle_params,
                    derived,
                    intervals: k_int,
                });
            }
            if k + 1 < k_int {
                let next = layout.start(v, k + 1);
                for c in 0..N_STATE {
                    let r = row(0.0, 0.0, &mut c_lo, &mut c_hi);
                    linear.push((r, next + c, 1.0));
                    for m in 0..=d {
                        let w = coeffs.end_weights[m];
                        if w != 0.0 {
                            linear.push((r, basis(m) + c, -w));
                        }
                    }
                }
            }
        }
        if let Some((pos, head)) = opts.terminal_box {
            let last = layout.node(v, k_int - 1, d - 1);
            let t = [spec.terminal.x, spec.terminal.y, spec.terminal.theta];
            for (c, (tol, tv)) in [(pos, t[0]), (pos, t[1]), (head, t[2])].into_iter().enumerate() {
                let r = row(tv - tol, tv + tol, &mut c_lo, &mut c_hi);
                linear.push((r, last + IX + c, 1.0));
            }
        }
    }

    let (tf_lo, tf_hi) = final_time_bounds(scn);
    x_lo[layout.tf] = tf_lo;
    x_hi[layout.tf] = tf_hi;

    let rows_f = base.rows();
    let dual_rows = |dmin: f64, norm_row: bool, c_lo: &mut Vec<f64>, c_hi: &mut Vec<f64>| -> Vec<Target> {
        let mut t = vec![Target::Row(row(dmin, inf, c_lo, c_hi))];
        for _ in 0..4 {
            t.push(Target::Row(row(0.0, 0.0, c_lo, c_hi)));
        }
        if norm_row {
            t.push(Target::Row(row(-inf, 1.0, c_lo, c_hi)));
        }
        t
    };
    let pose = |at: usize| [at + IX, at + IY, at + ITH];
    for (p, blk) in layout.pairs.iter().enumerate() {
        for k in 0..k_int {
            for j in 0..d {
                let node = k * d + j;
                let xi = layout.node(blk.first, k, j);
                let xj = layout.node(blk.second, k, j);
                let db = layout.pair_node(p, node);
                let mut vars = vec![xi + IX, xi + IY, xi + ITH, xj + IX, xj + IY, xj + ITH];
                vars.extend(db..db + layout.pair_width());
                for l in 0..2 * rows_f {
                    x_lo[db + l] = 0.0;
                    x_hi[db + l] = DUAL_CAP;
                }
                let targets = dual_rows(scn.safety.d_min, true, &mut c_lo, &mut c_hi);
                elements.push(OcpElement::Pair {
                    vars,
                    targets,
                    base_a: base.a().to_vec(),
                    base_b: base.b().to_vec(),
                    norm_row: true,
                });
                if let Some(sw) = layout.pair_sweep(p, node) {
                    let mut vars: Vec<usize> = pose(layout.previous_state(blk.first, node)).to_vec();
                    vars.extend(pose(layout.previous_state(blk.second, node)));
                    vars.extend(sw..sw + 2 * rows_f);
                    vars.extend([db + 2 * rows_f, db + 2 * rows_f + 1]);
                    for l in sw..sw + 2 * rows_f {
                        x_lo[l] = 0.0;
                        x_hi[l] = DUAL_CAP;
                    }
                    let targets = dual_rows(scn.safety.d_min, false, &mut c_lo, &mut c_hi);
                    elements.push(OcpElement::Pair {
                        vars,
                        targets,
                        base_a: base.a().to_vec(),
                        base_b: base.b().to_vec(),
                        norm_row: false,
                    });
                }
            }
        }
    }
    for (b, blk) in layout.boundaries.iter().enumerate() {
        let obstacle = blocks[blk.second].clone();
        for k in 0..k_int {
            for j in 0..d {
                let node = k * d + j;
                let xi = layout.node(blk.first, k, j);
                let db = layout.boundary_node(b, node);
                let mut vars = vec![xi + IX, xi + IY, xi + ITH];
                vars.extend(db..db + layout.boundary_width());
                for l in 0..rows_f + obstacle.rows() {
                    x_lo[db + l] = 0.0;
                    x_hi[db + l] = DUAL_CAP;
                }
                let targets = dual_rows(scn.safety.d_rmin, true, &mut c_lo, &mut c_hi);
                elements.push(OcpElement::Boundary {
                    vars,
                    targets,
                    base_a: base.a().to_vec(),
                    base_b: base.b().to_vec(),
                    obstacle: obstacle.clone(),
                    norm_row: true,
                });
                if let Some(sw) = layout.boundary_sweep(b, node) {
                    let width = rows_f + obstacle.rows();
                    let mut vars: Vec<usize> = pose(layout.previous_state(blk.first, node)).to_vec();
                    vars.extend(sw..sw + width);
                    vars.extend([db + width, db + width + 1]);
                    for l in sw..sw + width {
                        x_lo[l] = 0.0;
                        x_hi[l] = DUAL_CAP;
                    }
                    let targets = dual_rows(scn.safety.d_rmin, false, &mut c_lo, &mut c_hi);
                    elements.push(OcpElement::Boundary {
                        vars,
                        targets,
                        base_a: base.a().to_vec(),
                        base_b: base.b().to_vec(),
                        obstacle: obstacle.clone(),
                        norm_row: false,
                    });
                }
            }
        }
    }
    elements.extend(objective_elements(&layout, scn, &coeffs));

    let ids: Vec<String> = scn.vehicles.iter().map(|v| v.id.clone()).collect();
    let names = (0..layout.n_vars).map(|i| layout.describe(&ids, i)).collect();
    let nlp = ElementNlp::new(ElementNlpParts { x_lo, x_hi, c_lo, c_hi, linear, elements, names }, opts.exec)?;
    Ok((nlp, layout))
}

/// Normalized time of node `j` of interval `k`.
fn node_tau(layout: &DecisionLayout, coeffs: &CollocationCoefficients, k: usize, j: usize) -> f64 {
    (k as f64 + coeffs.nodes[j]) / layout.intervals as f64
}

fn lerp_pose(a: Pose, b: Pose, t: f64) -> Pose {
    Pose::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.theta + t * (b.theta - a.theta))
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    a - two_pi * ((a + std::f64::consts::PI) / two_pi).floor()
}

/// Cubic Bezier from `a` to `b` leaving along `a.theta` and arriving along
/// `b.theta`, tabulated by arc length.
pub struct GuessCurve {
    a: Pose,
    b: Pose,
    ctrl: [[f64; 2]; 4],
    /// `(bezier parameter, cumulative arc length)`.
    table: Vec<(f64, f64)>,
}

const CURVE_SAMPLES: usize = 512;

impl GuessCurve {
    pub fn new(a: Pose, b: Pose) -> Self {
        let (h0, h3) = ([a.theta.cos(), a.theta.sin()], [b.theta.cos(), b.theta.sin()]);
        let chord = (b.x - a.x).hypot(b.y - a.y);
        // Meeting point of the two heading rays: a + s h0 = b - u h3.
        let det = h0[0] * h3[1] - h0[1] * h3[0];
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let (mut l0, mut l3) = (chord / 3.0, chord / 3.0);
        if det.abs() > 1e-6 {
            let s = (dx * h3[1] - dy * h3[0]) / det;
            let u = (h0[0] * dy - h0[1] * dx) / det;
            if s > 0.0 && u > 0.0 {
                l0 = s;
                l3 = u;
            }
        }
        let ctrl = [
            [a.x, a.y],
            [a.x + l0 * h0[0], a.y + l0 * h0[1]],
            [b.x - l3 * h3[0], b.y - l3 * h3[1]],
            [b.x, b.y],
        ];
        let mut table = Vec::with_capacity(CURVE_SAMPLES + 1);
        let mut len = 0.0;
        let mut prev = ctrl[0];
        for k in 0..=CURVE_SAMPLES {
            let t = k as f64 / CURVE_SAMPLES as f64;
            let p = Self::point(&ctrl, t);
            len += (p[0] - prev[0]).hypot(p[1] - prev[1]);
            table.push((t, len));
            prev = p;
        }
        Self { a, b, ctrl, table }
    }

    fn point(c: &[[f64; 2]; 4], t: f64) -> [f64; 2] {
        let u = 1.0 - t;
        let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
        [0, 1].map(|i| w.iter().zip(c).map(|(w, p)| w * p[i]).sum())
    }

    fn tangent(c: &[[f64; 2]; 4], t: f64) -> [f64; 2] {
        let u = 1.0 - t;
        let w = [3.0 * u * u, 6.0 * u * t, 3.0 * t * t];
        [0, 1].map(|i| w[0] * (c[1][i] - c[0][i]) + w[1] * (c[2][i] - c[1][i]) + w[2] * (c[3][i] - c[2][i]))
    }

    fn parameter_at(&self, frac: f64) -> f64 {
        let total = self.table.last().map_or(0.0, |e| e.1);
        if total <= 0.0 {
            return frac;
        }
        let target = frac.clamp(0.0, 1.0) * total;
        let k = self.table.partition_point(|e| e.1 < target).clamp(1, self.table.len() - 1);
        let (t0, s0) = self.table[k - 1];
        let (t1, s1) = self.table[k];
        if s1 > s0 {
            t0 + (t1 - t0) * (target - s0) / (s1 - s0)
        } else {
            t1
        }
    }

    fn raw_heading(&self, t: f64, prev: f64) -> f64 {
        let d = Self::tangent(&self.ctrl, t);
        if d[0].hypot(d[1]) < 1e-12 {
            return prev;
        }
        prev + wrap_angle(d[1].atan2(d[0]) - prev)
    }

    /// Pose at arc-length fraction `frac` in [0, 1].
    pub fn pose(&self, frac: f64) -> Pose {
        let total = self.table.last().map_or(0.0, |e| e.1);
        if total <= 1e-9 {
            return lerp_pose(self.a, self.b, frac);
        }
        let t = self.parameter_at(frac);
        let p = Self::point(&self.ctrl, t);
        let th = self.raw_heading(t, self.a.theta);
        // Close any multiple-of-2pi gap at the end so the guess meets the target exactly.
        let th_end = self.raw_heading(1.0, self.a.theta);
        let th0 = self.raw_heading(0.0, self.a.theta);
        let th = th + (self.a.theta - th0) * (1.0 - frac) + (self.b.theta - th_end) * frac;
        Pose::new(p[0], p[1], th)
    }
}
/// Floor applied to multiplier guesses so they start strictly inside `lambda >= 0`.
pub const DUAL_FLOOR: f64 = 1e-4;

fn floored(cert: &DualCertificate) -> (Vec<f64>, Vec<f64>, [f64; 2]) {
    (
        cert.lambda_pq.iter().map(|v| v.max(DUAL_FLOOR)).collect(),
        cert.lambda_qp.iter().map(|v| v.max(DUAL_FLOOR)).collect(),
        cert.s,
    )
}

/// Initial guess: poses along `path` at constant initial speed, zero
/// controls, `t_f = 1.2` times the lower bound, and multipliers from the
/// exact dual solution at the guessed poses.
pub fn initial_guess(scn: &Scenario, layout: &DecisionLayout, path: GuessPath) -> Result<Vec<f64>, OcpError> {
    let coeffs = collocation_coefficients(layout.degree, CollocationScheme::Radau)?;
    let mut x = vec![0.0; layout.n_vars];
    let curves: Vec<GuessCurve> =
        scn.vehicles.iter().map(|s| GuessCurve::new(s.initial_pose(), s.terminal_pose())).collect();
    let pose_at = |v: usize, tau: f64| match path {
        GuessPath::Curved => curves[v].pose(tau),
        GuessPath::Linear => {
            let s = &scn.vehicles[v];
            lerp_pose(s.initial_pose(), s.terminal_pose(), tau)
        }
    };
    for (v, spec) in scn.vehicles.iter().enumerate() {
        for k in 0..layout.intervals {
            let mut put = |idx: usize, tau: f64| {
                let p = pose_at(v, tau);
                x[idx..idx + N_STATE].copy_from_slice(&[0.0, 0.0, spec.initial.v, p.x, p.y, p.theta]);
            };
            put(layout.start(v, k), k as f64 / layout.intervals as f64);
            for j in 0..layout.degree {
                put(layout.node(v, k, j), node_tau(layout, &coeffs, k, j));
            }
        }
    }
    let lb = theoretical_lower_bound(scn);
    let (lo, hi) = final_time_bounds(scn);
    x[layout.tf] = (1.2 * lb).clamp(lo, hi);

    let base = scn.footprint();
    let blocks = build_road_boundaries(&scn.layout);
    let footprints: Vec<Vec<Polytope>> = (0..layout.n_vehicles)
        .map(|v| {
            (0..layout.intervals)
                .flat_map(|k| (0..layout.degree).map(move |j| (k, j)))
                .map(|(k, j)| transform_polytope(&base, pose_at(v, node_tau(layout, &coeffs, k, j))))
                .collect()
        })
        .collect();
    let rf = layout.footprint_rows;
    let mut write = |at: usize, cert: &DualCertificate, r2: usize| {
        let (l1, l2, s) = floored(cert);
        x[at..at + rf].copy_from_slice(&l1);
        x[at + rf..at + rf + r2].copy_from_slice(&l2);
        x[at + rf + r2] = s[0];
        x[at + rf + r2 + 1] = s[1];
    };
    let start_fp: Vec<Polytope> =
        (0..layout.n_vehicles).map(|v| transform_polytope(&base, pose_at(v, 0.0))).collect();
    let previous = |v: usize, node: usize| if node == 0 { &start_fp[v] } else { &footprints[v][node - 1] };
    let mut sweeps = Vec::new();
    for (p, blk) in layout.pairs.iter().enumerate() {
        for node in 0..layout.n_nodes() {
            let (cert, _) = solve_dual(&footprints[blk.first][node], &footprints[blk.second][node])
                .unwrap_or_else(|_| (DualCertificate::zeros(rf, rf), 0.0));
            write(layout.pair_node(p, node), &cert, rf);
            if let Some(sw) = layout.pair_sweep(p, node) {
                let (cert, _) = solve_dual(previous(blk.first, node), previous(blk.second, node))
                    .unwrap_or_else(|_| (DualCertificate::zeros(rf, rf), 0.0));
                sweeps.push((sw, cert));
            }
        }
    }
    let rb = layout.boundary_rows;
    for (b, blk) in layout.boundaries.iter().enumerate() {
        for node in 0..layout.n_nodes() {
            let (cert, _) = solve_dual(&footprints[blk.first][node], &blocks[blk.second])
                .unwrap_or_else(|_| (DualCertificate::zeros(rf, rb), 0.0));
            write(layout.boundary_node(b, node), &cert, rb);
            if let Some(sw) = layout.boundary_sweep(b, node) {
                let (cert, _) = solve_dual(previous(blk.first, node), &blocks[blk.second])
                    .unwrap_or_else(|_| (DualCertificate::zeros(rf, rb), 0.0));
                sweeps.push((sw, cert));
            }
        }
    }
    for (at, cert) in sweeps {
        let (l1, l2, _) = floored(&cert);
        x[at..at + l1.len()].copy_from_slice(&l1);
        x[at + l1.len()..at + l1.len() + l2.len()].copy_from_slice(&l2);
    }
    Ok(x)
}

/// Time-indexed solution of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub vehicle_id: String,
    pub times: Vec<f64>,
    pub states: Vec<VehicleState>,
    /// Control in force at each sample (the interval's piecewise-constant value).
    pub controls: Vec<ControlInput>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Dual multipliers of one block at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateSeries {
    pub first: usize,
    /// Second vehicle, or boundary index.
    pub second: usize,
    pub boundary: bool,
    pub times: Vec<f64>,
    pub certificates: Vec<DualCertificate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub trajectories: Vec<Trajectory>,
    /// Controls per interval for every vehicle.
    pub interval_controls: Vec<Vec<ControlInput>>,
    pub tf: f64,
    pub certificates: Vec<CertificateSeries>,
}

/// Splits a decision vector into trajectories sampled at `t = 0` and every
/// collocation node, the final time and the dual certificates.
pub fn extract(x: &[f64], layout: &DecisionLayout, scn: &Scenario) -> Result<Extracted, OcpError> {
    if x.len() != layout.n_vars {
        return Err(OcpError::Dimension { expected: layout.n_vars, got: x.len() });
    }
    let coeffs = collocation_coefficients(layout.degree, CollocationScheme::Radau)?;
    let tf = x[layout.tf];
    let state = |i: usize| VehicleState::from_array(std::array::from_fn(|c| x[i + c]));
    let control = |i: usize| ControlInput { a: x[i], delta: x[i + 1] };
    let mut trajectories = Vec::new();
    let mut interval_controls = Vec::new();
    for (v, spec) in scn.vehicles.iter().enumerate() {
        let us: Vec<ControlInput> = (0..layout.intervals).map(|k| control(layout.control(v, k))).collect();
        let mut times = vec![0.0];
        let mut states = vec![state(layout.start(v, 0))];
        let mut controls = vec![us[0]];
        for k in 0..layout.intervals {
            for j in 0..layout.degree {
                times.push(tf * node_tau(layout, &coeffs, k, j));
                states.push(state(layout.node(v, k, j)));
                controls.push(us[k]);
            }
        }
        trajectories.push(Trajectory { vehicle_id: spec.id.clone(), times, states, controls });
        interval_controls.push(us);
    }
    let node_times: Vec<f64> = (0..layout.intervals)
        .flat_map(|k| (0..layout.degree).map(move |j| (k, j)))
        .map(|(k, j)| tf * node_tau(layout, &coeffs, k, j))
        .collect();
    let rf = layout.footprint_rows;
    let read = |at: usize, r2: usize| DualCertificate {
        lambda_pq: x[at..at + rf].to_vec(),
        lambda_qp: x[at + rf..at + rf + r2].to_vec(),
        s: [x[at + rf + r2], x[at + rf + r2 + 1]],
    };
    let mut certificates = Vec::new();
    for (p, blk) in layout.pairs.iter().enumerate() {
        certificates.push(CertificateSeries {
            first: blk.first,
            second: blk.second,
            boundary: false,
            times: node_times.clone(),
            certificates: (0..layout.n_nodes()).map(|n| read(layout.pair_node(p, n), rf)).collect(),
        });
    }
    for (b, blk) in layout.boundaries.iter().enumerate() {
        certificates.push(CertificateSeries {
            first: blk.first,
            second: blk.second,
            boundary: true,
            times: node_times.clone(),
            certificates: (0..layout.n_nodes())
                .map(|n| read(layout.boundary_node(b, n), layout.boundary_rows))
                .collect(),
        });
    }
    Ok(Extracted { trajectories, interval_controls, tf, certificates })
}
