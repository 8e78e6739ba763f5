//! Primal-dual interior-point method with a monotone barrier schedule,
//! inertia-correcting regularization and a filter line search.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ldl::{sym_matvec, Ldl};
use super::problem::NlpProblem;
use crate::ad::DomainError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kkt_tol: f64,
    pub max_iters: usize,
    pub initial_barrier: f64,
    pub barrier_shrink: f64,
    pub fraction_to_boundary: f64,
    /// Smallest nonzero primal regularization tried during inertia correction.
    pub regularization_floor: f64,
    /// Relative distance by which starting points are pushed inside bounds.
    pub bound_push: f64,
    /// Target ∞-norm of scaled gradients at the starting point.
    pub max_gradient: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            max_iters: 3000,
            initial_barrier: 0.1,
            barrier_shrink: 0.2,
            fraction_to_boundary: 0.995,
            regularization_floor: 1e-20,
            bound_push: 1e-2,
            max_gradient: 100.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        let pos = [
            ("kkt_tol", self.kkt_tol),
            ("initial_barrier", self.initial_barrier),
            ("barrier_shrink", self.barrier_shrink),
            ("fraction_to_boundary", self.fraction_to_boundary),
            ("regularization_floor", self.regularization_floor),
            ("bound_push", self.bound_push),
            ("max_gradient", self.max_gradient),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.barrier_shrink >= 1.0 {
            return Err("barrier_shrink must be below 1".into());
        }
        if self.fraction_to_boundary >= 1.0 {
            return Err("fraction_to_boundary must be below 1".into());
        }
        if self.bound_push >= 0.5 {
            return Err("bound_push must be below 0.5".into());
        }
        if self.max_iters == 0 {
            return Err("max_iters must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    RestorationFailed,
    SingularSystem,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::RestorationFailed => "restoration_failed",
            SolveStatus::SingularSystem => "singular_system",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// First-order optimality measures (∞-norms).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

/// Multipliers for the problem as scaled by the solver.
///
/// The Lagrangian is `obj_scale * f + sum_r y_r * row_scale_r * c_r
/// - z_lower.(x - x_lo) - z_upper.(x_hi - x)`. Unit scales describe the
/// unscaled problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub y: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub obj_scale: f64,
    pub row_scale: Vec<f64>,
}

impl Multipliers {
    pub fn unscaled(y: Vec<f64>, z_lower: Vec<f64>, z_upper: Vec<f64>) -> Self {
        let m = y.len();
        Self { y, z_lower, z_upper, obj_scale: 1.0, row_scale: vec![1.0; m] }
    }

    /// Constraint multipliers for the unscaled problem.
    pub fn y_unscaled(&self) -> Vec<f64> {
        self.y.iter().zip(&self.row_scale).map(|(y, s)| y * s / self.obj_scale).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KktError {
    #[error("{what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn dim(what: &'static str, expected: usize, got: usize) -> Result<(), KktError> {
    if expected != got {
        return Err(KktError::Dimension { what, expected, got });
    }
    Ok(())
}

/// KKT residuals of `p` at `x` under `mult`, measured on the problem scaled
/// by `mult.obj_scale` and `mult.row_scale`.
///
/// Row complementarity uses the bound each multiplier's sign points at:
/// `max(0, -y_r)` pairs with the lower row bound and `max(0, y_r)` with the
/// upper one.
pub fn kkt_residuals(p: &dyn NlpProblem, x: &[f64], mult: &Multipliers) -> Result<KktResiduals, KktError> {
    let n = p.n_vars();
    let m = p.n_cons();
    dim("x", n, x.len())?;
    dim("y", m, mult.y.len())?;
    dim("z_lower", n, mult.z_lower.len())?;
    dim("z_upper", n, mult.z_upper.len())?;
    dim("row_scale", m, mult.row_scale.len())?;
    let mut g = vec![0.0; n];
    p.gradient(x, &mut g)?;
    let mut c = vec![0.0; m];
    p.constraints(x, &mut c)?;
    let js = p.jacobian_structure();
    let mut jv = vec![0.0; js.len()];
    p.jacobian_values(x, &mut jv)?;
    let mut stat: Vec<f64> = g.iter().map(|v| v * mult.obj_scale).collect();
    for (&(r, col), &v) in js.iter().zip(&jv) {
        stat[col] += v * mult.row_scale[r] * mult.y[r];
    }
    let (xl, xu) = (p.var_lower(), p.var_upper());
    let (cl, cu) = (p.con_lower(), p.con_upper());
    let mut primal: f64 = 0.0;
    let mut compl: f64 = 0.0;
    for i in 0..n {
        stat[i] += mult.z_upper[i] - mult.z_lower[i];
        primal = primal.max(xl[i] - x[i]).max(x[i] - xu[i]);
        if xl[i].is_finite() {
            compl = compl.max((mult.z_lower[i] * (x[i] - xl[i])).abs());
        }
        if xu[i].is_finite() {
            compl = compl.max((mult.z_upper[i] * (xu[i] - x[i])).abs());
        }
    }
    for r in 0..m {
        let s = mult.row_scale[r];
        primal = primal.max((cl[r] - c[r]) * s).max((c[r] - cu[r]) * s);
        if cl[r] != cu[r] {
            if cl[r].is_finite() {
                compl = compl.max((-mult.y[r]).max(0.0) * (c[r] - cl[r]).abs() * s);
            }
            if cu[r].is_finite() {
                compl = compl.max(mult.y[r].max(0.0) * (cu[r] - c[r]).abs() * s);
            }
        }
    }
    let stationarity = stat.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(KktResiduals { stationarity, primal: primal.max(0.0), complementarity: compl })
}

/// One line of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub barrier: f64,
    /// Unscaled objective.
    pub objective: f64,
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub regularization: f64,
    pub line_search_trials: usize,
    /// Whether the iterate came from the feasibility restoration phase.
    pub restoration: bool,
}

pub const ITERATION_LOG_HEADER: &str =
    "iter\tbarrier\tobjective\tstationarity\tprimal\tcomplementarity\talpha_primal\talpha_dual\tregularization\tls";

/// Tab-separated iteration log with a header line.
pub fn iteration_log_tsv(records: &[IterationRecord]) -> String {
    let mut s = String::from(ITERATION_LOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{}\t{:.6e}\t{:.9e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.3e}\t{}",
            r.iter,
            r.barrier,
            r.objective,
            r.stationarity,
            r.primal,
            r.complementarity,
            r.alpha_primal,
            r.alpha_dual,
            r.regularization,
            r.line_search_trials
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    /// Unscaled objective at `x`.
    pub objective: f64,
    pub wall_time: f64,
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub log: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

const NONE: usize = usize::MAX;
const KAPPA_SIGMA: f64 = 1e10;
const KAPPA_D: f64 = 1e-5;
const ARMIJO: f64 = 1e-4;
const DUAL_REG: f64 = 1e-8;
const MAX_LS_TRIALS: usize = 40;
const MAX_RESTORATION: usize = 8;
const PROX_CUT: f64 = 0.1;
const PROX_GROW: f64 = 4.0;
const PROX_MIN: f64 = 1e-4;
const PROX_MAX: f64 = 1e6;

struct Work<'a> {
    p: &'a dyn NlpProblem,
    cfg: SolverConfig,
    n: usize,
    m: usize,
    nw: usize,
    obj_scale: f64,
    row_scale: Vec<f64>,
    c_lo: Vec<f64>,
    slack_of: Vec<usize>,
    w_lo: Vec<f64>,
    w_hi: Vec<f64>,
    has_lo: Vec<bool>,
    has_hi: Vec<bool>,
    jac_struct: Vec<(usize, usize)>,
    hess_struct: Vec<(usize, usize)>,
    kkt_entries: Vec<(usize, usize)>,
    ldl: Ldl,
}

#[derive(Clone)]
struct Iterate {
    w: Vec<f64>,
    y: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    grad: Vec<f64>,
    jac: Vec<f64>,
}

struct Step {
    dw: Vec<f64>,
    dy: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    reg: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

impl<'a> Work<'a> {
    fn eval_fc(&self, w: &[f64]) -> Result<(f64, Vec<f64>), DomainError> {
        let x = &w[..self.n];
        let f = self.p.objective(x)? * self.obj_scale;
        let mut c = vec![0.0; self.m];
        self.p.constraints(x, &mut c)?;
        for (ci, s) in c.iter_mut().zip(&self.row_scale) {
            *ci *= s;
        }
        Ok((f, c))
    }

    fn eval_derivs(&self, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DomainError> {
        let x = &w[..self.n];
        let mut g = vec![0.0; self.nw];
        self.p.gradient(x, &mut g[..self.n])?;
        for gi in g[..self.n].iter_mut() {
            *gi *= self.obj_scale;
        }
        let mut jv = vec![0.0; self.jac_struct.len()];
        self.p.jacobian_values(x, &mut jv)?;
        for (v, &(r, _)) in jv.iter_mut().zip(&self.jac_struct) {
            *v *= self.row_scale[r];
        }
        Ok((g, jv))
    }

    fn c_hat(&self, w: &[f64], c: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|r| match self.slack_of[r] {
                NONE => c[r] - self.c_lo[r],
                s => c[r] - w[s],
            })
            .collect()
    }

    fn barrier_value(&self, w: &[f64], f: f64, mu: f64) -> f64 {
        let mut phi = f;
        for i in 0..self.nw {
            if self.has_lo[i] {
                let g = w[i] - self.w_lo[i];
                phi -= mu * g.ln();
                if !self.has_hi[i] {
                    phi += KAPPA_D * mu * g;
                }
            }
            if self.has_hi[i] {
                let g = self.w_hi[i] - w[i];
                phi -= mu * g.ln();
                if !self.has_lo[i] {
                    phi += KAPPA_D * mu * g;
                }
            }
        }
        phi
    }

    fn barrier_grad(&self, w: &[f64], grad: &[f64], mu: f64) -> Vec<f64> {
        let mut g = grad.to_vec();
        for i in 0..self.nw {
            if self.has_lo[i] {
                g[i] -= mu / (w[i] - self.w_lo[i]);
                if !self.has_hi[i] {
                    g[i] += KAPPA_D * mu;
                }
            }
            if self.has_hi[i] {
                g[i] += mu / (self.w_hi[i] - w[i]);
                if !self.has_lo[i] {
                    g[i] -= KAPPA_D * mu;
                }
            }
        }
        g
    }

    /// `out += J_hat^T y`.
    fn add_jt_y(&self, jac: &[f64], y: &[f64], out: &mut [f64]) {
        for (&(r, col), &v) in self.jac_struct.iter().zip(jac) {
            out[col] += v * y[r];
        }
        for r in 0..self.m {
            if self.slack_of[r] != NONE {
                out[self.slack_of[r]] -= y[r];
            }
        }
    }

    fn stationarity(&self, it: &Iterate) -> Vec<f64> {
        let mut r = it.grad.clone();
        self.add_jt_y(&it.jac, &it.y, &mut r);
        for i in 0..self.nw {
            r[i] += it.zu[i] - it.zl[i];
        }
        r
    }

    fn complementarity(&self, it: &Iterate, mu: f64) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..self.nw {
            if self.has_lo[i] {
                e = e.max((it.zl[i] * (it.w[i] - self.w_lo[i]) - mu).abs());
            }
            if self.has_hi[i] {
                e = e.max((it.zu[i] * (self.w_hi[i] - it.w[i]) - mu).abs());
            }
        }
        e
    }

    fn error(&self, it: &Iterate, mu: f64) -> (f64, f64, f64) {
        let stat = inf_norm(&self.stationarity(it));
        let prim = inf_norm(&self.c_hat(&it.w, &it.c));
        let comp = self.complementarity(it, mu);
        (stat, prim, comp)
    }

    fn hessian(&self, it: &Iterate) -> Result<Vec<f64>, DomainError> {
        let ys: Vec<f64> = it.y.iter().zip(&self.row_scale).map(|(y, s)| y * s).collect();
        let mut hv = vec![0.0; self.hess_struct.len()];
        self.p.hessian_values(&it.w[..self.n], self.obj_scale, &ys, &mut hv)?;
        Ok(hv)
    }

    fn sigma(&self, it: &Iterate) -> Vec<f64> {
        (0..self.nw)
            .map(|i| {
                let mut s = 0.0;
                if self.has_lo[i] {
                    s += it.zl[i] / (it.w[i] - self.w_lo[i]);
                }
                if self.has_hi[i] {
                    s += it.zu[i] / (self.w_hi[i] - it.w[i]);
                }
                s
            })
            .collect()
    }

    fn kkt_values(&self, hess: &[f64], jac: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.kkt_entries.len());
        v.extend_from_slice(hess);
        v.extend_from_slice(jac);
        v.extend((0..self.m).filter(|&r| self.slack_of[r] != NONE).map(|_| -1.0));
        v
    }

    /// Solves with iterative refinement against the matrix with `diag_true`.
    fn solve_refined(&self, values: &[f64], diag_true: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.ldl.solve(&mut sol);
        let scale = 1.0 + inf_norm(rhs);
        let mut best = sol.clone();
        let mut best_res = f64::INFINITY;
        let mut kx = vec![0.0; rhs.len()];
        for _ in 0..10 {
            sym_matvec(&self.kkt_entries, values, diag_true, &sol, &mut kx);
            let res: Vec<f64> = rhs.iter().zip(&kx).map(|(b, k)| b - k).collect();
            let rn = inf_norm(&res);
            if !(rn < best_res) {
                break;
            }
            best_res = rn;
            best.copy_from_slice(&sol);
            if rn <= 1e-14 * scale {
                break;
            }
            let mut corr = res;
            self.ldl.solve(&mut corr);
            for (s, c) in sol.iter_mut().zip(&corr) {
                *s += c;
            }
        }
        best
    }

    /// Newton step with inertia correction. `min_reg` forces a minimum primal
    /// regularization (used by the restoration phase).
    fn compute_step(
        &mut self,
        it: &Iterate,
        hess: &[f64],
        mu: f64,
        reg_last: &mut f64,
        min_reg: f64,
    ) -> Option<(Step, Vec<f64>)> {
        let nw = self.nw;
        let values = self.kkt_values(hess, &it.jac);
        let sigma = self.sigma(it);
        let diag_max = values.iter().chain(&sigma).fold(1.0f64, |a, v| a.max(v.abs()));
        // Dual pivots are bounded away from zero by DUAL_REG; keep the threshold below it.
        let pivot_tol = (1e-16 * diag_max).min(1e-3 * DUAL_REG);
        let mut reg = min_reg;
        let mut diag = vec![0.0; nw + self.m];
        loop {
            for i in 0..nw {
                diag[i] = sigma[i] + reg;
            }
            for r in 0..self.m {
                diag[nw + r] = -DUAL_REG;
            }
            let inertia = self.ldl.factor(&values, &diag, pivot_tol).ok()?;
            if inertia.zero == 0 && inertia.positive == nw && inertia.negative == self.m {
                break;
            }
            reg = if reg == 0.0 {
                if *reg_last == 0.0 {
                    1e-4
                } else {
                    (*reg_last / 3.0).max(self.cfg.regularization_floor)
                }
            } else if *reg_last == 0.0 {
                reg * 100.0
            } else {
                reg * 8.0
            };
            if reg > 1e40 {
                return None;
            }
        }
        if reg > 0.0 {
            *reg_last = reg;
        }
        let mut diag_true = diag.clone();
        for r in 0..self.m {
            diag_true[nw + r] = 0.0;
        }
        let gphi = self.barrier_grad(&it.w, &it.grad, mu);
        let mut rhs = vec![0.0; nw + self.m];
        let mut r_top = gphi;
        self.add_jt_y(&it.jac, &it.y, &mut r_top);
        for i in 0..nw {
            rhs[i] = -r_top[i];
        }
        let ch = self.c_hat(&it.w, &it.c);
        for r in 0..self.m {
            rhs[nw + r] = -ch[r];
        }
        let sol = self.solve_refined(&values, &diag_true, &rhs);
        let dw = sol[..nw].to_vec();
        let dy = sol[nw..].to_vec();
        let (dzl, dzu) = self.dual_step(it, &dw, mu);
        Some((Step { dw, dy, dzl, dzu, reg }, rhs))
    }

    fn dual_step(&self, it: &Iterate, dw: &[f64], mu: f64) -> (Vec<f64>, Vec<f64>) {
        let mut dzl = vec![0.0; self.nw];
        let mut dzu = vec![0.0; self.nw];
        for i in 0..self.nw {
            if self.has_lo[i] {
                let g = it.w[i] - self.w_lo[i];
                dzl[i] = (mu - it.zl[i] * g - it.zl[i] * dw[i]) / g;
            }
            if self.has_hi[i] {
                let g = self.w_hi[i] - it.w[i];
                dzu[i] = (mu - it.zu[i] * g + it.zu[i] * dw[i]) / g;
            }
        }
        (dzl, dzu)
    }

    fn max_primal_step(&self, w: &[f64], dw: &[f64], tau: f64) -> f64 {
        let mut a: f64 = 1.0;
        for i in 0..self.nw {
            if self.has_lo[i] && dw[i] < 0.0 {
                a = a.min(-tau * (w[i] - self.w_lo[i]) / dw[i]);
            }
            if self.has_hi[i] && dw[i] > 0.0 {
                a = a.min(tau * (self.w_hi[i] - w[i]) / dw[i]);
            }
        }
        a
    }

    fn max_dual_step(&self, it: &Iterate, step: &Step, tau: f64) -> f64 {
        let mut a: f64 = 1.0;
        for i in 0..self.nw {
            if self.has_lo[i] && step.dzl[i] < 0.0 {
                a = a.min(-tau * it.zl[i] / step.dzl[i]);
            }
            if self.has_hi[i] && step.dzu[i] < 0.0 {
                a = a.min(-tau * it.zu[i] / step.dzu[i]);
            }
        }
        a
    }

    fn clamp_duals(&self, it: &mut Iterate, mu: f64) {
        for i in 0..self.nw {
            if self.has_lo[i] {
                let g = it.w[i] - self.w_lo[i];
                it.zl[i] = it.zl[i].clamp(mu / (KAPPA_SIGMA * g), KAPPA_SIGMA * mu / g);
            }
            if self.has_hi[i] {
                let g = self.w_hi[i] - it.w[i];
                it.zu[i] = it.zu[i].clamp(mu / (KAPPA_SIGMA * g), KAPPA_SIGMA * mu / g);
            }
        }
    }

    fn external_residuals(&self, it: &Iterate) -> Result<KktResiduals, KktError> {
        kkt_residuals(self.p, &it.w[..self.n], &self.multipliers(it))
    }

    fn multipliers(&self, it: &Iterate) -> Multipliers {
        Multipliers {
            y: it.y.clone(),
            z_lower: it.zl[..self.n].to_vec(),
            z_upper: it.zu[..self.n].to_vec(),
            obj_scale: self.obj_scale,
            row_scale: self.row_scale.clone(),
        }
    }
}

fn push_inside(v: f64, lo: f64, hi: f64, push: f64) -> f64 {
    let pl = if lo.is_finite() {
        let mut p = push * lo.abs().max(1.0);
        if hi.is_finite() {
            p = p.min(push * (hi - lo));
        }
        lo + p
    } else {
        f64::NEG_INFINITY
    };
    let pu = if hi.is_finite() {
        let mut p = push * hi.abs().max(1.0);
        if lo.is_finite() {
            p = p.min(push * (hi - lo));
        }
        hi - p
    } else {
        f64::INFINITY
    };
    if pl > pu {
        0.5 * (lo + hi)
    } else {
        v.clamp(pl, pu)
    }
}

/// Solves `p` from `x0`. Only dimension errors are returned as `Err`; every
/// numerical outcome is reported through [`SolveReport::status`].
pub fn solve(p: &dyn NlpProblem, x0: &[f64], cfg: &SolverConfig) -> Result<SolveReport, KktError> {
    let start = Instant::now();
    let n = p.n_vars();
    let m = p.n_cons();
    dim("x0", n, x0.len())?;
    let mut warnings = Vec::new();

    let mut x_lo = p.var_lower().to_vec();
    let mut x_hi = p.var_upper().to_vec();
    for i in 0..n {
        if x_lo[i] == x_hi[i] {
            let d = 1e-8 * x_lo[i].abs().max(1.0);
            x_lo[i] -= d;
            x_hi[i] += d;
            warnings.push(format!("fixed variable {} relaxed by {d:.1e}", p.var_name(i)));
        }
    }
    let mut x: Vec<f64> = x0.to_vec();
    let mut projected = 0;
    for i in 0..n {
        if x[i] < p.var_lower()[i] || x[i] > p.var_upper()[i] {
            projected += 1;
        }
        x[i] = push_inside(x[i], x_lo[i], x_hi[i], cfg.bound_push);
    }
    if projected > 0 {
        warnings.push(format!("{projected} starting values projected into their bounds"));
    }

    let jac_struct = p.jacobian_structure().to_vec();
    let hess_struct = p.hessian_structure().to_vec();
    let fail_report = |status, warnings: Vec<String>, msg: String, x: Vec<f64>| {
        let mut warnings = warnings;
        warnings.push(msg);
        SolveReport {
            status,
            iterations: 0,
            residuals: KktResiduals { stationarity: f64::INFINITY, primal: f64::INFINITY, complementarity: 0.0 },
            objective: f64::NAN,
            wall_time: start.elapsed().as_secs_f64(),
            x,
            multipliers: Multipliers::unscaled(vec![0.0; m], vec![0.0; n], vec![0.0; n]),
            log: Vec::new(),
            warnings,
        }
    };

    // Gradient-based scaling at the starting point.
    let mut g0 = vec![0.0; n];
    let mut jv0 = vec![0.0; jac_struct.len()];
    if let Err(e) = p.gradient(&x, &mut g0).and_then(|_| p.jacobian_values(&x, &mut jv0)) {
        return Ok(fail_report(SolveStatus::RestorationFailed, warnings, format!("evaluation failed at start: {e}"), x));
    }
    let gmax = inf_norm(&g0);
    let obj_scale = if gmax > cfg.max_gradient { cfg.max_gradient / gmax } else { 1.0 };
    let mut row_max = vec![0.0f64; m];
    for (&(r, _), &v) in jac_struct.iter().zip(&jv0) {
        row_max[r] = row_max[r].max(v.abs());
    }
    let row_scale: Vec<f64> =
        row_max.iter().map(|&g| if g > cfg.max_gradient { cfg.max_gradient / g } else { 1.0 }).collect();
    let c_lo: Vec<f64> = p.con_lower().iter().zip(&row_scale).map(|(v, s)| v * s).collect();
    let c_hi: Vec<f64> = p.con_upper().iter().zip(&row_scale).map(|(v, s)| v * s).collect();

    let mut slack_of = vec![NONE; m];
    let mut nw = n;
    for r in 0..m {
        if c_lo[r] != c_hi[r] {
            slack_of[r] = nw;
            nw += 1;
        }
    }
    let mut w_lo = x_lo.clone();
    let mut w_hi = x_hi.clone();
    for r in 0..m {
        if slack_of[r] != NONE {
            w_lo.push(c_lo[r]);
            w_hi.push(c_hi[r]);
        }
    }
    let has_lo: Vec<bool> = w_lo.iter().map(|v| v.is_finite()).collect();
    let has_hi: Vec<bool> = w_hi.iter().map(|v| v.is_finite()).collect();

    let mut kkt_entries: Vec<(usize, usize)> = hess_struct.clone();
    kkt_entries.extend(jac_struct.iter().map(|&(r, c)| (nw + r, c)));
    kkt_entries.extend((0..m).filter(|&r| slack_of[r] != NONE).map(|r| (nw + r, slack_of[r])));
    let ldl = match Ldl::analyze(nw + m, &kkt_entries) {
        Ok(l) => l,
        Err(e) => return Ok(fail_report(SolveStatus::SingularSystem, warnings, e.to_string(), x)),
    };

    let mut work = Work {
        p,
        cfg: *cfg,
        n,
        m,
        nw,
        obj_scale,
        row_scale,
        c_lo,
        slack_of,
        w_lo,
        w_hi,
        has_lo,
        has_hi,
        jac_struct,
        hess_struct,
        kkt_entries,
        ldl,
    };

    let (f0, c0) = match work.eval_fc(&[x.clone(), vec![0.0; nw - n]].concat()) {
        Ok(v) => v,
        Err(e) => {
            return Ok(fail_report(SolveStatus::RestorationFailed, warnings, format!("evaluation failed at start: {e}"), x))
        }
    };
    let mut w = x;
    for r in 0..m {
        if work.slack_of[r] != NONE {
            w.push(push_inside(c0[r], work.w_lo[work.slack_of[r]], work.w_hi[work.slack_of[r]], cfg.bound_push));
        }
    }
    let (grad, jac) = match work.eval_derivs(&w) {
        Ok(v) => v,
        Err(e) => {
            let x = w[..n].to_vec();
            return Ok(fail_report(SolveStatus::RestorationFailed, warnings, format!("evaluation failed at start: {e}"), x));
        }
    };
    let zl = (0..nw).map(|i| if work.has_lo[i] { 1.0 } else { 0.0 }).collect();
    let zu = (0..nw).map(|i| if work.has_hi[i] { 1.0 } else { 0.0 }).collect();
    let mut it = Iterate { w, y: vec![0.0; m], zl, zu, f: f0, c: c0, grad, jac };
    let mut filter = Filter::new(l1(&work.c_hat(&it.w, &it.c)));

    let mut mu = cfg.initial_barrier;
    let mu_min = cfg.kkt_tol / 10.0;
    let mut reg_last = 0.0;
    let mut prox = 0.0;
    let mut log = Vec::new();
    let mut iter = 0;
    let status;
    let mut last = IterationRecord {
        iter: 0,
        barrier: mu,
        objective: it.f / obj_scale,
        stationarity: 0.0,
        primal: 0.0,
        complementarity: 0.0,
        alpha_primal: 0.0,
        alpha_dual: 0.0,
        regularization: 0.0,
        line_search_trials: 0,
        restoration: false,
    };

    loop {
        let (stat, prim, comp) = work.error(&it, 0.0);
        last.stationarity = stat;
        last.primal = prim;
        last.complementarity = comp;
        last.barrier = mu;
        last.objective = it.f / obj_scale;
        log.push(last);
        if stat.max(prim).max(comp) <= cfg.kkt_tol {
            if let Ok(r) = work.external_residuals(&it) {
                if r.max() <= cfg.kkt_tol {
                    status = SolveStatus::Converged;
                    break;
                }
            }
        }
        loop {
            let (s, pr, c) = work.error(&it, mu);
            if s.max(pr).max(c) <= mu && mu > mu_min {
                mu = mu_min.max((cfg.barrier_shrink * mu).min(mu.powf(1.5)));
                filter.entries.clear();
            } else {
                break;
            }
        }
        if iter >= cfg.max_iters {
            status = SolveStatus::MaxIters;
            break;
        }
        let hess = match work.hessian(&it) {
            Ok(h) => h,
            Err(e) => {
                warnings.push(format!("hessian evaluation failed: {e}"));
                status = SolveStatus::RestorationFailed;
                break;
            }
        };
        let tau = cfg.fraction_to_boundary.max(1.0 - mu);
        let mut accepted = None;
        let mut min_reg = prox;
        let mut singular = false;
        for _ in 0..=MAX_RESTORATION {
            let Some((step, rhs)) = work.compute_step(&it, &hess, mu, &mut reg_last, min_reg) else {
                singular = true;
                break;
            };
            if let Some(acc) = line_search(&work, &it, &step, &rhs, mu, tau, &filter) {
                accepted = Some((Some(step), acc));
                break;
            }
            min_reg = (step.reg * 10.0).max(1e-4);
        }
        if singular {
            status = SolveStatus::SingularSystem;
            break;
        }
        if accepted.is_none() {
            let ch = work.c_hat(&it.w, &it.c);
            filter.add(l1(&ch), work.barrier_value(&it.w, it.f, mu));
            accepted = restore(&mut work, &it, mu, tau, &filter).map(|acc| (None, acc));
            if accepted.is_none() {
                warnings.push(format!("feasibility restoration failed at iteration {iter}"));
            }
        }
        let Some((step, acc)) = accepted else {
            status = SolveStatus::RestorationFailed;
            break;
        };
        if !acc.f_type && step.is_some() {
            let theta0 = l1(&work.c_hat(&it.w, &it.c));
            let phi0 = work.barrier_value(&it.w, it.f, mu);
            filter.add((1.0 - GAMMA_THETA) * theta0, phi0 - GAMMA_PHI * theta0);
        }
        // Proximal damping: heavily cut steps signal a poor local model, so the
        // next step is shortened; full steps relax the damping again.
        if acc.ratio < PROX_CUT {
            prox = (prox * PROX_GROW).clamp(PROX_MIN, PROX_MAX);
        } else if acc.ratio >= 0.5 {
            prox = if prox > PROX_MIN { prox / PROX_GROW } else { 0.0 };
        }
        let alpha_dual = step.as_ref().map_or(0.0, |s| work.max_dual_step(&it, s, tau));
        let (grad, jac) = match work.eval_derivs(&acc.w) {
            Ok(v) => v,
            Err(e) => {
                warnings.push(format!("derivative evaluation failed: {e}"));
                status = SolveStatus::RestorationFailed;
                break;
            }
        };
        if let Some(step) = &step {
            for r in 0..m {
                it.y[r] += acc.alpha * step.dy[r];
            }
            for i in 0..nw {
                it.zl[i] += alpha_dual * step.dzl[i];
                it.zu[i] += alpha_dual * step.dzu[i];
            }
        }
        it.w = acc.w;
        it.f = acc.f;
        it.c = acc.c;
        it.grad = grad;
        it.jac = jac;
        work.clamp_duals(&mut it, mu);
        iter += 1;
        last = IterationRecord {
            iter,
            barrier: mu,
            objective: it.f / obj_scale,
            stationarity: 0.0,
            primal: 0.0,
            complementarity: 0.0,
            alpha_primal: acc.alpha,
            alpha_dual,
            regularization: step.as_ref().map_or(0.0, |s| s.reg),
            line_search_trials: acc.trials,
            restoration: step.is_none(),
        };
    }

    let multipliers = work.multipliers(&it);
    let x = it.w[..n].to_vec();
    let residuals = match kkt_residuals(p, &x, &multipliers) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("final residual evaluation failed: {e}"));
            KktResiduals { stationarity: f64::INFINITY, primal: f64::INFINITY, complementarity: f64::INFINITY }
        }
    };
    Ok(SolveReport {
        status,
        iterations: iter,
        residuals,
        objective: it.f / obj_scale,
        wall_time: start.elapsed().as_secs_f64(),
        x,
        multipliers,
        log,
        warnings,
    })
}

struct Accepted {
    w: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    alpha: f64,
    trials: usize,
    /// Accepted step length relative to the fraction-to-boundary maximum.
    ratio: f64,
    /// Whether the step was accepted by the objective (Armijo) condition.
    f_type: bool,
}

/// Pairs (θ, φ) of constraint violation and barrier objective that trial
/// points must improve on.
struct Filter {
    entries: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
}

impl Filter {
    fn new(theta0: f64) -> Self {
        Self { entries: Vec::new(), theta_max: 1e4 * theta0.max(1.0), theta_min: 1e-4 * theta0.max(1.0) }
    }

    fn acceptable(&self, theta: f64, phi: f64) -> bool {
        theta <= self.theta_max && self.entries.iter().all(|&(t, p)| theta < t || phi < p)
    }

    fn add(&mut self, theta: f64, phi: f64) {
        self.entries.retain(|&(t, p)| t < theta || p < phi);
        self.entries.push((theta, phi));
    }
}

const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const SWITCH_DELTA: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const KAPPA_SOC: f64 = 0.99;
const MAX_SOC: usize = 4;
const MAX_FEAS_STEPS: usize = 200;

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

struct LsContext {
    theta0: f64,
    phi0: f64,
    dphi: f64,
}

impl LsContext {
    fn switching(&self, alpha: f64, filter: &Filter) -> bool {
        self.dphi < 0.0
            && self.theta0 <= filter.theta_min
            && alpha * (-self.dphi).powf(S_PHI) > SWITCH_DELTA * self.theta0.powf(S_THETA)
    }

    /// Acceptance of a trial point reached with step length `alpha`;
    /// `Some(f_type)` when accepted.
    fn accept(&self, alpha: f64, theta: f64, phi: f64, filter: &Filter) -> Option<bool> {
        if !phi.is_finite() || !filter.acceptable(theta, phi) {
            return None;
        }
        if self.switching(alpha, filter) {
            return (phi <= self.phi0 + ARMIJO * alpha * self.dphi).then_some(true);
        }
        (theta <= (1.0 - GAMMA_THETA) * self.theta0 || phi <= self.phi0 - GAMMA_PHI * self.theta0).then_some(false)
    }

    fn alpha_min(&self, filter: &Filter) -> f64 {
        let mut a = GAMMA_THETA;
        if self.dphi < 0.0 {
            a = a.min(GAMMA_PHI * self.theta0 / -self.dphi);
            if self.theta0 <= filter.theta_min {
                a = a.min(SWITCH_DELTA * self.theta0.powf(S_THETA) / (-self.dphi).powf(S_PHI));
            }
        }
        GAMMA_ALPHA * a
    }
}

/// Backtracking filter line search with second-order corrections. `None`
/// means the step length fell below the minimum.
#[allow(clippy::too_many_arguments)]
fn line_search(
    work: &Work<'_>,
    it: &Iterate,
    step: &Step,
    rhs: &[f64],
    mu: f64,
    tau: f64,
    filter: &Filter,
) -> Option<Accepted> {
    let nw = work.nw;
    let ch = work.c_hat(&it.w, &it.c);
    let gphi = work.barrier_grad(&it.w, &it.grad, mu);
    let ctx = LsContext {
        theta0: l1(&ch),
        phi0: work.barrier_value(&it.w, it.f, mu),
        dphi: gphi.iter().zip(&step.dw).map(|(g, d)| g * d).sum(),
    };
    let alpha_max = work.max_primal_step(&it.w, &step.dw, tau);
    let trial_point = |a: f64, d: &[f64]| -> Vec<f64> { it.w.iter().zip(d).map(|(w, d)| w + a * d).collect() };
    let measure = |w: &[f64]| -> Option<(f64, f64, f64, Vec<f64>)> {
        let (f, c) = work.eval_fc(w).ok()?;
        let theta = l1(&work.c_hat(w, &c));
        let phi = work.barrier_value(w, f, mu);
        phi.is_finite().then_some((theta, phi, f, c))
    };

    // Steps below round-off are accepted outright.
    let tiny = (0..nw).all(|i| (alpha_max * step.dw[i]).abs() <= 1e-15 * (1.0 + it.w[i].abs()));
    if tiny {
        let w = trial_point(alpha_max, &step.dw);
        let (_, _, f, c) = measure(&w)?;
        return Some(Accepted { w, f, c, alpha: alpha_max, trials: 1, ratio: 1.0, f_type: true });
    }
    let alpha_min = ctx.alpha_min(filter);
    let mut alpha = alpha_max;
    for trial in 1..=MAX_LS_TRIALS {
        if alpha < alpha_min {
            return None;
        }
        let w = trial_point(alpha, &step.dw);
        if let Some((theta, phi, f, c)) = measure(&w) {
            if let Some(f_type) = ctx.accept(alpha, theta, phi, filter) {
                return Some(Accepted { w, f, c, alpha, trials: trial, ratio: alpha / alpha_max, f_type });
            }
            if trial == 1 && theta >= ctx.theta0 {
                let mut c_soc: Vec<f64> =
                    ch.iter().zip(work.c_hat(&w, &c)).map(|(a0, a1)| alpha * a0 + a1).collect();
                let mut theta_prev = ctx.theta0;
                for _ in 0..MAX_SOC {
                    let mut sol = rhs.to_vec();
                    for r in 0..work.m {
                        sol[nw + r] = -c_soc[r];
                    }
                    work.ldl.solve(&mut sol);
                    let a = work.max_primal_step(&it.w, &sol[..nw], tau);
                    let ws = trial_point(a, &sol[..nw]);
                    let Some((th, ph, f, c)) = measure(&ws) else { break };
                    if let Some(f_type) = ctx.accept(alpha, th, ph, filter) {
                        return Some(Accepted { w: ws, f, c, alpha: a, trials: trial, ratio: 1.0, f_type });
                    }
                    if th > KAPPA_SOC * theta_prev {
                        break;
                    }
                    theta_prev = th;
                    c_soc = c_soc.iter().zip(work.c_hat(&ws, &c)).map(|(a0, a1)| a * a0 + a1).collect();
                }
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Feasibility restoration by damped Gauss-Newton steps on the constraint
/// residual, keeping the iterate interior. Returns once the point is
/// acceptable to the filter and the violation has dropped by a tenth.
fn restore(work: &mut Work<'_>, it: &Iterate, mu: f64, tau: f64, filter: &Filter) -> Option<Accepted> {
    let nw = work.nw;
    let theta_start = l1(&work.c_hat(&it.w, &it.c));
    let mut cur = it.clone();
    let mut damping = 1e-4f64;
    for k in 1..=MAX_FEAS_STEPS {
        let ch = work.c_hat(&cur.w, &cur.c);
        let theta = l1(&ch);
        let values = work.kkt_values(&vec![0.0; work.hess_struct.len()], &cur.jac);
        let sigma = work.sigma(&cur);
        let mut diag = vec![0.0; nw + work.m];
        for i in 0..nw {
            diag[i] = sigma[i] + damping;
        }
        for r in 0..work.m {
            diag[nw + r] = -DUAL_REG;
        }
        let diag_max = values.iter().chain(&sigma).fold(1.0f64, |a, v| a.max(v.abs()));
        work.ldl.factor(&values, &diag, (1e-16 * diag_max).min(1e-3 * DUAL_REG)).ok()?;
        let mut rhs = vec![0.0; nw + work.m];
        for r in 0..work.m {
            rhs[nw + r] = -ch[r];
        }
        let mut diag_true = diag.clone();
        for r in 0..work.m {
            diag_true[nw + r] = 0.0;
        }
        let sol = work.solve_refined(&values, &diag_true, &rhs);
        let d = &sol[..nw];
        let mut a = work.max_primal_step(&cur.w, d, tau);
        let mut moved = false;
        while a > 1e-8 {
            let w: Vec<f64> = cur.w.iter().zip(d).map(|(w, d)| w + a * d).collect();
            if let Ok((f, c)) = work.eval_fc(&w) {
                if l1(&work.c_hat(&w, &c)) <= (1.0 - 1e-4 * a) * theta {
                    cur.w = w;
                    cur.f = f;
                    cur.c = c;
                    moved = true;
                    break;
                }
            }
            a *= 0.5;
        }
        if !moved {
            damping *= 10.0;
            if damping > 1e8 {
                return None;
            }
            continue;
        }
        damping = (damping / 3.0).max(1e-8);
        let (grad, jac) = work.eval_derivs(&cur.w).ok()?;
        cur.grad = grad;
        cur.jac = jac;
        work.clamp_duals(&mut cur, mu);
        let theta_new = l1(&work.c_hat(&cur.w, &cur.c));
        let phi_new = work.barrier_value(&cur.w, cur.f, mu);
        if theta_new <= 0.9 * theta_start && filter.acceptable(theta_new, phi_new) {
            return Some(Accepted { w: cur.w, f: cur.f, c: cur.c, alpha: 0.0, trials: k, ratio: 0.0, f_type: false });
        }
    }
    None
}
