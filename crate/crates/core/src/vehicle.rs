//! Bicycle-model kinematics with sideslip and yaw-rate states, dynamic limits,
//! and a fixed-step RK4 reference integrator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VehicleError {
    #[error("speed {speed} is not positive; the model is singular at V <= 0")]
    Singular { speed: f64 },
    #[error("speed reached {speed} during integration step {step}")]
    SingularAtStep { step: usize, speed: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Physical parameters of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub m: f64,
    #[serde(rename = "I_z")]
    pub i_z: f64,
    pub l_f: f64,
    pub l_r: f64,
    #[serde(rename = "C_F")]
    pub c_f: f64,
    #[serde(rename = "C_R")]
    pub c_r: f64,
    pub body_length: f64,
    pub body_width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            m: 1204.0,
            i_z: 1500.0,
            l_f: 1.2,
            l_r: 1.4,
            c_f: -60000.0,
            c_r: -60000.0,
            body_length: 4.5,
            body_width: 2.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("m", self.m),
            ("I_z", self.i_z),
            ("l_f", self.l_f),
            ("l_r", self.l_r),
            ("body_length", self.body_length),
            ("body_width", self.body_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !self.c_f.is_finite() || !self.c_r.is_finite() {
            return Err("cornering stiffness must be finite".into());
        }
        Ok(())
    }
}

/// Lumped stability derivatives of the lateral model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub n_r_tilde: f64,
    pub n_beta: f64,
    pub n_delta: f64,
    pub y_r_tilde: f64,
    pub y_beta: f64,
    pub y_delta: f64,
}

pub fn derived_params(p: &VehicleParams) -> DerivedParams {
    DerivedParams {
        n_r_tilde: p.l_f * p.l_f * p.c_f + p.l_r * p.l_r * p.c_r,
        n_beta: p.l_f * p.c_f - p.l_r * p.c_r,
        n_delta: -p.l_f * p.c_f,
        y_r_tilde: p.l_f * p.c_f - p.l_r * p.c_r,
        y_beta: p.c_f + p.c_r,
        y_delta: -p.c_f,
    }
}

/// `[r, beta, V, x, y, theta]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub r: f64,
    pub beta: f64,
    pub v: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl VehicleState {
    pub fn to_array(self) -> [f64; 6] {
        [self.r, self.beta, self.v, self.x, self.y, self.theta]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { r: a[0], beta: a[1], v: a[2], x: a[3], y: a[4], theta: a[5] }
    }
}

/// `[a, delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub a: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    #[serde(rename = "V_min")]
    pub v_min: f64,
    #[serde(rename = "V_max")]
    pub v_max: f64,
    pub a_max: f64,
    pub delta_max: f64,
    pub r_max: f64,
    pub beta_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { v_min: 0.5, v_max: 25.0, a_max: 3.0, delta_max: 0.67, r_max: 0.7, beta_max: 0.5 }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.v_min > 0.0) {
            return Err(format!("V_min must be positive, got {}", self.v_min));
        }
        for (name, v) in [
            ("V_max", self.v_max),
            ("a_max", self.a_max),
            ("delta_max", self.delta_max),
            ("r_max", self.r_max),
            ("beta_max", self.beta_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.v_min < self.v_max) {
            return Err(format!("V_min {} must be below V_max {}", self.v_min, self.v_max));
        }
        Ok(())
    }
}

/// State derivative written against [`Scalar`] so the collocation defects can
/// be differentiated. `state` is `[r, beta, V, x, y, theta]`, `input` is `[a, delta]`.
pub fn dynamics_generic<T: Scalar>(
    state: &[T],
    input: &[T],
    p: &VehicleParams,
    d: &DerivedParams,
) -> [T; 6] {
    let (r, beta, v, theta) = (state[0], state[1], state[2], state[5]);
    let (a, delta) = (input[0], input[1]);
    let r_dot = r * (d.n_r_tilde / p.i_z) / v + beta * (d.n_beta / p.i_z) + delta * (d.n_delta / p.i_z);
    let beta_dot = r * ((T::cst(d.y_r_tilde / p.m) / (v * v)) - 1.0)
        + beta * (d.y_beta / p.m) / v
        + delta * (d.y_delta / p.m) / v;
    [r_dot, beta_dot, a, v * theta.cos(), v * theta.sin(), r]
}

/// State derivative `[r', beta', V', x', y', theta']`.
pub fn dynamics(s: &VehicleState, u: &ControlInput, p: &VehicleParams) -> Result<[f64; 6], VehicleError> {
    if !(s.v > 0.0) {
        return Err(VehicleError::Singular { speed: s.v });
    }
    let d = derived_params(p);
    Ok(dynamics_generic(&s.to_array(), &[u.a, u.delta], p, &d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimitViolation {
    pub field: &'static str,
    pub value: f64,
    pub bound: f64,
}

/// All bounds are inclusive magnitude caps (plus the speed window).
pub fn check_limits(s: &VehicleState, u: &ControlInput, lim: &Limits) -> Vec<LimitViolation> {
    let mut out = Vec::new();
    if s.v < lim.v_min {
        out.push(LimitViolation { field: "V", value: s.v, bound: lim.v_min });
    }
    if s.v > lim.v_max {
        out.push(LimitViolation { field: "V", value: s.v, bound: lim.v_max });
    }
    for (field, value, bound) in [
        ("a", u.a, lim.a_max),
        ("delta", u.delta, lim.delta_max),
        ("r", s.r, lim.r_max),
        ("beta", s.beta, lim.beta_max),
    ] {
        if value.abs() > bound {
            out.push(LimitViolation { field, value, bound });
        }
    }
    out
}

/// Classic RK4 with one control held per step. Returns `controls.len() + 1`
/// states including `s0`.
pub fn integrate(
    s0: &VehicleState,
    controls: &[ControlInput],
    dt: f64,
    p: &VehicleParams,
) -> Result<Vec<VehicleState>, VehicleError> {
    if !(dt > 0.0) {
        return Err(VehicleError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(s0.v > 0.0) {
        return Err(VehicleError::SingularAtStep { step: 0, speed: s0.v });
    }
    let d = derived_params(p);
    let f = |x: &[f64; 6], u: &ControlInput| dynamics_generic(x, &[u.a, u.delta], p, &d);
    let mut out = Vec::with_capacity(controls.len() + 1);
    let mut x = s0.to_array();
    out.push(*s0);
    for (step, u) in controls.iter().enumerate() {
        let axpy = |k: &[f64; 6], h: f64| -> [f64; 6] { std::array::from_fn(|i| x[i] + h * k[i]) };
        let k1 = f(&x, u);
        let x2 = axpy(&k1, dt / 2.0);
        if !(x2[2] > 0.0) {
            return Err(VehicleError::SingularAtStep { step, speed: x2[2] });
        }
        let k2 = f(&x2, u);
        let x3 = axpy(&k2, dt / 2.0);
        if !(x3[2] > 0.0) {
            return Err(VehicleError::SingularAtStep { step, speed: x3[2] });
        }
        let k3 = f(&x3, u);
        let x4 = axpy(&k3, dt);
        if !(x4[2] > 0.0) {
            return Err(VehicleError::SingularAtStep { step, speed: x4[2] });
        }
        let k4 = f(&x4, u);
        x = std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        if !(x[2] > 0.0) {
            return Err(VehicleError::SingularAtStep { step, speed: x[2] });
        }
        out.push(VehicleState::from_array(x));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_params() -> VehicleParams {
        VehicleParams { l_f: 1.0, l_r: 2.0, c_f: 10.0, c_r: 20.0, ..Default::default() }
    }

    #[test]
    fn derived_params_examples() {
        let d = derived_params(&example_params());
        assert_eq!(
            (d.n_r_tilde, d.n_beta, d.n_delta, d.y_r_tilde, d.y_beta, d.y_delta),
            (90.0, -30.0, -10.0, -30.0, 30.0, -10.0)
        );
        let sym = derived_params(&VehicleParams { l_f: 1.3, l_r: 1.3, c_f: 5.0, c_r: 5.0, ..Default::default() });
        assert_eq!(sym.n_beta, 0.0);
        assert_eq!(sym.y_r_tilde, 0.0);
        let zero = derived_params(&VehicleParams { c_f: 0.0, c_r: 0.0, ..Default::default() });
        assert_eq!(
            [zero.n_r_tilde, zero.n_beta, zero.n_delta, zero.y_r_tilde, zero.y_beta, zero.y_delta],
            [0.0; 6]
        );
    }

    #[test]
    fn dynamics_examples() {
        let p = VehicleParams::default();
        let s = VehicleState { v: 10.0, ..Default::default() };
        let d = dynamics(&s, &ControlInput::default(), &p).unwrap();
        assert_eq!(d, [0.0, 0.0, 0.0, 10.0, 0.0, 0.0]);
        let d = dynamics(&s, &ControlInput { a: 3.0, delta: 0.0 }, &p).unwrap();
        assert_eq!(d[2], 3.0);
        assert_eq!(d[3], 10.0);
        assert!(dynamics(&VehicleState::default(), &ControlInput::default(), &p).is_err());
    }

    #[test]
    fn dynamics_matches_hand_evaluation() {
        // m = 1204, I_z = 1500; derived (90, -30, -10, -30, 30, -10).
        let p = example_params();
        let s = VehicleState { r: 0.2, beta: -0.1, v: 5.0, x: 1.0, y: 2.0, theta: 0.3 };
        let u = ControlInput { a: 1.5, delta: 0.05 };
        let d = dynamics(&s, &u, &p).unwrap();
        let r_dot = 90.0 / (1500.0 * 5.0) * 0.2 + (-30.0 / 1500.0) * -0.1 + (-10.0 / 1500.0) * 0.05;
        let beta_dot = (-30.0 / (1204.0 * 25.0) - 1.0) * 0.2
            + 30.0 / (1204.0 * 5.0) * -0.1
            + -10.0 / (1204.0 * 5.0) * 0.05;
        let expect = [r_dot, beta_dot, 1.5, 5.0 * 0.3f64.cos(), 5.0 * 0.3f64.sin(), 0.2];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn limit_examples() {
        let lim = Limits::default();
        let s = VehicleState { v: 10.0, ..Default::default() };
        assert!(check_limits(&s, &ControlInput { a: 3.0, delta: 0.0 }, &lim).is_empty());
        let v = check_limits(&s, &ControlInput { a: 3.5, delta: 0.0 }, &lim);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "a");
        let fast = VehicleState { v: 25.0, ..Default::default() };
        assert!(check_limits(&fast, &ControlInput::default(), &lim).is_empty());
    }

    #[test]
    fn integrate_closed_forms() {
        let p = VehicleParams::default();
        let s0 = VehicleState { v: 10.0, ..Default::default() };
        let xs = integrate(&s0, &vec![ControlInput::default(); 100], 0.01, &p).unwrap();
        assert_eq!(xs.len(), 101);
        assert!((xs[100].x - 10.0).abs() < 1e-9);

        let xs = integrate(&s0, &vec![ControlInput { a: 2.0, delta: 0.0 }; 200], 0.01, &p).unwrap();
        assert!((xs[200].v - 14.0).abs() < 1e-9);
        assert!((xs[200].x - 24.0).abs() < 1e-9);
    }

    #[test]
    fn integrate_reports_speed_crossing_zero() {
        let p = VehicleParams::default();
        let s0 = VehicleState { v: 1.0, ..Default::default() };
        let err = integrate(&s0, &vec![ControlInput { a: -3.0, delta: 0.0 }; 100], 0.1, &p).unwrap_err();
        assert!(matches!(err, VehicleError::SingularAtStep { step: 3, .. }), "{err:?}");
    }
}
