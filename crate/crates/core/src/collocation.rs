//! Radau collocation coefficients on the unit interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollocationScheme {
    /// Right Radau points; the last node sits on the interval end.
    #[default]
    Radau,
    /// Gauss-Legendre points. Recognized but not supported by the transcription.
    Legendre,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollocationError {
    #[error("unsupported collocation degree {0} (expected 1..=9)")]
    Degree(usize),
    #[error("unsupported collocation scheme {0:?}")]
    Scheme(CollocationScheme),
}

/// Coefficients for the interpolant through `tau_0 = 0` and the `d`
/// collocation nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationCoefficients {
    /// Collocation nodes in (0, 1], ascending.
    pub nodes: Vec<f64>,
    /// `derivative[j][m]`: derivative of basis `m` at collocation node `j`
    /// (`m` runs over `tau_0` followed by the nodes).
    pub derivative: Vec<Vec<f64>>,
    /// Basis values at `tau = 1`, mapping node values to the interval end.
    pub end_weights: Vec<f64>,
    /// Quadrature weights over the collocation nodes.
    pub quadrature: Vec<f64>,
}

fn legendre(n: usize, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let k = k as f64;
        let p2 = ((2.0 * k + 1.0) * x * p1 - k * p0) / (k + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Roots of `P_d - P_{d-1}` on (-1, 1], mapped to (0, 1].
fn radau_nodes(d: usize) -> Vec<f64> {
    let f = |x: f64| legendre(d, x) - legendre(d - 1, x);
    let mut roots = Vec::with_capacity(d);
    let grid = 20_000;
    let mut prev_x = -1.0;
    let mut prev_f = f(prev_x);
    for i in 1..grid {
        let x = -1.0 + 2.0 * i as f64 / grid as f64;
        let fx = f(x);
        if prev_f.signum() != fx.signum() {
            let (mut lo, mut hi, mut flo) = (prev_x, x, prev_f);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_x = x;
        prev_f = fx;
    }
    roots.push(1.0);
    roots.into_iter().map(|x| 0.5 * (x + 1.0)).collect()
}

/// Coefficients of `prod_{k != m} (t - pts[k]) / (pts[m] - pts[k])`, lowest order first.
fn lagrange_poly(pts: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![1.0];
    for (k, &pk) in pts.iter().enumerate() {
        if k == m {
            continue;
        }
        let denom = pts[m] - pk;
        let mut next = vec![0.0; c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] -= ci * pk / denom;
            next[i + 1] += ci / denom;
        }
        c = next;
    }
    c
}

fn poly_eval(c: &[f64], t: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * t + ci)
}

pub fn collocation_coefficients(
    degree: usize,
    scheme: CollocationScheme,
) -> Result<CollocationCoefficients, CollocationError> {
    if scheme != CollocationScheme::Radau {
        return Err(CollocationError::Scheme(scheme));
    }
    if !(1..=9).contains(&degree) {
        return Err(CollocationError::Degree(degree));
    }
    let nodes = radau_nodes(degree);
    let mut pts = vec![0.0];
    pts.extend_from_slice(&nodes);

    // Barycentric weights give the derivative matrix without forming polynomials.
    let w: Vec<f64> = (0..pts.len())
        .map(|m| 1.0 / (0..pts.len()).filter(|&k| k != m).map(|k| pts[m] - pts[k]).product::<f64>())
        .collect();
    let derivative = (1..pts.len())
        .map(|j| {
            let mut row: Vec<f64> = (0..pts.len())
                .map(|m| if m == j { 0.0 } else { (w[m] / w[j]) / (pts[j] - pts[m]) })
                .collect();
            row[j] = -row.iter().sum::<f64>();
            row
        })
        .collect();
    let end_weights = (0..pts.len()).map(|m| poly_eval(&lagrange_poly(&pts, m), 1.0)).collect();
    // Closed-form right Radau weights on [-1, 1], halved for the unit interval.
    let dd = (degree * degree) as f64;
    let quadrature = nodes
        .iter()
        .map(|&t| {
            let x = 2.0 * t - 1.0;
            if t == 1.0 {
                1.0 / dd
            } else {
                0.5 * (1.0 + x) / (dd * legendre(degree - 1, x).powi(2))
            }
        })
        .collect();
    Ok(CollocationCoefficients { nodes, derivative, end_weights, quadrature })
}
