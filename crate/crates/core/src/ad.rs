//! Forward-mode algorithmic differentiation.
//!
//! [`Dual`] carries a value and `N` tangent directions. Nesting a dual inside
//! another (`Dual<Dual<f64, N>, N>`) yields exact second derivatives, which is
//! how the NLP layer builds Lagrangian Hessians of small element functions.
//!
//! Functions are written once against the [`Scalar`] trait and evaluated with
//! `f64` for values, `Dual<f64, N>` for Jacobians and the nested form for
//! Hessians.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use thiserror::Error;

/// Numeric type usable by differentiable code.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
{
    fn cst(v: f64) -> Self;
    /// Primal value with all derivative information dropped.
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    #[inline]
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
}

/// Dual number with `N` tangent components over an inner scalar `T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T: Scalar, const N: usize> {
    pub re: T,
    pub eps: [T; N],
}

impl<T: Scalar, const N: usize> Dual<T, N> {
    pub fn constant(re: T) -> Self {
        Self { re, eps: [T::zero(); N] }
    }

    /// Independent variable seeded along tangent direction `k`.
    pub fn variable(re: T, k: usize) -> Self {
        let mut d = Self::constant(re);
        d.eps[k] = T::cst(1.0);
        d
    }

    #[inline]
    fn chain(self, re: T, slope: T) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * slope;
        }
        Self { re, eps }
    }
}

impl<T: Scalar, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut eps = self.eps;
        for (e, oe) in eps.iter_mut().zip(o.eps.iter()) {
            *e = *e + *oe;
        }
        Self { re: self.re + o.re, eps }
    }
}

impl<T: Scalar, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut eps = self.eps;
        for (e, oe) in eps.iter_mut().zip(o.eps.iter()) {
            *e = *e - *oe;
        }
        Self { re: self.re - o.re, eps }
    }
}

impl<T: Scalar, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut eps = self.eps;
        for (e, oe) in eps.iter_mut().zip(o.eps.iter()) {
            *e = *e * o.re + self.re * *oe;
        }
        Self { re: self.re * o.re, eps }
    }
}

impl<T: Scalar, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        let mut eps = self.eps;
        for (e, oe) in eps.iter_mut().zip(o.eps.iter()) {
            *e = (*e - q * *oe) / o.re;
        }
        Self { re: q, eps }
    }
}

impl<T: Scalar, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = -*e;
        }
        Self { re: -self.re, eps }
    }
}

impl<T: Scalar, const N: usize> Add<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Self { re: self.re + o, eps: self.eps }
    }
}

impl<T: Scalar, const N: usize> Sub<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Self { re: self.re - o, eps: self.eps }
    }
}

impl<T: Scalar, const N: usize> Mul<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        let mut eps = self.eps;
        for e in eps.iter_mut() {
            *e = *e * o;
        }
        Self { re: self.re * o, eps }
    }
}

impl<T: Scalar, const N: usize> Div<f64> for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self * (1.0 / o)
    }
}

impl<T: Scalar, const N: usize> AddAssign for Dual<T, N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar, const N: usize> SubAssign for Dual<T, N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Scalar, const N: usize> Scalar for Dual<T, N> {
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn sin(self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::cst(0.5) / s)
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::cst(1.0);
        }
        let slope = self.re.powi(n - 1) * n as f64;
        self.chain(self.re.powi(n), slope)
    }
    fn powf(self, p: f64) -> Self {
        let slope = self.re.powf(p - 1.0) * p;
        self.chain(self.re.powf(p), slope)
    }
}

/// A function `R^n -> R^m` written against [`Scalar`].
pub trait VectorFunction {
    fn n_in(&self) -> usize;
    fn n_out(&self) -> usize;
    fn eval<T: Scalar>(&self, x: &[T], out: &mut [T]);
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    /// An output component evaluated to NaN or infinity.
    #[error("output {row} is not finite ({value}) at the evaluation point")]
    NonFinite { row: usize, value: f64 },
    #[error("input has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Dense Jacobian in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Tangent directions processed per sweep.
pub const CHUNK: usize = 8;

fn check_outputs(vals: &[f64]) -> Result<(), DomainError> {
    match vals.iter().position(|v| !v.is_finite()) {
        Some(row) => Err(DomainError::NonFinite { row, value: vals[row] }),
        None => Ok(()),
    }
}

/// Value and dense Jacobian of `f` at `x`, sweeping `CHUNK` columns at a time.
pub fn differentiate<F: VectorFunction>(
    f: &F,
    x: &[f64],
) -> Result<(Vec<f64>, Jacobian), DomainError> {
    let n = f.n_in();
    let m = f.n_out();
    if x.len() != n {
        return Err(DomainError::Dimension { expected: n, got: x.len() });
    }
    let mut jac = Jacobian { rows: m, cols: n, data: vec![0.0; m * n] };
    let mut values = vec![0.0; m];
    let mut out = vec![Dual::<f64, CHUNK>::cst(0.0); m];
    let n_sweeps = n.div_ceil(CHUNK).max(1);
    for sweep in 0..n_sweeps {
        let lo = sweep * CHUNK;
        let xd: Vec<Dual<f64, CHUNK>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if i >= lo && i < lo + CHUNK {
                    Dual::variable(v, i - lo)
                } else {
                    Dual::constant(v)
                }
            })
            .collect();
        f.eval(&xd, &mut out);
        for (r, o) in out.iter().enumerate() {
            values[r] = o.re;
            for k in 0..CHUNK.min(n.saturating_sub(lo)) {
                jac.data[r * n + lo + k] = o.eps[k];
            }
        }
    }
    check_outputs(&values)?;
    if let Some(p) = jac.data.iter().position(|v| !v.is_finite()) {
        return Err(DomainError::NonFinite { row: p / n.max(1), value: jac.data[p] });
    }
    Ok((values, jac))
}

/// Declared nonzero pattern of a Jacobian: for every row, its column indices.
#[derive(Debug, Clone)]
pub struct SparsityPattern {
    pub n_cols: usize,
    pub rows: Vec<Vec<usize>>,
}

impl SparsityPattern {
    /// Greedy distance-2 column coloring: columns sharing a row never share a
    /// color, so one seed per color recovers every declared entry.
    pub fn color_columns(&self) -> Vec<usize> {
        let mut col_rows: Vec<Vec<usize>> = vec![Vec::new(); self.n_cols];
        for (r, cols) in self.rows.iter().enumerate() {
            for &c in cols {
                col_rows[c].push(r);
            }
        }
        let mut color = vec![usize::MAX; self.n_cols];
        let mut forbidden: Vec<usize> = Vec::new();
        for c in 0..self.n_cols {
            forbidden.clear();
            for &r in &col_rows[c] {
                for &other in &self.rows[r] {
                    if other != c && color[other] != usize::MAX {
                        forbidden.push(color[other]);
                    }
                }
            }
            forbidden.sort_unstable();
            forbidden.dedup();
            let mut k = 0;
            for &f in &forbidden {
                if f == k {
                    k += 1;
                } else if f > k {
                    break;
                }
            }
            color[c] = k;
        }
        color
    }
}

/// Value and sparse Jacobian of `f`, one tangent per column color.
///
/// The returned values follow the order of `pattern.rows` (row by row, column
/// indices in declared order). Entries outside the pattern are never seeded
/// separately, so the pattern must be a superset of the true nonzeros.
pub fn sparse_jacobian<F: VectorFunction>(
    f: &F,
    x: &[f64],
    pattern: &SparsityPattern,
) -> Result<(Vec<f64>, Vec<f64>), DomainError> {
    let n = f.n_in();
    let m = f.n_out();
    if x.len() != n || pattern.n_cols != n {
        return Err(DomainError::Dimension { expected: n, got: x.len() });
    }
    let colors = pattern.color_columns();
    let n_colors = colors.iter().map(|c| c + 1).max().unwrap_or(0);
    let mut compressed = vec![0.0; m * n_colors];
    let mut values = vec![0.0; m];
    let mut out = vec![Dual::<f64, CHUNK>::cst(0.0); m];
    let mut lo = 0;
    loop {
        let xd: Vec<Dual<f64, CHUNK>> = x
            .iter()
            .zip(colors.iter())
            .map(|(&v, &c)| {
                if c >= lo && c < lo + CHUNK {
                    Dual::variable(v, c - lo)
                } else {
                    Dual::constant(v)
                }
            })
            .collect();
        f.eval(&xd, &mut out);
        for (r, o) in out.iter().enumerate() {
            values[r] = o.re;
            for k in 0..CHUNK.min(n_colors.saturating_sub(lo)) {
                compressed[r * n_colors + lo + k] = o.eps[k];
            }
        }
        lo += CHUNK;
        if lo >= n_colors {
            break;
        }
    }
    check_outputs(&values)?;
    let mut jac = Vec::new();
    for (r, cols) in pattern.rows.iter().enumerate() {
        for &c in cols {
            jac.push(compressed[r * n_colors + colors[c]]);
        }
    }
    Ok((values, jac))
}

/// Gradient and dense Hessian (row-major) of a scalar function with `N` inputs,
/// computed in a single nested-dual sweep.
pub fn hessian_local<const N: usize>(
    x: &[f64],
    f: impl Fn(&[Dual<Dual<f64, N>, N>]) -> Dual<Dual<f64, N>, N>,
) -> (f64, [f64; N], [[f64; N]; N]) {
    let xd: Vec<Dual<Dual<f64, N>, N>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let inner = Dual::variable(v, i);
            let mut outer = Dual::constant(inner);
            outer.eps[i] = Dual::cst(1.0);
            outer
        })
        .collect();
    let y = f(&xd);
    let mut grad = [0.0; N];
    let mut hess = [[0.0; N]; N];
    for i in 0..N {
        grad[i] = y.re.eps[i];
        for j in 0..N {
            hess[i][j] = y.eps[i].eps[j];
        }
    }
    (y.re.re, grad, hess)
}
