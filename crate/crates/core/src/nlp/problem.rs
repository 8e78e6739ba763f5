//! Problem interface and the element-based sparse NLP used by the transcription.

use thiserror::Error;

use crate::ad::{Dual, DomainError, Scalar};
use crate::exec::Exec;

/// A smooth NLP `min f(x)` s.t. `c_lo <= c(x) <= c_hi`, `x_lo <= x <= x_hi`.
///
/// Evaluation methods take `&self` and must be reentrant.
pub trait NlpProblem: Sync {
    fn n_vars(&self) -> usize;
    fn n_cons(&self) -> usize;
    fn var_lower(&self) -> &[f64];
    fn var_upper(&self) -> &[f64];
    fn con_lower(&self) -> &[f64];
    fn con_upper(&self) -> &[f64];
    fn objective(&self, x: &[f64]) -> Result<f64, DomainError>;
    fn gradient(&self, x: &[f64], g: &mut [f64]) -> Result<(), DomainError>;
    fn constraints(&self, x: &[f64], c: &mut [f64]) -> Result<(), DomainError>;
    /// Structural nonzeros of the constraint Jacobian as `(row, col)`.
    fn jacobian_structure(&self) -> &[(usize, usize)];
    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) -> Result<(), DomainError>;
    /// Lower-triangle structure `(i, j)` with `i >= j` of the Lagrangian Hessian.
    fn hessian_structure(&self) -> &[(usize, usize)];
    /// Values of `obj_factor * H_f + sum_r y_r H_{c_r}` on the declared structure.
    fn hessian_values(&self, x: &[f64], obj_factor: f64, y: &[f64], vals: &mut [f64]) -> Result<(), DomainError>;

    fn var_name(&self, i: usize) -> String {
        format!("x[{i}]")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NlpError {
    #[error("{what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("{what} bounds inverted at index {index}: {lo} > {hi}")]
    Bounds { what: &'static str, index: usize, lo: f64, hi: f64 },
    #[error("element {element} references variable {var} outside 0..{n}")]
    VarIndex { element: usize, var: usize, n: usize },
    #[error("element {element} references row {row} outside 0..{m}")]
    RowIndex { element: usize, row: usize, m: usize },
    #[error("element {element} lists variable {var} twice")]
    DuplicateVar { element: usize, var: usize },
    #[error("element {element} has {n} local variables (at most {MAX_LOCAL})")]
    TooWide { element: usize, n: usize },
}

/// Where one element output is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Objective,
    Row(usize),
}

/// Largest supported element width.
pub const MAX_LOCAL: usize = 32;

/// A small smooth function of a few decision variables whose outputs add into
/// the objective or into constraint rows.
pub trait Element: Send + Sync {
    /// Global indices of the local inputs, in local order.
    fn vars(&self) -> &[usize];
    /// Destination of each output.
    fn targets(&self) -> &[Target];
    fn eval<T: Scalar>(&self, x: &[T], out: &mut [T]);
}

/// Sparse NLP built from constant linear constraint terms plus nonlinear elements.
pub struct ElementNlp<E: Element> {
    n: usize,
    m: usize,
    x_lo: Vec<f64>,
    x_hi: Vec<f64>,
    c_lo: Vec<f64>,
    c_hi: Vec<f64>,
    linear: Vec<(usize, usize, f64)>,
    elements: Vec<E>,
    exec: Exec,
    jac_pattern: Vec<(usize, usize)>,
    linear_slot: Vec<usize>,
    elem_jac_slot: Vec<Vec<usize>>,
    hess_pattern: Vec<(usize, usize)>,
    elem_hess_slot: Vec<Vec<usize>>,
    /// Elements with an objective output, in element order.
    objective_elems: Vec<usize>,
    names: Vec<String>,
}

pub struct ElementNlpParts<E> {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub c_lo: Vec<f64>,
    pub c_hi: Vec<f64>,
    /// Constant `(row, col, coefficient)` terms added to the constraints.
    pub linear: Vec<(usize, usize, f64)>,
    pub elements: Vec<E>,
    /// Optional variable names; empty for generic `x[i]`.
    pub names: Vec<String>,
}

fn check_bounds(what: &'static str, lo: &[f64], hi: &[f64]) -> Result<(), NlpError> {
    if lo.len() != hi.len() {
        return Err(NlpError::Dimension { what, expected: lo.len(), got: hi.len() });
    }
    for (i, (&l, &h)) in lo.iter().zip(hi).enumerate() {
        if !(l <= h) {
            return Err(NlpError::Bounds { what, index: i, lo: l, hi: h });
        }
    }
    Ok(())
}

impl<E: Element> ElementNlp<E> {
    pub fn new(parts: ElementNlpParts<E>, exec: Exec) -> Result<Self, NlpError> {
        let ElementNlpParts { x_lo, x_hi, c_lo, c_hi, linear, elements, names } = parts;
        check_bounds("variable", &x_lo, &x_hi)?;
        check_bounds("constraint", &c_lo, &c_hi)?;
        let n = x_lo.len();
        let m = c_lo.len();
        if !names.is_empty() && names.len() != n {
            return Err(NlpError::Dimension { what: "names", expected: n, got: names.len() });
        }
        for &(r, c, _) in &linear {
            if r >= m {
                return Err(NlpError::RowIndex { element: usize::MAX, row: r, m });
            }
            if c >= n {
                return Err(NlpError::VarIndex { element: usize::MAX, var: c, n });
            }
        }
        for (ei, e) in elements.iter().enumerate() {
            let vars = e.vars();
            if vars.len() > MAX_LOCAL {
                return Err(NlpError::TooWide { element: ei, n: vars.len() });
            }
            for (l, &v) in vars.iter().enumerate() {
                if v >= n {
                    return Err(NlpError::VarIndex { element: ei, var: v, n });
                }
                if vars[..l].contains(&v) {
                    return Err(NlpError::DuplicateVar { element: ei, var: v });
                }
            }
            for t in e.targets() {
                if let Target::Row(r) = *t {
                    if r >= m {
                        return Err(NlpError::RowIndex { element: ei, row: r, m });
                    }
                }
            }
        }

        let mut jac: Vec<(usize, usize)> = linear.iter().map(|&(r, c, _)| (r, c)).collect();
        let mut hess: Vec<(usize, usize)> = Vec::new();
        for e in &elements {
            let vars = e.vars();
            for t in e.targets() {
                if let Target::Row(r) = *t {
                    jac.extend(vars.iter().map(|&c| (r, c)));
                }
            }
            for (a, &va) in vars.iter().enumerate() {
                for &vb in &vars[..=a] {
                    hess.push((va.max(vb), va.min(vb)));
                }
            }
        }
        jac.sort_unstable();
        jac.dedup();
        hess.sort_unstable();
        hess.dedup();
        let jslot = |r: usize, c: usize| jac.binary_search(&(r, c)).expect("pattern entry");
        let hslot = |i: usize, j: usize| hess.binary_search(&(i.max(j), i.min(j))).expect("pattern entry");
        let linear_slot = linear.iter().map(|&(r, c, _)| jslot(r, c)).collect();
        let elem_jac_slot = elements
            .iter()
            .map(|e| {
                let vars = e.vars();
                e.targets()
                    .iter()
                    .flat_map(|t| {
                        vars.iter().map(move |&c| match *t {
                            Target::Row(r) => Some((r, c)),
                            Target::Objective => None,
                        })
                    })
                    .map(|rc| rc.map_or(usize::MAX, |(r, c)| jslot(r, c)))
                    .collect()
            })
            .collect();
        let elem_hess_slot = elements
            .iter()
            .map(|e| {
                let vars = e.vars();
                let mut slots = Vec::with_capacity(vars.len() * (vars.len() + 1) / 2);
                for (a, &va) in vars.iter().enumerate() {
                    for &vb in &vars[..=a] {
                        slots.push(hslot(va, vb));
                    }
                }
                slots
            })
            .collect();
        let objective_elems =
            (0..elements.len()).filter(|&i| elements[i].targets().contains(&Target::Objective)).collect();
        Ok(Self {
            n,
            m,
            x_lo,
            x_hi,
            c_lo,
            c_hi,
            linear,
            elements,
            exec,
            jac_pattern: jac,
            linear_slot,
            elem_jac_slot,
            hess_pattern: hess,
            elem_hess_slot,
            objective_elems,
            names,
        })
    }

    pub fn elements(&self) -> &[E] {
        &self.elements
    }

    pub fn linear_terms(&self) -> &[(usize, usize, f64)] {
        &self.linear
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    fn check_x(&self, x: &[f64]) -> Result<(), DomainError> {
        if x.len() != self.n {
            return Err(DomainError::Dimension { expected: self.n, got: x.len() });
        }
        Ok(())
    }

    fn element_value(&self, ei: usize, x: &[f64]) -> Vec<f64> {
        let e = &self.elements[ei];
        let xl: Vec<f64> = e.vars().iter().map(|&v| x[v]).collect();
        let mut out = vec![0.0; e.targets().len()];
        e.eval(&xl, &mut out);
        out
    }

    fn element_values(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.exec.map(self.elements.len(), |ei| self.element_value(ei, x))
    }
}

fn first_nonfinite(vals: &[f64], row_of: impl Fn(usize) -> usize) -> Result<(), DomainError> {
    match vals.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(DomainError::NonFinite { row: row_of(i), value: vals[i] }),
        None => Ok(()),
    }
}

fn local_jacobian<E: Element, const N: usize>(e: &E, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let vars = e.vars();
    let xd: Vec<Dual<f64, N>> = vars.iter().enumerate().map(|(l, &g)| Dual::variable(x[g], l)).collect();
    let mut out = vec![Dual::<f64, N>::cst(0.0); e.targets().len()];
    e.eval(&xd, &mut out);
    let nl = vars.len();
    let mut jac = Vec::with_capacity(out.len() * nl);
    for o in &out {
        jac.extend_from_slice(&o.eps[..nl]);
    }
    (out.iter().map(|o| o.re).collect(), jac)
}

fn local_hessian<E: Element, const N: usize>(e: &E, x: &[f64], w: &[f64]) -> Vec<f64> {
    let vars = e.vars();
    let nl = vars.len();
    let xd: Vec<Dual<Dual<f64, N>, N>> = vars
        .iter()
        .enumerate()
        .map(|(l, &g)| {
            let mut outer = Dual::constant(Dual::variable(x[g], l));
            outer.eps[l] = Dual::cst(1.0);
            outer
        })
        .collect();
    let mut out = vec![Dual::<Dual<f64, N>, N>::cst(0.0); w.len()];
    e.eval(&xd, &mut out);
    let mut acc = Dual::<Dual<f64, N>, N>::cst(0.0);
    for (o, &wk) in out.iter().zip(w) {
        if wk != 0.0 {
            acc += *o * wk;
        }
    }
    let mut h = Vec::with_capacity(nl * (nl + 1) / 2);
    for a in 0..nl {
        for b in 0..=a {
            h.push(acc.eps[a].eps[b]);
        }
    }
    h
}

macro_rules! by_width {
    ($nl:expr, $f:ident, $E:ty, $($arg:expr),*) => {
        match $nl {
            0..=4 => $f::<$E, 4>($($arg),*),
            5..=8 => $f::<$E, 8>($($arg),*),
            9..=16 => $f::<$E, 16>($($arg),*),
            _ => $f::<$E, 32>($($arg),*),
        }
    };
}

impl<E: Element> NlpProblem for ElementNlp<E> {
    fn n_vars(&self) -> usize {
        self.n
    }
    fn n_cons(&self) -> usize {
        self.m
    }
    fn var_lower(&self) -> &[f64] {
        &self.x_lo
    }
    fn var_upper(&self) -> &[f64] {
        &self.x_hi
    }
    fn con_lower(&self) -> &[f64] {
        &self.c_lo
    }
    fn con_upper(&self) -> &[f64] {
        &self.c_hi
    }

    fn objective(&self, x: &[f64]) -> Result<f64, DomainError> {
        self.check_x(x)?;
        let vals = self.exec.map(self.objective_elems.len(), |k| self.element_value(self.objective_elems[k], x));
        let mut f = 0.0;
        for (&ei, v) in self.objective_elems.iter().zip(&vals) {
            for (t, &val) in self.elements[ei].targets().iter().zip(v) {
                if *t == Target::Objective {
                    f += val;
                }
            }
        }
        first_nonfinite(&[f], |_| 0)?;
        Ok(f)
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) -> Result<(), DomainError> {
        self.check_x(x)?;
        g.iter_mut().for_each(|v| *v = 0.0);
        let objective_elems = &self.objective_elems;
        let locals = self.exec.map(objective_elems.len(), |k| {
            let e = &self.elements[objective_elems[k]];
            by_width!(e.vars().len(), local_jacobian, E, e, x)
        });
        for (&ei, (_, jac)) in objective_elems.iter().zip(&locals) {
            let e = &self.elements[ei];
            let nl = e.vars().len();
            for (k, t) in e.targets().iter().enumerate() {
                if *t == Target::Objective {
                    for (l, &v) in e.vars().iter().enumerate() {
                        g[v] += jac[k * nl + l];
                    }
                }
            }
        }
        first_nonfinite(g, |_| 0)
    }

    fn constraints(&self, x: &[f64], c: &mut [f64]) -> Result<(), DomainError> {
        self.check_x(x)?;
        c.iter_mut().for_each(|v| *v = 0.0);
        for &(r, col, coef) in &self.linear {
            c[r] += coef * x[col];
        }
        let vals = self.element_values(x);
        for (e, v) in self.elements.iter().zip(&vals) {
            for (t, &val) in e.targets().iter().zip(v) {
                if let Target::Row(r) = *t {
                    c[r] += val;
                }
            }
        }
        first_nonfinite(c, |i| i)
    }

    fn jacobian_structure(&self) -> &[(usize, usize)] {
        &self.jac_pattern
    }

    fn jacobian_values(&self, x: &[f64], vals: &mut [f64]) -> Result<(), DomainError> {
        self.check_x(x)?;
        vals.iter_mut().for_each(|v| *v = 0.0);
        for (&(_, _, coef), &slot) in self.linear.iter().zip(&self.linear_slot) {
            vals[slot] += coef;
        }
        let locals = self.exec.map(self.elements.len(), |ei| {
            let e = &self.elements[ei];
            by_width!(e.vars().len(), local_jacobian, E, e, x)
        });
        for ((_, jac), slots) in locals.iter().zip(&self.elem_jac_slot) {
            for (&v, &slot) in jac.iter().zip(slots) {
                if slot != usize::MAX {
                    vals[slot] += v;
                }
            }
        }
        let pattern = &self.jac_pattern;
        first_nonfinite(vals, |i| pattern[i].0)
    }

    fn hessian_structure(&self) -> &[(usize, usize)] {
        &self.hess_pattern
    }

    fn hessian_values(&self, x: &[f64], obj_factor: f64, y: &[f64], vals: &mut [f64]) -> Result<(), DomainError> {
        self.check_x(x)?;
        if y.len() != self.m {
            return Err(DomainError::Dimension { expected: self.m, got: y.len() });
        }
        vals.iter_mut().for_each(|v| *v = 0.0);
        let locals = self.exec.map(self.elements.len(), |ei| {
            let e = &self.elements[ei];
            let w: Vec<f64> = e
                .targets()
                .iter()
                .map(|t| match *t {
                    Target::Objective => obj_factor,
                    Target::Row(r) => y[r],
                })
                .collect();
            if w.iter().all(|&v| v == 0.0) {
                return Vec::new();
            }
            by_width!(e.vars().len(), local_hessian, E, e, x, &w)
        });
        for (h, slots) in locals.iter().zip(&self.elem_hess_slot) {
            for (&v, &slot) in h.iter().zip(slots) {
                vals[slot] += v;
            }
        }
        let pattern = &self.hess_pattern;
        first_nonfinite(vals, |i| pattern[i].0)
    }

    fn var_name(&self, i: usize) -> String {
        self.names.get(i).cloned().unwrap_or_else(|| format!("x[{i}]"))
    }
}
