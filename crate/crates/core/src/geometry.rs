//! Half-space polytopes in the plane, rigid pose transforms, exact primal
//! distance, and the dual distance problem with its certificates.
//!
//! For `P = {X : A_p X <= b_p}` and `Q = {Y : A_q Y <= b_q}` the dual distance
//! problem is
//!
//! ```text
//! max  -b_p' l_pq - b_q' l_qp
//! s.t. A_p' l_pq + s = 0,  A_q' l_qp - s = 0,  |s|_2 <= 1,  l >= 0
//! ```
//!
//! and any feasible point is a lower bound on the Euclidean distance between
//! the sets.

use thiserror::Error;

/// Default tolerance for [`dual_feasible`].
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dual solve failed after {candidates} candidate directions: {reason}")]
    Solver { candidates: usize, reason: String },
}

type Result<T> = std::result::Result<T, GeometryError>;

/// Planar pose. Heading is continuous (never wrapped).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }
}

/// `{X : A X <= b}` with one normal row per entry of `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    a: Vec<[f64; 2]>,
    b: Vec<f64>,
}

impl Polytope {
    /// Builds a polytope and checks that it is nonempty and bounded.
    pub fn new(a: Vec<[f64; 2]>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(GeometryError::InvalidArgument(format!(
                "A has {} rows but b has {} entries",
                a.len(),
                b.len()
            )));
        }
        if a.iter().flatten().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidArgument("non-finite entry".into()));
        }
        let p = Self { a, b };
        if !p.is_bounded() {
            return Err(GeometryError::InvalidArgument("polytope is unbounded".into()));
        }
        if p.vertices().is_empty() {
            return Err(GeometryError::InvalidArgument("polytope is empty".into()));
        }
        Ok(p)
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]` with rows (1,0),(-1,0),(0,-1),(0,1).
    pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) {
            return Err(GeometryError::InvalidArgument(format!(
                "degenerate rectangle [{x0}, {x1}] x [{y0}, {y1}]"
            )));
        }
        Self::new(RECT_ROWS.to_vec(), vec![x1, -x0, -y0, y1])
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &[[f64; 2]] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        self.a
            .iter()
            .zip(&self.b)
            .all(|(r, &b)| r[0] * p[0] + r[1] * p[1] <= b + tol)
    }

    /// Normals positively span the plane iff no angular gap between
    /// consecutive normal directions reaches pi.
    fn is_bounded(&self) -> bool {
        let mut angles: Vec<f64> = self
            .a
            .iter()
            .filter(|r| r[0] != 0.0 || r[1] != 0.0)
            .map(|r| r[1].atan2(r[0]))
            .collect();
        if angles.len() < 3 {
            return false;
        }
        angles.sort_by(f64::total_cmp);
        let mut max_gap = angles[0] + 2.0 * std::f64::consts::PI - angles[angles.len() - 1];
        for w in angles.windows(2) {
            max_gap = max_gap.max(w[1] - w[0]);
        }
        max_gap < std::f64::consts::PI - 1e-12
    }

    /// Vertices in counter-clockwise order (duplicates merged).
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        let scale = 1.0 + self.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        let mut pts: Vec<[f64; 2]> = Vec::new();
        for i in 0..self.rows() {
            for j in (i + 1)..self.rows() {
                let (a1, a2) = (self.a[i], self.a[j]);
                let det = a1[0] * a2[1] - a1[1] * a2[0];
                if det.abs() < 1e-14 {
                    continue;
                }
                let x = (self.b[i] * a2[1] - a1[1] * self.b[j]) / det;
                let y = (a1[0] * self.b[j] - self.b[i] * a2[0]) / det;
                if self.contains([x, y], tol)
                    && !pts.iter().any(|p| (p[0] - x).abs() <= tol && (p[1] - y).abs() <= tol)
                {
                    pts.push([x, y]);
                }
            }
        }
        if pts.len() > 2 {
            let cx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
            let cy = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
            pts.sort_by(|p, q| (p[1] - cy).atan2(p[0] - cx).total_cmp(&(q[1] - cy).atan2(q[0] - cx)));
        }
        pts
    }
}

const RECT_ROWS: [[f64; 2]; 4] = [[1.0, 0.0], [-1.0, 0.0], [0.0, -1.0], [0.0, 1.0]];

/// Body-frame footprint of a vehicle of the given length and width.
pub fn base_polytope(length: f64, width: f64) -> Result<Polytope> {
    if !(length > 0.0 && width > 0.0) || !length.is_finite() || !width.is_finite() {
        return Err(GeometryError::InvalidArgument(format!(
            "vehicle dimensions must be positive, got {length} x {width}"
        )));
    }
    Ok(Polytope {
        a: RECT_ROWS.to_vec(),
        b: vec![length / 2.0, length / 2.0, width / 2.0, width / 2.0],
    })
}

/// Moves a body-frame polytope to `pose`: `A' = A R`, `b' = b + A R [x, y]`
/// with `R = [[cos, sin], [-sin, cos]]`.
pub fn transform_polytope(base: &Polytope, pose: Pose) -> Polytope {
    let (s, c) = pose.theta.sin_cos();
    let a: Vec<[f64; 2]> = base
        .a
        .iter()
        .map(|r| [r[0] * c - r[1] * s, r[0] * s + r[1] * c])
        .collect();
    let b = a
        .iter()
        .zip(&base.b)
        .map(|(r, &b0)| b0 + r[0] * pose.x + r[1] * pose.y)
        .collect();
    Polytope { a, b }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

fn edges(v: &[[f64; 2]]) -> impl Iterator<Item = ([f64; 2], [f64; 2])> + '_ {
    (0..v.len()).map(move |i| (v[i], v[(i + 1) % v.len()]))
}

fn projection(v: &[[f64; 2]], axis: [f64; 2]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p[0] * axis[0] + p[1] * axis[1];
        (lo.min(d), hi.max(d))
    })
}

/// True when some edge normal of either polygon strictly separates them.
fn separated(vp: &[[f64; 2]], vq: &[[f64; 2]]) -> bool {
    let mut axes = Vec::new();
    for v in [vp, vq] {
        for (a, b) in edges(v) {
            let d = [b[0] - a[0], b[1] - a[1]];
            if d[0] != 0.0 || d[1] != 0.0 {
                axes.push([-d[1], d[0]]);
                axes.push(d);
            }
        }
    }
    if axes.is_empty() {
        // two single points
        return vp[0] != vq[0];
    }
    axes.iter().any(|&ax| {
        let (lp, hp) = projection(vp, ax);
        let (lq, hq) = projection(vq, ax);
        hp < lq || hq < lp
    })
}

/// Exact minimum Euclidean distance between two polytopes by vertex/edge
/// enumeration; zero when they intersect or touch.
pub fn primal_distance(p: &Polytope, q: &Polytope) -> Result<f64> {
    let vp = p.vertices();
    let vq = q.vertices();
    if vp.is_empty() || vq.is_empty() {
        return Err(GeometryError::InvalidArgument("empty polytope".into()));
    }
    if !p.is_bounded() || !q.is_bounded() {
        return Err(GeometryError::InvalidArgument("unbounded polytope".into()));
    }
    if !separated(&vp, &vq) {
        return Ok(0.0);
    }
    let mut best = f64::INFINITY;
    for &v in &vp {
        for (a, b) in edges(&vq) {
            best = best.min(point_segment_distance(v, a, b));
        }
    }
    for &v in &vq {
        for (a, b) in edges(&vp) {
            best = best.min(point_segment_distance(v, a, b));
        }
    }
    Ok(best)
}

/// Multipliers of the dual distance problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub lambda_pq: Vec<f64>,
    pub lambda_qp: Vec<f64>,
    pub s: [f64; 2],
}

impl DualCertificate {
    pub fn zeros(rows_p: usize, rows_q: usize) -> Self {
        Self { lambda_pq: vec![0.0; rows_p], lambda_qp: vec![0.0; rows_q], s: [0.0; 2] }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            lambda_pq: self.lambda_pq.iter().map(|v| v * k).collect(),
            lambda_qp: self.lambda_qp.iter().map(|v| v * k).collect(),
            s: [self.s[0] * k, self.s[1] * k],
        }
    }
}

fn check_dims(p: &Polytope, q: &Polytope, cert: &DualCertificate) -> Result<()> {
    if cert.lambda_pq.len() != p.rows() || cert.lambda_qp.len() != q.rows() {
        return Err(GeometryError::InvalidArgument(format!(
            "certificate sizes ({}, {}) do not match polytope rows ({}, {})",
            cert.lambda_pq.len(),
            cert.lambda_qp.len(),
            p.rows(),
            q.rows()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn at_lambda(a: &[[f64; 2]], lambda: &[f64]) -> [f64; 2] {
    a.iter().zip(lambda).fold([0.0, 0.0], |acc, (r, l)| [acc[0] + r[0] * l, acc[1] + r[1] * l])
}

/// `-b_p' l_pq - b_q' l_qp`; no feasibility check.
pub fn dual_objective(p: &Polytope, q: &Polytope, cert: &DualCertificate) -> Result<f64> {
    check_dims(p, q, cert)?;
    Ok(-dot(&p.b, &cert.lambda_pq) - dot(&q.b, &cert.lambda_qp))
}

pub fn dual_feasible(p: &Polytope, q: &Polytope, cert: &DualCertificate, tol: f64) -> Result<bool> {
    check_dims(p, q, cert)?;
    if !(tol >= 0.0) {
        return Err(GeometryError::InvalidArgument(format!("negative tolerance {tol}")));
    }
    let gp = at_lambda(&p.a, &cert.lambda_pq);
    let gq = at_lambda(&q.a, &cert.lambda_qp);
    let eq_p = (gp[0] + cert.s[0]).abs().max((gp[1] + cert.s[1]).abs());
    let eq_q = (gq[0] - cert.s[0]).abs().max((gq[1] - cert.s[1]).abs());
    let norm = cert.s[0].hypot(cert.s[1]);
    let nonneg = cert.lambda_pq.iter().chain(&cert.lambda_qp).all(|&l| l >= -tol);
    Ok(eq_p <= tol && eq_q <= tol && norm <= 1.0 + tol && nonneg)
}

/// Multipliers `l >= 0` on the rows active at `vertex` with `A' l = target`.
fn vertex_multipliers(poly: &Polytope, vertex: [f64; 2], target: [f64; 2]) -> Option<Vec<f64>> {
    let scale = 1.0 + poly.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let active: Vec<usize> = (0..poly.rows())
        .filter(|&k| {
            let r = poly.a[k];
            (r[0] * vertex[0] + r[1] * vertex[1] - poly.b[k]).abs() <= 1e-9 * scale
        })
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |lam: Vec<f64>| {
        let g = at_lambda(&poly.a, &lam);
        let res = (g[0] - target[0]).abs().max((g[1] - target[1]).abs());
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, lam));
        }
    };
    for (ii, &i) in active.iter().enumerate() {
        let ai = poly.a[i];
        let n2 = ai[0] * ai[0] + ai[1] * ai[1];
        let t = (ai[0] * target[0] + ai[1] * target[1]) / n2;
        if t >= 0.0 {
            let mut lam = vec![0.0; poly.rows()];
            lam[i] = t;
            consider(lam);
        }
        for &j in &active[ii + 1..] {
            let aj = poly.a[j];
            let det = ai[0] * aj[1] - ai[1] * aj[0];
            if det.abs() < 1e-14 {
                continue;
            }
            let li = (target[0] * aj[1] - target[1] * aj[0]) / det;
            let lj = (ai[0] * target[1] - ai[1] * target[0]) / det;
            if li >= -1e-12 && lj >= -1e-12 {
                let mut lam = vec![0.0; poly.rows()];
                lam[i] = li.max(0.0);
                lam[j] = lj.max(0.0);
                consider(lam);
            }
        }
    }
    best.map(|(_, l)| l)
}

/// Maximizes the dual distance problem.
///
/// For a unit `s` the inner maximization over the multipliers is a pair of
/// support-function evaluations, `min_{X in P} s'X - max_{Y in Q} s'Y`. Its
/// maximum over the circle is attained at an edge normal or at a
/// vertex-to-vertex direction, so all such candidates are evaluated and the
/// multipliers are recovered from the supporting vertices. Returns the zero
/// certificate when the sets intersect or touch.
pub fn solve_dual(p: &Polytope, q: &Polytope) -> Result<(DualCertificate, f64)> {
    let vp = p.vertices();
    let vq = q.vertices();
    if vp.is_empty() || vq.is_empty() || !p.is_bounded() || !q.is_bounded() {
        return Err(GeometryError::InvalidArgument("empty or unbounded polytope".into()));
    }
    let mut candidates: Vec<[f64; 2]> = Vec::new();
    for r in p.a.iter().chain(q.a.iter()) {
        let n = r[0].hypot(r[1]);
        if n > 0.0 {
            candidates.push([r[0] / n, r[1] / n]);
            candidates.push([-r[0] / n, -r[1] / n]);
        }
    }
    for a in &vp {
        for b in &vq {
            let d = [a[0] - b[0], a[1] - b[1]];
            let n = d[0].hypot(d[1]);
            if n > 0.0 {
                candidates.push([d[0] / n, d[1] / n]);
            }
        }
    }
    let gap = |s: [f64; 2]| -> (f64, usize, usize) {
        let (mut lo, mut ilo) = (f64::INFINITY, 0);
        for (i, v) in vp.iter().enumerate() {
            let d = s[0] * v[0] + s[1] * v[1];
            if d < lo {
                lo = d;
                ilo = i;
            }
        }
        let (mut hi, mut ihi) = (f64::NEG_INFINITY, 0);
        for (i, v) in vq.iter().enumerate() {
            let d = s[0] * v[0] + s[1] * v[1];
            if d > hi {
                hi = d;
                ihi = i;
            }
        }
        (lo - hi, ilo, ihi)
    };
    let mut best: Option<([f64; 2], f64, usize, usize)> = None;
    for &s in &candidates {
        let (g, i, j) = gap(s);
        if best.is_none_or(|b| g > b.1) {
            best = Some((s, g, i, j));
        }
    }
    let Some((s, g, ip, iq)) = best else {
        return Err(GeometryError::Solver { candidates: 0, reason: "no candidate direction".into() });
    };
    if g <= 0.0 {
        return Ok((DualCertificate::zeros(p.rows(), q.rows()), 0.0));
    }
    let lambda_pq = vertex_multipliers(p, vp[ip], [-s[0], -s[1]]).ok_or_else(|| GeometryError::Solver {
        candidates: candidates.len(),
        reason: "no nonnegative multipliers at the supporting vertex of P".into(),
    })?;
    let lambda_qp = vertex_multipliers(q, vq[iq], s).ok_or_else(|| GeometryError::Solver {
        candidates: candidates.len(),
        reason: "no nonnegative multipliers at the supporting vertex of Q".into(),
    })?;
    let cert = DualCertificate { lambda_pq, lambda_qp, s };
    let obj = dual_objective(p, q, &cert)?;
    Ok((cert, obj))
}

/// A line `normal . X = offset` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperplane {
    pub normal: [f64; 2],
    pub offset: f64,
}

impl Hyperplane {
    pub fn signed_distance(&self, p: [f64; 2]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] - self.offset
    }
}

/// Recovers the separating line from a feasible certificate with positive
/// objective. The normal is `-s/|s|`, pointing from `P` toward `Q`; `P` lies on
/// the negative side and `Q` on the positive side, each at least half the
/// certified distance away.
pub fn separating_hyperplane(p: &Polytope, q: &Polytope, cert: &DualCertificate) -> Result<Hyperplane> {
    let obj = dual_objective(p, q, cert)?;
    if !dual_feasible(p, q, cert, FEASIBILITY_TOL)? {
        return Err(GeometryError::InvalidArgument("certificate is infeasible".into()));
    }
    if obj <= 0.0 {
        return Err(GeometryError::InvalidArgument(format!(
            "certificate objective {obj} does not certify separation"
        )));
    }
    let ns = cert.s[0].hypot(cert.s[1]);
    // s'X >= -b_p'l_pq on P and s'Y <= b_q'l_qp on Q.
    let p_side = -dot(&p.b, &cert.lambda_pq) / ns;
    let q_side = dot(&q.b, &cert.lambda_qp) / ns;
    let normal = [-cert.s[0] / ns, -cert.s[1] / ns];
    Ok(Hyperplane { normal, offset: -(p_side + q_side) / 2.0 })
}
