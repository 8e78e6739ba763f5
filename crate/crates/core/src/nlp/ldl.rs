//! Sparse LDLᵀ factorization of symmetric quasi-definite systems without
//! pivoting, with a fill-reducing ordering computed once per pattern.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LdlError {
    #[error("entry ({0}, {1}) outside a {2}x{2} matrix")]
    Index(usize, usize, usize),
    #[error("ordering failed: {0}")]
    Ordering(String),
    #[error("value vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Pivot statistics of one numeric factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    /// Pivots that were exactly zero, tiny relative to the matrix, or non-finite.
    pub zero: usize,
}

/// Symbolic analysis plus storage for repeated numeric factorizations of
/// matrices sharing one sparsity pattern.
#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    /// `perm[k]` is the original index eliminated at step `k`.
    perm: Vec<usize>,
    pinv: Vec<usize>,
    // Permuted upper triangle in CSC form.
    ap: Vec<usize>,
    ai: Vec<usize>,
    ax: Vec<f64>,
    /// For every input entry, its slot in `ax`.
    entry_slot: Vec<usize>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl Ldl {
    /// Analyzes the symmetric pattern given as `(i, j)` entries (either
    /// triangle; duplicates are summed). The diagonal is always included.
    pub fn analyze(n: usize, entries: &[(usize, usize)]) -> Result<Self, LdlError> {
        for &(i, j) in entries {
            if i >= n || j >= n {
                return Err(LdlError::Index(i, j, n));
            }
        }
        // Upper-triangle pattern in original ordering, for the ordering step.
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in entries {
            let (r, c) = (i.min(j), i.max(j));
            if r != c {
                cols[c].push(r);
            }
        }
        for (c, col) in cols.iter_mut().enumerate() {
            col.push(c);
            col.sort_unstable();
            col.dedup();
        }
        let mut a_p = Vec::with_capacity(n + 1);
        let mut a_i = Vec::new();
        a_p.push(0);
        for col in &cols {
            a_i.extend_from_slice(col);
            a_p.push(a_i.len());
        }
        let perm = if n == 0 {
            Vec::new()
        } else {
            let (p, _, _) = amd::order(n, &a_p, &a_i, &amd::Control::default())
                .map_err(|s| LdlError::Ordering(format!("{s:?}")))?;
            p
        };
        Self::with_ordering(n, entries, perm)
    }

    /// Like [`Ldl::analyze`] with a caller-supplied elimination order.
    pub fn with_ordering(n: usize, entries: &[(usize, usize)], perm: Vec<usize>) -> Result<Self, LdlError> {
        if perm.len() != n {
            return Err(LdlError::Ordering(format!("permutation has length {}, expected {n}", perm.len())));
        }
        let mut pinv = vec![NONE; n];
        for (k, &p) in perm.iter().enumerate() {
            if p >= n || pinv[p] != NONE {
                return Err(LdlError::Ordering("not a permutation".into()));
            }
            pinv[p] = k;
        }
        let mut permuted: Vec<(usize, usize)> = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (pinv[i], pinv[j]);
                (a.max(b), a.min(b))
            })
            .collect();
        permuted.extend((0..n).map(|k| (k, k)));
        permuted.sort_unstable();
        permuted.dedup();
        // (col, row) sorted: column-major with rows ascending.
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(permuted.len());
        for &(c, r) in &permuted {
            ap[c + 1] += 1;
            ai.push(r);
        }
        for c in 0..n {
            ap[c + 1] += ap[c];
        }
        let entry_slot = entries
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (pinv[i], pinv[j]);
                permuted.binary_search(&(a.max(b), a.min(b))).expect("entry present")
            })
            .collect();

        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let nnz_l = lp[n];
        let nnz_a = ai.len();
        Ok(Self {
            n,
            perm,
            pinv,
            ap,
            ai,
            ax: vec![0.0; nnz_a],
            entry_slot,
            etree,
            lp,
            li: vec![0; nnz_l],
            lx: vec![0.0; nnz_l],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_factor(&self) -> usize {
        self.lp[self.n]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Numeric factorization of the matrix with `values[k]` at `entries[k]`
    /// (duplicates summed) plus `diag[i]` on the diagonal.
    ///
    /// Pivots smaller than `pivot_tol` in magnitude count as zero; the
    /// factorization still completes so the caller can inspect the inertia.
    pub fn factor(&mut self, values: &[f64], diag: &[f64], pivot_tol: f64) -> Result<Inertia, LdlError> {
        let n = self.n;
        if values.len() != self.entry_slot.len() {
            return Err(LdlError::Dimension { expected: self.entry_slot.len(), got: values.len() });
        }
        if diag.len() != n {
            return Err(LdlError::Dimension { expected: n, got: diag.len() });
        }
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (&slot, &v) in self.entry_slot.iter().zip(values) {
            self.ax[slot] += v;
        }
        for (i, &dv) in diag.iter().enumerate() {
            let k = self.pinv[i];
            // Diagonal is the last entry of each column.
            self.ax[self.ap[k + 1] - 1] += dv;
        }

        let mut y_vals = vec![0.0; n];
        let mut y_marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.lp[..n].to_vec();
        let mut inertia = Inertia { positive: 0, negative: 0, zero: 0 };
        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] = self.ax[p];
                    continue;
                }
                y_vals[b] = self.ax[p];
                if !y_marked[b] {
                    y_marked[b] = true;
                    elim[0] = b;
                    let mut n_e = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_marked[next] {
                            break;
                        }
                        y_marked[next] = true;
                        elim[n_e] = next;
                        n_e += 1;
                        next = self.etree[next];
                    }
                    while n_e > 0 {
                        n_e -= 1;
                        y_idx[nnz_y] = elim[n_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next_space[c];
                let yc = y_vals[c];
                for j in self.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[tmp];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_marked[c] = false;
            }
            let dk = self.d[k];
            if !dk.is_finite() || dk.abs() <= pivot_tol {
                inertia.zero += 1;
                // Keep the factorization going with a signed placeholder.
                let fallback = if dk.is_finite() && dk < 0.0 { -pivot_tol.max(1e-300) } else { pivot_tol.max(1e-300) };
                self.d[k] = fallback;
            } else if dk > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            self.dinv[k] = 1.0 / self.d[k];
        }
        Ok(inertia)
    }

    /// Solves `A x = b` in place using the last factorization.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|k| b[self.perm[k]]).collect();
        for i in 0..n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                xi -= self.lx[j] * x[self.li[j]];
            }
            x[i] = xi;
        }
        for k in 0..n {
            b[self.perm[k]] = x[k];
        }
    }
}

/// `y = A x` for a symmetric matrix given by entries (each stored once, either
/// triangle) plus a diagonal.
pub fn sym_matvec(entries: &[(usize, usize)], values: &[f64], diag: &[f64], x: &[f64], y: &mut [f64]) {
    for (yi, (&d, &xi)) in y.iter_mut().zip(diag.iter().zip(x)) {
        *yi = d * xi;
    }
    for (&(i, j), &v) in entries.iter().zip(values) {
        y[i] += v * x[j];
        if i != j {
            y[j] += v * x[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_from(entries: &[(usize, usize)], values: &[f64], diag: &[f64]) -> Vec<Vec<f64>> {
        let n = diag.len();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = diag[i];
        }
        for (&(i, j), &v) in entries.iter().zip(values) {
            a[i][j] += v;
            if i != j {
                a[j][i] += v;
            }
        }
        a
    }

    #[test]
    fn solves_quasidefinite_system() {
        // [H J^T; J -D] with H = [[4,1],[1,3]], J = [1 2], D = 0.5
        let entries = [(1, 0), (2, 0), (2, 1)];
        let values = [1.0, 1.0, 2.0];
        let diag = [4.0, 3.0, -0.5];
        let mut f = Ldl::analyze(3, &entries).unwrap();
        let inertia = f.factor(&values, &diag, 1e-14).unwrap();
        assert_eq!((inertia.positive, inertia.negative, inertia.zero), (2, 1, 0));
        let b = [1.0, -2.0, 0.5];
        let mut x = b;
        f.solve(&mut x);
        let a = dense_from(&entries, &values, &diag);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((r - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn random_sparse_spd_and_refactor() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let mut entries = Vec::new();
        for _ in 0..150 {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                entries.push((i, j));
            }
        }
        let mut f = Ldl::analyze(n, &entries).unwrap();
        for trial in 0..3 {
            let values: Vec<f64> = entries.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let diag: Vec<f64> = (0..n).map(|_| 12.0 + trial as f64).collect();
            let inertia = f.factor(&values, &diag, 1e-14).unwrap();
            assert_eq!(inertia.positive, n);
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let mut x = b.clone();
            f.solve(&mut x);
            let mut r = vec![0.0; n];
            sym_matvec(&entries, &values, &diag, &x, &mut r);
            for i in 0..n {
                assert!((r[i] - b[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn detects_indefinite_and_singular() {
        let mut f = Ldl::analyze(2, &[(0, 1)]).unwrap();
        let inertia = f.factor(&[2.0], &[1.0, 1.0], 1e-14).unwrap();
        assert_eq!((inertia.positive, inertia.negative), (1, 1));
        let inertia = f.factor(&[1.0], &[1.0, 1.0], 1e-12).unwrap();
        assert_eq!(inertia.zero, 1);
    }
}
