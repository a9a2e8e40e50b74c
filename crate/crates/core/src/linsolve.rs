//! Sparse matrices, a direct sparse LU backed by `faer`, and a restarted
//! right-preconditioned GMRES for matrix-free operators.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::MatMut;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with summed duplicates.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed on
/// finalization.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        TripletBuilder {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        TripletBuilder {
            n_rows,
            n_cols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> SparseMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseMatrix {
    pub fn from_triplets(n_rows: usize, n_cols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut b = TripletBuilder::with_capacity(n_rows, n_cols, entries.len());
        for &(r, c, v) in entries {
            b.push(r, c, v);
        }
        b.build()
    }

    pub fn identity(n: usize) -> Self {
        let entries: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseMatrix::from_triplets(n, n, &entries)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(i) {
                row[c] += v;
            }
        }
        d
    }
}

/// Sparse LU factorization with partial pivoting; immutable and shareable
/// across threads once built.
pub struct LuFactorization {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl std::fmt::Debug for LuFactorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuFactorization").field("n", &self.n).finish()
    }
}

impl LuFactorization {
    pub fn new(a: &SparseMatrix) -> Result<LuFactorization> {
        if a.n_rows != a.n_cols {
            return Err(Error::SingularMatrix(format!(
                "matrix is {}x{}, not square",
                a.n_rows, a.n_cols
            )));
        }
        let n = a.n_rows;
        let triplets: Vec<Triplet<usize, usize, f64>> = (0..n)
            .flat_map(|i| a.row(i).map(move |(c, v)| Triplet::new(i, c, v)))
            .collect();
        let csc = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::SingularMatrix(format!("cannot build matrix: {e:?}")))?;
        let lu = csc
            .sp_lu()
            .map_err(|e| Error::SingularMatrix(format!("LU failed: {e:?}")))?;
        let f = LuFactorization { n, lu };
        // Numerical singularity shows up as non-finite solutions.
        let probe = f.solve(&vec![1.0; n])?;
        drop(probe);
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) -> Result<()> {
        assert_eq!(b.len(), self.n);
        self.lu
            .solve_in_place(MatMut::from_column_major_slice_mut(b, self.n, 1));
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularMatrix("non-finite solution".into()));
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

/// Convergence record of a Krylov (or fixed-point) iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KrylovReport {
    pub iterations: usize,
    /// Relative residual before the first iteration and after each one.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Filled by callers whose operator applications involve subdomain solves.
    pub subdomain_solve_count: usize,
}

impl KrylovReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Krylov subspace size before restarting; `None` keeps the full basis.
    pub restart: Option<usize>,
}

impl Default for GmresOptions {
    fn default() -> Self {
        GmresOptions {
            tol: 1e-6,
            max_iter: 500,
            restart: None,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Right-preconditioned GMRES for `A x = b`.
///
/// The reported residual is the unpreconditioned `||b - A x||`, relative to
/// `||b||` (or to the initial residual when `b = 0`). Exceeding `max_iter`
/// is not an error: the best iterate is returned with `converged = false`.
pub fn gmres<A, P>(
    mut apply: A,
    b: &[f64],
    x0: &[f64],
    opts: &GmresOptions,
    mut precond: Option<P>,
) -> Result<(Vec<f64>, KrylovReport)>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    assert_eq!(x0.len(), n);
    assert!(opts.tol > 0.0, "GMRES tolerance must be positive");
    let mut x = x0.to_vec();
    let mut report = KrylovReport::default();

    let residual = |x: &[f64], apply: &mut A| -> Result<Vec<f64>> {
        if x.iter().all(|v| *v == 0.0) {
            return Ok(b.to_vec());
        }
        let ax = apply(x)?;
        Ok(b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect())
    };

    let mut r = residual(&x, &mut apply)?;
    let bnorm = norm(b);
    let mut beta = norm(&r);
    let denom = if bnorm > 0.0 { bnorm } else { beta };
    if denom == 0.0 {
        report.residual_history.push(0.0);
        report.converged = true;
        return Ok((x, report));
    }
    report.residual_history.push(beta / denom);
    if beta / denom <= opts.tol {
        report.converged = true;
        return Ok((x, report));
    }

    let m = opts.restart.unwrap_or(opts.max_iter).max(1);
    while report.iterations < opts.max_iter {
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        // Hessenberg columns after Givens rotations (upper triangular).
        let mut h: Vec<Vec<f64>> = Vec::new();
        let mut cs: Vec<(f64, f64)> = Vec::new();
        let mut g = vec![beta];
        let mut done = false;

        for j in 0..m {
            let zj = match precond.as_mut() {
                Some(p) => p(&v[j])?,
                None => v[j].clone(),
            };
            let mut w = apply(&zj)?;
            z.push(zj);

            let mut col = vec![0.0; j + 2];
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                col[i] = hij;
                axpy(&mut w, -hij, vi);
            }
            let mut wn = norm(&w);
            // One reorthogonalization pass when orthogonality is lost.
            let s: Vec<f64> = v.iter().map(|vi| dot(&w, vi)).collect();
            if wn > 0.0 && s.iter().any(|si| si.abs() > 1e-8 * wn) {
                for (i, vi) in v.iter().enumerate() {
                    col[i] += s[i];
                    axpy(&mut w, -s[i], vi);
                }
                wn = norm(&w);
            }
            col[j + 1] = wn;

            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, b) = (col[i], col[i + 1]);
                col[i] = c * a + s * b;
                col[i + 1] = -s * a + c * b;
            }
            let (a, bb) = (col[j], col[j + 1]);
            let rho = a.hypot(bb);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, bb / rho) };
            col[j] = rho;
            col[j + 1] = 0.0;
            cs.push((c, s));
            let gj = g[j];
            g[j] = c * gj;
            g.push(-s * gj);
            h.push(col);

            report.iterations += 1;
            let rel = g[j + 1].abs() / denom;
            report.residual_history.push(rel);
            if rel <= opts.tol {
                report.converged = true;
                done = true;
            }
            if done || wn == 0.0 || report.iterations >= opts.max_iter {
                done = true;
                break;
            }
            v.push(w.iter().map(|wi| wi / wn).collect());
        }

        // Back substitution on the triangular factor.
        let k = h.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (jj, yj) in y.iter().enumerate().skip(i + 1) {
                s -= h[jj][i] * yj;
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (zj, yj) in z.iter().zip(&y) {
            axpy(&mut x, *yj, zj);
        }

        if done || report.converged {
            break;
        }
        r = residual(&x, &mut apply)?;
        beta = norm(&r);
        if beta / denom <= opts.tol {
            report.converged = true;
            break;
        }
    }
    Ok((x, report))
}

/// Unpreconditioned variant of [`gmres`].
pub fn gmres_plain<A>(
    apply: A,
    b: &[f64],
    x0: &[f64],
    opts: &GmresOptions,
) -> Result<(Vec<f64>, KrylovReport)>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    gmres(apply, b, x0, opts, None::<fn(&[f64]) -> Result<Vec<f64>>>)
}
