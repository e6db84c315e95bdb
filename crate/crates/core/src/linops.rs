//! Sparse matrices and the successive-over-relaxation solver.
//!
//! Everything the optimizers solve goes through [`SparseSymMatrix`] and
//! [`sor_solve`]. Matrices are stored in compressed sparse row form with
//! sorted, de-duplicated columns per row. [`BlockSystem`] keeps the four
//! `L x L` blocks of the variational system separate and stacks them into one
//! `2L x 2L` matrix on demand, with the mean parameters occupying indices
//! `0..L` and the standard deviations `L..2L`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Result, SviglError};

/// Relative tolerance used when validating symmetry of stored entries.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// General sparse matrix in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &entries {
            if r >= nrows || c >= ncols {
                return Err(SviglError::ShapeMismatch(format!(
                    "entry ({r}, {c}) outside a {nrows}x{ncols} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(SviglError::NonFiniteEntry { row: r, col: c });
            }
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("merged entry follows a pushed one") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Builds a matrix directly from CSR arrays. Columns within each row must
    /// be strictly increasing.
    pub fn from_raw(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != nrows + 1
            || col_idx.len() != values.len()
            || row_ptr[nrows] != values.len()
        {
            return Err(SviglError::ShapeMismatch("inconsistent CSR arrays".into()));
        }
        for r in 0..nrows {
            if row_ptr[r] > row_ptr[r + 1] {
                return Err(SviglError::ShapeMismatch("row pointers decrease".into()));
            }
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            for (k, &c) in cols.iter().enumerate() {
                if c >= ncols || (k > 0 && cols[k - 1] >= c) {
                    return Err(SviglError::ShapeMismatch(format!(
                        "row {r} has unsorted or out-of-range columns"
                    )));
                }
                if !values[row_ptr[r] + k].is_finite() {
                    return Err(SviglError::NonFiniteEntry { row: r, col: c });
                }
            }
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// Stored value at `(r, c)`, zero when absent.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterates over stored entries in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.ncols, v.len())?;
        Ok((0..self.nrows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).map(|(&c, &a)| a * v[c]).sum()
            })
            .collect())
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (r, c, v) in self.triplets() {
            let k = next[c];
            col_idx[k] = r;
            values[k] = v;
            next[c] += 1;
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Returns the matrix with every value multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Entry-wise sum of two matrices of equal shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(SviglError::ShapeMismatch(format!(
                "cannot add {}x{} and {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        Self::from_triplets(self.nrows, self.ncols, self.triplets().chain(other.triplets()))
    }

    /// Dense row-major copy, for small matrices and diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            dense[r][c] += v;
        }
        dense
    }

    fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }
}

/// Square sparse matrix validated to be symmetric with finite values.
///
/// The diagonal is cached; a missing diagonal entry reads as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    csr: CsrMatrix,
    diagonal: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn from_csr(csr: CsrMatrix) -> Result<Self> {
        if csr.nrows != csr.ncols {
            return Err(SviglError::ShapeMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                csr.nrows, csr.ncols
            )));
        }
        for (r, c, v) in csr.triplets() {
            if r == c {
                continue;
            }
            let mirror = csr.get(c, r);
            if (v - mirror).abs() > SYMMETRY_TOL * v.abs().max(1.0) {
                return Err(SviglError::NotSymmetric { row: r, col: c });
            }
        }
        let diagonal = (0..csr.nrows).map(|i| csr.get(i, i)).collect();
        Ok(Self { csr, diagonal })
    }

    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        Self::from_csr(CsrMatrix::from_triplets(n, n, triplets)?)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n]).expect("identity is finite")
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        let n = d.len();
        let csr = CsrMatrix::from_raw(n, n, (0..=n).collect(), (0..n).collect(), d.to_vec())?;
        Ok(Self {
            csr,
            diagonal: d.to_vec(),
        })
    }

    /// Builds a symmetric matrix from a dense square array.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut triplets = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            check_len(n, row.len())?;
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    triplets.push((r, c, v));
                }
            }
        }
        Self::from_triplets(n, triplets)
    }

    pub fn dim(&self) -> usize {
        self.csr.nrows
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.csr
    }

    pub fn into_csr(self) -> CsrMatrix {
        self.csr
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.csr.get(r, c)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.csr.matvec(v)
    }

    /// `vᵀ A v`.
    pub fn quadratic_form(&self, v: &[f64]) -> Result<f64> {
        let av = self.matvec(v)?;
        Ok(av.iter().zip(v).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            csr: self.csr.scaled(s),
            diagonal: self.diagonal.iter().map(|d| d * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::from_csr(self.csr.add(&other.csr)?)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.csr.to_dense()
    }
}

/// Matrix-vector product for either a symmetric matrix or a block system.
pub trait MatVec {
    fn dim(&self) -> usize;
    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>>;
}

impl MatVec for SparseSymMatrix {
    fn dim(&self) -> usize {
        SparseSymMatrix::dim(self)
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        SparseSymMatrix::matvec(self, v)
    }
}

/// Result of a fixed number of SOR sweeps.
#[derive(Debug, Clone)]
pub struct SorOutcome {
    pub solution: Vec<f64>,
    /// `‖A x − rhs‖₂` of the returned iterate.
    pub residual_norm: f64,
}

/// Runs exactly `iterations` forward SOR sweeps on `A x = rhs` from `x0`.
///
/// Rows are visited in ascending order. No convergence test is made.
pub fn sor_solve(
    a: &SparseSymMatrix,
    rhs: &[f64],
    x0: &[f64],
    iterations: usize,
    omega: f64,
) -> Result<SorOutcome> {
    let n = a.dim();
    check_len(n, rhs.len())?;
    check_len(n, x0.len())?;
    if !(omega > 0.0 && omega < 2.0) {
        return Err(SviglError::InvalidParameter(format!(
            "relaxation factor {omega} outside (0, 2)"
        )));
    }
    if let Some(i) = a.diagonal().iter().position(|&d| d == 0.0) {
        return Err(SviglError::ZeroDiagonal(i));
    }

    let mut x = x0.to_vec();
    for sweep in 0..iterations {
        sor_sweep(a, rhs, &mut x, omega).map_err(|row| SviglError::SolverNonFinite { sweep, row })?;
    }
    let residual_norm = residual_norm(a, rhs, &x)?;
    Ok(SorOutcome {
        solution: x,
        residual_norm,
    })
}

fn sor_sweep(a: &SparseSymMatrix, rhs: &[f64], x: &mut [f64], omega: f64) -> std::result::Result<(), usize> {
    let csr = a.csr();
    for i in 0..x.len() {
        let (cols, vals) = csr.row(i);
        let mut off = 0.0;
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i {
                off += v * x[j];
            }
        }
        let gs = (rhs[i] - off) / a.diagonal()[i];
        let next = (1.0 - omega) * x[i] + omega * gs;
        if !next.is_finite() {
            return Err(i);
        }
        x[i] = next;
    }
    Ok(())
}

/// `‖A x − rhs‖₂`.
pub fn residual_norm(a: &SparseSymMatrix, rhs: &[f64], x: &[f64]) -> Result<f64> {
    let ax = a.matvec(x)?;
    check_len(ax.len(), rhs.len())?;
    Ok(ax
        .iter()
        .zip(rhs)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt())
}

/// Randomized positive-semidefiniteness check.
///
/// Returns `true` iff `vᵀAv ≥ −1e-8·‖v‖²` for every one of `trials` standard
/// normal probe vectors.
pub fn psd_probe<R: Rng + ?Sized>(a: &SparseSymMatrix, trials: usize, rng: &mut R) -> bool {
    psd_probe_with_tol(a, trials, 1e-8, rng)
}

pub fn psd_probe_with_tol<R: Rng + ?Sized>(
    a: &SparseSymMatrix,
    trials: usize,
    tol: f64,
    rng: &mut R,
) -> bool {
    let n = a.dim();
    (0..trials).all(|_| {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        let q = a.quadratic_form(&v).expect("probe has matching length");
        q >= -tol * norm2
    })
}

/// The `2L x 2L` linear system over stacked `(μ, σ)`.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub a_mm: SparseSymMatrix,
    pub a_ms: CsrMatrix,
    pub a_sm: CsrMatrix,
    pub a_ss: SparseSymMatrix,
    pub b_m: Vec<f64>,
    pub b_s: Vec<f64>,
}

impl BlockSystem {
    /// Size `L` of a single block.
    pub fn half_dim(&self) -> usize {
        self.a_mm.dim()
    }

    /// Stacked right-hand side `(b_μ, b_σ)`.
    pub fn b(&self) -> Vec<f64> {
        self.b_m.iter().chain(&self.b_s).copied().collect()
    }

    /// Stacks the blocks into one symmetric `2L x 2L` matrix.
    pub fn matrix(&self) -> Result<SparseSymMatrix> {
        let l = self.half_dim();
        let mut row_ptr = Vec::with_capacity(2 * l + 1);
        let nnz = self.a_mm.csr().nnz() + self.a_ms.nnz() + self.a_sm.nnz() + self.a_ss.csr().nnz();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (left, right) in [(self.a_mm.csr(), &self.a_ms), (&self.a_sm, self.a_ss.csr())] {
            for r in 0..l {
                let (c1, v1) = left.row(r);
                col_idx.extend_from_slice(c1);
                values.extend_from_slice(v1);
                let (c2, v2) = right.row(r);
                col_idx.extend(c2.iter().map(|c| c + l));
                values.extend_from_slice(v2);
                row_ptr.push(values.len());
            }
        }
        SparseSymMatrix::from_csr(CsrMatrix::from_raw(2 * l, 2 * l, row_ptr, col_idx, values)?)
    }
}

impl MatVec for BlockSystem {
    fn dim(&self) -> usize {
        2 * self.half_dim()
    }

    fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let l = self.half_dim();
        check_len(2 * l, v.len())?;
        let (mu, sigma) = v.split_at(l);
        let top = self.a_mm.matvec(mu)?;
        let top_s = self.a_ms.matvec(sigma)?;
        let bottom = self.a_sm.matvec(mu)?;
        let bottom_s = self.a_ss.matvec(sigma)?;
        Ok(top
            .iter()
            .zip(&top_s)
            .map(|(a, b)| a + b)
            .chain(bottom.iter().zip(&bottom_s).map(|(a, b)| a + b))
            .collect())
    }
}

/// Accumulates scaled copies of sparse matrices into a single sum.
///
/// When every added matrix shares the sparsity pattern of the first one the
/// sum is formed in place; otherwise it falls back to triplet merging.
#[derive(Debug, Clone)]
pub(crate) struct PatternAccumulator {
    nrows: usize,
    ncols: usize,
    pattern: Option<CsrMatrix>,
    extra: Vec<(usize, usize, f64)>,
}

impl PatternAccumulator {
    pub(crate) fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            pattern: None,
            extra: Vec::new(),
        }
    }

    /// Adds `A` with value transform `f(row, col, value)`.
    pub(crate) fn add_with(&mut self, a: &CsrMatrix, mut f: impl FnMut(usize, usize, f64) -> f64) {
        match &mut self.pattern {
            None => {
                let mut first = a.clone();
                for r in 0..a.nrows {
                    for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                        first.values[k] = f(r, a.col_idx[k], a.values[k]);
                    }
                }
                self.pattern = Some(first);
            }
            Some(p) if p.same_pattern(a) => {
                for r in 0..a.nrows {
                    for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                        p.values[k] += f(r, a.col_idx[k], a.values[k]);
                    }
                }
            }
            Some(_) => {
                self.extra
                    .extend(a.triplets().map(|(r, c, v)| (r, c, f(r, c, v))));
            }
        }
    }

    pub(crate) fn add_diagonal(&mut self, d: &[f64]) {
        self.extra
            .extend(d.iter().enumerate().map(|(i, &v)| (i, i, v)));
    }

    pub(crate) fn finish(self) -> Result<CsrMatrix> {
        let base = self
            .pattern
            .unwrap_or_else(|| CsrMatrix::zeros(self.nrows, self.ncols));
        if self.extra.is_empty() {
            return Ok(base);
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, base.triplets().chain(self.extra))
    }
}
