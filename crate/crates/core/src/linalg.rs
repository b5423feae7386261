//! Dense linear-algebra primitives.
//!
//! Matrices are row-major `f64`. Large products and SVDs go through `faer`;
//! the symmetric eigensolver used for cone projections is a cyclic Jacobi
//! method implemented here.

use std::cmp::Ordering;
use std::ops::{Index, IndexMut};
use std::path::Path;

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlrError};

/// Matrix index `(row, col)`, zero-based.
pub type Cell = (usize, usize);

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
// Above this size the SVD is taken from an eigendecomposition of the Gram matrix.
const GRAM_SVD_THRESHOLD: usize = 1024;
// Products smaller than this many multiply-adds stay in plain loops.
const FAER_MATMUL_THRESHOLD: usize = 32 * 32 * 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SlrError::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(SlrError::Parameter(format!("non-finite entry at position {pos}")));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(SlrError::Dimension(format!(
                    "row {i} has {} entries, expected {c}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn ensure_same_shape(&self, other: &DenseMatrix, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(SlrError::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &DenseMatrix) -> DenseMatrix {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        self.map(|v| v * s)
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Frobenius inner product `<A, B>`.
    pub fn inner(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "inner product shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn max_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                dev = dev.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        dev
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.max_asymmetry() <= tol
    }

    pub fn submatrix(&self, row_idx: &[usize], col_idx: &[usize]) -> DenseMatrix {
        DenseMatrix::from_fn(row_idx.len(), col_idx.len(), |i, j| self.get(row_idx[i], col_idx[j]))
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(SlrError::Dimension(format!(
                "product of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        if self.rows * self.cols * other.cols >= FAER_MATMUL_THRESHOLD {
            let p = self.to_faer() * other.to_faer();
            return Ok(DenseMatrix::from_faer(p.as_ref()));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        truncated_svd(self, 1).map(|f| f.singular_values[0]).unwrap_or(0.0)
    }

    /// Number of singular values above `rel_tol * max(1, sigma_max)`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let k = self.rows.min(self.cols);
        if k == 0 || self.max_abs() == 0.0 {
            return 0;
        }
        let sv = singular_values(self);
        let cutoff = rel_tol * sv[0].max(1.0);
        sv.iter().filter(|s| **s > cutoff).count()
    }

    pub(crate) fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }

    pub(crate) fn from_faer(m: MatRef<'_, f64>) -> DenseMatrix {
        DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Reads a headerless CSV matrix, one row per line.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<DenseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                SlrError::Parse(format!("line {}, column {}: {:?} is not a number", line + 1, col + 1, field))
            })?;
            if !v.is_finite() {
                return Err(SlrError::Parse(format!("line {}, column {}: non-finite value", line + 1, col + 1)));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(SlrError::Parse(format!(
                    "ragged row at line {}: {} fields, expected {}",
                    line + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SlrError::Parse("empty matrix file".into()));
    }
    DenseMatrix::from_rows(&rows)
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.rows() {
        writer.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEig {
    /// Non-increasing.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: DenseMatrix,
}

/// Cyclic Jacobi eigensolver.
///
/// Eigenvector signs are fixed so that the entry of largest magnitude is positive.
pub fn sym_eig(a: &DenseMatrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(SlrError::Dimension(format!("sym_eig needs a square matrix, got {}x{}", a.rows, a.cols)));
    }
    let scale = a.max_abs().max(1.0);
    let asym = a.max_asymmetry();
    if asym > 1e-12 * scale {
        return Err(SlrError::NotSymmetric(asym));
    }
    let n = a.rows;
    let mut m = a.data.clone();
    let mut v = DenseMatrix::identity(n).data;
    let norm = a.frobenius_norm();
    let mut converged = false;
    // one sweep past the threshold costs little and sharpens near-zero eigenvalues
    let mut polish = true;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[i * n + j] * m[i * n + j];
                }
            }
        }
        if off.sqrt() <= JACOBI_TOL * norm {
            converged = true;
            if !polish || off == 0.0 {
                break;
            }
            polish = false;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(SlrError::Numerical(format!("Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).unwrap_or(Ordering::Equal).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col: Vec<f64> = (0..n).map(|k| v[k * n + src]).collect();
        let sign = sign_of_dominant(&col);
        for k in 0..n {
            vectors.data[k * n + dst] = sign * col[k];
        }
    }
    Ok(SymEig { values, vectors })
}

fn sign_of_dominant(v: &[f64]) -> f64 {
    let mut best = 0.0;
    let mut sign = 1.0;
    for &x in v {
        if x.abs() > best {
            best = x.abs();
            sign = if x < 0.0 { -1.0 } else { 1.0 };
        }
    }
    sign
}

/// Leading singular triplets: `A ≈ U diag(σ) Vᵀ`.
#[derive(Clone, Debug)]
pub struct SpectralFactorization {
    pub singular_values: Vec<f64>,
    /// rows × k, orthonormal columns.
    pub left_vectors: DenseMatrix,
    /// cols × k, orthonormal columns.
    pub right_vectors: DenseMatrix,
}

impl SpectralFactorization {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U diag(σ) Vᵀ`, optionally with each σ replaced by `f(σ)`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let (r, c, k) = (self.left_vectors.rows, self.right_vectors.rows, self.rank());
        let us = DenseMatrix::from_fn(r, k, |i, j| self.left_vectors.get(i, j) * f(self.singular_values[j]));
        us.matmul(&self.right_vectors.transpose()).unwrap_or_else(|_| DenseMatrix::zeros(r, c))
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.reconstruct_with(|s| s)
    }

    fn fix_signs(&mut self) {
        let k = self.rank();
        for j in 0..k {
            let sign = sign_of_dominant(&self.right_vectors.column(j));
            if sign < 0.0 {
                for i in 0..self.right_vectors.rows {
                    let v = self.right_vectors.get(i, j);
                    self.right_vectors.set(i, j, -v);
                }
                for i in 0..self.left_vectors.rows {
                    let v = self.left_vectors.get(i, j);
                    self.left_vectors.set(i, j, -v);
                }
            }
        }
    }
}

/// All singular values, non-increasing.
pub fn singular_values(a: &DenseMatrix) -> Vec<f64> {
    let k = a.rows.min(a.cols);
    if k == 0 {
        return Vec::new();
    }
    match a.to_faer().thin_svd() {
        Ok(svd) => {
            let s = svd.S();
            let mut out: Vec<f64> = (0..k).map(|i| s[i].max(0.0)).collect();
            out.sort_by(|x, y| y.partial_cmp(x).unwrap_or(Ordering::Equal));
            out
        }
        Err(_) => full_svd_via_gram(a, k).singular_values,
    }
}

/// Top-`k` singular triplets.
///
/// With repeated singular values at position `k` the returned subspace is one
/// of several equally good truncations.
pub fn truncated_svd(a: &DenseMatrix, k: usize) -> Result<SpectralFactorization> {
    let min_dim = a.rows.min(a.cols);
    if k == 0 || k > min_dim {
        return Err(SlrError::Parameter(format!("truncated_svd rank {k} outside 1..={min_dim}")));
    }
    let mut f = if min_dim > GRAM_SVD_THRESHOLD {
        full_svd_via_gram(a, k)
    } else {
        match a.to_faer().thin_svd() {
            Ok(svd) => {
                let s = svd.S();
                SpectralFactorization {
                    singular_values: (0..k).map(|i| s[i].max(0.0)).collect(),
                    left_vectors: DenseMatrix::from_faer(svd.U().subcols(0, k)),
                    right_vectors: DenseMatrix::from_faer(svd.V().subcols(0, k)),
                }
            }
            Err(_) => full_svd_via_gram(a, k),
        }
    };
    f.fix_signs();
    Ok(f)
}

// Leading k triplets from the eigendecomposition of the smaller Gram matrix.
fn full_svd_via_gram(a: &DenseMatrix, k: usize) -> SpectralFactorization {
    let fa = a.to_faer();
    let tall = a.rows >= a.cols;
    let gram = if tall { fa.transpose() * &fa } else { &fa * fa.transpose() };
    let dim = gram.nrows();
    let gram = Mat::from_fn(dim, dim, |i, j| 0.5 * (gram[(i, j)] + gram[(j, i)]));
    let eig = gram.self_adjoint_eigen(faer::Side::Lower).expect("symmetric eigendecomposition");
    let s = eig.S();
    let u = eig.U();
    // ascending order from faer
    let idx: Vec<usize> = (0..k).map(|i| dim - 1 - i).collect();
    let sv: Vec<f64> = idx.iter().map(|&i| s[i].max(0.0).sqrt()).collect();
    let basis = Mat::from_fn(dim, k, |r, c| u[(r, idx[c])]);
    let other = if tall { &fa * &basis } else { fa.transpose() * &basis };
    let other_rows = other.nrows();
    let mut other_dm = DenseMatrix::zeros(other_rows, k);
    for c in 0..k {
        let norm: f64 = (0..other_rows).map(|r| other[(r, c)] * other[(r, c)]).sum::<f64>().sqrt();
        for r in 0..other_rows {
            other_dm.set(r, c, if norm > 0.0 { other[(r, c)] / norm } else { 0.0 });
        }
    }
    let basis_dm = DenseMatrix::from_faer(basis.as_ref());
    if tall {
        SpectralFactorization { singular_values: sv, left_vectors: other_dm, right_vectors: basis_dm }
    } else {
        SpectralFactorization { singular_values: sv, left_vectors: basis_dm, right_vectors: other_dm }
    }
}

fn orthonormal_basis(m: &Mat<f64>) -> Mat<f64> {
    m.qr().compute_thin_Q()
}

/// Randomized range-finder SVD with Gaussian test matrix and power iterations.
pub fn randomized_svd(
    a: &DenseMatrix,
    k: usize,
    oversampling: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SpectralFactorization> {
    let min_dim = a.rows.min(a.cols);
    let l = k + oversampling;
    if k == 0 || l > min_dim {
        return Err(SlrError::Parameter(format!(
            "randomized_svd needs 1 <= k and k + oversampling <= {min_dim}, got k={k}, oversampling={oversampling}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = Mat::<f64>::zeros(a.cols, l);
    for i in 0..a.cols {
        for j in 0..l {
            omega[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let fa = a.to_faer();
    let mut q = orthonormal_basis(&(&fa * &omega));
    for _ in 0..power_iters {
        let z = orthonormal_basis(&(fa.transpose() * &q));
        q = orthonormal_basis(&(&fa * &z));
    }
    let b = q.transpose() * &fa;
    let svd = b
        .thin_svd()
        .map_err(|e| SlrError::Numerical(format!("small SVD failed: {e:?}")))?;
    let s = svd.S();
    let u = &q * svd.U().subcols(0, k);
    let mut f = SpectralFactorization {
        singular_values: (0..k).map(|i| s[i].max(0.0)).collect(),
        left_vectors: DenseMatrix::from_faer(u.as_ref()),
        right_vectors: DenseMatrix::from_faer(svd.V().subcols(0, k)),
    };
    f.fix_signs();
    Ok(f)
}

/// Per-entry forcing state used by support selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Free,
    Zero,
    Keep,
}

/// Picks `k` entries of `values` (row-major) by largest magnitude subject to forcing.
///
/// Returns the chosen flat indices as a boolean mask. Ties go to the lower index.
pub(crate) fn select_support(values: &[f64], k: usize, states: Option<&[CellState]>) -> Result<Vec<bool>> {
    let len = values.len();
    let mut mask = vec![false; len];
    let mut free: Vec<usize> = Vec::with_capacity(len);
    let mut kept = 0usize;
    match states {
        Some(st) => {
            for (idx, s) in st.iter().enumerate() {
                match s {
                    CellState::Keep => {
                        mask[idx] = true;
                        kept += 1;
                    }
                    CellState::Free => free.push(idx),
                    CellState::Zero => {}
                }
            }
        }
        None => free.extend(0..len),
    }
    if kept > k {
        return Err(SlrError::InfeasiblePattern(format!("{kept} forced entries exceed budget {k}")));
    }
    let remaining = k - kept;
    if remaining >= free.len() {
        for idx in free {
            mask[idx] = true;
        }
        return Ok(mask);
    }
    if remaining == 0 {
        return Ok(mask);
    }
    let by_magnitude = |a: &usize, b: &usize| {
        values[*b].abs().partial_cmp(&values[*a].abs()).unwrap_or(Ordering::Equal).then(a.cmp(b))
    };
    free.select_nth_unstable_by(remaining - 1, by_magnitude);
    for &idx in &free[..remaining] {
        mask[idx] = true;
    }
    Ok(mask)
}

/// Binary mask of the `k` largest-magnitude entries of `m` subject to forcing sets.
pub fn top_k_abs_select(
    m: &DenseMatrix,
    k: usize,
    forced_zero: &[Cell],
    forced_keep: &[Cell],
) -> Result<DenseMatrix> {
    let mut states = vec![CellState::Free; m.rows * m.cols];
    for &(i, j) in forced_zero {
        check_cell(m, i, j)?;
        states[i * m.cols + j] = CellState::Zero;
    }
    for &(i, j) in forced_keep {
        check_cell(m, i, j)?;
        let s = &mut states[i * m.cols + j];
        if *s == CellState::Zero {
            return Err(SlrError::Contract(format!("cell ({i},{j}) is both forced zero and forced nonzero")));
        }
        *s = CellState::Keep;
    }
    if forced_keep.len() > k {
        return Err(SlrError::Contract(format!("{} forced entries exceed budget {k}", forced_keep.len())));
    }
    let mask = select_support(&m.data, k, Some(&states))?;
    Ok(DenseMatrix {
        rows: m.rows,
        cols: m.cols,
        data: mask.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
    })
}

fn check_cell(m: &DenseMatrix, i: usize, j: usize) -> Result<()> {
    if i >= m.rows || j >= m.cols {
        return Err(SlrError::Dimension(format!("cell ({i},{j}) outside {}x{}", m.rows, m.cols)));
    }
    Ok(())
}

/// Moore–Penrose pseudoinverse; singular values below `tol * σ_max` are dropped.
pub fn pseudoinverse(a: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
    if !(tol > 0.0) {
        return Err(SlrError::Parameter(format!("pseudoinverse tolerance must be positive, got {tol}")));
    }
    let k = a.rows.min(a.cols);
    if k == 0 || a.max_abs() == 0.0 {
        return Ok(DenseMatrix::zeros(a.cols, a.rows));
    }
    let svd = a
        .to_faer()
        .thin_svd()
        .map_err(|e| SlrError::Numerical(format!("SVD failed: {e:?}")))?;
    let s = svd.S();
    let smax = (0..k).fold(0.0f64, |m, i| m.max(s[i]));
    let cutoff = tol * smax;
    let u = svd.U();
    let v = svd.V();
    let mut out = DenseMatrix::zeros(a.cols, a.rows);
    for c in 0..k {
        if s[c] <= cutoff || s[c] == 0.0 {
            continue;
        }
        let inv = 1.0 / s[c];
        for i in 0..a.cols {
            let vi = v[(i, c)] * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..a.rows {
                out.data[i * a.rows + j] += vi * u[(j, c)];
            }
        }
    }
    Ok(out)
}
