//! First-order solver for cone programs
//!
//! ```text
//! minimize    cᵀx + offset
//! subject to  Ax + s = b,  s ∈ K = K₁ × … × K_p
//! ```
//!
//! with zero, nonnegative, rotated second-order and PSD cones. The solver is
//! ADMM with a cached Cholesky factorization of `σI + ρAᵀA` and Ruiz
//! equilibration of the data. PSD slices are stored as scaled lower-triangle
//! vectors (off-diagonal entries multiplied by √2, column-major).

use std::path::Path;

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlrError};
use crate::linalg::{sym_eig, DenseMatrix};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "size", rename_all = "snake_case")]
pub enum Cone {
    Zero(usize),
    Nonneg(usize),
    /// `{(u, v, w): 2uv ≥ ‖w‖², u, v ≥ 0}` of the given total dimension.
    RotatedSoc(usize),
    /// Symmetric PSD matrices of the given side length.
    Psd(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::Nonneg(d) | Cone::RotatedSoc(d) => d,
            Cone::Psd(side) => side * (side + 1) / 2,
        }
    }

    // Cones whose rows must share one equilibration factor.
    fn is_block(&self) -> bool {
        matches!(self, Cone::RotatedSoc(_) | Cone::Psd(_))
    }
}

/// Position of `(i, j)`, `i ≥ j`, inside a scaled PSD vector of side `side`.
pub fn svec_index(side: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i >= j { (i, j) } else { (j, i) };
    // column j starts after side + (side-1) + ... + (side-j+1) entries
    j * side - j * j.saturating_sub(1) / 2 + (i - j)
}

pub fn svec(m: &DenseMatrix) -> Vec<f64> {
    let side = m.rows();
    let mut out = Vec::with_capacity(side * (side + 1) / 2);
    for j in 0..side {
        for i in j..side {
            let v = 0.5 * (m.get(i, j) + m.get(j, i));
            out.push(if i == j { v } else { SQRT2 * v });
        }
    }
    out
}

pub fn smat(v: &[f64], side: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(side, side);
    let mut k = 0;
    for j in 0..side {
        for i in j..side {
            let val = if i == j { v[k] } else { v[k] / SQRT2 };
            m.set(i, j, val);
            m.set(j, i, val);
            k += 1;
        }
    }
    m
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConicProblem {
    pub c: Vec<f64>,
    pub objective_offset: f64,
    pub n_rows: usize,
    /// `(row, col, value)`; duplicates are summed.
    pub a: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cone_rows: usize = self.cones.iter().map(Cone::dim).sum();
        if cone_rows != self.n_rows || self.b.len() != self.n_rows {
            return Err(SlrError::Dimension(format!(
                "cones cover {cone_rows} rows, b has {}, A has {}",
                self.b.len(),
                self.n_rows
            )));
        }
        for &(r, c, v) in &self.a {
            if r >= self.n_rows || c >= self.c.len() {
                return Err(SlrError::Dimension(format!("triplet ({r},{c}) outside {}x{}", self.n_rows, self.c.len())));
            }
            if !v.is_finite() {
                return Err(SlrError::Parameter(format!("non-finite coefficient at ({r},{c})")));
            }
        }
        if self.c.iter().chain(&self.b).any(|v| !v.is_finite()) || !self.objective_offset.is_finite() {
            return Err(SlrError::Parameter("non-finite objective or right-hand side".into()));
        }
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    InfeasibleSuspected,
    NumericalFailure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub status: SolveStatus,
    /// Relative residuals as used by the stopping test.
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective_gap: f64,
    /// `cᵀx + offset`.
    pub objective: f64,
    /// `−bᵀy + offset`.
    pub dual_objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub rho: f64,
    /// Proximal weight on `x` keeping the linear system definite.
    pub sigma: f64,
    /// Over-relaxation in `(0, 2)`.
    pub alpha: f64,
    pub scaling_passes: usize,
    pub check_every: usize,
    /// Rebalance `ρ` from the residual ratio (refactorizes the system).
    pub adaptive_rho: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-5,
            max_iters: 50_000,
            rho: 1.0,
            sigma: 1e-6,
            alpha: 1.6,
            scaling_passes: 10,
            check_every: 10,
            adaptive_rho: true,
        }
    }
}

impl SolverSettings {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

struct Csr {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn from_triplets(n_rows: usize, n_cols: usize, trip: &[(usize, usize, f64)]) -> Csr {
        let mut t: Vec<(usize, usize, f64)> = trip.to_vec();
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            col_idx.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr { n_rows, n_cols, row_ptr, col_idx, vals }
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.col_idx[k], self.vals[k]))
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.n_rows) {
            *o = self.row(r).map(|(c, v)| v * x[c]).sum();
        }
    }

    fn mul_t(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &yr) in y.iter().enumerate().take(self.n_rows) {
            if yr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                out[c] += v * yr;
            }
        }
    }

    fn gram(&self, rho: f64, sigma: f64) -> Mat<f64> {
        let mut g = Mat::<f64>::zeros(self.n_cols, self.n_cols);
        for r in 0..self.n_rows {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            for p in lo..hi {
                for q in lo..hi {
                    g[(self.col_idx[p], self.col_idx[q])] += rho * self.vals[p] * self.vals[q];
                }
            }
        }
        for i in 0..self.n_cols {
            g[(i, i)] += sigma;
        }
        g
    }
}

/// Euclidean projection onto a single cone.
pub fn project_cone(point: &[f64], cone: &Cone) -> Vec<f64> {
    let mut v = point.to_vec();
    project_in_place(&mut v, cone);
    v
}

fn project_in_place(v: &mut [f64], cone: &Cone) {
    match *cone {
        Cone::Zero(_) => v.iter_mut().for_each(|x| *x = 0.0),
        Cone::Nonneg(_) => v.iter_mut().for_each(|x| *x = x.max(0.0)),
        Cone::RotatedSoc(_) => project_rotated_soc(v),
        Cone::Psd(side) => project_psd(v, side),
    }
}

fn project_rotated_soc(v: &mut [f64]) {
    let (u, w) = (v[0], v[1]);
    let t = (u + w) / SQRT2;
    let r = (u - w) / SQRT2;
    let tail_sq: f64 = v[2..].iter().map(|x| x * x).sum();
    let znorm = (r * r + tail_sq).sqrt();
    if znorm <= t {
        return;
    }
    if znorm <= -t {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let a = 0.5 * (t + znorm);
    let f = a / znorm;
    let (t2, r2) = (a, f * r);
    v[0] = (t2 + r2) / SQRT2;
    v[1] = (t2 - r2) / SQRT2;
    v[2..].iter_mut().for_each(|x| *x *= f);
}

fn project_psd(v: &mut [f64], side: usize) {
    if side == 1 {
        v[0] = v[0].max(0.0);
        return;
    }
    let m = smat(v, side);
    let eig = match sym_eig(&m) {
        Ok(e) => e,
        Err(_) => {
            v.iter_mut().for_each(|x| *x = f64::NAN);
            return;
        }
    };
    if eig.values.iter().all(|l| *l >= 0.0) {
        return;
    }
    let q = &eig.vectors;
    let mut out = DenseMatrix::zeros(side, side);
    for (k, &l) in eig.values.iter().enumerate() {
        if l <= 0.0 {
            break;
        }
        for i in 0..side {
            let qi = q.get(i, k) * l;
            for j in 0..=i {
                let add = qi * q.get(j, k);
                out.set(i, j, out.get(i, j) + add);
            }
        }
    }
    let mut k = 0;
    for j in 0..side {
        for i in j..side {
            v[k] = if i == j { out.get(i, j) } else { SQRT2 * out.get(i, j) };
            k += 1;
        }
    }
}

fn project_product(v: &mut [f64], cones: &[Cone]) {
    let mut off = 0;
    for cone in cones {
        let d = cone.dim();
        project_in_place(&mut v[off..off + d], cone);
        off += d;
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Scaling {
    row: Vec<f64>,
    col: Vec<f64>,
    b_scale: f64,
    c_scale: f64,
}

fn equilibrate(problem: &ConicProblem, passes: usize) -> (Csr, Vec<f64>, Vec<f64>, Scaling) {
    let (m, n) = (problem.n_rows, problem.n_vars());
    let mut a = Csr::from_triplets(m, n, &problem.a);
    let mut row = vec![1.0; m];
    let mut col = vec![1.0; n];
    let mut blocks: Vec<(usize, usize, bool)> = Vec::new();
    let mut off = 0;
    for cone in &problem.cones {
        blocks.push((off, off + cone.dim(), cone.is_block()));
        off += cone.dim();
    }
    for _ in 0..passes {
        let mut rmax = vec![0.0f64; m];
        let mut cmax = vec![0.0f64; n];
        for (r, rm) in rmax.iter_mut().enumerate() {
            for (c, v) in a.row(r) {
                *rm = rm.max(v.abs());
                cmax[c] = cmax[c].max(v.abs());
            }
        }
        for &(lo, hi, block) in &blocks {
            if block {
                let mx = rmax[lo..hi].iter().fold(0.0f64, |x, y| x.max(*y));
                rmax[lo..hi].iter_mut().for_each(|x| *x = mx);
            }
        }
        let dr: Vec<f64> = rmax
            .iter()
            .zip(&row)
            .map(|(x, cur)| if *x > 0.0 { (1.0 / x.sqrt()).clamp(1e-4 / cur, 1e4 / cur) } else { 1.0 })
            .collect();
        let dc: Vec<f64> = cmax
            .iter()
            .zip(&col)
            .map(|(x, cur)| if *x > 0.0 { (1.0 / x.sqrt()).clamp(1e-4 / cur, 1e4 / cur) } else { 1.0 })
            .collect();
        for r in 0..m {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                a.vals[k] *= dr[r] * dc[a.col_idx[k]];
            }
            row[r] *= dr[r];
        }
        for (c, d) in col.iter_mut().zip(&dc) {
            *c *= d;
        }
    }
    let mut b: Vec<f64> = problem.b.iter().zip(&row).map(|(b, d)| b * d).collect();
    let mut c: Vec<f64> = problem.c.iter().zip(&col).map(|(c, e)| c * e).collect();
    let b_scale = 1.0 / inf_norm(&b).max(1.0);
    let c_scale = 1.0 / inf_norm(&c).max(1.0);
    b.iter_mut().for_each(|x| *x *= b_scale);
    c.iter_mut().for_each(|x| *x *= c_scale);
    (a, b, c, Scaling { row, col, b_scale, c_scale })
}

fn factorize(a: &Csr, rho: f64, sigma: f64) -> Result<Llt<f64>> {
    a.gram(rho, sigma)
        .llt(Side::Lower)
        .map_err(|e| SlrError::Numerical(format!("Cholesky failed: {e:?}")))
}

struct Residuals {
    primal: f64,
    dual: f64,
    gap: f64,
    objective: f64,
    dual_objective: f64,
}

/// Solves `problem` to relative accuracy `settings.tol`.
pub fn solve_conic(problem: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution> {
    problem.validate()?;
    if !(settings.tol > 0.0) || !(settings.alpha > 0.0 && settings.alpha < 2.0) || !(settings.rho > 0.0) {
        return Err(SlrError::Parameter("solver needs tol > 0, rho > 0 and alpha in (0, 2)".into()));
    }
    let (m, n) = (problem.n_rows, problem.n_vars());
    let (a, b, c, sc) = equilibrate(problem, settings.scaling_passes);
    let mut rho = settings.rho;
    let mut llt = factorize(&a, rho, settings.sigma)?;

    let mut x = vec![0.0; n];
    let mut s = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    let mut tmp_m = vec![0.0; m];
    let mut rhs = Mat::<f64>::zeros(n, 1);
    let mut status = SolveStatus::MaxIters;
    let mut res = Residuals { primal: f64::INFINITY, dual: f64::INFINITY, gap: f64::INFINITY, objective: 0.0, dual_objective: 0.0 };
    let mut iterations = 0;
    let mut refactorizations = 0;

    // Unscaled quantities: x = E x̂ / τ, s = D⁻¹ ŝ / τ, y = D ŷ / ζ.
    let unscale = |x: &[f64], s: &[f64], y: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        (
            x.iter().zip(&sc.col).map(|(v, e)| v * e / sc.b_scale).collect(),
            s.iter().zip(&sc.row).map(|(v, d)| v / d / sc.b_scale).collect(),
            y.iter().zip(&sc.row).map(|(v, d)| v * d / sc.c_scale).collect(),
        )
    };

    for k in 0..settings.max_iters {
        iterations = k + 1;
        for i in 0..m {
            tmp_m[i] = y[i] + rho * (s[i] - b[i]);
        }
        a.mul_t(&tmp_m, &mut aty);
        for i in 0..n {
            rhs[(i, 0)] = settings.sigma * x[i] - c[i] - aty[i];
        }
        llt.solve_in_place(rhs.as_mut());
        for i in 0..n {
            x[i] = rhs[(i, 0)];
        }
        a.mul(&x, &mut ax);
        for i in 0..m {
            let h = settings.alpha * ax[i] + (1.0 - settings.alpha) * (b[i] - s[i]);
            tmp_m[i] = h;
            s[i] = b[i] - h - y[i] / rho;
        }
        project_product(&mut s, &problem.cones);
        for i in 0..m {
            y[i] += rho * (tmp_m[i] + s[i] - b[i]);
        }

        let last = k + 1 == settings.max_iters;
        if k % settings.check_every != 0 && !last {
            continue;
        }
        if x.iter().chain(&s).chain(&y).any(|v| !v.is_finite()) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        let (xu, su, yu) = unscale(&x, &s, &y);
        res = residuals(problem, &xu, &su, &yu);
        if res.primal <= settings.tol && res.dual <= settings.tol && res.gap <= settings.tol {
            status = SolveStatus::Optimal;
            break;
        }
        if inf_norm(&xu).max(inf_norm(&yu)) > 1e14 {
            status = SolveStatus::InfeasibleSuspected;
            break;
        }
        if settings.adaptive_rho && k > 0 && k % (settings.check_every * 10) == 0 && refactorizations < 50 {
            // balance residuals measured in the scaled space
            a.mul_t(&y, &mut aty);
            let rp: f64 = (0..m).map(|i| (ax[i] + s[i] - b[i]).abs()).fold(0.0, f64::max);
            let pden = inf_norm(&ax).max(inf_norm(&s)).max(inf_norm(&b)).max(1e-10);
            let rd: f64 = (0..n).map(|i| (aty[i] + c[i]).abs()).fold(0.0, f64::max);
            let dden = inf_norm(&aty).max(inf_norm(&c)).max(1e-10);
            // a stalled duality gap with balanced residuals means ρ is too small
            let ratio = ((rp / pden).max(res.gap) / (rd / dden).max(1e-300)).sqrt();
            if ratio.is_finite() && !(0.2..=5.0).contains(&ratio) {
                rho = (rho * ratio).clamp(1e-6, 1e6);
                llt = factorize(&a, rho, settings.sigma)?;
                refactorizations += 1;
            }
        }
    }
    let (xu, su, yu) = unscale(&x, &s, &y);
    if status != SolveStatus::NumericalFailure {
        res = residuals(problem, &xu, &su, &yu);
        if status == SolveStatus::MaxIters && res.primal <= settings.tol && res.dual <= settings.tol && res.gap <= settings.tol {
            status = SolveStatus::Optimal;
        }
    }
    Ok(ConicSolution {
        x: xu,
        s: su,
        y: yu,
        status,
        primal_residual: res.primal,
        dual_residual: res.dual,
        objective_gap: res.gap,
        objective: res.objective,
        dual_objective: res.dual_objective,
        iterations,
    })
}

fn residuals(problem: &ConicProblem, x: &[f64], s: &[f64], y: &[f64]) -> Residuals {
    let (m, n) = (problem.n_rows, problem.n_vars());
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    for &(r, c, v) in &problem.a {
        ax[r] += v * x[c];
        aty[c] += v * y[r];
    }
    let rp = (0..m).map(|i| (ax[i] + s[i] - problem.b[i]).abs()).fold(0.0, f64::max);
    let rd = (0..n).map(|i| (aty[i] + problem.c[i]).abs()).fold(0.0, f64::max);
    let pobj = dot(&problem.c, x);
    let dobj = -dot(&problem.b, y);
    Residuals {
        primal: rp / (1.0 + inf_norm(&ax).max(inf_norm(s)).max(inf_norm(&problem.b))),
        dual: rd / (1.0 + inf_norm(&aty).max(inf_norm(&problem.c))),
        gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        objective: pobj + problem.objective_offset,
        dual_objective: dobj + problem.objective_offset,
    }
}

/// Affine expression `constant + Σ coef·x[var]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AffExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffExpr {
    pub fn constant(v: f64) -> Self {
        AffExpr { terms: Vec::new(), constant: v }
    }

    pub fn var(v: usize) -> Self {
        AffExpr { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn term(v: usize, coef: f64) -> Self {
        AffExpr { terms: vec![(v, coef)], constant: 0.0 }
    }

    pub fn add_term(mut self, v: usize, coef: f64) -> Self {
        self.terms.push((v, coef));
        self
    }

    pub fn add_expr(mut self, other: &AffExpr, coef: f64) -> Self {
        self.terms.extend(other.terms.iter().map(|(v, c)| (*v, c * coef)));
        self.constant += coef * other.constant;
        self
    }

    pub fn add_constant(mut self, v: f64) -> Self {
        self.constant += v;
        self
    }

    pub fn scaled(mut self, coef: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 *= coef);
        self.constant *= coef;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(v, c)| c * x[*v]).sum::<f64>()
    }
}

/// Incremental construction of a [`ConicProblem`] from affine expressions
/// constrained to lie in cones.
#[derive(Clone, Debug, Default)]
pub struct ModelBuilder {
    c: Vec<f64>,
    offset: f64,
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    cones: Vec<Cone>,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self) -> usize {
        self.c.push(0.0);
        self.c.len() - 1
    }

    pub fn add_vars(&mut self, k: usize) -> Vec<usize> {
        (0..k).map(|_| self.add_var()).collect()
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn add_cost(&mut self, var: usize, coef: f64) {
        self.c[var] += coef;
    }

    pub fn add_cost_expr(&mut self, e: &AffExpr, coef: f64) {
        for &(v, c) in &e.terms {
            self.c[v] += coef * c;
        }
        self.offset += coef * e.constant;
    }

    pub fn add_offset(&mut self, v: f64) {
        self.offset += v;
    }

    /// Requires the stacked expressions to lie in `cone`.
    pub fn add_constraint(&mut self, cone: Cone, exprs: &[AffExpr]) {
        assert_eq!(cone.dim(), exprs.len(), "cone dimension and expression count differ");
        for e in exprs {
            let row = self.b.len();
            for &(v, c) in &e.terms {
                if c != 0.0 {
                    self.a.push((row, v, -c));
                }
            }
            self.b.push(e.constant);
        }
        self.cones.push(cone);
    }

    /// `expr ≥ 0` for each expression.
    pub fn add_nonneg(&mut self, exprs: &[AffExpr]) {
        if !exprs.is_empty() {
            self.add_constraint(Cone::Nonneg(exprs.len()), exprs);
        }
    }

    pub fn add_equal(&mut self, exprs: &[AffExpr]) {
        if !exprs.is_empty() {
            self.add_constraint(Cone::Zero(exprs.len()), exprs);
        }
    }

    /// `2·u·v ≥ ‖w‖²`, `u, v ≥ 0`.
    pub fn add_rotated_soc(&mut self, u: AffExpr, v: AffExpr, w: Vec<AffExpr>) {
        let mut exprs = Vec::with_capacity(w.len() + 2);
        exprs.push(u);
        exprs.push(v);
        exprs.extend(w);
        self.add_constraint(Cone::RotatedSoc(exprs.len()), &exprs);
    }

    /// Symmetric matrix whose `(i, j)` entry (`i ≥ j`) is `entry(i, j)` is PSD.
    pub fn add_psd(&mut self, side: usize, mut entry: impl FnMut(usize, usize) -> AffExpr) {
        let mut exprs = Vec::with_capacity(side * (side + 1) / 2);
        for j in 0..side {
            for i in j..side {
                let e = entry(i, j);
                exprs.push(if i == j { e } else { e.scaled(SQRT2) });
            }
        }
        self.add_constraint(Cone::Psd(side), &exprs);
    }

    pub fn build(self) -> ConicProblem {
        ConicProblem {
            n_rows: self.b.len(),
            c: self.c,
            objective_offset: self.offset,
            a: self.a,
            b: self.b,
            cones: self.cones,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solve(p: &ConicProblem) -> ConicSolution {
        solve_conic(p, &SolverSettings::default()).unwrap()
    }

    #[test]
    fn svec_round_trip() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 5.0], vec![3.0, 5.0, 6.0]]).unwrap();
        let v = svec(&m);
        assert_eq!(v.len(), 6);
        assert!((v[1] - 2.0 * SQRT2).abs() < 1e-15);
        assert_eq!(smat(&v, 3), m);
        // svec preserves the Frobenius inner product
        assert!((dot(&v, &v) - m.frobenius_norm_sq()).abs() < 1e-12);
        let mut k = 0;
        for j in 0..3 {
            for i in j..3 {
                assert_eq!(svec_index(3, i, j), k);
                assert_eq!(svec_index(3, j, i), k);
                k += 1;
            }
        }
    }

    #[test]
    fn nonneg_scalar() {
        // min x s.t. x - 1 >= 0
        let mut mb = ModelBuilder::new();
        let x = mb.add_var();
        mb.add_cost(x, 1.0);
        mb.add_nonneg(&[AffExpr::var(x).add_constant(-1.0)]);
        let sol = solve(&mb.build());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-4);
        assert!((sol.objective - 1.0).abs() <= 10.0 * 1e-5 * 2.0);
    }

    #[test]
    fn psd_trace_with_fixed_corner() {
        let mut mb = ModelBuilder::new();
        let v = mb.add_vars(3); // x11, x21, x22
        mb.add_cost(v[0], 1.0);
        mb.add_cost(v[2], 1.0);
        mb.add_equal(&[AffExpr::var(v[0]).add_constant(-1.0)]);
        mb.add_psd(2, |i, j| AffExpr::var(v[svec_index(2, i, j)]));
        let sol = solve(&mb.build());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 1.0).abs() <= 10.0 * 1e-5 * 2.0, "{}", sol.objective);
    }

    #[test]
    fn rotated_soc_scalar() {
        // min a s.t. y^2 <= a z with z = 1, y = 2, written as 2 (a/2) z >= y^2
        let mut mb = ModelBuilder::new();
        let a = mb.add_var();
        mb.add_cost(a, 1.0);
        mb.add_rotated_soc(AffExpr::term(a, 0.5), AffExpr::constant(1.0), vec![AffExpr::constant(2.0)]);
        let sol = solve(&mb.build());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 4.0).abs() <= 10.0 * 1e-5 * 5.0, "{}", sol.objective);
    }

    #[test]
    fn projection_examples() {
        let p = project_cone(&svec(&DenseMatrix::from_diag(&[1.0, -2.0])), &Cone::Psd(2));
        assert!(smat(&p, 2).sub(&DenseMatrix::from_diag(&[1.0, 0.0])).max_abs() < 1e-14);
        assert_eq!(project_cone(&[-1.0, 3.0], &Cone::Nonneg(2)), vec![0.0, 3.0]);
        assert_eq!(project_cone(&[-1.0, 3.0], &Cone::Zero(2)), vec![0.0, 0.0]);
    }

    fn in_rsoc(p: &[f64], tol: f64) -> bool {
        p[0] >= -tol && p[1] >= -tol && 2.0 * p[0] * p[1] + tol >= p[2..].iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn rotated_soc_projection_is_nearest_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let pt: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let proj = project_cone(&pt, &Cone::RotatedSoc(3));
            assert!(in_rsoc(&proj, 1e-12));
            let again = project_cone(&proj, &Cone::RotatedSoc(3));
            assert!(proj.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-12));
            let dist = |q: &[f64]| pt.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let best = dist(&proj);
            // grid over u, v >= 0 and w, keeping feasible points
            let steps = 120;
            let h = 4.0 / steps as f64;
            for iu in 0..=steps / 2 {
                for iv in 0..=steps / 2 {
                    for iw in 0..=steps {
                        let q = [iu as f64 * h, iv as f64 * h, -2.0 + iw as f64 * h];
                        if in_rsoc(&q, 0.0) {
                            assert!(dist(&q) >= best - 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn projections_idempotent_and_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cones = [Cone::Nonneg(4), Cone::RotatedSoc(5), Cone::Psd(3), Cone::Psd(4)];
        for cone in &cones {
            for _ in 0..50 {
                let a: Vec<f64> = (0..cone.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let b: Vec<f64> = (0..cone.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let pa = project_cone(&a, cone);
                let pb = project_cone(&b, cone);
                let ppa = project_cone(&pa, cone);
                let dmax = pa.iter().zip(&ppa).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(dmax < 1e-12, "{cone:?} {dmax:e} {pa:?} {ppa:?}");
                let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
                let d_out: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum();
                assert!(d_out <= d_in + 1e-12, "{cone:?}");
            }
        }
    }

    #[test]
    fn small_lp_with_known_optimum() {
        // min -x - 2y s.t. x + y <= 4, x <= 3, y <= 2, x, y >= 0  -> x = 2, y = 2, value -6
        let mut mb = ModelBuilder::new();
        let x = mb.add_var();
        let y = mb.add_var();
        mb.add_cost(x, -1.0);
        mb.add_cost(y, -2.0);
        mb.add_nonneg(&[
            AffExpr::constant(4.0).add_term(x, -1.0).add_term(y, -1.0),
            AffExpr::constant(3.0).add_term(x, -1.0),
            AffExpr::constant(2.0).add_term(y, -1.0),
            AffExpr::var(x),
            AffExpr::var(y),
        ]);
        let sol = solve(&mb.build());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective + 6.0).abs() <= 10.0 * 1e-5 * 7.0);
    }

    #[test]
    fn sdp_max_eigenvalue() {
        // max eigenvalue of A: min t s.t. tI - A ⪰ 0
        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let lmax = sym_eig(&a).unwrap().values[0];
        let mut mb = ModelBuilder::new();
        let t = mb.add_var();
        mb.add_cost(t, 1.0);
        mb.add_psd(3, |i, j| {
            let base = AffExpr::constant(-a.get(i, j));
            if i == j { base.add_term(t, 1.0) } else { base }
        });
        let sol = solve(&mb.build());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - lmax).abs() <= 10.0 * 1e-5 * (1.0 + lmax));
    }

    #[test]
    fn deterministic_iterates() {
        let mut mb = ModelBuilder::new();
        let a = mb.add_var();
        mb.add_cost(a, 1.0);
        mb.add_rotated_soc(AffExpr::term(a, 0.5), AffExpr::constant(1.0), vec![AffExpr::constant(2.0)]);
        let p = mb.build();
        let s1 = solve(&p);
        let s2 = solve(&p);
        assert_eq!(s1.x, s2.x);
        assert_eq!(s1.y, s2.y);
        assert_eq!(s1.iterations, s2.iterations);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = ConicProblem {
            c: vec![1.0],
            objective_offset: 0.0,
            n_rows: 2,
            a: vec![(0, 0, 1.0)],
            b: vec![0.0, 0.0],
            cones: vec![Cone::Nonneg(1)],
        };
        assert!(matches!(solve_conic(&p, &SolverSettings::default()), Err(SlrError::Dimension(_))));
    }

    #[test]
    fn json_dump() {
        let mut mb = ModelBuilder::new();
        let x = mb.add_var();
        mb.add_cost(x, 1.0);
        mb.add_nonneg(&[AffExpr::var(x)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        mb.build().write_json(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["cones"][0]["type"], "nonneg");
    }
}
