//! Comparator methods: GoDec, stable principal component pursuit and ScaledGD.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::altmin::{alternating_minimization, solve_lowrank_subproblem, AmOptions, AmTrace, ConvergedReason, SvdMode};
use crate::error::{Result, SlrError};
use crate::linalg::{select_support, truncated_svd, DenseMatrix};
use crate::problem::{ProblemInstance, SlrSolution};

/// Cutoff used when counting rank and support of S-PCP output.
pub const SPCP_REPORT_CUTOFF: f64 = 1e-2;
const RIDGE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum BaselineMethod {
    Godec,
    Spcp {
        /// Weight `μ` in `(1/2μ)‖D − X − Y‖²`; `None` means `√(2n)`.
        mu_pen: Option<f64>,
    },
    Scaledgd {
        /// Fraction of entries kept by the residual thresholding.
        gamma_frac: f64,
        step: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub threshold: f64,
    pub max_iters: usize,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod, threshold: f64, max_iters: usize) -> Result<Self> {
        let c = BaselineConfig { method, threshold, max_iters };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0) {
            return Err(SlrError::Parameter(format!("threshold must be positive, got {}", self.threshold)));
        }
        match self.method {
            BaselineMethod::Spcp { mu_pen: Some(m) } if !(m > 0.0) => {
                Err(SlrError::Parameter(format!("S-PCP penalty must be positive, got {m}")))
            }
            BaselineMethod::Scaledgd { gamma_frac, step } if !(0.0..=1.0).contains(&gamma_frac) || !(step > 0.0) => {
                Err(SlrError::Parameter(format!("ScaledGD needs gamma in [0,1] and step > 0, got {gamma_frac}, {step}")))
            }
            _ => Ok(()),
        }
    }

    /// Runs the configured method; `k0`, `k1` are ignored by S-PCP.
    pub fn run(&self, d: &DenseMatrix, k0: usize, k1: usize) -> Result<SlrSolution> {
        self.validate()?;
        match self.method {
            BaselineMethod::Godec => godec(d, k0, k1, self.threshold, self.max_iters).map(|r| r.0),
            BaselineMethod::Spcp { mu_pen } => {
                let mu = mu_pen.unwrap_or_else(|| default_spcp_penalty(d.rows()));
                spcp(d, mu, self.threshold, self.max_iters).map(|r| r.solution)
            }
            BaselineMethod::Scaledgd { gamma_frac, step } => {
                scaled_gd(d, k0, gamma_frac, step, self.max_iters, self.threshold).map(|r| r.0)
            }
        }
    }
}

/// Rank-`k0` truncation of `D − Y` alternated with top-`k1` thresholding of `D − X`.
///
/// Starts from `X₀ = trunc_{k0}(D)`, `Y₀ = 0`; after that it is plain AM with `λ = μ = 0`.
pub fn godec(d: &DenseMatrix, k0: usize, k1: usize, epsilon: f64, max_iters: usize) -> Result<(SlrSolution, AmTrace)> {
    let inst = ProblemInstance::new_allow_zero_reg(d.clone(), k0, k1, 0.0, 0.0)?;
    let x0 = solve_lowrank_subproblem(d, k0, 0.0, SvdMode::Exact)?;
    let opts = AmOptions { epsilon, max_iters, ..AmOptions::default() }.with_init(x0, DenseMatrix::zeros(d.rows(), d.cols()));
    alternating_minimization(&inst, &opts)
}

pub fn default_spcp_penalty(n: usize) -> f64 {
    (2.0 * n as f64).sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpcpResult {
    /// `objective` holds the S-PCP objective, not the SLR one.
    pub solution: SlrSolution,
    /// Singular values of `X` above [`SPCP_REPORT_CUTOFF`].
    pub rank_count: usize,
    /// Entries of `Y` above [`SPCP_REPORT_CUTOFF`] in magnitude.
    pub sparsity_count: usize,
    pub objective_values: Vec<f64>,
    pub iterations: usize,
}

fn nuclear_norm(x: &DenseMatrix) -> f64 {
    crate::linalg::singular_values(x).iter().sum()
}

fn spcp_objective(d: &DenseMatrix, x: &DenseMatrix, y: &DenseMatrix, mu_pen: f64) -> f64 {
    let w = 1.0 / (d.rows() as f64).sqrt();
    let l1: f64 = y.as_slice().iter().map(|v| v.abs()).sum();
    nuclear_norm(x) + w * l1 + d.sub(x).sub(y).frobenius_norm_sq() / (2.0 * mu_pen)
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

// Singular-value soft-thresholding.
fn svt(a: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    let k = a.rows().min(a.cols());
    if a.max_abs() == 0.0 {
        return Ok(a.clone());
    }
    let f = truncated_svd(a, k)?;
    Ok(f.reconstruct_with(|s| (s - t).max(0.0)))
}

/// Proximal gradient on `‖X‖_* + ‖Y‖₁/√n + (1/2μ)‖D − X − Y‖²` with backtracking.
pub fn spcp(d: &DenseMatrix, mu_pen: f64, tol: f64, max_iters: usize) -> Result<SpcpResult> {
    if !(mu_pen > 0.0 && mu_pen.is_finite()) {
        return Err(SlrError::Parameter(format!("S-PCP penalty must be positive, got {mu_pen}")));
    }
    if !(tol > 0.0) {
        return Err(SlrError::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    if !d.is_square() || d.rows() == 0 {
        return Err(SlrError::Dimension(format!("D must be square and nonempty, got {}x{}", d.rows(), d.cols())));
    }
    let n = d.rows();
    let w = 1.0 / (n as f64).sqrt();
    let smooth = |x: &DenseMatrix, y: &DenseMatrix| d.sub(x).sub(y).frobenius_norm_sq() / (2.0 * mu_pen);
    let mut x = DenseMatrix::zeros(n, n);
    let mut y = DenseMatrix::zeros(n, n);
    let mut f = spcp_objective(d, &x, &y, mu_pen);
    let mut values = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < max_iters && f > 0.0 {
        iterations += 1;
        // gradient of the smooth part, identical in X and Y
        let g = d.sub(&x).sub(&y).scale(-1.0 / mu_pen);
        let g0 = smooth(&x, &y);
        let (xn, yn) = loop {
            let xn = svt(&x.sub(&g.scale(step)), step)?;
            let yn = y.sub(&g.scale(step)).map(|v| soft(v, step * w));
            let dx = xn.sub(&x);
            let dy = yn.sub(&y);
            let model = g0 + g.inner(&dx) + g.inner(&dy) + (dx.frobenius_norm_sq() + dy.frobenius_norm_sq()) / (2.0 * step);
            if smooth(&xn, &yn) <= model * (1.0 + 1e-12) + 1e-300 {
                break (xn, yn);
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(SlrError::Numerical("S-PCP backtracking collapsed".into()));
            }
        };
        let fn_ = spcp_objective(d, &xn, &yn, mu_pen);
        if !fn_.is_finite() {
            return Err(SlrError::Numerical("S-PCP diverged".into()));
        }
        if fn_ > f {
            // rounding-level increase: keep the current iterate
            break;
        }
        x = xn;
        y = yn;
        let change = (f - fn_) / fn_.max(f64::MIN_POSITIVE);
        f = fn_;
        values.push(f);
        if change < tol {
            break;
        }
    }
    let smax = crate::linalg::singular_values(&x);
    let rank_count = smax.iter().filter(|s| **s > SPCP_REPORT_CUTOFF).count();
    let sparsity_count = y.as_slice().iter().filter(|v| v.abs() > SPCP_REPORT_CUTOFF).count();
    let solution = SlrSolution {
        nnz_of_y: y.nnz(),
        rank_of_x: rank_count,
        x,
        y,
        objective: f,
        feasible: true,
    };
    Ok(SpcpResult { solution, rank_count, sparsity_count, objective_values: values, iterations })
}

fn threshold_count(n: usize, gamma_frac: f64) -> usize {
    ((gamma_frac * (n * n) as f64).ceil() as usize).min(n * n)
}

fn hard_threshold(m: &DenseMatrix, keep: usize) -> Result<DenseMatrix> {
    let mask = select_support(m.as_slice(), keep, None)?;
    let data = m.as_slice().iter().zip(&mask).map(|(v, k)| if *k { *v } else { 0.0 }).collect();
    DenseMatrix::from_vec(m.rows(), m.cols(), data)
}

// (FᵀF)⁻¹, falling back to a ridge when the Gram matrix is singular.
fn gram_inverse(f: &Mat<f64>) -> Mat<f64> {
    let k = f.ncols();
    let g = f.transpose() * f;
    let id = Mat::<f64>::identity(k, k);
    match Llt::new(g.as_ref(), Side::Lower) {
        Ok(llt) => llt.solve(&id),
        Err(_) => {
            let gr = &g + Mat::<f64>::identity(k, k) * faer::Scale(RIDGE);
            match Llt::new(gr.as_ref(), Side::Lower) {
                Ok(llt) => llt.solve(&id),
                Err(_) => Mat::<f64>::identity(k, k) * faer::Scale(1.0 / RIDGE),
            }
        }
    }
}

/// Factored gradient descent `X = UVᵀ` with preconditioners `(VᵀV)⁻¹`, `(UᵀU)⁻¹`,
/// alternated with hard thresholding of the residual to the top `⌈γn²⌉` entries.
pub fn scaled_gd(
    d: &DenseMatrix,
    k0: usize,
    gamma_frac: f64,
    step: f64,
    max_iters: usize,
    epsilon: f64,
) -> Result<(SlrSolution, AmTrace)> {
    if !(0.0..=1.0).contains(&gamma_frac) {
        return Err(SlrError::Parameter(format!("gamma fraction must lie in [0,1], got {gamma_frac}")));
    }
    if !(step > 0.0) || !(epsilon > 0.0) {
        return Err(SlrError::Parameter("step and epsilon must be positive".into()));
    }
    let keep = threshold_count(d.rows().max(1), gamma_frac);
    let inst = ProblemInstance::new_allow_zero_reg(d.clone(), k0, keep, 0.0, 0.0)?;
    let n = inst.n();
    let mut y = hard_threshold(d, keep)?;
    let init = d.sub(&y);
    let (mut u, mut v) = if init.max_abs() == 0.0 {
        (Mat::<f64>::zeros(n, k0), Mat::<f64>::zeros(n, k0))
    } else {
        let f = truncated_svd(&init, k0)?;
        let root: Vec<f64> = f.singular_values.iter().map(|s| s.sqrt()).collect();
        (
            Mat::from_fn(n, k0, |i, j| f.left_vectors.get(i, j) * root[j]),
            Mat::from_fn(n, k0, |i, j| f.right_vectors.get(i, j) * root[j]),
        )
    };
    let product = |u: &Mat<f64>, v: &Mat<f64>| DenseMatrix::from_faer((u * v.transpose()).as_ref());
    let mut x = product(&u, &v);
    let mut f_prev = d.sub(&x).sub(&y).frobenius_norm_sq();
    let mut values = vec![f_prev];
    let mut reason = ConvergedReason::MaxIters;
    let mut iterations = 0;
    if f_prev == 0.0 {
        reason = ConvergedReason::ZeroObjective;
    }
    while reason == ConvergedReason::MaxIters && iterations < max_iters {
        iterations += 1;
        y = hard_threshold(&d.sub(&x), keep)?;
        let r = x.add(&y).sub(d).to_faer();
        let pv = gram_inverse(&v);
        let pu = gram_inverse(&u);
        let un = &u - (&r * &v * &pv) * faer::Scale(step);
        let vn = &v - (r.transpose() * &u * &pu) * faer::Scale(step);
        u = un;
        v = vn;
        x = product(&u, &v);
        let f = d.sub(&x).sub(&y).frobenius_norm_sq();
        if !f.is_finite() {
            return Err(SlrError::Numerical("ScaledGD diverged".into()));
        }
        values.push(f);
        if f <= 0.0 {
            reason = ConvergedReason::ZeroObjective;
        } else if ((f_prev - f) / f).abs() < epsilon {
            reason = ConvergedReason::RelativeGap;
        }
        f_prev = f;
    }
    let sol = SlrSolution::evaluate(&inst, x, y)?;
    Ok((sol, AmTrace { objective_values: values, iterations, converged_reason: reason }))
}
