//! Alternating minimization over `(X, Y)` with closed-form subproblems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlrError};
use crate::linalg::{randomized_svd, select_support, singular_values, truncated_svd, Cell, CellState, DenseMatrix};
use crate::problem::{objective_unchecked, ProblemInstance, SlrSolution, RANK_TOL};

/// Forced-zero (`I0`) and forced-nonzero (`I1`) entries of `Y`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityPattern {
    n: usize,
    states: Vec<CellState>,
    n_zero: usize,
    n_one: usize,
}

impl SparsityPattern {
    pub fn new(n: usize) -> Self {
        SparsityPattern { n, states: vec![CellState::Free; n * n], n_zero: 0, n_one: 0 }
    }

    pub fn from_sets(n: usize, i0: &[Cell], i1: &[Cell]) -> Result<Self> {
        let mut p = Self::new(n);
        for &c in i0 {
            p.fix_zero(c)?;
        }
        for &c in i1 {
            p.fix_one(c)?;
        }
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn states(&self) -> &[CellState] {
        &self.states
    }

    pub fn state(&self, (i, j): Cell) -> CellState {
        self.states[i * self.n + j]
    }

    fn set(&mut self, (i, j): Cell, to: CellState) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(SlrError::Dimension(format!("cell ({i},{j}) outside {0}x{0}", self.n)));
        }
        let idx = i * self.n + j;
        match (self.states[idx], to) {
            (CellState::Free, CellState::Zero) => self.n_zero += 1,
            (CellState::Free, CellState::Keep) => self.n_one += 1,
            (current, wanted) if current == wanted => return Ok(()),
            _ => {
                return Err(SlrError::Contract(format!("cell ({i},{j}) is already fixed to the other value")));
            }
        }
        self.states[idx] = to;
        Ok(())
    }

    pub fn fix_zero(&mut self, c: Cell) -> Result<()> {
        self.set(c, CellState::Zero)
    }

    pub fn fix_one(&mut self, c: Cell) -> Result<()> {
        self.set(c, CellState::Keep)
    }

    pub fn zero_count(&self) -> usize {
        self.n_zero
    }

    pub fn one_count(&self) -> usize {
        self.n_one
    }

    pub fn free_count(&self) -> usize {
        self.n * self.n - self.n_zero - self.n_one
    }

    fn cells_in(&self, s: CellState) -> Vec<Cell> {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, st)| **st == s)
            .map(|(idx, _)| (idx / self.n, idx % self.n))
            .collect()
    }

    pub fn zero_cells(&self) -> Vec<Cell> {
        self.cells_in(CellState::Zero)
    }

    pub fn one_cells(&self) -> Vec<Cell> {
        self.cells_in(CellState::Keep)
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        self.cells_in(CellState::Free)
    }

    pub fn validate(&self, k1: usize) -> Result<()> {
        if self.n_one > k1 {
            return Err(SlrError::InfeasiblePattern(format!("|I1| = {} exceeds k1 = {k1}", self.n_one)));
        }
        if self.n_zero + k1 > self.n * self.n {
            return Err(SlrError::InfeasiblePattern(format!(
                "|I0| = {} exceeds n^2 - k1 = {}",
                self.n_zero,
                self.n * self.n - k1
            )));
        }
        Ok(())
    }

    /// A pattern is complete when the support of `Y` is determined:
    /// `|I0| = n² − k1` or `|I1| = k1`.
    pub fn is_complete(&self, k1: usize) -> bool {
        self.n_zero + k1 == self.n * self.n || self.n_one == k1
    }

    /// Support mask (row-major) of a complete pattern.
    pub fn complete_support(&self, k1: usize) -> Option<Vec<bool>> {
        if self.n_one == k1 {
            Some(self.states.iter().map(|s| *s == CellState::Keep).collect())
        } else if self.n_zero + k1 == self.n * self.n {
            Some(self.states.iter().map(|s| *s != CellState::Zero).collect())
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SvdMode {
    Exact,
    /// Randomized SVD on every iteration, exact SVD on the final one.
    Randomized { seed: u64 },
}

pub const RANDOMIZED_OVERSAMPLING: usize = 10;
pub const RANDOMIZED_POWER_ITERS: usize = 2;

/// `X* = trunc_{k0}(D̄) / (1 + λ)`.
pub fn solve_lowrank_subproblem(dbar: &DenseMatrix, k0: usize, lambda: f64, mode: SvdMode) -> Result<DenseMatrix> {
    lowrank_step(dbar, k0, lambda, mode, 0).map(|(x, _)| x)
}

fn lowrank_step(dbar: &DenseMatrix, k0: usize, lambda: f64, mode: SvdMode, iter: u64) -> Result<(DenseMatrix, usize)> {
    if !(lambda >= 0.0) {
        return Err(SlrError::Parameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let min_dim = dbar.rows().min(dbar.cols());
    if k0 == 0 || k0 > min_dim {
        return Err(SlrError::Parameter(format!("k0 = {k0} outside 1..={min_dim}")));
    }
    if dbar.max_abs() == 0.0 {
        return Ok((DenseMatrix::zeros(dbar.rows(), dbar.cols()), 0));
    }
    let f = match mode {
        SvdMode::Randomized { seed } if k0 < min_dim => {
            let p = RANDOMIZED_OVERSAMPLING.min(min_dim - k0);
            randomized_svd(dbar, k0, p, RANDOMIZED_POWER_ITERS, seed.wrapping_add(iter))?
        }
        _ => truncated_svd(dbar, k0)?,
    };
    let cutoff = RANK_TOL * f.singular_values[0].max(1.0);
    let rank = f.singular_values.iter().filter(|s| **s > cutoff).count();
    let shrink = 1.0 / (1.0 + lambda);
    Ok((f.reconstruct_with(|s| s * shrink), rank))
}

/// `Y* = S* ∘ D̃ / (1 + μ)` with `S*` the best admissible support.
pub fn solve_sparse_subproblem(
    dtilde: &DenseMatrix,
    k1: usize,
    mu: f64,
    pattern: Option<&SparsityPattern>,
) -> Result<DenseMatrix> {
    if !(mu >= 0.0) {
        return Err(SlrError::Parameter(format!("mu must be nonnegative, got {mu}")));
    }
    if !dtilde.is_square() {
        return Err(SlrError::Dimension("sparse subproblem expects a square matrix".into()));
    }
    if k1 > dtilde.rows() * dtilde.cols() {
        return Err(SlrError::Parameter(format!("k1 = {k1} exceeds the number of entries")));
    }
    if let Some(p) = pattern {
        if p.n() != dtilde.rows() {
            return Err(SlrError::Dimension(format!("pattern is {0}x{0}, matrix is {1}x{1}", p.n(), dtilde.rows())));
        }
        p.validate(k1)?;
    }
    let mask = select_support(dtilde.as_slice(), k1, pattern.map(|p| p.states()))?;
    let shrink = 1.0 / (1.0 + mu);
    let data = dtilde
        .as_slice()
        .iter()
        .zip(&mask)
        .map(|(v, keep)| if *keep { v * shrink } else { 0.0 })
        .collect();
    DenseMatrix::from_vec(dtilde.rows(), dtilde.cols(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergedReason {
    RelativeGap,
    ZeroObjective,
    MaxIters,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmTrace {
    /// `f_0, f_1, ..., f_T`.
    pub objective_values: Vec<f64>,
    pub iterations: usize,
    pub converged_reason: ConvergedReason,
}

#[derive(Clone, Debug)]
pub struct AmOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Starting point; zeros when absent.
    pub init: Option<(DenseMatrix, DenseMatrix)>,
    pub pattern: Option<SparsityPattern>,
    pub svd_mode: SvdMode,
}

impl Default for AmOptions {
    fn default() -> Self {
        AmOptions { epsilon: 1e-3, max_iters: 1000, init: None, pattern: None, svd_mode: SvdMode::Exact }
    }
}

impl AmOptions {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_pattern(mut self, pattern: SparsityPattern) -> Self {
        self.pattern = Some(pattern);
        self
    }

    pub fn with_init(mut self, x: DenseMatrix, y: DenseMatrix) -> Self {
        self.init = Some((x, y));
        self
    }

    pub fn with_svd_mode(mut self, mode: SvdMode) -> Self {
        self.svd_mode = mode;
        self
    }
}

/// One sweep: sparse update from `x_prev`, then low-rank update from the new `Y`.
///
/// Returns `(Y_t, X_t, rank(X_t))`.
pub fn alternating_step(
    inst: &ProblemInstance,
    x_prev: &DenseMatrix,
    pattern: Option<&SparsityPattern>,
    mode: SvdMode,
    iter: u64,
) -> Result<(DenseMatrix, DenseMatrix, usize)> {
    let y = solve_sparse_subproblem(&inst.d.sub(x_prev), inst.k1, inst.mu, pattern)?;
    let (x, rank) = lowrank_step(&inst.d.sub(&y), inst.k0, inst.lambda, mode, iter)?;
    Ok((y, x, rank))
}

pub fn alternating_minimization(inst: &ProblemInstance, opts: &AmOptions) -> Result<(SlrSolution, AmTrace)> {
    if !(opts.epsilon > 0.0) {
        return Err(SlrError::Parameter(format!("epsilon must be positive, got {}", opts.epsilon)));
    }
    let n = inst.n();
    let pattern = opts.pattern.as_ref();
    if let Some(p) = pattern {
        if p.n() != n {
            return Err(SlrError::Dimension(format!("pattern is {0}x{0}, D is {1}x{1}", p.n(), n)));
        }
        p.validate(inst.k1)?;
    }
    let (mut x, mut y) = match &opts.init {
        Some((x0, y0)) => {
            inst.d.ensure_same_shape(x0, "initial X")?;
            inst.d.ensure_same_shape(y0, "initial Y")?;
            (x0.clone(), y0.clone())
        }
        None => (DenseMatrix::zeros(n, n), DenseMatrix::zeros(n, n)),
    };
    let mut rank = if opts.init.is_some() { x.numerical_rank(RANK_TOL) } else { 0 };
    let obj = |x: &DenseMatrix, y: &DenseMatrix| objective_unchecked(&inst.d, x, y, inst.lambda, inst.mu);
    let mut f_prev = obj(&x, &y);
    let mut values = vec![f_prev];
    let mut reason = ConvergedReason::MaxIters;
    let mut iterations = 0;

    if f_prev == 0.0 {
        reason = ConvergedReason::ZeroObjective;
    } else {
        while iterations < opts.max_iters {
            iterations += 1;
            let (y_new, mut x_new, mut rank_new) =
                alternating_step(inst, &x, pattern, opts.svd_mode, iterations as u64)?;
            let mut f = obj(&x_new, &y_new);
            if matches!(opts.svd_mode, SvdMode::Randomized { .. }) && f > obj(&x, &y_new) {
                // approximate factorization lost ground; redo this step exactly
                let (xe, re) = lowrank_step(&inst.d.sub(&y_new), inst.k0, inst.lambda, SvdMode::Exact, 0)?;
                x_new = xe;
                rank_new = re;
                f = obj(&x_new, &y_new);
            }
            if f > f_prev {
                // only reachable through rounding; keep the better iterate
                values.push(f_prev);
                reason = ConvergedReason::RelativeGap;
                break;
            }
            x = x_new;
            y = y_new;
            rank = rank_new;
            values.push(f);
            if f <= 0.0 {
                reason = ConvergedReason::ZeroObjective;
                break;
            }
            let gap = (f_prev - f) / f;
            f_prev = f;
            if gap < opts.epsilon {
                reason = ConvergedReason::RelativeGap;
                break;
            }
        }
        if matches!(opts.svd_mode, SvdMode::Randomized { .. }) && iterations > 0 {
            let (xe, re) = lowrank_step(&inst.d.sub(&y), inst.k0, inst.lambda, SvdMode::Exact, 0)?;
            let fe = obj(&xe, &y);
            let last = values.last_mut().expect("trace has f0");
            if fe <= *last {
                x = xe;
                rank = re;
                *last = fe;
            }
        }
    }
    let sol = SlrSolution::with_rank(inst, x, y, rank)?;
    Ok((sol, AmTrace { objective_values: values, iterations, converged_reason: reason }))
}

/// Runs AM from the zero start plus `starts − 1` random Gaussian starts and keeps the best.
pub fn multistart_alternating_minimization(
    inst: &ProblemInstance,
    opts: &AmOptions,
    starts: usize,
    seed: u64,
) -> Result<(SlrSolution, AmTrace)> {
    let n = inst.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = inst.d.frobenius_norm() / n as f64;
    let mut best: Option<(SlrSolution, AmTrace)> = None;
    for s in 0..starts.max(1) {
        let mut o = opts.clone();
        if s > 0 {
            let x0 = DenseMatrix::from_fn(n, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
            o.init = Some((x0, DenseMatrix::zeros(n, n)));
        }
        let run = alternating_minimization(inst, &o)?;
        if best.as_ref().is_none_or(|b| run.0.objective < b.0.objective) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Real-valued upper bound on the number of AM iterations from the zero start.
pub fn iteration_bound(lambda: f64, mu: f64, epsilon: f64) -> Result<f64> {
    if !(lambda > 0.0 && mu > 0.0 && epsilon > 0.0) {
        return Err(SlrError::Parameter("iteration_bound needs positive lambda, mu, epsilon".into()));
    }
    Ok(((mu + lambda + mu * lambda) / (mu * lambda)).ln() / epsilon.ln_1p())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Certificate {
    pub certified: bool,
    /// `λ + 2μ/(1+μ) − 1`.
    pub condition1_value: f64,
    /// `σ_{k0+1}(D̃) / σ_{k0}(D̃)`; absent when `σ_{k0}(D̃) = 0`.
    pub gamma_value: Option<f64>,
    /// `condition1_value / (1 + λ)`.
    pub threshold: f64,
    pub rank_of_x: usize,
    pub degenerate: bool,
}

/// Sufficient condition for a fixed-pattern AM point to be the unique optimum
/// of the pattern-restricted problem.
pub fn fixed_pattern_certificate(
    inst: &ProblemInstance,
    pattern: &SparsityPattern,
    x_star: &DenseMatrix,
) -> Result<Certificate> {
    inst.d.ensure_same_shape(x_star, "X*")?;
    let support = pattern
        .complete_support(inst.k1)
        .ok_or_else(|| SlrError::InfeasiblePattern("certificate needs a complete pattern".into()))?;
    let (lambda, mu) = (inst.lambda, inst.mu);
    let condition1_value = lambda + 2.0 * mu / (1.0 + mu) - 1.0;
    let threshold = condition1_value / (1.0 + lambda);
    let n = inst.n();
    let mut dtilde = inst.d.clone();
    for (idx, keep) in support.iter().enumerate() {
        if *keep {
            let (dv, xv) = (inst.d.as_slice()[idx], x_star.as_slice()[idx]);
            dtilde.as_mut_slice()[idx] = dv - (dv - xv) / (1.0 + mu);
        }
    }
    let dtilde = dtilde.scale(1.0 / (1.0 + lambda));
    let sv = singular_values(&dtilde);
    let rank_of_x = x_star.numerical_rank(RANK_TOL);
    let k0 = inst.k0;
    let sk = sv[k0 - 1];
    let next = if k0 < n { sv[k0] } else { 0.0 };
    let gamma_value = if sk > 0.0 { Some(next / sk) } else { None };
    let cond1 = condition1_value > 0.0;
    let (certified, degenerate) = if rank_of_x >= k0 {
        match gamma_value {
            Some(g) => (cond1 && g < threshold, false),
            None => (false, true),
        }
    } else {
        (cond1, false)
    };
    Ok(Certificate { certified, condition1_value, gamma_value, threshold, rank_of_x, degenerate })
}
