//! Problem data and analytic quantities of the regularized SLR objective
//! `f(X, Y) = ‖D − X − Y‖² + λ‖X‖² + μ‖Y‖²` with `rank X ≤ k0`, `‖Y‖₀ ≤ k1`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlrError};
use crate::linalg::DenseMatrix;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub d: DenseMatrix,
    pub k0: usize,
    pub k1: usize,
    pub lambda: f64,
    pub mu: f64,
}

impl ProblemInstance {
    pub fn new(d: DenseMatrix, k0: usize, k1: usize, lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda > 0.0 && mu > 0.0) || !lambda.is_finite() || !mu.is_finite() {
            return Err(SlrError::Parameter(format!("lambda and mu must be positive, got {lambda}, {mu}")));
        }
        Self::unregularized_checked(d, k0, k1, lambda, mu)
    }

    /// Like [`ProblemInstance::new`] but allows `λ = 0` or `μ = 0` (used by GoDec).
    pub fn new_allow_zero_reg(d: DenseMatrix, k0: usize, k1: usize, lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda >= 0.0 && mu >= 0.0) || !lambda.is_finite() || !mu.is_finite() {
            return Err(SlrError::Parameter(format!("lambda and mu must be nonnegative, got {lambda}, {mu}")));
        }
        Self::unregularized_checked(d, k0, k1, lambda, mu)
    }

    fn unregularized_checked(d: DenseMatrix, k0: usize, k1: usize, lambda: f64, mu: f64) -> Result<Self> {
        if !d.is_square() {
            return Err(SlrError::Dimension(format!("D must be square, got {}x{}", d.rows(), d.cols())));
        }
        let n = d.rows();
        if n == 0 {
            return Err(SlrError::Dimension("D is empty".into()));
        }
        if k0 < 1 || k0 > n {
            return Err(SlrError::Parameter(format!("k0 = {k0} outside 1..={n}")));
        }
        if k1 > n * n {
            return Err(SlrError::Parameter(format!("k1 = {k1} exceeds n^2 = {}", n * n)));
        }
        Ok(ProblemInstance { d, k0, k1, lambda, mu })
    }

    pub fn n(&self) -> usize {
        self.d.rows()
    }

    pub fn objective(&self, x: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
        objective(self, x, y)
    }
}

pub fn objective(inst: &ProblemInstance, x: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    inst.d.ensure_same_shape(x, "X")?;
    inst.d.ensure_same_shape(y, "Y")?;
    Ok(objective_unchecked(&inst.d, x, y, inst.lambda, inst.mu))
}

pub(crate) fn objective_unchecked(d: &DenseMatrix, x: &DenseMatrix, y: &DenseMatrix, lambda: f64, mu: f64) -> f64 {
    let mut fit = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for ((dv, xv), yv) in d.as_slice().iter().zip(x.as_slice()).zip(y.as_slice()) {
        let r = dv - xv - yv;
        fit += r * r;
        xx += xv * xv;
        yy += yv * yv;
    }
    fit + lambda * xx + mu * yy
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlrSolution {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    pub objective: f64,
    pub rank_of_x: usize,
    pub nnz_of_y: usize,
    pub feasible: bool,
}

/// Relative cutoff for counting the rank of a returned `X`.
pub const RANK_TOL: f64 = 1e-9;

impl SlrSolution {
    /// Evaluates objective, rank and sparsity of `(X, Y)` for `inst`.
    pub fn evaluate(inst: &ProblemInstance, x: DenseMatrix, y: DenseMatrix) -> Result<Self> {
        let rank = x.numerical_rank(RANK_TOL);
        Self::with_rank(inst, x, y, rank)
    }

    /// Same as [`SlrSolution::evaluate`] when the rank of `X` is already known.
    pub fn with_rank(inst: &ProblemInstance, x: DenseMatrix, y: DenseMatrix, rank_of_x: usize) -> Result<Self> {
        let objective = objective(inst, &x, &y)?;
        let nnz_of_y = y.nnz();
        let feasible = rank_of_x <= inst.k0 && nnz_of_y <= inst.k1;
        Ok(SlrSolution { x, y, objective, rank_of_x, nnz_of_y, feasible })
    }

    pub fn zeros(inst: &ProblemInstance) -> Self {
        let n = inst.n();
        SlrSolution {
            x: DenseMatrix::zeros(n, n),
            y: DenseMatrix::zeros(n, n),
            objective: inst.d.frobenius_norm_sq(),
            rank_of_x: 0,
            nnz_of_y: 0,
            feasible: true,
        }
    }
}

/// Strong convexity `m`, smoothness `L` and condition number `κ` of `f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityConstants {
    pub m: f64,
    pub l: f64,
    pub kappa: f64,
}

pub fn convexity_constants(lambda: f64, mu: f64) -> Result<ConvexityConstants> {
    if !(lambda > 0.0 && mu > 0.0) {
        return Err(SlrError::Parameter(format!("lambda and mu must be positive, got {lambda}, {mu}")));
    }
    let m = 2.0 * lambda.min(mu);
    let l = 2.0 * lambda.max(mu) + 6.0;
    Ok(ConvexityConstants { m, l, kappa: l / m })
}

/// Perturbations of `D` attaining the worst case of the robust fit.
#[derive(Clone, Debug)]
pub struct Perturbations {
    pub delta1: DenseMatrix,
    pub delta2: DenseMatrix,
    /// Residual `D − X − Y` is zero, so every direction is worst case; zeros are returned.
    pub degenerate: bool,
}

pub fn worst_case_perturbations(inst: &ProblemInstance, x: &DenseMatrix, y: &DenseMatrix) -> Result<Perturbations> {
    inst.d.ensure_same_shape(x, "X")?;
    inst.d.ensure_same_shape(y, "Y")?;
    let residual = inst.d.sub(x).sub(y);
    let rnorm = residual.frobenius_norm();
    let n = inst.n();
    if rnorm == 0.0 {
        return Ok(Perturbations {
            delta1: DenseMatrix::zeros(n, n),
            delta2: DenseMatrix::zeros(n, n),
            degenerate: true,
        });
    }
    let dir = residual.scale(1.0 / rnorm);
    Ok(Perturbations {
        delta1: dir.scale(inst.lambda * x.frobenius_norm()),
        delta2: dir.scale(inst.mu * y.frobenius_norm()),
        degenerate: false,
    })
}

/// Minimum of `f` without rank or sparsity constraints.
pub fn unconstrained_min_value(inst: &ProblemInstance) -> f64 {
    let (l, m) = (inst.lambda, inst.mu);
    m * l / (m + l + m * l) * inst.d.frobenius_norm_sq()
}

/// Objective after minimizing out `Y` over the support `{Z = 1}`.
pub fn matrix_completion_objective(inst: &ProblemInstance, x: &DenseMatrix, z: &DenseMatrix) -> Result<f64> {
    inst.d.ensure_same_shape(x, "X")?;
    inst.d.ensure_same_shape(z, "Z")?;
    if let Some(v) = z.as_slice().iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(SlrError::Parameter(format!("pattern entries must be 0 or 1, found {v}")));
    }
    let shrink = inst.mu / (1.0 + inst.mu);
    let mut fit = 0.0;
    for ((dv, xv), zv) in inst.d.as_slice().iter().zip(x.as_slice()).zip(z.as_slice()) {
        let r = (dv - xv) * (dv - xv);
        fit += if *zv == 0.0 { r } else { shrink * r };
    }
    Ok(inst.lambda * x.frobenius_norm_sq() + fit)
}

/// `min_{z ∈ (0,1]} μy²/z + ρz`, with value 0 at `y = 0`.
///
/// Equals `2√(μρ)|y|` when `|y| ≤ √(ρ/μ)` and `μy² + ρ` otherwise.
pub fn reverse_huber_penalty(y: f64, mu: f64, rho: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    let z = ((mu / rho).sqrt() * y.abs()).min(1.0);
    mu * y * y / z + rho * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal))
    }

    fn inst(d: DenseMatrix, lambda: f64, mu: f64) -> ProblemInstance {
        let n = d.rows();
        ProblemInstance::new(d, n, n * n, lambda, mu).unwrap()
    }

    #[test]
    fn instance_validation() {
        let d = DenseMatrix::identity(2);
        assert!(ProblemInstance::new(d.clone(), 1, 0, 0.0, 1.0).is_err());
        assert!(ProblemInstance::new(d.clone(), 0, 0, 1.0, 1.0).is_err());
        assert!(ProblemInstance::new(d.clone(), 3, 0, 1.0, 1.0).is_err());
        assert!(ProblemInstance::new(d.clone(), 1, 5, 1.0, 1.0).is_err());
        assert!(ProblemInstance::new(DenseMatrix::zeros(2, 3), 1, 0, 1.0, 1.0).is_err());
        assert!(ProblemInstance::new_allow_zero_reg(d, 1, 0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn objective_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = gaussian(3, &mut rng);
        let p = inst(d.clone(), 1.0, 0.7);
        let z = DenseMatrix::zeros(3, 3);
        assert!((objective(&p, &z, &z).unwrap() - d.frobenius_norm_sq()).abs() < 1e-12);
        assert!((objective(&p, &d, &z).unwrap() - d.frobenius_norm_sq()).abs() < 1e-12);

        let x = gaussian(3, &mut rng);
        let y = gaussian(3, &mut rng);
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                oracle += (d[(i, j)] - x[(i, j)] - y[(i, j)]).powi(2);
                oracle += 1.0 * x[(i, j)].powi(2);
                oracle += 0.7 * y[(i, j)].powi(2);
            }
        }
        assert!((objective(&p, &x, &y).unwrap() - oracle).abs() < 1e-12);
        assert!(objective(&p, &DenseMatrix::zeros(2, 2), &y).is_err());
    }

    #[test]
    fn convexity_constant_examples() {
        let c = convexity_constants(1.0, 1.0).unwrap();
        assert_eq!((c.m, c.l, c.kappa), (2.0, 8.0, 4.0));
        let c = convexity_constants(1.0, 2.0).unwrap();
        assert_eq!((c.m, c.l, c.kappa), (2.0, 10.0, 5.0));
        let c = convexity_constants(3.0, 3.0).unwrap();
        assert_eq!((c.m, c.l, c.kappa), (6.0, 12.0, 2.0));
        assert!(convexity_constants(0.0, 1.0).is_err());
    }

    #[test]
    fn perturbation_examples() {
        let d = DenseMatrix::identity(2).scale(2.0);
        let p = inst(d.clone(), 1.0, 1.0);
        let z = DenseMatrix::zeros(2, 2);
        let w = worst_case_perturbations(&p, &z, &z).unwrap();
        assert_eq!(w.delta1.max_abs(), 0.0);
        assert_eq!(w.delta2.max_abs(), 0.0);

        let x = DenseMatrix::identity(2);
        let w = worst_case_perturbations(&p, &x, &z).unwrap();
        assert!(w.delta1.sub(&DenseMatrix::identity(2)).max_abs() < 1e-15);
        let perturbed = d.add(&w.delta1).add(&w.delta2).sub(&x).frobenius_norm();
        assert!((perturbed - 2.0 * 2f64.sqrt()).abs() < 1e-12);

        let w = worst_case_perturbations(&p, &d, &z).unwrap();
        assert!(w.degenerate);
    }

    #[test]
    fn unconstrained_minimum_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = gaussian(3, &mut rng);
        let p = inst(d.clone(), 1.0, 1.0);
        assert!((unconstrained_min_value(&p) - d.frobenius_norm_sq() / 3.0).abs() < 1e-12);
        assert_eq!(unconstrained_min_value(&inst(DenseMatrix::zeros(2, 2), 1.0, 1.0)), 0.0);
        let d6 = DenseMatrix::from_diag(&[1.0, 1.0, 2.0]);
        assert!((unconstrained_min_value(&inst(d6, 2.0, 1.0)) - 2.4).abs() < 1e-12);
    }

    #[test]
    fn completion_objective_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = gaussian(3, &mut rng);
        let p = inst(d.clone(), 0.4, 0.9);
        let x = gaussian(3, &mut rng);
        let zeros = DenseMatrix::zeros(3, 3);
        let ones = DenseMatrix::from_fn(3, 3, |_, _| 1.0);
        let v = matrix_completion_objective(&p, &x, &zeros).unwrap();
        assert!((v - (0.4 * x.frobenius_norm_sq() + d.sub(&x).frobenius_norm_sq())).abs() < 1e-12);
        let v = matrix_completion_objective(&p, &zeros, &ones).unwrap();
        assert!((v - 0.9 / 1.9 * d.frobenius_norm_sq()).abs() < 1e-12);
        let bad = DenseMatrix::from_fn(3, 3, |_, _| 0.5);
        assert!(matrix_completion_objective(&p, &x, &bad).is_err());
    }

    #[test]
    fn completion_objective_equals_inner_minimum_for_every_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = gaussian(3, &mut rng);
        let p = inst(d.clone(), 0.3, 1.7);
        let x = gaussian(3, &mut rng);
        for mask in 0u32..(1 << 9) {
            let z = DenseMatrix::from_fn(3, 3, |i, j| ((mask >> (3 * i + j)) & 1) as f64);
            let y = DenseMatrix::from_fn(3, 3, |i, j| z[(i, j)] * (d[(i, j)] - x[(i, j)]) / (1.0 + p.mu));
            let inner = objective(&p, &x, &y).unwrap();
            let reduced = matrix_completion_objective(&p, &x, &z).unwrap();
            assert!((inner - reduced).abs() < 1e-10, "mask {mask}");
            // the closed-form Y is the minimizer: nudging a kept entry only increases f
            for idx in 0..9 {
                if z.as_slice()[idx] == 1.0 {
                    let mut y2 = y.clone();
                    y2.as_mut_slice()[idx] += 1e-3;
                    assert!(objective(&p, &x, &y2).unwrap() > inner);
                }
            }
        }
    }

    fn grid_penalty(y: f64, mu: f64, rho: f64, step: f64) -> f64 {
        let steps = (1.0 / step).round() as usize;
        (1..=steps)
            .map(|i| {
                let z = i as f64 * step;
                mu * y * y / z + rho * z
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn reverse_huber_examples() {
        assert_eq!(reverse_huber_penalty(0.0, 1.0, 1.0), 0.0);
        assert!((reverse_huber_penalty(2.0, 1.0, 1.0) - 5.0).abs() < 1e-12);
        assert!((grid_penalty(2.0, 1.0, 1.0, 1e-6) - 5.0).abs() < 1e-9);
        assert!((reverse_huber_penalty(0.5, 1.0, 1.0) - 1.0).abs() < 1e-12);
        assert!((grid_penalty(0.5, 1.0, 1.0, 1e-6) - 1.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn midpoint_strong_convexity_and_smoothness(seed in any::<u64>(), lambda in 0.05f64..5.0, mu in 0.05f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            let d = gaussian(n, &mut rng);
            let p = inst(d, lambda, mu);
            let (x1, y1, x2, y2) = (gaussian(n, &mut rng), gaussian(n, &mut rng), gaussian(n, &mut rng), gaussian(n, &mut rng));
            let xm = x1.add(&x2).scale(0.5);
            let ym = y1.add(&y2).scale(0.5);
            let f1 = objective(&p, &x1, &y1).unwrap();
            let f2 = objective(&p, &x2, &y2).unwrap();
            let fm = objective(&p, &xm, &ym).unwrap();
            let dist = x1.sub(&x2).frobenius_norm_sq() + y1.sub(&y2).frobenius_norm_sq();
            let c = convexity_constants(lambda, mu).unwrap();
            let slack = 1e-9 * (1.0 + f1.abs() + f2.abs());
            prop_assert!(fm <= 0.5 * f1 + 0.5 * f2 - c.m / 8.0 * dist + slack);
            prop_assert!(c.l / 8.0 * dist - (0.5 * f1 + 0.5 * f2 - fm) >= -slack);
        }

        #[test]
        fn worst_case_identity(seed in any::<u64>(), lambda in 0.01f64..5.0, mu in 0.01f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = gaussian(4, &mut rng);
            let x = gaussian(4, &mut rng);
            let y = gaussian(4, &mut rng);
            let p = inst(d.clone(), lambda, mu);
            let w = worst_case_perturbations(&p, &x, &y).unwrap();
            prop_assert!((w.delta1.frobenius_norm() - lambda * x.frobenius_norm()).abs() < 1e-10);
            prop_assert!((w.delta2.frobenius_norm() - mu * y.frobenius_norm()).abs() < 1e-10);
            let lhs = d.add(&w.delta1).add(&w.delta2).sub(&x).sub(&y).frobenius_norm();
            let rhs = d.sub(&x).sub(&y).frobenius_norm() + lambda * x.frobenius_norm() + mu * y.frobenius_norm();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn reverse_huber_matches_coarse_grid(y in -3.0f64..3.0, mu in 0.1f64..3.0, rho in 0.1f64..3.0) {
            let exact = reverse_huber_penalty(y, mu, rho);
            let grid = grid_penalty(y, mu, rho, 1e-4);
            prop_assert!(exact <= grid + 1e-12);
            prop_assert!(grid - exact < 1e-3);
        }
    }
}
