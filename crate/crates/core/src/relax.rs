//! Convex relaxations of the SLR problem written as cone programs.
//!
//! Variables of the perspective relaxation: `X`, `Y`, the fractional pattern
//! `Z ∈ [0,1]^{n×n}`, per-entry epigraphs `α` with `Y² ≤ αZ`, the relaxed
//! projection `P` (`0 ⪯ P ⪯ I`, `tr P ≤ k0`) and `Θ` with
//! `[[Θ, X], [Xᵀ, P]] ⪰ 0`.

use serde::{Deserialize, Serialize};

use crate::altmin::SparsityPattern;
use crate::conic::{solve_conic, svec_index, AffExpr, ConicProblem, ModelBuilder, SolveStatus, SolverSettings};
use crate::error::{Result, SlrError};
use crate::linalg::{CellState, DenseMatrix};
use crate::problem::ProblemInstance;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelaxationResult {
    /// Solver objective value.
    pub value: f64,
    /// `min(primal, dual) − tol·(1 + |value|)`.
    pub lower_bound: f64,
    pub z_fractional: DenseMatrix,
    pub p_fractional: DenseMatrix,
    pub x_relax: DenseMatrix,
    pub y_relax: DenseMatrix,
    pub status: SolveStatus,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RelaxationKind {
    Perspective,
    Strengthened { beta: f64, gamma: f64 },
    LeeZou { beta: f64, gamma: f64 },
}

/// Penalties replacing the cardinality constraints: `ρ₁·tr P + ρ₂·⟨E, Z⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub rho1: f64,
    pub rho2: f64,
}

#[derive(Clone, Debug)]
enum ZEntry {
    Fixed(f64),
    Var(usize),
}

impl ZEntry {
    fn expr(&self) -> AffExpr {
        match *self {
            ZEntry::Fixed(v) => AffExpr::constant(v),
            ZEntry::Var(v) => AffExpr::var(v),
        }
    }
}

/// Symmetric matrix variable stored as its lower triangle.
#[derive(Clone, Debug)]
struct SymVar {
    side: usize,
    vars: Vec<usize>,
}

impl SymVar {
    fn new(mb: &mut ModelBuilder, side: usize) -> Self {
        SymVar { side, vars: mb.add_vars(side * (side + 1) / 2) }
    }

    fn at(&self, i: usize, j: usize) -> usize {
        self.vars[svec_index(self.side, i, j)]
    }

    fn entry(&self, i: usize, j: usize) -> AffExpr {
        AffExpr::var(self.at(i, j))
    }

    fn trace_expr(&self) -> AffExpr {
        let mut e = AffExpr::default();
        for i in 0..self.side {
            e = e.add_term(self.at(i, i), 1.0);
        }
        e
    }

    fn value(&self, x: &[f64]) -> DenseMatrix {
        DenseMatrix::from_fn(self.side, self.side, |i, j| x[self.at(i, j)])
    }

    /// `0 ⪯ P ⪯ I` and, unless penalized, `tr P ≤ k0`.
    fn add_projection_hull(&self, mb: &mut ModelBuilder, k0: usize, penalty: Option<f64>) {
        mb.add_psd(self.side, |i, j| self.entry(i, j));
        mb.add_psd(self.side, |i, j| {
            let e = self.entry(i, j).scaled(-1.0);
            if i == j { e.add_constant(1.0) } else { e }
        });
        match penalty {
            None => mb.add_nonneg(&[self.trace_expr().scaled(-1.0).add_constant(k0 as f64)]),
            Some(rho1) => mb.add_cost_expr(&self.trace_expr(), rho1),
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    n: usize,
    x: Vec<usize>,
    y: Vec<Option<usize>>,
    z: Vec<ZEntry>,
    p: SymVar,
    // Lee–Zou reports V/γ as its fractional pattern
    v_over_gamma: Option<(Vec<usize>, f64)>,
}

const RESIDUAL_FACTOR: f64 = 0.1;

/// A relaxation ready to solve, with enough bookkeeping to read back `X`, `Y`, `Z`, `P`.
#[derive(Clone, Debug)]
pub struct RelaxationModel {
    pub problem: ConicProblem,
    pub kind: RelaxationKind,
    layout: Layout,
}

impl RelaxationModel {
    /// `settings.tol` is the relative accuracy promised on the bound; the residuals are driven
    /// an order of magnitude below it since objective error runs several times the residuals.
    pub fn solve(&self, settings: &SolverSettings) -> Result<RelaxationResult> {
        let inner = settings.clone().with_tol(settings.tol * RESIDUAL_FACTOR);
        let sol = solve_conic(&self.problem, &inner)?;
        if sol.status == SolveStatus::NumericalFailure {
            return Err(SlrError::Numerical("conic solver produced non-finite iterates".into()));
        }
        let l = &self.layout;
        let n = l.n;
        let x = &sol.x;
        let x_relax = DenseMatrix::from_fn(n, n, |i, j| x[l.x[i * n + j]]);
        let y_relax = DenseMatrix::from_fn(n, n, |i, j| l.y[i * n + j].map_or(0.0, |v| x[v]));
        let z_fractional = match &l.v_over_gamma {
            Some((v, gamma)) => DenseMatrix::from_fn(n, n, |i, j| (x[v[i * n + j]] / gamma).clamp(0.0, 1.0)),
            None => DenseMatrix::from_fn(n, n, |i, j| match l.z[i * n + j] {
                ZEntry::Fixed(v) => v,
                ZEntry::Var(v) => x[v].clamp(0.0, 1.0),
            }),
        };
        let value = sol.objective;
        let lower_bound = sol.objective.min(sol.dual_objective) - settings.tol * (1.0 + value.abs());
        Ok(RelaxationResult {
            value,
            lower_bound,
            z_fractional,
            p_fractional: l.p.value(x),
            x_relax,
            y_relax,
            status: sol.status,
            iterations: sol.iterations,
        })
    }
}

fn check_pattern(inst: &ProblemInstance, pattern: Option<&SparsityPattern>) -> Result<SparsityPattern> {
    let n = inst.n();
    match pattern {
        Some(p) => {
            if p.n() != n {
                return Err(SlrError::Dimension(format!("pattern is {0}x{0}, D is {1}x{1}", p.n(), n)));
            }
            p.validate(inst.k1)?;
            Ok(p.clone())
        }
        None => Ok(SparsityPattern::new(n)),
    }
}

/// Perspective relaxation, optionally restricted to a partial pattern and
/// optionally with penalties in place of the cardinality constraints.
pub fn build_perspective_relaxation(
    inst: &ProblemInstance,
    pattern: Option<&SparsityPattern>,
    penalties: Option<Penalties>,
) -> Result<RelaxationModel> {
    build_perspective_family(inst, pattern, penalties, None)
}

/// Perspective relaxation with row/column projections and the bounds
/// `‖X‖_σ ≤ β`, `|Y| ≤ γZ`.
pub fn build_strengthened_relaxation(
    inst: &ProblemInstance,
    pattern: Option<&SparsityPattern>,
    beta: f64,
    gamma: f64,
) -> Result<RelaxationModel> {
    if !(beta > 0.0 && gamma > 0.0) {
        return Err(SlrError::Parameter(format!("beta and gamma must be positive, got {beta}, {gamma}")));
    }
    build_perspective_family(inst, pattern, None, Some((beta, gamma)))
}

/// `β = ‖D‖_σ`, `γ = max |D_ij|`.
pub fn default_beta_gamma(d: &DenseMatrix) -> (f64, f64) {
    (d.spectral_norm().max(f64::MIN_POSITIVE), d.max_abs().max(f64::MIN_POSITIVE))
}

fn build_perspective_family(
    inst: &ProblemInstance,
    pattern: Option<&SparsityPattern>,
    penalties: Option<Penalties>,
    strengthen: Option<(f64, f64)>,
) -> Result<RelaxationModel> {
    if let Some(p) = penalties {
        if !(p.rho1 > 0.0 && p.rho2 > 0.0) {
            return Err(SlrError::Parameter("penalties must be positive".into()));
        }
    }
    let pattern = check_pattern(inst, pattern)?;
    let n = inst.n();
    let d = &inst.d;
    let mut mb = ModelBuilder::new();
    let x = mb.add_vars(n * n);
    let mut y = vec![None; n * n];
    let mut z = vec![ZEntry::Fixed(0.0); n * n];
    let mut alphas = Vec::new();
    let card_forces_zero = penalties.is_none() && inst.k1 == 0;
    for (idx, st) in pattern.states().iter().enumerate() {
        if card_forces_zero {
            break;
        }
        match st {
            CellState::Zero => {}
            CellState::Keep => {
                y[idx] = Some(mb.add_var());
                z[idx] = ZEntry::Fixed(1.0);
            }
            CellState::Free => {
                y[idx] = Some(mb.add_var());
                z[idx] = ZEntry::Var(mb.add_var());
            }
        }
    }
    let y_free = y.iter().all(Option::is_none);

    let p = SymVar::new(&mut mb, n);
    let theta = SymVar::new(&mut mb, n);
    let x_expr = |i: usize, j: usize| AffExpr::var(x[i * n + j]);

    if y_free {
        // Y ≡ 0: lift ‖D − X‖² to ‖D‖² − 2⟨D, X⟩ + tr Θ, exact at rank-feasible points.
        mb.add_offset(d.frobenius_norm_sq());
        for idx in 0..n * n {
            mb.add_cost(x[idx], -2.0 * d.as_slice()[idx]);
        }
        mb.add_cost_expr(&theta.trace_expr(), 1.0 + inst.lambda);
    } else {
        let t = mb.add_var();
        mb.add_cost(t, 1.0);
        let resid: Vec<AffExpr> = (0..n * n)
            .map(|idx| {
                let e = AffExpr::constant(d.as_slice()[idx]).add_term(x[idx], -1.0);
                match y[idx] {
                    Some(v) => e.add_term(v, -1.0),
                    None => e,
                }
            })
            .collect();
        mb.add_rotated_soc(AffExpr::term(t, 0.5), AffExpr::constant(1.0), resid);
        mb.add_cost_expr(&theta.trace_expr(), inst.lambda);
    }

    let mut z_box = Vec::new();
    let mut z_sum = AffExpr::default();
    for idx in 0..n * n {
        let Some(yv) = y[idx] else { continue };
        let alpha = mb.add_var();
        alphas.push(alpha);
        mb.add_cost(alpha, inst.mu);
        let ze = z[idx].expr();
        mb.add_rotated_soc(AffExpr::term(alpha, 0.5), ze.clone(), vec![AffExpr::var(yv)]);
        if let ZEntry::Var(zv) = z[idx] {
            z_box.push(AffExpr::var(zv));
            z_box.push(AffExpr::constant(1.0).add_term(zv, -1.0));
        }
        z_sum = z_sum.add_expr(&ze, 1.0);
        if let Some((_, gamma)) = strengthen {
            z_box.push(ze.clone().scaled(gamma).add_term(yv, -1.0));
            z_box.push(ze.scaled(gamma).add_term(yv, 1.0));
        }
    }
    mb.add_nonneg(&z_box);
    if !y_free {
        match penalties {
            None => mb.add_nonneg(&[z_sum.scaled(-1.0).add_constant(inst.k1 as f64)]),
            Some(pen) => mb.add_cost_expr(&z_sum, pen.rho2),
        }
    }

    p.add_projection_hull(&mut mb, inst.k0, penalties.map(|pen| pen.rho1));
    mb.add_psd(2 * n, |i, j| block_entry(i, j, n, &|a, b| theta.entry(a, b), &x_expr, &|a, b| p.entry(a, b)));

    if let Some((beta, _)) = strengthen {
        let p_r = SymVar::new(&mut mb, n);
        p_r.add_projection_hull(&mut mb, inst.k0, None);
        mb.add_psd(2 * n, |i, j| {
            block_entry(i, j, n, &|a, b| p_r.entry(a, b).scaled(beta), &x_expr, &|a, b| p.entry(a, b).scaled(beta))
        });
    }

    let kind = match strengthen {
        None => RelaxationKind::Perspective,
        Some((beta, gamma)) => RelaxationKind::Strengthened { beta, gamma },
    };
    Ok(RelaxationModel {
        problem: mb.build(),
        kind,
        layout: Layout { n, x, y, z, p, v_over_gamma: None },
    })
}

// Lower triangle of [[A, X], [Xᵀ, B]] for a 2n×2n block.
fn block_entry(
    i: usize,
    j: usize,
    n: usize,
    a: &dyn Fn(usize, usize) -> AffExpr,
    x: &dyn Fn(usize, usize) -> AffExpr,
    b: &dyn Fn(usize, usize) -> AffExpr,
) -> AffExpr {
    match (i < n, j < n) {
        (true, true) => a(i, j),
        (false, true) => x(j, i - n),
        (false, false) => b(i - n, j - n),
        (true, false) => x(i, j - n),
    }
}

/// Relaxation with `|Y| ≤ V`, `⟨E, V⟩ ≤ γk1` and a nuclear-norm budget
/// `(tr W₁ + tr W₂)/(2β) ≤ k0`, `[[W₁, X], [Xᵀ, W₂]] ⪰ 0`.
pub fn build_lee_zou_relaxation(inst: &ProblemInstance, beta: f64, gamma: f64) -> Result<RelaxationModel> {
    if !(beta > 0.0 && gamma > 0.0) {
        return Err(SlrError::Parameter(format!("beta and gamma must be positive, got {beta}, {gamma}")));
    }
    let n = inst.n();
    let d = &inst.d;
    let mut mb = ModelBuilder::new();
    let x = mb.add_vars(n * n);
    let yv = mb.add_vars(n * n);
    let v = mb.add_vars(n * n);
    let t = mb.add_var();
    let ux = mb.add_var();
    let uy = mb.add_var();
    mb.add_cost(t, 1.0);
    mb.add_cost(ux, inst.lambda);
    mb.add_cost(uy, inst.mu);
    let resid: Vec<AffExpr> = (0..n * n)
        .map(|idx| AffExpr::constant(d.as_slice()[idx]).add_term(x[idx], -1.0).add_term(yv[idx], -1.0))
        .collect();
    mb.add_rotated_soc(AffExpr::term(t, 0.5), AffExpr::constant(1.0), resid);
    mb.add_rotated_soc(AffExpr::term(ux, 0.5), AffExpr::constant(1.0), x.iter().map(|&i| AffExpr::var(i)).collect());
    mb.add_rotated_soc(AffExpr::term(uy, 0.5), AffExpr::constant(1.0), yv.iter().map(|&i| AffExpr::var(i)).collect());
    let mut rows = Vec::with_capacity(2 * n * n + 1);
    let mut vsum = AffExpr::constant(inst.k1 as f64);
    for idx in 0..n * n {
        rows.push(AffExpr::var(v[idx]).add_term(yv[idx], -1.0));
        rows.push(AffExpr::var(v[idx]).add_term(yv[idx], 1.0));
        vsum = vsum.add_term(v[idx], -1.0 / gamma);
    }
    rows.push(vsum);
    mb.add_nonneg(&rows);
    let w1 = SymVar::new(&mut mb, n);
    let w2 = SymVar::new(&mut mb, n);
    let budget = AffExpr::constant(inst.k0 as f64)
        .add_expr(&w1.trace_expr(), -0.5 / beta)
        .add_expr(&w2.trace_expr(), -0.5 / beta);
    mb.add_nonneg(&[budget]);
    let x_expr = |i: usize, j: usize| AffExpr::var(x[i * n + j]);
    mb.add_psd(2 * n, |i, j| block_entry(i, j, n, &|a, b| w1.entry(a, b), &x_expr, &|a, b| w2.entry(a, b)));
    Ok(RelaxationModel {
        problem: mb.build(),
        kind: RelaxationKind::LeeZou { beta, gamma },
        layout: Layout {
            n,
            x,
            y: yv.into_iter().map(Some).collect(),
            z: vec![ZEntry::Fixed(0.0); n * n],
            p: w2,
            v_over_gamma: Some((v, gamma)),
        },
    })
}

/// Semidefinite form of the rank-constrained ridge problem
/// `min ‖D̄ − X‖² + λ‖X‖²` s.t. `rank X ≤ k0`, for symmetric `D̄`.
///
/// Returns the optimal value and `X`.
pub fn solve_lowrank_sdp(
    dbar: &DenseMatrix,
    k0: usize,
    lambda: f64,
    settings: &SolverSettings,
) -> Result<(f64, DenseMatrix)> {
    if !dbar.is_square() {
        return Err(SlrError::Dimension("low-rank SDP needs a square matrix".into()));
    }
    let scale = dbar.max_abs().max(1.0);
    let asym = dbar.max_asymmetry();
    if asym > 1e-10 * scale {
        return Err(SlrError::NotSymmetric(asym));
    }
    let n = dbar.rows();
    if k0 == 0 || k0 > n {
        return Err(SlrError::Parameter(format!("k0 = {k0} outside 1..={n}")));
    }
    if !(lambda >= 0.0) {
        return Err(SlrError::Parameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    let mut mb = ModelBuilder::new();
    let x = SymVar::new(&mut mb, n);
    let theta = SymVar::new(&mut mb, n);
    let p = SymVar::new(&mut mb, n);
    mb.add_offset(dbar.frobenius_norm_sq());
    for j in 0..n {
        for i in j..n {
            let w = if i == j { 1.0 } else { 2.0 };
            mb.add_cost(x.at(i, j), -w * (dbar.get(i, j) + dbar.get(j, i)));
        }
    }
    mb.add_cost_expr(&theta.trace_expr(), 1.0 + lambda);
    p.add_projection_hull(&mut mb, k0, None);
    mb.add_psd(2 * n, |i, j| {
        block_entry(i, j, n, &|a, b| theta.entry(a, b), &|a, b| x.entry(a, b), &|a, b| p.entry(a, b))
    });
    let sol = solve_conic(&mb.build(), settings)?;
    if sol.status == SolveStatus::NumericalFailure {
        return Err(SlrError::Numerical("conic solver produced non-finite iterates".into()));
    }
    Ok((sol.objective, x.value(&sol.x)))
}

/// `(upper − lower) / upper`.
pub fn bound_gap(upper: f64, lower: f64) -> Result<f64> {
    if !(upper > 0.0) {
        return Err(SlrError::Parameter(format!("bound gap needs a positive upper bound, got {upper}")));
    }
    Ok((upper - lower) / upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::altmin::{alternating_minimization, solve_lowrank_subproblem, AmOptions, SvdMode};
    use crate::problem::{reverse_huber_penalty, unconstrained_min_value};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    fn gaussian(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal))
    }

    fn witness() -> ProblemInstance {
        ProblemInstance::new(DenseMatrix::identity(2), 1, 0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn witness_values() {
        let inst = witness();
        let p = build_perspective_relaxation(&inst, None, None).unwrap().solve(&settings()).unwrap();
        assert!((p.value - 1.5).abs() < 1e-3, "perspective {}", p.value);
        let s = build_strengthened_relaxation(&inst, None, 2.0, 1.0).unwrap().solve(&settings()).unwrap();
        assert!((s.value - 1.5).abs() < 1e-3, "strengthened {}", s.value);
        let l = build_lee_zou_relaxation(&inst, 2.0, 1.0).unwrap().solve(&settings()).unwrap();
        assert!((l.value - 1.0).abs() < 1e-3, "lee-zou {}", l.value);
    }

    #[test]
    fn scalar_instance_is_unconstrained() {
        for seed in 0..3 {
            let d = gaussian(1, seed).scale(3.0);
            let inst = ProblemInstance::new(d, 1, 1, 0.7, 1.3).unwrap();
            let r = build_perspective_relaxation(&inst, None, None).unwrap().solve(&settings()).unwrap();
            let target = unconstrained_min_value(&inst);
            assert!((r.value - target).abs() <= 10.0 * 1e-5 * (1.0 + target), "{} vs {target}", r.value);
        }
    }

    #[test]
    fn perspective_below_am_and_fractional_constraints() {
        let d = gaussian(6, 4);
        let inst = ProblemInstance::new(d, 2, 5, 1.0, 1.0).unwrap();
        let (am, _) = alternating_minimization(&inst, &AmOptions::default()).unwrap();
        let r = build_perspective_relaxation(&inst, None, None).unwrap().solve(&settings()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.lower_bound <= am.objective);
        let zsum: f64 = r.z_fractional.as_slice().iter().sum();
        assert!(zsum <= 5.0 + 1e-3);
        assert!(r.p_fractional.trace() <= 2.0 + 1e-3);
        let gap = bound_gap(am.objective, r.lower_bound).unwrap();
        assert!((0.0..1.0).contains(&gap));
    }

    #[test]
    fn pattern_fixing_tightens_bound() {
        let d = gaussian(3, 8);
        let inst = ProblemInstance::new(d, 1, 2, 1.0, 1.0).unwrap();
        let root = build_perspective_relaxation(&inst, None, None).unwrap().solve(&settings()).unwrap();
        let mut p = SparsityPattern::new(3);
        p.fix_one((0, 0)).unwrap();
        p.fix_zero((1, 1)).unwrap();
        let child = build_perspective_relaxation(&inst, Some(&p), None).unwrap().solve(&settings()).unwrap();
        assert!(child.value >= root.value - 1e-4);
        assert_eq!(child.z_fractional[(0, 0)], 1.0);
        assert_eq!(child.z_fractional[(1, 1)], 0.0);
        assert_eq!(child.y_relax[(1, 1)], 0.0);
    }

    #[test]
    fn lowrank_sdp_examples() {
        let (v, _) = solve_lowrank_sdp(&DenseMatrix::from_diag(&[2.0, 0.0]), 1, 1.0, &settings()).unwrap();
        assert!((v - 2.0).abs() < 1e-3, "{v}");
        let (v, _) = solve_lowrank_sdp(&DenseMatrix::zeros(3, 3), 1, 1.0, &settings()).unwrap();
        assert!(v.abs() < 1e-4);
        let asym = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(solve_lowrank_sdp(&asym, 1, 1.0, &settings()).is_err());
    }

    #[test]
    fn lowrank_sdp_matches_closed_form() {
        let g = gaussian(10, 12);
        let dbar = g.add(&g.transpose()).scale(0.5);
        let lambda = 0.5;
        let x = solve_lowrank_subproblem(&dbar, 3, lambda, SvdMode::Exact).unwrap();
        let closed = dbar.sub(&x).frobenius_norm_sq() + lambda * x.frobenius_norm_sq();
        let (v, xs) = solve_lowrank_sdp(&dbar, 3, lambda, &settings()).unwrap();
        assert!((v - closed).abs() <= 1e-3 * closed, "{v} vs {closed}");
        assert!(xs.sub(&x).frobenius_norm() <= 0.05 * x.frobenius_norm());
    }

    #[test]
    fn lee_zou_dominated_by_strengthened() {
        let d = gaussian(4, 2);
        let inst = ProblemInstance::new(d.clone(), 1, 3, 1.0, 1.0).unwrap();
        let (beta, gamma) = default_beta_gamma(&d);
        let lz = build_lee_zou_relaxation(&inst, beta, gamma).unwrap().solve(&settings()).unwrap();
        let st = build_strengthened_relaxation(&inst, None, beta, gamma).unwrap().solve(&settings()).unwrap();
        let tol = 1e-4 * (1.0 + st.value.abs());
        assert!(lz.value <= st.value + tol, "{} vs {}", lz.value, st.value);
    }

    #[test]
    fn strengthened_with_loose_bounds_matches_perspective() {
        let d = gaussian(3, 6);
        let inst = ProblemInstance::new(d, 1, 3, 1.0, 1.0).unwrap();
        let p = build_perspective_relaxation(&inst, None, None).unwrap().solve(&settings()).unwrap();
        let s = build_strengthened_relaxation(&inst, None, 1e3, 1e3).unwrap().solve(&settings()).unwrap();
        assert!((p.value - s.value).abs() <= 1e-3 * (1.0 + p.value), "{} vs {}", p.value, s.value);
    }

    #[test]
    fn penalized_scalar_matches_reverse_huber_objective() {
        // n = 1: relaxation value equals min over (x, y) of (d-x-y)^2 + rh(x; λ, ρ1) + rh(y; μ, ρ2)
        let d = DenseMatrix::from_diag(&[1.7]);
        let inst = ProblemInstance::new(d, 1, 1, 0.6, 0.9).unwrap();
        let pen = Penalties { rho1: 0.4, rho2: 0.3 };
        let r = build_perspective_relaxation(&inst, None, Some(pen)).unwrap().solve(&settings()).unwrap();
        let mut best = f64::INFINITY;
        let steps = 1200;
        for a in 0..=steps {
            let xv = -0.5 + 2.5 * a as f64 / steps as f64;
            for b in 0..=steps {
                let yv = -0.5 + 2.5 * b as f64 / steps as f64;
                let f = (1.7 - xv - yv).powi(2)
                    + reverse_huber_penalty(xv, 0.6, 0.4)
                    + reverse_huber_penalty(yv, 0.9, 0.3);
                best = best.min(f);
            }
        }
        assert!((r.value - best).abs() < 2e-3, "{} vs {best}", r.value);
    }

    #[test]
    fn bound_gap_examples() {
        assert_eq!(bound_gap(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(bound_gap(10.0, 5.0).unwrap(), 0.5);
        assert!(bound_gap(0.0, 1.0).is_err());
    }
}
