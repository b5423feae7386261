//! Synthetic instances, cross-validation, recovery metrics and the batch runner.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::altmin::{alternating_minimization, AmOptions, SvdMode};
use crate::baselines::{default_spcp_penalty, godec, scaled_gd, spcp};
use crate::error::{Result, SlrError};
use crate::linalg::{pseudoinverse, DenseMatrix};
use crate::problem::{ProblemInstance, SlrSolution};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticInstance {
    pub d: DenseMatrix,
    pub l: DenseMatrix,
    pub s: DenseMatrix,
    pub noise: DenseMatrix,
    pub n: usize,
    pub k0: usize,
    pub k1: usize,
    pub sigma: f64,
    pub seed: u64,
}

/// Symmetric support of exactly `k1` cells.
///
/// Diagonal cells and off-diagonal pairs are visited in random order. An odd
/// budget takes the first diagonal cell; after that diagonal cells are taken
/// two at a time so the budget stays even.
fn symmetric_support(n: usize, k1: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(usize, usize)>> {
    if k1 > n * n {
        return Err(SlrError::Parameter(format!("k1 = {k1} exceeds n^2 = {}", n * n)));
    }
    let mut units: Vec<(usize, usize)> = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            units.push((i, j));
        }
    }
    units.shuffle(rng);
    let mut taken = vec![false; units.len()];
    let mut remaining = k1;
    let mut pending: Option<usize> = None;
    for (u, &(i, j)) in units.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i != j {
            if remaining >= 2 {
                taken[u] = true;
                remaining -= 2;
            }
        } else if remaining % 2 == 1 {
            taken[u] = true;
            remaining -= 1;
        } else if let Some(p) = pending.take() {
            taken[p] = true;
            taken[u] = true;
            remaining -= 2;
        } else {
            pending = Some(u);
        }
    }
    // pairs ran out: fill with unused diagonal cells
    for (u, &(i, j)) in units.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == j && !taken[u] {
            taken[u] = true;
            remaining -= 1;
        }
    }
    if remaining > 0 {
        return Err(SlrError::Parameter(format!("no symmetric support of size {k1} in {n}x{n}")));
    }
    let mut cells = Vec::with_capacity(k1);
    for (u, &(i, j)) in units.iter().enumerate() {
        if taken[u] {
            cells.push((i, j));
            if i != j {
                cells.push((j, i));
            }
        }
    }
    Ok(cells)
}

/// `D = VVᵀ + S + N` with `V_ij ~ N(0, σ²/n)`, `S` uniform on `(−5, 5)` over a
/// symmetric support of size `k1` and `N` symmetric standard normal.
pub fn generate_instance(n: usize, k0: usize, k1: usize, sigma: f64, seed: u64) -> Result<SyntheticInstance> {
    if n == 0 || k0 == 0 || k0 > n {
        return Err(SlrError::Parameter(format!("need 1 <= k0 <= n, got n={n}, k0={k0}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(SlrError::Parameter(format!("sigma must be nonnegative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = if sigma == 0.0 {
        DenseMatrix::zeros(n, k0)
    } else {
        let dist = Normal::new(0.0, sigma / (n as f64).sqrt()).map_err(|e| SlrError::Parameter(e.to_string()))?;
        DenseMatrix::from_fn(n, k0, |_, _| rng.sample(dist))
    };
    let l = v.matmul(&v.transpose())?;
    let l = DenseMatrix::from_fn(n, n, |i, j| if i <= j { l.get(i, j) } else { l.get(j, i) });
    let mut cells = symmetric_support(n, k1, &mut rng)?;
    cells.sort_unstable();
    let mut s = DenseMatrix::zeros(n, n);
    for &(i, j) in &cells {
        if i <= j {
            let val = rng.random_range(-5.0..5.0);
            s.set(i, j, val);
            s.set(j, i, val);
        }
    }
    let mut noise = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let val: f64 = rng.sample(StandardNormal);
            noise.set(i, j, val);
            noise.set(j, i, val);
        }
    }
    let d = l.add(&s).add(&noise);
    Ok(SyntheticInstance { d, l, s, noise, n, k0, k1, sigma, seed })
}

/// Holdout size of a cross-validation fold.
pub fn holdout_size(n: usize) -> usize {
    (n as f64 * (1.0 - 0.7f64.sqrt())).floor() as usize
}

/// `(λ, μ)` pairs from `{10⁻², 10⁻¹, 10⁰, 10¹}/√n` squared.
pub fn default_grid(n: usize) -> Vec<(f64, f64)> {
    let base: Vec<f64> = [1e-2, 1e-1, 1.0, 10.0].iter().map(|v| v / (n as f64).sqrt()).collect();
    base.iter().flat_map(|&a| base.iter().map(move |&b| (a, b))).collect()
}

pub const DEFAULT_ALPHA_GRID: [f64; 10] = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0];

#[derive(Clone, Debug)]
pub struct Fold {
    pub holdout: Vec<usize>,
    pub train: Vec<usize>,
}

/// Random holdout index sets shared by rows and columns.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Fold>> {
    if n < 4 {
        return Err(SlrError::Parameter(format!("cross-validation needs n >= 4, got {n}")));
    }
    if folds == 0 {
        return Err(SlrError::Parameter("need at least one fold".into()));
    }
    let l = holdout_size(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..folds)
        .map(|_| {
            let mut holdout = rand::seq::index::sample(&mut rng, n, l).into_vec();
            holdout.sort_unstable();
            let train = (0..n).filter(|i| holdout.binary_search(i).is_err()).collect();
            Fold { holdout, train }
        })
        .collect())
}

/// `‖D_val − D_UR X̂† D_LL‖²_F / ‖D_val‖²_F`.
pub fn fold_score(d: &DenseMatrix, fold: &Fold, x_hat: &DenseMatrix) -> Result<f64> {
    let d_val = d.submatrix(&fold.holdout, &fold.holdout);
    let d_ur = d.submatrix(&fold.holdout, &fold.train);
    let d_ll = d.submatrix(&fold.train, &fold.holdout);
    let pinv = pseudoinverse(x_hat, 1e-10)?;
    let pred = d_ur.matmul(&pinv)?.matmul(&d_ll)?;
    let denom = d_val.frobenius_norm_sq();
    let num = d_val.sub(&pred).frobenius_norm_sq();
    Ok(if denom > 0.0 { num / denom } else { num })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvResult<P> {
    pub best: P,
    pub best_score: f64,
    /// Mean score per candidate, in the order given.
    pub scores: Vec<(P, f64)>,
}

/// Generic cross-validation: `fit` gets the training block and a candidate and
/// returns the low-rank estimate. Ties go to the smaller candidate.
pub fn cross_validate<P, F>(d: &DenseMatrix, candidates: &[P], folds: usize, seed: u64, fit: F) -> Result<CvResult<P>>
where
    P: Clone + PartialOrd + Send + Sync,
    F: Fn(&DenseMatrix, &P) -> Result<DenseMatrix> + Sync,
{
    if candidates.is_empty() {
        return Err(SlrError::Parameter("empty hyperparameter grid".into()));
    }
    if !d.is_square() {
        return Err(SlrError::Dimension("cross-validation expects a square matrix".into()));
    }
    let folds = make_folds(d.rows(), folds, seed)?;
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|cand| -> Result<f64> {
            let mut total = 0.0;
            for fold in &folds {
                let train = d.submatrix(&fold.train, &fold.train);
                let x_hat = fit(&train, cand)?;
                total += fold_score(d, fold, &x_hat)?;
            }
            Ok(total / folds.len() as f64)
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = scores[i] < scores[best]
            || (scores[i] == scores[best] && candidates[i].partial_cmp(&candidates[best]) == Some(std::cmp::Ordering::Less));
        if better {
            best = i;
        }
    }
    Ok(CvResult {
        best: candidates[best].clone(),
        best_score: scores[best],
        scores: candidates.iter().cloned().zip(scores).collect(),
    })
}

/// Sparsity budget for a training block of side `n_train` cut from an `n × n` matrix.
pub fn scaled_k1(k1: usize, n: usize, n_train: usize) -> usize {
    let r = n_train as f64 / n as f64;
    ((k1 as f64 * r * r).round() as usize).min(n_train * n_train)
}

/// Cross-validates `(λ, μ)` for alternating minimization.
pub fn cross_validate_am(
    d: &DenseMatrix,
    k0: usize,
    k1: usize,
    grid: &[(f64, f64)],
    folds: usize,
    seed: u64,
    epsilon: f64,
) -> Result<CvResult<(f64, f64)>> {
    let n = d.rows();
    cross_validate(d, grid, folds, seed, |train, &(lambda, mu)| {
        let nt = train.rows();
        let inst = ProblemInstance::new(train.clone(), k0.min(nt), scaled_k1(k1, n, nt), lambda, mu)?;
        Ok(alternating_minimization(&inst, &AmOptions::default().with_epsilon(epsilon))?.0.x)
    })
}

/// Cross-validates the thresholding multiplier `α` (fraction `α·k1/n²`) for ScaledGD.
pub fn cross_validate_scaled_gd(
    d: &DenseMatrix,
    k0: usize,
    k1: usize,
    alphas: &[f64],
    step: f64,
    folds: usize,
    seed: u64,
    epsilon: f64,
    max_iters: usize,
) -> Result<CvResult<f64>> {
    let n = d.rows();
    cross_validate(d, alphas, folds, seed, |train, &alpha| {
        let nt = train.rows();
        let frac = (alpha * k1 as f64 / (n * n) as f64).min(1.0);
        Ok(scaled_gd(train, k0.min(nt), frac, step, max_iters, epsilon)?.0.x)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub method: String,
    pub n: usize,
    pub k0: usize,
    pub k1: usize,
    pub sigma: f64,
    pub trial: usize,
    pub seed: u64,
    pub l_error: f64,
    pub s_error: f64,
    pub discovery_rate: f64,
    pub objective: f64,
    pub runtime_s: f64,
    pub status: String,
    /// `l_error` is absolute because the true `L` vanished.
    #[serde(skip)]
    pub l_error_absolute: bool,
}

/// Reconstruction errors and support discovery of a decomposition against the truth.
pub fn compute_metrics(solution: &SlrSolution, truth: &SyntheticInstance) -> Result<MetricsRow> {
    truth.d.ensure_same_shape(&solution.x, "X")?;
    truth.d.ensure_same_shape(&solution.y, "Y")?;
    let l_norm = truth.l.frobenius_norm_sq();
    let l_diff = solution.x.sub(&truth.l).frobenius_norm_sq();
    let (l_error, l_error_absolute) = if l_norm > 0.0 { (l_diff / l_norm, false) } else { (l_diff, true) };
    let s_norm = truth.s.frobenius_norm_sq();
    let s_diff = solution.y.sub(&truth.s).frobenius_norm_sq();
    let s_error = if s_norm > 0.0 { s_diff / s_norm } else { s_diff };
    let support: Vec<usize> = (0..truth.s.as_slice().len()).filter(|&k| truth.s.as_slice()[k] != 0.0).collect();
    let discovery_rate = if support.is_empty() {
        1.0
    } else {
        support.iter().filter(|&&k| solution.y.as_slice()[k] != 0.0).count() as f64 / support.len() as f64
    };
    Ok(MetricsRow {
        experiment: String::new(),
        method: String::new(),
        n: truth.n,
        k0: truth.k0,
        k1: truth.k1,
        sigma: truth.sigma,
        trial: 0,
        seed: truth.seed,
        l_error,
        s_error,
        discovery_rate,
        objective: solution.objective,
        runtime_s: 0.0,
        status: "ok".into(),
        l_error_absolute,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Am,
    AmAccelerated,
    Godec,
    Spcp,
    Scaledgd,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Am => "am",
            Method::AmAccelerated => "am_accelerated",
            Method::Godec => "godec",
            Method::Spcp => "spcp",
            Method::Scaledgd => "scaledgd",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Every combination of the parameter lists.
    #[default]
    Product,
    /// Lists of equal length (or length one) read position by position.
    Zip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// Fixed `λ`; cross-validated when absent.
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    /// `(λ, μ)` candidates; the standard grid for `n` when absent.
    pub grid: Option<Vec<(f64, f64)>>,
    pub cv_folds: usize,
    /// Fixed ScaledGD multiplier; cross-validated over `alpha_grid` when absent.
    pub alpha: Option<f64>,
    pub alpha_grid: Vec<f64>,
    pub scaledgd_step: f64,
    /// S-PCP penalty; `√(2n)` when absent.
    pub spcp_mu: Option<f64>,
    pub max_iters: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: None,
            mu: None,
            grid: None,
            cv_folds: 30,
            alpha: None,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            scaledgd_step: 0.5,
            spcp_mu: None,
            max_iters: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_name: String,
    pub methods: Vec<Method>,
    pub n: Vec<usize>,
    pub k0: Vec<usize>,
    pub k1: Vec<usize>,
    pub sigma: Vec<f64>,
    pub trials: usize,
    pub seed_base: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub sweep: Sweep,
}

fn default_epsilon() -> f64 {
    1e-3
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Setting {
    pub n: usize,
    pub k0: usize,
    pub k1: usize,
    pub sigma: f64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| SlrError::Parse(format!("config field `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(SlrError::Parse(format!("config field `{field}`: {why}")));
        if self.methods.is_empty() {
            return bad("methods", "at least one method required");
        }
        for (name, len) in [("n", self.n.len()), ("k0", self.k0.len()), ("k1", self.k1.len()), ("sigma", self.sigma.len())] {
            if len == 0 {
                return bad(name, "must not be empty");
            }
        }
        if self.trials == 0 {
            return bad("trials", "must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        for (i, s) in self.sigma.iter().enumerate() {
            if !(*s >= 0.0 && s.is_finite()) {
                return bad(&format!("sigma[{i}]"), "must be a nonnegative number");
            }
        }
        let h = &self.hyperparams;
        if h.lambda.is_some() != h.mu.is_some() {
            return bad("hyperparams.lambda", "lambda and mu must be given together");
        }
        for (name, v) in [("hyperparams.lambda", h.lambda), ("hyperparams.mu", h.mu), ("hyperparams.spcp_mu", h.spcp_mu)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return bad(name, "must be positive");
                }
            }
        }
        if h.cv_folds == 0 {
            return bad("hyperparams.cv_folds", "must be positive");
        }
        if !(h.scaledgd_step > 0.0) {
            return bad("hyperparams.scaledgd_step", "must be positive");
        }
        if matches!(&h.grid, Some(g) if g.is_empty()) {
            return bad("hyperparams.grid", "must not be empty");
        }
        if h.alpha.is_none() && h.alpha_grid.is_empty() {
            return bad("hyperparams.alpha_grid", "must not be empty");
        }
        if self.sweep == Sweep::Zip {
            let lens = [self.n.len(), self.k0.len(), self.k1.len(), self.sigma.len()];
            let max = *lens.iter().max().expect("four lists");
            if lens.iter().any(|&l| l != 1 && l != max) {
                return bad("sweep", "zip needs lists of equal length or length one");
            }
        }
        for s in self.settings() {
            if s.k0 == 0 || s.k0 > s.n || s.k1 > s.n * s.n {
                return bad("k0", &format!("setting n={}, k0={}, k1={} is invalid", s.n, s.k0, s.k1));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> Vec<Setting> {
        match self.sweep {
            Sweep::Product => {
                let mut out = Vec::new();
                for &n in &self.n {
                    for &k0 in &self.k0 {
                        for &k1 in &self.k1 {
                            for &sigma in &self.sigma {
                                out.push(Setting { n, k0, k1, sigma });
                            }
                        }
                    }
                }
                out
            }
            Sweep::Zip => {
                let len = self.n.len().max(self.k0.len()).max(self.k1.len()).max(self.sigma.len());
                let at = |v: &[usize], i: usize| if v.len() == 1 { v[0] } else { v[i] };
                (0..len)
                    .map(|i| Setting {
                        n: at(&self.n, i),
                        k0: at(&self.k0, i),
                        k1: at(&self.k1, i),
                        sigma: if self.sigma.len() == 1 { self.sigma[0] } else { self.sigma[i] },
                    })
                    .collect()
            }
        }
    }
}

/// Runs one method on one instance, cross-validating where the config asks for it.
pub fn run_method(method: Method, inst: &SyntheticInstance, cfg: &ExperimentConfig) -> Result<SlrSolution> {
    let h = &cfg.hyperparams;
    let (d, k0, k1, n) = (&inst.d, inst.k0, inst.k1, inst.n);
    let am_params = || -> Result<(f64, f64)> {
        match (h.lambda, h.mu) {
            (Some(l), Some(m)) => Ok((l, m)),
            _ => {
                let grid = h.grid.clone().unwrap_or_else(|| default_grid(n));
                Ok(cross_validate_am(d, k0, k1, &grid, h.cv_folds, inst.seed, cfg.epsilon)?.best)
            }
        }
    };
    match method {
        Method::Am | Method::AmAccelerated => {
            let (lambda, mu) = am_params()?;
            let p = ProblemInstance::new(d.clone(), k0, k1, lambda, mu)?;
            let mode = if method == Method::Am { SvdMode::Exact } else { SvdMode::Randomized { seed: inst.seed } };
            let opts = AmOptions { epsilon: cfg.epsilon, max_iters: h.max_iters, svd_mode: mode, ..AmOptions::default() };
            Ok(alternating_minimization(&p, &opts)?.0)
        }
        Method::Godec => Ok(godec(d, k0, k1, cfg.epsilon, h.max_iters)?.0),
        Method::Spcp => {
            let mu = h.spcp_mu.unwrap_or_else(|| default_spcp_penalty(n));
            Ok(spcp(d, mu, cfg.epsilon, h.max_iters)?.solution)
        }
        Method::Scaledgd => {
            let alpha = match h.alpha {
                Some(a) => a,
                None => {
                    cross_validate_scaled_gd(
                        d,
                        k0,
                        k1,
                        &h.alpha_grid,
                        h.scaledgd_step,
                        h.cv_folds,
                        inst.seed,
                        cfg.epsilon,
                        h.max_iters,
                    )?
                    .best
                }
            };
            let frac = (alpha * k1 as f64 / (n * n) as f64).min(1.0);
            Ok(scaled_gd(d, k0, frac, h.scaledgd_step, h.max_iters, cfg.epsilon)?.0)
        }
    }
}

/// One row per `(setting, trial, method)`, in that nesting order. Failed runs
/// become rows with an `error: ...` status and `NaN` metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let mut jobs = Vec::new();
    for s in cfg.settings() {
        for trial in 0..cfg.trials {
            for &m in &cfg.methods {
                jobs.push((s, trial, m));
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(s, trial, method)| {
            let seed = cfg.seed_base + trial as u64;
            let failed = |status: String| MetricsRow {
                experiment: cfg.experiment_name.clone(),
                method: method.name().into(),
                n: s.n,
                k0: s.k0,
                k1: s.k1,
                sigma: s.sigma,
                trial,
                seed,
                l_error: f64::NAN,
                s_error: f64::NAN,
                discovery_rate: f64::NAN,
                objective: f64::NAN,
                runtime_s: 0.0,
                status,
                l_error_absolute: false,
            };
            let inst = match generate_instance(s.n, s.k0, s.k1, s.sigma, seed) {
                Ok(i) => i,
                Err(e) => return failed(format!("error: {e}")),
            };
            let start = Instant::now();
            let out = run_method(method, &inst, cfg);
            let runtime_s = start.elapsed().as_secs_f64();
            match out.and_then(|sol| compute_metrics(&sol, &inst)) {
                Ok(mut row) => {
                    row.experiment = cfg.experiment_name.clone();
                    row.method = method.name().into();
                    row.trial = trial;
                    row.runtime_s = runtime_s;
                    row
                }
                Err(e) => {
                    let mut row = failed(format!("error: {e}"));
                    row.runtime_s = runtime_s;
                    row
                }
            }
        })
        .collect();
    Ok(rows)
}

pub const RESULTS_HEADER: [&str; 14] = [
    "experiment",
    "method",
    "n",
    "k0",
    "k1",
    "sigma",
    "trial",
    "seed",
    "l_error",
    "s_error",
    "discovery_rate",
    "objective",
    "runtime_s",
    "status",
];

pub fn write_results_csv(out: impl Write, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results_file(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    write_results_csv(std::io::BufWriter::new(std::fs::File::create(path)?), rows)
}

/// Swept parameter with more than one value, preferring `n`, then `k0`, `k1`, `σ`.
pub fn swept_parameter(cfg: &ExperimentConfig) -> &'static str {
    if cfg.n.len() > 1 {
        "n"
    } else if cfg.k0.len() > 1 {
        "k0"
    } else if cfg.k1.len() > 1 {
        "k1"
    } else if cfg.sigma.len() > 1 {
        "sigma"
    } else {
        "n"
    }
}

fn param_value(r: &MetricsRow, param: &str) -> f64 {
    match param {
        "k0" => r.k0 as f64,
        "k1" => r.k1 as f64,
        "sigma" => r.sigma,
        _ => r.n as f64,
    }
}

/// Mean L-error per method against the swept parameter, as an SVG line chart.
pub fn render_svg(rows: &[MetricsRow], param: &str) -> String {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for m in &methods {
        let mut xs: Vec<f64> = Vec::new();
        for r in rows.iter().filter(|r| r.method == *m) {
            let x = param_value(r, param);
            if !xs.contains(&x) {
                xs.push(x);
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        let pts = xs
            .iter()
            .filter_map(|&x| {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.method == *m && param_value(r, param) == x && r.l_error.is_finite())
                    .map(|r| r.l_error)
                    .collect();
                (!vals.is_empty()).then(|| (x, vals.iter().sum::<f64>() / vals.len() as f64))
            })
            .collect();
        series.push((m.to_string(), pts));
    }
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let (w, h, pad) = (640.0, 400.0, 60.0);
    let (x0, x1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = all.iter().fold((0.0f64, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let xr = if x1 > x0 { x1 - x0 } else { 1.0 };
    let yr = if y1 > y0 { y1 - y0 } else { 1.0 };
    let sx = |x: f64| pad + (x - x0) / xr * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / yr * (h - 2.0 * pad);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{cx}\" y=\"{lx}\" text-anchor=\"middle\">{param}</text>\n\
         <text x=\"15\" y=\"{cy}\" transform=\"rotate(-90 15 {cy})\" text-anchor=\"middle\">mean L error</text>\n",
        b = h - pad,
        r = w - pad,
        cx = w / 2.0,
        lx = h - 20.0,
        cy = h / 2.0,
    );
    for t in 0..=4 {
        let yv = y0 + yr * t as f64 / 4.0;
        let xv = x0 + xr * t as f64 / 4.0;
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            pad - 5.0,
            sy(yv) + 4.0,
            yv,
            sx(xv),
            h - pad + 15.0,
            (xv * 100.0).round() / 100.0
        );
    }
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        svg += &format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", path.join(" "));
        for &(x, y) in pts {
            svg += &format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n", sx(x), sy(y));
        }
        svg += &format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
            w - pad - 90.0,
            pad + 15.0 * k as f64
        );
    }
    svg += "</svg>\n";
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degenerate_instance_is_pure_noise() {
        let inst = generate_instance(6, 2, 0, 0.0, 1).unwrap();
        assert_eq!(inst.l.max_abs(), 0.0);
        assert_eq!(inst.s.max_abs(), 0.0);
        assert_eq!(inst.d, inst.noise);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn instance_invariants(n in 1usize..9, k0_raw in 1usize..9, k1_raw in 0usize..81, sigma in 0.0f64..20.0, seed in any::<u64>()) {
            let k0 = 1 + (k0_raw - 1) % n;
            let k1 = k1_raw % (n * n + 1);
            let inst = generate_instance(n, k0, k1, sigma, seed).unwrap();
            prop_assert_eq!(inst.s.nnz(), k1);
            prop_assert!(inst.l.numerical_rank(1e-9) <= k0);
            prop_assert!(inst.s.is_symmetric(0.0));
            prop_assert!(inst.noise.is_symmetric(0.0));
            prop_assert!(inst.d.is_symmetric(0.0));
            prop_assert_eq!(&inst.d, &inst.l.add(&inst.s).add(&inst.noise));
            prop_assert!(inst.s.max_abs() < 5.0);
        }
    }

    #[test]
    fn too_many_sparse_entries_rejected() {
        assert!(generate_instance(3, 1, 10, 1.0, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_instance(10, 2, 13, 3.0, 42).unwrap();
        let b = generate_instance(10, 2, 13, 3.0, 42).unwrap();
        assert_eq!(a.d, b.d);
        let c = generate_instance(10, 2, 13, 3.0, 43).unwrap();
        assert_ne!(a.d, c.d);
    }

    #[test]
    fn low_rank_energy_matches_monte_carlo() {
        let (n, k0, sigma) = (20, 3, 2.0);
        let est: f64 = (0..200)
            .map(|s| generate_instance(n, k0, 0, sigma, 1000 + s).unwrap().l.frobenius_norm_sq())
            .sum::<f64>()
            / 200.0;
        // independent sampler for V
        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let sd = sigma / (n as f64).sqrt();
        let mut acc = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let v: Vec<f64> = (0..n * k0).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut g = vec![0.0; k0 * k0];
            for a in 0..k0 {
                for b in 0..k0 {
                    g[a * k0 + b] = (0..n).map(|i| v[i * k0 + a] * v[i * k0 + b]).sum();
                }
            }
            acc += g.iter().map(|x| x * x).sum::<f64>();
        }
        let oracle = acc / draws as f64;
        assert!((est - oracle).abs() / oracle < 0.1, "{est} vs {oracle}");
    }

    #[test]
    fn holdout_size_small_n() {
        assert_eq!(holdout_size(10), 1);
        assert_eq!(holdout_size(60), 9);
    }

    #[test]
    fn single_point_grid_is_returned() {
        let inst = generate_instance(10, 1, 4, 2.0, 3).unwrap();
        let r = cross_validate_am(&inst.d, 1, 4, &[(0.3, 0.7)], 5, 0, 1e-3).unwrap();
        assert_eq!(r.best, (0.3, 0.7));
    }

    #[test]
    fn scores_do_not_depend_on_grid_order() {
        let inst = generate_instance(12, 2, 10, 3.0, 8).unwrap();
        let grid = default_grid(12);
        let a = cross_validate_am(&inst.d, 2, 10, &grid, 4, 5, 1e-3).unwrap();
        let mut shuffled = grid.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let b = cross_validate_am(&inst.d, 2, 10, &shuffled, 4, 5, 1e-3).unwrap();
        assert_eq!(a.best, b.best);
        for (p, s) in &a.scores {
            let t = b.scores.iter().find(|(q, _)| q == p).unwrap().1;
            assert_eq!(*s, t);
        }
    }

    #[test]
    fn ties_go_to_smaller_candidate() {
        let d = DenseMatrix::identity(6);
        let r = cross_validate(&d, &[(2.0, 1.0), (1.0, 5.0), (1.0, 3.0)], 3, 0, |t, _| Ok(t.clone())).unwrap();
        assert_eq!(r.best, (1.0, 3.0));
    }

    #[test]
    fn training_ignores_holdout_block() {
        let n = 12;
        let inst = generate_instance(n, 2, 8, 3.0, 2).unwrap();
        let fold = &make_folds(n, 1, 9).unwrap()[0];
        let mut perturbed = inst.d.clone();
        for &i in &fold.holdout {
            for &j in &fold.holdout {
                perturbed.set(i, j, 1e6);
            }
        }
        let fits = |d: &DenseMatrix| {
            let out = std::sync::Mutex::new(Vec::new());
            cross_validate(d, &default_grid(n), 1, 9, |t, &(lambda, mu)| {
                let p = ProblemInstance::new(t.clone(), 2, 6, lambda, mu)?;
                let x = alternating_minimization(&p, &AmOptions::default())?.0.x;
                out.lock().unwrap().push(((lambda, mu), x.clone()));
                Ok(x)
            })
            .unwrap();
            let mut v = out.into_inner().unwrap();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            v
        };
        assert_eq!(fits(&inst.d), fits(&perturbed));
    }

    #[test]
    fn metrics_on_truth() {
        let inst = generate_instance(8, 2, 6, 3.0, 4).unwrap();
        let sol = SlrSolution { x: inst.l.clone(), y: inst.s.clone(), objective: 0.0, rank_of_x: 2, nnz_of_y: 6, feasible: true };
        let m = compute_metrics(&sol, &inst).unwrap();
        assert_eq!((m.l_error, m.s_error, m.discovery_rate), (0.0, 0.0, 1.0));
        let sol0 = SlrSolution { y: DenseMatrix::zeros(8, 8), ..sol };
        assert_eq!(compute_metrics(&sol0, &inst).unwrap().discovery_rate, 0.0);
    }

    #[test]
    fn metrics_hand_built() {
        let l = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        let s = DenseMatrix::from_rows(&[vec![0.0, 3.0], vec![3.0, 0.0]]).unwrap();
        let truth = SyntheticInstance {
            d: l.add(&s),
            l: l.clone(),
            s: s.clone(),
            noise: DenseMatrix::zeros(2, 2),
            n: 2,
            k0: 1,
            k1: 2,
            sigma: 1.0,
            seed: 0,
        };
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let sol = SlrSolution { x, y, objective: 0.0, rank_of_x: 2, nnz_of_y: 1, feasible: false };
        let m = compute_metrics(&sol, &truth).unwrap();
        assert!((m.l_error - 1.0 / 25.0).abs() < 1e-15);
        assert!((m.s_error - 10.0 / 18.0).abs() < 1e-15);
        assert_eq!(m.discovery_rate, 0.5);
    }

    fn small_config(methods: Vec<Method>, n: Vec<usize>, trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            experiment_name: "t".into(),
            methods,
            n,
            k0: vec![2],
            k1: vec![10],
            sigma: vec![3.0],
            trials,
            seed_base: 100,
            epsilon: 1e-3,
            hyperparams: Hyperparams { lambda: Some(0.2), mu: Some(0.2), alpha: Some(1.0), ..Hyperparams::default() },
            sweep: Sweep::Product,
        }
    }

    #[test]
    fn one_method_one_trial_one_row() {
        let rows = run_experiment(&small_config(vec![Method::Am], vec![10], 1)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].status, "ok");
    }

    #[test]
    fn counting_rows() {
        let cfg = small_config(vec![Method::Am, Method::Godec], vec![12, 14], 5);
        let rows = run_experiment(&cfg).unwrap();
        for m in ["am", "godec"] {
            assert_eq!(rows.iter().filter(|r| r.method == m).count(), 10);
        }
    }

    #[test]
    fn rerun_is_identical() {
        let cfg = small_config(vec![Method::Am, Method::AmAccelerated, Method::Godec, Method::Spcp, Method::Scaledgd], vec![12], 2);
        let strip = |rows: Vec<MetricsRow>| rows.into_iter().map(|r| MetricsRow { runtime_s: 0.0, ..r }).collect::<Vec<_>>();
        let a = strip(run_experiment(&cfg).unwrap());
        let b = strip(run_experiment(&cfg).unwrap());
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        write_results_csv(&mut ca, &a).unwrap();
        write_results_csv(&mut cb, &b).unwrap();
        assert_eq!(ca, cb);
        let text = String::from_utf8(ca).unwrap();
        assert!(text.starts_with(&RESULTS_HEADER.join(",")));
    }

    #[test]
    fn config_errors_name_fields() {
        let err = ExperimentConfig::from_json(r#"{"experiment_name":"x","methods":["am"],"n":[10],"k0":[1],"k1":[2],"sigma":[1.0],"trials":1,"seed_base":0,"hyperparams":{"cv_folds":"many"}}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("hyperparams.cv_folds"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"experiment_name":"x","methods":["am"],"n":[10],"k0":[1],"k1":[2],"sigma":[-1.0],"trials":1,"seed_base":0}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("sigma[0]"), "{err}");
    }

    #[test]
    fn svg_has_one_series_per_method() {
        let cfg = small_config(vec![Method::Am, Method::Godec], vec![10, 12], 1);
        let rows = run_experiment(&cfg).unwrap();
        let svg = render_svg(&rows, swept_parameter(&cfg));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
