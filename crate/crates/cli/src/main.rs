use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use slrdecomp::altmin::{alternating_minimization, multistart_alternating_minimization, AmOptions, SvdMode};
use slrdecomp::bnb::{branch_and_bound, write_trace_csv, BnbOptions};
use slrdecomp::conic::SolverSettings;
use slrdecomp::experiments::{
    cross_validate_am, default_grid, generate_instance, render_svg, run_experiment, swept_parameter,
    write_results_file, ExperimentConfig,
};
use slrdecomp::linalg::{read_matrix_csv, write_matrix_csv};
use slrdecomp::relax::{
    bound_gap, build_lee_zou_relaxation, build_perspective_relaxation, build_strengthened_relaxation,
    default_beta_gamma,
};
use slrdecomp::{ProblemInstance, SlrError};

#[derive(Parser)]
#[command(name = "slrdecomp", version, about = "Sparse plus low-rank matrix decomposition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Accelerated,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Perspective,
    Strengthened,
    Leezou,
}

#[derive(clap::Args)]
struct ProblemArgs {
    /// Square matrix in CSV form
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    k0: usize,
    #[arg(long)]
    k1: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
}

impl ProblemArgs {
    fn instance(&self) -> slrdecomp::Result<ProblemInstance> {
        let d = read_matrix_csv(&self.input)?;
        ProblemInstance::new(d, self.k0, self.k1, self.lambda, self.mu)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Alternating minimization; writes <out>_X.csv, <out>_Y.csv and <out>_summary.json
    Decompose {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 1000)]
        max_iters: usize,
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        #[arg(long)]
        out: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Lower bound from a convex relaxation and its gap to an alternating-minimization solution
    Bound {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_enum, default_value_t = Variant::Perspective)]
        variant: Variant,
        /// Spectral bound on X (default: spectral norm of D)
        #[arg(long)]
        beta: Option<f64>,
        /// Entrywise bound on Y (default: largest |D_ij|)
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Branch-and-bound over sparsity patterns
    Bnb {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 100_000)]
        node_limit: usize,
        /// CSV of (node_index, ub, lb, time) records
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Synthetic instance; writes <out>_D.csv, <out>_L.csv, <out>_S.csv, <out>_N.csv
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k0: usize,
        #[arg(long)]
        k1: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: String,
    },
    /// Cross-validated (lambda, mu) for alternating minimization
    Cv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k0: usize,
        #[arg(long)]
        k1: usize,
        /// Candidates as lambda:mu pairs separated by commas (default: standard grid)
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = 30)]
        folds: usize,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Runs an experiment config and writes the results CSV
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional SVG line chart of mean L error
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

fn exit_code(e: &SlrError) -> u8 {
    match e {
        SlrError::Numerical(_) => 1,
        _ => 2,
    }
}

fn with_suffix(prefix: &str, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_{suffix}"))
}

fn write_json(path: &Path, value: &serde_json::Value) -> slrdecomp::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn parse_grid(text: &str) -> slrdecomp::Result<Vec<(f64, f64)>> {
    text.split(',')
        .map(|pair| {
            let (l, m) = pair
                .split_once(':')
                .ok_or_else(|| SlrError::Parse(format!("grid entry `{pair}` is not lambda:mu")))?;
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| SlrError::Parse(format!("bad number `{s}` in grid")));
            Ok((num(l)?, num(m)?))
        })
        .collect()
}

fn run(cmd: Command) -> slrdecomp::Result<()> {
    match cmd {
        Command::Decompose { problem, epsilon, max_iters, mode, out, seed } => {
            let inst = problem.instance()?;
            let svd_mode = match mode {
                Mode::Exact => SvdMode::Exact,
                Mode::Accelerated => SvdMode::Randomized { seed },
            };
            let opts = AmOptions { epsilon, max_iters, svd_mode, ..AmOptions::default() };
            let (sol, trace) = alternating_minimization(&inst, &opts)?;
            write_matrix_csv(with_suffix(&out, "X.csv"), &sol.x)?;
            write_matrix_csv(with_suffix(&out, "Y.csv"), &sol.y)?;
            let summary = json!({
                "objective": sol.objective,
                "iterations": trace.iterations,
                "rank": sol.rank_of_x,
                "nnz": sol.nnz_of_y,
                "feasible": sol.feasible,
                "converged_reason": trace.converged_reason,
                "objective_values": trace.objective_values,
            });
            write_json(&with_suffix(&out, "summary.json"), &summary)?;
            println!("objective   {:.6e}", sol.objective);
            println!("iterations  {}", trace.iterations);
            println!("rank(X)     {}", sol.rank_of_x);
            println!("nnz(Y)      {}", sol.nnz_of_y);
        }
        Command::Bound { problem, variant, beta, gamma, tol, seed } => {
            let inst = problem.instance()?;
            let (b0, g0) = default_beta_gamma(&inst.d);
            let (beta, gamma) = (beta.unwrap_or(b0), gamma.unwrap_or(g0));
            let model = match variant {
                Variant::Perspective => build_perspective_relaxation(&inst, None, None)?,
                Variant::Strengthened => build_strengthened_relaxation(&inst, None, beta, gamma)?,
                Variant::Leezou => build_lee_zou_relaxation(&inst, beta, gamma)?,
            };
            let relax = model.solve(&SolverSettings::default().with_tol(tol))?;
            let am = AmOptions::default().with_epsilon(1e-6);
            let (ub_sol, _) = multistart_alternating_minimization(&inst, &am, 3, seed)?;
            let lb = relax.lower_bound.max(0.0);
            let gap = bound_gap(ub_sol.objective, lb)?;
            println!("relaxation  {:.6}", relax.value);
            println!("lower bound {:.6}", lb);
            println!("am value    {:.6}", ub_sol.objective);
            println!("gap         {:.6}", gap);
            println!("status      {:?}", relax.status);
        }
        Command::Bnb { problem, epsilon, node_limit, trace, seed } => {
            let inst = problem.instance()?;
            let opts = BnbOptions { epsilon, node_limit, seed, ..BnbOptions::default() };
            let res = branch_and_bound(&inst, &opts)?;
            if let Some(path) = trace {
                write_trace_csv(path, &res.bound_history)?;
            }
            println!("incumbent   {:.6}", res.upper_bound);
            println!("lower bound {:.6}", res.lower_bound);
            println!("gap         {:.6}", res.gap);
            println!("nodes       {}", res.nodes_explored);
            println!("truncated   {}", res.truncated);
        }
        Command::Synth { n, k0, k1, sigma, seed, out } => {
            let inst = generate_instance(n, k0, k1, sigma, seed)?;
            write_matrix_csv(with_suffix(&out, "D.csv"), &inst.d)?;
            write_matrix_csv(with_suffix(&out, "L.csv"), &inst.l)?;
            write_matrix_csv(with_suffix(&out, "S.csv"), &inst.s)?;
            write_matrix_csv(with_suffix(&out, "N.csv"), &inst.noise)?;
            println!("wrote {n}x{n} instance with rank(L) <= {k0}, nnz(S) = {k1}");
        }
        Command::Cv { input, k0, k1, grid, folds, epsilon, seed } => {
            let d = read_matrix_csv(input)?;
            let grid = match grid {
                Some(g) => parse_grid(&g)?,
                None => default_grid(d.rows()),
            };
            let res = cross_validate_am(&d, k0, k1, &grid, folds, seed, epsilon)?;
            println!("lambda,mu,score");
            for ((l, m), s) in &res.scores {
                println!("{l},{m},{s}");
            }
            println!("best lambda {} mu {} score {:.6}", res.best.0, res.best.1, res.best_score);
        }
        Command::Bench { config, out, plot } => {
            let cfg = ExperimentConfig::from_file(config)?;
            let rows = run_experiment(&cfg)?;
            write_results_file(&out, &rows)?;
            if let Some(p) = plot {
                std::fs::write(p, render_svg(&rows, swept_parameter(&cfg)))?;
            }
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!("{} rows written to {} ({failed} failed)", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
