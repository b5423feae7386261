//! Branch-and-bound over sparsity patterns.
//!
//! Each node fixes some entries of `Y` to zero (`I0`) or nonzero (`I1`). Lower
//! bounds come from the perspective relaxation restricted to the node's
//! pattern, upper bounds from pattern-constrained alternating minimization.
//! Nodes whose pattern is complete cannot be split further; they stay in the
//! surviving set (their bound counts toward the global lower bound) but are
//! never expanded.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::altmin::{alternating_minimization, multistart_alternating_minimization, AmOptions, SparsityPattern};
use crate::conic::SolverSettings;
use crate::error::{Result, SlrError};
use crate::linalg::{Cell, CellState, DenseMatrix};
use crate::problem::{ProblemInstance, SlrSolution};
use crate::relax::{bound_gap, build_perspective_relaxation, build_strengthened_relaxation, RelaxationResult};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BnbNode {
    pub pattern: SparsityPattern,
    /// Relaxation bound of the pattern, shifted down by the solver tolerance.
    pub lower_bound: f64,
    pub depth: usize,
    /// Creation index; the root is 0.
    pub index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub node_index: usize,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeAction {
    Branched,
    Terminal,
    Pruned,
}

/// One line of the node log: what happened to a node and the incumbent at that moment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeEvent {
    pub node_index: usize,
    pub depth: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub action: NodeAction,
    /// Smallest bound among expandable nodes when this node was selected.
    pub open_min_bound: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BnbResult {
    pub incumbent: SlrSolution,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub nodes_explored: usize,
    pub gap: f64,
    pub bound_history: Vec<BoundRecord>,
    pub node_log: Vec<NodeEvent>,
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeRelaxation {
    Perspective,
    Strengthened { beta: f64, gamma: f64 },
}

#[derive(Clone, Debug)]
pub struct BnbOptions {
    pub epsilon: f64,
    pub node_limit: usize,
    pub solver: SolverSettings,
    pub relaxation: NodeRelaxation,
    /// Stopping threshold of the AM runs producing upper bounds.
    pub am_epsilon: f64,
    pub root_starts: usize,
    pub seed: u64,
}

impl Default for BnbOptions {
    fn default() -> Self {
        BnbOptions {
            epsilon: 0.05,
            node_limit: 100_000,
            solver: SolverSettings::default(),
            relaxation: NodeRelaxation::Perspective,
            am_epsilon: 1e-6,
            root_starts: 3,
            seed: 0,
        }
    }
}

struct Open {
    bound: f64,
    seq: usize,
    node: BnbNode,
    z: DenseMatrix,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Open {
    // BinaryHeap is a max-heap: smaller bound, then earlier creation, ranks higher
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.seq.cmp(&self.seq))
    }
}

/// Free entry whose fractional value is closest to 1/2; ties go to the first in row-major order.
pub fn select_branch_entry(z_fractional: &DenseMatrix, pattern: &SparsityPattern) -> Result<Cell> {
    let n = pattern.n();
    if z_fractional.shape() != (n, n) {
        return Err(SlrError::Dimension("fractional pattern and sparsity pattern differ in size".into()));
    }
    let mut best: Option<(f64, Cell)> = None;
    for i in 0..n {
        for j in 0..n {
            if pattern.state((i, j)) != CellState::Free {
                continue;
            }
            let score = (z_fractional[(i, j)] - 0.5).abs();
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, (i, j)));
            }
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| SlrError::InfeasiblePattern("no free entry left to branch on".into()))
}

fn relax_node(inst: &ProblemInstance, pattern: &SparsityPattern, opts: &BnbOptions) -> Result<RelaxationResult> {
    let model = match opts.relaxation {
        NodeRelaxation::Perspective => build_perspective_relaxation(inst, Some(pattern), None)?,
        NodeRelaxation::Strengthened { beta, gamma } => {
            build_strengthened_relaxation(inst, Some(pattern), beta, gamma)?
        }
    };
    model.solve(&opts.solver)
}

fn pattern_upper_bound(
    inst: &ProblemInstance,
    pattern: &SparsityPattern,
    warm: &DenseMatrix,
    am_epsilon: f64,
) -> Result<SlrSolution> {
    let n = inst.n();
    let base = AmOptions { epsilon: am_epsilon, max_iters: 10_000, ..AmOptions::default() }.with_pattern(pattern.clone());
    let (cold, _) = alternating_minimization(inst, &base)?;
    let (hot, _) = alternating_minimization(inst, &base.clone().with_init(warm.clone(), DenseMatrix::zeros(n, n)))?;
    Ok(if hot.objective < cold.objective { hot } else { cold })
}

/// Best-bound branch-and-bound until the relative gap is at most `epsilon`.
pub fn branch_and_bound(inst: &ProblemInstance, opts: &BnbOptions) -> Result<BnbResult> {
    if !(opts.epsilon >= 0.0) {
        return Err(SlrError::Parameter(format!("epsilon must be nonnegative, got {}", opts.epsilon)));
    }
    let start = Instant::now();
    let n = inst.n();
    let am_root = AmOptions { epsilon: opts.am_epsilon, max_iters: 10_000, ..AmOptions::default() };
    let (mut incumbent, _) = multistart_alternating_minimization(inst, &am_root, opts.root_starts, opts.seed)?;
    let mut ub = incumbent.objective;

    let root_pattern = SparsityPattern::new(n);
    let root_relax = relax_node(inst, &root_pattern, opts)?;
    let root = BnbNode { pattern: root_pattern, lower_bound: root_relax.lower_bound, depth: 0, index: 0 };
    let mut nodes_explored = 1;
    let mut seq = 1;
    let mut open: BinaryHeap<Open> = BinaryHeap::new();
    let mut terminal: Vec<BnbNode> = Vec::new();
    let mut node_log = Vec::new();
    let mut history = Vec::new();
    let mut truncated = false;

    let admit = |node: BnbNode, z: DenseMatrix, open: &mut BinaryHeap<Open>, terminal: &mut Vec<BnbNode>, ub: f64, log: &mut Vec<NodeEvent>, seq: usize| {
        if node.lower_bound >= ub {
            log.push(NodeEvent {
                node_index: node.index,
                depth: node.depth,
                lower_bound: node.lower_bound,
                upper_bound: ub,
                action: NodeAction::Pruned,
                open_min_bound: None,
            });
        } else if node.pattern.is_complete(inst.k1) {
            log.push(NodeEvent {
                node_index: node.index,
                depth: node.depth,
                lower_bound: node.lower_bound,
                upper_bound: ub,
                action: NodeAction::Terminal,
                open_min_bound: None,
            });
            terminal.push(node);
        } else {
            open.push(Open { bound: node.lower_bound, seq, node, z });
        }
    };
    admit(root, root_relax.z_fractional, &mut open, &mut terminal, ub, &mut node_log, 0);

    let global_lb = |open: &BinaryHeap<Open>, terminal: &[BnbNode], ub: f64| -> f64 {
        let a = open.peek().map_or(f64::INFINITY, |o| o.bound);
        let b = terminal.iter().map(|t| t.lower_bound).fold(f64::INFINITY, f64::min);
        a.min(b).min(ub)
    };
    let mut lb = global_lb(&open, &terminal, ub);
    history.push(BoundRecord { node_index: 0, upper_bound: ub, lower_bound: lb, elapsed_s: start.elapsed().as_secs_f64() });

    loop {
        let gap = if ub > 0.0 { bound_gap(ub, lb)? } else { 0.0 };
        if gap <= opts.epsilon || open.is_empty() {
            break;
        }
        if nodes_explored >= opts.node_limit {
            truncated = true;
            break;
        }
        let Open { node, z, .. } = open.pop().expect("open set is nonempty");
        if node.lower_bound >= ub {
            node_log.push(NodeEvent {
                node_index: node.index,
                depth: node.depth,
                lower_bound: node.lower_bound,
                upper_bound: ub,
                action: NodeAction::Pruned,
                open_min_bound: Some(node.lower_bound),
            });
            continue;
        }
        node_log.push(NodeEvent {
            node_index: node.index,
            depth: node.depth,
            lower_bound: node.lower_bound,
            upper_bound: ub,
            action: NodeAction::Branched,
            open_min_bound: Some(node.lower_bound),
        });
        let cell = select_branch_entry(&z, &node.pattern)?;
        for fix_one in [false, true] {
            let mut child_pattern = node.pattern.clone();
            if fix_one {
                child_pattern.fix_one(cell)?;
            } else {
                child_pattern.fix_zero(cell)?;
            }
            if child_pattern.validate(inst.k1).is_err() {
                continue;
            }
            let relax = relax_node(inst, &child_pattern, opts)?;
            nodes_explored += 1;
            let candidate = pattern_upper_bound(inst, &child_pattern, &incumbent.x, opts.am_epsilon)?;
            if candidate.objective < ub {
                ub = candidate.objective;
                incumbent = candidate;
                prune(&mut open, &mut terminal, ub, &mut node_log);
            }
            // a child's feasible set is contained in its parent's
            let child = BnbNode {
                pattern: child_pattern,
                lower_bound: relax.lower_bound.max(node.lower_bound),
                depth: node.depth + 1,
                index: seq,
            };
            admit(child, relax.z_fractional, &mut open, &mut terminal, ub, &mut node_log, seq);
            seq += 1;
        }
        lb = lb.max(global_lb(&open, &terminal, ub));
        history.push(BoundRecord {
            node_index: node.index,
            upper_bound: ub,
            lower_bound: lb,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
    }
    let gap = if ub > 0.0 { bound_gap(ub, lb)? } else { 0.0 };
    Ok(BnbResult {
        incumbent,
        lower_bound: lb,
        upper_bound: ub,
        nodes_explored,
        gap,
        bound_history: history,
        node_log,
        truncated,
    })
}

fn prune(open: &mut BinaryHeap<Open>, terminal: &mut Vec<BnbNode>, ub: f64, log: &mut Vec<NodeEvent>) {
    let mut keep = Vec::with_capacity(open.len());
    for o in open.drain() {
        if o.bound >= ub {
            log.push(NodeEvent {
                node_index: o.node.index,
                depth: o.node.depth,
                lower_bound: o.bound,
                upper_bound: ub,
                action: NodeAction::Pruned,
                open_min_bound: None,
            });
        } else {
            keep.push(o);
        }
    }
    open.extend(keep);
    terminal.retain(|t| {
        let stay = t.lower_bound < ub;
        if !stay {
            log.push(NodeEvent {
                node_index: t.index,
                depth: t.depth,
                lower_bound: t.lower_bound,
                upper_bound: ub,
                action: NodeAction::Pruned,
                open_min_bound: None,
            });
        }
        stay
    });
}

/// Writes `node_index,ub,lb,time` rows.
pub fn write_trace_csv(path: impl AsRef<Path>, history: &[BoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node_index", "ub", "lb", "time"])?;
    for r in history {
        w.write_record([
            r.node_index.to_string(),
            r.upper_bound.to_string(),
            r.lower_bound.to_string(),
            r.elapsed_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `C(n, k)` as `u128`, saturating.
pub fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

pub const ORACLE_GUARD: u128 = 100_000;

/// Best AM solution over every support of size `k1` (3 starts per support).
///
/// Returns the solution and its objective value.
pub fn exhaustive_oracle(inst: &ProblemInstance) -> Result<(SlrSolution, f64)> {
    let n = inst.n();
    let cells = n * n;
    let k1 = inst.k1;
    let count = binomial(cells as u128, k1 as u128);
    if count > ORACLE_GUARD {
        return Err(SlrError::GuardExceeded { count, limit: ORACLE_GUARD });
    }
    let base = AmOptions { epsilon: 1e-10, max_iters: 20_000, ..AmOptions::default() };
    let mut best: Option<SlrSolution> = None;
    let mut combo: Vec<usize> = (0..k1).collect();
    let mut pattern_index: u64 = 0;
    loop {
        let ones: Vec<Cell> = combo.iter().map(|&c| (c / n, c % n)).collect();
        let pattern = SparsityPattern::from_sets(n, &[], &ones)?;
        let opts = base.clone().with_pattern(pattern);
        let (sol, _) = multistart_alternating_minimization(inst, &opts, 3, pattern_index)?;
        if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
            best = Some(sol);
        }
        pattern_index += 1;
        if !next_combination(&mut combo, cells) {
            break;
        }
    }
    let best = best.expect("at least one pattern");
    let v = best.objective;
    Ok((best, v))
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    if k == 0 {
        return false;
    }
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in (i + 1)..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Appends the node log as CSV (used by regression replays).
pub fn write_node_log(mut out: impl Write, log: &[NodeEvent]) -> Result<()> {
    writeln!(out, "node_index,depth,lower_bound,upper_bound,action")?;
    for e in log {
        writeln!(out, "{},{},{},{},{:?}", e.node_index, e.depth, e.lower_bound, e.upper_bound, e.action)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::altmin::solve_lowrank_subproblem;
    use crate::altmin::SvdMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(n, n, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn branch_entry_rules() {
        let p = SparsityPattern::new(2);
        let z = DenseMatrix::from_rows(&[vec![0.9, 0.5], vec![0.1, 0.0]]).unwrap();
        assert_eq!(select_branch_entry(&z, &p).unwrap(), (0, 1));
        let z = DenseMatrix::from_rows(&[vec![0.9, 0.2], vec![0.2, 0.9]]).unwrap();
        assert_eq!(select_branch_entry(&z, &p).unwrap(), (0, 1));

        let mut p3 = SparsityPattern::new(3);
        for i in 0..3 {
            for j in 0..3 {
                if (i, j) != (2, 2) {
                    p3.fix_zero((i, j)).unwrap();
                }
            }
        }
        let z = DenseMatrix::from_fn(3, 3, |_, _| 0.5);
        assert_eq!(select_branch_entry(&z, &p3).unwrap(), (2, 2));
        p3.fix_one((2, 2)).unwrap();
        assert!(select_branch_entry(&z, &p3).is_err());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(16, 2), 120);
        assert_eq!(binomial(9, 4), 126);
        assert_eq!(binomial(4, 0), 1);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn combinations_enumerate_all() {
        let mut c = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut c, 5) {
            count += 1;
        }
        assert_eq!(count, 10);
        let mut empty: Vec<usize> = vec![];
        assert!(!next_combination(&mut empty, 5));
    }

    #[test]
    fn witness_instance_closes_at_root() {
        let inst = ProblemInstance::new(DenseMatrix::identity(2), 1, 0, 1.0, 1.0).unwrap();
        let r = branch_and_bound(&inst, &BnbOptions::default()).unwrap();
        assert_eq!(r.nodes_explored, 1);
        assert!((r.upper_bound - 1.5).abs() < 1e-9);
        assert!(r.gap <= 0.05);
        assert!(!r.truncated);
    }

    #[test]
    fn full_support_needs_no_branching() {
        let d = gaussian(3, 2);
        let inst = ProblemInstance::new(d, 1, 9, 1.0, 1.0).unwrap();
        let r = branch_and_bound(&inst, &BnbOptions::default()).unwrap();
        assert_eq!(r.nodes_explored, 1);
        let (am, _) = alternating_minimization(&inst, &AmOptions { epsilon: 1e-6, ..AmOptions::default() }).unwrap();
        assert!((r.upper_bound - am.objective).abs() <= 1e-6 * am.objective);
    }

    #[test]
    fn oracle_examples() {
        let d = gaussian(3, 3);
        let inst = ProblemInstance::new(d.clone(), 2, 0, 0.5, 0.5).unwrap();
        let (_, v) = exhaustive_oracle(&inst).unwrap();
        let x = solve_lowrank_subproblem(&d, 2, 0.5, SvdMode::Exact).unwrap();
        let direct = d.sub(&x).frobenius_norm_sq() + 0.5 * x.frobenius_norm_sq();
        assert!((v - direct).abs() < 1e-9);

        let d2 = gaussian(2, 4);
        let inst = ProblemInstance::new(d2, 1, 4, 1.0, 1.0).unwrap();
        let (_, v) = exhaustive_oracle(&inst).unwrap();
        let (am, _) = alternating_minimization(&inst, &AmOptions { epsilon: 1e-10, ..AmOptions::default() }).unwrap();
        assert!((v - am.objective).abs() <= 1e-8 * am.objective);

        let big = ProblemInstance::new(gaussian(10, 1), 1, 5, 1.0, 1.0).unwrap();
        assert!(matches!(exhaustive_oracle(&big), Err(SlrError::GuardExceeded { .. })));
    }

    #[test]
    fn oracle_is_minimum_over_patterns() {
        let d = gaussian(3, 5);
        let inst = ProblemInstance::new(d, 1, 2, 1.0, 1.0).unwrap();
        let (_, v) = exhaustive_oracle(&inst).unwrap();
        let mut c = vec![0usize, 1];
        loop {
            let ones: Vec<Cell> = c.iter().map(|&x| (x / 3, x % 3)).collect();
            let p = SparsityPattern::from_sets(3, &[], &ones).unwrap();
            let (sol, _) = alternating_minimization(&inst, &AmOptions::default().with_pattern(p)).unwrap();
            assert!(v <= sol.objective + 1e-9);
            if !next_combination(&mut c, 9) {
                break;
            }
        }
    }

    #[test]
    fn small_instance_matches_oracle() {
        let d = gaussian(3, 21).scale(2.0);
        let inst = ProblemInstance::new(d, 1, 2, 0.5, 0.5).unwrap();
        let (_, opt) = exhaustive_oracle(&inst).unwrap();
        let opts = BnbOptions { epsilon: 0.01, ..BnbOptions::default() };
        let r = branch_and_bound(&inst, &opts).unwrap();
        assert!(r.upper_bound <= opt * 1.01 + 1e-9, "{} vs {opt}", r.upper_bound);
        assert!(r.lower_bound <= opt + 1e-4 * (1.0 + opt));
        assert!(r.nodes_explored as u128 <= 2 * binomial(9, 2) - 1);
        assert!(r.incumbent.feasible);
        for w in r.bound_history.windows(2) {
            assert!(w[1].upper_bound <= w[0].upper_bound);
            assert!(w[1].lower_bound >= w[0].lower_bound);
        }
        for e in &r.node_log {
            if e.action == NodeAction::Pruned {
                assert!(e.lower_bound >= e.upper_bound);
            }
        }
    }

    #[test]
    fn node_limit_truncates() {
        let d = gaussian(3, 21).scale(2.0);
        let inst = ProblemInstance::new(d, 1, 2, 0.5, 0.5).unwrap();
        let opts = BnbOptions { epsilon: 0.0, node_limit: 1, ..BnbOptions::default() };
        let r = branch_and_bound(&inst, &opts).unwrap();
        assert!(r.truncated);
        assert_eq!(r.nodes_explored, 1);
    }

    #[test]
    fn epsilon_one_stops_at_root() {
        let d = gaussian(3, 22);
        let inst = ProblemInstance::new(d, 1, 2, 0.5, 0.5).unwrap();
        let r = branch_and_bound(&inst, &BnbOptions { epsilon: 1.0, ..BnbOptions::default() }).unwrap();
        assert_eq!(r.nodes_explored, 1);
    }
}
