//! Benchmark sweeps over barycenter instances.
//!
//! A sweep fixes one of (grid size d, edge count |E|) and varies the
//! other, repeating each point over a list of seeds and recording the
//! iteration count of every requested solver. Iteration counts are the
//! quantity of interest: the local solvers count one block update per
//! iteration, the global scaling loop counts one constrained-clique
//! projection, and the comparison between the two is exactly the ratio
//! the bound columns predict.
//!
//! Every row carries three reference columns: the a-priori iteration
//! bound 2 + 88|E|C_∞/(δ′ε) evaluated at the run's own parameters, and
//! two scaling laws for eyeballing trends — |E|²C_∞²·log d/δ² for the
//! local solver and |E||Γ|²C_∞²·log d/δ² for global scaling (for these
//! star instances |Γ| = |E|). The tree diameter is reported alongside
//! since the prior art's rates are stated in terms of it.

use anyhow::{bail, ensure, Result};
use graphot_core::graph::TreeGraph;
use graphot_core::mot_global::{isbp, sinkhorn_full, SweepOrder};
use graphot_core::problems::{
    barycenter_problem, tree_as_graph_local, tree_as_mot, GridSpec, MarginalGen,
};
use graphot_core::tree_local::{
    self, iteration_bound, recipe_epsilon, recipe_tolerance, TreeSolverOptions,
};
use graphot_core::{graph_local, report::SolveReport};

use crate::spec::{Family, Schedule, SolverKind, SpecFile, SweepAxis};

/// A fully resolved sweep plan.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub points: Vec<usize>,
    pub fixed: usize,
    pub seeds: Vec<u64>,
    pub solvers: Vec<SolverKind>,
    pub delta: f64,
    /// Explicit ε override; the δ recipe otherwise.
    pub epsilon: Option<f64>,
    /// Explicit δ′ override; the C_∞ recipe otherwise.
    pub delta_prime: Option<f64>,
    pub max_iter: usize,
    pub schedule: SweepOrder,
    pub threads: usize,
}

/// One output row: a (parameter point, solver) pair aggregated over seeds.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub family: &'static str,
    pub sweep: SweepAxis,
    /// The swept value (d or |E| depending on `sweep`).
    pub x: usize,
    pub d: usize,
    pub n_edges: usize,
    pub solver: SolverKind,
    pub seeds: Vec<u64>,
    pub per_seed_iterations: Vec<usize>,
    pub mean_iterations: f64,
    pub converged_all: bool,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub c_inf: f64,
    pub tree_bound_iterations: f64,
    pub tree_bound_scale: f64,
    pub global_bound_scale: f64,
    pub diameter: usize,
}

/// Extract a sweep plan from a spec file's `[bench]` section.
pub fn sweep_from_spec(file: &SpecFile) -> Result<SweepConfig> {
    let b = file
        .bench
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("bench needs a [bench] section in the spec"))?;
    ensure!(
        file.problem.family == Family::Barycenter,
        "benchmark sweeps cover the barycenter family; got another family"
    );
    ensure!(!b.points.is_empty(), "bench.points must be non-empty");
    ensure!(b.fixed >= 1, "bench.fixed must be at least 1");
    let seeds = b.seeds.clone().unwrap_or_else(|| (0..5).collect());
    ensure!(!seeds.is_empty(), "bench.seeds must be non-empty");
    let solvers = b
        .solvers
        .clone()
        .unwrap_or_else(|| vec![SolverKind::TreeLocal, SolverKind::GlobalIsbp]);
    ensure!(!solvers.is_empty(), "bench.solvers must be non-empty");
    let s = &file.solver;
    Ok(SweepConfig {
        axis: b.sweep,
        points: b.points.clone(),
        fixed: b.fixed,
        seeds,
        solvers,
        delta: s.delta.unwrap_or(0.2),
        epsilon: s.epsilon,
        delta_prime: s.delta_prime,
        max_iter: s.max_iter.unwrap_or(100_000),
        schedule: match s.schedule.unwrap_or(Schedule::RoundRobin) {
            Schedule::RoundRobin => SweepOrder::RoundRobin,
            Schedule::Random => SweepOrder::Random(s.seed.unwrap_or(0)),
        },
        threads: s.threads.unwrap_or(1),
    })
}

/// Longest node-to-node distance in a tree, by eccentricity doubling:
/// a farthest node from an arbitrary start is an endpoint of a longest
/// path.
pub fn tree_diameter(tree: &TreeGraph) -> usize {
    let far = |start: usize| -> (usize, usize) {
        let mut dist = std::collections::BTreeMap::from([(start, 0usize)]);
        let mut queue = std::collections::VecDeque::from([start]);
        let mut best = (start, 0);
        while let Some(v) = queue.pop_front() {
            let dv = dist[&v];
            if dv > best.1 {
                best = (v, dv);
            }
            for &w in tree.neighbors(v) {
                if !dist.contains_key(&w) {
                    dist.insert(w, dv + 1);
                    queue.push_back(w);
                }
            }
        }
        best
    };
    match tree.nodes().first() {
        Some(&s) => far(far(s).0).1,
        None => 0,
    }
}

fn run_one(
    cfg: &SweepConfig,
    solver: SolverKind,
    d: usize,
    n_edges: usize,
    seed: u64,
) -> Result<(SolveReport, f64, f64, f64, usize)> {
    let grid = GridSpec::unit(d);
    let eps = cfg
        .epsilon
        .unwrap_or_else(|| recipe_epsilon(cfg.delta, n_edges, d));
    let tree = barycenter_problem(n_edges, &grid, &MarginalGen::new(seed), eps)?;
    let tol = cfg
        .delta_prime
        .unwrap_or_else(|| recipe_tolerance(cfg.delta, tree.c_inf()));
    let c_inf = tree.c_inf();
    let diameter = tree_diameter(tree.tree());
    let report = match solver {
        SolverKind::TreeLocal => {
            tree_local::solve(
                &tree,
                &TreeSolverOptions {
                    tol,
                    max_iter: cfg.max_iter,
                    threads: cfg.threads,
                },
            )?
            .report
        }
        SolverKind::GlobalIsbp => {
            let (mot, jt) = tree_as_mot(&tree)?;
            isbp(&mot, &jt, cfg.schedule, tol, cfg.max_iter)?.report
        }
        SolverKind::GraphLocal => {
            let gl = tree_as_graph_local(&tree)?;
            graph_local::solve(
                &gl,
                &TreeSolverOptions {
                    tol,
                    max_iter: cfg.max_iter,
                    threads: cfg.threads,
                },
            )?
            .report
        }
        SolverKind::Dense => {
            let (mot, _) = tree_as_mot(&tree)?;
            sinkhorn_full(&mot, tol, cfg.max_iter)?.1
        }
    };
    Ok((report, eps, tol, c_inf, diameter))
}

/// Run a sweep: points in order, solvers in order, seeds in order, all
/// sequential, so the output is deterministic.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &x in &cfg.points {
        let (d, n_edges) = match cfg.axis {
            SweepAxis::D => (x, cfg.fixed),
            SweepAxis::Edges => (cfg.fixed, x),
        };
        if n_edges < 2 {
            bail!("a barycenter sweep needs at least two edges, got {n_edges}");
        }
        for &solver in &cfg.solvers {
            let mut per_seed = Vec::with_capacity(cfg.seeds.len());
            let mut converged_all = true;
            let mut meta: Option<(f64, f64, f64, usize)> = None;
            for &seed in &cfg.seeds {
                let (report, eps, tol, c_inf, diameter) = run_one(cfg, solver, d, n_edges, seed)?;
                per_seed.push(report.iterations);
                converged_all &= report.converged;
                // costs depend on the grid only, so ε/δ′/C_∞ agree across
                // seeds; keep the first
                meta.get_or_insert((eps, tol, c_inf, diameter));
            }
            let (epsilon, delta_prime, c_inf, diameter) = meta.expect("at least one seed ran");
            let mean = per_seed.iter().sum::<usize>() as f64 / per_seed.len() as f64;
            let ln_d = (d.max(2) as f64).ln();
            let e = n_edges as f64;
            rows.push(BenchRow {
                family: "barycenter",
                sweep: cfg.axis,
                x,
                d,
                n_edges,
                solver,
                seeds: cfg.seeds.clone(),
                per_seed_iterations: per_seed,
                mean_iterations: mean,
                converged_all,
                epsilon,
                delta: cfg.delta,
                delta_prime,
                c_inf,
                tree_bound_iterations: iteration_bound(n_edges, c_inf, delta_prime, epsilon),
                tree_bound_scale: e * e * c_inf * c_inf * ln_d / (cfg.delta * cfg.delta),
                global_bound_scale: e * e * e * c_inf * c_inf * ln_d / (cfg.delta * cfg.delta),
                diameter,
            });
        }
    }
    Ok(rows)
}
