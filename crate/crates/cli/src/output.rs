//! Deterministic CSV emission.
//!
//! One schema for solve traces, one for benchmark sweeps, both versioned
//! by a leading `format_version` column. Numbers are printed with Rust's
//! shortest round-trip float formatting and rows end in a bare LF, so a
//! run with fixed (spec, seeds, threads) produces byte-identical files.
//! Benchmark rows deliberately carry no wall-clock column — the claims
//! under test are about iteration counts — while solve traces keep
//! elapsed seconds as secondary data.

use graphot_core::report::SolveReport;

use crate::bench::BenchRow;
use crate::spec::{SweepAxis, TraceVerbosity};

pub const SOLVE_HEADER: &str = "format_version,record,iteration,residual,dual,max_mass_dev,\
                                max_lambda_range,elapsed_s,converged,final_cost,rounded_cost,\
                                bound,threads,solver";

pub const BENCH_HEADER: &str = "format_version,family,sweep,x,d,n_edges,solver,seeds,\
                                per_seed_iterations,mean_iterations,converged_all,epsilon,\
                                delta,delta_prime,c_inf,tree_bound_iterations,\
                                tree_bound_scale,global_bound_scale,diameter";

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Render a solve run: the per-iteration trace (unless `Summary`) followed
/// by one summary row repeating the final state plus the run-level fields.
pub fn solve_csv(report: &SolveReport, solver: &str, trace: TraceVerbosity) -> String {
    let mut out = String::with_capacity(64 * (report.trace.len() + 2));
    out.push_str(SOLVE_HEADER);
    out.push('\n');
    if trace == TraceVerbosity::Full {
        for r in &report.trace {
            out.push_str(&format!(
                "1,iteration,{},{},{},{},{},{},,,,,,\n",
                r.t,
                num(r.residual),
                num(r.dual),
                num(r.max_mass_dev),
                num(r.max_lambda_range),
                num(r.elapsed),
            ));
        }
    }
    let (res, dual, mmd, mlr) = match report.trace.last() {
        Some(r) => (
            num(r.residual),
            num(r.dual),
            num(r.max_mass_dev),
            num(r.max_lambda_range),
        ),
        None => (String::new(), String::new(), String::new(), String::new()),
    };
    out.push_str(&format!(
        "1,summary,{},{},{},{},{},{},{},{},{},{},{},{}\n",
        report.iterations,
        res,
        dual,
        mmd,
        mlr,
        num(report.wall_clock),
        report.converged,
        num(report.final_cost),
        opt(report.rounded_cost),
        opt(report.bound),
        report.threads,
        solver,
    ));
    out
}

fn join_u64(xs: &[u64]) -> String {
    xs.iter().map(u64::to_string).collect::<Vec<_>>().join("|")
}

fn join_usize(xs: &[usize]) -> String {
    xs.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("|")
}

/// Render a benchmark sweep, one row per (parameter point, solver).
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::with_capacity(96 * (rows.len() + 1));
    out.push_str(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        let sweep = match r.sweep {
            SweepAxis::D => "d",
            SweepAxis::Edges => "edges",
        };
        out.push_str(&format!(
            "1,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.family,
            sweep,
            r.x,
            r.d,
            r.n_edges,
            r.solver.name(),
            join_u64(&r.seeds),
            join_usize(&r.per_seed_iterations),
            num(r.mean_iterations),
            r.converged_all,
            num(r.epsilon),
            num(r.delta),
            num(r.delta_prime),
            num(r.c_inf),
            num(r.tree_bound_iterations),
            num(r.tree_bound_scale),
            num(r.global_bound_scale),
            r.diameter,
        ));
    }
    out
}
