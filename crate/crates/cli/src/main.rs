//! `graphot` — solve, bench, and validate entry points.
//!
//! Exit codes: 0 on success (solver converged / sweep completed / spec
//! valid), 1 on any validation or I/O error, 2 when the solver hit its
//! iteration cap (the partial trace is still written). Diagnostics go to
//! standard error; CSV data goes to the `--out` / `output.csv` path or to
//! standard output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use graphot::bench::{run_sweep, sweep_from_spec};
use graphot::output::{bench_csv, solve_csv};
use graphot::spec::{
    apply_overrides, build, load_spec, BuildBundle, Overrides, ResolvedSolver, SolverKind,
    SpecFile, TraceVerbosity,
};
use graphot_core::graph_local;
use graphot_core::mot_global::{isbp, sinkhorn_full, sinkhorn_full_log};
use graphot_core::report::SolveReport;
use graphot_core::rounding::round_tree;
use graphot_core::tree_local::{self, TreeSolverOptions};

#[derive(Parser)]
#[command(
    name = "graphot",
    version,
    about = "Benchmark CLI for graph-structured multi-marginal optimal transport"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the problem described by a spec file and emit the trace CSV.
    Solve(RunArgs),
    /// Run the sweep in a spec file; one CSV row per (point, solver).
    Bench(RunArgs),
    /// Check a spec file and its encodings without solving.
    Validate {
        /// Path to the problem spec (TOML).
        spec: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to the problem spec (TOML).
    spec: PathBuf,
    /// Worker threads for the block-parallel solvers.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed override for marginal generation and random schedules.
    #[arg(long)]
    seed: Option<u64>,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<String>,
    /// Dense solver only: run the scaling loop in the log domain.
    #[arg(long)]
    log_domain: bool,
    /// Iteration cap override.
    #[arg(long)]
    max_iter: Option<usize>,
}

const EXIT_OK: u8 = 0;
const EXIT_INVALID: u8 = 1;
const EXIT_MAX_ITER: u8 = 2;

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn dispatch() -> Result<u8> {
    match Cli::parse().cmd {
        Cmd::Solve(args) => cmd_solve(&args),
        Cmd::Bench(args) => cmd_bench(&args),
        Cmd::Validate { spec } => cmd_validate(&spec),
    }
}

fn loaded(args: &RunArgs) -> Result<SpecFile> {
    let mut file = load_spec(&args.spec)?;
    apply_overrides(
        &mut file,
        &Overrides {
            threads: args.threads,
            seed: args.seed,
            max_iter: args.max_iter,
            log_domain: args.log_domain,
            out: args.out.clone(),
        },
    );
    Ok(file)
}

fn emit(file: &SpecFile, csv: &str) -> Result<()> {
    match file.output.as_ref().and_then(|o| o.csv.as_deref()) {
        Some(path) => {
            std::fs::write(path, csv).with_context(|| format!("cannot write {path}"))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_solve(args: &RunArgs) -> Result<u8> {
    let file = loaded(args)?;
    let (bundle, rs) = build(&file)?;
    if rs.log_domain && rs.kind != SolverKind::Dense {
        eprintln!(
            "note: --log-domain applies to the dense solver; ignored for {}",
            rs.kind.name()
        );
    }
    let report = run_solver(&bundle, &rs)?;
    let trace = file
        .output
        .as_ref()
        .and_then(|o| o.trace)
        .unwrap_or(TraceVerbosity::Full);
    emit(&file, &solve_csv(&report, rs.kind.name(), trace))?;
    if !report.converged {
        eprintln!(
            "did not converge within {} iterations (residual {:.3e})",
            report.iterations,
            report.last_residual()
        );
        return Ok(EXIT_MAX_ITER);
    }
    Ok(EXIT_OK)
}

fn run_solver(bundle: &BuildBundle, rs: &ResolvedSolver) -> Result<SolveReport> {
    let opts = TreeSolverOptions {
        tol: rs.tol,
        max_iter: rs.max_iter,
        threads: rs.threads,
    };
    Ok(match rs.kind {
        SolverKind::TreeLocal => {
            let p = bundle.tree.as_ref().expect("build populated the tree");
            let out = tree_local::solve(p, &opts)?;
            let mut report = out.report;
            if report.converged {
                // the final half-sweep leaves one side exactly feasible;
                // rounding repairs the other
                if let Some(side) = out.mismatch_side {
                    let (_, rr) = round_tree(p, &out.plans, side, &out.partition);
                    report.rounded_cost = Some(rr.cost_after);
                }
            }
            report
        }
        SolverKind::GraphLocal => {
            let p = bundle
                .graph_local
                .as_ref()
                .expect("build populated the coupled problem");
            graph_local::solve(p, &opts)?.report
        }
        SolverKind::GlobalIsbp => {
            if rs.threads > 1 {
                eprintln!("note: global-isbp is sequential; --threads ignored");
            }
            let (mot, jt) = bundle
                .mot
                .as_ref()
                .expect("build populated the tensor problem");
            let jt = jt.as_ref().expect("build checked the junction tree");
            isbp(mot, jt, rs.schedule, rs.tol, rs.max_iter)?.report
        }
        SolverKind::Dense => {
            let (mot, _) = bundle
                .mot
                .as_ref()
                .expect("build populated the tensor problem");
            let (_, report) = if rs.log_domain {
                sinkhorn_full_log(mot, rs.tol, rs.max_iter)?
            } else {
                sinkhorn_full(mot, rs.tol, rs.max_iter)?
            };
            report
        }
    })
}

fn cmd_bench(args: &RunArgs) -> Result<u8> {
    let file = loaded(args)?;
    let cfg = sweep_from_spec(&file)?;
    let rows = run_sweep(&cfg)?;
    emit(&file, &bench_csv(&rows))?;
    Ok(EXIT_OK)
}

fn cmd_validate(spec: &Path) -> Result<u8> {
    let file = load_spec(spec)?;
    if file.bench.is_some() {
        sweep_from_spec(&file)?;
        eprintln!("spec ok: benchmark sweep");
        return Ok(EXIT_OK);
    }
    let (_, rs) = build(&file)?;
    eprintln!("spec ok: solver {}", rs.kind.name());
    Ok(EXIT_OK)
}
