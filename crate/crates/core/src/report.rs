//! Solve reports: per-iteration traces plus summary figures, shared by all
//! three solvers so the CLI can serialize any run the same way.

/// One row of a solver trace.
#[derive(Clone, Copy, Debug)]
pub struct IterationRecord {
    /// Iteration counter; row zero describes the initial state.
    pub t: usize,
    /// Feasibility residual (sum of marginal errors in total variation).
    pub residual: f64,
    /// Dual objective at this state.
    pub dual: f64,
    /// Largest deviation of any tracked plan mass from one.
    pub max_mass_dev: f64,
    /// Largest spread (max minus min) of any scaled dual vector, in the
    /// regularized log domain.
    pub max_lambda_range: f64,
    /// Seconds elapsed since the solve started.
    pub elapsed: f64,
}

/// Summary of a solver run.
#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Update steps performed (trace rows minus the initial one).
    pub iterations: usize,
    /// Whether the residual dropped below the requested tolerance.
    pub converged: bool,
    /// A priori iteration bound, when the solver has one for this run.
    pub bound: Option<f64>,
    pub trace: Vec<IterationRecord>,
    /// Transport cost of the (unrounded) plan under the problem costs.
    pub final_cost: f64,
    /// Cost after rounding to exact feasibility, when rounding ran.
    pub rounded_cost: Option<f64>,
    pub threads: usize,
    pub wall_clock: f64,
}

impl SolveReport {
    pub fn last_residual(&self) -> f64 {
        self.trace.last().map(|r| r.residual).unwrap_or(f64::NAN)
    }
}
