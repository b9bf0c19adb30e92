//! Library side of the benchmark CLI: problem specification files, CSV
//! output, benchmark sweeps, and a small LP solver used to cross-check the
//! scaling solvers on tiny instances.

pub mod bench;
pub mod lp;
pub mod output;
pub mod spec;
