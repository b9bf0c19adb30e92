//! Solvers for multi-marginal optimal transport problems whose cost
//! decomposes over a graph.
//!
//! The crate provides three entropically regularized solvers at different
//! levels of structure exploitation:
//!
//! * [`mot_global`]: scaling iterations on the full cost tensor, plus
//!   belief-propagation scaling on a junction tree of the cost graph;
//! * [`tree_local`]: per-edge scaling for costs that decompose over the
//!   edges of a tree, with marginal constraints on a subset of nodes;
//! * [`graph_local`]: per-separator scaling on a modified junction tree,
//!   covering graphs beyond trees.
//!
//! Supporting modules: [`tensor`] (dense labeled tensors), [`mat`] (small
//! dense matrices), [`graph`] (tree/junction-tree structures and their
//! validators), [`rounding`] (projection of approximate plans to exact
//! feasibility), and [`problems`] (benchmark problem generators).

pub mod error;
pub mod graph;
pub mod graph_local;
pub mod mat;
pub mod mot_global;
pub mod problems;
pub mod report;
pub mod rounding;
pub mod tensor;
pub mod tree_local;

pub use error::{Error, Result};
