//! Error and validation-violation types shared across the crate.
//!
//! Validators report structural problems as `Violation` lists (data, not
//! exceptions) so callers can show all problems at once. Hard errors from
//! numerical kernels use `Error` and carry enough context to locate the
//! offending entry.

use std::fmt;

use crate::tensor::AxisLabel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown axis label {0}")]
    UnknownLabel(AxisLabel),
    #[error("duplicate axis label {0}")]
    DuplicateLabel(AxisLabel),
    #[error("axis {label} has size {left} on one operand and {right} on the other")]
    SizeMismatch {
        label: AxisLabel,
        left: usize,
        right: usize,
    },
    #[error("operands carry different axis label sets: {detail}")]
    LabelMismatch { detail: String },
    #[error("numeric error{}: {reason}", fmt_index(.index))]
    Numeric {
        /// Flat row-major index of the offending entry, when known.
        index: Option<usize>,
        reason: String,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("dense tensor of {size} entries exceeds the cap of {cap}")]
    DenseCapExceeded { size: usize, cap: usize },
    #[error("validation failed:\n{}", fmt_violations(.0))]
    Invalid(Vec<Violation>),
}

fn fmt_index(index: &Option<usize>) -> String {
    match index {
        Some(i) => format!(" at flat index {i}"),
        None => String::new(),
    }
}

fn fmt_violations(vs: &[Violation]) -> String {
    vs.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Which structural rule a validator found broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Connectivity,
    Acyclicity,
    ConstrainedNotLeaf,
    AdjacentConstrained,
    NodeIdentity,
    EdgeEndpoint,
    FamilyPreservation,
    RunningIntersection,
    NotATree,
    CostCliqueNeighborCount,
    BipartiteAlternation,
    InclusionSequence,
    ConstraintPlacement,
    MarginalPositivity,
    MarginalMass,
    CostFiniteness,
    SizeConsistency,
    EpsilonPositive,
    SeparatorGraphBipartite,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Connectivity => "connectivity",
            Rule::Acyclicity => "acyclicity",
            Rule::ConstrainedNotLeaf => "constrained node must be a leaf",
            Rule::AdjacentConstrained => "no edge may join two constrained nodes",
            Rule::NodeIdentity => "node identity",
            Rule::EdgeEndpoint => "edge endpoint",
            Rule::FamilyPreservation => "family preservation",
            Rule::RunningIntersection => "running intersection",
            Rule::NotATree => "structure must be a tree",
            Rule::CostCliqueNeighborCount => {
                "cost clique must have exactly two separator neighbors"
            }
            Rule::BipartiteAlternation => "edges must alternate cost cliques and separators",
            Rule::InclusionSequence => {
                "separator intersections must form a nested inclusion sequence"
            }
            Rule::ConstraintPlacement => "constraint placement",
            Rule::MarginalPositivity => "marginal positivity",
            Rule::MarginalMass => "marginal total mass",
            Rule::CostFiniteness => "cost finiteness",
            Rule::SizeConsistency => "size consistency",
            Rule::EpsilonPositive => "regularization must be positive",
            Rule::SeparatorGraphBipartite => "separator graph must be bipartite",
        };
        f.write_str(s)
    }
}

/// One validation failure: the rule broken plus a human-readable locator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub detail: String,
}

impl Violation {
    pub fn new(rule: Rule, detail: impl Into<String>) -> Self {
        Violation {
            rule,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Turn a violation list into `Ok(())` or `Err(Error::Invalid)`.
pub fn ok_or_invalid(vs: Vec<Violation>) -> Result<()> {
    if vs.is_empty() {
        Ok(())
    } else {
        Err(Error::Invalid(vs))
    }
}
