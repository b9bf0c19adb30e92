//! Problem-specification files.
//!
//! A spec is a TOML document with a `format_version` plus sections
//! `problem`, `grid`, `marginals`, `solver`, `output`, and optionally
//! `custom` (hand-written instances) and `bench` (sweep definitions).
//! Unknown keys are rejected, so a typo cannot silently fall back to a
//! default. Loading splits into two stages: [`load_spec`] parses and
//! checks the schema, [`build`] resolves defaults — ε from the δ recipe,
//! the stopping threshold δ′ from C_∞ — and constructs the solver-ready
//! encodings, running every structural validator on the way.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::Deserialize;

use graphot_core::graph::{JunctionTree, ModifiedJunctionTree, TreeGraph};
use graphot_core::graph_local::GraphLocalProblem;
use graphot_core::mat::Mat;
use graphot_core::mot_global::{MotProblem, SweepOrder, ZeroPolicy};
use graphot_core::problems::{
    barycenter_problem, euler_problem, spline_problem, tree_as_graph_local, tree_as_mot,
    wls_problem, EulerVariant, GridSpec, MarginalGen,
};
use graphot_core::tensor::{AxisLabel, LabeledTensor};
use graphot_core::tree_local::{recipe_epsilon, recipe_tolerance, TreeProblem};

/// The spec format this binary reads.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Barycenter,
    Euler,
    Wls,
    Spline,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    GlobalIsbp,
    TreeLocal,
    GraphLocal,
    Dense,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::GlobalIsbp => "global-isbp",
            SolverKind::TreeLocal => "tree-local",
            SolverKind::GraphLocal => "graph-local",
            SolverKind::Dense => "dense",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    RoundRobin,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceVerbosity {
    Full,
    Summary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Lognormal,
    Explicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Hard,
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroPolicyName {
    Reject,
    Clamp,
}

/// Which parameter a benchmark sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    D,
    Edges,
}

/// Top-level parsed spec file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub format_version: u32,
    pub problem: ProblemSection,
    pub grid: Option<GridSection>,
    /// Velocity grid for the spline family; defaults to `grid`.
    pub grid_v: Option<GridSection>,
    pub marginals: Option<MarginalsSection>,
    pub solver: SolverSection,
    pub output: Option<OutputSection>,
    pub custom: Option<CustomSection>,
    pub bench: Option<BenchSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub family: Family,
    /// Barycenter: number of constrained leaves (= edges of the star).
    pub n_leaves: Option<usize>,
    /// Euler: number of time points; WLS: snapshots; spline: segments.
    pub j: Option<usize>,
    /// Euler: the coupling permutation; defaults to the reversal.
    pub sigma: Option<Vec<usize>>,
    pub variant: Option<VariantName>,
    /// WLS: snapshot times in (0,1); spline: knot times. Defaults to an
    /// even spacing.
    pub times: Option<Vec<f64>>,
    /// WLS endpoint-coupling weight.
    pub alpha: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub d: usize,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl GridSection {
    fn to_grid(&self) -> Result<GridSpec> {
        Ok(GridSpec::new(
            self.d,
            self.lo.unwrap_or(0.0),
            self.hi.unwrap_or(1.0),
        )?)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalsSection {
    pub generator: Option<GeneratorKind>,
    pub seed: Option<u64>,
    pub location: Option<f64>,
    pub scale: Option<f64>,
    /// Explicit marginal vectors, one per constrained node in node order.
    pub vectors: Option<Vec<Vec<f64>>>,
}

impl MarginalsSection {
    fn to_gen(&self) -> Result<MarginalGen> {
        match self.generator.unwrap_or(GeneratorKind::Lognormal) {
            GeneratorKind::Lognormal => {
                ensure!(
                    self.vectors.is_none(),
                    "marginals.vectors is set but the generator is lognormal"
                );
                let scale = self.scale.unwrap_or(1.0);
                ensure!(scale > 0.0, "marginals.scale must be positive, got {scale}");
                Ok(MarginalGen::Lognormal {
                    seed: self.seed.unwrap_or(0),
                    location: self.location.unwrap_or(0.0),
                    scale,
                })
            }
            GeneratorKind::Explicit => {
                ensure!(
                    self.seed.is_none() && self.location.is_none() && self.scale.is_none(),
                    "lognormal parameters are set but the generator is explicit"
                );
                let vs = self
                    .vectors
                    .clone()
                    .ok_or_else(|| anyhow!("explicit marginals need marginals.vectors"))?;
                Ok(MarginalGen::Explicit(vs))
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub kind: SolverKind,
    pub epsilon: Option<f64>,
    /// Target approximation quality; drives the ε and δ′ recipes.
    pub delta: Option<f64>,
    /// Stopping threshold; defaults to δ/(8 C_∞).
    pub delta_prime: Option<f64>,
    pub max_iter: Option<usize>,
    pub schedule: Option<Schedule>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub log_domain: Option<bool>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// CSV destination; standard output when absent.
    pub csv: Option<String>,
    pub trace: Option<TraceVerbosity>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub sweep: SweepAxis,
    /// Swept values: grid sizes for `sweep = "d"`, edge counts for
    /// `sweep = "edges"`.
    pub points: Vec<usize>,
    /// The held-fixed parameter (|E| when sweeping d, d when sweeping |E|).
    pub fixed: usize,
    pub seeds: Option<Vec<u64>>,
    pub solvers: Option<Vec<SolverKind>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    pub tree: Option<CustomTree>,
    pub mot: Option<CustomMot>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomTree {
    pub nodes: Vec<usize>,
    pub edges: Vec<[usize; 2]>,
    pub constrained: Vec<usize>,
    pub costs: Vec<CustomEdgeCost>,
    pub marginals: Vec<CustomNodeMarginal>,
}

/// Row-major cost block for one tree edge `[a, b]` with `a < b`; `rows`
/// is the grid size at `a`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomEdgeCost {
    pub edge: [usize; 2],
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomNodeMarginal {
    pub node: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomMot {
    pub axes: Vec<CustomAxis>,
    pub costs: Vec<CustomTensor>,
    pub marginals: Vec<CustomTensor>,
    pub zero_policy: Option<ZeroPolicyName>,
    /// Junction-tree structure, needed by `global-isbp`: variable sets per
    /// clique, edges between clique indices, constrained clique indices.
    pub cliques: Option<Vec<Vec<usize>>>,
    pub tree_edges: Option<Vec<[usize; 2]>>,
    pub constrained_cliques: Option<Vec<usize>>,
    /// Bipartite structure, needed by `graph-local`: separators, edges as
    /// (clique index, separator index), and per-separator constrained
    /// variable sets. Costs then line up with `cliques` by index.
    pub separators: Option<Vec<Vec<usize>>>,
    pub mjt_edges: Option<Vec<[usize; 2]>>,
    pub constraints: Option<Vec<CustomConstraint>>,
    pub permissive: Option<bool>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomAxis {
    pub label: usize,
    pub size: usize,
}

/// Row-major tensor block over the listed axis labels, in the listed
/// order.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomTensor {
    pub labels: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConstraint {
    pub separator: usize,
    pub gamma: Vec<usize>,
}

/// Command-line values that take precedence over the spec file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub log_domain: bool,
    pub out: Option<String>,
}

/// Fully resolved solver settings.
#[derive(Clone, Debug)]
pub struct ResolvedSolver {
    pub kind: SolverKind,
    pub epsilon: f64,
    pub delta: f64,
    /// Stopping threshold δ′.
    pub tol: f64,
    pub max_iter: usize,
    pub schedule: SweepOrder,
    pub threads: usize,
    pub log_domain: bool,
}

/// The encodings a spec resolves to; only the ones the chosen solver needs
/// are populated.
#[derive(Debug)]
pub struct BuildBundle {
    pub tree: Option<TreeProblem>,
    pub mot: Option<(MotProblem, Option<JunctionTree>)>,
    pub graph_local: Option<GraphLocalProblem>,
}

/// Parse and schema-check a spec file.
pub fn load_spec(path: &Path) -> Result<SpecFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read spec file {}", path.display()))?;
    let file: SpecFile =
        toml::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    ensure!(
        file.format_version == FORMAT_VERSION,
        "unsupported format_version {} (this build reads {FORMAT_VERSION})",
        file.format_version
    );
    Ok(file)
}

/// Fold command-line flags into the parsed spec.
pub fn apply_overrides(file: &mut SpecFile, ov: &Overrides) {
    if let Some(t) = ov.threads {
        file.solver.threads = Some(t);
    }
    if let Some(s) = ov.seed {
        file.solver.seed = Some(s);
        let m = file.marginals.get_or_insert_with(|| MarginalsSection {
            generator: None,
            seed: None,
            location: None,
            scale: None,
            vectors: None,
        });
        if m.generator.unwrap_or(GeneratorKind::Lognormal) == GeneratorKind::Lognormal {
            m.seed = Some(s);
        }
    }
    if let Some(n) = ov.max_iter {
        file.solver.max_iter = Some(n);
    }
    if ov.log_domain {
        file.solver.log_domain = Some(true);
    }
    if let Some(ref p) = ov.out {
        let o = file.output.get_or_insert_with(|| OutputSection {
            csv: None,
            trace: None,
        });
        o.csv = Some(p.clone());
    }
}

fn req<T>(v: &Option<T>, what: &str) -> Result<T>
where
    T: Clone,
{
    v.clone()
        .ok_or_else(|| anyhow!("the spec is missing {what}"))
}

fn grid_of(g: &Option<GridSection>, what: &str) -> Result<GridSpec> {
    g.as_ref()
        .ok_or_else(|| anyhow!("the spec is missing the [{what}] section"))?
        .to_grid()
}

fn gen_of(m: &Option<MarginalsSection>) -> Result<MarginalGen> {
    match m {
        Some(sec) => sec.to_gen(),
        None => Ok(MarginalGen::new(0)),
    }
}

fn kind_mismatch(family: &str, kind: SolverKind, allowed: &str) -> anyhow::Error {
    anyhow!(
        "the {family} family has no {} encoding; pick one of: {allowed}",
        kind.name()
    )
}

/// Resolve defaults and construct the encodings the selected solver runs
/// on. Every structural validator fires here, so a successful build is
/// exactly what `validate` certifies.
pub fn build(file: &SpecFile) -> Result<(BuildBundle, ResolvedSolver)> {
    let s = &file.solver;
    let delta = s.delta.unwrap_or(0.2);
    ensure!(
        delta > 0.0 && delta.is_finite(),
        "solver.delta must be positive, got {delta}"
    );
    if let Some(e) = s.epsilon {
        ensure!(
            e > 0.0 && e.is_finite(),
            "solver.epsilon must be positive, got {e}"
        );
    }
    if let Some(t) = s.delta_prime {
        ensure!(
            t > 0.0 && t.is_finite(),
            "solver.delta_prime must be positive, got {t}"
        );
    }
    let threads = s.threads.unwrap_or(1);
    ensure!(threads >= 1, "solver.threads must be at least 1");

    // ε from the spec or from the recipe δ/(4·terms·log d), where `terms`
    // counts cost blocks and d is the grid size
    let eps_for = |terms: usize, d: usize| -> f64 {
        s.epsilon.unwrap_or_else(|| recipe_epsilon(delta, terms, d))
    };

    let p = &file.problem;
    let bundle = match p.family {
        Family::Barycenter => {
            let grid = grid_of(&file.grid, "grid")?;
            let gen = gen_of(&file.marginals)?;
            let n = req(&p.n_leaves, "problem.n_leaves")?;
            let tree = barycenter_problem(n, &grid, &gen, eps_for(n, grid.d))?;
            match s.kind {
                SolverKind::TreeLocal => BuildBundle {
                    tree: Some(tree),
                    mot: None,
                    graph_local: None,
                },
                SolverKind::GlobalIsbp | SolverKind::Dense => {
                    let (mot, jt) = tree_as_mot(&tree)?;
                    BuildBundle {
                        tree: Some(tree),
                        mot: Some((mot, Some(jt))),
                        graph_local: None,
                    }
                }
                SolverKind::GraphLocal => {
                    let gl = tree_as_graph_local(&tree)?;
                    BuildBundle {
                        tree: Some(tree),
                        mot: None,
                        graph_local: Some(gl),
                    }
                }
            }
        }
        Family::Euler => {
            ensure!(
                file.marginals.is_none(),
                "the euler family fixes uniform marginals; drop the [marginals] section"
            );
            let grid = grid_of(&file.grid, "grid")?;
            let j = req(&p.j, "problem.j")?;
            let sigma = match &p.sigma {
                Some(v) => v.clone(),
                None => (0..grid.d).rev().collect(),
            };
            let variant = match p.variant.unwrap_or(VariantName::Hard) {
                VariantName::Hard => EulerVariant::Hard,
                VariantName::Relaxed => EulerVariant::Relaxed,
            };
            let terms = if variant == EulerVariant::Relaxed {
                j
            } else {
                j - 1
            };
            let b = euler_problem(j, &grid, &sigma, variant, eps_for(terms, grid.d))?;
            match s.kind {
                SolverKind::GlobalIsbp | SolverKind::Dense => BuildBundle {
                    tree: None,
                    mot: Some((b.mot, Some(b.jt))),
                    graph_local: None,
                },
                SolverKind::GraphLocal => {
                    let gl = b.graph_local.ok_or_else(|| {
                        anyhow!(
                            "the hard euler coupling pins a pair marginal, which the \
                             graph-local form cannot host; use variant = \"relaxed\" or \
                             a global solver"
                        )
                    })?;
                    BuildBundle {
                        tree: None,
                        mot: None,
                        graph_local: Some(gl),
                    }
                }
                SolverKind::TreeLocal => {
                    return Err(kind_mismatch(
                        "euler",
                        s.kind,
                        "global-isbp, dense, graph-local",
                    ))
                }
            }
        }
        Family::Wls => {
            let grid = grid_of(&file.grid, "grid")?;
            let gen = gen_of(&file.marginals)?;
            let j = req(&p.j, "problem.j")?;
            let times = match &p.times {
                Some(v) => v.clone(),
                None => (1..=j).map(|i| i as f64 / (j + 1) as f64).collect(),
            };
            let alpha = p.alpha.unwrap_or(1.0);
            let b = wls_problem(j, &times, &grid, &gen, alpha, eps_for(j, grid.d))?;
            match s.kind {
                SolverKind::GlobalIsbp | SolverKind::Dense => BuildBundle {
                    tree: None,
                    mot: Some((b.mot, Some(b.jt))),
                    graph_local: None,
                },
                SolverKind::GraphLocal => BuildBundle {
                    tree: None,
                    mot: None,
                    graph_local: Some(b.graph_local),
                },
                SolverKind::TreeLocal => {
                    return Err(kind_mismatch(
                        "wls",
                        s.kind,
                        "global-isbp, dense, graph-local",
                    ))
                }
            }
        }
        Family::Spline => {
            let grid = grid_of(&file.grid, "grid")?;
            let grid_v = match &file.grid_v {
                Some(g) => g.to_grid()?,
                None => grid,
            };
            let gen = gen_of(&file.marginals)?;
            let j = req(&p.j, "problem.j")?;
            let times = match &p.times {
                Some(v) => v.clone(),
                None => (0..=j).map(|i| i as f64 / j as f64).collect(),
            };
            let b = spline_problem(j, &times, &grid, &grid_v, &gen, eps_for(j, grid.d))?;
            match s.kind {
                SolverKind::GlobalIsbp | SolverKind::Dense => BuildBundle {
                    tree: None,
                    mot: Some((b.mot, Some(b.jt))),
                    graph_local: None,
                },
                SolverKind::GraphLocal => BuildBundle {
                    tree: None,
                    mot: None,
                    graph_local: Some(b.graph_local),
                },
                SolverKind::TreeLocal => {
                    return Err(kind_mismatch(
                        "spline",
                        s.kind,
                        "global-isbp, dense, graph-local",
                    ))
                }
            }
        }
        Family::Custom => {
            let eps = s
                .epsilon
                .ok_or_else(|| anyhow!("custom problems must set solver.epsilon explicitly"))?;
            let c = file
                .custom
                .as_ref()
                .ok_or_else(|| anyhow!("family = \"custom\" needs a [custom] section"))?;
            match s.kind {
                SolverKind::TreeLocal => {
                    let ct = c.tree.as_ref().ok_or_else(|| {
                        anyhow!("tree-local on a custom problem needs [custom.tree]")
                    })?;
                    BuildBundle {
                        tree: Some(build_custom_tree(ct, eps)?),
                        mot: None,
                        graph_local: None,
                    }
                }
                SolverKind::GlobalIsbp | SolverKind::Dense => {
                    let (mot, jt) = match (&c.mot, &c.tree) {
                        (Some(cm), _) => build_custom_mot(cm, eps)?,
                        (None, Some(ct)) => {
                            let tree = build_custom_tree(ct, eps)?;
                            let (m, j) = tree_as_mot(&tree)?;
                            (m, Some(j))
                        }
                        (None, None) => {
                            bail!("a custom problem needs [custom.mot] or [custom.tree]")
                        }
                    };
                    if s.kind == SolverKind::GlobalIsbp {
                        ensure!(
                            jt.is_some(),
                            "global-isbp needs the junction tree: set cliques, \
                             tree_edges, and constrained_cliques in [custom.mot]"
                        );
                    }
                    BuildBundle {
                        tree: None,
                        mot: Some((mot, jt)),
                        graph_local: None,
                    }
                }
                SolverKind::GraphLocal => {
                    let gl = match (&c.mot, &c.tree) {
                        (Some(cm), _) => build_custom_graph_local(cm, eps)?,
                        (None, Some(ct)) => tree_as_graph_local(&build_custom_tree(ct, eps)?)?,
                        (None, None) => {
                            bail!("a custom problem needs [custom.mot] or [custom.tree]")
                        }
                    };
                    BuildBundle {
                        tree: None,
                        mot: None,
                        graph_local: Some(gl),
                    }
                }
            }
        }
    };

    let (epsilon, c_inf) = match s.kind {
        SolverKind::TreeLocal => {
            let t = bundle.tree.as_ref().expect("tree-local builds a tree");
            (t.epsilon(), t.c_inf())
        }
        SolverKind::GlobalIsbp | SolverKind::Dense => {
            let (m, _) = bundle
                .mot
                .as_ref()
                .expect("global solvers build a tensor problem");
            (m.epsilon(), m.c_inf())
        }
        SolverKind::GraphLocal => {
            let g = bundle
                .graph_local
                .as_ref()
                .expect("graph-local builds a coupled problem");
            (g.epsilon(), g.c_inf())
        }
    };
    let tol = s
        .delta_prime
        .unwrap_or_else(|| recipe_tolerance(delta, c_inf));
    let resolved = ResolvedSolver {
        kind: s.kind,
        epsilon,
        delta,
        tol,
        max_iter: s.max_iter.unwrap_or(100_000),
        schedule: match s.schedule.unwrap_or(Schedule::RoundRobin) {
            Schedule::RoundRobin => SweepOrder::RoundRobin,
            Schedule::Random => SweepOrder::Random(s.seed.unwrap_or(0)),
        },
        threads,
        log_domain: s.log_domain.unwrap_or(false),
    };
    Ok((bundle, resolved))
}

fn build_custom_tree(ct: &CustomTree, eps: f64) -> Result<TreeProblem> {
    let tree = TreeGraph::new(
        ct.nodes.clone(),
        ct.edges.iter().map(|&[a, b]| (a, b)).collect(),
        ct.constrained.iter().copied().collect(),
    )?;
    let mut costs = BTreeMap::new();
    for c in &ct.costs {
        let [a, b] = c.edge;
        ensure!(
            a < b,
            "cost edge [{a}, {b}] must list the smaller node first"
        );
        let prev = costs.insert((a, b), Mat::new(c.rows, c.cols, c.values.clone())?);
        ensure!(prev.is_none(), "duplicate cost block for edge [{a}, {b}]");
    }
    let mut marginals = BTreeMap::new();
    for m in &ct.marginals {
        let prev = marginals.insert(m.node, m.values.clone());
        ensure!(prev.is_none(), "duplicate marginal for node {}", m.node);
    }
    Ok(TreeProblem::new(tree, costs, marginals, eps)?)
}

struct AxisTable {
    sizes: BTreeMap<usize, usize>,
}

impl AxisTable {
    fn new(axes: &[CustomAxis]) -> Result<AxisTable> {
        let mut sizes = BTreeMap::new();
        for a in axes {
            let prev = sizes.insert(a.label, a.size);
            ensure!(prev.is_none(), "axis label {} declared twice", a.label);
        }
        Ok(AxisTable { sizes })
    }

    fn frame(&self, labels: &[usize]) -> Result<Vec<(AxisLabel, usize)>> {
        labels
            .iter()
            .map(|&l| {
                let d = self
                    .sizes
                    .get(&l)
                    .ok_or_else(|| anyhow!("tensor references undeclared axis label {l}"))?;
                Ok((AxisLabel(l), *d))
            })
            .collect()
    }

    fn tensor(&self, t: &CustomTensor) -> Result<LabeledTensor> {
        Ok(LabeledTensor::new(
            self.frame(&t.labels)?,
            t.values.clone(),
        )?)
    }

    fn all(&self) -> Vec<(AxisLabel, usize)> {
        self.sizes
            .iter()
            .map(|(&l, &d)| (AxisLabel(l), d))
            .collect()
    }
}

fn build_custom_mot(cm: &CustomMot, eps: f64) -> Result<(MotProblem, Option<JunctionTree>)> {
    let table = AxisTable::new(&cm.axes)?;
    let costs: Vec<LabeledTensor> = cm
        .costs
        .iter()
        .map(|t| table.tensor(t))
        .collect::<Result<_>>()?;
    let marginals: Vec<LabeledTensor> = cm
        .marginals
        .iter()
        .map(|t| table.tensor(t))
        .collect::<Result<_>>()?;
    let zeros = match cm.zero_policy.unwrap_or(ZeroPolicyName::Reject) {
        ZeroPolicyName::Reject => ZeroPolicy::Reject,
        ZeroPolicyName::Clamp => ZeroPolicy::Clamp,
    };
    let mot = MotProblem::new(table.all(), costs, marginals, eps, zeros)?;
    let jt = match (&cm.cliques, &cm.tree_edges, &cm.constrained_cliques) {
        (Some(cl), Some(te), Some(cc)) => {
            let cliques: Vec<BTreeSet<usize>> =
                cl.iter().map(|v| v.iter().copied().collect()).collect();
            let factors: Vec<BTreeSet<usize>> = cm
                .costs
                .iter()
                .chain(&cm.marginals)
                .map(|t| t.labels.iter().copied().collect())
                .collect();
            Some(JunctionTree::new(
                cliques,
                te.iter().map(|&[a, b]| (a, b)).collect(),
                cc.iter().copied().collect(),
                &factors,
            )?)
        }
        (None, None, None) => None,
        _ => bail!(
            "a custom junction tree needs cliques, tree_edges, and \
             constrained_cliques together"
        ),
    };
    Ok((mot, jt))
}

fn build_custom_graph_local(cm: &CustomMot, eps: f64) -> Result<GraphLocalProblem> {
    let table = AxisTable::new(&cm.axes)?;
    let cl = cm
        .cliques
        .as_ref()
        .ok_or_else(|| anyhow!("graph-local needs cliques in [custom.mot]"))?;
    let seps = cm
        .separators
        .as_ref()
        .ok_or_else(|| anyhow!("graph-local needs separators in [custom.mot]"))?;
    let medges = cm
        .mjt_edges
        .as_ref()
        .ok_or_else(|| anyhow!("graph-local needs mjt_edges in [custom.mot]"))?;
    let cons = cm
        .constraints
        .as_ref()
        .ok_or_else(|| anyhow!("graph-local needs constraints in [custom.mot]"))?;
    ensure!(
        cm.costs.len() == cl.len(),
        "graph-local lines costs up with cliques by index: {} cliques but {} cost blocks",
        cl.len(),
        cm.costs.len()
    );

    let cost_cliques: Vec<BTreeSet<usize>> =
        cl.iter().map(|v| v.iter().copied().collect()).collect();
    let separators: Vec<BTreeSet<usize>> =
        seps.iter().map(|v| v.iter().copied().collect()).collect();
    let mut constraints = BTreeMap::new();
    let mut remaining: Vec<Option<&CustomTensor>> = cm.marginals.iter().map(Some).collect();
    let mut marginals: BTreeMap<usize, LabeledTensor> = BTreeMap::new();
    for c in cons {
        let gamma: BTreeSet<usize> = c.gamma.iter().copied().collect();
        let slot = remaining
            .iter_mut()
            .find(|m| {
                m.is_some_and(|t| {
                    let ls: BTreeSet<usize> = t.labels.iter().copied().collect();
                    ls == gamma
                })
            })
            .ok_or_else(|| {
                anyhow!(
                    "no marginal block matches the constraint on separator {} over {:?}",
                    c.separator,
                    c.gamma
                )
            })?;
        let t = slot.take().expect("find returned a live slot");
        marginals.insert(c.separator, table.tensor(t)?);
        let prev = constraints.insert(c.separator, gamma);
        ensure!(
            prev.is_none(),
            "separator {} constrained twice",
            c.separator
        );
    }
    if let Some(unused) = remaining.iter().flatten().next() {
        bail!(
            "marginal block over {:?} matches no constraint",
            unused.labels
        );
    }

    let factors: Vec<BTreeSet<usize>> = cm
        .costs
        .iter()
        .map(|t| t.labels.iter().copied().collect())
        .collect();
    let constraint_sets: Vec<BTreeSet<usize>> = constraints.values().cloned().collect();
    let mjt = ModifiedJunctionTree::new(
        cost_cliques,
        separators,
        medges.iter().map(|&[a, b]| (a, b)).collect(),
        constraints,
        &factors,
        &constraint_sets,
    )?;
    let costs: Vec<LabeledTensor> = cm
        .costs
        .iter()
        .map(|t| table.tensor(t))
        .collect::<Result<_>>()?;
    Ok(GraphLocalProblem::new(
        &table.all(),
        mjt,
        costs,
        marginals,
        eps,
        cm.permissive.unwrap_or(false),
    )?)
}
