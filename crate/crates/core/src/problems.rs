//! Builders for the benchmark problem families: Wasserstein barycenters on
//! a star, generalized Euler flows, Wasserstein least squares, and
//! Wasserstein splines.
//!
//! All families live on uniform 1-D grids. A grid of `d` cells over
//! `[lo, hi]` is represented by its cell midpoints, and transport costs are
//! squared Euclidean distances between midpoints (or the family's closed
//! cost formula evaluated at them). Constrained marginals are either
//! uniform (Euler) or sampled from a log-normal density with a seeded
//! random location shift and normalized to unit mass.
//!
//! Each builder returns fully validated problem instances:
//!
//! * [`barycenter_problem`] — the star-shaped pairwise problem
//!   `min Σ_j ⟨C_{(0,j)}, B_{(0,j)}⟩` with constrained leaves, as a
//!   [`TreeProblem`].
//! * [`euler_problem`] — the time-discretized flow with uniform marginals
//!   and cost `Σ_j ‖x_j − x_{j+1}‖²`; the `Hard` variant carries the
//!   permutation coupling `P_{1,J}(𝐁) = Π_σ/d` as a bi-marginal constraint,
//!   the `Relaxed` variant replaces it with the extra cost term
//!   `‖x_{σ(1)} − x_J‖²`.
//! * [`wls_problem`] — least squares in Wasserstein space,
//!   `Σ_j ‖x_j − (1−t_j)x_0 − t_j x_{J+1}‖² + α‖x_0 − x_{J+1}‖²`, with the
//!   penalty split evenly over the cliques; hub-shaped coupled form plus
//!   the flat multi-marginal form.
//! * [`spline_problem`] — cubic splines over distributions in phase space,
//!   with one cost clique per time segment over
//!   `(x_j, x_{j+1}, v_j, v_{j+1})`.
//!
//! Euler, least squares, and splines come in two encodings bundled per
//! build: a [`MotProblem`] with a junction tree whose constrained leaves
//! carry the marginals (driving the global-regularization solver), and —
//! where applicable — a [`GraphLocalProblem`] over the modified junction
//! tree with constraints embedded in separators (driving the local one).
//! [`tree_as_graph_local`] re-encodes any [`TreeProblem`] in the latter
//! form, one singleton separator per node, which reproduces the tree
//! solver step for step.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{JunctionTree, ModifiedJunctionTree, TreeGraph};
use crate::graph_local::GraphLocalProblem;
use crate::mat::Mat;
use crate::mot_global::{MotProblem, ZeroPolicy};
use crate::tensor::{AxisLabel, LabeledTensor};
use crate::tree_local::TreeProblem;

/// Uniform 1-D grid of `d` cells over `[lo, hi]`, represented by its cell
/// midpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub d: usize,
    pub lo: f64,
    pub hi: f64,
}

impl GridSpec {
    /// `d` cells over the unit interval.
    pub fn unit(d: usize) -> GridSpec {
        GridSpec {
            d,
            lo: 0.0,
            hi: 1.0,
        }
    }

    pub fn new(d: usize, lo: f64, hi: f64) -> Result<GridSpec> {
        let g = GridSpec { d, lo, hi };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Contract("a grid needs at least one cell".into()));
        }
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Contract(format!(
                "grid interval [{}, {}] is not a proper interval",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Cell midpoints `lo + (i + ½)(hi − lo)/d`, ascending.
    pub fn points(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.d as f64;
        (0..self.d)
            .map(|i| self.lo + (i as f64 + 0.5) * w)
            .collect()
    }
}

/// Source of the constrained marginals.
#[derive(Clone, Debug, PartialEq)]
pub enum MarginalGen {
    /// Seeded log-normal density with location `location + s` — where `s`
    /// is drawn uniformly from `[−0.5, 0.5]`, independently per marginal —
    /// evaluated at the grid points and normalized to unit mass.
    Lognormal {
        seed: u64,
        location: f64,
        scale: f64,
    },
    /// Caller-supplied vectors, one per marginal; each must match the grid
    /// size and be strictly positive, and is normalized to unit mass.
    Explicit(Vec<Vec<f64>>),
}

impl MarginalGen {
    /// Log-normal generator with the default location 0 and scale 1.
    pub fn new(seed: u64) -> MarginalGen {
        MarginalGen::Lognormal {
            seed,
            location: 0.0,
            scale: 1.0,
        }
    }
}

/// `count` strictly positive unit-mass vectors over the grid, deterministic
/// per generator. A log-normal generator needs a strictly positive grid,
/// since the density vanishes elsewhere.
pub fn generate_marginals(
    gen: &MarginalGen,
    grid: &GridSpec,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    grid.check()?;
    match gen {
        MarginalGen::Lognormal {
            seed,
            location,
            scale,
        } => {
            if !(*scale > 0.0) || !scale.is_finite() || !location.is_finite() {
                return Err(Error::Contract(format!(
                    "log-normal parameters (location {location}, scale {scale}) are out of range"
                )));
            }
            let pts = grid.points();
            if pts[0] <= 0.0 {
                return Err(Error::Contract(
                    "log-normal marginals need a strictly positive grid".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let loc = location + rng.gen_range(-0.5..0.5);
                let raw: Vec<f64> = pts
                    .iter()
                    .map(|&x| {
                        let z = (x.ln() - loc) / scale;
                        (-0.5 * z * z).exp() / (x * scale)
                    })
                    .collect();
                let mass: f64 = raw.iter().sum();
                out.push(raw.into_iter().map(|v| v / mass).collect());
            }
            Ok(out)
        }
        MarginalGen::Explicit(vectors) => {
            if vectors.len() != count {
                return Err(Error::Contract(format!(
                    "expected {count} explicit marginals, got {}",
                    vectors.len()
                )));
            }
            let mut out = Vec::with_capacity(count);
            for (i, v) in vectors.iter().enumerate() {
                if v.len() != grid.d {
                    return Err(Error::Contract(format!(
                        "explicit marginal {i} has {} entries, expected {}",
                        v.len(),
                        grid.d
                    )));
                }
                if let Some(j) = v.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
                    return Err(Error::Contract(format!(
                        "explicit marginal {i} has a non-positive entry at index {j}"
                    )));
                }
                let mass: f64 = v.iter().sum();
                out.push(v.iter().map(|x| x / mass).collect());
            }
            Ok(out)
        }
    }
}

/// Squared distances between the midpoints of two grids.
fn sq_dist(a: &[f64], b: &[f64]) -> Mat {
    Mat::from_fn(a.len(), b.len(), |i, j| (a[i] - b[j]).powi(2))
}

/// Star-shaped barycenter problem: free center node `0`, constrained
/// leaves `1..=n_leaves` with generated marginals, squared-distance costs
/// on every spoke.
pub fn barycenter_problem(
    n_leaves: usize,
    grid: &GridSpec,
    gen: &MarginalGen,
    epsilon: f64,
) -> Result<TreeProblem> {
    if n_leaves < 2 {
        return Err(Error::Contract(format!(
            "a barycenter needs at least two leaves, got {n_leaves}"
        )));
    }
    grid.check()?;
    let pts = grid.points();
    let tree = TreeGraph::new(
        (0..=n_leaves).collect(),
        (1..=n_leaves).map(|j| (0, j)).collect(),
        (1..=n_leaves).collect(),
    )?;
    let costs: BTreeMap<(usize, usize), Mat> = (1..=n_leaves)
        .map(|j| ((0, j), sq_dist(&pts, &pts)))
        .collect();
    let mus = generate_marginals(gen, grid, n_leaves)?;
    let marginals: BTreeMap<usize, Vec<f64>> = mus
        .into_iter()
        .enumerate()
        .map(|(i, m)| (i + 1, m))
        .collect();
    TreeProblem::new(tree, costs, marginals, epsilon)
}

/// Which form of the Euler flow's endpoint coupling to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EulerVariant {
    /// Bi-marginal constraint `P_{1,J}(𝐁) = Π_σ/d`. Exposed through the
    /// flat form only; its zeros rule out the strictly positive marginals
    /// of the coupled form.
    Hard,
    /// Extra cost term `‖x_{σ(1)} − x_J‖²` instead of the constraint.
    Relaxed,
}

/// A built Euler flow instance. Variables are labeled `1..=J`.
#[derive(Clone, Debug)]
pub struct EulerBuild {
    pub mot: MotProblem,
    /// Junction tree with cliques `{1, m, m+1}` and constrained leaves.
    pub jt: JunctionTree,
    /// Coupled form over the modified junction tree; `Relaxed` only.
    pub graph_local: Option<GraphLocalProblem>,
}

/// Euler flow over `j_modes` time points on the grid, with terminal
/// permutation `sigma` (a permutation of `0..d`, acting on grid indices).
pub fn euler_problem(
    j_modes: usize,
    grid: &GridSpec,
    sigma: &[usize],
    variant: EulerVariant,
    epsilon: f64,
) -> Result<EulerBuild> {
    if j_modes < 3 {
        return Err(Error::Contract(format!(
            "the Euler chain needs at least three time points, got {j_modes}"
        )));
    }
    grid.check()?;
    let d = grid.d;
    if sigma.len() != d || {
        let mut seen = vec![false; d];
        sigma
            .iter()
            .any(|&s| s >= d || std::mem::replace(&mut seen[s], true))
    } {
        return Err(Error::Contract(format!(
            "sigma must be a permutation of 0..{d}"
        )));
    }
    let jn = j_modes;
    let pts = grid.points();
    let l = AxisLabel;
    let axes: Vec<(AxisLabel, usize)> = (1..=jn).map(|v| (l(v), d)).collect();
    let pair_cost = |a: usize, b: usize| {
        LabeledTensor::from_fn(vec![(l(a), d), (l(b), d)], |ix| {
            (pts[ix[0]] - pts[ix[1]]).powi(2)
        })
    };
    let sigma_cost = LabeledTensor::from_fn(vec![(l(1), d), (l(jn), d)], |ix| {
        (pts[sigma[ix[0]]] - pts[ix[1]]).powi(2)
    })?;
    let uniform = |v: usize| LabeledTensor::new(vec![(l(v), d)], vec![1.0 / d as f64; d]);

    // flat multi-marginal form
    let mut mot_costs: Vec<LabeledTensor> = (1..jn)
        .map(|m| pair_cost(m, m + 1))
        .collect::<Result<_>>()?;
    let (mot_marginals, zeros) = match variant {
        EulerVariant::Hard => {
            let mut ms: Vec<LabeledTensor> = (2..jn).map(uniform).collect::<Result<_>>()?;
            ms.push(LabeledTensor::from_fn(vec![(l(1), d), (l(jn), d)], |ix| {
                if sigma[ix[0]] == ix[1] {
                    1.0 / d as f64
                } else {
                    0.0
                }
            })?);
            (ms, ZeroPolicy::Clamp)
        }
        EulerVariant::Relaxed => {
            mot_costs.push(sigma_cost.clone());
            let ms: Vec<LabeledTensor> = (1..=jn).map(uniform).collect::<Result<_>>()?;
            (ms, ZeroPolicy::Reject)
        }
    };
    let factor_sets: Vec<BTreeSet<usize>> = mot_costs
        .iter()
        .chain(mot_marginals.iter())
        .map(|t| t.labels().iter().map(|a| a.0).collect())
        .collect();
    let mot = MotProblem::new(axes.clone(), mot_costs, mot_marginals, epsilon, zeros)?;

    // junction tree: the chain {1, m, m+1} plus one constrained leaf per
    // marginal
    let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<usize>>();
    let mut cliques: Vec<BTreeSet<usize>> = (0..jn - 2).map(|q| set(&[1, q + 2, q + 3])).collect();
    let mut edges: Vec<(usize, usize)> = (0..jn.saturating_sub(3)).map(|q| (q, q + 1)).collect();
    let mut constrained = BTreeSet::new();
    let mut add_leaf = |vars: &[usize], host: usize, cliques: &mut Vec<BTreeSet<usize>>| {
        let idx = cliques.len();
        cliques.push(set(vars));
        edges.push((host, idx));
        constrained.insert(idx);
    };
    match variant {
        EulerVariant::Hard => {
            for m in 2..jn {
                add_leaf(&[m], m - 2, &mut cliques);
            }
            add_leaf(&[1, jn], jn - 3, &mut cliques);
        }
        EulerVariant::Relaxed => {
            add_leaf(&[1], 0, &mut cliques);
            for m in 2..jn {
                add_leaf(&[m], m - 2, &mut cliques);
            }
            add_leaf(&[jn], jn - 3, &mut cliques);
        }
    }
    let jt = JunctionTree::new(cliques, edges, constrained, &factor_sets)?;

    // coupled form over the modified junction tree (relaxed only): chain
    // cliques, an extra clique {1, J} carrying the relaxation cost, and
    // constraints embedded as {2} on the first separator, {m} inside each
    // {1, m}, {1} inside {1, J}, and {J} on the final leaf separator
    let graph_local = match variant {
        EulerVariant::Hard => None,
        EulerVariant::Relaxed => {
            let mut cost_cliques: Vec<BTreeSet<usize>> =
                (0..jn - 2).map(|q| set(&[1, q + 2, q + 3])).collect();
            cost_cliques.push(set(&[1, jn]));
            let mut seps: Vec<BTreeSet<usize>> = vec![set(&[2])];
            for m in 3..jn {
                seps.push(set(&[1, m]));
            }
            seps.push(set(&[1, jn]));
            seps.push(set(&[jn]));
            let mut medges = Vec::new();
            for q in 0..jn - 2 {
                let left = if q == 0 { 0 } else { q };
                let right = if q == jn - 3 { jn - 2 } else { q + 1 };
                medges.push((q, left));
                medges.push((q, right));
            }
            medges.push((jn - 2, jn - 2));
            medges.push((jn - 2, jn - 1));
            let mut constraints: BTreeMap<usize, BTreeSet<usize>> =
                BTreeMap::from([(0, set(&[2])), (jn - 2, set(&[1])), (jn - 1, set(&[jn]))]);
            for m in 3..jn {
                constraints.insert(m - 2, set(&[m]));
            }
            let mjt = ModifiedJunctionTree::new_unchecked(cost_cliques, seps, medges, constraints);
            let mut ccosts = vec![LabeledTensor::from_fn(
                vec![(l(1), d), (l(2), d), (l(3), d)],
                |ix| (pts[ix[0]] - pts[ix[1]]).powi(2) + (pts[ix[1]] - pts[ix[2]]).powi(2),
            )?];
            for m in 3..jn {
                ccosts.push(pair_cost(m, m + 1)?);
            }
            ccosts.push(sigma_cost);
            let marginals: BTreeMap<usize, LabeledTensor> = [
                (0usize, uniform(2)?),
                (jn - 2, uniform(1)?),
                (jn - 1, uniform(jn)?),
            ]
            .into_iter()
            .chain(
                (3..jn)
                    .map(|m| Ok((m - 2, uniform(m)?)))
                    .collect::<Result<Vec<_>>>()?,
            )
            .collect();
            Some(GraphLocalProblem::new(
                &axes, mjt, ccosts, marginals, epsilon, false,
            )?)
        }
    };
    Ok(EulerBuild {
        mot,
        jt,
        graph_local,
    })
}

/// A built Wasserstein least squares instance. Variables are labeled
/// `0..=J+1`, with `0` and `J+1` the free endpoint distributions.
#[derive(Clone, Debug)]
pub struct WlsBuild {
    pub mot: MotProblem,
    /// Junction tree: the cliques `{0, j, J+1}` in a chain, one constrained
    /// leaf `{j}` each.
    pub jt: JunctionTree,
    /// Coupled form: same cliques around the shared separator `{0, J+1}`.
    pub graph_local: GraphLocalProblem,
}

/// Least squares fit of a displacement interpolation to `J` snapshots at
/// the given times, with endpoint-coupling weight `alpha`. The penalty
/// `α‖x_0 − x_{J+1}‖²` is split evenly over the cliques of the coupled
/// form, so the clique costs sum to the full cost on every index tuple.
pub fn wls_problem(
    j_count: usize,
    times: &[f64],
    grid: &GridSpec,
    gen: &MarginalGen,
    alpha: f64,
    epsilon: f64,
) -> Result<WlsBuild> {
    if j_count == 0 {
        return Err(Error::Contract(
            "least squares needs at least one snapshot".into(),
        ));
    }
    if times.len() != j_count {
        return Err(Error::Contract(format!(
            "expected {j_count} times, got {}",
            times.len()
        )));
    }
    if times.windows(2).any(|w| !(w[0] < w[1]))
        || !(0.0..=1.0).contains(&times[0])
        || !(0.0..=1.0).contains(&times[j_count - 1])
    {
        return Err(Error::Contract(
            "times must be strictly increasing within [0, 1]".into(),
        ));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Contract(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    grid.check()?;
    let jn = j_count;
    let d = grid.d;
    let pts = grid.points();
    let l = AxisLabel;
    let axes: Vec<(AxisLabel, usize)> = (0..=jn + 1).map(|v| (l(v), d)).collect();
    let interp = |j: usize, ix: &[usize]| {
        // frame order (0, j, J+1)
        let t = times[j - 1];
        (pts[ix[1]] - (1.0 - t) * pts[ix[0]] - t * pts[ix[2]]).powi(2)
    };
    let rhos = generate_marginals(gen, grid, jn)?;
    let marginal = |j: usize| LabeledTensor::new(vec![(l(j), d)], rhos[j - 1].clone());

    // flat form: one tensor per interpolation term plus the penalty tensor
    let mut mot_costs: Vec<LabeledTensor> = (1..=jn)
        .map(|j| {
            LabeledTensor::from_fn(vec![(l(0), d), (l(j), d), (l(jn + 1), d)], |ix| {
                interp(j, ix)
            })
        })
        .collect::<Result<_>>()?;
    mot_costs.push(LabeledTensor::from_fn(
        vec![(l(0), d), (l(jn + 1), d)],
        |ix| alpha * (pts[ix[0]] - pts[ix[1]]).powi(2),
    )?);
    let mot_marginals: Vec<LabeledTensor> = (1..=jn).map(marginal).collect::<Result<_>>()?;
    let factor_sets: Vec<BTreeSet<usize>> = mot_costs
        .iter()
        .chain(mot_marginals.iter())
        .map(|t| t.labels().iter().map(|a| a.0).collect())
        .collect();
    let mot = MotProblem::new(
        axes.clone(),
        mot_costs,
        mot_marginals,
        epsilon,
        ZeroPolicy::Reject,
    )?;

    let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<usize>>();
    let mut cliques: Vec<BTreeSet<usize>> = (1..=jn).map(|j| set(&[0, j, jn + 1])).collect();
    let mut edges: Vec<(usize, usize)> = (0..jn - 1).map(|q| (q, q + 1)).collect();
    let mut constrained = BTreeSet::new();
    for j in 1..=jn {
        let idx = cliques.len();
        cliques.push(set(&[j]));
        edges.push((j - 1, idx));
        constrained.insert(idx);
    }
    let jt = JunctionTree::new(cliques, edges, constrained, &factor_sets)?;

    // coupled form: all cliques share the hub separator {0, J+1}
    let cost_cliques: Vec<BTreeSet<usize>> = (1..=jn).map(|j| set(&[0, j, jn + 1])).collect();
    let mut seps: Vec<BTreeSet<usize>> = vec![set(&[0, jn + 1])];
    seps.extend((1..=jn).map(|j| set(&[j])));
    let medges: Vec<(usize, usize)> = (0..jn).flat_map(|q| [(q, 0), (q, q + 1)]).collect();
    let constraints: BTreeMap<usize, BTreeSet<usize>> = (1..=jn).map(|j| (j, set(&[j]))).collect();
    let mjt = ModifiedJunctionTree::new_unchecked(cost_cliques, seps, medges, constraints);
    let share = alpha / jn as f64;
    let ccosts: Vec<LabeledTensor> = (1..=jn)
        .map(|j| {
            LabeledTensor::from_fn(vec![(l(0), d), (l(j), d), (l(jn + 1), d)], |ix| {
                interp(j, ix) + share * (pts[ix[0]] - pts[ix[2]]).powi(2)
            })
        })
        .collect::<Result<_>>()?;
    let gmarginals: BTreeMap<usize, LabeledTensor> = (1..=jn)
        .map(|j| Ok((j, marginal(j)?)))
        .collect::<Result<_>>()?;
    let graph_local = GraphLocalProblem::new(&axes, mjt, ccosts, gmarginals, epsilon, false)?;
    Ok(WlsBuild {
        mot,
        jt,
        graph_local,
    })
}

/// A built Wasserstein splines instance. Positions `x_0..x_J` carry labels
/// `0..=J`; velocities `v_0..v_J` carry labels `J+1..=2J+1`.
#[derive(Clone, Debug)]
pub struct SplineBuild {
    pub mot: MotProblem,
    /// Junction tree with segment cliques `{x_j, x_{j+1}, v_j, v_{j+1}}`;
    /// singleton position leaves, except that the two final positions share
    /// one pair leaf carrying the product of their marginals.
    pub jt: JunctionTree,
    /// Coupled form with singleton position constraints, embedded as
    /// `{x_j}` inside the separators `{x_j, v_j}`.
    pub graph_local: GraphLocalProblem,
}

/// Cubic-spline interpolation of `J+1` snapshots at `times[0..=J]` in phase
/// space. Each time segment contributes
///
/// ```text
///   (1/Δt)·[ 12‖Δx/Δt − v_j‖² − 12⟨Δx/Δt − v_j, v_{j+1} − v_j⟩
///            + 4‖v_{j+1} − v_j‖² ],          Δx = x_{j+1} − x_j,
/// ```
///
/// and the snapshot marginals constrain the positions.
pub fn spline_problem(
    j_count: usize,
    times: &[f64],
    grid_x: &GridSpec,
    grid_v: &GridSpec,
    gen: &MarginalGen,
    epsilon: f64,
) -> Result<SplineBuild> {
    if j_count == 0 {
        return Err(Error::Contract(
            "a spline needs at least one segment".into(),
        ));
    }
    if times.len() != j_count + 1 {
        return Err(Error::Contract(format!(
            "expected {} times, got {}",
            j_count + 1,
            times.len()
        )));
    }
    if times.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Contract("times must be strictly increasing".into()));
    }
    grid_x.check()?;
    grid_v.check()?;
    let jn = j_count;
    let (dx, dv) = (grid_x.d, grid_v.d);
    let px = grid_x.points();
    let pv = grid_v.points();
    let l = AxisLabel;
    let x = |j: usize| l(j);
    let v = |j: usize| l(jn + 1 + j);
    let mut axes: Vec<(AxisLabel, usize)> = (0..=jn).map(|j| (x(j), dx)).collect();
    axes.extend((0..=jn).map(|j| (v(j), dv)));
    // frame order (x_j, x_{j+1}, v_j, v_{j+1})
    let seg_cost = |j: usize| {
        let dt = times[j + 1] - times[j];
        LabeledTensor::from_fn(
            vec![(x(j), dx), (x(j + 1), dx), (v(j), dv), (v(j + 1), dv)],
            |ix| {
                let disp = (px[ix[1]] - px[ix[0]]) / dt - pv[ix[2]];
                let dvel = pv[ix[3]] - pv[ix[2]];
                (12.0 * disp * disp - 12.0 * disp * dvel + 4.0 * dvel * dvel) / dt
            },
        )
    };
    let rhos = generate_marginals(gen, grid_x, jn + 1)?;
    let marginal = |j: usize| LabeledTensor::new(vec![(x(j), dx)], rhos[j].clone());

    let costs: Vec<LabeledTensor> = (0..jn).map(seg_cost).collect::<Result<_>>()?;
    let mut mot_marginals: Vec<LabeledTensor> = (0..jn.saturating_sub(1))
        .map(marginal)
        .collect::<Result<_>>()?;
    mot_marginals.push(LabeledTensor::outer(&[&marginal(jn - 1)?, &marginal(jn)?])?);
    let factor_sets: Vec<BTreeSet<usize>> = costs
        .iter()
        .chain(mot_marginals.iter())
        .map(|t| t.labels().iter().map(|a| a.0).collect())
        .collect();
    let mot = MotProblem::new(
        axes.clone(),
        costs.clone(),
        mot_marginals,
        epsilon,
        ZeroPolicy::Reject,
    )?;

    let set = |ls: &[AxisLabel]| ls.iter().map(|a| a.0).collect::<BTreeSet<usize>>();
    let seg_vars = |j: usize| set(&[x(j), x(j + 1), v(j), v(j + 1)]);
    let mut cliques: Vec<BTreeSet<usize>> = (0..jn).map(seg_vars).collect();
    let mut edges: Vec<(usize, usize)> = (0..jn - 1).map(|q| (q, q + 1)).collect();
    let mut constrained = BTreeSet::new();
    for j in 0..jn - 1 {
        let idx = cliques.len();
        cliques.push(set(&[x(j)]));
        edges.push((j, idx));
        constrained.insert(idx);
    }
    let pair = cliques.len();
    cliques.push(set(&[x(jn - 1), x(jn)]));
    edges.push((jn - 1, pair));
    constrained.insert(pair);
    let jt = JunctionTree::new(cliques, edges, constrained, &factor_sets)?;

    // coupled form
    let cost_cliques: Vec<BTreeSet<usize>> = (0..jn).map(seg_vars).collect();
    let mut seps: Vec<BTreeSet<usize>> = vec![set(&[x(0)])];
    seps.extend((1..jn).map(|j| set(&[x(j), v(j)])));
    seps.push(set(&[x(jn)]));
    let mut medges = Vec::new();
    for q in 0..jn {
        medges.push((q, q));
        medges.push((q, q + 1));
    }
    let mut constraints: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for j in 0..=jn {
        constraints.insert(j, set(&[x(j)]));
    }
    let mjt = ModifiedJunctionTree::new_unchecked(cost_cliques, seps, medges, constraints);
    let gmarginals: BTreeMap<usize, LabeledTensor> = (0..=jn)
        .map(|j| Ok((j, marginal(j)?)))
        .collect::<Result<_>>()?;
    let graph_local = GraphLocalProblem::new(&axes, mjt, costs, gmarginals, epsilon, false)?;
    Ok(SplineBuild {
        mot,
        jt,
        graph_local,
    })
}

/// Re-encode a tree problem over the modified junction tree: one singleton
/// separator per node (indexed in ascending node order) and one cost clique
/// per edge. The coupled solver on this encoding follows the tree solver
/// step for step.
pub fn tree_as_graph_local(tp: &TreeProblem) -> Result<GraphLocalProblem> {
    let tree = tp.tree();
    let mut ids: Vec<usize> = tree.nodes().to_vec();
    ids.sort_unstable();
    let rank: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let cliques: Vec<BTreeSet<usize>> = tree
        .edges()
        .iter()
        .map(|&(a, b)| BTreeSet::from([a, b]))
        .collect();
    let separators: Vec<BTreeSet<usize>> = ids.iter().map(|&v| BTreeSet::from([v])).collect();
    let mut edges = Vec::with_capacity(2 * cliques.len());
    for (c, &(a, b)) in tree.edges().iter().enumerate() {
        edges.push((c, rank[&a]));
        edges.push((c, rank[&b]));
    }
    let constraints: BTreeMap<usize, BTreeSet<usize>> = tree
        .constrained()
        .iter()
        .map(|&j| (rank[&j], BTreeSet::from([j])))
        .collect();
    let mjt = ModifiedJunctionTree::new_unchecked(cliques, separators, edges, constraints);
    let axes: Vec<(AxisLabel, usize)> = ids.iter().map(|&n| (AxisLabel(n), tp.size(n))).collect();
    let costs: Vec<LabeledTensor> = tree
        .edges()
        .iter()
        .map(|&(a, b)| {
            LabeledTensor::from_fn(
                vec![(AxisLabel(a), tp.size(a)), (AxisLabel(b), tp.size(b))],
                |ix| tp.cost(a, b).get(ix[0], ix[1]),
            )
        })
        .collect::<Result<_>>()?;
    let marginals: BTreeMap<usize, LabeledTensor> = tree
        .constrained()
        .iter()
        .map(|&j| {
            let mu = tp
                .marginal(j)
                .expect("validated tree problems carry a marginal per constrained node");
            Ok((
                rank[&j],
                LabeledTensor::new(vec![(AxisLabel(j), tp.size(j))], mu.to_vec())?,
            ))
        })
        .collect::<Result<_>>()?;
    GraphLocalProblem::new(&axes, mjt, costs, marginals, tp.epsilon(), false)
}

/// Re-encode a tree problem in the flat multi-marginal form: axes are the
/// tree nodes, one pairwise cost tensor per edge, one singleton marginal
/// per constrained node. The junction tree chains the edge cliques in
/// breadth-first discovery order — each clique shares a node with the one
/// that discovered it — and hangs one constrained singleton leaf per
/// marginal.
///
/// The two encodings share the unregularized optimum, but the regularized
/// ones differ at finite ε: the joint relative entropy of a tree-Markov
/// plan decomposes into the edge terms minus node corrections at free
/// nodes of degree above one, so the sum-of-edge-entropies objective is
/// not the joint entropy. Costs agree up to the entropic gaps.
pub fn tree_as_mot(tp: &TreeProblem) -> Result<(MotProblem, JunctionTree)> {
    let tree = tp.tree();
    let axes: Vec<(AxisLabel, usize)> = tree
        .nodes()
        .iter()
        .map(|&n| (AxisLabel(n), tp.size(n)))
        .collect();
    let costs: Vec<LabeledTensor> = tree
        .edges()
        .iter()
        .map(|&(a, b)| {
            LabeledTensor::from_fn(
                vec![(AxisLabel(a), tp.size(a)), (AxisLabel(b), tp.size(b))],
                |ix| tp.cost(a, b).get(ix[0], ix[1]),
            )
        })
        .collect::<Result<_>>()?;
    let marginals: Vec<LabeledTensor> = tree
        .constrained()
        .iter()
        .map(|&j| {
            let mu = tp
                .marginal(j)
                .expect("validated tree problems carry a marginal per constrained node");
            LabeledTensor::new(vec![(AxisLabel(j), tp.size(j))], mu.to_vec())
        })
        .collect::<Result<_>>()?;
    let factor_sets: Vec<BTreeSet<usize>> = costs
        .iter()
        .chain(marginals.iter())
        .map(|t| t.labels().iter().map(|a| a.0).collect())
        .collect();
    let mot = MotProblem::new(axes, costs, marginals, tp.epsilon(), ZeroPolicy::Reject)?;

    let mut cliques: Vec<BTreeSet<usize>> = tree
        .edges()
        .iter()
        .map(|&(a, b)| BTreeSet::from([a, b]))
        .collect();
    let edge_idx: BTreeMap<(usize, usize), usize> = tree
        .edges()
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, i))
        .collect();
    // host: for each visited node, one clique that contains it
    let mut host: BTreeMap<usize, usize> = BTreeMap::new();
    let mut jt_edges = Vec::new();
    let root = tree.nodes()[0];
    let mut queue = std::collections::VecDeque::from([root]);
    let mut seen = BTreeSet::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in tree.neighbors(u) {
            if !seen.insert(v) {
                continue;
            }
            let key = if u < v { (u, v) } else { (v, u) };
            let ci = edge_idx[&key];
            if let Some(&h) = host.get(&u) {
                jt_edges.push((h, ci));
            }
            host.entry(u).or_insert(ci);
            host.insert(v, ci);
            queue.push_back(v);
        }
    }
    let mut constrained = BTreeSet::new();
    for &j in tree.constrained() {
        let idx = cliques.len();
        cliques.push(BTreeSet::from([j]));
        jt_edges.push((host[&j], idx));
        constrained.insert(idx);
    }
    let jt = JunctionTree::new(cliques, jt_edges, constrained, &factor_sets)?;
    Ok((mot, jt))
}
