//! Bipartite iterative scaling for tree-structured coupled bi-marginal OT
//! with local entropic regularization.
//!
//! The problem couples one plan per tree edge,
//!
//! ```text
//!   min Σ_{(j,k)∈E} ⟨C_{(j,k)}, B_{(j,k)}⟩ + ε Σ_{(j,k)∈E} H(B_{(j,k)} | γ_j γ_kᵀ)
//! ```
//!
//! subject to `B_{(j,k)} 𝟏 = μ_j` for constrained nodes `j ∈ Γ`, agreement
//! of all marginals incident to a free node, and unit mass; here
//! `γ_j = μ_j` if `j ∈ Γ` and `𝟏` otherwise. Every plan has the scaling
//! form
//!
//! ```text
//!   B_{(j,k)} = diag(u_{(j,k)} ⊙ γ_j) K_{(j,k)} diag(u_{(k,j)} ⊙ γ_k),
//!   K_{(j,k)} = exp(−C_{(j,k)}/ε),
//! ```
//!
//! and the dual variables of a free node are coupled through
//! `Σ_{k∈N(j)} log u_{(j,k)} = ρ_j 𝟏`. The solver two-colors the tree and
//! alternates block updates between the color classes: all nodes of the
//! active side update independently from a frozen snapshot of the opposite
//! side, which is what makes the parallel schedule deterministic.
//!
//! The dual objective, minimized by every block update, is
//!
//! ```text
//!   f(u, ρ) = Σ_{(j,k)∈E} ‖B_{(j,k)}‖₁ − Σ_{j∈Γ} log(u_{(j,k_j)})ᵀ μ_j − Σ_{j∉Γ} ρ_j.
//! ```

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{ok_or_invalid, Error, Result, Rule, Violation};
use crate::graph::{BipartitePartition, TreeGraph};
use crate::mat::{l1_diff_vec, l1_norm, Mat};
use crate::report::{IterationRecord, SolveReport};

/// Entrywise `exp(−C/ε)`. The boolean is an underflow warning: the largest
/// kernel entry fell below 1e-290, a sign that ε is small enough for the
/// linear-domain iteration to lose the plan entirely. A row or column that
/// underflows to exact zero is an error, since scaling can never repair it.
pub fn kernel(cost: &Mat, epsilon: f64) -> Result<(Mat, bool)> {
    if !(epsilon > 0.0) {
        return Err(Error::Contract(format!(
            "regularization must be positive, got {epsilon}"
        )));
    }
    let k = cost.map(|c| (-c / epsilon).exp());
    let warn = k.max_abs() < 1e-290;
    for (i, r) in k.row_sums().iter().enumerate() {
        if *r == 0.0 {
            return Err(Error::Numeric {
                index: Some(i),
                reason: "kernel row underflowed to zero; use a larger epsilon or log-domain mode"
                    .into(),
            });
        }
    }
    for (j, c) in k.col_sums().iter().enumerate() {
        if *c == 0.0 {
            return Err(Error::Numeric {
                index: Some(j),
                reason:
                    "kernel column underflowed to zero; use a larger epsilon or log-domain mode"
                        .into(),
            });
        }
    }
    Ok((k, warn))
}

/// A tree-structured problem instance with cached kernels.
///
/// Cost matrices are stored for canonical edges `(a, b)` with `a < b`, rows
/// indexed by `a`; the reverse orientation is the transpose. Constrained
/// marginals are renormalized to unit mass at load so that downstream mass
/// invariants hold to float precision.
#[derive(Clone, Debug)]
pub struct TreeProblem {
    tree: TreeGraph,
    costs: BTreeMap<(usize, usize), Mat>,
    kernels: BTreeMap<(usize, usize), Mat>,
    gammas: BTreeMap<usize, Vec<f64>>,
    sizes: BTreeMap<usize, usize>,
    epsilon: f64,
    c_inf: f64,
    kernel_underflow: bool,
}

impl TreeProblem {
    pub fn new(
        tree: TreeGraph,
        costs: BTreeMap<(usize, usize), Mat>,
        marginals: BTreeMap<usize, Vec<f64>>,
        epsilon: f64,
    ) -> Result<Self> {
        let mut vs = Vec::new();
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            vs.push(Violation::new(
                Rule::EpsilonPositive,
                format!("epsilon = {epsilon}"),
            ));
        }
        // sizes from cost shapes, consistency across shared nodes
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        for &(a, b) in tree.edges() {
            let c = match costs.get(&(a, b)) {
                Some(c) => c,
                None => {
                    vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!("no cost matrix for edge ({a}, {b})"),
                    ));
                    continue;
                }
            };
            for (node, d) in [(a, c.rows()), (b, c.cols())] {
                match sizes.get(&node) {
                    Some(&prev) if prev != d => vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!("node {node} has size {prev} on one edge and {d} on another"),
                    )),
                    _ => {
                        sizes.insert(node, d);
                    }
                }
            }
            if c.data().iter().any(|x| !x.is_finite()) {
                vs.push(Violation::new(
                    Rule::CostFiniteness,
                    format!("cost on edge ({a}, {b}) has a non-finite entry"),
                ));
            }
        }
        for key in costs.keys() {
            if !tree.edges().contains(key) {
                vs.push(Violation::new(
                    Rule::EdgeEndpoint,
                    format!(
                        "cost matrix for ({}, {}) does not match any edge",
                        key.0, key.1
                    ),
                ));
            }
        }
        let mut gammas: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&j, mu) in &marginals {
            if !tree.constrained().contains(&j) {
                vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!("marginal supplied for unconstrained node {j}"),
                ));
                continue;
            }
            if let Some(&d) = sizes.get(&j) {
                if mu.len() != d {
                    vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!("marginal of node {j} has length {}, expected {d}", mu.len()),
                    ));
                    continue;
                }
            }
            if mu.iter().any(|&x| !(x > 0.0)) {
                vs.push(Violation::new(
                    Rule::MarginalPositivity,
                    format!("marginal of node {j} has a non-positive entry"),
                ));
                continue;
            }
            let mass: f64 = mu.iter().sum();
            if (mass - 1.0).abs() > 1e-9 {
                vs.push(Violation::new(
                    Rule::MarginalMass,
                    format!("marginal of node {j} has mass {mass}"),
                ));
                continue;
            }
            gammas.insert(j, mu.iter().map(|x| x / mass).collect());
        }
        for &j in tree.constrained() {
            if !marginals.contains_key(&j) {
                vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!("constrained node {j} has no marginal"),
                ));
            }
        }
        vs.extend(tree.validate());
        ok_or_invalid(vs)?;
        for &j in tree.nodes() {
            gammas.entry(j).or_insert_with(|| vec![1.0; sizes[&j]]);
        }
        let c_inf = costs.values().map(Mat::max_abs).fold(0.0, f64::max);
        let mut kernels = BTreeMap::new();
        let mut underflow = false;
        for (&e, c) in &costs {
            let (k, warn) = kernel(c, epsilon)?;
            underflow |= warn;
            kernels.insert(e, k);
        }
        Ok(TreeProblem {
            tree,
            costs,
            kernels,
            gammas,
            sizes,
            epsilon,
            c_inf,
            kernel_underflow: underflow,
        })
    }

    pub fn tree(&self) -> &TreeGraph {
        &self.tree
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Largest absolute cost entry over all edges.
    pub fn c_inf(&self) -> f64 {
        self.c_inf
    }

    pub fn size(&self, j: usize) -> usize {
        self.sizes[&j]
    }

    pub fn max_size(&self) -> usize {
        self.sizes.values().copied().max().unwrap_or(1)
    }

    pub fn cost(&self, a: usize, b: usize) -> &Mat {
        &self.costs[&(a.min(b), a.max(b))]
    }

    /// γ_j: the marginal for constrained nodes, all-ones otherwise.
    pub fn gamma(&self, j: usize) -> &[f64] {
        &self.gammas[&j]
    }

    /// The (renormalized) marginal of a constrained node.
    pub fn marginal(&self, j: usize) -> Option<&[f64]> {
        if self.tree.is_constrained(j) {
            Some(&self.gammas[&j])
        } else {
            None
        }
    }

    pub fn kernel_underflowed(&self) -> bool {
        self.kernel_underflow
    }

    /// `K_{(a,b)}` for the canonical orientation `a < b`.
    pub fn kernel_mat(&self, a: usize, b: usize) -> &Mat {
        &self.kernels[&(a.min(b), a.max(b))]
    }

    /// `K_{(j,k)} (u_{(k,j)} ⊙ γ_k)`: the kernel applied to the scaled
    /// vector arriving from neighbor `k`, oriented so the result lives on
    /// node `j`.
    pub fn incoming(&self, state: &EdgeScalingState, j: usize, k: usize) -> Vec<f64> {
        let v: Vec<f64> = state.u[&(k, j)]
            .iter()
            .zip(self.gamma(k))
            .map(|(u, g)| u * g)
            .collect();
        let km = self.kernel_mat(j, k);
        if j < k {
            km.matvec(&v)
        } else {
            km.t_matvec(&v)
        }
    }
}

/// Parameter recipe: given a target approximation error δ for the
/// unregularized problem, the regularization `ε = δ/(4|E| ln d)` and the
/// stopping threshold `δ′ = δ/(8 C_∞)` make the rounded output δ-optimal.
pub fn recipe_epsilon(delta: f64, n_edges: usize, d: usize) -> f64 {
    delta / (4.0 * n_edges as f64 * (d.max(2) as f64).ln())
}

pub fn recipe_tolerance(delta: f64, c_inf: f64) -> f64 {
    if c_inf > 0.0 {
        delta / (8.0 * c_inf)
    } else {
        delta
    }
}

/// A priori iteration bound `2 + 88 |E| C_∞ / (δ′ ε)`.
pub fn iteration_bound(n_edges: usize, c_inf: f64, tol: f64, epsilon: f64) -> f64 {
    2.0 + 88.0 * n_edges as f64 * c_inf / (tol * epsilon)
}

/// Scaling state: one positive vector per directed edge plus the scalar ρ_j
/// coupling the outgoing vectors of each free node.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeScalingState {
    /// u_{(j,k)} keyed by the directed pair (j, k).
    pub u: BTreeMap<(usize, usize), Vec<f64>>,
    /// ρ_j for free nodes.
    pub rho: BTreeMap<usize, f64>,
    /// Update sweeps performed so far.
    pub t: usize,
}

impl EdgeScalingState {
    /// All-ones start: u⁰ ≡ 𝟏 and ρ⁰ = 0 (the value consistent with u⁰
    /// through the dual coupling).
    pub fn init(p: &TreeProblem) -> Self {
        let mut u = BTreeMap::new();
        for &(a, b) in p.tree().edges() {
            u.insert((a, b), vec![1.0; p.size(a)]);
            u.insert((b, a), vec![1.0; p.size(b)]);
        }
        let rho = p
            .tree()
            .nodes()
            .iter()
            .filter(|j| !p.tree().is_constrained(**j))
            .map(|&j| (j, 0.0))
            .collect();
        EdgeScalingState { u, rho, t: 0 }
    }

    /// A random state for exercising the update formulas: log u entries are
    /// uniform on [−1, 1], then one outgoing vector per free node is shifted
    /// so the dual coupling Σ_k log u_{(j,k)} = ρ_j 𝟏 holds exactly.
    pub fn random_consistent<R: Rng>(p: &TreeProblem, rng: &mut R) -> Self {
        let mut s = Self::init(p);
        for v in s.u.values_mut() {
            for x in v.iter_mut() {
                *x = (rng.gen_range(-1.0..1.0f64)).exp();
            }
        }
        for &j in p.tree().nodes() {
            if p.tree().is_constrained(j) {
                continue;
            }
            let nbs = p.tree().neighbors(j).to_vec();
            let d = p.size(j);
            let mut log_sum = vec![0.0; d];
            for &k in &nbs {
                for (s_i, u_i) in log_sum.iter_mut().zip(&s.u[&(j, k)]) {
                    *s_i += u_i.ln();
                }
            }
            let c = rng.gen_range(-1.0..1.0f64);
            let last = *nbs.last().expect("free node has a neighbor");
            let u_last = s.u.get_mut(&(j, last)).unwrap();
            for (u_i, s_i) in u_last.iter_mut().zip(&log_sum) {
                *u_i = (u_i.ln() + (c - s_i)).exp();
            }
            s.rho.insert(j, c);
        }
        s
    }

    /// The plan `B_{(j,k)}` in the requested orientation (rows on `j`).
    pub fn plan(&self, p: &TreeProblem, j: usize, k: usize) -> Mat {
        let (a, b) = (j.min(k), j.max(k));
        let ua: Vec<f64> = self.u[&(a, b)]
            .iter()
            .zip(p.gamma(a))
            .map(|(u, g)| u * g)
            .collect();
        let ub: Vec<f64> = self.u[&(b, a)]
            .iter()
            .zip(p.gamma(b))
            .map(|(u, g)| u * g)
            .collect();
        let m = p.kernel_mat(a, b).scale_rows_cols(&ua, &ub);
        if j < k {
            m
        } else {
            m.transpose()
        }
    }

    /// Row marginal `q_{(j,k)} = B_{(j,k)} 𝟏` without materializing the plan.
    pub fn q(&self, p: &TreeProblem, j: usize, k: usize) -> Vec<f64> {
        let w = p.incoming(self, j, k);
        self.u[&(j, k)]
            .iter()
            .zip(p.gamma(j))
            .zip(&w)
            .map(|((u, g), w)| u * g * w)
            .collect()
    }

    fn apply(&mut self, up: NodeUpdate) {
        for (key, v) in up.u_new {
            self.u.insert(key, v);
        }
        if let Some(r) = up.rho_new {
            self.rho.insert(up.node, r);
        }
    }
}

/// Replacement scaling vectors produced by one node's block update.
#[derive(Clone, Debug)]
pub struct NodeUpdate {
    pub node: usize,
    pub u_new: Vec<((usize, usize), Vec<f64>)>,
    pub rho_new: Option<f64>,
}

fn positive(q: &[f64], what: &str) -> Result<()> {
    for (i, &x) in q.iter().enumerate() {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::Numeric {
                index: Some(i),
                reason: format!("{what} entry is {x}; the scaling iteration cannot continue"),
            });
        }
    }
    Ok(())
}

/// Geometric mean of positive vectors; a single input is returned bit-for-bit.
fn geo_mean(inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = inputs.len();
    if n == 1 {
        return Ok(inputs[0].clone());
    }
    let d = inputs[0].len();
    let mut out = vec![1.0; d];
    for v in inputs {
        for (o, x) in out.iter_mut().zip(v) {
            *o *= x;
        }
    }
    let e = 1.0 / n as f64;
    for (i, o) in out.iter_mut().enumerate() {
        *o = o.powf(e);
        if !o.is_finite() || *o <= 0.0 {
            return Err(Error::Numeric {
                index: Some(i),
                reason: "geometric mean of marginals degenerated".into(),
            });
        }
    }
    Ok(out)
}

/// One constrained-leaf update in the multiplicative form
/// `u ← u ⊙ μ_j ./ q_{(j,k_j)}`.
pub fn update_constrained(p: &TreeProblem, s: &EdgeScalingState, j: usize) -> Result<NodeUpdate> {
    let k = p.tree().neighbors(j)[0];
    let q = s.q(p, j, k);
    positive(&q, "row marginal")?;
    let mu = p.marginal(j).expect("constrained node has a marginal");
    let u_new: Vec<f64> = s.u[&(j, k)]
        .iter()
        .zip(mu)
        .zip(&q)
        .map(|((u, m), q)| u * m / q)
        .collect();
    Ok(NodeUpdate {
        node: j,
        u_new: vec![((j, k), u_new)],
        rho_new: None,
    })
}

/// The same update in closed form, `u = 𝟏 ./ (K (u_{(k_j,j)} ⊙ γ_{k_j}))`.
pub fn update_constrained_closed(
    p: &TreeProblem,
    s: &EdgeScalingState,
    j: usize,
) -> Result<NodeUpdate> {
    let k = p.tree().neighbors(j)[0];
    let w = p.incoming(s, j, k);
    positive(&w, "kernel message")?;
    Ok(NodeUpdate {
        node: j,
        u_new: vec![((j, k), w.iter().map(|x| 1.0 / x).collect())],
        rho_new: None,
    })
}

/// One free-node update in the multiplicative form: with
/// `q̂_j = (⊙_k q_{(j,k)})^{1/|N(j)|}`,
/// `u_{(j,k)} ← u_{(j,k)} ⊙ (q̂_j/‖q̂_j‖₁) ./ q_{(j,k)}` and
/// `ρ_j ← ρ_j − |N(j)| ln ‖q̂_j‖₁`.
pub fn update_free(p: &TreeProblem, s: &EdgeScalingState, j: usize) -> Result<NodeUpdate> {
    let nbs = p.tree().neighbors(j);
    let qs: Vec<Vec<f64>> = nbs.iter().map(|&k| s.q(p, j, k)).collect();
    for q in &qs {
        positive(q, "row marginal")?;
    }
    let q_hat = geo_mean(&qs)?;
    let mass = l1_norm(&q_hat);
    let mut u_new = Vec::with_capacity(nbs.len());
    for (&k, q) in nbs.iter().zip(&qs) {
        let v: Vec<f64> = s.u[&(j, k)]
            .iter()
            .zip(&q_hat)
            .zip(q)
            .map(|((u, h), q)| u * (h / mass) / q)
            .collect();
        u_new.push(((j, k), v));
    }
    let rho_new = s.rho[&j] - nbs.len() as f64 * mass.ln();
    Ok(NodeUpdate {
        node: j,
        u_new,
        rho_new: Some(rho_new),
    })
}

/// The same update in closed form: `v_j = (⊙_k K(u_{(k,j)} ⊙ γ_k))^{1/|N(j)|}`,
/// `ρ_j = −|N(j)| ln(𝟏ᵀ v_j)`, `u_{(j,k)} = e^{ρ_j/|N(j)|} v_j ./ K(u_{(k,j)} ⊙ γ_k)`.
pub fn update_free_closed(p: &TreeProblem, s: &EdgeScalingState, j: usize) -> Result<NodeUpdate> {
    let nbs = p.tree().neighbors(j);
    let ws: Vec<Vec<f64>> = nbs.iter().map(|&k| p.incoming(s, j, k)).collect();
    for w in &ws {
        positive(w, "kernel message")?;
    }
    let v = geo_mean(&ws)?;
    let n = nbs.len() as f64;
    let rho_new = -n * l1_norm(&v).ln();
    let scale = (rho_new / n).exp();
    let mut u_new = Vec::with_capacity(nbs.len());
    for (&k, w) in nbs.iter().zip(&ws) {
        let un: Vec<f64> = v.iter().zip(w).map(|(v, w)| scale * v / w).collect();
        u_new.push(((j, k), un));
    }
    Ok(NodeUpdate {
        node: j,
        u_new,
        rho_new: Some(rho_new),
    })
}

fn node_update(p: &TreeProblem, s: &EdgeScalingState, j: usize) -> Result<NodeUpdate> {
    if p.tree().is_constrained(j) {
        update_constrained(p, s, j)
    } else {
        update_free(p, s, j)
    }
}

/// Residual split into its constrained and consistency parts.
#[derive(Clone, Copy, Debug, Default)]
pub struct Residual {
    /// Σ_{j∈Γ} ‖B_{(j,k_j)} 𝟏 − μ_j‖₁
    pub constrained: f64,
    /// Σ_{j∉Γ} Σ_{k∈N(j)} ‖q_{(j,k)} − q̄_j‖₁
    pub free: f64,
}

impl Residual {
    pub fn total(&self) -> f64 {
        self.constrained + self.free
    }
}

/// Residual contribution of a single node.
pub fn node_residual(p: &TreeProblem, s: &EdgeScalingState, j: usize) -> f64 {
    if p.tree().is_constrained(j) {
        let k = p.tree().neighbors(j)[0];
        l1_diff_vec(&s.q(p, j, k), p.marginal(j).unwrap())
    } else {
        let nbs = p.tree().neighbors(j);
        let qs: Vec<Vec<f64>> = nbs.iter().map(|&k| s.q(p, j, k)).collect();
        let n = nbs.len() as f64;
        let mean: Vec<f64> = (0..p.size(j))
            .map(|i| qs.iter().map(|q| q[i]).sum::<f64>() / n)
            .collect();
        qs.iter().map(|q| l1_diff_vec(q, &mean)).sum()
    }
}

pub fn residual(p: &TreeProblem, s: &EdgeScalingState) -> Residual {
    let mut r = Residual::default();
    for &j in p.tree().nodes() {
        let e = node_residual(p, s, j);
        if p.tree().is_constrained(j) {
            r.constrained += e;
        } else {
            r.free += e;
        }
    }
    r
}

/// Dual objective `f(u, ρ)`.
pub fn dual_f(p: &TreeProblem, s: &EdgeScalingState) -> f64 {
    let mut f = 0.0;
    for &(a, b) in p.tree().edges() {
        f += l1_norm(&s.q(p, a, b));
    }
    for &j in p.tree().constrained() {
        let k = p.tree().neighbors(j)[0];
        let mu = p.marginal(j).unwrap();
        f -= s.u[&(j, k)]
            .iter()
            .zip(mu)
            .map(|(u, m)| u.ln() * m)
            .sum::<f64>();
    }
    for r in s.rho.values() {
        f -= r;
    }
    f
}

/// Transport cost `Σ_{(j,k)∈E} ⟨C_{(j,k)}, B_{(j,k)}⟩` of the current plans.
pub fn plan_cost(p: &TreeProblem, plans: &BTreeMap<(usize, usize), Mat>) -> f64 {
    plans
        .iter()
        .map(|(&(a, b), bm)| p.cost(a, b).inner(bm))
        .sum()
}

fn lambda_range(p: &TreeProblem, s: &EdgeScalingState) -> f64 {
    let mut worst: f64 = 0.0;
    for u in s.u.values() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in u {
            let l = x.ln();
            lo = lo.min(l);
            hi = hi.max(l);
        }
        worst = worst.max(p.epsilon() * (hi - lo));
    }
    worst
}

fn record(p: &TreeProblem, s: &EdgeScalingState, start: Instant) -> IterationRecord {
    let mut mass_dev: f64 = 0.0;
    for &(a, b) in p.tree().edges() {
        mass_dev = mass_dev.max((l1_norm(&s.q(p, a, b)) - 1.0).abs());
    }
    IterationRecord {
        t: s.t,
        residual: residual(p, s).total(),
        dual: dual_f(p, s),
        max_mass_dev: mass_dev,
        max_lambda_range: lambda_range(p, s),
        elapsed: start.elapsed().as_secs_f64(),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TreeSolverOptions {
    /// Stopping threshold δ′ on the residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Worker threads; 0 lets the thread pool pick.
    pub threads: usize,
}

impl Default for TreeSolverOptions {
    fn default() -> Self {
        TreeSolverOptions {
            tol: 1e-4,
            max_iter: 100_000,
            threads: 1,
        }
    }
}

/// Result of a tree-local solve.
#[derive(Clone, Debug)]
pub struct TreeSolveOutcome {
    /// Final plans keyed by canonical edge (rows on the smaller node id).
    pub plans: BTreeMap<(usize, usize), Mat>,
    pub state: EdgeScalingState,
    pub partition: BipartitePartition,
    /// Side (1 or 2) whose marginals may still mismatch, i.e. the side not
    /// updated last; `None` when no update ran.
    pub mismatch_side: Option<u8>,
    pub report: SolveReport,
}

/// Run bipartite iterative scaling until the residual drops below `tol` or
/// `max_iter` sweeps have run. Iteration `t` updates side one of the
/// two-coloring when `t` is odd, side two when even; every node of the
/// active side updates from a frozen snapshot, so results are independent
/// of the worker count.
pub fn solve(p: &TreeProblem, opts: &TreeSolverOptions) -> Result<TreeSolveOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::Contract(format!(
            "stopping threshold must be positive, got {}",
            opts.tol
        )));
    }
    let partition = p.tree().two_color()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let mut state = EdgeScalingState::init(p);
    let mut trace = vec![record(p, &state, start)];
    let mut t = 0usize;
    while trace.last().unwrap().residual >= opts.tol && t < opts.max_iter {
        t += 1;
        let active: Vec<usize> = partition.active(t).iter().copied().collect();
        let updates: Vec<NodeUpdate> = pool.install(|| {
            active
                .par_iter()
                .map(|&j| node_update(p, &state, j))
                .collect::<Result<Vec<_>>>()
        })?;
        for up in updates {
            state.apply(up);
        }
        state.t = t;
        trace.push(record(p, &state, start));
    }
    let converged = trace.last().unwrap().residual < opts.tol;
    let plans: BTreeMap<(usize, usize), Mat> = p
        .tree()
        .edges()
        .iter()
        .map(|&(a, b)| ((a, b), state.plan(p, a, b)))
        .collect();
    let final_cost = plan_cost(p, &plans);
    let mismatch_side = if t == 0 {
        None
    } else if t % 2 == 1 {
        Some(2)
    } else {
        Some(1)
    };
    let report = SolveReport {
        iterations: t,
        converged,
        bound: Some(iteration_bound(
            p.tree().n_edges(),
            p.c_inf(),
            opts.tol,
            p.epsilon(),
        )),
        trace,
        final_cost,
        rounded_cost: None,
        threads: opts.threads,
        wall_clock: start.elapsed().as_secs_f64(),
    };
    Ok(TreeSolveOutcome {
        plans,
        state,
        partition,
        mismatch_side,
        report,
    })
}
