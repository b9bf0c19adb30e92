//! Coupled multi-marginal transport with one entropic term per cost clique
//! of a modified junction tree.
//!
//! Given a modified junction tree with cost cliques `Q_C` and separators
//! `Q_S`, the problem couples one transport block per cost clique:
//!
//! ```text
//!   min   Σ_{c∈Q_C}  ⟨C_c, B_c⟩ + ε H(B_c | M_c)
//!   s.t.  the B_c agree when projected onto each separator,
//!         P_γ(B_c) = μ_γ        at every constrained separator,
//!         ‖B_c‖₁ = 1            mediated by the unconstrained separators,
//! ```
//!
//! where the reference tensor `M_c` is the product of the marginals
//! attached to the clique's two separators, broadcast over the clique
//! (ones where a separator carries no constraint). Solving the dual, each
//! block keeps the scaling form `B_c = K_c ⊙ U_c ⊙ M_c` with
//! `K_c = exp(−C_c/ε)`, and `U_c` the product of two scaling tensors, one
//! per (separator, clique) incidence, each living on the intersection of
//! the two variable sets.
//!
//! A separator `s` with incident cliques `c_1, …, c_ℓ` — ordered so that
//! the intersections `X_i = s ∩ c_i` are nested, largest first, with
//! `X_1 = X_2` when `ℓ ≥ 2` — owns the scalings `u_1, …, u_ℓ`. With the far
//! sides frozen into
//!
//! ```text
//!   k_i = P_{X_i}( K_{c_i} ⊙ M_{c_i} ⊙ (ū_i ⊗ 1) ),
//! ```
//!
//! the exact block update maximizes
//!
//! ```text
//!   −Σ_i ⟨k_i, u_i⟩ + ⟨μ_γ, log v⟩        (+ ρ instead when unconstrained)
//!   s.t. Σ_i log(u_i ⊗ 1) = log(v ⊗ 1)    (= ρ·1 when unconstrained),
//! ```
//!
//! whose maximizer has a closed cascade form. Upward, with `q_1 = k_1`,
//!
//! ```text
//!   q_i = ( P_{X_i}(q_{i−1})^{i−1} ⊙ k_i )^{1/i},        i = 2, …, ℓ,
//!   v_{ℓ+1} = ( μ_γ ./ P_γ(q_ℓ) )^ℓ                       (= e^ρ, scalar,
//!                                                with ρ = −ℓ log‖q_ℓ‖₁),
//! ```
//!
//! and back down
//!
//! ```text
//!   a_i = (v_{i+1} ⊗ 1)^{1/i} ⊙ q_i,   v_i = ( a_i ./ P_{X_i}(q_{i−1}) )^{i−1},
//!   u_i = a_i ./ k_i  for i = 2, …, ℓ,           u_1 = v_2 ⊗ 1.
//! ```
//!
//! When the heads are equal, `u_1 = v_2 ⊗ 1` collapses to `a_2 ./ k_1`; the
//! projection form is what makes the two-neighbor case with strictly nested
//! intersections meaningful as well (accepted only under a permissive
//! flag — it sits outside the nesting assumption the cascade was derived
//! for, although the block optimum it produces is exact). After the update
//! the incident plan marginals `a_i = k_i ⊙ u_i` form a consistent chain
//! `a_i = P_{X_i}(a_{i−1})` with `P_γ(a_ℓ) = μ_γ`, and every incident plan
//! has unit mass.
//!
//! Because every cost clique touches exactly two separators, the separator
//! graph (separators as nodes, cost cliques as edges) of a modified
//! junction tree is two-colorable; the solver alternates exact updates of
//! the two color classes, reading only frozen opposite-side state, so a
//! parallel sweep is deterministic regardless of worker count. On a tree
//! encoded with singleton separators this reproduces the edge-based tree
//! solver step for step.
//!
//! Entries of the cascade can underflow once `C_∞/ε` is large; below
//! [`CASCADE_FLOOR`] the update switches to log-space arithmetic (same
//! formulas on logarithms, marginalization via log-sum-exp). The scaling
//! state itself stays in the linear domain.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{ok_or_invalid, Error, Result, Rule, Violation};
use crate::graph::{BipartitePartition, ModifiedJunctionTree, TreeGraph};
use crate::report::{IterationRecord, SolveReport};
use crate::tensor::{AxisLabel, LabeledTensor};
use crate::tree_local::TreeSolverOptions;

/// Smallest cascade entry tolerated in the linear domain; anything below
/// switches the separator update to log-space arithmetic.
pub const CASCADE_FLOOR: f64 = 1e-100;

/// A coupled transport problem over a modified junction tree: one cost
/// tensor per cost clique, one marginal per constrained separator, and a
/// shared regularization strength.
#[derive(Clone, Debug)]
pub struct GraphLocalProblem {
    mjt: ModifiedJunctionTree,
    axes: BTreeMap<AxisLabel, usize>,
    /// Cost tensors broadcast to the full clique frame, clique-indexed.
    costs: Vec<LabeledTensor>,
    /// Marginal μ_γ per constrained separator, mass exactly one.
    marginals: BTreeMap<usize, LabeledTensor>,
    epsilon: f64,
    c_inf: f64,
    /// `K_c ⊙ M_c` per cost clique.
    km: Vec<LabeledTensor>,
    /// `log(K_c ⊙ M_c)` per cost clique.
    lkm: Vec<LabeledTensor>,
    /// Some kernel entry already sits below [`CASCADE_FLOOR`]; every
    /// separator update runs in log space.
    log_forced: bool,
    /// Incident cliques per separator, in inclusion order.
    order: Vec<Vec<usize>>,
    /// Sorted intersection labels aligned with `order`.
    inter: Vec<Vec<Vec<AxisLabel>>>,
    /// Per clique: its two separators and the clique's position in each
    /// separator's inclusion order.
    sides: Vec<[(usize, usize); 2]>,
}

impl GraphLocalProblem {
    pub fn new(
        axes: &[(AxisLabel, usize)],
        mjt: ModifiedJunctionTree,
        costs: Vec<LabeledTensor>,
        marginals: BTreeMap<usize, LabeledTensor>,
        epsilon: f64,
        permissive: bool,
    ) -> Result<Self> {
        let mut vs = Vec::new();
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            vs.push(Violation::new(
                Rule::EpsilonPositive,
                format!("epsilon = {epsilon}"),
            ));
        }
        let mut sizes: BTreeMap<AxisLabel, usize> = BTreeMap::new();
        for &(l, d) in axes {
            if sizes.insert(l, d).is_some() {
                vs.push(Violation::new(
                    Rule::SizeConsistency,
                    format!("axis {l} declared twice"),
                ));
            }
            if d == 0 {
                vs.push(Violation::new(
                    Rule::SizeConsistency,
                    format!("axis {l} has size zero"),
                ));
            }
        }
        for c in mjt.cost_cliques.iter().chain(mjt.separators.iter()) {
            for &v in c {
                if !sizes.contains_key(&AxisLabel(v)) {
                    vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!("variable {v} has no declared axis size"),
                    ));
                }
            }
        }
        if !vs.is_empty() {
            // missing axis sizes would poison every shape below
            return Err(Error::Invalid(vs));
        }
        if costs.len() != mjt.cost_cliques.len() {
            vs.push(Violation::new(
                Rule::FamilyPreservation,
                format!(
                    "expected {} cost tensors, got {}",
                    mjt.cost_cliques.len(),
                    costs.len()
                ),
            ));
        }
        for (ci, cost) in costs.iter().enumerate() {
            let clique = match mjt.cost_cliques.get(ci) {
                Some(c) => c,
                None => break,
            };
            for &(l, d) in cost.axes() {
                if !clique.contains(&l.0) {
                    vs.push(Violation::new(
                        Rule::FamilyPreservation,
                        format!("cost {ci} has axis {l} outside its clique {clique:?}"),
                    ));
                } else if sizes.get(&l) != Some(&d) {
                    vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!(
                            "cost {ci} axis {l} has size {d}, expected {:?}",
                            sizes.get(&l)
                        ),
                    ));
                }
            }
            if cost.values().iter().any(|x| !x.is_finite()) {
                vs.push(Violation::new(
                    Rule::CostFiniteness,
                    format!("cost {ci} has a non-finite entry"),
                ));
            }
        }
        let mut clean: BTreeMap<usize, LabeledTensor> = BTreeMap::new();
        for (&s, mu) in &marginals {
            let gamma = match mjt.constraints.get(&s) {
                Some(g) => g,
                None => {
                    vs.push(Violation::new(
                        Rule::ConstraintPlacement,
                        format!("marginal supplied for unconstrained separator {s}"),
                    ));
                    continue;
                }
            };
            let labels: BTreeSet<usize> = mu.labels().iter().map(|l| l.0).collect();
            if &labels != gamma {
                vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!("marginal of separator {s} covers {labels:?}, expected {gamma:?}"),
                ));
                continue;
            }
            if mu.axes().iter().any(|&(l, d)| sizes.get(&l) != Some(&d)) {
                vs.push(Violation::new(
                    Rule::SizeConsistency,
                    format!("marginal of separator {s} disagrees with the declared axis sizes"),
                ));
                continue;
            }
            if mu.values().iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                vs.push(Violation::new(
                    Rule::MarginalPositivity,
                    format!("marginal of separator {s} has a non-positive entry"),
                ));
                continue;
            }
            let mass = mu.total_mass();
            if (mass - 1.0).abs() > 1e-9 {
                vs.push(Violation::new(
                    Rule::MarginalMass,
                    format!("marginal of separator {s} has mass {mass}"),
                ));
                continue;
            }
            clean.insert(s, mu.scale(1.0 / mass));
        }
        for &s in mjt.constraints.keys() {
            if !marginals.contains_key(&s) {
                vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!("constrained separator {s} has no marginal"),
                ));
            }
        }
        let factor_sets: Vec<BTreeSet<usize>> = costs
            .iter()
            .map(|c| c.labels().iter().map(|l| l.0).collect())
            .collect();
        let constraint_sets: Vec<BTreeSet<usize>> = clean
            .values()
            .map(|m| m.labels().iter().map(|l| l.0).collect())
            .collect();
        let mut structural = mjt.validate(&factor_sets, &constraint_sets);
        if permissive {
            structural.retain(|v| v.rule != Rule::InclusionSequence);
        }
        vs.extend(structural);
        ok_or_invalid(vs)?;

        let ns = mjt.separators.len();
        let mut order = Vec::with_capacity(ns);
        let mut inter = Vec::with_capacity(ns);
        for s in 0..ns {
            let ord = mjt.inclusion_order(s, permissive)?;
            let labs: Vec<Vec<AxisLabel>> = ord
                .iter()
                .map(|&c| mjt.intersection(s, c).into_iter().map(AxisLabel).collect())
                .collect();
            order.push(ord);
            inter.push(labs);
        }
        let nc = mjt.cost_cliques.len();
        let mut sides = Vec::with_capacity(nc);
        for c in 0..nc {
            let seps = mjt.clique_seps(c);
            let mut pair = [(0usize, 0usize); 2];
            for (slot, &s) in seps.iter().enumerate() {
                let pos = order[s].iter().position(|&cc| cc == c).unwrap();
                pair[slot] = (s, pos);
            }
            sides.push(pair);
        }

        let c_inf = costs.iter().map(LabeledTensor::max_abs).fold(0.0, f64::max);
        let mut full_costs = Vec::with_capacity(nc);
        let mut km = Vec::with_capacity(nc);
        let mut lkm = Vec::with_capacity(nc);
        let mut log_forced = false;
        for c in 0..nc {
            let frame: Vec<(AxisLabel, usize)> = mjt.cost_cliques[c]
                .iter()
                .map(|&v| (AxisLabel(v), sizes[&AxisLabel(v)]))
                .collect();
            let full = LabeledTensor::zeros(&frame)?.broadcast_add(&costs[c])?;
            let mut lk = full.scale(-1.0 / epsilon);
            for &(s, _) in &sides[c] {
                if let Some(mu) = clean.get(&s) {
                    lk = lk.broadcast_add(&mu.map(f64::ln))?;
                }
            }
            let k = lk.map(f64::exp);
            log_forced |= k.min() < CASCADE_FLOOR;
            full_costs.push(full);
            km.push(k);
            lkm.push(lk);
        }

        Ok(GraphLocalProblem {
            mjt,
            axes: sizes,
            costs: full_costs,
            marginals: clean,
            epsilon,
            c_inf,
            km,
            lkm,
            log_forced,
            order,
            inter,
            sides,
        })
    }

    pub fn mjt(&self) -> &ModifiedJunctionTree {
        &self.mjt
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Largest absolute cost entry over all cliques.
    pub fn c_inf(&self) -> f64 {
        self.c_inf
    }

    pub fn n_cliques(&self) -> usize {
        self.mjt.cost_cliques.len()
    }

    pub fn n_separators(&self) -> usize {
        self.mjt.separators.len()
    }

    /// Cost tensor of clique `c`, broadcast to the full clique frame.
    pub fn cost(&self, c: usize) -> &LabeledTensor {
        &self.costs[c]
    }

    pub fn marginal(&self, sep: usize) -> Option<&LabeledTensor> {
        self.marginals.get(&sep)
    }

    /// Incident cliques of `sep` in inclusion order.
    pub fn order(&self, sep: usize) -> &[usize] {
        &self.order[sep]
    }

    /// Sorted labels of `sep ∩ c_i` for the i-th clique of the inclusion
    /// order.
    pub fn intersection_labels(&self, sep: usize, i: usize) -> &[AxisLabel] {
        &self.inter[sep][i]
    }

    /// True when the kernels force every update into log space.
    pub fn log_forced(&self) -> bool {
        self.log_forced
    }

    fn frame(&self, labels: &[AxisLabel]) -> Vec<(AxisLabel, usize)> {
        labels.iter().map(|&l| (l, self.axes[&l])).collect()
    }

    /// Scaling tensor on the far side of clique `c` as seen from `sep`.
    fn far_dual<'a>(
        &self,
        state: &'a CliqueScalingState,
        c: usize,
        sep: usize,
    ) -> &'a LabeledTensor {
        let [(sa, pa), (sb, pb)] = self.sides[c];
        if sa == sep {
            &state.u[sb][pb]
        } else {
            &state.u[sa][pa]
        }
    }
}

/// Dual state: one scaling tensor per (separator, incident clique) pair,
/// plus the constraint-side bookkeeping — `u_γ` (the `v_{ℓ+1}` block) for
/// constrained separators and the mass multiplier `ρ` for the rest.
#[derive(Clone, Debug, PartialEq)]
pub struct CliqueScalingState {
    /// `u[s][i]` lives on the intersection of separator `s` with the i-th
    /// clique of its inclusion order.
    pub u: Vec<Vec<LabeledTensor>>,
    /// Constrained separators only.
    pub u_gamma: BTreeMap<usize, LabeledTensor>,
    /// Unconstrained separators only.
    pub rho: BTreeMap<usize, f64>,
    /// Iterations applied so far.
    pub t: usize,
}

impl CliqueScalingState {
    /// All-ones start: `u ≡ 1`, `u_γ ≡ 1`, `ρ = 0`.
    pub fn init(p: &GraphLocalProblem) -> Result<Self> {
        let mut u = Vec::with_capacity(p.n_separators());
        let mut u_gamma = BTreeMap::new();
        let mut rho = BTreeMap::new();
        for s in 0..p.n_separators() {
            let mut row = Vec::with_capacity(p.order[s].len());
            for labs in &p.inter[s] {
                row.push(LabeledTensor::ones(&p.frame(labs))?);
            }
            u.push(row);
            match p.marginal(s) {
                Some(mu) => {
                    u_gamma.insert(s, mu.map(|_| 1.0));
                }
                None => {
                    rho.insert(s, 0.0);
                }
            }
        }
        Ok(CliqueScalingState {
            u,
            u_gamma,
            rho,
            t: 0,
        })
    }

    pub fn apply(&mut self, up: SeparatorUpdate) {
        self.u[up.sep] = up.u_new;
        if let Some(v) = up.u_gamma_new {
            self.u_gamma.insert(up.sep, v);
        }
        if let Some(r) = up.rho_new {
            self.rho.insert(up.sep, r);
        }
    }
}

/// Replacement block produced by one exact separator update.
#[derive(Clone, Debug)]
pub struct SeparatorUpdate {
    pub sep: usize,
    pub u_new: Vec<LabeledTensor>,
    pub u_gamma_new: Option<LabeledTensor>,
    pub rho_new: Option<f64>,
}

/// Plan of cost clique `c` at the current state,
/// `B_c = K_c ⊙ M_c ⊙ (u_a ⊗ 1) ⊙ (u_b ⊗ 1)`.
pub fn clique_plan(
    p: &GraphLocalProblem,
    state: &CliqueScalingState,
    c: usize,
) -> Result<LabeledTensor> {
    let [(sa, pa), (sb, pb)] = p.sides[c];
    p.km[c]
        .broadcast_mul(&state.u[sa][pa])?
        .broadcast_mul(&state.u[sb][pb])
}

/// All clique plans, clique-indexed.
pub fn all_plans(p: &GraphLocalProblem, state: &CliqueScalingState) -> Result<Vec<LabeledTensor>> {
    (0..p.n_cliques())
        .map(|c| clique_plan(p, state, c))
        .collect()
}

/// Frozen far side of the i-th clique incident to `sep`:
/// `k_i = P_{X_i}(K ⊙ M ⊙ (ū_i ⊗ 1))`. Pairing with the separator's own
/// scaling gives the plan mass, `⟨k_i, u_i⟩ = ‖B_{c_i}‖₁`.
pub fn k_message(
    p: &GraphLocalProblem,
    state: &CliqueScalingState,
    sep: usize,
    i: usize,
) -> Result<LabeledTensor> {
    let c = p.order[sep][i];
    p.km[c]
        .broadcast_mul(p.far_dual(state, c, sep))?
        .project(&p.inter[sep][i])
}

fn k_message_log(
    p: &GraphLocalProblem,
    state: &CliqueScalingState,
    sep: usize,
    i: usize,
) -> Result<LabeledTensor> {
    let c = p.order[sep][i];
    p.lkm[c]
        .broadcast_add(&p.far_dual(state, c, sep).map(f64::ln))?
        .project_logsumexp(&p.inter[sep][i])
}

fn healthy(t: &LabeledTensor) -> bool {
    t.min() >= CASCADE_FLOOR && t.max_abs().is_finite()
}

/// Exact block update of one separator; reads only frozen state. Runs the
/// cascade in the linear domain and falls back to log space when entries
/// leave `[CASCADE_FLOOR, ∞)`.
pub fn separator_update(
    p: &GraphLocalProblem,
    state: &CliqueScalingState,
    sep: usize,
) -> Result<SeparatorUpdate> {
    if sep >= p.n_separators() {
        return Err(Error::Contract(format!(
            "separator index {sep} out of range (have {})",
            p.n_separators()
        )));
    }
    if p.log_forced {
        return separator_update_log(p, state, sep);
    }
    let ell = p.order[sep].len();
    let ks: Vec<LabeledTensor> = (0..ell)
        .map(|i| k_message(p, state, sep, i))
        .collect::<Result<_>>()?;
    if !ks.iter().all(healthy) {
        return separator_update_log(p, state, sep);
    }
    match cascade_linear(p, sep, &ks)? {
        Some(up) => Ok(up),
        None => separator_update_log(p, state, sep),
    }
}

/// Linear-domain cascade; `None` means an intermediate left the safe range
/// and the caller should redo the update in log space.
fn cascade_linear(
    p: &GraphLocalProblem,
    sep: usize,
    ks: &[LabeledTensor],
) -> Result<Option<SeparatorUpdate>> {
    let ell = ks.len();
    let mut q: Vec<LabeledTensor> = Vec::with_capacity(ell);
    q.push(ks[0].clone());
    for i in 1..ell {
        let proj = q[i - 1].project(&p.inter[sep][i])?;
        let next = proj
            .powf(i as f64)?
            .hadamard(&ks[i])?
            .powf(1.0 / (i as f64 + 1.0))?;
        if !healthy(&next) {
            return Ok(None);
        }
        q.push(next);
    }
    let (mut v_next, u_gamma_new, rho_new) = match p.marginal(sep) {
        Some(mu) => {
            let pg = q[ell - 1].project(&mu.labels())?;
            if !healthy(&pg) {
                return Ok(None);
            }
            let v = mu.elementwise_div(&pg)?.powf(ell as f64)?;
            if !healthy(&v) {
                return Ok(None);
            }
            (v.clone(), Some(v), None)
        }
        None => {
            let mass = q[ell - 1].total_mass();
            if !(mass >= CASCADE_FLOOR) || !mass.is_finite() {
                return Ok(None);
            }
            let rho = -(ell as f64) * mass.ln();
            let v = LabeledTensor::scalar(rho.exp());
            if !healthy(&v) {
                return Ok(None);
            }
            (v, None, Some(rho))
        }
    };
    let mut u_new: Vec<Option<LabeledTensor>> = vec![None; ell];
    for idx in (1..ell).rev() {
        let a = q[idx].broadcast_mul(&v_next.powf(1.0 / (idx as f64 + 1.0))?)?;
        if !healthy(&a) {
            return Ok(None);
        }
        u_new[idx] = Some(a.elementwise_div(&ks[idx])?);
        let proj = q[idx - 1].project(&p.inter[sep][idx])?;
        v_next = a.elementwise_div(&proj)?.powf(idx as f64)?;
        if !healthy(&v_next) {
            return Ok(None);
        }
    }
    let head = LabeledTensor::ones(&p.frame(&p.inter[sep][0]))?.broadcast_mul(&v_next)?;
    u_new[0] = Some(head);
    Ok(Some(SeparatorUpdate {
        sep,
        u_new: u_new.into_iter().map(Option::unwrap).collect(),
        u_gamma_new,
        rho_new,
    }))
}

/// The same cascade on logarithms, with log-sum-exp marginalization.
fn separator_update_log(
    p: &GraphLocalProblem,
    state: &CliqueScalingState,
    sep: usize,
) -> Result<SeparatorUpdate> {
    let ell = p.order[sep].len();
    let lks: Vec<LabeledTensor> = (0..ell)
        .map(|i| k_message_log(p, state, sep, i))
        .collect::<Result<_>>()?;
    for lk in &lks {
        if lk.values().iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                index: None,
                reason: format!(
                    "a kernel slice at separator {sep} has no mass; use a larger epsilon"
                ),
            });
        }
    }
    let mut lq: Vec<LabeledTensor> = Vec::with_capacity(ell);
    lq.push(lks[0].clone());
    for i in 1..ell {
        let proj = lq[i - 1].project_logsumexp(&p.inter[sep][i])?;
        lq.push(
            proj.scale(i as f64)
                .broadcast_add(&lks[i])?
                .scale(1.0 / (i as f64 + 1.0)),
        );
    }
    let (mut lv_next, u_gamma_new, rho_new) = match p.marginal(sep) {
        Some(mu) => {
            let pg = lq[ell - 1].project_logsumexp(&mu.labels())?;
            let lv = mu
                .map(f64::ln)
                .broadcast_add(&pg.scale(-1.0))?
                .scale(ell as f64);
            (lv.clone(), Some(lv.map(f64::exp)), None)
        }
        None => {
            let lmass = lq[ell - 1].project_logsumexp(&[])?.values()[0];
            let rho = -(ell as f64) * lmass;
            (LabeledTensor::scalar(rho), None, Some(rho))
        }
    };
    let mut u_new: Vec<Option<LabeledTensor>> = vec![None; ell];
    for idx in (1..ell).rev() {
        let la = lq[idx].broadcast_add(&lv_next.scale(1.0 / (idx as f64 + 1.0)))?;
        u_new[idx] = Some(la.broadcast_add(&lks[idx].scale(-1.0))?.map(f64::exp));
        let proj = lq[idx - 1].project_logsumexp(&p.inter[sep][idx])?;
        lv_next = la.broadcast_add(&proj.scale(-1.0))?.scale(idx as f64);
    }
    let head = LabeledTensor::zeros(&p.frame(&p.inter[sep][0]))?
        .broadcast_add(&lv_next)?
        .map(f64::exp);
    u_new[0] = Some(head);
    for u in u_new.iter().flatten() {
        if u.values().iter().any(|x| !x.is_finite() || !(*x > 0.0)) {
            return Err(Error::Numeric {
                index: None,
                reason: format!(
                    "scaling overflow at separator {sep}; epsilon is too small for this cost scale"
                ),
            });
        }
    }
    Ok(SeparatorUpdate {
        sep,
        u_new: u_new.into_iter().map(Option::unwrap).collect(),
        u_gamma_new,
        rho_new,
    })
}

/// Residual split mirroring the tree solver.
#[derive(Clone, Copy, Debug, Default)]
pub struct GraphResidual {
    /// Σ over constrained separators and incident cliques of
    /// ‖P_γ(B_c) − μ_γ‖₁.
    pub constrained: f64,
    /// Σ over unconstrained separators of the ℓ₁ deviation of the incident
    /// marginals — projected onto the smallest intersection — from their
    /// arithmetic mean.
    pub free: f64,
}

impl GraphResidual {
    pub fn total(&self) -> f64 {
        self.constrained + self.free
    }
}

/// Residual of the given plans. On a tree encoded with singleton
/// separators this is exactly the tree solver's residual.
pub fn residual_from_plans(
    p: &GraphLocalProblem,
    plans: &[LabeledTensor],
) -> Result<GraphResidual> {
    let mut r = GraphResidual::default();
    for s in 0..p.n_separators() {
        let ell = p.order[s].len();
        let margs: Vec<LabeledTensor> = (0..ell)
            .map(|i| plans[p.order[s][i]].project(&p.inter[s][i]))
            .collect::<Result<_>>()?;
        match p.marginal(s) {
            Some(mu) => {
                for m in &margs {
                    r.constrained += m.project(&mu.labels())?.l1_diff(mu)?;
                }
            }
            None => {
                let small = &p.inter[s][ell - 1];
                let ps: Vec<LabeledTensor> = margs
                    .iter()
                    .map(|m| m.project(small))
                    .collect::<Result<_>>()?;
                let mut mean = LabeledTensor::zeros(&p.frame(small))?;
                for m in &ps {
                    mean = mean.broadcast_add(m)?;
                }
                let mean = mean.scale(1.0 / ell as f64);
                for m in &ps {
                    r.free += m.l1_diff(&mean)?;
                }
            }
        }
    }
    Ok(r)
}

pub fn residual(p: &GraphLocalProblem, state: &CliqueScalingState) -> Result<GraphResidual> {
    residual_from_plans(p, &all_plans(p, state)?)
}

/// Dual objective in minimization form,
/// `f = Σ_c ‖B_c‖₁ − Σ_γ ⟨μ_γ, log u_γ⟩ − Σ ρ`; exact block updates never
/// increase it.
pub fn dual_f(
    p: &GraphLocalProblem,
    state: &CliqueScalingState,
    plans: &[LabeledTensor],
) -> Result<f64> {
    let mut f = plans.iter().map(LabeledTensor::total_mass).sum::<f64>();
    for (s, v) in &state.u_gamma {
        f -= p.marginals[s].inner(&v.map(f64::ln))?;
    }
    for r in state.rho.values() {
        f -= r;
    }
    Ok(f)
}

/// Transport cost `Σ_c ⟨C_c, B_c⟩` of the given plans.
pub fn plan_cost(p: &GraphLocalProblem, plans: &[LabeledTensor]) -> Result<f64> {
    let mut acc = 0.0;
    for (c, b) in plans.iter().enumerate() {
        acc += p.costs[c].inner(b)?;
    }
    Ok(acc)
}

/// Worst violation, in log units, of the separator's bookkeeping
/// constraint `Σ_i log(u_i ⊗ 1) = log(u_γ ⊗ 1)` (or `= ρ·1`). Zero right
/// after the separator's own update, up to rounding.
pub fn dual_feasibility_gap(
    p: &GraphLocalProblem,
    state: &CliqueScalingState,
    sep: usize,
) -> Result<f64> {
    let frame = p.frame(&p.inter[sep][0]);
    let mut acc = LabeledTensor::zeros(&frame)?;
    for u in &state.u[sep] {
        acc = acc.broadcast_add(&u.map(f64::ln))?;
    }
    let target = match p.marginal(sep) {
        Some(_) => {
            LabeledTensor::zeros(&frame)?.broadcast_add(&state.u_gamma[&sep].map(f64::ln))?
        }
        None => {
            let rho = state.rho[&sep];
            LabeledTensor::zeros(&frame)?.map(|_| rho)
        }
    };
    Ok(acc.broadcast_add(&target.scale(-1.0))?.max_abs())
}

fn lambda_range(p: &GraphLocalProblem, state: &CliqueScalingState) -> f64 {
    let mut worst: f64 = 0.0;
    for row in &state.u {
        for u in row {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &x in u.values() {
                let l = x.ln();
                lo = lo.min(l);
                hi = hi.max(l);
            }
            worst = worst.max(p.epsilon * (hi - lo));
        }
    }
    worst
}

fn record(
    p: &GraphLocalProblem,
    state: &CliqueScalingState,
    plans: &[LabeledTensor],
    start: Instant,
) -> Result<IterationRecord> {
    let mut mass_dev: f64 = 0.0;
    for b in plans {
        mass_dev = mass_dev.max((b.total_mass() - 1.0).abs());
    }
    Ok(IterationRecord {
        t: state.t,
        residual: residual_from_plans(p, plans)?.total(),
        dual: dual_f(p, state, plans)?,
        max_mass_dev: mass_dev,
        max_lambda_range: lambda_range(p, state),
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// Two-coloring of the separator graph (separators as nodes, cost cliques
/// as edges); the classes alternate as the active side of an iteration.
pub fn separator_partition(p: &GraphLocalProblem) -> Result<BipartitePartition> {
    let edges: Vec<(usize, usize)> = p
        .sides
        .iter()
        .map(|&[(sa, _), (sb, _)]| (sa.min(sb), sa.max(sb)))
        .collect();
    TreeGraph::new_unchecked((0..p.n_separators()).collect(), edges, BTreeSet::new()).two_color()
}

/// Result of a graph-local solve.
#[derive(Clone, Debug)]
pub struct GraphLocalOutcome {
    /// Final plans, clique-indexed.
    pub plans: Vec<LabeledTensor>,
    pub state: CliqueScalingState,
    pub partition: BipartitePartition,
    /// Separator side not updated last (its constraints may still be off);
    /// `None` when no update ran.
    pub mismatch_side: Option<u8>,
    pub report: SolveReport,
}

/// Alternate exact separator updates over the two color classes until the
/// residual drops below `opts.tol` or `opts.max_iter` iterations have run.
/// Every separator of the active side reads only frozen opposite-side
/// state, so the result is independent of the worker count.
pub fn solve(p: &GraphLocalProblem, opts: &TreeSolverOptions) -> Result<GraphLocalOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::Contract(format!(
            "stopping threshold must be positive, got {}",
            opts.tol
        )));
    }
    let partition = separator_partition(p)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let mut state = CliqueScalingState::init(p)?;
    let mut plans = all_plans(p, &state)?;
    let mut trace = vec![record(p, &state, &plans, start)?];
    let mut t = 0usize;
    while trace.last().unwrap().residual >= opts.tol && t < opts.max_iter {
        t += 1;
        let active: Vec<usize> = partition.active(t).iter().copied().collect();
        let updates: Vec<SeparatorUpdate> = pool.install(|| {
            active
                .par_iter()
                .map(|&s| separator_update(p, &state, s))
                .collect::<Result<Vec<_>>>()
        })?;
        for up in updates {
            state.apply(up);
        }
        state.t = t;
        plans = all_plans(p, &state)?;
        trace.push(record(p, &state, &plans, start)?);
    }
    let converged = trace.last().unwrap().residual < opts.tol;
    let final_cost = plan_cost(p, &plans)?;
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
        bound: None,
        trace,
        final_cost,
        rounded_cost: None,
        threads: opts.threads,
        wall_clock: start.elapsed().as_secs_f64(),
    };
    Ok(GraphLocalOutcome {
        plans,
        state,
        partition,
        mismatch_side,
        report,
    })
}
