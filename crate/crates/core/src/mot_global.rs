//! Global-regularization solvers for graph-structured multi-marginal
//! optimal transport.
//!
//! The problem is
//!
//! ```text
//!   min ⟨𝐂, 𝐁⟩   subject to   P_α(𝐁) = μ_α  for every constrained set α,
//! ```
//!
//! over nonneg. tensors 𝐁 with one mode per variable, where the cost splits
//! into clique terms 𝐂 = Σ_c 𝐂_c. Entropic regularization with strength ε
//! (relative to the reference 𝐌 = ⊗_α μ_α, extended by ones) makes the
//! optimum a scaled kernel
//!
//! ```text
//!   𝐁 = 𝐊 ⊙ 𝐔 ⊙ 𝐌,    𝐊 = exp(−𝐂/ε),    𝐔 = ⊗_α u_α,
//! ```
//!
//! and coordinate ascent in the dual
//!
//! ```text
//!   max_λ  −ε‖𝐊⊙𝐔⊙𝐌‖₁ + Σ_α λ_αᵀ μ_α,      u_α = exp(λ_α/ε),
//! ```
//!
//! is exactly the scaling update u_α ← u_α ⊙ μ_α ./ P_α(𝐁). Two evaluation
//! strategies are provided:
//!
//! * [`sinkhorn_full`] materializes the full tensor (small instances; also
//!   the oracle the message-passing path is tested against), optionally in
//!   the log domain ([`sinkhorn_full_log`]) when ε is small enough that
//!   `exp(−𝐂/ε)` underflows.
//! * [`isbp`] runs the same scaling updates on a junction tree whose cliques
//!   host the cost terms, with constrained sets sitting on leaf cliques.
//!   Each projection is computed exactly by one inward sweep of
//!   belief-propagation messages, so no tensor larger than a clique is ever
//!   formed.
//!
//! Messages are kept normalized to total mass one; the discarded scale is
//! carried as a log factor and folded back when plans are reconstructed.
//! This keeps long chains from under- or overflowing without changing any
//! fixed point.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ok_or_invalid, Error, Result, Rule, Violation};
use crate::graph::JunctionTree;
use crate::report::{IterationRecord, SolveReport};
use crate::tensor::{AxisLabel, LabeledTensor};

/// Largest full-tensor size the dense code paths will materialize.
pub const DENSE_CAP: usize = 1 << 24;

/// Floor applied to marginal entries under [`ZeroPolicy::Clamp`].
pub const MARGINAL_FLOOR: f64 = 1e-300;

/// How to treat zero entries in a given marginal. Scaling updates divide by
/// projections, so exact zeros propagate into 0/0; by default they are
/// rejected, and `Clamp` instead lifts them to [`MARGINAL_FLOOR`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ZeroPolicy {
    Reject,
    Clamp,
}

/// A multi-marginal transport problem with clique-structured costs and
/// marginal constraints on subsets of the variables.
///
/// Variables are axis labels; every cost clique and every constrained
/// marginal is a [`LabeledTensor`] over a subset of them. Marginals are
/// validated to be positive with total mass one (then renormalized exactly),
/// and constrained sets must be pairwise disjoint so that the reference
/// tensor ⊗_α μ_α is well defined.
#[derive(Clone, Debug)]
pub struct MotProblem {
    axes: Vec<(AxisLabel, usize)>,
    clique_costs: Vec<LabeledTensor>,
    marginals: Vec<LabeledTensor>,
    epsilon: f64,
    c_inf: f64,
}

impl MotProblem {
    pub fn new(
        axes: Vec<(AxisLabel, usize)>,
        clique_costs: Vec<LabeledTensor>,
        marginals: Vec<LabeledTensor>,
        epsilon: f64,
        zeros: ZeroPolicy,
    ) -> Result<Self> {
        let mut axes = axes;
        axes.sort_by_key(|&(l, _)| l);
        let mut vs: Vec<Violation> = Vec::new();
        for (i, &(l, s)) in axes.iter().enumerate() {
            if axes[..i].iter().any(|&(m, _)| m == l) {
                vs.push(Violation::new(
                    Rule::SizeConsistency,
                    format!("variable {l} declared twice"),
                ));
            }
            if s == 0 {
                vs.push(Violation::new(
                    Rule::SizeConsistency,
                    format!("variable {l} has size 0"),
                ));
            }
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            vs.push(Violation::new(
                Rule::EpsilonPositive,
                format!("epsilon = {epsilon}"),
            ));
        }
        let size_of = |l: AxisLabel| axes.iter().find(|&&(m, _)| m == l).map(|&(_, s)| s);
        let mut c_inf: f64 = 0.0;
        for (ci, c) in clique_costs.iter().enumerate() {
            for &(l, s) in c.axes() {
                match size_of(l) {
                    None => vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!("cost clique {ci} uses undeclared variable {l}"),
                    )),
                    Some(d) if d != s => vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!("cost clique {ci}: variable {l} has size {s}, declared {d}"),
                    )),
                    _ => {}
                }
            }
            if c.values().iter().any(|v| !v.is_finite()) {
                vs.push(Violation::new(
                    Rule::CostFiniteness,
                    format!("cost clique {ci} has a non-finite entry"),
                ));
            }
            c_inf = c_inf.max(c.max_abs());
        }
        let mut marginals = marginals;
        let mut seen: Vec<BTreeSet<usize>> = Vec::new();
        for (mi, mu) in marginals.iter_mut().enumerate() {
            for &(l, s) in mu.axes() {
                match size_of(l) {
                    None => vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!("marginal {mi} uses undeclared variable {l}"),
                    )),
                    Some(d) if d != s => vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!("marginal {mi}: variable {l} has size {s}, declared {d}"),
                    )),
                    _ => {}
                }
            }
            let set: BTreeSet<usize> = mu.labels().iter().map(|l| l.0).collect();
            if seen.iter().any(|o| !o.is_disjoint(&set)) {
                vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!("constrained sets overlap at marginal {mi} over {set:?}"),
                ));
            }
            seen.push(set);
            let mut positive = true;
            for v in mu.values_mut() {
                if !v.is_finite() || *v < 0.0 {
                    positive = false;
                } else if *v == 0.0 {
                    match zeros {
                        ZeroPolicy::Reject => positive = false,
                        ZeroPolicy::Clamp => *v = MARGINAL_FLOOR,
                    }
                }
            }
            if !positive {
                vs.push(Violation::new(
                    Rule::MarginalPositivity,
                    format!("marginal {mi} has a zero, negative, or non-finite entry"),
                ));
                continue;
            }
            let mass = mu.total_mass();
            if (mass - 1.0).abs() > 1e-9 {
                vs.push(Violation::new(
                    Rule::MarginalMass,
                    format!("marginal {mi} has total mass {mass}"),
                ));
            } else {
                for v in mu.values_mut() {
                    *v /= mass;
                }
            }
        }
        ok_or_invalid(vs)?;
        Ok(MotProblem {
            axes,
            clique_costs,
            marginals,
            epsilon,
            c_inf,
        })
    }

    /// Variables and their sizes, sorted by label.
    pub fn axes(&self) -> &[(AxisLabel, usize)] {
        &self.axes
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Largest cost magnitude over all cliques.
    pub fn c_inf(&self) -> f64 {
        self.c_inf
    }

    pub fn clique_costs(&self) -> &[LabeledTensor] {
        &self.clique_costs
    }

    /// Constrained marginals; each tensor's label set is its constrained set.
    pub fn marginals(&self) -> &[LabeledTensor] {
        &self.marginals
    }

    fn dense_len(&self) -> Result<usize> {
        let mut n: usize = 1;
        for &(_, s) in &self.axes {
            n = n.checked_mul(s).ok_or(Error::DenseCapExceeded {
                size: usize::MAX,
                cap: DENSE_CAP,
            })?;
        }
        if n > DENSE_CAP {
            return Err(Error::DenseCapExceeded {
                size: n,
                cap: DENSE_CAP,
            });
        }
        Ok(n)
    }

    /// Full-frame kernel 𝐊 = exp(−Σ_c 𝐂_c / ε). Fails on frames beyond
    /// [`DENSE_CAP`].
    pub fn dense_kernel(&self) -> Result<LabeledTensor> {
        Ok(self.dense_log_kernel()?.map(f64::exp))
    }

    /// Full-frame −𝐂/ε, the log of [`Self::dense_kernel`].
    pub fn dense_log_kernel(&self) -> Result<LabeledTensor> {
        self.dense_len()?;
        let mut acc = LabeledTensor::zeros(&self.axes)?;
        for c in &self.clique_costs {
            acc = acc.broadcast_add(&c.scale(-1.0 / self.epsilon))?;
        }
        Ok(acc)
    }

    /// Reference tensor 𝐌 = ⊗_α μ_α, extended by ones over unconstrained
    /// variables.
    pub fn reference_tensor(&self) -> Result<LabeledTensor> {
        self.dense_len()?;
        let mut m = LabeledTensor::ones(&self.axes)?;
        for mu in &self.marginals {
            m = m.broadcast_mul(mu)?;
        }
        Ok(m)
    }

    /// Transport cost ⟨𝐂, 𝐁⟩ of a full-frame plan, accumulated clique by
    /// clique through projections.
    pub fn plan_cost(&self, b: &LabeledTensor) -> Result<f64> {
        let mut acc = 0.0;
        for c in &self.clique_costs {
            acc += c.inner(&b.project(&c.labels())?)?;
        }
        Ok(acc)
    }
}

fn vanished(what: &str) -> Error {
    Error::Numeric {
        index: None,
        reason: format!("{what}; use a larger epsilon or the log-domain mode"),
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Contract(format!(
            "tolerance must be positive and finite, got {tol}"
        )));
    }
    Ok(())
}

/// Full-tensor iterative scaling in the linear domain.
///
/// One iteration sweeps every constrained set once in the given order. The
/// run stops when the residual Σ_α ‖P_α(𝐁) − μ_α‖₁ drops below `tol`;
/// hitting `max_iter` first returns a report flagged as not converged rather
/// than an error. The report's trace carries the dual objective, which is
/// non-decreasing across sweeps.
pub fn sinkhorn_full(
    p: &MotProblem,
    tol: f64,
    max_iter: usize,
) -> Result<(LabeledTensor, SolveReport)> {
    check_tol(tol)?;
    let start = Instant::now();
    let km = {
        let mut t = p.dense_kernel()?;
        for mu in p.marginals() {
            t = t.broadcast_mul(mu)?;
        }
        t
    };
    let mut us: Vec<LabeledTensor> = p
        .marginals()
        .iter()
        .map(|mu| LabeledTensor::ones(mu.axes()))
        .collect::<Result<_>>()?;
    let build = |us: &[LabeledTensor]| -> Result<LabeledTensor> {
        let mut b = km.clone();
        for u in us {
            b = b.broadcast_mul(u)?;
        }
        Ok(b)
    };
    let record = |t: usize, b: &LabeledTensor, us: &[LabeledTensor]| -> Result<IterationRecord> {
        let mut residual = 0.0;
        for mu in p.marginals() {
            residual += b.project(&mu.labels())?.l1_diff(mu)?;
        }
        let mut dual = -p.epsilon() * b.total_mass();
        let mut lrange: f64 = 0.0;
        for (u, mu) in us.iter().zip(p.marginals()) {
            let lu = u.map(f64::ln);
            dual += p.epsilon() * lu.inner(mu)?;
            let (lo, hi) = min_max(lu.values());
            lrange = lrange.max(p.epsilon() * (hi - lo));
        }
        Ok(IterationRecord {
            t,
            residual,
            dual,
            max_mass_dev: (b.total_mass() - 1.0).abs(),
            max_lambda_range: lrange,
            elapsed: start.elapsed().as_secs_f64(),
        })
    };
    let mut b = build(&us)?;
    let mut trace = vec![record(0, &b, &us)?];
    let mut t = 0;
    while trace.last().unwrap().residual >= tol && t < max_iter {
        t += 1;
        for i in 0..us.len() {
            let mu = &p.marginals()[i];
            let q = b.project(&mu.labels())?;
            if q.values().iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(vanished("a required projection vanished"));
            }
            us[i] = us[i].hadamard(mu)?.elementwise_div(&q)?;
            b = build(&us)?;
        }
        trace.push(record(t, &b, &us)?);
    }
    let converged = trace.last().unwrap().residual < tol;
    let final_cost = p.plan_cost(&b)?;
    let report = SolveReport {
        iterations: t,
        converged,
        bound: None,
        trace,
        final_cost,
        rounded_cost: None,
        threads: 1,
        wall_clock: start.elapsed().as_secs_f64(),
    };
    Ok((b, report))
}

/// Log-domain variant of [`sinkhorn_full`] for regimes where exp(−𝐂/ε)
/// underflows: the plan is represented by its entrywise log and projections
/// use max-shifted exponentials.
pub fn sinkhorn_full_log(
    p: &MotProblem,
    tol: f64,
    max_iter: usize,
) -> Result<(LabeledTensor, SolveReport)> {
    check_tol(tol)?;
    let start = Instant::now();
    let lkm = {
        let mut t = p.dense_log_kernel()?;
        for mu in p.marginals() {
            t = t.broadcast_add(&mu.map(f64::ln))?;
        }
        t
    };
    let mut lus: Vec<LabeledTensor> = p
        .marginals()
        .iter()
        .map(|mu| LabeledTensor::zeros(mu.axes()))
        .collect::<Result<_>>()?;
    let build = |lus: &[LabeledTensor]| -> Result<LabeledTensor> {
        let mut lb = lkm.clone();
        for lu in lus {
            lb = lb.broadcast_add(lu)?;
        }
        Ok(lb)
    };
    let record = |t: usize, lb: &LabeledTensor, lus: &[LabeledTensor]| -> Result<IterationRecord> {
        let mut residual = 0.0;
        for mu in p.marginals() {
            let q = lb.project_logsumexp(&mu.labels())?.map(f64::exp);
            residual += q.l1_diff(mu)?;
        }
        let mass = lb.project_logsumexp(&[])?.values()[0].exp();
        let mut dual = -p.epsilon() * mass;
        let mut lrange: f64 = 0.0;
        for (lu, mu) in lus.iter().zip(p.marginals()) {
            dual += p.epsilon() * lu.inner(mu)?;
            let (lo, hi) = min_max(lu.values());
            lrange = lrange.max(p.epsilon() * (hi - lo));
        }
        Ok(IterationRecord {
            t,
            residual,
            dual,
            max_mass_dev: (mass - 1.0).abs(),
            max_lambda_range: lrange,
            elapsed: start.elapsed().as_secs_f64(),
        })
    };
    let mut lb = build(&lus)?;
    let mut trace = vec![record(0, &lb, &lus)?];
    let mut t = 0;
    while trace.last().unwrap().residual >= tol && t < max_iter {
        t += 1;
        for i in 0..lus.len() {
            let mu = &p.marginals()[i];
            let lq = lb.project_logsumexp(&mu.labels())?;
            if lq
                .values()
                .iter()
                .any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
            {
                return Err(vanished("a required projection vanished"));
            }
            let step = mu.map(f64::ln).broadcast_add(&lq.scale(-1.0))?;
            lus[i] = lus[i].broadcast_add(&step)?;
            lb = build(&lus)?;
        }
        trace.push(record(t, &lb, &lus)?);
    }
    let converged = trace.last().unwrap().residual < tol;
    let b = lb.map(f64::exp);
    let final_cost = p.plan_cost(&b)?;
    let report = SolveReport {
        iterations: t,
        converged,
        bound: None,
        trace,
        final_cost,
        rounded_cost: None,
        threads: 1,
        wall_clock: start.elapsed().as_secs_f64(),
    };
    Ok((b, report))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        if x < lo {
            lo = x;
        }
        if x > hi {
            hi = x;
        }
    }
    (lo, hi)
}

/// Order in which constrained cliques are updated by [`isbp`]: cyclically in
/// index order, or uniformly at random from a seeded generator.
#[derive(Clone, Copy, Debug)]
pub enum SweepOrder {
    RoundRobin,
    Random(u64),
}

/// One belief-propagation message: a positive tensor over the separator
/// variables, normalized to total mass one, with the discarded scale kept as
/// a log factor.
#[derive(Clone, Debug)]
struct Message {
    values: LabeledTensor,
    log_scale: f64,
}

impl Message {
    fn uniform(axes: &[(AxisLabel, usize)]) -> Result<Message> {
        let ones = LabeledTensor::ones(axes)?;
        let n = ones.len() as f64;
        Ok(Message {
            values: ones.scale(1.0 / n),
            log_scale: n.ln(),
        })
    }

    fn from_raw(raw: LabeledTensor, carry: f64) -> Result<Message> {
        let mass = raw.total_mass();
        if !mass.is_finite() || mass <= 0.0 {
            return Err(vanished("a message update lost all mass"));
        }
        Ok(Message {
            values: raw.scale(1.0 / mass),
            log_scale: carry + mass.ln(),
        })
    }
}

/// Message-passing state of [`isbp`]: one message per directed junction-tree
/// edge, keyed by (from, to) clique indices.
#[derive(Clone, Debug)]
pub struct MessageState {
    messages: BTreeMap<(usize, usize), Message>,
    t: usize,
}

impl MessageState {
    fn msg(&self, i: usize, j: usize) -> &Message {
        self.messages
            .get(&(i, j))
            .expect("message state covers every directed edge")
    }

    fn set(&mut self, i: usize, j: usize, m: Message) {
        self.messages.insert((i, j), m);
    }

    /// Update steps performed so far.
    pub fn iterations(&self) -> usize {
        self.t
    }

    fn check_compat(&self, jt: &JunctionTree) -> Result<()> {
        let expected = 2 * jt.edges.len();
        let ok = self.messages.len() == expected
            && jt.edges.iter().all(|&(a, b)| {
                self.messages.contains_key(&(a, b)) && self.messages.contains_key(&(b, a))
            });
        if !ok {
            return Err(Error::Contract(
                "message state does not belong to this junction tree".into(),
            ));
        }
        Ok(())
    }
}

/// Result bundle of [`isbp`]: per-clique plans, the message state (reusable
/// for further projections), and the run report.
#[derive(Clone, Debug)]
pub struct IsbpOutcome {
    pub plans: Vec<LabeledTensor>,
    pub state: MessageState,
    pub report: SolveReport,
}

/// Preprocessed junction-tree data shared by the message-passing routines:
/// per-clique kernels, cost accumulators, the marginal hosted by each
/// constrained clique, and separator layouts.
struct Engine<'a> {
    p: &'a MotProblem,
    jt: &'a JunctionTree,
    clique_axes: Vec<Vec<(AxisLabel, usize)>>,
    kernels: Vec<LabeledTensor>,
    cost_acc: Vec<LabeledTensor>,
    cons_marginal: BTreeMap<usize, usize>,
    neighbors: Vec<Vec<usize>>,
    sep: BTreeMap<(usize, usize), Vec<AxisLabel>>,
}

impl<'a> Engine<'a> {
    fn new(p: &'a MotProblem, jt: &'a JunctionTree) -> Result<Engine<'a>> {
        let mut factors: Vec<BTreeSet<usize>> = Vec::new();
        for c in &p.clique_costs {
            factors.push(c.labels().iter().map(|l| l.0).collect());
        }
        for mu in &p.marginals {
            factors.push(mu.labels().iter().map(|l| l.0).collect());
        }
        let mut vs = jt.validate(&factors);

        let size_of = |v: usize| p.axes.iter().find(|&&(l, _)| l.0 == v).map(|&(_, s)| s);
        let mut clique_axes: Vec<Vec<(AxisLabel, usize)>> = Vec::new();
        for (ci, c) in jt.cliques.iter().enumerate() {
            let mut axes = Vec::new();
            for &v in c {
                match size_of(v) {
                    Some(s) => axes.push((AxisLabel(v), s)),
                    None => vs.push(Violation::new(
                        Rule::SizeConsistency,
                        format!("clique {ci} uses undeclared variable {v}"),
                    )),
                }
            }
            clique_axes.push(axes);
        }

        // Every constrained clique must carry exactly one marginal whose
        // variable set equals the clique's.
        let mut cons_marginal: BTreeMap<usize, usize> = BTreeMap::new();
        for (mi, mu) in p.marginals.iter().enumerate() {
            let set: BTreeSet<usize> = mu.labels().iter().map(|l| l.0).collect();
            let hosts: Vec<usize> = jt
                .constrained
                .iter()
                .copied()
                .filter(|&c| jt.cliques[c] == set)
                .collect();
            match hosts.as_slice() {
                [c] => {
                    if cons_marginal.insert(*c, mi).is_some() {
                        vs.push(Violation::new(
                            Rule::ConstraintPlacement,
                            format!("two marginals target clique {c}"),
                        ));
                    }
                }
                [] => vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!("no constrained clique hosts the marginal over {set:?}"),
                )),
                _ => vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!("several constrained cliques match the marginal over {set:?}"),
                )),
            }
        }
        for &c in &jt.constrained {
            if !cons_marginal.contains_key(&c) {
                vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!("constrained clique {c} has no marginal"),
                ));
            }
        }

        // Assign each cost term to the lowest-index unconstrained clique
        // containing its variables; constrained leaves host no cost.
        let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); jt.cliques.len()];
        for (fi, c) in p.clique_costs.iter().enumerate() {
            let set: BTreeSet<usize> = c.labels().iter().map(|l| l.0).collect();
            let host = (0..jt.cliques.len())
                .find(|&ci| !jt.constrained.contains(&ci) && set.is_subset(&jt.cliques[ci]));
            match host {
                Some(ci) => assigned[ci].push(fi),
                None => vs.push(Violation::new(
                    Rule::FamilyPreservation,
                    format!("cost clique {fi} fits no unconstrained clique"),
                )),
            }
        }
        ok_or_invalid(vs)?;

        let mut kernels = Vec::new();
        let mut cost_acc = Vec::new();
        for (ci, axes) in clique_axes.iter().enumerate() {
            let mut acc = LabeledTensor::zeros(axes)?;
            for &fi in &assigned[ci] {
                acc = acc.broadcast_add(&p.clique_costs[fi])?;
            }
            kernels.push(acc.map(|x| (-x / p.epsilon).exp()));
            cost_acc.push(acc);
        }
        let neighbors: Vec<Vec<usize>> = (0..jt.cliques.len()).map(|c| jt.neighbors(c)).collect();
        let mut sep = BTreeMap::new();
        for &(a, b) in &jt.edges {
            let labels: Vec<AxisLabel> = jt.separator(a, b).into_iter().map(AxisLabel).collect();
            sep.insert((a, b), labels);
        }
        Ok(Engine {
            p,
            jt,
            clique_axes,
            kernels,
            cost_acc,
            cons_marginal,
            neighbors,
            sep,
        })
    }

    fn sep_labels(&self, i: usize, j: usize) -> &[AxisLabel] {
        let key = if i < j { (i, j) } else { (j, i) };
        &self.sep[&key]
    }

    fn sep_axes(&self, i: usize, j: usize) -> Vec<(AxisLabel, usize)> {
        self.sep_labels(i, j)
            .iter()
            .map(|&l| {
                let s = self.clique_axes[i]
                    .iter()
                    .find(|&&(m, _)| m == l)
                    .map(|&(_, s)| s)
                    .expect("separator variables are clique variables");
                (l, s)
            })
            .collect()
    }

    fn init_state(&self) -> Result<MessageState> {
        let mut messages = BTreeMap::new();
        for &(a, b) in &self.jt.edges {
            let axes = self.sep_axes(a, b);
            messages.insert((a, b), Message::uniform(&axes)?);
            messages.insert((b, a), Message::uniform(&axes)?);
        }
        Ok(MessageState { messages, t: 0 })
    }

    /// Message sent by an unconstrained clique `i` to its neighbor `j`:
    /// project the clique kernel times all other incoming messages onto the
    /// separator.
    fn free_message(&self, st: &MessageState, i: usize, j: usize) -> Result<Message> {
        let mut t = self.kernels[i].clone();
        let mut carry = 0.0;
        for &l in &self.neighbors[i] {
            if l != j {
                let m = st.msg(l, i);
                t = t.broadcast_mul(&m.values)?;
                carry += m.log_scale;
            }
        }
        Message::from_raw(t.project(self.sep_labels(i, j))?, carry)
    }

    /// Message sent by a constrained leaf: the hosted marginal divided by
    /// the incoming message. This is the scaling update in message form.
    fn constrained_message(&self, st: &MessageState, i: usize, j: usize) -> Result<Message> {
        let mu = &self.p.marginals[self.cons_marginal[&i]];
        let m_in = st.msg(j, i);
        let raw = mu
            .elementwise_div(&m_in.values)
            .map_err(|_| vanished("an incoming message vanished where the marginal is positive"))?;
        Message::from_raw(raw, -m_in.log_scale)
    }

    /// Breadth-first (node, parent) order from `root`; the root comes first
    /// with itself as parent.
    fn bfs_order(&self, root: usize) -> Vec<(usize, usize)> {
        let n = self.jt.cliques.len();
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([(root, root)]);
        seen[root] = true;
        while let Some((u, parent)) = queue.pop_front() {
            order.push((u, parent));
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back((v, u));
                }
            }
        }
        order
    }

    /// Recompute every message directed toward `target`, leaves first.
    /// Constrained leaves keep their stored message; everything else is a
    /// fresh [`Self::free_message`].
    fn inward_to(&self, st: &mut MessageState, target: usize) -> Result<()> {
        let order = self.bfs_order(target);
        for &(node, parent) in order.iter().rev() {
            if node == target || self.cons_marginal.contains_key(&node) {
                continue;
            }
            let m = self.free_message(st, node, parent)?;
            st.set(node, parent, m);
        }
        Ok(())
    }

    /// Refresh all directed messages from the stored constrained-leaf
    /// messages: one inward pass to clique 0, then one outward pass.
    fn refresh(&self, st: &mut MessageState) -> Result<()> {
        self.inward_to(st, 0)?;
        let order = self.bfs_order(0);
        for &(node, parent) in &order {
            if node == parent || self.cons_marginal.contains_key(&parent) {
                continue;
            }
            let m = self.free_message(st, parent, node)?;
            st.set(parent, node, m);
        }
        Ok(())
    }

    /// Plan on clique `c` from the current messages: the clique kernel times
    /// all incoming messages (times the clique's own outgoing message when
    /// it is constrained, which carries u_c ⊙ μ_c), rescaled by the folded
    /// log factors.
    fn plan(&self, st: &MessageState, c: usize) -> Result<LabeledTensor> {
        let mut t = self.kernels[c].clone();
        let mut carry = 0.0;
        for &l in &self.neighbors[c] {
            let m = st.msg(l, c);
            t = t.broadcast_mul(&m.values)?;
            carry += m.log_scale;
        }
        if self.cons_marginal.contains_key(&c) {
            let own = st.msg(c, self.neighbors[c][0]);
            t = t.broadcast_mul(&own.values)?;
            carry += own.log_scale;
        }
        Ok(t.scale(carry.exp()))
    }

    fn residual(&self, st: &MessageState) -> Result<f64> {
        let mut acc = 0.0;
        for (&c, &mi) in &self.cons_marginal {
            acc += self.plan(st, c)?.l1_diff(&self.p.marginals[mi])?;
        }
        Ok(acc)
    }

    fn record(&self, st: &MessageState, t: usize, start: Instant) -> Result<IterationRecord> {
        let mass = self.plan(st, 0)?.total_mass();
        let mut dual = -self.p.epsilon * mass;
        let mut lrange: f64 = 0.0;
        for (&c, &mi) in &self.cons_marginal {
            let mu = &self.p.marginals[mi];
            let own = st.msg(c, self.neighbors[c][0]);
            // λ_c/ε = ln u_c = ln(m_out) − ln μ_c, with the message's log
            // scale entering as a constant shift.
            let lu = own
                .values
                .map(f64::ln)
                .broadcast_add(&mu.map(|x| -x.ln()))?
                .map(|x| x + own.log_scale);
            dual += self.p.epsilon * lu.inner(mu)?;
            let (lo, hi) = min_max(lu.values());
            lrange = lrange.max(self.p.epsilon * (hi - lo));
        }
        Ok(IterationRecord {
            t,
            residual: self.residual(st)?,
            dual,
            max_mass_dev: (mass - 1.0).abs(),
            max_lambda_range: lrange,
            elapsed: start.elapsed().as_secs_f64(),
        })
    }
}

/// Iterative scaling belief propagation over a junction tree.
///
/// One iteration updates one constrained clique, chosen by `schedule`: the
/// incoming message is made exact by an inward sweep, the clique's outgoing
/// message becomes μ_c divided by it, and all other messages are refreshed.
/// The residual is Σ_{c constrained} ‖𝐁_c − μ_c‖₁ over the reconstructed
/// clique plans. Hitting `max_iter` returns a non-converged report, not an
/// error.
pub fn isbp(
    p: &MotProblem,
    jt: &JunctionTree,
    schedule: SweepOrder,
    tol: f64,
    max_iter: usize,
) -> Result<IsbpOutcome> {
    check_tol(tol)?;
    let start = Instant::now();
    let eng = Engine::new(p, jt)?;
    let mut st = eng.init_state()?;
    eng.refresh(&mut st)?;
    let order: Vec<usize> = eng.cons_marginal.keys().copied().collect();
    let mut rng = match schedule {
        SweepOrder::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        SweepOrder::RoundRobin => None,
    };
    let mut trace = vec![eng.record(&st, 0, start)?];
    let mut t = 0;
    while trace.last().unwrap().residual >= tol && t < max_iter {
        t += 1;
        let pick = match schedule {
            SweepOrder::RoundRobin => order[(t - 1) % order.len()],
            SweepOrder::Random(_) => order[rng.as_mut().unwrap().gen_range(0..order.len())],
        };
        let nb = eng.neighbors[pick][0];
        let m = eng.constrained_message(&st, pick, nb)?;
        st.set(pick, nb, m);
        eng.refresh(&mut st)?;
        st.t = t;
        trace.push(eng.record(&st, t, start)?);
    }
    let converged = trace.last().unwrap().residual < tol;
    let plans: Vec<LabeledTensor> = (0..jt.cliques.len())
        .map(|c| eng.plan(&st, c))
        .collect::<Result<_>>()?;
    let mut final_cost = 0.0;
    for (b, c) in plans.iter().zip(&eng.cost_acc) {
        final_cost += c.inner(b)?;
    }
    let report = SolveReport {
        iterations: t,
        converged,
        bound: None,
        trace,
        final_cost,
        rounded_cost: None,
        threads: 1,
        wall_clock: start.elapsed().as_secs_f64(),
    };
    Ok(IsbpOutcome {
        plans,
        state: st,
        report,
    })
}

/// Exact projection of the implied full tensor 𝐊⊙𝐔⊙𝐌 onto a clique's
/// variables, computed by one inward message sweep — no full tensor is
/// formed.
pub fn projection_via_messages(
    p: &MotProblem,
    jt: &JunctionTree,
    state: &MessageState,
    target: usize,
) -> Result<LabeledTensor> {
    state.check_compat(jt)?;
    if target >= jt.cliques.len() {
        return Err(Error::Contract(format!(
            "target clique {target} out of range"
        )));
    }
    let eng = Engine::new(p, jt)?;
    let mut scratch = state.clone();
    eng.inward_to(&mut scratch, target)?;
    eng.plan(&scratch, target)
}

/// Full-frame tensor 𝐊⊙𝐔⊙𝐌 implied by a message state: the product of all
/// clique kernels and all constrained leaves' outgoing messages (which carry
/// u_c ⊙ μ_c). Test oracle for the message-passing projections; guarded by
/// [`DENSE_CAP`].
pub fn dense_scaled_tensor(
    p: &MotProblem,
    jt: &JunctionTree,
    state: &MessageState,
) -> Result<LabeledTensor> {
    state.check_compat(jt)?;
    p.dense_len()?;
    let eng = Engine::new(p, jt)?;
    let mut b = LabeledTensor::ones(&p.axes)?;
    let mut carry = 0.0;
    for k in &eng.kernels {
        b = b.broadcast_mul(k)?;
    }
    for &c in eng.cons_marginal.keys() {
        let own = state.msg(c, eng.neighbors[c][0]);
        b = b.broadcast_mul(&own.values)?;
        carry += own.log_scale;
    }
    Ok(b.scale(carry.exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn l(i: usize) -> AxisLabel {
        AxisLabel(i)
    }

    fn vector(label: usize, vals: &[f64]) -> LabeledTensor {
        LabeledTensor::new(vec![(l(label), vals.len())], vals.to_vec()).unwrap()
    }

    fn random_marginal(rng: &mut ChaCha20Rng, label: usize, d: usize) -> LabeledTensor {
        let mut vals: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..1.0)).collect();
        let mass: f64 = vals.iter().sum();
        for v in &mut vals {
            *v /= mass;
        }
        vector(label, &vals)
    }

    fn random_cost(rng: &mut ChaCha20Rng, labels: &[usize], d: usize) -> LabeledTensor {
        let axes: Vec<(AxisLabel, usize)> = labels.iter().map(|&v| (l(v), d)).collect();
        LabeledTensor::from_fn(axes, |_| rng.gen_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn zero_cost_two_marginals_is_product() {
        let axes = vec![(l(0), 3), (l(1), 3)];
        let mu0 = vector(0, &[0.2, 0.3, 0.5]);
        let mu1 = vector(1, &[0.5, 0.25, 0.25]);
        let p = MotProblem::new(
            axes,
            vec![],
            vec![mu0.clone(), mu1.clone()],
            1.0,
            ZeroPolicy::Reject,
        )
        .unwrap();
        let (b, rep) = sinkhorn_full(&p, 1e-12, 100).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 1, "took {} sweeps", rep.iterations);
        let want = LabeledTensor::outer(&[&mu0, &mu1]).unwrap();
        assert!(b.l1_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn symmetric_two_by_two_matches_fixed_point() {
        let axes = vec![(l(0), 2), (l(1), 2)];
        let cost = LabeledTensor::new(axes.clone(), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = MotProblem::new(
            axes,
            vec![cost],
            vec![vector(0, &[0.5, 0.5]), vector(1, &[0.5, 0.5])],
            1.0,
            ZeroPolicy::Reject,
        )
        .unwrap();
        let (b, rep) = sinkhorn_full(&p, 1e-13, 10_000).unwrap();
        assert!(rep.converged);

        // Scalar fixed-point iteration on the same update equations.
        let k = (-1.0f64).exp();
        let km = [[1.0, k], [k, 1.0]];
        let (mut a, mut c) = ([1.0f64; 2], [1.0f64; 2]);
        for _ in 0..200 {
            for i in 0..2 {
                let q: f64 = (0..2).map(|j| km[i][j] * a[i] * c[j] * 0.25).sum();
                a[i] *= 0.5 / q;
            }
            for j in 0..2 {
                let q: f64 = (0..2).map(|i| km[i][j] * a[i] * c[j] * 0.25).sum();
                c[j] *= 0.5 / q;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let want = km[i][j] * a[i] * c[j] * 0.25;
                assert!((b.get(&[i, j]) - want).abs() <= 1e-12);
            }
        }
        // The symmetric fixed point in closed form: equal diagonals with
        // off/diagonal ratio k and row sums 1/2.
        let diag = 0.5 / (1.0 + k);
        assert!((b.get(&[0, 0]) - diag).abs() <= 1e-12);
        assert!((b.get(&[1, 1]) - diag).abs() <= 1e-12);
        assert!((b.get(&[0, 1]) - diag * k).abs() <= 1e-12);
    }

    #[test]
    fn barycenter_three_marginals_match() {
        let grid = [0.0, 0.5, 1.0];
        let sq = |a: f64, b: f64| (a - b) * (a - b);
        let c01 = LabeledTensor::from_fn(vec![(l(0), 3), (l(1), 3)], |ix| {
            sq(grid[ix[0]], grid[ix[1]])
        })
        .unwrap();
        let c02 = LabeledTensor::from_fn(vec![(l(0), 3), (l(2), 3)], |ix| {
            sq(grid[ix[0]], grid[ix[1]])
        })
        .unwrap();
        let p = MotProblem::new(
            vec![(l(0), 3), (l(1), 3), (l(2), 3)],
            vec![c01, c02],
            vec![vector(1, &[0.2, 0.3, 0.5]), vector(2, &[0.5, 0.25, 0.25])],
            0.1,
            ZeroPolicy::Reject,
        )
        .unwrap();
        let (b, rep) = sinkhorn_full(&p, 1e-8, 100_000).unwrap();
        assert!(rep.converged);
        for mu in p.marginals() {
            assert!(b.project(&mu.labels()).unwrap().l1_diff(mu).unwrap() <= 1e-8);
        }
        assert!(b.min() > 0.0);
    }

    #[test]
    fn dual_ascends_and_updates_restore_unit_mass() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let d = 3;
        let costs = vec![
            random_cost(&mut rng, &[0, 1], d),
            random_cost(&mut rng, &[1, 2], d),
        ];
        let marginals = vec![
            random_marginal(&mut rng, 0, d),
            random_marginal(&mut rng, 1, d),
            random_marginal(&mut rng, 2, d),
        ];
        let axes = vec![(l(0), d), (l(1), d), (l(2), d)];
        let p = MotProblem::new(axes, costs, marginals, 0.3, ZeroPolicy::Reject).unwrap();
        let (b, rep) = sinkhorn_full(&p, 1e-10, 100_000).unwrap();
        assert!(rep.converged);
        assert!(b.min() > 0.0);
        for w in rep.trace.windows(2) {
            assert!(
                w[1].dual >= w[0].dual - 1e-12,
                "dual fell from {} to {}",
                w[0].dual,
                w[1].dual
            );
        }
        for row in &rep.trace[1..] {
            assert!(row.max_mass_dev <= 1e-12);
        }
    }

    #[test]
    fn multi_axis_constraint_set_converges() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let d = 3;
        let cost = random_cost(&mut rng, &[0, 1, 2], d);
        let mut pair = random_cost(&mut rng, &[0, 1], d);
        let mass = pair.total_mass();
        for v in pair.values_mut() {
            *v /= mass;
        }
        let p = MotProblem::new(
            vec![(l(0), d), (l(1), d), (l(2), d)],
            vec![cost],
            vec![pair.clone(), random_marginal(&mut rng, 2, d)],
            0.5,
            ZeroPolicy::Reject,
        )
        .unwrap();
        let (b, rep) = sinkhorn_full(&p, 1e-10, 100_000).unwrap();
        assert!(rep.converged);
        assert!(b.project(&pair.labels()).unwrap().l1_diff(&pair).unwrap() <= 1e-10);
    }

    #[test]
    fn log_domain_agrees_with_linear() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let d = 3;
        let costs = vec![
            random_cost(&mut rng, &[0, 1], d),
            random_cost(&mut rng, &[1, 2], d),
        ];
        let marginals = vec![
            random_marginal(&mut rng, 0, d),
            random_marginal(&mut rng, 2, d),
        ];
        let axes = vec![(l(0), d), (l(1), d), (l(2), d)];
        let p = MotProblem::new(axes, costs, marginals, 0.2, ZeroPolicy::Reject).unwrap();
        let (b_lin, r_lin) = sinkhorn_full(&p, 1e-11, 100_000).unwrap();
        let (b_log, r_log) = sinkhorn_full_log(&p, 1e-11, 100_000).unwrap();
        assert!(r_lin.converged && r_log.converged);
        assert!(b_lin.l1_diff(&b_log).unwrap() <= 1e-8);
    }

    #[test]
    fn log_domain_survives_kernel_underflow() {
        let axes = vec![(l(0), 2), (l(1), 2)];
        let cost = LabeledTensor::new(axes.clone(), vec![1600.0; 4]).unwrap();
        let mu0 = vector(0, &[0.3, 0.7]);
        let mu1 = vector(1, &[0.6, 0.4]);
        let p = MotProblem::new(
            axes,
            vec![cost],
            vec![mu0.clone(), mu1.clone()],
            1.0,
            ZeroPolicy::Reject,
        )
        .unwrap();
        match sinkhorn_full(&p, 1e-10, 100) {
            Err(Error::Numeric { reason, .. }) => assert!(reason.contains("log-domain")),
            other => panic!("expected a numeric error, got {other:?}"),
        }
        let (b, rep) = sinkhorn_full_log(&p, 1e-10, 10_000).unwrap();
        assert!(rep.converged);
        let want = LabeledTensor::outer(&[&mu0, &mu1]).unwrap();
        assert!(b.l1_diff(&want).unwrap() <= 1e-9);
    }

    #[test]
    fn dense_cap_is_enforced() {
        let axes: Vec<(AxisLabel, usize)> = (0..25).map(|i| (l(i), 2)).collect();
        let p = MotProblem::new(
            axes,
            vec![],
            vec![vector(0, &[0.5, 0.5])],
            1.0,
            ZeroPolicy::Reject,
        )
        .unwrap();
        match sinkhorn_full(&p, 1e-6, 10) {
            Err(Error::DenseCapExceeded { size, cap }) => {
                assert_eq!(size, 1 << 25);
                assert_eq!(cap, DENSE_CAP);
            }
            other => panic!("expected the dense cap to trip, got {other:?}"),
        }
    }

    #[test]
    fn problem_validation_rejects_bad_inputs() {
        let axes = vec![(l(0), 2), (l(1), 2)];
        let bad_eps = MotProblem::new(
            axes.clone(),
            vec![],
            vec![vector(0, &[0.5, 0.5])],
            -1.0,
            ZeroPolicy::Reject,
        );
        assert!(matches!(bad_eps, Err(Error::Invalid(_))));

        let zero_entry = MotProblem::new(
            axes.clone(),
            vec![],
            vec![vector(0, &[1.0, 0.0])],
            1.0,
            ZeroPolicy::Reject,
        );
        assert!(matches!(zero_entry, Err(Error::Invalid(_))));

        let clamped = MotProblem::new(
            axes.clone(),
            vec![],
            vec![vector(0, &[1.0, 0.0])],
            1.0,
            ZeroPolicy::Clamp,
        )
        .unwrap();
        assert!(clamped.marginals()[0].min() >= MARGINAL_FLOOR);

        let overlapping = MotProblem::new(
            axes.clone(),
            vec![],
            vec![
                LabeledTensor::new(axes.clone(), vec![0.25; 4]).unwrap(),
                vector(1, &[0.5, 0.5]),
            ],
            1.0,
            ZeroPolicy::Reject,
        );
        assert!(matches!(overlapping, Err(Error::Invalid(_))));

        let bad_mass = MotProblem::new(
            axes.clone(),
            vec![],
            vec![vector(0, &[0.5, 0.6])],
            1.0,
            ZeroPolicy::Reject,
        );
        assert!(matches!(bad_mass, Err(Error::Invalid(_))));

        let bad_cost = MotProblem::new(
            axes.clone(),
            vec![LabeledTensor::new(vec![(l(0), 3)], vec![0.0; 3]).unwrap()],
            vec![vector(0, &[0.5, 0.5])],
            1.0,
            ZeroPolicy::Reject,
        );
        assert!(matches!(bad_cost, Err(Error::Invalid(_))));

        let nonfinite = MotProblem::new(
            axes,
            vec![LabeledTensor::new(vec![(l(0), 2)], vec![0.0, f64::NAN]).unwrap()],
            vec![vector(0, &[0.5, 0.5])],
            1.0,
            ZeroPolicy::Reject,
        );
        assert!(matches!(nonfinite, Err(Error::Invalid(_))));
    }

    fn set(vals: &[usize]) -> BTreeSet<usize> {
        vals.iter().copied().collect()
    }

    /// Bi-marginal problem as a three-clique junction tree: one cost clique
    /// {0,1} with constrained leaves {0} and {1}.
    fn bimarginal_jt() -> JunctionTree {
        JunctionTree::new_unchecked(
            vec![set(&[0, 1]), set(&[0]), set(&[1])],
            vec![(0, 1), (0, 2)],
            set(&[1, 2]),
        )
    }

    #[test]
    fn isbp_two_cliques_match_dense_path() {
        let mut rng = ChaCha20Rng::seed_from_u64(44);
        let d = 3;
        let p = MotProblem::new(
            vec![(l(0), d), (l(1), d)],
            vec![random_cost(&mut rng, &[0, 1], d)],
            vec![
                random_marginal(&mut rng, 0, d),
                random_marginal(&mut rng, 1, d),
            ],
            0.4,
            ZeroPolicy::Reject,
        )
        .unwrap();
        let (b, rep_dense) = sinkhorn_full(&p, 1e-12, 100_000).unwrap();
        let out = isbp(&p, &bimarginal_jt(), SweepOrder::RoundRobin, 1e-12, 100_000).unwrap();
        assert!(rep_dense.converged && out.report.converged);
        assert!(out.plans[0].l1_diff(&b).unwrap() <= 1e-10);
    }

    #[test]
    fn isbp_single_constrained_clique_converges_in_one_sweep() {
        let mut rng = ChaCha20Rng::seed_from_u64(45);
        let d = 3;
        let mut mu = random_cost(&mut rng, &[0, 1], d);
        let mass = mu.total_mass();
        for v in mu.values_mut() {
            *v /= mass;
        }
        let p = MotProblem::new(
            vec![(l(0), d), (l(1), d)],
            vec![LabeledTensor::zeros(&[(l(0), d), (l(1), d)]).unwrap()],
            vec![mu.clone()],
            1.0,
            ZeroPolicy::Reject,
        )
        .unwrap();
        let jt =
            JunctionTree::new_unchecked(vec![set(&[0, 1]), set(&[0, 1])], vec![(0, 1)], set(&[1]));
        let out = isbp(&p, &jt, SweepOrder::RoundRobin, 1e-12, 100).unwrap();
        assert!(out.report.converged);
        assert_eq!(out.report.iterations, 1);
        assert!(out.plans[1].l1_diff(&mu).unwrap() <= 1e-12);
        assert!(out.plans[0].l1_diff(&mu).unwrap() <= 1e-12);
    }

    #[test]
    fn chain_of_ones_kernels_projects_uniformly() {
        let d = 3;
        let axes: Vec<(AxisLabel, usize)> = (0..4).map(|i| (l(i), d)).collect();
        let costs: Vec<LabeledTensor> = (0..3)
            .map(|i| LabeledTensor::zeros(&[(l(i), d), (l(i + 1), d)]).unwrap())
            .collect();
        let p = MotProblem::new(axes, costs, vec![], 1.0, ZeroPolicy::Reject).unwrap();
        let jt = JunctionTree::new_unchecked(
            vec![set(&[0, 1]), set(&[1, 2]), set(&[2, 3])],
            vec![(0, 1), (1, 2)],
            set(&[]),
        );
        let out = isbp(&p, &jt, SweepOrder::RoundRobin, 1e-9, 10).unwrap();
        assert_eq!(out.report.iterations, 0);
        for c in 0..3 {
            let proj = projection_via_messages(&p, &jt, &out.state, c).unwrap();
            // Summing ones over the two dropped variables gives d² per cell.
            for &v in proj.values() {
                assert!((v - (d * d) as f64).abs() <= 1e-12, "got {v}");
            }
        }
    }

    #[test]
    fn projections_match_the_dense_oracle_on_a_chain() {
        let mut rng = ChaCha20Rng::seed_from_u64(46);
        let d = 3;
        let axes: Vec<(AxisLabel, usize)> = (0..4).map(|i| (l(i), d)).collect();
        let costs: Vec<LabeledTensor> = (0..3)
            .map(|i| random_cost(&mut rng, &[i, i + 1], d))
            .collect();
        let marginals = vec![
            random_marginal(&mut rng, 0, d),
            random_marginal(&mut rng, 3, d),
        ];
        let p = MotProblem::new(axes, costs, marginals, 0.7, ZeroPolicy::Reject).unwrap();
        let jt = JunctionTree::new_unchecked(
            vec![
                set(&[0, 1]),
                set(&[1, 2]),
                set(&[2, 3]),
                set(&[0]),
                set(&[3]),
            ],
            vec![(0, 1), (1, 2), (0, 3), (2, 4)],
            set(&[3, 4]),
        );
        let out = isbp(&p, &jt, SweepOrder::RoundRobin, 1e-8, 100_000).unwrap();
        assert!(out.report.converged);
        let dense = dense_scaled_tensor(&p, &jt, &out.state).unwrap();
        for c in 0..jt.cliques.len() {
            let via = projection_via_messages(&p, &jt, &out.state, c).unwrap();
            let labels: Vec<AxisLabel> = jt.cliques[c].iter().map(|&v| l(v)).collect();
            let want = dense.project(&labels).unwrap();
            let tol = 1e-10 * want.max_abs().max(1.0);
            assert!(via.l1_diff(&want).unwrap() <= tol * via.len() as f64);
            // The stored plans come from the same messages.
            assert!(out.plans[c].l1_diff(&via).unwrap() <= 1e-12);
        }
    }

    /// Chain-with-hub junction tree in the Euler style: cliques {1,m,m+1}
    /// joined in a chain, one constrained singleton leaf per interior
    /// variable, and a constrained pair leaf {1,J}.
    #[test]
    fn euler_style_projections_match_the_dense_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(47);
        let (j, d) = (5usize, 4usize);
        let axes: Vec<(AxisLabel, usize)> = (1..=j).map(|v| (l(v), d)).collect();
        let costs: Vec<LabeledTensor> = (1..j)
            .map(|m| random_cost(&mut rng, &[m, m + 1], d))
            .collect();
        let mut marginals: Vec<LabeledTensor> =
            (2..j).map(|m| random_marginal(&mut rng, m, d)).collect();
        let mut pair = random_cost(&mut rng, &[1, j], d);
        let mass = pair.total_mass();
        for v in pair.values_mut() {
            *v /= mass;
        }
        marginals.push(pair);
        let p = MotProblem::new(axes, costs, marginals, 0.5, ZeroPolicy::Reject).unwrap();

        let mut cliques: Vec<BTreeSet<usize>> = (2..j).map(|m| set(&[1, m, m + 1])).collect();
        let chain = cliques.len();
        let mut edges: Vec<(usize, usize)> = (1..chain).map(|i| (i - 1, i)).collect();
        let mut constrained = BTreeSet::new();
        for m in 2..j {
            cliques.push(set(&[m]));
            constrained.insert(cliques.len() - 1);
            edges.push((m - 2, cliques.len() - 1));
        }
        cliques.push(set(&[1, j]));
        constrained.insert(cliques.len() - 1);
        edges.push((chain - 1, cliques.len() - 1));
        let jt = JunctionTree::new_unchecked(cliques, edges, constrained);

        let out = isbp(&p, &jt, SweepOrder::RoundRobin, 1e-7, 100_000).unwrap();
        assert!(out.report.converged);
        let dense = dense_scaled_tensor(&p, &jt, &out.state).unwrap();
        for c in 0..jt.cliques.len() {
            let via = projection_via_messages(&p, &jt, &out.state, c).unwrap();
            let labels: Vec<AxisLabel> = jt.cliques[c].iter().map(|&v| l(v)).collect();
            let want = dense.project(&labels).unwrap();
            let tol = 1e-9 * want.max_abs().max(1.0) * via.len() as f64;
            assert!(via.l1_diff(&want).unwrap() <= tol);
        }
    }

    fn star_problem(rng: &mut ChaCha20Rng, d: usize) -> (MotProblem, JunctionTree) {
        let axes: Vec<(AxisLabel, usize)> = (0..4).map(|i| (l(i), d)).collect();
        let costs: Vec<LabeledTensor> = (1..4).map(|i| random_cost(rng, &[0, i], d)).collect();
        let marginals: Vec<LabeledTensor> = (1..4).map(|i| random_marginal(rng, i, d)).collect();
        let p = MotProblem::new(axes, costs, marginals, 0.4, ZeroPolicy::Reject).unwrap();
        let jt = JunctionTree::new_unchecked(
            vec![
                set(&[0, 1]),
                set(&[0, 2]),
                set(&[0, 3]),
                set(&[1]),
                set(&[2]),
                set(&[3]),
            ],
            vec![(0, 1), (1, 2), (0, 3), (1, 4), (2, 5)],
            set(&[3, 4, 5]),
        );
        (p, jt)
    }

    #[test]
    fn schedules_agree_at_the_fixed_point() {
        let mut rng = ChaCha20Rng::seed_from_u64(48);
        let (p, jt) = star_problem(&mut rng, 4);
        let tol = 1e-10;
        let rr = isbp(&p, &jt, SweepOrder::RoundRobin, tol, 100_000).unwrap();
        let rand = isbp(&p, &jt, SweepOrder::Random(7), tol, 100_000).unwrap();
        assert!(rr.report.converged && rand.report.converged);
        for (a, b) in rr.plans.iter().zip(&rand.plans) {
            assert!(a.l1_diff(b).unwrap() <= 10.0 * tol);
        }
    }

    #[test]
    fn isbp_invariants_along_the_run() {
        let mut rng = ChaCha20Rng::seed_from_u64(49);
        let (p, jt) = star_problem(&mut rng, 4);
        let out = isbp(&p, &jt, SweepOrder::RoundRobin, 1e-10, 100_000).unwrap();
        assert!(out.report.converged);
        for w in out.report.trace.windows(2) {
            assert!(
                w[1].dual >= w[0].dual - 1e-10,
                "dual fell from {} to {}",
                w[0].dual,
                w[1].dual
            );
        }
        for row in &out.report.trace[1..] {
            assert!(row.max_mass_dev <= 1e-12);
        }
        // Adjacent plans agree on their separator after convergence.
        for &(a, b) in jt.edges.iter() {
            let labels: Vec<AxisLabel> = jt.separator(a, b).into_iter().map(AxisLabel).collect();
            let pa = out.plans[a].project(&labels).unwrap();
            let pb = out.plans[b].project(&labels).unwrap();
            assert!(pa.l1_diff(&pb).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn foreign_message_state_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(50);
        let (p, jt) = star_problem(&mut rng, 3);
        let out = isbp(&p, &jt, SweepOrder::RoundRobin, 1e-6, 100_000).unwrap();
        let other = bimarginal_jt();
        let err = projection_via_messages(&p, &other, &out.state, 0);
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
