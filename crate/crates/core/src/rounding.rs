//! Rounding approximately feasible plans to exact marginals.
//!
//! The primitive rescales rows down to at most their targets, then restores
//! the missing mass with a rank-one patch supported on the deficient rows
//! and columns:
//!
//! ```text
//!   X = diag(min(1, r ./ B𝟏)) B,   B̂ = X + err_r err_cᵀ / ‖err_r‖₁,
//! ```
//!
//! with `err_r = r − X𝟏` and `err_c = c − Xᵀ𝟏`. The patch moves at most
//! `‖B𝟏 − r‖₁ + ‖Bᵀ𝟏 − c‖₁` mass, so the induced cost change is bounded by
//! `2 C_∞` times the marginal error. On a bipartite tree only the side not
//! updated last can mismatch; rounding each plan on that side with the
//! column marginals as the implicit second target leaves the opposite
//! side's marginals untouched.

use std::collections::BTreeMap;

use crate::graph::BipartitePartition;
use crate::mat::{l1_diff_vec, l1_norm, Mat};
use crate::tree_local::{plan_cost, Residual, TreeProblem};

/// Round `b` into the transport polytope with row sums `r` and column sums
/// `c`. Targets with more total mass than available are met as closely as
/// the mass balance allows (exactly, when `‖r‖₁ = ‖c‖₁ = ‖b‖₁`).
pub fn round_to_marginals(b: &Mat, r: &[f64], c: &[f64]) -> Mat {
    let row = b.row_sums();
    let x: Vec<f64> = r
        .iter()
        .zip(&row)
        .map(|(ri, si)| if *si > 0.0 { (ri / si).min(1.0) } else { 1.0 })
        .collect();
    let mut m = b.clone();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            m.set(i, j, x[i] * b.get(i, j));
        }
    }
    let col = m.col_sums();
    let y: Vec<f64> = c
        .iter()
        .zip(&col)
        .map(|(cj, sj)| if *sj > 0.0 { (cj / sj).min(1.0) } else { 1.0 })
        .collect();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            m.set(i, j, m.get(i, j) * y[j]);
        }
    }
    let err_r: Vec<f64> = r
        .iter()
        .zip(&m.row_sums())
        .map(|(t, s)| (t - s).max(0.0))
        .collect();
    let err_c: Vec<f64> = c
        .iter()
        .zip(&m.col_sums())
        .map(|(t, s)| (t - s).max(0.0))
        .collect();
    let total = l1_norm(&err_r);
    if total == 0.0 {
        return m;
    }
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let v = m.get(i, j) + err_r[i] * err_c[j] / total;
            m.set(i, j, v);
        }
    }
    m
}

/// Round `b` so its row sums become `r` while its column sums stay put.
pub fn round_bimarginal(b: &Mat, r: &[f64]) -> Mat {
    round_to_marginals(b, r, &b.col_sums())
}

/// Accounting for one tree rounding pass.
#[derive(Clone, Copy, Debug)]
pub struct RoundReport {
    pub cost_before: f64,
    pub cost_after: f64,
    /// A priori bound `2 C_∞ e(B)` on the cost change, from the residual of
    /// the input plans.
    pub delta_bound: f64,
    /// Total ℓ₁ change over all plans.
    pub mass_moved: f64,
}

/// Residual of a set of edge plans (same expression the solver stops on,
/// but computed from materialized plans).
pub fn plans_residual(p: &TreeProblem, plans: &BTreeMap<(usize, usize), Mat>) -> Residual {
    let mut r = Residual::default();
    for &j in p.tree().nodes() {
        let qs: Vec<Vec<f64>> = p
            .tree()
            .neighbors(j)
            .iter()
            .map(|&k| marginal_at(plans, j, k))
            .collect();
        if let Some(mu) = p.marginal(j) {
            r.constrained += l1_diff_vec(&qs[0], mu);
        } else {
            let n = qs.len() as f64;
            for q in &qs {
                for (i, qi) in q.iter().enumerate() {
                    let mean = qs.iter().map(|qq| qq[i]).sum::<f64>() / n;
                    r.free += (qi - mean).abs();
                }
            }
        }
    }
    r
}

fn marginal_at(plans: &BTreeMap<(usize, usize), Mat>, j: usize, k: usize) -> Vec<f64> {
    if j < k {
        plans[&(j, k)].row_sums()
    } else {
        plans[&(k, j)].col_sums()
    }
}

/// Round every plan whose `mismatch_side` endpoint may violate its
/// constraint: constrained nodes on that side get their marginal `μ_j` as
/// the row target, free nodes the arithmetic mean `q̄_j` of their incident
/// marginals, frozen from the input. Each edge has exactly one endpoint on
/// the mismatch side, so each plan is rounded once and the opposite side's
/// marginals are preserved.
pub fn round_tree(
    p: &TreeProblem,
    plans: &BTreeMap<(usize, usize), Mat>,
    mismatch_side: u8,
    partition: &BipartitePartition,
) -> (BTreeMap<(usize, usize), Mat>, RoundReport) {
    let cost_before = plan_cost(p, plans);
    let delta_bound = 2.0 * p.c_inf() * plans_residual(p, plans).total();
    let mut targets: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &j in p.tree().nodes() {
        if partition.side_of(j) != Some(mismatch_side) {
            continue;
        }
        let t = match p.marginal(j) {
            Some(mu) => mu.to_vec(),
            None => {
                let nbs = p.tree().neighbors(j);
                let qs: Vec<Vec<f64>> = nbs.iter().map(|&k| marginal_at(plans, j, k)).collect();
                let n = nbs.len() as f64;
                (0..p.size(j))
                    .map(|i| qs.iter().map(|q| q[i]).sum::<f64>() / n)
                    .collect()
            }
        };
        targets.insert(j, t);
    }
    let mut out = BTreeMap::new();
    let mut mass_moved = 0.0;
    for (&(a, b), bm) in plans {
        let rounded = if let Some(t) = targets.get(&a) {
            round_bimarginal(bm, t)
        } else if let Some(t) = targets.get(&b) {
            round_bimarginal(&bm.transpose(), t).transpose()
        } else {
            bm.clone()
        };
        mass_moved += bm.l1_diff(&rounded);
        out.insert((a, b), rounded);
    }
    let cost_after = plan_cost(p, &out);
    (
        out,
        RoundReport {
            cost_before,
            cost_after,
            delta_bound,
            mass_moved,
        },
    )
}
