//! Exact linear programs for small transport instances, used to cross-check
//! the scaling solvers.
//!
//! The workhorse is a dense two-phase simplex on standard form
//!
//! ```text
//!   min c·x   s.t.   A x = b,  x ≥ 0,
//! ```
//!
//! with Bland's smallest-index rule for both the entering and the leaving
//! choice, which rules out cycling. Phase one minimizes the sum of one
//! artificial variable per row (rows are sign-normalized first), drives
//! surviving artificials out of the basis, and drops redundant rows —
//! marginal systems are always rank-deficient, since every marginal sums to
//! the same total mass. Phase two then minimizes the true objective from
//! the feasible basis.
//!
//! On top of that sit two oracles: [`lp_oracle_tree`] solves the coupled
//! bi-marginal form (one plan per tree edge, tied by node-consistency
//! rows), and [`lp_oracle_mot`] the flat form over the full tensor. Both
//! refuse instances beyond [`LP_VARIABLE_CAP`] variables.

use std::collections::BTreeMap;

use anyhow::{bail, ensure, Result};
use graphot_core::mat::Mat;
use graphot_core::mot_global::MotProblem;
use graphot_core::tensor::LabeledTensor;
use graphot_core::tree_local::TreeProblem;

/// Hard cap on LP variables; beyond this the oracles refuse.
pub const LP_VARIABLE_CAP: usize = 4096;

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const MAX_PIVOTS: usize = 500_000;

/// Optimal value and primal point of a standard-form LP.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub cost: f64,
    pub primal: Vec<f64>,
}

/// Minimize `costs · x` subject to `rows · x = rhs`, `x ≥ 0`.
pub fn simplex_min(costs: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Result<LpSolution> {
    let n = costs.len();
    ensure!(n > 0, "the LP has no variables");
    ensure!(
        n <= LP_VARIABLE_CAP,
        "the LP oracle caps at {LP_VARIABLE_CAP} variables, got {n}; shrink the grid or the edge count"
    );
    ensure!(
        rows.len() == rhs.len(),
        "got {} rows but {} right-hand sides",
        rows.len(),
        rhs.len()
    );
    for (i, r) in rows.iter().enumerate() {
        ensure!(
            r.len() == n,
            "row {i} has {} coefficients, expected {n}",
            r.len()
        );
        ensure!(
            r.iter().all(|x| x.is_finite()) && rhs[i].is_finite(),
            "row {i} has a non-finite entry"
        );
    }
    ensure!(
        costs.iter().all(|x| x.is_finite()),
        "the objective has a non-finite entry"
    );

    // tableau rows [A | I | b] with sign-normalized b; artificial i = n + i
    let m = rows.len();
    let width = n + m + 1;
    let mut tab: Vec<Vec<f64>> = Vec::with_capacity(m);
    for (i, r) in rows.iter().enumerate() {
        let mut row = vec![0.0; width];
        let sign = if rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for (j, &a) in r.iter().enumerate() {
            row[j] = sign * a;
        }
        row[n + i] = 1.0;
        row[width - 1] = sign * rhs[i];
        tab.push(row);
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // phase one: minimize the artificial sum; the reduced-cost row starts
    // as minus the column sums (artificial columns cancel to zero)
    let mut obj = vec![0.0; width];
    for row in &tab {
        for (o, &v) in obj.iter_mut().zip(row.iter()) {
            *o -= v;
        }
    }
    for j in n..n + m {
        obj[j] = 0.0;
    }
    pivot_until_optimal(&mut tab, &mut obj, &mut basis, n)?;
    let infeas = -obj[width - 1];
    if infeas > FEAS_TOL {
        bail!("the LP is infeasible (phase-one objective {infeas:.3e})");
    }

    // drive artificials out of the basis; rows that offer no real pivot are
    // redundant and get dropped
    let mut i = 0;
    while i < tab.len() {
        if basis[i] >= n {
            match (0..n).find(|&j| tab[i][j].abs() > PIVOT_TOL) {
                Some(j) => pivot(&mut tab, &mut obj, &mut basis, i, j),
                None => {
                    tab.swap_remove(i);
                    basis.swap_remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }

    // phase two on the real objective
    for (j, o) in obj.iter_mut().enumerate() {
        *o = if j < n { costs[j] } else { 0.0 };
    }
    for (i, row) in tab.iter().enumerate() {
        let cb = costs[basis[i]];
        if cb != 0.0 {
            for (o, &v) in obj.iter_mut().zip(row.iter()) {
                *o -= cb * v;
            }
        }
    }
    pivot_until_optimal(&mut tab, &mut obj, &mut basis, n)?;

    let mut x = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] = tab[i][width - 1].max(0.0);
        }
    }
    let cost = costs.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { cost, primal: x })
}

/// Bland iterations until no entering column remains among `0..n_real`.
fn pivot_until_optimal(
    tab: &mut [Vec<f64>],
    obj: &mut [f64],
    basis: &mut [usize],
    n_real: usize,
) -> Result<()> {
    let width = obj.len();
    for _ in 0..MAX_PIVOTS {
        let Some(enter) = (0..n_real).find(|&j| obj[j] < -PIVOT_TOL) else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in tab.iter().enumerate() {
            let a = row[enter];
            if a > PIVOT_TOL {
                let ratio = row[width - 1] / a;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-12 || ((ratio - lr).abs() <= 1e-12 && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((li, _)) = leave else {
            bail!("the LP is unbounded below");
        };
        pivot(tab, obj, basis, li, enter);
    }
    bail!("simplex did not terminate within {MAX_PIVOTS} pivots")
}

fn pivot(tab: &mut [Vec<f64>], obj: &mut [f64], basis: &mut [usize], li: usize, enter: usize) {
    let piv = tab[li][enter];
    for v in tab[li].iter_mut() {
        *v /= piv;
    }
    let prow = tab[li].clone();
    for (i, row) in tab.iter_mut().enumerate() {
        if i != li && row[enter].abs() > 0.0 {
            let f = row[enter];
            for (v, &p) in row.iter_mut().zip(prow.iter()) {
                *v -= f * p;
            }
            row[enter] = 0.0;
        }
    }
    let f = obj[enter];
    if f.abs() > 0.0 {
        for (o, &p) in obj.iter_mut().zip(prow.iter()) {
            *o -= f * p;
        }
        obj[enter] = 0.0;
    }
    basis[li] = enter;
}

/// Exact optimum of the unregularized coupled form: one plan per edge,
/// constrained-node rows pinned to the marginals, free nodes tied by
/// consistency rows.
#[derive(Clone, Debug)]
pub struct TreeLpSolution {
    pub cost: f64,
    pub plans: BTreeMap<(usize, usize), Mat>,
}

pub fn lp_oracle_tree(p: &TreeProblem) -> Result<TreeLpSolution> {
    let tree = p.tree();
    let mut offset: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut n = 0usize;
    for &(a, b) in tree.edges() {
        offset.insert((a, b), n);
        n += p.size(a) * p.size(b);
    }
    ensure!(
        n <= LP_VARIABLE_CAP,
        "the LP oracle caps at {LP_VARIABLE_CAP} variables, got {n}; shrink the grid or the edge count"
    );
    let mut costs = vec![0.0; n];
    for (&(a, b), &off) in &offset {
        let c = p.cost(a, b);
        for i in 0..p.size(a) {
            for k in 0..p.size(b) {
                costs[off + i * p.size(b) + k] = c.get(i, k);
            }
        }
    }

    // row with the coefficients of P_j(B_{edge}) at grid index i
    let marginal_row = |j: usize, edge: (usize, usize), i: usize| -> Vec<f64> {
        let (a, b) = edge;
        let off = offset[&edge];
        let mut row = vec![0.0; n];
        if j == a {
            for k in 0..p.size(b) {
                row[off + i * p.size(b) + k] = 1.0;
            }
        } else {
            for k in 0..p.size(a) {
                row[off + k * p.size(b) + i] = 1.0;
            }
        }
        row
    };
    let canon = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for &j in tree.nodes() {
        let nbs = tree.neighbors(j);
        if let Some(mu) = p.marginal(j) {
            for &k in nbs {
                for i in 0..p.size(j) {
                    rows.push(marginal_row(j, canon(j, k), i));
                    rhs.push(mu[i]);
                }
            }
        } else {
            for w in 1..nbs.len() {
                for i in 0..p.size(j) {
                    let mut row = marginal_row(j, canon(j, nbs[0]), i);
                    let other = marginal_row(j, canon(j, nbs[w]), i);
                    for (r, o) in row.iter_mut().zip(&other) {
                        *r -= o;
                    }
                    rows.push(row);
                    rhs.push(0.0);
                }
            }
        }
    }
    if tree.constrained().is_empty() {
        let &(a, b) = &tree.edges()[0];
        let mut row = vec![0.0; n];
        for v in row[offset[&(a, b)]..offset[&(a, b)] + p.size(a) * p.size(b)].iter_mut() {
            *v = 1.0;
        }
        rows.push(row);
        rhs.push(1.0);
    }

    let sol = simplex_min(&costs, &rows, &rhs)?;
    let mut plans = BTreeMap::new();
    for (&(a, b), &off) in &offset {
        let (da, db) = (p.size(a), p.size(b));
        plans.insert(
            (a, b),
            Mat::new(da, db, sol.primal[off..off + da * db].to_vec())?,
        );
    }
    Ok(TreeLpSolution {
        cost: sol.cost,
        plans,
    })
}

/// Exact optimum of the unregularized flat form over the full tensor.
#[derive(Clone, Debug)]
pub struct MotLpSolution {
    pub cost: f64,
    pub plan: LabeledTensor,
}

pub fn lp_oracle_mot(p: &MotProblem) -> Result<MotLpSolution> {
    let axes = p.axes().to_vec();
    let total: usize = axes.iter().map(|&(_, d)| d).product();
    ensure!(
        total <= LP_VARIABLE_CAP,
        "the LP oracle caps at {LP_VARIABLE_CAP} variables, got a {total}-entry tensor; shrink the instance"
    );
    let mut cost_t = LabeledTensor::zeros(&axes)?;
    for c in p.clique_costs() {
        cost_t = cost_t.broadcast_add(c)?;
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for mu in p.marginals() {
        // stride of each full-frame axis inside the marginal's own frame
        // (zero when the marginal does not carry the axis)
        let mut mu_stride = vec![0usize; axes.len()];
        let mut s = 1usize;
        for &(l, d) in mu.axes().iter().rev() {
            let pos = axes
                .iter()
                .position(|&(al, _)| al == l)
                .expect("marginal axes are problem axes");
            mu_stride[pos] = s;
            s *= d;
        }
        let base = rows.len();
        for _ in 0..mu.len() {
            rows.push(vec![0.0; total]);
        }
        rhs.extend_from_slice(mu.values());
        let mut idx = vec![0usize; axes.len()];
        for flat in 0..total {
            let r: usize = idx.iter().zip(&mu_stride).map(|(&i, &st)| i * st).sum();
            rows[base + r][flat] = 1.0;
            for pos in (0..axes.len()).rev() {
                idx[pos] += 1;
                if idx[pos] < axes[pos].1 {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
    if p.marginals().is_empty() {
        rows.push(vec![1.0; total]);
        rhs.push(1.0);
    }

    let sol = simplex_min(cost_t.values(), &rows, &rhs)?;
    Ok(MotLpSolution {
        cost: sol.cost,
        plan: LabeledTensor::new(axes, sol.primal)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use graphot_core::mot_global::{sinkhorn_full_log, ZeroPolicy};
    use graphot_core::problems::{barycenter_problem, tree_as_mot, GridSpec, MarginalGen};
    use graphot_core::rounding::round_to_marginals;
    use graphot_core::tensor::AxisLabel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bi_marginal(mu: Vec<f64>, nu: Vec<f64>, cost: Vec<f64>, eps: f64) -> MotProblem {
        let (d0, d1) = (mu.len(), nu.len());
        let axes = vec![(AxisLabel(0), d0), (AxisLabel(1), d1)];
        MotProblem::new(
            axes.clone(),
            vec![LabeledTensor::new(axes, cost).unwrap()],
            vec![
                LabeledTensor::new(vec![(AxisLabel(0), d0)], mu).unwrap(),
                LabeledTensor::new(vec![(AxisLabel(1), d1)], nu).unwrap(),
            ],
            eps,
            ZeroPolicy::Reject,
        )
        .unwrap()
    }

    #[test]
    fn zero_cost_matching_stays_on_the_diagonal() {
        let p = bi_marginal(
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            vec![0.0, 1.0, 1.0, 0.0],
            1.0,
        );
        let sol = lp_oracle_mot(&p).unwrap();
        assert!(sol.cost.abs() <= 1e-12);
        for (i, want) in [0.5, 0.0, 0.0, 0.5].iter().enumerate() {
            assert!((sol.plan.values()[i] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn forced_antidiagonal_costs_one() {
        // μ = [1,0], ν = [0,1] pins the whole mass on the cost-1 cell; fed
        // to the raw simplex since the scaling problems require positive
        // marginals
        let costs = [0.0, 1.0, 1.0, 0.0];
        let rows = vec![
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ];
        let rhs = [1.0, 0.0, 0.0, 1.0];
        let sol = simplex_min(&costs, &rows, &rhs).unwrap();
        assert!((sol.cost - 1.0).abs() <= 1e-12);
        assert!((sol.primal[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn inconsistent_rows_are_infeasible() {
        let err =
            simplex_min(&[1.0, 1.0], &[vec![1.0, 0.0], vec![1.0, 0.0]], &[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("infeasible"), "{err}");
    }

    #[test]
    fn variable_cap_refuses_large_instances() {
        let p = bi_marginal(
            vec![1.0 / 70.0; 70],
            vec![1.0 / 70.0; 70],
            vec![1.0; 70 * 70],
            1.0,
        );
        let err = lp_oracle_mot(&p).unwrap_err();
        assert!(err.to_string().contains("4096"), "{err}");
    }

    #[test]
    fn tree_and_flat_oracles_agree_on_a_star() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..5 {
            let p = barycenter_problem(
                3,
                &GridSpec::unit(3),
                &MarginalGen::new(100 + trial),
                0.5 + rng.gen_range(0.0..0.5),
            )
            .unwrap();
            let tree_sol = lp_oracle_tree(&p).unwrap();
            let (mot, _) = tree_as_mot(&p).unwrap();
            let flat_sol = lp_oracle_mot(&mot).unwrap();
            assert!(
                (tree_sol.cost - flat_sol.cost).abs() <= 1e-9,
                "trial {trial}: {} vs {}",
                tree_sol.cost,
                flat_sol.cost
            );
        }
    }

    #[test]
    fn oracle_solutions_are_feasible() {
        let p = barycenter_problem(3, &GridSpec::unit(4), &MarginalGen::new(9), 0.5).unwrap();
        let sol = lp_oracle_tree(&p).unwrap();
        for j in 1..=3usize {
            let mu = p.marginal(j).unwrap();
            let got = sol.plans[&(0, j)].col_sums();
            for (g, m) in got.iter().zip(mu) {
                assert!((g - m).abs() <= 1e-9);
            }
        }
        // center consistency
        let q0 = sol.plans[&(0, 1)].row_sums();
        for j in 2..=3usize {
            let q = sol.plans[&(0, j)].row_sums();
            for (a, b) in q0.iter().zip(&q) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
        for plan in sol.plans.values() {
            assert!(plan.data().iter().all(|&x| x >= -1e-12));
        }
    }

    #[test]
    fn sinkhorn_with_rounding_lands_near_the_lp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let d = 3;
            let mu: Vec<f64> = normalize((0..d).map(|_| rng.gen_range(0.2..1.0)).collect());
            let nu: Vec<f64> = normalize((0..d).map(|_| rng.gen_range(0.2..1.0)).collect());
            let cost: Vec<f64> = (0..d * d).map(|_| rng.gen_range(0.0..1.0)).collect();
            let coarse = bi_marginal(mu.clone(), nu.clone(), cost.clone(), 1.0);
            let lp = lp_oracle_mot(&coarse).unwrap();

            let c_inf = coarse.c_inf();
            let eps = 1e-3 * c_inf;
            // ε this small underflows plain-domain kernels; go log-domain
            let small = bi_marginal(mu.clone(), nu.clone(), cost.clone(), eps);
            let (b, rep) = sinkhorn_full_log(&small, 1e-10, 200_000).unwrap();
            assert!(rep.converged);
            let bm = Mat::new(d, d, b.values().to_vec()).unwrap();
            let rounded = round_to_marginals(&bm, &mu, &nu);
            let got: f64 = rounded.data().iter().zip(&cost).map(|(x, c)| x * c).sum();
            // entropic gap plus the rounding bound
            let resid = bm.l1_diff(&rounded);
            let bound = eps * ((d * d) as f64).ln() + 2.0 * c_inf * resid + 1e-9;
            assert!(got >= lp.cost - 1e-9, "trial {trial}");
            assert!(
                got - lp.cost <= bound,
                "trial {trial}: {} vs {}",
                got - lp.cost,
                bound
            );
        }
    }

    fn normalize(mut v: Vec<f64>) -> Vec<f64> {
        let m: f64 = v.iter().sum();
        for x in &mut v {
            *x /= m;
        }
        v
    }
}
