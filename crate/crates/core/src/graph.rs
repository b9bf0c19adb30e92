//! Graph structures the solvers run on: constrained trees, junction trees,
//! and modified junction trees (bipartite trees alternating cost cliques and
//! separators).
//!
//! Validators return `Vec<Violation>` so a caller can surface every
//! structural problem at once; validating constructors wrap that into an
//! error. All adjacency is stored sorted, which makes traversal orders (and
//! therefore two-colorings and update schedules) independent of the order in
//! which edges were supplied.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::{ok_or_invalid, Error, Result, Rule, Violation};

/// Undirected tree over integer node ids with a set of constrained nodes.
/// Constrained nodes must be leaves and no edge may join two of them.
#[derive(Clone, Debug)]
pub struct TreeGraph {
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
    constrained: BTreeSet<usize>,
    adj: BTreeMap<usize, Vec<usize>>,
}

impl TreeGraph {
    /// Canonicalize without validating (edges sorted with `a < b`,
    /// adjacency sorted). Use `validate` to inspect problems.
    pub fn new_unchecked(
        nodes: Vec<usize>,
        edges: Vec<(usize, usize)>,
        constrained: BTreeSet<usize>,
    ) -> Self {
        let mut nodes = nodes;
        nodes.sort_unstable();
        nodes.dedup();
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        let mut adj: BTreeMap<usize, Vec<usize>> = nodes.iter().map(|&n| (n, vec![])).collect();
        for &(a, b) in &edges {
            if let Some(v) = adj.get_mut(&a) {
                v.push(b);
            }
            if let Some(v) = adj.get_mut(&b) {
                v.push(a);
            }
        }
        for v in adj.values_mut() {
            v.sort_unstable();
        }
        TreeGraph {
            nodes,
            edges,
            constrained,
            adj,
        }
    }

    pub fn new(
        nodes: Vec<usize>,
        edges: Vec<(usize, usize)>,
        constrained: BTreeSet<usize>,
    ) -> Result<Self> {
        let g = Self::new_unchecked(nodes, edges, constrained);
        ok_or_invalid(g.validate())?;
        Ok(g)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut vs = Vec::new();
        for &(a, b) in &self.edges {
            if a == b {
                vs.push(Violation::new(
                    Rule::Acyclicity,
                    format!("self loop at node {a}"),
                ));
            }
            for e in [a, b] {
                if !self.adj.contains_key(&e) {
                    vs.push(Violation::new(
                        Rule::EdgeEndpoint,
                        format!("edge ({a}, {b}) references unknown node {e}"),
                    ));
                }
            }
        }
        if !vs.is_empty() {
            return vs;
        }
        if self.nodes.is_empty() {
            vs.push(Violation::new(Rule::Connectivity, "graph has no nodes"));
            return vs;
        }
        // connected + acyclic via BFS
        let comp = self.bfs_components();
        if comp > 1 {
            vs.push(Violation::new(
                Rule::Connectivity,
                format!("graph has {comp} components"),
            ));
        }
        // for a forest, |E| = |V| - components; anything more is a cycle
        if self.edges.len() + comp > self.nodes.len() {
            vs.push(Violation::new(
                Rule::Acyclicity,
                format!(
                    "{} edges over {} nodes implies a cycle",
                    self.edges.len(),
                    self.nodes.len()
                ),
            ));
        }
        for &j in &self.constrained {
            match self.adj.get(&j) {
                None => vs.push(Violation::new(
                    Rule::NodeIdentity,
                    format!("constrained node {j} does not exist"),
                )),
                Some(nb) => {
                    if nb.len() != 1 {
                        vs.push(Violation::new(
                            Rule::ConstrainedNotLeaf,
                            format!("constrained node {j} has degree {}", nb.len()),
                        ));
                    }
                }
            }
        }
        for &(a, b) in &self.edges {
            if self.constrained.contains(&a) && self.constrained.contains(&b) {
                vs.push(Violation::new(
                    Rule::AdjacentConstrained,
                    format!("edge ({a}, {b}) joins two constrained nodes"),
                ));
            }
        }
        vs
    }

    fn bfs_components(&self) -> usize {
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut comps = 0;
        for &start in &self.nodes {
            if seen.contains(&start) {
                continue;
            }
            comps += 1;
            let mut q = VecDeque::from([start]);
            seen.insert(start);
            while let Some(u) = q.pop_front() {
                for &v in &self.adj[&u] {
                    if seen.insert(v) {
                        q.push_back(v);
                    }
                }
            }
        }
        comps
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn constrained(&self) -> &BTreeSet<usize> {
        &self.constrained
    }

    pub fn is_constrained(&self, j: usize) -> bool {
        self.constrained.contains(&j)
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        self.adj.get(&j).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn degree(&self, j: usize) -> usize {
        self.neighbors(j).len()
    }

    pub fn is_leaf(&self, j: usize) -> bool {
        self.degree(j) == 1
    }

    /// Two-coloring by breadth-first search from the smallest node id of
    /// each component; that root's color is side one. Deterministic in the
    /// node/edge sets alone.
    pub fn two_color(&self) -> Result<BipartitePartition> {
        let mut color: BTreeMap<usize, bool> = BTreeMap::new();
        for &start in &self.nodes {
            if color.contains_key(&start) {
                continue;
            }
            color.insert(start, true);
            let mut q = VecDeque::from([start]);
            while let Some(u) = q.pop_front() {
                let cu = color[&u];
                for &v in &self.adj[&u] {
                    match color.get(&v) {
                        None => {
                            color.insert(v, !cu);
                            q.push_back(v);
                        }
                        Some(&cv) if cv == cu => {
                            return Err(Error::Invalid(vec![Violation::new(
                                Rule::SeparatorGraphBipartite,
                                format!("odd cycle through nodes {u} and {v}"),
                            )]));
                        }
                        _ => {}
                    }
                }
            }
        }
        let mut p = BipartitePartition::default();
        for (n, c) in color {
            if c {
                p.s1.insert(n);
            } else {
                p.s2.insert(n);
            }
        }
        Ok(p)
    }

    /// Maximum over node pairs of the graph distance.
    pub fn diameter(&self) -> usize {
        let mut best = 0;
        for &s in &self.nodes {
            let mut dist: BTreeMap<usize, usize> = BTreeMap::from([(s, 0)]);
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &self.adj[&u] {
                    if !dist.contains_key(&v) {
                        dist.insert(v, dist[&u] + 1);
                        q.push_back(v);
                    }
                }
            }
            best = best.max(dist.values().copied().max().unwrap_or(0));
        }
        best
    }
}

/// Node bipartition produced by `two_color`; every edge of a tree crosses
/// between the two sides.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BipartitePartition {
    pub s1: BTreeSet<usize>,
    pub s2: BTreeSet<usize>,
}

impl BipartitePartition {
    /// Side active at (1-based) iteration `t`: side one on odd t.
    pub fn active(&self, t: usize) -> &BTreeSet<usize> {
        if t % 2 == 1 {
            &self.s1
        } else {
            &self.s2
        }
    }

    pub fn side_of(&self, j: usize) -> Option<u8> {
        if self.s1.contains(&j) {
            Some(1)
        } else if self.s2.contains(&j) {
            Some(2)
        } else {
            None
        }
    }
}

/// Junction tree: cliques of variable ids connected into a tree, some
/// cliques marked as carrying marginal constraints.
#[derive(Clone, Debug)]
pub struct JunctionTree {
    pub cliques: Vec<BTreeSet<usize>>,
    /// Edges between clique indices, canonical `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Indices of constrained cliques.
    pub constrained: BTreeSet<usize>,
}

impl JunctionTree {
    pub fn new_unchecked(
        cliques: Vec<BTreeSet<usize>>,
        edges: Vec<(usize, usize)>,
        constrained: BTreeSet<usize>,
    ) -> Self {
        let mut edges: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        JunctionTree {
            cliques,
            edges,
            constrained,
        }
    }

    pub fn new(
        cliques: Vec<BTreeSet<usize>>,
        edges: Vec<(usize, usize)>,
        constrained: BTreeSet<usize>,
        factors: &[BTreeSet<usize>],
    ) -> Result<Self> {
        let jt = Self::new_unchecked(cliques, edges, constrained);
        ok_or_invalid(jt.validate(factors))?;
        Ok(jt)
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Variables shared by two adjacent cliques.
    pub fn separator(&self, i: usize, j: usize) -> BTreeSet<usize> {
        self.cliques[i]
            .intersection(&self.cliques[j])
            .copied()
            .collect()
    }

    /// Largest clique cardinality minus one.
    pub fn tree_width(&self) -> usize {
        self.cliques.iter().map(|c| c.len()).max().unwrap_or(1) - 1
    }

    /// Check tree-ness, family preservation for `factors`, the running
    /// intersection property, and that constrained cliques are leaves
    /// contained in their neighbor.
    pub fn validate(&self, factors: &[BTreeSet<usize>]) -> Vec<Violation> {
        let mut vs = Vec::new();
        let n = self.cliques.len();
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                vs.push(Violation::new(
                    Rule::EdgeEndpoint,
                    format!("edge ({a}, {b}) references a missing clique"),
                ));
            }
            if a == b {
                vs.push(Violation::new(
                    Rule::Acyclicity,
                    format!("self loop at clique {a}"),
                ));
            }
        }
        for &c in &self.constrained {
            if c >= n {
                vs.push(Violation::new(
                    Rule::NodeIdentity,
                    format!("constrained clique index {c} out of range"),
                ));
            }
        }
        if !vs.is_empty() {
            return vs;
        }
        if n == 0 {
            vs.push(Violation::new(Rule::Connectivity, "no cliques"));
            return vs;
        }
        if !is_tree(n, &self.edges, &mut vs) {
            return vs;
        }
        for (fi, f) in factors.iter().enumerate() {
            if !self.cliques.iter().any(|c| f.is_subset(c)) {
                vs.push(Violation::new(
                    Rule::FamilyPreservation,
                    format!("factor {fi} over {f:?} is not contained in any clique"),
                ));
            }
        }
        running_intersection(&self.cliques, &self.edges, &mut vs);
        for &ci in &self.constrained {
            let nb = self.neighbors(ci);
            if nb.len() != 1 {
                vs.push(Violation::new(
                    Rule::ConstrainedNotLeaf,
                    format!("constrained clique {ci} has {} neighbors", nb.len()),
                ));
            } else if !self.cliques[ci].is_subset(&self.cliques[nb[0]]) {
                vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!(
                        "constrained clique {ci} is not contained in its neighbor {}",
                        nb[0]
                    ),
                ));
            }
        }
        vs
    }
}

fn is_tree(n: usize, edges: &[(usize, usize)], vs: &mut Vec<Violation>) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut q = VecDeque::from([0usize]);
    seen[0] = true;
    let mut cnt = 1;
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                cnt += 1;
                q.push_back(v);
            }
        }
    }
    let mut ok = true;
    if cnt != n {
        vs.push(Violation::new(
            Rule::Connectivity,
            format!("only {cnt} of {n} cliques reachable"),
        ));
        ok = false;
    }
    if edges.len() + 1 != n {
        vs.push(Violation::new(
            Rule::NotATree,
            format!("{} edges over {} cliques", edges.len(), n),
        ));
        ok = false;
    }
    ok
}

/// For every pair of cliques, every clique on the path between them must
/// contain their intersection.
fn running_intersection(
    cliques: &[BTreeSet<usize>],
    edges: &[(usize, usize)],
    vs: &mut Vec<Violation>,
) {
    let n = cliques.len();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    for i in 0..n {
        // BFS parents from i
        let mut parent = vec![usize::MAX; n];
        parent[i] = i;
        let mut q = VecDeque::from([i]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if parent[v] == usize::MAX {
                    parent[v] = u;
                    q.push_back(v);
                }
            }
        }
        for j in (i + 1)..n {
            if parent[j] == usize::MAX {
                continue; // disconnected, reported elsewhere
            }
            let inter: BTreeSet<usize> = cliques[i].intersection(&cliques[j]).copied().collect();
            if inter.is_empty() {
                continue;
            }
            let mut u = parent[j];
            while u != i {
                if !inter.is_subset(&cliques[u]) {
                    vs.push(Violation::new(
                        Rule::RunningIntersection,
                        format!(
                            "clique {u} on the path between {i} and {j} misses {:?}",
                            inter
                        ),
                    ));
                    break;
                }
                u = parent[u];
            }
        }
    }
}

/// Modified junction tree: a tree whose cliques alternate between cost
/// cliques (exactly two separator neighbors each) and separators (any
/// number of cost-clique neighbors). Constraints attach to separators, one
/// index set gamma per constrained separator.
#[derive(Clone, Debug)]
pub struct ModifiedJunctionTree {
    pub cost_cliques: Vec<BTreeSet<usize>>,
    pub separators: Vec<BTreeSet<usize>>,
    /// Edges as (cost clique index, separator index), sorted.
    pub edges: Vec<(usize, usize)>,
    /// Constrained separators: separator index -> gamma.
    pub constraints: BTreeMap<usize, BTreeSet<usize>>,
}

impl ModifiedJunctionTree {
    pub fn new_unchecked(
        cost_cliques: Vec<BTreeSet<usize>>,
        separators: Vec<BTreeSet<usize>>,
        edges: Vec<(usize, usize)>,
        constraints: BTreeMap<usize, BTreeSet<usize>>,
    ) -> Self {
        let mut edges = edges;
        edges.sort_unstable();
        edges.dedup();
        ModifiedJunctionTree {
            cost_cliques,
            separators,
            edges,
            constraints,
        }
    }

    pub fn new(
        cost_cliques: Vec<BTreeSet<usize>>,
        separators: Vec<BTreeSet<usize>>,
        edges: Vec<(usize, usize)>,
        constraints: BTreeMap<usize, BTreeSet<usize>>,
        factors: &[BTreeSet<usize>],
        constraint_sets: &[BTreeSet<usize>],
    ) -> Result<Self> {
        let m = Self::new_unchecked(cost_cliques, separators, edges, constraints);
        ok_or_invalid(m.validate(factors, constraint_sets))?;
        Ok(m)
    }

    /// Separator neighbors of a cost clique, sorted.
    pub fn clique_seps(&self, c: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(cc, s)| if cc == c { Some(s) } else { None })
            .collect();
        out.sort_unstable();
        out
    }

    /// Cost-clique neighbors of a separator, sorted.
    pub fn sep_cliques(&self, s: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(cc, ss)| if ss == s { Some(cc) } else { None })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn intersection(&self, sep: usize, clique: usize) -> BTreeSet<usize> {
        self.separators[sep]
            .intersection(&self.cost_cliques[clique])
            .copied()
            .collect()
    }

    /// Neighbors of separator `sep` ordered by decreasing intersection
    /// size (ties by clique index). Errors unless the intersections form a
    /// nested chain whose two largest members are equal; `permissive`
    /// relaxes the equal-heads requirement when there are exactly two
    /// neighbors (the cascade degenerates gracefully there).
    pub fn inclusion_order(&self, sep: usize, permissive: bool) -> Result<Vec<usize>> {
        let order = self.inclusion_order_unchecked(sep);
        let inters: Vec<BTreeSet<usize>> =
            order.iter().map(|&c| self.intersection(sep, c)).collect();
        for w in 1..inters.len() {
            if !inters[w].is_subset(&inters[w - 1]) {
                return Err(Error::Assumption(format!(
                    "separator {sep}: intersections with cliques {} and {} ({:?} vs {:?}) are not nested",
                    order[w - 1],
                    order[w],
                    inters[w - 1],
                    inters[w]
                )));
            }
        }
        if inters.len() >= 2 && inters[0] != inters[1] && !(permissive && inters.len() == 2) {
            return Err(Error::Assumption(format!(
                "separator {sep}: the two largest intersections {:?} and {:?} differ",
                inters[0], inters[1]
            )));
        }
        if let Some(gamma) = self.constraints.get(&sep) {
            if let Some(last) = inters.last() {
                if !gamma.is_subset(last) {
                    return Err(Error::Assumption(format!(
                        "separator {sep}: constraint {:?} is not contained in the smallest intersection {:?}",
                        gamma, last
                    )));
                }
            }
        }
        Ok(order)
    }

    fn inclusion_order_unchecked(&self, sep: usize) -> Vec<usize> {
        let mut order = self.sep_cliques(sep);
        order.sort_by_key(|&c| (usize::MAX - self.intersection(sep, c).len(), c));
        order
    }

    pub fn width(&self) -> usize {
        self.cost_cliques
            .iter()
            .chain(self.separators.iter())
            .map(|c| c.len())
            .max()
            .unwrap_or(1)
            - 1
    }

    pub fn validate(
        &self,
        factors: &[BTreeSet<usize>],
        constraint_sets: &[BTreeSet<usize>],
    ) -> Vec<Violation> {
        let mut vs = Vec::new();
        let nc = self.cost_cliques.len();
        let ns = self.separators.len();
        for &(c, s) in &self.edges {
            if c >= nc {
                vs.push(Violation::new(
                    Rule::BipartiteAlternation,
                    format!("edge references missing cost clique {c}"),
                ));
            }
            if s >= ns {
                vs.push(Violation::new(
                    Rule::BipartiteAlternation,
                    format!("edge references missing separator {s}"),
                ));
            }
        }
        for (&s, gamma) in &self.constraints {
            if s >= ns {
                vs.push(Violation::new(
                    Rule::NodeIdentity,
                    format!("constraint on missing separator {s}"),
                ));
            } else if !gamma.is_subset(&self.separators[s]) {
                vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!(
                        "constraint {:?} is not contained in separator {s} ({:?})",
                        gamma, self.separators[s]
                    ),
                ));
            }
        }
        if !vs.is_empty() {
            return vs;
        }
        if nc == 0 {
            vs.push(Violation::new(Rule::Connectivity, "no cost cliques"));
            return vs;
        }
        // flatten into one node space: cost cliques then separators
        let all_edges: Vec<(usize, usize)> = self.edges.iter().map(|&(c, s)| (c, nc + s)).collect();
        if !is_tree(nc + ns, &all_edges, &mut vs) {
            return vs;
        }
        for c in 0..nc {
            let deg = self.clique_seps(c).len();
            if deg != 2 {
                vs.push(Violation::new(
                    Rule::CostCliqueNeighborCount,
                    format!(
                        "cost clique {c} ({:?}) has {deg} separator neighbors",
                        self.cost_cliques[c]
                    ),
                ));
            }
        }
        for (fi, f) in factors.iter().enumerate() {
            if !self.cost_cliques.iter().any(|c| f.is_subset(c)) {
                vs.push(Violation::new(
                    Rule::FamilyPreservation,
                    format!("cost factor {fi} over {f:?} is not contained in any cost clique"),
                ));
            }
        }
        let all_cliques: Vec<BTreeSet<usize>> = self
            .cost_cliques
            .iter()
            .chain(self.separators.iter())
            .cloned()
            .collect();
        running_intersection(&all_cliques, &all_edges, &mut vs);
        for s in 0..ns {
            if let Err(Error::Assumption(msg)) = self.inclusion_order(s, false) {
                vs.push(Violation::new(Rule::InclusionSequence, msg));
            }
        }
        for cs in constraint_sets {
            let hits = self
                .constraints
                .values()
                .filter(|gamma| *gamma == cs)
                .count();
            if hits != 1 {
                vs.push(Violation::new(
                    Rule::ConstraintPlacement,
                    format!("constraint over {cs:?} is carried by {hits} separators, expected 1"),
                ));
            }
        }
        vs
    }
}
