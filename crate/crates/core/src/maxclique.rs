//! Exact maximum-weight clique.
//!
//! [`solve`] is a branch-and-bound search bounded by greedy weighted
//! coloring: vertices of one color class are pairwise non-adjacent, so a
//! clique picks at most one vertex per class and the sum of the per-class
//! maximum weights bounds any extension of the current clique. [`brute_force`]
//! is the exhaustive oracle used to check it.
//!
//! Ties between optimal cliques are broken towards the lexicographically
//! smallest ascending node list, in both routes.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Undirected graph with positive integer node weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedGraph {
    weights: Vec<u64>,
    adj: Vec<Vec<bool>>,
}

/// A clique as an ascending node list plus its total weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clique {
    pub nodes: Vec<usize>,
    pub weight: u64,
}

impl WeightedGraph {
    /// Edgeless graph. Every weight must be at least 1.
    pub fn new(weights: Vec<u64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("node {i} has weight 0, weights must be >= 1")));
        }
        let n = weights.len();
        Ok(Self { weights, adj: vec![vec![false; n]; n] })
    }

    pub fn complete(weights: Vec<u64>) -> Result<Self> {
        let mut g = Self::new(weights)?;
        for u in 0..g.len() {
            for v in u + 1..g.len() {
                g.add_edge(u, v)?;
            }
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<()> {
        let n = self.len();
        if u >= n || v >= n {
            return Err(Error::Shape(format!("edge ({u}, {v}) out of range for {n} nodes")));
        }
        if u == v {
            return Err(Error::Config(format!("self-loop on node {u}")));
        }
        self.adj[u][v] = true;
        self.adj[v][u] = true;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weight(&self, v: usize) -> u64 {
        self.weights[v]
    }

    pub fn weights(&self) -> &[u64] {
        &self.weights
    }

    pub fn is_adjacent(&self, u: usize, v: usize) -> bool {
        self.adj[u][v]
    }

    pub fn edge_count(&self) -> usize {
        (0..self.len()).map(|u| (u + 1..self.len()).filter(|&v| self.adj[u][v]).count()).sum()
    }

    pub fn is_clique(&self, nodes: &[usize]) -> bool {
        nodes.iter().enumerate().all(|(i, &u)| nodes[i + 1..].iter().all(|&v| u != v && self.adj[u][v]))
    }

    /// Parses the DIMACS-like text format:
    /// `c` comment lines, one `p edge <n> <m>` header, `n <id> <weight>` node
    /// weights and `e <u> <v>` edges, with 1-based ids. Nodes without an
    /// `n` line get weight 1.
    pub fn from_dimacs(text: &str) -> Result<Self> {
        let mut graph: Option<WeightedGraph> = None;
        let mut declared_edges = 0usize;
        let mut offset = 0usize;
        for line in text.lines() {
            let line_offset = offset;
            offset += line.len() + 1;
            let mut fields = line.split_whitespace();
            let Some(kind) = fields.next() else { continue };
            let parse_err = |message: String| Error::Parse { offset: line_offset, message };
            let mut num = |name: &str| -> Result<u64> {
                fields
                    .next()
                    .ok_or_else(|| parse_err(format!("missing {name}")))?
                    .parse::<u64>()
                    .map_err(|e| parse_err(format!("bad {name}: {e}")))
            };
            match kind {
                "c" => {}
                "p" => {
                    if graph.is_some() {
                        return Err(parse_err("duplicate problem line".into()));
                    }
                    let format = line.split_whitespace().nth(1).unwrap_or("");
                    if format != "edge" && format != "col" {
                        return Err(parse_err(format!("unsupported problem format {format:?}")));
                    }
                    let _ = num("format");
                    let n = num("node count")? as usize;
                    declared_edges = num("edge count")? as usize;
                    graph = Some(WeightedGraph::new(vec![1; n])?);
                }
                "n" | "e" => {
                    let g = graph.as_mut().ok_or_else(|| parse_err("data before problem line".into()))?;
                    let a = num("first field")?;
                    let b = num("second field")?;
                    let n = g.len() as u64;
                    if a == 0 || a > n {
                        return Err(parse_err(format!("node id {a} out of range 1..={n}")));
                    }
                    if kind == "n" {
                        if b == 0 {
                            return Err(parse_err(format!("node {a} has weight 0")));
                        }
                        g.weights[a as usize - 1] = b;
                    } else {
                        if b == 0 || b > n {
                            return Err(parse_err(format!("node id {b} out of range 1..={n}")));
                        }
                        g.add_edge(a as usize - 1, b as usize - 1).map_err(|e| parse_err(e.to_string()))?;
                    }
                }
                other => return Err(parse_err(format!("unknown line type {other:?}"))),
            }
        }
        let g = graph.ok_or(Error::Parse { offset: 0, message: "missing problem line".into() })?;
        if g.edge_count() != declared_edges {
            log::warn!("DIMACS header declares {declared_edges} edges, found {}", g.edge_count());
        }
        Ok(g)
    }

    pub fn to_dimacs(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "p edge {} {}", self.len(), self.edge_count());
        for (i, w) in self.weights.iter().enumerate() {
            let _ = writeln!(out, "n {} {}", i + 1, w);
        }
        for u in 0..self.len() {
            for v in u + 1..self.len() {
                if self.adj[u][v] {
                    let _ = writeln!(out, "e {} {}", u + 1, v + 1);
                }
            }
        }
        out
    }
}

struct Search<'g> {
    g: &'g WeightedGraph,
    best: u64,
}

impl Search<'_> {
    /// Greedy coloring of `cands` in their given order. Returns the vertices
    /// regrouped by color class together with, for each position, an upper
    /// bound on the weight of any clique inside the prefix ending there.
    fn color_bound(&self, cands: &[usize]) -> (Vec<usize>, Vec<u64>) {
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for &v in cands {
            match classes.iter_mut().find(|class| class.iter().all(|&u| !self.g.adj[u][v])) {
                Some(class) => class.push(v),
                None => classes.push(vec![v]),
            }
        }
        let mut order = Vec::with_capacity(cands.len());
        let mut bounds = Vec::with_capacity(cands.len());
        let mut acc = 0u64;
        for class in &classes {
            let top = class.iter().map(|&v| self.g.weights[v]).max().unwrap_or(0);
            acc += top;
            for &v in class {
                order.push(v);
                bounds.push(acc);
            }
        }
        (order, bounds)
    }

    fn expand(&mut self, current: u64, cands: &[usize]) {
        if cands.is_empty() {
            self.best = self.best.max(current);
            return;
        }
        let (order, bounds) = self.color_bound(cands);
        for i in (0..order.len()).rev() {
            if current + bounds[i] <= self.best {
                return;
            }
            let v = order[i];
            let next: Vec<usize> = order[..i].iter().copied().filter(|&u| self.g.adj[v][u]).collect();
            self.expand(current + self.g.weights[v], &next);
        }
    }
}

/// Optimal clique weight inside the subgraph induced by `cands`.
fn max_weight_within(g: &WeightedGraph, cands: &[usize]) -> u64 {
    let mut ordered = cands.to_vec();
    ordered.sort_by(|&a, &b| g.weights[b].cmp(&g.weights[a]).then(a.cmp(&b)));
    let mut search = Search { g, best: 0 };
    search.expand(0, &ordered);
    search.best
}

/// Maximum-weight clique; ties resolve to the lexicographically smallest
/// node list.
pub fn solve(g: &WeightedGraph) -> Clique {
    let all: Vec<usize> = (0..g.len()).collect();
    let target = max_weight_within(g, &all);

    // Fix nodes in ascending order, keeping the smallest node that still
    // admits an optimal completion.
    let mut nodes = Vec::new();
    let mut remaining = target;
    let mut cands = all;
    while remaining > 0 {
        let pick = cands.iter().copied().find_map(|v| {
            let w = g.weights[v];
            if w > remaining {
                return None;
            }
            let next: Vec<usize> = cands.iter().copied().filter(|&u| u > v && g.adj[v][u]).collect();
            (w + max_weight_within(g, &next) >= remaining).then_some((v, next))
        });
        let (v, next) = pick.expect("an optimal completion exists for the remaining weight");
        nodes.push(v);
        remaining -= g.weights[v];
        cands = next;
    }
    Clique { nodes, weight: target }
}

pub const BRUTE_FORCE_LIMIT: usize = 25;

/// Exhaustive scan over all node subsets. Limited to
/// [`BRUTE_FORCE_LIMIT`] nodes.
pub fn brute_force(g: &WeightedGraph) -> Result<Clique> {
    let n = g.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::GuardExceeded { what: "brute-force graph", got: n, limit: BRUTE_FORCE_LIMIT });
    }
    let neighbors: Vec<u32> = (0..n).map(|u| (0..n).filter(|&v| g.adj[u][v]).fold(0u32, |m, v| m | (1 << v))).collect();
    let mut best = Clique { nodes: Vec::new(), weight: 0 };
    for mask in 1u32..(1u32 << n) {
        let members: Vec<usize> = (0..n).filter(|&v| mask & (1 << v) != 0).collect();
        let is_clique = members.iter().all(|&v| (mask & !(1 << v)) & !neighbors[v] == 0);
        if !is_clique {
            continue;
        }
        let weight: u64 = members.iter().map(|&v| g.weights[v]).sum();
        if weight > best.weight || (weight == best.weight && members < best.nodes) {
            best = Clique { nodes: members, weight };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path(weights: Vec<u64>) -> WeightedGraph {
        let mut g = WeightedGraph::new(weights).unwrap();
        for i in 0..g.len() - 1 {
            g.add_edge(i, i + 1).unwrap();
        }
        g
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> WeightedGraph {
        let weights = (0..n).map(|_| rng.random_range(1..=100)).collect();
        let mut g = WeightedGraph::new(weights).unwrap();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(p) {
                    g.add_edge(u, v).unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn empty_graph() {
        let g = WeightedGraph::new(vec![]).unwrap();
        assert_eq!(solve(&g), Clique { nodes: vec![], weight: 0 });
        assert_eq!(brute_force(&g).unwrap(), Clique { nodes: vec![], weight: 0 });
    }

    #[test]
    fn complete_graph_takes_everything() {
        let g = WeightedGraph::complete(vec![3, 5, 2]).unwrap();
        assert_eq!(solve(&g), Clique { nodes: vec![0, 1, 2], weight: 10 });
    }

    #[test]
    fn path_graph_prefers_lowest_heavy_edge() {
        // Edges {0,1} and {3,4} both weigh 5; {0,1} is lexicographically first.
        let g = path(vec![4, 1, 1, 1, 4]);
        let bf = brute_force(&g).unwrap();
        assert_eq!(bf, Clique { nodes: vec![0, 1], weight: 5 });
        assert_eq!(solve(&g), bf);
    }

    #[test]
    fn single_node() {
        let g = WeightedGraph::new(vec![7]).unwrap();
        assert_eq!(brute_force(&g).unwrap(), Clique { nodes: vec![0], weight: 7 });
        assert_eq!(solve(&g), Clique { nodes: vec![0], weight: 7 });
    }

    #[test]
    fn heavy_isolated_node_beats_triangle() {
        let mut g = WeightedGraph::new(vec![10, 10, 10, 100]).unwrap();
        g.add_edge(0, 1).unwrap();
        g.add_edge(1, 2).unwrap();
        g.add_edge(0, 2).unwrap();
        assert_eq!(brute_force(&g).unwrap(), Clique { nodes: vec![3], weight: 100 });
        assert_eq!(solve(&g), Clique { nodes: vec![3], weight: 100 });
    }

    #[test]
    fn brute_force_guard() {
        let g = WeightedGraph::new(vec![1; BRUTE_FORCE_LIMIT + 1]).unwrap();
        assert!(matches!(brute_force(&g), Err(Error::GuardExceeded { .. })));
    }

    #[test]
    fn rejects_zero_weight_and_self_loop() {
        assert!(WeightedGraph::new(vec![1, 0]).is_err());
        let mut g = WeightedGraph::new(vec![1, 1]).unwrap();
        assert!(g.add_edge(1, 1).is_err());
        assert!(g.add_edge(0, 2).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..200 {
            let n = 1 + i % 12;
            let p = [0.2, 0.5, 0.8][i % 3];
            let g = random_graph(&mut rng, n, p);
            let exact = solve(&g);
            let oracle = brute_force(&g).unwrap();
            assert_eq!(exact, oracle, "instance {i}");
            assert!(g.is_clique(&exact.nodes));
        }
    }

    #[test]
    fn isolated_heavier_node_takes_over() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(&mut rng, 9, 0.6);
        let before = solve(&g);
        let mut weights = g.weights().to_vec();
        weights.push(before.weight + 1);
        let mut bigger = WeightedGraph::new(weights).unwrap();
        for u in 0..g.len() {
            for v in u + 1..g.len() {
                if g.is_adjacent(u, v) {
                    bigger.add_edge(u, v).unwrap();
                }
            }
        }
        assert_eq!(solve(&bigger).nodes, vec![g.len()]);
    }

    #[test]
    fn dimacs_round_trip() {
        let mut g = WeightedGraph::new(vec![4, 9, 2]).unwrap();
        g.add_edge(0, 2).unwrap();
        let text = g.to_dimacs();
        assert_eq!(text, "p edge 3 1\nn 1 4\nn 2 9\nn 3 2\ne 1 3\n");
        assert_eq!(WeightedGraph::from_dimacs(&text).unwrap(), g);
    }

    #[test]
    fn dimacs_errors_carry_offsets() {
        let err = WeightedGraph::from_dimacs("c hi\np edge 2 1\ne 1 3\n").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 16),
            other => panic!("unexpected {other:?}"),
        }
        assert!(WeightedGraph::from_dimacs("e 1 2\n").is_err());
        assert!(WeightedGraph::from_dimacs("p edge 2 0\nn 1 0\n").is_err());
    }
}
