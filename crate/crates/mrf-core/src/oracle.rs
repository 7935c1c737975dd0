//! Min-ratio cycle oracles: an exact parametric oracle and the tree-cycle
//! oracle over a collection of routing trees.

use thiserror::Error;

use crate::dyntree::DynForestT;
use crate::graph::{Circulation, Dsu, DynGraph, EdgeId, FlatForest, HostLink, VertexId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("graph has no cycle")]
    NoCycle,
    #[error("no candidate tree cycles")]
    EmptyCandidateSet,
    #[error("edge {0} has non-positive length")]
    NonPositiveLength(EdgeId),
    #[error("oracle failure: {0}")]
    Failure(String),
}

/// A unit of flow along the tree path `from`→`to` of tree `tree`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPiece {
    pub tree: usize,
    pub from: usize,
    pub to: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleAnswer {
    pub circulation: Circulation,
    /// ⟨g,c⟩/‖Lc‖₁ of `circulation` on the host graph.
    pub ratio: f64,
    /// The objective value inside the oracle's own metric (equal to `ratio`
    /// for the exact oracle).
    pub oracle_ratio: f64,
    pub paths: Vec<PathPiece>,
    pub explicit: Vec<(EdgeId, f64)>,
}

impl CycleAnswer {
    pub(crate) fn from_explicit(g: &DynGraph, explicit: Vec<(EdgeId, f64)>) -> Self {
        let mut c = Circulation::new();
        for &(e, x) in &explicit {
            c.add(e, x);
        }
        let ratio = c.ratio(g);
        CycleAnswer { circulation: c, ratio, oracle_ratio: ratio, paths: Vec::new(), explicit }
    }

    /// Rebuilds the host circulation from the representation.
    pub fn expand(&self, trees: &[RoutingTree]) -> Circulation {
        let mut c = Circulation::new();
        for &(e, x) in &self.explicit {
            c.add(e, x);
        }
        for p in &self.paths {
            for (e, s) in trees[p.tree].forest.path_flow(p.from, p.to).expect("connected") {
                c.add(e, s * p.coeff);
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: VertexId,
    g: f64,
    len: f64,
    edge: EdgeId,
    sign: f64,
}

fn arcs(g: &DynGraph) -> Result<(Vec<(VertexId, Arc)>, Vec<(EdgeId, f64)>), OracleError> {
    let mut out = Vec::new();
    let mut loops = Vec::new();
    for (id, e) in g.edges() {
        if e.length <= 0.0 || !e.length.is_finite() {
            return Err(OracleError::NonPositiveLength(id));
        }
        if e.tail == e.head {
            let sign = if e.gradient > 0.0 { -1.0 } else { 1.0 };
            loops.push((id, sign));
            continue;
        }
        out.push((e.tail, Arc { to: e.head, g: e.gradient, len: e.length, edge: id, sign: 1.0 }));
        out.push((e.head, Arc { to: e.tail, g: -e.gradient, len: e.length, edge: id, sign: -1.0 }));
    }
    Ok((out, loops))
}

/// Bellman-Ford from a virtual source; returns a negative cycle under weights
/// g − λℓ as a list of arc indices, if one exists.
fn negative_cycle(n: usize, arcs: &[(VertexId, Arc)], lambda: f64) -> Option<Vec<usize>> {
    let mut scale: f64 = 0.0;
    for (_, a) in arcs {
        scale = scale.max((a.g - lambda * a.len).abs());
    }
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut dist = vec![0.0f64; n];
    let mut pred = vec![usize::MAX; n];
    for _ in 0..3 * n + 3 {
        let mut relaxed = false;
        for (i, (from, a)) in arcs.iter().enumerate() {
            let w = a.g - lambda * a.len;
            if dist[*from] + w < dist[a.to] - tol {
                dist[a.to] = dist[*from] + w;
                pred[a.to] = i;
                relaxed = true;
            }
        }
        if !relaxed {
            return None;
        }
        // any cycle of predecessor arcs has negative weight
        if let Some(c) = pred_cycle(arcs, &pred) {
            return Some(c);
        }
    }
    None
}

fn pred_cycle(arcs: &[(VertexId, Arc)], pred: &[usize]) -> Option<Vec<usize>> {
    let n = pred.len();
    let mut state = vec![0u8; n];
    for s in 0..n {
        let mut v = s;
        while state[v] == 0 {
            state[v] = 1;
            if pred[v] == usize::MAX {
                break;
            }
            v = arcs[pred[v]].0;
        }
        if state[v] == 1 && pred[v] != usize::MAX {
            // v is on a fresh cycle
            let start = v;
            let mut cycle = Vec::new();
            loop {
                let i = pred[v];
                cycle.push(i);
                v = arcs[i].0;
                if v == start {
                    break;
                }
            }
            cycle.reverse();
            return Some(cycle);
        }
        let mut v = s;
        while state[v] == 1 {
            state[v] = 2;
            if pred[v] == usize::MAX {
                break;
            }
            v = arcs[pred[v]].0;
        }
    }
    None
}

fn cycle_ratio(arcs: &[(VertexId, Arc)], cycle: &[usize]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &i in cycle {
        num += arcs[i].1.g;
        den += arcs[i].1.len;
    }
    num / den
}

/// Exact minimum of ⟨g,Δ⟩/‖LΔ‖₁ over circulations, attained on a simple cycle.
///
/// Dinkelbach iteration on λ starting from 0: each round extracts a negative
/// cycle of the weights g − λℓ (both orientations of every edge) and moves λ
/// to its ratio; the loop ends when no negative cycle remains.
pub fn exact_min_ratio(g: &DynGraph) -> Result<CycleAnswer, OracleError> {
    let (arcs, loops) = arcs(g)?;
    let n = g.vertex_count();
    let mut best: Option<(f64, Vec<(EdgeId, f64)>)> = None;
    for &(e, sign) in &loops {
        let edge = g.edge(e);
        let r = sign * edge.gradient / edge.length;
        if best.as_ref().is_none_or(|(b, _)| r < *b) {
            best = Some((r, vec![(e, sign)]));
        }
    }
    let mut lambda = best.as_ref().map_or(0.0, |(r, _)| r.min(0.0));
    let mut rounds = 0;
    while let Some(cycle) = negative_cycle(n, &arcs, lambda) {
        let r = cycle_ratio(&arcs, &cycle);
        let improves = r < lambda - 1e-15 * lambda.abs().max(1e-300);
        if !improves && best.is_some() {
            break;
        }
        best = Some((r, cycle.iter().map(|&i| (arcs[i].1.edge, arcs[i].1.sign)).collect()));
        lambda = r;
        rounds += 1;
        if rounds > 10 * (arcs.len() + 10) {
            return Err(OracleError::Failure("parametric search did not settle".into()));
        }
    }
    match best {
        Some((_, cyc)) => Ok(CycleAnswer::from_explicit(g, cyc)),
        None => zero_ratio_cycle(g).map(|cyc| CycleAnswer::from_explicit(g, cyc)),
    }
}

/// Fundamental cycle of the first edge (by id) that closes a cycle.
fn zero_ratio_cycle(g: &DynGraph) -> Result<Vec<(EdgeId, f64)>, OracleError> {
    let mut dsu = Dsu::new(g.vertex_count());
    let mut adj: Vec<Vec<(VertexId, EdgeId, f64)>> = vec![Vec::new(); g.vertex_count()];
    for (id, e) in g.edges() {
        if e.tail == e.head {
            return Ok(vec![(id, 1.0)]);
        }
        if !dsu.union(e.tail, e.head) {
            // path head→tail in the forest so far
            let path = forest_path(&adj, e.head, e.tail).expect("same component");
            let mut cyc = vec![(id, 1.0)];
            cyc.extend(path);
            return Ok(cyc);
        }
        adj[e.tail].push((e.head, id, 1.0));
        adj[e.head].push((e.tail, id, -1.0));
    }
    Err(OracleError::NoCycle)
}

fn forest_path(adj: &[Vec<(VertexId, EdgeId, f64)>], s: VertexId, t: VertexId) -> Option<Vec<(EdgeId, f64)>> {
    let mut prev: Vec<Option<(VertexId, EdgeId, f64)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![s];
    seen[s] = true;
    while let Some(x) = stack.pop() {
        for &(y, e, sign) in &adj[x] {
            if !seen[y] {
                seen[y] = true;
                prev[y] = Some((x, e, sign));
                stack.push(y);
            }
        }
    }
    if !seen[t] {
        return None;
    }
    let mut out = Vec::new();
    let mut y = t;
    while y != s {
        let (x, e, sign) = prev[y]?;
        out.push((e, sign));
        y = x;
    }
    out.reverse();
    Some(out)
}

/// A flat forest whose edges carry their own length and gradient. Entry `x`
/// describes the edge from node `x` to its parent, with the gradient oriented
/// child→parent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoutingTree {
    pub forest: FlatForest,
    pub len: Vec<f64>,
    pub grad: Vec<f64>,
}

impl RoutingTree {
    /// Lengths and gradients read from the host edges each forest edge maps to.
    pub fn from_host(forest: FlatForest, host: &DynGraph) -> Self {
        let n = forest.len();
        let mut t = RoutingTree { forest, len: vec![0.0; n], grad: vec![0.0; n] };
        t.refresh_from_host(host);
        t
    }

    /// Re-reads host values for edges that map to host edges; collapsed
    /// edges keep their own values.
    pub fn refresh_from_host(&mut self, host: &DynGraph) {
        for x in 0..self.forest.len() {
            if let HostLink::Edge(e, fwd) = self.forest.link[x] {
                let edge = host.edge(e);
                self.len[x] = edge.length;
                self.grad[x] = if fwd { edge.gradient } else { -edge.gradient };
            }
        }
    }

    fn to_dyn(&self) -> DynForestT<f64> {
        let mut d = DynForestT::new(self.forest.len(), 1.0);
        for x in 0..self.forest.len() {
            if let Some(p) = self.forest.parent[x] {
                d.link(x, p, self.grad[x], self.len[x]).expect("forest");
            }
        }
        d
    }
}

/// An off-tree edge a→b between nodes of one routing tree.
#[derive(Debug, Clone, PartialEq)]
pub struct OffEdge {
    pub a: usize,
    pub b: usize,
    pub grad: f64,
    pub len: f64,
    /// Host flow of traversing the edge a→b.
    pub image: Vec<(EdgeId, f64)>,
}

/// Best ±1_{T↺[e]} over all trees and their off-tree edges, evaluated with
/// dynamic-tree path queries. Candidates whose host image cancels to zero are
/// skipped.
pub fn tree_cycle_min_ratio(
    host: &DynGraph,
    trees: &[RoutingTree],
    off_edges: &[Vec<OffEdge>],
) -> Result<CycleAnswer, OracleError> {
    let mut best: Option<(f64, usize, usize, f64)> = None;
    for (ti, tree) in trees.iter().enumerate() {
        let mut d = tree.to_dyn();
        for (oi, off) in off_edges[ti].iter().enumerate() {
            let (Ok(pg), Ok(pl)) = (d.path_gradient(off.b, off.a), d.path_length(off.b, off.a)) else {
                continue;
            };
            let num = off.grad + pg;
            let den = off.len + pl;
            if den <= 0.0 {
                continue;
            }
            for sign in [1.0, -1.0] {
                let r = sign * num / den;
                if best.is_none_or(|(b, ..)| r < b) {
                    let ans = candidate(host, trees, ti, off, sign, r);
                    if !ans.circulation.is_empty() {
                        best = Some((r, ti, oi, sign));
                    }
                }
            }
        }
    }
    let (r, ti, oi, sign) = best.ok_or(OracleError::EmptyCandidateSet)?;
    Ok(candidate(host, trees, ti, &off_edges[ti][oi], sign, r))
}

fn candidate(host: &DynGraph, trees: &[RoutingTree], ti: usize, off: &OffEdge, sign: f64, r: f64) -> CycleAnswer {
    let explicit: Vec<(EdgeId, f64)> = off.image.iter().map(|&(e, x)| (e, x * sign)).collect();
    let paths = vec![PathPiece { tree: ti, from: off.b, to: off.a, coeff: sign }];
    let mut ans = CycleAnswer {
        circulation: Circulation::new(),
        ratio: 0.0,
        oracle_ratio: r,
        paths,
        explicit,
    };
    ans.circulation = ans.expand(trees);
    if !ans.circulation.is_empty() {
        ans.ratio = ans.circulation.ratio(host);
    }
    ans
}

/// Tree collection for the host graph itself: one tree per spanning forest.
/// Off-tree edges are the host's non-forest edges with their own values.
pub fn host_tree_candidates(host: &DynGraph, forest: &FlatForest) -> (RoutingTree, Vec<OffEdge>) {
    let tree = RoutingTree::from_host(forest.clone(), host);
    let mut in_tree = vec![false; host.edge_slots()];
    for x in 0..forest.len() {
        if let (Some(_), HostLink::Edge(e, _)) = (forest.parent[x], forest.link[x]) {
            in_tree[e] = true;
        }
    }
    // forest nodes are host vertices
    let off = host
        .edges()
        .filter(|(id, _)| !in_tree[*id])
        .map(|(id, e)| OffEdge { a: e.tail, b: e.head, grad: e.gradient, len: e.length, image: vec![(id, 1.0)] })
        .collect();
    (tree, off)
}

/// BFS spanning forest of the host with one node per host vertex.
pub fn spanning_forest(host: &DynGraph) -> FlatForest {
    let mut f = FlatForest::new();
    for v in 0..host.vertex_count() {
        f.add_node(v);
    }
    let inc = host.incidence();
    let mut seen = vec![false; host.vertex_count()];
    for s in 0..host.vertex_count() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            for &e in &inc[x] {
                let edge = host.edge(e);
                let y = edge.other(x);
                if !seen[y] {
                    seen[y] = true;
                    // child y, parent x; forward when y is the tail
                    f.set_parent(y, x, HostLink::Edge(e, edge.tail == y));
                    queue.push_back(y);
                }
            }
        }
    }
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragingReport {
    /// min over edges and signs of ±⟨g,P1_e⟩/‖M1_e‖₁.
    pub lhs: f64,
    /// optimum / ‖ML⁻¹‖₁→₁.
    pub rhs: f64,
    pub optimum: f64,
    pub norm: f64,
    pub holds: bool,
}

/// Checks the averaging bound with M = diag(max(ℓ_e, ‖LP1_e‖₁)), so that
/// ‖ML⁻¹‖₁→₁ is the worst stretch of the routing.
pub fn averaging_bound_check(
    g: &DynGraph,
    routing: impl Fn(EdgeId) -> Circulation,
) -> Result<AveragingReport, OracleError> {
    let optimum = exact_min_ratio(g)?.ratio;
    let mut lhs = f64::INFINITY;
    let mut norm: f64 = 0.0;
    for (id, e) in g.edges() {
        let p = routing(id);
        let m = e.length.max(p.weighted_length(g));
        norm = norm.max(m / e.length);
        let val = p.gradient_pairing(g).abs();
        lhs = lhs.min(-val / m);
    }
    let rhs = optimum / norm;
    let holds = lhs <= rhs + 1e-9 * rhs.abs().max(1e-12);
    Ok(AveragingReport { lhs, rhs, optimum, norm, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    fn edge(t: usize, h: usize, g: f64, l: f64) -> Edge {
        let mut e = Edge::new(t, h);
        e.gradient = g;
        e.length = l;
        e
    }

    #[test]
    fn directed_triangle() {
        let mut g = DynGraph::with_vertices(3);
        for (t, h) in [(0, 1), (1, 2), (2, 0)] {
            g.add_edge(edge(t, h, -1.0, 1.0)).unwrap();
        }
        let a = exact_min_ratio(&g).unwrap();
        assert!((a.ratio + 1.0).abs() < 1e-12);
        assert_eq!(a.circulation.entries.len(), 3);
    }

    #[test]
    fn antiparallel_pair() {
        let mut g = DynGraph::with_vertices(2);
        let e1 = g.add_edge(edge(0, 1, -2.0, 1.0)).unwrap();
        let e2 = g.add_edge(edge(1, 0, 0.0, 1.0)).unwrap();
        let a = exact_min_ratio(&g).unwrap();
        assert!((a.ratio + 1.0).abs() < 1e-12);
        assert_eq!(a.circulation.get(e1), 1.0);
        assert_eq!(a.circulation.get(e2), 1.0);
    }

    #[test]
    fn forest_has_no_cycle() {
        let mut g = DynGraph::with_vertices(3);
        g.add_edge(edge(0, 1, -1.0, 1.0)).unwrap();
        g.add_edge(edge(2, 1, 1.0, 1.0)).unwrap();
        assert_eq!(exact_min_ratio(&g), Err(OracleError::NoCycle));
    }

    #[test]
    fn zero_length_rejected() {
        let mut g = DynGraph::with_vertices(2);
        g.add_edge(edge(0, 1, -1.0, 0.0)).unwrap();
        assert_eq!(exact_min_ratio(&g), Err(OracleError::NonPositiveLength(0)));
    }

    #[test]
    fn zero_gradient_cycle_still_returned() {
        let mut g = DynGraph::with_vertices(3);
        for (t, h) in [(0, 1), (1, 2), (2, 0)] {
            g.add_edge(edge(t, h, 0.0, 1.0)).unwrap();
        }
        let a = exact_min_ratio(&g).unwrap();
        assert_eq!(a.ratio, 0.0);
        assert_eq!(a.circulation.entries.len(), 3);
    }

    fn path_with_chord(chord_g: f64) -> (DynGraph, FlatForest) {
        let mut g = DynGraph::with_vertices(3);
        g.add_edge(edge(0, 1, 0.0, 1.0)).unwrap();
        g.add_edge(edge(1, 2, 0.0, 1.0)).unwrap();
        g.add_edge(edge(0, 2, chord_g, 1.0)).unwrap();
        let f = spanning_forest(&g);
        (g, f)
    }

    #[test]
    fn tree_cycle_negative_chord() {
        let (g, f) = path_with_chord(-3.0);
        let (t, off) = host_tree_candidates(&g, &f);
        assert_eq!(off.len(), 1);
        let a = tree_cycle_min_ratio(&g, &[t], &[off]).unwrap();
        assert!((a.oracle_ratio + 1.0).abs() < 1e-12);
        assert!((a.ratio + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tree_cycle_positive_chord_reverses() {
        let (g, f) = path_with_chord(3.0);
        let (t, off) = host_tree_candidates(&g, &f);
        let trees = [t];
        let a = tree_cycle_min_ratio(&g, &trees, &[off]).unwrap();
        assert!((a.ratio + 1.0).abs() < 1e-12);
        assert_eq!(a.circulation.get(2), -1.0);
        assert_eq!(a.expand(&trees), a.circulation);
    }

    #[test]
    fn empty_candidates() {
        let g = DynGraph::with_vertices(1);
        assert_eq!(tree_cycle_min_ratio(&g, &[], &[]), Err(OracleError::EmptyCandidateSet));
    }

    #[test]
    fn averaging_on_triangle_with_tree_routing() {
        let mut g = DynGraph::with_vertices(3);
        g.add_edge(edge(0, 1, -1.0, 1.0)).unwrap();
        g.add_edge(edge(1, 2, -0.5, 2.0)).unwrap();
        g.add_edge(edge(2, 0, -2.0, 1.0)).unwrap();
        let f = spanning_forest(&g);
        let (t, off) = host_tree_candidates(&g, &f);
        let routing = |e: EdgeId| {
            let mut c = Circulation::new();
            if let Some(o) = off.iter().find(|o| o.image[0].0 == e) {
                c.add(e, 1.0);
                for (x, s) in t.forest.path_flow(o.b, o.a).unwrap() {
                    c.add(x, s);
                }
            }
            c
        };
        let rep = averaging_bound_check(&g, routing).unwrap();
        assert!(rep.holds, "{rep:?}");
        assert!(rep.optimum < 0.0);
    }

    #[test]
    fn averaging_trivial_when_nonnegative() {
        let mut g = DynGraph::with_vertices(2);
        g.add_edge(edge(0, 1, 0.0, 1.0)).unwrap();
        g.add_edge(edge(0, 1, 0.0, 1.0)).unwrap();
        let rep = averaging_bound_check(&g, |_| Circulation::new()).unwrap();
        assert_eq!(rep.optimum, 0.0);
        assert!(rep.holds);
    }
}
