//! Classical reference algorithms the applications are checked against.
//! They recompute from scratch and are only meant for small inputs.

use petgraph::algo::{dijkstra, is_cyclic_directed, tarjan_scc};
use petgraph::graph::{DiGraph, NodeIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEdge {
    pub tail: usize,
    pub head: usize,
    pub cap: i64,
    pub cost: i64,
}

/// Min-cost circulation by negative-cycle cancelling. The flow persists, so
/// adding edges and re-optimizing follows an incremental stream.
#[derive(Debug, Clone, Default)]
pub struct CycleCanceling {
    pub n: usize,
    pub edges: Vec<FlowEdge>,
    pub flow: Vec<i64>,
}

impl CycleCanceling {
    pub fn new(n: usize) -> Self {
        CycleCanceling { n, ..Default::default() }
    }

    pub fn add_vertex(&mut self) -> usize {
        self.n += 1;
        self.n - 1
    }

    pub fn add_edge(&mut self, e: FlowEdge) {
        self.edges.push(e);
        self.flow.push(0);
    }

    pub fn cost(&self) -> i64 {
        self.edges.iter().zip(&self.flow).map(|(e, f)| e.cost * f).sum()
    }

    /// Cancels negative residual cycles until none is left; returns the cost.
    pub fn optimize(&mut self) -> i64 {
        for (i, e) in self.edges.iter().enumerate() {
            if e.tail == e.head {
                self.flow[i] = if e.cost < 0 { e.cap } else { 0 };
            }
        }
        while let Some(cycle) = self.negative_cycle() {
            let theta = cycle.iter().map(|&(i, s)| if s > 0 { self.edges[i].cap - self.flow[i] } else { self.flow[i] }).min();
            let theta = theta.expect("non-empty cycle");
            for &(i, s) in &cycle {
                self.flow[i] += s * theta;
            }
        }
        self.cost()
    }

    /// Bellman-Ford from a virtual source at distance 0 to every vertex.
    fn negative_cycle(&self) -> Option<Vec<(usize, i64)>> {
        // residual arcs: (from, to, cost, edge index, +1 forward / −1 backward)
        let mut arcs = Vec::new();
        for (i, e) in self.edges.iter().enumerate() {
            if e.tail == e.head {
                continue;
            }
            if self.flow[i] < e.cap {
                arcs.push((e.tail, e.head, e.cost, i, 1));
            }
            if self.flow[i] > 0 {
                arcs.push((e.head, e.tail, -e.cost, i, -1));
            }
        }
        let mut dist = vec![0i64; self.n];
        let mut pred: Vec<Option<usize>> = vec![None; self.n];
        let mut last = None;
        for _ in 0..self.n {
            last = None;
            for (k, &(a, b, c, _, _)) in arcs.iter().enumerate() {
                if dist[a] + c < dist[b] {
                    dist[b] = dist[a] + c;
                    pred[b] = Some(k);
                    last = Some(b);
                }
            }
            last?;
        }
        // a vertex relaxed in round n leads back into a cycle
        let mut v = last?;
        for _ in 0..self.n {
            v = arcs[pred[v].expect("relaxed")].0;
        }
        let start = v;
        let mut out = Vec::new();
        loop {
            let k = pred[v].expect("on cycle");
            out.push((arcs[k].3, arcs[k].4));
            v = arcs[k].0;
            if v == start {
                break;
            }
        }
        out.reverse();
        Some(out)
    }
}

/// Min cost of sending `d` units s→t (successive shortest paths), or None
/// when fewer than `d` units fit. Costs must be nonnegative.
pub fn min_cost_flow(n: usize, edges: &[FlowEdge], s: usize, t: usize, d: i64) -> Option<i64> {
    let mut flow = vec![0i64; edges.len()];
    let mut sent = 0;
    let mut cost = 0;
    while sent < d {
        // Bellman-Ford on the residual graph
        let mut dist = vec![i64::MAX; n];
        let mut pred: Vec<Option<(usize, i64)>> = vec![None; n];
        dist[s] = 0;
        for _ in 0..n {
            let mut changed = false;
            for (i, e) in edges.iter().enumerate() {
                for (a, b, c, sg, ok) in [
                    (e.tail, e.head, e.cost, 1, flow[i] < e.cap),
                    (e.head, e.tail, -e.cost, -1, flow[i] > 0),
                ] {
                    if ok && dist[a] != i64::MAX && dist[a] + c < dist[b] {
                        dist[b] = dist[a] + c;
                        pred[b] = Some((i, sg));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[t] == i64::MAX {
            return None;
        }
        let mut path = Vec::new();
        let mut v = t;
        while v != s {
            let (i, sg) = pred[v].expect("reached");
            path.push((i, sg));
            v = if sg > 0 { edges[i].tail } else { edges[i].head };
        }
        let room = path.iter().map(|&(i, sg)| if sg > 0 { edges[i].cap - flow[i] } else { flow[i] }).min();
        let theta = room.expect("non-empty path").min(d - sent);
        for &(i, sg) in &path {
            flow[i] += sg * theta;
        }
        sent += theta;
        cost += theta * dist[t];
    }
    Some(cost)
}

fn digraph(n: usize, arcs: &[(usize, usize)]) -> DiGraph<(), ()> {
    let mut g = DiGraph::new();
    let nodes: Vec<NodeIndex> = (0..n).map(|_| g.add_node(())).collect();
    for &(a, b) in arcs {
        g.add_edge(nodes[a], nodes[b], ());
    }
    g
}

pub fn has_cycle(n: usize, arcs: &[(usize, usize)]) -> bool {
    arcs.iter().any(|&(a, b)| a == b) || is_cyclic_directed(&digraph(n, arcs))
}

/// Component label per vertex: the smallest vertex of its SCC.
pub fn scc_labels(n: usize, arcs: &[(usize, usize)]) -> Vec<usize> {
    let mut label = vec![0; n];
    for comp in tarjan_scc(&digraph(n, arcs)) {
        let min = comp.iter().map(|x| x.index()).min().expect("non-empty");
        for x in comp {
            label[x.index()] = min;
        }
    }
    label
}

pub fn shortest_path(n: usize, arcs: &[(usize, usize, i64)], s: usize, t: usize) -> Option<i64> {
    let mut g: DiGraph<(), i64> = DiGraph::new();
    let nodes: Vec<NodeIndex> = (0..n).map(|_| g.add_node(())).collect();
    for &(a, b, w) in arcs {
        g.add_edge(nodes[a], nodes[b], w);
    }
    dijkstra(&g, nodes[s], Some(nodes[t]), |e| *e.weight()).get(&nodes[t]).copied()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fe(tail: usize, head: usize, cap: i64, cost: i64) -> FlowEdge {
        FlowEdge { tail, head, cap, cost }
    }

    /// Every integral flow vector within capacities, by brute force.
    fn brute_min_circulation(n: usize, edges: &[FlowEdge]) -> i64 {
        let mut best = 0;
        let mut x = vec![0i64; edges.len()];
        loop {
            let mut net = vec![0i64; n];
            for (e, &f) in edges.iter().zip(&x) {
                net[e.tail] -= f;
                net[e.head] += f;
            }
            if net.iter().all(|&v| v == 0) {
                best = best.min(edges.iter().zip(&x).map(|(e, f)| e.cost * f).sum());
            }
            let mut i = 0;
            loop {
                if i == x.len() {
                    return best;
                }
                if x[i] < edges[i].cap {
                    x[i] += 1;
                    break;
                }
                x[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn cancelling_matches_brute_force() {
        let mut seed = 7u64;
        let mut next = |m: u64| {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 33) % m
        };
        for _ in 0..200 {
            let n = 2 + next(3) as usize;
            let m = 1 + next(5) as usize;
            let edges: Vec<FlowEdge> = (0..m)
                .map(|_| fe(next(n as u64) as usize, next(n as u64) as usize, 1 + next(2) as i64, next(9) as i64 - 4))
                .collect();
            let mut cc = CycleCanceling::new(n);
            for &e in &edges {
                cc.add_edge(e);
            }
            assert_eq!(cc.optimize(), brute_min_circulation(n, &edges), "{edges:?}");
        }
    }

    #[test]
    fn ssp_on_two_routes() {
        let edges = [fe(0, 1, 1, 1), fe(1, 2, 1, 1), fe(0, 2, 1, 5)];
        assert_eq!(min_cost_flow(3, &edges, 0, 2, 1), Some(2));
        assert_eq!(min_cost_flow(3, &edges, 0, 2, 2), Some(7));
        assert_eq!(min_cost_flow(3, &edges, 0, 2, 3), None);
    }

    #[test]
    fn graph_baselines() {
        assert!(has_cycle(3, &[(0, 1), (1, 2), (2, 0)]));
        assert!(!has_cycle(3, &[(0, 1), (1, 2)]));
        assert!(has_cycle(1, &[(0, 0)]));
        assert_eq!(scc_labels(4, &[(0, 1), (1, 0), (2, 3)]), vec![0, 0, 2, 3]);
        assert_eq!(shortest_path(3, &[(0, 1, 2), (1, 2, 2), (0, 2, 5)], 0, 2), Some(4));
        assert_eq!(shortest_path(3, &[(0, 1, 2)], 0, 2), None);
    }
}
