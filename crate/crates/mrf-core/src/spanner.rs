//! Layered incremental spanner with explicit embeddings.
//!
//! An inserted edge either finds a short path in some layer's low-congestion
//! subgraph Ĥ_i and is embedded into it, or joins the first layer whose
//! degree condition admits it. Hop distances are exact (truncated BFS), so
//! each Ĥ_i keeps girth above the hop bound. Deletions and splits are applied
//! in place; a thin wrapper rebuilds from scratch every √n of them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::graph::{DynGraph, EdgeId, VertexId};

#[derive(Debug, Error, PartialEq)]
pub enum SpannerError {
    #[error("master degree of {0} would exceed the bound")]
    MasterDegreeExceeded(VertexId),
    #[error("unknown edge {0}")]
    UnknownEdge(EdgeId),
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
}

/// Result of an insertion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Outcome {
    /// Embedded into Ĥ_layer along a path of this many hops.
    Embedded { layer: usize, hops: usize },
    /// Added to H_layer.
    Admitted { layer: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpEdge {
    pub u: VertexId,
    pub v: VertexId,
    pub layer: Option<usize>,
    /// Signed spanner edges from u to v; `None` for spanner edges.
    pub embed: Option<Vec<(EdgeId, f64)>>,
    /// Layer whose congestion counters the embedding charged.
    pub charged: Option<usize>,
}

#[derive(Debug, Clone, Default)]
struct Layer {
    h: BTreeSet<EdgeId>,
    hat: BTreeSet<EdgeId>,
    /// Ĥ adjacency per vertex.
    adj: Vec<BTreeSet<EdgeId>>,
    /// H degree per vertex.
    deg: Vec<usize>,
    /// H degree summed per master.
    master_deg: Vec<usize>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SpannerStats {
    /// Edges moved while simulating splits (smaller side per layer).
    pub split_moves: usize,
    /// Insertions into and removals from H.
    pub recourse: usize,
    pub evictions: usize,
    pub deletions: usize,
    pub splits: usize,
}

#[derive(Debug, Clone)]
pub struct LayeredSpanner {
    /// Vertex count the thresholds are computed for.
    pub n0: usize,
    pub delta: usize,
    pub hop_bound: usize,
    layers: Vec<Layer>,
    pub master: Vec<VertexId>,
    /// Degree of each master ignoring deletions and splits.
    master_seen: Vec<usize>,
    pub edges: BTreeMap<EdgeId, SpEdge>,
    /// Number of live embeddings through each spanner edge.
    pub econg: BTreeMap<EdgeId, usize>,
    pub stats: SpannerStats,
}

fn log2_2n(n: usize) -> f64 {
    (2.0 * n.max(1) as f64).log2()
}

impl LayeredSpanner {
    pub fn new(n: usize, delta: usize) -> Self {
        let k = (10.0 * (n.max(2) as f64).log2()).ceil() as usize;
        let hop_bound = (2.0 * log2_2n(n)).floor() as usize;
        let mut s = LayeredSpanner {
            n0: n,
            delta: delta.max(1),
            hop_bound,
            layers: vec![Layer::default(); k + 1],
            master: Vec::new(),
            master_seen: Vec::new(),
            edges: BTreeMap::new(),
            econg: BTreeMap::new(),
            stats: SpannerStats::default(),
        };
        for _ in 0..n {
            s.push_vertex(None);
        }
        s
    }

    fn push_vertex(&mut self, master: Option<VertexId>) -> VertexId {
        let v = self.master.len();
        self.master.push(master.unwrap_or(v));
        self.master_seen.push(0);
        for l in &mut self.layers {
            l.adj.push(BTreeSet::new());
            l.deg.push(0);
            l.master_deg.push(0);
        }
        v
    }

    pub fn vertex_count(&self) -> usize {
        self.master.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Congestion at which an edge leaves Ĥ_i.
    pub fn eviction_threshold(&self, i: usize) -> f64 {
        2.0 * self.delta as f64 * log2_2n(self.n0) / 2f64.powi(i as i32)
    }

    pub fn degree_cap(&self, i: usize) -> usize {
        32usize.saturating_mul(1usize << i.min(60))
    }

    /// Shortest path in Ĥ_i from u to v within the hop bound.
    fn find_path(&self, i: usize, u: VertexId, v: VertexId) -> Option<Vec<(EdgeId, f64)>> {
        if u == v {
            return Some(Vec::new());
        }
        let layer = &self.layers[i];
        let mut prev: BTreeMap<VertexId, (VertexId, EdgeId)> = BTreeMap::new();
        let mut dist: BTreeMap<VertexId, usize> = BTreeMap::from([(u, 0)]);
        let mut queue = VecDeque::from([u]);
        while let Some(x) = queue.pop_front() {
            let d = dist[&x];
            if d == self.hop_bound {
                continue;
            }
            for &e in &layer.adj[x] {
                let ed = &self.edges[&e];
                let y = if ed.u == x { ed.v } else { ed.u };
                if dist.contains_key(&y) {
                    continue;
                }
                dist.insert(y, d + 1);
                prev.insert(y, (x, e));
                if y == v {
                    let mut path = Vec::new();
                    let mut z = v;
                    while z != u {
                        let (p, e) = prev[&z];
                        let ed = &self.edges[&e];
                        path.push((e, if ed.u == p { 1.0 } else { -1.0 }));
                        z = p;
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(y);
            }
        }
        None
    }

    fn check_vertex(&self, v: VertexId) -> Result<(), SpannerError> {
        if v < self.vertex_count() {
            Ok(())
        } else {
            Err(SpannerError::UnknownVertex(v))
        }
    }

    pub fn insert(&mut self, e: EdgeId, u: VertexId, v: VertexId) -> Result<Outcome, SpannerError> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        for x in [u, v] {
            let extra = if u == v { 2 } else { 1 };
            if self.master_seen[self.master[x]] + extra > self.delta {
                return Err(SpannerError::MasterDegreeExceeded(x));
            }
        }
        self.master_seen[self.master[u]] += 1;
        self.master_seen[self.master[v]] += 1;
        self.edges.insert(e, SpEdge { u, v, layer: None, embed: None, charged: None });
        let last = self.layers.len() - 1;
        for i in 0..=last {
            if let Some(path) = self.find_path(i, u, v) {
                let hops = path.len();
                let threshold = self.eviction_threshold(i);
                for &(f, _) in &path {
                    let c = self.econg.entry(f).or_insert(0);
                    *c += 1;
                    if *c as f64 >= threshold && self.layers[i].hat.remove(&f) {
                        let fe = &self.edges[&f];
                        self.layers[i].adj[fe.u].remove(&f);
                        self.layers[i].adj[fe.v].remove(&f);
                        self.stats.evictions += 1;
                    }
                }
                let se = self.edges.get_mut(&e).expect("just inserted");
                se.embed = Some(path);
                se.charged = Some(i);
                return Ok(Outcome::Embedded { layer: i, hops });
            }
            let cap = self.degree_cap(i);
            let l = &self.layers[i];
            if i == last || (l.master_deg[self.master[u]] <= cap && l.master_deg[self.master[v]] <= cap) {
                let l = &mut self.layers[i];
                l.h.insert(e);
                l.hat.insert(e);
                l.adj[u].insert(e);
                l.adj[v].insert(e);
                l.deg[u] += 1;
                l.deg[v] += 1;
                l.master_deg[self.master[u]] += 1;
                l.master_deg[self.master[v]] += 1;
                self.edges.get_mut(&e).expect("just inserted").layer = Some(i);
                self.stats.recourse += 1;
                return Ok(Outcome::Admitted { layer: i });
            }
        }
        unreachable!("the last layer always admits")
    }

    pub fn delete(&mut self, e: EdgeId) -> Result<(), SpannerError> {
        let se = self.edges.remove(&e).ok_or(SpannerError::UnknownEdge(e))?;
        if let Some(i) = se.layer {
            let l = &mut self.layers[i];
            l.h.remove(&e);
            if l.hat.remove(&e) {
                l.adj[se.u].remove(&e);
                l.adj[se.v].remove(&e);
            }
            l.deg[se.u] -= 1;
            l.deg[se.v] -= 1;
            l.master_deg[self.master[se.u]] -= 1;
            l.master_deg[self.master[se.v]] -= 1;
            self.stats.recourse += 1;
        }
        if let Some(path) = &se.embed {
            for &(f, _) in path {
                if let Some(c) = self.econg.get_mut(&f) {
                    *c -= 1;
                }
            }
        }
        self.econg.remove(&e);
        self.stats.deletions += 1;
        Ok(())
    }

    /// Splits `v`: the edges in `moved` get the new vertex as endpoint.
    pub fn split(&mut self, v: VertexId, moved: &[EdgeId]) -> Result<VertexId, SpannerError> {
        self.check_vertex(v)?;
        let moved: BTreeSet<EdgeId> = moved.iter().copied().collect();
        for &e in &moved {
            let se = self.edges.get(&e).ok_or(SpannerError::UnknownEdge(e))?;
            if se.u != v && se.v != v {
                return Err(SpannerError::UnknownEdge(e));
            }
        }
        let w = self.push_vertex(Some(self.master[v]));
        for i in 0..self.layers.len() {
            let here: Vec<EdgeId> = self.layers[i]
                .h
                .iter()
                .copied()
                .filter(|e| {
                    let se = &self.edges[e];
                    se.u == v || se.v == v
                })
                .collect();
            let m = here.iter().filter(|e| moved.contains(e)).count();
            // the smaller side is re-attached; which side keeps the name is free
            self.stats.split_moves += m.min(here.len() - m);
        }
        for &e in &moved {
            let se = self.edges.get_mut(&e).expect("checked");
            let (old_u, old_v) = (se.u, se.v);
            if se.u == v {
                se.u = w;
            }
            if se.v == v {
                se.v = w;
            }
            if let Some(i) = se.layer {
                let l = &mut self.layers[i];
                let ends = [(old_u, se.u), (old_v, se.v)];
                for (a, b) in ends {
                    if a != b {
                        l.deg[a] -= 1;
                        l.deg[b] += 1;
                        if l.hat.contains(&e) {
                            l.adj[a].remove(&e);
                            l.adj[b].insert(e);
                        }
                    }
                }
            }
        }
        self.stats.splits += 1;
        Ok(w)
    }

    pub fn in_h(&self, e: EdgeId) -> bool {
        self.edges.get(&e).is_some_and(|s| s.layer.is_some())
    }

    pub fn h_edges(&self) -> BTreeSet<EdgeId> {
        self.layers.iter().flat_map(|l| l.h.iter().copied()).collect()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.h.len()).collect()
    }

    pub fn hat_edges(&self, i: usize) -> &BTreeSet<EdgeId> {
        &self.layers[i].hat
    }

    /// True when the embedding of `e` is still a walk from its endpoints
    /// through live spanner edges.
    pub fn embedding_valid(&self, e: EdgeId) -> bool {
        let Some(se) = self.edges.get(&e) else { return false };
        let Some(path) = &se.embed else { return se.layer.is_some() };
        let mut at = se.u;
        for &(f, s) in path {
            let Some(fe) = self.edges.get(&f) else { return false };
            if fe.layer.is_none() {
                return false;
            }
            let (a, b) = if s > 0.0 { (fe.u, fe.v) } else { (fe.v, fe.u) };
            if a != at {
                return false;
            }
            at = b;
        }
        at == se.v
    }

    /// Sum of embedding congestion over H edges at each vertex.
    pub fn vertex_congestion(&self) -> Vec<usize> {
        let mut out = vec![0; self.vertex_count()];
        for (&e, &c) in &self.econg {
            if let Some(se) = self.edges.get(&e) {
                out[se.u] += c;
                if se.v != se.u {
                    out[se.v] += c;
                }
            }
        }
        out
    }

    /// Length of the shortest cycle in Ĥ_i if it is at most `limit` edges.
    pub fn short_cycle(&self, i: usize, limit: usize) -> Option<usize> {
        let l = &self.layers[i];
        let mut best: Option<usize> = None;
        for s in 0..self.vertex_count() {
            if l.adj[s].is_empty() {
                continue;
            }
            // BFS tree from s; a non-tree edge closes a cycle through s's tree
            let mut dist = BTreeMap::from([(s, 0usize)]);
            let mut via: BTreeMap<VertexId, EdgeId> = BTreeMap::new();
            let mut queue = VecDeque::from([s]);
            while let Some(x) = queue.pop_front() {
                for &e in &l.adj[x] {
                    if via.get(&x) == Some(&e) {
                        continue;
                    }
                    let ed = &self.edges[&e];
                    if ed.u == ed.v {
                        best = Some(1);
                        continue;
                    }
                    let y = if ed.u == x { ed.v } else { ed.u };
                    match dist.get(&y) {
                        Some(&dy) => {
                            let len = dist[&x] + dy + 1;
                            if best.is_none_or(|b| len < b) {
                                best = Some(len);
                            }
                        }
                        None => {
                            dist.insert(y, dist[&x] + 1);
                            via.insert(y, e);
                            queue.push_back(y);
                        }
                    }
                }
            }
        }
        best.filter(|&b| b <= limit)
    }
}

/// Per-edge stretch of the spanner against the graph's own lengths.
#[derive(Debug, Clone, Serialize)]
pub struct StretchReport {
    pub max_stretch: f64,
    pub max_hops: usize,
    pub per_edge: Vec<(EdgeId, f64)>,
}

/// dist_H(u,v)/ℓ(e) for every live edge, with H given by `in_h`.
pub fn stretch_certificate(g: &DynGraph, in_h: &dyn Fn(EdgeId) -> bool) -> StretchReport {
    let n = g.vertex_count();
    let mut adj: Vec<Vec<(VertexId, f64)>> = vec![Vec::new(); n];
    let mut hop_adj: Vec<Vec<VertexId>> = vec![Vec::new(); n];
    for (e, ed) in g.edges() {
        if in_h(e) {
            adj[ed.tail].push((ed.head, ed.length));
            adj[ed.head].push((ed.tail, ed.length));
            hop_adj[ed.tail].push(ed.head);
            hop_adj[ed.head].push(ed.tail);
        }
    }
    let mut per_edge = Vec::new();
    let mut max_stretch: f64 = 0.0;
    let mut max_hops = 0;
    let mut cache: BTreeMap<VertexId, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    for (e, ed) in g.edges() {
        let (dist, hops) = cache.entry(ed.tail).or_insert_with(|| {
            let d = dijkstra(&adj, ed.tail);
            let h = bfs(&hop_adj, ed.tail);
            (d, h)
        });
        let s = if ed.tail == ed.head { 1.0 } else { dist[ed.head] / ed.length };
        max_stretch = max_stretch.max(s);
        if hops[ed.head] != usize::MAX {
            max_hops = max_hops.max(hops[ed.head]);
        }
        per_edge.push((e, s));
    }
    StretchReport { max_stretch, max_hops, per_edge }
}

fn dijkstra(adj: &[Vec<(VertexId, f64)>], s: VertexId) -> Vec<f64> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[s] = 0.0;
    // dense selection is enough at this scale
    for _ in 0..n {
        let Some(x) = (0..n).filter(|&x| !done[x] && dist[x].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
        else {
            break;
        };
        done[x] = true;
        for &(y, l) in &adj[x] {
            if dist[x] + l < dist[y] {
                dist[y] = dist[x] + l;
            }
        }
    }
    dist
}

fn bfs(adj: &[Vec<VertexId>], s: VertexId) -> Vec<usize> {
    let mut d = vec![usize::MAX; adj.len()];
    d[s] = 0;
    let mut q = VecDeque::from([s]);
    while let Some(x) = q.pop_front() {
        for &y in &adj[x] {
            if d[y] == usize::MAX {
                d[y] = d[x] + 1;
                q.push_back(y);
            }
        }
    }
    d
}

/// Fully dynamic stand-in: the layered spanner plus a rebuild on the live
/// graph after every ceil(√n) deletions or splits.
#[derive(Debug, Clone)]
pub struct DynamicSpanner {
    pub inner: LayeredSpanner,
    pub delta: usize,
    pub rebuild_every: usize,
    since_rebuild: usize,
    pub rebuilds: usize,
    /// H changes caused by rebuilds.
    pub rebuild_recourse: usize,
}

impl DynamicSpanner {
    pub fn new(n: usize, delta: usize) -> Self {
        DynamicSpanner {
            inner: LayeredSpanner::new(n, delta),
            delta,
            rebuild_every: (n.max(1) as f64).sqrt().ceil() as usize,
            since_rebuild: 0,
            rebuilds: 0,
            rebuild_recourse: 0,
        }
    }

    /// Builds over every live edge of `g`, in id order.
    pub fn from_graph(g: &DynGraph, delta: usize) -> Result<Self, SpannerError> {
        let mut s = DynamicSpanner::new(g.vertex_count(), delta);
        for (e, ed) in g.edges() {
            s.inner.insert(e, ed.tail, ed.head)?;
        }
        Ok(s)
    }

    pub fn insert(&mut self, e: EdgeId, u: VertexId, v: VertexId) -> Result<Outcome, SpannerError> {
        self.inner.insert(e, u, v)
    }

    pub fn delete(&mut self, e: EdgeId) -> Result<bool, SpannerError> {
        self.inner.delete(e)?;
        self.tick()
    }

    pub fn split(&mut self, v: VertexId, moved: &[EdgeId]) -> Result<(VertexId, bool), SpannerError> {
        let w = self.inner.split(v, moved)?;
        Ok((w, self.tick()?))
    }

    fn tick(&mut self) -> Result<bool, SpannerError> {
        self.since_rebuild += 1;
        if self.since_rebuild < self.rebuild_every {
            return Ok(false);
        }
        self.rebuild()?;
        Ok(true)
    }

    /// Re-runs the construction on the live edges with fresh masters.
    pub fn rebuild(&mut self) -> Result<(), SpannerError> {
        let before = self.inner.h_edges();
        let live: Vec<(EdgeId, VertexId, VertexId)> = self.inner.edges.iter().map(|(&e, s)| (e, s.u, s.v)).collect();
        let n = self.inner.vertex_count();
        let mut degree = vec![0usize; n];
        for &(_, u, v) in &live {
            degree[u] += 1;
            degree[v] += 1;
        }
        let delta = self.delta.max(degree.into_iter().max().unwrap_or(0));
        let mut fresh = LayeredSpanner::new(n, delta);
        for (e, u, v) in live {
            fresh.insert(e, u, v)?;
        }
        let after = fresh.h_edges();
        self.rebuild_recourse += before.symmetric_difference(&after).count();
        fresh.stats.split_moves = self.inner.stats.split_moves;
        fresh.stats.deletions = self.inner.stats.deletions;
        fresh.stats.splits = self.inner.stats.splits;
        self.inner = fresh;
        self.since_rebuild = 0;
        self.rebuilds += 1;
        Ok(())
    }

    /// Spanner membership and embeddings indexed by edge id.
    pub fn embedding(&self, slots: usize) -> (Vec<bool>, Vec<Option<Vec<(EdgeId, f64)>>>) {
        let mut in_h = vec![false; slots];
        let mut embed = vec![None; slots];
        for (&e, s) in &self.inner.edges {
            if e < slots {
                in_h[e] = s.layer.is_some();
                embed[e] = s.embed.clone();
            }
        }
        (in_h, embed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_edge_goes_to_layer_zero() {
        let mut s = LayeredSpanner::new(4, 4);
        assert_eq!(s.insert(0, 0, 1), Ok(Outcome::Admitted { layer: 0 }));
    }

    #[test]
    fn parallel_edge_is_embedded_in_one_hop() {
        let mut s = LayeredSpanner::new(4, 4);
        s.insert(0, 0, 1).unwrap();
        assert_eq!(s.insert(1, 1, 0), Ok(Outcome::Embedded { layer: 0, hops: 1 }));
        assert_eq!(s.edges[&1].embed, Some(vec![(0, -1.0)]));
        assert!(s.embedding_valid(1));
    }

    #[test]
    fn master_degree_enforced() {
        let mut s = LayeredSpanner::new(3, 1);
        s.insert(0, 0, 1).unwrap();
        assert_eq!(s.insert(1, 0, 2), Err(SpannerError::MasterDegreeExceeded(0)));
    }

    #[test]
    fn deleting_a_spanner_edge_breaks_its_users() {
        let mut s = LayeredSpanner::new(4, 4);
        s.insert(0, 0, 1).unwrap();
        s.insert(1, 0, 1).unwrap();
        s.delete(0).unwrap();
        assert!(!s.in_h(0));
        assert!(!s.embedding_valid(1));
        assert_eq!(s.delete(0), Err(SpannerError::UnknownEdge(0)));
    }

    #[test]
    fn split_moving_nothing_only_adds_a_vertex() {
        let mut s = LayeredSpanner::new(3, 4);
        s.insert(0, 0, 1).unwrap();
        let before = s.h_edges();
        let w = s.split(0, &[]).unwrap();
        assert_eq!(w, 3);
        assert_eq!(s.h_edges(), before);
        assert_eq!(s.stats.split_moves, 0);
        assert_eq!(s.master[w], 0);
    }
}
