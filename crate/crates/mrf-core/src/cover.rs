//! Static sparse neighborhood covers, rebuilt from scratch on change.
//!
//! Clusters come from ball merging: starting from one uncovered vertex, keep
//! absorbing radius-r balls that touch the current union until one more round
//! would less than double it. Clusters found in the same phase are disjoint,
//! which bounds how many clusters a vertex joins.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use crate::graph::{DynGraph, FlatForest, HostLink, Update, VertexId};

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Sorted vertex set; tree node `i` is `vertices[i]`.
    pub vertices: Vec<VertexId>,
    pub center: VertexId,
    /// Shortest-path tree from the center inside the cluster.
    pub tree: FlatForest,
    /// Tree nodes standing for real vertices (all of them in a static build).
    pub s: Vec<usize>,
}

impl Cluster {
    pub fn contains(&self, v: VertexId) -> bool {
        self.vertices.binary_search(&v).is_ok()
    }

    pub fn node_of(&self, v: VertexId) -> Option<usize> {
        self.vertices.binary_search(&v).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodCover {
    pub d: f64,
    pub gamma_cov: f64,
    /// Number of doubling levels, ceil(log2 n) + 1.
    pub k: usize,
    pub clusters: Vec<Cluster>,
    /// Cluster indices containing each vertex.
    pub membership: Vec<Vec<usize>>,
    /// Cluster changes caused by the last rebuild.
    pub recourse: usize,
}

#[derive(Clone, Copy, PartialEq)]
struct Item(f64, VertexId);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Dijkstra from `s` over undirected edges, stopping past `radius`; vertices
/// outside `allowed` are skipped. Returns distances and the tree edge into each
/// reached vertex.
pub(crate) fn dijkstra(
    g: &DynGraph,
    inc: &[Vec<usize>],
    s: VertexId,
    radius: f64,
    allowed: Option<&[bool]>,
) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = g.vertex_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut via = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[s] = 0.0;
    heap.push(Item(0.0, s));
    while let Some(Item(d, x)) = heap.pop() {
        if d > dist[x] {
            continue;
        }
        for &e in &inc[x] {
            let edge = g.edge(e);
            let y = edge.other(x);
            if allowed.is_some_and(|a| !a[y]) {
                continue;
            }
            let nd = d + edge.length;
            if nd <= radius && nd < dist[y] {
                dist[y] = nd;
                via[y] = Some(e);
                heap.push(Item(nd, y));
            }
        }
    }
    (dist, via)
}

fn levels(n: usize) -> usize {
    (n.max(2) as f64).log2().ceil() as usize + 1
}

/// The stretch parameter used for `n` vertices: 4(k+1).
pub fn gamma_for(n: usize) -> f64 {
    4.0 * (levels(n) + 1) as f64
}

/// A cluster with a shortest-path tree from `center` inside `vertices` (sorted).
pub fn tree_for(g: &DynGraph, inc: &[Vec<usize>], vertices: Vec<VertexId>, center: VertexId) -> Cluster {
    let mut allowed = vec![false; g.vertex_count()];
    for &v in &vertices {
        allowed[v] = true;
    }
    let (_, via) = dijkstra(g, inc, center, f64::INFINITY, Some(&allowed));
    let mut tree = FlatForest::new();
    for &v in &vertices {
        tree.add_node(v);
    }
    let node = |v: VertexId| vertices.binary_search(&v).expect("cluster vertex");
    for (i, &v) in vertices.iter().enumerate() {
        if let Some(e) = via[v] {
            let edge = g.edge(e);
            let p = edge.other(v);
            tree.set_parent(i, node(p), HostLink::Edge(e, edge.tail == v));
        }
    }
    let s = (0..vertices.len()).collect();
    Cluster { vertices, center, tree, s }
}

/// Builds a cover at scale `d`: every radius-d/γ ball lies in a cluster.
pub fn build_cover(g: &DynGraph, d: f64) -> NeighborhoodCover {
    let n = g.vertex_count();
    let k = levels(n);
    let gamma_cov = gamma_for(n);
    let r = d / gamma_cov;
    let inc = g.incidence();
    let mut clusters = Vec::new();

    // components small enough for the scale become a single cluster
    let comp = g.components();
    let mut big = vec![false; n];
    let mut comp_size = vec![0usize; n];
    let mut comp_len = vec![0.0f64; n];
    for v in 0..n {
        comp_size[comp[v]] += 1;
    }
    for (_, e) in g.edges() {
        let c = comp[e.tail];
        comp_len[c] = comp_len[c].max(e.length);
    }
    for c in 0..n {
        if comp_size[c] > 0 && (comp_size[c] as f64) * comp_len[c] > d {
            big[c] = true;
        }
    }
    for c in 0..n {
        if comp_size[c] > 0 && !big[c] {
            let vs: Vec<VertexId> = (0..n).filter(|&v| comp[v] == c).collect();
            let center = vs[0];
            clusters.push(tree_for(g, &inc, vs, center));
        }
    }

    let balls: Vec<Vec<VertexId>> = (0..n)
        .map(|v| {
            if !big[comp[v]] {
                return Vec::new();
            }
            let (dist, _) = dijkstra(g, &inc, v, r, None);
            (0..n).filter(|&u| dist[u] <= r).collect()
        })
        .collect();
    // balls touching each vertex
    let mut touching: Vec<Vec<VertexId>> = vec![Vec::new(); n];
    for v in 0..n {
        for &u in &balls[v] {
            touching[u].push(v);
        }
    }

    let mut uncovered: BTreeSet<VertexId> = (0..n).filter(|&v| big[comp[v]]).collect();
    while !uncovered.is_empty() {
        let mut live = uncovered.clone();
        while let Some(&v) = live.iter().next() {
            // kernel Y and the union of its balls
            let mut kernel: BTreeSet<VertexId> = BTreeSet::from([v]);
            let mut union: BTreeSet<VertexId> = balls[v].iter().copied().collect();
            let grown = loop {
                let z: BTreeSet<VertexId> =
                    union.iter().flat_map(|&u| touching[u].iter().copied()).filter(|b| live.contains(b)).collect();
                let z_union: BTreeSet<VertexId> = z.iter().flat_map(|&b| balls[b].iter().copied()).collect();
                if z_union.len() <= 2 * union.len() {
                    break z;
                }
                kernel = z;
                union = z_union;
            };
            for b in &grown {
                live.remove(b);
            }
            for b in &kernel {
                uncovered.remove(b);
            }
            clusters.push(tree_for(g, &inc, union.into_iter().collect(), v));
        }
    }

    let mut membership = vec![Vec::new(); n];
    for (i, c) in clusters.iter().enumerate() {
        for &v in &c.vertices {
            membership[v].push(i);
        }
    }
    NeighborhoodCover { d, gamma_cov, k, clusters, membership, recourse: 0 }
}

/// Measured parameters of a cover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverStats {
    pub max_membership: usize,
    /// Largest tree distance between two S nodes of one cluster.
    pub max_tree_diameter: f64,
}

impl NeighborhoodCover {
    pub fn stats(&self, g: &DynGraph) -> CoverStats {
        let max_membership = self.membership.iter().map(Vec::len).max().unwrap_or(0);
        let mut max_tree_diameter: f64 = 0.0;
        for c in &self.clusters {
            // depth from the center bounds half the diameter; compute it exactly
            let depth = tree_depths(&c.tree, g);
            let mut far = 0;
            for x in 0..depth.len() {
                if depth[x] > depth[far] {
                    far = x;
                }
            }
            let from_far = tree_distances(&c.tree, g, far);
            max_tree_diameter = max_tree_diameter.max(c.s.iter().map(|&x| from_far[x]).fold(0.0, f64::max));
        }
        CoverStats { max_membership, max_tree_diameter }
    }

    /// Rebuilds against the updated graph when the batch is non-empty.
    pub fn rebuild_on_update(self, g: &DynGraph, batch: &[Update]) -> NeighborhoodCover {
        if batch.is_empty() {
            return self;
        }
        let mut fresh = build_cover(g, self.d);
        let old: BTreeSet<&Vec<VertexId>> = self.clusters.iter().map(|c| &c.vertices).collect();
        let new: BTreeSet<&Vec<VertexId>> = fresh.clusters.iter().map(|c| &c.vertices).collect();
        let recourse = old.symmetric_difference(&new).count();
        fresh.recourse = recourse;
        fresh
    }
}

fn tree_adj(tree: &FlatForest, g: &DynGraph) -> Vec<Vec<(usize, f64)>> {
    let mut adj = vec![Vec::new(); tree.len()];
    for x in 0..tree.len() {
        if let Some(p) = tree.parent[x] {
            let len = match tree.link[x] {
                HostLink::Edge(e, _) => g.edge(e).length,
                HostLink::Collapsed => 0.0,
            };
            adj[x].push((p, len));
            adj[p].push((x, len));
        }
    }
    adj
}

fn tree_distances(tree: &FlatForest, g: &DynGraph, s: usize) -> Vec<f64> {
    let adj = tree_adj(tree, g);
    let mut dist = vec![f64::INFINITY; tree.len()];
    dist[s] = 0.0;
    let mut stack = vec![s];
    while let Some(x) = stack.pop() {
        for &(y, l) in &adj[x] {
            if dist[y].is_infinite() {
                dist[y] = dist[x] + l;
                stack.push(y);
            }
        }
    }
    dist
}

fn tree_depths(tree: &FlatForest, g: &DynGraph) -> Vec<f64> {
    let root = (0..tree.len()).find(|&x| tree.parent[x].is_none()).unwrap_or(0);
    tree_distances(tree, g, root)
}
