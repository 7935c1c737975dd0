//! Hierarchical routing graphs over covers at geometric scales, their
//! abstraction, monotone-cycle decomposition and the tree collection.
//!
//! Node layout of H: the layer copies come first (copy of `v` in layer `i`
//! is `(i-1)·n + v`), followed by the nodes of the routing forests level by
//! level. H is stored as a `DynGraph` whose forest edges keep the orientation
//! of the host edge they came from.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cover::{build_cover, gamma_for, Cluster};
use crate::graph::{DynGraph, Edge, EdgeId, FlatForest, HostLink, VertexId};
use crate::oracle::{tree_cycle_min_ratio, CycleAnswer, OffEdge, OracleError, RoutingTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HrgError {
    #[error("gamma_diam^kappa = {have} is below n^2 L = {need}")]
    ParameterInfeasible { have: f64, need: f64 },
    #[error("not a routing circulation: {0}")]
    NotARoutingCirculation(String),
    #[error("tree collection needs {needed} trees, budget is {cap}")]
    CollectionBudgetExceeded { needed: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrgParams {
    pub kappa: usize,
    /// Overrides the default diameter growth factor.
    pub gamma_diam: Option<f64>,
    /// Overrides the default stretch (the cover's γ).
    pub gamma_hrg: Option<f64>,
}

impl Default for HrgParams {
    fn default() -> Self {
        HrgParams { kappa: 3, gamma_diam: None, gamma_hrg: None }
    }
}

/// What an H edge is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HEdgeKind {
    /// Routing-forest edge at a level, image of a host edge.
    Forest { level: usize, host: EdgeId },
    /// Out-edge from a layer copy to a forest node at the same level.
    Out { level: usize },
    /// In-edge from a forest root at `level - 1` to a layer copy at `level`.
    In { level: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hrg {
    pub n: usize,
    pub kappa: usize,
    pub gamma_hrg: f64,
    pub gamma_diam: f64,
    /// H itself: nodes and edges with lengths and gradients.
    pub h: DynGraph,
    /// Host vertex of each H node.
    pub node_host: Vec<VertexId>,
    /// Layer of each H node; forest nodes carry their forest level.
    pub node_level: Vec<usize>,
    /// True for forest nodes.
    pub is_forest_node: Vec<bool>,
    pub kinds: Vec<HEdgeKind>,
    /// `forests[i-1]` are the clusters of level i, for i = 1..kappa-1.
    pub forests: Vec<Vec<Cluster>>,
    /// First H node of each cluster tree, indexed like `forests`.
    pub cluster_base: Vec<Vec<usize>>,
    /// Out-edges of each layer copy, ascending id.
    pub out_edges: Vec<Vec<EdgeId>>,
    /// The in-edge of each cluster tree.
    pub in_edge: Vec<Vec<EdgeId>>,
    /// Parent node and H edge of each forest node inside its cluster tree.
    forest_up: Vec<Option<(usize, EdgeId)>>,
}

/// Length of an out-edge at level i and of an in-edge into level i+1.
pub fn link_length(gamma_hrg: f64, gamma_diam: f64, level: usize) -> f64 {
    gamma_hrg * gamma_diam.powi(level as i32)
}

fn max_length(g: &DynGraph) -> f64 {
    g.edges().map(|(_, e)| e.length).fold(1.0, f64::max)
}

/// Default γ_diam: at least 8γ_cov, (n²L)^{1/κ}, and large enough that the
/// top forest holds whole components.
pub fn default_gamma_diam(n: usize, l: f64, kappa: usize, gamma_cov: f64) -> f64 {
    let n = n.max(1) as f64;
    let a = 8.0 * gamma_cov;
    let b = (n * n * l).powf(1.0 / kappa as f64).ceil();
    let c = (n * l).powf(1.0 / (kappa as f64 - 1.0)).ceil();
    a.max(b).max(c)
}

/// Builds the HRG from covers with D_i = γ_diam^i.
pub fn build_hrg(g: &DynGraph, params: HrgParams) -> Result<Hrg, HrgError> {
    assert!(params.kappa >= 3, "kappa must be at least 3");
    let n = g.vertex_count();
    let l = max_length(g);
    let gamma_cov = gamma_for(n);
    let gamma_diam = params.gamma_diam.unwrap_or_else(|| default_gamma_diam(n, l, params.kappa, gamma_cov));
    let need = (n.max(1) as f64).powi(2) * l;
    let have = gamma_diam.powi(params.kappa as i32);
    if have < need {
        return Err(HrgError::ParameterInfeasible { have, need });
    }
    let gamma_hrg = params.gamma_hrg.unwrap_or(gamma_cov);
    let forests = (1..params.kappa)
        .map(|i| build_cover(g, gamma_diam.powi(i as i32)).clusters)
        .collect();
    Ok(Hrg::from_clusters(g, params.kappa, gamma_hrg, gamma_diam, forests))
}

impl Hrg {
    /// Assembles H from given clusters per level; nothing is verified here.
    pub fn from_clusters(
        g: &DynGraph,
        kappa: usize,
        gamma_hrg: f64,
        gamma_diam: f64,
        forests: Vec<Vec<Cluster>>,
    ) -> Hrg {
        assert_eq!(forests.len(), kappa - 1);
        let n = g.vertex_count();
        let mut h = DynGraph::with_vertices(n * kappa);
        let mut node_host: Vec<VertexId> = (0..n * kappa).map(|x| x % n.max(1)).collect();
        let mut node_level: Vec<usize> = (0..n * kappa).map(|x| x / n.max(1) + 1).collect();
        let mut is_forest_node = vec![false; n * kappa];
        let mut kinds = Vec::new();
        let mut cluster_base = Vec::new();
        let mut out_edges = vec![Vec::new(); n * kappa];
        let mut in_edge = Vec::new();
        let mut forest_up = vec![None; n * kappa];
        for (li, clusters) in forests.iter().enumerate() {
            let level = li + 1;
            let mut bases = Vec::new();
            for c in clusters {
                let base = h.vertex_count();
                bases.push(base);
                for &v in &c.vertices {
                    h.add_vertex();
                    node_host.push(v);
                    node_level.push(level);
                    is_forest_node.push(true);
                    forest_up.push(None);
                }
                for x in 0..c.tree.len() {
                    if let (Some(p), HostLink::Edge(e, _)) = (c.tree.parent[x], c.tree.link[x]) {
                        let ge = g.edge(e);
                        // keep the host orientation
                        let (t, hd) = if c.vertices[x] == ge.tail && c.vertices[p] == ge.head {
                            (base + x, base + p)
                        } else {
                            (base + p, base + x)
                        };
                        let mut he = Edge::new(t, hd);
                        he.length = ge.length;
                        he.gradient = ge.gradient;
                        let id = h.add_edge(he).expect("fresh nodes");
                        kinds.push(HEdgeKind::Forest { level, host: e });
                        forest_up[base + x] = Some((base + p, id));
                    }
                }
            }
            for (ci, c) in clusters.iter().enumerate() {
                for (x, &v) in c.vertices.iter().enumerate() {
                    if c.s.contains(&x) {
                        let copy = (level - 1) * n + v;
                        let mut he = Edge::new(copy, bases[ci] + x);
                        he.length = link_length(gamma_hrg, gamma_diam, level);
                        let id = h.add_edge(he).expect("fresh nodes");
                        kinds.push(HEdgeKind::Out { level });
                        out_edges[copy].push(id);
                    }
                }
            }
            let mut ins = Vec::new();
            for (ci, c) in clusters.iter().enumerate() {
                let root = c.node_of(c.center).expect("center in cluster");
                let mut he = Edge::new(bases[ci] + root, level * n + c.center);
                he.length = link_length(gamma_hrg, gamma_diam, level);
                let id = h.add_edge(he).expect("fresh nodes");
                kinds.push(HEdgeKind::In { level: level + 1 });
                ins.push(id);
            }
            cluster_base.push(bases);
            in_edge.push(ins);
        }
        Hrg {
            n,
            kappa,
            gamma_hrg,
            gamma_diam,
            h,
            node_host,
            node_level,
            is_forest_node,
            kinds,
            forests,
            cluster_base,
            out_edges,
            in_edge,
            forest_up,
        }
    }

    pub fn copy(&self, level: usize, v: VertexId) -> usize {
        (level - 1) * self.n + v
    }

    /// Cluster (level, index) holding a forest node.
    pub fn cluster_of(&self, node: usize) -> (usize, usize) {
        let level = self.node_level[node];
        let bases = &self.cluster_base[level - 1];
        let ci = bases.partition_point(|&b| b <= node) - 1;
        (level, ci)
    }

    fn cluster_root(&self, level: usize, ci: usize) -> usize {
        let c = &self.forests[level - 1][ci];
        self.cluster_base[level - 1][ci] + c.node_of(c.center).expect("center")
    }

    /// Parent of a forest node inside its cluster tree, with the H edge.
    fn forest_parent(&self, node: usize) -> Option<(usize, EdgeId)> {
        self.forest_up[node]
    }

    pub fn max_out_degree(&self) -> usize {
        self.out_edges.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Measured values for each property of the definition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HrgReport {
    pub max_congestion: usize,
    pub forests_flat: bool,
    /// Largest diam(S_i ∩ T) / (γ_HRG γ_diam^i).
    pub max_diameter_ratio: f64,
    pub linking_consistent: bool,
    pub max_out_degree: usize,
    pub covering: bool,
    /// Every top-level tree is a whole component.
    pub top_components: bool,
}

impl HrgReport {
    pub fn holds(&self, gamma_hrg: f64) -> bool {
        self.max_congestion as f64 <= gamma_hrg
            && self.forests_flat
            && self.max_diameter_ratio <= 1.0 + 1e-12
            && self.linking_consistent
            && self.max_out_degree as f64 <= gamma_hrg
            && self.covering
    }
}

impl Hrg {
    /// Checks the definition's properties against `g` with exact distances.
    pub fn check(&self, g: &DynGraph) -> HrgReport {
        let n = self.n;
        let inc = g.incidence();
        let mut max_congestion = 0;
        let mut forests_flat = true;
        let mut max_diameter_ratio: f64 = 0.0;
        let mut covering = true;
        for (li, clusters) in self.forests.iter().enumerate() {
            let level = li + 1;
            let scale = link_length(self.gamma_hrg, self.gamma_diam, level);
            let mut cong = vec![0usize; n];
            for c in clusters {
                for &v in &c.vertices {
                    cong[v] += 1;
                }
                forests_flat &= c.tree.check_flat(g).is_ok();
                let d = tree_diameter(c, g);
                max_diameter_ratio = max_diameter_ratio.max(d / scale);
            }
            max_congestion = max_congestion.max(cong.into_iter().max().unwrap_or(0));
            let r = self.gamma_diam.powi(level as i32) / self.gamma_hrg;
            for v in 0..n {
                let (dist, _) = crate::cover::dijkstra(g, &inc, v, r, None);
                let ball: Vec<usize> = (0..n).filter(|&u| dist[u] <= r).collect();
                covering &= clusters
                    .iter()
                    .any(|c| ball.iter().all(|&u| c.node_of(u).is_some_and(|x| c.s.contains(&x))));
            }
        }
        let mut linking_consistent = true;
        for (id, e) in self.h.edges() {
            match self.kinds[id] {
                HEdgeKind::Out { level } => {
                    linking_consistent &= !self.is_forest_node[e.tail]
                        && self.node_level[e.tail] == level
                        && self.is_forest_node[e.head]
                        && self.node_level[e.head] == level
                        && self.node_host[e.tail] == self.node_host[e.head]
                        && e.gradient == 0.0
                        && e.length == link_length(self.gamma_hrg, self.gamma_diam, level);
                }
                HEdgeKind::In { level } => {
                    linking_consistent &= self.is_forest_node[e.tail]
                        && self.node_level[e.tail] == level - 1
                        && !self.is_forest_node[e.head]
                        && self.node_level[e.head] == level
                        && self.node_host[e.tail] == self.node_host[e.head]
                        && e.gradient == 0.0
                        && e.length == link_length(self.gamma_hrg, self.gamma_diam, level - 1);
                }
                HEdgeKind::Forest { .. } => {}
            }
        }
        let comp = g.components();
        let top_components = self.forests.last().is_some_and(|cs| {
            cs.iter().all(|c| {
                let k = comp[c.vertices[0]];
                c.vertices.len() == comp.iter().filter(|&&x| x == k).count()
            })
        });
        HrgReport {
            max_congestion,
            forests_flat,
            max_diameter_ratio,
            linking_consistent,
            max_out_degree: self.max_out_degree(),
            covering,
            top_components,
        }
    }
}

fn tree_diameter(c: &Cluster, g: &DynGraph) -> f64 {
    let mut adj = vec![Vec::new(); c.tree.len()];
    for x in 0..c.tree.len() {
        if let (Some(p), HostLink::Edge(e, _)) = (c.tree.parent[x], c.tree.link[x]) {
            let l = g.edge(e).length;
            adj[x].push((p, l));
            adj[p].push((x, l));
        }
    }
    let far = |s: usize| {
        let mut dist = vec![f64::INFINITY; adj.len()];
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
    };
    let mut best = 0.0f64;
    for &a in &c.s {
        let d = far(a);
        for &b in &c.s {
            best = best.max(d[b]);
        }
    }
    best
}

// ---------------------------------------------------------------------------
// abstraction

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsEdge {
    pub from: usize,
    pub to: usize,
    /// Edge goes from layer `level` to `level + 1`.
    pub level: usize,
    pub len: f64,
    pub grad: f64,
    /// The out-edge and in-edge of H it came from, when built from an HRG.
    pub out_edge: Option<EdgeId>,
    pub in_edge: Option<EdgeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractedHrg {
    pub n: usize,
    pub kappa: usize,
    pub edges: Vec<AbsEdge>,
}

impl AbstractedHrg {
    /// Layer of an abstract node.
    pub fn level(&self, x: usize) -> usize {
        x / self.n + 1
    }

    pub fn node(&self, level: usize, v: VertexId) -> usize {
        (level - 1) * self.n + v
    }

    /// Builds a hand-made abstraction; `edges` are (from, to, len, grad) with
    /// `to` one layer above `from`.
    pub fn from_edges(n: usize, kappa: usize, edges: &[(usize, usize, f64, f64)]) -> Self {
        let edges = edges
            .iter()
            .map(|&(from, to, len, grad)| {
                let level = from / n + 1;
                assert_eq!(to / n + 1, level + 1, "abstract edges climb one layer");
                AbsEdge { from, to, level, len, grad, out_edge: None, in_edge: None }
            })
            .collect();
        AbstractedHrg { n, kappa, edges }
    }
}

/// H path of an abstract edge: out-edge, tree path, in-edge, as signed H edges.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsPath {
    pub h_edges: Vec<(EdgeId, f64)>,
    pub length: f64,
}

impl Hrg {
    pub fn abstracted(&self) -> AbstractedHrg {
        self.abstracted_with_paths().0
    }

    /// The abstraction together with the H path of every abstract edge.
    pub fn abstracted_with_paths(&self) -> (AbstractedHrg, Vec<AbsPath>) {
        let mut edges = Vec::new();
        let mut paths = Vec::new();
        for copy in 0..self.n * self.kappa {
            for &o in &self.out_edges[copy] {
                let x = self.h.edge(o).head;
                let (level, ci) = self.cluster_of(x);
                let root = self.cluster_root(level, ci);
                let ie = self.in_edge[level - 1][ci];
                let to = self.h.edge(ie).head;
                let mut h_edges = vec![(o, 1.0)];
                h_edges.extend(self.forest_path(x, root));
                h_edges.push((ie, 1.0));
                let grad: f64 = h_edges.iter().map(|&(e, s)| s * self.h.edge(e).gradient).sum();
                let length: f64 = h_edges.iter().map(|&(e, _)| self.h.edge(e).length).sum();
                edges.push(AbsEdge {
                    from: copy,
                    to,
                    level,
                    len: link_length(self.gamma_hrg, self.gamma_diam, level),
                    grad,
                    out_edge: Some(o),
                    in_edge: Some(ie),
                });
                paths.push(AbsPath { h_edges, length });
            }
        }
        (AbstractedHrg { n: self.n, kappa: self.kappa, edges }, paths)
    }

    /// Signed H edges of the cluster-tree path a→b.
    fn forest_path(&self, a: usize, b: usize) -> Vec<(EdgeId, f64)> {
        let up = |mut x: usize| {
            let mut chain = vec![(x, None)];
            while let Some((p, e)) = self.forest_parent(x) {
                chain.push((p, Some(e)));
                x = p;
            }
            chain
        };
        let ca = up(a);
        let cb = up(b);
        let on_b: BTreeMap<usize, usize> = cb.iter().enumerate().map(|(i, &(x, _))| (x, i)).collect();
        let ia = ca.iter().position(|(x, _)| on_b.contains_key(x)).expect("same tree");
        let ib = on_b[&ca[ia].0];
        let sign = |e: EdgeId, from: usize| if self.h.edge(e).tail == from { 1.0 } else { -1.0 };
        let mut out = Vec::new();
        for i in 1..=ia {
            let e = ca[i].1.unwrap();
            out.push((e, sign(e, ca[i - 1].0)));
        }
        for i in (1..=ib).rev() {
            let e = cb[i].1.unwrap();
            out.push((e, sign(e, cb[i].0)));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// routing circulations and monotone cycles

/// Flow along a monotonically increasing path of abstract edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFlow {
    pub start: usize,
    pub edges: Vec<usize>,
    pub amount: f64,
}

/// Flow on the extra edge e = (u, v) plus monotone path flows from u and v.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingCirculation {
    pub base: EdgeId,
    pub base_len: f64,
    pub base_grad: f64,
    /// Layer-1 nodes of the tail and head of the base edge.
    pub u: usize,
    pub v: usize,
    /// Flow on the base edge in the u→v direction.
    pub base_flow: f64,
    pub paths: Vec<PathFlow>,
}

/// A circulation on the abstraction plus the extra edge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AbsFlow {
    pub edges: BTreeMap<usize, f64>,
    pub base: f64,
}

impl AbsFlow {
    fn add(&mut self, e: usize, x: f64) {
        *self.edges.entry(e).or_insert(0.0) += x;
    }

    pub fn weight(&self, h: &AbstractedHrg, base_len: f64) -> f64 {
        self.edges.iter().map(|(&e, x)| h.edges[e].len * x.abs()).sum::<f64>() + base_len * self.base.abs()
    }

    pub fn max_abs_diff(&self, other: &AbsFlow) -> f64 {
        let keys: BTreeSet<usize> = self.edges.keys().chain(other.edges.keys()).copied().collect();
        let get = |f: &AbsFlow, e: usize| f.edges.get(&e).copied().unwrap_or(0.0);
        keys.into_iter()
            .map(|e| (get(self, e) - get(other, e)).abs())
            .fold((self.base - other.base).abs(), f64::max)
    }
}

impl RoutingCirculation {
    pub fn flow(&self) -> AbsFlow {
        let mut f = AbsFlow { base: self.base_flow, ..Default::default() };
        for p in &self.paths {
            for &e in &p.edges {
                f.add(e, p.amount);
            }
        }
        f
    }

    fn validate(&self, h: &AbstractedHrg) -> Result<(), HrgError> {
        let bad = |s: String| Err(HrgError::NotARoutingCirculation(s));
        let mut sign_u = 0.0;
        let mut sign_v = 0.0;
        for (i, p) in self.paths.iter().enumerate() {
            if p.start != self.u && p.start != self.v {
                return bad(format!("path {i} starts off the base edge"));
            }
            let mut at = p.start;
            for &e in &p.edges {
                let ae = h.edges.get(e).ok_or(HrgError::NotARoutingCirculation(format!("unknown edge {e}")))?;
                if ae.from != at {
                    return bad(format!("path {i} is not monotone increasing"));
                }
                at = ae.to;
            }
            let s = if p.start == self.u { &mut sign_u } else { &mut sign_v };
            if p.amount * *s < 0.0 {
                return bad(format!("path {i} has the wrong sign"));
            }
            if p.amount != 0.0 {
                *s = p.amount.signum();
            }
        }
        if sign_u * sign_v > 0.0 {
            return bad("paths from both endpoints carry the same sign".into());
        }
        // conservation
        let f = self.flow();
        let mut div = vec![0.0f64; h.n * h.kappa];
        let mut scale: f64 = self.base_flow.abs();
        for (&e, &x) in &f.edges {
            div[h.edges[e].from] -= x;
            div[h.edges[e].to] += x;
            scale = scale.max(x.abs());
        }
        div[self.u] -= self.base_flow;
        div[self.v] += self.base_flow;
        if let Some(x) = div.iter().position(|d| d.abs() > 1e-9 * scale.max(1e-300)) {
            return bad(format!("net flow at node {x}"));
        }
        Ok(())
    }
}

/// A simple cycle: up along `up`, down along `down` (listed top to bottom),
/// and through the base edge when `base` is nonzero (its signed flow).
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCycle {
    pub up: Vec<usize>,
    pub down: Vec<usize>,
    pub base: f64,
    pub amount: f64,
}

impl MonotoneCycle {
    pub fn flow(&self) -> AbsFlow {
        let mut f = AbsFlow { base: self.base * self.amount, ..Default::default() };
        for &e in &self.up {
            f.add(e, self.amount);
        }
        for &e in &self.down {
            f.add(e, -self.amount);
        }
        f
    }

    pub fn weight(&self, h: &AbstractedHrg, base_len: f64) -> f64 {
        self.flow().weight(h, base_len)
    }

    /// Layers rise strictly along `up` and fall strictly along `down`, and
    /// the two halves close up.
    pub fn is_monotone(&self, h: &AbstractedHrg, rc: &RoutingCirculation) -> bool {
        let rising = |es: &[usize]| es.windows(2).all(|w| h.edges[w[0]].to == h.edges[w[1]].from);
        if !rising(&self.up) || !rising(&self.down.iter().rev().copied().collect::<Vec<_>>()) {
            return false;
        }
        let (Some(&ut), Some(&dt)) = (self.up.last(), self.down.first()) else {
            return false;
        };
        if h.edges[ut].to != h.edges[dt].to {
            return false;
        }
        let ub = h.edges[self.up[0]].from;
        let db = h.edges[*self.down.last().unwrap()].from;
        let closes = if self.base == 0.0 {
            ub == db
        } else {
            // base edge carries flow from the bottom of `down` to the bottom of `up`
            let (from, to) = if self.base > 0.0 { (rc.u, rc.v) } else { (rc.v, rc.u) };
            from == db && to == ub
        };
        // simple: the halves share only their ends
        let nodes = |es: &[usize]| es.iter().map(|&e| h.edges[e].to).collect::<BTreeSet<_>>();
        let mut nu = nodes(&self.up);
        nu.insert(ub);
        let mut nd = nodes(&self.down);
        nd.insert(db);
        let shared = nu.intersection(&nd).count();
        closes && shared == if self.base == 0.0 { 2 } else { 1 }
    }
}

struct Strand {
    edges: Vec<usize>,
    mass: f64,
}

/// Splits a routing circulation into monotone cycle circulations, peeling
/// level by level from the top.
pub fn decompose_routing_circulation(
    h: &AbstractedHrg,
    rc: &RoutingCirculation,
) -> Result<Vec<MonotoneCycle>, HrgError> {
    rc.validate(h)?;
    // s-strands carry flow up from s, t-strands carry flow down into t
    let (s, t) = match rc.paths.iter().find(|p| p.amount != 0.0) {
        Some(p) if (p.start == rc.u) == (p.amount > 0.0) => (rc.u, rc.v),
        Some(_) => (rc.v, rc.u),
        None => (rc.u, rc.v),
    };
    let mut up: Vec<Strand> = Vec::new();
    let mut down: Vec<Strand> = Vec::new();
    let mut total: f64 = rc.base_flow.abs();
    for p in &rc.paths {
        if p.amount == 0.0 || p.edges.is_empty() {
            continue;
        }
        total = total.max(p.amount.abs());
        let strand = Strand { edges: p.edges.clone(), mass: p.amount.abs() };
        if p.start == s {
            up.push(strand);
        } else {
            down.push(strand);
        }
    }
    let tol = 1e-12 * total.max(1e-300);
    // base flow in the t→s direction
    let base_dir = if s == rc.u { -1.0 } else { 1.0 };
    let mut base_left = rc.base_flow * base_dir;
    let mut cycles = Vec::new();
    let node_at = |st: &Strand, j: usize, start: usize| if j == 0 { start } else { h.edges[st.edges[j - 1]].to };

    for level in (1..h.kappa).rev() {
        loop {
            let mut net: BTreeMap<usize, f64> = BTreeMap::new();
            for st in &up {
                if st.edges.len() == level {
                    *net.entry(st.edges[level - 1]).or_insert(0.0) += st.mass;
                }
            }
            for st in &down {
                if st.edges.len() == level {
                    *net.entry(st.edges[level - 1]).or_insert(0.0) -= st.mass;
                }
            }
            let Some((&e1, &f1)) =
                net.iter().filter(|(_, x)| x.abs() > tol).min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            else {
                break;
            };
            let y = h.edges[e1].to;
            // partner edge into y with opposite net flow
            let partner = net
                .iter()
                .filter(|(&e, &x)| h.edges[e].to == y && x * f1 < 0.0)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(&e, &x)| (e, x));
            let Some((e2, f2)) = partner.filter(|(_, x)| x.abs() > tol) else {
                return Err(HrgError::NotARoutingCirculation(format!("flow does not balance at node {y}")));
            };
            let (eu, ed) = if f1 > 0.0 { (e1, e2) } else { (e2, e1) };
            let iu = up.iter().position(|st| st.edges.len() == level && st.edges[level - 1] == eu).unwrap();
            let id = down.iter().position(|st| st.edges.len() == level && st.edges[level - 1] == ed).unwrap();
            let mu = f1.abs().min(f2.abs()).min(up[iu].mass).min(down[id].mass);
            // highest shared node below y
            let meet = (1..level).rev().find(|&j| node_at(&up[iu], j, s) == node_at(&down[id], j, t));
            let cyc_up: Vec<usize>;
            let cyc_down: Vec<usize>;
            let mut base = 0.0;
            match meet {
                Some(j) => {
                    cyc_up = up[iu].edges[j..].to_vec();
                    cyc_down = down[id].edges[j..].iter().rev().copied().collect();
                    let pu = up[iu].edges[..j].to_vec();
                    let pd = down[id].edges[..j].to_vec();
                    up.push(Strand { edges: pu, mass: mu });
                    down.push(Strand { edges: pd, mass: mu });
                }
                None => {
                    cyc_up = up[iu].edges.clone();
                    cyc_down = down[id].edges.iter().rev().copied().collect();
                    base = base_dir;
                    base_left -= mu;
                }
            }
            up[iu].mass -= mu;
            down[id].mass -= mu;
            cycles.push(MonotoneCycle { up: cyc_up, down: cyc_down, base, amount: mu });
            up.retain(|st| st.mass > tol);
            down.retain(|st| st.mass > tol);
        }
        // net flow on this level is gone; drop the top edge of every strand
        for st in up.iter_mut().chain(down.iter_mut()) {
            if st.edges.len() == level {
                st.edges.pop();
            }
        }
    }
    if base_left.abs() > 1e-9 * total.max(1e-300) {
        return Err(HrgError::NotARoutingCirculation("base flow left over".into()));
    }
    Ok(cycles)
}

// ---------------------------------------------------------------------------
// off-tree edges and the tree collection

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OffKind {
    /// Image of a host edge between layer-1 copies.
    Graph(EdgeId),
    /// Pair of out-edges (o1, o2) of one layer copy.
    Pair { copy: usize, o1: EdgeId, o2: EdgeId },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HrgOffEdge {
    pub a: usize,
    pub b: usize,
    pub len: f64,
    pub grad: f64,
    pub kind: OffKind,
}

/// E_graph and E_pair.
pub fn off_tree_edge_sets(hrg: &Hrg, g: &DynGraph) -> (Vec<HrgOffEdge>, Vec<HrgOffEdge>) {
    let graph = g
        .edges()
        .map(|(id, e)| HrgOffEdge {
            a: hrg.copy(1, e.tail),
            b: hrg.copy(1, e.head),
            len: e.length,
            grad: e.gradient,
            kind: OffKind::Graph(id),
        })
        .collect();
    let mut pair = Vec::new();
    for copy in 0..hrg.n * hrg.kappa {
        let outs = &hrg.out_edges[copy];
        for i in 0..outs.len() {
            for j in i + 1..outs.len() {
                let level = hrg.node_level[copy];
                pair.push(HrgOffEdge {
                    a: hrg.h.edge(outs[i]).head,
                    b: hrg.h.edge(outs[j]).head,
                    len: 2.0 * link_length(hrg.gamma_hrg, hrg.gamma_diam, level),
                    grad: 0.0,
                    kind: OffKind::Pair { copy, o1: outs[i], o2: outs[j] },
                });
            }
        }
    }
    (graph, pair)
}

/// One hierarchical routing tree: every layer copy keeps one out-edge.
#[derive(Debug, Clone, PartialEq)]
pub struct HrgTree {
    /// Chosen out-edge per layer copy (None for the top layer).
    pub choice: Vec<Option<EdgeId>>,
    /// The tree over H nodes, links into H edges.
    pub forest: FlatForest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectionConfig {
    pub cap: usize,
    /// Fail instead of sampling when the triple space exceeds the cap.
    pub strict: bool,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig { cap: 512, strict: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeCollection {
    pub trees: Vec<HrgTree>,
    /// Size of the triple space before deduplication.
    pub triples: usize,
    /// True when only a round-robin sample of the triples was used.
    pub sampled: bool,
}

fn id_bits(n: usize) -> usize {
    ((n.max(2) as f64).log2().ceil() as usize).max(1)
}

impl Hrg {
    /// The tree selected by one out-edge choice per layer copy.
    pub fn tree_from_choice(&self, choice: Vec<Option<EdgeId>>) -> HrgTree {
        let mut forest = FlatForest::new();
        for x in 0..self.h.vertex_count() {
            forest.add_node(x);
        }
        for (x, c) in choice.iter().enumerate() {
            if let Some(o) = c {
                forest.set_parent(x, self.h.edge(*o).head, HostLink::Edge(*o, true));
            }
        }
        for x in self.n * self.kappa..self.h.vertex_count() {
            match self.forest_parent(x) {
                Some((p, e)) => {
                    let fwd = self.h.edge(e).tail == x;
                    forest.set_parent(x, p, HostLink::Edge(e, fwd));
                }
                None => {
                    let (level, ci) = self.cluster_of(x);
                    let ie = self.in_edge[level - 1][ci];
                    forest.set_parent(x, self.h.edge(ie).head, HostLink::Edge(ie, true));
                }
            }
        }
        HrgTree { choice, forest }
    }

    /// Trees T_{p,a,b}: copy v at level i takes its a(i)-th out-edge when bit
    /// p(i) of v is set and its b(i)-th otherwise; a missing index falls back
    /// to the first out-edge. Identical trees are kept once.
    pub fn tree_collection(&self, cfg: CollectionConfig) -> Result<TreeCollection, HrgError> {
        let levels = self.kappa - 1;
        let bits = id_bits(self.n);
        let d = self.max_out_degree().max(1);
        let per_level = bits * d * d;
        let triples = per_level.checked_pow(levels as u32).unwrap_or(usize::MAX);
        if triples > cfg.cap && cfg.strict {
            return Err(HrgError::CollectionBudgetExceeded { needed: triples, cap: cfg.cap });
        }
        let (count, stride) = if triples > cfg.cap { (cfg.cap, triples / cfg.cap) } else { (triples, 1) };
        let mut seen = BTreeSet::new();
        let mut trees = Vec::new();
        for k in 0..count {
            let mut code = k * stride;
            let mut pick = Vec::with_capacity(levels);
            for _ in 0..levels {
                let c = code % per_level;
                code /= per_level;
                pick.push((c % bits, (c / bits) % d, c / (bits * d)));
            }
            let choice: Vec<Option<EdgeId>> = (0..self.h.vertex_count())
                .map(|x| {
                    if x >= self.n * self.kappa || self.node_level[x] == self.kappa {
                        return None;
                    }
                    let outs = &self.out_edges[x];
                    let (p, a, b) = pick[self.node_level[x] - 1];
                    let idx = if (self.node_host[x] >> p) & 1 == 1 { a } else { b };
                    outs.get(idx).or(outs.first()).copied()
                })
                .collect();
            if seen.insert(choice.clone()) {
                trees.push(self.tree_from_choice(choice));
            }
        }
        Ok(TreeCollection { trees, triples, sampled: triples > cfg.cap })
    }

    /// Same tree as a routing tree over the host graph: linking edges are
    /// collapsed but keep their H length.
    pub fn routing_tree(&self, t: &HrgTree) -> RoutingTree {
        let mut forest = FlatForest::new();
        for x in 0..self.h.vertex_count() {
            forest.add_node(self.node_host[x]);
        }
        let mut len = vec![0.0; forest.len()];
        let mut grad = vec![0.0; forest.len()];
        for x in 0..t.forest.len() {
            let (Some(p), HostLink::Edge(he, fwd)) = (t.forest.parent[x], t.forest.link[x]) else {
                continue;
            };
            let e = self.h.edge(he);
            let link = match self.kinds[he] {
                HEdgeKind::Forest { host, .. } => HostLink::Edge(host, fwd),
                _ => HostLink::Collapsed,
            };
            forest.set_parent(x, p, link);
            len[x] = e.length;
            grad[x] = if fwd { e.gradient } else { -e.gradient };
        }
        RoutingTree { forest, len, grad }
    }
}

/// Off-tree edges for the oracle, with host images.
pub fn oracle_off_edges(graph: &[HrgOffEdge], pair: &[HrgOffEdge]) -> Vec<OffEdge> {
    graph
        .iter()
        .chain(pair)
        .map(|o| OffEdge {
            a: o.a,
            b: o.b,
            grad: o.grad,
            len: o.len,
            image: match o.kind {
                OffKind::Graph(e) => vec![(e, 1.0)],
                OffKind::Pair { .. } => Vec::new(),
            },
        })
        .collect()
}

/// Tree-cycle oracle over an HRG of `g`. Lengths are rescaled to start at 1
/// before building; the ratio is scale free.
pub fn hrg_min_ratio(g: &DynGraph, params: HrgParams, cfg: CollectionConfig) -> Result<CycleAnswer, OracleError> {
    let min_len = g.edges().map(|(_, e)| e.length).fold(f64::INFINITY, f64::min);
    if !(min_len > 0.0) {
        return Err(if min_len.is_infinite() { OracleError::NoCycle } else { OracleError::Failure("bad length".into()) });
    }
    let mut scaled = g.without_journal();
    let ids: Vec<EdgeId> = g.edges().map(|(i, _)| i).collect();
    for e in ids {
        let l = g.edge(e).length / min_len;
        scaled.apply_update(crate::graph::Update::SetLength { e, length: l }).expect("live edge");
    }
    let hrg = build_hrg(&scaled, params).map_err(|e| OracleError::Failure(e.to_string()))?;
    let coll = hrg.tree_collection(cfg).map_err(|e| OracleError::Failure(e.to_string()))?;
    let (graph, pair) = off_tree_edge_sets(&hrg, &scaled);
    let off = oracle_off_edges(&graph, &pair);
    let trees: Vec<RoutingTree> = coll.trees.iter().map(|t| hrg.routing_tree(t)).collect();
    let offs = vec![off; trees.len()];
    let mut ans = tree_cycle_min_ratio(&scaled, &trees, &offs)?;
    ans.ratio = ans.circulation.ratio(g);
    ans.oracle_ratio /= min_len;
    Ok(ans)
}

/// Host circulation of a tree cycle: off edge a→b, then the tree path b→a.
pub fn tree_cycle_in_h(hrg: &Hrg, t: &HrgTree, off: &HrgOffEdge) -> Option<(BTreeMap<EdgeId, f64>, Option<EdgeId>)> {
    let mut c: BTreeMap<EdgeId, f64> = BTreeMap::new();
    let mut base = None;
    match off.kind {
        OffKind::Graph(e) => base = Some(e),
        OffKind::Pair { o1, o2, .. } => {
            // a→copy→b through the two out-edges
            *c.entry(o1).or_insert(0.0) -= 1.0;
            *c.entry(o2).or_insert(0.0) += 1.0;
        }
    }
    for (e, s) in t.forest.path_flow(off.b, off.a)? {
        *c.entry(e).or_insert(0.0) += s;
    }
    c.retain(|_, x| *x != 0.0);
    let _ = hrg;
    Some((c, base))
}

// ---------------------------------------------------------------------------
// diagnostics

#[derive(Debug, Clone, Serialize)]
pub struct HrgDump {
    pub n: usize,
    pub kappa: usize,
    pub gamma_hrg: f64,
    pub gamma_diam: f64,
    pub layers: Vec<Vec<usize>>,
    /// Per level, per tree: (node, host vertex, parent node).
    pub forests: Vec<Vec<Vec<(usize, VertexId, Option<usize>)>>>,
    pub out_edges: Vec<(EdgeId, usize, usize)>,
    pub in_edges: Vec<(EdgeId, usize, usize)>,
}

impl Hrg {
    pub fn dump(&self) -> HrgDump {
        let layers = (1..=self.kappa).map(|i| (0..self.n).map(|v| self.copy(i, v)).collect()).collect();
        let forests = self
            .forests
            .iter()
            .enumerate()
            .map(|(li, cs)| {
                cs.iter()
                    .enumerate()
                    .map(|(ci, c)| {
                        let base = self.cluster_base[li][ci];
                        (0..c.tree.len()).map(|x| (base + x, c.vertices[x], c.tree.parent[x].map(|p| base + p))).collect()
                    })
                    .collect()
            })
            .collect();
        let mut out_edges = Vec::new();
        let mut in_edges = Vec::new();
        for (id, e) in self.h.edges() {
            match self.kinds[id] {
                HEdgeKind::Out { .. } => out_edges.push((id, e.tail, e.head)),
                HEdgeKind::In { .. } => in_edges.push((id, e.tail, e.head)),
                HEdgeKind::Forest { .. } => {}
            }
        }
        HrgDump { n: self.n, kappa: self.kappa, gamma_hrg: self.gamma_hrg, gamma_diam: self.gamma_diam, layers, forests, out_edges, in_edges }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_edge() -> DynGraph {
        let mut g = DynGraph::with_vertices(2);
        g.add_edge(Edge::new(0, 1)).unwrap();
        g
    }

    #[test]
    fn single_edge_invariants() {
        let g = single_edge();
        let hrg = build_hrg(&g, HrgParams::default()).unwrap();
        let rep = hrg.check(&g);
        assert!(rep.holds(hrg.gamma_hrg), "{rep:?}");
        assert!(rep.top_components);
    }

    #[test]
    fn infeasible_parameters_rejected() {
        let g = single_edge();
        let p = HrgParams { gamma_diam: Some(1.0), ..Default::default() };
        assert!(matches!(build_hrg(&g, p), Err(HrgError::ParameterInfeasible { .. })));
    }

    #[test]
    fn abstract_paths_within_three_link_lengths() {
        let mut g = DynGraph::with_vertices(5);
        for i in 1..5 {
            g.add_edge(Edge::new(i - 1, i)).unwrap();
        }
        let hrg = build_hrg(&g, HrgParams::default()).unwrap();
        let (abs, paths) = hrg.abstracted_with_paths();
        assert_eq!(abs.edges.len(), hrg.out_edges.iter().map(Vec::len).sum::<usize>());
        for (e, p) in abs.edges.iter().zip(&paths) {
            assert!(p.length <= 3.0 * e.len);
        }
    }

    #[test]
    fn out_degree_one_gives_no_pairs_and_one_tree() {
        let g = single_edge();
        let hrg = build_hrg(&g, HrgParams::default()).unwrap();
        assert_eq!(hrg.max_out_degree(), 1);
        let (graph, pair) = off_tree_edge_sets(&hrg, &g);
        assert_eq!(graph.len(), 1);
        assert!(pair.is_empty());
        let coll = hrg.tree_collection(CollectionConfig::default()).unwrap();
        assert_eq!(coll.trees.len(), 1);
    }

    #[test]
    fn single_monotone_cycle_decomposes_to_itself() {
        // layers of 2 vertices: u=0, v=1 at level 1, a=2,b=3 at level 2, top 4 at level 3
        let abs = AbstractedHrg::from_edges(2, 3, &[(0, 2, 8.0, 0.0), (1, 3, 8.0, 0.0), (2, 4, 64.0, 0.0), (3, 4, 64.0, 0.0)]);
        let rc = RoutingCirculation {
            base: 0,
            base_len: 1.0,
            base_grad: 0.0,
            u: 0,
            v: 1,
            base_flow: -1.0,
            paths: vec![
                PathFlow { start: 0, edges: vec![0, 2], amount: 1.0 },
                PathFlow { start: 1, edges: vec![1, 3], amount: -1.0 },
            ],
        };
        let cycles = decompose_routing_circulation(&abs, &rc).unwrap();
        assert_eq!(cycles.len(), 1);
        assert!(cycles[0].is_monotone(&abs, &rc));
        assert_eq!(cycles[0].flow().max_abs_diff(&rc.flow()), 0.0);
    }
}
