//! Portal routed graphs: a vertex sparsifier for tree cycles.
//!
//! Off-tree edges of a spanning forest T are moved onto a branch-free set of
//! portals. Tree paths between neighbouring portals become single edges of
//! gradient zero; a moved edge keeps the gradient of its whole tree cycle, so
//! every cycle of the sparsified graph has the gradient of its image in G.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::graph::{Circulation, Dsu, DynGraph, Edge, EdgeId, FlatForest, HostLink, VertexId};
use crate::oracle::CycleAnswer;

#[derive(Debug, Error, PartialEq)]
pub enum PortalError {
    #[error("portal set is not branch-free at vertex {0}")]
    NotBranchFree(VertexId),
    #[error("vertex {0} is already a portal")]
    AlreadyPortal(VertexId),
    #[error("forest is not flat over the portal routed graph at node {0}")]
    NotFlat(usize),
    #[error("host forest must have node i mapped to vertex i")]
    BadHostTree,
}

/// Spanning forest of the host with adjacency, rooted as given.
#[derive(Debug, Clone)]
pub struct HostTree {
    pub parent: Vec<Option<(VertexId, EdgeId)>>,
    pub depth: Vec<usize>,
    pub adj: Vec<Vec<(VertexId, EdgeId)>>,
    pub in_tree: BTreeSet<EdgeId>,
}

impl HostTree {
    /// From a forest with node i standing for host vertex i.
    pub fn from_forest(g: &DynGraph, f: &FlatForest) -> Result<Self, PortalError> {
        let n = g.vertex_count();
        if f.len() != n || (0..n).any(|i| f.vmap[i] != i) {
            return Err(PortalError::BadHostTree);
        }
        let mut parent = vec![None; n];
        let mut adj = vec![Vec::new(); n];
        let mut in_tree = BTreeSet::new();
        for x in 0..n {
            if let (Some(p), HostLink::Edge(e, _)) = (f.parent[x], f.link[x]) {
                parent[x] = Some((p, e));
                adj[x].push((p, e));
                adj[p].push((x, e));
                in_tree.insert(e);
            } else if f.parent[x].is_some() {
                return Err(PortalError::BadHostTree);
            }
        }
        let depth = (0..n).map(|x| f.depth(x)).collect();
        Ok(HostTree { parent, depth, adj, in_tree })
    }

    /// Vertices on the tree path a..b (same tree assumed).
    pub fn path(&self, a: VertexId, b: VertexId) -> Vec<VertexId> {
        let (mut x, mut y) = (a, b);
        let mut left = vec![x];
        let mut right = vec![y];
        while self.depth[x] > self.depth[y] {
            x = self.parent[x].expect("deeper vertex has a parent").0;
            left.push(x);
        }
        while self.depth[y] > self.depth[x] {
            y = self.parent[y].expect("deeper vertex has a parent").0;
            right.push(y);
        }
        while x != y {
            x = self.parent[x].expect("same tree").0;
            y = self.parent[y].expect("same tree").0;
            left.push(x);
            right.push(y);
        }
        right.pop();
        right.reverse();
        left.extend(right);
        left
    }

    fn edge_between(&self, x: VertexId, y: VertexId) -> EdgeId {
        match (self.parent[x], self.parent[y]) {
            (Some((p, e)), _) if p == y => e,
            (_, Some((p, e))) if p == x => e,
            _ => panic!("{x} and {y} are not tree neighbours"),
        }
    }

    /// Signed host edges walking the vertex sequence.
    pub fn walk(&self, g: &DynGraph, nodes: &[VertexId]) -> Vec<(EdgeId, f64)> {
        nodes
            .windows(2)
            .map(|w| {
                let e = self.edge_between(w[0], w[1]);
                (e, if g.edge(e).tail == w[0] { 1.0 } else { -1.0 })
            })
            .collect()
    }
}

fn length_of(g: &DynGraph, path: &[(EdgeId, f64)]) -> f64 {
    path.iter().map(|&(e, _)| g.edge(e).length).sum()
}

fn gradient_of(g: &DynGraph, path: &[(EdgeId, f64)]) -> f64 {
    path.iter().map(|&(e, s)| s * g.edge(e).gradient).sum()
}

/// Portals reachable from `u` without passing another portal, with the
/// non-portal vertices visited on the way (including `u` unless it is one).
fn reach(t: &HostTree, portal: &[bool], u: VertexId) -> (Vec<VertexId>, Vec<VertexId>) {
    let mut seen = BTreeSet::from([u]);
    let mut hits = Vec::new();
    let mut inner = Vec::new();
    let mut queue = VecDeque::from([u]);
    while let Some(x) = queue.pop_front() {
        if x != u && portal[x] {
            hits.push(x);
            continue;
        }
        inner.push(x);
        for &(y, _) in &t.adj[x] {
            if seen.insert(y) {
                queue.push_back(y);
            }
        }
    }
    (hits, inner)
}

/// The branch-free predicate, checked literally: a vertex outside the set
/// sees at most two members before hitting another one.
pub fn is_branch_free(t: &HostTree, portal: &[bool]) -> Result<(), VertexId> {
    for u in 0..portal.len() {
        if !portal[u] && reach(t, portal, u).0.len() > 2 {
            return Err(u);
        }
    }
    Ok(())
}

/// Adds the branching vertices of `set`: a vertex joins when at least three
/// of its directions in T contain a member. The result is branch-free.
pub fn branch_closure(t: &HostTree, set: &[bool]) -> Vec<bool> {
    let n = set.len();
    // count of members below each vertex in the rooted forest
    let mut order: Vec<VertexId> = (0..n).collect();
    order.sort_by_key(|&v| std::cmp::Reverse(t.depth[v]));
    let mut below = vec![0usize; n];
    let mut total_in_tree = vec![0usize; n];
    let mut root = vec![0; n];
    for v in 0..n {
        let mut x = v;
        while let Some((p, _)) = t.parent[x] {
            x = p;
        }
        root[v] = x;
    }
    for &v in &order {
        if set[v] {
            below[v] += 1;
        }
        if let Some((p, _)) = t.parent[v] {
            below[p] += below[v];
        }
    }
    for v in 0..n {
        if set[v] {
            total_in_tree[root[v]] += 1;
        }
    }
    let mut out = set.to_vec();
    for v in 0..n {
        if set[v] {
            continue;
        }
        let mut dirs = 0;
        for &(y, _) in &t.adj[v] {
            if t.parent[y].map(|p| p.0) == Some(v) {
                if below[y] > 0 {
                    dirs += 1;
                }
            } else if total_in_tree[root[v]] > below[v] {
                dirs += 1;
            }
        }
        if dirs >= 3 {
            out[v] = true;
        }
    }
    out
}

/// Edge-disjoint split of T into subtrees joined at portals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeDecomposition {
    /// Vertices in more than one component; branch-free.
    pub boundary: Vec<VertexId>,
    /// Tree edges of each component.
    pub components: Vec<Vec<EdgeId>>,
}

impl TreeDecomposition {
    /// Largest number of host edges touching a non-boundary vertex of one
    /// component.
    pub fn max_load(&self, g: &DynGraph) -> usize {
        let bnd: BTreeSet<VertexId> = self.boundary.iter().copied().collect();
        let inc = g.incidence();
        self.components
            .iter()
            .map(|c| {
                let vs: BTreeSet<VertexId> =
                    c.iter().flat_map(|&e| [g.edge(e).tail, g.edge(e).head]).filter(|v| !bnd.contains(v)).collect();
                let es: BTreeSet<EdgeId> = vs.iter().flat_map(|&v| inc[v].iter().copied()).collect();
                es.len()
            })
            .max()
            .unwrap_or(0)
    }
}

/// Greedy bottom-up cutting: a vertex with two or more tree neighbours
/// becomes a boundary vertex once the uncut weight it collects exceeds 2k.
/// The weight of a vertex is its host degree, so the total is 2m and k ≥ m
/// never cuts. Branching vertices of the cut set are added, and the pieces
/// hanging below one boundary vertex are bundled until each bundle carries
/// weight 2k.
pub fn tree_decompose(g: &DynGraph, t: &HostTree, k: usize) -> TreeDecomposition {
    let n = g.vertex_count();
    let k = k.max(1);
    let weight: Vec<usize> = (0..n).map(|v| g.degree(v)).collect();
    let mut order: Vec<VertexId> = (0..n).collect();
    order.sort_by_key(|&v| std::cmp::Reverse(t.depth[v]));
    let mut pending = weight.clone();
    let mut cut = vec![false; n];
    for &v in &order {
        if pending[v] > 2 * k && t.adj[v].len() >= 2 {
            cut[v] = true;
        } else if let Some((p, _)) = t.parent[v] {
            pending[p] += pending[v];
        }
    }
    let portal = branch_closure(t, &cut);

    // maximal pieces: tree edges sharing a non-portal vertex
    let tree_edges: Vec<EdgeId> = t.in_tree.iter().copied().collect();
    let idx: BTreeMap<EdgeId, usize> = tree_edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mut dsu = Dsu::new(tree_edges.len());
    for v in 0..n {
        if portal[v] {
            continue;
        }
        let mut it = t.adj[v].iter();
        if let Some(&(_, first)) = it.next() {
            for &(_, e) in it {
                dsu.union(idx[&first], idx[&e]);
            }
        }
    }
    let mut pieces: BTreeMap<usize, Vec<EdgeId>> = BTreeMap::new();
    for (i, &e) in tree_edges.iter().enumerate() {
        pieces.entry(dsu.find(i)).or_default().push(e);
    }
    // the top vertex of a piece is the parent end of its shallowest edge
    let mut by_top: BTreeMap<VertexId, Vec<(Vec<EdgeId>, usize)>> = BTreeMap::new();
    let mut components = Vec::new();
    for (_, es) in pieces {
        let top = es
            .iter()
            .map(|&e| {
                let ed = g.edge(e);
                if t.depth[ed.tail] < t.depth[ed.head] {
                    ed.tail
                } else {
                    ed.head
                }
            })
            .min_by_key(|&v| (t.depth[v], v))
            .expect("non-empty piece");
        if !portal[top] {
            components.push(es);
            continue;
        }
        let vs: BTreeSet<VertexId> = es
            .iter()
            .flat_map(|&e| [g.edge(e).tail, g.edge(e).head])
            .filter(|&v| !portal[v])
            .collect();
        let w = vs.iter().map(|&v| weight[v]).sum();
        by_top.entry(top).or_default().push((es, w));
    }
    for (top, list) in by_top {
        let count = list.len();
        let mut bundles: Vec<Vec<EdgeId>> = Vec::new();
        let mut cur: Vec<EdgeId> = Vec::new();
        let mut cur_w = 0;
        for (es, w) in list {
            cur.extend(es);
            cur_w += w;
            if cur_w >= 2 * k {
                bundles.push(std::mem::take(&mut cur));
                cur_w = 0;
            }
        }
        if !cur.is_empty() {
            match bundles.last_mut() {
                Some(b) => b.extend(cur),
                None => bundles.push(cur),
            }
        }
        // a root portal must still sit in two components
        let is_root = t.parent[top].is_none();
        if is_root && bundles.len() == 1 && count >= 2 {
            let b = bundles.pop().expect("one bundle");
            let first = piece_containing(g, t, &portal, &b, top);
            let rest: Vec<EdgeId> = b.iter().copied().filter(|e| !first.contains(e)).collect();
            bundles.push(first);
            bundles.push(rest);
        }
        components.extend(bundles);
    }
    for c in &mut components {
        c.sort_unstable();
    }
    components.sort();
    let mut seen_in = vec![0usize; n];
    for c in &components {
        let vs: BTreeSet<VertexId> = c.iter().flat_map(|&e| [g.edge(e).tail, g.edge(e).head]).collect();
        for v in vs {
            seen_in[v] += 1;
        }
    }
    let boundary = (0..n).filter(|&v| seen_in[v] >= 2).collect();
    TreeDecomposition { boundary, components }
}

/// The piece of `edges` through the first tree edge at `top`.
fn piece_containing(g: &DynGraph, t: &HostTree, portal: &[bool], edges: &[EdgeId], top: VertexId) -> Vec<EdgeId> {
    let set: BTreeSet<EdgeId> = edges.iter().copied().collect();
    let start = *t.adj[top].iter().map(|(_, e)| e).find(|e| set.contains(e)).expect("edge at top");
    let mut out = vec![start];
    let mut stack: Vec<VertexId> = [g.edge(start).tail, g.edge(start).head].into_iter().filter(|&v| v != top).collect();
    let mut seen = BTreeSet::from([start]);
    while let Some(x) = stack.pop() {
        if portal[x] {
            continue;
        }
        for &(y, e) in &t.adj[x] {
            if set.contains(&e) && seen.insert(e) {
                out.push(e);
                stack.push(y);
            }
        }
    }
    out
}

/// Identity of an edge of the portal routed graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PrgKey {
    /// Tree path between two portals, smaller id first.
    TreePath(VertexId, VertexId),
    /// The routed copy of an off-tree host edge.
    Routed(EdgeId),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrgEdge {
    pub a: VertexId,
    pub b: VertexId,
    pub len: f64,
    pub grad: f64,
    /// Image in the host, oriented a→b.
    pub image: Vec<(EdgeId, f64)>,
    /// Host vertices along the image (tree-path edges only).
    pub nodes: Vec<VertexId>,
}

impl PrgEdge {
    pub fn is_self_loop(&self) -> bool {
        self.a == self.b
    }
}

/// Changes to the portal routed graph caused by one new portal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PrgUpdate {
    /// New vertex `w` takes over the listed edges from `a` and `b`.
    SplitAndMerge { a: VertexId, b: VertexId, w: VertexId, moved: Vec<PrgKey> },
    InsertVertex { v: VertexId, edges: Vec<PrgKey> },
    InsertEdge(PrgKey),
    DeleteEdge(PrgKey),
    DecreaseLength { key: PrgKey, len: f64 },
}

#[derive(Debug, Clone)]
pub struct PortalRoutedGraph {
    pub tree: HostTree,
    pub portal: Vec<bool>,
    pub edges: BTreeMap<PrgKey, PrgEdge>,
    /// Off-tree edges whose tree path meets no portal.
    pub portal_free: BTreeSet<EdgeId>,
    /// Updates emitted by `add_portal` since construction.
    pub emitted: usize,
}

/// Routing of one off-tree edge under the portal flags.
fn route(g: &DynGraph, t: &HostTree, portal: &[bool], e: EdgeId) -> Option<PrgEdge> {
    let ed = g.edge(e);
    let nodes = t.path(ed.tail, ed.head);
    let first = nodes.iter().position(|&v| portal[v])?;
    let last = nodes.iter().rposition(|&v| portal[v]).expect("some portal");
    let mut back: Vec<VertexId> = nodes[..=first].to_vec();
    back.reverse();
    let mut image = t.walk(g, &back);
    image.push((e, 1.0));
    let mut fwd: Vec<VertexId> = nodes[last..].to_vec();
    fwd.reverse();
    image.extend(t.walk(g, &fwd));
    let len = length_of(g, &image);
    // gradient of the whole tree cycle e ⊕ T[head, tail]
    let mut rev = nodes.clone();
    rev.reverse();
    let grad = ed.gradient + gradient_of(g, &t.walk(g, &rev));
    Some(PrgEdge { a: nodes[first], b: nodes[last], len, grad, image, nodes: Vec::new() })
}

/// Tree-path edges from portal `p` to the portals it sees.
fn tree_paths_from(g: &DynGraph, t: &HostTree, portal: &[bool], p: VertexId) -> Vec<(PrgKey, PrgEdge)> {
    let mut prev: BTreeMap<VertexId, VertexId> = BTreeMap::new();
    let mut queue = VecDeque::from([p]);
    let mut out = Vec::new();
    prev.insert(p, p);
    while let Some(x) = queue.pop_front() {
        if x != p && portal[x] {
            let mut nodes = vec![x];
            let mut y = x;
            while y != p {
                y = prev[&y];
                nodes.push(y);
            }
            nodes.reverse();
            let (a, b) = (p.min(x), p.max(x));
            if a != p {
                nodes.reverse();
            }
            let image = t.walk(g, &nodes);
            let len = length_of(g, &image);
            out.push((PrgKey::TreePath(a, b), PrgEdge { a, b, len, grad: 0.0, image, nodes }));
            continue;
        }
        for &(y, _) in &t.adj[x] {
            if let std::collections::btree_map::Entry::Vacant(slot) = prev.entry(y) {
                slot.insert(x);
                queue.push_back(y);
            }
        }
    }
    out
}

impl PortalRoutedGraph {
    /// Builds the portal routed graph of `g` for the forest `t` and portal set.
    pub fn build(g: &DynGraph, t: HostTree, portals: &[VertexId]) -> Result<Self, PortalError> {
        let mut portal = vec![false; g.vertex_count()];
        for &p in portals {
            portal[p] = true;
        }
        is_branch_free(&t, &portal).map_err(PortalError::NotBranchFree)?;
        let mut edges = BTreeMap::new();
        for p in 0..portal.len() {
            if portal[p] {
                edges.extend(tree_paths_from(g, &t, &portal, p));
            }
        }
        let mut portal_free = BTreeSet::new();
        for (e, _) in g.edges() {
            if t.in_tree.contains(&e) {
                continue;
            }
            match route(g, &t, &portal, e) {
                Some(r) => {
                    edges.insert(PrgKey::Routed(e), r);
                }
                None => {
                    portal_free.insert(e);
                }
            }
        }
        Ok(PortalRoutedGraph { tree: t, portal, edges, portal_free, emitted: 0 })
    }

    /// Portals from `tree_decompose(g, t, k)`.
    pub fn with_reduction(g: &DynGraph, t: HostTree, k: usize) -> Result<Self, PortalError> {
        let d = tree_decompose(g, &t, k);
        Self::build(g, t, &d.boundary)
    }

    pub fn portals(&self) -> Vec<VertexId> {
        (0..self.portal.len()).filter(|&v| self.portal[v]).collect()
    }

    /// The extra vertex needed to keep the set branch-free when `u` joins.
    pub fn plus_vertex(&self, u: VertexId) -> Option<VertexId> {
        let mut with = self.portal.clone();
        with[u] = true;
        if is_branch_free(&self.tree, &with).is_ok() {
            return None;
        }
        // root at u; farthest vertex with two child directions holding portals
        let n = self.portal.len();
        let mut par = vec![usize::MAX; n];
        let mut dist = vec![usize::MAX; n];
        let mut order = vec![u];
        dist[u] = 0;
        let mut i = 0;
        while i < order.len() {
            let x = order[i];
            i += 1;
            for &(y, _) in &self.tree.adj[x] {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    par[y] = x;
                    order.push(y);
                }
            }
        }
        let mut has = vec![false; n];
        let mut dirs = vec![0usize; n];
        for &x in order.iter().rev() {
            if self.portal[x] {
                has[x] = true;
            }
            if x != u && has[x] {
                has[par[x]] = true;
                dirs[par[x]] += 1;
            }
        }
        order.into_iter().filter(|&x| x != u && !self.portal[x] && dirs[x] >= 2).max_by_key(|&x| (dist[x], x))
    }

    /// Makes `u` a portal (after its companion vertex if one is needed) and
    /// returns the emitted changes.
    pub fn add_portal(&mut self, g: &DynGraph, u: VertexId) -> Result<Vec<PrgUpdate>, PortalError> {
        if self.portal[u] {
            return Err(PortalError::AlreadyPortal(u));
        }
        let mut out = Vec::new();
        if let Some(w) = self.plus_vertex(u) {
            out.extend(self.add_one(g, w));
        }
        out.extend(self.add_one(g, u));
        self.emitted += out.len();
        Ok(out)
    }

    fn add_one(&mut self, g: &DynGraph, u: VertexId) -> Vec<PrgUpdate> {
        let (bnd, inner) = reach(&self.tree, &self.portal, u);
        debug_assert!(bnd.len() <= 2);
        self.portal[u] = true;
        let mut out = Vec::new();
        let mut moved = Vec::new();
        let mut inserted = Vec::new();
        let mut decreased = Vec::new();

        if bnd.len() == 2 {
            let key = PrgKey::TreePath(bnd[0].min(bnd[1]), bnd[0].max(bnd[1]));
            if self.edges.remove(&key).is_some() {
                out.push(PrgUpdate::DeleteEdge(key));
            }
        }
        for (key, e) in tree_paths_from(g, &self.tree, &self.portal, u) {
            self.edges.insert(key, e);
            inserted.push(key);
        }

        // only off-tree edges touching the component of u can change
        let inc = g.incidence();
        let touched: BTreeSet<EdgeId> =
            inner.iter().flat_map(|&v| inc[v].iter().copied()).filter(|e| !self.tree.in_tree.contains(e)).collect();
        for e in touched {
            let key = PrgKey::Routed(e);
            let Some(mut fresh) = route(g, &self.tree, &self.portal, e) else { continue };
            match self.edges.get(&key) {
                None => {
                    self.portal_free.remove(&e);
                    inserted.push(key);
                }
                Some(old) => {
                    // gradients stay as created
                    fresh.grad = old.grad;
                    if (old.a, old.b) != (fresh.a, fresh.b) {
                        moved.push(key);
                    }
                    if fresh.len < old.len {
                        decreased.push((key, fresh.len));
                    }
                }
            }
            self.edges.insert(key, fresh);
        }
        let mut head = match bnd.len() {
            0 => vec![PrgUpdate::InsertVertex { v: u, edges: inserted.clone() }],
            _ => vec![
                PrgUpdate::SplitAndMerge { a: bnd[0], b: *bnd.last().expect("bnd"), w: u, moved },
                PrgUpdate::InsertVertex { v: u, edges: inserted.clone() },
            ],
        };
        head.append(&mut out);
        head.extend(inserted.into_iter().map(PrgUpdate::InsertEdge));
        head.extend(decreased.into_iter().map(|(key, len)| PrgUpdate::DecreaseLength { key, len }));
        head
    }

    /// The graph on host vertex ids (non-portals isolated) with the edge keys.
    pub fn graph(&self) -> (DynGraph, Vec<PrgKey>) {
        let mut h = DynGraph::with_vertices(self.portal.len());
        let mut keys = Vec::new();
        for (&key, e) in &self.edges {
            let mut ed = Edge::new(e.a, e.b);
            ed.length = e.len;
            ed.gradient = e.grad;
            h.add_edge(ed).expect("portal vertices exist");
            keys.push(key);
        }
        (h, keys)
    }

    /// Host image of a circulation on `graph()`.
    pub fn expand(&self, keys: &[PrgKey], c: &Circulation) -> Circulation {
        let mut out = Circulation::new();
        for (&i, &x) in &c.entries {
            for &(e, s) in &self.edges[&keys[i]].image {
                out.add(e, s * x);
            }
        }
        out
    }

    /// The maximal subtree of T around portal `p` holding no other portal,
    /// as (vertex, parent vertex, tree edge) triples in BFS order from `p`.
    pub fn dangling(&self, p: VertexId) -> Vec<(VertexId, VertexId, EdgeId)> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::from([p]);
        let mut queue = VecDeque::from([p]);
        while let Some(x) = queue.pop_front() {
            if x != p && self.portal[x] {
                continue;
            }
            for &(y, e) in &self.tree.adj[x] {
                if !self.portal[y] && seen.insert(y) {
                    out.push((y, x, e));
                    queue.push_back(y);
                }
            }
        }
        out
    }

    /// Best tree cycle among off-tree edges whose path meets no portal.
    pub fn portal_free_cycle(&self, g: &DynGraph) -> Option<CycleAnswer> {
        let mut best: Option<(f64, Vec<(EdgeId, f64)>)> = None;
        for &e in &self.portal_free {
            let ed = g.edge(e);
            let mut nodes = self.tree.path(ed.tail, ed.head);
            nodes.reverse();
            let mut cyc = vec![(e, 1.0)];
            cyc.extend(self.tree.walk(g, &nodes));
            let r = gradient_of(g, &cyc) / length_of(g, &cyc);
            let (r, s) = if r <= 0.0 { (r, 1.0) } else { (-r, -1.0) };
            if best.as_ref().is_none_or(|b| r < b.0) {
                best = Some((r, cyc.into_iter().map(|(e, x)| (e, s * x)).collect()));
            }
        }
        best.map(|(_, c)| CycleAnswer::from_explicit(g, c))
    }

    /// Host-side ratio of each non-self-loop routed edge's tree cycle, both
    /// read from the routed graph and recomputed directly from T.
    pub fn preservation_pairs(&self, g: &DynGraph) -> Vec<(f64, f64)> {
        let (h, keys) = self.graph();
        let mut out = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            let PrgKey::Routed(e) = *key else { continue };
            let pe = &self.edges[key];
            if pe.is_self_loop() {
                continue;
            }
            // cycle through the tree-path edges between the two portals
            let ed = g.edge(e);
            let nodes = self.tree.path(ed.tail, ed.head);
            let ports: Vec<VertexId> = nodes.iter().copied().filter(|&v| self.portal[v]).collect();
            let mut c = Circulation::new();
            for w in ports.windows(2) {
                let k = PrgKey::TreePath(w[0].min(w[1]), w[0].max(w[1]));
                let j = keys.iter().position(|x| *x == k).expect("tree-path edge exists");
                c.add(j, if self.edges[&k].a == w[0] { 1.0 } else { -1.0 });
            }
            c.add(i, -1.0);
            let prg_ratio = c.ratio(&h);
            let mut rev = nodes.clone();
            rev.reverse();
            let mut cyc = vec![(e, 1.0)];
            cyc.extend(self.tree.walk(g, &rev));
            let direct = gradient_of(g, &cyc) / length_of(g, &cyc);
            // the routed cycle runs the tree cycle backwards
            out.push((prg_ratio, -direct));
        }
        out
    }
}

/// A forest over the routed graph lifted into the host.
#[derive(Debug, Clone)]
pub struct LiftedForest {
    pub forest: FlatForest,
    /// For each node of the input forest, host vertex → its copy.
    pub copy: Vec<BTreeMap<VertexId, usize>>,
}

/// Lifts a forest that is flat over `graph()` (edge ids index `keys`) to a
/// forest flat over the host: each node carries a copy of its portal's
/// dangling subtree, and every forest edge becomes one host edge.
pub fn lift_forest(
    prg: &PortalRoutedGraph,
    g: &DynGraph,
    keys: &[PrgKey],
    f: &FlatForest,
) -> Result<LiftedForest, PortalError> {
    let mut nodes: Vec<VertexId> = Vec::new();
    let mut copy: Vec<BTreeMap<VertexId, usize>> = Vec::new();
    let mut adj: Vec<Vec<(usize, HostLink)>> = Vec::new();
    let push = |nodes: &mut Vec<VertexId>, adj: &mut Vec<Vec<(usize, HostLink)>>, v: VertexId| {
        nodes.push(v);
        adj.push(Vec::new());
        nodes.len() - 1
    };
    for x in 0..f.len() {
        let p = f.vmap[x];
        if !prg.portal[p] {
            return Err(PortalError::NotFlat(x));
        }
        let mut map = BTreeMap::new();
        let root = push(&mut nodes, &mut adj, p);
        map.insert(p, root);
        for (y, par, e) in prg.dangling(p) {
            let c = push(&mut nodes, &mut adj, y);
            map.insert(y, c);
            let pc = map[&par];
            adj[c].push((pc, HostLink::Edge(e, false)));
            adj[pc].push((c, HostLink::Edge(e, false)));
        }
        copy.push(map);
    }
    for x in 0..f.len() {
        let Some(y) = f.parent[x] else { continue };
        let (a, b, link) = match f.link[x] {
            HostLink::Collapsed => {
                if f.vmap[x] != f.vmap[y] {
                    return Err(PortalError::NotFlat(x));
                }
                (copy[x][&f.vmap[x]], copy[y][&f.vmap[y]], HostLink::Collapsed)
            }
            HostLink::Edge(i, fwd) => {
                let key = *keys.get(i).ok_or(PortalError::NotFlat(x))?;
                let pe = prg.edges.get(&key).ok_or(PortalError::NotFlat(x))?;
                // endpoint of the routed edge at the child
                let (cx, cy) = if fwd { (pe.a, pe.b) } else { (pe.b, pe.a) };
                if (cx, cy) != (f.vmap[x], f.vmap[y]) {
                    return Err(PortalError::NotFlat(x));
                }
                match key {
                    PrgKey::TreePath(..) => {
                        // child side keeps its portal; the far copy is the path
                        // vertex next to it
                        let path = if pe.a == cx { pe.nodes.clone() } else { pe.nodes.iter().rev().copied().collect() };
                        let near = path[1];
                        let e = prg.tree.edge_between(path[0], near);
                        let a = copy[x][&path[0]];
                        let b = *copy[y].get(&near).ok_or(PortalError::NotFlat(x))?;
                        (a, b, HostLink::Edge(e, false))
                    }
                    PrgKey::Routed(e) => {
                        let ed = g.edge(e);
                        // the tail hangs under a, the head under b
                        let (vx, vy) = if fwd { (ed.tail, ed.head) } else { (ed.head, ed.tail) };
                        let a = *copy[x].get(&vx).ok_or(PortalError::NotFlat(x))?;
                        let b = *copy[y].get(&vy).ok_or(PortalError::NotFlat(x))?;
                        (a, b, HostLink::Edge(e, false))
                    }
                }
            }
        };
        adj[a].push((b, link));
        adj[b].push((a, link));
    }
    // root each tree of the lift at the copy of an input root
    let mut forest = FlatForest::new();
    for &v in &nodes {
        forest.add_node(v);
    }
    let mut seen = vec![false; nodes.len()];
    let roots: Vec<usize> = (0..f.len()).filter(|&x| f.parent[x].is_none()).map(|x| copy[x][&f.vmap[x]]).collect();
    for s in roots.into_iter().chain(0..nodes.len()) {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            for &(y, link) in &adj[x] {
                if seen[y] {
                    continue;
                }
                seen[y] = true;
                let link = match link {
                    HostLink::Collapsed => HostLink::Collapsed,
                    HostLink::Edge(e, _) => HostLink::Edge(e, g.edge(e).tail == nodes[y]),
                };
                forest.set_parent(y, x, link);
                queue.push_back(y);
            }
        }
    }
    Ok(LiftedForest { forest, copy })
}

/// Which split copy of a portal an aux endpoint is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum AuxSlot {
    /// Edges whose host endpoint is the portal itself.
    Root,
    /// Edges reaching the portal through the piece with this smallest tree edge.
    Piece(EdgeId),
}

/// The split view of the routed graph used under the spanner: each portal is
/// split by the piece of T its routed edges come through; tree-path edges
/// are left out.
#[derive(Debug, Clone)]
pub struct AuxGraph {
    pub graph: DynGraph,
    pub node: Vec<(VertexId, AuxSlot)>,
    /// The routed edge behind each aux edge.
    pub key: Vec<PrgKey>,
}

impl PortalRoutedGraph {
    pub fn aux_view(&self) -> AuxGraph {
        // pieces of T split at portals, named by their smallest edge
        let tree_edges: Vec<EdgeId> = self.tree.in_tree.iter().copied().collect();
        let idx: BTreeMap<EdgeId, usize> = tree_edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut dsu = Dsu::new(tree_edges.len());
        for v in 0..self.portal.len() {
            if self.portal[v] {
                continue;
            }
            let mut it = self.tree.adj[v].iter();
            if let Some(&(_, first)) = it.next() {
                for &(_, e) in it {
                    dsu.union(idx[&first], idx[&e]);
                }
            }
        }
        let mut name: BTreeMap<usize, EdgeId> = BTreeMap::new();
        for (i, &e) in tree_edges.iter().enumerate() {
            let r = dsu.find(i);
            let cur = name.entry(r).or_insert(e);
            *cur = (*cur).min(e);
        }
        let mut piece_of = |e: EdgeId| name[&dsu.find(idx[&e])];

        let mut ids: BTreeMap<(VertexId, AuxSlot), usize> = BTreeMap::new();
        let mut node = Vec::new();
        let mut graph = DynGraph::new();
        let mut key = Vec::new();
        for (&k, pe) in &self.edges {
            let PrgKey::Routed(e) = k else { continue };
            // the image runs a → tail, e, head → b
            let tail_pos = pe.image.iter().position(|&(x, _)| x == e).expect("edge on its image");
            let slot_a = if tail_pos == 0 { AuxSlot::Root } else { AuxSlot::Piece(piece_of(pe.image[0].0)) };
            let slot_b = if tail_pos + 1 == pe.image.len() {
                AuxSlot::Root
            } else {
                AuxSlot::Piece(piece_of(pe.image[pe.image.len() - 1].0))
            };
            let mut id = |v: VertexId, s: AuxSlot, graph: &mut DynGraph| {
                *ids.entry((v, s)).or_insert_with(|| {
                    node.push((v, s));
                    graph.add_vertex()
                })
            };
            let x = id(pe.a, slot_a, &mut graph);
            let y = id(pe.b, slot_b, &mut graph);
            let mut edge = Edge::new(x, y);
            edge.length = pe.len;
            edge.gradient = pe.grad;
            graph.add_edge(edge).expect("aux vertices exist");
            key.push(k);
        }
        AuxGraph { graph, node, key }
    }
}

/// Best cycle of the form e ⊕ rev(Π(e)) over edges outside the spanner.
/// `embed[e]` is the signed path tail→head in the spanner for such edges.
pub fn best_spanner_cycle(
    g: &DynGraph,
    in_spanner: &[bool],
    embed: &[Option<Vec<(EdgeId, f64)>>],
) -> Option<CycleAnswer> {
    let mut best: Option<(f64, Vec<(EdgeId, f64)>)> = None;
    for (e, _) in g.edges() {
        if in_spanner.get(e).copied().unwrap_or(false) {
            continue;
        }
        let Some(Some(path)) = embed.get(e) else { continue };
        let mut cyc = vec![(e, 1.0)];
        cyc.extend(path.iter().map(|&(x, s)| (x, -s)));
        let mut c = Circulation::new();
        for &(x, s) in &cyc {
            c.add(x, s);
        }
        if c.is_empty() {
            continue;
        }
        let r = c.ratio(g);
        let (r, s) = if r <= 0.0 { (r, 1.0) } else { (-r, -1.0) };
        if best.as_ref().is_none_or(|b| r < b.0) {
            best = Some((r, c.entries.iter().map(|(&x, &v)| (x, s * v)).collect()));
        }
    }
    best.map(|(_, c)| CycleAnswer::from_explicit(g, c))
}
