//! Dynamic multigraph, circulations, flat forests and the BST degree reduction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type VertexId = usize;
pub type EdgeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown id {0}")]
    UnknownId(usize),
    #[error("degree bound {bound} violated at vertex {vertex}")]
    DegreeBoundViolated { vertex: VertexId, bound: usize },
    #[error("negative length {0}")]
    NegativeLength(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub tail: VertexId,
    pub head: VertexId,
    pub length: f64,
    pub gradient: f64,
    pub capacity: f64,
    pub cost: f64,
}

impl Edge {
    pub fn new(tail: VertexId, head: VertexId) -> Self {
        Edge { tail, head, length: 1.0, gradient: 0.0, capacity: 1.0, cost: 0.0 }
    }

    pub fn other(&self, v: VertexId) -> VertexId {
        if self.tail == v {
            self.head
        } else {
            self.tail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Update {
    InsertVertex,
    InsertEdge(Edge),
    DeleteEdge(EdgeId),
    /// Moves the `v`-endpoint of every listed edge to a fresh vertex.
    SplitVertex { v: VertexId, moved: Vec<EdgeId> },
    SetLength { e: EdgeId, length: f64 },
    SetGradient { e: EdgeId, gradient: f64 },
}

/// What an update created, if anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Created {
    Nothing,
    Vertex(VertexId),
    Edge(EdgeId),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynGraph {
    vertex_count: usize,
    edges: Vec<Edge>,
    alive: Vec<bool>,
    degree: Vec<usize>,
    journal: Vec<Update>,
    degree_bound: Option<usize>,
    no_journal: bool,
}

impl DynGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vertices(n: usize) -> Self {
        let mut g = Self::new();
        for _ in 0..n {
            g.add_vertex();
        }
        g
    }

    pub fn set_degree_bound(&mut self, bound: Option<usize>) {
        self.degree_bound = bound;
    }

    /// Turns journaling off for scratch graphs that are updated often.
    pub fn set_journaling(&mut self, on: bool) {
        self.no_journal = !on;
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Number of edge ids ever handed out (live and deleted).
    pub fn edge_slots(&self) -> usize {
        self.edges.len()
    }

    pub fn live_edge_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    pub fn is_live(&self, e: EdgeId) -> bool {
        self.alive.get(e).copied().unwrap_or(false)
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e]
    }

    pub fn try_edge(&self, e: EdgeId) -> Result<&Edge, GraphError> {
        if self.is_live(e) {
            Ok(&self.edges[e])
        } else {
            Err(GraphError::UnknownId(e))
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> + '_ {
        self.edges.iter().enumerate().filter(move |(i, _)| self.alive[*i])
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.degree[v]
    }

    pub fn max_degree(&self) -> usize {
        self.degree.iter().copied().max().unwrap_or(0)
    }

    pub fn journal(&self) -> &[Update] {
        &self.journal
    }

    /// Live incidence lists, self-loops listed once.
    pub fn incidence(&self) -> Vec<Vec<EdgeId>> {
        let mut inc = vec![Vec::new(); self.vertex_count];
        for (id, e) in self.edges() {
            inc[e.tail].push(id);
            if e.head != e.tail {
                inc[e.head].push(id);
            }
        }
        inc
    }

    pub fn add_vertex(&mut self) -> VertexId {
        match self.apply_update(Update::InsertVertex) {
            Ok(Created::Vertex(v)) => v,
            _ => unreachable!(),
        }
    }

    pub fn add_edge(&mut self, edge: Edge) -> Result<EdgeId, GraphError> {
        match self.apply_update(Update::InsertEdge(edge))? {
            Created::Edge(e) => Ok(e),
            _ => unreachable!(),
        }
    }

    pub fn apply_update(&mut self, u: Update) -> Result<Created, GraphError> {
        let created = match &u {
            Update::InsertVertex => {
                self.vertex_count += 1;
                self.degree.push(0);
                Created::Vertex(self.vertex_count - 1)
            }
            Update::InsertEdge(edge) => {
                self.check_vertex(edge.tail)?;
                self.check_vertex(edge.head)?;
                if edge.length < 0.0 {
                    return Err(GraphError::NegativeLength(edge.length));
                }
                if let Some(bound) = self.degree_bound {
                    for v in [edge.tail, edge.head] {
                        let extra = if edge.tail == edge.head { 2 } else { 1 };
                        if self.degree[v] + extra > bound {
                            return Err(GraphError::DegreeBoundViolated { vertex: v, bound });
                        }
                    }
                }
                self.degree[edge.tail] += 1;
                self.degree[edge.head] += 1;
                self.edges.push(*edge);
                self.alive.push(true);
                Created::Edge(self.edges.len() - 1)
            }
            Update::DeleteEdge(e) => {
                let edge = *self.try_edge(*e)?;
                self.alive[*e] = false;
                self.degree[edge.tail] -= 1;
                self.degree[edge.head] -= 1;
                Created::Nothing
            }
            Update::SplitVertex { v, moved } => {
                self.check_vertex(*v)?;
                for &e in moved {
                    let edge = self.try_edge(e)?;
                    if edge.tail != *v && edge.head != *v {
                        return Err(GraphError::UnknownId(e));
                    }
                }
                let w = self.vertex_count;
                self.vertex_count += 1;
                self.degree.push(0);
                for &e in moved {
                    let edge = &mut self.edges[e];
                    if edge.tail == *v {
                        edge.tail = w;
                        self.degree[*v] -= 1;
                        self.degree[w] += 1;
                    }
                    if edge.head == *v {
                        edge.head = w;
                        self.degree[*v] -= 1;
                        self.degree[w] += 1;
                    }
                }
                Created::Vertex(w)
            }
            Update::SetLength { e, length } => {
                self.try_edge(*e)?;
                if *length < 0.0 {
                    return Err(GraphError::NegativeLength(*length));
                }
                self.edges[*e].length = *length;
                Created::Nothing
            }
            Update::SetGradient { e, gradient } => {
                self.try_edge(*e)?;
                self.edges[*e].gradient = *gradient;
                Created::Nothing
            }
        };
        if !self.no_journal {
            self.journal.push(u);
        }
        Ok(created)
    }

    fn check_vertex(&self, v: VertexId) -> Result<(), GraphError> {
        if v < self.vertex_count {
            Ok(())
        } else {
            Err(GraphError::UnknownId(v))
        }
    }

    /// Re-executes the journal on a fresh graph.
    pub fn replay(journal: &[Update]) -> Result<DynGraph, GraphError> {
        let mut g = DynGraph::new();
        for u in journal {
            g.apply_update(u.clone())?;
        }
        Ok(g)
    }

    /// Same graph, same ids, empty journal. Used for derived graphs.
    pub fn without_journal(&self) -> DynGraph {
        let mut g = self.clone();
        g.journal.clear();
        g
    }

    /// Bit-exact comparison of vertex set and live edges.
    pub fn same_structure(&self, other: &DynGraph) -> bool {
        self.vertex_count == other.vertex_count
            && self.edges.len() == other.edges.len()
            && self.alive == other.alive
            && self
                .edges()
                .all(|(i, e)| {
                    let o = &other.edges[i];
                    e.tail == o.tail
                        && e.head == o.head
                        && e.length.to_bits() == o.length.to_bits()
                        && e.gradient.to_bits() == o.gradient.to_bits()
                        && e.capacity.to_bits() == o.capacity.to_bits()
                        && e.cost.to_bits() == o.cost.to_bits()
                })
    }

    /// Undirected connected components, as a label per vertex.
    pub fn components(&self) -> Vec<usize> {
        let mut dsu = Dsu::new(self.vertex_count);
        for (_, e) in self.edges() {
            dsu.union(e.tail, e.head);
        }
        (0..self.vertex_count).map(|v| dsu.find(v)).collect()
    }
}

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct Dsu {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl Dsu {
    pub fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn push(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.size.push(1);
        self.parent.len() - 1
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false if already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

/// Sparse signed flow on edge ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Circulation {
    pub entries: BTreeMap<EdgeId, f64>,
}

impl Circulation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, e: EdgeId, x: f64) {
        let v = self.entries.entry(e).or_insert(0.0);
        *v += x;
        if *v == 0.0 {
            self.entries.remove(&e);
        }
    }

    pub fn get(&self, e: EdgeId) -> f64 {
        self.entries.get(&e).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Circulation {
        Circulation { entries: self.entries.iter().map(|(&e, &x)| (e, x * s)).collect() }
    }

    pub fn plus(&self, other: &Circulation) -> Circulation {
        let mut out = self.clone();
        for (&e, &x) in &other.entries {
            out.add(e, x);
        }
        out
    }

    pub fn norm_inf(&self) -> f64 {
        self.entries.values().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// ⟨g, c⟩.
    pub fn gradient_pairing(&self, g: &DynGraph) -> f64 {
        self.entries.iter().map(|(&e, &x)| g.edge(e).gradient * x).sum()
    }

    /// ‖Lc‖₁.
    pub fn weighted_length(&self, g: &DynGraph) -> f64 {
        self.entries.iter().map(|(&e, &x)| g.edge(e).length * x.abs()).sum()
    }

    pub fn ratio(&self, g: &DynGraph) -> f64 {
        self.gradient_pairing(g) / self.weighted_length(g)
    }

    pub fn cost(&self, g: &DynGraph) -> f64 {
        self.entries.iter().map(|(&e, &x)| g.edge(e).cost * x).sum()
    }
}

/// Returns the first vertex whose net flow exceeds `1e-9 * ‖c‖∞`.
pub fn circulation_check(g: &DynGraph, c: &Circulation) -> Result<Option<VertexId>, GraphError> {
    let mut net = vec![0.0; g.vertex_count()];
    for (&e, &x) in &c.entries {
        let edge = g.try_edge(e)?;
        net[edge.tail] -= x;
        net[edge.head] += x;
    }
    let tol = 1e-9 * c.norm_inf().max(f64::MIN_POSITIVE);
    Ok(net.iter().position(|x| x.abs() > tol))
}

/// Image of a forest edge in the host graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HostLink {
    /// Both endpoints map to the same host vertex.
    Collapsed,
    /// Host edge, `true` if child→parent follows the host orientation tail→head.
    Edge(EdgeId, bool),
}

/// Rooted forest with a vertex map into a host graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlatForest {
    pub parent: Vec<Option<usize>>,
    pub link: Vec<HostLink>,
    pub vmap: Vec<VertexId>,
}

impl FlatForest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.vmap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vmap.is_empty()
    }

    pub fn add_node(&mut self, host: VertexId) -> usize {
        self.parent.push(None);
        self.link.push(HostLink::Collapsed);
        self.vmap.push(host);
        self.vmap.len() - 1
    }

    pub fn set_parent(&mut self, child: usize, parent: usize, link: HostLink) {
        self.parent[child] = Some(parent);
        self.link[child] = link;
    }

    pub fn root(&self, mut x: usize) -> usize {
        while let Some(p) = self.parent[x] {
            x = p;
        }
        x
    }

    pub fn depth(&self, mut x: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent[x] {
            x = p;
            d += 1;
        }
        d
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (x, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                ch[*p].push(x);
            }
        }
        ch
    }

    /// Nodes on the tree path a..b, or None when in different trees.
    pub fn path_nodes(&self, a: usize, b: usize) -> Option<Vec<usize>> {
        let (mut x, mut y) = (a, b);
        let (mut dx, mut dy) = (self.depth(x), self.depth(y));
        let mut left = vec![x];
        let mut right = vec![y];
        while dx > dy {
            x = self.parent[x]?;
            dx -= 1;
            left.push(x);
        }
        while dy > dx {
            y = self.parent[y]?;
            dy -= 1;
            right.push(y);
        }
        while x != y {
            x = self.parent[x]?;
            y = self.parent[y]?;
            left.push(x);
            right.push(y);
        }
        right.pop();
        right.reverse();
        left.extend(right);
        Some(left)
    }

    /// Host circulation-style flow of one unit along the tree path a→b.
    pub fn path_flow(&self, a: usize, b: usize) -> Option<Vec<(EdgeId, f64)>> {
        let nodes = self.path_nodes(a, b)?;
        let mut out = Vec::new();
        for w in nodes.windows(2) {
            let (x, y) = (w[0], w[1]);
            // the edge is stored on the child
            let (child, upward) = if self.parent[x] == Some(y) { (x, true) } else { (y, false) };
            if let HostLink::Edge(e, child_to_parent_fwd) = self.link[child] {
                let sign = if upward == child_to_parent_fwd { 1.0 } else { -1.0 };
                out.push((e, sign));
            }
        }
        Some(out)
    }

    /// Checks the flat-embedding condition against `host`.
    pub fn check_flat(&self, host: &DynGraph) -> Result<(), usize> {
        for x in 0..self.len() {
            if let Some(p) = self.parent[x] {
                let ok = match self.link[x] {
                    HostLink::Collapsed => self.vmap[x] == self.vmap[p],
                    HostLink::Edge(e, fwd) => {
                        host.is_live(e) && {
                            let ed = host.edge(e);
                            let (a, b) = if fwd { (ed.tail, ed.head) } else { (ed.head, ed.tail) };
                            a == self.vmap[x] && b == self.vmap[p]
                        }
                    }
                };
                if !ok {
                    return Err(x);
                }
            }
        }
        Ok(())
    }

    /// Preimage counts per host vertex and per host edge.
    pub fn congestion(&self, host: &DynGraph) -> (Vec<usize>, BTreeMap<EdgeId, usize>) {
        let mut vc = vec![0; host.vertex_count()];
        let mut ec = BTreeMap::new();
        for x in 0..self.len() {
            vc[self.vmap[x]] += 1;
            if let (Some(_), HostLink::Edge(e, _)) = (self.parent[x], self.link[x]) {
                *ec.entry(e).or_insert(0) += 1;
            }
        }
        (vc, ec)
    }
}

/// Edits to the reduced graph H emitted per G-update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HEdit {
    AddNode(usize),
    InsertEdge(EdgeId),
    DeleteEdge(EdgeId),
}

#[derive(Debug, Clone, Default)]
struct VertexTree {
    /// Heap-indexed nodes (slot 0 is the root). Leaves are the last `deg` slots.
    nodes: Vec<usize>,
    /// G-edge owned by each leaf slot.
    owner: Vec<Option<EdgeId>>,
    /// H edge from slot i to its parent.
    up: Vec<Option<EdgeId>>,
}

/// Maintains the degree-3 graph H and the forest of per-vertex search trees.
///
/// Each vertex tree is heap-shaped: with d ≥ 1 incident edges it has 2d−1
/// slots, and slots d−1..2d−2 are the leaves.
#[derive(Debug, Clone, Default)]
pub struct LowDeg {
    pub h: DynGraph,
    pub forest: FlatForest,
    trees: Vec<VertexTree>,
    free_nodes: Vec<usize>,
    /// For each G-edge: H edge, leaf node at tail, leaf node at head.
    g_edges: BTreeMap<EdgeId, (EdgeId, usize, usize)>,
}

impl LowDeg {
    pub fn new() -> Self {
        Self::default()
    }

    fn fresh_node(&mut self, v: VertexId, edits: &mut Vec<HEdit>) -> usize {
        if let Some(x) = self.free_nodes.pop() {
            self.forest.vmap[x] = v;
            self.forest.parent[x] = None;
            self.forest.link[x] = HostLink::Collapsed;
            x
        } else {
            let x = self.h.add_vertex();
            self.forest.add_node(v);
            edits.push(HEdit::AddNode(x));
            x
        }
    }

    pub fn add_vertex(&mut self) -> (VertexId, Vec<HEdit>) {
        let v = self.trees.len();
        let mut edits = Vec::new();
        let x = self.fresh_node(v, &mut edits);
        self.trees.push(VertexTree { nodes: vec![x], owner: vec![None], up: vec![None] });
        (v, edits)
    }

    fn deg(&self, v: VertexId) -> usize {
        let t = &self.trees[v];
        if t.owner.len() == 1 && t.owner[0].is_none() {
            0
        } else {
            t.nodes.len().div_ceil(2)
        }
    }

    fn link_slot(&mut self, v: VertexId, slot: usize, edits: &mut Vec<HEdit>) {
        let p = (slot - 1) / 2;
        let (x, y) = (self.trees[v].nodes[slot], self.trees[v].nodes[p]);
        let mut e = Edge::new(x, y);
        e.length = 0.0;
        let id = self.h.add_edge(e).expect("live nodes");
        edits.push(HEdit::InsertEdge(id));
        self.trees[v].up[slot] = Some(id);
        self.forest.set_parent(x, y, HostLink::Collapsed);
    }

    fn unlink_slot(&mut self, v: VertexId, slot: usize, edits: &mut Vec<HEdit>) {
        if let Some(id) = self.trees[v].up[slot].take() {
            self.h.apply_update(Update::DeleteEdge(id)).expect("live edge");
            edits.push(HEdit::DeleteEdge(id));
        }
        let x = self.trees[v].nodes[slot];
        self.forest.parent[x] = None;
    }

    /// Reserves a leaf slot at `v` for a new edge.
    fn grow(&mut self, v: VertexId, edits: &mut Vec<HEdit>) -> usize {
        let d = self.deg(v);
        if d == 0 {
            return 0;
        }
        // leaf at slot d-1 becomes internal with children 2d-1 (old edge) and 2d (new)
        let old_slot = d - 1;
        let old_owner = self.trees[v].owner[old_slot].take();
        for _ in 0..2 {
            let x = self.fresh_node(v, edits);
            let t = &mut self.trees[v];
            t.nodes.push(x);
            t.owner.push(None);
            t.up.push(None);
        }
        let (a, b) = (2 * d - 1, 2 * d);
        self.link_slot(v, a, edits);
        self.link_slot(v, b, edits);
        if let Some(ge) = old_owner {
            self.move_owner(ge, v, old_slot, a, edits);
        }
        b
    }

    /// Moves the G-edge `ge` at vertex `v` from leaf slot `from` to `to`.
    fn move_owner(&mut self, ge: EdgeId, v: VertexId, from: usize, to: usize, edits: &mut Vec<HEdit>) {
        let old_node = self.trees[v].nodes[from];
        let new_node = self.trees[v].nodes[to];
        self.trees[v].owner[from] = None;
        self.trees[v].owner[to] = Some(ge);
        let Some(&(hid, mut tn, mut hn)) = self.g_edges.get(&ge) else {
            return;
        };
        self.h.apply_update(Update::DeleteEdge(hid)).expect("live edge");
        edits.push(HEdit::DeleteEdge(hid));
        if tn == old_node {
            tn = new_node;
        } else if hn == old_node {
            hn = new_node;
        }
        let id = self.h.add_edge(Edge::new(tn, hn)).expect("live nodes");
        edits.push(HEdit::InsertEdge(id));
        self.g_edges.insert(ge, (id, tn, hn));
    }

    pub fn insert_edge(&mut self, ge: EdgeId, tail: VertexId, head: VertexId) -> Vec<HEdit> {
        let mut edits = Vec::new();
        let st = self.grow(tail, &mut edits);
        self.trees[tail].owner[st] = Some(ge);
        let sh = self.grow(head, &mut edits);
        self.trees[head].owner[sh] = Some(ge);
        let owned: Vec<usize> = self.trees[tail]
            .owner
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == Some(ge))
            .map(|(i, _)| i)
            .collect();
        let tn = self.trees[tail].nodes[owned[0]];
        let hn = if tail == head { self.trees[head].nodes[owned[1]] } else { self.trees[head].nodes[sh] };
        let id = self.h.add_edge(Edge::new(tn, hn)).expect("live nodes");
        edits.push(HEdit::InsertEdge(id));
        self.g_edges.insert(ge, (id, tn, hn));
        edits
    }

    /// Frees the empty leaf `slot` at `v` by moving the last leaf into it and
    /// collapsing the last sibling pair into their parent.
    fn shrink(&mut self, v: VertexId, slot: usize, edits: &mut Vec<HEdit>) {
        let d = self.trees[v].nodes.len().div_ceil(2);
        if d == 1 {
            return;
        }
        let last = 2 * d - 2;
        let sib = last - 1;
        let parent = d - 2;
        if slot != last {
            if let Some(ge) = self.trees[v].owner[last] {
                self.move_owner(ge, v, last, slot, edits);
            }
        }
        self.unlink_slot(v, last, edits);
        self.unlink_slot(v, sib, edits);
        if let Some(ge) = self.trees[v].owner[sib] {
            self.move_owner(ge, v, sib, parent, edits);
        }
        for _ in 0..2 {
            let t = &mut self.trees[v];
            let x = t.nodes.pop().unwrap();
            t.owner.pop();
            t.up.pop();
            self.free_nodes.push(x);
        }
    }

    pub fn delete_edge(&mut self, ge: EdgeId) -> Vec<HEdit> {
        let mut edits = Vec::new();
        let Some((hid, tn, hn)) = self.g_edges.remove(&ge) else {
            return edits;
        };
        self.h.apply_update(Update::DeleteEdge(hid)).expect("live edge");
        edits.push(HEdit::DeleteEdge(hid));
        for node in [tn, hn] {
            let v = self.forest.vmap[node];
            if let Some(s) = self.trees[v].owner.iter().position(|o| *o == Some(ge)) {
                self.trees[v].owner[s] = None;
                self.shrink(v, s, &mut edits);
            }
        }
        edits
    }

    /// Owner slots of a G-edge as H nodes (tail side, head side).
    pub fn leaves_of(&self, ge: EdgeId) -> Option<(usize, usize)> {
        let (hid, _, _) = self.g_edges.get(&ge)?;
        let e = self.h.edge(*hid);
        Some((e.tail, e.head))
    }

    pub fn tree_nodes(&self, v: VertexId) -> &[usize] {
        &self.trees[v].nodes
    }

    pub fn tree_edge_count(&self) -> usize {
        self.trees.iter().map(|t| t.up.iter().filter(|u| u.is_some()).count()).sum()
    }
}

/// Builds H and F from scratch by inserting the live edges of `g` in id order.
pub fn degree_reduce(g: &DynGraph) -> (DynGraph, FlatForest) {
    let mut ld = LowDeg::new();
    for _ in 0..g.vertex_count() {
        ld.add_vertex();
    }
    for (id, e) in g.edges() {
        ld.insert_edge(id, e.tail, e.head);
    }
    (ld.h, ld.forest)
}
