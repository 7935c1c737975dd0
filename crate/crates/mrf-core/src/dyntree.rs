//! Link-cut forest with path gradient/length sums, signed path flow updates
//! and threshold detection of accumulated flow change.
//!
//! Tree edges are splay nodes of their own. An edge node's `dir` is true when
//! its tail comes before it in the in-order of its preferred path (that is,
//! the tail is the shallower endpoint), so left-to-right path sums can be
//! oriented without touching the endpoints.

use std::collections::BTreeMap;

use num_traits::Float;
use thiserror::Error;

const NIL: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DynTreeError {
    #[error("link would create a cycle")]
    WouldCreateCycle,
    #[error("not a tree edge")]
    NotATreeEdge,
    #[error("vertices are not connected")]
    NotConnected,
    #[error("unknown vertex {0}")]
    UnknownVertex(usize),
}

/// Handle to a tree edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreeEdge(pub usize);

#[derive(Debug, Clone)]
struct Node<T> {
    ch: [usize; 2],
    par: usize,
    rev: bool,
    edge: Option<EdgeData<T>>,
    sum_g: T,
    sum_len: T,
    min_key: T,
    flow_tag: T,
    s_tag: T,
}

#[derive(Debug, Clone)]
struct EdgeData<T> {
    tail: usize,
    head: usize,
    g: T,
    len: T,
    flow: T,
    /// Σ|Δ| since last report.
    s: T,
    reported: bool,
    dir: bool,
}

impl<T: Float> EdgeData<T> {
    fn key(&self, eps: T) -> T {
        if self.reported {
            T::infinity()
        } else {
            eps / self.len - self.s
        }
    }

    fn signed_g(&self) -> T {
        if self.dir {
            self.g
        } else {
            -self.g
        }
    }
}

/// Dynamic forest over vertices `0..n`.
#[derive(Debug, Clone)]
pub struct DynForestT<T> {
    nodes: Vec<Node<T>>,
    vertices: usize,
    eps: T,
    slack: T,
    by_ends: BTreeMap<(usize, usize), usize>,
    free: Vec<usize>,
    pending: Vec<usize>,
}

impl<T: Float> DynForestT<T> {
    pub fn new(n: usize, eps: T) -> Self {
        let mut f = DynForestT {
            nodes: Vec::new(),
            vertices: 0,
            eps,
            slack: T::from(1e-7).unwrap(),
            by_ends: BTreeMap::new(),
            free: Vec::new(),
            pending: Vec::new(),
        };
        for _ in 0..n {
            f.add_vertex();
        }
        f
    }

    pub fn epsilon(&self) -> T {
        self.eps
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    fn blank(edge: Option<EdgeData<T>>) -> Node<T> {
        Node {
            ch: [NIL, NIL],
            par: NIL,
            rev: false,
            edge,
            sum_g: T::zero(),
            sum_len: T::zero(),
            min_key: T::infinity(),
            flow_tag: T::zero(),
            s_tag: T::zero(),
        }
    }

    /// Vertices must be added before any edge is linked.
    pub fn add_vertex(&mut self) -> usize {
        assert!(self.by_ends.is_empty() && self.free.is_empty(), "vertices precede edges");
        assert_eq!(self.nodes.len(), self.vertices);
        self.nodes.push(Self::blank(None));
        self.vertices += 1;
        self.vertices - 1
    }

    fn is_root(&self, x: usize) -> bool {
        let p = self.nodes[x].par;
        p == NIL || (self.nodes[p].ch[0] != x && self.nodes[p].ch[1] != x)
    }

    fn pull(&mut self, x: usize) {
        let [l, r] = self.nodes[x].ch;
        let (mut g, mut len, mut key) = match &self.nodes[x].edge {
            Some(e) => (e.signed_g(), e.len, e.key(self.eps)),
            None => (T::zero(), T::zero(), T::infinity()),
        };
        for c in [l, r] {
            if c != NIL {
                let n = &self.nodes[c];
                g = g + n.sum_g;
                len = len + n.sum_len;
                key = key.min(n.min_key);
            }
        }
        let n = &mut self.nodes[x];
        n.sum_g = g;
        n.sum_len = len;
        n.min_key = key;
    }

    fn apply_rev(&mut self, x: usize) {
        if x == NIL {
            return;
        }
        let n = &mut self.nodes[x];
        n.ch.swap(0, 1);
        n.rev = !n.rev;
        n.sum_g = -n.sum_g;
        n.flow_tag = -n.flow_tag;
        if let Some(e) = &mut n.edge {
            e.dir = !e.dir;
        }
    }

    fn apply_flow(&mut self, x: usize, eta: T) {
        if x == NIL {
            return;
        }
        let n = &mut self.nodes[x];
        n.flow_tag = n.flow_tag + eta;
        if let Some(e) = &mut n.edge {
            e.flow = if e.dir { e.flow + eta } else { e.flow - eta };
        }
    }

    fn apply_s(&mut self, x: usize, a: T) {
        if x == NIL {
            return;
        }
        let n = &mut self.nodes[x];
        n.s_tag = n.s_tag + a;
        n.min_key = n.min_key - a;
        if let Some(e) = &mut n.edge {
            e.s = e.s + a;
        }
    }

    fn push(&mut self, x: usize) {
        let [l, r] = self.nodes[x].ch;
        if self.nodes[x].rev {
            self.apply_rev(l);
            self.apply_rev(r);
            self.nodes[x].rev = false;
        }
        let ft = self.nodes[x].flow_tag;
        if ft != T::zero() {
            self.apply_flow(l, ft);
            self.apply_flow(r, ft);
            self.nodes[x].flow_tag = T::zero();
        }
        let st = self.nodes[x].s_tag;
        if st != T::zero() {
            self.apply_s(l, st);
            self.apply_s(r, st);
            self.nodes[x].s_tag = T::zero();
        }
    }

    fn rotate(&mut self, x: usize) {
        let p = self.nodes[x].par;
        let g = self.nodes[p].par;
        let dx = usize::from(self.nodes[p].ch[1] == x);
        let b = self.nodes[x].ch[1 - dx];
        if !self.is_root(p) {
            let dp = usize::from(self.nodes[g].ch[1] == p);
            self.nodes[g].ch[dp] = x;
        }
        self.nodes[x].par = g;
        self.nodes[x].ch[1 - dx] = p;
        self.nodes[p].par = x;
        self.nodes[p].ch[dx] = b;
        if b != NIL {
            self.nodes[b].par = p;
        }
        self.pull(p);
        self.pull(x);
    }

    fn splay(&mut self, x: usize) {
        let mut stack = vec![x];
        let mut y = x;
        while !self.is_root(y) {
            y = self.nodes[y].par;
            stack.push(y);
        }
        while let Some(z) = stack.pop() {
            self.push(z);
        }
        while !self.is_root(x) {
            let p = self.nodes[x].par;
            if !self.is_root(p) {
                let g = self.nodes[p].par;
                let zigzig = (self.nodes[g].ch[0] == p) == (self.nodes[p].ch[0] == x);
                if zigzig {
                    self.rotate(p);
                } else {
                    self.rotate(x);
                }
            }
            self.rotate(x);
        }
    }

    fn access(&mut self, x: usize) {
        let mut last = NIL;
        let mut y = x;
        while y != NIL {
            self.splay(y);
            self.nodes[y].ch[1] = last;
            self.pull(y);
            last = y;
            y = self.nodes[y].par;
        }
        self.splay(x);
    }

    fn evert(&mut self, x: usize) {
        self.access(x);
        self.apply_rev(x);
    }

    fn find_root(&mut self, x: usize) -> usize {
        self.access(x);
        let mut y = x;
        loop {
            self.push(y);
            let l = self.nodes[y].ch[0];
            if l == NIL {
                break;
            }
            y = l;
        }
        self.splay(y);
        y
    }

    fn check_vertex(&self, v: usize) -> Result<(), DynTreeError> {
        if v < self.vertices {
            Ok(())
        } else {
            Err(DynTreeError::UnknownVertex(v))
        }
    }

    pub fn connected(&mut self, u: usize, v: usize) -> bool {
        u == v || self.find_root(u) == self.find_root(v)
    }

    /// Links `u`→`v` as a tree edge oriented tail `u`, head `v`.
    pub fn link(&mut self, u: usize, v: usize, g: T, len: T) -> Result<TreeEdge, DynTreeError> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        if self.connected(u, v) {
            return Err(DynTreeError::WouldCreateCycle);
        }
        let data = EdgeData {
            tail: u,
            head: v,
            g,
            len,
            flow: T::zero(),
            s: T::zero(),
            reported: false,
            dir: false,
        };
        let e = match self.free.pop() {
            Some(i) => {
                self.nodes[i] = Self::blank(Some(data));
                i
            }
            None => {
                self.nodes.push(Self::blank(Some(data)));
                self.nodes.len() - 1
            }
        };
        // u below e below v: the shallower endpoint is v
        self.evert(u);
        self.nodes[u].par = e;
        self.nodes[e].par = v;
        self.nodes[e].edge.as_mut().unwrap().dir = false;
        self.pull(e);
        self.by_ends.insert((u.min(v), u.max(v)), e);
        Ok(TreeEdge(e))
    }

    fn detach(&mut self, a: usize, b: usize) {
        self.evert(a);
        self.access(b);
        // b's left subtree is exactly {a}
        let l = self.nodes[b].ch[0];
        debug_assert_eq!(l, a);
        self.nodes[b].ch[0] = NIL;
        self.nodes[l].par = NIL;
        self.pull(b);
    }

    fn edge_node(&self, e: TreeEdge) -> Result<usize, DynTreeError> {
        match self.nodes.get(e.0) {
            Some(Node { edge: Some(_), .. }) if e.0 >= self.vertices => Ok(e.0),
            _ => Err(DynTreeError::NotATreeEdge),
        }
    }

    pub fn cut_edge(&mut self, e: TreeEdge) -> Result<(), DynTreeError> {
        let x = self.edge_node(e)?;
        let (u, v) = {
            let d = self.nodes[x].edge.as_ref().unwrap();
            (d.tail, d.head)
        };
        self.detach(u, x);
        self.detach(x, v);
        self.by_ends.remove(&(u.min(v), u.max(v)));
        self.pending.retain(|&p| p != x);
        self.nodes[x] = Self::blank(None);
        self.free.push(x);
        Ok(())
    }

    pub fn cut(&mut self, u: usize, v: usize) -> Result<(), DynTreeError> {
        let e = self.find_edge(u, v).ok_or(DynTreeError::NotATreeEdge)?;
        self.cut_edge(e)
    }

    pub fn find_edge(&self, u: usize, v: usize) -> Option<TreeEdge> {
        self.by_ends.get(&(u.min(v), u.max(v))).map(|&e| TreeEdge(e))
    }

    pub fn endpoints(&self, e: TreeEdge) -> Result<(usize, usize), DynTreeError> {
        let x = self.edge_node(e)?;
        let d = self.nodes[x].edge.as_ref().unwrap();
        Ok((d.tail, d.head))
    }

    pub fn edges(&self) -> Vec<TreeEdge> {
        self.by_ends.values().map(|&e| TreeEdge(e)).collect()
    }

    fn with_edge<R>(&mut self, e: TreeEdge, f: impl FnOnce(&mut EdgeData<T>) -> R) -> Result<R, DynTreeError> {
        let x = self.edge_node(e)?;
        self.access(x);
        let r = f(self.nodes[x].edge.as_mut().unwrap());
        self.pull(x);
        Ok(r)
    }

    pub fn set_gradient(&mut self, e: TreeEdge, g: T) -> Result<(), DynTreeError> {
        self.with_edge(e, |d| d.g = g)
    }

    pub fn set_length(&mut self, e: TreeEdge, len: T) -> Result<(), DynTreeError> {
        self.with_edge(e, |d| d.len = len)
    }

    pub fn set_flow(&mut self, e: TreeEdge, flow: T) -> Result<(), DynTreeError> {
        self.with_edge(e, |d| d.flow = flow)
    }

    pub fn query_flow(&mut self, e: TreeEdge) -> Result<T, DynTreeError> {
        self.with_edge(e, |d| d.flow)
    }

    pub fn gradient(&mut self, e: TreeEdge) -> Result<T, DynTreeError> {
        self.with_edge(e, |d| d.g)
    }

    pub fn length(&mut self, e: TreeEdge) -> Result<T, DynTreeError> {
        self.with_edge(e, |d| d.len)
    }

    /// Exposes the path u..v as the splay tree rooted at v.
    fn expose(&mut self, u: usize, v: usize) -> Result<(), DynTreeError> {
        self.check_vertex(u)?;
        self.check_vertex(v)?;
        if !self.connected(u, v) {
            return Err(DynTreeError::NotConnected);
        }
        self.evert(u);
        self.access(v);
        Ok(())
    }

    pub fn path_gradient(&mut self, u: usize, v: usize) -> Result<T, DynTreeError> {
        self.expose(u, v)?;
        Ok(self.nodes[v].sum_g)
    }

    pub fn path_length(&mut self, u: usize, v: usize) -> Result<T, DynTreeError> {
        self.expose(u, v)?;
        Ok(self.nodes[v].sum_len)
    }

    /// Tree edges on the path u→v with +1 when traversed tail→head.
    pub fn path_edges(&mut self, u: usize, v: usize) -> Result<Vec<(TreeEdge, T)>, DynTreeError> {
        self.expose(u, v)?;
        let mut out = Vec::new();
        self.in_order(v, &mut out);
        Ok(out)
    }

    fn in_order(&mut self, x: usize, out: &mut Vec<(TreeEdge, T)>) {
        if x == NIL {
            return;
        }
        self.push(x);
        let [l, r] = self.nodes[x].ch;
        self.in_order(l, out);
        if let Some(e) = &self.nodes[x].edge {
            out.push((TreeEdge(x), if e.dir { T::one() } else { -T::one() }));
        }
        self.in_order(r, out);
    }

    /// f(e) += η along u→v; every path edge's detect accumulator grows by |η|.
    pub fn add_flow_on_path(&mut self, u: usize, v: usize, eta: T) -> Result<(), DynTreeError> {
        if u == v {
            self.check_vertex(u)?;
            return Ok(());
        }
        self.expose(u, v)?;
        self.apply_flow(v, eta);
        self.apply_s(v, eta.abs());
        self.collect(v);
        Ok(())
    }

    fn collect(&mut self, x: usize) {
        if x == NIL || self.nodes[x].min_key > self.slack {
            return;
        }
        self.push(x);
        let eps = self.eps;
        if let Some(e) = &mut self.nodes[x].edge {
            if !e.reported && e.len * e.s >= eps {
                e.reported = true;
                self.pending.push(x);
            }
        }
        let [l, r] = self.nodes[x].ch;
        self.collect(l);
        self.collect(r);
        self.pull(x);
    }

    /// Edges whose ℓ·Σ|Δ| since their last report reached ε; resets them.
    pub fn detect(&mut self) -> Vec<TreeEdge> {
        let mut out: Vec<usize> = std::mem::take(&mut self.pending);
        out.sort_unstable();
        for &x in &out {
            self.access(x);
            let e = self.nodes[x].edge.as_mut().unwrap();
            e.reported = false;
            e.s = T::zero();
            self.pull(x);
        }
        out.into_iter().map(TreeEdge).collect()
    }
}
