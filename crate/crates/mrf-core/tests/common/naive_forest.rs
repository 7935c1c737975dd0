//! Explicit forest with per-edge state and BFS paths.

use std::collections::{BTreeMap, VecDeque};

#[derive(Debug, Clone)]
pub struct NaiveEdge {
    pub tail: usize,
    pub head: usize,
    pub g: f64,
    pub len: f64,
    pub flow: f64,
    pub s: f64,
    pub reported: bool,
}

#[derive(Debug, Clone)]
pub struct NaiveForest {
    pub n: usize,
    pub eps: f64,
    pub edges: BTreeMap<usize, NaiveEdge>,
    pub pending: Vec<usize>,
}

impl NaiveForest {
    pub fn new(n: usize, eps: f64) -> Self {
        NaiveForest { n, eps, edges: BTreeMap::new(), pending: Vec::new() }
    }

    /// Path u→v as (edge key, sign), or None if disconnected.
    pub fn path(&self, u: usize, v: usize) -> Option<Vec<(usize, f64)>> {
        let mut prev: Vec<Option<(usize, usize, f64)>> = vec![None; self.n];
        let mut seen = vec![false; self.n];
        seen[u] = true;
        let mut q = VecDeque::from([u]);
        while let Some(x) = q.pop_front() {
            for (&k, e) in &self.edges {
                let (y, sign) = if e.tail == x {
                    (e.head, 1.0)
                } else if e.head == x {
                    (e.tail, -1.0)
                } else {
                    continue;
                };
                if !seen[y] {
                    seen[y] = true;
                    prev[y] = Some((x, k, sign));
                    q.push_back(y);
                }
            }
        }
        if !seen[v] {
            return None;
        }
        let mut out = Vec::new();
        let mut y = v;
        while y != u {
            let (x, k, s) = prev[y].unwrap();
            out.push((k, s));
            y = x;
        }
        out.reverse();
        Some(out)
    }

    pub fn connected(&self, u: usize, v: usize) -> bool {
        self.path(u, v).is_some()
    }

    pub fn link(&mut self, key: usize, u: usize, v: usize, g: f64, len: f64) -> bool {
        if self.connected(u, v) {
            return false;
        }
        self.edges.insert(key, NaiveEdge { tail: u, head: v, g, len, flow: 0.0, s: 0.0, reported: false });
        true
    }

    pub fn cut(&mut self, key: usize) {
        self.edges.remove(&key);
        self.pending.retain(|&k| k != key);
    }

    pub fn path_gradient(&self, u: usize, v: usize) -> Option<f64> {
        Some(self.path(u, v)?.iter().map(|&(k, s)| s * self.edges[&k].g).sum())
    }

    pub fn path_length(&self, u: usize, v: usize) -> Option<f64> {
        Some(self.path(u, v)?.iter().map(|&(k, _)| self.edges[&k].len).sum())
    }

    pub fn add_flow(&mut self, u: usize, v: usize, eta: f64) {
        let eps = self.eps;
        for (k, s) in self.path(u, v).unwrap() {
            let e = self.edges.get_mut(&k).unwrap();
            e.flow += s * eta;
            e.s += eta.abs();
            if !e.reported && e.len * e.s >= eps {
                e.reported = true;
                self.pending.push(k);
            }
        }
    }

    pub fn detect(&mut self) -> Vec<usize> {
        let mut out = std::mem::take(&mut self.pending);
        out.sort_unstable();
        for &k in &out {
            let e = self.edges.get_mut(&k).unwrap();
            e.reported = false;
            e.s = 0.0;
        }
        out
    }
}
