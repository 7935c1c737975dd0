//! Small HRGs with overlapping clusters, and an exhaustive monotone-cycle
//! enumerator over their abstraction.

use std::collections::{BTreeMap, BTreeSet};

use mrf_core::cover::tree_for;
use mrf_core::hrg::{AbstractedHrg, Hrg, PathFlow, RoutingCirculation};
use mrf_core::{DynGraph, Edge};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_connected(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> DynGraph {
    let mut g = DynGraph::with_vertices(n);
    for v in 1..n {
        let mut e = Edge::new(rng.gen_range(0..v), v);
        e.length = rng.gen_range(1..=3) as f64;
        e.gradient = rng.gen_range(-3.0..3.0);
        g.add_edge(e).unwrap();
    }
    for _ in 0..extra {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b {
            let mut e = Edge::new(a, b);
            e.length = rng.gen_range(1..=3) as f64;
            e.gradient = rng.gen_range(-3.0..3.0);
            g.add_edge(e).unwrap();
        }
    }
    g
}

fn bfs_prefix(g: &DynGraph, inc: &[Vec<usize>], s: usize, size: usize) -> Vec<usize> {
    let mut seen = vec![false; g.vertex_count()];
    let mut order = vec![s];
    seen[s] = true;
    let mut i = 0;
    while i < order.len() && order.len() < size {
        let x = order[i];
        i += 1;
        for &e in &inc[x] {
            let y = g.edge(e).other(x);
            if !seen[y] && order.len() < size {
                seen[y] = true;
                order.push(y);
            }
        }
    }
    order.sort();
    order
}

/// A κ=3 HRG on a connected graph: level-1 clusters are random overlapping
/// BFS prefixes covering every vertex, level 2 is the whole graph.
pub fn toy_hrg(seed: u64, n: usize) -> (DynGraph, Hrg) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_connected(&mut rng, n, n / 2);
    let inc = g.incidence();
    let mut level1 = Vec::new();
    let mut covered = vec![0usize; n];
    while covered.iter().any(|&c| c == 0) || level1.len() < 3 {
        let s = rng.gen_range(0..n);
        let size = rng.gen_range(1..=n.min(5));
        let vs = bfs_prefix(&g, &inc, s, size);
        if vs.iter().any(|&v| covered[v] >= 3) {
            continue;
        }
        for &v in &vs {
            covered[v] += 1;
        }
        level1.push(tree_for(&g, &inc, vs, s));
    }
    let all: Vec<usize> = (0..n).collect();
    let top = vec![tree_for(&g, &inc, all, 0)];
    let hrg = Hrg::from_clusters(&g, 3, 1.0, 8.0, vec![level1, top]);
    (g, hrg)
}

/// All increasing paths (as abstract edge lists) starting at `x`.
pub fn rising_paths(h: &AbstractedHrg, x: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for (i, e) in h.edges.iter().enumerate() {
        if e.from == x {
            for rest in rising_paths(h, e.to) {
                let mut p = vec![i];
                p.extend(rest);
                out.push(p);
            }
        }
    }
    out
}

fn nodes(h: &AbstractedHrg, start: usize, p: &[usize]) -> Vec<usize> {
    let mut v = vec![start];
    v.extend(p.iter().map(|&e| h.edges[e].to));
    v
}

/// A monotone cycle: up path, down path (as the rising path it reverses) and
/// whether it uses the base edge from the bottom of `down` to the bottom of `up`.
#[derive(Debug, Clone)]
pub struct EnumCycle {
    pub up: Vec<usize>,
    pub down_rising: Vec<usize>,
    pub base: bool,
}

/// Every monotone cycle of the abstraction with extra edge (u, v).
pub fn monotone_cycles(h: &AbstractedHrg, u: usize, v: usize) -> Vec<EnumCycle> {
    let mut out = Vec::new();
    // through the base edge: u rises to y, v rises to y, disjoint otherwise
    for p in rising_paths(h, u) {
        for q in rising_paths(h, v) {
            if p.is_empty() || q.is_empty() {
                continue;
            }
            let (np, nq) = (nodes(h, u, &p), nodes(h, v, &q));
            if np.last() != nq.last() {
                continue;
            }
            let sp: BTreeSet<_> = np.iter().collect();
            if nq.iter().filter(|x| sp.contains(x)).count() == 1 {
                out.push(EnumCycle { up: p.clone(), down_rising: q.clone(), base: true });
            }
        }
    }
    // internal: two rising paths from one node w with distinct first edges
    for w in 0..h.n * h.kappa {
        let ps = rising_paths(h, w);
        for (i, p) in ps.iter().enumerate() {
            for q in &ps[i + 1..] {
                if p.is_empty() || q.is_empty() || p[0] == q[0] {
                    continue;
                }
                let (np, nq) = (nodes(h, w, p), nodes(h, w, q));
                if np.last() != nq.last() {
                    continue;
                }
                let sp: BTreeSet<_> = np.iter().collect();
                if nq.iter().filter(|x| sp.contains(x)).count() == 2 {
                    out.push(EnumCycle { up: p.clone(), down_rising: q.clone(), base: false });
                }
            }
        }
    }
    out
}

/// Random routing circulation on base edge (u, v): pairs of rising walks
/// from u and v that meet.
pub fn random_routing_circulation(
    h: &AbstractedHrg,
    rng: &mut ChaCha8Rng,
    base: usize,
    u: usize,
    v: usize,
    pairs: usize,
) -> Option<RoutingCirculation> {
    let walk = |rng: &mut ChaCha8Rng, x: usize, steps: usize| -> Option<(Vec<usize>, usize)> {
        let mut at = x;
        let mut p = Vec::new();
        for _ in 0..steps {
            let outs: Vec<usize> = (0..h.edges.len()).filter(|&e| h.edges[e].from == at).collect();
            if outs.is_empty() {
                return None;
            }
            let e = outs[rng.gen_range(0..outs.len())];
            p.push(e);
            at = h.edges[e].to;
        }
        Some((p, at))
    };
    let mut paths = Vec::new();
    let mut total = 0.0;
    let mut tries = 0;
    while paths.len() < 2 * pairs && tries < 200 * pairs {
        tries += 1;
        let steps = rng.gen_range(1..h.kappa);
        let (Some((p, a)), Some((q, b))) = (walk(rng, u, steps), walk(rng, v, steps)) else {
            continue;
        };
        if a != b {
            continue;
        }
        let mass = rng.gen_range(0.1..1.0);
        total += mass;
        paths.push(PathFlow { start: u, edges: p, amount: mass });
        paths.push(PathFlow { start: v, edges: q, amount: -mass });
    }
    if paths.is_empty() {
        return None;
    }
    Some(RoutingCirculation { base, base_len: 1.0, base_grad: 0.0, u, v, base_flow: -total, paths })
}

/// Canonical ±1 pattern of an integer-valued circulation, sign-normalized.
pub fn canonical<K: Ord + Clone>(c: &BTreeMap<K, f64>) -> Vec<(K, i64)> {
    let mut v: Vec<(K, i64)> = c.iter().filter(|(_, x)| x.abs() > 1e-9).map(|(k, x)| (k.clone(), x.round() as i64)).collect();
    if v.first().is_some_and(|(_, x)| *x < 0) {
        for (_, x) in v.iter_mut() {
            *x = -*x;
        }
    }
    v
}
