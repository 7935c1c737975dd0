//! Brute-force min-ratio cycle by listing every simple cycle.

use mrf_core::DynGraph;

/// All simple cycles as (edge, sign) lists, one orientation each.
pub fn simple_cycles(g: &DynGraph) -> Vec<Vec<(usize, f64)>> {
    let n = g.vertex_count();
    let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
    let mut out = Vec::new();
    for (id, e) in g.edges() {
        if e.tail == e.head {
            out.push(vec![(id, 1.0)]);
            continue;
        }
        adj[e.tail].push((e.head, id, 1.0));
        adj[e.head].push((e.tail, id, -1.0));
    }
    // rooted at the smallest vertex; first edge id below last edge id fixes the orientation
    for s in 0..n {
        let mut on = vec![false; n];
        on[s] = true;
        let mut path = Vec::new();
        walk(s, s, &adj, &mut on, &mut path, &mut out);
    }
    out
}

fn walk(
    s: usize,
    x: usize,
    adj: &[Vec<(usize, usize, f64)>],
    on: &mut [bool],
    path: &mut Vec<(usize, f64)>,
    out: &mut Vec<Vec<(usize, f64)>>,
) {
    for &(y, e, sign) in &adj[x] {
        if y < s || path.iter().any(|&(p, _)| p == e) {
            continue;
        }
        if y == s {
            if !path.is_empty() && path[0].0 < e {
                let mut c = path.clone();
                c.push((e, sign));
                out.push(c);
            }
            continue;
        }
        if on[y] {
            continue;
        }
        on[y] = true;
        path.push((e, sign));
        walk(s, y, adj, on, path, out);
        path.pop();
        on[y] = false;
    }
}

/// Minimum ratio over both orientations of every simple cycle.
pub fn brute_min_ratio(g: &DynGraph) -> Option<f64> {
    let mut best: Option<f64> = None;
    for c in simple_cycles(g) {
        let num: f64 = c.iter().map(|&(e, s)| s * g.edge(e).gradient).sum();
        let den: f64 = c.iter().map(|&(e, _)| g.edge(e).length).sum();
        for r in [num / den, -num / den] {
            if best.is_none_or(|b| r < b) {
                best = Some(r);
            }
        }
    }
    best
}
