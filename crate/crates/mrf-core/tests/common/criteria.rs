//! Checks shared by the per-module tests and the acceptance runner. Each
//! asserts as it goes and returns a summary for printing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use mrf_core::graph::circulation_check;
use mrf_core::hrg::{
    decompose_routing_circulation, off_tree_edge_sets, tree_cycle_in_h, AbstractedHrg, CollectionConfig, Hrg,
    RoutingCirculation,
};
use mrf_core::oracle::{exact_min_ratio, OracleError};
use mrf_core::portal::{is_branch_free, HostTree, PortalRoutedGraph, PrgUpdate, PrgKey};
use mrf_core::spanner::{LayeredSpanner, Outcome};
use mrf_core::graph::{HostLink, Update};
use mrf_core::{DynForest, DynGraph, Edge, EdgeId, FlatForest, TreeEdge};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::enumerate::brute_min_ratio;
use super::naive_forest::NaiveForest;
use super::toy_hrg::{canonical, monotone_cycles, random_connected, random_routing_circulation, toy_hrg};

// ---------------------------------------------------------------------------
// exact oracle

pub fn random_graph(rng: &mut ChaCha8Rng) -> DynGraph {
    let n = rng.gen_range(1..=8);
    let m = rng.gen_range(0..=2 * n + 2);
    let mut g = DynGraph::with_vertices(n);
    for _ in 0..m {
        let mut e = Edge::new(rng.gen_range(0..n), rng.gen_range(0..n));
        if e.tail == e.head && rng.gen_bool(0.7) {
            continue;
        }
        e.length = rng.gen_range(0.05..5.0);
        e.gradient = rng.gen_range(-4.0..4.0);
        g.add_edge(e).unwrap();
    }
    g
}

/// Exact oracle against enumeration of simple cycles on random graphs with
/// n ≤ 8. Returns how many graphs had a cycle.
pub fn oracle_ground_truth(seed: u64, graphs: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut with_cycles = 0;
    for i in 0..graphs {
        let g = random_graph(&mut rng);
        let brute = brute_min_ratio(&g);
        match exact_min_ratio(&g) {
            Ok(ans) => {
                let b = brute.expect("oracle found a cycle the enumeration missed");
                assert!((ans.ratio - b).abs() <= 1e-12 * b.abs().max(1.0), "graph {i}: {} vs {b}", ans.ratio);
                assert_eq!(circulation_check(&g, &ans.circulation).unwrap(), None);
                with_cycles += 1;
            }
            Err(OracleError::NoCycle) => assert!(brute.is_none(), "graph {i}"),
            Err(e) => panic!("graph {i}: {e}"),
        }
    }
    with_cycles
}

// ---------------------------------------------------------------------------
// HRG

type Key = (u8, usize);

/// Checks that every monotone cycle of every H^e is a fundamental cycle of
/// some collection tree. Returns how many cycles of each kind were matched.
pub fn completeness(g: &DynGraph, hrg: &Hrg) -> (usize, usize) {
    let (abs, paths) = hrg.abstracted_with_paths();
    let coll = hrg.tree_collection(CollectionConfig { cap: 1 << 20, strict: true }).unwrap();
    let (graph, pair) = off_tree_edge_sets(hrg, g);
    let mut tree_cycles: BTreeSet<Vec<(Key, i64)>> = BTreeSet::new();
    for t in &coll.trees {
        for off in graph.iter().chain(&pair) {
            if let Some((c, base)) = tree_cycle_in_h(hrg, t, off) {
                let mut m: BTreeMap<Key, f64> = c.into_iter().map(|(e, x)| ((0, e), x)).collect();
                if let Some(b) = base {
                    m.insert((1, b), 1.0);
                }
                tree_cycles.insert(canonical(&m));
            }
        }
    }
    let (mut with_base, mut internal) = (0, 0);
    let mut internal_done = false;
    for (id, e) in g.edges() {
        if e.tail == e.head {
            continue;
        }
        let (u, v) = (abs.node(1, e.tail), abs.node(1, e.head));
        for cyc in monotone_cycles(&abs, u, v) {
            if !cyc.base && internal_done {
                continue;
            }
            let mut m: BTreeMap<Key, f64> = BTreeMap::new();
            for &a in &cyc.up {
                for &(he, s) in &paths[a].h_edges {
                    *m.entry((0, he)).or_insert(0.0) += s;
                }
            }
            for &a in &cyc.down_rising {
                for &(he, s) in &paths[a].h_edges {
                    *m.entry((0, he)).or_insert(0.0) -= s;
                }
            }
            if cyc.base {
                m.insert((1, id), -1.0);
            }
            let key = canonical(&m);
            assert!(tree_cycles.contains(&key), "monotone cycle {cyc:?} is not a tree cycle");
            if cyc.base {
                with_base += 1;
            } else {
                internal += 1;
            }
        }
        internal_done = true;
    }
    (with_base, internal)
}

/// Completeness over toy HRGs with n between 4 and 12.
pub fn hrg_completeness(hrgs: u64) -> (usize, usize) {
    let (mut b, mut i) = (0, 0);
    for seed in 0..hrgs {
        let n = 4 + (seed as usize % 9);
        let (g, hrg) = toy_hrg(seed, n);
        let (x, y) = completeness(&g, &hrg);
        b += x;
        i += y;
    }
    (b, i)
}

pub fn check_decomposition(abs: &AbstractedHrg, rc: &RoutingCirculation) -> f64 {
    let cycles = decompose_routing_circulation(abs, rc).unwrap();
    let f = rc.flow();
    let mut sum = mrf_core::hrg::AbsFlow::default();
    for c in &cycles {
        assert!(c.is_monotone(abs, rc), "{c:?}");
        let cf = c.flow();
        for (e, x) in cf.edges {
            *sum.edges.entry(e).or_insert(0.0) += x;
        }
        sum.base += cf.base;
    }
    let scale = f.edges.values().fold(f.base.abs(), |a, x| a.max(x.abs()));
    assert!(sum.max_abs_diff(&f) <= 1e-9 * scale, "decomposition does not sum to f");
    let w: f64 = cycles.iter().map(|c| c.weight(abs, rc.base_len)).sum();
    let wf = f.weight(abs, rc.base_len);
    assert!(w <= 4.0 * abs.kappa as f64 * wf * (1.0 + 1e-12), "{w} > 4κ·{wf}");
    w / wf
}

/// Decomposes random routing circulations; returns the largest
/// Σ‖L̃cᵢ‖₁ / ‖L̃f‖₁ seen.
pub fn routing_decompositions(count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut done = 0;
    let mut seed = 100;
    let mut worst: f64 = 0.0;
    while done < count {
        seed += 1;
        let (g, hrg) = toy_hrg(seed, rng.gen_range(4..=12));
        let abs = hrg.abstracted();
        let edges: Vec<_> = g.edges().filter(|(_, e)| e.tail != e.head).map(|(i, e)| (i, e.tail, e.head)).collect();
        let (id, t, h) = edges[rng.gen_range(0..edges.len())];
        let pairs = rng.gen_range(1..6);
        if let Some(rc) = random_routing_circulation(&abs, &mut rng, id, abs.node(1, t), abs.node(1, h), pairs) {
            worst = worst.max(check_decomposition(&abs, &rc));
            done += 1;
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// portal routing

/// The first n-1 edges of `random_connected` form a tree rooted at 0.
pub fn first_edges_tree(g: &DynGraph) -> HostTree {
    let n = g.vertex_count();
    let mut f = FlatForest::new();
    for v in 0..n {
        f.add_node(v);
    }
    for v in 1..n {
        let e = v - 1;
        f.set_parent(v, g.edge(e).tail, HostLink::Edge(e, false));
    }
    HostTree::from_forest(g, &f).unwrap()
}

/// Routed cycles against tree cycles on random instances; returns the number
/// of cycle pairs compared.
pub fn portal_preservation(instances: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut checked = 0;
    for _ in 0..instances {
        let n = rng.gen_range(3..40);
        let extra = rng.gen_range(1..2 * n);
        let g = random_connected(&mut rng, n, extra);
        let k = rng.gen_range(1..6);
        let prg = PortalRoutedGraph::with_reduction(&g, first_edges_tree(&g), k).unwrap();
        // every image is a walk from a to b
        for pe in prg.edges.values() {
            let mut net = vec![0.0; n];
            for &(e, s) in &pe.image {
                net[g.edge(e).tail] -= s;
                net[g.edge(e).head] += s;
            }
            net[pe.a] += 1.0;
            net[pe.b] -= 1.0;
            assert!(net.iter().all(|x| x.abs() < 1e-12), "{pe:?}");
        }
        for (a, b) in prg.preservation_pairs(&g) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            checked += 1;
        }
    }
    checked
}

pub fn same_prg(x: &PortalRoutedGraph, y: &PortalRoutedGraph) {
    assert_eq!(x.portal, y.portal);
    assert_eq!(x.portal_free, y.portal_free);
    let kx: Vec<_> = x.edges.keys().collect();
    let ky: Vec<_> = y.edges.keys().collect();
    assert_eq!(kx, ky);
    for (k, e) in &x.edges {
        let f = &y.edges[k];
        assert_eq!((e.a, e.b), (f.a, f.b), "{k:?}");
        assert!((e.len - f.len).abs() <= 1e-12 * f.len, "{k:?}");
        assert_eq!(e.grad, f.grad);
        assert_eq!(e.image, f.image);
    }
}

/// Adds portals one at a time in random order and compares against a fresh
/// build after each; returns the number of steps.
pub fn add_portal_vs_rebuild(min_steps: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut steps = 0;
    while steps < min_steps {
        let n = rng.gen_range(10..80);
        let extra = rng.gen_range(0..2 * n);
        let g = random_connected(&mut rng, n, extra);
        let k = rng.gen_range(2..10);
        let mut prg = PortalRoutedGraph::with_reduction(&g, first_edges_tree(&g), k).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for u in order {
            if prg.portal[u] {
                continue;
            }
            let before = prg.portals().len();
            let ups = prg.add_portal(&g, u).unwrap();
            let added = prg.portals().len() - before;
            assert!(added == 1 || added == 2);
            assert!(is_branch_free(&prg.tree, &prg.portal).is_ok());
            let splits = ups.iter().filter(|x| matches!(x, PrgUpdate::SplitAndMerge { .. })).count();
            let dels = ups.iter().filter(|x| matches!(x, PrgUpdate::DeleteEdge(_))).count();
            let tree_ins =
                ups.iter().filter(|x| matches!(x, PrgUpdate::InsertEdge(PrgKey::TreePath(..)))).count();
            assert!(splits <= added && dels <= added && tree_ins <= 2 * added, "{ups:?}");
            let fresh = PortalRoutedGraph::build(&g, first_edges_tree(&g), &prg.portals()).unwrap();
            same_prg(&prg, &fresh);
            steps += 1;
        }
    }
    steps
}

// ---------------------------------------------------------------------------
// dynamic trees

/// Runs `ops` random operations on both forests, asserting agreement on every
/// query. Returns the number of non-empty detect sets seen.
pub fn run_against_naive(seed: u64, n: usize, ops: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1.0;
    let mut fast = DynForest::new(n, eps);
    let mut slow = NaiveForest::new(n, eps);
    let mut handles: BTreeMap<usize, TreeEdge> = BTreeMap::new();
    let mut next_key = 0;
    let mut nonempty = 0;
    for _ in 0..ops {
        let r = rng.gen_range(0..100);
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if r < 30 {
            let g = rng.gen_range(-2.0..2.0);
            let len = rng.gen_range(0.1..3.0);
            let ok = slow.link(next_key, u, v, g, len);
            let res = fast.link(u, v, g, len);
            assert_eq!(ok, res.is_ok(), "link {u} {v}");
            if let Ok(h) = res {
                handles.insert(next_key, h);
                next_key += 1;
            }
        } else if r < 40 {
            if let Some((&k, _)) = handles.iter().nth(rng.gen_range(0..handles.len().max(1)).min(handles.len().saturating_sub(1))) {
                let h = handles.remove(&k).unwrap();
                fast.cut_edge(h).unwrap();
                slow.cut(k);
            }
        } else if r < 50 {
            if let Some((&k, &h)) = handles.iter().next() {
                let g = rng.gen_range(-2.0..2.0);
                let len = rng.gen_range(0.1..3.0);
                fast.set_gradient(h, g).unwrap();
                fast.set_length(h, len).unwrap();
                let e = slow.edges.get_mut(&k).unwrap();
                e.g = g;
                e.len = len;
            }
        } else if r < 65 {
            match slow.path_gradient(u, v) {
                Some(pg) => {
                    let fg = fast.path_gradient(u, v).unwrap();
                    assert!((pg - fg).abs() <= 1e-9 * (1.0 + pg.abs()), "{pg} vs {fg}");
                    let pl = slow.path_length(u, v).unwrap();
                    let fl = fast.path_length(u, v).unwrap();
                    assert!((pl - fl).abs() <= 1e-9 * (1.0 + pl));
                }
                None => assert!(fast.path_gradient(u, v).is_err()),
            }
        } else if r < 85 {
            if slow.connected(u, v) {
                let eta = rng.gen_range(-1.0..1.0);
                slow.add_flow(u, v, eta);
                fast.add_flow_on_path(u, v, eta).unwrap();
            }
        } else if r < 93 {
            for (&k, &h) in &handles {
                let a = slow.edges[&k].flow;
                let b = fast.query_flow(h).unwrap();
                assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "flow {a} vs {b}");
            }
        } else {
            let want = slow.detect();
            let got: Vec<usize> = {
                let inv: BTreeMap<TreeEdge, usize> = handles.iter().map(|(&k, &h)| (h, k)).collect();
                let mut g: Vec<usize> = fast.detect().into_iter().map(|h| inv[&h]).collect();
                g.sort_unstable();
                g
            };
            assert_eq!(want, got);
            if !want.is_empty() {
                nonempty += 1;
            }
        }
    }
    nonempty
}


// ---------------------------------------------------------------------------
// spanner

pub fn hop_limit(n: usize) -> f64 {
    2.0 * (2.0 * n as f64).log2()
}

/// Hop distance in a plain adjacency list, by BFS.
pub fn bfs_hops(adj: &[Vec<usize>], s: usize, t: usize) -> Option<usize> {
    let mut d = vec![usize::MAX; adj.len()];
    d[s] = 0;
    let mut q = VecDeque::from([s]);
    while let Some(x) = q.pop_front() {
        if x == t {
            return Some(d[x]);
        }
        for &y in &adj[x] {
            if d[y] == usize::MAX {
                d[y] = d[x] + 1;
                q.push_back(y);
            }
        }
    }
    None
}

pub struct Run {
    pub n: usize,
    pub g: DynGraph,
    pub s: LayeredSpanner,
    pub embedded: usize,
}

/// Random Δ-bounded stream with at most n deletions and splits mixed in.
/// Every embedding is checked when it is created.
pub fn run_stream(seed: u64, n: usize, delta: usize, churn: bool) -> Run {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = DynGraph::with_vertices(n);
    let mut s = LayeredSpanner::new(n, delta);
    let mut master_deg = vec![0usize; n];
    let mut master: Vec<usize> = (0..n).collect();
    let mut churn_left = if churn { n } else { 0 };
    let mut embedded = 0;
    let limit = hop_limit(n);
    for _ in 0..n * delta {
        if churn_left > 0 && rng.gen_bool(0.1) && g.live_edge_count() > 0 {
            churn_left -= 1;
            let live: Vec<EdgeId> = g.edges().map(|(e, _)| e).collect();
            if rng.gen_bool(0.5) {
                let e = *live.choose(&mut rng).unwrap();
                g.apply_update(Update::DeleteEdge(e)).unwrap();
                s.delete(e).unwrap();
            } else {
                let e = *live.choose(&mut rng).unwrap();
                let v = g.edge(e).tail;
                let inc: Vec<EdgeId> =
                    g.edges().filter(|(_, ed)| ed.tail == v || ed.head == v).map(|(e, _)| e).collect();
                let moved: Vec<EdgeId> = inc.into_iter().filter(|_| rng.gen_bool(0.5)).collect();
                g.apply_update(Update::SplitVertex { v, moved: moved.clone() }).unwrap();
                let w = s.split(v, &moved).unwrap();
                assert_eq!(w + 1, g.vertex_count());
                master.push(master[v]);
            }
            continue;
        }
        let nv = g.vertex_count();
        let (a, b) = (rng.gen_range(0..nv), rng.gen_range(0..nv));
        if a == b || master_deg[master[a]] >= delta || master_deg[master[b]] >= delta {
            continue;
        }
        master_deg[master[a]] += 1;
        master_deg[master[b]] += 1;
        let e = g.add_edge(Edge::new(a, b)).unwrap();
        match s.insert(e, a, b).unwrap() {
            Outcome::Embedded { hops, .. } => {
                embedded += 1;
                assert!(s.embedding_valid(e), "seed {seed}: embedding of {e} invalid at creation");
                assert!(hops as f64 <= limit);
            }
            Outcome::Admitted { .. } => assert!(s.in_h(e)),
        }
    }
    Run { n, g, s, embedded }
}

pub fn check_layers(run: &Run) {
    let limit = hop_limit(run.n);
    for i in 0..run.s.layer_count() {
        let size = run.s.layer_sizes()[i];
        assert!(size <= 9 * run.n, "layer {i} holds {size} edges");
        assert_eq!(run.s.short_cycle(i, limit.floor() as usize), None, "layer {i} has a short cycle");
        assert!(run.s.hat_edges(i).len() <= size);
    }
    let total: usize = run.s.layer_sizes().iter().sum();
    assert!(total <= 9 * run.n * run.s.layer_count());
}

