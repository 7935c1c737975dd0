mod common;

use common::criteria::{check_decomposition, hrg_completeness, routing_decompositions};


use common::toy_hrg::{random_connected, toy_hrg};
use mrf_core::cover::tree_for;
use mrf_core::hrg::{
    build_hrg, decompose_routing_circulation, hrg_min_ratio, off_tree_edge_sets,
    AbstractedHrg, CollectionConfig, Hrg, HrgParams, PathFlow, RoutingCirculation,
};
use mrf_core::oracle::exact_min_ratio;
use mrf_core::DynGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn built_hrgs_satisfy_the_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let n = rng.gen_range(2..=40);
        let extra = rng.gen_range(0..n);
        let g = random_connected(&mut rng, n, extra);
        let hrg = build_hrg(&g, HrgParams::default()).unwrap();
        let rep = hrg.check(&g);
        assert!(rep.holds(hrg.gamma_hrg), "{rep:?}");
        assert!(rep.top_components);
        let (abs, paths) = hrg.abstracted_with_paths();
        for (e, p) in abs.edges.iter().zip(&paths) {
            assert!(p.length <= 3.0 * e.len + 1e-9);
        }
    }
}

#[test]
fn disconnected_graph_has_one_top_tree_per_component() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = random_connected(&mut rng, 6, 3);
    let mut g = DynGraph::with_vertices(12);
    for (_, e) in a.edges() {
        g.add_edge(e.clone()).unwrap();
        let mut f = e.clone();
        f.tail += 6;
        f.head += 6;
        g.add_edge(f).unwrap();
    }
    let hrg = build_hrg(&g, HrgParams::default()).unwrap();
    assert_eq!(hrg.forests[1].len(), 2);
    assert!(hrg.check(&g).top_components);
}

#[test]
fn toy_hrgs_every_monotone_cycle_is_a_tree_cycle() {
    let (b, i) = hrg_completeness(50);
    // both cases of the decomposition lemma occur
    assert!(b > 0 && i > 0, "{b} {i}");
}

#[test]
fn pair_and_graph_edge_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for seed in 0..20 {
        let (g, hrg) = toy_hrg(seed, rng.gen_range(4..=12));
        let (graph, pair) = off_tree_edge_sets(&hrg, &g);
        assert_eq!(graph.len(), g.live_edge_count());
        let gamma = hrg.max_out_degree() as f64;
        assert!(pair.len() as f64 <= hrg.kappa as f64 * gamma * gamma * g.vertex_count() as f64);
        let expect: usize = hrg.out_edges.iter().map(|o| o.len() * o.len().saturating_sub(1) / 2).sum();
        assert_eq!(pair.len(), expect);
    }
}

#[test]
fn out_degree_three_gives_three_pairs() {
    let mut g = DynGraph::with_vertices(4);
    for v in 1..4 {
        g.add_edge(mrf_core::Edge::new(0, v)).unwrap();
    }
    let inc = g.incidence();
    let level1 = vec![
        tree_for(&g, &inc, vec![0, 1], 0),
        tree_for(&g, &inc, vec![0, 2], 0),
        tree_for(&g, &inc, vec![0, 3], 0),
    ];
    let top = vec![tree_for(&g, &inc, vec![0, 1, 2, 3], 0)];
    let hrg = Hrg::from_clusters(&g, 3, 1.0, 8.0, vec![level1, top]);
    let (_, pair) = off_tree_edge_sets(&hrg, &g);
    assert_eq!(pair.len(), 3);
    for p in &pair {
        assert_eq!(p.len, 16.0);
        assert_eq!(p.grad, 0.0);
    }
}

#[test]
fn random_routing_circulations_decompose_within_bound() {
    let worst = routing_decompositions(100);
    println!("worst decomposition weight / flow weight {worst:.3}");
}

#[test]
fn merge_then_split_costs_more_than_the_flow() {
    // s=0, t=1; x=2, z=3; m=4, w=5; Y1=6, Y2=7
    let l = |lvl: i32| 8f64.powi(lvl);
    let abs = AbstractedHrg::from_edges(
        2,
        4,
        &[
            (0, 2, l(1), 0.0),
            (0, 3, l(1), 0.0),
            (1, 2, l(1), 0.0),
            (1, 3, l(1), 0.0),
            (2, 4, l(2), 0.0),
            (3, 5, l(2), 0.0),
            (4, 6, l(3), 0.0),
            (4, 7, l(3), 0.0),
            (5, 6, l(3), 0.0),
            (5, 7, l(3), 0.0),
        ],
    );
    let rc = RoutingCirculation {
        base: 0,
        base_len: 1.0,
        base_grad: 0.0,
        u: 0,
        v: 1,
        base_flow: -2.0,
        paths: vec![
            PathFlow { start: 0, edges: vec![0, 4, 6], amount: 1.0 },
            PathFlow { start: 1, edges: vec![3, 5, 8], amount: -1.0 },
            PathFlow { start: 0, edges: vec![1, 5, 9], amount: 1.0 },
            PathFlow { start: 1, edges: vec![2, 4, 7], amount: -1.0 },
        ],
    };
    let ratio = check_decomposition(&abs, &rc);
    assert!(ratio > 1.0, "ratio {ratio}");
}

#[test]
fn bad_routing_circulation_rejected() {
    let abs = AbstractedHrg::from_edges(2, 3, &[(0, 2, 8.0, 0.0), (1, 3, 8.0, 0.0)]);
    let rc = RoutingCirculation {
        base: 0,
        base_len: 1.0,
        base_grad: 0.0,
        u: 0,
        v: 1,
        base_flow: -1.0,
        paths: vec![PathFlow { start: 0, edges: vec![0], amount: 1.0 }, PathFlow { start: 1, edges: vec![1], amount: -1.0 }],
    };
    assert!(decompose_routing_circulation(&abs, &rc).is_err());
}

#[test]
fn tree_oracle_finds_negative_cycles_when_they_exist() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst: f64 = 1.0;
    for _ in 0..30 {
        let n = rng.gen_range(3..=15);
        let g = random_connected(&mut rng, n, n);
        let Ok(exact) = exact_min_ratio(&g) else { continue };
        if exact.ratio >= 0.0 {
            continue;
        }
        let ans = hrg_min_ratio(&g, HrgParams::default(), CollectionConfig::default()).unwrap();
        assert!(ans.ratio < 0.0 && ans.ratio.is_finite());
        assert!(ans.ratio >= exact.ratio - 1e-9);
        worst = worst.max(exact.ratio / ans.ratio);
    }
    println!("measured reduction factor {worst:.2}");
}

#[test]
fn dump_is_json() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let g = random_connected(&mut rng, 8, 4);
    let hrg = build_hrg(&g, HrgParams::default()).unwrap();
    let s = serde_json::to_string(&hrg.dump()).unwrap();
    assert!(s.contains("\"layers\""));
}
