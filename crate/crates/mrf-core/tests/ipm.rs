use mrf_core::ipm::{
    check_witness, flow_cost, lengths_gradients, potential, round_to_exact, ExactOracle, Ipm, IpmParams, RunOutcome,
    StepMode, StepResult,
};
use mrf_core::{DynGraph, Edge};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph_with(n: usize, edges: &[(usize, usize, f64, f64)]) -> DynGraph {
    let mut g = DynGraph::with_vertices(n);
    for &(a, b, cap, cost) in edges {
        let mut e = Edge::new(a, b);
        e.capacity = cap;
        e.cost = cost;
        g.add_edge(e).unwrap();
    }
    g
}

fn random_edges(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..m)
        .map(|_| {
            (
                rng.gen_range(0..n),
                rng.gen_range(0..n),
                rng.gen_range(1..=8) as f64,
                rng.gen_range(-8..=8) as f64,
            )
        })
        .collect()
}

#[test]
fn potential_at_zero_on_four_unit_edges() {
    let p = IpmParams::new(4, 2.0, 2.0, -1.0, 1.0);
    assert_eq!(p.delta, 1.0 / 640.0);
    assert_eq!(p.alpha, 1.0 / 20000.0);
    let g = graph_with(2, &[(0, 1, 1.0, 2.0), (1, 0, 1.0, -1.0), (0, 1, 1.0, 0.0), (1, 1, 1.0, 1.0)]);
    let phi = potential(&p, &g, &[0.0; 4]).unwrap();
    // ln(0 − F) = 0, each edge contributes δ^−α + 1^−α
    let want = 4.0 * (640f64.powf(1.0 / 20000.0) + 1.0);
    assert!((phi - want).abs() < 1e-12, "{phi} vs {want}");
}

#[test]
fn params_respect_their_invariants() {
    for (m, c, u) in [(1, 1.0, 1.0), (80, 8.0, 8.0), (5000, 100.0, 3.0)] {
        let p = IpmParams::new(m, c, u, -1.0, 2.0);
        assert!(p.delta <= 1.0 / (20.0 * (m * m) as f64));
        assert!(p.alpha > 0.0 && p.alpha < 1.0);
        assert!(p.q > 0.0 && p.big_gamma > 0.0 && p.eps > 0.0);
        assert_eq!(p.q, p.alpha / 8.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=10);
        let edges = random_edges(&mut rng, n, m);
        let g = graph_with(n, &edges);
        let f: Vec<f64> = edges.iter().map(|e| rng.gen_range(0.1..0.9) * e.2).collect();
        let cost = flow_cost(&g, &f);
        let threshold = cost - rng.gen_range(0.5..20.0);
        let p = IpmParams::new(m, 8.0, 8.0, threshold, 1.0);
        let (_, grad) = lengths_gradients(&p, &g, &f, None).unwrap();
        let h = 1e-5;
        for e in 0..m {
            let mut up = f.clone();
            let mut down = f.clone();
            up[e] += h;
            down[e] -= h;
            let fd = (potential(&p, &g, &up).unwrap() - potential(&p, &g, &down).unwrap()) / (2.0 * h);
            prop_assert!((fd - grad[e]).abs() <= 1e-5 * grad[e].abs().max(1.0), "edge {}: {} vs {}", e, fd, grad[e]);
        }
    }

    #[test]
    fn initial_potential_is_below_the_upper_bound(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=10);
        let m = rng.gen_range(1..=40);
        let edges = random_edges(&mut rng, n, m);
        let g = graph_with(n, &edges);
        let mcu = m as f64 * 64.0;
        let threshold = -rng.gen_range(1.0..mcu).floor();
        let p = IpmParams::new(m, 8.0, 8.0, threshold, 1.0);
        let phi = potential(&p, &g, &vec![0.0; m]).unwrap();
        prop_assert!(phi <= 100.0 * m as f64 * p.log_mcu());
    }

    #[test]
    fn inserting_an_edge_raises_phi_by_at_most_three(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=8);
        let m = rng.gen_range(2..=20);
        let edges = random_edges(&mut rng, n, m);
        let p = IpmParams::new(m, 8.0, 8.0, -(rng.gen_range(1..=30) as f64), 1.0);
        let mut ipm = Ipm::new(p, ExactOracle, n);
        for &(a, b, cap, cost) in &edges {
            let before = ipm.potential_now().unwrap();
            ipm.insert_edge(a, b, cap, cost).unwrap();
            let after = ipm.potential_now().unwrap();
            prop_assert!(after - before <= 3.0);
            prop_assert!((ipm.phi() - after).abs() <= 1e-9 * after.abs().max(1.0));
            if ipm.run(10_000).unwrap() == RunOutcome::Feasible {
                break;
            }
        }
    }

    /// Strict feasibility and the maintained approximations after every step.
    #[test]
    fn steps_keep_the_state_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=10);
        let m = rng.gen_range(2..=30);
        let edges = random_edges(&mut rng, n, m);
        let p = IpmParams::new(m, 8.0, 8.0, -(rng.gen_range(1..=40) as f64), 1.0);
        let mut ipm = Ipm::new(p, ExactOracle, n);
        for &(a, b, cap, cost) in &edges {
            ipm.insert_edge(a, b, cap, cost).unwrap();
            let mut fresh = false;
            for _ in 0..10_000 {
                if ipm.is_done() {
                    break;
                }
                match ipm.step().unwrap() {
                    StepResult::Stepped => fresh = false,
                    StepResult::NoGoodCycle if fresh => break,
                    StepResult::NoGoodCycle => {
                        ipm.full_refresh().unwrap();
                        fresh = true;
                        continue;
                    }
                }
                let f = ipm.flows();
                let g = ipm.graph();
                for (e, ed) in g.edges() {
                    prop_assert!(f[e] > -p.delta && f[e] < ed.capacity);
                }
                if ipm.is_done() {
                    break;
                }
                let (len, grad) = lengths_gradients(&p, g, &f, None).unwrap();
                let r = ipm.anchor();
                prop_assert!(r <= (1.0 + p.eps) * ipm.residual() && ipm.residual() <= (1.0 + p.eps) * r);
                for (e, ed) in g.edges() {
                    prop_assert!(ed.length <= 2.0 * len[e] && len[e] <= 2.0 * ed.length, "ℓ̃ {} vs ℓ {}", ed.length, len[e]);
                    let drift = (ipm.gradient_scale() * ed.gradient - grad[e]).abs() / len[e];
                    prop_assert!(drift <= p.eps.min(p.q / 8.0), "‖L⁻¹(g̃ − g)‖∞ term {} on edge {}", drift, e);
                }
            }
            if ipm.is_done() {
                break;
            }
        }
    }

    /// Fractional circulations made of random cycles round to integral ones of
    /// no larger cost.
    #[test]
    fn rounding_keeps_bounds_conservation_and_cost(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=7);
        let mut edges = Vec::new();
        let mut x = Vec::new();
        for _ in 0..rng.gen_range(1..=5) {
            let k = rng.gen_range(1..=n);
            let mut vs: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                vs.swap(i, rng.gen_range(0..=i));
            }
            let amount = rng.gen_range(0.05..2.5);
            for i in 0..k {
                edges.push((vs[i], vs[(i + 1) % k], 3.0, rng.gen_range(-8..=8) as f64));
                x.push(amount);
            }
        }
        let g = graph_with(n, &edges);
        let cost = flow_cost(&g, &x);
        let r = round_to_exact(&g, &x, cost + 1e-9).unwrap();
        prop_assert!(check_witness(&g, &r).is_ok());
        prop_assert!(r.iter().all(|v| v.fract() == 0.0));
        prop_assert!(flow_cost(&g, &r) <= cost + 1e-9);
    }
}

#[test]
fn small_gamma_steps_stay_local_and_big_ones_rebuild() {
    // a single negative triangle whose minimum cost -240 stays above F
    let edges = [(0, 1, 40.0, -2.0), (1, 2, 40.0, -2.0), (2, 0, 40.0, -2.0)];
    let p = IpmParams::new(3, 2.0, 40.0, -300.0, 1.0);
    let mut ipm = Ipm::new(p, ExactOracle, 3);
    for &(a, b, cap, cost) in &edges {
        ipm.insert_edge(a, b, cap, cost).unwrap();
    }
    ipm.full_refresh().unwrap();
    ipm.mode = StepMode::FixedGamma;
    let rebuilds = ipm.stats.rebuilds;
    assert_eq!(ipm.step().unwrap(), StepResult::Stepped);
    assert!(!ipm.last_step().unwrap().rebuild);
    assert_eq!(ipm.stats.rebuilds, rebuilds);
    ipm.mode = StepMode::LineSearch;
    let before = ipm.potential_now().unwrap();
    assert_eq!(ipm.step().unwrap(), StepResult::Stepped);
    assert!(ipm.last_step().unwrap().rebuild);
    assert_eq!(ipm.stats.rebuilds, rebuilds + 1);
    assert!(ipm.potential_now().unwrap() < before);
}
