use proptest::prelude::*;
use swarmpath::assignment::{assign, build_graph, duplicate_targets, solve_matching, LabeledBipartiteGraph};
use swarmpath::scenario::{random_scenario, ScenarioParams};
use swarmpath::simulator::inject_loss;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn total(w: &[f64], n: usize, cols: &[usize]) -> f64 {
    cols.iter().enumerate().map(|(r, &c)| w[r * n + c]).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_exhaustive_optimum(n in 1usize..=6, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let mut g = LabeledBipartiteGraph::from_weights(n, n, w.clone());
        let cols = solve_matching(&mut g).unwrap();
        let best = permutations(n).iter().map(|p| total(&w, n, p)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(total(&w, n, &cols), best);
    }

    #[test]
    fn final_labels_certify_optimality(n in 1usize..=20, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..n * n).map(|_| 1.0 / rng.gen_range(0.1..200.0)).collect();
        let mut g = LabeledBipartiteGraph::from_weights(n, n, w);
        let cols = solve_matching(&mut g).unwrap();
        prop_assert!(g.labels_feasible(1e-9));
        // Feasible labels bound every matching; equality proves optimality.
        let label_sum: f64 = g.agent_labels.iter().chain(&g.slot_labels).sum();
        let matched: f64 = cols.iter().enumerate().map(|(r, &c)| g.weight(r, c)).sum();
        prop_assert!((label_sum - matched).abs() <= 1e-9 * label_sum.abs().max(1.0));
    }
}

#[test]
fn seven_by_seven_against_all_permutations() {
    use rand::{Rng, SeedableRng};
    let perms = permutations(7);
    assert_eq!(perms.len(), 5040);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let w: Vec<f64> = (0..49).map(|_| 1.0 / rng.gen_range(0.3..250.0)).collect();
        let mut g = LabeledBipartiteGraph::from_weights(7, 7, w.clone());
        let cols = solve_matching(&mut g).unwrap();
        let best = perms.iter().map(|p| total(&w, 7, p)).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(total(&w, 7, &cols), best);
    }
}

#[test]
fn scaling_weights_keeps_matching() {
    let s = random_scenario(&ScenarioParams::reference(), 8).unwrap();
    let slots = duplicate_targets(10, &[0, 1, 2, 3, 4]).unwrap();
    let mut g1 = build_graph(&s, &slots, 1.0);
    let mut g2 = build_graph(&s, &slots, 2.0);
    for (a, b) in g1.weights.iter().zip(&g2.weights) {
        assert_eq!(2.0 * a, *b);
    }
    assert_eq!(solve_matching(&mut g1).unwrap(), solve_matching(&mut g2).unwrap());
}

#[test]
fn losing_an_agent_drops_the_newest_copy() {
    let mut s = random_scenario(&ScenarioParams::reference(), 8).unwrap();
    inject_loss(&mut s, 6);
    let alive: Vec<usize> = s.alive_targets().map(|t| t.id).collect();
    let n = s.active_agents().count();
    assert_eq!(duplicate_targets(n, &alive).unwrap(), vec![0, 1, 2, 3, 4, 0, 1, 2, 3]);
    let table = assign(&s).unwrap();
    assert_eq!(table.target_of(6), None);
    let mut covered: Vec<usize> = table.pairs().map(|(_, t)| t).collect();
    covered.sort_unstable();
    covered.dedup();
    assert_eq!(covered, alive);
}

#[test]
fn two_hundred_agents_solve_quickly() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(200);
    let w: Vec<f64> = (0..200 * 200).map(|_| 1.0 / rng.gen_range(0.1..280.0)).collect();
    let mut g = LabeledBipartiteGraph::from_weights(200, 200, w);
    let t = std::time::Instant::now();
    solve_matching(&mut g).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0);
}
