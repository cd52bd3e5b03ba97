//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::Instant;
use swarmpath::assignment::{assign, solve_matching, LabeledBipartiteGraph};
use swarmpath::controller::Case;
use swarmpath::convergence::{certify, monitor_descent};
use swarmpath::scenario::{random_scenario, wrap_angle, ScenarioParams};
use swarmpath::simulator::{compare_modes, interposed_scenario, run, write_trace, SimConfig, SimulationTrace};
use swarmpath::surrogate::{generate_dataset, train, SurrogateNet, TrainConfig, TrainingReport};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn reference() -> ScenarioParams {
    ScenarioParams::reference()
}

/// Net trained on the full-size scenario; shared by several criteria.
fn full_net() -> &'static (SurrogateNet, TrainingReport, f64) {
    static NET: OnceLock<(SurrogateNet, TrainingReport, f64)> = OnceLock::new();
    NET.get_or_init(|| {
        let t = Instant::now();
        let data = generate_dataset(&reference(), 100_000, 1).expect("dataset");
        let cfg = TrainConfig {
            hidden: 75,
            max_epochs: 1000,
            ..TrainConfig::default()
        };
        let (net, report) = train(&data, &cfg).expect("training");
        (net, report, t.elapsed().as_secs_f64())
    })
}

fn small_params() -> ScenarioParams {
    ScenarioParams {
        n_agents: 1,
        n_targets: 1,
        n_radar_missiles: 1,
        region_half_extent: 30.0,
        ..reference()
    }
}

fn small_net() -> &'static SurrogateNet {
    static NET: OnceLock<SurrogateNet> = OnceLock::new();
    NET.get_or_init(|| {
        let data = generate_dataset(&small_params(), 100_000, 1).expect("dataset");
        train(&data, &TrainConfig::default()).expect("training").0
    })
}

fn contrast_runs() -> &'static Vec<(SimulationTrace, SimulationTrace)> {
    static RUNS: OnceLock<Vec<(SimulationTrace, SimulationTrace)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let p = small_params();
        (0..10)
            .map(|seed| {
                let s = interposed_scenario(&p, seed).unwrap();
                let mut cfg = SimConfig::new(&p);
                cfg.max_ticks = 600;
                let c = compare_modes(&s, small_net(), &cfg, seed).unwrap();
                (c.surrogate_trace, c.baseline_trace)
            })
            .collect()
    })
}

fn dynamic_runs() -> &'static Vec<SimulationTrace> {
    static RUNS: OnceLock<Vec<SimulationTrace>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let p = reference();
        (0..20)
            .map(|seed| {
                let s = random_scenario(&p, 1000 + seed).unwrap();
                let mut cfg = SimConfig::new(&p);
                cfg.max_ticks = 3000;
                run(&s, &full_net().0, &cfg, seed).unwrap()
            })
            .collect()
    })
}

/// Small random nets scaled so that the certificate holds.
fn certified_runs() -> &'static Vec<(SimulationTrace, f64, f64)> {
    static RUNS: OnceLock<Vec<(SimulationTrace, f64, f64)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let p = reference();
        (0..100u64)
            .map(|seed| {
                let s = random_scenario(&p, 5000 + seed).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut net = SurrogateNet::random(p.input_dim(), p.n_agents, 8, 1.0, &mut rng);
                net.input_center = vec![p.region_half_extent; p.input_dim()];
                net.input_half_range = vec![p.region_half_extent; p.input_dim()];
                net.output_scale = rng.gen_range(0.0..0.01) / net.weight_bound();
                let a = assign(&s).unwrap();
                let cert = certify(&net, &s, &a);
                assert!(cert.holds(), "seed {seed}: certificate conditions not met");
                let cfg = SimConfig::new(&p).limit_from(&cert);
                let trace = run(&s, &net, &cfg, seed).unwrap();
                (trace, cert.epsilon.unwrap(), cert.v)
            })
            .collect()
    })
}

fn brute_force(n: usize, w: &[f64]) -> f64 {
    fn go(row: usize, n: usize, w: &[f64], used: &mut Vec<bool>, acc: &mut Vec<usize>, best: &mut f64) {
        if row == n {
            let total: f64 = acc.iter().enumerate().map(|(r, &c)| w[r * n + c]).sum();
            *best = best.max(total);
            return;
        }
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                acc.push(c);
                go(row + 1, n, w, used, acc, best);
                acc.pop();
                used[c] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(0, n, w, &mut vec![false; n], &mut vec![], &mut best);
    best
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=7);
        let w: Vec<f64> = (0..n * n).map(|_| 1.0 / rng.gen_range(0.5..300.0)).collect();
        let mut g = LabeledBipartiteGraph::from_weights(n, n, w.clone());
        let cols = solve_matching(&mut g).unwrap();
        let got: f64 = cols.iter().enumerate().map(|(r, &c)| w[r * n + c]).sum();
        if got != brute_force(n, &w) {
            mismatches += 1;
        }
    }
    let n = 200;
    let w: Vec<f64> = (0..n * n).map(|_| 1.0 / rng.gen_range(0.5..300.0)).collect();
    let mut g = LabeledBipartiteGraph::from_weights(n, n, w);
    let t = Instant::now();
    solve_matching(&mut g).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 1.0,
        format!("{mismatches}/1000 mismatches vs exhaustive search; n=200 solved in {secs:.3} s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = 2 * rng.gen_range(1..=10) + 2 * rng.gen_range(0..=4);
        let mut net = SurrogateNet::random(dim, 1, rng.gen_range(1..=75), 3.0, &mut rng);
        net.biases.iter_mut().for_each(|b| *b = rng.gen_range(-2.0..2.0));
        net.input_center = vec![100.0; dim];
        net.input_half_range = vec![100.0; dim];
        net.output_scale = 1e5;
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..200.0)).collect();
        let g = net.input_gradient(&x).unwrap();
        let h = 1e-5;
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for m in 0..dim {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[m] += h;
            xm[m] -= h;
            let fd = (net.forward(&xp).unwrap() - net.forward(&xm).unwrap()) / (2.0 * h);
            worst = worst.max((g[m] - fd).abs() / scale);
        }
    }
    outcome(worst <= 1e-5, format!("max relative error {worst:.2e} over 100 random cases"))
}

fn criterion_3() -> Outcome {
    let (_, r, secs) = full_net();
    outcome(
        r.test_mse <= 1e-3 && r.epochs <= 1000 && *secs <= 900.0,
        format!(
            "test MSE {:.3e} (label variance {:.3e}) after {} epochs, {:.0} s",
            r.test_mse, r.test_label_variance, r.epochs, secs
        ),
    )
}

fn criterion_4() -> Outcome {
    let runs = contrast_runs();
    let surrogate_inc: u64 = runs
        .iter()
        .map(|(s, _)| s.ticks.iter().flat_map(|r| &r.agents).filter(|a| a.in_radar).count() as u64)
        .sum();
    let baseline_hit = runs
        .iter()
        .filter(|(_, b)| b.ticks.iter().flat_map(|r| &r.agents).any(|a| a.in_radar))
        .count();
    let arrived = runs.iter().filter(|(s, _)| s.complete).count();
    outcome(
        surrogate_inc == 0 && baseline_hit >= 7,
        format!(
            "surrogate radar ticks {surrogate_inc}; baseline entered radar in {baseline_hit}/10; \
             surrogate arrivals {arrived}/10"
        ),
    )
}

fn criterion_5() -> Outcome {
    let runs = dynamic_runs();
    let complete = runs.iter().filter(|t| t.complete).count();
    let captures: usize = runs.iter().map(|t| t.arrival_ticks.iter().flatten().count()).sum();
    outcome(
        complete * 100 >= 95 * runs.len(),
        format!("{complete}/20 complete within 3000 ticks ({captures} captures in total)"),
    )
}

fn criterion_6() -> Outcome {
    let mut violations = 0;
    let mut late = 0;
    let mut monitored = 0;
    let mut arrivals = 0;
    for (trace, eps, v) in certified_runs() {
        let r = monitor_descent(trace, *eps, *v);
        violations += r.violations.len();
        monitored += r.monitored;
        for a in r.arrivals.iter().filter(|a| a.monitored) {
            arrivals += 1;
            late += usize::from(!a.within_bound);
        }
    }
    outcome(
        violations == 0 && late == 0 && arrivals > 0,
        format!(
            "{violations} violations over {monitored} monitored agent-ticks; \
             {late}/{arrivals} arrivals beyond D²/ε (100 seeds)"
        ),
    )
}

fn kinematic_errors(trace: &SimulationTrace, p: &ScenarioParams) -> (f64, f64) {
    let step = p.step_length();
    let psi = p.psi_max();
    let (mut dist_err, mut turn_excess) = (0.0f64, f64::NEG_INFINITY);
    let records: Vec<_> = trace.records().collect();
    for w in records.windows(2) {
        for (a0, a1) in w[0].agents.iter().zip(&w[1].agents) {
            if a1.step.is_none() {
                continue;
            }
            let d = (a1.x - a0.x).hypot(a1.y - a0.y);
            dist_err = dist_err.max((d - step).abs());
            let turn = wrap_angle(a1.heading - a0.heading).abs();
            turn_excess = turn_excess.max(turn - psi);
        }
    }
    (dist_err, turn_excess)
}

fn criterion_7() -> Outcome {
    let mut dist: f64 = 0.0;
    let mut turn = f64::NEG_INFINITY;
    let mut runs = 0;
    let mut check = |t: &SimulationTrace, p: &ScenarioParams| {
        let (d, e) = kinematic_errors(t, p);
        dist = dist.max(d);
        turn = turn.max(e);
        runs += 1;
    };
    for (s, b) in contrast_runs() {
        check(s, &small_params());
        check(b, &small_params());
    }
    for t in dynamic_runs() {
        check(t, &reference());
    }
    for (t, _, _) in certified_runs() {
        check(t, &reference());
    }
    outcome(
        dist <= 1e-12 && turn <= 1e-9,
        format!("{runs} runs: max |step − v·dt| {dist:.1e} km, max heading change − ψ_max {turn:.3} rad"),
    )
}

fn criterion_8() -> Outcome {
    let times: Vec<u64> = dynamic_runs()
        .iter()
        .flat_map(|t| t.ticks.iter().map(|r| r.compute_ns))
        .collect();
    let mean = times.iter().sum::<u64>() as f64 / times.len() as f64 / 1e6;
    let max = *times.iter().max().unwrap() as f64 / 1e6;
    outcome(
        mean <= 10.0 && max <= 50.0,
        format!("mean {mean:.4} ms, max {max:.3} ms per tick over {} ticks", times.len()),
    )
}

fn criterion_9() -> Outcome {
    let p = reference();
    let s = random_scenario(&p, 77).unwrap();
    let mut cfg = SimConfig::new(&p);
    cfg.max_ticks = 1500;
    cfg.deterministic = true;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bytes: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let path = dir.path().join(format!("trace{i}.jsonl"));
            let trace = pool.install(|| run(&s, &full_net().0, &cfg, 9)).unwrap();
            write_trace(&trace, &path).unwrap();
            std::fs::read(&path).unwrap()
        })
        .collect();
    outcome(
        bytes[0] == bytes[1] && !bytes[0].is_empty(),
        format!("two traces of {} bytes, identical: {}", bytes[0].len(), bytes[0] == bytes[1]),
    )
}

fn criterion_10() -> Outcome {
    let p = reference();
    let mut max_dev: f64 = 0.0;
    let mut ticks = 0;
    for seed in 0..5 {
        let s = random_scenario(&p, 300 + seed).unwrap();
        let mut cfg = SimConfig::new(&p);
        cfg.max_ticks = 1000;
        let exact = run(&s, &full_net().0, &cfg, seed).unwrap();
        cfg.controller.case = Case::Estimated;
        cfg.resync_period = 0;
        let est = run(&s, &full_net().0, &cfg, seed).unwrap();
        if exact.ticks.len() != est.ticks.len() {
            return outcome(false, format!("seed {seed}: run lengths differ"));
        }
        for (a, b) in exact.records().zip(est.records()) {
            ticks += 1;
            for (x, y) in a.agents.iter().zip(&b.agents) {
                max_dev = max_dev.max((x.x - y.x).abs()).max((x.y - y.y).abs());
            }
        }
    }
    outcome(
        max_dev == 0.0,
        format!("max position difference {max_dev:e} km over {ticks} ticks, 5 seeds"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("assignment optimality and speed", criterion_1),
        ("input-gradient fidelity", criterion_2),
        ("surrogate test MSE", criterion_3),
        ("threat avoidance contrast", criterion_4),
        ("dynamic completion", criterion_5),
        ("finite-time descent", criterion_6),
        ("kinematic invariants", criterion_7),
        ("per-tick compute time", criterion_8),
        ("trace determinism", criterion_9),
        ("estimated-position equivalence", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} [{}] {}: {}",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
    }
    println!("acceptance: {}/10 passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
