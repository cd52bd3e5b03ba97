//! `swarmpath` — train surrogates, run simulations, compare steering modes
//! and check arrival certificates.
//!
//! Exit status: 0 on success, 1 when `--strict` certification fails, 2 on
//! usage or validation errors.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use swarmpath::assignment::assign;
use swarmpath::controller::Case;
use swarmpath::convergence::{certify, monitor_descent, ConvergenceCertificate, MonitorReport};
use swarmpath::scenario::{load_scenario, random_scenario, save_scenario, ScenarioParams, ScenarioState};
use swarmpath::simulator::{
    compare_modes, interposed_scenario, run, write_summary, write_trace, ModeStats, RunSummary, SimConfig,
    SimulationTrace,
};
use swarmpath::surrogate::{generate_dataset, load_weights, save_weights, train, SurrogateNet, TrainConfig, WeightsMeta};
use swarmpath::Vec2;

mod manifest;

use manifest::RunManifest;

const THREADS_VAR: &str = "SWARMPATH_THREADS";

#[derive(Parser)]
#[command(name = "swarmpath", version, about = "Swarm path planning under one-way broadcast")]
struct Cli {
    /// Output format for the report printed to stdout.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random scenario file
    Scenario(ScenarioArgs),
    /// Fit a surrogate network to sampled penalty labels
    Train(TrainArgs),
    /// Run the closed-loop simulation
    Simulate(SimulateArgs),
    /// Run surrogate and raw-baseline steering on frozen scenarios
    Compare(CompareArgs),
    /// Check the finite-time arrival conditions
    Certify(CertifyArgs),
}

#[derive(Args, Serialize)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    threats: Option<usize>,
    /// Half side length of the square region (km).
    #[arg(long)]
    half_extent: Option<f64>,
    /// Place threats across the agents' straight paths and freeze entities.
    #[arg(long)]
    interpose: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long, default_value_t = 75, value_parser = clap::value_parser!(u64).range(1..))]
    hidden: u64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct NetArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Weights file; a zero network is used when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    net: NetArgs,
    /// 1: exact positions broadcast; 2: command-center estimates.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    case: u8,
    /// Case 2: resync estimates with true positions every N ticks (0 = never).
    #[arg(long, default_value_t = 0)]
    resync: u64,
    /// Case 2: initial estimate error added to every agent (km, along x).
    #[arg(long, default_value_t = 0.0)]
    estimate_error: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ticks_max: Option<u64>,
    /// Freeze targets and threats.
    #[arg(long)]
    r#static: bool,
    /// Agent lost at a tick, as TICK:AGENT; repeatable.
    #[arg(long = "loss", value_parser = parse_loss)]
    losses: Vec<(u64, usize)>,
    /// Record zero compute time so trace files are byte-reproducible.
    #[arg(long)]
    deterministic: bool,
    /// JSON-lines trace output.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// CSV trajectory log: tick,agent,x,y,target.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Number of scenarios; beyond the first they are regenerated from the
    /// scenario's parameters with seeds 1, 2, ...
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    seeds: u64,
    /// Regenerate every scenario with threats across the straight paths.
    #[arg(long)]
    interpose: bool,
    #[arg(long)]
    ticks_max: Option<u64>,
    /// Directory for per-seed, per-mode path polylines (CSV).
    #[arg(long)]
    polylines: Option<PathBuf>,
    /// JSON table output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CertifyArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Override the targets' maximum speed (km/s).
    #[arg(long)]
    target_speed: Option<f64>,
    /// Run the simulation and check every monitored tick against ε.
    #[arg(long)]
    verify: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exit 1 when the conditions fail or verification finds violations.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_loss(s: &str) -> std::result::Result<(u64, usize), String> {
    let (t, a) = s.split_once(':').ok_or("expected TICK:AGENT")?;
    Ok((
        t.parse().map_err(|e| format!("tick: {e}"))?,
        a.parse().map_err(|e| format!("agent: {e}"))?,
    ))
}

/// Worker cap from the environment, when set.
pub(crate) fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_VAR).ok()?.parse().ok()
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_VAR}={v} is not a count"))?;
        if n == 0 {
            bail!("{THREADS_VAR} must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Scenario(a) => cmd_scenario(a, cli.format),
        Command::Train(a) => cmd_train(a, cli.format),
        Command::Simulate(a) => cmd_simulate(a, cli.format),
        Command::Compare(a) => cmd_compare(a, cli.format),
        Command::Certify(a) => cmd_certify(a, cli.format),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn load_net(args: &NetArgs, manifest: &mut RunManifest) -> Result<(ScenarioState, SurrogateNet)> {
    manifest.input(&args.scenario)?;
    let scenario = load_scenario(&args.scenario)?;
    let net = match &args.weights {
        Some(path) => {
            manifest.input(path)?;
            load_weights(path)?.0
        }
        None => SurrogateNet::zeros_for(&scenario.params, 1),
    };
    if net.input_dim != scenario.params.input_dim() {
        bail!(
            "weights expect {} inputs but the scenario has {} (2·agents + 2·threats)",
            net.input_dim,
            scenario.params.input_dim()
        );
    }
    Ok((scenario, net))
}

fn cmd_scenario(a: &ScenarioArgs, format: Format) -> Result<ExitCode> {
    let mut params = ScenarioParams::reference();
    if let Some(n) = a.agents {
        params.n_agents = n;
    }
    if let Some(k) = a.targets {
        params.n_targets = k;
    }
    if let Some(m) = a.threats {
        params.n_radar_missiles = m;
    }
    if let Some(h) = a.half_extent {
        params.region_half_extent = h;
    }
    let state = if a.interpose {
        interposed_scenario(&params, a.seed)?
    } else {
        random_scenario(&params, a.seed)?
    };
    save_scenario(&state, &a.out)?;
    let mut m = RunManifest::new("scenario", Some(a.seed));
    m.config(a)?;
    m.output(&a.out);
    m.write()?;
    match format {
        Format::Json => print_json(&state)?,
        Format::Table => println!(
            "wrote {} ({} agents, {} targets, {} threats, input dim {})",
            a.out.display(),
            params.n_agents,
            params.n_targets,
            params.n_radar_missiles,
            params.input_dim()
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(a: &TrainArgs, format: Format) -> Result<ExitCode> {
    let mut m = RunManifest::new("train", Some(a.seed));
    m.input(&a.scenario)?;
    let scenario = load_scenario(&a.scenario)?;
    let cfg = TrainConfig {
        hidden: a.hidden as usize,
        max_epochs: a.epochs as usize,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let data = generate_dataset(&scenario.params, a.samples as usize, a.seed)?;
    let (net, report) = train(&data, &cfg)?;
    save_weights(
        &net,
        &WeightsMeta {
            seed: Some(a.seed),
            dataset_hash: Some(report.dataset_hash.clone()),
        },
        &a.out,
    )?;
    let mut report_path = a.out.clone().into_os_string();
    report_path.push(".report.json");
    let report_path = PathBuf::from(report_path);
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", report_path.display()))?;
    m.config(&serde_json::json!({ "args": a, "train": cfg, "params": scenario.params }))?;
    m.output(&a.out);
    m.output(&report_path);
    m.write()?;
    match format {
        Format::Json => print_json(&report)?,
        Format::Table => {
            println!("samples        {}", report.dataset_size);
            println!("epochs         {} (best {})", report.epochs, report.best_epoch);
            println!("train mse      {:.6e}", report.train_mse);
            println!("validation mse {:.6e}", report.validation_mse);
            println!("test mse       {:.6e}", report.test_mse);
            println!("label variance {:.6e}", report.test_label_variance);
            println!("weight bound   {:.6e}", net.weight_bound());
            println!("weights        {}", a.out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_csv(trace: &SimulationTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "tick,agent,x,y,target")?;
    for rec in trace.records() {
        for (i, a) in rec.agents.iter().enumerate() {
            let target = a.target.map(|t| t.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", rec.tick, i, a.x, a.y, target)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, format: Format) -> Result<ExitCode> {
    let mut m = RunManifest::new("simulate", Some(a.seed));
    let (scenario, net) = load_net(&a.net, &mut m)?;
    let mut cfg = SimConfig::new(&scenario.params);
    cfg.controller.case = if a.case == 2 { Case::Estimated } else { Case::Exact };
    cfg.resync_period = a.resync;
    if a.estimate_error != 0.0 {
        cfg.estimate_offsets = (0..scenario.agents.len())
            .map(|i| (i, Vec2::new(a.estimate_error, 0.0)))
            .collect();
    }
    if let Some(t) = a.ticks_max {
        cfg.max_ticks = t;
    }
    cfg.static_entities = a.r#static;
    cfg.losses.clone_from(&a.losses);
    cfg.deterministic = a.deterministic || thread_cap() == Some(1);

    let table = assign(&scenario)?;
    let cert = certify(&net, &scenario, &table);
    let trace = run(&scenario, &net, &cfg, a.seed)?;
    let summary = RunSummary::from_trace(&trace, Some(cert));

    m.config(&serde_json::json!({ "args": a, "sim": cfg }))?;
    if let Some(p) = &a.trace {
        write_trace(&trace, p)?;
        m.output(p);
    }
    if let Some(p) = &a.summary {
        write_summary(&summary, p)?;
        m.output(p);
    }
    if let Some(p) = &a.csv {
        write_csv(&trace, p)?;
        m.output(p);
    }
    m.write()?;

    match format {
        Format::Json => print_json(&summary)?,
        Format::Table => {
            println!("end            {:?} after {} ticks", summary.end, summary.ticks);
            println!("captures       {}", summary.captures.len());
            println!("agent  arrival  path_km  radar_ticks  missile_ticks");
            for i in 0..summary.arrival_ticks.len() {
                let arrival = summary.arrival_ticks[i].map(|t| t.to_string()).unwrap_or("-".into());
                println!(
                    "{:>5}  {:>7}  {:>7.2}  {:>11}  {:>13}",
                    i, arrival, summary.path_lengths[i], summary.radar_incursions[i], summary.missile_incursions[i]
                );
            }
            println!(
                "compute        mean {:.4} ms, max {:.4} ms per tick",
                summary.timing.mean_ns / 1e6,
                summary.timing.max_ns as f64 / 1e6
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CompareRow {
    seed: u64,
    surrogate: ModeStats,
    baseline: ModeStats,
    divergence: f64,
}

fn write_polyline(trace: &SimulationTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "agent,tick,x,y")?;
    let n = trace.initial.agents.len();
    for i in 0..n {
        for rec in trace.records() {
            writeln!(w, "{},{},{},{}", i, rec.tick, rec.agents[i].x, rec.agents[i].y)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_compare(a: &CompareArgs, format: Format) -> Result<ExitCode> {
    let mut m = RunManifest::new("compare", None);
    let (scenario, net) = load_net(&a.net, &mut m)?;
    let moving = scenario.targets.iter().any(|t| t.velocity != Vec2::ZERO)
        || scenario.radar_missiles.iter().any(|o| o.velocity != Vec2::ZERO);
    if moving && !a.interpose {
        eprintln!("warning: scenario has moving entities; they are frozen for the comparison");
    }
    let mut cfg = SimConfig::new(&scenario.params);
    if let Some(t) = a.ticks_max {
        cfg.max_ticks = t;
    }
    cfg.deterministic = true;
    if let Some(dir) = &a.polylines {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut rows = Vec::new();
    for seed in 0..a.seeds {
        let s = if a.interpose {
            interposed_scenario(&scenario.params, seed)?
        } else if seed == 0 {
            scenario.clone()
        } else {
            random_scenario(&scenario.params, seed)?
        };
        let c = compare_modes(&s, &net, &cfg, seed)?;
        if let Some(dir) = &a.polylines {
            for (mode, trace) in [("surrogate", &c.surrogate_trace), ("baseline", &c.baseline_trace)] {
                let p = dir.join(format!("seed{seed}_{mode}.csv"));
                write_polyline(trace, &p)?;
                m.output(&p);
            }
        }
        rows.push(CompareRow {
            seed,
            surrogate: c.surrogate,
            baseline: c.baseline,
            divergence: c.divergence,
        });
    }
    m.config(&serde_json::json!({ "args": a, "sim": cfg }))?;
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&rows)?).with_context(|| format!("writing {}", p.display()))?;
        m.output(p);
    }
    m.write()?;
    match format {
        Format::Json => print_json(&rows)?,
        Format::Table => {
            println!("seed  mode       complete  ticks  radar_ticks  agents_in_radar  missile_ticks  path_km  divergence_km");
            for r in &rows {
                for (name, s) in [("surrogate", &r.surrogate), ("baseline", &r.baseline)] {
                    println!(
                        "{:>4}  {:<9}  {:<8}  {:>5}  {:>11}  {:>15}  {:>13}  {:>7.1}  {:>13.4}",
                        r.seed,
                        name,
                        s.complete,
                        s.ticks,
                        s.radar_incursions,
                        s.agents_in_radar,
                        s.missile_incursions,
                        s.path_length,
                        r.divergence
                    );
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CertifyReport {
    certificate: ConvergenceCertificate,
    monitor: Option<MonitorReport>,
    passed: bool,
}

fn cmd_certify(a: &CertifyArgs, format: Format) -> Result<ExitCode> {
    let mut m = RunManifest::new("certify", Some(a.seed));
    let (mut scenario, net) = load_net(&a.net, &mut m)?;
    if let Some(speed) = a.target_speed {
        scenario.params.target_max_speed = speed;
        scenario.validate()?;
    }
    let table = assign(&scenario)?;
    let certificate = certify(&net, &scenario, &table);
    let monitor = match (a.verify, certificate.epsilon) {
        (true, Some(eps)) if certificate.holds() => {
            let cfg = SimConfig::new(&scenario.params).limit_from(&certificate);
            let trace = run(&scenario, &net, &cfg, a.seed)?;
            Some(monitor_descent(&trace, eps, certificate.v))
        }
        _ => None,
    };
    let passed = certificate.holds() && monitor.as_ref().is_none_or(MonitorReport::passed);
    let report = CertifyReport {
        certificate,
        monitor,
        passed,
    };
    m.config(&serde_json::json!({ "args": a, "params": scenario.params }))?;
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", p.display()))?;
        m.output(p);
    }
    m.write()?;
    match format {
        Format::Json => print_json(&report)?,
        Format::Table => print_certificate(&report),
    }
    if a.verify && report.certificate.holds() && report.monitor.is_none() {
        eprintln!("warning: verification skipped");
    } else if a.verify && !report.certificate.holds() {
        eprintln!("note: conditions failed, nothing to verify");
    }
    Ok(if a.strict && !report.passed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn print_certificate(r: &CertifyReport) {
    let c = &r.certificate;
    let flag = |b: bool| if b { "ok" } else { "FAILED" };
    println!("v (km/tick)       {:.6}", c.v);
    println!("delta (km/tick)   {:.6}", c.delta);
    println!("gradient bound b  {:.6e}", c.b);
    match c.epsilon {
        Some(e) => println!("epsilon           {e:.6e}"),
        None => println!("epsilon           undefined"),
    }
    println!("speed condition   {}", flag(c.conditions.speed));
    println!("bound condition   {}", flag(c.conditions.gradient_bound));
    println!("epsilon > 0       {}", flag(c.conditions.epsilon_positive));
    if let Some(bounds) = &c.step_bounds {
        println!("agent  D0_km  tick_bound");
        for ((agent, d), (_, k)) in c.initial_distances.iter().zip(bounds) {
            println!("{agent:>5}  {d:>5.2}  {k:>10}");
        }
    }
    if let Some(mon) = &r.monitor {
        println!(
            "monitored ticks   {} (excluded: {} clamp, {} retarget, {} penalty, {} near)",
            mon.monitored, mon.excluded_clamp, mon.excluded_retarget, mon.excluded_penalty, mon.excluded_near
        );
        println!("violations        {}", mon.violations.len());
        let late = mon.arrivals.iter().filter(|x| x.monitored && !x.within_bound).count();
        println!("late arrivals     {late} of {}", mon.arrivals.len());
    }
    println!("result            {}", if r.passed { "certified" } else { "not certified" });
}
