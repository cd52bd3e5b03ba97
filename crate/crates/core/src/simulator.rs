//! Receding-horizon loop. Each tick the command center advances the world,
//! refreshes the assignment, broadcasts one frame, every active agent steers
//! from that frame alone, and captures are checked on true positions.

use crate::assignment::{maybe_reassign, AssignmentTable};
use crate::controller::{
    apply_step, check_capture, descent_direction, neighbour_offsets, plan_step, surrogate_gradient, Case,
    ControlStep, ControllerConfig, Mode,
};
use crate::convergence::ConvergenceCertificate;
use crate::cost::objective;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::{advance_entities, random_scenario, ScenarioParams, ScenarioState};
use crate::surrogate::SurrogateNet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

/// Tick limit used when nothing better is known.
pub const DEFAULT_MAX_TICKS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub controller: ControllerConfig,
    pub max_ticks: u64,
    /// Freeze targets and threats.
    pub static_entities: bool,
    /// Case II: copy true agent states into the estimate every this many
    /// ticks; `0` never resyncs.
    pub resync_period: u64,
    /// Case II: initial estimate error per agent id.
    pub estimate_offsets: Vec<(usize, Vec2)>,
    /// `(tick, agent)` losses applied at the start of the tick.
    pub losses: Vec<(u64, usize)>,
    /// Record zero compute time so traces are byte-reproducible.
    pub deterministic: bool,
}

impl SimConfig {
    pub fn new(params: &ScenarioParams) -> Self {
        SimConfig {
            controller: ControllerConfig::new(params),
            max_ticks: DEFAULT_MAX_TICKS,
            static_entities: false,
            resync_period: 0,
            estimate_offsets: vec![],
            losses: vec![],
            deterministic: false,
        }
    }

    /// Tick limit of ten times the certified total, when there is one.
    pub fn limit_from(mut self, cert: &ConvergenceCertificate) -> Self {
        if let Some(total) = cert.total_bound() {
            self.max_ticks = (10 * total).max(1);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    Capture { agent: usize, target: usize },
    Loss { agent: usize },
    /// Loss requested for an agent that was already out.
    LossIgnored { agent: usize },
    Reassign { pairs: Vec<(usize, usize)> },
    Clamp { agent: usize },
    HeldHeading { agent: usize },
    Resync,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub path_length: f64,
    pub alive: bool,
    pub captured: bool,
    /// Target steered toward this tick.
    pub target: Option<usize>,
    /// Distance to that target after the move.
    pub distance: Option<f64>,
    pub clamp: bool,
    pub penalty_active: bool,
    pub in_radar: bool,
    pub in_missile: bool,
    /// Command-center position estimate (estimated case only).
    pub estimate: Option<Vec2>,
    pub step: Option<ControlStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub x: f64,
    pub y: f64,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub agents: Vec<AgentRecord>,
    pub targets: Vec<TargetRecord>,
    pub threats: Vec<Vec2>,
    /// Objective `H` with hard indicators, on true positions.
    pub h: Option<f64>,
    /// Network output on true positions.
    pub f_star: f64,
    pub events: Vec<Event>,
    pub compute_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndReason {
    AllCaptured,
    NoActiveAgents,
    TickLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub seed: u64,
    pub initial: TickRecord,
    pub ticks: Vec<TickRecord>,
    pub complete: bool,
    pub end: EndReason,
    /// Capture tick per agent.
    pub arrival_ticks: Vec<Option<u64>>,
}

impl SimulationTrace {
    pub fn records(&self) -> impl Iterator<Item = &TickRecord> {
        std::iter::once(&self.initial).chain(&self.ticks)
    }

    pub fn final_record(&self) -> &TickRecord {
        self.ticks.last().unwrap_or(&self.initial)
    }
}

/// Marks an agent as lost. Returns `false` if it was already out.
pub fn inject_loss(state: &mut ScenarioState, agent: usize) -> bool {
    match state.agents.get_mut(agent) {
        Some(a) if a.is_active() => {
            a.alive = false;
            true
        }
        _ => false,
    }
}

/// What the command center knows about the agents. In the estimated case it
/// reads true agent states only on resync ticks.
struct CommandCenter {
    case: Case,
    estimates: ScenarioState,
}

impl CommandCenter {
    fn new(truth: &ScenarioState, case: Case, offsets: &[(usize, Vec2)]) -> Self {
        let mut estimates = truth.clone();
        if case == Case::Estimated {
            for &(i, off) in offsets {
                if let Some(a) = estimates.agents.get_mut(i) {
                    a.position += off;
                }
            }
        }
        CommandCenter { case, estimates }
    }

    fn resync(&mut self, truth: &ScenarioState) {
        self.estimates.agents.clone_from(&truth.agents);
    }

    /// The broadcast frame: entities, status flags and agent positions.
    fn frame(&mut self, truth: &ScenarioState) -> ScenarioState {
        match self.case {
            Case::Exact => truth.clone(),
            Case::Estimated => {
                let e = &mut self.estimates;
                e.tick = truth.tick;
                e.targets.clone_from(&truth.targets);
                e.radar_missiles.clone_from(&truth.radar_missiles);
                // Loss and capture are status reports, not positions.
                for (est, tru) in e.agents.iter_mut().zip(&truth.agents) {
                    est.alive = tru.alive;
                    est.captured = tru.captured;
                }
                e.clone()
            }
        }
    }

    fn estimates(&self) -> Option<&ScenarioState> {
        (self.case == Case::Estimated).then_some(&self.estimates)
    }

    fn advance(&mut self, step: &ControlStep, v_max: f64) {
        if self.case == Case::Estimated {
            apply_step(&mut self.estimates.agents[step.agent], step, v_max);
        }
    }
}

fn record(
    state: &ScenarioState,
    estimates: Option<&ScenarioState>,
    net: &SurrogateNet,
    assignment: &AssignmentTable,
    steps: &[Option<ControlStep>],
    events: Vec<Event>,
    compute_ns: u64,
) -> Result<TickRecord> {
    let p = &state.params;
    let agents = state
        .agents
        .iter()
        .map(|a| {
            let target = if a.alive { assignment.target_of(a.id) } else { None };
            let distance = target.map(|t| a.position.distance(state.targets[t].position));
            let (in_radar, in_missile) = state.radar_missiles.iter().fold((false, false), |(r, m), o| {
                let d = a.position.distance(o.position);
                (r || d <= p.radar_radius, m || d <= p.missile_radius)
            });
            let step = steps.get(a.id).copied().flatten();
            AgentRecord {
                x: a.position.x,
                y: a.position.y,
                heading: a.heading,
                path_length: a.path_length,
                alive: a.alive,
                captured: a.captured,
                target,
                distance,
                clamp: step.is_some_and(|s| s.clamp_applied),
                penalty_active: step.is_some_and(|s| s.penalty_active),
                in_radar: a.is_active() && in_radar,
                in_missile: a.is_active() && in_missile,
                estimate: estimates.map(|e| e.agents[a.id].position),
                step,
            }
        })
        .collect();
    let h = objective(state, assignment).ok().map(|c| c.total);
    Ok(TickRecord {
        tick: state.tick,
        agents,
        targets: state
            .targets
            .iter()
            .map(|t| TargetRecord {
                x: t.position.x,
                y: t.position.y,
                alive: t.alive,
            })
            .collect(),
        threats: state.radar_missiles.iter().map(|o| o.position).collect(),
        h,
        f_star: net.forward(&state.network_input())?,
        events,
        compute_ns,
    })
}

/// Runs the loop until every target is captured, no agent is left, or the
/// tick limit is reached. Entity motion draws from a generator seeded with
/// `seed`, so identical inputs give identical traces.
pub fn run(scenario: &ScenarioState, net: &SurrogateNet, config: &SimConfig, seed: u64) -> Result<SimulationTrace> {
    scenario.validate()?;
    net.validate()?;
    config.controller.validate()?;
    let params = &scenario.params;
    if net.input_dim != params.input_dim() {
        return Err(Error::Dimension {
            expected: params.input_dim(),
            actual: net.input_dim,
        });
    }
    let cc = &config.controller;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = scenario.clone();
    state.tick = 0;
    let mut center = CommandCenter::new(&state, cc.case, &config.estimate_offsets);
    let mut assignment = maybe_reassign(&state, None)?;
    let initial = record(&state, center.estimates(), net, &assignment, &[], vec![], 0)?;
    let mut ticks = Vec::new();
    let mut arrival_ticks = vec![None; state.agents.len()];
    let mut end = EndReason::TickLimit;

    for tick in 1..=config.max_ticks {
        if state.alive_targets().next().is_none() {
            end = EndReason::AllCaptured;
            break;
        }
        if state.active_agents().next().is_none() {
            end = EndReason::NoActiveAgents;
            break;
        }
        let mut events = Vec::new();
        for &(_, agent) in config.losses.iter().filter(|(t, _)| *t == tick) {
            events.push(if inject_loss(&mut state, agent) {
                Event::Loss { agent }
            } else {
                Event::LossIgnored { agent }
            });
        }
        if state.active_agents().next().is_none() {
            end = EndReason::NoActiveAgents;
            ticks.push(record(&state, center.estimates(), net, &assignment, &[], events, 0)?);
            break;
        }
        if !config.static_entities {
            advance_entities(&mut state, &mut rng);
        }
        state.tick = tick;

        let started = Instant::now();
        let next = maybe_reassign(&state, Some(&assignment))?;
        if next.tick == tick {
            events.push(Event::Reassign {
                pairs: next.pairs().collect(),
            });
        }
        assignment = next;
        if cc.case == Case::Estimated && config.resync_period > 0 && tick.is_multiple_of(config.resync_period) {
            center.resync(&state);
            events.push(Event::Resync);
        }
        let frame = center.frame(&state);
        let grad = match cc.mode {
            Mode::Surrogate => surrogate_gradient(net, &frame)?,
            Mode::RawBaseline => vec![],
        };
        let mut steps: Vec<Option<ControlStep>> = vec![None; state.agents.len()];
        for a in frame.active_agents() {
            // Collision detection is onboard, so it sees true positions.
            let detected = match cc.case {
                Case::Exact => neighbour_offsets(&frame, a.id),
                Case::Estimated => neighbour_offsets(&state, a.id),
            };
            let (d, active) = descent_direction(&frame, &assignment, a.id, &grad, &detected, cc.mode)?;
            steps[a.id] = Some(plan_step(a, d, active, cc));
        }
        let compute_ns = if config.deterministic {
            0
        } else {
            started.elapsed().as_nanos() as u64
        };
        for step in steps.iter().flatten() {
            apply_step(&mut state.agents[step.agent], step, params.v_max);
            center.advance(step, params.v_max);
            if step.clamp_applied {
                events.push(Event::Clamp { agent: step.agent });
            }
            if step.held_heading {
                events.push(Event::HeldHeading { agent: step.agent });
            }
        }
        let steered = assignment.clone();
        let captures = check_capture(&mut state, &mut assignment, cc.capture_radius);
        for &(agent, target) in &captures {
            arrival_ticks[agent] = Some(tick);
            events.push(Event::Capture { agent, target });
        }
        ticks.push(record(&state, center.estimates(), net, &steered, &steps, events, compute_ns)?);
    }
    if end == EndReason::TickLimit && state.alive_targets().next().is_none() {
        end = EndReason::AllCaptured;
    }
    Ok(SimulationTrace {
        seed,
        initial,
        ticks,
        complete: end == EndReason::AllCaptured,
        end,
        arrival_ticks,
    })
}

/// Serializes one record per line.
pub fn write_trace(trace: &SimulationTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for rec in trace.records() {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TickRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_ns: f64,
    pub max_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub complete: bool,
    pub end: EndReason,
    pub ticks: u64,
    pub arrival_ticks: Vec<Option<u64>>,
    pub captures: Vec<(usize, usize)>,
    /// Agent-ticks spent inside a radar region, per agent.
    pub radar_incursions: Vec<u64>,
    pub missile_incursions: Vec<u64>,
    pub path_lengths: Vec<f64>,
    pub clamp_ticks: u64,
    pub timing: Timing,
    pub certificate: Option<ConvergenceCertificate>,
}

impl RunSummary {
    pub fn from_trace(trace: &SimulationTrace, certificate: Option<ConvergenceCertificate>) -> Self {
        let n = trace.initial.agents.len();
        let mut radar = vec![0; n];
        let mut missile = vec![0; n];
        let mut clamp_ticks = 0;
        let mut captures = Vec::new();
        for rec in &trace.ticks {
            for (i, a) in rec.agents.iter().enumerate() {
                radar[i] += u64::from(a.in_radar);
                missile[i] += u64::from(a.in_missile);
                clamp_ticks += u64::from(a.clamp);
            }
            for e in &rec.events {
                if let Event::Capture { agent, target } = e {
                    captures.push((*agent, *target));
                }
            }
        }
        let timed: Vec<u64> = trace.ticks.iter().map(|r| r.compute_ns).collect();
        let timing = Timing {
            mean_ns: if timed.is_empty() {
                0.0
            } else {
                timed.iter().sum::<u64>() as f64 / timed.len() as f64
            },
            max_ns: timed.iter().copied().max().unwrap_or(0),
        };
        RunSummary {
            seed: trace.seed,
            complete: trace.complete,
            end: trace.end,
            ticks: trace.final_record().tick,
            arrival_ticks: trace.arrival_ticks.clone(),
            captures,
            radar_incursions: radar,
            missile_incursions: missile,
            path_lengths: trace.final_record().agents.iter().map(|a| a.path_length).collect(),
            clamp_ticks,
            timing,
            certificate,
        }
    }
}

pub fn write_summary(summary: &RunSummary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub complete: bool,
    pub ticks: u64,
    pub radar_incursions: u64,
    pub missile_incursions: u64,
    pub agents_in_radar: usize,
    pub path_length: f64,
    pub arrival_ticks: Vec<Option<u64>>,
}

impl ModeStats {
    fn from_summary(s: &RunSummary) -> Self {
        ModeStats {
            complete: s.complete,
            ticks: s.ticks,
            radar_incursions: s.radar_incursions.iter().sum(),
            missile_incursions: s.missile_incursions.iter().sum(),
            agents_in_radar: s.radar_incursions.iter().filter(|&&c| c > 0).count(),
            path_length: s.path_lengths.iter().sum(),
            arrival_ticks: s.arrival_ticks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeComparison {
    pub seed: u64,
    pub surrogate: ModeStats,
    pub baseline: ModeStats,
    /// Largest distance between the two modes' positions of the same agent
    /// at the same tick, over ticks both runs reached.
    pub divergence: f64,
    pub surrogate_trace: SimulationTrace,
    pub baseline_trace: SimulationTrace,
}

/// Runs the scenario in surrogate and raw-baseline mode with frozen
/// entities.
pub fn compare_modes(scenario: &ScenarioState, net: &SurrogateNet, config: &SimConfig, seed: u64) -> Result<ModeComparison> {
    let mut cfg = config.clone();
    cfg.static_entities = true;
    cfg.controller.mode = Mode::Surrogate;
    let s = run(scenario, net, &cfg, seed)?;
    cfg.controller.mode = Mode::RawBaseline;
    let b = run(scenario, net, &cfg, seed)?;
    let divergence = s
        .records()
        .zip(b.records())
        .flat_map(|(rs, rb)| {
            rs.agents
                .iter()
                .zip(&rb.agents)
                .map(|(x, y)| Vec2::new(x.x, x.y).distance(Vec2::new(y.x, y.y)))
        })
        .fold(0.0, f64::max);
    Ok(ModeComparison {
        seed,
        surrogate: ModeStats::from_summary(&RunSummary::from_trace(&s, None)),
        baseline: ModeStats::from_summary(&RunSummary::from_trace(&b, None)),
        divergence,
        surrogate_trace: s,
        baseline_trace: b,
    })
}

/// Static scenario in which every agent's straight path to the target it
/// will be assigned passes close to a threat: agents start on the west
/// edge, targets sit on the east edge, and each threat is placed near the
/// midpoint of one agent–target line with a small lateral offset.
pub fn interposed_scenario(params: &ScenarioParams, seed: u64) -> Result<ScenarioState> {
    let mut state = random_scenario(params, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a7e);
    let side = params.region_size();
    let margin = 0.1 * side;
    let lane = |i: usize, n: usize| margin + (side - 2.0 * margin) * (i as f64 + 0.5) / n as f64;
    let n = state.agents.len();
    let k = state.targets.len();
    let jitter = 0.25 * (side - 2.0 * margin) / n.max(k) as f64;
    for (i, t) in state.targets.iter_mut().enumerate() {
        t.position = Vec2::new(side - margin, lane(i, k) + rng.gen_range(-jitter..=jitter));
        t.velocity = Vec2::ZERO;
    }
    for (i, a) in state.agents.iter_mut().enumerate() {
        a.position = Vec2::new(margin, lane(i, n) + rng.gen_range(-jitter..=jitter));
    }
    let targets: Vec<Vec2> = state.targets.iter().map(|t| t.position).collect();
    for a in state.agents.iter_mut() {
        let nearest = targets
            .iter()
            .copied()
            .min_by(|p, q| a.position.distance(*p).total_cmp(&a.position.distance(*q)))
            .unwrap_or(a.position + Vec2::new(1.0, 0.0));
        let dir = (nearest - a.position).normalized().unwrap_or(Vec2::new(1.0, 0.0));
        a.velocity = dir * params.v_max;
        a.heading = dir.heading();
    }
    let offset = 0.2 * params.radar_radius;
    for (j, o) in state.radar_missiles.iter_mut().enumerate() {
        let a = state.agents[j % n].position;
        let t = targets[j % n % k];
        let mid = (a + t) * 0.5;
        let normal = (t - a).normalized().unwrap_or(Vec2::new(1.0, 0.0)).rotate(std::f64::consts::FRAC_PI_2);
        o.position = mid + normal * rng.gen_range(-offset..=offset);
        o.velocity = Vec2::ZERO;
    }
    state.validate()?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_scenario() -> ScenarioState {
        let mut p = ScenarioParams::reference();
        p.n_agents = 1;
        p.n_targets = 1;
        p.n_radar_missiles = 0;
        let mut s = random_scenario(&p, 0).unwrap();
        s.agents[0].position = Vec2::new(50.0, 50.0);
        s.agents[0].velocity = Vec2::new(p.v_max, 0.0);
        s.agents[0].heading = 0.0;
        s.targets[0].position = Vec2::new(53.0, 50.0);
        s
    }

    #[test]
    fn straight_line_capture_tick() {
        let s = line_scenario();
        let net = SurrogateNet::zeros_for(&s.params, 1);
        let mut cfg = SimConfig::new(&s.params);
        cfg.static_entities = true;
        let trace = run(&s, &net, &cfg, 0).unwrap();
        assert!(trace.complete);
        // Brute force: first k with 3 − 0.3k ≤ 0.3.
        let expected = (1..).find(|&k| 3.0 - 0.3 * k as f64 <= 0.3 * (1.0 + 1e-9)).unwrap();
        assert_eq!(trace.arrival_ticks[0], Some(expected));
        assert_eq!(trace.ticks.len() as u64, expected);
    }

    #[test]
    fn no_targets_terminates_immediately() {
        let mut s = line_scenario();
        s.targets[0].alive = false;
        let net = SurrogateNet::zeros_for(&s.params, 1);
        let trace = run(&s, &net, &SimConfig::new(&s.params), 0).unwrap();
        assert!(trace.complete);
        assert!(trace.ticks.is_empty());
    }

    #[test]
    fn losing_every_agent_is_incomplete() {
        let s = random_scenario(&ScenarioParams::reference(), 3).unwrap();
        let net = SurrogateNet::zeros_for(&s.params, 1);
        let mut cfg = SimConfig::new(&s.params);
        cfg.losses = (0..10).map(|a| (2, a)).collect();
        let trace = run(&s, &net, &cfg, 1).unwrap();
        assert!(!trace.complete);
        assert_eq!(trace.end, EndReason::NoActiveAgents);
    }

    #[test]
    fn repeated_loss_is_ignored() {
        let mut s = random_scenario(&ScenarioParams::reference(), 3).unwrap();
        assert!(inject_loss(&mut s, 2));
        assert!(!inject_loss(&mut s, 2));
    }

    #[test]
    fn mismatched_net_rejected() {
        let s = line_scenario();
        let net = SurrogateNet::zeros(6, 1, 1);
        assert!(matches!(
            run(&s, &net, &SimConfig::new(&s.params), 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn interposed_threat_lies_near_the_path() {
        let mut p = ScenarioParams::reference();
        p.n_agents = 1;
        p.n_targets = 1;
        p.n_radar_missiles = 1;
        p.region_half_extent = 30.0;
        for seed in 0..10 {
            let s = interposed_scenario(&p, seed).unwrap();
            let a = s.agents[0].position;
            let t = s.targets[0].position;
            let o = s.radar_missiles[0].position;
            let u = (t - a).normalized().unwrap();
            let lateral = (o - a).cross(u).abs();
            assert!(lateral < p.radar_radius);
        }
    }
}
