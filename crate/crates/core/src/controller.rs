//! Per-tick steering: steepest descent on `F* + Σ ½D²`, limited to a maximum
//! heading change per tick, at constant speed.

use crate::assignment::AssignmentTable;
use crate::cost::ramp_slope;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::{AgentState, ScenarioParams, ScenarioState};
use crate::surrogate::SurrogateNet;
use serde::{Deserialize, Serialize};

/// Relative slack on the capture radius so that landing on the boundary
/// after accumulated rounding still counts.
pub const CAPTURE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Gradient of the learned penalty plus the analytic terms.
    Surrogate,
    /// Pure attraction to the assigned target.
    RawBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Case {
    /// The command center broadcasts exact agent positions.
    Exact,
    /// The command center dead-reckons agent positions.
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub mode: Mode,
    pub case: Case,
    pub capture_radius: f64,
    pub psi_max: f64,
    /// Step length `v_max·dt`.
    pub step_length: f64,
    pub v_max: f64,
}

impl ControllerConfig {
    /// Surrogate mode, exact positions, capture radius of one step.
    pub fn new(params: &ScenarioParams) -> Self {
        ControllerConfig {
            mode: Mode::Surrogate,
            case: Case::Exact,
            capture_radius: params.step_length(),
            psi_max: params.psi_max(),
            step_length: params.step_length(),
            v_max: params.v_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capture_radius > 0.0 && self.capture_radius.is_finite()) {
            return Err(Error::Config("capture radius must be positive".into()));
        }
        if self.capture_radius < self.step_length * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "capture radius {} km is below the step length {} km",
                self.capture_radius, self.step_length
            )));
        }
        if !(self.psi_max > 0.0) {
            return Err(Error::Config("maximum heading change must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlStep {
    pub agent: usize,
    /// Descent direction `d` before the turn limit.
    pub gradient: Vec2,
    /// Unit direction actually flown.
    pub direction: Vec2,
    pub step_size: f64,
    pub displacement: Vec2,
    pub clamp_applied: bool,
    /// `d` was zero and the heading was held.
    pub held_heading: bool,
    /// The analytic collision or range terms contributed to `d`.
    pub penalty_active: bool,
}

/// Result of [`clamp_heading`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped {
    pub direction: Vec2,
    pub clamp_applied: bool,
    pub held_heading: bool,
}

/// Unit direction closest to `d` within `psi_max` of the current velocity.
/// Beyond the limit the velocity is rotated by exactly `psi_max`,
/// counter-clockwise when `velocity × d > 0` and clockwise otherwise.
pub fn clamp_heading(velocity: Vec2, d: Vec2, psi_max: f64) -> Clamped {
    let Some(unit_d) = d.normalized() else {
        return Clamped {
            direction: velocity.normalized().unwrap_or(Vec2::new(1.0, 0.0)),
            clamp_applied: false,
            held_heading: true,
        };
    };
    let Some(unit_v) = velocity.normalized() else {
        return Clamped {
            direction: unit_d,
            clamp_applied: false,
            held_heading: false,
        };
    };
    if unit_v.angle_to(unit_d) <= psi_max {
        return Clamped {
            direction: unit_d,
            clamp_applied: false,
            held_heading: false,
        };
    }
    let turn = if velocity.cross(d) > 0.0 { psi_max } else { -psi_max };
    Clamped {
        direction: velocity.rotate(turn).normalized().expect("nonzero velocity"),
        clamp_applied: true,
        held_heading: false,
    }
}

/// `∂F*/∂X` at the state's (zero-padded) network input.
pub fn surrogate_gradient(net: &SurrogateNet, state: &ScenarioState) -> Result<Vec<f64>> {
    net.input_gradient(&state.network_input())
}

/// Offsets `p_i − q` to every other active agent within the safe distance,
/// measured on `state`'s positions.
pub fn neighbour_offsets(state: &ScenarioState, agent: usize) -> Vec<Vec2> {
    let me = state.agents[agent].position;
    state
        .active_agents()
        .filter(|o| o.id != agent)
        .map(|o| me - o.position)
        .filter(|off| off.norm() <= state.params.safe_distance)
        .collect()
}

fn assigned_target(state: &ScenarioState, assignment: &AssignmentTable, agent: usize) -> Result<Vec2> {
    let t = assignment.target_of(agent).ok_or(Error::Unassigned(agent))?;
    state
        .targets
        .get(t)
        .map(|t| t.position)
        .ok_or(Error::Unassigned(agent))
}

/// Descent direction for `agent`, with `net_gradient` the full `∂F*/∂X`
/// (ignored in raw-baseline mode) and `neighbours` the detected offsets to
/// agents within the safe distance. Returns `d` and whether an analytic
/// penalty term contributed.
pub fn descent_direction(
    state: &ScenarioState,
    assignment: &AssignmentTable,
    agent: usize,
    net_gradient: &[f64],
    neighbours: &[Vec2],
    mode: Mode,
) -> Result<(Vec2, bool)> {
    let p = &state.params;
    let a = &state.agents[agent];
    let target = assigned_target(state, assignment, agent)?;
    let mut d = target - a.position;
    if mode == Mode::RawBaseline {
        return Ok((d, false));
    }
    d -= Vec2::new(net_gradient[2 * agent], net_gradient[2 * agent + 1]);
    let mut active = false;
    // Smoothed range term: k_l·ramp(L + D − L̄) pulls toward the target.
    let dist = a.position.distance(target);
    let slope = ramp_slope(a.path_length + dist - p.max_range, p.smoothing_width);
    if slope > 0.0 {
        if let Some(u) = (target - a.position).normalized() {
            d += u * (p.k_l * slope);
            active = true;
        }
    }
    // Each detected neighbour pushes away with the smoothed indicator's slope.
    for off in neighbours {
        if let Some(u) = off.normalized() {
            d += u * (p.k_c / p.smoothing_width);
            active = true;
        }
    }
    Ok((d, active))
}

/// `−∇_{p_i}(F* + Σ ½D²)` plus the analytic penalty terms, with collision
/// neighbours taken from the state's own positions.
pub fn negative_gradient(
    net: &SurrogateNet,
    state: &ScenarioState,
    assignment: &AssignmentTable,
    agent: usize,
    mode: Mode,
) -> Result<Vec2> {
    let grad = match mode {
        Mode::Surrogate => surrogate_gradient(net, state)?,
        Mode::RawBaseline => vec![0.0; state.params.input_dim()],
    };
    Ok(descent_direction(state, assignment, agent, &grad, &neighbour_offsets(state, agent), mode)?.0)
}

/// Turns a descent direction into the step actually flown.
pub fn plan_step(agent: &AgentState, d: Vec2, penalty_active: bool, config: &ControllerConfig) -> ControlStep {
    let c = clamp_heading(agent.velocity, d, config.psi_max);
    ControlStep {
        agent: agent.id,
        gradient: d,
        direction: c.direction,
        step_size: config.step_length,
        displacement: c.direction * config.step_length,
        clamp_applied: c.clamp_applied,
        held_heading: c.held_heading,
        penalty_active,
    }
}

/// Step for `agent` from exact positions.
pub fn step_agent(
    state: &ScenarioState,
    net: &SurrogateNet,
    assignment: &AssignmentTable,
    agent: usize,
    config: &ControllerConfig,
) -> Result<ControlStep> {
    step_agent_estimated(state, net, assignment, agent, &neighbour_offsets(state, agent), config)
}

/// Step for `agent` computed on `est_state` (positions as the command
/// center believes them), with collision neighbours from onboard detection.
pub fn step_agent_estimated(
    est_state: &ScenarioState,
    net: &SurrogateNet,
    assignment: &AssignmentTable,
    agent: usize,
    detected: &[Vec2],
    config: &ControllerConfig,
) -> Result<ControlStep> {
    let grad = match config.mode {
        Mode::Surrogate => surrogate_gradient(net, est_state)?,
        Mode::RawBaseline => vec![],
    };
    let (d, active) = descent_direction(est_state, assignment, agent, &grad, detected, config.mode)?;
    Ok(plan_step(&est_state.agents[agent], d, active, config))
}

/// Moves the agent by the step and updates velocity, heading and range.
pub fn apply_step(agent: &mut AgentState, step: &ControlStep, v_max: f64) {
    agent.position += step.displacement;
    agent.velocity = step.direction * v_max;
    agent.heading = step.direction.heading();
    agent.path_length += step.step_size;
}

/// Marks every active agent within the capture radius of its assigned,
/// still-alive target as captured, kills those targets and drops them from
/// the assignment. Returns `(agent, target)` pairs.
pub fn check_capture(
    state: &mut ScenarioState,
    assignment: &mut AssignmentTable,
    capture_radius: f64,
) -> Vec<(usize, usize)> {
    let limit = capture_radius * (1.0 + CAPTURE_RTOL);
    let captures: Vec<(usize, usize)> = state
        .active_agents()
        .filter_map(|a| {
            let t = assignment.target_of(a.id)?;
            let target = &state.targets[t];
            (target.alive && a.position.distance(target.position) <= limit).then_some((a.id, t))
        })
        .collect();
    for &(a, t) in &captures {
        state.agents[a].captured = true;
        state.targets[t].alive = false;
        assignment.release_target(t);
    }
    captures
}
