//! The path objective: squared distance to the assigned target plus step
//! penalties for radar and missile exposure, agent proximity and path range.
//!
//! Two evaluations are provided. [`objective`] uses the hard 0–1 indicators.
//! [`smoothed_penalty`] replaces every indicator by a linear ramp of
//! half-width η around its threshold; it is continuous in all positions and
//! is what the surrogate network is trained to reproduce.

use crate::assignment::AssignmentTable;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::{AgentState, RadarMissileState, ScenarioParams, ScenarioState};
use serde::{Deserialize, Serialize};

/// Per-agent terms. Counts are the number of indicators that fired.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentCost {
    pub distance: f64,
    pub threat: f64,
    pub collision: f64,
    pub range: f64,
    pub radar_hits: u32,
    pub missile_hits: u32,
    pub collision_hits: u32,
    pub over_range: bool,
}

impl AgentCost {
    pub fn total(&self) -> f64 {
        self.distance + self.threat + self.collision + self.range
    }

    pub fn penalty(&self) -> f64 {
        self.threat + self.collision + self.range
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Indexed by agent id; `None` for agents that left the problem.
    pub agents: Vec<Option<AgentCost>>,
    /// Non-smooth part: every term except the squared distance.
    pub penalty: f64,
    /// Full objective.
    pub total: f64,
}

/// One agent as seen by the penalty terms.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyAgent {
    pub position: Vec2,
    pub path_length: f64,
    pub target: Vec2,
}

/// `½·D²` between an agent and its target.
pub fn distance_cost(agent: Vec2, target: Vec2) -> f64 {
    0.5 * (agent - target).norm_sq()
}

/// Polygonal ramp: 0 for `excess ≤ −η`, 1 for `excess ≥ η`, linear between.
/// `excess` is how far the indicator's condition is exceeded.
pub fn ramp(excess: f64, eta: f64) -> f64 {
    ((excess + eta) / (2.0 * eta)).clamp(0.0, 1.0)
}

/// Slope of [`ramp`] with respect to `excess`; zero on the flat parts.
pub fn ramp_slope(excess: f64, eta: f64) -> f64 {
    if excess.abs() < eta {
        1.0 / (2.0 * eta)
    } else {
        0.0
    }
}

pub fn threat_penalty(agent: Vec2, threats: &[RadarMissileState], params: &ScenarioParams) -> f64 {
    let (radar, missile) = threat_hits(agent, threats.iter().map(|o| o.position), params);
    params.k_d * radar as f64 + params.k_a * missile as f64
}

fn threat_hits(
    agent: Vec2,
    threats: impl Iterator<Item = Vec2>,
    params: &ScenarioParams,
) -> (u32, u32) {
    threats.fold((0, 0), |(radar, missile), o| {
        let d = agent.distance(o);
        (
            radar + u32::from(d <= params.radar_radius),
            missile + u32::from(d <= params.missile_radius),
        )
    })
}

/// `k_c` times the number of other active agents within the safe distance.
/// `agent` indexes into `agents` and is excluded from its own count.
pub fn collision_penalty(agent: usize, agents: &[AgentState], params: &ScenarioParams) -> f64 {
    let me = agents[agent].position;
    let hits = agents
        .iter()
        .enumerate()
        .filter(|(j, other)| *j != agent && other.is_active())
        .filter(|(_, other)| me.distance(other.position) <= params.safe_distance)
        .count();
    params.k_c * hits as f64
}

/// `k_l` when the travelled length plus the remaining distance exceeds the
/// range limit; reaching the limit exactly is compliant.
pub fn range_penalty(path_length: f64, distance_to_target: f64, params: &ScenarioParams) -> f64 {
    if path_length + distance_to_target > params.max_range {
        params.k_l
    } else {
        0.0
    }
}

fn assigned_target(state: &ScenarioState, assignment: &AssignmentTable, agent: usize) -> Result<Vec2> {
    let target = assignment.target_of(agent).ok_or(Error::Unassigned(agent))?;
    state
        .targets
        .get(target)
        .map(|t| t.position)
        .ok_or(Error::Unassigned(agent))
}

fn penalty_agents(state: &ScenarioState, assignment: &AssignmentTable) -> Result<Vec<(usize, PenaltyAgent)>> {
    state
        .active_agents()
        .map(|a| {
            Ok((
                a.id,
                PenaltyAgent {
                    position: a.position,
                    path_length: a.path_length,
                    target: assigned_target(state, assignment, a.id)?,
                },
            ))
        })
        .collect()
}

/// Evaluates the objective with hard indicators over every active agent.
pub fn objective(state: &ScenarioState, assignment: &AssignmentTable) -> Result<CostBreakdown> {
    let params = &state.params;
    let active = penalty_agents(state, assignment)?;
    let threats: Vec<Vec2> = state.radar_missiles.iter().map(|o| o.position).collect();
    let mut agents = vec![None; state.agents.len()];
    for (idx, (id, a)) in active.iter().enumerate() {
        let (radar_hits, missile_hits) = threat_hits(a.position, threats.iter().copied(), params);
        let collision_hits = active
            .iter()
            .enumerate()
            .filter(|(j, (_, b))| *j != idx && a.position.distance(b.position) <= params.safe_distance)
            .count() as u32;
        let d = a.position.distance(a.target);
        let range = range_penalty(a.path_length, d, params);
        agents[*id] = Some(AgentCost {
            distance: distance_cost(a.position, a.target),
            threat: params.k_d * radar_hits as f64 + params.k_a * missile_hits as f64,
            collision: params.k_c * collision_hits as f64,
            range,
            radar_hits,
            missile_hits,
            collision_hits,
            over_range: range > 0.0,
        });
    }
    let penalty = agents.iter().flatten().map(AgentCost::penalty).sum();
    let total = agents.iter().flatten().map(AgentCost::total).sum();
    Ok(CostBreakdown {
        agents,
        penalty,
        total,
    })
}

/// Continuous version of the non-smooth part over explicit agent and threat
/// lists.
pub fn smoothed_penalty_of(agents: &[PenaltyAgent], threats: &[Vec2], params: &ScenarioParams) -> f64 {
    let eta = params.smoothing_width;
    let mut total = 0.0;
    for (i, a) in agents.iter().enumerate() {
        for &o in threats {
            let d = a.position.distance(o);
            total += params.k_d * ramp(params.radar_radius - d, eta);
            total += params.k_a * ramp(params.missile_radius - d, eta);
        }
        for (j, b) in agents.iter().enumerate() {
            if i != j {
                let d = a.position.distance(b.position);
                total += params.k_c * ramp(params.safe_distance - d, eta);
            }
        }
        let reach = a.path_length + a.position.distance(a.target);
        total += params.k_l * ramp(reach - params.max_range, eta);
    }
    total
}

pub fn smoothed_penalty(state: &ScenarioState, assignment: &AssignmentTable) -> Result<f64> {
    let agents: Vec<PenaltyAgent> = penalty_agents(state, assignment)?.into_iter().map(|(_, a)| a).collect();
    let threats: Vec<Vec2> = state.radar_missiles.iter().map(|o| o.position).collect();
    Ok(smoothed_penalty_of(&agents, &threats, &state.params))
}
