//! Finite-time arrival certificate and its runtime check.
//!
//! With per-tick travel `v`, per-tick target drift at most `δ` and every
//! coordinate of `∇F*` bounded by `b`, each unclamped tick with `D > v`
//! shrinks the squared distance to the target by at least
//!
//! ```text
//! ε = −[(1 − 2√(1 − 2√2·b/v) − 2√2·δ/v)·v² + δ² + 2√2·v·δ + 4·v·b]
//! ```
//!
//! so an agent starting at distance `D₀` arrives within `D₀²/ε` ticks.

use crate::assignment::AssignmentTable;
use crate::scenario::ScenarioState;
use crate::simulator::SimulationTrace;
use crate::surrogate::SurrogateNet;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

/// Absolute slack on the per-tick decrease, relative to `v²`.
pub const MONITOR_TOL: f64 = 1e-9;

/// `ε` for per-tick speed `v`, drift `delta` and gradient bound `b`, or
/// `None` when the square root is undefined or an input is negative.
pub fn compute_epsilon(v: f64, delta: f64, b: f64) -> Option<f64> {
    if !(v > 0.0) || delta < 0.0 || b < 0.0 {
        return None;
    }
    let inner = 1.0 - 2.0 * SQRT_2 * b / v;
    if inner < 0.0 {
        return None;
    }
    let bracket =
        (1.0 - 2.0 * inner.sqrt() - 2.0 * SQRT_2 * delta / v) * v * v + delta * delta + 2.0 * SQRT_2 * v * delta + 4.0 * v * b;
    Some(-bracket)
}

/// Exclusive upper end of the admissible gradient-bound interval.
pub fn bound_limit(v: f64, delta: f64) -> f64 {
    (v * v - 2.0 * delta * delta) / (2.0 * SQRT_2 * v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conditions {
    /// `v > √2·δ`.
    pub speed: bool,
    /// `0 ≤ b < (v² − 2δ²)/(2√2·v)`.
    pub gradient_bound: bool,
    pub epsilon_positive: bool,
}

impl Conditions {
    pub fn all(&self) -> bool {
        self.speed && self.gradient_bound && self.epsilon_positive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCertificate {
    pub b: f64,
    /// Target drift per tick (km).
    pub delta: f64,
    /// Travel per tick (km).
    pub v: f64,
    pub epsilon: Option<f64>,
    pub conditions: Conditions,
    /// `(agent, D_i(0))` for every assigned active agent.
    pub initial_distances: Vec<(usize, f64)>,
    /// `⌈D_i(0)²/ε⌉` per agent, when the conditions hold.
    pub step_bounds: Option<Vec<(usize, u64)>>,
}

impl ConvergenceCertificate {
    pub fn holds(&self) -> bool {
        self.conditions.all()
    }

    /// Sum of per-agent bounds, when certified.
    pub fn total_bound(&self) -> Option<u64> {
        self.step_bounds.as_ref().map(|b| b.iter().map(|(_, k)| k).sum())
    }
}

/// Checks the conditions for a given gradient bound `b`.
pub fn certify_with_bound(b: f64, state: &ScenarioState, assignment: &AssignmentTable) -> ConvergenceCertificate {
    let p = &state.params;
    let v = p.step_length();
    let delta = p.target_max_speed * p.dt;
    let epsilon = compute_epsilon(v, delta, b);
    let conditions = Conditions {
        speed: v > SQRT_2 * delta,
        gradient_bound: b >= 0.0 && b < bound_limit(v, delta),
        epsilon_positive: epsilon.is_some_and(|e| e > 0.0),
    };
    let initial_distances: Vec<(usize, f64)> = state
        .active_agents()
        .filter_map(|a| {
            let t = assignment.target_of(a.id)?;
            Some((a.id, a.position.distance(state.targets[t].position)))
        })
        .collect();
    let step_bounds = match (conditions.all(), epsilon) {
        (true, Some(e)) => Some(
            initial_distances
                .iter()
                .map(|&(a, d)| (a, (d * d / e).ceil() as u64))
                .collect(),
        ),
        _ => None,
    };
    ConvergenceCertificate {
        b,
        delta,
        v,
        epsilon,
        conditions,
        initial_distances,
        step_bounds,
    }
}

/// Certificate with `b` taken from the network's weights.
pub fn certify(net: &SurrogateNet, state: &ScenarioState, assignment: &AssignmentTable) -> ConvergenceCertificate {
    certify_with_bound(net.weight_bound(), state, assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub tick: u64,
    pub agent: usize,
    pub decrease: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalCheck {
    pub agent: usize,
    /// Tick the final uninterrupted target segment started.
    pub segment_start: u64,
    pub start_distance: f64,
    pub arrival: u64,
    pub bound: f64,
    /// Every tick of the segment satisfied the theorem's assumptions.
    pub monitored: bool,
    pub within_bound: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub monitored: usize,
    pub excluded_clamp: usize,
    pub excluded_retarget: usize,
    pub excluded_penalty: usize,
    /// Agent-ticks starting within one step of the target.
    pub excluded_near: usize,
    pub violations: Vec<Violation>,
    pub arrivals: Vec<ArrivalCheck>,
    /// Largest observed `D(k+1)² − D(k)²` over monitored ticks.
    pub worst_decrease: Option<f64>,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.arrivals.iter().all(|a| !a.monitored || a.within_bound)
    }
}

/// Checks `D(k+1)² − D(k)² ≤ −ε + tol` on every agent-tick that keeps its
/// target, flies unclamped, has no analytic penalty term active and starts
/// farther than one step from the target; and checks each arrival against
/// `D²/ε` from the start of its final target segment.
pub fn monitor_descent(trace: &SimulationTrace, epsilon: f64, v: f64) -> MonitorReport {
    let tol = MONITOR_TOL * v * v;
    let mut r = MonitorReport::default();
    let mut worst = f64::NEG_INFINITY;
    let mut records = std::iter::once(&trace.initial).chain(&trace.ticks);
    let Some(first) = records.next() else {
        return r;
    };
    let n = first.agents.len();
    // Per agent: (segment start tick, start distance, segment clean so far).
    let mut segment: Vec<Option<(u64, f64, bool)>> = first
        .agents
        .iter()
        .map(|a| a.distance.map(|d| (first.tick, d, true)))
        .collect();
    let mut prev = first;
    for rec in records {
        for i in 0..n {
            let (a0, a1) = (&prev.agents[i], &rec.agents[i]);
            if !a0.alive || a0.captured || !a1.alive {
                continue;
            }
            let (Some(d0), Some(d1)) = (a0.distance, a1.distance) else {
                segment[i] = None;
                continue;
            };
            if a0.target != a1.target {
                r.excluded_retarget += 1;
                segment[i] = Some((rec.tick, d1, true));
                continue;
            }
            let seg = segment[i].get_or_insert((prev.tick, d0, true));
            if a1.clamp {
                r.excluded_clamp += 1;
                seg.2 = false;
            } else if a1.penalty_active {
                r.excluded_penalty += 1;
                seg.2 = false;
            } else if d0 <= v {
                r.excluded_near += 1;
            } else {
                r.monitored += 1;
                let dec = d1 * d1 - d0 * d0;
                worst = worst.max(dec);
                if dec > -epsilon + tol {
                    r.violations.push(Violation {
                        tick: rec.tick,
                        agent: i,
                        decrease: dec,
                    });
                    seg.2 = false;
                }
            }
            if a1.captured {
                let (start, d, clean) = *seg;
                let bound = d * d / epsilon;
                let moves = (rec.tick - start) as f64;
                r.arrivals.push(ArrivalCheck {
                    agent: i,
                    segment_start: start,
                    start_distance: d,
                    arrival: rec.tick,
                    bound,
                    monitored: clean,
                    within_bound: moves < bound,
                });
            }
        }
        prev = rec;
    }
    r.worst_decrease = worst.is_finite().then_some(worst);
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unperturbed_epsilon_is_v_squared() {
        for v in [0.06, 0.3, 1.0, 7.5] {
            let e = compute_epsilon(v, 0.0, 0.0).unwrap();
            assert!((e - v * v).abs() <= 1e-15 * v * v);
        }
    }

    #[test]
    fn sqrt_domain_violation_is_reported() {
        assert_eq!(compute_epsilon(0.3, 0.0, 0.3), None);
        assert_eq!(compute_epsilon(0.0, 0.0, 0.0), None);
    }

    #[test]
    fn monotone_in_b_and_delta() {
        let v = 0.3;
        let mut last = f64::INFINITY;
        for k in 0..50 {
            let e = compute_epsilon(v, 0.01, k as f64 * 1e-3).unwrap();
            assert!(e < last);
            last = e;
        }
        let mut last = f64::INFINITY;
        for k in 0..50 {
            let e = compute_epsilon(v, k as f64 * 1e-3, 0.01).unwrap();
            assert!(e < last);
            last = e;
        }
    }

    #[test]
    fn interval_endpoint_is_excluded() {
        use crate::scenario::{random_scenario, ScenarioParams};
        let s = random_scenario(&ScenarioParams::reference(), 0).unwrap();
        let a = crate::assignment::assign(&s).unwrap();
        let v = s.params.step_length();
        let delta = s.params.target_max_speed * s.params.dt;
        let c = certify_with_bound(bound_limit(v, delta), &s, &a);
        assert!(!c.conditions.gradient_bound);
        assert!(c.step_bounds.is_none());
    }
}
