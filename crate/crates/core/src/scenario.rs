//! World model: parameters, entity states, scenario files and the random
//! motion of targets and radar-missile sites.
//!
//! Units are fixed throughout the crate: kilometres, seconds, km/s. The one
//! exception is `gravity`, which is stored in m/s² as it is usually quoted
//! and converted where the heading limit is derived.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::Path;

fn default_gravity() -> f64 {
    9.8
}

fn default_smoothing_width() -> f64 {
    0.2
}

fn default_assignment_period() -> u64 {
    5
}

fn default_assignment_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    /// The operating region is the square `[0, 2h]²`.
    pub region_half_extent: f64,
    pub n_agents: usize,
    pub n_radar_missiles: usize,
    pub n_targets: usize,
    /// Radar detection radius.
    pub radar_radius: f64,
    /// Missile attack radius, strictly inside the radar radius.
    pub missile_radius: f64,
    pub safe_distance: f64,
    pub v_max: f64,
    /// Lateral overload bound (dimensionless, multiples of g).
    pub n_max: f64,
    /// m/s².
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Maximum path length per agent.
    pub max_range: f64,
    pub k_d: f64,
    pub k_a: f64,
    pub k_c: f64,
    pub k_l: f64,
    /// Tick duration.
    pub dt: f64,
    /// Speed bound for targets.
    pub target_max_speed: f64,
    /// Speed bound for radar-missile sites; defaults to `target_max_speed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threat_max_speed: Option<f64>,
    /// Half-width of the polygonal ramp replacing each 0–1 indicator.
    #[serde(default = "default_smoothing_width")]
    pub smoothing_width: f64,
    /// Ticks between routine reassignments.
    #[serde(default = "default_assignment_period")]
    pub assignment_period: u64,
    /// Numerator of the assignment edge weight `scale / distance`.
    #[serde(default = "default_assignment_scale")]
    pub assignment_scale: f64,
}

impl ScenarioParams {
    /// The 200 km × 200 km engagement with ten agents, five targets and four
    /// radar-missile sites.
    pub fn reference() -> Self {
        ScenarioParams {
            region_half_extent: 100.0,
            n_agents: 10,
            n_radar_missiles: 4,
            n_targets: 5,
            radar_radius: 10.0,
            missile_radius: 5.0,
            safe_distance: 0.1,
            v_max: 0.06,
            n_max: 10.0,
            gravity: default_gravity(),
            max_range: 500.0,
            k_d: 1e5,
            k_a: 1e5,
            k_c: 1e4,
            k_l: 1e4,
            dt: 5.0,
            target_max_speed: 0.01,
            threat_max_speed: None,
            smoothing_width: default_smoothing_width(),
            assignment_period: default_assignment_period(),
            assignment_scale: default_assignment_scale(),
        }
    }

    pub fn region_size(&self) -> f64 {
        2.0 * self.region_half_extent
    }

    /// Distance covered in one tick at full speed.
    pub fn step_length(&self) -> f64 {
        self.v_max * self.dt
    }

    /// Largest heading change allowed in one tick, `n_max·g·dt / v_max`.
    pub fn psi_max(&self) -> f64 {
        self.n_max * (self.gravity * 1e-3) * self.dt / self.v_max
    }

    pub fn threat_speed(&self) -> f64 {
        self.threat_max_speed.unwrap_or(self.target_max_speed)
    }

    /// Upper bound on the non-smooth penalty part over any state.
    pub fn penalty_ceiling(&self) -> f64 {
        let n = self.n_agents as f64;
        let m = self.n_radar_missiles as f64;
        n * (m * (self.k_d + self.k_a) + n * self.k_c + self.k_l)
    }

    /// Length of the network input vector: two coordinates per agent and per
    /// radar-missile site.
    pub fn input_dim(&self) -> usize {
        2 * self.n_agents + 2 * self.n_radar_missiles
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.region_half_extent,
            self.radar_radius,
            self.missile_radius,
            self.safe_distance,
            self.v_max,
            self.n_max,
            self.gravity,
            self.max_range,
            self.k_d,
            self.k_a,
            self.k_c,
            self.k_l,
            self.dt,
            self.target_max_speed,
            self.threat_speed(),
            self.smoothing_width,
            self.assignment_scale,
        ];
        check(finite.iter().all(|v| v.is_finite()), "all parameters finite")?;
        check(self.region_half_extent > 0.0, "region_half_extent > 0")?;
        check(self.radar_radius > self.missile_radius, "R_d > R_a")?;
        check(self.missile_radius > 0.0, "R_a > 0")?;
        // The reference engagement uses k_a = k_d, so equality is accepted.
        check(self.k_a >= self.k_d, "k_a ≥ k_d")?;
        check(self.k_d > 0.0, "k_d > 0")?;
        check(self.k_c > 0.0, "k_c > 0")?;
        check(self.k_l > 0.0, "k_l > 0")?;
        check(self.n_targets <= self.n_agents, "K ≤ N")?;
        check(self.v_max > 0.0, "v_max > 0")?;
        check(self.dt > 0.0, "dt > 0")?;
        check(self.smoothing_width > 0.0, "η > 0")?;
        check(self.max_range > 0.0, "L_bar > 0")?;
        check(self.assignment_period >= 1, "assignment_period ≥ 1")?;
        check(self.safe_distance > 0.0, "D_safe > 0")?;
        check(self.n_max > 0.0, "n_max > 0")?;
        check(self.gravity > 0.0, "g > 0")?;
        check(self.target_max_speed >= 0.0, "δ ≥ 0")?;
        check(self.threat_speed() >= 0.0, "threat speed ≥ 0")?;
        check(self.assignment_scale > 0.0, "λ > 0")?;
        Ok(())
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} violated")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    /// Radians, `atan2` of the velocity.
    pub heading: f64,
    /// Distance travelled so far.
    pub path_length: f64,
    pub alive: bool,
    pub captured: bool,
}

impl AgentState {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Alive and still pursuing a target.
    pub fn is_active(&self) -> bool {
        self.alive && !self.captured
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarMissileState {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub id: usize,
    pub position: Vec2,
    pub velocity: Vec2,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioState {
    pub tick: u64,
    pub params: ScenarioParams,
    pub agents: Vec<AgentState>,
    pub radar_missiles: Vec<RadarMissileState>,
    pub targets: Vec<TargetState>,
    pub rng_seed: u64,
}

impl ScenarioState {
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        p.validate()?;
        check(self.agents.len() == p.n_agents, "agent count = N")?;
        check(self.radar_missiles.len() == p.n_radar_missiles, "radar-missile count = M")?;
        check(self.targets.len() == p.n_targets, "target count = K")?;
        let positions = self
            .agents
            .iter()
            .map(|a| a.position)
            .chain(self.radar_missiles.iter().map(|o| o.position))
            .chain(self.targets.iter().map(|t| t.position));
        check(positions.into_iter().all(Vec2::is_finite), "finite positions")?;
        for a in &self.agents {
            check(a.velocity.is_finite(), "finite agent velocity")?;
            check(a.speed() <= p.v_max + 1e-12, "agent speed ≤ v_max")?;
            check(a.path_length >= 0.0, "L_i ≥ 0")?;
            if a.speed() > 0.0 {
                let mismatch = wrap_angle(a.heading - a.velocity.heading()).abs();
                check(mismatch <= 1e-9, "heading matches velocity")?;
            }
        }
        Ok(())
    }

    pub fn active_agents(&self) -> impl Iterator<Item = &AgentState> {
        self.agents.iter().filter(|a| a.is_active())
    }

    pub fn alive_targets(&self) -> impl Iterator<Item = &TargetState> {
        self.targets.iter().filter(|t| t.alive)
    }

    /// Network input `(x₁ᵁ, y₁ᵁ, …, x_Nᵁ, y_Nᵁ, x₁ᴼ, y₁ᴼ, …)` with the
    /// coordinates of agents that left the problem zero-padded.
    pub fn network_input(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.params.input_dim());
        for a in &self.agents {
            if a.is_active() {
                x.extend([a.position.x, a.position.y]);
            } else {
                x.extend([0.0, 0.0]);
            }
        }
        for o in &self.radar_missiles {
            x.extend([o.position.x, o.position.y]);
        }
        x
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        let state = file.into_state()?;
        state.validate()?;
        Ok(state)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from_state(self))
            .expect("scenario serialization cannot fail")
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > std::f64::consts::PI {
        r -= TAU;
    }
    r
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioState> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioState::from_json_str(&text)
}

pub fn save_scenario(state: &ScenarioState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, state.to_json_string()).map_err(|e| Error::io(path, e))
}

/// On-disk scenario layout. Entities are `{x, y, vx, vy}` records; the
/// optional fields carry mid-run state so a snapshot reloads unchanged.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    params: ScenarioParams,
    agents: Vec<EntityRecord>,
    targets: Vec<EntityRecord>,
    radar_missiles: Vec<EntityRecord>,
    seed: u64,
    #[serde(default)]
    tick: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord {
    x: f64,
    y: f64,
    #[serde(default)]
    vx: f64,
    #[serde(default)]
    vy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    heading: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alive: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    captured: Option<bool>,
}

impl EntityRecord {
    fn plain(position: Vec2, velocity: Vec2) -> Self {
        EntityRecord {
            x: position.x,
            y: position.y,
            vx: velocity.x,
            vy: velocity.y,
            heading: None,
            path_length: None,
            alive: None,
            captured: None,
        }
    }

    fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    fn velocity(&self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }
}

impl ScenarioFile {
    fn into_state(self) -> Result<ScenarioState> {
        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(id, r)| AgentState {
                id,
                position: r.position(),
                velocity: r.velocity(),
                heading: r.heading.unwrap_or_else(|| r.velocity().heading()),
                path_length: r.path_length.unwrap_or(0.0),
                alive: r.alive.unwrap_or(true),
                captured: r.captured.unwrap_or(false),
            })
            .collect();
        let targets = self
            .targets
            .iter()
            .enumerate()
            .map(|(id, r)| TargetState {
                id,
                position: r.position(),
                velocity: r.velocity(),
                alive: r.alive.unwrap_or(true),
            })
            .collect();
        let radar_missiles = self
            .radar_missiles
            .iter()
            .enumerate()
            .map(|(id, r)| RadarMissileState {
                id,
                position: r.position(),
                velocity: r.velocity(),
            })
            .collect();
        Ok(ScenarioState {
            tick: self.tick,
            params: self.params,
            agents,
            radar_missiles,
            targets,
            rng_seed: self.seed,
        })
    }

    fn from_state(state: &ScenarioState) -> Self {
        ScenarioFile {
            params: state.params.clone(),
            agents: state
                .agents
                .iter()
                .map(|a| EntityRecord {
                    heading: Some(a.heading),
                    path_length: Some(a.path_length),
                    alive: Some(a.alive),
                    captured: Some(a.captured),
                    ..EntityRecord::plain(a.position, a.velocity)
                })
                .collect(),
            targets: state
                .targets
                .iter()
                .map(|t| EntityRecord {
                    alive: Some(t.alive),
                    ..EntityRecord::plain(t.position, t.velocity)
                })
                .collect(),
            radar_missiles: state
                .radar_missiles
                .iter()
                .map(|o| EntityRecord::plain(o.position, o.velocity))
                .collect(),
            seed: state.rng_seed,
            tick: state.tick,
        }
    }
}

fn uniform_point(rng: &mut impl Rng, size: f64) -> Vec2 {
    Vec2::new(rng.gen::<f64>() * size, rng.gen::<f64>() * size)
}

fn random_direction(rng: &mut impl Rng) -> Vec2 {
    Vec2::from_angle(rng.gen::<f64>() * TAU)
}

/// Draws every entity uniformly over the region. Agents start at full speed
/// on a uniform random heading; targets and sites get a random direction at
/// their speed bound.
pub fn random_scenario(params: &ScenarioParams, seed: u64) -> Result<ScenarioState> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = params.region_size();
    let agents = (0..params.n_agents)
        .map(|id| {
            let position = uniform_point(&mut rng, size);
            let heading = rng.gen::<f64>() * TAU;
            let velocity = Vec2::from_angle(heading) * params.v_max;
            AgentState {
                id,
                position,
                velocity,
                heading: velocity.heading(),
                path_length: 0.0,
                alive: true,
                captured: false,
            }
        })
        .collect();
    let targets = (0..params.n_targets)
        .map(|id| TargetState {
            id,
            position: uniform_point(&mut rng, size),
            velocity: random_direction(&mut rng) * params.target_max_speed,
            alive: true,
        })
        .collect();
    let radar_missiles = (0..params.n_radar_missiles)
        .map(|id| RadarMissileState {
            id,
            position: uniform_point(&mut rng, size),
            velocity: random_direction(&mut rng) * params.threat_speed(),
        })
        .collect();
    Ok(ScenarioState {
        tick: 0,
        params: params.clone(),
        agents,
        radar_missiles,
        targets,
        rng_seed: seed,
    })
}

/// Mirror a coordinate back into `[0, size]`.
fn reflect(v: f64, size: f64) -> f64 {
    let r = if v < 0.0 {
        -v
    } else if v > size {
        2.0 * size - v
    } else {
        v
    };
    r.clamp(0.0, size)
}

fn random_walk_step(position: Vec2, step: f64, size: f64, rng: &mut impl Rng) -> Vec2 {
    let raw = position + random_direction(rng) * step;
    Vec2::new(reflect(raw.x, size), reflect(raw.y, size))
}

/// Moves every alive target and every radar-missile site one random-walk
/// step of exactly `speed·dt`, reflected at the region boundary. Agents are
/// left alone.
pub fn advance_entities(state: &mut ScenarioState, rng: &mut impl Rng) {
    let p = &state.params;
    let size = p.region_size();
    let (target_step, threat_step, dt) = (p.target_max_speed * p.dt, p.threat_speed() * p.dt, p.dt);
    for t in state.targets.iter_mut() {
        // Draw even for dead targets so the stream does not depend on captures.
        let next = random_walk_step(t.position, target_step, size, rng);
        if t.alive {
            t.velocity = (next - t.position) * (1.0 / dt);
            t.position = next;
        }
    }
    for o in state.radar_missiles.iter_mut() {
        let next = random_walk_step(o.position, threat_step, size, rng);
        o.velocity = (next - o.position) * (1.0 / dt);
        o.position = next;
    }
}
