//! Agent-to-target assignment.
//!
//! Targets are duplicated cyclically until there is one slot per agent, edge
//! weights are `λ / distance`, and the maximum-weight perfect matching is
//! found with the labeling form of the Kuhn-Munkres algorithm: grow an
//! alternating tree in the equality subgraph, and when it stalls lower the
//! labels of tree agents and raise those of tree slots by the minimum slack.

use crate::error::{Error, Result};
use crate::scenario::ScenarioState;
use serde::{Deserialize, Serialize};

/// Below this distance (km) an agent and a target count as coincident and
/// the edge weight is capped instead of dividing by ~0.
pub const COINCIDENT_DISTANCE: f64 = 1e-9;

/// Relative tolerance used to decide whether an edge is tight.
const TIGHT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentTable {
    pub tick: u64,
    /// Real target id per agent id; `None` for agents without a target.
    targets: Vec<Option<usize>>,
    pub total_weight: f64,
    /// Agent and target sets the table was computed for.
    pub active_agents: Vec<usize>,
    pub alive_targets: Vec<usize>,
}

impl AssignmentTable {
    pub fn from_pairs(tick: u64, pairs: &[(usize, usize)], total_weight: f64) -> Self {
        let len = pairs.iter().map(|&(a, _)| a + 1).max().unwrap_or(0);
        let mut targets = vec![None; len];
        for &(a, t) in pairs {
            targets[a] = Some(t);
        }
        let mut alive_targets: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
        alive_targets.sort_unstable();
        alive_targets.dedup();
        AssignmentTable {
            tick,
            targets,
            total_weight,
            active_agents: pairs.iter().map(|&(a, _)| a).collect(),
            alive_targets,
        }
    }

    pub fn target_of(&self, agent: usize) -> Option<usize> {
        self.targets.get(agent).copied().flatten()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.targets
            .iter()
            .enumerate()
            .filter_map(|(a, t)| t.map(|t| (a, t)))
    }

    pub fn is_empty(&self) -> bool {
        self.targets.iter().all(Option::is_none)
    }

    /// Drops every agent headed for `target`.
    pub fn release_target(&mut self, target: usize) {
        for t in self.targets.iter_mut() {
            if *t == Some(target) {
                *t = None;
            }
        }
    }
}

/// Slot list for `agents` agents over the alive targets: the targets in
/// order, then copies in the same order, until every agent has a slot.
/// Shrinking the agent count by one therefore drops the newest copy of a
/// most-duplicated target.
pub fn duplicate_targets(agents: usize, alive_targets: &[usize]) -> Result<Vec<usize>> {
    if alive_targets.is_empty() {
        return Err(Error::NoTargets);
    }
    if agents < alive_targets.len() {
        return Err(Error::Validation(format!(
            "{} agents cannot cover {} targets",
            agents,
            alive_targets.len()
        )));
    }
    Ok(alive_targets.iter().copied().cycle().take(agents).collect())
}

/// Square weighted bipartite graph with a vertex labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBipartiteGraph {
    /// Agent id per row; `None` marks a padding row with zero weights.
    pub agents: Vec<Option<usize>>,
    /// Real target id per column.
    pub slots: Vec<usize>,
    /// Row-major `agents × slots`.
    pub weights: Vec<f64>,
    pub agent_labels: Vec<f64>,
    pub slot_labels: Vec<f64>,
}

impl LabeledBipartiteGraph {
    pub fn from_weights(rows: usize, cols: usize, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), rows * cols, "weight matrix shape");
        let mut g = LabeledBipartiteGraph {
            agents: (0..rows).map(Some).collect(),
            slots: (0..cols).collect(),
            weights,
            agent_labels: vec![0.0; rows],
            slot_labels: vec![0.0; cols],
        };
        g.reset_labels();
        g
    }

    pub fn rows(&self) -> usize {
        self.agents.len()
    }

    pub fn cols(&self) -> usize {
        self.slots.len()
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols() + col]
    }

    /// `l(i) = max_j ω(i, j)` on agents and zero on slots: feasible for the
    /// `l(i) + l(j) ≥ ω(i, j)` convention.
    pub fn reset_labels(&mut self) {
        let cols = self.cols();
        self.agent_labels = (0..self.rows())
            .map(|r| {
                self.weights[r * cols..(r + 1) * cols]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .map(|m| if m.is_finite() { m } else { 0.0 })
            .collect();
        self.slot_labels = vec![0.0; cols];
    }

    /// Adds zero-weight rows until the graph is square. Used when fewer
    /// agents than targets remain.
    pub fn pad_rows(&mut self) {
        while self.rows() < self.cols() {
            self.agents.push(None);
            self.weights.extend(std::iter::repeat_n(0.0, self.cols()));
        }
        self.reset_labels();
    }

    pub fn slack(&self, row: usize, col: usize) -> f64 {
        self.agent_labels[row] + self.slot_labels[col] - self.weight(row, col)
    }

    fn magnitude(&self, row: usize, col: usize) -> f64 {
        self.agent_labels[row].abs() + self.slot_labels[col].abs() + self.weight(row, col).abs()
    }

    /// Whether `l(i) + l(j) ≥ ω(i, j)` holds on every edge, up to rounding.
    pub fn labels_feasible(&self, rtol: f64) -> bool {
        (0..self.rows()).all(|r| (0..self.cols()).all(|c| self.slack(r, c) >= -rtol * self.magnitude(r, c).max(1e-300)))
    }
}

pub fn edge_weight(distance: f64, scale: f64) -> f64 {
    scale / distance.max(COINCIDENT_DISTANCE)
}

/// Weight matrix over the active agents (rows, ascending id) and `slots`.
pub fn build_graph(state: &ScenarioState, slots: &[usize], scale: f64) -> LabeledBipartiteGraph {
    let agents: Vec<_> = state.active_agents().collect();
    let weights = agents
        .iter()
        .flat_map(|a| {
            slots
                .iter()
                .map(move |&t| edge_weight(a.position.distance(state.targets[t].position), scale))
        })
        .collect();
    let mut g = LabeledBipartiteGraph {
        agents: agents.iter().map(|a| Some(a.id)).collect(),
        slots: slots.to_vec(),
        weights,
        agent_labels: vec![],
        slot_labels: vec![],
    };
    g.reset_labels();
    g
}

/// Maximum-weight perfect matching; returns the column matched to each row.
/// Labels are left at their final, certifying values.
pub fn solve_matching(graph: &mut LabeledBipartiteGraph) -> Result<Vec<usize>> {
    solve_matching_observed(graph, |_| {})
}

/// As [`solve_matching`], calling `observe` after every label improvement.
pub fn solve_matching_observed(
    graph: &mut LabeledBipartiteGraph,
    mut observe: impl FnMut(&LabeledBipartiteGraph),
) -> Result<Vec<usize>> {
    let n = graph.rows();
    if n != graph.cols() {
        return Err(Error::NotSquare {
            rows: n,
            cols: graph.cols(),
        });
    }
    if graph.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Validation("assignment weights must be finite".into()));
    }
    let mut row_of_col: Vec<Option<usize>> = vec![None; n];
    let mut col_of_row: Vec<Option<usize>> = vec![None; n];
    let mut slack = vec![0.0; n];
    let mut slack_mag = vec![0.0; n];
    let mut slack_row = vec![0usize; n];
    let mut parent_row = vec![0usize; n];
    let mut in_s = vec![false; n];
    let mut in_t = vec![false; n];

    for root in 0..n {
        in_s.fill(false);
        in_t.fill(false);
        in_s[root] = true;
        for c in 0..n {
            slack[c] = graph.slack(root, c);
            slack_mag[c] = graph.magnitude(root, c);
            slack_row[c] = root;
        }
        let free_col = loop {
            // Lowest-index tight column outside the tree.
            let tight = (0..n).find(|&c| !in_t[c] && slack[c] <= TIGHT_RTOL * slack_mag[c]);
            let Some(c) = tight else {
                let delta = (0..n)
                    .filter(|&c| !in_t[c])
                    .map(|c| slack[c])
                    .fold(f64::INFINITY, f64::min);
                for r in (0..n).filter(|&r| in_s[r]) {
                    graph.agent_labels[r] -= delta;
                }
                for c in 0..n {
                    if in_t[c] {
                        graph.slot_labels[c] += delta;
                    } else {
                        slack[c] -= delta;
                    }
                }
                observe(graph);
                continue;
            };
            in_t[c] = true;
            parent_row[c] = slack_row[c];
            match row_of_col[c] {
                None => break c,
                Some(r) => {
                    in_s[r] = true;
                    for c2 in (0..n).filter(|&c2| !in_t[c2]) {
                        let s = graph.slack(r, c2);
                        let mag = graph.magnitude(r, c2);
                        // Keep the earlier row on ties.
                        if s < slack[c2] - TIGHT_RTOL * mag.max(slack_mag[c2]) {
                            slack[c2] = s;
                            slack_mag[c2] = mag;
                            slack_row[c2] = r;
                        }
                    }
                }
            }
        };
        // Flip the alternating path ending at the free column.
        let mut c = free_col;
        loop {
            let r = parent_row[c];
            let prev = col_of_row[r];
            col_of_row[r] = Some(c);
            row_of_col[c] = Some(r);
            match prev {
                Some(pc) if r != root => c = pc,
                _ => break,
            }
        }
    }
    Ok(col_of_row.into_iter().map(|c| c.expect("perfect matching")).collect())
}

/// Solves the graph and maps rows and slots back to agent and target ids.
pub fn solve_assignment(graph: &mut LabeledBipartiteGraph, tick: u64) -> Result<AssignmentTable> {
    let cols = solve_matching(graph)?;
    let mut pairs = Vec::new();
    let mut total = 0.0;
    for (row, &col) in cols.iter().enumerate() {
        if let Some(agent) = graph.agents[row] {
            pairs.push((agent, graph.slots[col]));
            total += graph.weight(row, col);
        }
    }
    let mut table = AssignmentTable::from_pairs(tick, &pairs, total);
    table.active_agents = graph.agents.iter().flatten().copied().collect();
    table.alive_targets = {
        let mut t = graph.slots.clone();
        t.sort_unstable();
        t.dedup();
        t
    };
    Ok(table)
}

/// Fresh assignment for the current active agents and alive targets.
pub fn assign(state: &ScenarioState) -> Result<AssignmentTable> {
    let agents: Vec<usize> = state.active_agents().map(|a| a.id).collect();
    let targets: Vec<usize> = state.alive_targets().map(|t| t.id).collect();
    if agents.is_empty() || targets.is_empty() {
        let mut t = AssignmentTable::from_pairs(state.tick, &[], 0.0);
        t.active_agents = agents;
        t.alive_targets = targets;
        return Ok(t);
    }
    let scale = state.params.assignment_scale;
    let mut graph = if agents.len() >= targets.len() {
        build_graph(state, &duplicate_targets(agents.len(), &targets)?, scale)
    } else {
        let mut g = build_graph(state, &targets, scale);
        g.pad_rows();
        g
    };
    solve_assignment(&mut graph, state.tick)
}

/// Recomputes the assignment at tick 0, on every period boundary and when
/// the active agent or alive target sets changed since the last solve;
/// otherwise returns the previous table.
pub fn maybe_reassign(state: &ScenarioState, previous: Option<&AssignmentTable>) -> Result<AssignmentTable> {
    if let Some(prev) = previous {
        let agents: Vec<usize> = state.active_agents().map(|a| a.id).collect();
        let targets: Vec<usize> = state.alive_targets().map(|t| t.id).collect();
        let unchanged = prev.active_agents == agents && prev.alive_targets == targets;
        if state.tick != 0 && !state.tick.is_multiple_of(state.params.assignment_period) && unchanged {
            return Ok(prev.clone());
        }
    }
    assign(state)
}
