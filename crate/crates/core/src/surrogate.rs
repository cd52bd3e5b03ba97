//! Single-hidden-layer sigmoid network approximating the smoothed penalty.
//!
//! Inputs are the raw agent and threat coordinates (km). Internally each
//! coordinate is mapped affinely onto `[-1, 1]` and the label onto `[0, 1]`;
//! both maps are stored with the weights so [`SurrogateNet::forward`] and
//! [`SurrogateNet::input_gradient`] work in physical units.

use crate::cost::{smoothed_penalty_of, PenaltyAgent};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scenario::ScenarioParams;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

const FORMAT_TAG: &str = "swarmpath-surrogate";
const FORMAT_VERSION: u32 = 1;

/// Rows per gradient chunk. Chunks are reduced in index order, so results do
/// not depend on the number of worker threads.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateNet {
    pub input_dim: usize,
    /// Number of leading input pairs that are agent coordinates.
    pub n_agents: usize,
    pub hidden: usize,
    /// `ω^j`, row-major `hidden × input_dim`.
    pub weights: Vec<f64>,
    /// `θ_j`.
    pub biases: Vec<f64>,
    /// `λ_j`.
    pub output_weights: Vec<f64>,
    /// `μ`.
    pub output_bias: f64,
    pub input_center: Vec<f64>,
    pub input_half_range: Vec<f64>,
    pub output_offset: f64,
    pub output_scale: f64,
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl SurrogateNet {
    /// Network with every parameter zero and identity input/output maps.
    pub fn zeros(input_dim: usize, n_agents: usize, hidden: usize) -> Self {
        SurrogateNet {
            input_dim,
            n_agents,
            hidden,
            weights: vec![0.0; hidden * input_dim],
            biases: vec![0.0; hidden],
            output_weights: vec![0.0; hidden],
            output_bias: 0.0,
            input_center: vec![0.0; input_dim],
            input_half_range: vec![1.0; input_dim],
            output_offset: 0.0,
            output_scale: 1.0,
        }
    }

    /// Zero network shaped for `params`.
    pub fn zeros_for(params: &ScenarioParams, hidden: usize) -> Self {
        let mut net = Self::zeros(params.input_dim(), params.n_agents, hidden);
        net.input_center = vec![params.region_half_extent; net.input_dim];
        net.input_half_range = vec![params.region_half_extent; net.input_dim];
        net
    }

    /// Random weights of the given spread with zero biases; used as the
    /// training start and in tests.
    pub fn random(input_dim: usize, n_agents: usize, hidden: usize, spread: f64, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(input_dim, n_agents, hidden);
        let a = spread * (6.0 / (input_dim + hidden) as f64).sqrt();
        let b = spread * (6.0 / (hidden + 1) as f64).sqrt();
        net.weights.iter_mut().for_each(|w| *w = rng.gen_range(-a..=a));
        net.output_weights.iter_mut().for_each(|w| *w = rng.gen_range(-b..=b));
        net
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Weights(what.to_string()));
        if self.hidden == 0 {
            return bad("hidden layer must not be empty");
        }
        if 2 * self.n_agents > self.input_dim {
            return bad("agent count exceeds input dimension");
        }
        if self.weights.len() != self.hidden * self.input_dim
            || self.biases.len() != self.hidden
            || self.output_weights.len() != self.hidden
            || self.input_center.len() != self.input_dim
            || self.input_half_range.len() != self.input_dim
        {
            return bad("parameter array lengths do not match the declared shape");
        }
        let all = self
            .weights
            .iter()
            .chain(&self.biases)
            .chain(&self.output_weights)
            .chain(&self.input_center)
            .chain(&self.input_half_range)
            .chain([&self.output_bias, &self.output_offset, &self.output_scale]);
        for v in all {
            if !v.is_finite() {
                return bad("non-finite parameter");
            }
        }
        if self.input_half_range.iter().any(|&h| h <= 0.0) {
            return bad("input half-range must be positive");
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn standardize(&self, x: &[f64], z: &mut [f64]) {
        for (m, zm) in z.iter_mut().enumerate() {
            *zm = (x[m] - self.input_center[m]) / self.input_half_range[m];
        }
    }

    fn activation(&self, j: usize, z: &[f64]) -> f64 {
        let row = &self.weights[j * self.input_dim..(j + 1) * self.input_dim];
        row.iter().zip(z).map(|(w, z)| w * z).sum::<f64>() + self.biases[j]
    }

    /// Output on standardized inputs, before the label map.
    fn normalized_output(&self, z: &[f64]) -> f64 {
        self.output_bias
            + (0..self.hidden)
                .map(|j| self.output_weights[j] * sigmoid(self.activation(j, z)))
                .sum::<f64>()
    }

    /// `F*(X)` in penalty units.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut z = vec![0.0; self.input_dim];
        self.standardize(x, &mut z);
        Ok(self.output_offset + self.output_scale * self.normalized_output(&z))
    }

    /// `∂F*/∂X_m` for every input coordinate, in penalty units per km.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut z = vec![0.0; self.input_dim];
        self.standardize(x, &mut z);
        let mut g = vec![0.0; self.input_dim];
        for j in 0..self.hidden {
            let s = sigmoid(self.activation(j, &z));
            let c = self.output_weights[j] * s * (1.0 - s);
            if c == 0.0 {
                continue;
            }
            let row = &self.weights[j * self.input_dim..(j + 1) * self.input_dim];
            for (gm, w) in g.iter_mut().zip(row) {
                *gm += c * w;
            }
        }
        for (m, gm) in g.iter_mut().enumerate() {
            *gm *= self.output_scale / self.input_half_range[m];
        }
        Ok(g)
    }

    /// Gradient with respect to agent `agent`'s position only.
    pub fn agent_gradient(&self, x: &[f64], agent: usize) -> Result<Vec2> {
        let g = self.input_gradient(x)?;
        Ok(Vec2::new(g[2 * agent], g[2 * agent + 1]))
    }

    /// `max_m ¼ Σ_j |λ_j ω_m^j|` over agent coordinates, in physical units:
    /// an upper bound on every `|∂F*/∂x_i|`, `|∂F*/∂y_i|` since `σ' ≤ ¼`.
    pub fn weight_bound(&self) -> f64 {
        (0..2 * self.n_agents)
            .map(|m| {
                let s: f64 = (0..self.hidden)
                    .map(|j| (self.output_weights[j] * self.weights[j * self.input_dim + m]).abs())
                    .sum();
                0.25 * s * self.output_scale.abs() / self.input_half_range[m]
            })
            .fold(0.0, f64::max)
    }
}

/// Sets the coordinates of every lost agent to zero. Agents are 0-based:
/// agent `i` owns entries `2i` and `2i + 1`.
pub fn zero_pad(x: &[f64], lost: &[usize]) -> Vec<f64> {
    let mut out = x.to_vec();
    for &i in lost {
        out[2 * i] = 0.0;
        out[2 * i + 1] = 0.0;
    }
    out
}

/// Labeled inputs with the coordinate map used for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_dim: usize,
    pub n_agents: usize,
    /// Row-major `len × input_dim`, raw km.
    pub inputs: Vec<f64>,
    pub labels: Vec<f64>,
    pub input_center: Vec<f64>,
    pub input_half_range: Vec<f64>,
}

impl Dataset {
    pub fn new(
        input_dim: usize,
        n_agents: usize,
        inputs: Vec<f64>,
        labels: Vec<f64>,
        input_center: Vec<f64>,
        input_half_range: Vec<f64>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() * input_dim {
            return Err(Error::Dimension {
                expected: labels.len() * input_dim,
                actual: inputs.len(),
            });
        }
        if input_center.len() != input_dim || input_half_range.len() != input_dim {
            return Err(Error::Validation("coordinate map length must equal input dimension".into()));
        }
        Ok(Dataset {
            input_dim,
            n_agents,
            inputs,
            labels,
            input_center,
            input_half_range,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// SHA-256 over dimensions, inputs and labels (little-endian f64 bits).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.input_dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for v in self.inputs.iter().chain(&self.labels) {
            h.update(v.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// Uniform random agent and threat positions labeled with the smoothed
/// penalty. The network cannot see targets or travelled range, so each
/// sample draws its own target per agent and a path length uniform on
/// `[0, 1.2·L̄]`.
pub fn generate_dataset(params: &ScenarioParams, n_samples: usize, seed: u64) -> Result<Dataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = params.region_size();
    let n = params.n_agents;
    let m = params.n_radar_missiles;
    let dim = params.input_dim();
    let mut inputs = Vec::with_capacity(n_samples * dim);
    let mut labels = Vec::with_capacity(n_samples);
    let point = |rng: &mut ChaCha8Rng| Vec2::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side));
    for _ in 0..n_samples {
        let agents: Vec<Vec2> = (0..n).map(|_| point(&mut rng)).collect();
        let threats: Vec<Vec2> = (0..m).map(|_| point(&mut rng)).collect();
        let penalty_agents: Vec<PenaltyAgent> = agents
            .iter()
            .map(|&p| PenaltyAgent {
                position: p,
                target: point(&mut rng),
                path_length: rng.gen_range(0.0..=1.2 * params.max_range),
            })
            .collect();
        for p in agents.iter().chain(&threats) {
            inputs.extend([p.x, p.y]);
        }
        labels.push(smoothed_penalty_of(&penalty_agents, &threats, params));
    }
    Dataset::new(
        dim,
        n,
        inputs,
        labels,
        vec![params.region_half_extent; dim],
        vec![params.region_half_extent; dim],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Mini-batch gradient descent with heavy-ball momentum.
    Momentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate at epoch `e` is `learning_rate / (1 + lr_decay·e)`.
    pub lr_decay: f64,
    pub momentum: f64,
    pub optimizer: Optimizer,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Train and validation fractions; the rest is the test split.
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 75,
            max_epochs: 1000,
            batch_size: 256,
            learning_rate: 1e-2,
            lr_decay: 1e-3,
            momentum: 0.9,
            optimizer: Optimizer::Adam,
            patience: 20,
            train_fraction: 0.7,
            validation_fraction: 0.15,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// MSE on labels min–max normalized over the training split.
    pub train_mse: f64,
    pub validation_mse: f64,
    pub test_mse: f64,
    /// Variance of the normalized test labels, for judging the MSEs.
    pub test_label_variance: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub dataset_size: usize,
    pub splits: [f64; 3],
    pub dataset_hash: String,
    pub seed: u64,
}

struct Split {
    train: std::ops::Range<usize>,
    validation: std::ops::Range<usize>,
    test: std::ops::Range<usize>,
}

fn split(n: usize, cfg: &TrainConfig) -> Split {
    let a = ((n as f64) * cfg.train_fraction).round() as usize;
    let b = (a + ((n as f64) * cfg.validation_fraction).round() as usize).min(n);
    Split {
        train: 0..a.min(n),
        validation: a.min(n)..b,
        test: b..n,
    }
}

/// Gradient accumulator laid out as `[ω | θ | λ | μ]`.
fn accumulate_gradient(net: &SurrogateNet, data: &Dataset, targets: &[f64], rows: &[usize], scale: f64) -> Vec<f64> {
    let (dim, hidden) = (net.input_dim, net.hidden);
    let mut g = vec![0.0; hidden * dim + 2 * hidden + 1];
    let mut z = vec![0.0; dim];
    let mut s = vec![0.0; hidden];
    for &r in rows {
        net.standardize(data.row(r), &mut z);
        let mut y = net.output_bias;
        for j in 0..hidden {
            s[j] = sigmoid(net.activation(j, &z));
            y += net.output_weights[j] * s[j];
        }
        let dy = 2.0 * (y - targets[r]) * scale;
        let (gw, rest) = g.split_at_mut(hidden * dim);
        let (gb, rest) = rest.split_at_mut(hidden);
        let (gl, gm) = rest.split_at_mut(hidden);
        gm[0] += dy;
        for j in 0..hidden {
            gl[j] += dy * s[j];
            let ga = dy * net.output_weights[j] * s[j] * (1.0 - s[j]);
            gb[j] += ga;
            for (w, zm) in gw[j * dim..(j + 1) * dim].iter_mut().zip(&z) {
                *w += ga * zm;
            }
        }
    }
    g
}

fn mse(net: &SurrogateNet, data: &Dataset, targets: &[f64], range: std::ops::Range<usize>) -> f64 {
    if range.is_empty() {
        return 0.0;
    }
    let idx: Vec<usize> = range.collect();
    let partial: Vec<f64> = idx
        .par_chunks(CHUNK)
        .map(|rows| {
            let mut z = vec![0.0; net.input_dim];
            rows.iter()
                .map(|&r| {
                    net.standardize(data.row(r), &mut z);
                    (net.normalized_output(&z) - targets[r]).powi(2)
                })
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum::<f64>() / idx.len() as f64
}

fn parameters_mut(net: &mut SurrogateNet) -> impl Iterator<Item = &mut f64> {
    net.weights
        .iter_mut()
        .chain(net.biases.iter_mut())
        .chain(net.output_weights.iter_mut())
        .chain(std::iter::once(&mut net.output_bias))
}

/// Trains by backpropagation on the mean squared error of the normalized
/// labels, stopping early when validation MSE has not improved for
/// `patience` epochs. The best-validation weights are returned.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(SurrogateNet, TrainingReport)> {
    if cfg.hidden == 0 {
        return Err(Error::Config("hidden layer size must be positive".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let sp = split(data.len(), cfg);
    if sp.train.is_empty() {
        return Err(Error::EmptyTraining);
    }
    let train_labels = &data.labels[sp.train.clone()];
    let lo = train_labels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = train_labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { hi - lo } else { 1.0 };
    let targets: Vec<f64> = data.labels.iter().map(|y| (y - lo) / scale).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = SurrogateNet::random(data.input_dim, data.n_agents, cfg.hidden, 1.0, &mut rng);
    net.input_center = data.input_center.clone();
    net.input_half_range = data.input_half_range.clone();
    net.output_offset = lo;
    net.output_scale = scale;
    net.output_bias = train_labels.iter().map(|y| (y - lo) / scale).sum::<f64>() / train_labels.len() as f64;

    let n_params = net.weights.len() + 2 * net.hidden + 1;
    let mut m1 = vec![0.0; n_params];
    let mut m2 = vec![0.0; n_params];
    let mut step = 0i32;
    let mut order: Vec<usize> = sp.train.clone().collect();
    let mut best = (mse(&net, data, &targets, sp.validation.clone()), net.clone(), 0);
    if sp.validation.is_empty() {
        best.0 = mse(&net, data, &targets, sp.train.clone());
    }
    let mut epochs = 0;
    for epoch in 0..cfg.max_epochs {
        epochs = epoch + 1;
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        for batch in order.chunks(cfg.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            let parts: Vec<Vec<f64>> = batch
                .par_chunks(CHUNK)
                .map(|rows| accumulate_gradient(&net, data, &targets, rows, inv))
                .collect();
            let mut g = vec![0.0; n_params];
            for p in &parts {
                for (a, b) in g.iter_mut().zip(p) {
                    *a += b;
                }
            }
            step += 1;
            match cfg.optimizer {
                Optimizer::Momentum => {
                    for ((w, v), gi) in parameters_mut(&mut net).zip(m1.iter_mut()).zip(&g) {
                        *v = cfg.momentum * *v - lr * gi;
                        *w += *v;
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                    let c1 = 1.0 - f64::powi(b1, step);
                    let c2 = 1.0 - f64::powi(b2, step);
                    for (((w, m), v), gi) in parameters_mut(&mut net).zip(m1.iter_mut()).zip(m2.iter_mut()).zip(&g) {
                        *m = b1 * *m + (1.0 - b1) * gi;
                        *v = b2 * *v + (1.0 - b2) * gi * gi;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
        let monitored = if sp.validation.is_empty() {
            sp.train.clone()
        } else {
            sp.validation.clone()
        };
        let v = mse(&net, data, &targets, monitored);
        if !v.is_finite() {
            return Err(Error::Config("training diverged; lower the learning rate".into()));
        }
        if v < best.0 {
            best = (v, net.clone(), epochs);
        } else if epochs - best.2 >= cfg.patience {
            break;
        }
    }
    let net = best.1;
    let test_targets = &targets[sp.test.clone()];
    let test_label_variance = if test_targets.is_empty() {
        0.0
    } else {
        let mean = test_targets.iter().sum::<f64>() / test_targets.len() as f64;
        test_targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / test_targets.len() as f64
    };
    let n = data.len() as f64;
    let report = TrainingReport {
        train_mse: mse(&net, data, &targets, sp.train.clone()),
        validation_mse: mse(&net, data, &targets, sp.validation.clone()),
        test_mse: mse(&net, data, &targets, sp.test.clone()),
        test_label_variance,
        epochs,
        best_epoch: best.2,
        dataset_size: data.len(),
        splits: [
            sp.train.len() as f64 / n,
            sp.validation.len() as f64 / n,
            sp.test.len() as f64 / n,
        ],
        dataset_hash: data.hash(),
        seed: cfg.seed,
    };
    Ok((net, report))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    format: String,
    version: u32,
    seed: Option<u64>,
    dataset_hash: Option<String>,
    net: SurrogateNet,
}

/// Provenance stored next to the parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightsMeta {
    pub seed: Option<u64>,
    pub dataset_hash: Option<String>,
}

pub fn weights_to_json(net: &SurrogateNet, meta: &WeightsMeta) -> String {
    serde_json::to_string_pretty(&WeightsFile {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        seed: meta.seed,
        dataset_hash: meta.dataset_hash.clone(),
        net: net.clone(),
    })
    .expect("weights serialization cannot fail")
}

pub fn weights_from_json(text: &str) -> Result<(SurrogateNet, WeightsMeta)> {
    let file: WeightsFile = serde_json::from_str(text)?;
    if file.format != FORMAT_TAG || file.version != FORMAT_VERSION {
        return Err(Error::Weights(format!(
            "unsupported weights format {} v{}",
            file.format, file.version
        )));
    }
    file.net.validate()?;
    Ok((
        file.net,
        WeightsMeta {
            seed: file.seed,
            dataset_hash: file.dataset_hash,
        },
    ))
}

pub fn save_weights(net: &SurrogateNet, meta: &WeightsMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights_to_json(net, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(SurrogateNet, WeightsMeta)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    weights_from_json(&text)
}
