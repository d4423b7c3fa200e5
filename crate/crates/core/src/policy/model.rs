//! MLP policies: a tokenized single-step head and a Gaussian trajectory-chunk head.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::{feature_len, featurize, FeatureVector};
use super::vocab::{TokenVocabulary, VocabSpec};
use crate::error::{Error, Result};
use crate::seed;
use crate::sim::geometry::{to_local, to_world, Vec2};
use crate::sim::observation::{Observation, ObservationConfig};
use crate::sim::state::{Action, AgentState, TrajectoryPlan};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Discrete,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub family: Family,
    pub hidden: Vec<usize>,
    /// Prediction horizon F in steps (trajectory family).
    pub horizon: usize,
    /// Default sampling temperature.
    pub temperature: f64,
    /// Default candidate count for guided rollouts.
    pub k: usize,
    /// Meters per unit of network output for trajectory offsets.
    pub output_scale: f64,
    pub init_log_std: f64,
    /// Floor added to every trajectory std: σ = min_std + exp(log_std).
    pub min_std: f64,
    pub dt: f64,
    pub vocab: VocabSpec,
    pub observation: ObservationConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            family: Family::Trajectory,
            hidden: vec![64, 64],
            horizon: 30,
            temperature: 0.8,
            k: 64,
            output_scale: 0.05,
            init_log_std: -5.0,
            min_std: 0.01,
            dt: 0.1,
            vocab: VocabSpec::default(),
            observation: ObservationConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn discrete() -> Self {
        Self { family: Family::Discrete, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden sizes must be >= 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be > 0");
        }
        if self.horizon == 0 {
            return bad("prediction horizon must be >= 1");
        }
        if !(self.dt > 0.0) || !(self.output_scale > 0.0) || !self.init_log_std.is_finite() || !(self.min_std >= 0.0) {
            return bad("dt and output scale must be positive");
        }
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if self.family == Family::Discrete {
            let v = TokenVocabulary::new(self.vocab.clone())?;
            if v.len() < self.k {
                return bad("vocabulary smaller than k");
            }
        }
        Ok(())
    }
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    inp: usize,
    out: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    layers: Vec<LayerShape>,
    log_std: Option<usize>,
    outputs: usize,
    total: usize,
}

impl Layout {
    fn new(input: usize, hidden: &[usize], outputs: usize, with_std: bool) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let mut off = 0;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let l = LayerShape { inp: w[0], out: w[1], w: off, b: off + w[0] * w[1] };
                off += w[0] * w[1] + w[1];
                l
            })
            .collect();
        let log_std = with_std.then_some(off);
        if with_std {
            off += outputs;
        }
        Self { layers, log_std, outputs, total: off }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyOutput {
    /// Token logits and temperature-scaled probabilities.
    Discrete { logits: Vec<f64>, probs: Vec<f64> },
    /// Per-step ego-frame offsets (dx_1, dy_1, ..., dx_F, dy_F) and their stds.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

/// A training target expressed in the policy's native output space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Token(usize),
    /// Ego-frame per-step offsets, length 2F.
    Offsets(Vec<f64>),
}

struct Cache {
    /// Activations per layer input: acts[0] is the feature vector.
    acts: Vec<Vec<f64>>,
    out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: PolicyParams,
    layout: Layout,
    vocab: Option<TokenVocabulary>,
}

fn softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| ((v - m) / temperature).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl Policy {
    fn layout_for(config: &PolicyConfig) -> Result<(Layout, Option<TokenVocabulary>)> {
        config.validate()?;
        let input = feature_len(&config.observation);
        Ok(match config.family {
            Family::Discrete => {
                let v = TokenVocabulary::new(config.vocab.clone())?;
                (Layout::new(input, &config.hidden, v.len(), false), Some(v))
            }
            Family::Trajectory => (Layout::new(input, &config.hidden, 2 * config.horizon, true), None),
        })
    }

    /// All-zero weights (uniform token distribution, constant-velocity mean plan).
    pub fn zeros(config: PolicyConfig) -> Result<Self> {
        let (layout, vocab) = Self::layout_for(&config)?;
        let mut data = vec![0.0; layout.total];
        if let Some(off) = layout.log_std {
            data[off..off + layout.outputs].fill(config.init_log_std);
        }
        Ok(Self { config, params: PolicyParams { data }, layout, vocab })
    }

    /// Scaled uniform initialization; the output layer starts small.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = seed::stream(seed, &["policy-init"]);
        let n_layers = p.layout.layers.len();
        for (i, l) in p.layout.layers.clone().iter().enumerate() {
            let mut bound = (6.0 / (l.inp + l.out) as f64).sqrt();
            if i + 1 == n_layers {
                bound *= 0.1;
            }
            for w in &mut p.params.data[l.w..l.w + l.inp * l.out] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn from_params(config: PolicyConfig, params: PolicyParams) -> Result<Self> {
        let (layout, vocab) = Self::layout_for(&config)?;
        if params.data.len() != layout.total {
            return Err(Error::InvalidInput(format!(
                "parameter vector has {} entries, config needs {}",
                params.data.len(),
                layout.total
            )));
        }
        if params.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameters".into()));
        }
        Ok(Self { config, params, layout, vocab })
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn input_len(&self) -> usize {
        self.layout.layers[0].inp
    }

    pub fn vocab(&self) -> Option<&TokenVocabulary> {
        self.vocab.as_ref()
    }

    /// Index range of the first dense layer (weights then biases).
    pub fn first_layer_range(&self) -> std::ops::Range<usize> {
        let l = self.layout.layers[0];
        l.w..l.b + l.out
    }

    /// Index range of the output layer.
    pub fn output_layer_range(&self) -> std::ops::Range<usize> {
        let l = *self.layout.layers.last().expect("at least one layer");
        l.w..l.b + l.out
    }

    pub fn log_std_range(&self) -> Option<std::ops::Range<usize>> {
        self.layout.log_std.map(|o| o..o + self.layout.outputs)
    }

    pub fn featurize(&self, obs: &Observation) -> FeatureVector {
        featurize(obs)
    }

    fn mlp(&self, feat: &[f64]) -> Result<Cache> {
        if feat.len() != self.input_len() {
            return Err(Error::InvalidInput(format!(
                "feature length {} != {}",
                feat.len(),
                self.input_len()
            )));
        }
        let d = &self.params.data;
        let n = self.layout.layers.len();
        let mut acts = vec![feat.to_vec()];
        let mut out = Vec::new();
        for (i, l) in self.layout.layers.iter().enumerate() {
            let x = acts.last().expect("nonempty");
            let mut z = d[l.b..l.b + l.out].to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &d[l.w + o * l.inp..l.w + (o + 1) * l.inp];
                *zo += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            }
            if i + 1 < n {
                acts.push(z.into_iter().map(f64::tanh).collect());
            } else {
                out = z;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok(Cache { acts, out })
    }

    /// Accumulates `scale * d(out)/d(params) · d_out` into `grad`.
    fn backprop(&self, cache: &Cache, d_out: &[f64], scale: f64, grad: &mut [f64]) {
        let d = &self.params.data;
        let mut delta: Vec<f64> = d_out.iter().map(|g| g * scale).collect();
        for (i, l) in self.layout.layers.iter().enumerate().rev() {
            let x = &cache.acts[i];
            for o in 0..l.out {
                let g = delta[o];
                grad[l.b + o] += g;
                if g != 0.0 {
                    let row = &mut grad[l.w + o * l.inp..l.w + (o + 1) * l.inp];
                    for (r, v) in row.iter_mut().zip(x) {
                        *r += g * v;
                    }
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; l.inp];
            for o in 0..l.out {
                let g = delta[o];
                if g == 0.0 {
                    continue;
                }
                let row = &d[l.w + o * l.inp..l.w + (o + 1) * l.inp];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += g * w;
                }
            }
            // tanh'(z) = 1 - tanh(z)^2
            for (p, a) in prev.iter_mut().zip(x) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    fn gaussian(&self, out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mean = out.iter().map(|o| self.config.output_scale * o).collect();
        let off = self.layout.log_std.expect("trajectory layout has log-std");
        let std = self.params.data[off..off + self.layout.outputs]
            .iter()
            .map(|l| self.config.min_std + l.exp())
            .collect();
        (mean, std)
    }

    pub fn forward(&self, feat: &[f64]) -> Result<PolicyOutput> {
        self.forward_at(feat, self.config.temperature)
    }

    /// Output distribution with temperature `t`: logits divided by `t` for
    /// tokens, stds multiplied by `t` for trajectories.
    pub fn forward_at(&self, feat: &[f64], t: f64) -> Result<PolicyOutput> {
        let cache = self.mlp(feat)?;
        Ok(match self.config.family {
            Family::Discrete => {
                let probs = softmax(&cache.out, t);
                PolicyOutput::Discrete { logits: cache.out, probs }
            }
            Family::Trajectory => {
                let (mean, std) = self.gaussian(&cache.out);
                PolicyOutput::Gaussian { mean, std: std.into_iter().map(|s| s * t).collect() }
            }
        })
    }

    /// Converts ego-frame offsets into a world-frame plan issued at `cur`.
    ///
    /// Offset k is the change of the per-step displacement at step k, starting
    /// from the constant-velocity step (speed·dt, 0). All-zero offsets give a
    /// constant-velocity plan.
    pub fn offsets_to_plan(&self, cur: &AgentState, offsets: &[f64]) -> TrajectoryPlan {
        let mut step = Vec2::new(cur.speed * self.config.dt, 0.0);
        let mut local = Vec2::ZERO;
        let positions: Vec<Vec2> = offsets
            .chunks_exact(2)
            .map(|c| {
                step = step + Vec2::new(c[0], c[1]);
                local = local + step;
                to_world(local, cur.pos(), cur.heading)
            })
            .collect();
        TrajectoryPlan::from_positions(cur, &positions, self.config.dt)
    }

    /// Inverse of [`Policy::offsets_to_plan`].
    pub fn plan_to_offsets(cur: &AgentState, plan: &TrajectoryPlan) -> Vec<f64> {
        let mut prev = Vec2::ZERO;
        let mut prev_step = Vec2::new(cur.speed * plan.dt, 0.0);
        let mut out = Vec::with_capacity(2 * plan.horizon());
        for w in &plan.waypoints {
            let q = to_local(w.pos(), cur.pos(), cur.heading);
            let step = q - prev;
            out.push(step.x - prev_step.x);
            out.push(step.y - prev_step.y);
            prev = q;
            prev_step = step;
        }
        out
    }

    pub fn mean_plan(&self, obs: &Observation) -> Result<TrajectoryPlan> {
        let feat = featurize(obs);
        match self.forward_at(&feat, 1.0)? {
            PolicyOutput::Gaussian { mean, .. } => Ok(self.offsets_to_plan(obs.current(), &mean)),
            PolicyOutput::Discrete { .. } => Err(Error::UnsupportedFamily("mean plan of a token policy".into())),
        }
    }

    /// Draws `k` i.i.d. actions at temperature `t`.
    pub fn sample_actions<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        k: usize,
        t: f64,
        rng: &mut R,
    ) -> Result<Vec<Action>> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        let feat = featurize(obs);
        match self.forward_at(&feat, t)? {
            PolicyOutput::Discrete { probs, .. } => Ok((0..k)
                .map(|_| Action::DiscreteToken(sample_categorical(&probs, rng.gen::<f64>())))
                .collect()),
            PolicyOutput::Gaussian { mean, std } => Ok((0..k)
                .map(|_| {
                    let offs: Vec<f64> = mean
                        .iter()
                        .zip(&std)
                        .map(|(m, s)| {
                            let z: f64 = rng.sample(StandardNormal);
                            m + s * z
                        })
                        .collect();
                    Action::TrajectoryPlan(self.offsets_to_plan(obs.current(), &offs))
                })
                .collect()),
        }
    }

    /// The `k` most likely tokens, ties broken by lower index.
    pub fn top_k(&self, obs: &Observation, k: usize) -> Result<Vec<usize>> {
        let feat = featurize(obs);
        match self.forward_at(&feat, 1.0)? {
            PolicyOutput::Discrete { logits, .. } => {
                let mut idx: Vec<usize> = (0..logits.len()).collect();
                idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
                idx.truncate(k);
                Ok(idx)
            }
            PolicyOutput::Gaussian { .. } => {
                Err(Error::UnsupportedFamily("top-k enumeration needs a token policy".into()))
            }
        }
    }

    /// Maps an action taken at `obs` into this policy's target space.
    pub fn target_of(&self, obs: &Observation, a: &Action) -> Result<Target> {
        match (self.config.family, a) {
            (Family::Discrete, Action::DiscreteToken(i)) => {
                let n = self.layout.outputs;
                if *i >= n {
                    return Err(Error::InvalidInput(format!("token {i} >= vocabulary size {n}")));
                }
                Ok(Target::Token(*i))
            }
            (Family::Trajectory, Action::TrajectoryPlan(p)) => {
                if p.horizon() != self.config.horizon {
                    return Err(Error::InvalidInput(format!(
                        "plan horizon {} != policy horizon {}",
                        p.horizon(),
                        self.config.horizon
                    )));
                }
                Ok(Target::Offsets(Self::plan_to_offsets(obs.current(), p)))
            }
            (fam, a) => Err(Error::UnsupportedFamily(format!("{} action for {fam:?} policy", a.kind()))),
        }
    }

    /// Log-likelihood under the model distribution (temperature 1). When
    /// `grad` is given, `scale * ∇ log π` is added to it.
    pub fn log_prob_target(
        &self,
        feat: &[f64],
        target: &Target,
        grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64> {
        let cache = self.mlp(feat)?;
        match (self.config.family, target) {
            (Family::Discrete, Target::Token(i)) => {
                let lp = log_softmax(&cache.out);
                let v = *lp.get(*i).ok_or_else(|| Error::InvalidInput(format!("token {i} out of range")))?;
                if let Some((g, scale)) = grad {
                    let d: Vec<f64> = lp
                        .iter()
                        .enumerate()
                        .map(|(j, l)| if j == *i { 1.0 } else { 0.0 } - l.exp())
                        .collect();
                    self.backprop(&cache, &d, scale, g);
                }
                Ok(v)
            }
            (Family::Trajectory, Target::Offsets(x)) => {
                if x.len() != self.layout.outputs {
                    return Err(Error::InvalidInput("target offset length mismatch".into()));
                }
                let (mean, std) = self.gaussian(&cache.out);
                let off = self.layout.log_std.expect("trajectory layout has log-std");
                let mut v = 0.0;
                let mut d_out = vec![0.0; x.len()];
                let mut d_logstd = vec![0.0; x.len()];
                for j in 0..x.len() {
                    let z = (x[j] - mean[j]) / std[j];
                    v += -0.5 * z * z - std[j].ln() - 0.5 * LN_2PI;
                    d_out[j] = z / std[j] * self.config.output_scale;
                    d_logstd[j] = (z * z - 1.0) * self.params.data[off + j].exp() / std[j];
                }
                if !v.is_finite() {
                    return Err(Error::Numerical("non-finite log-probability".into()));
                }
                if let Some((g, scale)) = grad {
                    self.backprop(&cache, &d_out, scale, g);
                    for j in 0..x.len() {
                        g[off + j] += scale * d_logstd[j];
                    }
                }
                Ok(v)
            }
            (fam, _) => Err(Error::UnsupportedFamily(format!("target does not match {fam:?} policy"))),
        }
    }

    pub fn log_prob(&self, obs: &Observation, a: &Action) -> Result<f64> {
        let target = self.target_of(obs, a)?;
        self.log_prob_target(&featurize(obs), &target, None)
    }

    pub fn grad_log_prob(&self, obs: &Observation, a: &Action) -> Result<Vec<f64>> {
        let target = self.target_of(obs, a)?;
        let mut g = vec![0.0; self.num_params()];
        self.log_prob_target(&featurize(obs), &target, Some((&mut g, 1.0)))?;
        Ok(g)
    }
}

/// Inverse-CDF draw; `u` in [0, 1).
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}
