//! Recurrent architecture policy trained with REINFORCE.
//!
//! A single-layer LSTM emits `8·B` decisions (normal cell, then reduction
//! cell). Each node contributes four decisions in the order
//! `in_a, op_a, in_b, op_b`. Input decisions at node `i` choose among `i+2`
//! predecessors; op decisions among the five [`OpKind`]s. The chosen value is
//! embedded and fed back as the next LSTM input.
//!
//! Logits are shaped as `c·tanh(l/T)` when both constants are set. Shaping is
//! part of the distribution: sampling, scoring and the gradient all use it.
//!
//! All parameters live in one flat `Vec<f64>` so the optimizer and the
//! finite-difference checks can treat them uniformly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genotype::{ArchPair, OpKind, CELL_INPUTS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub lr: f64,
    pub entropy_weight: f64,
    /// `None` disables tanh shaping.
    pub tanh_constant: Option<f64>,
    pub temperature: Option<f64>,
    pub baseline_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Half-width of the uniform initializer for recurrent weights and embeddings.
    pub init_range: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            hidden: 64,
            lr: 3.5e-4,
            entropy_weight: 1e-4,
            tanh_constant: Some(1.10),
            temperature: Some(5.0),
            baseline_decay: 0.999,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_range: 0.1,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.hidden == 0 {
            errs.push("controller hidden width must be >= 1".to_string());
        }
        if !(self.lr > 0.0) {
            errs.push(format!("controller lr must be > 0, got {}", self.lr));
        }
        if !(self.entropy_weight >= 0.0) {
            errs.push(format!("entropy_weight must be >= 0, got {}", self.entropy_weight));
        }
        if !(self.baseline_decay > 0.0 && self.baseline_decay < 1.0) {
            errs.push(format!("baseline_decay must be in (0,1), got {}", self.baseline_decay));
        }
        if matches!(self.temperature, Some(t) if !(t > 0.0)) {
            errs.push("temperature must be > 0".into());
        }
        if matches!(self.tanh_constant, Some(c) if !(c > 0.0)) {
            errs.push("tanh_constant must be > 0".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    hidden: usize,
    idx_choices: usize,
    /// `4H × 2H`, rows ordered as gates i, f, g, o; columns `[x; h]`.
    lstm_w: usize,
    lstm_b: usize,
    g_emb: usize,
    idx_emb: usize,
    op_emb: usize,
    w_idx: usize,
    w_op: usize,
    len: usize,
}

impl Layout {
    fn new(hidden: usize, nodes: usize) -> Layout {
        let h = hidden;
        let idx_choices = nodes + 1;
        let lstm_w = 0;
        let lstm_b = lstm_w + 4 * h * 2 * h;
        let g_emb = lstm_b + 4 * h;
        let idx_emb = g_emb + h;
        let op_emb = idx_emb + idx_choices * h;
        let w_idx = op_emb + OpKind::COUNT * h;
        let w_op = w_idx + idx_choices * h;
        let len = w_op + OpKind::COUNT * h;
        Layout { hidden, idx_choices, lstm_w, lstm_b, g_emb, idx_emb, op_emb, w_idx, w_op, len }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DecisionKind {
    Input,
    Op,
}

/// Kind and category count of decision `t` for `nodes` nodes per cell.
fn decision_slot(t: usize, nodes: usize) -> (DecisionKind, usize) {
    let p = t % (4 * nodes);
    let node = p / 4;
    if p % 2 == 0 {
        (DecisionKind::Input, node + CELL_INPUTS)
    } else {
        (DecisionKind::Op, OpKind::COUNT)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub decisions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
}

impl SampleTrace {
    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    pub fn total_entropy(&self) -> f64 {
        self.entropies.iter().sum()
    }
}

/// Exponential moving average of rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub value: f64,
    pub decay: f64,
    pub initialized: bool,
}

impl BaselineState {
    pub fn new(decay: f64) -> Self {
        BaselineState { value: 0.0, decay, initialized: false }
    }

    pub fn update(&mut self, reward: f64) {
        if self.initialized {
            self.value = self.decay * self.value + (1.0 - self.decay) * reward;
        } else {
            self.value = reward;
            self.initialized = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// Gradient ascent step.
    fn ascend(&mut self, theta: &mut [f64], grad: &[f64], cfg: &ControllerConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            theta[i] += cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Everything the backward pass needs from one decision step.
struct Step {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `i, f, g, o`, each of width H.
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    kind: DecisionKind,
    decision: usize,
}

/// What the objective-gradient routine reports besides the gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub objective: f64,
    pub mean_advantage: f64,
    pub baseline_before: f64,
    pub baseline_after: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerPolicy {
    pub cfg: ControllerConfig,
    pub nodes: usize,
    theta: Vec<f64>,
    layout: Layout,
    adam: Adam,
    pub steps: u64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ControllerPolicy {
    /// Recurrent weights and embeddings are uniform in `±init_range`; both
    /// output projections start at zero, so the fresh policy is uniform.
    pub fn new(nodes: usize, cfg: ControllerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if nodes == 0 {
            return Err(Error::InvalidArgument("B must be >= 1".into()));
        }
        let layout = Layout::new(cfg.hidden, nodes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![0.0; layout.len];
        for v in &mut theta[..layout.w_idx] {
            *v = rng.random_range(-cfg.init_range..cfg.init_range);
        }
        Ok(ControllerPolicy { cfg, nodes, theta, layout, adam: Adam::new(layout.len), steps: 0 })
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn decision_count(&self) -> usize {
        8 * self.nodes
    }

    fn embedding(&self, kind: DecisionKind, value: usize) -> &[f64] {
        let h = self.layout.hidden;
        let base = match kind {
            DecisionKind::Input => self.layout.idx_emb,
            DecisionKind::Op => self.layout.op_emb,
        };
        &self.theta[base + value * h..base + (value + 1) * h]
    }

    fn shape(&self, l: f64) -> f64 {
        match (self.cfg.tanh_constant, self.cfg.temperature) {
            (Some(c), Some(t)) => c * (l / t).tanh(),
            (Some(c), None) => c * l.tanh(),
            (None, Some(t)) => l / t,
            (None, None) => l,
        }
    }

    /// d shaped / d raw at raw logit `l`.
    fn shape_grad(&self, l: f64) -> f64 {
        match (self.cfg.tanh_constant, self.cfg.temperature) {
            (Some(c), Some(t)) => {
                let th = (l / t).tanh();
                c * (1.0 - th * th) / t
            }
            (Some(c), None) => {
                let th = l.tanh();
                c * (1.0 - th * th)
            }
            (None, Some(t)) => 1.0 / t,
            (None, None) => 1.0,
        }
    }

    /// LSTM transition and the step's categorical distribution.
    fn cell(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64], kind: DecisionKind, n_cat: usize) -> Step {
        let h = self.layout.hidden;
        let w = &self.theta[self.layout.lstm_w..self.layout.lstm_b];
        let b = &self.theta[self.layout.lstm_b..self.layout.g_emb];
        let mut gates = vec![0.0; 4 * h];
        for (r, gate) in gates.iter_mut().enumerate() {
            let row = &w[r * 2 * h..(r + 1) * 2 * h];
            let mut z = b[r];
            z += row[..h].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            z += row[h..].iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
            *gate = if (2 * h..3 * h).contains(&r) { z.tanh() } else { sigmoid(z) };
        }
        let mut c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for k in 0..h {
            c[k] = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
            hn[k] = gates[3 * h + k] * c[k].tanh();
        }
        let proj = match kind {
            DecisionKind::Input => self.layout.w_idx,
            DecisionKind::Op => self.layout.w_op,
        };
        let logits: Vec<f64> = (0..n_cat)
            .map(|j| self.theta[proj + j * h..proj + (j + 1) * h].iter().zip(&hn).map(|(a, b)| a * b).sum())
            .collect();
        let shaped: Vec<f64> = logits.iter().map(|&l| self.shape(l)).collect();
        let max = shaped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = shaped.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        let probs = exp.into_iter().map(|e| e / z).collect();
        Step { x: x.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates, c, h: hn, logits, probs, kind, decision: 0 }
    }

    /// Runs the policy over `8·B` steps. With `forced` the decisions are
    /// taken from it; otherwise they are drawn from `rng`.
    fn unroll(&self, forced: Option<&[usize]>, mut rng: Option<&mut dyn rand::RngCore>) -> Vec<Step> {
        let h = self.layout.hidden;
        let mut steps = Vec::with_capacity(self.decision_count());
        let mut x = self.theta[self.layout.g_emb..self.layout.g_emb + h].to_vec();
        let mut h_state = vec![0.0; h];
        let mut c_state = vec![0.0; h];
        for t in 0..self.decision_count() {
            let (kind, n_cat) = decision_slot(t, self.nodes);
            let mut step = self.cell(&x, &h_state, &c_state, kind, n_cat);
            step.decision = match (forced, rng.as_deref_mut()) {
                (Some(seq), _) => seq[t],
                (None, Some(rng)) => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = n_cat - 1;
                    for (j, p) in step.probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    pick
                }
                (None, None) => unreachable!("unroll needs decisions or an rng"),
            };
            x = self.embedding(kind, step.decision).to_vec();
            h_state.clone_from(&step.h);
            c_state.clone_from(&step.c);
            steps.push(step);
        }
        steps
    }

    fn trace_of(steps: &[Step]) -> SampleTrace {
        let mut trace = SampleTrace { decisions: Vec::new(), log_probs: Vec::new(), entropies: Vec::new() };
        for s in steps {
            trace.decisions.push(s.decision);
            trace.log_probs.push(s.probs[s.decision].ln());
            trace.entropies.push(-s.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>());
        }
        trace
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (ArchPair, SampleTrace) {
        let mut r: &mut R = rng;
        let steps = self.unroll(None, Some(&mut r as &mut dyn rand::RngCore));
        let trace = Self::trace_of(&steps);
        let arch = ArchPair::decode(&trace.decisions, self.nodes).expect("sampled decisions are in range");
        (arch, trace)
    }

    fn check(&self, decisions: &[usize]) -> Result<()> {
        ArchPair::decode(decisions, self.nodes)?;
        Ok(())
    }

    /// Re-scores a decision sequence under the current policy.
    pub fn score(&self, decisions: &[usize]) -> Result<SampleTrace> {
        self.check(decisions)?;
        Ok(Self::trace_of(&self.unroll(Some(decisions), None)))
    }

    pub fn log_prob(&self, decisions: &[usize]) -> Result<f64> {
        Ok(self.score(decisions)?.total_log_prob())
    }

    /// Per-step distributions along a decision sequence.
    pub fn distributions(&self, decisions: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check(decisions)?;
        Ok(self.unroll(Some(decisions), None).into_iter().map(|s| s.probs).collect())
    }

    /// `Σ_j a_j·log p(seq_j) + w·Σ_j H(seq_j)` and its gradient.
    pub fn objective_and_grad(&self, seqs: &[Vec<usize>], advantages: &[f64], entropy_weight: f64) -> Result<(f64, Vec<f64>)> {
        if seqs.len() != advantages.len() {
            return Err(Error::InvalidArgument(format!(
                "{} sequences but {} advantages",
                seqs.len(),
                advantages.len()
            )));
        }
        let mut grad = vec![0.0; self.layout.len];
        let mut objective = 0.0;
        for (seq, &adv) in seqs.iter().zip(advantages) {
            self.check(seq)?;
            let steps = self.unroll(Some(seq), None);
            let trace = Self::trace_of(&steps);
            objective += adv * trace.total_log_prob() + entropy_weight * trace.total_entropy();
            self.backprop(&steps, adv, entropy_weight, &mut grad);
        }
        Ok((objective, grad))
    }

    fn backprop(&self, steps: &[Step], adv: f64, ew: f64, grad: &mut [f64]) {
        let l = self.layout;
        let h = l.hidden;
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for t in (0..steps.len()).rev() {
            let s = &steps[t];
            let entropy: f64 = -s.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
            let proj = match s.kind {
                DecisionKind::Input => l.w_idx,
                DecisionKind::Op => l.w_op,
            };
            let mut dh = dh_next.clone();
            for (k, &p) in s.probs.iter().enumerate() {
                let onehot = if k == s.decision { 1.0 } else { 0.0 };
                let logp = if p > 0.0 { p.ln() } else { 0.0 };
                let dshaped = adv * (onehot - p) - ew * p * (logp + entropy);
                let dl = dshaped * self.shape_grad(s.logits[k]);
                let row = proj + k * h;
                for j in 0..h {
                    grad[row + j] += dl * s.h[j];
                    dh[j] += dl * self.theta[row + j];
                }
            }
            // h = o·tanh(c), c = f·c_prev + i·g
            let mut dz = vec![0.0; 4 * h];
            let mut dc_prev = vec![0.0; h];
            for k in 0..h {
                let (i, f, g, o) = (s.gates[k], s.gates[h + k], s.gates[2 * h + k], s.gates[3 * h + k]);
                let tc = s.c[k].tanh();
                let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                dz[3 * h + k] = dh[k] * tc * o * (1.0 - o);
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * s.c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - g * g);
                dc_prev[k] = dc * f;
            }
            let mut dx = vec![0.0; h];
            let mut dh_prev = vec![0.0; h];
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[l.lstm_b + r] += d;
                let row = l.lstm_w + r * 2 * h;
                for j in 0..h {
                    grad[row + j] += d * s.x[j];
                    grad[row + h + j] += d * s.h_prev[j];
                    dx[j] += d * self.theta[row + j];
                    dh_prev[j] += d * self.theta[row + h + j];
                }
            }
            // the step input is the embedding of the previous decision, or g_emb
            let x_base = if t == 0 {
                l.g_emb
            } else {
                let p = &steps[t - 1];
                match p.kind {
                    DecisionKind::Input => l.idx_emb + p.decision * h,
                    DecisionKind::Op => l.op_emb + p.decision * h,
                }
            };
            for j in 0..h {
                grad[x_base + j] += dx[j];
            }
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
    }

    /// One REINFORCE step with the pre-update baseline, then folds every
    /// reward into the baseline in order.
    pub fn reinforce_update(
        &mut self,
        traces: &[SampleTrace],
        rewards: &[f64],
        baseline: &mut BaselineState,
    ) -> Result<UpdateStats> {
        if traces.is_empty() || traces.len() != rewards.len() {
            return Err(Error::InvalidArgument(format!(
                "need matching non-empty traces and rewards, got {} and {}",
                traces.len(),
                rewards.len()
            )));
        }
        let b = if baseline.initialized { baseline.value } else { 0.0 };
        let advantages: Vec<f64> = rewards.iter().map(|r| r - b).collect();
        let seqs: Vec<Vec<usize>> = traces.iter().map(|t| t.decisions.clone()).collect();
        let (objective, grad) = self.objective_and_grad(&seqs, &advantages, self.cfg.entropy_weight)?;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Runtime("controller gradient is not finite".into()));
        }
        if grad_norm > 0.0 {
            let cfg = self.cfg;
            self.adam.ascend(&mut self.theta, &grad, &cfg);
        }
        self.steps += 1;
        for &r in rewards {
            baseline.update(r);
        }
        Ok(UpdateStats {
            objective,
            mean_advantage: advantages.iter().sum::<f64>() / advantages.len() as f64,
            baseline_before: b,
            baseline_after: baseline.value,
            grad_norm,
        })
    }

    /// Writes `<stem>.bin` (parameters and optimizer moments, little-endian
    /// f64) and `<stem>.json` (hyperparameters, step count, baseline).
    pub fn save(&self, stem: &Path, baseline: &BaselineState) -> Result<()> {
        let mut buf = Vec::with_capacity(3 * 8 * self.theta.len() + 16);
        buf.extend_from_slice(b"CNASCTL1");
        buf.extend_from_slice(&(self.theta.len() as u64).to_le_bytes());
        for v in self.theta.iter().chain(&self.adam.m).chain(&self.adam.v) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let bin = stem.with_extension("bin");
        std::fs::write(&bin, buf).map_err(|e| Error::io(&bin, e))?;
        let manifest = ControllerManifest {
            config: self.cfg,
            nodes: self.nodes,
            steps: self.steps,
            adam_steps: self.adam.t,
            baseline: *baseline,
            param_count: self.theta.len(),
        };
        let json = stem.with_extension("json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))
    }

    pub fn load(stem: &Path) -> Result<(Self, BaselineState)> {
        let json = stem.with_extension("json");
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let m: ControllerManifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json.display())))?;
        let mut policy = ControllerPolicy::new(m.nodes, m.config, 0)?;
        let bin = stem.with_extension("bin");
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let n = policy.theta.len();
        let body = bytes
            .strip_prefix(b"CNASCTL1")
            .filter(|b| b.len() == 8 + 3 * 8 * n && b[..8] == (n as u64).to_le_bytes())
            .ok_or_else(|| Error::Format(format!("{}: not a controller checkpoint for B={}", bin.display(), m.nodes)))?;
        let vals: Vec<f64> = body[8..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        policy.theta.copy_from_slice(&vals[..n]);
        policy.adam.m.copy_from_slice(&vals[n..2 * n]);
        policy.adam.v.copy_from_slice(&vals[2 * n..]);
        policy.adam.t = m.adam_steps;
        policy.steps = m.steps;
        Ok((policy, m.baseline))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ControllerManifest {
    config: ControllerConfig,
    #[serde(rename = "B")]
    nodes: usize,
    steps: u64,
    adam_steps: u64,
    baseline: BaselineState,
    param_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(hidden: usize, nodes: usize, seed: u64) -> ControllerPolicy {
        let mut p = ControllerPolicy::new(nodes, ControllerConfig { hidden, ..Default::default() }, seed).unwrap();
        // break the uniform start so every block carries gradient
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for v in p.params_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        p
    }

    #[test]
    fn trace_shape_and_bounds() {
        let p = ControllerPolicy::new(5, ControllerConfig::default(), 0).unwrap();
        let (arch, trace) = p.sample(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(trace.decisions.len(), 40);
        assert_eq!(arch.encode().unwrap(), trace.decisions);
        for (t, (&lp, &h)) in trace.log_probs.iter().zip(&trace.entropies).enumerate() {
            let (_, n) = decision_slot(t, 5);
            assert!(lp <= 0.0);
            assert!(h >= 0.0 && h <= (n as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn fresh_policy_is_uniform() {
        let p = ControllerPolicy::new(2, ControllerConfig::default(), 4).unwrap();
        let (_, trace) = p.sample(&mut ChaCha8Rng::seed_from_u64(2));
        for (t, lp) in trace.log_probs.iter().enumerate() {
            let (_, n) = decision_slot(t, 2);
            assert!((lp + (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn rescoring_matches_trace() {
        let p = tiny(16, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let (_, trace) = p.sample(&mut rng);
            assert!((p.log_prob(&trace.decisions).unwrap() - trace.total_log_prob()).abs() < 1e-9);
            for d in p.distributions(&trace.decisions).unwrap() {
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(p.log_prob(&[0; 5]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for shaped in [true, false] {
            let mut p = tiny(8, 2, 21);
            if !shaped {
                p.cfg.tanh_constant = None;
                p.cfg.temperature = None;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let seqs: Vec<Vec<usize>> = (0..3).map(|_| p.sample(&mut rng).1.decisions).collect();
            let adv = [0.7, -0.4, 1.3];
            let ew = 0.05;
            let (_, grad) = p.objective_and_grad(&seqs, &adv, ew).unwrap();
            let eps = 1e-5;
            let mut worst: f64 = 0.0;
            for i in 0..p.params().len() {
                let orig = p.params()[i];
                p.params_mut()[i] = orig + eps;
                let up = p.objective_and_grad(&seqs, &adv, ew).unwrap().0;
                p.params_mut()[i] = orig - eps;
                let down = p.objective_and_grad(&seqs, &adv, ew).unwrap().0;
                p.params_mut()[i] = orig;
                let fd = (up - down) / (2.0 * eps);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-4);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-3, "shaped={shaped} worst relative error {worst}");
        }
    }

    #[test]
    fn zero_advantage_without_entropy_leaves_params() {
        let mut p = tiny(8, 2, 1);
        p.cfg.entropy_weight = 0.0;
        let before = p.params().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traces: Vec<SampleTrace> = (0..3).map(|_| p.sample(&mut rng).1).collect();
        let mut b = BaselineState { value: 0.5, decay: 0.999, initialized: true };
        p.reinforce_update(&traces, &[0.5, 0.5, 0.5], &mut b).unwrap();
        assert_eq!(p.params(), before.as_slice());
    }

    #[test]
    fn positive_reward_raises_sampled_probabilities() {
        // Shared parameters couple the decisions, so a single step only
        // guarantees the joint probability rises. When every input decision
        // and every op decision repeats one value, each one rises too.
        let fresh = || ControllerPolicy::new(2, ControllerConfig { hidden: 8, entropy_weight: 0.0, ..Default::default() }, 2).unwrap();
        let mut p = fresh();
        let (_, trace) = p.sample(&mut ChaCha8Rng::seed_from_u64(8));
        let before = p.log_prob(&trace.decisions).unwrap();
        p.reinforce_update(std::slice::from_ref(&trace), &[1.0], &mut BaselineState::new(0.999)).unwrap();
        assert!(p.log_prob(&trace.decisions).unwrap() > before);

        let mut p = fresh();
        let consistent: Vec<usize> = (0..16).map(|t| if t % 2 == 0 { 0 } else { OpKind::SepConv3.index() }).collect();
        let trace = p.score(&consistent).unwrap();
        p.reinforce_update(std::slice::from_ref(&trace), &[1.0], &mut BaselineState::new(0.999)).unwrap();
        let after = p.score(&consistent).unwrap();
        for (a, b) in after.log_probs.iter().zip(&trace.log_probs) {
            assert!(a > b, "{a} <= {b}");
        }
    }

    #[test]
    fn baseline_constant_stream() {
        let mut b = BaselineState::new(0.999);
        let mut seen = Vec::new();
        for r in [1.0, 1.0, 1.0] {
            b.update(r);
            seen.push(b.value);
        }
        assert_eq!(seen, [1.0, 1.0, 1.0]);
        b.update(0.0);
        assert!((b.value - 0.999).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = tiny(8, 2, 3);
        let mut b = BaselineState::new(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = p.sample(&mut rng).1;
        p.reinforce_update(&[t], &[0.3], &mut b).unwrap();
        let stem = dir.path().join("ctl");
        p.save(&stem, &b).unwrap();
        let (q, b2) = ControllerPolicy::load(&stem).unwrap();
        assert_eq!(q, p);
        assert_eq!(b2, b);
    }
}
