use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// What a weight container holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    DenseWeight,
    DenseBias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatsId(pub(crate) usize);

/// One trainable weight container.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    /// Part of a 1×1 channel projection.
    pub projection: bool,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Batchnorm running statistics (not trainable).
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// He-normal with the given fan-in.
    HeNormal(usize),
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanInUniform(usize),
    Constant(f32),
}

/// Arena of weight containers and batchnorm statistics.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    stats: Vec<BnStats>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        kind: ParamKind,
        projection: bool,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let len = shape.iter().product();
        let value = match init {
            Init::Constant(v) => vec![v; len],
            Init::HeNormal(fan_in) => {
                let normal = Normal::new(0.0f32, (2.0 / fan_in.max(1) as f32).sqrt()).expect("finite std");
                (0..len).map(|_| normal.sample(rng)).collect()
            }
            Init::FanInUniform(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
                (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        self.params.push(Param { name: name.into(), kind, projection, shape: shape.to_vec(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn add_stats(&mut self, channels: usize) -> StatsId {
        self.stats.push(BnStats { mean: vec![0.0; channels], var: vec![1.0; channels] });
        StatsId(self.stats.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f32] {
        &self.params[id.0].value
    }

    pub fn stats(&self, id: StatsId) -> &BnStats {
        &self.stats[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn all_stats(&self) -> &[BnStats] {
        &self.stats
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub(crate) fn stats_mut(&mut self) -> &mut [BnStats] {
        &mut self.stats
    }

    /// Number of weight containers.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count over all containers.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Folds batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate], momentum: f32) {
        for u in updates {
            let s = &mut self.stats[u.stats.0];
            for (r, b) in s.mean.iter_mut().zip(&u.mean) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
            for (r, b) in s.var.iter_mut().zip(&u.var) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
    }
}

/// Weight of the newest batch in running batchnorm statistics.
pub const BN_MOMENTUM: f32 = 0.1;

/// Batch statistics observed during a training forward pass.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub stats: StatsId,
    pub mean: Vec<f32>,
    /// Unbiased variance.
    pub var: Vec<f32>,
}

/// Gradient accumulator keyed by [`ParamId`]; untouched containers stay `None`.
#[derive(Debug, Clone)]
pub struct Grads {
    slots: Vec<Option<Vec<f32>>>,
}

impl Grads {
    pub fn new(count: usize) -> Self {
        Grads { slots: vec![None; count] }
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut [f32] {
        self.slots[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f32]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn touched(&self) -> impl Iterator<Item = (ParamId, &[f32])> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.as_deref().map(|g| (ParamId(i), g)))
    }
}

/// Momentum SGD with L2 weight decay on weight tensors. Only containers that
/// received a gradient this step are updated.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Option<Vec<f32>>>,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        Sgd { momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f32) {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for (id, g) in grads.touched() {
            let param = &mut store.params_mut()[id.0];
            let v = self.velocity[id.0].get_or_insert_with(|| vec![0.0; g.len()]);
            let decay = match param.kind {
                ParamKind::ConvWeight | ParamKind::DenseWeight => self.weight_decay,
                _ => 0.0,
            };
            for ((w, v), g) in param.value.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = self.momentum * *v + g + decay * *w;
                *w -= lr * *v;
            }
        }
    }
}

/// Cosine annealing with warm restarts, evaluated per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    /// Length of the first period in epochs.
    pub period: usize,
    /// Period growth factor after each restart.
    pub period_mul: usize,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        CosineSchedule { lr_max: 0.05, lr_min: 5e-4, period: 10, period_mul: 2 }
    }
}

impl CosineSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let mut start = 0;
        let mut len = self.period.max(1);
        while epoch >= start + len {
            start += len;
            len *= self.period_mul.max(1);
        }
        let t = (epoch - start) as f64 / len as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
