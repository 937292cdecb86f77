//! Search, from-scratch training, cross-validation and metrics.

mod metrics;
mod search;
mod train;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::datapipe::{resize_bicubic, RoiImage, INPUT_SIDE};
use crate::error::{Error, Result};
use crate::genotype::{CountingConfig, DEFAULT_NODES};
use crate::nn::{CosineSchedule, Tensor};
use crate::searchspace::{Variant, FINAL_BASE_CHANNELS, SEARCH_BASE_CHANNELS};

pub use metrics::{
    compute_metrics, mean_rates, metrics_csv, pooled, predict_label, tally, write_metrics_csv, MeanRates, Metrics, POSITIVE,
};
pub use search::{
    controller_epoch, search, search_on_fold, train_child_epoch, view_accuracy, Candidate, ChildEpoch, SearchOutcome, SearchReport,
};
pub use train::{cross_validate, evaluate, train_from_scratch, CvFold, CvOutcome, CvReport, EpochStats};

/// Child-network optimizer: momentum SGD with cosine warm restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub momentum: f32,
    pub weight_decay: f32,
    pub schedule: CosineSchedule,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { momentum: 0.9, weight_decay: 1e-4, schedule: CosineSchedule::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub controller_epochs: usize,
    pub candidates_per_epoch: usize,
    pub validation_fraction: f64,
    #[serde(rename = "B")]
    pub nodes: usize,
    pub base_channels: usize,
    /// Stacking used for the supergraph during search.
    pub variant: Variant,
    pub batch_size: usize,
    pub input_side: usize,
    /// Train the child on the seven augmentations of each training source as well.
    pub augment: bool,
    pub optim: OptimConfig,
    pub controller: ControllerConfig,
    pub counting: CountingConfig,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            controller_epochs: 150,
            candidates_per_epoch: 10,
            validation_fraction: 0.10,
            nodes: DEFAULT_NODES,
            base_channels: SEARCH_BASE_CHANNELS,
            variant: Variant::Enas7,
            batch_size: 32,
            input_side: INPUT_SIDE,
            augment: true,
            optim: OptimConfig::default(),
            controller: ControllerConfig::default(),
            counting: CountingConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("controller_epochs", self.controller_epochs),
            ("candidates_per_epoch", self.candidates_per_epoch),
            ("B", self.nodes),
            ("base_channels", self.base_channels),
            ("batch_size", self.batch_size),
            ("input_side", self.input_side),
            ("workers", self.workers),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be >= 1"));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            errs.push(format!("validation_fraction must be in (0,1), got {}", self.validation_fraction));
        }
        if let Err(Error::Config(e)) = self.controller.validate() {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Candidate evaluations a full run performs.
    pub fn evaluations(&self) -> usize {
        self.controller_epochs * self.candidates_per_epoch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_channels: usize,
    pub input_side: usize,
    /// Train on the seven augmentations of each training source as well.
    pub augment: bool,
    pub optim: OptimConfig,
    pub counting: CountingConfig,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            base_channels: FINAL_BASE_CHANNELS,
            input_side: INPUT_SIDE,
            augment: true,
            optim: OptimConfig::default(),
            counting: CountingConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("base_channels", self.base_channels),
            ("input_side", self.input_side),
            ("workers", self.workers),
        ] {
            if v == 0 {
                errs.push(format!("{name} must be >= 1"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Network-ready images: intensities scaled to `[0,1]` at a fixed side.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub side: usize,
    pub pixels: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub source_ids: Vec<String>,
}

impl LabeledSet {
    /// Resizes every image to `side` (bicubic) where needed.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a RoiImage>, side: usize) -> LabeledSet {
        let mut set = LabeledSet { side, pixels: Vec::new(), labels: Vec::new(), source_ids: Vec::new() };
        for img in images {
            let px = if img.height == side && img.width == side {
                img.pixels.clone()
            } else {
                resize_bicubic(img, side).pixels
            };
            set.pixels.push(px.into_iter().map(|p| p as f32 / 255.0).collect());
            set.labels.push(img.label.index());
            set.source_ids.push(img.source_id.clone());
        }
        set
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let plane = self.side * self.side;
        let mut data = Vec::with_capacity(idx.len() * plane);
        for &i in idx {
            data.extend_from_slice(&self.pixels[i]);
        }
        (Tensor::from_vec([idx.len(), 1, self.side, self.side], data), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Index batches in a seeded shuffled order.
    pub fn shuffled_batches(&self, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Index batches in stored order.
    pub fn ordered_batches(&self, batch_size: usize) -> Vec<Vec<usize>> {
        (0..self.len()).collect::<Vec<_>>().chunks(batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Derives a sub-seed so independent streams never share a state.
pub(crate) fn subseed(seed: u64, stream: u64, index: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}
