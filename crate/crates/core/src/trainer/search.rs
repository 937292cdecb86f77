use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{subseed, with_workers, LabeledSet, SearchConfig};
use crate::controller::{BaselineState, ControllerPolicy};
use crate::datapipe::{augment_all, split_validation, FoldAssignment, RoiImage};
use crate::error::{Error, Result};
use crate::genotype::{ArchPair, GenotypeFile};
use crate::nn::Sgd;
use crate::searchspace::{make_stack_plan, SharedSupergraph, SubnetView};

// seed streams
const SUPERGRAPH: u64 = 1;
const POLICY: u64 = 2;
const CHILD_SAMPLES: u64 = 3;
const CHILD_BATCHES: u64 = 4;
const CANDIDATES: u64 = 5;
const SPLIT: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildEpoch {
    pub epoch: usize,
    pub batches: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub epoch: usize,
    pub index: usize,
    pub genotype: GenotypeFile,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub config: SearchConfig,
    pub train_images: usize,
    pub validation_images: usize,
    pub evaluations: usize,
    pub best: GenotypeFile,
    pub best_accuracy: f64,
    pub best_epoch: usize,
    pub best_index: usize,
    pub baseline: BaselineState,
    pub child_epochs: Vec<ChildEpoch>,
    pub candidates: Vec<Candidate>,
}

/// Result of a search: the winning pair, the report, and the final policy.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: ArchPair,
    pub report: SearchReport,
    pub policy: ControllerPolicy,
}

/// One pass over `data`: each batch trains the subnetwork of a freshly
/// sampled pair. The policy is only read.
pub fn train_child_epoch(
    sg: &mut SharedSupergraph,
    policy: &ControllerPolicy,
    data: &LabeledSet,
    cfg: &SearchConfig,
    sgd: &mut Sgd,
    epoch: usize,
) -> Result<ChildEpoch> {
    if data.is_empty() {
        return Err(Error::Dataset("child training set is empty".into()));
    }
    let lr = cfg.optim.schedule.lr(epoch);
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, CHILD_SAMPLES, epoch as u64));
    let batches = data.shuffled_batches(cfg.batch_size, subseed(cfg.seed, CHILD_BATCHES, epoch as u64));
    let mut total = 0.0;
    for idx in &batches {
        let (arch, _) = policy.sample(&mut rng);
        let (x, y) = data.batch(idx);
        total += sg.train_step(&arch, x, &y, sgd, lr as f32)? as f64;
    }
    Ok(ChildEpoch { epoch, batches: batches.len(), mean_loss: total / batches.len() as f64, lr })
}

/// Accuracy of a subnetwork over `data`, with batch statistics.
pub fn view_accuracy(view: &SubnetView<'_>, data: &LabeledSet, batch_size: usize) -> f64 {
    let mut correct = 0;
    for idx in data.ordered_batches(batch_size) {
        let (x, y) = data.batch(&idx);
        let logits = view.logits(x);
        for (i, &label) in y.iter().enumerate() {
            if super::predict_label(logits.row(i)).index() == label {
                correct += 1;
            }
        }
    }
    correct as f64 / data.len() as f64
}

/// Samples the epoch's candidates, scores them on `val`, then takes one
/// REINFORCE step with the accuracies as rewards, in sampling order.
pub fn controller_epoch(
    sg: &SharedSupergraph,
    policy: &mut ControllerPolicy,
    baseline: &mut BaselineState,
    val: &LabeledSet,
    cfg: &SearchConfig,
    epoch: usize,
) -> Result<Vec<Candidate>> {
    if val.is_empty() {
        return Err(Error::Dataset("validation set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, CANDIDATES, epoch as u64));
    let samples: Vec<_> = (0..cfg.candidates_per_epoch).map(|_| policy.sample(&mut rng)).collect();
    let scored: Vec<Result<f64>> = with_workers(cfg.workers, || {
        samples.par_iter().map(|(arch, _)| Ok(view_accuracy(&sg.activate(arch)?, val, cfg.batch_size))).collect()
    })?;
    let rewards = scored.into_iter().collect::<Result<Vec<f64>>>()?;
    let traces: Vec<_> = samples.iter().map(|(_, t)| t.clone()).collect();
    policy.reinforce_update(&traces, &rewards, baseline)?;
    Ok(samples
        .iter()
        .zip(rewards)
        .enumerate()
        .map(|(index, ((arch, _), val_accuracy))| Candidate { epoch, index, genotype: GenotypeFile::from(arch), val_accuracy })
        .collect())
}

/// Alternates child training and controller updates; the best candidate is
/// the first one reaching the highest validation accuracy.
pub fn search(train: &LabeledSet, val: &LabeledSet, cfg: &SearchConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    let plan = make_stack_plan(cfg.variant, cfg.base_channels, 2)?;
    let mut sg = SharedSupergraph::new(&plan, cfg.nodes, &cfg.counting, subseed(cfg.seed, SUPERGRAPH, 0))?;
    let mut policy = ControllerPolicy::new(cfg.nodes, cfg.controller, subseed(cfg.seed, POLICY, 0))?;
    let mut baseline = BaselineState::new(cfg.controller.baseline_decay);
    let mut sgd = Sgd::new(cfg.optim.momentum, cfg.optim.weight_decay);
    let mut child_epochs = Vec::with_capacity(cfg.controller_epochs);
    let mut candidates = Vec::with_capacity(cfg.evaluations());
    for epoch in 0..cfg.controller_epochs {
        child_epochs.push(train_child_epoch(&mut sg, &policy, train, cfg, &mut sgd, epoch)?);
        candidates.extend(controller_epoch(&sg, &mut policy, &mut baseline, val, cfg, epoch)?);
    }
    let best = candidates
        .iter()
        .fold(None::<&Candidate>, |acc, c| match acc {
            Some(b) if b.val_accuracy >= c.val_accuracy => Some(b),
            _ => Some(c),
        })
        .expect("at least one candidate")
        .clone();
    let arch = ArchPair::new(best.genotype.normal.clone(), best.genotype.reduction.clone());
    arch.validate(cfg.nodes).into_result()?;
    let report = SearchReport {
        config: *cfg,
        train_images: train.len(),
        validation_images: val.len(),
        evaluations: candidates.len(),
        best: best.genotype.clone(),
        best_accuracy: best.val_accuracy,
        best_epoch: best.epoch,
        best_index: best.index,
        baseline,
        child_epochs,
        candidates,
    };
    Ok(SearchOutcome { best: arch, report, policy })
}

/// Searches on the training part of fold `fold`: the sources outside it,
/// minus a stratified validation carve-out of originals. Training images
/// include the augmentations when `cfg.augment` is set.
pub fn search_on_fold(originals: &[RoiImage], folds: &FoldAssignment, fold: usize, cfg: &SearchConfig) -> Result<SearchOutcome> {
    let (train, val) = fold_split(originals, folds, fold, cfg)?;
    search(&train, &val, cfg)
}

pub(crate) fn fold_split(
    originals: &[RoiImage],
    folds: &FoldAssignment,
    fold: usize,
    cfg: &SearchConfig,
) -> Result<(LabeledSet, LabeledSet)> {
    if fold >= folds.k {
        return Err(Error::InvalidArgument(format!("fold {fold} out of range for k={}", folds.k)));
    }
    let mut sources = Vec::new();
    for img in originals {
        match folds.fold_of(&img.source_id) {
            None => return Err(Error::Dataset(format!("{} has no fold assignment", img.source_id))),
            Some(f) if f != fold => sources.push((img.source_id.clone(), img.label)),
            Some(_) => {}
        }
    }
    let (train_ids, val_ids) = split_validation(&sources, cfg.validation_fraction, subseed(cfg.seed, SPLIT, fold as u64))?;
    let pick = |ids: &[(String, crate::datapipe::Label)]| -> Vec<&RoiImage> {
        let set: std::collections::BTreeSet<&str> = ids.iter().map(|(s, _)| s.as_str()).collect();
        originals.iter().filter(|i| set.contains(i.source_id.as_str())).collect()
    };
    let train_orig = pick(&train_ids);
    let mut train_imgs: Vec<RoiImage> = Vec::new();
    for img in &train_orig {
        train_imgs.push((*img).clone());
        if cfg.augment {
            train_imgs.extend(augment_all(img)?);
        }
    }
    let train = LabeledSet::from_images(&train_imgs, cfg.input_side);
    let val = LabeledSet::from_images(pick(&val_ids), cfg.input_side);
    Ok((train, val))
}
