use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_rates, pooled, predict_label, subseed, tally, with_workers, LabeledSet, MeanRates, Metrics, TrainConfig};
use crate::datapipe::{augment_all, FoldAssignment, Label, RoiImage};
use crate::error::{Error, Result};
use crate::genotype::ArchPair;
use crate::nn::{Graph, GraphMode, Sgd, BN_MOMENTUM};
use crate::searchspace::{build_network, make_stack_plan, network_param_count, Model, NetworkSpec, Variant};

const INIT: u64 = 11;
const BATCHES: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub train_accuracy: f64,
}

/// Trains freshly initialized weights for `cfg.epochs` epochs.
pub fn train_from_scratch(net: &NetworkSpec, data: &LabeledSet, cfg: &TrainConfig) -> Result<(Model, Vec<EpochStats>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    let mut model = Model::build(net, &cfg.counting, subseed(cfg.seed, INIT, 0))?;
    let mut sgd = Sgd::new(cfg.optim.momentum, cfg.optim.weight_decay);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.optim.schedule.lr(epoch);
        let (mut loss_sum, mut correct) = (0.0, 0);
        let batches = data.shuffled_batches(cfg.batch_size, subseed(cfg.seed, BATCHES, epoch as u64));
        for idx in &batches {
            let (x, y) = data.batch(idx);
            let (loss, grads, updates) = {
                let mut g = Graph::new(&model.store, GraphMode::TRAIN);
                let xi = g.input(x);
                let logits = model.forward(&mut g, xi);
                for (i, &label) in y.iter().enumerate() {
                    if predict_label(g.value(logits).row(i)).index() == label {
                        correct += 1;
                    }
                }
                let loss = g.cross_entropy(logits, &y);
                (g.value(loss).data()[0], g.backward(loss), g.take_bn_updates())
            };
            if !loss.is_finite() {
                return Err(Error::Runtime(format!("training loss diverged at epoch {epoch} ({loss})")));
            }
            sgd.step(&mut model.store, &grads, lr as f32);
            model.store.apply_bn_updates(&updates, BN_MOMENTUM);
            loss_sum += loss as f64;
        }
        curve.push(EpochStats {
            epoch,
            lr,
            mean_loss: loss_sum / batches.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((model, curve))
}

/// Predictions with running batchnorm statistics, and their confusion counts.
pub fn evaluate(model: &Model, data: &LabeledSet, batch_size: usize) -> Result<(Metrics, Vec<Label>)> {
    let mut predicted = Vec::with_capacity(data.len());
    for idx in data.ordered_batches(batch_size.max(1)) {
        let (x, _) = data.batch(&idx);
        let logits = model.predict_logits(x);
        predicted.extend((0..idx.len()).map(|i| predict_label(logits.row(i))));
    }
    let truth: Vec<Label> = data.labels.iter().map(|&l| Label::from_index(l).expect("binary labels")).collect();
    Ok((tally(&predicted, &truth)?, predicted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub fold: usize,
    pub train_images: usize,
    pub test_images: usize,
    pub test_sources: Vec<String>,
    pub metrics: Metrics,
    pub curve: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub variant: Variant,
    pub plan: String,
    pub total_params: usize,
    pub config: TrainConfig,
    pub folds: Vec<CvFold>,
    pub pooled: Metrics,
    pub mean: MeanRates,
    pub conventions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: CvReport,
    pub models: Vec<Model>,
}

/// Trains one model per fold on the sources outside it (plus their
/// augmentations when enabled) and tests on the fold's originals only.
pub fn cross_validate(
    arch: &ArchPair,
    variant: Variant,
    originals: &[RoiImage],
    folds: &FoldAssignment,
    cfg: &TrainConfig,
) -> Result<CvOutcome> {
    cfg.validate()?;
    let plan = make_stack_plan(variant, cfg.base_channels, 2)?;
    let net = build_network(arch, &plan)?;
    for img in originals {
        if folds.fold_of(&img.source_id).is_none() {
            return Err(Error::Dataset(format!("{} has no fold assignment", img.source_id)));
        }
    }
    let run_fold = |f: usize| -> Result<(CvFold, Model)> {
        let mut train_imgs = Vec::new();
        let mut test_imgs = Vec::new();
        for img in originals {
            if folds.fold_of(&img.source_id) == Some(f) {
                test_imgs.push(img);
            } else {
                train_imgs.push(img.clone());
                if cfg.augment {
                    train_imgs.extend(augment_all(img)?);
                }
            }
        }
        if test_imgs.is_empty() {
            return Err(Error::Dataset(format!("fold {f} has no test images")));
        }
        let train = LabeledSet::from_images(&train_imgs, cfg.input_side);
        let test = LabeledSet::from_images(test_imgs.iter().copied(), cfg.input_side);
        let fold_cfg = TrainConfig { seed: subseed(cfg.seed, 13, f as u64), ..*cfg };
        let (model, curve) = train_from_scratch(&net, &train, &fold_cfg)?;
        let (metrics, _) = evaluate(&model, &test, cfg.batch_size)?;
        let fold = CvFold {
            fold: f,
            train_images: train.len(),
            test_images: test.len(),
            test_sources: test.source_ids.clone(),
            metrics,
            curve,
        };
        Ok((fold, model))
    };
    let results: Vec<Result<(CvFold, Model)>> = with_workers(cfg.workers, || (0..folds.k).into_par_iter().map(run_fold).collect())?;
    let mut fold_reports = Vec::with_capacity(folds.k);
    let mut models = Vec::with_capacity(folds.k);
    for r in results {
        let (f, m) = r?;
        fold_reports.push(f);
        models.push(m);
    }
    let per_fold: Vec<Metrics> = fold_reports.iter().map(|f| f.metrics).collect();
    let report = CvReport {
        variant,
        plan: plan.pattern(),
        total_params: network_param_count(&net, &cfg.counting),
        config: *cfg,
        pooled: pooled(&per_fold)?,
        mean: mean_rates(&per_fold),
        folds: fold_reports,
        conventions: vec![
            "positive class: malignant".into(),
            "prediction: argmax of two logits, exact ties to benign".into(),
            "mean: unweighted mean of per-fold rates; pooled: rates of summed counts".into(),
            "test folds contain original images only".into(),
        ],
    };
    Ok(CvOutcome { report, models })
}
