use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datapipe::Label;
use crate::error::{Error, Result};

/// The class counted as positive in every confusion matrix.
pub const POSITIVE: Label = Label::Malignant;

/// Confusion counts and the rates derived from them. A rate whose
/// denominator is zero is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tp: usize,
    pub tnr: Option<f64>,
    pub tpr: Option<f64>,
    pub pr: Option<f64>,
    pub acc: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(tn: usize, fp: usize, fn_: usize, tp: usize) -> Result<Metrics> {
    let total = tn + fp + fn_ + tp;
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    Ok(Metrics {
        tn,
        fp,
        fn_,
        tp,
        tnr: ratio(tn, tn + fp),
        tpr: ratio(tp, tp + fn_),
        pr: ratio(tp, tp + fp),
        acc: ratio(tp + tn, total),
    })
}

/// Tallies predictions against ground truth.
pub fn tally(predicted: &[Label], truth: &[Label]) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    let (mut tn, mut fp, mut fn_, mut tp) = (0, 0, 0, 0);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p == POSITIVE, t == POSITIVE) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    compute_metrics(tn, fp, fn_, tp)
}

/// Argmax over two logits; an exact tie goes to benign.
pub fn predict_label(logits: &[f32]) -> Label {
    if logits[Label::Malignant.index()] > logits[Label::Benign.index()] {
        Label::Malignant
    } else {
        Label::Benign
    }
}

/// Unweighted mean of each rate over the folds where it is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRates {
    pub tnr: Option<f64>,
    pub tpr: Option<f64>,
    pub pr: Option<f64>,
    pub acc: Option<f64>,
    /// Folds that contributed to every rate.
    pub folds: usize,
}

pub fn mean_rates(per_fold: &[Metrics]) -> MeanRates {
    let mean = |f: fn(&Metrics) -> Option<f64>| {
        let v: Vec<f64> = per_fold.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    MeanRates {
        tnr: mean(|m| m.tnr),
        tpr: mean(|m| m.tpr),
        pr: mean(|m| m.pr),
        acc: mean(|m| m.acc),
        folds: per_fold.len(),
    }
}

/// Sums the counts of every fold.
pub fn pooled(per_fold: &[Metrics]) -> Result<Metrics> {
    let s = |f: fn(&Metrics) -> usize| per_fold.iter().map(f).sum();
    compute_metrics(s(|m| m.tn), s(|m| m.fp), s(|m| m.fn_), s(|m| m.tp))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

/// Rows `fold,tn,fp,fn,tp,tnr,tpr,pr,acc`: one per fold, then `pooled`,
/// then `mean` last. Undefined rates are written as `NA`.
pub fn metrics_csv(per_fold: &[Metrics]) -> Result<String> {
    let mut out = String::from("fold,tn,fp,fn,tp,tnr,tpr,pr,acc\n");
    let row = |name: String, m: &Metrics| {
        format!("{name},{},{},{},{},{},{},{},{}\n", m.tn, m.fp, m.fn_, m.tp, cell(m.tnr), cell(m.tpr), cell(m.pr), cell(m.acc))
    };
    for (i, m) in per_fold.iter().enumerate() {
        out += &row(i.to_string(), m);
    }
    out += &row("pooled".into(), &pooled(per_fold)?);
    let mean = mean_rates(per_fold);
    out += &format!("mean,NA,NA,NA,NA,{},{},{},{}\n", cell(mean.tnr), cell(mean.tpr), cell(mean.pr), cell(mean.acc));
    Ok(out)
}

pub fn write_metrics_csv(path: &Path, per_fold: &[Metrics]) -> Result<()> {
    std::fs::write(path, metrics_csv(per_fold)?).map_err(|e| Error::io(path, e))
}
