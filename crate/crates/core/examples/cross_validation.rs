//! Five-fold cross-validation of a fixed cell pair on stripe images, with the
//! per-fold CSV.

use cellnas::datapipe::{stratified_folds, synthetic_stripes};
use cellnas::genotype::{ArchPair, CellGenotype, NodeSpec, OpKind};
use cellnas::searchspace::Variant;
use cellnas::trainer::{cross_validate, metrics_csv, TrainConfig};

fn main() -> cellnas::Result<()> {
    let cell = CellGenotype::new(vec![NodeSpec::new(0, OpKind::SepConv3, 1, OpKind::Identity), NodeSpec::new(2, OpKind::MaxPool3, 1, OpKind::SepConv3)]);
    let arch = ArchPair::new(cell.clone(), cell);
    let originals = synthetic_stripes(30, 16, 2);
    let folds = stratified_folds(&originals, 5, 2)?;
    let cfg = TrainConfig { epochs: 4, batch_size: 16, base_channels: 6, input_side: 16, augment: false, workers: 2, ..Default::default() };
    let out = cross_validate(&arch, Variant::Enas7, &originals, &folds, &cfg)?;
    println!("{} ({}), {} parameters", out.report.variant, out.report.plan, out.report.total_params);
    let per_fold: Vec<_> = out.report.folds.iter().map(|f| f.metrics).collect();
    print!("{}", metrics_csv(&per_fold)?);
    Ok(())
}
