//! A complete search at desk scale: stripe images, three-node cells, five
//! controller epochs of two candidates, then a ten-epoch ENAS7 network.

use cellnas::datapipe::{stratified_folds, synthetic_stripes};
use cellnas::searchspace::{build_network, make_stack_plan, Variant};
use cellnas::trainer::{evaluate, search_on_fold, train_from_scratch, LabeledSet, SearchConfig, TrainConfig};

fn main() -> cellnas::Result<()> {
    let originals = synthetic_stripes(100, 16, 8);
    let folds = stratified_folds(&originals, 5, 8)?;
    let cfg = SearchConfig {
        controller_epochs: 5,
        candidates_per_epoch: 2,
        nodes: 3,
        base_channels: 8,
        batch_size: 16,
        input_side: 16,
        augment: false,
        seed: 8,
        ..Default::default()
    };
    let found = search_on_fold(&originals, &folds, 0, &cfg)?;
    for c in &found.report.candidates {
        println!("epoch {} candidate {}: val accuracy {:.3}", c.epoch, c.index, c.val_accuracy);
    }
    println!("best:\n{}", found.best.to_json());

    let (train, test): (Vec<_>, Vec<_>) = originals.iter().partition(|i| folds.fold_of(&i.source_id) != Some(0));
    let train = LabeledSet::from_images(train, 16);
    let test = LabeledSet::from_images(test, 16);
    let net = build_network(&found.best, &make_stack_plan(Variant::Enas7, 8, 2)?)?;
    let tcfg = TrainConfig { epochs: 10, batch_size: 16, base_channels: 8, input_side: 16, augment: false, seed: 8, ..Default::default() };
    let (model, curve) = train_from_scratch(&net, &train, &tcfg)?;
    for e in &curve {
        println!("epoch {:>2}: lr {:.4} loss {:.4}", e.epoch, e.lr, e.mean_loss);
    }
    let (m, _) = evaluate(&model, &test, 16)?;
    println!("held-out accuracy {:.3} ({} images)", m.acc.unwrap(), test.len());
    Ok(())
}
