use cellnas::controller::{BaselineState, ControllerPolicy};
use cellnas::datapipe::{stratified_folds, synthetic_stripes};
use cellnas::genotype::ArchPair;
use cellnas::searchspace::{make_stack_plan, SharedSupergraph};
use cellnas::trainer::{controller_epoch, search_on_fold, view_accuracy, LabeledSet, SearchConfig};

fn desk() -> SearchConfig {
    SearchConfig {
        controller_epochs: 2,
        candidates_per_epoch: 4,
        nodes: 2,
        base_channels: 4,
        batch_size: 8,
        input_side: 10,
        augment: false,
        ..Default::default()
    }
}

#[test]
fn rewards_are_the_candidate_accuracies_in_order() {
    let cfg = desk();
    let val = LabeledSet::from_images(&synthetic_stripes(6, 10, 3), 10);
    let plan = make_stack_plan(cfg.variant, cfg.base_channels, 2).unwrap();
    let sg = SharedSupergraph::new(&plan, cfg.nodes, &cfg.counting, 5).unwrap();
    let mut policy = ControllerPolicy::new(cfg.nodes, cfg.controller, 6).unwrap();
    let mut baseline = BaselineState::new(cfg.controller.baseline_decay);
    let (before, baseline_before) = (policy.clone(), baseline);

    let candidates = controller_epoch(&sg, &mut policy, &mut baseline, &val, &cfg, 0).unwrap();
    assert_eq!(candidates.len(), 4);

    // evaluation left the supergraph as it was: rescoring gives the same numbers
    let mut replay = before.clone();
    let mut replay_baseline = baseline_before;
    let mut traces = Vec::new();
    let mut rewards = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        assert_eq!(c.index, i);
        let arch = ArchPair::new(c.genotype.normal.clone(), c.genotype.reduction.clone());
        assert_eq!(view_accuracy(&sg.activate(&arch).unwrap(), &val, cfg.batch_size), c.val_accuracy);
        traces.push(before.score(&arch.encode().unwrap()).unwrap());
        rewards.push(c.val_accuracy);
    }
    // one update, with exactly these rewards in this order
    replay.reinforce_update(&traces, &rewards, &mut replay_baseline).unwrap();
    assert_eq!(replay.params(), policy.params());
    assert_eq!(replay_baseline, baseline);
    assert_eq!(policy.steps, before.steps + 1);
}

#[test]
fn best_is_the_earliest_top_candidate() {
    let cfg = desk();
    let originals = synthetic_stripes(10, 10, 4);
    let folds = stratified_folds(&originals, 5, 0).unwrap();
    let out = search_on_fold(&originals, &folds, 1, &cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.candidates.len(), cfg.evaluations());
    let top = r.candidates.iter().map(|c| c.val_accuracy).fold(f64::MIN, f64::max);
    let first = r.candidates.iter().find(|c| c.val_accuracy == top).unwrap();
    assert_eq!((r.best_epoch, r.best_index, r.best_accuracy), (first.epoch, first.index, top));
    assert_eq!(r.best, first.genotype);
    assert!(out.best.validate(cfg.nodes).is_ok());
    // the held-out fold is neither trained on nor used for validation
    assert_eq!(r.train_images + r.validation_images, 16);
}
