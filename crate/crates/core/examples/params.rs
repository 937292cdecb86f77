//! Parameter counts of both stackings next to the published figures, under
//! each counting convention, plus the AlexNet baseline.

use cellnas::genotype::{ArchPair, CellGenotype, CountingConfig, OpKind};
use cellnas::searchspace::{
    build_alexnet, build_network, make_stack_plan, network_param_count, Model, Variant, ALEXNET_PUBLISHED_PARAMS, FINAL_BASE_CHANNELS,
};

fn main() -> cellnas::Result<()> {
    let arch = ArchPair::new(CellGenotype::uniform(5, OpKind::SepConv3), CellGenotype::uniform(5, OpKind::SepConv5));
    let conventions = [
        ("default", CountingConfig::default()),
        ("no projections", CountingConfig { include_projection_ops: false, ..Default::default() }),
        ("with conv bias", CountingConfig { include_conv_bias: true, ..Default::default() }),
    ];
    for variant in [Variant::Enas7, Variant::Enas17] {
        let net = build_network(&arch, &make_stack_plan(variant, FINAL_BASE_CHANNELS, 2)?)?;
        for (name, cfg) in &conventions {
            let analytic = network_param_count(&net, cfg);
            let enumerated = Model::build(&net, cfg, 0)?.enumerate_params(cfg);
            assert_eq!(analytic, enumerated);
            let published = variant.published_params();
            let dev = 100.0 * (analytic as f64 / published as f64 - 1.0);
            println!("{variant:<7} {name:<15} {analytic:>10}  published {published:>9}  ({dev:+.1}%)");
        }
    }
    let cfg = CountingConfig::default();
    let canonical = network_param_count(&build_alexnet(1000, 224, 3)?, &cfg);
    let ours = network_param_count(&build_alexnet(2, 100, 1)?, &cfg);
    println!("AlexNet 1000 classes, 224x224x3: {canonical}");
    println!("AlexNet 2 classes, 100x100x1:    {ours}  published {ALEXNET_PUBLISHED_PARAMS}");
    Ok(())
}
