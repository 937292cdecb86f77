use cellnas::genotype::{ArchPair, CountingConfig, OpKind};
use cellnas::searchspace::{
    build_network, forward_shapes, make_stack_plan, network_param_count, CellType, Model, SharedSupergraph, StackPlan, StageShape,
    Variant,
};
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn arch(nodes: usize) -> impl Strategy<Value = ArchPair> {
    let cell = move || {
        (0..nodes)
            .map(|i| (0..i + 2, 0..OpKind::COUNT, 0..i + 2, 0..OpKind::COUNT).prop_map(|(a, b, c, d)| [a, b, c, d]))
            .collect::<Vec<_>>()
    };
    (cell(), cell()).prop_map(move |(n, r)| {
        let seq: Vec<usize> = n.into_iter().chain(r).flatten().collect();
        ArchPair::decode(&seq, nodes).unwrap()
    })
}

fn any_arch() -> impl Strategy<Value = ArchPair> {
    (1usize..=4).prop_flat_map(arch)
}

fn counting() -> impl Strategy<Value = CountingConfig> {
    (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(a, b, p)| CountingConfig {
        include_batchnorm_affine: a,
        include_conv_bias: b,
        include_projection_ops: p,
    })
}

fn plan() -> impl Strategy<Value = StackPlan> {
    let random_cells = prop::collection::vec(prop_oneof![Just(CellType::Normal), Just(CellType::Reduction)], 1..6);
    prop_oneof![
        (prop_oneof![Just(Variant::Enas7), Just(Variant::Enas17)], 1usize..10, 2usize..5)
            .prop_map(|(v, c, k)| make_stack_plan(v, c, k).unwrap()),
        (random_cells, 1usize..10, 2usize..5).prop_map(|(cells, c, k)| StackPlan::new(cells, c, k).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_count_equals_enumeration(a in any_arch(), p in plan(), cfg in counting()) {
        let net = build_network(&a, &p).unwrap();
        let model = Model::build(&net, &cfg, 0).unwrap();
        prop_assert_eq!(network_param_count(&net, &cfg), model.enumerate_params(&cfg));
    }

    #[test]
    fn channels_double_at_each_reduction(a in any_arch(), p in plan()) {
        let net = build_network(&a, &p).unwrap();
        let mut reductions = 0;
        let mut prev_out = p.base_channels;
        for cell in net.cells() {
            if cell.is_reduction() {
                reductions += 1;
            }
            prop_assert_eq!(cell.c_out, p.base_channels << reductions);
            prop_assert_eq!(cell.c_in, prev_out);
            prev_out = cell.c_out;
        }
    }

    #[test]
    fn final_shape_is_class_vector(a in any_arch(), p in plan(), side in 1usize..40) {
        let net = build_network(&a, &p).unwrap();
        let shapes = forward_shapes(&net, (side, side, 1)).unwrap();
        prop_assert_eq!(*shapes.last().unwrap(), StageShape::Flat(p.num_classes));
        // spatial size halves (ceiling) at each reduction
        let mut expect = side;
        for (layer, shape) in net.layers.iter().zip(&shapes) {
            if let cellnas::searchspace::Layer::Cell(c) = layer {
                if c.is_reduction() {
                    expect = expect.div_ceil(2);
                }
                prop_assert_eq!(*shape, StageShape::Map(expect, expect, c.c_out));
            }
        }
    }
}

#[test]
fn supergraph_container_count_ignores_sampling() {
    let plan = make_stack_plan(Variant::Enas7, 4, 2).unwrap();
    let sg = SharedSupergraph::new(&plan, 3, &CountingConfig::default(), 1).unwrap();
    let before = sg.container_count();
    let x = cellnas::nn::Tensor::from_vec([1, 1, 8, 8], (0..64).map(|i| (i % 7) as f32 / 7.0).collect());
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for _ in 0..20 {
        let a = arch(3).new_tree(&mut runner).unwrap().current();
        let y = sg.activate(&a).unwrap().logits(x.clone());
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert_eq!(sg.container_count(), before);
    }
}
