use std::collections::{BTreeMap, BTreeSet};

use cellnas::genotype::{cell_param_count, ArchPair, CellGenotype, CountingConfig, NodeSpec, OpKind};
use proptest::prelude::*;

/// A decision sequence within bounds for `nodes` nodes.
fn bounded_seq(nodes: usize) -> impl Strategy<Value = Vec<usize>> {
    (0..nodes)
        .map(|i| (0..i + 2, 0..OpKind::COUNT, 0..i + 2, 0..OpKind::COUNT).prop_map(|(a, b, c, d)| vec![a, b, c, d]))
        .collect::<Vec<_>>()
        .prop_map(|v| v.concat())
}

fn cell() -> impl Strategy<Value = CellGenotype> {
    (1usize..=6).prop_flat_map(bounded_seq).prop_map(|s| CellGenotype::decode(&s, s.len() / 4).unwrap())
}

fn counting() -> impl Strategy<Value = CountingConfig> {
    (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(a, b, p)| CountingConfig {
        include_batchnorm_affine: a,
        include_conv_bias: b,
        include_projection_ops: p,
    })
}

proptest! {
    #[test]
    fn decode_then_encode_is_identity(seq in (1usize..=6).prop_flat_map(bounded_seq)) {
        let nodes = seq.len() / 4;
        let g = CellGenotype::decode(&seq, nodes).unwrap();
        prop_assert_eq!(g.encode().unwrap(), seq);
        prop_assert_eq!(CellGenotype::decode(&g.encode().unwrap(), nodes).unwrap(), g);
    }

    #[test]
    fn pair_round_trip((nodes, n, r) in (1usize..=5).prop_flat_map(|b| (Just(b), bounded_seq(b), bounded_seq(b)))) {
        let seq = [n, r].concat();
        let pair = ArchPair::decode(&seq, nodes).unwrap();
        prop_assert_eq!(pair.encode().unwrap(), seq);
        prop_assert_eq!(ArchPair::from_json(&pair.to_json()).unwrap(), pair);
    }

    #[test]
    fn validate_agrees_with_decode(raw in prop::collection::vec((0usize..8, 0usize..5, 0usize..8, 0usize..5), 1..6)) {
        let nodes: Vec<NodeSpec> = raw
            .iter()
            .map(|&(a, oa, b, ob)| NodeSpec::new(a, OpKind::from_index(oa).unwrap(), b, OpKind::from_index(ob).unwrap()))
            .collect();
        let seq: Vec<usize> = raw.iter().flat_map(|&(a, oa, b, ob)| [a, oa, b, ob]).collect();
        let g = CellGenotype::new(nodes);
        let decodable = CellGenotype::decode(&seq, raw.len()).is_ok();
        prop_assert_eq!(g.validate(raw.len()).is_ok(), decodable);
    }

    #[test]
    fn loose_ends_are_exactly_the_unreferenced_nodes(g in cell()) {
        let loose = g.loose_ends();
        prop_assert!(!loose.is_empty());
        for j in 0..g.len() {
            let referenced = g.nodes.iter().any(|n| n.in_a == j + 2 || n.in_b == j + 2);
            prop_assert_eq!(loose.contains(&j), !referenced);
        }
    }

    #[test]
    fn param_count_monotone_without_projections(
        g in cell(),
        cfg in counting(),
        c_in in 1usize..24,
        c_out in 1usize..24,
        d_in in 0usize..8,
        d_out in 0usize..8,
    ) {
        let cfg = CountingConfig { include_projection_ops: false, ..cfg };
        let base = cell_param_count(&g, c_in, c_out, &cfg);
        prop_assert!(cell_param_count(&g, c_in + d_in, c_out, &cfg) >= base);
        prop_assert!(cell_param_count(&g, c_in, c_out + d_out, &cfg) >= base);
    }

    #[test]
    fn param_count_monotone_under_proportional_growth(g in cell(), cfg in counting(), c in 1usize..16, k in 1usize..4) {
        for ratio in [1, 2] {
            let small = cell_param_count(&g, c, ratio * c, &cfg);
            let large = cell_param_count(&g, k * c, k * ratio * c, &cfg);
            prop_assert!(large >= small);
        }
    }

    #[test]
    fn dot_is_acyclic(g in cell()) {
        let dot = g.to_dot("cell");
        let mut edges: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut vertices = BTreeSet::new();
        for line in dot.lines() {
            if let Some((from, rest)) = line.trim().split_once(" -> ") {
                let to = rest.split([' ', ';']).next().unwrap().to_string();
                vertices.insert(from.to_string());
                vertices.insert(to.clone());
                edges.entry(from.to_string()).or_default().push(to);
            }
        }
        // Kahn's algorithm
        let mut indegree: BTreeMap<&str, usize> = vertices.iter().map(|v| (v.as_str(), 0)).collect();
        for tos in edges.values() {
            for t in tos {
                *indegree.get_mut(t.as_str()).unwrap() += 1;
            }
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(v, _)| *v).collect();
        let mut visited = 0;
        while let Some(v) = ready.pop() {
            visited += 1;
            for t in edges.get(v).into_iter().flatten() {
                let d = indegree.get_mut(t.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(t.as_str());
                }
            }
        }
        prop_assert_eq!(visited, vertices.len());
        prop_assert_eq!(dot.matches(" -> concat").count(), g.loose_ends().len());
    }
}
