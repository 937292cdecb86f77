//! Build a cell pair by hand, validate it, and round-trip it through the
//! flat decision encoding and the JSON document.

use cellnas::genotype::{ArchPair, CellGenotype, NodeSpec, OpKind};

fn main() -> cellnas::Result<()> {
    use OpKind::*;
    let normal = CellGenotype::new(vec![
        NodeSpec::new(0, SepConv3, 1, Identity),
        NodeSpec::new(1, SepConv5, 2, AvgPool3),
        NodeSpec::new(0, MaxPool3, 3, SepConv3),
    ]);
    let reduction = CellGenotype::new(vec![
        NodeSpec::new(0, MaxPool3, 1, SepConv5),
        NodeSpec::new(2, Identity, 1, SepConv3),
        NodeSpec::new(0, AvgPool3, 2, SepConv3),
    ]);
    let pair = ArchPair::new(normal, reduction);
    pair.validate(3).into_result()?;

    let seq = pair.encode()?;
    println!("{} decisions: {seq:?}", seq.len());
    assert_eq!(ArchPair::decode(&seq, 3)?, pair);
    println!("normal loose ends: {:?}", pair.normal.loose_ends());

    let json = pair.to_json();
    println!("{json}");
    assert_eq!(ArchPair::from_json(&json)?, pair);

    // a node reading a later node is rejected with a reason
    let bad = CellGenotype::new(vec![NodeSpec::new(3, Identity, 0, Identity)]);
    for v in bad.validate(1).violations {
        println!("rejected: {}", v.message);
    }
    Ok(())
}
