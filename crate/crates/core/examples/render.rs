//! Print the Graphviz source of a uniform cell pair. Pipe into `dot -Tsvg`.

use cellnas::genotype::{CellGenotype, OpKind};

fn main() {
    let normal = CellGenotype::uniform(5, OpKind::SepConv3);
    let reduction = CellGenotype::uniform(5, OpKind::MaxPool3);
    print!("{}", normal.to_dot("normal"));
    print!("{}", reduction.to_dot("reduction"));
}
