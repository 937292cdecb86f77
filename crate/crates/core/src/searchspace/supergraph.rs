use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{cell_forward, edge_stride, next_inputs, BuildOptions, CellOutput, ConvUnit, OpModule};
use super::{CellType, StackPlan, INPUT_CHANNELS, STEM_KERNEL};
use crate::error::{Error, Result};
use crate::genotype::{ArchPair, CountingConfig, OpKind, CELL_INPUTS};
use crate::nn::{ConvGeom, BN_MOMENTUM, Graph, GraphMode, Init, ParamId, ParamKind, ParamStore, Sgd, Tensor, Var};

#[derive(Debug, Clone)]
struct SuperCell {
    kind: CellType,
    /// `edges[node][input][op]`, shared by both slots of the node.
    edges: Vec<Vec<Vec<OpModule>>>,
    output: CellOutput,
}

/// Weights for every candidate op on every edge of every cell position.
///
/// Both slots of a node read from the same `(input, op)` container, so a
/// node whose two edges coincide applies one module twice.
#[derive(Debug, Clone)]
pub struct SharedSupergraph {
    pub plan: StackPlan,
    pub nodes: usize,
    pub store: ParamStore,
    stem: ConvUnit,
    cells: Vec<SuperCell>,
    head: (ParamId, ParamId),
}

impl SharedSupergraph {
    pub fn new(plan: &StackPlan, nodes: usize, cfg: &CountingConfig, seed: u64) -> Result<Self> {
        if nodes == 0 {
            return Err(Error::InvalidArgument("B must be >= 1".into()));
        }
        let opts = BuildOptions::from(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c0 = plan.base_channels;
        let stem = ConvUnit::build(
            &mut store,
            "stem",
            ConvGeom::dense(INPUT_CHANNELS, c0, STEM_KERNEL, 1, STEM_KERNEL / 2),
            true,
            false,
            false,
            opts,
            &mut rng,
        );
        let mut c = c0;
        let mut cells = Vec::with_capacity(plan.cells.len());
        for (pos, &kind) in plan.cells.iter().enumerate() {
            let reduction = kind == CellType::Reduction;
            let c_out = if reduction { 2 * c } else { c };
            let edges = (0..nodes)
                .map(|node| {
                    (0..node + CELL_INPUTS)
                        .map(|input| {
                            let c_read = if input < CELL_INPUTS { c } else { c_out };
                            OpKind::ALL
                                .iter()
                                .map(|&op| {
                                    OpModule::build(
                                        &mut store,
                                        &format!("c{pos}.node{node}.in{input}.{op}"),
                                        op,
                                        c_read,
                                        c_out,
                                        edge_stride(reduction, input),
                                        opts,
                                        &mut rng,
                                    )
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let output = CellOutput::build(&mut store, &format!("c{pos}.out"), nodes, c_out, true, opts, &mut rng);
            cells.push(SuperCell { kind, edges, output });
            c = c_out;
        }
        let w = store.add("head.w", ParamKind::DenseWeight, false, &[plan.num_classes, c], Init::FanInUniform(c), &mut rng);
        let b = store.add("head.b", ParamKind::DenseBias, false, &[plan.num_classes], Init::FanInUniform(c), &mut rng);
        Ok(SharedSupergraph { plan: plan.clone(), nodes, store, stem, cells, head: (w, b) })
    }

    /// Number of weight containers; fixed at construction.
    pub fn container_count(&self) -> usize {
        self.store.len()
    }

    /// A view that routes computation through the ops chosen by `arch`.
    pub fn activate(&self, arch: &ArchPair) -> Result<SubnetView<'_>> {
        if arch.nodes() != self.nodes || arch.reduction.len() != self.nodes {
            return Err(Error::InvalidArgument(format!(
                "architecture has B={}/{}, supergraph was built for B={}",
                arch.normal.len(),
                arch.reduction.len(),
                self.nodes
            )));
        }
        arch.validate(self.nodes).into_result()?;
        Ok(SubnetView { sg: self, arch: arch.clone() })
    }

    /// One SGD step of `arch` on a batch; returns the batch loss.
    pub fn train_step(&mut self, arch: &ArchPair, x: Tensor, labels: &[usize], sgd: &mut Sgd, lr: f32) -> Result<f32> {
        let (loss, grads, updates) = {
            let view = self.activate(arch)?;
            let mut g = Graph::new(&self.store, GraphMode::TRAIN);
            let xi = g.input(x);
            let logits = view.forward(&mut g, xi);
            let loss = g.cross_entropy(logits, labels);
            let grads = g.backward(loss);
            (g.value(loss).data()[0], grads, g.take_bn_updates())
        };
        if !loss.is_finite() {
            return Err(Error::Runtime(format!("child loss diverged ({loss})")));
        }
        sgd.step(&mut self.store, &grads, lr);
        self.store.apply_bn_updates(&updates, BN_MOMENTUM);
        Ok(loss)
    }
}

/// A sampled architecture bound to the shared weights.
#[derive(Debug, Clone)]
pub struct SubnetView<'a> {
    sg: &'a SharedSupergraph,
    arch: ArchPair,
}

impl SubnetView<'_> {
    pub fn arch(&self) -> &ArchPair {
        &self.arch
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let sg = self.sg;
        let stem = sg.stem.forward(g, x);
        let (mut prev_prev, mut prev) = (stem, stem);
        for cell in &sg.cells {
            let genotype = match cell.kind {
                CellType::Normal => &self.arch.normal,
                CellType::Reduction => &self.arch.reduction,
            };
            let (s0, s1) = next_inputs(g, prev_prev, prev);
            let edge = |n: usize, slot: usize| {
                let (input, op) = genotype.nodes[n].edges()[slot];
                &cell.edges[n][input][op.index()]
            };
            let out = cell_forward(g, genotype, s0, s1, edge, &cell.output);
            prev_prev = prev;
            prev = out;
        }
        let r = g.relu(prev);
        let p = g.global_avg_pool(r);
        g.dense(p, sg.head.0, sg.head.1)
    }

    /// Logits using batch statistics, as during candidate evaluation.
    pub fn logits(&self, x: Tensor) -> Tensor {
        let mut g = Graph::new(&self.sg.store, GraphMode::EVAL_BATCH);
        let xi = g.input(x);
        let y = self.forward(&mut g, xi);
        g.value(y).clone()
    }
}
