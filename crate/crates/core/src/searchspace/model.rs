use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{cell_forward, edge_stride, next_inputs, BuildOptions, CellOutput, ConvUnit, OpModule};
use super::{build_network, make_stack_plan, network_param_count, CellInstance, Layer, NetworkSpec, Variant};
use crate::error::{Error, Result};
use crate::genotype::{ArchPair, CountingConfig, GenotypeFile};
use crate::nn::{ConvGeom, Graph, GraphMode, Init, ParamId, ParamKind, ParamStore, PoolGeom, PoolKind, Tensor, Var};

#[derive(Debug, Clone)]
enum LayerModule {
    Conv { unit: ConvUnit, relu_after: bool },
    MaxPool(PoolGeom),
    Cell { inst: CellInstance, ops: Vec<[OpModule; 2]>, output: CellOutput },
    Head { w: ParamId, b: ParamId },
    Flatten,
    Dense { w: ParamId, b: ParamId, relu: bool },
}

/// A [`NetworkSpec`] with instantiated weights.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: NetworkSpec,
    pub store: ParamStore,
    pub counting: CountingConfig,
    layers: Vec<LayerModule>,
}

impl Model {
    /// Instantiates every weight container of `spec`. Optional containers
    /// (conv biases before batchnorm, batchnorm affine terms) follow `cfg`.
    pub fn build(spec: &NetworkSpec, cfg: &CountingConfig, seed: u64) -> Result<Model> {
        let opts = BuildOptions::from(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (li, layer) in spec.layers.iter().enumerate() {
            let module = match layer {
                Layer::Conv { c_in, c_out, kernel, stride, pad, batchnorm, relu } => LayerModule::Conv {
                    unit: ConvUnit::build(
                        &mut store,
                        &format!("l{li}.conv"),
                        ConvGeom::dense(*c_in, *c_out, *kernel, *stride, *pad),
                        *batchnorm,
                        false,
                        false,
                        opts,
                        &mut rng,
                    ),
                    relu_after: *relu,
                },
                Layer::MaxPool { kernel, stride, pad } => {
                    LayerModule::MaxPool(PoolGeom { kernel: *kernel, stride: *stride, pad: *pad })
                }
                Layer::Cell(inst) => {
                    let reduction = inst.is_reduction();
                    let mut ops = Vec::with_capacity(inst.genotype.len());
                    for (ni, node) in inst.genotype.nodes.iter().enumerate() {
                        let build = |slot: &str, input: usize, op, store: &mut ParamStore, rng: &mut ChaCha8Rng| {
                            let c = if input < 2 { inst.c_in } else { inst.c_out };
                            OpModule::build(
                                store,
                                &format!("l{li}.node{ni}.{slot}.{op}"),
                                op,
                                c,
                                inst.c_out,
                                edge_stride(reduction, input),
                                opts,
                                rng,
                            )
                        };
                        let a = build("a", node.in_a, node.op_a, &mut store, &mut rng);
                        let b = build("b", node.in_b, node.op_b, &mut store, &mut rng);
                        ops.push([a, b]);
                    }
                    let blocks = inst.genotype.loose_ends().len();
                    let output =
                        CellOutput::build(&mut store, &format!("l{li}.out"), blocks, inst.c_out, false, opts, &mut rng);
                    LayerModule::Cell { inst: inst.clone(), ops, output }
                }
                Layer::Head { c_in, num_classes } => {
                    let (w, b) = dense_params(&mut store, &format!("l{li}.fc"), *c_in, *num_classes, &mut rng);
                    LayerModule::Head { w, b }
                }
                Layer::Flatten => LayerModule::Flatten,
                Layer::Dense { f_in, f_out, relu } => {
                    let (w, b) = dense_params(&mut store, &format!("l{li}.fc"), *f_in, *f_out, &mut rng);
                    LayerModule::Dense { w, b, relu: *relu }
                }
            };
            layers.push(module);
        }
        Ok(Model { spec: spec.clone(), store, counting: *cfg, layers })
    }

    /// Logits for a `[n, C, H, W]` input.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let mut prev_prev = x;
        let mut cur = x;
        for layer in &self.layers {
            let out = match layer {
                LayerModule::Conv { unit, relu_after } => {
                    let y = unit.forward(g, cur);
                    if *relu_after {
                        g.relu(y)
                    } else {
                        y
                    }
                }
                LayerModule::MaxPool(geom) => g.pool(cur, PoolKind::Max, *geom),
                LayerModule::Cell { inst, ops, output } => {
                    let (s0, s1) = next_inputs(g, prev_prev, cur);
                    cell_forward(g, &inst.genotype, s0, s1, |n, s| &ops[n][s], output)
                }
                LayerModule::Head { w, b } => {
                    let r = g.relu(cur);
                    let p = g.global_avg_pool(r);
                    g.dense(p, *w, *b)
                }
                LayerModule::Flatten => g.flatten(cur),
                LayerModule::Dense { w, b, relu } => {
                    let y = g.dense(cur, *w, *b);
                    if *relu {
                        g.relu(y)
                    } else {
                        y
                    }
                }
            };
            prev_prev = if matches!(layer, LayerModule::Cell { .. }) { cur } else { out };
            cur = out;
        }
        cur
    }

    /// Logits computed with running batchnorm statistics.
    pub fn predict_logits(&self, x: Tensor) -> Tensor {
        let mut g = Graph::new(&self.store, GraphMode::EVAL);
        let xi = g.input(x);
        let y = self.forward(&mut g, xi);
        g.value(y).clone()
    }

    /// Exhaustive count over instantiated weight containers, skipping
    /// projection containers when `cfg` excludes them.
    pub fn enumerate_params(&self, cfg: &CountingConfig) -> usize {
        self.store
            .params()
            .iter()
            .filter(|p| cfg.include_projection_ops || !p.projection)
            .map(|p| p.len())
            .sum()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(self.store.len() as u64).to_le_bytes());
        for p in self.store.params() {
            write_vec(&mut buf, &p.value);
        }
        buf.extend_from_slice(&(self.store.all_stats().len() as u64).to_le_bytes());
        for s in self.store.all_stats() {
            write_vec(&mut buf, &s.mean);
            write_vec(&mut buf, &s.var);
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Overwrites this model's weights with a checkpoint written by an
    /// identically structured model.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
        let mut r = bytes.strip_prefix(CHECKPOINT_MAGIC).ok_or_else(|| bad("not a checkpoint"))?;
        let count = read_u64(&mut r).ok_or_else(|| bad("truncated"))? as usize;
        if count != self.store.len() {
            return Err(bad("parameter container count does not match the architecture"));
        }
        for p in self.store.params_mut() {
            let v = read_vec(&mut r).ok_or_else(|| bad("truncated"))?;
            if v.len() != p.value.len() {
                return Err(bad(&format!("container {} has the wrong size", p.name)));
            }
            p.value = v;
        }
        let nstats = read_u64(&mut r).ok_or_else(|| bad("truncated"))? as usize;
        if nstats != self.store.all_stats().len() {
            return Err(bad("batchnorm statistics do not match the architecture"));
        }
        for s in self.store.stats_mut() {
            s.mean = read_vec(&mut r).ok_or_else(|| bad("truncated"))?;
            s.var = read_vec(&mut r).ok_or_else(|| bad("truncated"))?;
        }
        Ok(())
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CNASCKP1";

fn write_vec(buf: &mut Vec<u8>, v: &[f32]) {
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_u64(r: &mut &[u8]) -> Option<u64> {
    let (head, rest) = r.split_first_chunk::<8>()?;
    *r = rest;
    Some(u64::from_le_bytes(*head))
}

fn read_vec(r: &mut &[u8]) -> Option<Vec<f32>> {
    let len = read_u64(r)? as usize;
    let bytes = r.get(..len * 4)?;
    *r = &r[len * 4..];
    Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn dense_params(store: &mut ParamStore, name: &str, f_in: usize, f_out: usize, rng: &mut ChaCha8Rng) -> (ParamId, ParamId) {
    let w = store.add(format!("{name}.w"), ParamKind::DenseWeight, false, &[f_out, f_in], Init::FanInUniform(f_in), rng);
    let b = store.add(format!("{name}.b"), ParamKind::DenseBias, false, &[f_out], Init::FanInUniform(f_in), rng);
    (w, b)
}

/// Architecture record written next to every checkpoint; enough to rebuild
/// the network without the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub variant: Variant,
    pub base_channels: usize,
    #[serde(rename = "B")]
    pub nodes: usize,
    pub num_classes: usize,
    pub input_side: usize,
    pub counting: CountingConfig,
    pub total_params: usize,
    pub genotype: GenotypeFile,
    pub plan: String,
}

impl NetworkManifest {
    pub fn new(
        variant: Variant,
        arch: &ArchPair,
        base_channels: usize,
        num_classes: usize,
        input_side: usize,
        counting: CountingConfig,
    ) -> Result<Self> {
        let plan = make_stack_plan(variant, base_channels, num_classes)?;
        let spec = build_network(arch, &plan)?;
        Ok(NetworkManifest {
            variant,
            base_channels,
            nodes: arch.nodes(),
            num_classes,
            input_side,
            counting,
            total_params: network_param_count(&spec, &counting),
            genotype: GenotypeFile::from(arch),
            plan: plan.pattern(),
        })
    }

    pub fn arch(&self) -> Result<ArchPair> {
        let arch = ArchPair::new(self.genotype.normal.clone(), self.genotype.reduction.clone());
        arch.validate(self.nodes).into_result()?;
        Ok(arch)
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        let plan = make_stack_plan(self.variant, self.base_channels, self.num_classes)?;
        build_network(&self.arch()?, &plan)
    }

    /// Rebuilds the model structure (weights freshly initialized).
    pub fn build_model(&self) -> Result<Model> {
        Model::build(&self.network()?, &self.counting, 0)
    }
}
