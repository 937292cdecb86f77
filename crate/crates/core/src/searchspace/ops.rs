use rand::Rng;

use crate::genotype::{CellGenotype, CountingConfig, OpKind, CELL_INPUTS};
use crate::nn::{BnParams, ConvGeom, Graph, Init, ParamId, ParamKind, ParamStore, PoolGeom, PoolKind, Var};

/// Which optional containers get instantiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub bn_affine: bool,
    /// Bias on convolutions that are followed by batchnorm.
    pub conv_bias: bool,
}

impl From<&CountingConfig> for BuildOptions {
    fn from(cfg: &CountingConfig) -> Self {
        BuildOptions { bn_affine: cfg.include_batchnorm_affine, conv_bias: cfg.include_conv_bias }
    }
}

impl Default for BuildOptions {
    fn default() -> Self {
        (&CountingConfig::default()).into()
    }
}

pub(crate) fn add_bn<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    c: usize,
    projection: bool,
    opts: BuildOptions,
    rng: &mut R,
) -> BnParams {
    let (gamma, beta) = if opts.bn_affine {
        (
            Some(store.add(format!("{name}.gamma"), ParamKind::BnGamma, projection, &[c], Init::Constant(1.0), rng)),
            Some(store.add(format!("{name}.beta"), ParamKind::BnBeta, projection, &[c], Init::Constant(0.0), rng)),
        )
    } else {
        (None, None)
    };
    BnParams { gamma, beta, stats: store.add_stats(c) }
}

/// Convolution with optional pre-ReLU, bias and batchnorm.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub(crate) w: ParamId,
    pub(crate) bias: Option<ParamId>,
    pub(crate) geom: ConvGeom,
    pub(crate) bn: Option<BnParams>,
    pub(crate) relu_before: bool,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        geom: ConvGeom,
        batchnorm: bool,
        relu_before: bool,
        projection: bool,
        opts: BuildOptions,
        rng: &mut R,
    ) -> Self {
        let cin_g = geom.c_in / geom.groups;
        let fan_in = cin_g * geom.kernel * geom.kernel;
        let w = store.add(
            format!("{name}.w"),
            ParamKind::ConvWeight,
            projection,
            &[geom.c_out, cin_g, geom.kernel, geom.kernel],
            Init::HeNormal(fan_in),
            rng,
        );
        let bias = (!batchnorm || opts.conv_bias).then(|| {
            store.add(format!("{name}.b"), ParamKind::ConvBias, projection, &[geom.c_out], Init::Constant(0.0), rng)
        });
        let bn = batchnorm.then(|| add_bn(store, &format!("{name}.bn"), geom.c_out, projection, opts, rng));
        ConvUnit { w, bias, geom, bn, relu_before }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let x = if self.relu_before { g.relu(x) } else { x };
        let y = g.conv(x, self.w, self.bias, self.geom);
        match self.bn {
            Some(bn) => g.batch_norm(y, bn),
            None => y,
        }
    }
}

/// One instantiated candidate operation on a cell edge.
#[derive(Debug, Clone)]
pub enum OpModule {
    Identity {
        proj: Option<ConvUnit>,
        stride: usize,
    },
    SepConv {
        depthwise: ConvUnit,
        pointwise: ConvUnit,
    },
    Pool {
        kind: PoolKind,
        stride: usize,
        proj: Option<ConvUnit>,
    },
}

impl OpModule {
    /// Instantiates `op` reading `c` channels and producing `c_out`.
    pub(crate) fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        op: OpKind,
        c: usize,
        c_out: usize,
        stride: usize,
        opts: BuildOptions,
        rng: &mut R,
    ) -> Self {
        let projection = |store: &mut ParamStore, rng: &mut R, stride| {
            (c != c_out).then(|| {
                ConvUnit::build(
                    store,
                    &format!("{name}.proj"),
                    ConvGeom::pointwise(c, c_out, stride),
                    true,
                    true,
                    true,
                    opts,
                    rng,
                )
            })
        };
        match op {
            OpKind::Identity => OpModule::Identity { proj: projection(store, rng, stride), stride },
            OpKind::AvgPool3 | OpKind::MaxPool3 => OpModule::Pool {
                kind: if op == OpKind::MaxPool3 { PoolKind::Max } else { PoolKind::Avg },
                stride,
                proj: projection(store, rng, 1),
            },
            OpKind::SepConv3 | OpKind::SepConv5 => {
                let k = op.sep_kernel().expect("separable op");
                // depthwise carries its own (optional) bias, batchnorm follows the pointwise stage
                let depthwise = ConvUnit {
                    w: store.add(
                        format!("{name}.dw"),
                        ParamKind::ConvWeight,
                        false,
                        &[c, 1, k, k],
                        Init::HeNormal(k * k),
                        rng,
                    ),
                    bias: opts.conv_bias.then(|| {
                        store.add(format!("{name}.dw_b"), ParamKind::ConvBias, false, &[c], Init::Constant(0.0), rng)
                    }),
                    geom: ConvGeom::depthwise(c, k, stride),
                    bn: None,
                    relu_before: true,
                };
                let pointwise = ConvUnit::build(
                    store,
                    &format!("{name}.pw"),
                    ConvGeom::pointwise(c, c_out, 1),
                    true,
                    false,
                    false,
                    opts,
                    rng,
                );
                OpModule::SepConv {
                    depthwise,
                    pointwise,
                }
            }
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            OpModule::Identity { proj: Some(p), .. } => p.forward(g, x),
            OpModule::Identity { proj: None, stride } if *stride > 1 => g.subsample(x, *stride),
            OpModule::Identity { proj: None, .. } => x,
            OpModule::SepConv { depthwise, pointwise } => {
                let y = depthwise.forward(g, x);
                pointwise.forward(g, y)
            }
            OpModule::Pool { kind, stride, proj } => {
                let y = g.pool(x, *kind, PoolGeom { kernel: 3, stride: *stride, pad: 1 });
                match proj {
                    Some(p) => p.forward(g, y),
                    None => y,
                }
            }
        }
    }
}

/// The 1×1 projection from concatenated loose ends back to the cell width.
///
/// In a fixed network the weight has exactly `loose_ends · c_out` columns; in
/// the supergraph it has `B · c_out` columns and each activation reads the
/// column blocks of its loose ends.
#[derive(Debug, Clone)]
pub(crate) struct CellOutput {
    pub w: ParamId,
    pub bias: Option<ParamId>,
    pub bn: BnParams,
    pub c_out: usize,
    pub full_width: bool,
}

impl CellOutput {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        blocks: usize,
        c_out: usize,
        full_width: bool,
        opts: BuildOptions,
        rng: &mut R,
    ) -> Self {
        let c_in = blocks * c_out;
        let w = store.add(
            format!("{name}.w"),
            ParamKind::ConvWeight,
            true,
            &[c_out, c_in, 1, 1],
            Init::HeNormal(c_in),
            rng,
        );
        let bias =
            opts.conv_bias.then(|| store.add(format!("{name}.b"), ParamKind::ConvBias, true, &[c_out], Init::Constant(0.0), rng));
        let bn = add_bn(store, &format!("{name}.bn"), c_out, true, opts, rng);
        CellOutput { w, bias, bn, c_out, full_width }
    }

    fn forward(&self, g: &mut Graph<'_>, states: &[Var], loose: &[usize]) -> Var {
        let parts: Vec<Var> = loose.iter().map(|&i| states[i + CELL_INPUTS]).collect();
        let cat = g.concat(parts);
        let cat = g.relu(cat);
        let y = if self.full_width {
            let cols = loose.iter().flat_map(|&i| i * self.c_out..(i + 1) * self.c_out).collect();
            g.conv_cols(cat, self.w, self.bias, 1, cols)
        } else {
            g.conv(cat, self.w, self.bias, ConvGeom::pointwise(loose.len() * self.c_out, self.c_out, 1))
        };
        g.batch_norm(y, self.bn)
    }
}

/// Runs one cell: every node sums its two edge ops, loose ends are
/// concatenated and projected. `edge(node, slot)` resolves the op module.
pub(crate) fn cell_forward<'m>(
    g: &mut Graph<'_>,
    genotype: &CellGenotype,
    s0: Var,
    s1: Var,
    edge: impl Fn(usize, usize) -> &'m OpModule,
    output: &CellOutput,
) -> Var {
    let mut states = vec![s0, s1];
    for (i, node) in genotype.nodes.iter().enumerate() {
        let a = edge(i, 0).forward(g, states[node.in_a]);
        let b = edge(i, 1).forward(g, states[node.in_b]);
        let sum = g.add(a, b);
        states.push(sum);
    }
    output.forward(g, &states, &genotype.loose_ends())
}

/// Stride of an edge: reduction cells downsample only where they read cell inputs.
pub(crate) fn edge_stride(reduction: bool, input: usize) -> usize {
    if reduction && input < CELL_INPUTS {
        2
    } else {
        1
    }
}

/// Cell inputs for the next cell: both take the latest output when the two
/// preceding outputs differ in shape.
pub(crate) fn next_inputs(g: &Graph<'_>, prev_prev: Var, prev: Var) -> (Var, Var) {
    if g.shape(prev_prev) == g.shape(prev) {
        (prev_prev, prev)
    } else {
        (prev, prev)
    }
}
