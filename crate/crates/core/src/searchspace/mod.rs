//! Concrete networks over the micro search space.
//!
//! A [`NetworkSpec`] is a pure description (layers with resolved channel
//! widths); [`Model`] instantiates one with real weights, and
//! [`SharedSupergraph`] holds weights for every candidate op at every edge.
//!
//! Channel/spatial schedule: the stem maps the input to `base_channels`;
//! every reduction cell doubles the width and ceiling-halves the spatial
//! size. A cell reads the outputs of the two preceding layers; right after a
//! reduction those differ in shape, and both inputs then take the most recent
//! output.

mod model;
mod ops;
mod supergraph;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genotype::{cell_param_count, ArchPair, CellGenotype, CountingConfig};
use crate::nn::kernels::window_out;

pub use model::{Model, NetworkManifest};
pub use ops::{BuildOptions, OpModule};
pub use supergraph::{SharedSupergraph, SubnetView};

/// Base width used while searching.
pub const SEARCH_BASE_CHANNELS: usize = 20;
/// Base width used for from-scratch training of the derived network.
pub const FINAL_BASE_CHANNELS: usize = 36;
/// Grayscale input.
pub const INPUT_CHANNELS: usize = 1;
pub const STEM_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellType {
    #[serde(rename = "N")]
    Normal,
    #[serde(rename = "R")]
    Reduction,
}

impl CellType {
    pub fn tag(self) -> char {
        match self {
            CellType::Normal => 'N',
            CellType::Reduction => 'R',
        }
    }
}

/// The two stacking schemes: 7 and 17 cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "ENAS7")]
    Enas7,
    #[serde(rename = "ENAS17")]
    Enas17,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Enas7 => "ENAS7",
            Variant::Enas17 => "ENAS17",
        }
    }

    /// Parameter total published for this variant, for side-by-side reporting.
    pub fn published_params(self) -> usize {
        match self {
            Variant::Enas7 => 2_342_484,
            Variant::Enas17 => 4_251_780,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "ENAS7" => Ok(Variant::Enas7),
            "ENAS17" => Ok(Variant::Enas17),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}, expected ENAS7 or ENAS17"))),
        }
    }
}

/// Published AlexNet total at two classes.
pub const ALEXNET_PUBLISHED_PARAMS: usize = 56_858_656;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackPlan {
    pub cells: Vec<CellType>,
    pub base_channels: usize,
    pub num_classes: usize,
}

impl StackPlan {
    pub fn new(cells: Vec<CellType>, base_channels: usize, num_classes: usize) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidArgument("stack plan has no cells".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!("num_classes must be >= 2, got {num_classes}")));
        }
        if base_channels == 0 {
            return Err(Error::InvalidArgument("base_channels must be >= 1".into()));
        }
        Ok(StackPlan { cells, base_channels, num_classes })
    }

    /// The plan as a string of `N`/`R` tags, e.g. `NRNRNNN`.
    pub fn pattern(&self) -> String {
        self.cells.iter().map(|c| c.tag()).collect()
    }

    pub fn reductions(&self) -> usize {
        self.cells.iter().filter(|c| **c == CellType::Reduction).count()
    }
}

/// `ENAS7 = N,R,N,R,N,N,N`; `ENAS17 = N×5,R,N×5,R,N×5`.
pub fn make_stack_plan(variant: Variant, base_channels: usize, num_classes: usize) -> Result<StackPlan> {
    use CellType::{Normal as N, Reduction as R};
    let cells = match variant {
        Variant::Enas7 => vec![N, R, N, R, N, N, N],
        Variant::Enas17 => {
            let mut v = vec![N; 5];
            v.push(R);
            v.extend([N; 5]);
            v.push(R);
            v.extend([N; 5]);
            v
        }
    };
    StackPlan::new(cells, base_channels, num_classes)
}

/// One placed cell with resolved widths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellInstance {
    pub kind: CellType,
    pub genotype: CellGenotype,
    pub c_in: usize,
    pub c_out: usize,
    /// Cumulative spatial downsampling factor at the cell output.
    pub scale: usize,
}

impl CellInstance {
    pub fn is_reduction(&self) -> bool {
        self.kind == CellType::Reduction
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// Square convolution, optionally followed by batchnorm and/or ReLU. A
    /// convolution without batchnorm always has a bias.
    Conv { c_in: usize, c_out: usize, kernel: usize, stride: usize, pad: usize, batchnorm: bool, relu: bool },
    MaxPool { kernel: usize, stride: usize, pad: usize },
    Cell(CellInstance),
    /// ReLU, global average pooling, then a linear map with bias.
    Head { c_in: usize, num_classes: usize },
    Flatten,
    /// Linear map with bias, optionally followed by ReLU.
    Dense { f_in: usize, f_out: usize, relu: bool },
}

impl Layer {
    pub fn label(&self) -> String {
        match self {
            Layer::Conv { c_in, c_out, kernel, stride, .. } => format!("conv{kernel}x{kernel}/{stride} {c_in}->{c_out}"),
            Layer::MaxPool { kernel, stride, .. } => format!("maxpool{kernel}x{kernel}/{stride}"),
            Layer::Cell(c) => format!("{}-cell {}->{}", c.kind.tag(), c.c_in, c.c_out),
            Layer::Head { c_in, num_classes } => format!("head {c_in}->{num_classes}"),
            Layer::Flatten => "flatten".into(),
            Layer::Dense { f_in, f_out, .. } => format!("dense {f_in}->{f_out}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_channels: usize,
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn cells(&self) -> impl Iterator<Item = &CellInstance> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Cell(c) => Some(c),
            _ => None,
        })
    }
}

/// Stacks `arch` according to `plan`: stem, one cell per plan entry, head.
pub fn build_network(arch: &ArchPair, plan: &StackPlan) -> Result<NetworkSpec> {
    arch.validate(arch.nodes()).into_result()?;
    if arch.reduction.len() != arch.normal.len() {
        return Err(Error::InvalidArgument("normal and reduction cells differ in node count".into()));
    }
    let c0 = plan.base_channels;
    let mut layers = vec![Layer::Conv {
        c_in: INPUT_CHANNELS,
        c_out: c0,
        kernel: STEM_KERNEL,
        stride: 1,
        pad: STEM_KERNEL / 2,
        batchnorm: true,
        relu: false,
    }];
    let mut c = c0;
    let mut scale = 1;
    for &kind in &plan.cells {
        let (genotype, c_out) = match kind {
            CellType::Normal => (arch.normal.clone(), c),
            CellType::Reduction => {
                scale *= 2;
                (arch.reduction.clone(), 2 * c)
            }
        };
        layers.push(Layer::Cell(CellInstance { kind, genotype, c_in: c, c_out, scale }));
        c = c_out;
    }
    layers.push(Layer::Head { c_in: c, num_classes: plan.num_classes });
    Ok(NetworkSpec {
        name: format!("cells-{}", plan.pattern()),
        input_channels: INPUT_CHANNELS,
        num_classes: plan.num_classes,
        layers,
    })
}

/// Canonical single-stream AlexNet (no LRN, no grouping): five convolutions
/// `64,192,384,256,256` with max pooling after the 1st, 2nd and 5th, then
/// dense `4096,4096,num_classes`. The first dense width follows the actual
/// spatial size at `input_side`.
pub fn build_alexnet(num_classes: usize, input_side: usize, input_channels: usize) -> Result<NetworkSpec> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!("num_classes must be >= 2, got {num_classes}")));
    }
    let conv = |c_in, c_out, kernel, stride, pad| Layer::Conv { c_in, c_out, kernel, stride, pad, batchnorm: false, relu: true };
    let pool = || Layer::MaxPool { kernel: 3, stride: 2, pad: 0 };
    let mut layers = vec![
        conv(input_channels, 64, 11, 4, 2),
        pool(),
        conv(64, 192, 5, 1, 2),
        pool(),
        conv(192, 384, 3, 1, 1),
        conv(384, 256, 3, 1, 1),
        conv(256, 256, 3, 1, 1),
        pool(),
        Layer::Flatten,
    ];
    let probe = NetworkSpec { name: String::new(), input_channels, num_classes, layers: layers.clone() };
    let shapes = forward_shapes(&probe, (input_side, input_side, input_channels)).map_err(|e| {
        Error::InvalidArgument(format!("input side {input_side} too small for AlexNet (minimum 63): {e}"))
    })?;
    let flat = match shapes.last() {
        Some(StageShape::Flat(f)) => *f,
        _ => unreachable!("flatten yields a flat shape"),
    };
    layers.extend([
        Layer::Dense { f_in: flat, f_out: 4096, relu: true },
        Layer::Dense { f_in: 4096, f_out: 4096, relu: true },
        Layer::Dense { f_in: 4096, f_out: num_classes, relu: false },
    ]);
    Ok(NetworkSpec { name: "alexnet".into(), input_channels, num_classes, layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageShape {
    /// `(height, width, channels)`.
    Map(usize, usize, usize),
    Flat(usize),
}

impl fmt::Display for StageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageShape::Map(h, w, c) => write!(f, "{h}x{w}x{c}"),
            StageShape::Flat(n) => write!(f, "({n},)"),
        }
    }
}

/// Output shape of every layer for an `(H, W, C)` input.
pub fn forward_shapes(net: &NetworkSpec, input: (usize, usize, usize)) -> Result<Vec<StageShape>> {
    let (h0, w0, c0) = input;
    if c0 != net.input_channels {
        return Err(Error::Shape {
            stage: "input".into(),
            message: format!("input has {c0} channels, network expects {}", net.input_channels),
        });
    }
    if h0 == 0 || w0 == 0 {
        return Err(Error::Shape { stage: "input".into(), message: "empty input".into() });
    }
    let mut cur = StageShape::Map(h0, w0, c0);
    let mut out = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let stage = format!("{i} ({})", layer.label());
        let fail = |message: String| Error::Shape { stage: stage.clone(), message };
        let map = |s: StageShape| match s {
            StageShape::Map(h, w, c) => Ok((h, w, c)),
            StageShape::Flat(_) => Err(fail("expects a feature map, got a flat vector".into())),
        };
        cur = match layer {
            Layer::Conv { c_in, c_out, kernel, stride, pad, .. } => {
                let (h, w, c) = map(cur)?;
                if c != *c_in {
                    return Err(fail(format!("expects {c_in} channels, got {c}")));
                }
                match (window_out(h, *kernel, *stride, *pad), window_out(w, *kernel, *stride, *pad)) {
                    (Some(oh), Some(ow)) if oh > 0 && ow > 0 => StageShape::Map(oh, ow, *c_out),
                    _ => return Err(fail(format!("spatial size {h}x{w} underflows"))),
                }
            }
            Layer::MaxPool { kernel, stride, pad } => {
                let (h, w, c) = map(cur)?;
                match (window_out(h, *kernel, *stride, *pad), window_out(w, *kernel, *stride, *pad)) {
                    (Some(oh), Some(ow)) if oh > 0 && ow > 0 => StageShape::Map(oh, ow, c),
                    _ => return Err(fail(format!("spatial size {h}x{w} underflows"))),
                }
            }
            Layer::Cell(cell) => {
                let (h, w, c) = map(cur)?;
                if c != cell.c_in {
                    return Err(fail(format!("expects {} channels, got {c}", cell.c_in)));
                }
                if cell.is_reduction() {
                    StageShape::Map(h.div_ceil(2), w.div_ceil(2), cell.c_out)
                } else {
                    StageShape::Map(h, w, cell.c_out)
                }
            }
            Layer::Head { c_in, num_classes } => {
                let (_, _, c) = map(cur)?;
                if c != *c_in {
                    return Err(fail(format!("expects {c_in} channels, got {c}")));
                }
                StageShape::Flat(*num_classes)
            }
            Layer::Flatten => {
                let (h, w, c) = map(cur)?;
                StageShape::Flat(h * w * c)
            }
            Layer::Dense { f_in, f_out, .. } => {
                let f = match cur {
                    StageShape::Flat(f) => f,
                    StageShape::Map(..) => return Err(fail("expects a flat vector".into())),
                };
                if f != *f_in {
                    return Err(fail(format!("expects {f_in} features, got {f}")));
                }
                StageShape::Flat(*f_out)
            }
        };
        out.push(cur);
    }
    Ok(out)
}

/// Analytic parameter count of one layer.
pub fn layer_param_count(layer: &Layer, cfg: &CountingConfig) -> usize {
    match layer {
        Layer::Conv { c_in, c_out, kernel, batchnorm, .. } => {
            let bias = if !*batchnorm || cfg.include_conv_bias { *c_out } else { 0 };
            let bn = if *batchnorm { cfg.bn(*c_out) } else { 0 };
            kernel * kernel * c_in * c_out + bias + bn
        }
        Layer::Cell(c) => cell_param_count(&c.genotype, c.c_in, c.c_out, cfg),
        Layer::Head { c_in, num_classes } => c_in * num_classes + num_classes,
        Layer::Dense { f_in, f_out, .. } => f_in * f_out + f_out,
        Layer::MaxPool { .. } | Layer::Flatten => 0,
    }
}

/// Stem + cells + head (or the plain layer stack), counted analytically.
pub fn network_param_count(net: &NetworkSpec, cfg: &CountingConfig) -> usize {
    net.layers.iter().map(|l| layer_param_count(l, cfg)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genotype::OpKind;

    fn identity_pair(nodes: usize) -> ArchPair {
        ArchPair::new(CellGenotype::uniform(nodes, OpKind::Identity), CellGenotype::uniform(nodes, OpKind::Identity))
    }

    #[test]
    fn stack_plans() {
        let p7 = make_stack_plan(Variant::Enas7, 8, 2).unwrap();
        assert_eq!(p7.pattern(), "NRNRNNN");
        let p17 = make_stack_plan(Variant::Enas17, 8, 2).unwrap();
        assert_eq!(p17.pattern(), "NNNNNRNNNNNRNNNNN");
        assert_eq!(p17.cells[5], CellType::Reduction);
        assert_eq!(p17.cells[11], CellType::Reduction);
        assert_eq!(p7.reductions(), 2);
        assert_eq!(p17.reductions(), 2);
        assert!(StackPlan::new(vec![], 8, 2).is_err());
        assert!(StackPlan::new(vec![CellType::Normal], 8, 1).is_err());
    }

    #[test]
    fn channel_and_spatial_schedule() {
        let plan = make_stack_plan(Variant::Enas7, 8, 2).unwrap();
        let net = build_network(&identity_pair(5), &plan).unwrap();
        assert_eq!(net.cells().last().unwrap().c_out, 32);
        let shapes = forward_shapes(&net, (100, 100, 1)).unwrap();
        assert_eq!(shapes.len(), 9);
        assert_eq!(shapes[7], StageShape::Map(25, 25, 32));
        assert_eq!(*shapes.last().unwrap(), StageShape::Flat(2));
    }

    #[test]
    fn enas17_has_17_cells_and_two_logits() {
        let plan = make_stack_plan(Variant::Enas17, 36, 2).unwrap();
        let net = build_network(&identity_pair(5), &plan).unwrap();
        assert_eq!(net.cells().count(), 17);
        let shapes = forward_shapes(&net, (100, 100, 1)).unwrap();
        assert_eq!(*shapes.last().unwrap(), StageShape::Flat(2));
        assert_eq!(shapes, forward_shapes(&net, (100, 100, 1)).unwrap());
    }

    #[test]
    fn one_pixel_input_survives_reductions() {
        let plan = make_stack_plan(Variant::Enas17, 4, 2).unwrap();
        let net = build_network(&identity_pair(2), &plan).unwrap();
        let shapes = forward_shapes(&net, (1, 1, 1)).unwrap();
        assert_eq!(shapes[shapes.len() - 2], StageShape::Map(1, 1, 16));
    }

    #[test]
    fn wrong_input_channels_rejected() {
        let plan = make_stack_plan(Variant::Enas7, 4, 2).unwrap();
        let net = build_network(&identity_pair(2), &plan).unwrap();
        assert!(forward_shapes(&net, (16, 16, 3)).is_err());
    }

    #[test]
    fn head_only_network_by_hand() {
        let net = NetworkSpec {
            name: "head-only".into(),
            input_channels: 1,
            num_classes: 2,
            layers: vec![
                Layer::Conv { c_in: 1, c_out: 8, kernel: 3, stride: 1, pad: 1, batchnorm: true, relu: false },
                Layer::Head { c_in: 8, num_classes: 2 },
            ],
        };
        let cfg = CountingConfig::default();
        assert_eq!(network_param_count(&net, &cfg), 8 * 9 + 2 * 8 + (8 * 2 + 2));
        let no_bn = CountingConfig { include_batchnorm_affine: false, ..cfg };
        assert_eq!(network_param_count(&net, &no_bn), 8 * 9 + 8 * 2 + 2);
    }

    #[test]
    fn alexnet_canonical_count() {
        let net = build_alexnet(1000, 224, 3).unwrap();
        assert_eq!(network_param_count(&net, &CountingConfig::default()), 61_100_840);
        let two = build_alexnet(2, 224, 3).unwrap();
        match two.layers.last().unwrap() {
            l @ Layer::Dense { .. } => assert_eq!(layer_param_count(l, &CountingConfig::default()), 8_194),
            _ => panic!(),
        }
    }

    #[test]
    fn alexnet_minimum_input() {
        assert!(build_alexnet(2, 63, 1).is_ok());
        assert!(build_alexnet(2, 62, 1).is_err());
        let net = build_alexnet(2, 100, 1).unwrap();
        match &net.layers[9] {
            Layer::Dense { f_in, .. } => assert_eq!(*f_in, 256 * 2 * 2),
            _ => panic!(),
        }
    }
}
