//! Micro-search-space cell genotypes.
//!
//! A cell is a small DAG of `B` nodes. Node `i` picks two inputs from the
//! index range `[0, i + 2)`, where indices 0 and 1 are the outputs of the two
//! preceding cells and index `j + 2` is node `j` of the same cell, applies one
//! operation to each input, and sums the results. Nodes that no later node
//! consumes ("loose ends") are concatenated to form the cell output.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of nodes per cell.
pub const DEFAULT_NODES: usize = 5;

/// Number of cell inputs every node may read besides earlier nodes.
pub const CELL_INPUTS: usize = 2;

/// Candidate operation applied on a node edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "sep3")]
    SepConv3,
    #[serde(rename = "sep5")]
    SepConv5,
    #[serde(rename = "avg3")]
    AvgPool3,
    #[serde(rename = "max3")]
    MaxPool3,
}

impl OpKind {
    /// All operations, in decision-index order.
    pub const ALL: [OpKind; 5] = [
        OpKind::Identity,
        OpKind::SepConv3,
        OpKind::SepConv5,
        OpKind::AvgPool3,
        OpKind::MaxPool3,
    ];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        match self {
            OpKind::Identity => 0,
            OpKind::SepConv3 => 1,
            OpKind::SepConv5 => 2,
            OpKind::AvgPool3 => 3,
            OpKind::MaxPool3 => 4,
        }
    }

    pub fn from_index(index: usize) -> Option<OpKind> {
        Self::ALL.get(index).copied()
    }

    /// The short name used in genotype files and DOT labels.
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Identity => "identity",
            OpKind::SepConv3 => "sep3",
            OpKind::SepConv5 => "sep5",
            OpKind::AvgPool3 => "avg3",
            OpKind::MaxPool3 => "max3",
        }
    }

    /// Spatial kernel of a separable convolution, `None` for the other ops.
    pub fn sep_kernel(self) -> Option<usize> {
        match self {
            OpKind::SepConv3 => Some(3),
            OpKind::SepConv5 => Some(5),
            _ => None,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One node: two (input, operation) choices whose outputs are summed.
///
/// Serialized as the 4-element array `[in_a, op_a, in_b, op_b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, OpKind, usize, OpKind)", into = "(usize, OpKind, usize, OpKind)")]
pub struct NodeSpec {
    pub in_a: usize,
    pub op_a: OpKind,
    pub in_b: usize,
    pub op_b: OpKind,
}

impl NodeSpec {
    pub fn new(in_a: usize, op_a: OpKind, in_b: usize, op_b: OpKind) -> Self {
        NodeSpec { in_a, op_a, in_b, op_b }
    }

    /// The two `(input, op)` edges, slot `a` first.
    pub fn edges(&self) -> [(usize, OpKind); 2] {
        [(self.in_a, self.op_a), (self.in_b, self.op_b)]
    }
}

impl From<(usize, OpKind, usize, OpKind)> for NodeSpec {
    fn from((in_a, op_a, in_b, op_b): (usize, OpKind, usize, OpKind)) -> Self {
        NodeSpec { in_a, op_a, in_b, op_b }
    }
}

impl From<NodeSpec> for (usize, OpKind, usize, OpKind) {
    fn from(n: NodeSpec) -> Self {
        (n.in_a, n.op_a, n.in_b, n.op_b)
    }
}

/// A Normal or Reduction cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellGenotype {
    pub nodes: Vec<NodeSpec>,
}

/// One constraint a genotype breaks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Offending node position, `None` for cell-level problems.
    pub node: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Outcome of [`CellGenotype::validate`]; violations are data, not failures.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidGenotype(self.violations))
        }
    }
}

/// Errors from [`CellGenotype::decode`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("decision sequence has length {actual}, expected {expected} for B={nodes}")]
    WrongLength { expected: usize, actual: usize, nodes: usize },
    #[error("node {node} {field}: op index {value} out of range [0,{})", OpKind::COUNT)]
    OpIndexOutOfRange { node: usize, field: &'static str, value: usize },
    #[error("node {node} {field}: input {value} out of range [0,{bound})")]
    InputOutOfRange { node: usize, field: &'static str, value: usize, bound: usize },
}

impl CellGenotype {
    pub fn new(nodes: Vec<NodeSpec>) -> Self {
        CellGenotype { nodes }
    }

    /// Number of nodes, `B`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A cell whose every node applies `op` to both cell inputs.
    pub fn uniform(nodes: usize, op: OpKind) -> Self {
        CellGenotype { nodes: vec![NodeSpec::new(0, op, 1, op); nodes] }
    }

    /// Checks node count and every input index bound.
    pub fn validate(&self, expected_nodes: usize) -> Validation {
        let mut violations = Vec::new();
        if self.nodes.is_empty() {
            violations.push(Violation {
                node: None,
                field: "nodes",
                message: "cell has no nodes".to_string(),
            });
        }
        if self.nodes.len() != expected_nodes {
            violations.push(Violation {
                node: None,
                field: "nodes",
                message: format!("cell has {} nodes, expected {}", self.nodes.len(), expected_nodes),
            });
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let bound = i + CELL_INPUTS;
            for (field, value) in [("in_a", node.in_a), ("in_b", node.in_b)] {
                if value >= bound {
                    violations.push(Violation {
                        node: Some(i),
                        field,
                        message: format!("node {i} input {value} out of range [0,{bound})"),
                    });
                }
            }
        }
        Validation { violations }
    }

    fn ensure_valid(&self) -> Result<()> {
        self.validate(self.nodes.len()).into_result()
    }

    /// Flattens to `4·B` decisions laid out as `(in_a, op_a, in_b, op_b)` per node.
    pub fn encode(&self) -> Result<Vec<usize>> {
        self.ensure_valid()?;
        Ok(self
            .nodes
            .iter()
            .flat_map(|n| [n.in_a, n.op_a.index(), n.in_b, n.op_b.index()])
            .collect())
    }

    /// Inverse of [`encode`](Self::encode).
    pub fn decode(seq: &[usize], nodes: usize) -> std::result::Result<Self, DecodeError> {
        if seq.len() != 4 * nodes {
            return Err(DecodeError::WrongLength { expected: 4 * nodes, actual: seq.len(), nodes });
        }
        let mut out = Vec::with_capacity(nodes);
        for (i, chunk) in seq.chunks_exact(4).enumerate() {
            let bound = i + CELL_INPUTS;
            let input = |field, value: usize| {
                if value < bound {
                    Ok(value)
                } else {
                    Err(DecodeError::InputOutOfRange { node: i, field, value, bound })
                }
            };
            let op = |field, value: usize| {
                OpKind::from_index(value).ok_or(DecodeError::OpIndexOutOfRange { node: i, field, value })
            };
            out.push(NodeSpec {
                in_a: input("in_a", chunk[0])?,
                op_a: op("op_a", chunk[1])?,
                in_b: input("in_b", chunk[2])?,
                op_b: op("op_b", chunk[3])?,
            });
        }
        Ok(CellGenotype { nodes: out })
    }

    /// Positions of nodes no later node reads. Never empty for a valid cell.
    pub fn loose_ends(&self) -> Vec<usize> {
        let mut used = vec![false; self.nodes.len()];
        for node in &self.nodes {
            for input in [node.in_a, node.in_b] {
                if input >= CELL_INPUTS {
                    if let Some(slot) = used.get_mut(input - CELL_INPUTS) {
                        *slot = true;
                    }
                }
            }
        }
        used.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| i).collect()
    }

    /// Renders the cell as a Graphviz digraph.
    ///
    /// Vertices: the two cell inputs, one per node, and a `concat` sink fed by
    /// the loose ends. Each `(input, op)` choice is one labeled edge.
    pub fn to_dot(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "digraph \"{}\" {{", escape(title));
        let _ = writeln!(s, "  rankdir=LR;");
        let _ = writeln!(s, "  label=\"{}\";", escape(title));
        let _ = writeln!(s, "  node [shape=box, style=rounded];");
        let _ = writeln!(s, "  in0 [label=\"c_{{k-2}}\", shape=ellipse];");
        let _ = writeln!(s, "  in1 [label=\"c_{{k-1}}\", shape=ellipse];");
        for i in 0..self.nodes.len() {
            let _ = writeln!(s, "  n{i} [label=\"{i}\"];");
        }
        let _ = writeln!(s, "  concat [label=\"concat\", shape=ellipse];");
        for (i, node) in self.nodes.iter().enumerate() {
            for (input, op) in node.edges() {
                let _ = writeln!(s, "  {} -> n{i} [label=\"{op}\"];", vertex_name(input));
            }
        }
        for i in self.loose_ends() {
            let _ = writeln!(s, "  n{i} -> concat;");
        }
        s.push_str("}\n");
        s
    }
}

fn vertex_name(input: usize) -> String {
    if input < CELL_INPUTS {
        format!("in{input}")
    } else {
        format!("n{}", input - CELL_INPUTS)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// One Normal plus one Reduction cell; what the controller samples.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchPair {
    pub normal: CellGenotype,
    pub reduction: CellGenotype,
}

impl ArchPair {
    pub fn new(normal: CellGenotype, reduction: CellGenotype) -> Self {
        ArchPair { normal, reduction }
    }

    pub fn nodes(&self) -> usize {
        self.normal.len()
    }

    /// Validates both cells against `expected_nodes`; violation messages are
    /// prefixed with the cell name.
    pub fn validate(&self, expected_nodes: usize) -> Validation {
        let mut violations = Vec::new();
        for (name, cell) in [("normal", &self.normal), ("reduction", &self.reduction)] {
            for mut v in cell.validate(expected_nodes).violations {
                v.message = format!("{name}: {}", v.message);
                violations.push(v);
            }
        }
        Validation { violations }
    }

    /// `8·B` decisions: the normal cell's encoding followed by the reduction cell's.
    pub fn encode(&self) -> Result<Vec<usize>> {
        self.validate(self.nodes()).into_result()?;
        let mut seq = self.normal.encode()?;
        seq.extend(self.reduction.encode()?);
        Ok(seq)
    }

    pub fn decode(seq: &[usize], nodes: usize) -> std::result::Result<Self, DecodeError> {
        if seq.len() != 8 * nodes {
            return Err(DecodeError::WrongLength { expected: 8 * nodes, actual: seq.len(), nodes });
        }
        let (n, r) = seq.split_at(4 * nodes);
        Ok(ArchPair { normal: CellGenotype::decode(n, nodes)?, reduction: CellGenotype::decode(r, nodes)? })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GenotypeFile::from(self)).expect("genotype serializes")
    }

    /// Parses and validates a genotype document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: GenotypeFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let pair = ArchPair { normal: file.normal, reduction: file.reduction };
        pair.validate(file.nodes).into_result()?;
        Ok(pair)
    }
}

/// On-disk genotype document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenotypeFile {
    #[serde(rename = "B")]
    pub nodes: usize,
    pub normal: CellGenotype,
    pub reduction: CellGenotype,
}

impl From<&ArchPair> for GenotypeFile {
    fn from(p: &ArchPair) -> Self {
        GenotypeFile { nodes: p.nodes(), normal: p.normal.clone(), reduction: p.reduction.clone() }
    }
}

/// Which weight containers count toward a parameter total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingConfig {
    pub include_batchnorm_affine: bool,
    /// Biases on convolutions that are followed by batchnorm. Convolutions
    /// without batchnorm always carry a bias.
    pub include_conv_bias: bool,
    /// 1×1 projections: channel adapters on identity/pool edges and the cell
    /// output projection.
    pub include_projection_ops: bool,
}

impl Default for CountingConfig {
    fn default() -> Self {
        CountingConfig { include_batchnorm_affine: true, include_conv_bias: false, include_projection_ops: true }
    }
}

impl CountingConfig {
    /// Parameters of a normalized 1×1 projection `c → c_out`.
    pub(crate) fn projection_cost(&self, c: usize, c_out: usize) -> usize {
        if !self.include_projection_ops {
            return 0;
        }
        c * c_out + self.bias(c_out) + self.bn(c_out)
    }

    pub(crate) fn bias(&self, c: usize) -> usize {
        if self.include_conv_bias {
            c
        } else {
            0
        }
    }

    pub(crate) fn bn(&self, c: usize) -> usize {
        if self.include_batchnorm_affine {
            2 * c
        } else {
            0
        }
    }
}

/// Analytic parameter count of one cell with input width `c_in` and output width `c_out`.
///
/// Edges reading a cell input see `c_in` channels, edges reading a node see
/// `c_out`. A separable convolution costs `k²·c + c·c_out` (one depthwise and
/// one pointwise application) plus optional biases and batchnorm affine terms.
/// Identity and pooling cost nothing unless the channel count changes, in
/// which case a 1×1 projection is charged. The loose-end concatenation is
/// projected back to `c_out`.
pub fn cell_param_count(genotype: &CellGenotype, c_in: usize, c_out: usize, cfg: &CountingConfig) -> usize {
    let mut total = 0;
    for node in &genotype.nodes {
        for (input, op) in node.edges() {
            let c = if input < CELL_INPUTS { c_in } else { c_out };
            total += match op.sep_kernel() {
                Some(k) => k * k * c + c * c_out + cfg.bias(c) + cfg.bias(c_out) + cfg.bn(c_out),
                None if c != c_out => cfg.projection_cost(c, c_out),
                None => 0,
            };
        }
    }
    total + cfg.projection_cost(genotype.loose_ends().len() * c_out, c_out)
}

/// Distinct op kinds used by a cell, sorted.
pub fn ops_used(genotype: &CellGenotype) -> BTreeSet<OpKind> {
    genotype.nodes.iter().flat_map(|n| [n.op_a, n.op_b]).collect()
}
