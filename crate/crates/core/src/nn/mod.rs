//! Minimal CPU training engine: NCHW tensors, a reverse-mode tape, and the
//! kernels the cell search space needs.

pub mod graph;
pub mod kernels;
pub mod params;
pub mod tensor;

pub use graph::{BnMode, BnParams, Graph, GraphMode, Var};
pub use kernels::{ConvGeom, PoolGeom, PoolKind};
pub use params::{BnUpdate, BN_MOMENTUM, CosineSchedule, Grads, Init, Param, ParamId, ParamKind, ParamStore, Sgd, StatsId};
pub use tensor::Tensor;
