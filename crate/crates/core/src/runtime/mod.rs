//! Minimal layer-graph inference runtime with float and int8 kernels.

mod exec;
mod graph;
pub mod kernels;
mod quantize;
mod resolver;

pub use exec::{infer, Capture, InferenceResult, LayerTiming};
pub use graph::{
    load_graph, Activation, AddParams, ConvParams, FcParams, Graph, Layer, LayerOp, LayerType, PadParams, Padding,
    PoolParams, TensorInfo,
};
pub use kernels::{AccumulatorMode, Rounding};
pub use quantize::{quantize_graph, QuantizeOptions, QuantizedGraph};
pub use resolver::{FaultKind, FaultSpec, FaultTarget, KernelKind, KernelResolver, LayerFaults};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("load error{}: {msg}", layer.map(|l| format!(" at layer {l}")).unwrap_or_default())]
    Load { layer: Option<usize>, msg: String },
    #[error("shape error at layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },
    #[error("layer {layer}: missing quantization parameters for {what}")]
    MissingQuant { layer: usize, what: &'static str },
    #[error("malformed model description: {0}")]
    Json(String),
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("blob error in {path}: {msg}")]
    Blob { path: String, msg: String },
    #[error("bad input: {0}")]
    Input(String),
    #[error("quantization failed: {0}")]
    Quantize(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = RuntimeError> = std::result::Result<T, E>;
