//! On-device inference debugging: a small int8/float runtime, an image
//! pipeline, trace capture, reference replay and trace comparison.

pub mod clock;
pub mod imgproc;
pub mod monitor;
pub mod replay;
pub mod runtime;
pub mod synth;
pub mod tensor;
pub mod validator;

pub use imgproc::{Image, PipelineSpec};
pub use runtime::{Graph, KernelResolver, LayerType};
pub use tensor::{DType, QuantParams, Tensor};
