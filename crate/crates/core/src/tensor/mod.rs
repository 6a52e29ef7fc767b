//! Dense tensors, integer quantization and the `.ten` file format.

mod quant;
mod ten;

pub use quant::{
    activation_params, calibrate, dequantize, dequantize_affine, quantize_affine, quantize_symmetric,
    quantize_with, round_half_away, Calibration, QuantParams, QuantScheme, QuantWarning,
    SYMMETRIC_QMAX,
};
pub use ten::{decode_ten, encode_ten, read_ten, write_ten, TEN_MAGIC};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but the buffer has {got}")]
    LengthMismatch { shape: Vec<usize>, expected: usize, got: usize },
    #[error("{dtype:?} tensor {detail}")]
    QuantPresence { dtype: DType, detail: &'static str },
    #[error("non-finite element at index {index}")]
    NonFinite { index: usize },
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("tensor has no quantization parameters")]
    MissingQuant,
    #[error("expected {expected:?} quantization, found {found:?}")]
    WrongScheme { expected: QuantScheme, found: QuantScheme },
    #[error("invalid quantization parameters: {0}")]
    InvalidParams(String),
    #[error("expected dtype {expected:?}, found {found:?}")]
    DType { expected: DType, found: DType },
    #[error("empty tensor")]
    Empty,
    #[error("malformed .ten data at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Element type. The discriminant is the `.ten` dtype code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F32 = 0,
    U8 = 1,
    I8 = 2,
    I32 = 3,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U8 | DType::I8 => 1,
        }
    }

    pub fn is_quantized(self) -> bool {
        matches!(self, DType::U8 | DType::I8)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<DType> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::U8),
            2 => Some(DType::I8),
            3 => Some(DType::I32),
            _ => None,
        }
    }
}

/// Typed element storage.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I8(Vec<i8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
            TensorData::I8(_) => DType::I8,
            TensorData::I32(_) => DType::I32,
        }
    }
}

/// Row-major n-dimensional array with optional quantization parameters.
///
/// Quantization parameters are present exactly when the dtype is `U8` or `I8`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
    quant: Option<QuantParams>,
}

pub fn num_elements(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData, quant: Option<QuantParams>) -> Result<Self> {
        let expected = num_elements(&shape);
        if expected != data.len() {
            return Err(TensorError::LengthMismatch { shape, expected, got: data.len() });
        }
        let dtype = data.dtype();
        match (&quant, dtype.is_quantized()) {
            (None, true) => {
                return Err(TensorError::QuantPresence { dtype, detail: "requires quantization parameters" })
            }
            (Some(_), false) => {
                return Err(TensorError::QuantPresence { dtype, detail: "cannot carry quantization parameters" })
            }
            _ => {}
        }
        if let Some(qp) = &quant {
            qp.check_against(&shape)?;
            let expected_scheme_ok = match dtype {
                DType::U8 => qp.scheme == QuantScheme::PerTensorAffine,
                DType::I8 => qp.scheme != QuantScheme::PerTensorAffine,
                _ => true,
            };
            if !expected_scheme_ok {
                return Err(TensorError::InvalidParams(format!(
                    "{:?} scheme is not valid for {dtype:?} storage",
                    qp.scheme
                )));
            }
        }
        Ok(Tensor { shape, data, quant })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Tensor::new(shape, TensorData::F32(data), None)
    }

    pub fn from_i32(shape: Vec<usize>, data: Vec<i32>) -> Result<Self> {
        Tensor::new(shape, TensorData::I32(data), None)
    }

    pub fn from_u8(shape: Vec<usize>, data: Vec<u8>, quant: QuantParams) -> Result<Self> {
        Tensor::new(shape, TensorData::U8(data), Some(quant))
    }

    pub fn from_i8(shape: Vec<usize>, data: Vec<i8>, quant: QuantParams) -> Result<Self> {
        Tensor::new(shape, TensorData::I8(data), Some(quant))
    }

    pub fn zeros_f32(shape: Vec<usize>) -> Self {
        let n = num_elements(&shape);
        Tensor { shape, data: TensorData::F32(vec![0.0; n]), quant: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn quant(&self) -> Option<&QuantParams> {
        self.quant.as_ref()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn byte_len(&self) -> usize {
        self.len() * self.dtype().size_bytes()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            TensorData::I8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn expect_f32(&self) -> Result<&[f32]> {
        self.as_f32().ok_or(TensorError::DType { expected: DType::F32, found: self.dtype() })
    }

    /// Real-valued view of the elements: quantized tensors are dequantized,
    /// `I32` values are converted unscaled.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::I32(v) => v.iter().map(|&x| x as f32).collect(),
            TensorData::U8(_) | TensorData::I8(_) => {
                dequantize(self).expect("quantized tensors always carry parameters").data_f32_owned()
            }
        }
    }

    fn data_f32_owned(self) -> Vec<f32> {
        match self.data {
            TensorData::F32(v) => v,
            _ => unreachable!("dequantize returns F32"),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected = num_elements(&shape);
        if expected != self.len() {
            return Err(TensorError::LengthMismatch { shape, expected, got: self.len() });
        }
        if let Some(qp) = &self.quant {
            qp.check_against(&shape)?;
        }
        self.shape = shape;
        Ok(self)
    }

    /// Same values and dtype, different quantization parameters.
    pub fn with_quant(mut self, quant: QuantParams) -> Result<Self> {
        if !self.dtype().is_quantized() {
            return Err(TensorError::QuantPresence { dtype: self.dtype(), detail: "cannot carry quantization parameters" });
        }
        quant.check_against(&self.shape)?;
        self.quant = Some(quant);
        Ok(self)
    }

    pub fn into_parts(self) -> (Vec<usize>, TensorData, Option<QuantParams>) {
        (self.shape, self.data, self.quant)
    }
}

/// Index of the channel that flat element `i` belongs to along `axis`.
pub(crate) fn channel_of(shape: &[usize], axis: usize, i: usize) -> usize {
    let inner: usize = shape[axis + 1..].iter().product();
    (i / inner) % shape[axis]
}
