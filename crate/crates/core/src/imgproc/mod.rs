//! Image preprocessing: decode, rotate, channel reorder, resize, normalize.
//!
//! Every stage has a correct implementation and, through [`PipelineSpec`],
//! a way to reproduce the usual deployment mistakes (swapped channels, wrong
//! resampler, wrong numeric range, wrong orientation).

mod pipeline;
mod ppm;
mod resize;

pub use pipeline::{run_pipeline, PipelineSpec, Resizer, Rotation};
pub use ppm::{decode_ppm, encode_ppm, read_ppm};
pub use resize::{resize, resize_area, resize_bilinear};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{QuantParams, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("PPM parse error at byte {offset}: {msg}")]
    Ppm { offset: usize, msg: String },
    #[error("channel reordering needs a 3-channel image, got {0} channel(s)")]
    NotColor(usize),
    #[error("rotation must be 0, 90, 180 or 270 degrees, got {0}")]
    BadRotation(i64),
    #[error("invalid pipeline spec: {0}")]
    InvalidSpec(String),
    #[error("image buffer of {got} bytes does not match {height}x{width}x{channels}")]
    Buffer { height: usize, width: usize, channels: usize, got: usize },
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelOrder {
    RGB,
    BGR,
}

/// Interleaved 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub order: ChannelOrder,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, order: ChannelOrder, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * channels || !(channels == 1 || channels == 3) {
            return Err(ImageError::Buffer { height, width, channels, got: data.len() });
        }
        Ok(Image { height, width, channels, order, data })
    }

    pub fn rgb(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Image::new(height, width, 3, ChannelOrder::RGB, data)
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Raw pixels as a `U8` tensor of shape `[h, w, c]` whose dequantized
    /// values are the pixel values themselves (scale 1, zero point 0).
    pub fn to_tensor(&self) -> Tensor {
        let qp = QuantParams::affine(0.0, 255.0).expect("valid range");
        Tensor::from_u8(vec![self.height, self.width, self.channels], self.data.clone(), qp)
            .expect("image buffer matches its dims")
    }

    /// Inverse of [`Image::to_tensor`]; the channel order is taken as RGB.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape = t.shape();
        let data = t.as_u8().ok_or_else(|| ImageError::InvalidSpec("raw image tensor must be U8".into()))?;
        if shape.len() != 3 {
            return Err(ImageError::InvalidSpec(format!("raw image tensor must be [h, w, c], got {shape:?}")));
        }
        Image::new(shape[0], shape[1], shape[2], ChannelOrder::RGB, data.to_vec())
    }
}

/// Swap R and B when `target` differs from the image's current order.
pub fn convert_channel_order(img: &Image, target: ChannelOrder) -> Result<Image> {
    if img.channels != 3 {
        return Err(ImageError::NotColor(img.channels));
    }
    let mut out = img.clone();
    if img.order != target {
        for px in out.data.chunks_exact_mut(3) {
            px.swap(0, 2);
        }
        out.order = target;
    }
    Ok(out)
}

/// Lossless clockwise rotation by a multiple of 90 degrees.
pub fn rotate(img: &Image, degrees: i64) -> Result<Image> {
    let rotation = Rotation::from_degrees(degrees)?;
    Ok(rotate_by(img, rotation))
}

pub(crate) fn rotate_by(img: &Image, rotation: Rotation) -> Image {
    let (h, w, c) = (img.height, img.width, img.channels);
    let (oh, ow) = match rotation {
        Rotation::R0 | Rotation::R180 => (h, w),
        Rotation::R90 | Rotation::R270 => (w, h),
    };
    let mut data = vec![0u8; img.data.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            let (sy, sx) = match rotation {
                Rotation::R0 => (oy, ox),
                Rotation::R90 => (h - 1 - ox, oy),
                Rotation::R180 => (h - 1 - oy, w - 1 - ox),
                Rotation::R270 => (ox, w - 1 - oy),
            };
            let dst = (oy * ow + ox) * c;
            data[dst..dst + c].copy_from_slice(img.pixel(sy, sx));
        }
    }
    Image { height: oh, width: ow, channels: c, order: img.order, data }
}

/// Map u8 values to `[lo, hi]`: `v = u / 255 * (hi - lo) + lo`, computed in f32.
pub fn normalize(img: &Image, lo: f64, hi: f64) -> Result<Tensor> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(ImageError::InvalidSpec(format!("normalization range [{lo}, {hi}] is empty")));
    }
    let a = (hi - lo) as f32;
    let b = lo as f32;
    let data = img.data.iter().map(|&u| (u as f32 / 255.0) * a + b).collect();
    Ok(Tensor::from_f32(vec![img.height, img.width, img.channels], data).expect("dims match buffer"))
}
