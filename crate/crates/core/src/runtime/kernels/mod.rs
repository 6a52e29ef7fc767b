//! Layer kernels. Float kernels exist in a naive reference form and an
//! im2col + blocked GEMM form; int8 kernels likewise, sharing the same
//! integer accumulation and requantization so both produce identical bytes.

pub(crate) mod float;
pub(crate) mod int8;

use super::graph::{Activation, Padding};

/// How integer sums are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccumulatorMode {
    /// Widened accumulation, saturated once to i32 at the end.
    #[default]
    Exact,
    /// 32-bit two's complement, wrapping on overflow.
    Wrap32,
    /// 16-bit, saturating after every term in canonical order.
    Saturate16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rounding {
    #[default]
    HalfAway,
    TowardZero,
}

impl Rounding {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Rounding::HalfAway => x.round(),
            Rounding::TowardZero => x.trunc(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Acc {
    mode: AccumulatorMode,
    v: i64,
}

impl Acc {
    #[inline]
    pub fn new(mode: AccumulatorMode) -> Self {
        Acc { mode, v: 0 }
    }

    #[inline]
    pub fn add(&mut self, t: i64) {
        self.v = match self.mode {
            AccumulatorMode::Exact => self.v + t,
            AccumulatorMode::Wrap32 => (self.v as i32).wrapping_add(t as i32) as i64,
            AccumulatorMode::Saturate16 => (self.v + t.clamp(i16::MIN as i64, i16::MAX as i64)).clamp(i16::MIN as i64, i16::MAX as i64),
        };
    }

    #[inline]
    pub fn finish(self) -> i32 {
        self.v.clamp(i32::MIN as i64, i32::MAX as i64) as i32
    }
}

/// Exact i64 sum saturated to i32, as produced by `Acc` in `Exact` mode.
#[inline]
pub(crate) fn saturate_i32(v: i64) -> i32 {
    v.clamp(i32::MIN as i64, i32::MAX as i64) as i32
}

#[inline]
pub(crate) fn requantize(acc: i32, multiplier: f64, zp_out: i32, lo: i32, hi: i32, rounding: Rounding) -> i32 {
    let r = rounding.apply(acc as f64 * multiplier) + zp_out as f64;
    r.clamp(lo as f64, hi as f64) as i32
}

#[inline]
pub(crate) fn activate_f32(v: f32, act: Activation) -> f32 {
    match act {
        Activation::None => v,
        Activation::ReLU => v.max(0.0),
        Activation::ReLU6 => v.clamp(0.0, 6.0),
    }
}

/// Sliding-window geometry over an HWC input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pt: usize,
    pub pl: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geometry {
    pub fn new(in_shape: &[usize], kh: usize, kw: usize, stride: [usize; 2], pad: Padding) -> Self {
        let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
        let oh = (h + pad.top + pad.bottom - kh) / stride[0] + 1;
        let ow = (w + pad.left + pad.right - kw) / stride[1] + 1;
        Geometry { h, w, c, kh, kw, sh: stride[0], sw: stride[1], pt: pad.top, pl: pad.left, oh, ow }
    }

    /// Input pixel under kernel tap (ky, kx) of output (oy, ox), if not padding.
    #[inline]
    pub fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.sh + ky).checked_sub(self.pt)?;
        let ix = (ox * self.sw + kx).checked_sub(self.pl)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }

    /// True when every output reads its input pixel directly (1x1, stride 1, no padding).
    pub fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.pt == 0 && self.pl == 0 && self.oh == self.h && self.ow == self.w
    }

    /// Patch matrix `[oh*ow, kh*kw*c]` in (ky, kx, c) order; padding taps take `fill`.
    pub fn im2col<T: Copy>(&self, x: &[T], fill: T) -> Vec<T> {
        let k = self.kh * self.kw * self.c;
        let mut cols = Vec::with_capacity(self.oh * self.ow * k);
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        match self.src(oy, ox, ky, kx) {
                            Some((iy, ix)) => {
                                let at = (iy * self.w + ix) * self.c;
                                cols.extend_from_slice(&x[at..at + self.c]);
                            }
                            None => cols.extend(std::iter::repeat(fill).take(self.c)),
                        }
                    }
                }
            }
        }
        cols
    }
}
