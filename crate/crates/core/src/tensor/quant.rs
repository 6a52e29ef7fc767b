//! Affine (uint8) and symmetric (int8) quantization with min/max calibration.
//!
//! Affine:    q = clamp(round((x - min) / (max - min) * 255), 0, 255)
//!            r = q / 255 * (max - min) + min
//! Symmetric: s = max(|min|, |max|) / 127, q = clamp(round(x / s), -127, 127)
//!
//! `round` is half-away-from-zero everywhere.

use serde::{Deserialize, Serialize};

use super::{channel_of, Result, Tensor, TensorData, TensorError};

pub const SYMMETRIC_QMAX: i32 = 127;
const AFFINE_LEVELS: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuantScheme {
    PerTensorAffine,
    PerTensorSymmetric,
    PerChannelSymmetric,
}

impl QuantScheme {
    pub fn is_symmetric(self) -> bool {
        !matches!(self, QuantScheme::PerTensorAffine)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantParams {
    pub scheme: QuantScheme,
    pub scale: Vec<f64>,
    pub zero_point: i32,
    pub channel_axis: Option<usize>,
    pub calib_min: Vec<f64>,
    pub calib_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantWarning {
    /// All calibrated values were zero; the scale was forced to 1.
    DegenerateScale { channel: Option<usize> },
}

impl std::fmt::Display for QuantWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuantWarning::DegenerateScale { channel: Some(c) } => {
                write!(f, "degenerate scale on channel {c}: forced to 1")
            }
            QuantWarning::DegenerateScale { channel: None } => write!(f, "degenerate scale: forced to 1"),
        }
    }
}

/// Half-away-from-zero rounding.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

fn checked_range(min: f64, max: f64) -> Result<()> {
    if !min.is_finite() || !max.is_finite() {
        return Err(TensorError::Calibration(format!("non-finite range [{min}, {max}]")));
    }
    if min >= max {
        return Err(TensorError::Calibration(format!("calib_min {min} must be below calib_max {max}")));
    }
    Ok(())
}

fn symmetric_scale(min: f64, max: f64) -> (f64, bool) {
    let s = min.abs().max(max.abs()) / SYMMETRIC_QMAX as f64;
    if s > 0.0 && s.is_finite() {
        (s, false)
    } else {
        (1.0, true)
    }
}

impl QuantParams {
    /// Per-tensor affine parameters over `[min, max]`.
    pub fn affine(min: f64, max: f64) -> Result<Self> {
        checked_range(min, max)?;
        let scale = (max - min) / AFFINE_LEVELS;
        let zero_point = round_half_away(-min / scale).clamp(0.0, AFFINE_LEVELS) as i32;
        Ok(QuantParams {
            scheme: QuantScheme::PerTensorAffine,
            scale: vec![scale],
            zero_point,
            channel_axis: None,
            calib_min: vec![min],
            calib_max: vec![max],
        })
    }

    /// Per-tensor symmetric parameters; an all-zero range yields scale 1 and a warning.
    pub fn symmetric(min: f64, max: f64) -> (Self, Option<QuantWarning>) {
        let (scale, degenerate) = symmetric_scale(min, max);
        let qp = QuantParams {
            scheme: QuantScheme::PerTensorSymmetric,
            scale: vec![scale],
            zero_point: 0,
            channel_axis: None,
            calib_min: vec![min],
            calib_max: vec![max],
        };
        (qp, degenerate.then_some(QuantWarning::DegenerateScale { channel: None }))
    }

    pub fn per_channel_symmetric(mins: &[f64], maxs: &[f64], axis: usize) -> (Self, Vec<QuantWarning>) {
        let mut warnings = Vec::new();
        let scale = mins
            .iter()
            .zip(maxs)
            .enumerate()
            .map(|(c, (&lo, &hi))| {
                let (s, degenerate) = symmetric_scale(lo, hi);
                if degenerate {
                    warnings.push(QuantWarning::DegenerateScale { channel: Some(c) });
                }
                s
            })
            .collect();
        let qp = QuantParams {
            scheme: QuantScheme::PerChannelSymmetric,
            scale,
            zero_point: 0,
            channel_axis: Some(axis),
            calib_min: mins.to_vec(),
            calib_max: maxs.to_vec(),
        };
        (qp, warnings)
    }

    pub fn is_per_channel(&self) -> bool {
        self.scheme == QuantScheme::PerChannelSymmetric
    }

    /// Scale for channel `c` (per-tensor parameters ignore `c`).
    pub fn scale_at(&self, c: usize) -> f64 {
        if self.is_per_channel() {
            self.scale[c]
        } else {
            self.scale[0]
        }
    }

    /// Representable integer range for this scheme's storage type.
    pub fn qrange(&self) -> (i32, i32) {
        match self.scheme {
            QuantScheme::PerTensorAffine => (0, 255),
            _ => (-SYMMETRIC_QMAX, SYMMETRIC_QMAX),
        }
    }

    /// Quantize one real value; `channel` selects the scale for per-channel parameters.
    pub fn quantize_value(&self, x: f64, channel: usize) -> i32 {
        let (lo, hi) = self.qrange();
        match self.scheme {
            QuantScheme::PerTensorAffine => {
                let (min, max) = (self.calib_min[0], self.calib_max[0]);
                round_half_away((x - min) / (max - min) * AFFINE_LEVELS).clamp(lo as f64, hi as f64) as i32
            }
            _ => round_half_away(x / self.scale_at(channel)).clamp(lo as f64, hi as f64) as i32,
        }
    }

    /// Reconstruct a real value. With params from [`activation_params`] the
    /// zero point reconstructs to exactly 0.
    pub fn dequantize_value(&self, q: i32, channel: usize) -> f64 {
        match self.scheme {
            QuantScheme::PerTensorAffine => {
                let (min, max) = (self.calib_min[0], self.calib_max[0]);
                if q == self.zero_point && min == -(self.zero_point as f64) * self.scale[0] {
                    return 0.0;
                }
                q as f64 / AFFINE_LEVELS * (max - min) + min
            }
            _ => q as f64 * self.scale_at(channel),
        }
    }

    pub(crate) fn check_against(&self, shape: &[usize]) -> Result<()> {
        let bad = |m: String| Err(TensorError::InvalidParams(m));
        let n = match (self.scheme, self.channel_axis) {
            (QuantScheme::PerChannelSymmetric, Some(axis)) => {
                if axis >= shape.len() {
                    return bad(format!("channel axis {axis} out of range for rank {}", shape.len()));
                }
                shape[axis]
            }
            (QuantScheme::PerChannelSymmetric, None) => return bad("per-channel scheme without channel_axis".into()),
            (_, Some(_)) => return bad("per-tensor scheme with a channel_axis".into()),
            (_, None) => 1,
        };
        if self.scale.len() != n || self.calib_min.len() != n || self.calib_max.len() != n {
            return bad(format!("expected {n} scale/calibration entries, found {}", self.scale.len()));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("scales must be positive and finite".into());
        }
        if self.scheme.is_symmetric() {
            if self.zero_point != 0 {
                return bad("symmetric schemes require zero_point 0".into());
            }
            if self.calib_min.iter().zip(&self.calib_max).any(|(lo, hi)| lo > hi) {
                return bad("calib_min exceeds calib_max".into());
            }
        } else {
            checked_range(self.calib_min[0], self.calib_max[0])
                .map_err(|e| TensorError::InvalidParams(e.to_string()))?;
            if !(0..=255).contains(&self.zero_point) {
                return bad(format!("affine zero_point {} outside [0, 255]", self.zero_point));
            }
        }
        Ok(())
    }
}

/// Affine activation parameters: the range is widened to contain 0, then
/// nudged so that 0 is exactly representable (integer zero point). An empty
/// range falls back to scale 1.
pub fn activation_params(min: f64, max: f64) -> (QuantParams, Option<QuantWarning>) {
    let lo = min.min(0.0);
    let hi = max.max(0.0);
    let mut warning = None;
    let scale = if hi - lo > 0.0 && (hi - lo).is_finite() {
        (hi - lo) / AFFINE_LEVELS
    } else {
        warning = Some(QuantWarning::DegenerateScale { channel: None });
        1.0
    };
    let zero_point = round_half_away(-lo / scale).clamp(0.0, AFFINE_LEVELS) as i32;
    let nudged_min = -(zero_point as f64) * scale;
    let nudged_max = nudged_min + AFFINE_LEVELS * scale;
    let qp = QuantParams {
        scheme: QuantScheme::PerTensorAffine,
        scale: vec![scale],
        zero_point,
        channel_axis: None,
        calib_min: vec![nudged_min],
        calib_max: vec![nudged_max],
    };
    (qp, warning)
}

fn finite_values(x: &Tensor) -> Result<&[f32]> {
    let v = x.expect_f32()?;
    if let Some(index) = v.iter().position(|e| !e.is_finite()) {
        return Err(TensorError::NonFinite { index });
    }
    Ok(v)
}

/// Uint8 affine quantization over the calibrated range.
pub fn quantize_affine(x: &Tensor, qp: &QuantParams) -> Result<Tensor> {
    if qp.scheme != QuantScheme::PerTensorAffine {
        return Err(TensorError::WrongScheme { expected: QuantScheme::PerTensorAffine, found: qp.scheme });
    }
    checked_range(qp.calib_min[0], qp.calib_max[0])?;
    let v = finite_values(x)?;
    let q = v.iter().map(|&e| qp.quantize_value(e as f64, 0) as u8).collect();
    Tensor::from_u8(x.shape().to_vec(), q, qp.clone())
}

pub fn dequantize_affine(q: &Tensor) -> Result<Tensor> {
    let qp = q.quant().ok_or(TensorError::MissingQuant)?;
    if qp.scheme != QuantScheme::PerTensorAffine {
        return Err(TensorError::WrongScheme { expected: QuantScheme::PerTensorAffine, found: qp.scheme });
    }
    dequantize(q)
}

/// Dequantize any quantized tensor (affine or symmetric) to F32.
pub fn dequantize(q: &Tensor) -> Result<Tensor> {
    let qp = q.quant().ok_or(TensorError::MissingQuant)?;
    let shape = q.shape();
    let channel = |i: usize| qp.channel_axis.map_or(0, |axis| channel_of(shape, axis, i));
    let out: Vec<f32> = match q.data() {
        TensorData::U8(v) => v.iter().enumerate().map(|(i, &e)| qp.dequantize_value(e as i32, channel(i)) as f32).collect(),
        TensorData::I8(v) => v.iter().enumerate().map(|(i, &e)| qp.dequantize_value(e as i32, channel(i)) as f32).collect(),
        _ => return Err(TensorError::MissingQuant),
    };
    Tensor::from_f32(shape.to_vec(), out)
}

/// Quantize with explicit parameters; storage is U8 for affine, I8 otherwise.
pub fn quantize_with(x: &Tensor, qp: &QuantParams) -> Result<Tensor> {
    if qp.scheme == QuantScheme::PerTensorAffine {
        return quantize_affine(x, qp);
    }
    qp.check_against(x.shape())?;
    let v = finite_values(x)?;
    let shape = x.shape();
    let q = v
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let c = qp.channel_axis.map_or(0, |axis| channel_of(shape, axis, i));
            qp.quantize_value(e as f64, c) as i8
        })
        .collect();
    Tensor::from_i8(shape.to_vec(), q, qp.clone())
}

/// Symmetric int8 quantization, calibrated on `x` itself.
pub fn quantize_symmetric(
    x: &Tensor,
    per_channel: bool,
    channel_axis: Option<usize>,
) -> Result<(Tensor, Vec<QuantWarning>)> {
    if x.is_empty() {
        return Err(TensorError::Empty);
    }
    finite_values(x)?;
    let (qp, warnings) = if per_channel {
        let axis = channel_axis.ok_or_else(|| TensorError::InvalidParams("per-channel quantization needs an axis".into()))?;
        let cal = calibrate(std::slice::from_ref(x), true, Some(axis))?;
        QuantParams::per_channel_symmetric(&cal.min, &cal.max, axis)
    } else {
        let cal = calibrate(std::slice::from_ref(x), false, None)?;
        let (qp, w) = QuantParams::symmetric(cal.min[0], cal.max[0]);
        (qp, w.into_iter().collect())
    };
    Ok((quantize_with(x, &qp)?, warnings))
}

/// Running extremes, one entry per tensor or per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Calibration {
    /// Quantization step of an affine mapping over this range.
    pub fn affine_resolution(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(lo, hi)| (hi - lo) / AFFINE_LEVELS).collect()
    }
}

pub fn calibrate(samples: &[Tensor], per_channel: bool, channel_axis: Option<usize>) -> Result<Calibration> {
    if samples.is_empty() {
        return Err(TensorError::Calibration("empty sample set".into()));
    }
    let axis = if per_channel {
        Some(channel_axis.ok_or_else(|| TensorError::InvalidParams("per-channel calibration needs an axis".into()))?)
    } else {
        None
    };
    let channels = match axis {
        Some(a) => {
            let shape = samples[0].shape();
            if a >= shape.len() {
                return Err(TensorError::InvalidParams(format!("channel axis {a} out of range for rank {}", shape.len())));
            }
            shape[a]
        }
        None => 1,
    };
    let mut min = vec![f64::INFINITY; channels];
    let mut max = vec![f64::NEG_INFINITY; channels];
    for sample in samples {
        let shape = sample.shape();
        if let Some(a) = axis {
            if shape.len() <= a || shape[a] != channels {
                return Err(TensorError::Calibration(format!("sample shape {shape:?} disagrees on axis {a}")));
            }
        }
        let values = sample.to_f32_vec();
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(TensorError::NonFinite { index: i });
            }
            let c = axis.map_or(0, |a| channel_of(shape, a, i));
            min[c] = min[c].min(v as f64);
            max[c] = max[c].max(v as f64);
        }
    }
    if min.iter().any(|m| m.is_infinite()) {
        return Err(TensorError::Calibration("samples contain no elements".into()));
    }
    Ok(Calibration { min, max })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_f32(vec![v.len()], v.to_vec()).unwrap()
    }

    /// Nearest of the 256 reconstruction levels, ties toward the larger level.
    fn nearest_level(x: f64, min: f64, max: f64) -> u8 {
        let mut best = 0u8;
        let mut best_d = f64::INFINITY;
        for q in 0..=255u32 {
            let level = q as f64 / 255.0 * (max - min) + min;
            let d = (x - level).abs();
            if d < best_d - 1e-12 || (d - best_d).abs() <= 1e-12 {
                best = q as u8;
                best_d = d;
            }
        }
        best
    }

    #[test]
    fn affine_endpoints_and_midpoint() {
        let qp = QuantParams::affine(0.0, 1.0).unwrap();
        let q = quantize_affine(&t(&[0.0, 1.0, 0.5]), &qp).unwrap();
        assert_eq!(q.as_u8().unwrap(), &[0, 255, 128]);
        assert_eq!(nearest_level(0.5, 0.0, 1.0), 128);
    }

    #[test]
    fn affine_matches_exhaustive_level_search() {
        let qp = QuantParams::affine(-0.7, 2.3).unwrap();
        let xs: Vec<f32> = (0..2000).map(|i| -0.7 + 3.0 * i as f32 / 1999.0).collect();
        let q = quantize_affine(&t(&xs), &qp).unwrap();
        for (x, q) in xs.iter().zip(q.as_u8().unwrap()) {
            assert_eq!(*q, nearest_level(*x as f64, -0.7, 2.3), "x = {x}");
        }
    }

    #[test]
    fn affine_saturates_outside_range() {
        let qp = QuantParams::affine(0.0, 1.0).unwrap();
        let q = quantize_affine(&t(&[-5.0, 7.0]), &qp).unwrap();
        assert_eq!(q.as_u8().unwrap(), &[0, 255]);
    }

    #[test]
    fn affine_errors() {
        assert!(matches!(QuantParams::affine(1.0, 1.0), Err(TensorError::Calibration(_))));
        let qp = QuantParams::affine(0.0, 1.0).unwrap();
        let err = quantize_affine(&t(&[0.0, f32::NAN]), &qp).unwrap_err();
        assert_eq!(err, TensorError::NonFinite { index: 1 });
    }

    #[test]
    fn dequantize_affine_values() {
        let qp = QuantParams::affine(-1.0, 1.0).unwrap();
        let q = Tensor::from_u8(vec![2], vec![0, 255], qp).unwrap();
        assert_eq!(dequantize_affine(&q).unwrap().as_f32().unwrap(), &[-1.0, 1.0]);
        let qp = QuantParams::affine(0.0, 1.0).unwrap();
        let q = Tensor::from_u8(vec![1], vec![128], qp).unwrap();
        let r = dequantize_affine(&q).unwrap().as_f32().unwrap()[0];
        assert!((r as f64 - 128.0 / 255.0).abs() < 1e-7);
        assert!((r - 0.501961).abs() < 1e-6);
    }

    #[test]
    fn dequantize_requires_params() {
        let f = t(&[1.0]);
        assert_eq!(dequantize_affine(&f).unwrap_err(), TensorError::MissingQuant);
        let (qp, _) = QuantParams::symmetric(-1.0, 1.0);
        let s = Tensor::from_i8(vec![1], vec![3], qp).unwrap();
        assert!(matches!(dequantize_affine(&s), Err(TensorError::WrongScheme { .. })));
    }

    #[test]
    fn symmetric_full_scale_and_zero() {
        let (q, w) = quantize_symmetric(&t(&[1.0, 0.0, -0.5]), false, None).unwrap();
        assert!(w.is_empty());
        assert_eq!(q.as_i8().unwrap(), &[127, 0, -64]);
        assert_eq!(q.quant().unwrap().zero_point, 0);
    }

    #[test]
    fn symmetric_all_zero_warns() {
        let (q, w) = quantize_symmetric(&t(&[0.0, 0.0]), false, None).unwrap();
        assert_eq!(w, vec![QuantWarning::DegenerateScale { channel: None }]);
        assert_eq!(q.quant().unwrap().scale, vec![1.0]);
        assert_eq!(q.as_i8().unwrap(), &[0, 0]);
    }

    #[test]
    fn symmetric_empty_is_error() {
        assert_eq!(quantize_symmetric(&t(&[]), false, None).unwrap_err(), TensorError::Empty);
    }

    #[test]
    fn per_tensor_squashes_small_channel_per_channel_keeps_it() {
        // channel A spans [-1, 1], channel B spans [-0.001, 0.001]; axis 0 is the channel
        let a: Vec<f32> = (0..8).map(|i| -1.0 + 2.0 * i as f32 / 7.0).collect();
        let b: Vec<f32> = (0..8).map(|i| -0.001 + 0.002 * i as f32 / 7.0).collect();
        let w = Tensor::from_f32(vec![2, 8], [a, b.clone()].concat()).unwrap();

        let (pt, _) = quantize_symmetric(&w, false, None).unwrap();
        let s = pt.quant().unwrap().scale[0];
        assert!((s - 1.0 / 127.0).abs() < 1e-12);
        assert!(b.iter().all(|v| (v.abs() as f64) < s / 2.0));
        assert!(pt.as_i8().unwrap()[8..].iter().all(|&q| q == 0));

        let (pc, _) = quantize_symmetric(&w, true, Some(0)).unwrap();
        let qp = pc.quant().unwrap();
        assert!((qp.scale[1] / (0.001 / 127.0) - 1.0).abs() < 1e-6);
        let back = dequantize(&pc).unwrap();
        for (orig, r) in b.iter().zip(&back.as_f32().unwrap()[8..]) {
            assert!(((orig - r).abs() as f64) <= qp.scale[1] / 2.0 + 1e-9);
        }
        assert!(pc.as_i8().unwrap()[8..].iter().any(|&q| q != 0));
    }

    #[test]
    fn calibrate_running_extremes() {
        let c = calibrate(&[t(&[0.0, 1.0])], false, None).unwrap();
        assert_eq!((c.min[0], c.max[0]), (0.0, 1.0));
        let c = calibrate(&[t(&[-2.0, 1.0]), t(&[0.0, 3.0])], false, None).unwrap();
        assert_eq!((c.min[0], c.max[0]), (-2.0, 3.0));
        assert!(calibrate(&[], false, None).is_err());
    }

    #[test]
    fn calibrate_outlier_inflates_resolution() {
        let mut values: Vec<f32> = (0..100).map(|i| -1.0 + 2.0 * i as f32 / 99.0).collect();
        values.push(100.0);
        let c = calibrate(&[t(&values)], false, None).unwrap();
        assert_eq!(c.max[0], 100.0);
        let step = c.affine_resolution()[0];
        // (100 - (-1)) / 255
        assert!((step - 101.0 / 255.0).abs() < 1e-12);
        assert!(step > 0.396 && step < 0.397);
    }

    #[test]
    fn calibrate_per_channel() {
        let x = Tensor::from_f32(vec![2, 2], vec![1.0, -3.0, 2.0, 5.0]).unwrap();
        let c = calibrate(&[x], true, Some(1)).unwrap();
        assert_eq!(c.min, vec![1.0, -3.0]);
        assert_eq!(c.max, vec![2.0, 5.0]);
    }

    #[test]
    fn activation_params_are_nudged() {
        let (qp, w) = activation_params(0.3, 5.9);
        assert!(w.is_none());
        assert_eq!(qp.zero_point, 0);
        assert_eq!(qp.calib_min[0], 0.0);
        let (qp, _) = activation_params(-1.0, 3.0);
        let s = qp.scale[0];
        assert!((qp.calib_min[0] + qp.zero_point as f64 * s).abs() < 1e-12);
        // real zero is exact
        assert_eq!(qp.quantize_value(0.0, 0), qp.zero_point);
        let (qp, w) = activation_params(0.0, 0.0);
        assert!(w.is_some());
        assert_eq!(qp.scale[0], 1.0);
    }

    proptest::proptest! {
        #[test]
        fn nudged_zero_point_reconstructs_exact_zero(lo in -1e4f64..0.0, span in 1e-6f64..1e4) {
            let (qp, _) = activation_params(lo, lo + span);
            proptest::prop_assert_eq!(qp.dequantize_value(qp.zero_point, 0), 0.0);
            proptest::prop_assert_eq!(qp.quantize_value(0.0, 0), qp.zero_point);
        }
    }
}
