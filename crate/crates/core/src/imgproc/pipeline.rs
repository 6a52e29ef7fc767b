use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{convert_channel_order, normalize, resize, rotate_by, ChannelOrder, Image, ImageError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resizer {
    Bilinear,
    AreaAverage,
}

impl Resizer {
    pub const ALL: [Resizer; 2] = [Resizer::Bilinear, Resizer::AreaAverage];

    pub fn name(self) -> &'static str {
        match self {
            Resizer::Bilinear => "Bilinear",
            Resizer::AreaAverage => "AreaAverage",
        }
    }
}

/// Clockwise rotation, serialized as degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn from_degrees(degrees: i64) -> Result<Self> {
        match degrees {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            other => Err(ImageError::BadRotation(other)),
        }
    }

    pub fn degrees(self) -> i64 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }
}

impl TryFrom<i64> for Rotation {
    type Error = ImageError;
    fn try_from(d: i64) -> Result<Self> {
        Rotation::from_degrees(d)
    }
}

impl From<Rotation> for i64 {
    fn from(r: Rotation) -> i64 {
        r.degrees()
    }
}

/// Declarative preprocessing configuration.
///
/// Stages always run in the order rotate, channel order, resize, normalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub channel_order: ChannelOrder,
    pub resizer: Resizer,
    pub target_h: usize,
    pub target_w: usize,
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub rotation: Rotation,
}

impl PipelineSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_h == 0 || self.target_w == 0 {
            return Err(ImageError::InvalidSpec("target dimensions must be at least 1".into()));
        }
        if !(self.norm_lo.is_finite() && self.norm_hi.is_finite() && self.norm_lo < self.norm_hi) {
            return Err(ImageError::InvalidSpec(format!(
                "norm_lo ({}) must be below norm_hi ({})",
                self.norm_lo, self.norm_hi
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PipelineSpec = serde_json::from_str(text).map_err(|e| ImageError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ImageError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        PipelineSpec::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Width of one input gray level in the normalized output range.
    pub fn gray_level(&self) -> f64 {
        (self.norm_hi - self.norm_lo) / 255.0
    }
}

pub fn run_pipeline(img: &Image, spec: &PipelineSpec) -> Result<Tensor> {
    spec.validate()?;
    let rotated = rotate_by(img, spec.rotation);
    let ordered = convert_channel_order(&rotated, spec.channel_order)?;
    let resized = resize(&ordered, spec.resizer, spec.target_h, spec.target_w)?;
    normalize(&resized, spec.norm_lo, spec.norm_hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(h: usize, w: usize) -> PipelineSpec {
        PipelineSpec {
            channel_order: ChannelOrder::RGB,
            resizer: Resizer::AreaAverage,
            target_h: h,
            target_w: w,
            norm_lo: 0.0,
            norm_hi: 1.0,
            rotation: Rotation::R0,
        }
    }

    fn noise(h: usize, w: usize, seed: u32) -> Image {
        let data = (0..h * w * 3).map(|i| (((i as u32).wrapping_mul(2654435761u32) ^ seed) >> 13) as u8).collect();
        Image::rgb(h, w, data).unwrap()
    }

    #[test]
    fn identity_spec_divides_by_255() {
        let img = noise(5, 4, 1);
        let out = run_pipeline(&img, &spec(5, 4)).unwrap();
        assert_eq!(out.shape(), &[5, 4, 3]);
        for (v, &u) in out.as_f32().unwrap().iter().zip(&img.data) {
            assert_eq!(*v, u as f32 / 255.0);
        }
    }

    #[test]
    fn channel_order_commutes_with_later_stages() {
        let img = noise(9, 7, 3);
        let mut bgr = spec(4, 3);
        bgr.channel_order = ChannelOrder::BGR;
        bgr.norm_lo = -1.0;
        let mut rgb = bgr.clone();
        rgb.channel_order = ChannelOrder::RGB;
        let a = run_pipeline(&img, &rgb).unwrap();
        let b = run_pipeline(&img, &bgr).unwrap();
        for (pa, pb) in a.as_f32().unwrap().chunks(3).zip(b.as_f32().unwrap().chunks(3)) {
            assert_eq!(pa, &[pb[2], pb[1], pb[0]]);
        }
    }

    #[test]
    fn resizers_agree_on_constant_images() {
        let img = Image::rgb(8, 8, vec![77; 8 * 8 * 3]).unwrap();
        let mut s = spec(3, 5);
        let area = run_pipeline(&img, &s).unwrap();
        s.resizer = Resizer::Bilinear;
        assert_eq!(run_pipeline(&img, &s).unwrap(), area);
    }

    #[test]
    fn json_rejects_unknown_keys_and_bad_values() {
        let good = spec(2, 2).to_json();
        assert_eq!(PipelineSpec::from_json(&good).unwrap(), spec(2, 2));
        let extra = good.replacen('{', "{\"gamma\": 2.2,", 1);
        assert!(PipelineSpec::from_json(&extra).is_err());
        let rot = good.replace("\"rotation\": 0", "\"rotation\": 45");
        assert!(PipelineSpec::from_json(&rot).is_err());
        let norm = good.replace("\"norm_hi\": 1.0", "\"norm_hi\": -1.0");
        assert!(PipelineSpec::from_json(&norm).is_err());
    }

    #[test]
    fn deterministic() {
        let img = noise(11, 13, 9);
        let mut s = spec(5, 6);
        s.rotation = Rotation::R90;
        s.resizer = Resizer::Bilinear;
        assert_eq!(run_pipeline(&img, &s).unwrap(), run_pipeline(&img, &s).unwrap());
    }
}
