//! Bilinear (half-pixel centers, edge clamp) and exact area-average resampling.

use super::{Image, ImageError, Resizer, Result};

fn check_dims(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(ImageError::InvalidSpec(format!("target size {h}x{w} must be at least 1x1")));
    }
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn resize(img: &Image, resizer: Resizer, target_h: usize, target_w: usize) -> Result<Image> {
    match resizer {
        Resizer::Bilinear => resize_bilinear(img, target_h, target_w),
        Resizer::AreaAverage => resize_area(img, target_h, target_w),
    }
}

/// Source coordinate taps for one destination index: `(i0, i1, frac)`.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear(img: &Image, target_h: usize, target_w: usize) -> Result<Image> {
    check_dims(target_h, target_w)?;
    let c = img.channels;
    let ys = bilinear_taps(img.height, target_h);
    let xs = bilinear_taps(img.width, target_w);
    let mut data = Vec::with_capacity(target_h * target_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let (p00, p01, p10, p11) = (img.pixel(y0, x0), img.pixel(y0, x1), img.pixel(y1, x0), img.pixel(y1, x1));
            for ch in 0..c {
                let top = p00[ch] as f64 * (1.0 - fx) + p01[ch] as f64 * fx;
                let bottom = p10[ch] as f64 * (1.0 - fx) + p11[ch] as f64 * fx;
                data.push(to_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Image::new(target_h, target_w, c, img.order, data)
}

/// Overlap of each source cell with the destination interval, normalized to sum 1.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let lo = d as f64 * scale;
            let hi = (d + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

pub fn resize_area(img: &Image, target_h: usize, target_w: usize) -> Result<Image> {
    check_dims(target_h, target_w)?;
    let c = img.channels;
    let ys = area_weights(img.height, target_h);
    let xs = area_weights(img.width, target_w);
    let mut data = Vec::with_capacity(target_h * target_w * c);
    let mut acc = vec![0.0f64; c];
    for wy in &ys {
        for wx in &xs {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &(sy, ky) in wy {
                for &(sx, kx) in wx {
                    let k = ky * kx;
                    for (a, &p) in acc.iter_mut().zip(img.pixel(sy, sx)) {
                        *a += k * p as f64;
                    }
                }
            }
            data.extend(acc.iter().map(|&a| to_u8(a)));
        }
    }
    Image::new(target_h, target_w, c, img.order, data)
}

#[cfg(test)]
mod tests {
    use super::super::ChannelOrder;
    use super::*;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, data: Vec<u8>) -> Image {
        Image::new(h, w, 1, ChannelOrder::RGB, data).unwrap()
    }

    #[test]
    fn two_by_two_to_one() {
        let i = gray(2, 2, vec![0, 2, 4, 6]);
        assert_eq!(resize_bilinear(&i, 1, 1).unwrap().data, vec![3]);
        assert_eq!(resize_area(&i, 1, 1).unwrap().data, vec![3]);
    }

    /// Brute-force block means for integer factors.
    fn block_means(img: &Image, f: usize) -> Vec<u8> {
        let (h, w) = (img.height / f, img.width / f);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let mut s = 0u32;
                for dy in 0..f {
                    for dx in 0..f {
                        s += img.pixel(y * f + dy, x * f + dx)[0] as u32;
                    }
                }
                out.push((s as f64 / (f * f) as f64).round() as u8);
            }
        }
        out
    }

    #[test]
    fn area_four_to_two_is_block_mean() {
        let data: Vec<u8> = (0..16).map(|i| (i * 37 % 251) as u8).collect();
        let i = gray(4, 4, data);
        assert_eq!(resize_area(&i, 2, 2).unwrap().data, block_means(&i, 2));
    }

    #[test]
    fn zero_target_rejected() {
        let i = gray(2, 2, vec![0; 4]);
        assert!(resize_area(&i, 0, 1).is_err());
        assert!(resize_bilinear(&i, 1, 0).is_err());
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..12, 1usize..12, prop_oneof![Just(1usize), Just(3usize)]).prop_flat_map(|(h, w, c)| {
            proptest::collection::vec(any::<u8>(), h * w * c)
                .prop_map(move |d| Image::new(h, w, c, ChannelOrder::RGB, d).unwrap())
        })
    }

    fn mean(i: &Image) -> f64 {
        i.data.iter().map(|&v| v as f64).sum::<f64>() / i.data.len() as f64
    }

    proptest! {
        #[test]
        fn identity_size_is_identity(i in arb_image()) {
            prop_assert_eq!(&resize_bilinear(&i, i.height, i.width).unwrap(), &i);
            prop_assert_eq!(&resize_area(&i, i.height, i.width).unwrap(), &i);
        }

        #[test]
        fn constant_images_stay_constant(v in any::<u8>(), h in 1usize..10, w in 1usize..10, th in 1usize..10, tw in 1usize..10) {
            let i = gray(h, w, vec![v; h * w]);
            prop_assert!(resize_bilinear(&i, th, tw).unwrap().data.iter().all(|&p| p == v));
            prop_assert!(resize_area(&i, th, tw).unwrap().data.iter().all(|&p| p == v));
        }

        #[test]
        fn area_preserves_mean_within_rounding(i in arb_image(), th in 1usize..12, tw in 1usize..12) {
            let r = resize_area(&i, th, tw).unwrap();
            prop_assert!((mean(&r) - mean(&i)).abs() <= 0.5 + 1e-9);
        }

        #[test]
        fn bilinear_halving_preserves_mean(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let i = gray(2 * h, 2 * w, (0..4 * h * w).map(|_| rng.gen()).collect());
            let r = resize_bilinear(&i, h, w).unwrap();
            prop_assert_eq!(&r.data, &block_means(&i, 2));
            prop_assert!((mean(&r) - mean(&i)).abs() <= 0.5 + 1e-9);
        }
    }
}
