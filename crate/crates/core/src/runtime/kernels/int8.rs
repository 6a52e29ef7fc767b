//! Integer kernels over zero-point-centered activations (`q - zp`).

use super::{requantize, saturate_i32, Acc, AccumulatorMode, Geometry, Rounding};

/// Output rescaling: per-channel multipliers (or one shared), zero point and clamp range.
#[derive(Debug, Clone)]
pub struct Requant {
    pub multiplier: Vec<f64>,
    pub zp: i32,
    pub lo: i32,
    pub hi: i32,
    pub rounding: Rounding,
}

impl Requant {
    #[inline]
    pub fn apply(&self, acc: i32, c: usize) -> i32 {
        let m = if self.multiplier.len() == 1 { self.multiplier[0] } else { self.multiplier[c] };
        requantize(acc, m, self.zp, self.lo, self.hi, self.rounding)
    }
}

pub fn conv2d_ref(
    x: &[i32],
    g: &Geometry,
    w: &[i32],
    cout: usize,
    bias: Option<&[i32]>,
    rq: &Requant,
    mode: AccumulatorMode,
) -> Vec<i32> {
    let mut out = Vec::with_capacity(g.oh * g.ow * cout);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for co in 0..cout {
                let mut acc = Acc::new(mode);
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let Some((iy, ix)) = g.src(oy, ox, ky, kx) else { continue };
                        for ci in 0..g.c {
                            acc.add(x[(iy * g.w + ix) * g.c + ci] as i64 * w[((co * g.kh + ky) * g.kw + kx) * g.c + ci] as i64);
                        }
                    }
                }
                if let Some(b) = bias {
                    acc.add(b[co] as i64);
                }
                out.push(rq.apply(acc.finish(), co));
            }
        }
    }
    out
}

const DOT_CHUNK: usize = 4096;

/// Exact dot product: i32 lanes per chunk (no overflow for |a| <= 255, |b| <= 128), widened between chunks.
#[inline]
fn dot_exact(a: &[i32], b: &[i32]) -> i64 {
    let mut total = 0i64;
    for (ca, cb) in a.chunks(DOT_CHUNK).zip(b.chunks(DOT_CHUNK)) {
        let mut lanes = [0i32; 8];
        let ea = ca.chunks_exact(8);
        let eb = cb.chunks_exact(8);
        let (ra, rb) = (ea.remainder(), eb.remainder());
        for (x, y) in ea.zip(eb) {
            for l in 0..8 {
                lanes[l] += x[l] * y[l];
            }
        }
        let mut s: i64 = lanes.iter().map(|&v| v as i64).sum();
        for (x, y) in ra.iter().zip(rb) {
            s += (*x * *y) as i64;
        }
        total += s;
    }
    total
}

fn gemm_rows(rows: &[i32], k: usize, w: &[i32], cout: usize, bias: Option<&[i32]>, rq: &Requant) -> Vec<i32> {
    let p = rows.len() / k.max(1);
    let mut out = vec![0i32; p * cout];
    for (r, row) in rows.chunks_exact(k).enumerate() {
        for co in 0..cout {
            let acc = dot_exact(row, &w[co * k..(co + 1) * k]) + bias.map_or(0, |b| b[co] as i64);
            out[r * cout + co] = rq.apply(saturate_i32(acc), co);
        }
    }
    out
}

pub fn conv2d_gemm(x: &[i32], g: &Geometry, w: &[i32], cout: usize, bias: Option<&[i32]>, rq: &Requant) -> Vec<i32> {
    let k = g.kh * g.kw * g.c;
    if g.is_pointwise() {
        return gemm_rows(x, k, w, cout, bias, rq);
    }
    let cols = g.im2col(x, 0i32);
    gemm_rows(&cols, k, w, cout, bias, rq)
}

pub fn depthwise_ref(x: &[i32], g: &Geometry, w: &[i32], bias: Option<&[i32]>, rq: &Requant, mode: AccumulatorMode) -> Vec<i32> {
    let mut out = Vec::with_capacity(g.oh * g.ow * g.c);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for c in 0..g.c {
                let mut acc = Acc::new(mode);
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.src(oy, ox, ky, kx) {
                            acc.add(x[(iy * g.w + ix) * g.c + c] as i64 * w[(ky * g.kw + kx) * g.c + c] as i64);
                        }
                    }
                }
                if let Some(b) = bias {
                    acc.add(b[c] as i64);
                }
                out.push(rq.apply(acc.finish(), c));
            }
        }
    }
    out
}

pub fn depthwise_rows(x: &[i32], g: &Geometry, w: &[i32], bias: Option<&[i32]>, rq: &Requant) -> Vec<i32> {
    let c = g.c;
    let mut acc = vec![0i64; c];
    let mut out = Vec::with_capacity(g.oh * g.ow * c);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            acc.iter_mut().for_each(|a| *a = 0);
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let Some((iy, ix)) = g.src(oy, ox, ky, kx) else { continue };
                    let src = &x[(iy * g.w + ix) * c..(iy * g.w + ix + 1) * c];
                    let tap = &w[(ky * g.kw + kx) * c..(ky * g.kw + kx + 1) * c];
                    for ((a, s), t) in acc.iter_mut().zip(src).zip(tap) {
                        *a += (*s * *t) as i64;
                    }
                }
            }
            for (ch, a) in acc.iter().enumerate() {
                let v = a + bias.map_or(0, |b| b[ch] as i64);
                out.push(rq.apply(saturate_i32(v), ch));
            }
        }
    }
    out
}

pub fn fully_connected_ref(x: &[i32], w: &[i32], cout: usize, bias: Option<&[i32]>, rq: &Requant, mode: AccumulatorMode) -> Vec<i32> {
    let k = x.len();
    (0..cout)
        .map(|co| {
            let mut acc = Acc::new(mode);
            for i in 0..k {
                acc.add(x[i] as i64 * w[co * k + i] as i64);
            }
            if let Some(b) = bias {
                acc.add(b[co] as i64);
            }
            rq.apply(acc.finish(), co)
        })
        .collect()
}

pub fn fully_connected_gemm(x: &[i32], w: &[i32], cout: usize, bias: Option<&[i32]>, rq: &Requant) -> Vec<i32> {
    gemm_rows(x, x.len(), w, cout, bias, rq)
}

/// Window average; `rq.multiplier[0]` is the input/output scale ratio.
pub fn average_pool(x: &[i32], g: &Geometry, rq: &Requant, mode: AccumulatorMode) -> Vec<i32> {
    let ratio = rq.multiplier[0];
    let mut out = Vec::with_capacity(g.oh * g.ow * g.c);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for c in 0..g.c {
                let mut acc = Acc::new(mode);
                let mut n = 0u32;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.src(oy, ox, ky, kx) {
                            acc.add(x[(iy * g.w + ix) * g.c + c] as i64);
                            n += 1;
                        }
                    }
                }
                out.push(divide_requant(acc.finish(), n, ratio, rq));
            }
        }
    }
    out
}

#[inline]
fn divide_requant(sum: i32, n: u32, ratio: f64, rq: &Requant) -> i32 {
    let v = rq.rounding.apply(sum as f64 * ratio / n as f64) + rq.zp as f64;
    v.clamp(rq.lo as f64, rq.hi as f64) as i32
}

pub fn mean(x: &[i32], c: usize, rq: &Requant, mode: AccumulatorMode) -> Vec<i32> {
    let n = (x.len() / c) as u32;
    let mut accs = vec![Acc::new(mode); c];
    for px in x.chunks_exact(c) {
        for (a, v) in accs.iter_mut().zip(px) {
            a.add(*v as i64);
        }
    }
    accs.into_iter().map(|a| divide_requant(a.finish(), n, rq.multiplier[0], rq)).collect()
}

/// Elementwise sum of two operands rescaled to the output scale.
pub fn add(a: &[i32], scale_a: f64, b: &[i32], scale_b: f64, rq: &Requant) -> Vec<i32> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let v = rq.rounding.apply(x as f64 * scale_a) + rq.rounding.apply(y as f64 * scale_b) + rq.zp as f64;
            v.clamp(rq.lo as f64, rq.hi as f64) as i32
        })
        .collect()
}
