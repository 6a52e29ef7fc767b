use super::{activate_f32, Geometry};
use crate::runtime::graph::{Activation, Padding};

pub fn conv2d_ref(x: &[f32], g: &Geometry, w: &[f32], cout: usize, bias: Option<&[f32]>, act: Activation) -> Vec<f32> {
    let mut out = Vec::with_capacity(g.oh * g.ow * cout);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for co in 0..cout {
                let mut acc = 0f64;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let Some((iy, ix)) = g.src(oy, ox, ky, kx) else { continue };
                        for ci in 0..g.c {
                            acc += x[(iy * g.w + ix) * g.c + ci] as f64 * w[((co * g.kh + ky) * g.kw + kx) * g.c + ci] as f64;
                        }
                    }
                }
                let b = bias.map_or(0.0, |b| b[co]) as f64;
                out.push(activate_f32((acc + b) as f32, act));
            }
        }
    }
    out
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut s = lanes.iter().sum::<f64>();
    for (x, y) in ra.iter().zip(rb) {
        s += *x as f64 * *y as f64;
    }
    s
}

/// `out[p][co] = rows[p] . w[co] + bias[co]`, four output channels per pass.
fn gemm_rows(rows: &[f32], k: usize, w: &[f32], cout: usize, bias: Option<&[f32]>, act: Activation) -> Vec<f32> {
    let p = rows.len() / k.max(1);
    let mut out = vec![0f32; p * cout];
    let mut acc = vec![0f64; cout];
    for (r, row) in rows.chunks_exact(k).enumerate() {
        let dst = &mut acc;
        let mut co = 0;
        while co + 4 <= cout {
            let (w0, w1, w2, w3) =
                (&w[co * k..(co + 1) * k], &w[(co + 1) * k..(co + 2) * k], &w[(co + 2) * k..(co + 3) * k], &w[(co + 3) * k..(co + 4) * k]);
            let mut s = [0f64; 4];
            for i in 0..k {
                let v = row[i] as f64;
                s[0] += v * w0[i] as f64;
                s[1] += v * w1[i] as f64;
                s[2] += v * w2[i] as f64;
                s[3] += v * w3[i] as f64;
            }
            dst[co..co + 4].copy_from_slice(&s);
            co += 4;
        }
        while co < cout {
            dst[co] = dot(row, &w[co * k..(co + 1) * k]);
            co += 1;
        }
        for (c, (o, d)) in out[r * cout..(r + 1) * cout].iter_mut().zip(dst.iter()).enumerate() {
            *o = activate_f32((d + bias.map_or(0.0, |b| b[c]) as f64) as f32, act);
        }
    }
    out
}

pub fn conv2d_gemm(x: &[f32], g: &Geometry, w: &[f32], cout: usize, bias: Option<&[f32]>, act: Activation) -> Vec<f32> {
    let k = g.kh * g.kw * g.c;
    if g.is_pointwise() {
        return gemm_rows(x, k, w, cout, bias, act);
    }
    let cols = g.im2col(x, 0f32);
    gemm_rows(&cols, k, w, cout, bias, act)
}

pub fn depthwise_ref(x: &[f32], g: &Geometry, w: &[f32], bias: Option<&[f32]>, act: Activation) -> Vec<f32> {
    let mut out = Vec::with_capacity(g.oh * g.ow * g.c);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for c in 0..g.c {
                let mut acc = 0f64;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.src(oy, ox, ky, kx) {
                            acc += x[(iy * g.w + ix) * g.c + c] as f64 * w[(ky * g.kw + kx) * g.c + c] as f64;
                        }
                    }
                }
                out.push(activate_f32((acc + bias.map_or(0.0, |b| b[c]) as f64) as f32, act));
            }
        }
    }
    out
}

/// Row-at-a-time depthwise: channel-contiguous inner loops over whole pixels.
pub fn depthwise_rows(x: &[f32], g: &Geometry, w: &[f32], bias: Option<&[f32]>, act: Activation) -> Vec<f32> {
    let c = g.c;
    let mut out = Vec::with_capacity(g.oh * g.ow * c);
    let mut dst = vec![0f64; c];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            dst.iter_mut().for_each(|d| *d = 0.0);
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let Some((iy, ix)) = g.src(oy, ox, ky, kx) else { continue };
                    let src = &x[(iy * g.w + ix) * c..(iy * g.w + ix + 1) * c];
                    let tap = &w[(ky * g.kw + kx) * c..(ky * g.kw + kx + 1) * c];
                    for ((d, s), t) in dst.iter_mut().zip(src).zip(tap) {
                        *d += *s as f64 * *t as f64;
                    }
                }
            }
            for (ch, d) in dst.iter().enumerate() {
                out.push(activate_f32((d + bias.map_or(0.0, |b| b[ch]) as f64) as f32, act));
            }
        }
    }
    out
}

pub fn fully_connected_ref(x: &[f32], w: &[f32], cout: usize, bias: Option<&[f32]>, act: Activation) -> Vec<f32> {
    let k = x.len();
    (0..cout)
        .map(|co| {
            let mut acc = 0f64;
            for i in 0..k {
                acc += x[i] as f64 * w[co * k + i] as f64;
            }
            activate_f32((acc + bias.map_or(0.0, |b| b[co]) as f64) as f32, act)
        })
        .collect()
}

pub fn fully_connected_gemm(x: &[f32], w: &[f32], cout: usize, bias: Option<&[f32]>, act: Activation) -> Vec<f32> {
    gemm_rows(x, x.len(), w, cout, bias, act)
}

pub fn average_pool(x: &[f32], g: &Geometry) -> Vec<f32> {
    let mut out = Vec::with_capacity(g.oh * g.ow * g.c);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            for c in 0..g.c {
                let mut sum = 0f64;
                let mut n = 0usize;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        if let Some((iy, ix)) = g.src(oy, ox, ky, kx) {
                            sum += x[(iy * g.w + ix) * g.c + c] as f64;
                            n += 1;
                        }
                    }
                }
                out.push((sum / n as f64) as f32);
            }
        }
    }
    out
}

pub fn mean(x: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    let mut sums = vec![0f64; c];
    for px in x.chunks_exact(c) {
        for (s, v) in sums.iter_mut().zip(px) {
            *s += *v as f64;
        }
    }
    sums.into_iter().map(|s| (s / (h * w) as f64) as f32).collect()
}

pub fn pad<T: Copy>(x: &[T], shape: &[usize], p: Padding, fill: T) -> Vec<T> {
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let (oh, ow) = (h + p.top + p.bottom, w + p.left + p.right);
    let mut out = vec![fill; oh * ow * c];
    for y in 0..h {
        let src = &x[y * w * c..(y + 1) * w * c];
        let at = ((y + p.top) * ow + p.left) * c;
        out[at..at + w * c].copy_from_slice(src);
    }
    out
}

pub fn add(a: &[f32], b: &[f32], act: Activation) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| activate_f32(x + y, act)).collect()
}

/// Softmax over the last axis.
pub fn softmax(x: &[f32], last: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(last.max(1)) {
        let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let e: Vec<f64> = row.iter().map(|&v| ((v - m) as f64).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| (v / s) as f32));
    }
    out
}
