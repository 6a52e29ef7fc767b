//! Random graphs, inputs and images for tests, benchmarks and demos.

use rand::Rng;

use crate::imgproc::Image;
use crate::runtime::{
    Activation, AddParams, ConvParams, FcParams, Graph, Layer, LayerOp, PadParams, Padding, PoolParams, TensorInfo,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct RandomGraphConfig {
    /// Total layer count including the Quantize/Dequantize boundary layers.
    pub layers: usize,
    pub max_hw: usize,
    pub max_channels: usize,
}

fn uniform(rng: &mut impl Rng, n: usize, a: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-a..=a)).collect()
}

fn activation(rng: &mut impl Rng) -> Activation {
    match rng.gen_range(0..3) {
        0 => Activation::None,
        1 => Activation::ReLU,
        _ => Activation::ReLU6,
    }
}

pub fn conv_layer(rng: &mut impl Rng, index: usize, cin: usize, cout: usize, k: usize, stride: usize, pad: usize, act: Activation) -> Layer {
    let fan_in = (k * k * cin) as f32;
    let w = Tensor::from_f32(vec![cout, k, k, cin], uniform(rng, cout * k * k * cin, (3.0 / fan_in).sqrt() * 1.4)).unwrap();
    let b = Tensor::from_f32(vec![cout], uniform(rng, cout, 0.1)).unwrap();
    Layer::new(index, LayerOp::Conv2D(ConvParams { stride: [stride, stride], padding: Padding::same(pad), activation: act }))
        .with_weights(w, Some(b))
}

pub fn depthwise_layer(rng: &mut impl Rng, index: usize, c: usize, k: usize, stride: usize, pad: usize, act: Activation) -> Layer {
    let w = Tensor::from_f32(vec![k, k, c], uniform(rng, k * k * c, (3.0 / (k * k) as f32).sqrt() * 1.4)).unwrap();
    let b = Tensor::from_f32(vec![c], uniform(rng, c, 0.1)).unwrap();
    Layer::new(index, LayerOp::DepthwiseConv2D(ConvParams { stride: [stride, stride], padding: Padding::same(pad), activation: act }))
        .with_weights(w, Some(b))
}

pub fn fc_layer(rng: &mut impl Rng, index: usize, k: usize, cout: usize, act: Activation) -> Layer {
    let w = Tensor::from_f32(vec![cout, k], uniform(rng, cout * k, (3.0 / k as f32).sqrt() * 1.4)).unwrap();
    let b = Tensor::from_f32(vec![cout], uniform(rng, cout, 0.1)).unwrap();
    Layer::new(index, LayerOp::FullyConnected(FcParams { activation: act })).with_weights(w, Some(b))
}

/// A random valid float graph framed by identity Quantize/Dequantize layers.
pub fn random_float_graph(rng: &mut impl Rng, cfg: RandomGraphConfig) -> Graph {
    assert!(cfg.layers >= 3, "need room for the boundary layers");
    let (h, w, c) = (rng.gen_range(4..=cfg.max_hw), rng.gen_range(4..=cfg.max_hw), rng.gen_range(1..=cfg.max_channels));
    let mut shape = vec![h, w, c];
    let mut layers = vec![Layer::new(0, LayerOp::Quantize)];
    let mut history: Vec<Vec<usize>> = vec![shape.clone()];
    while layers.len() < cfg.layers - 1 {
        let i = layers.len();
        let flat = shape.len() == 1;
        let (hh, ww, cc) = if flat { (1, 1, shape[0]) } else { (shape[0], shape[1], shape[2]) };
        let add_candidates: Vec<usize> = (0..i).filter(|&j| j > 0 && history[j] == shape && j + 1 < i).collect();
        let choice = rng.gen_range(0..8);
        let cout = rng.gen_range(1..=cfg.max_channels);
        let act = activation(rng);
        let stride = if hh >= 6 && ww >= 6 && rng.gen_bool(0.3) { 2 } else { 1 };
        let layer = if flat {
            match choice {
                0 => Layer::new(i, LayerOp::Softmax),
                _ => fc_layer(rng, i, cc, cout, act),
            }
        } else {
            match choice {
                0 | 1 => {
                    let k = if rng.gen_bool(0.5) { 3 } else { 1 };
                    conv_layer(rng, i, cc, cout, k, stride, k / 2, act)
                }
                2 => depthwise_layer(rng, i, cc, 3, stride, 1, act),
                3 => {
                    if rng.gen_bool(0.5) {
                        Layer::new(i, LayerOp::AveragePool2D(PoolParams { window: [3, 3], stride: [1, 1], padding: Padding::same(1) }))
                    } else if hh >= 2 && ww >= 2 {
                        Layer::new(i, LayerOp::AveragePool2D(PoolParams { window: [2, 2], stride: [2, 2], padding: Padding::default() }))
                    } else {
                        Layer::new(i, LayerOp::Pad(PadParams { padding: Padding::same(1) }))
                    }
                }
                4 if hh + 2 <= cfg.max_hw && ww + 2 <= cfg.max_hw => {
                    Layer::new(i, LayerOp::Pad(PadParams { padding: Padding { top: 1, bottom: 0, left: 0, right: 1 } }))
                }
                5 if !add_candidates.is_empty() => {
                    let other = add_candidates[rng.gen_range(0..add_candidates.len())];
                    Layer::new(i, LayerOp::Add(AddParams { other, activation: act }))
                }
                6 if i + 3 >= cfg.layers => Layer::new(i, LayerOp::Mean),
                7 if i + 3 >= cfg.layers => fc_layer(rng, i, hh * ww * cc, cout, act),
                _ => depthwise_layer(rng, i, cc, 3, 1, 1, act),
            }
        };
        let g = Graph::new("probe", TensorInfo::f32(vec![h, w, c]), [layers.clone(), vec![layer.clone()]].concat(), i)
            .expect("generator produces valid layers");
        shape = g.layer_infos()[i].shape.clone();
        history.push(shape.clone());
        layers.push(layer);
    }
    let last = layers.len();
    layers.push(Layer::new(last, LayerOp::Dequantize));
    Graph::new("random", TensorInfo::f32(vec![h, w, c]), layers, last).expect("generator produces valid graphs")
}

pub fn random_input(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_f32(shape.to_vec(), uniform(rng, n, 1.0)).unwrap()
}

/// RGB image with smooth gradients, a few blobs and pixel noise, so that
/// resizers and rotations produce distinguishable outputs.
pub fn textured_image(rng: &mut impl Rng, h: usize, w: usize) -> Image {
    let fx: [f32; 3] = [rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)];
    let fy: [f32; 3] = [rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0)];
    let phase: [f32; 3] = [rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28), rng.gen_range(0.0..6.28)];
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let u = x as f32 / w as f32 * fx[ch] * 6.28;
                let v = y as f32 / h as f32 * fy[ch] * 6.28;
                let base = 128.0 + 70.0 * (u + phase[ch]).sin() * (v * 0.7 + phase[ch]).cos() + 30.0 * (y as f32 / h as f32 - 0.5);
                let noise: f32 = rng.gen_range(-40.0..40.0);
                data.push((base + noise).clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::rgb(h, w, data).expect("valid buffer")
}
