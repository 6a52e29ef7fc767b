//! Fixtures shared by the benchmarks.

use exray_core::runtime::{quantize_graph, Activation, Graph, Layer, LayerOp, QuantizeOptions, TensorInfo};
use exray_core::synth::{conv_layer, depthwise_layer, random_input};
use exray_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A single 3x3 convolution between identity Quantize/Dequantize layers.
pub fn conv_graph(hw: usize, cin: usize, cout: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let layers = vec![
        Layer::new(0, LayerOp::Quantize),
        conv_layer(&mut rng, 1, cin, cout, 3, 1, 1, Activation::ReLU),
        Layer::new(2, LayerOp::Dequantize),
    ];
    Graph::new("conv", TensorInfo::f32(vec![hw, hw, cin]), layers, 2).unwrap()
}

/// Alternating 3x3 conv and depthwise layers at a fixed width.
pub fn stack_graph(hw: usize, c: usize, depth: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut layers = vec![Layer::new(0, LayerOp::Quantize)];
    for i in 1..=depth {
        layers.push(if i % 2 == 1 {
            conv_layer(&mut rng, i, c, c, 3, 1, 1, Activation::ReLU6)
        } else {
            depthwise_layer(&mut rng, i, c, 3, 1, 1, Activation::ReLU6)
        });
    }
    layers.push(Layer::new(depth + 1, LayerOp::Dequantize));
    Graph::new("stack", TensorInfo::f32(vec![hw, hw, c]), layers, depth + 1).unwrap()
}

pub fn input_for(g: &Graph, seed: u64) -> Tensor {
    random_input(&mut ChaCha8Rng::seed_from_u64(seed), &g.input().shape)
}

pub fn int8(g: &Graph) -> Graph {
    let calib: Vec<Tensor> = (0..4).map(|s| input_for(g, s)).collect();
    quantize_graph(g, &calib, QuantizeOptions { per_channel: true }).unwrap().graph
}
