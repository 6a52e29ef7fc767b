//! Graph execution with per-layer timing.

use std::hint::black_box;

use serde::{Deserialize, Serialize};

use super::graph::{Activation, Graph, Layer, LayerOp, TensorInfo};
use super::kernels::int8::{self, Requant};
use super::kernels::{float, AccumulatorMode, Geometry, Rounding};
use super::resolver::{KernelKind, KernelResolver, LayerFaults};
use super::{Result, RuntimeError};
use crate::clock::monotonic_ns;
use crate::tensor::{dequantize, DType, QuantParams, QuantScheme, Tensor, TensorData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Capture {
    #[default]
    OutputOnly,
    PerLayer,
}

/// Monotonic start/end of one layer, in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub start_ns: u64,
    pub end_ns: u64,
}

impl LayerTiming {
    pub fn duration_ns(&self) -> u64 {
        self.end_ns.saturating_sub(self.start_ns)
    }
}

#[derive(Debug, Clone)]
pub struct InferenceResult {
    pub output: Tensor,
    /// Every layer's output, when captured.
    pub layer_outputs: Option<Vec<Tensor>>,
    pub layer_timings: Vec<LayerTiming>,
    pub start_ns: u64,
    pub end_ns: u64,
    /// Peak live activation bytes plus weight bytes.
    pub memory_bytes: usize,
}

impl InferenceResult {
    pub fn latency_ns(&self) -> u64 {
        self.end_ns.saturating_sub(self.start_ns)
    }
}

pub fn infer(graph: &Graph, input: &Tensor, resolver: &KernelResolver, capture: Capture) -> Result<InferenceResult> {
    let want = graph.input();
    if input.shape() != want.shape.as_slice() || input.dtype() != want.dtype {
        return Err(RuntimeError::Input(format!(
            "expected {:?} {:?}, got {:?} {:?}",
            want.dtype,
            want.shape,
            input.dtype(),
            input.shape()
        )));
    }
    let layers = graph.layers();
    let infos = graph.layer_infos();
    let mut outputs: Vec<Tensor> = Vec::with_capacity(layers.len());
    let mut timings = Vec::with_capacity(layers.len());
    let start_ns = monotonic_ns();
    for (i, layer) in layers.iter().enumerate() {
        let x = if i == 0 { input } else { &outputs[i - 1] };
        let other = match layer.op {
            LayerOp::Add(p) => Some(&outputs[p.other]),
            _ => None,
        };
        let lf = resolver.faults_for(i, layer.layer_type());
        let t0 = monotonic_ns();
        for _ in 1..lf.repeat {
            black_box(run_layer(layer, black_box(x), other, &infos[i], resolver.kind, &lf)?);
        }
        let y = run_layer(layer, x, other, &infos[i], resolver.kind, &lf)?;
        let t1 = monotonic_ns();
        timings.push(LayerTiming { start_ns: t0, end_ns: t1 });
        outputs.push(y);
    }
    let end_ns = monotonic_ns();
    let output = outputs[graph.output_index()].clone();
    let layer_outputs = match capture {
        Capture::PerLayer => Some(outputs),
        Capture::OutputOnly => None,
    };
    Ok(InferenceResult { output, layer_outputs, layer_timings: timings, start_ns, end_ns, memory_bytes: graph.analytic_memory_bytes() })
}

fn zero_point(t: &Tensor) -> i32 {
    t.quant().map_or(0, |q| if q.scheme == QuantScheme::PerTensorAffine { q.zero_point } else { 0 })
}

fn scale(t: &Tensor) -> f64 {
    t.quant().map_or(1.0, |q| q.scale[0])
}

/// Quantized values minus the zero point.
fn centered(t: &Tensor) -> Vec<i32> {
    let zp = zero_point(t);
    match t.data() {
        TensorData::U8(v) => v.iter().map(|&q| q as i32 - zp).collect(),
        TensorData::I8(v) => v.iter().map(|&q| q as i32 - zp).collect(),
        TensorData::I32(v) => v.clone(),
        TensorData::F32(_) => unreachable!("validated quantized input"),
    }
}

fn pack(shape: &[usize], vals: Vec<i32>, qp: &QuantParams) -> Result<Tensor> {
    let t = if qp.scheme == QuantScheme::PerTensorAffine {
        Tensor::from_u8(shape.to_vec(), vals.into_iter().map(|v| v as u8).collect(), qp.clone())
    } else {
        Tensor::from_i8(shape.to_vec(), vals.into_iter().map(|v| v as i8).collect(), qp.clone())
    };
    Ok(t?)
}

fn activation_range(qp: &QuantParams, act: Activation) -> (i32, i32) {
    let (mut lo, mut hi) = qp.qrange();
    let zp = if qp.scheme == QuantScheme::PerTensorAffine { qp.zero_point } else { 0 };
    match act {
        Activation::None => {}
        Activation::ReLU => lo = lo.max(zp),
        Activation::ReLU6 => {
            lo = lo.max(zp);
            hi = hi.min(zp + (6.0 / qp.scale[0]).round() as i32);
        }
    }
    (lo, hi)
}

fn quantize_real(x: f64, qp: &QuantParams, rounding: Rounding) -> i32 {
    let (lo, hi) = qp.qrange();
    let v = match qp.scheme {
        QuantScheme::PerTensorAffine => {
            let (min, max) = (qp.calib_min[0], qp.calib_max[0]);
            (x - min) / (max - min) * 255.0
        }
        _ => x / qp.scale[0],
    };
    rounding.apply(v).clamp(lo as f64, hi as f64) as i32
}

fn f32_data(t: &Tensor) -> &[f32] {
    t.as_f32().expect("validated float tensor")
}

fn weights_i32(t: &Tensor) -> Vec<i32> {
    t.as_i8().expect("validated int8 weights").iter().map(|&v| v as i32).collect()
}

fn mac_requant(layer: &Layer, x: &Tensor, out_qp: &QuantParams, act: Activation, cout: usize, lf: &LayerFaults) -> Requant {
    let wq = layer.weights.as_ref().and_then(Tensor::quant).expect("validated weight quantization");
    let s_in = scale(x);
    let s_out = out_qp.scale[0];
    let multiplier = (0..cout).map(|c| s_in * wq.scale_at(c) / s_out).collect();
    let (lo, hi) = activation_range(out_qp, act);
    Requant { multiplier, zp: zero_point_of(out_qp), lo, hi, rounding: lf.rounding }
}

fn zero_point_of(qp: &QuantParams) -> i32 {
    if qp.scheme == QuantScheme::PerTensorAffine {
        qp.zero_point
    } else {
        0
    }
}

fn passthrough_requant(x: &Tensor, out_qp: &QuantParams, lf: &LayerFaults) -> Requant {
    let (lo, hi) = out_qp.qrange();
    Requant { multiplier: vec![scale(x) / out_qp.scale[0]], zp: zero_point_of(out_qp), lo, hi, rounding: lf.rounding }
}

pub(crate) fn run_layer(
    layer: &Layer,
    x: &Tensor,
    other: Option<&Tensor>,
    info: &TensorInfo,
    kind: KernelKind,
    lf: &LayerFaults,
) -> Result<Tensor> {
    let quantized = x.dtype().is_quantized();
    let shape = info.shape.clone();
    let exact = lf.accumulator == AccumulatorMode::Exact;
    let fast = kind == KernelKind::Optimized && exact;
    let f32_out = |v: Vec<f32>| -> Result<Tensor> { Ok(Tensor::from_f32(shape.clone(), v)?) };
    let out_qp = || info.quant.as_ref().expect("validated output quantization");
    match &layer.op {
        LayerOp::Conv2D(p) | LayerOp::DepthwiseConv2D(p) => {
            let depthwise = matches!(layer.op, LayerOp::DepthwiseConv2D(_));
            let w = layer.weights.as_ref().expect("validated weights");
            let (kh, kw) = if depthwise { (w.shape()[0], w.shape()[1]) } else { (w.shape()[1], w.shape()[2]) };
            let g = Geometry::new(x.shape(), kh, kw, p.stride, p.padding);
            let cout = shape[2];
            if !quantized {
                let (xv, wv) = (f32_data(x), f32_data(w));
                let b = layer.bias.as_ref().map(f32_data);
                let v = match (depthwise, kind) {
                    (false, KernelKind::Reference) => float::conv2d_ref(xv, &g, wv, cout, b, p.activation),
                    (false, KernelKind::Optimized) => float::conv2d_gemm(xv, &g, wv, cout, b, p.activation),
                    (true, KernelKind::Reference) => float::depthwise_ref(xv, &g, wv, b, p.activation),
                    (true, KernelKind::Optimized) => float::depthwise_rows(xv, &g, wv, b, p.activation),
                };
                return f32_out(v);
            }
            let rq = mac_requant(layer, x, out_qp(), p.activation, cout, lf);
            let (xc, wv) = (centered(x), weights_i32(w));
            let b = layer.bias.as_ref().and_then(Tensor::as_i32);
            let v = match (depthwise, fast) {
                (false, false) => int8::conv2d_ref(&xc, &g, &wv, cout, b, &rq, lf.accumulator),
                (false, true) => int8::conv2d_gemm(&xc, &g, &wv, cout, b, &rq),
                (true, false) => int8::depthwise_ref(&xc, &g, &wv, b, &rq, lf.accumulator),
                (true, true) => int8::depthwise_rows(&xc, &g, &wv, b, &rq),
            };
            pack(&shape, v, out_qp())
        }
        LayerOp::FullyConnected(p) => {
            let w = layer.weights.as_ref().expect("validated weights");
            let cout = shape[0];
            if !quantized {
                let b = layer.bias.as_ref().map(f32_data);
                let v = match kind {
                    KernelKind::Reference => float::fully_connected_ref(f32_data(x), f32_data(w), cout, b, p.activation),
                    KernelKind::Optimized => float::fully_connected_gemm(f32_data(x), f32_data(w), cout, b, p.activation),
                };
                return f32_out(v);
            }
            let rq = mac_requant(layer, x, out_qp(), p.activation, cout, lf);
            let (xc, wv) = (centered(x), weights_i32(w));
            let b = layer.bias.as_ref().and_then(Tensor::as_i32);
            let v = if fast {
                int8::fully_connected_gemm(&xc, &wv, cout, b, &rq)
            } else {
                int8::fully_connected_ref(&xc, &wv, cout, b, &rq, lf.accumulator)
            };
            pack(&shape, v, out_qp())
        }
        LayerOp::AveragePool2D(p) => {
            let g = Geometry::new(x.shape(), p.window[0], p.window[1], p.stride, p.padding);
            if !quantized {
                return f32_out(float::average_pool(f32_data(x), &g));
            }
            let rq = passthrough_requant(x, out_qp(), lf);
            pack(&shape, int8::average_pool(&centered(x), &g, &rq, lf.accumulator), out_qp())
        }
        LayerOp::Mean => {
            let s = x.shape();
            if !quantized {
                return f32_out(float::mean(f32_data(x), s[0], s[1], s[2]));
            }
            let rq = passthrough_requant(x, out_qp(), lf);
            pack(&shape, int8::mean(&centered(x), s[2], &rq, lf.accumulator), out_qp())
        }
        LayerOp::Pad(p) => {
            let s = x.shape();
            let t = match x.data() {
                TensorData::F32(v) => Tensor::from_f32(shape.clone(), float::pad(v, s, p.padding, 0.0))?,
                TensorData::U8(v) => {
                    Tensor::from_u8(shape.clone(), float::pad(v, s, p.padding, zero_point(x) as u8), out_qp().clone())?
                }
                TensorData::I8(v) => Tensor::from_i8(shape.clone(), float::pad(v, s, p.padding, 0), out_qp().clone())?,
                TensorData::I32(_) => unreachable!("validated activation dtype"),
            };
            Ok(t)
        }
        LayerOp::Add(p) => {
            let b = other.expect("validated add operand");
            if !quantized {
                return f32_out(float::add(f32_data(x), f32_data(b), p.activation));
            }
            let qp = out_qp();
            let (lo, hi) = activation_range(qp, p.activation);
            let rq = Requant { multiplier: vec![1.0], zp: zero_point_of(qp), lo, hi, rounding: lf.rounding };
            let v = int8::add(&centered(x), scale(x) / qp.scale[0], &centered(b), scale(b) / qp.scale[0], &rq);
            pack(&shape, v, qp)
        }
        LayerOp::Softmax => {
            let last = *x.shape().last().expect("validated rank");
            if !quantized {
                return f32_out(float::softmax(f32_data(x), last));
            }
            let probs = float::softmax(&x.to_f32_vec(), last);
            let qp = out_qp();
            pack(&shape, probs.iter().map(|&v| quantize_real(v as f64, qp, lf.rounding)).collect(), qp)
        }
        LayerOp::Quantize => {
            let Some(qp) = info.quant.as_ref() else { return Ok(x.clone()) };
            let v = f32_data(x);
            if let Some(index) = v.iter().position(|e| !e.is_finite()) {
                return Err(RuntimeError::Input(format!("layer {}: non-finite value at element {index}", layer.index)));
            }
            pack(&shape, v.iter().map(|&e| quantize_real(e as f64, qp, lf.rounding)).collect(), qp)
        }
        LayerOp::Dequantize => {
            if x.dtype() == DType::F32 {
                return Ok(x.clone());
            }
            Ok(dequantize(x)?)
        }
    }
}
