//! Post-training quantization of a float graph from calibration inputs.

use super::exec::{infer, Capture};
use super::graph::{AddParams, Graph, Layer, LayerOp, TensorInfo};
use super::resolver::KernelResolver;
use super::{Result, RuntimeError};
use crate::tensor::{activation_params, calibrate, quantize_with, QuantParams, QuantWarning, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QuantizeOptions {
    /// Per-output-channel weight scales instead of one per tensor.
    pub per_channel: bool,
}

#[derive(Debug, Clone)]
pub struct QuantizedGraph {
    pub graph: Graph,
    /// (layer index in the quantized graph, warning)
    pub warnings: Vec<(usize, QuantWarning)>,
}

fn weight_axis(op: &LayerOp) -> usize {
    match op {
        LayerOp::DepthwiseConv2D(_) => 2,
        _ => 0,
    }
}

fn range_of(samples: &[Tensor]) -> Result<(f64, f64)> {
    let c = calibrate(samples, false, None)?;
    Ok((c.min[0], c.max[0]))
}

/// Quantize `float` to an int8 graph. Quantize/Dequantize layers are added at
/// the boundaries unless the float graph already has identity ones there, so
/// layer positions stay comparable between the two graphs.
pub fn quantize_graph(float: &Graph, calibration: &[Tensor], opts: QuantizeOptions) -> Result<QuantizedGraph> {
    if calibration.is_empty() {
        return Err(RuntimeError::Quantize("calibration set is empty".into()));
    }
    if float.is_quantized() {
        return Err(RuntimeError::Quantize("graph is already quantized".into()));
    }
    let n = float.layers().len();
    if float.output_index() != n - 1 {
        return Err(RuntimeError::Quantize("graph output must be its last layer".into()));
    }
    let resolver = KernelResolver::reference();
    let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::with_capacity(calibration.len()); n];
    for x in calibration {
        let r = infer(float, x, &resolver, Capture::PerLayer)?;
        for (slot, t) in per_layer.iter_mut().zip(r.layer_outputs.expect("captured")) {
            slot.push(t);
        }
    }
    let first = &float.layers()[0];
    let has_q = matches!(first.op, LayerOp::Quantize);
    let has_dq = matches!(float.layers()[n - 1].op, LayerOp::Dequantize);
    let shift = usize::from(!has_q);
    let mut warnings = Vec::new();
    let mut push_warn = |idx: usize, w: Option<QuantWarning>| {
        if let Some(w) = w {
            warnings.push((idx, w));
        }
    };

    let mut layers: Vec<Layer> = Vec::with_capacity(n + 2);
    if !has_q {
        let (lo, hi) = range_of(calibration)?;
        let (qp, w) = activation_params(lo, hi);
        push_warn(0, w);
        layers.push(Layer::new(0, LayerOp::Quantize).with_output_quant(qp));
    }
    // Quantization of the activation feeding the next layer.
    let mut current: Option<QuantParams> = layers.last().and_then(|l| l.output_quant.clone());
    for (i, l) in float.layers().iter().enumerate() {
        let idx = i + shift;
        let calib = || -> Result<(QuantParams, Option<QuantWarning>)> {
            let (lo, hi) = range_of(&per_layer[i])?;
            Ok(activation_params(lo, hi))
        };
        let mut nl = Layer::new(idx, l.op);
        match &l.op {
            LayerOp::Quantize => {
                if i != 0 {
                    return Err(RuntimeError::Quantize(format!("layer {i}: Quantize is only allowed first")));
                }
                let (qp, w) = calib()?;
                push_warn(idx, w);
                nl.output_quant = Some(qp);
            }
            LayerOp::Dequantize => {
                if i != n - 1 {
                    return Err(RuntimeError::Quantize(format!("layer {i}: Dequantize is only allowed last")));
                }
            }
            LayerOp::Conv2D(_) | LayerOp::DepthwiseConv2D(_) | LayerOp::FullyConnected(_) => {
                let w = l.weights.as_ref().expect("validated weights");
                let axis = weight_axis(&l.op);
                let cal = calibrate(std::slice::from_ref(w), opts.per_channel, opts.per_channel.then_some(axis))?;
                let (wqp, ws) = if opts.per_channel {
                    QuantParams::per_channel_symmetric(&cal.min, &cal.max, axis)
                } else {
                    let (qp, w) = QuantParams::symmetric(cal.min[0], cal.max[0]);
                    (qp, w.into_iter().collect())
                };
                ws.into_iter().for_each(|w| push_warn(idx, Some(w)));
                let wq = quantize_with(w, &wqp)?;
                let s_in = current.as_ref().map(|q| q.scale[0]).expect("activation quantized before weights");
                let bias = match &l.bias {
                    Some(b) => {
                        let bv = b.expect_f32()?;
                        let q = bv
                            .iter()
                            .enumerate()
                            .map(|(c, &v)| (v as f64 / (s_in * wqp.scale_at(c))).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32)
                            .collect();
                        Some(Tensor::from_i32(b.shape().to_vec(), q)?)
                    }
                    None => None,
                };
                let (qp, w) = calib()?;
                push_warn(idx, w);
                nl = nl.with_weights(wq, bias).with_output_quant(qp);
            }
            LayerOp::AveragePool2D(_) | LayerOp::Pad(_) => {}
            LayerOp::Mean | LayerOp::Softmax => {
                let (qp, w) = calib()?;
                push_warn(idx, w);
                nl.output_quant = Some(qp);
            }
            LayerOp::Add(p) => {
                nl.op = LayerOp::Add(AddParams { other: p.other + shift, activation: p.activation });
                let (qp, w) = calib()?;
                push_warn(idx, w);
                nl.output_quant = Some(qp);
            }
        }
        if nl.output_quant.is_some() {
            current = nl.output_quant.clone();
        }
        layers.push(nl);
    }
    if !has_dq {
        let idx = layers.len();
        layers.push(Layer::new(idx, LayerOp::Dequantize));
    }
    let output = layers.len() - 1;
    let input = TensorInfo { shape: float.input().shape.clone(), dtype: float.input().dtype, quant: None };
    let graph = Graph::new(format!("{}-int8", float.name()), input, layers, output)?;
    Ok(QuantizedGraph { graph, warnings })
}
