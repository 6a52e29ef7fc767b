//! Layer graph: in-memory representation, validation with shape/dtype
//! inference, and the `model.json` + `blobs/` on-disk format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Result, RuntimeError};
use crate::tensor::{encode_ten, num_elements, read_ten, write_ten, DType, QuantParams, QuantScheme, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerType {
    Conv2D,
    DepthwiseConv2D,
    FullyConnected,
    AveragePool2D,
    Mean,
    Pad,
    Add,
    Softmax,
    Quantize,
    Dequantize,
}

impl LayerType {
    pub const ALL: [LayerType; 10] = [
        LayerType::Conv2D,
        LayerType::DepthwiseConv2D,
        LayerType::FullyConnected,
        LayerType::AveragePool2D,
        LayerType::Mean,
        LayerType::Pad,
        LayerType::Add,
        LayerType::Softmax,
        LayerType::Quantize,
        LayerType::Dequantize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerType::Conv2D => "Conv2D",
            LayerType::DepthwiseConv2D => "DepthwiseConv2D",
            LayerType::FullyConnected => "FullyConnected",
            LayerType::AveragePool2D => "AveragePool2D",
            LayerType::Mean => "Mean",
            LayerType::Pad => "Pad",
            LayerType::Add => "Add",
            LayerType::Softmax => "Softmax",
            LayerType::Quantize => "Quantize",
            LayerType::Dequantize => "Dequantize",
        }
    }

    /// Layers whose int8 kernels multiply-accumulate weights.
    pub fn has_weights(self) -> bool {
        matches!(self, LayerType::Conv2D | LayerType::DepthwiseConv2D | LayerType::FullyConnected)
    }
}

impl fmt::Display for LayerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        LayerType::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| format!("unknown layer type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    None,
    ReLU,
    ReLU6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn same(p: usize) -> Self {
        Padding { top: p, bottom: p, left: p, right: p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvParams {
    pub stride: [usize; 2],
    #[serde(default)]
    pub padding: Padding,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolParams {
    pub window: [usize; 2],
    pub stride: [usize; 2],
    #[serde(default)]
    pub padding: Padding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcParams {
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadParams {
    pub padding: Padding,
}

/// Second operand of an Add: the output of a strictly earlier layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddParams {
    pub other: usize,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerOp {
    Conv2D(ConvParams),
    DepthwiseConv2D(ConvParams),
    FullyConnected(FcParams),
    AveragePool2D(PoolParams),
    Mean,
    Pad(PadParams),
    Add(AddParams),
    Softmax,
    Quantize,
    Dequantize,
}

impl LayerOp {
    pub fn layer_type(&self) -> LayerType {
        match self {
            LayerOp::Conv2D(_) => LayerType::Conv2D,
            LayerOp::DepthwiseConv2D(_) => LayerType::DepthwiseConv2D,
            LayerOp::FullyConnected(_) => LayerType::FullyConnected,
            LayerOp::AveragePool2D(_) => LayerType::AveragePool2D,
            LayerOp::Mean => LayerType::Mean,
            LayerOp::Pad(_) => LayerType::Pad,
            LayerOp::Add(_) => LayerType::Add,
            LayerOp::Softmax => LayerType::Softmax,
            LayerOp::Quantize => LayerType::Quantize,
            LayerOp::Dequantize => LayerType::Dequantize,
        }
    }

    fn params_json(&self) -> Option<Value> {
        let v = match self {
            LayerOp::Conv2D(p) | LayerOp::DepthwiseConv2D(p) => serde_json::to_value(p),
            LayerOp::FullyConnected(p) => serde_json::to_value(p),
            LayerOp::AveragePool2D(p) => serde_json::to_value(p),
            LayerOp::Pad(p) => serde_json::to_value(p),
            LayerOp::Add(p) => serde_json::to_value(p),
            LayerOp::Mean | LayerOp::Softmax | LayerOp::Quantize | LayerOp::Dequantize => return None,
        };
        Some(v.expect("params serialize"))
    }

    fn from_json(kind: LayerType, params: Option<Value>) -> std::result::Result<Self, String> {
        fn parse<T: serde::de::DeserializeOwned>(p: Option<Value>) -> std::result::Result<T, String> {
            let p = p.ok_or("missing params")?;
            serde_json::from_value(p).map_err(|e| format!("bad params: {e}"))
        }
        let no_params = |p: Option<Value>| match p {
            None => Ok(()),
            Some(Value::Object(m)) if m.is_empty() => Ok(()),
            Some(_) => Err(format!("{kind} takes no params")),
        };
        Ok(match kind {
            LayerType::Conv2D => LayerOp::Conv2D(parse(params)?),
            LayerType::DepthwiseConv2D => LayerOp::DepthwiseConv2D(parse(params)?),
            LayerType::FullyConnected => LayerOp::FullyConnected(params.map_or(Ok(FcParams::default()), |p| parse(Some(p)))?),
            LayerType::AveragePool2D => LayerOp::AveragePool2D(parse(params)?),
            LayerType::Pad => LayerOp::Pad(parse(params)?),
            LayerType::Add => LayerOp::Add(parse(params)?),
            LayerType::Mean => no_params(params).map(|_| LayerOp::Mean)?,
            LayerType::Softmax => no_params(params).map(|_| LayerOp::Softmax)?,
            LayerType::Quantize => no_params(params).map(|_| LayerOp::Quantize)?,
            LayerType::Dequantize => no_params(params).map(|_| LayerOp::Dequantize)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub index: usize,
    pub op: LayerOp,
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
    /// Quantization of this layer's output activation. `None` on float
    /// layers; on AveragePool2D/Pad/Mean it means "same as the input".
    pub output_quant: Option<QuantParams>,
}

impl Layer {
    pub fn new(index: usize, op: LayerOp) -> Self {
        Layer { index, op, weights: None, bias: None, output_quant: None }
    }

    pub fn with_weights(mut self, weights: Tensor, bias: Option<Tensor>) -> Self {
        self.weights = Some(weights);
        self.bias = bias;
        self
    }

    pub fn with_output_quant(mut self, qp: QuantParams) -> Self {
        self.output_quant = Some(qp);
        self
    }

    pub fn layer_type(&self) -> LayerType {
        self.op.layer_type()
    }
}

/// Static description of a tensor flowing through the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorInfo {
    pub shape: Vec<usize>,
    pub dtype: DType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantParams>,
}

impl TensorInfo {
    pub fn f32(shape: Vec<usize>) -> Self {
        TensorInfo { shape, dtype: DType::F32, quant: None }
    }

    pub fn of(t: &Tensor) -> Self {
        TensorInfo { shape: t.shape().to_vec(), dtype: t.dtype(), quant: t.quant().cloned() }
    }

    pub fn byte_len(&self) -> usize {
        num_elements(&self.shape) * self.dtype.size_bytes()
    }
}

/// A validated single-input, single-output layer graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    name: String,
    input: TensorInfo,
    layers: Vec<Layer>,
    output: usize,
    infos: Vec<TensorInfo>,
}

fn shape_err<T>(layer: usize, msg: impl Into<String>) -> Result<T> {
    Err(RuntimeError::Shape { layer, msg: msg.into() })
}

fn spatial_out(extent: usize, pad_a: usize, pad_b: usize, k: usize, stride: usize) -> Option<usize> {
    let padded = extent + pad_a + pad_b;
    if k == 0 || stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

fn activation_dtype(layer: usize, qp: Option<&QuantParams>) -> Result<(DType, Option<QuantParams>)> {
    let qp = qp.ok_or(RuntimeError::MissingQuant { layer, what: "output activation" })?;
    if qp.is_per_channel() {
        return shape_err(layer, "output activations must use per-tensor quantization");
    }
    let dtype = if qp.scheme == QuantScheme::PerTensorAffine { DType::U8 } else { DType::I8 };
    Ok((dtype, Some(qp.clone())))
}

fn check_weight_quant(layer: usize, w: &Tensor, axis: usize) -> Result<()> {
    let qp = w.quant().ok_or(RuntimeError::MissingQuant { layer, what: "weights" })?;
    match (qp.scheme, qp.channel_axis) {
        (QuantScheme::PerTensorSymmetric, _) => Ok(()),
        (QuantScheme::PerChannelSymmetric, Some(a)) if a == axis => Ok(()),
        _ => shape_err(layer, format!("weights must be symmetric int8, per-tensor or per-channel on axis {axis}")),
    }
}

fn check_bias(layer: usize, bias: Option<&Tensor>, channels: usize, quantized: bool) -> Result<()> {
    let Some(b) = bias else { return Ok(()) };
    if b.shape() != [channels] {
        return shape_err(layer, format!("bias shape {:?} should be [{channels}]", b.shape()));
    }
    let want = if quantized { DType::I32 } else { DType::F32 };
    if b.dtype() != want {
        return shape_err(layer, format!("bias dtype {:?} should be {want:?}", b.dtype()));
    }
    Ok(())
}

/// Output description of `layer` given its input(s).
pub(crate) fn infer_layer(layer: &Layer, input: &TensorInfo, other: Option<&TensorInfo>) -> Result<TensorInfo> {
    let i = layer.index;
    let quantized = input.dtype.is_quantized();
    if quantized && input.quant.is_none() {
        return Err(RuntimeError::MissingQuant { layer: i, what: "input activation" });
    }
    let needs_hwc = |what: &str| -> Result<(usize, usize, usize)> {
        match input.shape.as_slice() {
            &[h, w, c] => Ok((h, w, c)),
            s => shape_err(i, format!("{what} expects an [H, W, C] input, got {s:?}")),
        }
    };
    let float_only_quant = |layer: &Layer| -> Result<()> {
        if layer.output_quant.is_some() {
            return shape_err(i, "float layer carries output quantization");
        }
        Ok(())
    };
    if !layer.layer_type().has_weights() && (layer.weights.is_some() || layer.bias.is_some()) {
        return shape_err(i, format!("{} takes no weights", layer.layer_type()));
    }
    if input.dtype == DType::I32 {
        return shape_err(i, "I32 activations are not supported");
    }
    match &layer.op {
        LayerOp::Conv2D(p) | LayerOp::DepthwiseConv2D(p) => {
            let depthwise = matches!(layer.op, LayerOp::DepthwiseConv2D(_));
            let (h, w, c) = needs_hwc("convolution")?;
            let wt = layer
                .weights
                .as_ref()
                .ok_or_else(|| RuntimeError::Load { layer: Some(i), msg: "missing weights".into() })?;
            let (cout, kh, kw) = if depthwise {
                match wt.shape() {
                    &[kh, kw, wc] if wc == c => (c, kh, kw),
                    s => return shape_err(i, format!("depthwise weights {s:?} should be [KH, KW, {c}]")),
                }
            } else {
                match wt.shape() {
                    &[co, kh, kw, ci] if ci == c => (co, kh, kw),
                    s => return shape_err(i, format!("conv weights {s:?} should be [Cout, KH, KW, {c}]")),
                }
            };
            let oh = spatial_out(h, p.padding.top, p.padding.bottom, kh, p.stride[0]);
            let ow = spatial_out(w, p.padding.left, p.padding.right, kw, p.stride[1]);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return shape_err(i, format!("kernel {kh}x{kw} / stride {:?} does not fit input {h}x{w}", p.stride));
            };
            check_bias(i, layer.bias.as_ref(), cout, quantized)?;
            let shape = vec![oh, ow, cout];
            if quantized {
                if wt.dtype() != DType::I8 {
                    return shape_err(i, "int8 path needs I8 weights");
                }
                check_weight_quant(i, wt, if depthwise { 2 } else { 0 })?;
                let (dtype, quant) = activation_dtype(i, layer.output_quant.as_ref())?;
                Ok(TensorInfo { shape, dtype, quant })
            } else {
                float_only_quant(layer)?;
                if wt.dtype() != DType::F32 {
                    return shape_err(i, "float path needs F32 weights");
                }
                Ok(TensorInfo::f32(shape))
            }
        }
        LayerOp::FullyConnected(_) => {
            let k = num_elements(&input.shape);
            let wt = layer
                .weights
                .as_ref()
                .ok_or_else(|| RuntimeError::Load { layer: Some(i), msg: "missing weights".into() })?;
            let cout = match wt.shape() {
                &[co, wk] if wk == k => co,
                s => return shape_err(i, format!("fully-connected weights {s:?} should be [Cout, {k}]")),
            };
            check_bias(i, layer.bias.as_ref(), cout, quantized)?;
            if quantized {
                if wt.dtype() != DType::I8 {
                    return shape_err(i, "int8 path needs I8 weights");
                }
                check_weight_quant(i, wt, 0)?;
                let (dtype, quant) = activation_dtype(i, layer.output_quant.as_ref())?;
                Ok(TensorInfo { shape: vec![cout], dtype, quant })
            } else {
                float_only_quant(layer)?;
                if wt.dtype() != DType::F32 {
                    return shape_err(i, "float path needs F32 weights");
                }
                Ok(TensorInfo::f32(vec![cout]))
            }
        }
        LayerOp::AveragePool2D(p) => {
            let (h, w, c) = needs_hwc("average pool")?;
            if p.window[0] > h + p.padding.top + p.padding.bottom || p.window[1] > w + p.padding.left + p.padding.right {
                return shape_err(i, format!("pool window {:?} larger than padded input {h}x{w}", p.window));
            }
            if p.padding.top >= p.window[0] || p.padding.bottom >= p.window[0] || p.padding.left >= p.window[1] || p.padding.right >= p.window[1] {
                return shape_err(i, "pool padding must be smaller than the window");
            }
            let oh = spatial_out(h, p.padding.top, p.padding.bottom, p.window[0], p.stride[0]);
            let ow = spatial_out(w, p.padding.left, p.padding.right, p.window[1], p.stride[1]);
            let (Some(oh), Some(ow)) = (oh, ow) else { return shape_err(i, "invalid pool geometry") };
            passthrough_quant(layer, input, vec![oh, ow, c], true)
        }
        LayerOp::Mean => {
            let (_, _, c) = needs_hwc("mean")?;
            passthrough_quant(layer, input, vec![1, 1, c], true)
        }
        LayerOp::Pad(p) => {
            let (h, w, c) = needs_hwc("pad")?;
            let shape = vec![h + p.padding.top + p.padding.bottom, w + p.padding.left + p.padding.right, c];
            if layer.output_quant.is_some() && layer.output_quant.as_ref() != input.quant.as_ref() {
                return shape_err(i, "pad cannot requantize");
            }
            passthrough_quant(layer, input, shape, false)
        }
        LayerOp::Add(p) => {
            let other = other.ok_or_else(|| RuntimeError::Load { layer: Some(i), msg: format!("add operand {} unavailable", p.other) })?;
            if other.shape != input.shape {
                return shape_err(i, format!("add operands disagree: {:?} vs {:?}", input.shape, other.shape));
            }
            if other.dtype.is_quantized() != quantized {
                return shape_err(i, "add operands mix float and quantized tensors");
            }
            if quantized {
                let (dtype, quant) = activation_dtype(i, layer.output_quant.as_ref())?;
                Ok(TensorInfo { shape: input.shape.clone(), dtype, quant })
            } else {
                float_only_quant(layer)?;
                Ok(TensorInfo::f32(input.shape.clone()))
            }
        }
        LayerOp::Softmax => {
            if input.shape.is_empty() {
                return shape_err(i, "softmax needs at least one axis");
            }
            if quantized {
                let (dtype, quant) = activation_dtype(i, layer.output_quant.as_ref())?;
                Ok(TensorInfo { shape: input.shape.clone(), dtype, quant })
            } else {
                float_only_quant(layer)?;
                Ok(TensorInfo::f32(input.shape.clone()))
            }
        }
        LayerOp::Quantize => {
            if quantized {
                return shape_err(i, "quantize expects a float input");
            }
            match &layer.output_quant {
                None => Ok(TensorInfo::f32(input.shape.clone())),
                Some(_) => {
                    let (dtype, quant) = activation_dtype(i, layer.output_quant.as_ref())?;
                    Ok(TensorInfo { shape: input.shape.clone(), dtype, quant })
                }
            }
        }
        LayerOp::Dequantize => {
            if layer.output_quant.is_some() {
                return shape_err(i, "dequantize output is float");
            }
            Ok(TensorInfo::f32(input.shape.clone()))
        }
    }
}

fn passthrough_quant(layer: &Layer, input: &TensorInfo, shape: Vec<usize>, may_requantize: bool) -> Result<TensorInfo> {
    if !input.dtype.is_quantized() {
        if layer.output_quant.is_some() {
            return shape_err(layer.index, "float layer carries output quantization");
        }
        return Ok(TensorInfo::f32(shape));
    }
    match (&layer.output_quant, may_requantize) {
        (Some(qp), true) => {
            let (dtype, quant) = activation_dtype(layer.index, Some(qp))?;
            if dtype != input.dtype {
                return shape_err(layer.index, "requantization cannot change the storage type");
            }
            Ok(TensorInfo { shape, dtype, quant })
        }
        _ => Ok(TensorInfo { shape, dtype: input.dtype, quant: input.quant.clone() }),
    }
}

impl Graph {
    pub fn new(name: impl Into<String>, input: TensorInfo, layers: Vec<Layer>, output: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(RuntimeError::Load { layer: None, msg: "graph has no layers".into() });
        }
        if input.dtype.is_quantized() != input.quant.is_some() {
            return Err(RuntimeError::Load { layer: None, msg: "graph input quantization does not match its dtype".into() });
        }
        let mut infos: Vec<TensorInfo> = Vec::with_capacity(layers.len());
        for (pos, layer) in layers.iter().enumerate() {
            if layer.index != pos {
                return Err(RuntimeError::Load {
                    layer: Some(layer.index),
                    msg: format!("layer indices must be dense and ordered (expected {pos})"),
                });
            }
            let other = match layer.op {
                LayerOp::Add(p) => {
                    if p.other >= pos {
                        return Err(RuntimeError::Load {
                            layer: Some(pos),
                            msg: format!("add references layer {} which is not strictly earlier", p.other),
                        });
                    }
                    Some(&infos[p.other])
                }
                _ => None,
            };
            let prev = if pos == 0 { &input } else { &infos[pos - 1] };
            let info = infer_layer(layer, prev, other)?;
            infos.push(info);
        }
        if output >= layers.len() {
            return Err(RuntimeError::Load { layer: None, msg: format!("output index {output} out of range") });
        }
        Ok(Graph { name: name.into(), input, layers, output, infos })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input(&self) -> &TensorInfo {
        &self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_index(&self) -> usize {
        self.output
    }

    /// Inferred output description of every layer.
    pub fn layer_infos(&self) -> &[TensorInfo] {
        &self.infos
    }

    pub fn layer_types(&self) -> Vec<LayerType> {
        self.layers.iter().map(Layer::layer_type).collect()
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// True when any layer runs the integer path.
    pub fn is_quantized(&self) -> bool {
        self.input.dtype.is_quantized() || self.infos.iter().any(|i| i.dtype.is_quantized())
    }

    pub fn weight_bytes(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .map(Tensor::byte_len)
            .sum()
    }

    /// Index of the last layer that reads each layer's output.
    pub(crate) fn last_uses(&self) -> Vec<usize> {
        let n = self.layers.len();
        let mut last: Vec<usize> = (0..n).map(|i| (i + 1).min(n - 1)).collect();
        for l in &self.layers {
            if let LayerOp::Add(p) = l.op {
                last[p.other] = last[p.other].max(l.index);
            }
        }
        last[self.output] = n;
        last
    }

    /// Peak bytes of simultaneously live activations plus all weight bytes.
    pub fn analytic_memory_bytes(&self) -> usize {
        let last = self.last_uses();
        let mut peak = 0;
        for step in 0..self.layers.len() {
            let input_live = if step == 0 { self.input.byte_len() } else { 0 };
            let live: usize = (0..=step).filter(|&j| last[j] >= step).map(|j| self.infos[j].byte_len()).sum();
            peak = peak.max(live + input_live);
        }
        peak + self.weight_bytes()
    }

    fn to_model_json<'a>(&'a self) -> (ModelJson, Vec<(String, &'a Tensor)>) {
        let mut blobs = Vec::new();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let mut blob = |t: &'a Option<Tensor>, what: &str| {
                    t.as_ref().map(|t| {
                        let rel = format!("blobs/{:03}_{what}.ten", l.index);
                        blobs.push((rel.clone(), t));
                        rel
                    })
                };
                let weights = blob(&l.weights, "weights");
                let bias = blob(&l.bias, "bias");
                LayerJson {
                    index: l.index,
                    kind: l.layer_type(),
                    params: l.op.params_json(),
                    weights,
                    bias,
                    output_quant: l.output_quant.clone(),
                }
            })
            .collect();
        (ModelJson { name: self.name.clone(), input: self.input.clone(), output: self.output, layers }, blobs)
    }

    /// Write `model.json` and `blobs/` into `dir`; returns the model.json path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let io = |p: &Path, e: std::io::Error| RuntimeError::Io { path: p.display().to_string(), msg: e.to_string() };
        std::fs::create_dir_all(dir.join("blobs")).map_err(|e| io(dir, e))?;
        let (json, blobs) = self.to_model_json();
        for (rel, t) in blobs {
            write_ten(&dir.join(rel), t).map_err(|e| RuntimeError::Blob { path: dir.display().to_string(), msg: e.to_string() })?;
        }
        let path = dir.join("model.json");
        let text = serde_json::to_string_pretty(&json).expect("model serializes");
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        Ok(path)
    }

    /// SHA-256 over the model description and every weight blob.
    pub fn content_hash(&self) -> String {
        let (json, blobs) = self.to_model_json();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&json).expect("model serializes"));
        for (rel, t) in blobs {
            h.update(rel.as_bytes());
            h.update(encode_ten(t));
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    name: String,
    input: TensorInfo,
    output: usize,
    layers: Vec<LayerJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerJson {
    index: usize,
    #[serde(rename = "type")]
    kind: LayerType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_quant: Option<QuantParams>,
}

/// Load a graph from `model.json`; blob paths resolve relative to its directory.
pub fn load_graph(model_json: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(model_json)
        .map_err(|e| RuntimeError::Io { path: model_json.display().to_string(), msg: e.to_string() })?;
    let base = model_json.parent().unwrap_or(Path::new("."));
    parse_graph(&text, base)
}

pub(crate) fn parse_graph(text: &str, base: &Path) -> Result<Graph> {
    let json: ModelJson = serde_json::from_str(text).map_err(|e| RuntimeError::Json(e.to_string()))?;
    let mut cache: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut load_blob = |layer: usize, rel: &Option<String>| -> Result<Option<Tensor>> {
        let Some(rel) = rel else { return Ok(None) };
        if let Some(t) = cache.get(rel) {
            return Ok(Some(t.clone()));
        }
        let t = read_ten(&base.join(rel)).map_err(|e| RuntimeError::Load { layer: Some(layer), msg: format!("blob {rel}: {e}") })?;
        cache.insert(rel.clone(), t.clone());
        Ok(Some(t))
    };
    let mut layers = Vec::with_capacity(json.layers.len());
    for lj in json.layers {
        let op = LayerOp::from_json(lj.kind, lj.params).map_err(|msg| RuntimeError::Load { layer: Some(lj.index), msg })?;
        let weights = load_blob(lj.index, &lj.weights)?;
        let bias = load_blob(lj.index, &lj.bias)?;
        layers.push(Layer { index: lj.index, op, weights, bias, output_quant: lj.output_quant });
    }
    Graph::new(json.name, json.input, layers, json.output)
}
