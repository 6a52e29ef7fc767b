use serde::{Deserialize, Serialize};

use super::{Aligned, Result, ValidationError};
use crate::monitor::{keys, Trace};
use crate::runtime::Capture;

/// Edge-vs-reference error of one layer, pooled over all frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDivergence {
    /// `None` for the model input tensor.
    pub layer_index: Option<usize>,
    pub layer_type: String,
    pub elements: usize,
    pub rmse: f64,
    /// Reference output range, max minus min.
    pub scale: f64,
    /// `rmse / scale`; absent when the reference output is constant.
    pub rmse_hat: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Default)]
struct Accum {
    sse: f64,
    n: usize,
    lo: f64,
    hi: f64,
}

impl Accum {
    fn new() -> Self {
        Accum { sse: 0.0, n: 0, lo: f64::INFINITY, hi: f64::NEG_INFINITY }
    }

    fn add(&mut self, edge: &[f32], reference: &[f32]) {
        for (&e, &r) in edge.iter().zip(reference) {
            let d = e as f64 - r as f64;
            self.sse += d * d;
            self.lo = self.lo.min(r as f64);
            self.hi = self.hi.max(r as f64);
        }
        self.n += edge.len();
    }

    fn finish(self, layer_index: Option<usize>, layer_type: String) -> LayerDivergence {
        let rmse = if self.n == 0 { 0.0 } else { (self.sse / self.n as f64).sqrt() };
        let scale = if self.n == 0 { 0.0 } else { self.hi - self.lo };
        let degenerate = !(scale > 0.0);
        LayerDivergence {
            layer_index,
            layer_type,
            elements: self.n,
            rmse,
            scale,
            rmse_hat: (!degenerate).then(|| rmse / scale),
            degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerComparison {
    /// Divergence of the preprocessed model input, when both traces logged it.
    pub input: Option<LayerDivergence>,
    pub layers: Vec<LayerDivergence>,
}

fn layer_values(trace: &Trace, frame: &str, count: usize, side: &str) -> Result<Vec<Vec<f32>>> {
    let recs = trace.layer_outputs(frame);
    if recs.len() != count || recs.iter().enumerate().any(|(i, r)| r.layer_index != Some(i)) {
        return Err(ValidationError::Structural(format!(
            "frame `{frame}` has {} layer outputs in the {side} trace, expected {count}",
            recs.len()
        )));
    }
    recs.iter().map(|r| Ok(trace.load_blob(r)?.to_f32_vec())).collect()
}

/// Per-layer RMSE between edge and reference outputs, with quantized outputs
/// dequantized first and the normalizing range taken from the reference.
pub fn per_layer_rmse(aligned: &Aligned) -> Result<LayerComparison> {
    let (edge, reference) = (aligned.edge, aligned.reference);
    if edge.manifest().capture != Capture::PerLayer {
        return Err(ValidationError::MissingLayerCapture("edge"));
    }
    if reference.manifest().capture != Capture::PerLayer {
        return Err(ValidationError::MissingLayerCapture("reference"));
    }
    let (et, rt) = (&edge.manifest().layer_types, &reference.manifest().layer_types);
    if et.len() != rt.len() {
        return Err(ValidationError::Structural(format!(
            "edge graph has {} layers, reference graph has {}",
            et.len(),
            rt.len()
        )));
    }
    if let Some(i) = et.iter().zip(rt).position(|(a, b)| a != b) {
        return Err(ValidationError::Structural(format!("layer {i} is {} on the edge but {} in the reference", et[i], rt[i])));
    }
    let mut accs: Vec<Accum> = (0..et.len()).map(|_| Accum::new()).collect();
    let mut input = Some(Accum::new());
    for f in &aligned.frames {
        let ev = layer_values(edge, f, et.len(), "edge")?;
        let rv = layer_values(reference, f, rt.len(), "reference")?;
        for (i, (e, r)) in ev.iter().zip(&rv).enumerate() {
            if e.len() != r.len() {
                return Err(ValidationError::Structural(format!(
                    "layer {i} produces {} elements on the edge and {} in the reference",
                    e.len(),
                    r.len()
                )));
            }
            accs[i].add(e, r);
        }
        if let Some(acc) = input.as_mut() {
            match (edge.find(f, keys::PREPROC_OUT), reference.find(f, keys::PREPROC_OUT)) {
                (Some(a), Some(b)) => {
                    let (a, b) = (edge.load_blob(a)?.to_f32_vec(), reference.load_blob(b)?.to_f32_vec());
                    if a.len() == b.len() {
                        acc.add(&a, &b);
                    } else {
                        input = None;
                    }
                }
                _ => input = None,
            }
        }
    }
    Ok(LayerComparison {
        input: input.map(|a| a.finish(None, "Input".into())),
        layers: accs.into_iter().enumerate().map(|(i, a)| a.finish(Some(i), et[i].to_string())).collect(),
    })
}

/// Where the outputs start to diverge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Localization {
    Preprocessing,
    Layer { layer_index: usize, layer_type: String },
}

impl std::fmt::Display for Localization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Localization::Preprocessing => f.write_str("preprocessing"),
            Localization::Layer { layer_index, layer_type } => write!(f, "layer {layer_index} ({layer_type})"),
        }
    }
}

/// First position whose value rises by at least `delta` over the running
/// maximum, or reaches `ratio` times a running maximum of at least 1e-6.
/// Missing values neither fire nor raise the running maximum.
pub fn first_jump(series: &[Option<f64>], delta: f64, ratio: f64) -> Option<usize> {
    let mut prior: Option<f64> = None;
    for (i, v) in series.iter().enumerate() {
        let Some(v) = *v else { continue };
        let base = prior.unwrap_or(0.0).max(0.0);
        let by_delta = v - base >= delta;
        let by_ratio = prior.is_some_and(|p| p >= 1e-6 && v >= ratio * p);
        if by_delta || by_ratio {
            return Some(i);
        }
        prior = Some(prior.map_or(v, |p| p.max(v)));
    }
    None
}

pub fn localize_divergence(cmp: &LayerComparison, jump_delta: f64, jump_ratio: f64) -> Option<Localization> {
    let mut series = vec![cmp.input.as_ref().and_then(|d| d.rmse_hat)];
    series.extend(cmp.layers.iter().map(|d| d.rmse_hat));
    match first_jump(&series, jump_delta, jump_ratio)? {
        0 => Some(Localization::Preprocessing),
        k => {
            let d = &cmp.layers[k - 1];
            Some(Localization::Layer { layer_index: k - 1, layer_type: d.layer_type.clone() })
        }
    }
}
