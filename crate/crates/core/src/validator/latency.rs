use serde::Serialize;

use super::Aligned;
use crate::monitor::{keys, RecordKind, Trace};
use crate::runtime::LayerType;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub layer_type: String,
    pub layers: usize,
    pub edge_ns: u64,
    pub reference_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerShare {
    pub layer_index: usize,
    pub layer_type: String,
    /// Median over frames of the layer's fraction of summed layer time.
    pub edge_share: f64,
    pub reference_share: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub by_type: Vec<LatencyRow>,
    pub edge_layer_total_ns: u64,
    pub reference_layer_total_ns: u64,
    pub edge_inference_total_ns: u64,
    pub reference_inference_total_ns: u64,
    pub factor: f64,
    pub min_share: f64,
    pub layers: Vec<LayerShare>,
    pub stragglers: Vec<LayerShare>,
}

/// Per-frame layer durations, `None` when the frame lacks a complete set.
fn layer_durations(trace: &Trace, frame: &str, count: usize) -> Option<Vec<u64>> {
    let mut d = vec![None; count];
    for r in trace.find_all(frame, RecordKind::Latency).filter(|r| r.key == keys::LAYER_LATENCY) {
        let i = r.layer_index?;
        *d.get_mut(i)? = r.duration_ns();
    }
    d.into_iter().collect()
}

fn inference_ns(trace: &Trace, frame: &str) -> u64 {
    trace
        .find_all(frame, RecordKind::Latency)
        .find(|r| r.key == keys::INFERENCE)
        .and_then(|r| r.duration_ns())
        .unwrap_or(0)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

struct Side {
    per_layer_ns: Vec<u64>,
    shares: Vec<Vec<f64>>,
    inference_ns: u64,
}

fn collect(trace: &Trace, frames: &[String]) -> Side {
    let count = trace.manifest().layer_types.len();
    let mut side = Side { per_layer_ns: vec![0; count], shares: vec![Vec::new(); count], inference_ns: 0 };
    for f in frames {
        side.inference_ns += inference_ns(trace, f);
        let Some(d) = layer_durations(trace, f, count) else { continue };
        let total: u64 = d.iter().sum();
        for (i, &x) in d.iter().enumerate() {
            side.per_layer_ns[i] += x;
            if total > 0 {
                side.shares[i].push(x as f64 / total as f64);
            }
        }
    }
    side
}

/// Latency totals by layer type, and stragglers: layers whose median edge
/// share is at least `min_share` and at least `factor` times the reference share.
pub fn latency_report(aligned: &Aligned, factor: f64, min_share: f64) -> LatencyReport {
    let types = &aligned.edge.manifest().layer_types;
    let e = collect(aligned.edge, &aligned.frames);
    let r = collect(aligned.reference, &aligned.frames);
    let same_structure = types == &aligned.reference.manifest().layer_types;

    let mut by_type = Vec::new();
    for t in LayerType::ALL {
        let idx: Vec<usize> = (0..types.len()).filter(|&i| types[i] == t).collect();
        if idx.is_empty() {
            continue;
        }
        by_type.push(LatencyRow {
            layer_type: t.to_string(),
            layers: idx.len(),
            edge_ns: idx.iter().map(|&i| e.per_layer_ns[i]).sum(),
            reference_ns: if same_structure { idx.iter().map(|&i| r.per_layer_ns[i]).sum() } else { 0 },
        });
    }

    let mut layers = Vec::new();
    if same_structure {
        for (i, t) in types.iter().enumerate() {
            if e.shares[i].is_empty() || r.shares[i].is_empty() {
                continue;
            }
            let es = median(e.shares[i].clone());
            let rs = median(r.shares[i].clone());
            layers.push(LayerShare {
                layer_index: i,
                layer_type: t.to_string(),
                edge_share: es,
                reference_share: rs,
                ratio: es / rs.max(1e-9),
            });
        }
    }
    let stragglers = layers.iter().filter(|l| l.edge_share >= min_share && l.ratio >= factor).cloned().collect();
    LatencyReport {
        by_type,
        edge_layer_total_ns: e.per_layer_ns.iter().sum(),
        reference_layer_total_ns: r.per_layer_ns.iter().sum(),
        edge_inference_total_ns: e.inference_ns,
        reference_inference_total_ns: r.inference_ns,
        factor,
        min_share,
        layers,
        stragglers,
    }
}
