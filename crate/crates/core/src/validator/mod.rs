//! Edge-vs-reference trace comparison: accuracy, per-layer drift,
//! latency breakdown and root-cause assertions.

mod assertions;
mod latency;
mod layers;

pub use assertions::{
    aggregate, assert_channel_order, assert_normalization, assert_quant_resolution, assert_resize, assert_rotation,
    read_assertion_list, run_builtin_assertions, run_external_assertion, AssertionResult, Verdict,
    PREPROCESSING_ASSERTIONS,
};
pub use latency::{latency_report, LatencyReport, LatencyRow, LayerShare};
pub use layers::{first_jump, localize_divergence, per_layer_rmse, LayerComparison, LayerDivergence, Localization};

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::monitor::{keys, read_trace, MonitorError, RecordKind, Trace};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("edge and reference traces share no frames")]
    NoOverlap,
    #[error("duplicate `{key}` record for frame `{frame_id}` in the {side} trace")]
    DuplicateFrame { frame_id: String, key: String, side: &'static str },
    #[error("frame `{frame_id}` has no output record in the {side} trace")]
    MissingOutput { frame_id: String, side: &'static str },
    #[error("structural difference: {0}")]
    Structural(String),
    #[error("the {0} trace was not captured per layer")]
    MissingLayerCapture(&'static str),
    #[error("{path} line {line}: {msg}")]
    List { path: String, line: usize, msg: String },
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

pub type Result<T, E = ValidationError> = std::result::Result<T, E>;

/// Two traces paired by frame id, in edge order.
#[derive(Debug)]
pub struct Aligned<'a> {
    pub edge: &'a Trace,
    pub reference: &'a Trace,
    pub frames: Vec<String>,
    pub edge_only: Vec<String>,
    pub reference_only: Vec<String>,
}

fn check_unique(trace: &Trace, side: &'static str) -> Result<()> {
    let mut seen = HashSet::new();
    for r in trace.records() {
        if r.kind == RecordKind::Sensor {
            continue;
        }
        if !seen.insert((r.frame_id.as_str(), r.key.as_str(), r.layer_index)) {
            return Err(ValidationError::DuplicateFrame { frame_id: r.frame_id.clone(), key: r.key.clone(), side });
        }
    }
    Ok(())
}

pub fn align<'a>(edge: &'a Trace, reference: &'a Trace) -> Result<Aligned<'a>> {
    check_unique(edge, "edge")?;
    check_unique(reference, "reference")?;
    let edge_ids: HashSet<&String> = edge.frame_ids().iter().collect();
    let ref_ids: HashSet<&String> = reference.frame_ids().iter().collect();
    let frames: Vec<String> = edge.frame_ids().iter().filter(|f| ref_ids.contains(f)).cloned().collect();
    if frames.is_empty() {
        return Err(ValidationError::NoOverlap);
    }
    Ok(Aligned {
        edge,
        reference,
        frames,
        edge_only: edge.frame_ids().iter().filter(|f| !ref_ids.contains(f)).cloned().collect(),
        reference_only: reference.frame_ids().iter().filter(|f| !edge_ids.contains(f)).cloned().collect(),
    })
}

/// Index of the largest element; NaN never wins, ties go to the lowest index.
pub fn argmax(t: &Tensor) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, v) in t.to_f32_vec().into_iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn output_of(trace: &Trace, frame: &str, side: &'static str) -> Result<Tensor> {
    let rec = trace
        .find(frame, keys::OUTPUT)
        .filter(|r| r.kind == RecordKind::Output)
        .ok_or_else(|| ValidationError::MissingOutput { frame_id: frame.to_string(), side })?;
    Ok(trace.load_blob(rec)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracySummary {
    pub frames: usize,
    /// Fraction of frames where edge and reference top-1 classes agree.
    pub agreement: f64,
    pub disagreeing_frames: Vec<String>,
    pub labeled_frames: usize,
    pub edge_accuracy: Option<f64>,
    pub reference_accuracy: Option<f64>,
}

/// Top-1 agreement, plus accuracy against labels. Explicit labels win over
/// label records embedded in the traces.
pub fn accuracy_check(aligned: &Aligned, labels: Option<&BTreeMap<String, usize>>) -> Result<AccuracySummary> {
    let mut agree = 0usize;
    let mut disagreeing = Vec::new();
    let (mut labeled, mut edge_ok, mut ref_ok) = (0usize, 0usize, 0usize);
    for f in &aligned.frames {
        let e = argmax(&output_of(aligned.edge, f, "edge")?);
        let r = argmax(&output_of(aligned.reference, f, "reference")?);
        if e == r {
            agree += 1;
        } else {
            disagreeing.push(f.clone());
        }
        let label = match labels {
            Some(map) => map.get(f).copied(),
            None => [aligned.edge, aligned.reference]
                .iter()
                .find_map(|t| t.find(f, keys::LABEL).and_then(|r| r.scalar))
                .map(|v| v as usize),
        };
        if let Some(label) = label {
            labeled += 1;
            edge_ok += usize::from(e == Some(label));
            ref_ok += usize::from(r == Some(label));
        }
    }
    let n = aligned.frames.len();
    let rate = |k: usize| (labeled > 0).then(|| k as f64 / labeled as f64);
    Ok(AccuracySummary {
        frames: n,
        agreement: agree as f64 / n as f64,
        disagreeing_frames: disagreeing,
        labeled_frames: labeled,
        edge_accuracy: rate(edge_ok),
        reference_accuracy: rate(ref_ok),
    })
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub labels: Option<BTreeMap<String, usize>>,
    /// Layer comparison runs when top-1 agreement falls below this.
    pub agreement_threshold: f64,
    pub force_layer_diff: bool,
    pub jump_delta: f64,
    pub jump_ratio: f64,
    pub straggler_factor: f64,
    pub straggler_min_share: f64,
    pub external_assertions: Vec<PathBuf>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            labels: None,
            agreement_threshold: 0.99,
            force_layer_diff: false,
            jump_delta: 0.05,
            jump_ratio: 3.0,
            straggler_factor: 5.0,
            straggler_min_share: 0.01,
            external_assertions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub frames_compared: usize,
    pub edge_only_frames: Vec<String>,
    pub reference_only_frames: Vec<String>,
    pub agreement: f64,
    pub divergence: Option<Localization>,
    pub structural_difference: Option<String>,
    pub failed_assertions: Vec<String>,
    pub stragglers: Vec<usize>,
    pub findings: usize,
    /// True when a stage could not complete; see `errors`.
    pub partial: bool,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerSection {
    pub ran: bool,
    pub reason: String,
    pub jump_delta: f64,
    pub jump_ratio: f64,
    pub input: Option<LayerDivergence>,
    pub layers: Vec<LayerDivergence>,
    pub divergence: Option<Localization>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub summary: Summary,
    pub accuracy: AccuracySummary,
    pub layers: LayerSection,
    pub latency: LatencyReport,
    pub assertions: Vec<AssertionResult>,
}

impl ValidationReport {
    pub fn has_findings(&self) -> bool {
        self.summary.findings > 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn assertion(&self, name: &str) -> Option<&AssertionResult> {
        self.assertions.iter().find(|a| a.name == name)
    }
}

/// Accuracy, then layer comparison when agreement drops (or when forced),
/// then every assertion.
pub fn run_validation(edge_dir: &Path, ref_dir: &Path, opts: &ValidationOptions) -> Result<ValidationReport> {
    let edge = read_trace(edge_dir)?;
    let reference = read_trace(ref_dir)?;
    validate_traces(&edge, &reference, opts)
}

pub fn validate_traces(edge: &Trace, reference: &Trace, opts: &ValidationOptions) -> Result<ValidationReport> {
    let aligned = align(edge, reference)?;
    let accuracy = accuracy_check(&aligned, opts.labels.as_ref())?;
    let mut errors = Vec::new();
    let mut structural = None;

    let wanted = opts.force_layer_diff || accuracy.agreement < opts.agreement_threshold;
    let mut layers = LayerSection {
        ran: false,
        reason: if opts.force_layer_diff {
            "forced".into()
        } else if wanted {
            format!("agreement {:.4} below {}", accuracy.agreement, opts.agreement_threshold)
        } else {
            format!("agreement {:.4} at or above {}", accuracy.agreement, opts.agreement_threshold)
        },
        jump_delta: opts.jump_delta,
        jump_ratio: opts.jump_ratio,
        input: None,
        layers: Vec::new(),
        divergence: None,
    };
    if wanted {
        match per_layer_rmse(&aligned) {
            Ok(cmp) => {
                layers.ran = true;
                layers.divergence = localize_divergence(&cmp, opts.jump_delta, opts.jump_ratio);
                layers.input = cmp.input;
                layers.layers = cmp.layers;
            }
            Err(ValidationError::Structural(msg)) => structural = Some(msg),
            Err(e @ (ValidationError::MissingLayerCapture(_) | ValidationError::Monitor(_))) => errors.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }

    let latency = latency_report(&aligned, opts.straggler_factor, opts.straggler_min_share);

    let mut assertions = run_builtin_assertions(&aligned);
    for exe in &opts.external_assertions {
        assertions.push(run_external_assertion(exe, edge.dir(), reference.dir(), &aligned.frames));
    }

    let failed: Vec<String> =
        assertions.iter().filter(|a| a.verdict == Verdict::Fail).map(|a| a.name.clone()).collect();
    let findings = failed.len() + usize::from(layers.divergence.is_some()) + usize::from(structural.is_some());
    let summary = Summary {
        frames_compared: aligned.frames.len(),
        edge_only_frames: aligned.edge_only.clone(),
        reference_only_frames: aligned.reference_only.clone(),
        agreement: accuracy.agreement,
        divergence: layers.divergence.clone(),
        structural_difference: structural,
        failed_assertions: failed,
        stragglers: latency.stragglers.iter().map(|s| s.layer_index).collect(),
        findings,
        partial: !errors.is_empty(),
        errors,
    };
    Ok(ValidationReport { summary, accuracy, layers, latency, assertions })
}
