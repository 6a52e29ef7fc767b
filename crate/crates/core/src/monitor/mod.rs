//! Trace capture: records, manifest, the writing session and the reader.
//!
//! A trace directory holds `manifest.json`, `records.jsonl` (one JSON record
//! per line) and `blobs/NNNNNN.ten`.

mod reader;
mod session;

pub use reader::{read_trace, Trace};
pub use session::{MonitorSession, Payload};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::PipelineSpec;
use crate::runtime::{Capture, FaultSpec, KernelKind, LayerType};
use crate::tensor::TensorError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const BLOB_DIR: &str = "blobs";

/// Well-known record keys.
pub mod keys {
    pub const RAW_INPUT: &str = "raw_input";
    pub const PREPROC_OUT: &str = "preproc_out";
    pub const LABEL: &str = "label";
    pub const OUTPUT: &str = "output";
    pub const INFERENCE: &str = "inference";
    pub const LAYER_OUTPUT: &str = "layer_output";
    pub const LAYER_LATENCY: &str = "layer_latency";
    pub const SENSOR_QUIET: &str = "sensor_quiet";
}

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("{path} line {line}: {msg}")]
    Malformed { path: String, line: usize, msg: String },
    #[error("record references missing blob {path}")]
    MissingBlob { path: String },
    #[error("hook order violated: {0}")]
    HookOrder(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("session is closed after an earlier write failure")]
    Poisoned,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = MonitorError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> MonitorError {
    MonitorError::Io { path: path.display().to_string(), msg: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    Input,
    Output,
    LayerOutput,
    Latency,
    Sensor,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub seq: u64,
    pub frame_id: String,
    pub key: String,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_start_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl TraceRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let payloads = [self.blob.is_some(), self.scalar.is_some(), self.text.is_some()].iter().filter(|&&p| p).count();
        if payloads != 1 {
            return Err(format!("record {} must carry exactly one of blob/scalar/text", self.seq));
        }
        if self.kind == RecordKind::LayerOutput && self.layer_index.is_none() {
            return Err(format!("layer output record {} lacks layer_index", self.seq));
        }
        if self.kind == RecordKind::Latency && (self.t_start_ns.is_none() || self.t_end_ns.is_none()) {
            return Err(format!("latency record {} lacks timestamps", self.seq));
        }
        Ok(())
    }

    /// Duration of a latency record.
    pub fn duration_ns(&self) -> Option<u64> {
        Some(self.t_end_ns?.saturating_sub(self.t_start_ns?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Edge,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedFrame {
    pub frame_id: String,
    pub reason: String,
}

/// Run metadata written next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub role: Role,
    pub model_name: String,
    pub model_hash: String,
    pub pipeline_hash: String,
    pub pipeline: Option<PipelineSpec>,
    pub resolver: KernelKind,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    pub device: String,
    pub capture: Capture,
    /// Wall-clock time (Unix ns) at which the monotonic anchor was taken.
    pub wall_clock_start_unix_ns: u64,
    /// Monotonic reading taken at the same instant as the wall-clock anchor.
    pub monotonic_anchor_ns: u64,
    /// Layer type at every index of the executed graph.
    pub layer_types: Vec<LayerType>,
    pub partial: bool,
    #[serde(default)]
    pub skipped_frames: Vec<SkippedFrame>,
}

impl Manifest {
    pub fn new(role: Role, graph: &crate::runtime::Graph, pipeline: Option<&PipelineSpec>, resolver: &crate::runtime::KernelResolver) -> Self {
        let now_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        Manifest {
            role,
            model_name: graph.name().to_string(),
            model_hash: graph.content_hash(),
            pipeline_hash: pipeline.map(pipeline_hash).unwrap_or_default(),
            pipeline: pipeline.cloned(),
            resolver: resolver.kind,
            faults: resolver.faults.clone(),
            device: default_device(),
            capture: Capture::OutputOnly,
            wall_clock_start_unix_ns: now_unix,
            monotonic_anchor_ns: crate::clock::monotonic_ns(),
            layer_types: graph.layer_types(),
            partial: true,
            skipped_frames: Vec::new(),
        }
    }
}

pub fn pipeline_hash(spec: &PipelineSpec) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(serde_json::to_vec(spec).expect("spec serializes")))
}

fn default_device() -> String {
    format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH)
}
