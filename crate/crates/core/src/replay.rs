//! Dataset playback (edge runs) and faithful replay of logged raw inputs
//! through a reference pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::clock::monotonic_ns;
use crate::imgproc::{read_ppm, run_pipeline, Image, ImageError, PipelineSpec};
use crate::monitor::{keys, read_trace, Manifest, MonitorError, MonitorSession, Payload, Role, SkippedFrame};
use crate::runtime::{infer, Capture, Graph, InferenceResult, KernelResolver, RuntimeError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("reference graph `{0}` is quantized; pass the int8 flag to replay through it")]
    Int8Reference(String),
    #[error("{path} line {line}: {msg}")]
    Labels { path: String, line: usize, msg: String },
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("thread pool: {0}")]
    Threads(String),
}

pub type Result<T, E = ReplayError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub capture: Capture,
    /// Replay through a quantized reference graph.
    pub allow_int8: bool,
    /// Worker threads for frame processing; 1 keeps every frame on the calling thread.
    pub threads: usize,
    pub device: Option<String>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { capture: Capture::OutputOnly, allow_int8: false, threads: 1, device: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub skipped: Vec<SkippedFrame>,
    pub warnings: Vec<String>,
}

/// Parse a labels file: one `<filename> <class_index>` per line; blank lines and `#` comments ignored.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| ReplayError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| ReplayError::Labels { path: path.display().to_string(), line: n + 1, msg: msg.to_string() };
        let mut parts = line.split_whitespace();
        let (Some(name), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected `<filename> <class_index>`"));
        };
        let class: usize = class.parse().map_err(|_| bad("class index is not a non-negative integer"))?;
        out.insert(name.to_string(), class);
    }
    Ok(out)
}

/// PPM files of `dir` in lexicographic filename order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |e: std::io::Error| ReplayError::Io { path: dir.display().to_string(), msg: e.to_string() };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

struct FrameResult {
    preproc: Tensor,
    result: InferenceResult,
    t_start: u64,
    t_end: u64,
}

fn process(img: &Image, graph: &Graph, pipeline: &PipelineSpec, resolver: &KernelResolver, capture: Capture) -> Result<FrameResult> {
    let preproc = run_pipeline(img, pipeline)?;
    let t_start = monotonic_ns();
    let result = infer(graph, &preproc, resolver, capture)?;
    let t_end = monotonic_ns();
    Ok(FrameResult { preproc, result, t_start, t_end })
}

fn manifest_for(role: Role, graph: &Graph, pipeline: &PipelineSpec, resolver: &KernelResolver, opts: &RunOptions) -> Manifest {
    let mut m = Manifest::new(role, graph, Some(pipeline), resolver);
    m.capture = opts.capture;
    if let Some(d) = &opts.device {
        m.device = d.clone();
    }
    m
}

/// Run every PPM image in `input_dir` through `pipeline` and `graph`,
/// logging raw inputs, labels, preprocessed tensors and inference records.
pub fn playback_dataset(
    input_dir: &Path,
    labels: Option<&Path>,
    graph: &Graph,
    pipeline: &PipelineSpec,
    resolver: &KernelResolver,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunSummary> {
    let images = list_images(input_dir)?;
    let labels = labels.map(read_labels).transpose()?.unwrap_or_default();
    let mut summary = RunSummary::default();
    let names: Vec<String> = images.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for name in labels.keys().filter(|n| !names.contains(n)) {
        let w = format!("label for unknown image `{name}` ignored");
        log::warn!("{w}");
        summary.warnings.push(w);
    }
    let mut session = MonitorSession::begin(out_dir, manifest_for(Role::Edge, graph, pipeline, resolver, opts))?;
    for (path, name) in images.iter().zip(&names) {
        let img = match read_ppm(path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                session.mark_skipped(name, e.to_string());
                summary.skipped.push(SkippedFrame { frame_id: name.clone(), reason: e.to_string() });
                continue;
            }
        };
        session.log_input(name, keys::RAW_INPUT, &img.to_tensor())?;
        if let Some(&class) = labels.get(name) {
            session.log_custom(name, keys::LABEL, Payload::Scalar(class as f64))?;
        }
        let preproc = run_pipeline(&img, pipeline)?;
        session.log_custom(name, keys::PREPROC_OUT, Payload::Tensor(&preproc))?;
        session.on_inf_start(name)?;
        let result = infer(graph, &preproc, resolver, opts.capture)?;
        session.on_inf_stop(&result)?;
        summary.frames += 1;
    }
    session.finish()?;
    Ok(summary)
}

/// Replay the raw inputs of `edge_dir` through the reference pipeline and
/// graph with the reference kernels, writing a trace to `out_dir`.
pub fn replay(edge_dir: &Path, graph: &Graph, pipeline: &PipelineSpec, out_dir: &Path, opts: &RunOptions) -> Result<RunSummary> {
    if graph.is_quantized() && !opts.allow_int8 {
        return Err(ReplayError::Int8Reference(graph.name().to_string()));
    }
    let edge = read_trace(edge_dir)?;
    let resolver = KernelResolver::reference();
    let mut session = MonitorSession::begin(out_dir, manifest_for(Role::Reference, graph, pipeline, &resolver, opts))?;
    let mut summary = RunSummary::default();

    struct Work {
        frame: String,
        raw: Tensor,
        img: Image,
        label: Option<f64>,
    }
    let mut work = Vec::new();
    for frame in edge.frame_ids() {
        let Some(rec) = edge.find(frame, keys::RAW_INPUT) else {
            let reason = "no raw input recorded".to_string();
            log::warn!("skipping frame {frame}: {reason}");
            session.mark_skipped(frame, reason.clone());
            summary.skipped.push(SkippedFrame { frame_id: frame.clone(), reason });
            continue;
        };
        let raw = edge.load_blob(rec)?;
        let img = Image::from_tensor(&raw)?;
        let label = edge.find(frame, keys::LABEL).and_then(|r| r.scalar);
        work.push(Work { frame: frame.clone(), raw, img, label });
    }

    let threads = opts.threads.max(1);
    let pool = if threads > 1 {
        Some(rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| ReplayError::Threads(e.to_string()))?)
    } else {
        None
    };
    for chunk in work.chunks(threads * 8) {
        let results: Vec<Result<FrameResult>> = match &pool {
            Some(pool) => pool.install(|| {
                chunk.par_iter().map(|w| process(&w.img, graph, pipeline, &resolver, opts.capture)).collect()
            }),
            None => chunk.iter().map(|w| process(&w.img, graph, pipeline, &resolver, opts.capture)).collect(),
        };
        for (w, r) in chunk.iter().zip(results) {
            let r = r?;
            session.log_input(&w.frame, keys::RAW_INPUT, &w.raw)?;
            if let Some(label) = w.label {
                session.log_custom(&w.frame, keys::LABEL, Payload::Scalar(label))?;
            }
            session.log_custom(&w.frame, keys::PREPROC_OUT, Payload::Tensor(&r.preproc))?;
            session.log_inference(&w.frame, r.t_start, r.t_end, &r.result)?;
            summary.frames += 1;
        }
    }
    session.finish()?;
    Ok(summary)
}
