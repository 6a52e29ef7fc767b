//! `exray`: record edge inference traces, replay them through a reference
//! pipeline and validate the two against each other.
//!
//! Exit codes: 0 clean, 1 validation findings, 2 usage or I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use exray_core::imgproc::{read_ppm, run_pipeline, PipelineSpec};
use exray_core::replay::{list_images, playback_dataset, read_labels, replay, RunOptions};
use exray_core::runtime::{load_graph, quantize_graph, Capture, FaultSpec, Graph, KernelKind, KernelResolver, QuantizeOptions};
use exray_core::tensor::{read_ten, Tensor};
use exray_core::validator::{read_assertion_list, run_validation, ValidationOptions, Verdict};

#[derive(Parser)]
#[command(name = "exray", version, about = "Edge inference tracing, reference replay and validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kernels {
    Reference,
    Optimized,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    #[value(name = "per_tensor")]
    PerTensor,
    #[value(name = "per_channel")]
    PerChannel,
}

#[derive(Subcommand)]
enum Command {
    /// Run every PPM image in a directory through a pipeline and model, writing a trace.
    Run {
        /// model.json, or the directory holding it
        #[arg(long)]
        model: PathBuf,
        /// Preprocessing spec (JSON)
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        /// Lines of `<filename> <class_index>`
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "optimized")]
        kernels: Kernels,
        /// `accum=wrap|narrow@TARGET`, `requant=truncate@TARGET` or `slow=K@TARGET`,
        /// where TARGET is a layer index or a layer type
        #[arg(long = "fault", value_parser = parse_fault)]
        faults: Vec<FaultSpec>,
        /// Log every layer's output and latency
        #[arg(long)]
        per_layer: bool,
        /// Device name stored in the manifest
        #[arg(long)]
        device: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-training full-integer quantization of a float model.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        /// Calibration inputs: `.ten` tensors, or PPM images preprocessed with --pipeline
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, value_enum)]
        scheme: Scheme,
        #[arg(long)]
        pipeline: Option<PathBuf>,
        /// Output directory for model.json and blobs
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay the raw inputs of an edge trace through a reference model and pipeline.
    Replay {
        #[arg(long)]
        edge: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        per_layer: bool,
        /// Accept a quantized reference model
        #[arg(long)]
        allow_int8: bool,
        /// Worker threads
        #[arg(long, env = "EXRAY_THREADS", default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare an edge trace with a reference trace and write a JSON report.
    Validate {
        #[arg(long)]
        edge: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// File listing assertion executables, one per line
        #[arg(long)]
        assertions: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        jump_delta: f64,
        #[arg(long, default_value_t = 3.0)]
        jump_ratio: f64,
        /// Layer comparison runs when top-1 agreement is below this
        #[arg(long, default_value_t = 0.99)]
        agreement_threshold: f64,
        /// Compare layers even when agreement is high
        #[arg(long)]
        force_layer_diff: bool,
        #[arg(long, default_value_t = 5.0)]
        straggler_factor: f64,
        #[arg(long)]
        report: PathBuf,
    },
}

fn parse_fault(s: &str) -> Result<FaultSpec, String> {
    s.parse()
}

fn model_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("model.json")
    } else {
        p.to_path_buf()
    }
}

fn load_model(p: &Path) -> Result<Graph> {
    load_graph(&model_path(p)).with_context(|| format!("loading model {}", p.display()))
}

fn load_pipeline(p: &Path) -> Result<PipelineSpec> {
    PipelineSpec::load(p).with_context(|| format!("loading pipeline {}", p.display()))
}

fn capture(per_layer: bool) -> Capture {
    if per_layer {
        Capture::PerLayer
    } else {
        Capture::OutputOnly
    }
}

fn calibration_set(dir: &Path, pipeline: Option<&Path>) -> Result<Vec<Tensor>> {
    let mut tens: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ten"))
        .collect();
    tens.sort();
    let mut out: Vec<Tensor> = tens.iter().map(|p| read_ten(p).with_context(|| p.display().to_string())).collect::<Result<_>>()?;
    let images = list_images(dir)?;
    if !images.is_empty() {
        let Some(spec) = pipeline else { bail!("{} holds images; pass --pipeline to preprocess them", dir.display()) };
        let spec = load_pipeline(spec)?;
        for p in images {
            let img = read_ppm(&p)?;
            out.push(run_pipeline(&img, &spec)?);
        }
    }
    if out.is_empty() {
        bail!("no calibration inputs (.ten or .ppm) in {}", dir.display());
    }
    Ok(out)
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { model, pipeline, inputs, labels, kernels, faults, per_layer, device, out } => {
            let graph = load_model(&model)?;
            let spec = load_pipeline(&pipeline)?;
            let kind = match kernels {
                Kernels::Reference => KernelKind::Reference,
                Kernels::Optimized => KernelKind::Optimized,
            };
            let resolver = faults.into_iter().fold(KernelResolver::new(kind), KernelResolver::with_fault);
            let opts = RunOptions { capture: capture(per_layer), device, ..RunOptions::default() };
            let s = playback_dataset(&inputs, labels.as_deref(), &graph, &spec, &resolver, &out, &opts)?;
            println!("wrote {} frames to {} ({} skipped)", s.frames, out.display(), s.skipped.len());
        }
        Command::Quantize { model, calib, scheme, pipeline, out } => {
            let graph = load_model(&model)?;
            let samples = calibration_set(&calib, pipeline.as_deref())?;
            let per_channel = matches!(scheme, Scheme::PerChannel);
            let q = quantize_graph(&graph, &samples, QuantizeOptions { per_channel })?;
            for (layer, w) in &q.warnings {
                log::warn!("layer {layer}: {w}");
            }
            let path = q.graph.save(&out)?;
            println!("wrote {} ({} calibration inputs)", path.display(), samples.len());
        }
        Command::Replay { edge, model, pipeline, per_layer, allow_int8, threads, out } => {
            let graph = load_model(&model)?;
            let spec = load_pipeline(&pipeline)?;
            let opts = RunOptions { capture: capture(per_layer), allow_int8, threads: threads.max(1), device: None };
            let s = replay(&edge, &graph, &spec, &out, &opts)?;
            println!("replayed {} frames to {} ({} skipped)", s.frames, out.display(), s.skipped.len());
        }
        Command::Validate {
            edge,
            reference,
            labels,
            assertions,
            jump_delta,
            jump_ratio,
            agreement_threshold,
            force_layer_diff,
            straggler_factor,
            report,
        } => {
            let opts = ValidationOptions {
                labels: labels.as_deref().map(read_labels).transpose()?,
                agreement_threshold,
                force_layer_diff,
                jump_delta,
                jump_ratio,
                straggler_factor,
                external_assertions: assertions.as_deref().map(read_assertion_list).transpose()?.unwrap_or_default(),
                ..ValidationOptions::default()
            };
            let r = run_validation(&edge, &reference, &opts)?;
            std::fs::write(&report, r.to_json()).with_context(|| format!("writing {}", report.display()))?;
            let s = &r.summary;
            println!("frames compared: {}", s.frames_compared);
            println!("top-1 agreement: {:.4}", s.agreement);
            match &s.divergence {
                Some(d) => println!("divergence: {d}"),
                None => println!("divergence: none"),
            }
            if let Some(msg) = &s.structural_difference {
                println!("structural difference: {msg}");
            }
            for a in r.assertions.iter().filter(|a| a.verdict == Verdict::Fail) {
                println!("assertion {} failed: {}", a.name, a.cause().unwrap_or("see report"));
            }
            for l in &r.latency.stragglers {
                println!("straggler: layer {} ({}) {:.1}x its reference share", l.layer_index, l.layer_type, l.ratio);
            }
            for e in &s.errors {
                println!("incomplete: {e}");
            }
            if r.has_findings() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
