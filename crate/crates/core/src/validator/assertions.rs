use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Aligned, Result, ValidationError};
use crate::imgproc::{run_pipeline, ChannelOrder, Image, PipelineSpec, Resizer, Rotation};
use crate::monitor::{keys, Trace};
use crate::runtime::Capture;
use crate::tensor::Tensor;

pub const PREPROCESSING_ASSERTIONS: [&str; 4] = ["channel_order", "normalization", "resize", "rotation"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inapplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub name: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub evidence: Value,
}

impl AssertionResult {
    fn new(name: &str, verdict: Verdict, evidence: Value) -> Self {
        AssertionResult { name: name.to_string(), verdict, evidence }
    }

    fn inapplicable(name: &str, reason: impl Into<String>) -> Self {
        AssertionResult::new(name, Verdict::Inapplicable, json!({ "reason": reason.into() }))
    }

    /// Short root-cause label carried by failing verdicts.
    pub fn cause(&self) -> Option<&str> {
        self.evidence.get("cause").and_then(Value::as_str)
    }
}

fn rms_diff(a: &[f32], b: &[f32]) -> f64 {
    let sse: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    (sse / a.len().max(1) as f64).sqrt()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max)
}

const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Fails when the edge tensor is a channel permutation of the reference,
/// naming the edge order in terms of the reference order (e.g. `BGR->RGB`).
pub fn assert_channel_order(edge: &Tensor, reference: &Tensor, reference_order: ChannelOrder) -> AssertionResult {
    const NAME: &str = "channel_order";
    const TOL: f64 = 1e-6;
    if edge.shape() != reference.shape() || edge.shape().last() != Some(&3) {
        return AssertionResult::inapplicable(NAME, "needs equally shaped 3-channel tensors");
    }
    let (e, r) = (edge.to_f32_vec(), reference.to_f32_vec());
    if max_abs_diff(&e, &r) <= TOL {
        return AssertionResult::new(NAME, Verdict::Pass, json!({}));
    }
    let letters: [char; 3] = match reference_order {
        ChannelOrder::RGB => ['R', 'G', 'B'],
        ChannelOrder::BGR => ['B', 'G', 'R'],
    };
    for p in &PERMUTATIONS[1..] {
        let ok = e
            .chunks_exact(3)
            .zip(r.chunks_exact(3))
            .all(|(pe, pr)| (0..3).all(|c| (pe[c] as f64 - pr[p[c]] as f64).abs() <= TOL));
        if ok {
            let edge_name: String = p.iter().map(|&i| letters[i]).collect();
            let ref_name: String = letters.iter().collect();
            return AssertionResult::new(
                NAME,
                Verdict::Fail,
                json!({ "cause": format!("{edge_name}->{ref_name}"), "permutation": p }),
            );
        }
    }
    AssertionResult::inapplicable(NAME, "no channel permutation explains the difference")
}

/// Fits `reference ≈ a * edge + b`; fails when the fit is exact but not the identity.
pub fn assert_normalization(edge: &Tensor, reference: &Tensor) -> AssertionResult {
    const NAME: &str = "normalization";
    if edge.shape() != reference.shape() || edge.is_empty() {
        return AssertionResult::inapplicable(NAME, "needs equally shaped tensors");
    }
    let (x, y) = (edge.to_f32_vec(), reference.to_f32_vec());
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&a, &b) in x.iter().zip(&y) {
        sxx += (a as f64 - mx).powi(2);
        sxy += (a as f64 - mx) * (b as f64 - my);
    }
    let range = |v: &[f32]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t as f64), hi.max(t as f64)));
    let (xlo, xhi) = range(&x);
    let (ylo, yhi) = range(&y);
    if sxx == 0.0 || yhi - ylo <= 0.0 {
        return AssertionResult::inapplicable(NAME, "constant tensor");
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let resid = (x.iter().zip(&y).map(|(&u, &v)| (v as f64 - a * u as f64 - b).powi(2)).sum::<f64>() / n).sqrt();
    if resid >= 1e-4 * (yhi - ylo) {
        return AssertionResult::inapplicable(NAME, format!("no affine map between the tensors (residual {resid:.3e})"));
    }
    let evidence = json!({ "a": a, "b": b, "residual_rms": resid, "edge_range": [xlo, xhi], "reference_range": [ylo, yhi] });
    if (a - 1.0).abs() <= 1e-3 && b.abs() <= 1e-3 {
        return AssertionResult::new(NAME, Verdict::Pass, evidence);
    }
    let mut evidence = evidence;
    evidence["cause"] = json!(format!("reference = {a:.3} * edge + {b:.3}"));
    AssertionResult::new(NAME, Verdict::Fail, evidence)
}

/// Recompute the edge tensor from the raw image under each candidate and
/// report which candidates reproduce it within one gray level RMS.
fn recompute<T: Copy + PartialEq>(
    name: &str,
    raw: &Image,
    edge: &Tensor,
    edge_spec: &PipelineSpec,
    candidates: &[T],
    apply: impl Fn(&mut PipelineSpec, T),
    label: impl Fn(T) -> String,
    expected: T,
) -> AssertionResult {
    let e = edge.to_f32_vec();
    let tol = edge_spec.gray_level();
    let mut rms = serde_json::Map::new();
    let mut matches = Vec::new();
    for &c in candidates {
        let mut spec = edge_spec.clone();
        apply(&mut spec, c);
        let Ok(t) = run_pipeline(raw, &spec) else { continue };
        if t.shape() != edge.shape() {
            continue;
        }
        let d = rms_diff(&t.to_f32_vec(), &e);
        rms.insert(label(c), json!(d));
        if d <= tol {
            matches.push((c, d));
        }
    }
    let mut evidence = json!({ "rms": rms, "tolerance": tol, "expected": label(expected) });
    if matches.is_empty() {
        evidence["reason"] = json!("no candidate reproduces the edge tensor");
        return AssertionResult::new(name, Verdict::Inapplicable, evidence);
    }
    if matches.iter().any(|&(c, _)| c == expected) {
        return AssertionResult::new(name, Verdict::Pass, evidence);
    }
    let best = matches.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    evidence["cause"] = json!(label(best));
    AssertionResult::new(name, Verdict::Fail, evidence)
}

pub fn assert_resize(raw: &Image, edge: &Tensor, edge_spec: &PipelineSpec, ref_spec: &PipelineSpec) -> AssertionResult {
    recompute(
        "resize",
        raw,
        edge,
        edge_spec,
        &Resizer::ALL,
        |s, r| s.resizer = r,
        |r| r.name().to_string(),
        ref_spec.resizer,
    )
}

pub fn assert_rotation(raw: &Image, edge: &Tensor, edge_spec: &PipelineSpec, ref_spec: &PipelineSpec) -> AssertionResult {
    recompute(
        "rotation",
        raw,
        edge,
        edge_spec,
        &Rotation::ALL,
        |s, r| s.rotation = r,
        |r| r.degrees().to_string(),
        ref_spec.rotation,
    )
}

/// Combine per-frame verdicts: any failure fails, otherwise any pass passes.
pub fn aggregate(name: &str, per_frame: Vec<(String, AssertionResult)>) -> AssertionResult {
    let checked = per_frame.len();
    let count = |v: Verdict| per_frame.iter().filter(|(_, r)| r.verdict == v).count();
    let (failed, passed) = (count(Verdict::Fail), count(Verdict::Pass));
    if let Some((frame, first)) = per_frame.iter().find(|(_, r)| r.verdict == Verdict::Fail) {
        let evidence = json!({
            "cause": first.cause().unwrap_or_default(),
            "frame": frame,
            "failing_frames": failed,
            "checked_frames": checked,
            "detail": first.evidence,
        });
        return AssertionResult::new(name, Verdict::Fail, evidence);
    }
    if passed > 0 {
        return AssertionResult::new(name, Verdict::Pass, json!({ "passing_frames": passed, "checked_frames": checked }));
    }
    let reason = per_frame
        .first()
        .and_then(|(_, r)| r.evidence.get("reason").cloned())
        .unwrap_or_else(|| json!("no frames to check"));
    AssertionResult::new(name, Verdict::Inapplicable, json!({ "reason": reason, "checked_frames": checked }))
}

#[derive(Debug, Clone)]
struct ChannelStats {
    edge_lo: Vec<f64>,
    edge_hi: Vec<f64>,
    ref_lo: Vec<f64>,
    ref_hi: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ResolutionStats {
    step: f64,
    lo: f64,
    hi: f64,
    clipped: usize,
    total: usize,
    channels: ChannelStats,
}

/// Clipping, resolution and collapsed-channel checks of quantized edge
/// activations against the float reference activations.
pub fn assert_quant_resolution(aligned: &Aligned) -> AssertionResult {
    const NAME: &str = "quant_resolution";
    let (edge, reference) = (aligned.edge, aligned.reference);
    if edge.manifest().capture != Capture::PerLayer || reference.manifest().capture != Capture::PerLayer {
        return AssertionResult::inapplicable(NAME, "needs per-layer capture on both traces");
    }
    let count = edge.manifest().layer_types.len();
    if count != reference.manifest().layer_types.len() {
        return AssertionResult::inapplicable(NAME, "layer counts differ");
    }
    let mut stats: Vec<Option<ResolutionStats>> = vec![None; count];
    let mut any_quant = false;
    for f in &aligned.frames {
        let (er, rr) = (edge.layer_outputs(f), reference.layer_outputs(f));
        if er.len() != count || rr.len() != count {
            return AssertionResult::inapplicable(NAME, format!("frame `{f}` lacks layer outputs"));
        }
        for i in 0..count {
            let Ok(et) = edge.load_blob(er[i]) else { return AssertionResult::inapplicable(NAME, "unreadable blob") };
            let Some(qp) = et.quant().filter(|q| q.scale.len() == 1 && !q.calib_min.is_empty()) else { continue };
            let Ok(rt) = reference.load_blob(rr[i]) else { return AssertionResult::inapplicable(NAME, "unreadable blob") };
            if rt.quant().is_some() {
                continue;
            }
            if rt.len() != et.len() {
                return AssertionResult::inapplicable(NAME, format!("layer {i} shapes differ"));
            }
            any_quant = true;
            let c = et.shape().last().copied().unwrap_or(1).max(1);
            let s = stats[i].get_or_insert_with(|| ResolutionStats {
                step: qp.scale[0],
                lo: qp.calib_min[0],
                hi: qp.calib_max[0],
                clipped: 0,
                total: 0,
                channels: ChannelStats {
                    edge_lo: vec![f64::INFINITY; c],
                    edge_hi: vec![f64::NEG_INFINITY; c],
                    ref_lo: vec![f64::INFINITY; c],
                    ref_hi: vec![f64::NEG_INFINITY; c],
                },
            });
            if s.channels.edge_lo.len() != c {
                return AssertionResult::inapplicable(NAME, format!("layer {i} changes shape between frames"));
            }
            let slack = 1e-6 * (s.hi - s.lo).abs().max(1e-12);
            for (k, (e, r)) in et.to_f32_vec().into_iter().zip(rt.to_f32_vec()).enumerate() {
                let (e, r) = (e as f64, r as f64);
                if r < s.lo - slack || r > s.hi + slack {
                    s.clipped += 1;
                }
                let ch = k % c;
                let cs = &mut s.channels;
                cs.edge_lo[ch] = cs.edge_lo[ch].min(e);
                cs.edge_hi[ch] = cs.edge_hi[ch].max(e);
                cs.ref_lo[ch] = cs.ref_lo[ch].min(r);
                cs.ref_hi[ch] = cs.ref_hi[ch].max(r);
            }
            s.total += et.len();
        }
    }
    if !any_quant {
        return AssertionResult::inapplicable(NAME, "no quantized edge layer has a float reference");
    }
    let types = &edge.manifest().layer_types;
    let mut flagged = Vec::new();
    let mut checked = Vec::new();
    for (i, s) in stats.iter().enumerate() {
        let Some(s) = s else { continue };
        let cs = &s.channels;
        let spread = cs.ref_hi.iter().copied().fold(f64::NEG_INFINITY, f64::max) - cs.ref_lo.iter().copied().fold(f64::INFINITY, f64::min);
        let steps = spread / s.step;
        let clip = s.clipped as f64 / s.total.max(1) as f64;
        let collapsed: Vec<usize> = (0..cs.edge_lo.len())
            .filter(|&c| cs.edge_hi[c] == cs.edge_lo[c] && (cs.ref_hi[c] - cs.ref_lo[c]) / s.step >= 8.0)
            .collect();
        let mut causes = Vec::new();
        if clip > 0.01 {
            causes.push("clipping");
        }
        if spread > 0.0 && steps < 8.0 {
            causes.push("resolution");
        }
        if !collapsed.is_empty() {
            causes.push("collapsed channel");
        }
        let entry = json!({
            "layer_index": i,
            "layer_type": types[i].to_string(),
            "clip_fraction": clip,
            "spread_steps": steps,
            "collapsed_channels": collapsed,
            "causes": causes,
        });
        if causes.is_empty() {
            checked.push(entry);
        } else {
            flagged.push(entry);
        }
    }
    if let Some(first) = flagged.first() {
        let cause = format!("{} at layer {}", first["causes"][0].as_str().unwrap_or_default(), first["layer_index"]);
        return AssertionResult::new(NAME, Verdict::Fail, json!({ "cause": cause, "layers": flagged }));
    }
    AssertionResult::new(NAME, Verdict::Pass, json!({ "layers_checked": checked.len() }))
}

fn tensor(trace: &Trace, frame: &str, key: &str) -> Option<Tensor> {
    trace.find(frame, key).and_then(|r| trace.load_blob(r).ok())
}

/// The built-in assertion suite over two aligned traces.
pub fn run_builtin_assertions(aligned: &Aligned) -> Vec<AssertionResult> {
    let (edge, reference) = (aligned.edge, aligned.reference);
    let ref_spec = reference.manifest().pipeline.clone();
    let edge_spec = edge.manifest().pipeline.clone().or_else(|| ref_spec.clone());
    let ref_order = ref_spec.as_ref().map_or(ChannelOrder::RGB, |s| s.channel_order);
    let mut per: [Vec<(String, AssertionResult)>; 4] = Default::default();
    for f in &aligned.frames {
        let e = tensor(edge, f, keys::PREPROC_OUT);
        let r = tensor(reference, f, keys::PREPROC_OUT);
        let frame = || f.clone();
        match (&e, &r) {
            (Some(e), Some(r)) => {
                per[0].push((frame(), assert_channel_order(e, r, ref_order)));
                per[1].push((frame(), assert_normalization(e, r)));
            }
            _ => {
                per[0].push((frame(), AssertionResult::inapplicable("channel_order", "preprocessed input not logged")));
                per[1].push((frame(), AssertionResult::inapplicable("normalization", "preprocessed input not logged")));
            }
        }
        let raw = tensor(edge, f, keys::RAW_INPUT)
            .or_else(|| tensor(reference, f, keys::RAW_INPUT))
            .and_then(|t| Image::from_tensor(&t).ok());
        match (raw, &e, &edge_spec, &ref_spec) {
            (Some(raw), Some(e), Some(es), Some(rs)) => {
                per[2].push((frame(), assert_resize(&raw, e, es, rs)));
                per[3].push((frame(), assert_rotation(&raw, e, es, rs)));
            }
            _ => {
                let why = "raw input, edge tensor or pipeline specs missing";
                per[2].push((frame(), AssertionResult::inapplicable("resize", why)));
                per[3].push((frame(), AssertionResult::inapplicable("rotation", why)));
            }
        }
    }
    let mut out: Vec<AssertionResult> =
        PREPROCESSING_ASSERTIONS.iter().zip(per).map(|(name, results)| aggregate(name, results)).collect();
    out.push(assert_quant_resolution(aligned));
    out
}

/// Executables listed one per line; `#` starts a comment. Relative paths
/// resolve against the list file's directory.
pub fn read_assertion_list(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ValidationError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let exe = base.join(line);
        if !exe.is_file() {
            return Err(ValidationError::List {
                path: path.display().to_string(),
                line: n + 1,
                msg: format!("{} is not a file", exe.display()),
            });
        }
        out.push(exe);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct ExternalVerdict {
    name: Option<String>,
    verdict: Verdict,
    #[serde(default)]
    evidence: Value,
}

/// Run `exe <edge_dir> <ref_dir> <frame>...` and read one JSON verdict from
/// its stdout. Anything other than a clean exit with valid JSON is inapplicable.
pub fn run_external_assertion(exe: &Path, edge_dir: &Path, ref_dir: &Path, frames: &[String]) -> AssertionResult {
    let stem = exe.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| exe.display().to_string());
    let out = match Command::new(exe).arg(edge_dir).arg(ref_dir).args(frames).output() {
        Ok(out) => out,
        Err(e) => return AssertionResult::inapplicable(&stem, format!("could not start {}: {e}", exe.display())),
    };
    let stderr = String::from_utf8_lossy(&out.stderr);
    let tail: String = stderr.lines().rev().take(5).collect::<Vec<_>>().into_iter().rev().collect::<Vec<_>>().join("\n");
    if !out.status.success() {
        return AssertionResult::new(
            &stem,
            Verdict::Inapplicable,
            json!({ "reason": format!("assertion exited with {}", out.status), "stderr": tail }),
        );
    }
    match serde_json::from_slice::<ExternalVerdict>(&out.stdout) {
        Ok(v) => AssertionResult { name: v.name.unwrap_or(stem), verdict: v.verdict, evidence: v.evidence },
        Err(e) => AssertionResult::new(
            &stem,
            Verdict::Inapplicable,
            json!({ "reason": format!("unreadable verdict: {e}"), "stderr": tail }),
        ),
    }
}
