use std::collections::BTreeMap;
use std::path::Path;

use exray_core::imgproc::{run_pipeline, ChannelOrder, Image, PipelineSpec, Resizer, Rotation};
use exray_core::monitor::{keys, read_trace, Manifest, MonitorSession, Payload, Role};
use exray_core::runtime::{
    infer, quantize_graph, Activation, Capture, FaultSpec, Graph, InferenceResult, KernelResolver, Layer, LayerOp,
    QuantizeOptions, TensorInfo,
};
use exray_core::synth::{conv_layer, textured_image};
use exray_core::tensor::{read_ten, Tensor};
use exray_core::validator::{
    accuracy_check, align, assert_channel_order, assert_normalization, assert_quant_resolution, assert_resize,
    assert_rotation, first_jump, localize_divergence, per_layer_rmse, run_validation, LayerComparison,
    LayerDivergence, Localization, ValidationError, ValidationOptions, Verdict,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec() -> PipelineSpec {
    PipelineSpec {
        channel_order: ChannelOrder::RGB,
        resizer: Resizer::AreaAverage,
        target_h: 8,
        target_w: 8,
        norm_lo: -1.0,
        norm_hi: 1.0,
        rotation: Rotation::R0,
    }
}

fn conv_graph(convs: usize, hw: usize, c: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut layers = vec![Layer::new(0, LayerOp::Quantize), conv_layer(&mut rng, 1, 3, c, 3, 1, 1, Activation::ReLU)];
    for i in 2..convs + 1 {
        layers.push(conv_layer(&mut rng, i, c, c, 3, 1, 1, Activation::ReLU));
    }
    let n = layers.len();
    layers.push(Layer::new(n, LayerOp::Dequantize));
    Graph::new("convs", TensorInfo::f32(vec![hw, hw, 3]), layers, n).unwrap()
}

/// Log frames as an instrumented app would: raw input, preprocessed tensor, inference.
fn record(dir: &Path, role: Role, graph: &Graph, spec: &PipelineSpec, resolver: &KernelResolver, images: &[Image]) {
    let mut m = Manifest::new(role, graph, Some(spec), resolver);
    m.capture = Capture::PerLayer;
    let mut s = MonitorSession::begin(dir, m).unwrap();
    for (i, img) in images.iter().enumerate() {
        let id = format!("f{i:03}");
        s.log_input(&id, keys::RAW_INPUT, &img.to_tensor()).unwrap();
        s.log_custom(&id, keys::LABEL, Payload::Scalar((i % 2) as f64)).unwrap();
        let x = run_pipeline(img, spec).unwrap();
        s.log_custom(&id, keys::PREPROC_OUT, Payload::Tensor(&x)).unwrap();
        s.on_inf_start(&id).unwrap();
        let r = infer(graph, &x, resolver, Capture::PerLayer).unwrap();
        s.on_inf_stop(&r).unwrap();
    }
    s.finish().unwrap();
}

fn images(n: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| textured_image(&mut rng, 24, 20)).collect()
}

/// Frames whose only content is a chosen output vector.
fn outputs_trace(dir: &Path, outputs: &[(&str, Vec<f32>)]) {
    let g = Graph::new("sm", TensorInfo::f32(vec![2]), vec![Layer::new(0, LayerOp::Softmax)], 0).unwrap();
    let mut s = MonitorSession::begin(dir, Manifest::new(Role::Edge, &g, None, &KernelResolver::reference())).unwrap();
    for (id, v) in outputs {
        let output = Tensor::from_f32(vec![v.len()], v.clone()).unwrap();
        let r = InferenceResult { output, layer_outputs: None, layer_timings: vec![], start_ns: 1, end_ns: 2, memory_bytes: 0 };
        s.log_inference(id, 1, 2, &r).unwrap();
    }
    s.finish().unwrap();
}

#[test]
fn align_pairs_and_reports_unmatched() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let frames: Vec<(String, Vec<f32>)> = (0..10).map(|i| (format!("f{i}"), vec![0.0, 1.0])).collect();
    let edge: Vec<(&str, Vec<f32>)> = frames.iter().map(|(f, v)| (f.as_str(), v.clone())).collect();
    outputs_trace(a.path(), &edge);
    outputs_trace(b.path(), &edge[..9]);
    let (ta, tb) = (read_trace(a.path()).unwrap(), read_trace(b.path()).unwrap());
    let al = align(&ta, &ta).unwrap();
    assert_eq!(al.frames.len(), 10);
    assert!(al.edge_only.is_empty() && al.reference_only.is_empty());
    let al = align(&ta, &tb).unwrap();
    assert_eq!(al.frames.len(), 9);
    assert_eq!(al.edge_only, vec!["f9".to_string()]);
}

#[test]
fn align_rejects_duplicates_and_disjoint_traces() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    outputs_trace(a.path(), &[("x", vec![1.0, 0.0]), ("x", vec![0.0, 1.0])]);
    outputs_trace(b.path(), &[("y", vec![1.0, 0.0])]);
    let (ta, tb) = (read_trace(a.path()).unwrap(), read_trace(b.path()).unwrap());
    match align(&ta, &tb) {
        Err(ValidationError::DuplicateFrame { frame_id, .. }) => assert_eq!(frame_id, "x"),
        other => panic!("expected duplicate error, got {other:?}"),
    }
    assert!(matches!(align(&tb, &tb).map(|a| a.frames.len()), Ok(1)));
    let c = tempfile::tempdir().unwrap();
    outputs_trace(c.path(), &[("z", vec![1.0, 0.0])]);
    let tc = read_trace(c.path()).unwrap();
    assert!(matches!(align(&tb, &tc), Err(ValidationError::NoOverlap)));
}

#[test]
fn accuracy_examples() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    outputs_trace(a.path(), &[("a", vec![0.9, 0.1]), ("b", vec![0.2, 0.8]), ("c", vec![0.6, 0.4]), ("d", vec![0.3, 0.7])]);
    outputs_trace(b.path(), &[("a", vec![0.8, 0.2]), ("b", vec![0.1, 0.9]), ("c", vec![0.4, 0.6]), ("d", vec![0.4, 0.6])]);
    let (ta, tb) = (read_trace(a.path()).unwrap(), read_trace(b.path()).unwrap());
    let al = align(&ta, &ta).unwrap();
    assert_eq!(accuracy_check(&al, None).unwrap().agreement, 1.0);
    let al = align(&ta, &tb).unwrap();
    let acc = accuracy_check(&al, None).unwrap();
    assert_eq!(acc.agreement, 0.75);
    assert_eq!(acc.disagreeing_frames, vec!["c".to_string()]);
    assert_eq!(acc.edge_accuracy, None);
    let labels: BTreeMap<String, usize> = [("a", 0), ("b", 1), ("c", 0), ("d", 1)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let acc = accuracy_check(&al, Some(&labels)).unwrap();
    assert_eq!(acc.edge_accuracy, Some(1.0));
    assert_eq!(acc.reference_accuracy, Some(0.75));
    assert_eq!(acc.labeled_frames, 4);
}

#[test]
fn per_layer_rmse_of_identical_traces_is_zero() {
    let d = tempfile::tempdir().unwrap();
    record(d.path(), Role::Edge, &conv_graph(3, 8, 4), &spec(), &KernelResolver::optimized(), &images(3, 1));
    let t = read_trace(d.path()).unwrap();
    let cmp = per_layer_rmse(&align(&t, &t).unwrap()).unwrap();
    assert_eq!(cmp.layers.len(), 5);
    assert!(cmp.layers.iter().chain(cmp.input.iter()).all(|l| l.rmse == 0.0 && l.rmse_hat.unwrap_or(0.0) == 0.0));
    assert_eq!(localize_divergence(&cmp, 0.05, 3.0), None);
}

/// Oracle: walk records.jsonl by hand, read each `.ten` blob and dequantize explicitly.
fn brute_force(edge: &Path, reference: &Path, layers: usize) -> Vec<(f64, f64)> {
    fn blobs(dir: &Path) -> BTreeMap<(String, usize), Vec<f64>> {
        let mut out = BTreeMap::new();
        for line in std::fs::read_to_string(dir.join("records.jsonl")).unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            if v["kind"] != "LayerOutput" {
                continue;
            }
            let t = read_ten(&dir.join(v["blob"].as_str().unwrap())).unwrap();
            let vals: Vec<f64> = match (t.as_f32(), t.as_u8(), t.quant()) {
                (Some(f), _, _) => f.iter().map(|&x| x as f64).collect(),
                (_, Some(q), Some(p)) => q.iter().map(|&x| (x as f64 - p.zero_point as f64) * p.scale[0]).collect(),
                _ => panic!("unexpected layer output dtype"),
            };
            out.insert((v["frame_id"].as_str().unwrap().to_string(), v["layer_index"].as_u64().unwrap() as usize), vals);
        }
        out
    }
    let (e, r) = (blobs(edge), blobs(reference));
    (0..layers)
        .map(|l| {
            let (mut sse, mut n, mut lo, mut hi) = (0.0, 0usize, f64::MAX, f64::MIN);
            for ((f, i), rv) in &r {
                if *i != l {
                    continue;
                }
                for (a, b) in e[&(f.clone(), l)].iter().zip(rv) {
                    sse += (a - b) * (a - b);
                    n += 1;
                    lo = lo.min(*b);
                    hi = hi.max(*b);
                }
            }
            ((sse / n as f64).sqrt(), hi - lo)
        })
        .collect()
}

#[test]
fn per_layer_rmse_matches_blob_oracle() {
    let (e, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let g = conv_graph(3, 8, 4);
    let imgs = images(4, 2);
    let calib: Vec<Tensor> = imgs.iter().map(|i| run_pipeline(i, &spec()).unwrap()).collect();
    let q = quantize_graph(&g, &calib, QuantizeOptions { per_channel: false }).unwrap().graph;
    record(e.path(), Role::Edge, &q, &spec(), &KernelResolver::optimized(), &imgs);
    record(r.path(), Role::Reference, &g, &spec(), &KernelResolver::reference(), &imgs);
    let (te, tr) = (read_trace(e.path()).unwrap(), read_trace(r.path()).unwrap());
    let cmp = per_layer_rmse(&align(&te, &tr).unwrap()).unwrap();
    let oracle = brute_force(e.path(), r.path(), 5);
    for (d, (rmse, scale)) in cmp.layers.iter().zip(oracle) {
        assert!((d.rmse - rmse).abs() <= 1e-6 * rmse.max(1e-6), "{} vs {rmse}", d.rmse);
        assert!((d.scale - scale).abs() <= 1e-6 * scale.max(1e-6));
        assert!(d.rmse > 0.0);
    }
    assert_eq!(cmp.input.unwrap().rmse, 0.0);
}

#[test]
fn layer_count_mismatch_is_structural() {
    let (e, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let imgs = images(2, 3);
    record(e.path(), Role::Edge, &conv_graph(2, 8, 4), &spec(), &KernelResolver::optimized(), &imgs);
    record(r.path(), Role::Reference, &conv_graph(3, 8, 4), &spec(), &KernelResolver::reference(), &imgs);
    let (te, tr) = (read_trace(e.path()).unwrap(), read_trace(r.path()).unwrap());
    assert!(matches!(per_layer_rmse(&align(&te, &tr).unwrap()), Err(ValidationError::Structural(_))));
    let opts = ValidationOptions { force_layer_diff: true, ..Default::default() };
    let report = run_validation(e.path(), r.path(), &opts).unwrap();
    assert!(report.summary.structural_difference.is_some());
    assert!(report.has_findings());
}

fn div(i: Option<usize>, v: f64) -> LayerDivergence {
    LayerDivergence { layer_index: i, layer_type: "Conv2D".into(), elements: 1, rmse: v, scale: 1.0, rmse_hat: Some(v), degenerate: false }
}

#[test]
fn localization_examples() {
    let cmp = |input: f64, v: &[f64]| LayerComparison {
        input: Some(div(None, input)),
        layers: v.iter().enumerate().map(|(i, &x)| div(Some(i), x)).collect(),
    };
    assert_eq!(localize_divergence(&cmp(0.0, &[0.01, 0.011, 0.012]), 0.05, 3.0), None);
    assert_eq!(
        localize_divergence(&cmp(0.0, &[0.01, 0.2, 0.21]), 0.05, 3.0),
        Some(Localization::Layer { layer_index: 1, layer_type: "Conv2D".into() })
    );
    assert_eq!(localize_divergence(&cmp(0.3, &[0.3, 0.3]), 0.05, 3.0), Some(Localization::Preprocessing));
    assert_eq!(first_jump(&[Some(0.01), Some(0.2), Some(0.21)], 0.05, 3.0), Some(1));
}

fn random_rgb(rng: &mut impl Rng, n: usize) -> Tensor {
    Tensor::from_f32(vec![n, 3], (0..n * 3).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

fn permute(t: &Tensor, p: [usize; 3]) -> Tensor {
    let v: Vec<f32> = t.as_f32().unwrap().chunks(3).flat_map(|px| [px[p[0]], px[p[1]], px[p[2]]]).collect();
    Tensor::from_f32(t.shape().to_vec(), v).unwrap()
}

#[test]
fn channel_order_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = random_rgb(&mut rng, 50);
    assert_eq!(assert_channel_order(&r, &r, ChannelOrder::RGB).verdict, Verdict::Pass);
    let swapped = assert_channel_order(&permute(&r, [2, 1, 0]), &r, ChannelOrder::RGB);
    assert_eq!(swapped.verdict, Verdict::Fail);
    assert_eq!(swapped.cause(), Some("BGR->RGB"));
    let noisy: Vec<f32> = r.as_f32().unwrap().iter().map(|&x| x + rng.gen_range(-0.01..0.01)).collect();
    let noisy = Tensor::from_f32(r.shape().to_vec(), noisy).unwrap();
    assert_eq!(assert_channel_order(&noisy, &r, ChannelOrder::RGB).verdict, Verdict::Inapplicable);
    let flat = Tensor::from_f32(vec![6], vec![0.0; 6]).unwrap();
    assert_eq!(assert_channel_order(&flat, &flat, ChannelOrder::RGB).verdict, Verdict::Inapplicable);
}

proptest! {
    #[test]
    fn channel_permutation_is_identified_uniquely(seed in any::<u64>(), pi in 1usize..6) {
        const P: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = random_rgb(&mut rng, 8);
        // one pixel with three well-separated channels
        let mut v = r.as_f32().unwrap().to_vec();
        v[..3].copy_from_slice(&[0.1, 0.5, 0.9]);
        r = Tensor::from_f32(r.shape().to_vec(), v).unwrap();
        let res = assert_channel_order(&permute(&r, P[pi]), &r, ChannelOrder::RGB);
        prop_assert_eq!(res.verdict, Verdict::Fail);
        let got: Vec<usize> = serde_json::from_value(res.evidence["permutation"].clone()).unwrap();
        prop_assert_eq!(got, P[pi].to_vec());
    }
}

#[test]
fn normalization_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let edge = Tensor::from_f32(vec![40, 3], (0..120).map(|_| rng.gen_range(0.0f32..1.0)).collect()).unwrap();
    let reference = Tensor::from_f32(vec![40, 3], edge.as_f32().unwrap().iter().map(|&x| 2.0 * x - 1.0).collect()).unwrap();
    let res = assert_normalization(&edge, &reference);
    assert_eq!(res.verdict, Verdict::Fail);
    assert!((res.evidence["a"].as_f64().unwrap() - 2.0).abs() < 1e-4);
    assert!((res.evidence["b"].as_f64().unwrap() + 1.0).abs() < 1e-4);
    let same = assert_normalization(&edge, &edge);
    assert_eq!(same.verdict, Verdict::Pass);
    assert!((same.evidence["a"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(assert_normalization(&permute(&edge, [2, 1, 0]), &edge).verdict, Verdict::Inapplicable);
    let c = Tensor::from_f32(vec![3], vec![0.5; 3]).unwrap();
    assert_eq!(assert_normalization(&c, &c).verdict, Verdict::Inapplicable);
}

fn gradient(h: usize, w: usize) -> Image {
    let data = (0..h * w * 3).map(|i| ((i / 3 % w) * 255 / w + (i / 3 / w) * 3) as u8).collect();
    Image::rgb(h, w, data).unwrap()
}

#[test]
fn resize_examples() {
    let raw = gradient(40, 32);
    let reference = spec();
    let same = run_pipeline(&raw, &reference).unwrap();
    assert_eq!(assert_resize(&raw, &same, &reference, &reference).verdict, Verdict::Pass);
    let mut bilinear = spec();
    bilinear.resizer = Resizer::Bilinear;
    let edge = run_pipeline(&raw, &bilinear).unwrap();
    let res = assert_resize(&raw, &edge, &bilinear, &reference);
    assert_eq!(res.verdict, Verdict::Fail);
    assert_eq!(res.cause(), Some("Bilinear"));
    let flat = Image::rgb(40, 32, vec![90; 40 * 32 * 3]).unwrap();
    let edge = run_pipeline(&flat, &bilinear).unwrap();
    assert_eq!(assert_resize(&flat, &edge, &bilinear, &reference).verdict, Verdict::Pass);
}

#[test]
fn rotation_examples() {
    let raw = gradient(16, 16);
    let reference = spec();
    let same = run_pipeline(&raw, &reference).unwrap();
    assert_eq!(assert_rotation(&raw, &same, &reference, &reference).verdict, Verdict::Pass);
    let mut r90 = spec();
    r90.rotation = Rotation::R90;
    let res = assert_rotation(&raw, &run_pipeline(&raw, &r90).unwrap(), &r90, &reference);
    assert_eq!(res.verdict, Verdict::Fail);
    assert_eq!(res.cause(), Some("90"));
    // point-symmetric image: a 180 degree turn is invisible
    let sym: Vec<u8> = (0..16 * 16).flat_map(|i| {
        let (y, x) = (i / 16, i % 16);
        let v = ((y as i32 - 7).abs() * 9 + (x as i32 - 7).abs() * 5) as u8;
        [v, v / 2, 255 - v]
    }).collect();
    let sym = Image::rgb(16, 16, sym).unwrap();
    let mut centered = sym;
    for y in 0..16 {
        for x in 0..16 {
            let (a, b) = ((y * 16 + x) * 3, ((15 - y) * 16 + (15 - x)) * 3);
            if a < b {
                for c in 0..3 {
                    centered.data[b + c] = centered.data[a + c];
                }
            }
        }
    }
    let mut r180 = spec();
    r180.rotation = Rotation::R180;
    let edge = run_pipeline(&centered, &r180).unwrap();
    assert_eq!(assert_rotation(&centered, &edge, &r180, &reference).verdict, Verdict::Pass);
}

fn quant_traces(calib: Vec<Tensor>, data: Vec<Tensor>) -> (tempfile::TempDir, tempfile::TempDir) {
    let g = Graph::new(
        "q",
        TensorInfo::f32(vec![4, 4, 3]),
        vec![Layer::new(0, LayerOp::Quantize), Layer::new(1, LayerOp::Dequantize)],
        1,
    )
    .unwrap();
    let q = quantize_graph(&g, &calib, QuantizeOptions { per_channel: false }).unwrap().graph;
    let (e, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, graph, role) in [(e.path(), &q, Role::Edge), (r.path(), &g, Role::Reference)] {
        let mut m = Manifest::new(role, graph, None, &KernelResolver::reference());
        m.capture = Capture::PerLayer;
        let mut s = MonitorSession::begin(dir, m).unwrap();
        for (i, x) in data.iter().enumerate() {
            let id = format!("f{i}");
            s.on_inf_start(&id).unwrap();
            let out = infer(graph, x, &KernelResolver::reference(), Capture::PerLayer).unwrap();
            s.on_inf_stop(&out).unwrap();
        }
        s.finish().unwrap();
    }
    (e, r)
}

fn uniform_set(rng: &mut impl Rng, n: usize, a: f32) -> Vec<Tensor> {
    (0..n).map(|_| Tensor::from_f32(vec![4, 4, 3], (0..48).map(|_| rng.gen_range(-a..=a)).collect()).unwrap()).collect()
}

#[test]
fn quant_resolution_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = uniform_set(&mut rng, 20, 1.0);

    let (e, r) = quant_traces(data.clone(), data.clone());
    let (te, tr) = (read_trace(e.path()).unwrap(), read_trace(r.path()).unwrap());
    assert_eq!(assert_quant_resolution(&align(&te, &tr).unwrap()).verdict, Verdict::Pass);

    let mut outlier = data.clone();
    let mut v = outlier[0].as_f32().unwrap().to_vec();
    v[5] = 100.0;
    outlier[0] = Tensor::from_f32(vec![4, 4, 3], v).unwrap();
    let (e, r) = quant_traces(outlier, data.clone());
    let (te, tr) = (read_trace(e.path()).unwrap(), read_trace(r.path()).unwrap());
    let res = assert_quant_resolution(&align(&te, &tr).unwrap());
    assert_eq!(res.verdict, Verdict::Fail);
    assert!(res.cause().unwrap().starts_with("resolution"), "{:?}", res.evidence);

    let mut narrow = uniform_set(&mut rng, 20, 0.9);
    narrow[0] = Tensor::from_f32(vec![4, 4, 3], [vec![-0.9, 0.9], vec![0.0; 46]].concat()).unwrap();
    let (e, r) = quant_traces(narrow, data);
    let (te, tr) = (read_trace(e.path()).unwrap(), read_trace(r.path()).unwrap());
    let res = assert_quant_resolution(&align(&te, &tr).unwrap());
    assert_eq!(res.verdict, Verdict::Fail);
    assert!(res.cause().unwrap().starts_with("clipping"), "{:?}", res.evidence);
    let clip = res.evidence["layers"][0]["clip_fraction"].as_f64().unwrap();
    assert!((0.05..0.15).contains(&clip), "{clip}");
}

#[test]
fn latency_straggler_comes_and_goes_with_the_fault() {
    let g = conv_graph(8, 12, 8);
    let imgs = images(5, 10);
    let mut s = spec();
    (s.target_h, s.target_w) = (12, 12);
    let r = tempfile::tempdir().unwrap();
    record(r.path(), Role::Reference, &g, &s, &KernelResolver::reference(), &imgs);
    let slow = KernelResolver::reference().with_fault("slow=100@4".parse::<FaultSpec>().unwrap());
    let e = tempfile::tempdir().unwrap();
    record(e.path(), Role::Edge, &g, &s, &slow, &imgs);
    let report = run_validation(e.path(), r.path(), &ValidationOptions::default()).unwrap();
    assert_eq!(report.summary.stragglers, vec![4]);
    assert!(!report.has_findings());
    let lat = &report.latency;
    assert_eq!(lat.by_type.iter().map(|r| r.edge_ns).sum::<u64>(), lat.edge_layer_total_ns);
    assert_eq!(lat.by_type.iter().map(|r| r.reference_ns).sum::<u64>(), lat.reference_layer_total_ns);

    let clean = tempfile::tempdir().unwrap();
    record(clean.path(), Role::Edge, &g, &s, &KernelResolver::reference(), &imgs);
    let report = run_validation(clean.path(), r.path(), &ValidationOptions::default()).unwrap();
    assert!(report.summary.stragglers.is_empty(), "{:?}", report.latency.layers);
}

#[test]
fn self_validation_is_clean_and_assertions_are_pure() {
    let d = tempfile::tempdir().unwrap();
    record(d.path(), Role::Edge, &conv_graph(3, 8, 4), &spec(), &KernelResolver::optimized(), &images(4, 12));
    let opts = ValidationOptions { force_layer_diff: true, ..Default::default() };
    let a = run_validation(d.path(), d.path(), &opts).unwrap();
    assert_eq!(a.accuracy.agreement, 1.0);
    assert!(a.layers.ran);
    assert!(a.layers.layers.iter().all(|l| l.rmse_hat.unwrap_or(0.0) == 0.0));
    assert_eq!(a.summary.findings, 0);
    for name in ["channel_order", "normalization", "resize", "rotation"] {
        assert_eq!(a.assertion(name).unwrap().verdict, Verdict::Pass, "{name}");
    }
    let b = run_validation(d.path(), d.path(), &opts).unwrap();
    assert_eq!(a.assertions, b.assertions);
    let json: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, vec!["accuracy", "assertions", "latency", "layers", "summary"]);
}

#[test]
fn channel_swap_chains_through_the_report() {
    let (e, r) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let g = conv_graph(3, 8, 4);
    let imgs = images(6, 13);
    let mut bgr = spec();
    bgr.channel_order = ChannelOrder::BGR;
    record(e.path(), Role::Edge, &g, &bgr, &KernelResolver::optimized(), &imgs);
    exray_core::replay::replay(
        e.path(),
        &g,
        &spec(),
        r.path(),
        &exray_core::replay::RunOptions { capture: Capture::PerLayer, ..Default::default() },
    )
    .unwrap();
    let opts = ValidationOptions { force_layer_diff: true, ..Default::default() };
    let rep = run_validation(e.path(), r.path(), &opts).unwrap();
    assert_eq!(rep.summary.divergence, Some(Localization::Preprocessing));
    assert_eq!(rep.summary.failed_assertions, vec!["channel_order".to_string()]);
    assert_eq!(rep.assertion("channel_order").unwrap().cause(), Some("BGR->RGB"));
}

#[cfg(unix)]
#[test]
fn external_assertions_report_or_degrade() {
    use std::os::unix::fs::PermissionsExt;
    let d = tempfile::tempdir().unwrap();
    record(d.path(), Role::Edge, &conv_graph(2, 8, 4), &spec(), &KernelResolver::optimized(), &images(2, 14));
    let tools = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = tools.path().join(name);
        std::fs::write(&p, body).unwrap();
        std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
        p
    };
    let lane = write("lane.sh", "#!/bin/sh\nshift 2\necho \"{\\\"name\\\": \\\"lane_check\\\", \\\"verdict\\\": \\\"fail\\\", \\\"evidence\\\": {\\\"cause\\\": \\\"lanes\\\", \\\"frames\\\": $#}}\"\n");
    let crash = write("crash.sh", "#!/bin/sh\necho boom >&2\nexit 3\n");
    let list = tools.path().join("assertions.txt");
    std::fs::write(&list, "# custom checks\nlane.sh\ncrash.sh  # flaky\n").unwrap();
    let exes = exray_core::validator::read_assertion_list(&list).unwrap();
    assert_eq!(exes, vec![lane, crash]);
    let opts = ValidationOptions { external_assertions: exes, ..Default::default() };
    let rep = run_validation(d.path(), d.path(), &opts).unwrap();
    let lane = rep.assertion("lane_check").unwrap();
    assert_eq!(lane.verdict, Verdict::Fail);
    assert_eq!(lane.evidence["frames"], 2);
    assert_eq!(rep.assertion("crash").unwrap().verdict, Verdict::Inapplicable);
    assert_eq!(rep.summary.failed_assertions, vec!["lane_check".to_string()]);
    std::fs::write(&list, "missing.sh\n").unwrap();
    assert!(matches!(exray_core::validator::read_assertion_list(&list), Err(ValidationError::List { line: 1, .. })));
}
