use std::path::Path;

use exray_core::monitor::{keys, read_trace, Manifest, MonitorError, MonitorSession, Payload, RecordKind, Role};
use exray_core::runtime::{infer, Capture, Graph, KernelResolver, Layer, LayerOp, TensorInfo};
use exray_core::tensor::{encode_ten, Tensor};
use proptest::prelude::*;

fn graph() -> Graph {
    Graph::new("sm", TensorInfo::f32(vec![4]), vec![Layer::new(0, LayerOp::Softmax), Layer::new(1, LayerOp::Softmax)], 1).unwrap()
}

fn session(dir: &Path, capture: Capture) -> MonitorSession {
    let mut m = Manifest::new(Role::Edge, &graph(), None, &KernelResolver::reference());
    m.capture = capture;
    MonitorSession::begin(dir, m).unwrap()
}

fn one_frame(s: &mut MonitorSession, id: &str) {
    let x = Tensor::from_f32(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let capture = s.capture();
    s.on_inf_start(id).unwrap();
    let r = infer(&graph(), &x, &KernelResolver::reference(), capture).unwrap();
    s.on_inf_stop(&r).unwrap();
}

#[test]
fn inference_hooks_emit_latency_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::OutputOnly);
    one_frame(&mut s, "f0");
    s.finish().unwrap();
    let t = read_trace(dir.path()).unwrap();
    let kinds: Vec<_> = t.records().iter().map(|r| r.kind).collect();
    assert_eq!(kinds, vec![RecordKind::Latency, RecordKind::Output]);
    assert!(!t.manifest().partial);
}

#[test]
fn per_layer_capture_adds_layer_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::PerLayer);
    one_frame(&mut s, "f0");
    s.finish().unwrap();
    let t = read_trace(dir.path()).unwrap();
    assert_eq!(t.layer_outputs("f0").len(), 2);
    assert_eq!(t.find_all("f0", RecordKind::Latency).filter(|r| r.key == keys::LAYER_LATENCY).count(), 2);
}

#[test]
fn custom_tensor_gets_a_blob() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::OutputOnly);
    let x = Tensor::from_f32(vec![2], vec![0.5, -0.5]).unwrap();
    s.log_custom("f0", keys::PREPROC_OUT, Payload::Tensor(&x)).unwrap();
    s.finish().unwrap();
    let t = read_trace(dir.path()).unwrap();
    assert_eq!(t.records().len(), 1);
    let r = &t.records()[0];
    assert_eq!(r.kind, RecordKind::Custom);
    assert_eq!(t.load_blob(r).unwrap(), x);
}

#[test]
fn seq_increases_across_frames() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::PerLayer);
    one_frame(&mut s, "a");
    one_frame(&mut s, "b");
    s.finish().unwrap();
    let t = read_trace(dir.path()).unwrap();
    assert!(t.records().windows(2).all(|w| w[0].seq < w[1].seq));
    assert_eq!(t.frame_ids(), &["a".to_string(), "b".to_string()]);
}

#[test]
fn hook_order_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::OutputOnly);
    let r = infer(&graph(), &Tensor::zeros_f32(vec![4]), &KernelResolver::reference(), Capture::OutputOnly).unwrap();
    assert!(matches!(s.on_inf_stop(&r), Err(MonitorError::HookOrder(_))));
    assert!(matches!(s.on_sensor_start(), Err(MonitorError::HookOrder(_))));
    s.on_inf_start("x").unwrap();
    assert!(matches!(s.on_inf_start("y"), Err(MonitorError::HookOrder(_))));
}

#[test]
fn sensor_window_and_readings() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::OutputOnly);
    s.on_sensor_stop("f0").unwrap();
    s.on_sensor_start().unwrap();
    s.log_sensor("f0", "orientation_deg", 90.0).unwrap();
    s.finish().unwrap();
    let t = read_trace(dir.path()).unwrap();
    let quiet = t.find("f0", keys::SENSOR_QUIET).unwrap();
    assert_eq!(quiet.kind, RecordKind::Sensor);
    assert!(quiet.t_start_ns.unwrap() <= quiet.t_end_ns.unwrap());
    assert_eq!(t.find("f0", "orientation_deg").unwrap().scalar, Some(90.0));
}

#[test]
fn unfinished_session_leaves_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::OutputOnly);
    one_frame(&mut s, "f0");
    drop(s);
    let t = read_trace(dir.path()).unwrap();
    assert!(t.manifest().partial);
    assert_eq!(t.records().len(), 2);
}

#[test]
fn dangling_blob_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::OutputOnly);
    one_frame(&mut s, "f0");
    s.finish().unwrap();
    std::fs::remove_file(dir.path().join("blobs/000000.ten")).unwrap();
    match read_trace(dir.path()) {
        Err(MonitorError::MissingBlob { path }) => assert!(path.ends_with("blobs/000000.ten"), "{path}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_records_file_is_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    session(dir.path(), Capture::OutputOnly).finish().unwrap();
    let t = read_trace(dir.path()).unwrap();
    assert!(t.records().is_empty());
    assert!(t.frame_ids().is_empty());
}

#[test]
fn malformed_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::OutputOnly);
    s.log_custom("f", "a", Payload::Scalar(1.0)).unwrap();
    s.log_custom("f", "b", Payload::Scalar(2.0)).unwrap();
    s.finish().unwrap();
    let path = dir.path().join("records.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, format!("{text}{{not json\n")).unwrap();
    match read_trace(dir.path()) {
        Err(MonitorError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn frame_records_stay_small_without_layer_capture() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = session(dir.path(), Capture::OutputOnly);
    let n = 20;
    let raw = Tensor::from_u8(vec![8, 8, 3], vec![7; 192], exray_core::tensor::QuantParams::affine(0.0, 255.0).unwrap()).unwrap();
    for i in 0..n {
        let id = format!("img_{i:04}.ppm");
        s.log_input(&id, keys::RAW_INPUT, &raw).unwrap();
        s.log_custom(&id, keys::LABEL, Payload::Scalar(3.0)).unwrap();
        s.log_custom(&id, keys::PREPROC_OUT, Payload::Tensor(&Tensor::zeros_f32(vec![4]))).unwrap();
        one_frame(&mut s, &id);
    }
    s.finish().unwrap();
    let bytes = std::fs::metadata(dir.path().join("records.jsonl")).unwrap().len();
    assert!(bytes / n <= 4096, "{} bytes per frame", bytes / n);
}

#[derive(Debug, Clone)]
enum Item {
    Scalar(f64),
    Text(String),
    Tensor(Vec<f32>),
}

fn item() -> impl Strategy<Value = Item> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Item::Scalar),
        "[a-z ]{0,12}".prop_map(Item::Text),
        proptest::collection::vec(-1e6f32..1e6, 1..20).prop_map(Item::Tensor),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn write_read_round_trip(items in proptest::collection::vec(item(), 0..100)) {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path(), Capture::OutputOnly);
        let tensors: Vec<Option<Tensor>> = items
            .iter()
            .map(|i| match i {
                Item::Tensor(v) => Some(Tensor::from_f32(vec![v.len()], v.clone()).unwrap()),
                _ => None,
            })
            .collect();
        for (k, (i, t)) in items.iter().zip(&tensors).enumerate() {
            let frame = format!("f{}", k % 7);
            let p = match (i, t) {
                (Item::Scalar(v), _) => Payload::Scalar(*v),
                (Item::Text(s), _) => Payload::Text(s),
                (_, Some(t)) => Payload::Tensor(t),
                _ => unreachable!(),
            };
            s.log_custom(&frame, &format!("k{k}"), p).unwrap();
        }
        s.finish().unwrap();
        let t = read_trace(dir.path()).unwrap();
        prop_assert_eq!(t.records().len(), items.len());
        for (k, (rec, (i, tensor))) in t.records().iter().zip(items.iter().zip(&tensors)).enumerate() {
            prop_assert_eq!(&rec.key, &format!("k{k}"));
            prop_assert_eq!(&rec.frame_id, &format!("f{}", k % 7));
            match i {
                Item::Scalar(v) => prop_assert_eq!(rec.scalar, Some(*v)),
                Item::Text(s) => prop_assert_eq!(rec.text.as_deref(), Some(s.as_str())),
                Item::Tensor(_) => {
                    let bytes = std::fs::read(dir.path().join(rec.blob.as_ref().unwrap())).unwrap();
                    prop_assert_eq!(bytes, encode_ten(tensor.as_ref().unwrap()));
                }
            }
        }
    }
}
