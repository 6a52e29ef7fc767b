#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use exray_core::imgproc::{encode_ppm, ChannelOrder, PipelineSpec, Resizer, Rotation};
use exray_core::runtime::Graph;
use exray_core::synth::textured_image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn exray(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_exray"))
        .args(args.iter().map(|a| a.as_ref()))
        .env("EXRAY_THREADS", "1")
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn spec(h: usize, w: usize) -> PipelineSpec {
    PipelineSpec {
        channel_order: ChannelOrder::RGB,
        resizer: Resizer::AreaAverage,
        target_h: h,
        target_w: w,
        norm_lo: -1.0,
        norm_hi: 1.0,
        rotation: Rotation::R0,
    }
}

pub fn write_spec(dir: &Path, name: &str, spec: &PipelineSpec) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, spec.to_json()).unwrap();
    p
}

/// `n` textured images named `img_000.ppm`, ... with labels cycling over `classes`.
pub fn write_images(dir: &Path, n: usize, h: usize, w: usize, seed: u64, classes: usize) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = String::new();
    for i in 0..n {
        let name = format!("img_{i:03}.ppm");
        std::fs::write(dir.join(&name), encode_ppm(&textured_image(&mut rng, h, w)).unwrap()).unwrap();
        labels.push_str(&format!("{name} {}\n", i % classes));
    }
    let p = dir.join("labels.txt");
    std::fs::write(&p, labels).unwrap();
    p
}

pub fn save_model(dir: &Path, g: &Graph) -> PathBuf {
    g.save(dir).unwrap()
}

pub fn read_report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
