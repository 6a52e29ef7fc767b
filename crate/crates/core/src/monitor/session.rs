use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{io_err, keys, Manifest, MonitorError, RecordKind, Result, SkippedFrame, TraceRecord};
use super::{BLOB_DIR, MANIFEST_FILE, RECORDS_FILE};
use crate::clock::monotonic_ns;
use crate::runtime::{Capture, InferenceResult};
use crate::tensor::{encode_ten, Tensor};

/// Value attached to a custom record.
#[derive(Debug, Clone, Copy)]
pub enum Payload<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
    Text(&'a str),
}

/// Single-writer trace recorder. Every hook appends and flushes; `finish`
/// syncs to disk and clears the manifest's `partial` flag.
pub struct MonitorSession {
    dir: PathBuf,
    manifest: Manifest,
    writer: BufWriter<File>,
    seq: u64,
    next_blob: u64,
    open_frame: Option<(String, u64)>,
    quiet_since: Option<(String, u64)>,
    poisoned: bool,
}

pub(crate) fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
}

impl MonitorSession {
    /// Start a trace in `dir`, replacing any trace already there.
    pub fn begin(dir: &Path, manifest: Manifest) -> Result<Self> {
        let blobs = dir.join(BLOB_DIR);
        if blobs.exists() {
            std::fs::remove_dir_all(&blobs).map_err(|e| io_err(&blobs, e))?;
        }
        std::fs::create_dir_all(&blobs).map_err(|e| io_err(&blobs, e))?;
        let mut manifest = manifest;
        manifest.partial = true;
        write_manifest(dir, &manifest)?;
        let path = dir.join(RECORDS_FILE);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        Ok(MonitorSession {
            dir: dir.to_path_buf(),
            manifest,
            writer: BufWriter::with_capacity(1 << 16, file),
            seq: 0,
            next_blob: 0,
            open_frame: None,
            quiet_since: None,
            poisoned: false,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn capture(&self) -> Capture {
        self.manifest.capture
    }

    fn guard<T>(&mut self, r: Result<T>) -> Result<T> {
        if r.is_err() {
            self.poisoned = true;
        }
        r
    }

    fn write_blob(&mut self, t: &Tensor) -> Result<String> {
        let rel = format!("{BLOB_DIR}/{:06}.ten", self.next_blob);
        let path = self.dir.join(&rel);
        let r = std::fs::write(&path, encode_ten(t)).map_err(|e| io_err(&path, e));
        self.guard(r)?;
        self.next_blob += 1;
        Ok(rel)
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        &mut self,
        frame_id: &str,
        key: &str,
        kind: RecordKind,
        layer_index: Option<usize>,
        span: Option<(u64, u64)>,
        payload: Payload<'_>,
    ) -> Result<()> {
        if self.poisoned {
            return Err(MonitorError::Poisoned);
        }
        let (blob, scalar, text) = match payload {
            Payload::Tensor(t) => (Some(self.write_blob(t)?), None, None),
            Payload::Scalar(v) => (None, Some(v), None),
            Payload::Text(s) => (None, None, Some(s.to_string())),
        };
        let rec = TraceRecord {
            seq: self.seq,
            frame_id: frame_id.to_string(),
            key: key.to_string(),
            kind,
            layer_index,
            t_start_ns: span.map(|s| s.0),
            t_end_ns: span.map(|s| s.1),
            blob,
            scalar,
            text,
        };
        let path = self.dir.join(RECORDS_FILE);
        let r = serde_json::to_writer(&mut self.writer, &rec)
            .map_err(|e| io_err(&path, e))
            .and_then(|_| self.writer.write_all(b"\n").map_err(|e| io_err(&path, e)));
        self.guard(r)?;
        self.seq += 1;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        let path = self.dir.join(RECORDS_FILE);
        let r = self.writer.flush().map_err(|e| io_err(&path, e));
        self.guard(r)
    }

    pub fn on_inf_start(&mut self, frame_id: &str) -> Result<()> {
        if let Some((open, _)) = &self.open_frame {
            return Err(MonitorError::HookOrder(format!("on_inf_start for {frame_id} while {open} is still open")));
        }
        self.open_frame = Some((frame_id.to_string(), monotonic_ns()));
        Ok(())
    }

    /// Close the open frame: the span between the hooks becomes the
    /// inference latency record.
    pub fn on_inf_stop(&mut self, result: &InferenceResult) -> Result<()> {
        let t_end = monotonic_ns();
        let (frame_id, t_start) =
            self.open_frame.take().ok_or_else(|| MonitorError::HookOrder("on_inf_stop without on_inf_start".into()))?;
        self.log_inference(&frame_id, t_start, t_end, result)
    }

    /// Record one inference with an explicit span, for callers that ran it elsewhere.
    pub fn log_inference(&mut self, frame_id: &str, t_start: u64, t_end: u64, result: &InferenceResult) -> Result<()> {
        let span = (t_start, t_end);
        self.emit(frame_id, keys::INFERENCE, RecordKind::Latency, None, Some(span), Payload::Scalar(t_end.saturating_sub(t_start) as f64))?;
        self.emit(frame_id, keys::OUTPUT, RecordKind::Output, None, None, Payload::Tensor(&result.output))?;
        if self.manifest.capture == Capture::PerLayer {
            if let Some(outputs) = &result.layer_outputs {
                for (i, t) in outputs.iter().enumerate() {
                    self.emit(frame_id, keys::LAYER_OUTPUT, RecordKind::LayerOutput, Some(i), None, Payload::Tensor(t))?;
                }
            }
            for (i, t) in result.layer_timings.iter().enumerate() {
                let span = (t.start_ns, t.end_ns);
                self.emit(frame_id, keys::LAYER_LATENCY, RecordKind::Latency, Some(i), Some(span), Payload::Scalar(t.duration_ns() as f64))?;
            }
        }
        self.flush()
    }

    /// Sensors go quiet (e.g. the camera stops delivering frames).
    pub fn on_sensor_stop(&mut self, frame_id: &str) -> Result<()> {
        if self.quiet_since.is_some() {
            return Err(MonitorError::HookOrder("on_sensor_stop twice without on_sensor_start".into()));
        }
        self.quiet_since = Some((frame_id.to_string(), monotonic_ns()));
        Ok(())
    }

    /// Sensors resume; the quiet window is recorded as a sensor record.
    pub fn on_sensor_start(&mut self) -> Result<()> {
        let t_end = monotonic_ns();
        let (frame_id, t_start) =
            self.quiet_since.take().ok_or_else(|| MonitorError::HookOrder("on_sensor_start without on_sensor_stop".into()))?;
        let span = Some((t_start, t_end));
        self.emit(&frame_id, keys::SENSOR_QUIET, RecordKind::Sensor, None, span, Payload::Scalar(t_end.saturating_sub(t_start) as f64))?;
        self.flush()
    }

    pub fn log_sensor(&mut self, frame_id: &str, key: &str, value: f64) -> Result<()> {
        self.emit(frame_id, key, RecordKind::Sensor, None, None, Payload::Scalar(value))?;
        self.flush()
    }

    pub fn log_input(&mut self, frame_id: &str, key: &str, tensor: &Tensor) -> Result<()> {
        self.emit(frame_id, key, RecordKind::Input, None, None, Payload::Tensor(tensor))?;
        self.flush()
    }

    pub fn log_custom(&mut self, frame_id: &str, key: &str, payload: Payload<'_>) -> Result<()> {
        self.emit(frame_id, key, RecordKind::Custom, None, None, payload)?;
        self.flush()
    }

    pub fn mark_skipped(&mut self, frame_id: &str, reason: impl Into<String>) {
        self.manifest.skipped_frames.push(SkippedFrame { frame_id: frame_id.to_string(), reason: reason.into() });
    }

    /// Sync records to disk and finalize the manifest.
    pub fn finish(mut self) -> Result<Manifest> {
        if let Some((frame, _)) = &self.open_frame {
            return Err(MonitorError::HookOrder(format!("frame {frame} was never stopped")));
        }
        self.flush()?;
        let path = self.dir.join(RECORDS_FILE);
        self.writer.get_ref().sync_all().map_err(|e| io_err(&path, e))?;
        if self.poisoned {
            return Err(MonitorError::Poisoned);
        }
        self.manifest.partial = false;
        write_manifest(&self.dir, &self.manifest)?;
        Ok(self.manifest)
    }
}
