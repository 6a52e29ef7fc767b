use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::{io_err, Manifest, MonitorError, RecordKind, Result, TraceRecord, MANIFEST_FILE, RECORDS_FILE};
use crate::tensor::{read_ten, Tensor};

/// A trace loaded from disk. Blobs are read on demand.
#[derive(Debug, Clone)]
pub struct Trace {
    dir: PathBuf,
    manifest: Manifest,
    records: Vec<TraceRecord>,
    frames: Vec<String>,
    by_frame: HashMap<String, Vec<usize>>,
}

pub fn read_trace(dir: &Path) -> Result<Trace> {
    let mpath = dir.join(MANIFEST_FILE);
    let mtext = std::fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&mtext).map_err(|e| MonitorError::Malformed {
        path: mpath.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let rpath = dir.join(RECORDS_FILE);
    let rtext = std::fs::read_to_string(&rpath).map_err(|e| io_err(&rpath, e))?;
    let malformed = |line: usize, msg: String| MonitorError::Malformed { path: rpath.display().to_string(), line, msg };
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut seen_blobs = HashSet::new();
    for (n, line) in rtext.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(line).map_err(|e| malformed(line_no, e.to_string()))?;
        rec.validate().map_err(|m| malformed(line_no, m))?;
        if let Some(prev) = records.last() {
            if rec.seq <= prev.seq {
                return Err(malformed(line_no, format!("seq {} does not increase past {}", rec.seq, prev.seq)));
            }
        }
        if let Some(b) = &rec.blob {
            if !seen_blobs.insert(b.clone()) {
                return Err(malformed(line_no, format!("blob {b} referenced twice")));
            }
            let p = dir.join(b);
            if !p.is_file() {
                return Err(MonitorError::MissingBlob { path: p.display().to_string() });
            }
        }
        records.push(rec);
    }
    let mut frames = Vec::new();
    let mut by_frame: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let slot = by_frame.entry(r.frame_id.clone()).or_insert_with(|| {
            frames.push(r.frame_id.clone());
            Vec::new()
        });
        slot.push(i);
    }
    Ok(Trace { dir: dir.to_path_buf(), manifest, records, frames, by_frame })
}

impl Trace {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// All records in seq order.
    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    /// Frame ids in order of first appearance.
    pub fn frame_ids(&self) -> &[String] {
        &self.frames
    }

    pub fn frame_records(&self, frame_id: &str) -> impl Iterator<Item = &TraceRecord> {
        self.by_frame.get(frame_id).into_iter().flatten().map(move |&i| &self.records[i])
    }

    /// First record of the frame with this key.
    pub fn find(&self, frame_id: &str, key: &str) -> Option<&TraceRecord> {
        self.frame_records(frame_id).find(|r| r.key == key)
    }

    pub fn find_all<'a>(&'a self, frame_id: &str, kind: RecordKind) -> impl Iterator<Item = &'a TraceRecord> + 'a {
        let idx = self.by_frame.get(frame_id).map(|v| v.as_slice()).unwrap_or(&[]);
        idx.iter().map(move |&i| &self.records[i]).filter(move |r| r.kind == kind)
    }

    /// Layer output records of a frame, ordered by layer index.
    pub fn layer_outputs(&self, frame_id: &str) -> Vec<&TraceRecord> {
        let mut v: Vec<&TraceRecord> = self.find_all(frame_id, RecordKind::LayerOutput).collect();
        v.sort_by_key(|r| r.layer_index);
        v
    }

    pub fn load_blob(&self, rec: &TraceRecord) -> Result<Tensor> {
        let rel = rec.blob.as_ref().ok_or_else(|| MonitorError::InvalidRecord(format!("record {} has no blob", rec.seq)))?;
        let path = self.dir.join(rel);
        if !path.is_file() {
            return Err(MonitorError::MissingBlob { path: path.display().to_string() });
        }
        Ok(read_ten(&path)?)
    }
}
