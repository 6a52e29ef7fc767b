//! `.ten` binary tensor files.
//!
//! ```text
//! "TEN0" | u8 dtype | u8 ndim | 0u8 0u8 | ndim x u32 LE extents | LE elements
//!        | (quantized only) u32 LE json_len | QuantParams JSON
//! ```

use std::path::Path;

use super::{num_elements, DType, QuantParams, Result, Tensor, TensorData, TensorError};

pub const TEN_MAGIC: &[u8; 4] = b"TEN0";

pub fn encode_ten(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.shape().len() + t.byte_len());
    out.extend_from_slice(TEN_MAGIC);
    out.push(t.dtype().code());
    out.push(t.shape().len() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match t.data() {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U8(v) => out.extend_from_slice(v),
        TensorData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
        TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    if let Some(qp) = t.quant() {
        let json = serde_json::to_vec(qp).expect("QuantParams serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(TensorError::Format {
                offset: self.buf.len(),
                msg: format!("truncated while reading {what}: need {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_ten(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != TEN_MAGIC {
        return Err(TensorError::Format { offset: 0, msg: "bad magic".into() });
    }
    let code = cur.take(1, "dtype")?[0];
    let dtype = DType::from_code(code)
        .ok_or_else(|| TensorError::Format { offset: 4, msg: format!("unknown dtype code {code}") })?;
    let ndim = cur.take(1, "ndim")?[0] as usize;
    if cur.take(2, "reserved")? != [0, 0] {
        return Err(TensorError::Format { offset: 6, msg: "reserved bytes must be zero".into() });
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(cur.u32("extent")? as usize);
    }
    let n = num_elements(&shape);
    let payload = cur.take(n * dtype.size_bytes(), "element data")?;
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        ),
        DType::U8 => TensorData::U8(payload.to_vec()),
        DType::I8 => TensorData::I8(payload.iter().map(|&b| b as i8).collect()),
        DType::I32 => TensorData::I32(
            payload.chunks_exact(4).map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        ),
    };
    let quant = if dtype.is_quantized() {
        let len = cur.u32("quant length")? as usize;
        let start = cur.pos;
        let json = cur.take(len, "quant params")?;
        let qp: QuantParams = serde_json::from_slice(json)
            .map_err(|e| TensorError::Format { offset: start, msg: format!("quant params: {e}") })?;
        Some(qp)
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(TensorError::Format { offset: cur.pos, msg: "trailing bytes".into() });
    }
    Tensor::new(shape, data, quant)
}

pub fn write_ten(path: &Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode_ten(t))
        .map_err(|e| TensorError::Io { path: path.display().to_string(), msg: e.to_string() })
}

pub fn read_ten(path: &Path) -> Result<Tensor> {
    let bytes =
        std::fs::read(path).map_err(|e| TensorError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    decode_ten(&bytes)
}
