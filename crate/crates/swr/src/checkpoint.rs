//! SWRC: model checkpoint container.
//!
//! ```text
//! "SWRC" | u32 version | u32 n | n bytes JSON {seed, spec} | u32 tensor count
//! per tensor: u32 name length | name (UTF-8) | u32 rows | u32 cols | rows·cols f64
//! ```
//!
//! Little-endian throughout; payloads round-trip bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use swr_core::{Matrix, ModelSpec, ParamStore};

use crate::error::{self, Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"SWRC";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    seed: u64,
    spec: ModelSpec,
}

fn push_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<(), FormatError> {
    let v = u32::try_from(v).map_err(|_| FormatError::new(out.len(), format!("{what} {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(params: &ParamStore, spec: &ModelSpec) -> Result<Vec<u8>, FormatError> {
    let meta = serde_json::to_vec(&Meta {
        seed: params.seed(),
        spec: spec.clone(),
    })
    .map_err(|e| FormatError::new(12, e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    push_u32(&mut out, meta.len(), "spec length")?;
    out.extend_from_slice(&meta);
    push_u32(&mut out, params.len(), "tensor count")?;
    for p in params.params() {
        push_u32(&mut out, p.name.len(), "name length")?;
        out.extend_from_slice(p.name.as_bytes());
        push_u32(&mut out, p.value.rows(), "rows")?;
        push_u32(&mut out, p.value.cols(), "cols")?;
        for v in p.value.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            FormatError::new(
                self.bytes.len(),
                format!("truncated {what}: need {n} bytes from offset {}", self.pos),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Decodes a checkpoint and checks its tensors against the stored spec.
pub fn decode(bytes: &[u8]) -> Result<(ModelSpec, ParamStore), FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(FormatError::new(0, "bad magic, not an SWRC file"));
    }
    let version = cur.u32("version")?;
    if version != VERSION as usize {
        return Err(FormatError::new(4, format!("unsupported version {version}")));
    }
    let meta_len = cur.u32("spec length")?;
    let meta: Meta = serde_json::from_slice(cur.take(meta_len, "spec")?)
        .map_err(|e| FormatError::new(12, format!("malformed spec: {e}")))?;
    meta.spec.validate().map_err(|e| FormatError::new(12, e.to_string()))?;
    let layout = meta.spec.layout();
    let count_at = cur.pos;
    let count = cur.u32("tensor count")?;
    if count != layout.len() {
        return Err(FormatError::new(
            count_at,
            format!("{count} tensors stored, {} model has {}", meta.spec.kind, layout.len()),
        ));
    }
    let mut params = ParamStore::new(meta.seed);
    for def in &layout {
        let at = cur.pos;
        let name_len = cur.u32("name length")?;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| FormatError::new(at + 4, "tensor name is not UTF-8"))?;
        let rows = cur.u32("rows")?;
        let cols = cur.u32("cols")?;
        if name != def.name || (rows, cols) != (def.rows, def.cols) {
            return Err(FormatError::new(
                at,
                format!(
                    "tensor `{name}` {rows}x{cols} does not match spec tensor `{}` {}x{}",
                    def.name, def.rows, def.cols
                ),
            ));
        }
        let raw = cur.take(8 * rows * cols, "tensor payload")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let value = Matrix::from_vec(rows, cols, data).map_err(|e| FormatError::new(at, e.to_string()))?;
        params.push(name, value);
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::new(
            cur.pos,
            format!("{} trailing bytes after the last tensor", bytes.len() - cur.pos),
        ));
    }
    Ok((meta.spec, params))
}

pub fn save_checkpoint(path: &Path, params: &ParamStore, spec: &ModelSpec) -> Result<()> {
    params.check_layout(spec)?;
    let bytes = encode(params, spec).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })?;
    error::write(path, bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, ParamStore)> {
    decode(&error::read(path)?).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads parameters for `expected`; the stored model kind and every tensor
/// shape must match it.
pub fn load_checkpoint_as(path: &Path, expected: &ModelSpec) -> Result<ParamStore> {
    let (stored, params) = load_checkpoint(path)?;
    let fail = |msg: String| Err(Error::parse(path, msg));
    if stored.kind != expected.kind {
        return fail(format!("checkpoint holds a {} model, expected {}", stored.kind, expected.kind));
    }
    let defs = expected.layout();
    if defs.len() != params.len() {
        return fail(format!("checkpoint holds {} tensors, expected {}", params.len(), defs.len()));
    }
    for (def, p) in defs.iter().zip(params.params()) {
        if (def.rows, def.cols) != p.value.shape() || def.name != p.name {
            return fail(format!(
                "tensor `{}` is {}x{} in the checkpoint, expected {}x{}",
                def.name,
                p.value.rows(),
                p.value.cols(),
                def.rows,
                def.cols
            ));
        }
    }
    if stored.label_mode != expected.label_mode {
        return fail(format!(
            "checkpoint was trained for {} labels, expected {}",
            stored.label_mode.as_str(),
            expected.label_mode.as_str()
        ));
    }
    Ok(params)
}
