//! SWRF: per-video feature and label container.
//!
//! ```text
//! offset  size   field
//! 0       4      magic "SWRF"
//! 4       4      u32 version (1)
//! 8       4      u32 T (frames)
//! 12      4      u32 D (feature dim)
//! 16      1      u8 mode (0 multiclass, 1 multilabel)
//! 17      4      u32 C (classes)
//! 21      4·T·D  f32 features, row-major
//! ...            labels: T × u16 (multiclass) or T·C × u8 (multilabel)
//! ```
//!
//! All integers and floats are little-endian. Features are stored as f32
//! and widened to f64 on read.

use std::io::Read;
use std::path::Path;

use swr_core::data::{FeatureSequence, LabelMode, LabelTrack, Video};
use swr_core::Matrix;

use crate::error::{self, Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"SWRF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub frames: usize,
    pub dim: usize,
    pub mode: LabelMode,
    pub num_classes: usize,
}

impl Header {
    fn body_len(&self) -> Option<usize> {
        let features = self.frames.checked_mul(self.dim)?.checked_mul(4)?;
        let labels = match self.mode {
            LabelMode::Multiclass => self.frames.checked_mul(2)?,
            LabelMode::Multilabel => self.frames.checked_mul(self.num_classes)?,
        };
        features.checked_add(labels)
    }
}

fn u32_field(v: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::new(0, format!("{what} {v} does not fit in u32")))
}

pub fn encode(video: &Video) -> Result<Vec<u8>, FormatError> {
    let x = &video.seq.features;
    let labels = &video.labels;
    let c = labels.num_classes();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * x.as_slice().len() + 2 * x.rows());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_field(x.rows(), "frame count")?.to_le_bytes());
    out.extend_from_slice(&u32_field(x.cols(), "feature dim")?.to_le_bytes());
    out.push(match labels.mode() {
        LabelMode::Multiclass => 0,
        LabelMode::Multilabel => 1,
    });
    out.extend_from_slice(&u32_field(c, "class count")?.to_le_bytes());
    for &v in x.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    match labels {
        LabelTrack::Multiclass { ids, .. } => {
            if c > usize::from(u16::MAX) + 1 {
                return Err(FormatError::new(17, format!("{c} classes exceed the u16 label range")));
            }
            for &id in ids {
                out.extend_from_slice(&(id as u16).to_le_bytes());
            }
        }
        LabelTrack::Multilabel { mask, .. } => out.extend_from_slice(mask),
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

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_header(bytes: &[u8]) -> Result<Header, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(FormatError::new(0, "bad magic, not an SWRF file"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(FormatError::new(4, format!("unsupported version {version}")));
    }
    let frames = cur.u32("frame count")? as usize;
    if frames == 0 {
        return Err(FormatError::new(8, "frame count is zero"));
    }
    let dim = cur.u32("feature dim")? as usize;
    if dim == 0 {
        return Err(FormatError::new(12, "feature dim is zero"));
    }
    let mode = match cur.take(1, "mode")?[0] {
        0 => LabelMode::Multiclass,
        1 => LabelMode::Multilabel,
        m => return Err(FormatError::new(16, format!("unknown label mode {m}"))),
    };
    let num_classes = cur.u32("class count")? as usize;
    if num_classes < 2 {
        return Err(FormatError::new(17, format!("class count {num_classes} is below 2")));
    }
    if mode == LabelMode::Multiclass && num_classes > usize::from(u16::MAX) + 1 {
        return Err(FormatError::new(17, format!("{num_classes} classes exceed the u16 label range")));
    }
    Ok(Header {
        frames,
        dim,
        mode,
        num_classes,
    })
}

pub fn decode(video_id: &str, bytes: &[u8]) -> Result<Video, FormatError> {
    let h = decode_header(bytes)?;
    let expected = h
        .body_len()
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| FormatError::new(8, "header sizes overflow"))?;
    if bytes.len() > expected {
        return Err(FormatError::new(
            expected,
            format!("{} trailing bytes after the label block", bytes.len() - expected),
        ));
    }
    let mut cur = Cursor {
        bytes,
        pos: HEADER_LEN,
    };
    let raw = cur.take(4 * h.frames * h.dim, "feature block")?;
    let mut data = Vec::with_capacity(h.frames * h.dim);
    for (i, b) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        if !v.is_finite() {
            return Err(FormatError::new(HEADER_LEN + 4 * i, "non-finite feature value"));
        }
        data.push(f64::from(v));
    }
    let labels_at = cur.pos;
    let labels = match h.mode {
        LabelMode::Multiclass => {
            let raw = cur.take(2 * h.frames, "label block")?;
            let mut ids = Vec::with_capacity(h.frames);
            for (t, b) in raw.chunks_exact(2).enumerate() {
                let id = usize::from(u16::from_le_bytes([b[0], b[1]]));
                if id >= h.num_classes {
                    return Err(FormatError::new(
                        labels_at + 2 * t,
                        format!("label {id} out of range for {} classes", h.num_classes),
                    ));
                }
                ids.push(id);
            }
            LabelTrack::multiclass(h.num_classes, ids)
        }
        LabelMode::Multilabel => {
            let raw = cur.take(h.frames * h.num_classes, "label block")?;
            if let Some(i) = raw.iter().position(|&b| b > 1) {
                return Err(FormatError::new(labels_at + i, format!("non-binary label byte {}", raw[i])));
            }
            LabelTrack::multilabel(h.num_classes, raw.to_vec())
        }
    };
    let features = Matrix::from_vec(h.frames, h.dim, data).map_err(|e| FormatError::new(HEADER_LEN, e.to_string()))?;
    let seq = FeatureSequence::new(video_id, features).map_err(|e| FormatError::new(HEADER_LEN, e.to_string()))?;
    Video::new(seq, labels).map_err(|e| FormatError::new(labels_at, e.to_string()))
}

pub fn write_features(path: &Path, video: &Video) -> Result<()> {
    let bytes = encode(video).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })?;
    error::write(path, bytes)
}

pub fn read_features(path: &Path, video_id: &str) -> Result<Video> {
    let bytes = error::read(path)?;
    decode(video_id, &bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and checks only the fixed-size header.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut buf = Vec::with_capacity(HEADER_LEN);
    std::fs::File::open(path)
        .and_then(|f| f.take(HEADER_LEN as u64).read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_header(&buf).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}
