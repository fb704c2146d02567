//! Point-pattern descriptor sets and the PPF binary container.
//!
//! A PPF file holds one image's descriptor set. Layout, all little-endian:
//!
//! ```text
//! offset  size      field
//! 0       4         magic "RFSP" (52 46 53 50)
//! 4       2         version (u16, = 1)
//! 6       2         flags (u16; bit 0 = keypoint block present)
//! 8       4         D, descriptor dimension (u32, > 0)
//! 12      4         N, descriptor count (u32)
//! 16      N*16      keypoints, 4 x f32 each (x, y, scale, score)   [if bit 0]
//! ...     N*D*4     descriptors, f32 row-major
//! ```
//!
//! The file size must match the header exactly. Descriptor order is preserved
//! on load, duplicates included.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAGIC: [u8; 4] = *b"RFSP";
pub const VERSION: u16 = 1;
pub const FLAG_KEYPOINTS: u16 = 1;
pub const HEADER_LEN: usize = 16;
const KEYPOINT_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    pub score: f32,
}

impl Keypoint {
    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.scale.is_finite() && self.score.is_finite()
    }
}

/// One image's unordered set of `dim`-dimensional descriptors.
///
/// Descriptors are stored row-major as `f32`, matching what extractors emit.
/// Downstream numerics widen to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPatternSet {
    dim: usize,
    descriptors: Vec<f32>,
    keypoints: Option<Vec<Keypoint>>,
    pub source_id: String,
}

impl PointPatternSet {
    pub fn new(dim: usize, descriptors: Vec<f32>) -> Result<Self> {
        Self::with_keypoints(dim, descriptors, None)
    }

    pub fn with_keypoints(
        dim: usize,
        descriptors: Vec<f32>,
        keypoints: Option<Vec<Keypoint>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation(
                "descriptor dimension must be positive".into(),
            ));
        }
        if !descriptors.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!(
                "descriptor buffer of length {} is not a multiple of dim {dim}",
                descriptors.len()
            )));
        }
        if let Some(pos) = descriptors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value in descriptor {} component {}",
                pos / dim,
                pos % dim
            )));
        }
        let n = descriptors.len() / dim;
        if let Some(kps) = &keypoints {
            if kps.len() != n {
                return Err(Error::Validation(format!(
                    "{} keypoints for {n} descriptors",
                    kps.len()
                )));
            }
            if let Some(i) = kps.iter().position(|k| !k.is_finite()) {
                return Err(Error::Data(format!("non-finite keypoint {i}")));
            }
        }
        Ok(Self {
            dim,
            descriptors,
            keypoints,
            source_id: String::new(),
        })
    }

    /// Builds a set from rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Validation(format!(
                    "row {i} has {} components, expected {dim}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::new(dim, flat)
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cardinality |X|.
    pub fn len(&self) -> usize {
        self.descriptors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn descriptors(&self) -> &[f32] {
        &self.descriptors
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f32> {
        self.descriptors.chunks_exact(self.dim)
    }

    pub fn keypoints(&self) -> Option<&[Keypoint]> {
        self.keypoints.as_deref()
    }

    /// Size in bytes of this set's PPF encoding.
    pub fn encoded_len(&self) -> usize {
        let kp = if self.keypoints.is_some() {
            self.len() * KEYPOINT_LEN
        } else {
            0
        };
        HEADER_LEN + kp + self.descriptors.len() * 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        let flags = if self.keypoints.is_some() {
            FLAG_KEYPOINTS
        } else {
            0
        };
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        if let Some(kps) = &self.keypoints {
            for k in kps {
                for v in [k.x, k.y, k.scale, k.score] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        for v in &self.descriptors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a PPF buffer. `path` is used only for error context.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let format = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < HEADER_LEN {
            if bytes.len() < 4 || bytes[..4] != MAGIC {
                return Err(format("missing RFSP magic".into()));
            }
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: HEADER_LEN as u64,
                actual: bytes.len() as u64,
            });
        }
        if bytes[..4] != MAGIC {
            return Err(format("missing RFSP magic".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u16_at(4);
        if version != VERSION {
            return Err(format(format!("unsupported version {version}")));
        }
        let flags = u16_at(6);
        if flags & !FLAG_KEYPOINTS != 0 {
            return Err(format(format!("unknown flag bits {flags:#06x}")));
        }
        let dim = u32_at(8) as u64;
        let n = u32_at(12) as u64;
        if dim == 0 {
            return Err(format("descriptor dimension is zero".into()));
        }
        let has_kp = flags & FLAG_KEYPOINTS != 0;
        let kp_bytes = if has_kp { n * KEYPOINT_LEN as u64 } else { 0 };
        let expected = HEADER_LEN as u64 + kp_bytes + n * dim * 4;
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                actual,
            });
        }
        if actual > expected {
            return Err(format(format!(
                "{} trailing bytes after declared payload",
                actual - expected
            )));
        }

        let mut floats = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let keypoints = has_kp.then(|| {
            (0..n)
                .map(|_| {
                    let mut next = || floats.next().unwrap();
                    Keypoint {
                        x: next(),
                        y: next(),
                        scale: next(),
                        score: next(),
                    }
                })
                .collect::<Vec<_>>()
        });
        let descriptors: Vec<f32> = floats.collect();
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::with_keypoints(dim as usize, descriptors, keypoints)
            .map(|s| s.with_source_id(stem))
            .map_err(|e| match e {
                Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
                other => other,
            })
    }
}

pub fn read_ppf(path: impl AsRef<Path>) -> Result<PointPatternSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PointPatternSet::from_bytes(&bytes, path)
}

pub fn write_ppf(set: &PointPatternSet, path: impl AsRef<Path>) -> Result<()> {
    fsutil::write_atomic(path.as_ref(), &set.to_bytes())
}
