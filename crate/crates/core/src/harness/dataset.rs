// SPDX-License-Identifier: MIT OR Apache-2.0

//! Paired-sample files.
//!
//! Little-endian binary layout:
//!
//! ```text
//! magic       4 bytes  "PAIR"
//! version     u16      1
//! n_pairs     u32
//! prefix_len  u32      P
//! d_model     u32      d
//! substrate   u8       0 scene, 1 blank, 2 noise
//! noise       f32      per-position noise std used at generation
//! id_len      u16
//! concept_id  id_len bytes, UTF-8
//! body        n_pairs x (positive P x d f32, negative P x d f32), row-major
//! ```

use std::fs;
use std::path::Path;

use crate::concepts::PairedSample;
use crate::error::{Result, SteerError};
use crate::model::{SubstrateKind, VisualPrefix};

pub const PAIRS_MAGIC: &[u8; 4] = b"PAIR";
pub const PAIRS_VERSION: u16 = 1;

pub fn encode_pairs(pairs: &[PairedSample]) -> Result<Vec<u8>> {
    let first = pairs
        .first()
        .ok_or_else(|| SteerError::Input("cannot write an empty pair list".into()))?;
    let p = first.positive.len();
    let d = first.positive.dim();
    for pair in pairs {
        if pair.concept_id != first.concept_id {
            return Err(SteerError::Input("pair file holds a single concept".into()));
        }
        pair.positive.check_shape(Some(p), Some(d))?;
        pair.negative.check_shape(Some(p), Some(d))?;
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v)
            .map_err(|_| SteerError::Input(format!("{what} too large for the pair format")))
    };
    let id = first.concept_id.as_bytes();
    let id_len =
        u16::try_from(id.len()).map_err(|_| SteerError::Input("concept id too long".into()))?;

    let mut out = Vec::with_capacity(32 + id.len() + pairs.len() * 2 * p * d * 4);
    out.extend_from_slice(PAIRS_MAGIC);
    out.extend_from_slice(&PAIRS_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(pairs.len(), "pair count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(p, "prefix_len")?.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "d_model")?.to_le_bytes());
    out.push(first.positive.kind.code());
    out.extend_from_slice(&first.noise.to_le_bytes());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    for pair in pairs {
        for prefix in [&pair.positive, &pair.negative] {
            for row in &prefix.embeddings {
                for x in row {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| SteerError::Shape {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {} (need {n} more)", self.pos),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }
}

pub fn decode_pairs(bytes: &[u8], path: &Path) -> Result<Vec<PairedSample>> {
    let format = |reason: String| SteerError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let shape = |reason: String| SteerError::Shape {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if bytes.len() < 4 || r.take(4)? != PAIRS_MAGIC {
        return Err(format("bad magic, not a pair file".into()));
    }
    let version = r.u16()?;
    if version != PAIRS_VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let p = r.u32()? as usize;
    let d = r.u32()? as usize;
    let kind_code = r.take(1)?[0];
    let kind = SubstrateKind::from_code(kind_code)
        .ok_or_else(|| format(format!("unknown substrate code {kind_code}")))?;
    let noise = r.f32()?;
    let id_len = r.u16()? as usize;
    let concept_id = String::from_utf8(r.take(id_len)?.to_vec())
        .map_err(|_| format("concept id is not UTF-8".into()))?;
    if n == 0 || p == 0 || d == 0 {
        return Err(shape(format!("empty dimensions n={n} P={p} d={d}")));
    }
    let body = n
        .checked_mul(2 * p * d * 4)
        .ok_or_else(|| shape("header dimensions overflow".into()))?;
    let remaining = bytes.len() - r.pos;
    if remaining != body {
        return Err(shape(format!(
            "body has {remaining} bytes, header implies {body}"
        )));
    }
    let read_prefix = |r: &mut Reader| -> Result<VisualPrefix> {
        let rows = (0..p)
            .map(|_| (0..d).map(|_| r.f32()).collect::<Result<Vec<f32>>>())
            .collect::<Result<_>>()?;
        Ok(VisualPrefix {
            embeddings: rows,
            kind,
        })
    };
    (0..n)
        .map(|_| {
            let positive = read_prefix(&mut r)?;
            let negative = read_prefix(&mut r)?;
            Ok(PairedSample {
                positive,
                negative,
                concept_id: concept_id.clone(),
                noise,
            })
        })
        .collect()
}

pub fn save_pairs(pairs: &[PairedSample], path: &Path) -> Result<()> {
    let bytes = encode_pairs(pairs)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| SteerError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| SteerError::io(path, e))
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairedSample>> {
    let bytes = fs::read(path).map_err(|e| SteerError::io(path, e))?;
    decode_pairs(&bytes, path)
}
