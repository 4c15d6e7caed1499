// SPDX-License-Identifier: MIT OR Apache-2.0

//! Difference-in-means concept vectors and their binary file format.
//!
//! ## File layout (little-endian)
//!
//! | field       | type                         |
//! |-------------|------------------------------|
//! | magic       | `b"CVEC"`                    |
//! | version     | `u16` (currently 1)          |
//! | n_layers    | `u16`                        |
//! | d_model     | `u32`                        |
//! | n_pairs     | `u32`                        |
//! | concept id  | `u16` length + UTF-8 bytes   |
//! | fingerprint | 8 bytes                      |
//! | body        | `n_layers * d_model` `f32`, layer-major |

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::concepts::{ConceptBank, PairedSample};
use crate::error::{Result, SteerError};
use crate::linalg;
use crate::model::{Fingerprint, Model};

pub const VECTOR_MAGIC: &[u8; 4] = b"CVEC";
pub const VECTOR_VERSION: u16 = 1;

/// Vectors with norm at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-6;

/// Per-layer concept vectors `v^l`, stored unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptVectorSet {
    pub concept_id: String,
    pub n_pairs: u32,
    vectors: Vec<Vec<f32>>,
    norms: Vec<f32>,
    pub fingerprint: Fingerprint,
}

impl ConceptVectorSet {
    pub fn new(
        concept_id: String,
        n_pairs: u32,
        vectors: Vec<Vec<f32>>,
        fingerprint: Fingerprint,
    ) -> Result<Self> {
        if n_pairs == 0 {
            return Err(SteerError::Input("a vector set needs N >= 1".into()));
        }
        if vectors.is_empty() {
            return Err(SteerError::Input(
                "a vector set needs at least one layer".into(),
            ));
        }
        let d = vectors[0].len();
        if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
            return Err(SteerError::Dimension {
                what: "concept vector width",
                expected: d,
                got: bad.len(),
            });
        }
        let norms = vectors.iter().map(|v| linalg::norm(v) as f32).collect();
        Ok(Self {
            concept_id,
            n_pairs,
            vectors,
            norms,
            fingerprint,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.vectors.len()
    }

    pub fn d_model(&self) -> usize {
        self.vectors[0].len()
    }

    /// `v^l` for a 1-indexed layer.
    pub fn layer(&self, layer: usize) -> Result<&[f32]> {
        if layer == 0 || layer > self.vectors.len() {
            return Err(SteerError::LayerOutOfRange {
                layer,
                n_layers: self.vectors.len(),
            });
        }
        Ok(&self.vectors[layer - 1])
    }

    pub fn vectors(&self) -> &[Vec<f32>] {
        &self.vectors
    }

    pub fn norms(&self) -> &[f32] {
        &self.norms
    }

    /// Unit-norm copy of `v^l`, `None` at zero layers.
    pub fn normalized(&self, layer: usize) -> Result<Option<Vec<f32>>> {
        Ok(linalg::normalized(self.layer(layer)?))
    }

    /// True when the set was extracted from `model`; logs a warning otherwise.
    pub fn check_fingerprint(&self, model: &Model) -> bool {
        let ok = self.fingerprint == model.fingerprint();
        if !ok {
            log::warn!(
                "vectors for `{}` were extracted from model {} but are used with {}",
                self.concept_id,
                hex8(&self.fingerprint),
                hex8(&model.fingerprint())
            );
        }
        ok
    }

    /// Check that the set fits `model`'s layer count and width.
    pub fn check_shape(&self, model: &Model) -> Result<()> {
        if self.n_layers() != model.n_layers() {
            return Err(SteerError::Dimension {
                what: "vector set layer count",
                expected: model.n_layers(),
                got: self.n_layers(),
            });
        }
        if self.d_model() != model.d_model() {
            return Err(SteerError::Dimension {
                what: "vector set width",
                expected: model.d_model(),
                got: self.d_model(),
            });
        }
        Ok(())
    }
}

pub fn hex8(f: &Fingerprint) -> String {
    f.iter().map(|b| format!("{b:02x}")).collect()
}

/// `v^l = (1/N) * sum_i (h^l(x_i+) - h^l(x_i-))` at the final prompt token.
///
/// Forward passes run in parallel; the mean is a pairwise sum over pairs in
/// input order.
pub fn extract(model: &Model, pairs: &[PairedSample], prompt: &[u32]) -> Result<ConceptVectorSet> {
    let first = pairs
        .first()
        .ok_or_else(|| SteerError::Input("cannot extract from an empty pair list".into()))?;
    if let Some(other) = pairs.iter().find(|p| p.concept_id != first.concept_id) {
        return Err(SteerError::Input(format!(
            "pairs mix concepts `{}` and `{}`",
            first.concept_id, other.concept_id
        )));
    }
    let n_pairs = u32::try_from(pairs.len())
        .map_err(|_| SteerError::Input(format!("too many pairs: {}", pairs.len())))?;
    let n_layers = model.n_layers();
    let d = model.d_model();

    let diffs: Vec<Vec<Vec<f32>>> = pairs
        .par_iter()
        .map(|pair| {
            let pos = model.forward_trace(&pair.positive, prompt)?;
            let neg = model.forward_trace(&pair.negative, prompt)?;
            Ok(pos
                .layers
                .iter()
                .zip(&neg.layers)
                .map(|(a, b)| linalg::sub(a, b))
                .collect())
        })
        .collect::<Result<_>>()?;

    let n = f64::from(n_pairs);
    let vectors = (0..n_layers)
        .map(|l| {
            let per_pair: Vec<Vec<f32>> = diffs.iter().map(|d| d[l].clone()).collect();
            linalg::pairwise_sum(&per_pair, d)
                .into_iter()
                .map(|s| (s / n) as f32)
                .collect()
        })
        .collect();
    ConceptVectorSet::new(
        first.concept_id.clone(),
        n_pairs,
        vectors,
        model.fingerprint(),
    )
}

pub fn encode_vectors(set: &ConceptVectorSet) -> Result<Vec<u8>> {
    let n_layers = u16::try_from(set.n_layers())
        .map_err(|_| SteerError::Input("too many layers for the vector format".into()))?;
    let d = u32::try_from(set.d_model())
        .map_err(|_| SteerError::Input("d_model too large for the vector format".into()))?;
    let id = set.concept_id.as_bytes();
    let id_len = u16::try_from(id.len())
        .map_err(|_| SteerError::Input("concept id longer than 65535 bytes".into()))?;

    let mut out = Vec::with_capacity(24 + id.len() + set.n_layers() * set.d_model() * 4);
    out.extend_from_slice(VECTOR_MAGIC);
    out.extend_from_slice(&VECTOR_VERSION.to_le_bytes());
    out.extend_from_slice(&n_layers.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&set.n_pairs.to_le_bytes());
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&set.fingerprint);
    for v in set.vectors.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Bounds-checked little-endian reader over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_vectors(bytes: &[u8], path: &Path) -> Result<ConceptVectorSet> {
    let format = |reason: String| SteerError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let shape = |reason: String| SteerError::Shape {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader { bytes, pos: 0 };
    match r.take(4) {
        Some(m) if m == VECTOR_MAGIC => {}
        Some(m) => return Err(format(format!("bad magic {m:?}"))),
        None => return Err(shape("file shorter than the magic number".into())),
    }
    let version = r.u16().ok_or_else(|| shape("truncated header".into()))?;
    if version != VECTOR_VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let header = (|| {
        let n_layers = usize::from(r.u16()?);
        let d = r.u32()? as usize;
        let n_pairs = r.u32()?;
        let id_len = usize::from(r.u16()?);
        let id = r.take(id_len)?.to_vec();
        let mut fp = [0u8; 8];
        fp.copy_from_slice(r.take(8)?);
        Some((n_layers, d, n_pairs, id, fp))
    })();
    let (n_layers, d, n_pairs, id, fingerprint) =
        header.ok_or_else(|| shape("truncated header".into()))?;
    let concept_id =
        String::from_utf8(id).map_err(|e| format(format!("concept id is not UTF-8: {e}")))?;
    if n_layers == 0 || d == 0 {
        return Err(shape(format!("empty shape {n_layers}x{d}")));
    }
    let body_len = n_layers
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| shape("shape overflows".into()))?;
    let remaining = bytes.len() - r.pos;
    if remaining != body_len {
        return Err(shape(format!(
            "header declares {n_layers}x{d} floats ({body_len} bytes) but body has {remaining} bytes"
        )));
    }
    let body = r.take(body_len).expect("length checked");
    let flat: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let vectors = flat.chunks_exact(d).map(<[f32]>::to_vec).collect();
    ConceptVectorSet::new(concept_id, n_pairs, vectors, fingerprint)
        .map_err(|e| shape(e.to_string()))
}

pub fn save_vectors(set: &ConceptVectorSet, path: &Path) -> Result<()> {
    let bytes = encode_vectors(set)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| SteerError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| SteerError::io(path, e))
}

pub fn load_vectors(path: &Path) -> Result<ConceptVectorSet> {
    let bytes = fs::read(path).map_err(|e| SteerError::io(path, e))?;
    decode_vectors(&bytes, path)
}

/// Load and validate against a model: shape mismatch is an error, a foreign
/// fingerprint only warns.
pub fn load_vectors_for(path: &Path, model: &Model) -> Result<ConceptVectorSet> {
    let set = load_vectors(path)?;
    set.check_shape(model)?;
    set.check_fingerprint(model);
    Ok(set)
}

/// Cosine between each `v^l` and the concept's planted direction; `None`
/// where `v^l` is (numerically) zero.
pub fn faithfulness_direction_check(
    set: &ConceptVectorSet,
    bank: &ConceptBank,
) -> Result<Vec<Option<f64>>> {
    let spec = bank.get(&set.concept_id).ok_or_else(|| {
        SteerError::Input(format!("concept `{}` is not in the bank", set.concept_id))
    })?;
    if spec.direction.len() != set.d_model() {
        return Err(SteerError::Dimension {
            what: "planted direction",
            expected: set.d_model(),
            got: spec.direction.len(),
        });
    }
    Ok(set
        .vectors
        .iter()
        .map(|v| {
            if linalg::norm(v) <= ZERO_NORM {
                None
            } else {
                linalg::cosine(v, &spec.direction)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::make_concept_bank;
    use crate::model::{ModelConfig, SubstrateKind, VisualPrefix};

    fn model() -> Model {
        let bank = make_concept_bank(2, 2, true, 0).unwrap();
        let cfg = ModelConfig::linear(3, 2, 8, 1, 1).with_gains(vec![0.0, 1.0, 0.0]);
        Model::build(cfg, &bank).unwrap()
    }

    fn pair(pos: [f32; 2], neg: [f32; 2]) -> PairedSample {
        PairedSample {
            positive: VisualPrefix::new(vec![pos.to_vec()], SubstrateKind::Scene).unwrap(),
            negative: VisualPrefix::new(vec![neg.to_vec()], SubstrateKind::Scene).unwrap(),
            concept_id: "c0".into(),
            noise: 0.0,
        }
    }

    #[test]
    fn identical_prefixes_extract_zero() {
        let m = model();
        let set = extract(&m, &[pair([1.0, 2.0], [1.0, 2.0])], &[4]).unwrap();
        assert!(set.vectors().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_of_planted_differences() {
        let m = model();
        let pairs = [pair([2.5, 0.5], [0.5, 0.5]), pair([1.0, 3.0], [1.0, 1.0])];
        let set = extract(&m, &pairs, &[4]).unwrap();
        assert_eq!(set.layer(1).unwrap(), &[0.0, 0.0]);
        assert_eq!(set.layer(2).unwrap(), &[1.0, 1.0]);
        assert_eq!(set.layer(3).unwrap(), &[1.0, 1.0]);
        assert_eq!(set.n_pairs, 2);
        assert_eq!(set.fingerprint, m.fingerprint());

        let swapped: Vec<_> = pairs.iter().map(PairedSample::swapped).collect();
        let neg = extract(&m, &swapped, &[4]).unwrap();
        for (a, b) in set
            .vectors()
            .iter()
            .flatten()
            .zip(neg.vectors().iter().flatten())
        {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn rejects_empty_and_mixed_pairs() {
        let m = model();
        assert!(extract(&m, &[], &[4]).is_err());
        let mut other = pair([1.0, 0.0], [0.0, 0.0]);
        other.concept_id = "c1".into();
        assert!(extract(&m, &[pair([1.0, 0.0], [0.0, 0.0]), other], &[4]).is_err());
        let wide = PairedSample {
            positive: VisualPrefix::new(vec![vec![0.0; 3]], SubstrateKind::Scene).unwrap(),
            negative: VisualPrefix::new(vec![vec![0.0; 3]], SubstrateKind::Scene).unwrap(),
            concept_id: "c0".into(),
            noise: 0.0,
        };
        assert!(matches!(
            extract(&m, &[wide], &[4]),
            Err(SteerError::Dimension { .. })
        ));
    }

    #[test]
    fn vector_file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c0.cvec");
        let set = ConceptVectorSet::new(
            "c0".into(),
            7,
            vec![vec![1.5, -0.25], vec![f32::MIN_POSITIVE, 3.0]],
            [9; 8],
        )
        .unwrap();
        save_vectors(&set, &path).unwrap();
        let back = load_vectors(&path).unwrap();
        assert_eq!(back, set);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_vectors(&path), Err(SteerError::Shape { .. })));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_vectors(&path),
            Err(SteerError::Format { .. })
        ));

        fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(load_vectors(&path), Err(SteerError::Shape { .. })));
    }

    #[test]
    fn direction_check_reports_zero_layers_as_absent() {
        let bank = make_concept_bank(2, 2, true, 0).unwrap();
        let dir = bank.concepts()[0].direction.clone();
        let set = ConceptVectorSet::new(
            "c0".into(),
            1,
            vec![vec![0.0, 0.0], linalg::scaled(&dir, 3.0)],
            [0; 8],
        )
        .unwrap();
        let cos = faithfulness_direction_check(&set, &bank).unwrap();
        assert!(cos[0].is_none());
        assert!((cos[1].unwrap() - 1.0).abs() < 1e-6);
        let unknown = ConceptVectorSet::new("zz".into(), 1, vec![vec![1.0, 0.0]], [0; 8]).unwrap();
        assert!(faithfulness_direction_check(&unknown, &bank).is_err());
    }
}
