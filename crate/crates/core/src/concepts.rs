// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic ground-truth concepts and paired positive/negative prefixes.
//!
//! Each concept is a unit direction in residual space with a target token and
//! a localization profile saying at which depths the model expresses it.
//! Positive prefixes carry `norm * direction` on top of a shared base;
//! negatives carry only the base (or the opposite signal, see [`NegativeKind`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SteerError};
use crate::linalg;
use crate::model::{ModelConfig, SubstrateKind, VisualPrefix, RESERVED_TOKENS};

/// Rank of the structured "scene" substrate.
const SCENE_RANK: usize = 3;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Entity,
    Style,
    Emotion,
    Abstract,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Entity => "entity",
            Self::Style => "style",
            Self::Emotion => "emotion",
            Self::Abstract => "abstract",
        }
    }
}

/// Where along depth a concept is expressed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Localization {
    /// Category default centred on `peak_layer` (or `L / 2`):
    /// entity one-hot, style over two layers, emotion a three-layer bump,
    /// abstract uniform.
    Preset {
        peak_layer: Option<usize>,
    },
    OneHot {
        layer: usize,
    },
    Uniform,
    /// Equal mass on each listed layer.
    Layers(Vec<usize>),
    /// Explicit per-layer mass; must have length `L`.
    Explicit(Vec<f32>),
}

impl Default for Localization {
    fn default() -> Self {
        Self::Preset { peak_layer: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSpec {
    pub id: String,
    pub target_token: u32,
    /// Unit-norm direction; the planted signal is `norm * direction`.
    pub direction: Vec<f32>,
    pub localization: Localization,
    pub category: Category,
    pub norm: f32,
}

impl ConceptSpec {
    pub fn signal(&self) -> Vec<f32> {
        linalg::scaled(&self.direction, self.norm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBank {
    concepts: Vec<ConceptSpec>,
    orthogonal: bool,
}

impl ConceptBank {
    /// Validates unit norms, unique ids and tokens, and orthogonality when flagged.
    pub fn from_specs(concepts: Vec<ConceptSpec>, orthogonal: bool) -> Result<Self> {
        if concepts.is_empty() {
            return Err(SteerError::Input("concept bank must be non-empty".into()));
        }
        let d = concepts[0].direction.len();
        for (i, c) in concepts.iter().enumerate() {
            if c.direction.len() != d {
                return Err(SteerError::Dimension {
                    what: "concept direction",
                    expected: d,
                    got: c.direction.len(),
                });
            }
            if (linalg::norm(&c.direction) - 1.0).abs() > UNIT_TOL {
                return Err(SteerError::Input(format!(
                    "direction of `{}` is not unit-norm",
                    c.id
                )));
            }
            if !(c.norm.is_finite() && c.norm >= 0.0) {
                return Err(SteerError::Input(format!(
                    "norm of `{}` must be finite and >= 0",
                    c.id
                )));
            }
            if c.target_token < RESERVED_TOKENS {
                return Err(SteerError::Input(format!(
                    "target token {} of `{}` is reserved",
                    c.target_token, c.id
                )));
            }
            for other in &concepts[..i] {
                if other.id == c.id {
                    return Err(SteerError::Input(format!(
                        "duplicate concept id `{}`",
                        c.id
                    )));
                }
                if other.target_token == c.target_token {
                    return Err(SteerError::Input(format!(
                        "concepts `{}` and `{}` share target token {}",
                        other.id, c.id, c.target_token
                    )));
                }
                if orthogonal && linalg::dot(&other.direction, &c.direction).abs() > UNIT_TOL {
                    return Err(SteerError::Input(format!(
                        "concepts `{}` and `{}` are not orthogonal",
                        other.id, c.id
                    )));
                }
            }
        }
        Ok(Self {
            concepts,
            orthogonal,
        })
    }

    pub fn concepts(&self) -> &[ConceptSpec] {
        &self.concepts
    }

    pub fn concepts_mut(&mut self) -> impl Iterator<Item = &mut ConceptSpec> {
        self.concepts.iter_mut()
    }

    pub fn get(&self, id: &str) -> Option<&ConceptSpec> {
        self.concepts.iter().find(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn is_orthogonal(&self) -> bool {
        self.orthogonal
    }

    pub fn d_model(&self) -> usize {
        self.concepts[0].direction.len()
    }

    /// Hash of everything in the bank that influences model weights.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for c in &self.concepts {
            h.update(c.target_token.to_le_bytes());
            for v in &c.direction {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// `n` unit directions in `R^d`, Gram-Schmidt orthonormalized when `orthogonal`.
///
/// Concepts are named `c0, c1, ...`, target tokens start right after the
/// reserved ids, category defaults to entity and signal norm to 1.
pub fn make_concept_bank(n: usize, d: usize, orthogonal: bool, seed: u64) -> Result<ConceptBank> {
    if n == 0 {
        return Err(SteerError::Input("n_concepts must be >= 1".into()));
    }
    if d == 0 {
        return Err(SteerError::Input("d must be >= 1".into()));
    }
    if orthogonal && n > d {
        return Err(SteerError::Input(format!(
            "cannot draw {n} orthogonal directions in dimension {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions = Vec::with_capacity(n);
    while directions.len() < n {
        let raw = linalg::gaussian_vec(&mut rng, d, 1.0);
        let candidate = if orthogonal {
            let basis = linalg::orthonormal_basis(&directions);
            let mut v = raw;
            linalg::project_out(&mut v, &basis);
            linalg::project_out(&mut v, &basis);
            v
        } else {
            raw
        };
        // a degenerate draw is astronomically unlikely; redraw rather than fail
        if let Some(unit) = linalg::normalized(&candidate) {
            directions.push(unit);
        }
    }
    let concepts = directions
        .into_iter()
        .enumerate()
        .map(|(i, direction)| ConceptSpec {
            id: format!("c{i}"),
            target_token: RESERVED_TOKENS + i as u32,
            direction,
            localization: Localization::default(),
            category: Category::Entity,
            norm: 1.0,
        })
        .collect();
    ConceptBank::from_specs(concepts, orthogonal)
}

/// How negatives differ from positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    /// Negative is the bare base.
    #[default]
    Absence,
    /// Negative carries `-norm * direction` (antonym-style pairs).
    Opposite,
}

/// Shared-base distribution for paired samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDesign {
    pub substrate: SubstrateKind,
    pub substrate_scale: f32,
    pub prefix_len: usize,
    pub negative: NegativeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub positive: VisualPrefix,
    pub negative: VisualPrefix,
    pub concept_id: String,
    pub noise: f32,
}

impl PairedSample {
    pub fn swapped(&self) -> Self {
        Self {
            positive: self.negative.clone(),
            negative: self.positive.clone(),
            concept_id: self.concept_id.clone(),
            noise: self.noise,
        }
    }
}

/// Per-item generator: base seed plus item index, on a purpose-specific stream.
pub(crate) fn item_rng(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index));
    rng.set_stream(stream);
    rng
}

/// `n` pairs sharing a fresh base each: every prefix position gets
/// `base + signal + eta` (positive) or `base + eta'` (negative), with
/// independent `eta ~ N(0, noise^2 I)` per position, so the prefix summaries
/// differ by `norm * direction` plus noise of scale `noise / sqrt(P)`.
pub fn generate_pairs(
    spec: &ConceptSpec,
    n: usize,
    design: &PairDesign,
    noise: f32,
    seed: u64,
) -> Result<Vec<PairedSample>> {
    if n == 0 {
        return Err(SteerError::Input("pair count must be >= 1".into()));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(SteerError::Input(format!(
            "noise must be finite and >= 0, got {noise}"
        )));
    }
    if design.prefix_len == 0 {
        return Err(SteerError::Input("prefix_len must be >= 1".into()));
    }
    let d = spec.direction.len();
    let signal = spec.signal();
    let negative_signal = match design.negative {
        NegativeKind::Absence => None,
        NegativeKind::Opposite => Some(linalg::scaled(&signal, -1.0)),
    };
    let pairs = (0..n)
        .map(|i| {
            let base = make_substrate(
                design.substrate,
                d,
                design.prefix_len,
                design.substrate_scale,
                seed.wrapping_add(i as u64),
            );
            let mut rng = item_rng(seed, i as u64, 1);
            let mut build = |extra: Option<&[f32]>| -> Vec<Vec<f32>> {
                base.embeddings
                    .iter()
                    .map(|b| {
                        let mut e = b.clone();
                        if let Some(s) = extra {
                            linalg::axpy(&mut e, 1.0, s);
                        }
                        if noise > 0.0 {
                            let eta = linalg::gaussian_vec(&mut rng, d, f64::from(noise));
                            linalg::axpy(&mut e, 1.0, &eta);
                        }
                        e
                    })
                    .collect()
            };
            let positive = build(Some(&signal));
            let negative = build(negative_signal.as_deref());
            PairedSample {
                positive: VisualPrefix {
                    embeddings: positive,
                    kind: design.substrate,
                },
                negative: VisualPrefix {
                    embeddings: negative,
                    kind: design.substrate,
                },
                concept_id: spec.id.clone(),
                noise,
            }
        })
        .collect();
    Ok(pairs)
}

/// Synthetic image substrate.
///
/// * scene: each position is a random mixture of a few shared seeded basis
///   vectors, scaled by `scale`
/// * blank: all zeros
/// * noise: i.i.d. `N(0, scale^2)` per coordinate
pub fn make_substrate(
    kind: SubstrateKind,
    d: usize,
    prefix_len: usize,
    scale: f32,
    seed: u64,
) -> VisualPrefix {
    let mut rng = item_rng(seed, 0, 2);
    let embeddings = match kind {
        SubstrateKind::Blank => vec![vec![0.0; d]; prefix_len],
        SubstrateKind::Noise => (0..prefix_len)
            .map(|_| linalg::gaussian_vec(&mut rng, d, f64::from(scale)))
            .collect(),
        SubstrateKind::Scene => {
            let rank = SCENE_RANK.min(d);
            let basis: Vec<Vec<f32>> = (0..rank)
                .map(|_| linalg::gaussian_vec(&mut rng, d, 1.0 / (d as f64).sqrt()))
                .collect();
            (0..prefix_len)
                .map(|_| {
                    let mut e = vec![0.0f32; d];
                    for b in &basis {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        linalg::axpy(&mut e, (z * f64::from(scale)) as f32, b);
                    }
                    e
                })
                .collect()
        }
    };
    VisualPrefix { embeddings, kind }
}

/// Resolve a concept's localization into per-layer re-injection gains for a
/// model with `config.n_layers` layers. Gains are nonnegative and sum to 1.
pub fn apply_localization(spec: &ConceptSpec, config: &ModelConfig) -> Result<Vec<f32>> {
    localization_profile(&spec.localization, spec.category, config.n_layers)
}

pub fn localization_profile(
    loc: &Localization,
    category: Category,
    n_layers: usize,
) -> Result<Vec<f32>> {
    let check_layer = |layer: usize| {
        if layer == 0 || layer > n_layers {
            Err(SteerError::LayerOutOfRange { layer, n_layers })
        } else {
            Ok(layer)
        }
    };
    let mut mass = vec![0.0f64; n_layers];
    match loc {
        Localization::OneHot { layer } => mass[check_layer(*layer)? - 1] = 1.0,
        Localization::Uniform => mass.iter_mut().for_each(|m| *m = 1.0),
        Localization::Layers(layers) => {
            if layers.is_empty() {
                return Err(SteerError::Input("localization layer list is empty".into()));
            }
            for &l in layers {
                mass[check_layer(l)? - 1] += 1.0;
            }
        }
        Localization::Explicit(profile) => {
            if profile.len() != n_layers {
                return Err(SteerError::Dimension {
                    what: "localization profile",
                    expected: n_layers,
                    got: profile.len(),
                });
            }
            if profile.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(SteerError::Input(
                    "profile entries must be finite and >= 0".into(),
                ));
            }
            mass.iter_mut()
                .zip(profile)
                .for_each(|(m, &p)| *m = f64::from(p));
        }
        Localization::Preset { peak_layer } => {
            let peak = check_layer(peak_layer.unwrap_or((n_layers / 2).max(1)))?;
            let mut put = |layer: isize, w: f64| {
                if layer >= 1 && layer as usize <= n_layers {
                    mass[layer as usize - 1] += w;
                }
            };
            let p = peak as isize;
            match category {
                Category::Entity => put(p, 1.0),
                Category::Style => {
                    put(p, 1.0);
                    put(p + 1, 1.0);
                }
                Category::Emotion => {
                    put(p - 1, 1.0);
                    put(p, 2.0);
                    put(p + 1, 1.0);
                }
                Category::Abstract => (1..=n_layers as isize).for_each(|l| put(l, 1.0)),
            }
        }
    }
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(SteerError::Input(
            "localization profile has zero mass".into(),
        ));
    }
    Ok(mass.iter().map(|m| (m / total) as f32).collect())
}

/// Perturb each gain by `N(0, jitter^2)`, clamp at 0, renormalize to sum 1.
pub fn jitter_profile<R: Rng + ?Sized>(profile: &[f32], jitter: f32, rng: &mut R) -> Vec<f32> {
    let mut out: Vec<f64> = profile
        .iter()
        .map(|&p| {
            let z: f64 = StandardNormal.sample(rng);
            (f64::from(p) + f64::from(jitter) * z).max(0.0)
        })
        .collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
        out.iter().map(|&v| v as f32).collect()
    } else {
        profile.to_vec()
    }
}
