// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration, read from TOML. Unknown keys are errors.
//!
//! ```toml
//! seed = 7                      # required: no implicit entropy
//! out_dir = "runs/default"
//!
//! [model]                       # toy transformer
//! n_layers = 8
//! d_model = 64
//! n_heads = 4
//! vocab_size = 256
//! prefix_len = 4
//! layer_gain = 0.0              # 0 = weight-free residual path
//! nonlinearity_strength = 0.0   # 0 = linear, 1 = softmax attention + GELU
//!
//! [concepts]
//! orthogonal = true
//! signal_norm = 4.0             # planted |signal| per concept
//! [[concepts.entries]]          # one per concept; ids default to c0, c1, ...
//! id = "dog"
//! category = "entity"           # entity | style | emotion | abstract
//! localization = { one_hot = { layer = 4 } }   # or "uniform", { layers = [3, 6] },
//!                                              # { preset = { peak_layer = 4 } }, { explicit = [...] }
//!
//! [data]
//! pairs_per_concept = 100
//! eval_samples = 500
//! substrate = "scene"           # scene | blank | noise
//! substrate_scale = 1.0
//! noise = 0.0                   # per-position pair noise std
//! negative = "absence"          # absence | opposite
//! prompt = [254, 255]           # defaults to the last two vocabulary ids
//!
//! [sweep]
//! layers = [1, 2, 3]            # default: every layer
//! alpha = 1.0                   # layer-sweep coefficient
//! alphas = [0.1, 0.5, 1.0, 2.0, 5.0]
//! max_len = 8
//! steer_every_step = true
//! position = "final_token"      # final_token | all_positions
//! metrics = ["success_rate", "similarity", "logit_boost"]
//!
//! [peaks]                       # peak-layer histogram experiment
//! samples = 500
//! layers = [3, 6]
//! jitter = 0.1
//!
//! [reverse]
//! concept = "dog"               # default: first concept
//! injection_layer = 1
//! alpha = 1.0
//!
//! [confusion]
//! layer = 8                     # default: last layer
//! alpha = 1.0
//!
//! [faithfulness]
//! alphas = [0.5, 1.0, 2.0]
//!
//! [optimality]                  # see optimality::SuiteConfig
//! problems = 100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::concepts::{Category, Localization, NegativeKind};
use crate::error::{Result, SteerError};
use crate::model::{ModelConfig, ReinjectionPreset, SubstrateKind, RESERVED_TOKENS};
use crate::optimality::SuiteConfig;
use crate::steering::{PositionPolicy, DEFAULT_ALPHAS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub concepts: ConceptsSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub peaks: PeaksSection,
    #[serde(default)]
    pub reverse: ReverseSection,
    #[serde(default)]
    pub confusion: ConfusionSection,
    #[serde(default)]
    pub faithfulness: FaithfulnessSection,
    #[serde(default)]
    pub optimality: SuiteConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub prefix_len: usize,
    pub layer_gain: f32,
    pub nonlinearity_strength: f32,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_layers: 8,
            d_model: 64,
            n_heads: 4,
            vocab_size: 256,
            prefix_len: 4,
            layer_gain: 0.0,
            nonlinearity_strength: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConceptEntry {
    pub id: Option<String>,
    pub category: Category,
    pub localization: Localization,
    /// Overrides `concepts.signal_norm`.
    pub norm: Option<f32>,
}

impl Default for ConceptEntry {
    fn default() -> Self {
        Self {
            id: None,
            category: Category::Entity,
            localization: Localization::default(),
            norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConceptsSection {
    pub orthogonal: bool,
    pub signal_norm: f32,
    pub entries: Vec<ConceptEntry>,
}

impl Default for ConceptsSection {
    fn default() -> Self {
        let entry = |category| ConceptEntry {
            category,
            ..ConceptEntry::default()
        };
        Self {
            orthogonal: true,
            signal_norm: 4.0,
            entries: vec![
                entry(Category::Entity),
                entry(Category::Style),
                entry(Category::Emotion),
                entry(Category::Abstract),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub pairs_per_concept: usize,
    pub eval_samples: usize,
    pub substrate: SubstrateKind,
    pub substrate_scale: f32,
    pub noise: f32,
    pub negative: NegativeKind,
    pub prompt: Option<Vec<u32>>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            pairs_per_concept: 100,
            eval_samples: 500,
            substrate: SubstrateKind::Scene,
            substrate_scale: 1.0,
            noise: 0.0,
            negative: NegativeKind::Absence,
            prompt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    SuccessRate,
    Similarity,
    LogitBoost,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [Self::SuccessRate, Self::Similarity, Self::LogitBoost];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SuccessRate => "success_rate",
            Self::Similarity => "similarity",
            Self::LogitBoost => "logit_boost",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub layers: Option<Vec<usize>>,
    pub alpha: f32,
    pub alphas: Vec<f32>,
    pub max_len: usize,
    pub steer_every_step: bool,
    pub position: PositionPolicy,
    pub metrics: Vec<MetricKind>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            layers: None,
            alpha: 1.0,
            alphas: DEFAULT_ALPHAS.to_vec(),
            max_len: 8,
            steer_every_step: true,
            position: PositionPolicy::FinalToken,
            metrics: MetricKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeaksSection {
    pub samples: usize,
    /// Layers sharing the planted mass equally before jitter.
    pub layers: Vec<usize>,
    pub jitter: f32,
}

impl Default for PeaksSection {
    fn default() -> Self {
        Self {
            samples: 500,
            layers: vec![3, 6],
            jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReverseSection {
    pub concept: Option<String>,
    pub injection_layer: usize,
    pub alpha: f32,
}

impl Default for ReverseSection {
    fn default() -> Self {
        Self {
            concept: None,
            injection_layer: 1,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfusionSection {
    pub layer: Option<usize>,
    pub alpha: f32,
}

impl Default for ConfusionSection {
    fn default() -> Self {
        Self {
            layer: None,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaithfulnessSection {
    pub alphas: Vec<f32>,
}

impl Default for FaithfulnessSection {
    fn default() -> Self {
        Self {
            alphas: vec![0.5, 1.0, 2.0],
        }
    }
}

impl ExperimentConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            out_dir: default_out_dir(),
            model: ModelSection::default(),
            concepts: ConceptsSection::default(),
            data: DataSection::default(),
            sweep: SweepSection::default(),
            peaks: PeaksSection::default(),
            reverse: ReverseSection::default(),
            confusion: ConfusionSection::default(),
            faithfulness: FaithfulnessSection::default(),
            optimality: SuiteConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SteerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SteerError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SteerError::Config(msg) => SteerError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| SteerError::Config(e.to_string()))
    }

    /// Model config with single injection at layer 1; concept pipelines swap
    /// in each concept's own gains.
    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_layers: m.n_layers,
            d_model: m.d_model,
            n_heads: m.n_heads,
            vocab_size: m.vocab_size,
            prefix_len: m.prefix_len,
            layer_gain: m.layer_gain,
            reinjection_gains: ReinjectionPreset::Single.gains(m.n_layers),
            nonlinearity_strength: m.nonlinearity_strength,
            seed: self.seed,
        }
    }

    pub fn prompt(&self) -> Vec<u32> {
        self.data.prompt.clone().unwrap_or_else(|| {
            let v = self.model.vocab_size as u32;
            vec![v - 2, v - 1]
        })
    }

    pub fn sweep_layers(&self) -> Vec<usize> {
        self.sweep
            .layers
            .clone()
            .unwrap_or_else(|| (1..=self.model.n_layers).collect())
    }

    pub fn confusion_layer(&self) -> usize {
        self.confusion.layer.unwrap_or(self.model.n_layers)
    }

    pub fn concept_ids(&self) -> Vec<String> {
        self.concepts
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| e.id.clone().unwrap_or_else(|| format!("c{i}")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SteerError::Config(msg));
        self.model_config().validate()?;
        let n_layers = self.model.n_layers;
        let layer_ok = |l: usize| l >= 1 && l <= n_layers;
        let alpha_ok = |a: f32| a.is_finite() && a >= 0.0;

        let n_concepts = self.concepts.entries.len();
        if n_concepts == 0 {
            return bad("concepts.entries must list at least one concept".into());
        }
        if self.concepts.orthogonal && n_concepts > self.model.d_model {
            return bad(format!(
                "{n_concepts} orthogonal concepts do not fit d_model {}",
                self.model.d_model
            ));
        }
        if n_concepts + RESERVED_TOKENS as usize + 2 > self.model.vocab_size {
            return bad(format!(
                "vocab_size {} is too small for {n_concepts} concepts",
                self.model.vocab_size
            ));
        }
        if !(self.concepts.signal_norm.is_finite() && self.concepts.signal_norm > 0.0) {
            return bad("concepts.signal_norm must be positive".into());
        }
        let ids = self.concept_ids();
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
                return bad(format!("concept id `{id}` is not a valid file stem"));
            }
            if ids[..i].contains(id) {
                return bad(format!("duplicate concept id `{id}`"));
            }
        }
        for e in &self.concepts.entries {
            if let Some(n) = e.norm {
                if !(n.is_finite() && n > 0.0) {
                    return bad("concept norm must be positive".into());
                }
            }
        }

        let d = &self.data;
        if d.pairs_per_concept == 0 || d.eval_samples == 0 {
            return bad("data.pairs_per_concept and data.eval_samples must be positive".into());
        }
        if !(d.noise.is_finite() && d.noise >= 0.0)
            || !(d.substrate_scale.is_finite() && d.substrate_scale >= 0.0)
        {
            return bad("data.noise and data.substrate_scale must be >= 0".into());
        }
        let prompt = self.prompt();
        if prompt.is_empty() {
            return bad("data.prompt must be non-empty".into());
        }
        let first_free = RESERVED_TOKENS as usize + n_concepts;
        if let Some(t) = prompt
            .iter()
            .find(|&&t| (t as usize) < first_free || t as usize >= self.model.vocab_size)
        {
            return bad(format!(
                "prompt token {t} must lie in {first_free}..{} (not reserved or a concept target)",
                self.model.vocab_size
            ));
        }

        let s = &self.sweep;
        if let Some(layers) = &s.layers {
            if layers.is_empty() || layers.iter().any(|&l| !layer_ok(l)) {
                return bad(format!(
                    "sweep.layers must be non-empty and within 1..={n_layers}"
                ));
            }
        }
        if !alpha_ok(s.alpha) || s.alphas.is_empty() || s.alphas.iter().any(|&a| !alpha_ok(a)) {
            return bad("sweep alphas must be non-empty, finite and >= 0".into());
        }
        if s.max_len == 0 {
            return bad("sweep.max_len must be positive".into());
        }
        if s.metrics.is_empty() {
            return bad("sweep.metrics must select at least one metric".into());
        }

        let p = &self.peaks;
        if p.samples == 0 || p.layers.is_empty() || p.layers.iter().any(|&l| !layer_ok(l)) {
            return bad(format!(
                "peaks needs samples > 0 and layers within 1..={n_layers}"
            ));
        }
        if !(p.jitter.is_finite() && p.jitter >= 0.0) {
            return bad("peaks.jitter must be >= 0".into());
        }

        let r = &self.reverse;
        if !layer_ok(r.injection_layer) || !alpha_ok(r.alpha) {
            return bad("reverse.injection_layer or reverse.alpha out of range".into());
        }
        if let Some(c) = &r.concept {
            if !ids.contains(c) {
                return bad(format!("reverse.concept `{c}` is not a configured concept"));
            }
        }
        if !layer_ok(self.confusion_layer()) || !alpha_ok(self.confusion.alpha) {
            return bad("confusion.layer or confusion.alpha out of range".into());
        }
        if self.faithfulness.alphas.is_empty()
            || self.faithfulness.alphas.iter().any(|&a| !alpha_ok(a))
        {
            return bad("faithfulness.alphas must be non-empty, finite and >= 0".into());
        }
        self.optimality.validate()
    }
}
