// SPDX-License-Identifier: MIT OR Apache-2.0

//! Planted-concept toy transformer.
//!
//! A small decoder-only transformer whose residual stream is analytically
//! wired: concept directions are planted as unembedding rows of their target
//! tokens, and a synthetic visual prefix is re-injected into every text
//! position with per-layer gains `g_l`. Attention and feed-forward weights are
//! seeded Gaussians with standard deviation `layer_gain / sqrt(d)`, so with
//! `layer_gain = 0` the residual stream is exactly
//!
//! ```text
//! h^l = embed(last token) + (g_1 + ... + g_l) * mean(prefix)
//! ```
//!
//! Layers are 1-indexed everywhere in the public API.
//!
//! ## Layer anatomy
//!
//! 1. visual re-injection `x += g_l * summary` on every text position
//! 2. causal self-attention (scores scaled by `nonlinearity_strength`, so a
//!    strength of 0 gives uniform causal averaging)
//! 3. feed-forward block with activation `(1 - λ) z + λ gelu(z)`
//! 4. steering hooks registered for this layer
//!
//! The recorded `h^l` is the final-position state after step 4.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concepts::ConceptBank;
use crate::error::{Result, SteerError};
use crate::linalg::{self, Matrix};
use crate::steering::{PositionPolicy, SteeringHook};

/// Padding / beginning-of-sequence token.
pub const PAD_TOKEN: u32 = 0;
/// Generation stops after emitting this token.
pub const EOS_TOKEN: u32 = 1;
/// Token ids below this value are never assigned to concepts.
pub const RESERVED_TOKENS: u32 = 2;

/// 8-byte identity of a model: hash of its config and planted bank.
pub type Fingerprint = [u8; 8];

/// Named re-injection gain presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinjectionPreset {
    /// Prefix injected once, at layer 1.
    Single,
    /// Prefix re-injected at every layer with gain `1/L`.
    Persistent,
}

impl ReinjectionPreset {
    pub fn gains(self, n_layers: usize) -> Vec<f32> {
        match self {
            Self::Single => {
                let mut g = vec![0.0; n_layers];
                if let Some(first) = g.first_mut() {
                    *first = 1.0;
                }
                g
            }
            Self::Persistent => vec![1.0 / n_layers as f32; n_layers],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    /// Number of visual-prefix positions.
    pub prefix_len: usize,
    /// Scale of the random attention / feed-forward weights.
    pub layer_gain: f32,
    /// Per-layer gain of the visual re-injection channel, length `n_layers`.
    pub reinjection_gains: Vec<f32>,
    /// 0 gives a purely linear residual path.
    pub nonlinearity_strength: f32,
    pub seed: u64,
}

impl ModelConfig {
    /// Linear-regime config with single injection at layer 1.
    pub fn linear(
        n_layers: usize,
        d_model: usize,
        vocab_size: usize,
        prefix_len: usize,
        seed: u64,
    ) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads: 1,
            vocab_size,
            prefix_len,
            layer_gain: 0.0,
            reinjection_gains: ReinjectionPreset::Single.gains(n_layers),
            nonlinearity_strength: 0.0,
            seed,
        }
    }

    pub fn with_gains(mut self, gains: Vec<f32>) -> Self {
        self.reinjection_gains = gains;
        self
    }

    /// True when the residual path is exactly linear and weight-free.
    pub fn is_linear_regime(&self) -> bool {
        self.layer_gain == 0.0 && self.nonlinearity_strength == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SteerError::Config(msg));
        if self.n_layers == 0 {
            return bad("n_layers must be >= 1".into());
        }
        if self.n_layers > usize::from(u16::MAX) {
            return bad(format!("n_layers {} exceeds {}", self.n_layers, u16::MAX));
        }
        if self.d_model < 2 {
            return bad("d_model must be >= 2".into());
        }
        if self.vocab_size < 4 {
            return bad("vocab_size must be >= 4".into());
        }
        if self.prefix_len == 0 {
            return bad("prefix_len must be >= 1".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "n_heads {} must be positive and divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if !(self.layer_gain.is_finite() && self.layer_gain >= 0.0) {
            return bad(format!(
                "layer_gain must be finite and >= 0, got {}",
                self.layer_gain
            ));
        }
        if !(0.0..=1.0).contains(&self.nonlinearity_strength) {
            return bad(format!(
                "nonlinearity_strength must lie in [0, 1], got {}",
                self.nonlinearity_strength
            ));
        }
        if self.reinjection_gains.len() != self.n_layers {
            return bad(format!(
                "reinjection_gains has {} entries for {} layers",
                self.reinjection_gains.len(),
                self.n_layers
            ));
        }
        if !linalg::is_finite(&self.reinjection_gains) {
            return bad("reinjection_gains must be finite".into());
        }
        Ok(())
    }
}

/// Which synthetic image substrate a prefix was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstrateKind {
    Scene,
    Blank,
    Noise,
}

impl SubstrateKind {
    pub fn code(self) -> u8 {
        match self {
            Self::Scene => 0,
            Self::Blank => 1,
            Self::Noise => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Scene),
            1 => Some(Self::Blank),
            2 => Some(Self::Noise),
            _ => None,
        }
    }
}

/// Stand-in for image-encoder output: `P` embedding vectors of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualPrefix {
    pub embeddings: Vec<Vec<f32>>,
    pub kind: SubstrateKind,
}

impl VisualPrefix {
    pub fn new(embeddings: Vec<Vec<f32>>, kind: SubstrateKind) -> Result<Self> {
        let prefix = Self { embeddings, kind };
        prefix.check_shape(None, None)?;
        Ok(prefix)
    }

    pub fn blank(prefix_len: usize, d_model: usize) -> Self {
        Self {
            embeddings: vec![vec![0.0; d_model]; prefix_len],
            kind: SubstrateKind::Blank,
        }
    }

    /// Prefix whose every position is `summary`, so its mean equals `summary`.
    pub fn uniform(summary: &[f32], prefix_len: usize, kind: SubstrateKind) -> Self {
        Self {
            embeddings: vec![summary.to_vec(); prefix_len],
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    /// Mean over prefix positions; what the re-injection channel adds.
    pub fn summary(&self) -> Vec<f32> {
        let d = self.dim();
        let sum = linalg::pairwise_sum(&self.embeddings, d);
        let n = self.embeddings.len().max(1) as f64;
        sum.iter().map(|&s| (s / n) as f32).collect()
    }

    pub fn scaled(&self, c: f32) -> Self {
        Self {
            embeddings: self
                .embeddings
                .iter()
                .map(|e| linalg::scaled(e, c))
                .collect(),
            kind: self.kind,
        }
    }

    /// Position-wise sum of two prefixes of equal shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        other.check_shape(Some(self.len()), Some(self.dim()))?;
        Ok(Self {
            embeddings: self
                .embeddings
                .iter()
                .zip(&other.embeddings)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
            kind: self.kind,
        })
    }

    pub(crate) fn check_shape(
        &self,
        prefix_len: Option<usize>,
        d_model: Option<usize>,
    ) -> Result<()> {
        if let Some(p) = prefix_len {
            if self.len() != p {
                return Err(SteerError::Dimension {
                    what: "visual prefix length",
                    expected: p,
                    got: self.len(),
                });
            }
        }
        let d = d_model.unwrap_or_else(|| self.dim());
        for e in &self.embeddings {
            if e.len() != d {
                return Err(SteerError::Dimension {
                    what: "visual prefix embedding width",
                    expected: d,
                    got: e.len(),
                });
            }
            if !linalg::is_finite(e) {
                return Err(SteerError::Input(
                    "visual prefix contains non-finite values".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Final-position residual states for every layer, plus next-token logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    /// `layers[l - 1]` is `h^l`.
    pub layers: Vec<Vec<f32>>,
    pub logits: Vec<f32>,
}

impl ActivationTrace {
    /// `h^l` for a 1-indexed layer.
    pub fn layer(&self, layer: usize) -> &[f32] {
        &self.layers[layer - 1]
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Decoding switches for [`Model::generate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub max_len: usize,
    /// Apply hooks on every decoding step, or only the first.
    pub steer_every_step: bool,
    pub record_logits: bool,
    pub record_trace: bool,
}

impl GenerateOptions {
    pub fn new(max_len: usize) -> Self {
        Self {
            max_len,
            steer_every_step: true,
            record_logits: true,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// Generated tokens only (the prompt is not repeated).
    pub token_ids: Vec<u32>,
    pub per_step_logits: Option<Vec<Vec<f32>>>,
    /// Trace of the first decoding step.
    pub trace: Option<ActivationTrace>,
}

impl GenerationResult {
    pub fn first_logits(&self) -> Option<&[f32]> {
        self.per_step_logits.as_ref()?.first().map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    w_in: Matrix,
    w_out: Matrix,
}

/// Immutable toy transformer; forward passes only borrow it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    embed: Matrix,
    unembed: Matrix,
    /// Empty when `layer_gain == 0`: every block weight would be zero.
    blocks: Vec<Block>,
    concept_targets: Vec<u32>,
    bank_digest: [u8; 32],
    fingerprint: Fingerprint,
}

impl Model {
    /// Build a model whose unembedding rows for each concept's target token
    /// are that concept's direction.
    ///
    /// All other embedding and unembedding rows are Gaussian and projected
    /// onto the orthogonal complement of the concept span, so the planted
    /// subspace is read out only by the concept target tokens.
    pub fn build(config: ModelConfig, bank: &ConceptBank) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let v = config.vocab_size;
        let capacity = v.saturating_sub(RESERVED_TOKENS as usize);
        if bank.len() > capacity {
            return Err(SteerError::Config(format!(
                "{} concepts do not fit a vocabulary of {} with {} reserved tokens",
                bank.len(),
                v,
                RESERVED_TOKENS
            )));
        }
        let mut targets = Vec::with_capacity(bank.len());
        for spec in bank.concepts() {
            if spec.direction.len() != d {
                return Err(SteerError::Dimension {
                    what: "concept direction",
                    expected: d,
                    got: spec.direction.len(),
                });
            }
            if spec.target_token < RESERVED_TOKENS || spec.target_token as usize >= v {
                return Err(SteerError::TokenOutOfRange {
                    token: spec.target_token,
                    vocab: v,
                });
            }
            targets.push(spec.target_token);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let row_std = 1.0 / (d as f64).sqrt();
        let basis = linalg::orthonormal_basis(
            &bank
                .concepts()
                .iter()
                .map(|c| c.direction.clone())
                .collect::<Vec<_>>(),
        );

        let mut embed = Matrix::gaussian(&mut rng, v, d, row_std);
        let mut unembed = Matrix::gaussian(&mut rng, v, d, row_std);
        for t in 0..v {
            linalg::project_out(embed.row_mut(t), &basis);
            linalg::project_out(unembed.row_mut(t), &basis);
        }
        for spec in bank.concepts() {
            unembed
                .row_mut(spec.target_token as usize)
                .copy_from_slice(&spec.direction);
        }

        let blocks = if config.layer_gain > 0.0 {
            let std = f64::from(config.layer_gain) / (d as f64).sqrt();
            (0..config.n_layers)
                .map(|_| Block {
                    wq: Matrix::gaussian(&mut rng, d, d, std),
                    wk: Matrix::gaussian(&mut rng, d, d, std),
                    wv: Matrix::gaussian(&mut rng, d, d, std),
                    wo: Matrix::gaussian(&mut rng, d, d, std),
                    w_in: Matrix::gaussian(&mut rng, 2 * d, d, std),
                    w_out: Matrix::gaussian(&mut rng, d, 2 * d, std),
                })
                .collect()
        } else {
            Vec::new()
        };

        let bank_digest = bank.digest();
        let fingerprint = fingerprint_of(&config, &bank_digest);
        Ok(Self {
            config,
            embed,
            unembed,
            blocks,
            concept_targets: targets,
            bank_digest,
            fingerprint,
        })
    }

    /// Same weights, different re-injection gains.
    pub fn with_reinjection_gains(&self, gains: Vec<f32>) -> Result<Self> {
        let config = self.config.clone().with_gains(gains);
        config.validate()?;
        let fingerprint = fingerprint_of(&config, &self.bank_digest);
        Ok(Self {
            config,
            fingerprint,
            ..self.clone()
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn concept_targets(&self) -> &[u32] {
        &self.concept_targets
    }

    pub fn embedding_row(&self, token: u32) -> &[f32] {
        self.embed.row(token as usize)
    }

    /// The readout vector `u_t` whose inner product with `h^L` is token `t`'s logit.
    pub fn unembedding_row(&self, token: u32) -> &[f32] {
        self.unembed.row(token as usize)
    }

    /// `U · v`: the logit change a unit residual shift along `v` produces
    /// when nothing downstream transforms it.
    pub fn readout(&self, v: &[f32]) -> Vec<f32> {
        self.unembed.matvec(v)
    }

    /// Unhooked forward pass.
    pub fn forward_trace(&self, prefix: &VisualPrefix, prompt: &[u32]) -> Result<ActivationTrace> {
        self.forward_hooked(prefix, prompt, &[])
    }

    /// Forward pass with steering hooks added to the residual stream.
    pub fn forward_hooked(
        &self,
        prefix: &VisualPrefix,
        prompt: &[u32],
        hooks: &[SteeringHook],
    ) -> Result<ActivationTrace> {
        self.check_inputs(prefix, prompt)?;
        for hook in hooks {
            hook.validate(self)?;
        }
        Ok(self.run(prefix, prompt, hooks))
    }

    /// Greedy decoding; ties in the argmax resolve to the lowest token id.
    pub fn generate(
        &self,
        prefix: &VisualPrefix,
        prompt: &[u32],
        hooks: &[SteeringHook],
        opts: GenerateOptions,
    ) -> Result<GenerationResult> {
        if opts.max_len == 0 {
            return Err(SteerError::Input("max_len must be >= 1".into()));
        }
        self.check_inputs(prefix, prompt)?;
        for hook in hooks {
            hook.validate(self)?;
        }
        let mut context = prompt.to_vec();
        let mut generated = Vec::with_capacity(opts.max_len);
        let mut logits_log = opts.record_logits.then(Vec::new);
        let mut first_trace = None;
        for step in 0..opts.max_len {
            let active: &[SteeringHook] = if step == 0 || opts.steer_every_step {
                hooks
            } else {
                &[]
            };
            let trace = self.run(prefix, &context, active);
            let next = argmax(&trace.logits);
            if let Some(log) = logits_log.as_mut() {
                log.push(trace.logits.clone());
            }
            if step == 0 && opts.record_trace {
                first_trace = Some(trace);
            }
            generated.push(next);
            context.push(next);
            if next == EOS_TOKEN {
                break;
            }
        }
        Ok(GenerationResult {
            token_ids: generated,
            per_step_logits: logits_log,
            trace: first_trace,
        })
    }

    fn check_inputs(&self, prefix: &VisualPrefix, prompt: &[u32]) -> Result<()> {
        if prompt.is_empty() {
            return Err(SteerError::Input(
                "prompt must contain at least one token".into(),
            ));
        }
        if let Some(&bad) = prompt
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(SteerError::TokenOutOfRange {
                token: bad,
                vocab: self.config.vocab_size,
            });
        }
        prefix.check_shape(Some(self.config.prefix_len), Some(self.config.d_model))
    }

    fn run(
        &self,
        prefix: &VisualPrefix,
        tokens: &[u32],
        hooks: &[SteeringHook],
    ) -> ActivationTrace {
        let p = prefix.len();
        let mut x: Vec<Vec<f32>> = prefix.embeddings.clone();
        x.extend(tokens.iter().map(|&t| self.embed.row(t as usize).to_vec()));
        let last = x.len() - 1;
        let summary = prefix.summary();
        let mut layers = Vec::with_capacity(self.config.n_layers);

        for layer in 1..=self.config.n_layers {
            let gain = self.config.reinjection_gains[layer - 1];
            if gain != 0.0 {
                for state in &mut x[p..] {
                    linalg::axpy(state, gain, &summary);
                }
            }
            if let Some(block) = self.blocks.get(layer - 1) {
                self.attention(block, &mut x);
                self.feed_forward(block, &mut x);
            }
            for hook in hooks.iter().filter(|h| h.layer == layer) {
                let scale = hook.signed_alpha();
                match hook.position {
                    PositionPolicy::FinalToken => linalg::axpy(&mut x[last], scale, &hook.vector),
                    PositionPolicy::AllPositions => {
                        for state in &mut x[p..] {
                            linalg::axpy(state, scale, &hook.vector);
                        }
                    }
                }
            }
            layers.push(x[last].clone());
        }

        let logits = self.unembed.matvec(&x[last]);
        ActivationTrace { layers, logits }
    }

    fn attention(&self, block: &Block, x: &mut [Vec<f32>]) {
        let n_heads = self.config.n_heads;
        let head_dim = self.config.d_model / n_heads;
        let temp = f64::from(self.config.nonlinearity_strength) / (head_dim as f64).sqrt();
        let q: Vec<Vec<f32>> = x.iter().map(|s| block.wq.matvec(s)).collect();
        let k: Vec<Vec<f32>> = x.iter().map(|s| block.wk.matvec(s)).collect();
        let v: Vec<Vec<f32>> = x.iter().map(|s| block.wv.matvec(s)).collect();

        for i in 0..x.len() {
            let mut mixed = vec![0.0f32; self.config.d_model];
            for h in 0..n_heads {
                let span = h * head_dim..(h + 1) * head_dim;
                let scores: Vec<f64> = (0..=i)
                    .map(|j| temp * linalg::dot(&q[i][span.clone()], &k[j][span.clone()]))
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = weights.iter().sum();
                for (j, w) in weights.iter().enumerate() {
                    let w = (w / total) as f32;
                    linalg::axpy(&mut mixed[span.clone()], w, &v[j][span.clone()]);
                }
            }
            let out = block.wo.matvec(&mixed);
            linalg::axpy(&mut x[i], 1.0, &out);
        }
    }

    fn feed_forward(&self, block: &Block, x: &mut [Vec<f32>]) {
        let lambda = self.config.nonlinearity_strength;
        for state in x.iter_mut() {
            let hidden: Vec<f32> = block
                .w_in
                .matvec(state)
                .into_iter()
                .map(|z| (1.0 - lambda) * z + lambda * gelu(z))
                .collect();
            let out = block.w_out.matvec(&hidden);
            linalg::axpy(state, 1.0, &out);
        }
    }
}

fn gelu(z: f32) -> f32 {
    let z = f64::from(z);
    let c = (2.0 / std::f64::consts::PI).sqrt();
    (0.5 * z * (1.0 + (c * (z + 0.044715 * z * z * z)).tanh())) as f32
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn fingerprint_of(config: &ModelConfig, bank_digest: &[u8; 32]) -> Fingerprint {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    hasher.update(bank_digest);
    let digest = hasher.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}
