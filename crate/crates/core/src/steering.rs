// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward and reverse residual-stream steering, plus layer and coefficient
//! sweeps.
//!
//! A hook adds `sign * alpha * v` to the residual state after its layer has
//! run. Sweeps evaluate one hook at a time; baselines (unsteered generations)
//! are computed once per input and shared across grid cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::PairedSample;
use crate::error::{Result, SteerError};
use crate::extraction::{extract, ConceptVectorSet};
use crate::linalg;
use crate::metrics::{self, MetricsRecord};
use crate::model::{GenerateOptions, GenerationResult, Model, ReinjectionPreset, VisualPrefix};

/// Coefficients swept by default.
pub const DEFAULT_ALPHAS: [f32; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Forward,
    Reverse,
}

impl Sign {
    pub fn value(self) -> f32 {
        match self {
            Self::Forward => 1.0,
            Self::Reverse => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Self::Forward => 1,
            Self::Reverse => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionPolicy {
    /// Only the last position of each forward pass.
    #[default]
    FinalToken,
    /// Every prompt and generated position (never the visual prefix).
    AllPositions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringHook {
    /// 1-indexed.
    pub layer: usize,
    pub vector: Vec<f32>,
    pub alpha: f32,
    pub sign: Sign,
    pub position: PositionPolicy,
}

impl SteeringHook {
    /// Forward hook on the final token.
    pub fn new(layer: usize, vector: Vec<f32>, alpha: f32) -> Self {
        Self {
            layer,
            vector,
            alpha,
            sign: Sign::Forward,
            position: PositionPolicy::FinalToken,
        }
    }

    pub fn with_sign(mut self, sign: Sign) -> Self {
        self.sign = sign;
        self
    }

    pub fn reverse(self) -> Self {
        self.with_sign(Sign::Reverse)
    }

    pub fn with_position(mut self, position: PositionPolicy) -> Self {
        self.position = position;
        self
    }

    pub fn signed_alpha(&self) -> f32 {
        self.sign.value() * self.alpha
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.layer == 0 || self.layer > model.n_layers() {
            return Err(SteerError::LayerOutOfRange {
                layer: self.layer,
                n_layers: model.n_layers(),
            });
        }
        if self.vector.len() != model.d_model() {
            return Err(SteerError::Dimension {
                what: "hook vector",
                expected: model.d_model(),
                got: self.vector.len(),
            });
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(SteerError::Input(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !linalg::is_finite(&self.vector) {
            return Err(SteerError::Input(
                "hook vector contains non-finite values".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub layers: Vec<usize>,
    pub alphas: Vec<f32>,
    pub sign: Sign,
}

impl SweepGrid {
    /// Every layer at the default coefficient preset.
    pub fn full(n_layers: usize) -> Self {
        Self {
            layers: (1..=n_layers).collect(),
            alphas: DEFAULT_ALPHAS.to_vec(),
            sign: Sign::Forward,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.layers.is_empty() || self.alphas.is_empty() {
            return Err(SteerError::Config(
                "sweep grid axes must be non-empty".into(),
            ));
        }
        if let Some(&layer) = self.layers.iter().find(|&&l| l == 0 || l > n_layers) {
            return Err(SteerError::LayerOutOfRange { layer, n_layers });
        }
        if let Some(a) = self.alphas.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(SteerError::Config(format!(
                "alpha {a} must be finite and >= 0"
            )));
        }
        Ok(())
    }
}

/// One evaluation query: a visual prefix and prompt tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInput {
    pub prefix: VisualPrefix,
    pub prompt: Vec<u32>,
}

/// What a steering run is trying to elicit.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringTarget {
    pub concept_id: String,
    pub target_token: u32,
    pub lexicon: Vec<u32>,
}

impl SteeringTarget {
    pub fn single(concept_id: impl Into<String>, target_token: u32) -> Self {
        Self {
            concept_id: concept_id.into(),
            target_token,
            lexicon: vec![target_token],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteerOptions {
    pub max_len: usize,
    pub steer_every_step: bool,
    pub position: PositionPolicy,
}

impl Default for SteerOptions {
    fn default() -> Self {
        Self {
            max_len: 8,
            steer_every_step: true,
            position: PositionPolicy::FinalToken,
        }
    }
}

impl SteerOptions {
    fn generate(&self) -> GenerateOptions {
        GenerateOptions {
            max_len: self.max_len,
            steer_every_step: self.steer_every_step,
            record_logits: true,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeredGeneration {
    pub base: GenerationResult,
    pub steered: GenerationResult,
}

impl SteeredGeneration {
    pub fn base_logits(&self) -> &[f32] {
        self.base.first_logits().expect("logits recorded")
    }

    pub fn steered_logits(&self) -> &[f32] {
        self.steered.first_logits().expect("logits recorded")
    }
}

/// Greedy generation with and without `hook`.
pub fn steer_generate(
    model: &Model,
    prefix: &VisualPrefix,
    prompt: &[u32],
    hook: &SteeringHook,
    max_len: usize,
) -> Result<SteeredGeneration> {
    let opts = SteerOptions {
        max_len,
        position: hook.position,
        ..SteerOptions::default()
    };
    steer_generate_with(model, prefix, prompt, hook, &opts)
}

pub fn steer_generate_with(
    model: &Model,
    prefix: &VisualPrefix,
    prompt: &[u32],
    hook: &SteeringHook,
    opts: &SteerOptions,
) -> Result<SteeredGeneration> {
    hook.validate(model)?;
    let base = model.generate(prefix, prompt, &[], opts.generate())?;
    let steered = model.generate(prefix, prompt, std::slice::from_ref(hook), opts.generate())?;
    Ok(SteeredGeneration { base, steered })
}

/// Unsteered reference for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub tokens: Vec<u32>,
    pub first_logits: Vec<f32>,
}

pub fn baselines(
    model: &Model,
    inputs: &[EvalInput],
    opts: &SteerOptions,
) -> Result<Vec<Baseline>> {
    inputs
        .par_iter()
        .map(|input| {
            let g = model.generate(&input.prefix, &input.prompt, &[], opts.generate())?;
            let first_logits = g.first_logits().expect("logits recorded").to_vec();
            Ok(Baseline {
                tokens: g.token_ids,
                first_logits,
            })
        })
        .collect()
}

/// Aggregated outcome of one (layer, alpha, sign) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectRow {
    pub layer: usize,
    pub alpha: f32,
    pub sign: Sign,
    pub record: MetricsRecord,
    /// `ln(logit_boost)`.
    pub mean_delta_logit: f64,
    /// Mean cosine between steered and unsteered outputs.
    pub baseline_similarity: f64,
    /// Mean first-step target logit with and without the hook.
    pub target_logit: f64,
    pub base_target_logit: f64,
    /// Fraction of unsteered outputs that already contain the target.
    pub base_mention_rate: f64,
}

/// Run one hook over every input and aggregate the metrics.
pub fn evaluate_cell(
    model: &Model,
    inputs: &[EvalInput],
    base: &[Baseline],
    hook: &SteeringHook,
    target: &SteeringTarget,
    opts: &SteerOptions,
) -> Result<EffectRow> {
    if inputs.is_empty() {
        return Err(SteerError::Input("no evaluation inputs".into()));
    }
    if base.len() != inputs.len() {
        return Err(SteerError::Dimension {
            what: "baseline count",
            expected: inputs.len(),
            got: base.len(),
        });
    }
    hook.validate(model)?;
    let hooks = std::slice::from_ref(hook);
    let steered: Vec<GenerationResult> = inputs
        .par_iter()
        .map(|input| model.generate(&input.prefix, &input.prompt, hooks, opts.generate()))
        .collect::<Result<_>>()?;

    let outputs: Vec<Vec<u32>> = steered.iter().map(|g| g.token_ids.clone()).collect();
    let steered_logits: Vec<Vec<f32>> = steered
        .iter()
        .map(|g| g.first_logits().expect("logits recorded").to_vec())
        .collect();
    let base_logits: Vec<Vec<f32>> = base.iter().map(|b| b.first_logits.clone()).collect();
    let base_outputs: Vec<Vec<u32>> = base.iter().map(|b| b.tokens.clone()).collect();

    let success = metrics::success_rate(&outputs, &target.lexicon)?;
    let base_mention = metrics::mention_rate(&base_outputs, &target.lexicon)?;
    let boost = metrics::logit_boost(&base_logits, &steered_logits, &[target.target_token])?;
    let n = inputs.len() as f64;
    let mut similarity = 0.0;
    let mut baseline_similarity = 0.0;
    for (out, b) in outputs.iter().zip(&base_outputs) {
        similarity += metrics::semantic_similarity(out, target.target_token, model)?.score;
        baseline_similarity += metrics::output_similarity(out, b, model)?.score;
    }
    let t = target.target_token as usize;
    let target_logit = steered_logits.iter().map(|l| f64::from(l[t])).sum::<f64>() / n;
    let base_target_logit = base_logits.iter().map(|l| f64::from(l[t])).sum::<f64>() / n;

    Ok(EffectRow {
        layer: hook.layer,
        alpha: hook.alpha,
        sign: hook.sign,
        record: MetricsRecord {
            concept_id: target.concept_id.clone(),
            layer: hook.layer,
            alpha: hook.alpha,
            success_rate: success,
            similarity: similarity / n,
            logit_boost: boost.boost,
            mention_rate: success,
            n: inputs.len(),
        },
        mean_delta_logit: boost.mean_delta,
        baseline_similarity: baseline_similarity / n,
        target_logit,
        base_target_logit,
        base_mention_rate: base_mention,
    })
}

/// Layer of the best value per metric; ties go to the lowest layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PeakLayers {
    pub success_rate: usize,
    pub similarity: usize,
    pub logit_boost: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSweep {
    pub rows: Vec<EffectRow>,
    pub peaks: PeakLayers,
}

fn peak_by(rows: &[EffectRow], key: impl Fn(&EffectRow) -> f64) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if key(r) > key(&rows[best]) {
            best = i;
        }
    }
    rows[best].layer
}

/// Steer with each layer's own vector `v^l` at coefficient `alpha`.
#[allow(clippy::too_many_arguments)]
pub fn layer_sweep(
    model: &Model,
    inputs: &[EvalInput],
    vectors: &ConceptVectorSet,
    layers: &[usize],
    alpha: f32,
    sign: Sign,
    target: &SteeringTarget,
    opts: &SteerOptions,
) -> Result<LayerSweep> {
    vectors.check_shape(model)?;
    if layers.is_empty() {
        return Err(SteerError::Input(
            "layer sweep needs at least one layer".into(),
        ));
    }
    let base = baselines(model, inputs, opts)?;
    let rows = layers
        .iter()
        .map(|&layer| {
            let hook = SteeringHook::new(layer, vectors.layer(layer)?.to_vec(), alpha)
                .with_sign(sign)
                .with_position(opts.position);
            evaluate_cell(model, inputs, &base, &hook, target, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let peaks = PeakLayers {
        success_rate: peak_by(&rows, |r| r.record.success_rate),
        similarity: peak_by(&rows, |r| r.record.similarity),
        logit_boost: peak_by(&rows, |r| r.mean_delta_logit),
    };
    Ok(LayerSweep { rows, peaks })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSweep {
    pub rows: Vec<EffectRow>,
    /// Consecutive `(alpha_from, alpha_to)` steps where the success rate falls
    /// after having risen: the downhill side of an inverted U.
    pub success_declines: Vec<(f32, f32)>,
}

#[allow(clippy::too_many_arguments)]
pub fn alpha_sweep(
    model: &Model,
    inputs: &[EvalInput],
    vector: &[f32],
    layer: usize,
    alphas: &[f32],
    sign: Sign,
    target: &SteeringTarget,
    opts: &SteerOptions,
) -> Result<AlphaSweep> {
    if alphas.is_empty() {
        return Err(SteerError::Input(
            "alpha sweep needs at least one coefficient".into(),
        ));
    }
    let base = baselines(model, inputs, opts)?;
    let rows = alphas
        .iter()
        .map(|&alpha| {
            let hook = SteeringHook::new(layer, vector.to_vec(), alpha)
                .with_sign(sign)
                .with_position(opts.position);
            evaluate_cell(model, inputs, &base, &hook, target, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AlphaSweep {
        success_declines: success_declines(&rows),
        rows,
    })
}

fn success_declines(rows: &[EffectRow]) -> Vec<(f32, f32)> {
    let mut out = Vec::new();
    let mut risen = false;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.record.success_rate > a.record.success_rate {
            risen = true;
        } else if risen && b.record.success_rate < a.record.success_rate {
            out.push((a.alpha, b.alpha));
        }
    }
    out
}

/// Per-layer ablation curve for one model preset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReverseCurve {
    pub preset: String,
    pub gains: Vec<f32>,
    pub rows: Vec<EffectRow>,
}

/// Ablation (`sign = -1`) at every layer with that layer's own vector.
pub fn reverse_curve(
    preset: &str,
    model: &Model,
    inputs: &[EvalInput],
    vectors: &ConceptVectorSet,
    alpha: f32,
    target: &SteeringTarget,
    opts: &SteerOptions,
) -> Result<ReverseCurve> {
    let layers: Vec<usize> = (1..=model.n_layers()).collect();
    let sweep = layer_sweep(
        model,
        inputs,
        vectors,
        &layers,
        alpha,
        Sign::Reverse,
        target,
        opts,
    )?;
    Ok(ReverseCurve {
        preset: preset.to_string(),
        gains: model.config().reinjection_gains.clone(),
        rows: sweep.rows,
    })
}

/// Suppression under two visual-conditioning presets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReverseReport {
    /// Prefix injected once, at `injection_layer`.
    pub single: ReverseCurve,
    /// Prefix re-injected at every layer with gain `1/L`.
    pub persistent: ReverseCurve,
}

/// Extract vectors from `pairs` under each preset and ablate them layer by
/// layer on positive `inputs`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_steer_experiment(
    model: &Model,
    pairs: &[PairedSample],
    extraction_prompt: &[u32],
    inputs: &[EvalInput],
    injection_layer: usize,
    alpha: f32,
    target: &SteeringTarget,
    opts: &SteerOptions,
) -> Result<ReverseReport> {
    let n_layers = model.n_layers();
    if injection_layer == 0 || injection_layer > n_layers {
        return Err(SteerError::LayerOutOfRange {
            layer: injection_layer,
            n_layers,
        });
    }
    let mut single_gains = vec![0.0; n_layers];
    single_gains[injection_layer - 1] = 1.0;
    let run = |name: &str, gains: Vec<f32>| -> Result<ReverseCurve> {
        let m = model.with_reinjection_gains(gains)?;
        let vectors = extract(&m, pairs, extraction_prompt)?;
        reverse_curve(name, &m, inputs, &vectors, alpha, target, opts)
    };
    Ok(ReverseReport {
        single: run("single", single_gains)?,
        persistent: run("persistent", ReinjectionPreset::Persistent.gains(n_layers))?,
    })
}

/// Smallest coefficient beyond which greedy decoding emits only the target
/// token on every input.
///
/// Each logit is taken to move linearly in `alpha` (exact in the linear
/// regime): the slope is measured as the logit change under a unit-strength
/// hook, and the threshold is the largest crossing point
/// `(base_j - base_t) / (slope_t - slope_j)` over every competitor `j`, every
/// input and every decoding context the collapsed output passes through.
pub fn degeneration_threshold(
    model: &Model,
    inputs: &[EvalInput],
    vector: &[f32],
    layer: usize,
    target_token: u32,
    opts: &SteerOptions,
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(SteerError::Input("no evaluation inputs".into()));
    }
    if !opts.steer_every_step && opts.max_len > 1 {
        return Err(SteerError::Input(
            "degeneration threshold assumes the hook is applied on every step".into(),
        ));
    }
    if target_token as usize >= model.vocab_size() {
        return Err(SteerError::TokenOutOfRange {
            token: target_token,
            vocab: model.vocab_size(),
        });
    }
    let hook = SteeringHook::new(layer, vector.to_vec(), 1.0).with_position(opts.position);
    hook.validate(model)?;
    let t = target_token as usize;
    let per_input: Vec<f64> = inputs
        .par_iter()
        .map(|input| {
            let mut context = input.prompt.clone();
            let mut worst = 0.0f64;
            for _ in 0..opts.max_len {
                let base = model.forward_trace(&input.prefix, &context)?.logits;
                let unit = model.forward_hooked(&input.prefix, &context, std::slice::from_ref(&hook))?.logits;
                let slope_t = f64::from(unit[t]) - f64::from(base[t]);
                for j in (0..base.len()).filter(|&j| j != t) {
                    let gap = f64::from(base[j]) - f64::from(base[t]);
                    let rel = slope_t - (f64::from(unit[j]) - f64::from(base[j]));
                    if rel > 0.0 {
                        worst = worst.max(gap / rel);
                    } else if gap >= 0.0 || rel < 0.0 {
                        return Err(SteerError::Undefined(format!(
                            "token {j} keeps pace with target {target_token}; no degeneration threshold"
                        )));
                    }
                }
                context.push(target_token);
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(per_input.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::make_concept_bank;
    use crate::model::{ModelConfig, SubstrateKind};

    fn model() -> (Model, u32, Vec<f32>) {
        let bank = make_concept_bank(1, 8, true, 3).unwrap();
        let c = &bank.concepts()[0];
        let m = Model::build(ModelConfig::linear(3, 8, 24, 2, 1), &bank).unwrap();
        (m, c.target_token, c.direction.clone())
    }

    #[test]
    fn degeneration_threshold_separates_collapse() {
        let (m, t, dir) = model();
        let inputs: Vec<EvalInput> = (0..6)
            .map(|i| EvalInput {
                prefix: crate::concepts::make_substrate(SubstrateKind::Scene, 8, 2, 1.0, i),
                prompt: vec![20],
            })
            .collect();
        let opts = SteerOptions {
            max_len: 4,
            ..SteerOptions::default()
        };
        let star = degeneration_threshold(&m, &inputs, &dir, 2, t, &opts).unwrap() as f32;
        assert!(star > 0.0);
        let collapsed = |alpha: f32| {
            inputs.iter().all(|input| {
                let hook = SteeringHook::new(2, dir.clone(), alpha);
                let g =
                    steer_generate_with(&m, &input.prefix, &input.prompt, &hook, &opts).unwrap();
                g.steered.token_ids.iter().all(|&x| x == t)
            })
        };
        assert!(collapsed(star * 1.01));
        assert!(!collapsed(star * 0.99));
    }

    #[test]
    fn hook_validation() {
        let (m, _, dir) = model();
        assert!(SteeringHook::new(0, dir.clone(), 1.0).validate(&m).is_err());
        assert!(SteeringHook::new(4, dir.clone(), 1.0).validate(&m).is_err());
        assert!(SteeringHook::new(1, vec![0.0; 3], 1.0)
            .validate(&m)
            .is_err());
        assert!(SteeringHook::new(1, dir.clone(), -1.0)
            .validate(&m)
            .is_err());
        assert!(SteeringHook::new(1, dir, 0.0).validate(&m).is_ok());
    }

    #[test]
    fn zero_alpha_changes_nothing() {
        let (m, _, dir) = model();
        let prefix = VisualPrefix::uniform(&[0.2; 8], 2, SubstrateKind::Scene);
        let s = steer_generate(&m, &prefix, &[5, 6], &SteeringHook::new(2, dir, 0.0), 4).unwrap();
        assert_eq!(s.base, s.steered);
    }

    #[test]
    fn opposite_hooks_cancel() {
        let (m, _, dir) = model();
        let prefix = VisualPrefix::uniform(&[0.2; 8], 2, SubstrateKind::Scene);
        let plain = m.forward_trace(&prefix, &[5]).unwrap();
        let hooks = [
            SteeringHook::new(2, dir.clone(), 1.0),
            SteeringHook::new(2, linalg::scaled(&dir, -1.0), 1.0),
        ];
        let both = m.forward_hooked(&prefix, &[5], &hooks).unwrap();
        for (a, b) in plain.logits.iter().zip(&both.logits) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
        let fr = [
            SteeringHook::new(2, dir.clone(), 1.5),
            SteeringHook::new(2, dir, 1.5).reverse(),
        ];
        let inv = m.forward_hooked(&prefix, &[5], &fr).unwrap();
        for (a, b) in plain.logits.iter().zip(&inv.logits) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn hook_never_touches_earlier_layers() {
        let (m, _, dir) = model();
        let prefix = VisualPrefix::uniform(&[0.2; 8], 2, SubstrateKind::Scene);
        let plain = m.forward_trace(&prefix, &[5]).unwrap();
        let hooked = m
            .forward_hooked(&prefix, &[5], &[SteeringHook::new(2, dir, 3.0)])
            .unwrap();
        assert_eq!(plain.layer(1), hooked.layer(1));
        assert_ne!(plain.layer(2), hooked.layer(2));
    }

    #[test]
    fn decline_detection() {
        let (m, t, dir) = model();
        let inputs = vec![EvalInput {
            prefix: VisualPrefix::blank(2, 8),
            prompt: vec![5],
        }];
        let target = SteeringTarget::single("c0", t);
        let sweep = alpha_sweep(
            &m,
            &inputs,
            &dir,
            1,
            &[0.0, 10.0],
            Sign::Forward,
            &target,
            &SteerOptions::default(),
        )
        .unwrap();
        assert_eq!(sweep.rows.len(), 2);
        assert_eq!(sweep.rows[1].record.success_rate, 1.0);
        assert!(sweep.success_declines.is_empty());
        let mut rows = sweep.rows.clone();
        rows.push(EffectRow {
            alpha: 20.0,
            record: MetricsRecord {
                success_rate: 0.0,
                ..rows[1].record.clone()
            },
            ..rows[1].clone()
        });
        assert_eq!(success_declines(&rows), vec![(10.0, 20.0)]);
    }

    #[test]
    fn grid_validation() {
        assert!(SweepGrid::full(8).validate(8).is_ok());
        let g = SweepGrid {
            layers: vec![9],
            ..SweepGrid::full(8)
        };
        assert!(g.validate(8).is_err());
        let g = SweepGrid {
            alphas: vec![],
            ..SweepGrid::full(8)
        };
        assert!(g.validate(8).is_err());
    }
}
