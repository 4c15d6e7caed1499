// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering metrics.
//!
//! Judge and sentence-embedder metrics are replaced by deterministic
//! desk-scale stand-ins: lexicon matching decides whether a generation
//! expresses a concept, and similarity is the cosine between mean
//! unembedding rows.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::concepts::PairedSample;
use crate::error::{Result, SteerError};
use crate::extraction::ConceptVectorSet;
use crate::linalg;
use crate::model::{Model, VisualPrefix};
use crate::steering::SteeringHook;

/// Decides whether one generated sequence expresses a concept.
pub trait OutputClassifier: Sync {
    fn detects(&self, output: &[u32]) -> bool;
}

/// Matches any token from a fixed set.
#[derive(Debug, Clone)]
pub struct Lexicon {
    tokens: HashSet<u32>,
}

impl Lexicon {
    pub fn new(tokens: &[u32]) -> Result<Self> {
        if tokens.is_empty() {
            return Err(SteerError::Input(
                "lexicon must contain at least one token".into(),
            ));
        }
        Ok(Self {
            tokens: tokens.iter().copied().collect(),
        })
    }
}

impl OutputClassifier for Lexicon {
    fn detects(&self, output: &[u32]) -> bool {
        output.iter().any(|t| self.tokens.contains(t))
    }
}

/// Fraction of outputs the classifier flags.
pub fn detection_rate<C: OutputClassifier + ?Sized>(
    outputs: &[Vec<u32>],
    classifier: &C,
) -> Result<f64> {
    if outputs.is_empty() {
        return Err(SteerError::Input("no outputs to score".into()));
    }
    let hits = outputs.iter().filter(|o| classifier.detects(o)).count();
    Ok(hits as f64 / outputs.len() as f64)
}

/// Fraction of outputs containing at least one lexicon token.
pub fn success_rate(outputs: &[Vec<u32>], lexicon: &[u32]) -> Result<f64> {
    detection_rate(outputs, &Lexicon::new(lexicon)?)
}

/// Same estimator as [`success_rate`], read as "the concept survived" under
/// reverse steering.
pub fn mention_rate(outputs: &[Vec<u32>], lexicon: &[u32]) -> Result<f64> {
    success_rate(outputs, lexicon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Similarity {
    pub score: f64,
    /// Set when a mean vector had zero norm and the score defaulted to 0.
    pub degenerate: bool,
}

fn mean_unembedding(model: &Model, tokens: &[u32]) -> Result<Vec<f32>> {
    if tokens.is_empty() {
        return Err(SteerError::Input("output must be non-empty".into()));
    }
    let d = model.d_model();
    let mut rows = Vec::with_capacity(tokens.len());
    for &t in tokens {
        if t as usize >= model.vocab_size() {
            return Err(SteerError::TokenOutOfRange {
                token: t,
                vocab: model.vocab_size(),
            });
        }
        rows.push(model.unembedding_row(t).to_vec());
    }
    let sum = linalg::pairwise_sum(&rows, d);
    let n = tokens.len() as f64;
    Ok(sum.iter().map(|&s| (s / n) as f32).collect())
}

fn similarity_of(a: &[f32], b: &[f32]) -> Similarity {
    match linalg::cosine(a, b) {
        Some(score) => Similarity {
            score,
            degenerate: false,
        },
        None => Similarity {
            score: 0.0,
            degenerate: true,
        },
    }
}

/// Cosine between the mean unembedding row of `output` and the target row.
pub fn semantic_similarity(output: &[u32], target_token: u32, model: &Model) -> Result<Similarity> {
    let mean = mean_unembedding(model, output)?;
    let target = mean_unembedding(model, &[target_token])?;
    Ok(similarity_of(&mean, &target))
}

/// Cosine between the mean unembedding rows of two outputs.
pub fn output_similarity(a: &[u32], b: &[u32], model: &Model) -> Result<Similarity> {
    Ok(similarity_of(
        &mean_unembedding(model, a)?,
        &mean_unembedding(model, b)?,
    ))
}

/// Exponentiated mean logit increase, plus the raw mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogitBoost {
    pub boost: f64,
    pub mean_delta: f64,
}

impl LogitBoost {
    pub fn from_mean_delta(mean_delta: f64) -> Self {
        Self {
            boost: mean_delta.exp(),
            mean_delta,
        }
    }
}

/// `exp(mean over samples and target tokens of (steered - base) logit)`.
///
/// `base` and `steered` hold one logit vector per sample (first generation
/// step).
pub fn logit_boost(base: &[Vec<f32>], steered: &[Vec<f32>], targets: &[u32]) -> Result<LogitBoost> {
    if base.len() != steered.len() {
        return Err(SteerError::Dimension {
            what: "steered sample count",
            expected: base.len(),
            got: steered.len(),
        });
    }
    if base.is_empty() || targets.is_empty() {
        return Err(SteerError::Input(
            "logit boost needs samples and target tokens".into(),
        ));
    }
    let mut total = 0.0f64;
    for (b, s) in base.iter().zip(steered) {
        if b.len() != s.len() {
            return Err(SteerError::Dimension {
                what: "logit vector",
                expected: b.len(),
                got: s.len(),
            });
        }
        for &t in targets {
            let t = t as usize;
            if t >= b.len() {
                return Err(SteerError::TokenOutOfRange {
                    token: t as u32,
                    vocab: b.len(),
                });
            }
            total += f64::from(s[t]) - f64::from(b[t]);
        }
    }
    Ok(LogitBoost::from_mean_delta(
        total / (base.len() * targets.len()) as f64,
    ))
}

/// Per-group logit boost; groups must be non-empty and disjoint.
pub fn token_group_boost(
    base: &[Vec<f32>],
    steered: &[Vec<f32>],
    groups: &[(String, Vec<u32>)],
) -> Result<Vec<(String, LogitBoost)>> {
    if groups.is_empty() {
        return Err(SteerError::Input("no token groups given".into()));
    }
    let mut seen = HashSet::new();
    for (name, tokens) in groups {
        if tokens.is_empty() {
            return Err(SteerError::Input(format!("token group `{name}` is empty")));
        }
        for t in tokens {
            if !seen.insert(*t) {
                return Err(SteerError::Input(format!(
                    "token {t} appears in more than one group (last: `{name}`)"
                )));
            }
        }
    }
    groups
        .iter()
        .map(|(name, tokens)| Ok((name.clone(), logit_boost(base, steered, tokens)?)))
        .collect()
}

/// Nonnegative per-layer effect magnitudes, the input to [`gini`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerEffectProfile {
    effects: Vec<f64>,
}

impl LayerEffectProfile {
    pub fn new(effects: Vec<f64>) -> Result<Self> {
        if let Some(bad) = effects.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(SteerError::Input(format!(
                "layer effect {bad} is negative or non-finite"
            )));
        }
        Ok(Self { effects })
    }

    /// Rate-like scores in `[0, 1]` (or any nonnegative score), clamped at 0.
    pub fn from_scores(scores: &[f64]) -> Self {
        Self {
            effects: scores.iter().map(|s| s.max(0.0)).collect(),
        }
    }

    /// Layer-attributed log-boost: how much steering with layer `l`'s vector
    /// adds over layer `l - 1`'s, clamped at 0.
    ///
    /// Concept vectors accumulate with depth in the residual stream, so the
    /// raw per-layer boost of a concept written at layer `k` stays flat for
    /// every `l >= k`; the increments recover where it was written.
    pub fn from_log_boosts(mean_deltas: &[f64]) -> Self {
        let mut prev = 0.0;
        let effects = mean_deltas
            .iter()
            .map(|&m| {
                let inc = (m - prev).max(0.0);
                prev = m;
                inc
            })
            .collect();
        Self { effects }
    }

    pub fn effects(&self) -> &[f64] {
        &self.effects
    }
}

/// Gini coefficient of a nonnegative profile; 0 for an all-zero profile.
///
/// `G = 2 * sum_i(i * e_(i)) / (n * sum(e)) - (n + 1) / n` over the
/// ascending sort, which lies in `[0, (n - 1) / n]`.
pub fn gini(profile: &[f64]) -> Result<f64> {
    let profile = LayerEffectProfile::new(profile.to_vec())?;
    Ok(gini_of(&profile))
}

pub fn gini_of(profile: &LayerEffectProfile) -> f64 {
    let n = profile.effects.len();
    if n == 0 {
        return 0.0;
    }
    let mut sorted = profile.effects.clone();
    sorted.sort_by(f64::total_cmp);
    let sum: f64 = sorted.iter().sum();
    if sum == 0.0 {
        return 0.0;
    }
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, e)| (i + 1) as f64 * e)
        .sum();
    let n = n as f64;
    let g = 2.0 * weighted / (n * sum) - (n + 1.0) / n;
    g.clamp(0.0, (n - 1.0) / n)
}

/// Argmax layer per sample (ties to the lowest layer), counted per layer.
/// `counts[l - 1]` is the number of samples peaking at layer `l`.
pub fn peak_layer_histogram(scores: &[Vec<f64>]) -> Result<Vec<usize>> {
    let width = scores
        .first()
        .map(Vec::len)
        .ok_or_else(|| SteerError::Input("score matrix is empty".into()))?;
    if width == 0 {
        return Err(SteerError::Input("score rows are empty".into()));
    }
    let mut counts = vec![0usize; width];
    for row in scores {
        if row.len() != width {
            return Err(SteerError::Dimension {
                what: "score row",
                expected: width,
                got: row.len(),
            });
        }
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        counts[best] += 1;
    }
    Ok(counts)
}

/// Total effect, natural indirect effect and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FaithfulnessRecord {
    pub te: f64,
    pub nie: f64,
    /// `nie / te`; absent when `te == 0`.
    pub rho: Option<f64>,
    pub layer: usize,
    pub alpha: f32,
}

impl FaithfulnessRecord {
    pub fn from_effects(te: f64, nie: f64, layer: usize, alpha: f32) -> Self {
        Self {
            te,
            nie,
            rho: (te != 0.0).then(|| nie / te),
            layer,
            alpha,
        }
    }
}

/// TE sums the target logit gap between positive and negative prefixes; NIE
/// sums the gap that steering the negatives with `vector` at `layer` opens.
pub fn faithfulness(
    model: &Model,
    pairs: &[PairedSample],
    vector: &[f32],
    layer: usize,
    alpha: f32,
    target_token: u32,
    prompt: &[u32],
) -> Result<FaithfulnessRecord> {
    if pairs.is_empty() {
        return Err(SteerError::Input(
            "faithfulness needs at least one pair".into(),
        ));
    }
    if target_token as usize >= model.vocab_size() {
        return Err(SteerError::TokenOutOfRange {
            token: target_token,
            vocab: model.vocab_size(),
        });
    }
    let hook = SteeringHook::new(layer, vector.to_vec(), alpha);
    hook.validate(model)?;
    let t = target_token as usize;
    let per_pair: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|pair| {
            let pos = model.forward_trace(&pair.positive, prompt)?;
            let neg = model.forward_trace(&pair.negative, prompt)?;
            let steered =
                model.forward_hooked(&pair.negative, prompt, std::slice::from_ref(&hook))?;
            let base = f64::from(neg.logits[t]);
            Ok((
                f64::from(pos.logits[t]) - base,
                f64::from(steered.logits[t]) - base,
            ))
        })
        .collect::<Result<_>>()?;
    let te = per_pair.iter().map(|p| p.0).sum();
    let nie = per_pair.iter().map(|p| p.1).sum();
    Ok(FaithfulnessRecord::from_effects(te, nie, layer, alpha))
}

/// Faithfulness using the layer's vector from an extracted set.
pub fn faithfulness_for_set(
    model: &Model,
    pairs: &[PairedSample],
    set: &ConceptVectorSet,
    layer: usize,
    alpha: f32,
    target_token: u32,
    prompt: &[u32],
) -> Result<FaithfulnessRecord> {
    let vector = set.layer(layer)?;
    faithfulness(model, pairs, vector, layer, alpha, target_token, prompt)
}

/// `K x K` matrix: entry `(i, j)` is the logit boost on concept `j`'s target
/// token when concept `i`'s vector is injected at `layer`.
pub fn confusion_matrix(
    model: &Model,
    targets: &[u32],
    vector_sets: &[ConceptVectorSet],
    inputs: &[(VisualPrefix, Vec<u32>)],
    layer: usize,
    alpha: f32,
) -> Result<Vec<Vec<f64>>> {
    if targets.len() < 2 {
        return Err(SteerError::Input(
            "confusion matrix needs at least two concepts".into(),
        ));
    }
    if vector_sets.len() != targets.len() {
        return Err(SteerError::Dimension {
            what: "vector set count",
            expected: targets.len(),
            got: vector_sets.len(),
        });
    }
    if inputs.is_empty() {
        return Err(SteerError::Input(
            "confusion matrix needs evaluation inputs".into(),
        ));
    }
    let base: Vec<Vec<f32>> = inputs
        .par_iter()
        .map(|(prefix, prompt)| Ok(model.forward_trace(prefix, prompt)?.logits))
        .collect::<Result<_>>()?;
    vector_sets
        .iter()
        .map(|set| {
            let hook = SteeringHook::new(layer, set.layer(layer)?.to_vec(), alpha);
            hook.validate(model)?;
            let steered: Vec<Vec<f32>> = inputs
                .par_iter()
                .map(|(prefix, prompt)| {
                    Ok(model
                        .forward_hooked(prefix, prompt, std::slice::from_ref(&hook))?
                        .logits)
                })
                .collect::<Result<_>>()?;
            targets
                .iter()
                .map(|&t| Ok(logit_boost(&base, &steered, &[t])?.boost))
                .collect()
        })
        .collect()
}

/// One aggregated metric row for a (concept, layer, alpha) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub concept_id: String,
    pub layer: usize,
    pub alpha: f32,
    pub success_rate: f64,
    pub similarity: f64,
    pub logit_boost: f64,
    pub mention_rate: f64,
    pub n: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn success_rate_counts_outputs_with_a_hit() {
        let (cat, sits, dog) = (7, 8, 9);
        assert_eq!(
            success_rate(&[vec![cat, sits], vec![dog]], &[cat]).unwrap(),
            0.5
        );
        assert_eq!(success_rate(&[vec![sits], vec![dog]], &[cat]).unwrap(), 0.0);
        assert_eq!(
            success_rate(&[vec![cat, dog], vec![cat]], &[cat]).unwrap(),
            1.0
        );
        assert!(success_rate(&[vec![cat]], &[]).is_err());
        assert!(success_rate(&[], &[cat]).is_err());
        assert_eq!(
            success_rate(&[vec![cat], vec![dog]], &[cat]).unwrap(),
            mention_rate(&[vec![cat], vec![dog]], &[cat]).unwrap()
        );
    }

    #[test]
    fn logit_boost_definition() {
        let base = vec![vec![0.0f32, 1.0, 2.0]];
        assert_eq!(logit_boost(&base, &base, &[1]).unwrap().boost, 1.0);
        let ln10 = std::f32::consts::LN_10;
        let steered = vec![vec![0.0f32, 1.0 + ln10, 2.0]];
        let b = logit_boost(&base, &steered, &[1]).unwrap();
        assert!((b.boost - 10.0).abs() < 1e-5);
        assert!(logit_boost(&base, &[], &[1]).is_err());
    }

    #[test]
    fn token_groups_must_be_disjoint() {
        let base = vec![vec![0.0f32; 4]];
        let steered = vec![vec![0.0f32, 1.0, 0.0, 0.0]];
        let groups = vec![
            ("rel".to_string(), vec![1]),
            ("act".to_string(), vec![2, 3]),
        ];
        let out = token_group_boost(&base, &steered, &groups).unwrap();
        assert!((out[0].1.boost - 1f64.exp()).abs() < 1e-6);
        assert_eq!(out[1].1.boost, 1.0);
        let overlapping = vec![("a".to_string(), vec![1, 2]), ("b".to_string(), vec![2])];
        assert!(token_group_boost(&base, &steered, &overlapping).is_err());
    }

    #[test]
    fn gini_fixed_points() {
        assert_eq!(gini(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        // 2*(4*1)/(4*1) - 5/4
        assert_eq!(gini(&[0.0, 0.0, 0.0, 1.0]).unwrap(), 0.75);
        assert_eq!(gini(&[0.0; 5]).unwrap(), 0.0);
        assert!(gini(&[1.0, -0.1]).is_err());
    }

    #[test]
    fn log_boost_increments() {
        let p = LayerEffectProfile::from_log_boosts(&[0.0, 0.0, 2.0, 2.0, 3.0, 2.5]);
        assert_eq!(p.effects(), &[0.0, 0.0, 2.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn peak_histogram_examples() {
        let counts = peak_layer_histogram(&[vec![0.1, 0.9, 0.2], vec![0.5, 0.4, 0.3]]).unwrap();
        assert_eq!(counts, vec![1, 1, 0]);
        let ties = peak_layer_histogram(&[vec![0.3; 4], vec![0.3; 4]]).unwrap();
        assert_eq!(ties, vec![2, 0, 0, 0]);
        assert!(peak_layer_histogram(&[]).is_err());
        assert!(peak_layer_histogram(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn faithfulness_ratio_arithmetic() {
        let r = FaithfulnessRecord::from_effects(4.0, 3.2, 3, 1.0);
        assert!((r.rho.unwrap() - 0.8).abs() < 1e-12);
        assert!(FaithfulnessRecord::from_effects(0.0, 1.0, 3, 1.0)
            .rho
            .is_none());
    }
}
