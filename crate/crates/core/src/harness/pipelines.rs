// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end experiment pipelines. Each returns its section of a
//! [`ReportBundle`]; errors carry the name of the stage that failed.
//!
//! Work parallelizes across concepts (and, inside the steering layer, across
//! inputs); rows are always assembled in concept / layer / alpha order so
//! reports are deterministic.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::concepts::{
    apply_localization, generate_pairs, jitter_profile, localization_profile, make_concept_bank,
    make_substrate, ConceptBank, ConceptSpec, Localization, PairDesign, PairedSample,
};
use crate::error::{Result, StageExt, SteerError};
use crate::extraction::{extract, load_vectors_for, save_vectors, ConceptVectorSet};
use crate::harness::config::{ExperimentConfig, MetricKind};
use crate::harness::dataset::{load_pairs, save_pairs};
use crate::harness::report::{
    AlphaSummary, CategoryRow, ConfusionSummary, FaithfulnessRow, GiniRow, MetricRow,
    PeakHistogram, ReportBundle, ReverseRow, ReverseSummary,
};
use crate::linalg;
use crate::metrics::{self, gini_of, peak_layer_histogram, LayerEffectProfile};
use crate::model::{Model, VisualPrefix};
use crate::optimality::run_optimality_suite;
use crate::steering::{
    alpha_sweep, degeneration_threshold, layer_sweep, reverse_steer_experiment, EffectRow,
    EvalInput, Sign, SteerOptions, SteeringHook, SteeringTarget,
};

/// Seed domains, so that no two purposes share a random stream.
const PAIRS_DOMAIN: u64 = 1;
const EVAL_DOMAIN: u64 = 2;
const PEAKS_DOMAIN: u64 = 3;
const CONTROL_DOMAIN: u64 = 4;

fn sub_seed(seed: u64, domain: u64, index: u64) -> u64 {
    seed ^ (domain << 56) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// File holding a concept's pairs inside a data directory.
pub fn pairs_path(dir: &Path, concept_id: &str) -> PathBuf {
    dir.join(format!("{concept_id}.pairs"))
}

/// File holding a concept's vectors inside a vector directory.
pub fn vectors_path(dir: &Path, concept_id: &str) -> PathBuf {
    dir.join(format!("{concept_id}.cvec"))
}

/// Where concept vectors come from.
#[derive(Debug, Clone)]
pub enum VectorSource {
    /// Extract from freshly generated pairs, optionally saving each set to
    /// a directory as soon as it exists.
    Extract { save_to: Option<PathBuf> },
    /// Load `<dir>/<concept>.cvec`; a missing file is an error.
    Load(PathBuf),
    /// Already in memory, in bank order.
    Given(Vec<ConceptVectorSet>),
}

/// A validated config with its bank and base model built.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub bank: ConceptBank,
    /// Single injection at layer 1; concept pipelines swap in concept gains.
    pub base_model: Model,
    pub prompt: Vec<u32>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate().stage("config")?;
        let bank = build_bank(&config).stage("build")?;
        let base_model = Model::build(config.model_config(), &bank).stage("build")?;
        let prompt = config.prompt();
        Ok(Self {
            config,
            bank,
            base_model,
            prompt,
        })
    }

    pub fn concepts(&self) -> &[ConceptSpec] {
        self.bank.concepts()
    }

    pub fn concept_index(&self, id: &str) -> Result<usize> {
        self.concepts()
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| SteerError::Config(format!("unknown concept `{id}`")))
    }

    /// The base model re-wired with the concept's localization gains.
    pub fn concept_model(&self, spec: &ConceptSpec) -> Result<Model> {
        let gains = apply_localization(spec, self.base_model.config())?;
        self.base_model.with_reinjection_gains(gains)
    }

    pub fn pair_design(&self) -> PairDesign {
        let d = &self.config.data;
        PairDesign {
            substrate: d.substrate,
            substrate_scale: d.substrate_scale,
            prefix_len: self.config.model.prefix_len,
            negative: d.negative,
        }
    }

    pub fn generate_pairs(&self, index: usize) -> Result<Vec<PairedSample>> {
        let spec = &self.concepts()[index];
        generate_pairs(
            spec,
            self.config.data.pairs_per_concept,
            &self.pair_design(),
            self.config.data.noise,
            sub_seed(self.config.seed, PAIRS_DOMAIN, index as u64),
        )
    }

    /// Concept-free evaluation prefixes: substrate draws with their component
    /// in the concept span removed, so no planted concept is present by chance.
    pub fn eval_inputs(&self) -> Vec<EvalInput> {
        let m = &self.config.model;
        let d = &self.config.data;
        let basis = linalg::orthonormal_basis(
            &self
                .bank
                .concepts()
                .iter()
                .map(|c| c.direction.clone())
                .collect::<Vec<_>>(),
        );
        (0..d.eval_samples)
            .map(|i| {
                let mut prefix = make_substrate(
                    d.substrate,
                    m.d_model,
                    m.prefix_len,
                    d.substrate_scale,
                    sub_seed(self.config.seed, EVAL_DOMAIN, i as u64),
                );
                prefix
                    .embeddings
                    .iter_mut()
                    .for_each(|row| linalg::project_out(row, &basis));
                EvalInput {
                    prefix,
                    prompt: self.prompt.clone(),
                }
            })
            .collect()
    }

    /// Evaluation prefixes with the concept's signal added to every position.
    pub fn positive_inputs(&self, spec: &ConceptSpec) -> Vec<EvalInput> {
        let signal = spec.signal();
        self.eval_inputs()
            .into_iter()
            .map(|mut input| {
                for row in &mut input.prefix.embeddings {
                    linalg::axpy(row, 1.0, &signal);
                }
                input
            })
            .collect()
    }

    pub fn steer_options(&self) -> SteerOptions {
        let s = &self.config.sweep;
        SteerOptions {
            max_len: s.max_len,
            steer_every_step: s.steer_every_step,
            position: s.position,
        }
    }

    pub fn target(&self, spec: &ConceptSpec) -> SteeringTarget {
        SteeringTarget::single(spec.id.clone(), spec.target_token)
    }

    /// Pairs for every concept, saved to `dir` when given.
    pub fn generate_all_pairs(&self, save_to: Option<&Path>) -> Result<Vec<Vec<PairedSample>>> {
        (0..self.concepts().len())
            .into_par_iter()
            .map(|i| {
                let pairs = self.generate_pairs(i)?;
                if let Some(dir) = save_to {
                    save_pairs(&pairs, &pairs_path(dir, &self.concepts()[i].id))?;
                }
                Ok(pairs)
            })
            .collect::<Result<_>>()
            .stage("gen-data")
    }

    /// Pairs for every concept from `<dir>/<concept>.pairs`, checked against
    /// the model's prefix shape.
    pub fn load_all_pairs(&self, dir: &Path) -> Result<Vec<Vec<PairedSample>>> {
        let m = &self.config.model;
        self.concepts()
            .iter()
            .map(|spec| {
                let path = pairs_path(dir, &spec.id);
                let pairs = load_pairs(&path)?;
                for p in &pairs {
                    if p.concept_id != spec.id {
                        return Err(SteerError::Shape {
                            path: path.clone(),
                            reason: format!(
                                "holds concept `{}`, expected `{}`",
                                p.concept_id, spec.id
                            ),
                        });
                    }
                    for prefix in [&p.positive, &p.negative] {
                        prefix
                            .check_shape(Some(m.prefix_len), Some(m.d_model))
                            .map_err(|e| SteerError::Shape {
                                path: path.clone(),
                                reason: e.to_string(),
                            })?;
                    }
                }
                Ok(pairs)
            })
            .collect::<Result<_>>()
            .stage("load-data")
    }

    /// Extract every concept's vectors from the given pairs.
    pub fn extract_all(
        &self,
        pairs: &[Vec<PairedSample>],
        save_to: Option<&Path>,
    ) -> Result<Vec<ConceptVectorSet>> {
        if pairs.len() != self.concepts().len() {
            return Err(SteerError::Dimension {
                what: "pair sets",
                expected: self.concepts().len(),
                got: pairs.len(),
            })
            .stage("extract");
        }
        self.concepts()
            .par_iter()
            .zip(pairs)
            .map(|(spec, pairs)| {
                let model = self.concept_model(spec)?;
                let set = extract(&model, pairs, &self.prompt)?;
                if let Some(dir) = save_to {
                    save_vectors(&set, &vectors_path(dir, &spec.id))?;
                }
                Ok(set)
            })
            .collect::<Result<_>>()
            .stage("extract")
    }

    /// Resolve a [`VectorSource`] into one set per concept, in bank order.
    pub fn vectors(&self, source: &VectorSource) -> Result<Vec<ConceptVectorSet>> {
        match source {
            VectorSource::Extract { save_to } => {
                let pairs = self.generate_all_pairs(None)?;
                self.extract_all(&pairs, save_to.as_deref())
            }
            VectorSource::Load(dir) => self
                .concepts()
                .iter()
                .map(|spec| {
                    load_vectors_for(&vectors_path(dir, &spec.id), &self.concept_model(spec)?)
                })
                .collect::<Result<_>>()
                .stage("load-vectors"),
            VectorSource::Given(sets) => {
                if sets.len() != self.concepts().len() {
                    return Err(SteerError::Dimension {
                        what: "vector sets",
                        expected: self.concepts().len(),
                        got: sets.len(),
                    })
                    .stage("load-vectors");
                }
                for (set, spec) in sets.iter().zip(self.concepts()) {
                    if set.concept_id != spec.id {
                        return Err(SteerError::Input(format!(
                            "vector set `{}` given where `{}` was expected",
                            set.concept_id, spec.id
                        )))
                        .stage("load-vectors");
                    }
                    set.check_shape(&self.base_model).stage("load-vectors")?;
                }
                Ok(sets.clone())
            }
        }
    }
}

fn build_bank(config: &ExperimentConfig) -> Result<ConceptBank> {
    let entries = &config.concepts.entries;
    let raw = make_concept_bank(
        entries.len(),
        config.model.d_model,
        config.concepts.orthogonal,
        config.seed,
    )?;
    let ids = config.concept_ids();
    let specs = raw
        .concepts()
        .iter()
        .zip(entries)
        .zip(ids)
        .map(|((spec, entry), id)| ConceptSpec {
            id,
            target_token: spec.target_token,
            direction: spec.direction.clone(),
            localization: entry.localization.clone(),
            category: entry.category,
            norm: entry.norm.unwrap_or(config.concepts.signal_norm),
        })
        .collect();
    ConceptBank::from_specs(specs, config.concepts.orthogonal)
}

fn metric_value(row: &EffectRow, metric: MetricKind) -> f64 {
    match metric {
        MetricKind::SuccessRate => row.record.success_rate,
        MetricKind::Similarity => row.record.similarity,
        MetricKind::LogitBoost => row.record.logit_boost,
    }
}

fn metric_row(concept: &str, row: &EffectRow, metric: &str, value: f64) -> MetricRow {
    MetricRow {
        concept: concept.to_string(),
        layer: row.layer,
        alpha: row.alpha,
        sign: row.sign.as_i8(),
        metric: metric.to_string(),
        value,
        n: row.record.n,
    }
}

/// Layer effect profile for Gini: rates as-is, boosts as log-boost increments.
pub fn layer_effects(rows: &[EffectRow], metric: MetricKind) -> LayerEffectProfile {
    match metric {
        MetricKind::LogitBoost => LayerEffectProfile::from_log_boosts(
            &rows.iter().map(|r| r.mean_delta_logit).collect::<Vec<_>>(),
        ),
        other => LayerEffectProfile::from_scores(
            &rows
                .iter()
                .map(|r| metric_value(r, other))
                .collect::<Vec<_>>(),
        ),
    }
}

/// Layer sweep at `sweep.alpha` for every concept; Peak and Gini per metric
/// per concept and per category.
pub fn run_table2_analog(
    exp: &Experiment,
    source: &VectorSource,
) -> Result<(ReportBundle, Vec<ConceptVectorSet>)> {
    let vectors = exp.vectors(source)?;
    let layers = exp.config.sweep_layers();
    let inputs = exp.eval_inputs();
    let opts = exp.steer_options();
    let alpha = exp.config.sweep.alpha;
    let sweeps: Vec<Vec<EffectRow>> = exp
        .concepts()
        .par_iter()
        .zip(&vectors)
        .map(|(spec, set)| {
            let model = exp.concept_model(spec)?;
            let sweep = layer_sweep(
                &model,
                &inputs,
                set,
                &layers,
                alpha,
                Sign::Forward,
                &exp.target(spec),
                &opts,
            )?;
            Ok(sweep.rows)
        })
        .collect::<Result<_>>()
        .stage("table2/sweep")?;

    let mut bundle = ReportBundle::default();
    for (spec, rows) in exp.concepts().iter().zip(&sweeps) {
        for row in rows {
            for &metric in &exp.config.sweep.metrics {
                bundle.metrics.push(metric_row(
                    &spec.id,
                    row,
                    metric.as_str(),
                    metric_value(row, metric),
                ));
            }
        }
        for &metric in &exp.config.sweep.metrics {
            let (peak_layer, peak) = rows
                .iter()
                .map(|r| (r.layer, metric_value(r, metric)))
                .fold((0, f64::NEG_INFINITY), |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                });
            bundle.gini.push(GiniRow {
                concept: spec.id.clone(),
                category: spec.category.as_str().to_string(),
                metric: metric.as_str().to_string(),
                peak,
                peak_layer,
                gini: gini_of(&layer_effects(rows, metric)),
            });
        }
    }
    bundle.categories = category_rows(&bundle.gini);
    Ok((bundle, vectors))
}

fn category_rows(gini: &[GiniRow]) -> Vec<CategoryRow> {
    let mut out: Vec<CategoryRow> = Vec::new();
    for g in gini {
        match out
            .iter_mut()
            .find(|c| c.category == g.category && c.metric == g.metric)
        {
            Some(c) => {
                c.peak += g.peak;
                c.gini += g.gini;
                c.concepts += 1;
            }
            None => out.push(CategoryRow {
                category: g.category.clone(),
                metric: g.metric.clone(),
                peak: g.peak,
                gini: g.gini,
                concepts: 1,
            }),
        }
    }
    for c in &mut out {
        c.peak /= c.concepts as f64;
        c.gini /= c.concepts as f64;
    }
    out
}

/// First-step target-logit shift from steering with each layer's own vector.
fn first_step_deltas(
    model: &Model,
    input: &EvalInput,
    set: &ConceptVectorSet,
    alpha: f32,
    target: u32,
) -> Result<Vec<f64>> {
    let t = target as usize;
    let base = f64::from(model.forward_trace(&input.prefix, &input.prompt)?.logits[t]);
    (1..=model.n_layers())
        .map(|layer| {
            let hook = SteeringHook::new(layer, set.layer(layer)?.to_vec(), alpha);
            let steered =
                model.forward_hooked(&input.prefix, &input.prompt, std::slice::from_ref(&hook))?;
            Ok(f64::from(steered.logits[t]) - base)
        })
        .collect()
}

/// Peak-layer histograms: each sample is a concept instance whose gain
/// profile is jittered by `peaks.jitter`; its per-layer score is the
/// log-boost increment of steering with that instance's own vectors.
///
/// One histogram per configured concept plus one for the `peaks.layers`
/// planted profile (labelled `planted`).
pub fn run_fig3_analog(exp: &Experiment) -> Result<ReportBundle> {
    let cfg = &exp.config;
    let n_layers = cfg.model.n_layers;
    let mut jobs: Vec<(String, String, Vec<f32>, usize)> = exp
        .concepts()
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            Ok((
                spec.id.clone(),
                spec.category.as_str().to_string(),
                localization_profile(&spec.localization, spec.category, n_layers)?,
                i,
            ))
        })
        .collect::<Result<_>>()
        .stage("fig3/profiles")?;
    let planted = localization_profile(
        &Localization::Layers(cfg.peaks.layers.clone()),
        exp.concepts()[0].category,
        n_layers,
    )
    .stage("fig3/profiles")?;
    jobs.push((
        "planted".into(),
        exp.concepts()[0].category.as_str().to_string(),
        planted,
        0,
    ));

    let design = exp.pair_design();
    let alpha = cfg.sweep.alpha;
    let histograms = jobs
        .iter()
        .enumerate()
        .map(|(job, (label, category, profile, concept))| {
            let spec = &exp.concepts()[*concept];
            let scores: Vec<Vec<f64>> = (0..cfg.peaks.samples)
                .into_par_iter()
                .map(|s| {
                    let seed =
                        sub_seed(cfg.seed, PEAKS_DOMAIN, (job * cfg.peaks.samples + s) as u64);
                    let mut rng =
                        <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
                    let gains = jitter_profile(profile, cfg.peaks.jitter, &mut rng);
                    let model = exp.base_model.with_reinjection_gains(gains)?;
                    let pairs = generate_pairs(spec, PEAK_PAIRS, &design, cfg.data.noise, seed)?;
                    let set = extract(&model, &pairs, &exp.prompt)?;
                    let input = EvalInput {
                        prefix: make_substrate(
                            design.substrate,
                            cfg.model.d_model,
                            design.prefix_len,
                            design.substrate_scale,
                            seed,
                        ),
                        prompt: exp.prompt.clone(),
                    };
                    let deltas = first_step_deltas(&model, &input, &set, alpha, spec.target_token)?;
                    Ok(LayerEffectProfile::from_log_boosts(&deltas)
                        .effects()
                        .to_vec())
                })
                .collect::<Result<_>>()?;
            Ok(PeakHistogram {
                label: label.clone(),
                category: category.clone(),
                counts: peak_layer_histogram(&scores)?,
                samples: scores.len(),
            })
        })
        .collect::<Result<_>>()
        .stage("fig3/samples")?;
    Ok(ReportBundle {
        peaks: histograms,
        ..ReportBundle::default()
    })
}

/// Pairs extracted per peak-histogram sample.
const PEAK_PAIRS: usize = 4;

/// Reverse steering on concept-bearing inputs under the single-injection and
/// persistent presets.
pub fn run_reverse_analog(exp: &Experiment) -> Result<ReportBundle> {
    let cfg = &exp.config;
    let index = match &cfg.reverse.concept {
        Some(id) => exp.concept_index(id).stage("reverse")?,
        None => 0,
    };
    let spec = &exp.concepts()[index];
    let pairs = exp.generate_pairs(index).stage("reverse/pairs")?;
    let inputs = exp.positive_inputs(spec);
    let report = reverse_steer_experiment(
        &exp.base_model,
        &pairs,
        &exp.prompt,
        &inputs,
        cfg.reverse.injection_layer,
        cfg.reverse.alpha,
        &exp.target(spec),
        &exp.steer_options(),
    )
    .stage("reverse/ablate")?;

    let mut rows = Vec::new();
    for curve in [&report.single, &report.persistent] {
        for r in &curve.rows {
            for (metric, value) in [
                ("mention_rate", r.record.mention_rate),
                ("base_mention_rate", r.base_mention_rate),
                ("target_logit", r.target_logit),
                ("base_target_logit", r.base_target_logit),
            ] {
                rows.push(ReverseRow {
                    preset: curve.preset.clone(),
                    concept: spec.id.clone(),
                    layer: r.layer,
                    alpha: r.alpha,
                    sign: r.sign.as_i8(),
                    metric: metric.to_string(),
                    value,
                    n: r.record.n,
                });
            }
        }
    }
    let at = |rows: &[EffectRow], layer: usize| rows.iter().find(|r| r.layer == layer).cloned();
    let single = at(&report.single.rows, cfg.reverse.injection_layer)
        .ok_or_else(|| SteerError::Input("injection layer missing from sweep".into()))
        .stage("reverse")?;
    let persistent = at(&report.persistent.rows, 1)
        .ok_or_else(|| SteerError::Input("layer 1 missing from sweep".into()))
        .stage("reverse")?;
    let n_layers = cfg.model.n_layers as f64;
    Ok(ReportBundle {
        reverse: Some(ReverseSummary {
            concept: spec.id.clone(),
            injection_layer: cfg.reverse.injection_layer,
            alpha: cfg.reverse.alpha,
            single_base_mention: single.base_mention_rate,
            single_ablated_mention: single.record.mention_rate,
            persistent_retained: persistent.target_logit / persistent.base_target_logit,
            persistent_expected: (n_layers - 1.0) / n_layers,
            rows,
        }),
        ..ReportBundle::default()
    })
}

/// Last layer carrying planted mass for a concept.
fn last_planted_layer(exp: &Experiment, spec: &ConceptSpec) -> Result<usize> {
    let profile = apply_localization(spec, exp.base_model.config())?;
    Ok(profile.iter().rposition(|&g| g > 0.0).map_or(1, |i| i + 1))
}

/// Coefficient sweep for the first concept at its last planted layer, plus a
/// point just past the derived degeneration threshold.
pub fn run_alpha_analog(exp: &Experiment, source: &VectorSource) -> Result<ReportBundle> {
    let vectors = exp.vectors(source)?;
    let spec = &exp.concepts()[0];
    let set = &vectors[0];
    let model = exp.concept_model(spec).stage("alpha")?;
    let layer = last_planted_layer(exp, spec).stage("alpha")?;
    let inputs = exp.eval_inputs();
    let opts = exp.steer_options();
    let vector = set.layer(layer).stage("alpha")?.to_vec();
    let threshold =
        degeneration_threshold(&model, &inputs, &vector, layer, spec.target_token, &opts)
            .stage("alpha/threshold")?;
    // just past the crossing point, so ties cannot decide the outcome
    let degeneration_alpha = (threshold * 1.01).max(1e-3) as f32;
    let mut alphas = exp.config.sweep.alphas.clone();
    alphas.push(degeneration_alpha);
    alphas.sort_by(f32::total_cmp);
    alphas.dedup();
    let sweep = alpha_sweep(
        &model,
        &inputs,
        &vector,
        layer,
        &alphas,
        Sign::Forward,
        &exp.target(spec),
        &opts,
    )
    .stage("alpha/sweep")?;

    let positive: Vec<&EffectRow> = sweep.rows.iter().filter(|r| r.alpha > 0.0).collect();
    let reference = positive
        .last()
        .map_or(0.0, |r| r.mean_delta_logit / f64::from(r.alpha));
    let linearity = positive
        .iter()
        .map(|r| {
            let expected = reference * f64::from(r.alpha);
            (r.mean_delta_logit - expected).abs() / expected.abs().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max);
    let at = sweep
        .rows
        .iter()
        .find(|r| r.alpha == degeneration_alpha)
        .expect("degeneration alpha is in the grid");

    let mut rows = Vec::new();
    for r in &sweep.rows {
        for (metric, value) in [
            ("success_rate", r.record.success_rate),
            ("similarity", r.record.similarity),
            ("logit_boost", r.record.logit_boost),
            ("log_boost", r.mean_delta_logit),
            ("baseline_similarity", r.baseline_similarity),
        ] {
            rows.push(metric_row(&spec.id, r, metric, value));
        }
    }
    Ok(ReportBundle {
        alpha: Some(AlphaSummary {
            concept: spec.id.clone(),
            layer,
            threshold,
            degeneration_alpha,
            log_boost_linearity_error: linearity,
            success_at_degeneration: at.record.success_rate,
            baseline_similarity_at_degeneration: at.baseline_similarity,
            rows,
        }),
        ..ReportBundle::default()
    })
}

/// Boost of every concept's target under every concept's vector.
pub fn run_confusion_analog(exp: &Experiment, source: &VectorSource) -> Result<ReportBundle> {
    let vectors = exp.vectors(source)?;
    let layer = exp.config.confusion_layer();
    let alpha = exp.config.confusion.alpha;
    let inputs: Vec<(VisualPrefix, Vec<u32>)> = exp
        .eval_inputs()
        .into_iter()
        .map(|i| (i.prefix, i.prompt))
        .collect();
    let targets: Vec<u32> = exp.concepts().iter().map(|c| c.target_token).collect();
    let matrix =
        metrics::confusion_matrix(&exp.base_model, &targets, &vectors, &inputs, layer, alpha)
            .stage("confusion")?;
    let mut min_diagonal = f64::INFINITY;
    let mut max_off_diagonal = f64::NEG_INFINITY;
    for (i, row) in matrix.iter().enumerate() {
        for (j, &boost) in row.iter().enumerate() {
            if i == j {
                min_diagonal = min_diagonal.min(boost);
            } else {
                max_off_diagonal = max_off_diagonal.max(boost);
            }
        }
    }
    Ok(ReportBundle {
        confusion: Some(ConfusionSummary {
            concepts: exp.concepts().iter().map(|c| c.id.clone()).collect(),
            layer,
            alpha,
            matrix,
            min_diagonal,
            max_off_diagonal,
            dominance: min_diagonal / max_off_diagonal,
        }),
        ..ReportBundle::default()
    })
}

/// A vector of the same norm as `like`, orthogonal to every concept direction.
fn control_vector(exp: &Experiment, like: &[f32], index: usize) -> Vec<f32> {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(sub_seed(
        exp.config.seed,
        CONTROL_DOMAIN,
        index as u64,
    ));
    let basis = linalg::orthonormal_basis(
        &exp.concepts()
            .iter()
            .map(|c| c.direction.clone())
            .collect::<Vec<_>>(),
    );
    loop {
        let mut v = linalg::gaussian_vec(&mut rng, like.len(), 1.0);
        linalg::project_out(&mut v, &basis);
        linalg::project_out(&mut v, &basis);
        if let Some(unit) = linalg::normalized(&v) {
            return linalg::scaled(&unit, linalg::norm(like) as f32);
        }
    }
}

/// TE / NIE / rho for every concept, layer and `faithfulness.alphas` entry,
/// plus an orthogonal control vector per concept and layer.
pub fn run_faithfulness_suite(exp: &Experiment, source: &VectorSource) -> Result<ReportBundle> {
    let vectors = exp.vectors(source)?;
    let alphas = &exp.config.faithfulness.alphas;
    let per_concept: Vec<Vec<FaithfulnessRow>> = exp
        .concepts()
        .par_iter()
        .enumerate()
        .zip(&vectors)
        .map(|((i, spec), set)| {
            let model = exp.concept_model(spec)?;
            let pairs = exp.generate_pairs(i)?;
            let profile = apply_localization(spec, model.config())?;
            let last = profile.iter().rposition(|&g| g > 0.0).map_or(1, |p| p + 1);
            let mut rows = Vec::new();
            for layer in 1..=model.n_layers() {
                let v = set.layer(layer)?;
                let control = control_vector(exp, v, i * model.n_layers() + layer);
                for &alpha in alphas {
                    for (vector, is_control) in [(v, false), (control.as_slice(), true)] {
                        let rec = metrics::faithfulness(
                            &model,
                            &pairs,
                            vector,
                            layer,
                            alpha,
                            spec.target_token,
                            &exp.prompt,
                        )?;
                        rows.push(FaithfulnessRow {
                            concept: spec.id.clone(),
                            layer,
                            alpha,
                            te: rec.te,
                            nie: rec.nie,
                            rho: rec.rho,
                            planted: profile[layer - 1] > 0.0,
                            complete: layer >= last,
                            control: is_control,
                        });
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()
        .stage("faithfulness")?;
    Ok(ReportBundle {
        faithfulness: per_concept.into_iter().flatten().collect(),
        ..ReportBundle::default()
    })
}

pub fn run_optimality(exp: &Experiment) -> Result<ReportBundle> {
    let report = run_optimality_suite(&exp.config.optimality).stage("optimality")?;
    Ok(ReportBundle {
        optimality: Some(report),
        ..ReportBundle::default()
    })
}

/// Every pipeline; vectors from the layer sweep feed the later stages.
pub fn run_all(exp: &Experiment, vector_dir: Option<&Path>) -> Result<ReportBundle> {
    let source = VectorSource::Extract {
        save_to: vector_dir.map(Path::to_path_buf),
    };
    let (mut bundle, vectors) = run_table2_analog(exp, &source)?;
    let given = VectorSource::Given(vectors);
    bundle.merge(run_fig3_analog(exp)?);
    bundle.merge(run_reverse_analog(exp)?);
    bundle.merge(run_alpha_analog(exp, &given)?);
    if exp.concepts().len() >= 2 {
        bundle.merge(run_confusion_analog(exp, &given)?);
    }
    bundle.merge(run_faithfulness_suite(exp, &given)?);
    bundle.merge(run_optimality(exp)?);
    Ok(bundle)
}
