// SPDX-License-Identifier: MIT OR Apache-2.0

//! Numerical certification that difference-in-means is the right steering
//! direction for linearly encoded binary concepts.
//!
//! Two claims are checked on synthetic class-conditional Gaussian problems:
//!
//! * **alignment**: every admissible linear predictor `w^T h + b` (expected
//!   logistic loss strictly below the best constant predictor's) satisfies
//!   `<w, delta> > 0`, with `delta = mu_1 - mu_0`;
//! * **maximin**: over an ensemble of admissible predictors,
//!   `u = delta / |delta|` has the largest worst-case directional derivative
//!   `min_i <w_i, u>`.
//!
//! Admissibility, the trivial loss and `delta` are all evaluated on the same
//! held-out split, so the alignment claim is exact on that empirical
//! distribution and any violation is a bug. Everything here is `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SteerError};

/// Constant predictions are capped at this logit when a class is absent.
pub const LOGIT_CAP: f64 = 20.0;

/// Default gap by which admissible loss must undercut the trivial loss.
pub const DEFAULT_MARGIN: f64 = 1e-3;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Logistic,
}

impl LossKind {
    /// `L(eta, z)`.
    pub fn loss(self, eta: f64, label: u8) -> f64 {
        match self {
            // softplus(-eta) for z = 1, softplus(eta) for z = 0
            Self::Logistic => softplus(if label == 1 { -eta } else { eta }),
        }
    }

    /// `dL/d eta`.
    pub fn derivative(self, eta: f64, label: u8) -> f64 {
        match self {
            Self::Logistic => sigmoid(eta) - f64::from(label),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Binary-labelled samples with cached class means.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDataset {
    samples: Vec<Vec<f64>>,
    labels: Vec<u8>,
    mu1: Vec<f64>,
    mu0: Vec<f64>,
    delta: Vec<f64>,
}

impl ClassDataset {
    pub fn new(samples: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(SteerError::Dimension {
                what: "label count",
                expected: samples.len(),
                got: labels.len(),
            });
        }
        let d = samples.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(SteerError::Input("dataset needs non-empty samples".into()));
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != d) {
            return Err(SteerError::Dimension {
                what: "sample width",
                expected: d,
                got: bad.len(),
            });
        }
        if labels.iter().any(|&z| z > 1) {
            return Err(SteerError::Input("labels must be 0 or 1".into()));
        }
        let mean_of = |class: u8| -> Option<Vec<f64>> {
            let members: Vec<&Vec<f64>> = samples
                .iter()
                .zip(&labels)
                .filter(|(_, &z)| z == class)
                .map(|(s, _)| s)
                .collect();
            if members.is_empty() {
                return None;
            }
            let mut m = vec![0.0; d];
            for s in &members {
                m.iter_mut().zip(s.iter()).for_each(|(a, b)| *a += b);
            }
            let n = members.len() as f64;
            m.iter_mut().for_each(|a| *a /= n);
            Some(m)
        };
        let (mu1, mu0) = match (mean_of(1), mean_of(0)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(SteerError::Input("both classes must be non-empty".into())),
        };
        let delta = mu1.iter().zip(&mu0).map(|(a, b)| a - b).collect();
        Ok(Self {
            samples,
            labels,
            mu1,
            mu0,
            delta,
        })
    }

    /// `n_per_class` samples from `N(mu_z, sigma^2 I)` for each class, interleaved.
    pub fn gaussian<R: Rng + ?Sized>(
        mu1: &[f64],
        mu0: &[f64],
        sigma: f64,
        n_per_class: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(2 * n_per_class);
        let mut labels = Vec::with_capacity(2 * n_per_class);
        for _ in 0..n_per_class {
            for (mu, z) in [(mu1, 1u8), (mu0, 0u8)] {
                samples.push(
                    mu.iter()
                        .map(|m| {
                            let e: f64 = StandardNormal.sample(rng);
                            m + sigma * e
                        })
                        .collect(),
                );
                labels.push(z);
            }
        }
        Self::new(samples, labels)
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn mu1(&self) -> &[f64] {
        &self.mu1
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    /// `mu_1 - mu_0`.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean loss of `w^T h + b`.
    pub fn mean_loss(&self, w: &[f64], b: f64, kind: LossKind) -> f64 {
        let total: f64 = self
            .samples
            .iter()
            .zip(&self.labels)
            .map(|(h, &z)| kind.loss(dot(w, h) + b, z))
            .sum();
        total / self.samples.len() as f64
    }

    fn weighted_gradient(
        &self,
        w: &[f64],
        b: f64,
        weights: &[f64],
        kind: LossKind,
    ) -> (Vec<f64>, f64) {
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        let total: f64 = weights.iter().sum();
        for ((h, &z), &c) in self.samples.iter().zip(&self.labels).zip(weights) {
            let g = c * kind.derivative(dot(w, h) + b, z);
            gw.iter_mut().zip(h).for_each(|(a, x)| *a += g * x);
            gb += g;
        }
        gw.iter_mut().for_each(|a| *a /= total);
        (gw, gb / total)
    }
}

/// Lowest mean loss any constant predictor reaches on `labels`.
///
/// For logistic loss this is the binary entropy of the base rate; a
/// single-class label set uses a constant logit capped at [`LOGIT_CAP`].
pub fn trivially_attainable_loss(labels: &[u8], kind: LossKind) -> Result<f64> {
    if labels.is_empty() {
        return Err(SteerError::Input("no labels".into()));
    }
    let n = labels.len() as f64;
    let p = labels.iter().filter(|&&z| z == 1).count() as f64 / n;
    match kind {
        LossKind::Logistic => {
            let best = if p <= 0.0 {
                -LOGIT_CAP
            } else if p >= 1.0 {
                LOGIT_CAP
            } else {
                (p / (1.0 - p)).ln()
            };
            Ok(p * kind.loss(best, 1) + (1.0 - p) * kind.loss(best, 0))
        }
    }
}

/// Derivative sign check `L'(eta, 1) <= 0 <= L'(eta, 0)` at every point.
pub fn is_monotonic_at(kind: LossKind, points: &[f64]) -> bool {
    points
        .iter()
        .all(|&eta| kind.derivative(eta, 1) <= 0.0 && kind.derivative(eta, 0) >= 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTraining {
    pub loss: LossKind,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// Admissible means `loss < trivial - margin`.
    pub margin: f64,
    /// Std of the random initial weights.
    pub init_scale: f64,
    /// Weight-decay coefficient on `|w|^2 / 2` during training only;
    /// admissibility is always judged on the unpenalized loss.
    pub l2: f64,
}

impl Default for ProbeTraining {
    fn default() -> Self {
        Self {
            loss: LossKind::Logistic,
            steps: 2000,
            step_size: 0.5,
            seed: 0,
            margin: DEFAULT_MARGIN,
            init_scale: 0.01,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearProbe {
    pub w: Vec<f64>,
    pub b: f64,
    /// Mean loss on the assessment set.
    pub loss: f64,
    /// Trivially attainable loss on the assessment set.
    pub trivial_loss: f64,
    pub margin: f64,
    pub admissible: bool,
    /// Training ended with the loss still above the admissibility threshold.
    pub stalled: bool,
}

impl LinearProbe {
    /// Score `(w, b)` on `data`.
    pub fn assess(
        w: Vec<f64>,
        b: f64,
        data: &ClassDataset,
        kind: LossKind,
        margin: f64,
    ) -> Result<Self> {
        if w.len() != data.dim() {
            return Err(SteerError::Dimension {
                what: "probe weights",
                expected: data.dim(),
                got: w.len(),
            });
        }
        let loss = data.mean_loss(&w, b, kind);
        let trivial_loss = trivially_attainable_loss(data.labels(), kind)?;
        let admissible = loss.is_finite() && loss < trivial_loss - margin;
        Ok(Self {
            w,
            b,
            loss,
            trivial_loss,
            margin,
            admissible,
            stalled: !admissible,
        })
    }

    /// Re-check the admissibility gate from the stored fields.
    pub fn gate_holds(&self) -> bool {
        !self.admissible || self.loss < self.trivial_loss - self.margin
    }
}

/// Full-batch gradient descent on mean loss over `train`; admissibility is
/// judged on `assess_on` (pass `train` again for in-sample).
pub fn train_probe(
    train: &ClassDataset,
    assess_on: &ClassDataset,
    opts: &ProbeTraining,
) -> Result<LinearProbe> {
    train_probe_weighted(train, None, assess_on, opts)
}

/// As [`train_probe`] with per-sample weights on the training loss.
pub fn train_probe_weighted(
    train: &ClassDataset,
    sample_weights: Option<&[f64]>,
    assess_on: &ClassDataset,
    opts: &ProbeTraining,
) -> Result<LinearProbe> {
    if train.dim() != assess_on.dim() {
        return Err(SteerError::Dimension {
            what: "assessment set width",
            expected: train.dim(),
            got: assess_on.dim(),
        });
    }
    if !(opts.step_size.is_finite() && opts.step_size > 0.0) {
        return Err(SteerError::Config("step_size must be positive".into()));
    }
    if !(opts.l2.is_finite() && opts.l2 >= 0.0) {
        return Err(SteerError::Config("l2 must be >= 0".into()));
    }
    let uniform;
    let weights = match sample_weights {
        Some(w) if w.len() != train.len() => {
            return Err(SteerError::Dimension {
                what: "sample weights",
                expected: train.len(),
                got: w.len(),
            })
        }
        Some(w) => w,
        None => {
            uniform = vec![1.0; train.len()];
            &uniform
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut w: Vec<f64> = (0..train.dim())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * opts.init_scale
        })
        .collect();
    let mut b = 0.0;
    for _ in 0..opts.steps {
        let (gw, gb) = train.weighted_gradient(&w, b, weights, opts.loss);
        w.iter_mut()
            .zip(&gw)
            .for_each(|(a, g)| *a -= opts.step_size * (g + opts.l2 * *a));
        b -= opts.step_size * gb;
    }
    LinearProbe::assess(w, b, assess_on, opts.loss, opts.margin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Alignment {
    pub inner_product: f64,
    pub passed: bool,
}

/// `<w, delta>` for an admissible probe.
pub fn check_alignment(probe: &LinearProbe, data: &ClassDataset) -> Result<Alignment> {
    if !probe.admissible {
        return Err(SteerError::Input(
            "alignment is only defined for admissible probes".into(),
        ));
    }
    if probe.w.len() != data.dim() {
        return Err(SteerError::Dimension {
            what: "probe weights",
            expected: data.dim(),
            got: probe.w.len(),
        });
    }
    let inner_product = dot(&probe.w, data.delta());
    Ok(Alignment {
        inner_product,
        passed: inner_product > 0.0,
    })
}

/// `min_i <w_i, u>` over the ensemble; `u` must be unit-norm.
pub fn worst_case_directional_derivative(u: &[f64], ensemble: &[Vec<f64>]) -> Result<f64> {
    if (norm(u) - 1.0).abs() > UNIT_TOL {
        return Err(SteerError::Input(format!(
            "direction must be unit-norm, has norm {}",
            norm(u)
        )));
    }
    if ensemble.is_empty() {
        return Err(SteerError::Input("probe ensemble is empty".into()));
    }
    ensemble
        .iter()
        .map(|w| {
            if w.len() != u.len() {
                Err(SteerError::Dimension {
                    what: "probe weights",
                    expected: u.len(),
                    got: w.len(),
                })
            } else {
                Ok(dot(w, u))
            }
        })
        .try_fold(f64::INFINITY, |acc, v| Ok(acc.min(v?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    /// Problems per noise level.
    pub problems: usize,
    pub d: usize,
    pub sigmas: Vec<f64>,
    pub n_train_per_class: usize,
    pub n_eval_per_class: usize,
    /// Admissible probes per problem (trained plus perturbed).
    pub ensemble_size: usize,
    /// How many of them come from (re)weighted training runs.
    pub trained_probes: usize,
    pub random_directions: usize,
    pub steps: usize,
    pub step_size: f64,
    /// Training weight decay, see [`ProbeTraining::l2`].
    pub l2: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            problems: 100,
            d: 16,
            sigmas: vec![0.1, 0.5, 1.0],
            n_train_per_class: 200,
            n_eval_per_class: 100,
            ensemble_size: 200,
            trained_probes: 20,
            random_directions: 50,
            steps: 300,
            step_size: 0.5,
            l2: 0.05,
            margin: DEFAULT_MARGIN,
            seed: 0,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("problems", self.problems),
            ("d", self.d),
            ("n_train_per_class", self.n_train_per_class),
            ("n_eval_per_class", self.n_eval_per_class),
            ("ensemble_size", self.ensemble_size),
            ("trained_probes", self.trained_probes),
            ("random_directions", self.random_directions),
            ("steps", self.steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(SteerError::Config(format!(
                "optimality.{name} must be positive"
            )));
        }
        if self.d < 2 {
            return Err(SteerError::Config("optimality.d must be >= 2".into()));
        }
        if self.trained_probes > self.ensemble_size {
            return Err(SteerError::Config(
                "trained_probes cannot exceed ensemble_size".into(),
            ));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(SteerError::Config(
                "sigmas must be a non-empty list of values >= 0".into(),
            ));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(SteerError::Config("step_size must be positive".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(SteerError::Config("l2 must be >= 0".into()));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(SteerError::Config("margin must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemReport {
    pub index: usize,
    pub sigma: f64,
    pub delta_norm: f64,
    /// Admissible probes in the final ensemble.
    pub ensemble: usize,
    /// Trained probes (before perturbation) that passed the admissibility gate.
    pub trained_admissible: usize,
    /// Ensemble members with `<w, delta> > 0`.
    pub aligned: usize,
    pub min_alignment: f64,
    /// Worst-case derivative of `delta / |delta|`.
    pub delta_worst_case: f64,
    /// Best worst-case derivative among the random directions.
    pub best_random_worst_case: f64,
    /// Random directions strictly beaten by `delta / |delta|`.
    pub random_beaten: usize,
    pub random_directions: usize,
    /// Random directions for which an admissible orthogonal adversary was built.
    pub adversarial_beaten: usize,
    pub gate_violations: usize,
}

impl ProblemReport {
    pub fn beats_all_random(&self) -> bool {
        self.ensemble > 0 && self.random_beaten == self.random_directions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    pub config: SuiteConfig,
    pub problems: Vec<ProblemReport>,
    /// Aligned / admissible, over every probe in every ensemble.
    pub alignment_pass_fraction: f64,
    /// Problems where `delta / |delta|` beats every random direction; a
    /// problem without admissible probes counts as a loss.
    pub maximin_win_fraction: f64,
    /// Adversaries built / random directions tried, over problems with a
    /// non-empty ensemble.
    pub adversarial_win_fraction: f64,
    pub total_admissible: usize,
    pub notes: Vec<String>,
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Component of `v` orthogonal to the unit vector `u`.
fn orthogonal_part(v: &[f64], u: &[f64]) -> Vec<f64> {
    let p = dot(v, u);
    v.iter().zip(u).map(|(a, b)| a - p * b).collect()
}

fn run_problem(cfg: &SuiteConfig, index: usize, sigma: f64) -> Result<ProblemReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64));
    let d = cfg.d;
    let scale = 1.0 / (d as f64).sqrt();
    let mu1: Vec<f64> = (0..d)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let mu0: Vec<f64> = (0..d)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let train = ClassDataset::gaussian(&mu1, &mu0, sigma, cfg.n_train_per_class, &mut rng)?;
    let eval = ClassDataset::gaussian(&mu1, &mu0, sigma, cfg.n_eval_per_class, &mut rng)?;
    let delta = eval.delta().to_vec();
    let delta_norm = norm(&delta);
    let u_delta: Vec<f64> = delta.iter().map(|x| x / delta_norm).collect();
    let kind = LossKind::Logistic;

    // trained members: Bayesian-bootstrap reweighting plus random init
    let mut ensemble: Vec<LinearProbe> = Vec::with_capacity(cfg.ensemble_size);
    let mut gate_violations = 0;
    for k in 0..cfg.trained_probes {
        let weights: Vec<f64> = (0..train.len()).map(|_| Exp1.sample(&mut rng)).collect();
        let opts = ProbeTraining {
            loss: kind,
            steps: cfg.steps,
            step_size: cfg.step_size,
            seed: rng.random::<u64>() ^ k as u64,
            margin: cfg.margin,
            init_scale: 0.1,
            l2: cfg.l2,
        };
        let probe = train_probe_weighted(&train, Some(&weights), &eval, &opts)?;
        if !probe.gate_holds() {
            gate_violations += 1;
        }
        if probe.admissible {
            ensemble.push(probe);
        }
    }
    let trained_admissible = ensemble.len();

    // perturbed members: trained probe + orthogonal-to-delta component, kept
    // only if still admissible
    if trained_admissible > 0 {
        let mut attempts = 0;
        let max_attempts = 20 * cfg.ensemble_size;
        while ensemble.len() < cfg.ensemble_size && attempts < max_attempts {
            attempts += 1;
            let parent = ensemble[rng.random_range(0..trained_admissible)].clone();
            let r = orthogonal_part(&random_unit(&mut rng, d), &u_delta);
            let rn = norm(&r);
            if rn < 1e-9 {
                continue;
            }
            let mut beta = norm(&parent.w) * rng.random_range(0.25..4.0);
            for _ in 0..8 {
                let w: Vec<f64> = parent
                    .w
                    .iter()
                    .zip(&r)
                    .map(|(a, b)| a + beta * b / rn)
                    .collect();
                let probe = LinearProbe::assess(w, parent.b, &eval, kind, cfg.margin)?;
                if probe.admissible {
                    ensemble.push(probe);
                    break;
                }
                beta *= 0.5;
            }
        }
    }

    let weights: Vec<Vec<f64>> = ensemble.iter().map(|p| p.w.clone()).collect();
    let alignments: Vec<f64> = ensemble
        .iter()
        .map(|p| check_alignment(p, &eval).map(|a| a.inner_product))
        .collect::<Result<_>>()?;
    let aligned = alignments.iter().filter(|&&a| a > 0.0).count();
    let min_alignment = alignments.iter().copied().fold(f64::INFINITY, f64::min);

    let directions: Vec<Vec<f64>> = (0..cfg.random_directions)
        .map(|_| random_unit(&mut rng, d))
        .collect();
    let (delta_worst_case, best_random, random_beaten, adversarial_beaten) = if weights.is_empty() {
        (f64::NAN, f64::NAN, 0, 0)
    } else {
        let m_delta = worst_case_directional_derivative(&u_delta, &weights)?;
        let mut best_random = f64::NEG_INFINITY;
        let mut beaten = 0;
        let mut adversarial = 0;
        let argmin = alignments
            .iter()
            .zip(&ensemble)
            .min_by(|a, b| a.0.total_cmp(b.0))
            .map(|(_, p)| p)
            .expect("non-empty");
        for u in &directions {
            let m_u = worst_case_directional_derivative(u, &weights)?;
            best_random = best_random.max(m_u);
            if m_delta > m_u {
                beaten += 1;
            }
            if adversary_for(u, &u_delta, m_delta, argmin, &eval, kind, cfg.margin)? {
                adversarial += 1;
            }
        }
        (m_delta, best_random, beaten, adversarial)
    };

    Ok(ProblemReport {
        index,
        sigma,
        delta_norm,
        ensemble: ensemble.len(),
        trained_admissible,
        aligned,
        min_alignment,
        delta_worst_case,
        best_random_worst_case: best_random,
        random_beaten,
        random_directions: directions.len(),
        adversarial_beaten,
        gate_violations,
    })
}

/// Try to build an admissible probe whose derivative along `u` falls below
/// `m_delta` while its derivative along `delta` stays at `m_delta`: keep the
/// least-aligned probe's `delta` component and push its orthogonal component
/// against `u`.
fn adversary_for(
    u: &[f64],
    u_delta: &[f64],
    m_delta: f64,
    anchor: &LinearProbe,
    eval: &ClassDataset,
    kind: LossKind,
    margin: f64,
) -> Result<bool> {
    let u_perp = orthogonal_part(u, u_delta);
    let perp_norm = norm(&u_perp);
    if perp_norm < 1e-12 {
        // u is delta's own direction
        return Ok(false);
    }
    let along: Vec<f64> = u_delta.iter().map(|x| m_delta * x).collect();
    let candidates = [along, anchor.w.clone()];
    for base in &candidates {
        let mut beta = m_delta.abs().max(1e-3);
        for _ in 0..12 {
            let w: Vec<f64> = base
                .iter()
                .zip(&u_perp)
                .map(|(a, p)| a - beta * p / perp_norm)
                .collect();
            if dot(&w, u) < m_delta {
                let probe = LinearProbe::assess(w, anchor.b, eval, kind, margin)?;
                if probe.admissible
                    && (dot(&probe.w, u_delta) - m_delta).abs() <= 1e-9 * m_delta.abs().max(1.0)
                {
                    return Ok(true);
                }
            }
            beta *= 0.5;
        }
    }
    Ok(false)
}

/// Run every problem (in parallel, deterministically ordered) and summarize.
pub fn run_optimality_suite(cfg: &SuiteConfig) -> Result<OptimalityReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, f64)> = cfg
        .sigmas
        .iter()
        .enumerate()
        .flat_map(|(s, &sigma)| (0..cfg.problems).map(move |i| (s * cfg.problems + i, sigma)))
        .collect();
    let problems: Vec<ProblemReport> = jobs
        .par_iter()
        .map(|&(index, sigma)| run_problem(cfg, index, sigma))
        .collect::<Result<_>>()?;

    let total_admissible: usize = problems.iter().map(|p| p.ensemble).sum();
    let aligned: usize = problems.iter().map(|p| p.aligned).sum();
    let with_ensemble: Vec<&ProblemReport> = problems.iter().filter(|p| p.ensemble > 0).collect();
    let wins = with_ensemble
        .iter()
        .filter(|p| p.beats_all_random())
        .count();
    let adv_tried: usize = with_ensemble.iter().map(|p| p.random_directions).sum();
    let adv_won: usize = with_ensemble.iter().map(|p| p.adversarial_beaten).sum();
    let frac = |a: usize, b: usize| {
        if b == 0 {
            f64::NAN
        } else {
            a as f64 / b as f64
        }
    };

    let mut notes = Vec::new();
    if cfg.sigmas.contains(&0.0) {
        notes.push(
            "sigma = 0 problems have point-mass classes; alignment is degenerate there".to_string(),
        );
    }
    let empty = problems.len() - with_ensemble.len();
    if empty > 0 {
        notes.push(format!("{empty} problems produced no admissible probe"));
    }
    let violations: usize = problems.iter().map(|p| p.gate_violations).sum();
    if violations > 0 {
        notes.push(format!(
            "{violations} probes failed the admissibility re-check"
        ));
    }

    Ok(OptimalityReport {
        config: cfg.clone(),
        alignment_pass_fraction: frac(aligned, total_admissible),
        maximin_win_fraction: frac(wins, problems.len()),
        adversarial_win_fraction: frac(adv_won, adv_tried),
        total_admissible,
        problems,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_loss_closed_forms() {
        let half = trivially_attainable_loss(&[0, 1, 0, 1], LossKind::Logistic).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        let quarter = trivially_attainable_loss(&[1, 0, 0, 0], LossKind::Logistic).unwrap();
        let h = -(0.25f64 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((quarter - h).abs() < 1e-12);
        assert!((quarter - 0.5623).abs() < 1e-4);
        assert!(trivially_attainable_loss(&[1, 1, 1], LossKind::Logistic).unwrap() <= 1e-4);
        assert!(trivially_attainable_loss(&[], LossKind::Logistic).is_err());
    }

    #[test]
    fn logistic_is_monotonic() {
        let pts: Vec<f64> = (-50..=50).map(|i| f64::from(i) * 0.7).collect();
        assert!(is_monotonic_at(LossKind::Logistic, &pts));
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for &eta in &[-3.0, -0.2, 0.0, 1.5] {
            for z in [0u8, 1] {
                let h = 1e-6;
                let fd = (LossKind::Logistic.loss(eta + h, z)
                    - LossKind::Logistic.loss(eta - h, z))
                    / (2.0 * h);
                assert!((fd - LossKind::Logistic.derivative(eta, z)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn separable_classes_give_admissible_probe() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = ClassDataset::gaussian(&[1.0, 0.0], &[-1.0, 0.0], 0.1, 50, &mut rng).unwrap();
        let probe = train_probe(&data, &data, &ProbeTraining::default()).unwrap();
        assert!(probe.admissible);
        assert!(!probe.stalled);
        assert!(check_alignment(&probe, &data).unwrap().passed);
        let again = train_probe(&data, &data, &ProbeTraining::default()).unwrap();
        assert_eq!(probe, again);
    }

    #[test]
    fn noise_labels_are_not_admissible_out_of_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mk = |rng: &mut ChaCha8Rng, n: usize| {
            let samples: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..8).map(|_| StandardNormal.sample(rng)).collect())
                .collect();
            let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            ClassDataset::new(samples, labels).unwrap()
        };
        let train = mk(&mut rng, 200);
        let eval = mk(&mut rng, 4000);
        let probe = train_probe(&train, &eval, &ProbeTraining::default()).unwrap();
        assert!(!probe.admissible);
        assert!(probe.stalled);
        assert!(check_alignment(&probe, &eval).is_err());
    }

    #[test]
    fn self_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = ClassDataset::gaussian(&[0.5, 0.2], &[-0.5, 0.1], 0.1, 20, &mut rng).unwrap();
        let probe = LinearProbe::assess(
            data.delta().to_vec(),
            0.0,
            &data,
            LossKind::Logistic,
            DEFAULT_MARGIN,
        )
        .unwrap();
        assert!(probe.admissible);
        let a = check_alignment(&probe, &data).unwrap();
        assert!((a.inner_product - dot(data.delta(), data.delta())).abs() < 1e-12);
    }

    #[test]
    fn worst_case_two_probe_arithmetic() {
        let ens = vec![vec![1.0, 0.5], vec![1.0, -0.5]];
        assert_eq!(
            worst_case_directional_derivative(&[1.0, 0.0], &ens).unwrap(),
            1.0
        );
        assert_eq!(
            worst_case_directional_derivative(&[0.0, 1.0], &ens).unwrap(),
            -0.5
        );
        assert!(worst_case_directional_derivative(&[2.0, 0.0], &ens).is_err());
        assert!(worst_case_directional_derivative(&[1.0, 0.0], &[]).is_err());
    }

    #[test]
    fn dataset_requires_both_classes() {
        assert!(ClassDataset::new(vec![vec![1.0], vec![2.0]], vec![1, 1]).is_err());
        let d = ClassDataset::new(
            vec![vec![1.0, 0.0], vec![3.0, 0.0], vec![0.0, 1.0]],
            vec![1, 1, 0],
        )
        .unwrap();
        assert_eq!(d.mu1(), &[2.0, 0.0]);
        assert_eq!(d.delta(), &[2.0, -1.0]);
    }
}
