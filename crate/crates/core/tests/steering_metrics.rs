// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering and metric behavior on linear-regime toy models, checked against
//! closed forms computed from the planted unembedding rows.

use approx::assert_relative_eq;

use steerlab_core::concepts::{
    generate_pairs, make_concept_bank, make_substrate, Category, ConceptBank, ConceptSpec,
    Localization, NegativeKind, PairDesign,
};
use steerlab_core::extraction::{extract, ConceptVectorSet};
use steerlab_core::harness::{Experiment, ExperimentConfig};
use steerlab_core::linalg;
use steerlab_core::metrics::{
    confusion_matrix, faithfulness, logit_boost, mention_rate, semantic_similarity,
    token_group_boost,
};
use steerlab_core::model::{Model, ModelConfig, SubstrateKind, VisualPrefix};
use steerlab_core::steering::{
    alpha_sweep, degeneration_threshold, layer_sweep, steer_generate, EvalInput, Sign,
    SteerOptions, SteeringHook, SteeringTarget,
};

const L: usize = 6;
const D: usize = 16;
const V: usize = 64;
const P: usize = 2;
const PROMPT: [u32; 2] = [60, 61];

fn design() -> PairDesign {
    PairDesign {
        substrate: SubstrateKind::Scene,
        substrate_scale: 1.0,
        prefix_len: P,
        negative: NegativeKind::Absence,
    }
}

fn one_hot(k: usize) -> Vec<f32> {
    let mut g = vec![0.0; L];
    g[k - 1] = 1.0;
    g
}

fn setup(norm: f32, gains: Vec<f32>) -> (ConceptBank, Model) {
    let mut bank = make_concept_bank(3, D, true, 21).unwrap();
    bank.concepts_mut().for_each(|c| c.norm = norm);
    let model = Model::build(ModelConfig::linear(L, D, V, P, 21).with_gains(gains), &bank).unwrap();
    (bank, model)
}

fn inputs(n: usize) -> Vec<EvalInput> {
    (0..n)
        .map(|i| EvalInput {
            prefix: make_substrate(SubstrateKind::Scene, D, P, 1.0, 100 + i as u64),
            prompt: PROMPT.to_vec(),
        })
        .collect()
}

fn with_signal(prefix: &VisualPrefix, signal: &[f32]) -> VisualPrefix {
    let mut p = prefix.clone();
    for row in &mut p.embeddings {
        linalg::axpy(row, 1.0, signal);
    }
    p
}

#[test]
fn orthonormal_concepts_have_decoupled_logits() {
    let (bank, model) = setup(1.0, one_hot(1));
    let base = make_substrate(SubstrateKind::Scene, D, P, 1.0, 5);
    let c = &bank.concepts()[0];
    let other = bank.concepts()[1].target_token as usize;
    let a = model.forward_trace(&base, &PROMPT).unwrap().logits;
    let b = model
        .forward_trace(
            &with_signal(&base, &linalg::scaled(&c.direction, 2.5)),
            &PROMPT,
        )
        .unwrap()
        .logits;
    assert_relative_eq!(
        b[c.target_token as usize] - a[c.target_token as usize],
        2.5,
        epsilon = 1e-5
    );
    assert!((b[other] - a[other]).abs() <= 1e-6);
}

#[test]
fn layer_one_hook_shifts_final_state_by_v() {
    let (_, model) = setup(1.0, one_hot(1));
    let prefix = make_substrate(SubstrateKind::Scene, D, P, 1.0, 6);
    let v: Vec<f32> = (0..D).map(|i| (i as f32 * 0.37).sin()).collect();
    let plain = model.forward_trace(&prefix, &PROMPT).unwrap();
    let hooked = model
        .forward_hooked(&prefix, &PROMPT, &[SteeringHook::new(1, v.clone(), 1.0)])
        .unwrap();
    for l in 1..=L {
        for ((h, p), x) in hooked.layer(l).iter().zip(plain.layer(l)).zip(&v) {
            assert!((h - (p + x)).abs() <= 1e-6);
        }
    }
}

#[test]
fn boost_matches_closed_form_at_every_layer() {
    let (bank, model) = setup(1.0, one_hot(1));
    let c = &bank.concepts()[0];
    let t = c.target_token;
    let v: Vec<f32> = (0..D).map(|i| ((i * 7 % 5) as f32 - 2.0) * 0.3).collect();
    let expected_slope = linalg::dot(model.unembedding_row(t), &v);
    let ins = inputs(4);
    for layer in 1..=L {
        for alpha in [0.0f32, 0.5, 2.0] {
            let mut base = Vec::new();
            let mut steered = Vec::new();
            for input in &ins {
                base.push(
                    model
                        .forward_trace(&input.prefix, &input.prompt)
                        .unwrap()
                        .logits,
                );
                let hook = SteeringHook::new(layer, v.clone(), alpha);
                steered.push(
                    model
                        .forward_hooked(&input.prefix, &input.prompt, &[hook])
                        .unwrap()
                        .logits,
                );
            }
            let b = logit_boost(&base, &steered, &[t]).unwrap();
            assert_relative_eq!(
                b.boost,
                (f64::from(alpha) * expected_slope).exp(),
                max_relative = 1e-5
            );
        }
    }
}

#[test]
fn threshold_alpha_puts_target_first() {
    let (bank, model) = setup(1.0, one_hot(1));
    let c = &bank.concepts()[0];
    let ins = inputs(8);
    let opts = SteerOptions {
        max_len: 1,
        ..SteerOptions::default()
    };
    let alpha = degeneration_threshold(&model, &ins, &c.direction, 3, c.target_token, &opts)
        .unwrap() as f32;
    // brute force: the worst input decides the threshold
    let first = |a: f32| -> Vec<u32> {
        ins.iter()
            .map(|i| {
                steer_generate(
                    &model,
                    &i.prefix,
                    &i.prompt,
                    &SteeringHook::new(3, c.direction.clone(), a),
                    1,
                )
                .unwrap()
                .steered
                .token_ids[0]
            })
            .collect()
    };
    assert!(first(alpha * 1.001).iter().all(|&t| t == c.target_token));
    assert!(first(alpha * 0.999).iter().any(|&t| t != c.target_token));
}

#[test]
fn reverse_hook_restores_negative_logit() {
    let (bank, model) = setup(2.0, one_hot(1));
    let c = &bank.concepts()[0];
    let pairs = generate_pairs(c, 10, &design(), 0.0, 3).unwrap();
    let set = extract(&model, &pairs, &PROMPT).unwrap();
    let t = c.target_token as usize;
    for pair in &pairs {
        let neg = model.forward_trace(&pair.negative, &PROMPT).unwrap().logits[t];
        let hook = SteeringHook::new(1, set.layer(1).unwrap().to_vec(), 1.0).reverse();
        let ablated = model
            .forward_hooked(&pair.positive, &PROMPT, &[hook])
            .unwrap()
            .logits[t];
        assert!((ablated - neg).abs() <= 1e-4, "{ablated} vs {neg}");
    }
}

#[test]
fn ablation_before_a_later_injection_changes_nothing() {
    let (bank, model) = setup(2.0, one_hot(4));
    let c = &bank.concepts()[0];
    let prefix = with_signal(
        &make_substrate(SubstrateKind::Scene, D, P, 1.0, 7),
        &c.signal(),
    );
    let plain = model.forward_trace(&prefix, &PROMPT).unwrap();
    // vector extracted at layer 2 is zero because the concept arrives at layer 4
    let pairs = generate_pairs(c, 5, &design(), 0.0, 3).unwrap();
    let set = extract(&model, &pairs, &PROMPT).unwrap();
    let hook = SteeringHook::new(2, set.layer(2).unwrap().to_vec(), 1.0).reverse();
    let hooked = model.forward_hooked(&prefix, &PROMPT, &[hook]).unwrap();
    assert_eq!(plain, hooked);
}

#[test]
fn ablation_strength_lowers_mention_monotonically() {
    let mut cfg = ExperimentConfig::with_seed(5);
    cfg.data.eval_samples = 100;
    let exp = Experiment::new(cfg).unwrap();
    let c = &exp.concepts()[0];
    let pairs = exp.generate_pairs(0).unwrap();
    let v = extract(&exp.base_model, &pairs, &exp.prompt)
        .unwrap()
        .layer(1)
        .unwrap()
        .to_vec();
    let positives = exp.positive_inputs(c);
    let opts = exp.steer_options();
    let rate = |alpha: f32| {
        let outs: Vec<Vec<u32>> = positives
            .iter()
            .map(|i| {
                let hook = SteeringHook::new(1, v.clone(), alpha).reverse();
                steer_generate(&exp.base_model, &i.prefix, &i.prompt, &hook, opts.max_len)
                    .unwrap()
                    .steered
                    .token_ids
            })
            .collect();
        mention_rate(&outs, &[c.target_token]).unwrap()
    };
    let rates: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&a| rate(a))
        .collect();
    assert_eq!(rates[0], 1.0);
    assert_eq!(rates[4], 0.0);
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
}

#[test]
fn layer_sweep_shape_ties_and_zero_alpha() {
    let k = 3;
    let (bank, model) = setup(2.0, one_hot(k));
    let c = &bank.concepts()[0];
    let pairs = generate_pairs(c, 8, &design(), 0.0, 4).unwrap();
    let set = extract(&model, &pairs, &PROMPT).unwrap();
    let target = SteeringTarget::single(c.id.clone(), c.target_token);
    let layers: Vec<usize> = (1..=L).collect();
    let ins = inputs(10);
    let opts = SteerOptions::default();
    let sweep = layer_sweep(
        &model,
        &ins,
        &set,
        &layers,
        1.0,
        Sign::Forward,
        &target,
        &opts,
    )
    .unwrap();
    assert_eq!(sweep.rows.len(), L);
    // layers >= k carry the same vector, so their boosts tie and the lowest wins
    assert_eq!(sweep.peaks.logit_boost, k);
    for r in &sweep.rows[k - 1..] {
        assert_eq!(r.mean_delta_logit, sweep.rows[k - 1].mean_delta_logit);
    }
    assert!(sweep.rows[..k - 1]
        .iter()
        .all(|r| r.record.logit_boost == 1.0));
    assert_eq!(sweep.rows[k - 1].record.success_rate, 1.0);

    let zero = layer_sweep(
        &model,
        &ins,
        &set,
        &layers,
        0.0,
        Sign::Forward,
        &target,
        &opts,
    )
    .unwrap();
    assert!(zero.rows.iter().all(|r| r.record.logit_boost == 1.0));

    // gains that fall after k: the increments peak at k
    let decaying = model
        .with_reinjection_gains(vec![0.0, 0.0, 1.0, 0.3, 0.1, 0.05])
        .unwrap();
    let set = extract(&decaying, &pairs, &PROMPT).unwrap();
    let sweep = layer_sweep(
        &decaying,
        &ins,
        &set,
        &layers,
        1.0,
        Sign::Forward,
        &target,
        &opts,
    )
    .unwrap();
    let deltas: Vec<f64> = sweep.rows.iter().map(|r| r.mean_delta_logit).collect();
    let incs = steerlab_core::metrics::LayerEffectProfile::from_log_boosts(&deltas);
    let argmax =
        incs.effects()
            .iter()
            .enumerate()
            .fold(0, |b, (i, &e)| if e > incs.effects()[b] { i } else { b });
    assert_eq!(argmax + 1, k);
}

#[test]
fn alpha_sweep_is_exponential_and_degenerates() {
    let (bank, model) = setup(1.0, one_hot(1));
    let c = &bank.concepts()[0];
    let target = SteeringTarget::single(c.id.clone(), c.target_token);
    let ins = inputs(20);
    let opts = SteerOptions::default();
    let sweep = alpha_sweep(
        &model,
        &ins,
        &c.direction,
        2,
        &[0.0, 0.5, 1.0, 2.0],
        Sign::Forward,
        &target,
        &opts,
    )
    .unwrap();
    let boost = |i: usize| sweep.rows[i].record.logit_boost;
    assert_eq!(boost(0), 1.0);
    assert_relative_eq!(boost(2), boost(1).powi(2), max_relative = 1e-4);
    assert_relative_eq!(boost(3), boost(2).powi(2), max_relative = 1e-4);
    assert_relative_eq!(sweep.rows[0].baseline_similarity, 1.0, max_relative = 1e-9);

    let star =
        degeneration_threshold(&model, &ins, &c.direction, 2, c.target_token, &opts).unwrap();
    let big = (star * 1.01) as f32;
    let sweep = alpha_sweep(
        &model,
        &ins,
        &c.direction,
        2,
        &[big, 10.0 * big],
        Sign::Forward,
        &target,
        &opts,
    )
    .unwrap();
    for r in &sweep.rows {
        assert_eq!(r.record.success_rate, 1.0);
        assert!(r.baseline_similarity < 0.2, "{}", r.baseline_similarity);
    }
}

#[test]
fn similarity_examples() {
    let (bank, model) = setup(1.0, one_hot(1));
    let t = bank.concepts()[0].target_token;
    let other = bank.concepts()[1].target_token;
    assert_relative_eq!(
        semantic_similarity(&[t], t, &model).unwrap().score,
        1.0,
        max_relative = 1e-9
    );
    assert_relative_eq!(
        semantic_similarity(&[t; 5], t, &model).unwrap().score,
        1.0,
        max_relative = 1e-9
    );
    assert!(
        semantic_similarity(&[other], t, &model)
            .unwrap()
            .score
            .abs()
            <= 1e-6
    );
    // non-concept rows live in the orthogonal complement of the concept span
    assert!(
        semantic_similarity(&[40, 41], t, &model)
            .unwrap()
            .score
            .abs()
            <= 1e-6
    );
}

#[test]
fn token_groups_split_aligned_and_orthogonal() {
    let (bank, model) = setup(1.0, one_hot(1));
    let c = &bank.concepts()[0];
    let ins = inputs(5);
    let hook = SteeringHook::new(2, c.direction.clone(), 1.5);
    let base: Vec<Vec<f32>> = ins
        .iter()
        .map(|i| model.forward_trace(&i.prefix, &i.prompt).unwrap().logits)
        .collect();
    let steered: Vec<Vec<f32>> = ins
        .iter()
        .map(|i| {
            model
                .forward_hooked(&i.prefix, &i.prompt, std::slice::from_ref(&hook))
                .unwrap()
                .logits
        })
        .collect();
    let groups = vec![
        ("aligned".to_string(), vec![c.target_token]),
        (
            "orthogonal".to_string(),
            vec![bank.concepts()[1].target_token, 30, 31],
        ),
    ];
    let out = token_group_boost(&base, &steered, &groups).unwrap();
    let single = logit_boost(&base, &steered, &[c.target_token]).unwrap();
    assert_eq!(out[0].1, single);
    assert!(out[0].1.boost > 1.0);
    assert_relative_eq!(out[1].1.boost, 1.0, max_relative = 1e-6);
}

#[test]
fn faithfulness_at_injection_and_for_orthogonal_vectors() {
    let (bank, model) = setup(1.0, one_hot(2));
    let c = &bank.concepts()[0];
    let pairs = generate_pairs(c, 20, &design(), 0.0, 8).unwrap();
    let set = extract(&model, &pairs, &PROMPT).unwrap();
    let rec = faithfulness(
        &model,
        &pairs,
        set.layer(2).unwrap(),
        2,
        1.0,
        c.target_token,
        &PROMPT,
    )
    .unwrap();
    assert_relative_eq!(rec.rho.unwrap(), 1.0, epsilon = 1e-4);
    let ortho = bank.concepts()[1].direction.clone();
    let rec = faithfulness(&model, &pairs, &ortho, 2, 1.0, c.target_token, &PROMPT).unwrap();
    assert!(rec.nie.abs() <= 1e-5 && rec.rho.unwrap().abs() <= 1e-6);
}

fn unit_sets(
    bank: &ConceptBank,
    model: &Model,
    layer_vectors: &[Vec<f32>],
) -> Vec<ConceptVectorSet> {
    bank.concepts()
        .iter()
        .zip(layer_vectors)
        .map(|(c, v)| {
            ConceptVectorSet::new(c.id.clone(), 1, vec![v.clone(); L], model.fingerprint()).unwrap()
        })
        .collect()
}

#[test]
fn confusion_on_orthonormal_bank() {
    let (bank, model) = setup(1.0, one_hot(1));
    let dirs: Vec<Vec<f32>> = bank
        .concepts()
        .iter()
        .map(|c| c.direction.clone())
        .collect();
    let sets = unit_sets(&bank, &model, &dirs);
    let targets: Vec<u32> = bank.concepts().iter().map(|c| c.target_token).collect();
    let ins: Vec<(VisualPrefix, Vec<u32>)> = inputs(5)
        .into_iter()
        .map(|i| (i.prefix, i.prompt))
        .collect();
    let m = confusion_matrix(&model, &targets, &sets, &ins, L, 1.0).unwrap();
    assert_eq!(m.len(), 3);
    for (i, row) in m.iter().enumerate() {
        assert_eq!(row.len(), 3);
        for (j, &x) in row.iter().enumerate() {
            assert!(x > 0.0);
            if i == j {
                // unit-norm vectors: the diagonal is e, so the dominance ratio
                // is only e at unit norm
                assert_relative_eq!(x, std::f64::consts::E, max_relative = 1e-5);
            } else {
                assert_relative_eq!(x, 1.0, epsilon = 1e-4);
            }
        }
    }
}

#[test]
fn confusion_with_correlated_directions() {
    let e = |i: usize| {
        let mut v = vec![0.0f32; D];
        v[i] = 1.0;
        v
    };
    let half = {
        let mut v = vec![0.0f32; D];
        v[0] = 0.5;
        v[1] = 0.75f32.sqrt();
        v
    };
    let spec = |id: &str, token: u32, direction: Vec<f32>| ConceptSpec {
        id: id.into(),
        target_token: token,
        direction,
        localization: Localization::default(),
        category: Category::Entity,
        norm: 1.0,
    };
    let bank =
        ConceptBank::from_specs(vec![spec("a", 2, e(0)), spec("b", 3, half)], false).unwrap();
    let model = Model::build(ModelConfig::linear(L, D, V, P, 2), &bank).unwrap();
    let dirs: Vec<Vec<f32>> = bank
        .concepts()
        .iter()
        .map(|c| c.direction.clone())
        .collect();
    let sets = unit_sets(&bank, &model, &dirs);
    let ins: Vec<(VisualPrefix, Vec<u32>)> = inputs(3)
        .into_iter()
        .map(|i| (i.prefix, i.prompt))
        .collect();
    let m = confusion_matrix(&model, &[2, 3], &sets, &ins, 3, 1.0).unwrap();
    assert_relative_eq!(m[0][1], 0.5f64.exp(), max_relative = 1e-5);
    assert_relative_eq!(m[1][0], 0.5f64.exp(), max_relative = 1e-5);
}

#[test]
fn nonlinear_model_hooks_stay_local() {
    let bank = make_concept_bank(2, D, true, 4).unwrap();
    let mut cfg = ModelConfig::linear(L, D, V, P, 4);
    cfg.layer_gain = 0.5;
    cfg.nonlinearity_strength = 1.0;
    cfg.n_heads = 4;
    let model = Model::build(cfg, &bank).unwrap();
    let prefix = make_substrate(SubstrateKind::Noise, D, P, 1.0, 1);
    let plain = model.forward_trace(&prefix, &PROMPT).unwrap();
    let hooked = model
        .forward_hooked(
            &prefix,
            &PROMPT,
            &[SteeringHook::new(
                4,
                bank.concepts()[0].direction.clone(),
                3.0,
            )],
        )
        .unwrap();
    for l in 1..4 {
        assert_eq!(plain.layer(l), hooked.layer(l));
    }
    assert_ne!(plain.layer(4), hooked.layer(4));
    assert_ne!(plain.logits, hooked.logits);
}
