// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end pipeline behavior: shapes, composability through saved
//! artifacts, error surfacing and configuration parsing.

use std::fs;

use steerlab_core::concepts::{Category, Localization};
use steerlab_core::error::SteerError;
use steerlab_core::extraction::save_vectors;
use steerlab_core::harness::config::{ConceptEntry, MetricKind};
use steerlab_core::harness::pipelines::{
    run_alpha_analog, run_confusion_analog, run_faithfulness_suite, run_fig3_analog,
    run_table2_analog, vectors_path, VectorSource,
};
use steerlab_core::harness::{write_bundle, Experiment, ExperimentConfig, ReportBundle};

fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_seed(seed);
    cfg.model.d_model = 32;
    cfg.model.vocab_size = 96;
    cfg.data.pairs_per_concept = 20;
    cfg.data.eval_samples = 40;
    cfg.sweep.max_len = 4;
    cfg.peaks.samples = 60;
    cfg.concepts.entries = vec![
        ConceptEntry {
            id: Some("dog".into()),
            category: Category::Entity,
            localization: Localization::OneHot { layer: 4 },
            norm: None,
        },
        ConceptEntry {
            id: Some("calm".into()),
            category: Category::Abstract,
            localization: Localization::Uniform,
            norm: None,
        },
    ];
    cfg
}

fn csv(bundle: &ReportBundle) -> Vec<(&'static str, Vec<u8>)> {
    bundle.csv_tables().unwrap()
}

#[test]
fn table2_rows_and_localization_contrast() {
    let exp = Experiment::new(small_config(1)).unwrap();
    let (bundle, sets) = run_table2_analog(&exp, &VectorSource::Extract { save_to: None }).unwrap();
    assert_eq!(sets.len(), 2);
    let (concepts, layers, metrics) = (2, 8, exp.config.sweep.metrics.len());
    assert_eq!(bundle.metrics.len(), concepts * layers * metrics);
    for c in ["dog", "calm"] {
        for l in 1..=layers {
            for m in &exp.config.sweep.metrics {
                let n = bundle
                    .metrics
                    .iter()
                    .filter(|r| r.concept == c && r.layer == l && r.metric == m.as_str())
                    .count();
                assert_eq!(n, 1, "{c} layer {l} {}", m.as_str());
            }
        }
    }
    let success_at_4 = bundle
        .metrics
        .iter()
        .find(|r| {
            r.concept == "dog" && r.layer == 4 && r.metric == MetricKind::SuccessRate.as_str()
        })
        .unwrap();
    assert_eq!(success_at_4.value, 1.0);

    let boost_gini = |c: &str| {
        bundle
            .gini
            .iter()
            .find(|g| g.concept == c && g.metric == MetricKind::LogitBoost.as_str())
            .unwrap()
            .gini
    };
    assert!((boost_gini("dog") - 0.875).abs() < 1e-6);
    // increments come from f32 logits
    assert!(boost_gini("calm").abs() < 1e-6, "{}", boost_gini("calm"));
}

#[test]
fn saved_vectors_feed_every_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(small_config(2)).unwrap();
    let save = VectorSource::Extract {
        save_to: Some(dir.path().to_path_buf()),
    };
    let (_, sets) = run_table2_analog(&exp, &save).unwrap();
    for spec in exp.concepts() {
        assert!(vectors_path(dir.path(), &spec.id).exists());
    }
    let loaded = VectorSource::Load(dir.path().to_path_buf());
    let given = VectorSource::Given(sets);
    type Pipeline = fn(&Experiment, &VectorSource) -> steerlab_core::Result<ReportBundle>;
    let pipelines: [(&str, Pipeline); 3] = [
        ("alpha", run_alpha_analog),
        ("confusion", run_confusion_analog),
        ("faithfulness", run_faithfulness_suite),
    ];
    for (name, run) in pipelines {
        let a = run(&exp, &loaded).unwrap();
        let b = run(&exp, &given).unwrap();
        assert_eq!(csv(&a), csv(&b), "{name}");
    }
    let (t_loaded, _) = run_table2_analog(&exp, &loaded).unwrap();
    let (t_given, _) = run_table2_analog(&exp, &given).unwrap();
    assert_eq!(csv(&t_loaded), csv(&t_given));
}

#[test]
fn missing_or_mismatched_vectors_abort() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(small_config(3)).unwrap();
    let err =
        run_confusion_analog(&exp, &VectorSource::Load(dir.path().to_path_buf())).unwrap_err();
    assert!(err.to_string().contains("load-vectors"), "{err}");
    assert!(matches!(err.root(), SteerError::Io { .. }));
    assert!(
        !vectors_path(dir.path(), "dog").exists(),
        "nothing is regenerated"
    );

    // vectors from a wider model
    let mut wide = small_config(3);
    wide.model.d_model = 48;
    let other = Experiment::new(wide).unwrap();
    let (_, sets) = run_table2_analog(&other, &VectorSource::Extract { save_to: None }).unwrap();
    for set in &sets {
        save_vectors(set, &vectors_path(dir.path(), &set.concept_id)).unwrap();
    }
    let err =
        run_faithfulness_suite(&exp, &VectorSource::Load(dir.path().to_path_buf())).unwrap_err();
    assert!(err.to_string().contains("load-vectors"), "{err}");
    assert!(run_alpha_analog(&exp, &VectorSource::Given(sets)).is_err());

    let err = exp.load_all_pairs(dir.path()).unwrap_err();
    assert!(err.to_string().contains("load-data"), "{err}");
}

#[test]
fn pair_files_reload_into_identical_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(small_config(4)).unwrap();
    let generated = exp.generate_all_pairs(Some(dir.path())).unwrap();
    let loaded = exp.load_all_pairs(dir.path()).unwrap();
    assert_eq!(generated, loaded);
    assert_eq!(
        exp.extract_all(&generated, None).unwrap(),
        exp.extract_all(&loaded, None).unwrap()
    );
}

#[test]
fn histograms_count_every_sample() {
    let exp = Experiment::new(small_config(5)).unwrap();
    let bundle = run_fig3_analog(&exp).unwrap();
    assert_eq!(bundle.peaks.len(), 3);
    for h in &bundle.peaks {
        assert_eq!(h.counts.len(), 8);
        assert_eq!(h.counts.iter().sum::<usize>(), h.samples);
    }
    let dog = bundle.peaks.iter().find(|h| h.label == "dog").unwrap();
    assert_eq!(dog.mass_at(4), 1.0);
}

#[test]
fn bundles_are_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let exp = Experiment::new(small_config(6)).unwrap();
        let (mut bundle, _) =
            run_table2_analog(&exp, &VectorSource::Extract { save_to: None }).unwrap();
        bundle.merge(run_confusion_analog(&exp, &VectorSource::Extract { save_to: None }).unwrap());
        write_bundle(&bundle, &exp.config, dir.path()).unwrap();
    }
    let mut compared = 0;
    for entry in fs::read_dir(a.path()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_owned();
        if path.extension().is_some_and(|e| e == "csv") || name == "summary.json" {
            assert_eq!(
                fs::read(&path).unwrap(),
                fs::read(b.path().join(&name)).unwrap(),
                "{name:?}"
            );
            compared += 1;
        }
    }
    assert!(compared >= 4);
    assert!(a.path().join("manifest.json").exists());
}

#[test]
fn config_files_are_strict() {
    let cfg = small_config(7);
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);

    let typo = text.replace("pairs_per_concept", "pairs_per_concpet");
    assert!(ExperimentConfig::from_toml_str(&typo)
        .unwrap_err()
        .is_config());
    assert!(ExperimentConfig::from_toml_str("[model]\nn_layers = 8\n")
        .unwrap_err()
        .is_config());
    let minimal = ExperimentConfig::from_toml_str("seed = 3\n").unwrap();
    assert_eq!(minimal, ExperimentConfig::with_seed(3));

    let mut bad = ExperimentConfig::with_seed(1);
    bad.data.pairs_per_concept = 0;
    assert!(Experiment::new(bad).unwrap_err().is_config());

    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        ExperimentConfig::load(&dir.path().join("none.toml"))
            .unwrap_err()
            .root(),
        SteerError::Io { .. }
    ));
}
