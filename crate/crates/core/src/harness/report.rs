// SPDX-License-Identifier: MIT OR Apache-2.0

//! Report bundle: plot-ready CSV tables, a JSON summary and a run manifest.
//!
//! Every CSV has a fixed header; float columns use shortest round-trip
//! formatting, so identical runs give byte-identical bodies. Only the
//! manifest carries a timestamp.
//!
//! | file                   | header |
//! |------------------------|--------|
//! | `metrics.csv`          | `concept,layer,alpha,sign,metric,value,n` |
//! | `gini.csv`             | `concept,category,metric,peak,peak_layer,gini` |
//! | `categories.csv`       | `category,metric,peak,gini,concepts` |
//! | `peaks.csv`            | `label,category,layer,count,samples` |
//! | `reverse.csv`          | `preset,concept,layer,alpha,sign,metric,value,n` |
//! | `alpha.csv`            | `concept,layer,alpha,sign,metric,value,n` |
//! | `confusion.csv`        | `injected,target,layer,alpha,boost` |
//! | `faithfulness.csv`     | `concept,layer,alpha,te,nie,rho,planted,complete,control` |
//! | `optimality.csv`       | `problem,sigma,delta_norm,ensemble,aligned,min_alignment,delta_worst_case,best_random_worst_case,random_beaten,random_directions,adversarial_beaten` |

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Result, SteerError};
use crate::harness::config::ExperimentConfig;
use crate::optimality::OptimalityReport;

/// One `(concept, layer, alpha, sign, metric)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub concept: String,
    pub layer: usize,
    pub alpha: f32,
    pub sign: i8,
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GiniRow {
    pub concept: String,
    pub category: String,
    pub metric: String,
    /// Best value over layers.
    pub peak: f64,
    pub peak_layer: usize,
    pub gini: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRow {
    pub category: String,
    pub metric: String,
    /// Means over the category's concepts.
    pub peak: f64,
    pub gini: f64,
    pub concepts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakHistogram {
    pub label: String,
    pub category: String,
    /// `counts[l - 1]` samples peaked at layer `l`.
    pub counts: Vec<usize>,
    pub samples: usize,
}

impl PeakHistogram {
    /// Fraction of samples peaking at `layer` (1-indexed).
    pub fn mass_at(&self, layer: usize) -> f64 {
        self.counts
            .get(layer.wrapping_sub(1))
            .map_or(0.0, |&c| c as f64 / self.samples as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReverseRow {
    pub preset: String,
    pub concept: String,
    pub layer: usize,
    pub alpha: f32,
    pub sign: i8,
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReverseSummary {
    pub concept: String,
    pub injection_layer: usize,
    pub alpha: f32,
    /// Single-injection preset: mention rate without and with ablation at
    /// the injection layer.
    pub single_base_mention: f64,
    pub single_ablated_mention: f64,
    /// Persistent preset: final target logit after layer-1 ablation over the
    /// unablated value.
    pub persistent_retained: f64,
    /// `(L - 1) / L`.
    pub persistent_expected: f64,
    pub rows: Vec<ReverseRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSummary {
    pub concept: String,
    pub layer: usize,
    /// Coefficient past which every output collapses onto the target token.
    pub threshold: f64,
    /// Coefficient evaluated just past the threshold.
    pub degeneration_alpha: f32,
    /// Largest relative deviation of log-boost from a line through the origin.
    pub log_boost_linearity_error: f64,
    pub success_at_degeneration: f64,
    pub baseline_similarity_at_degeneration: f64,
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionRow {
    pub injected: String,
    pub target: String,
    pub layer: usize,
    pub alpha: f32,
    pub boost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionSummary {
    pub concepts: Vec<String>,
    pub layer: usize,
    pub alpha: f32,
    pub matrix: Vec<Vec<f64>>,
    pub min_diagonal: f64,
    pub max_off_diagonal: f64,
    pub dominance: f64,
}

impl ConfusionSummary {
    pub fn rows(&self) -> Vec<ConfusionRow> {
        let mut out = Vec::new();
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, &boost) in row.iter().enumerate() {
                out.push(ConfusionRow {
                    injected: self.concepts[i].clone(),
                    target: self.concepts[j].clone(),
                    layer: self.layer,
                    alpha: self.alpha,
                    boost,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaithfulnessRow {
    pub concept: String,
    pub layer: usize,
    pub alpha: f32,
    pub te: f64,
    pub nie: f64,
    pub rho: Option<f64>,
    /// The concept has planted mass at this layer.
    pub planted: bool,
    /// All of the concept's planted mass lies at or below this layer.
    pub complete: bool,
    /// Row uses a control vector orthogonal to the concept direction.
    pub control: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct OptimalityRow {
    problem: usize,
    sigma: f64,
    delta_norm: f64,
    ensemble: usize,
    aligned: usize,
    min_alignment: f64,
    delta_worst_case: f64,
    best_random_worst_case: f64,
    random_beaten: usize,
    random_directions: usize,
    adversarial_beaten: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the canonical TOML rendering of the config.
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub sections: Vec<String>,
    pub files: Vec<String>,
    pub created_unix: u64,
}

/// Everything a run produced; sections are filled by the pipelines that ran.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReportBundle {
    pub metrics: Vec<MetricRow>,
    pub gini: Vec<GiniRow>,
    pub categories: Vec<CategoryRow>,
    pub peaks: Vec<PeakHistogram>,
    pub reverse: Option<ReverseSummary>,
    pub alpha: Option<AlphaSummary>,
    pub confusion: Option<ConfusionSummary>,
    pub faithfulness: Vec<FaithfulnessRow>,
    pub optimality: Option<OptimalityReport>,
}

impl ReportBundle {
    /// Take over every section `other` filled.
    pub fn merge(&mut self, other: ReportBundle) {
        self.metrics.extend(other.metrics);
        self.gini.extend(other.gini);
        self.categories.extend(other.categories);
        self.peaks.extend(other.peaks);
        self.faithfulness.extend(other.faithfulness);
        self.reverse = other.reverse.or(self.reverse.take());
        self.alpha = other.alpha.or(self.alpha.take());
        self.confusion = other.confusion.or(self.confusion.take());
        self.optimality = other.optimality.or(self.optimality.take());
    }

    pub fn sections(&self) -> Vec<&'static str> {
        let mut s = Vec::new();
        if !self.metrics.is_empty() {
            s.push("metrics");
        }
        if !self.gini.is_empty() {
            s.push("gini");
        }
        if !self.categories.is_empty() {
            s.push("categories");
        }
        if !self.peaks.is_empty() {
            s.push("peaks");
        }
        if self.reverse.is_some() {
            s.push("reverse");
        }
        if self.alpha.is_some() {
            s.push("alpha");
        }
        if self.confusion.is_some() {
            s.push("confusion");
        }
        if !self.faithfulness.is_empty() {
            s.push("faithfulness");
        }
        if self.optimality.is_some() {
            s.push("optimality");
        }
        s
    }

    /// CSV bodies keyed by file name, in a fixed order.
    pub fn csv_tables(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut out = Vec::new();
        if !self.metrics.is_empty() {
            out.push(("metrics.csv", to_csv(&self.metrics)?));
        }
        if !self.gini.is_empty() {
            out.push(("gini.csv", to_csv(&self.gini)?));
        }
        if !self.categories.is_empty() {
            out.push(("categories.csv", to_csv(&self.categories)?));
        }
        if !self.peaks.is_empty() {
            #[derive(Serialize)]
            struct Row<'a> {
                label: &'a str,
                category: &'a str,
                layer: usize,
                count: usize,
                samples: usize,
            }
            let rows: Vec<Row> = self
                .peaks
                .iter()
                .flat_map(|h| {
                    h.counts.iter().enumerate().map(move |(i, &count)| Row {
                        label: &h.label,
                        category: &h.category,
                        layer: i + 1,
                        count,
                        samples: h.samples,
                    })
                })
                .collect();
            out.push(("peaks.csv", to_csv(&rows)?));
        }
        if let Some(r) = &self.reverse {
            out.push(("reverse.csv", to_csv(&r.rows)?));
        }
        if let Some(a) = &self.alpha {
            out.push(("alpha.csv", to_csv(&a.rows)?));
        }
        if let Some(c) = &self.confusion {
            out.push(("confusion.csv", to_csv(&c.rows())?));
        }
        if !self.faithfulness.is_empty() {
            out.push(("faithfulness.csv", to_csv(&self.faithfulness)?));
        }
        if let Some(o) = &self.optimality {
            let rows: Vec<OptimalityRow> = o
                .problems
                .iter()
                .map(|p| OptimalityRow {
                    problem: p.index,
                    sigma: p.sigma,
                    delta_norm: p.delta_norm,
                    ensemble: p.ensemble,
                    aligned: p.aligned,
                    min_alignment: p.min_alignment,
                    delta_worst_case: p.delta_worst_case,
                    best_random_worst_case: p.best_random_worst_case,
                    random_beaten: p.random_beaten,
                    random_directions: p.random_directions,
                    adversarial_beaten: p.adversarial_beaten,
                })
                .collect();
            out.push(("optimality.csv", to_csv(&rows)?));
        }
        Ok(out)
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| SteerError::Input(format!("csv buffer: {e}")))
}

/// Hex SHA-256 of the config's canonical TOML rendering.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let text = config.to_toml_string()?;
    Ok(Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| SteerError::io(path, e))
}

/// Write every filled section, `summary.json` and `manifest.json` into `dir`.
/// Returns the paths written.
pub fn write_bundle(
    bundle: &ReportBundle,
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| SteerError::io(dir, e))?;
    let mut written = Vec::new();
    for (name, body) in bundle.csv_tables()? {
        let path = dir.join(name);
        write_file(&path, &body)?;
        written.push(path);
    }
    let summary = dir.join("summary.json");
    write_file(&summary, &serde_json::to_vec_pretty(bundle)?)?;
    written.push(summary);

    let manifest = Manifest {
        tool: "steerlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        config_sha256: config_hash(config)?,
        config: config.clone(),
        sections: bundle.sections().iter().map(|s| s.to_string()).collect(),
        files: written
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let manifest_path = dir.join("manifest.json");
    write_file(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
    written.push(manifest_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(layer: usize, value: f64) -> MetricRow {
        MetricRow {
            concept: "c0".into(),
            layer,
            alpha: 1.0,
            sign: 1,
            metric: "logit_boost".into(),
            value,
            n: 10,
        }
    }

    #[test]
    fn metrics_csv_has_fixed_header() {
        let bundle = ReportBundle {
            metrics: vec![row(1, 0.5), row(2, 1.0 / 3.0)],
            ..ReportBundle::default()
        };
        let tables = bundle.csv_tables().unwrap();
        let text = String::from_utf8(tables[0].1.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("concept,layer,alpha,sign,metric,value,n")
        );
        assert_eq!(lines.next(), Some("c0,1,1.0,1,logit_boost,0.5,10"));
        assert!(lines
            .next()
            .unwrap()
            .starts_with("c0,2,1.0,1,logit_boost,0.333"));
    }

    #[test]
    fn write_bundle_emits_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::with_seed(4);
        let bundle = ReportBundle {
            metrics: vec![row(1, 2.0)],
            ..ReportBundle::default()
        };
        let files = write_bundle(&bundle, &cfg, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 4);
        assert_eq!(manifest["config_sha256"], config_hash(&cfg).unwrap());
        assert_eq!(manifest["sections"][0], "metrics");
    }

    #[test]
    fn merge_keeps_both_sides() {
        let mut a = ReportBundle {
            metrics: vec![row(1, 1.0)],
            ..ReportBundle::default()
        };
        a.merge(ReportBundle {
            metrics: vec![row(2, 1.0)],
            ..ReportBundle::default()
        });
        assert_eq!(a.metrics.len(), 2);
        assert_eq!(a.sections(), vec!["metrics"]);
    }
}
