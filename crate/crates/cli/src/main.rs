// SPDX-License-Identifier: MIT OR Apache-2.0

//! `steerlab` — command-line front end for the steering experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or shape error,
//! 4 failed optimality certification, 1 anything else.

use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use steerlab_core::harness::pipelines::{
    run_all, run_alpha_analog, run_confusion_analog, run_faithfulness_suite, run_fig3_analog,
    run_optimality, run_reverse_analog, run_table2_analog, vectors_path, VectorSource,
};
use steerlab_core::harness::{write_bundle, Experiment, ExperimentConfig, ReportBundle};
use steerlab_core::steering::{steer_generate, SteeringHook};
use steerlab_core::SteerError;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;

/// Required maximin win fraction for `verify-optimality`.
const MAXIMIN_BAR: f64 = 0.95;

#[derive(Parser, Debug)]
#[command(
    name = "steerlab",
    version,
    about = "Concept-vector steering experiments on a toy transformer"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML). Without it, `--seed` is required.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed, for the experiments and the optimality suite.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Inclusive layer range `a..b` (or a single layer) for sweeps and `steer`.
    #[arg(long, global = true, value_parser = parse_layers)]
    layers: Option<RangeInclusive<usize>>,
    /// Comma-separated steering coefficients. The list drives the alpha sweep
    /// and faithfulness; its first entry is the coefficient for layer sweeps,
    /// reverse steering and confusion.
    #[arg(long, global = true, value_parser = parse_alphas)]
    alpha: Option<AlphaList>,
}

/// Parsed `--alpha` value.
#[derive(Debug, Clone)]
struct AlphaList(Vec<f32>);

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate paired samples into `<out>/data/<concept>.pairs`.
    GenData,
    /// Extract concept vectors into `<out>/vectors/<concept>.cvec`.
    Extract {
        /// Read pairs from this directory instead of generating them.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Steer one evaluation input and print base and steered generations.
    Steer {
        /// Concept id; defaults to the first concept.
        #[arg(long)]
        concept: Option<String>,
        /// Evaluation input index.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Subtract the vector from a concept-bearing input instead.
        #[arg(long)]
        reverse: bool,
        #[command(flatten)]
        vectors: VectorArgs,
    },
    /// Layer sweep (peak and Gini per concept and metric) plus the alpha sweep.
    Sweep {
        #[command(flatten)]
        vectors: VectorArgs,
    },
    /// Ablation curves for the single-injection and persistent presets.
    Reverse,
    /// TE / NIE / rho per concept, layer and alpha.
    Faithfulness {
        #[command(flatten)]
        vectors: VectorArgs,
    },
    /// Cross-concept boost matrix.
    Confusion {
        #[command(flatten)]
        vectors: VectorArgs,
    },
    /// Alignment and maximin certification of the difference of class means.
    VerifyOptimality,
    /// Every experiment, written as one report bundle.
    Report,
}

#[derive(Args, Debug)]
struct VectorArgs {
    /// Load concept vectors from this directory instead of extracting them.
    #[arg(long)]
    vectors: Option<PathBuf>,
}

impl VectorArgs {
    fn source(&self, save_to: Option<PathBuf>) -> VectorSource {
        match &self.vectors {
            Some(dir) => VectorSource::Load(dir.clone()),
            None => VectorSource::Extract { save_to },
        }
    }
}

fn parse_layers(s: &str) -> Result<RangeInclusive<usize>, String> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad layer `{t}`: {e}"))
    };
    let range = match s.split_once("..") {
        Some((a, b)) => parse(a)?..=parse(b.trim_start_matches('='))?,
        None => {
            let l = parse(s)?;
            l..=l
        }
    };
    if range.is_empty() || *range.start() == 0 {
        return Err(format!(
            "layer range `{s}` must be non-empty and start at 1 or later"
        ));
    }
    Ok(range)
}

fn parse_alphas(s: &str) -> Result<AlphaList, String> {
    let alphas = s
        .split(',')
        .map(|t| {
            let a: f32 = t
                .trim()
                .parse()
                .map_err(|e| format!("bad alpha `{t}`: {e}"))?;
            if a.is_finite() && a >= 0.0 {
                Ok(a)
            } else {
                Err(format!("alpha `{t}` must be finite and >= 0"))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    if alphas.is_empty() {
        return Err("alpha list is empty".into());
    }
    Ok(AlphaList(alphas))
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&common.config, common.seed) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(seed)) => ExperimentConfig::with_seed(seed),
        (None, None) => {
            return Err(SteerError::Config(
                "pass --config or --seed; runs never draw an implicit seed".into(),
            )
            .into())
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.optimality.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(range) = &common.layers {
        cfg.sweep.layers = Some(range.clone().collect());
    }
    if let Some(AlphaList(alphas)) = &common.alpha {
        cfg.sweep.alphas = alphas.clone();
        cfg.sweep.alpha = alphas[0];
        cfg.reverse.alpha = alphas[0];
        cfg.confusion.alpha = alphas[0];
        cfg.faithfulness.alphas = alphas.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(bundle: &ReportBundle, exp: &Experiment) -> anyhow::Result<()> {
    let files = write_bundle(bundle, &exp.config, &exp.config.out_dir)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn steer(
    exp: &Experiment,
    concept: Option<&str>,
    sample: usize,
    reverse: bool,
    source: &VectorSource,
) -> anyhow::Result<()> {
    let index = match concept {
        Some(id) => exp.concept_index(id)?,
        None => 0,
    };
    let spec = &exp.concepts()[index];
    let inputs = if reverse {
        exp.positive_inputs(spec)
    } else {
        exp.eval_inputs()
    };
    let Some(input) = inputs.get(sample) else {
        return Err(SteerError::Config(format!(
            "sample {sample} out of range (eval_samples = {})",
            inputs.len()
        ))
        .into());
    };
    let vectors = exp.vectors(source)?;
    let set = &vectors[index];
    let model = exp.concept_model(spec)?;
    let alphas = &exp.config.sweep.alphas;
    println!(
        "concept {} (target token {}), sample {sample}",
        spec.id, spec.target_token
    );
    for layer in exp.config.sweep_layers() {
        for &alpha in alphas {
            let mut hook = SteeringHook::new(layer, set.layer(layer)?.to_vec(), alpha);
            if reverse {
                hook = hook.reverse();
            }
            let out = steer_generate(
                &model,
                &input.prefix,
                &input.prompt,
                &hook,
                exp.config.sweep.max_len,
            )?;
            let t = spec.target_token as usize;
            let delta = out.steered_logits()[t] - out.base_logits()[t];
            println!(
                "layer {layer} alpha {alpha}: base {:?} -> steered {:?} (target delta logit {delta:.4})",
                out.base.token_ids, out.steered.token_ids
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli.common)?;
    let out = cfg.out_dir.clone();
    let exp = Experiment::new(cfg)?;
    info!("seed {}, output {}", exp.config.seed, out.display());
    match &cli.command {
        Command::GenData => {
            let dir = out.join("data");
            exp.generate_all_pairs(Some(&dir))?;
            println!(
                "wrote {} pair files to {}",
                exp.concepts().len(),
                dir.display()
            );
        }
        Command::Extract { data } => {
            let pairs = match data {
                Some(dir) => exp.load_all_pairs(dir)?,
                None => exp.generate_all_pairs(None)?,
            };
            let dir = out.join("vectors");
            exp.extract_all(&pairs, Some(&dir))?;
            for spec in exp.concepts() {
                println!("wrote {}", vectors_path(&dir, &spec.id).display());
            }
        }
        Command::Steer {
            concept,
            sample,
            reverse,
            vectors,
        } => steer(
            &exp,
            concept.as_deref(),
            *sample,
            *reverse,
            &vectors.source(None),
        )?,
        Command::Sweep { vectors } => {
            let (mut bundle, sets) =
                run_table2_analog(&exp, &vectors.source(Some(out.join("vectors"))))?;
            bundle.merge(run_alpha_analog(&exp, &VectorSource::Given(sets))?);
            bundle.merge(run_fig3_analog(&exp)?);
            write(&bundle, &exp)?;
        }
        Command::Reverse => write(&run_reverse_analog(&exp)?, &exp)?,
        Command::Faithfulness { vectors } => {
            write(&run_faithfulness_suite(&exp, &vectors.source(None))?, &exp)?
        }
        Command::Confusion { vectors } => {
            if exp.concepts().len() < 2 {
                bail!(SteerError::Config(
                    "confusion needs at least two concepts".into()
                ));
            }
            write(&run_confusion_analog(&exp, &vectors.source(None))?, &exp)?;
        }
        Command::VerifyOptimality => {
            let bundle = run_optimality(&exp)?;
            write(&bundle, &exp)?;
            let report = bundle
                .optimality
                .as_ref()
                .context("optimality report missing")?;
            println!(
                "alignment pass fraction {:.4} over {} admissible probes",
                report.alignment_pass_fraction, report.total_admissible
            );
            println!(
                "maximin win fraction {:.4} (>= {MAXIMIN_BAR}), adversarial win fraction {:.4}",
                report.maximin_win_fraction, report.adversarial_win_fraction
            );
            for note in &report.notes {
                println!("note: {note}");
            }
            let pass = report.total_admissible > 0
                && report.alignment_pass_fraction == 1.0
                && report.maximin_win_fraction >= MAXIMIN_BAR
                && report.adversarial_win_fraction == 1.0;
            if !pass {
                eprintln!("optimality certification failed");
                return Ok(ExitCode::from(EXIT_ACCEPTANCE));
            }
            println!("optimality certification passed");
        }
        Command::Report => write(&run_all(&exp, Some(&out.join("vectors")))?, &exp)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SteerError>().map(SteerError::root) {
        Some(e) if e.is_config() => EXIT_CONFIG,
        Some(_) => EXIT_DATA,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn layer_ranges() {
        assert_eq!(parse_layers("2..5").unwrap(), 2..=5);
        assert_eq!(parse_layers("2..=5").unwrap(), 2..=5);
        assert_eq!(parse_layers("4").unwrap(), 4..=4);
        assert!(parse_layers("0..3").is_err());
        assert!(parse_layers("5..2").is_err());
        assert!(parse_layers("a..b").is_err());
    }

    #[test]
    fn alpha_lists() {
        assert_eq!(parse_alphas("0.5, 1,2").unwrap().0, vec![0.5, 1.0, 2.0]);
        assert!(parse_alphas("1,-1").is_err());
        assert!(parse_alphas("x").is_err());
    }

    #[test]
    fn stage_wrapped_config_errors_map_to_config_code() {
        let err: anyhow::Error = SteerError::Config("x".into()).in_stage("table2").into();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        let err: anyhow::Error = SteerError::Shape {
            path: Path::new("f").into(),
            reason: "short".into(),
        }
        .into();
        assert_eq!(exit_code(&err), EXIT_DATA);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }
}
