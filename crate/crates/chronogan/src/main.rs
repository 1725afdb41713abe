//! Command-line entry points: train, generate, evaluate, project.
//!
//! Exit codes: 0 on success, 2 for usage/config/format problems, 3 when
//! training diverges (the message names the last healthy epoch).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chronogan::config::parse_run_config;
use chronogan::data::{export_sequences_csv, import_sequences_csv, load_checkpoint, save_checkpoint};
use chronogan::error::{Error, Result};
use chronogan::eval::{
    discriminative_score, moment_gap, pca_project, predictive_score, replicate, render_reports,
    tsne_project, write_projection_csv, EvalConfig,
};
use chronogan::seed::derive_seed;
use chronogan::train::{generate, trace_csv, Trainer};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "chronogan",
    version,
    about = "Time-series generation with a five-network recurrent GAN"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the configured data; writes checkpoints, logs and the best
    /// synthetic batch into the output directory
    Train {
        /// JSON run configuration
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample sequences from a trained checkpoint into a sequence CSV
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of sequences to sample
        #[arg(long)]
        num: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a synthetic set against a real one, replicated over seeds
    Evaluate {
        /// Real sequences (sequence CSV)
        #[arg(long)]
        real: PathBuf,
        /// Synthetic sequences (sequence CSV)
        #[arg(long)]
        synthetic: PathBuf,
        /// Independent scoring runs folded into mean ± std
        #[arg(long, default_value_t = 8)]
        replications: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output report file
        #[arg(long)]
        out: PathBuf,
    },
    /// Project both sets to two dimensions for plotting
    Project {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Pca,
    Tsne,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Train { config, out } => cmd_train(&config, &out),
        Cmd::Generate {
            checkpoint,
            num,
            seed,
            out,
        } => cmd_generate(&checkpoint, num, seed, &out),
        Cmd::Evaluate {
            real,
            synthetic,
            replications,
            seed,
            out,
        } => cmd_evaluate(&real, &synthetic, replications, seed, &out),
        Cmd::Project {
            real,
            synthetic,
            method,
            seed,
            out,
        } => cmd_project(&real, &synthetic, method, seed, &out),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::TrainingDiverged { .. } => 3,
                _ => 2,
            };
            std::process::exit(code);
        }
    }
}

fn cmd_train(config: &Path, out: &Path) -> Result<()> {
    let cfg_text = std::fs::read_to_string(config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", config.display())))?;
    let rc = parse_run_config(&cfg_text)?;
    let data = rc.load_data()?;
    let tc = rc.train_config()?;
    std::fs::create_dir_all(out)?;
    let mut trainer = Trainer::new(data, tc)?;
    trainer.quiet = false;
    let outcome = trainer.run();

    // the trace and check history describe whatever happened, success or not
    std::fs::write(out.join("train_log.csv"), trace_csv(&trainer.trace))?;
    std::fs::write(out.join("early_gen_history.csv"), trainer.egs.history_csv())?;

    if let Err(e) = outcome {
        if let Some(lh) = trainer.last_healthy() {
            save_checkpoint(
                &lh.bundle,
                &trainer.egs.summary(),
                Some(&cfg_text),
                out.join("checkpoint_latest.cgn"),
            )?;
            eprintln!(
                "last healthy state: phase {} epoch {}, saved to {}",
                lh.phase,
                lh.epoch,
                out.join("checkpoint_latest.cgn").display()
            );
        }
        return Err(e);
    }

    save_checkpoint(
        &trainer.bundle,
        &trainer.egs.summary(),
        Some(&cfg_text),
        out.join("checkpoint_latest.cgn"),
    )?;
    let best_bundle = trainer.egs.best_checkpoint.as_ref().unwrap_or(&trainer.bundle);
    save_checkpoint(
        best_bundle,
        &trainer.egs.summary(),
        Some(&cfg_text),
        out.join("checkpoint_best.cgn"),
    )?;
    let best_synth = match &trainer.egs.best_synthetic {
        Some(b) => b.clone(),
        // no scheduled checks: sample from the final model instead
        None => generate(
            &trainer.bundle,
            trainer.train_len().min(512),
            rc.data.t,
            derive_seed(trainer.config().seed, "synthetic-best"),
        )?,
    };
    export_sequences_csv(&best_synth, out.join("synthetic_best.csv"))?;
    Ok(())
}

fn cmd_generate(checkpoint: &Path, num: usize, seed: u64, out: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    if num == 0 {
        // an empty batch is just the header
        let f = ck.bundle.dims.feature_dim;
        let mut header = String::from("sample_id,timestep");
        for i in 0..f {
            write!(header, ",f{i}").expect("writing to a String cannot fail");
        }
        header.push('\n');
        std::fs::write(out, header)?;
        return Ok(());
    }
    let t_len = sequence_length_for(&ck.config_json);
    let batch = generate(&ck.bundle, num, t_len, seed)?;
    export_sequences_csv(&batch, out)
}

/// Sequence length comes from the config echoed into the checkpoint;
/// checkpoints written outside the training command fall back to the
/// reference length.
fn sequence_length_for(config_json: &Option<String>) -> usize {
    config_json
        .as_deref()
        .and_then(|text| parse_run_config(text).ok())
        .map(|rc| rc.data.t)
        .unwrap_or(24)
}

fn cmd_evaluate(
    real_path: &Path,
    synth_path: &Path,
    replications: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if replications == 0 {
        return Err(Error::contract("replications must be at least 1"));
    }
    let real = import_sequences_csv::<f32>(real_path)?;
    let synth = import_sequences_csv::<f32>(synth_path)?;
    let base = derive_seed(seed, "evaluate");
    let seeds: Vec<u64> = (0..replications as u64).map(|i| base.wrapping_add(i)).collect();
    let ecfg = EvalConfig::default();
    let gap = moment_gap(&real, &synth)?;
    let reports = [
        replicate("discriminative", &seeds, |s| {
            discriminative_score(&real, &synth, &ecfg, s)
        })?,
        replicate("predictive", &seeds, |s| {
            predictive_score(&real, &synth, &ecfg, s)
        })?,
        // the moment gaps are deterministic; replications all agree
        replicate("mse_mean", &seeds, |_| Ok(gap.mse_mean))?,
        replicate("mse_std", &seeds, |_| Ok(gap.mse_std))?,
    ];
    std::fs::write(out, render_reports(&reports))?;
    for r in &reports {
        println!("{r}");
    }
    Ok(())
}

fn cmd_project(
    real_path: &Path,
    synth_path: &Path,
    method: Method,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let real = import_sequences_csv::<f32>(real_path)?;
    let synth = import_sequences_csv::<f32>(synth_path)?;
    let proj = match method {
        Method::Pca => pca_project(&real, &synth, 1000)?,
        Method::Tsne => tsne_project(&real, &synth, 40.0, 300, seed)?,
    };
    write_projection_csv(&proj, out)
}
