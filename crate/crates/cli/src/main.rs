use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dpfed_cli::config::ExperimentConfig;
use dpfed_cli::experiment::{cmd_sweep, cmd_train};
use dpfed::accountant::{asymptotic_sigma, dp_path_report, max_rounds, third_party_report, MechanismParams, RoundAccountant};
use dpfed::data::{export_csv, synth_generate, write_dataset, SynthConfig};
use dpfed::DatasetF64;
use serde_json::json;

#[derive(Parser)]
#[command(name = "dpfed", version, about = "Differentially private federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Privacy report for one set of mechanism parameters.
    Account {
        #[command(flatten)]
        mech: MechanismArgs,
        #[arg(long, default_value_t = 1)]
        rounds: u64,
        /// Warm-start rounds composed into the budget (RDP path only).
        #[arg(long, default_value_t = 0)]
        warm_rounds: u64,
        #[arg(long, value_enum, default_value_t = PathArg::Rdp)]
        path: PathArg,
    },
    /// Largest number of rounds within an ε budget.
    MaxRounds {
        #[command(flatten)]
        mech: MechanismArgs,
        #[arg(long)]
        budget_eps: f64,
        #[arg(long, default_value_t = 0)]
        warm_rounds: u64,
    },
    /// Order-of-magnitude noise multiplier for a budget (constants omitted).
    Sigma {
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        rounds: u64,
        #[arg(long)]
        local_steps: u64,
        #[arg(long)]
        user_ratio: f64,
        #[arg(long)]
        data_ratio: f64,
        #[arg(long)]
        users: u64,
    },
    /// Writes a synthetic federated dataset.
    Generate {
        #[arg(long)]
        users: usize,
        /// Records per user before the train/test split.
        #[arg(long)]
        records: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        flip_prob: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Binary dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV copy (`user,split,label,f0,...`).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Runs the configured algorithms and writes metrics and privacy reports.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Trains every (σ_g, K) cell for the largest T within the budget.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct MechanismArgs {
    #[arg(long)]
    sigma_g: f64,
    #[arg(long)]
    local_steps: u64,
    #[arg(long)]
    user_ratio: f64,
    #[arg(long)]
    data_ratio: f64,
    #[arg(long)]
    users: u64,
    /// Training records per user.
    #[arg(long)]
    records: u64,
    /// Defaults to 1/(users·records).
    #[arg(long)]
    delta: Option<f64>,
}

impl MechanismArgs {
    fn params(&self, rounds: u64) -> MechanismParams {
        MechanismParams {
            sigma_g: self.sigma_g,
            local_steps: self.local_steps,
            rounds,
            user_ratio: self.user_ratio,
            data_ratio: self.data_ratio,
            users: self.users,
            records: self.records,
            delta: self.delta.unwrap_or_else(|| MechanismParams::default_delta(self.users, self.records)),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Rdp,
    Dp,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DPFED_THREADS") {
        let n: usize = v.parse().with_context(|| format!("DPFED_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Account {
            mech,
            rounds,
            warm_rounds,
            path,
        } => {
            let p = mech.params(rounds);
            let report = match path {
                PathArg::Rdp => third_party_report(&p, warm_rounds)?,
                PathArg::Dp => dp_path_report(&p)?,
            };
            print_json(&report)
        }
        Command::MaxRounds {
            mech,
            budget_eps,
            warm_rounds,
        } => {
            let p = mech.params(1);
            let t = max_rounds(budget_eps, &p, warm_rounds)?;
            let eps = if t > 0 {
                Some(RoundAccountant::new(&p)?.epsilon_after(t + warm_rounds)?)
            } else {
                None
            };
            print_json(&json!({ "rounds": t, "eps_third_party": eps, "delta": p.delta, "warm_rounds": warm_rounds }))
        }
        Command::Sigma {
            eps,
            delta,
            rounds,
            local_steps,
            user_ratio,
            data_ratio,
            users,
        } => {
            let sigma = asymptotic_sigma(eps, delta, rounds, local_steps, user_ratio, data_ratio, users);
            print_json(&json!({ "sigma_g": sigma }))
        }
        Command::Generate {
            users,
            records,
            alpha,
            beta,
            dim,
            classes,
            flip_prob,
            seed,
            out,
            csv,
        } => {
            let mut cfg = SynthConfig::new(users, records, alpha, beta, seed);
            if let Some(d) = dim {
                cfg.dim = d;
            }
            if let Some(l) = classes {
                cfg.classes = l;
            }
            if let Some(p) = flip_prob {
                cfg.flip_prob = p;
            }
            let data: DatasetF64 = synth_generate(&cfg)?;
            let file = File::create(&out).with_context(|| format!("cannot create {}", out.display()))?;
            write_dataset(BufWriter::new(file), &data, seed)?;
            if let Some(path) = &csv {
                let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
                export_csv(BufWriter::new(file), &data)?;
            }
            print_json(&json!({ "out": out, "csv": csv, "users": users, "dim": data.dim(), "classes": data.num_classes() }))
        }
        Command::Train { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outputs = cmd_train(&cfg)?;
            let summary: Vec<_> = outputs
                .iter()
                .map(|o| {
                    json!({
                        "algorithm": o.algorithm.name(),
                        "runs": o.run_csvs,
                        "aggregate": o.aggregate_csv,
                        "report": o.report_json,
                        "eps_third_party": o.report.eps_third_party,
                        "final_accuracy": o.final_accuracy,
                    })
                })
                .collect();
            print_json(&json!({ "outputs": summary }))
        }
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let rows = cmd_sweep(&cfg)?;
            let cells: Vec<_> = rows
                .iter()
                .map(|r| json!({ "sigma_g": r.sigma_g, "K": r.local_steps, "T": r.rounds, "acc_mean": r.acc_mean, "acc_std": r.acc_std }))
                .collect();
            print_json(&json!({ "results": cfg.output_dir.join("sweep.csv"), "cells": cells }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({ "error": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
