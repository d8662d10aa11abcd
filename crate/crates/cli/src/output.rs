//! CSV and JSON files written by `train` and `sweep`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use dpfed::accountant::PrivacyReport;
use dpfed::metrics::RoundMetrics;

pub const RUN_HEADER: [&str; 10] = [
    "round",
    "algo",
    "seed",
    "train_loss",
    "metric_kind",
    "accuracy",
    "grad_dissim",
    "grad_log_dissim",
    "eps_so_far",
    "clip_C",
];

pub const SWEEP_HEADER: [&str; 5] = ["sigma_g", "K", "T", "acc_mean", "acc_std"];

pub fn fmt(v: f64) -> String {
    format!("{v}")
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

pub fn write_run_csv(path: &Path, algo: &str, seed: u64, rows: &[RoundMetrics]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(RUN_HEADER)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            algo.to_string(),
            seed.to_string(),
            fmt(r.train_loss),
            r.metric_kind.name().to_string(),
            fmt(r.accuracy),
            fmt(r.grad_dissim),
            fmt(r.grad_log_dissim),
            fmt(r.eps_so_far),
            fmt(r.clip_c),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-round mean and std across runs, in the run-CSV layout: two rows per
/// round whose `seed` field is `mean` or `std`. All runs must share rounds.
pub fn write_aggregate_csv(path: &Path, algo: &str, runs: &[Vec<RoundMetrics>]) -> Result<()> {
    let first = runs.first().context("no runs to aggregate")?;
    for r in runs {
        if r.len() != first.len() || r.iter().zip(first).any(|(a, b)| a.round != b.round) {
            bail!("runs evaluated at different rounds");
        }
    }
    let mut w = writer(path)?;
    w.write_record(RUN_HEADER)?;
    for (i, row) in first.iter().enumerate() {
        let stats = |f: fn(&RoundMetrics) -> f64| -> (f64, f64) {
            mean_std(&runs.iter().map(|r| f(&r[i])).collect::<Vec<_>>())
        };
        let cols = [
            stats(|r| r.train_loss),
            stats(|r| r.accuracy),
            stats(|r| r.grad_dissim),
            stats(|r| r.grad_log_dissim),
            stats(|r| r.clip_c),
        ];
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let v = |c: (f64, f64)| fmt(if pick == 0 { c.0 } else { c.1 });
            w.write_record([
                row.round.to_string(),
                algo.to_string(),
                label.to_string(),
                v(cols[0]),
                row.metric_kind.name().to_string(),
                v(cols[1]),
                v(cols[2]),
                v(cols[3]),
                // ε depends only on the round; an infinite ε has no spread
                if pick == 0 { fmt(row.eps_so_far) } else { fmt(0.0) },
                v(cols[4]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub sigma_g: f64,
    pub local_steps: u64,
    pub rounds: u64,
    pub acc_mean: f64,
    pub acc_std: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            fmt(r.sigma_g),
            r.local_steps.to_string(),
            r.rounds.to_string(),
            fmt(r.acc_mean),
            fmt(r.acc_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(path: &Path, report: &PrivacyReport) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, report)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}
