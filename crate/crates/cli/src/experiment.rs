//! Dataset loading, model construction and the `train`/`sweep` drivers.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dpfed::accountant::{max_rounds, third_party_report, AccountingPath, MechanismParams, PrivacyReport};
use dpfed::data::{
    load_idx, partition_by_similarity, preprocess, read_dataset, subsample_pool, synth_generate, FederatedDataset, Shard,
    SynthConfig, UserData,
};
use dpfed::engine::{run, Algorithm, RunOptions, TrainConfig, TrainingTrace};
use dpfed::metrics::{reference_optimum, tail_average};
use dpfed::models::{pca_fit, LogReg, Mlp, Model};
use dpfed::scalar::Real;

use crate::config::{DatasetKind, ExperimentConfig, ModelKind, Precision};
use crate::output::{mean_std, write_aggregate_csv, write_report, write_run_csv, write_sweep_csv, SweepRow};

pub fn synth_config(cfg: &ExperimentConfig) -> Result<SynthConfig> {
    let mut s = SynthConfig::new(
        cfg.users.context("`users` missing")?,
        cfg.records.context("`records` missing")?,
        cfg.alpha.unwrap_or(0.0),
        cfg.beta.unwrap_or(0.0),
        cfg.data_seed,
    );
    if let Some(d) = cfg.dim {
        s.dim = d;
    }
    if let Some(l) = cfg.classes {
        s.classes = l;
    }
    if let Some(p) = cfg.flip_prob {
        s.flip_prob = p;
    }
    Ok(s)
}

/// Reads a CSV in the `user,split,label,f0,...` layout.
pub fn read_csv_dataset<S: Real>(path: &Path, classes: Option<usize>) -> Result<FederatedDataset<S>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let dim = r.headers()?.len().checked_sub(3).context("CSV needs user,split,label columns")?;
    let mut users: BTreeMap<usize, (Shard<S>, Shard<S>)> = BTreeMap::new();
    let mut max_label = 0;
    let mut row = vec![S::zero(); dim];
    for rec in r.records() {
        let rec = rec?;
        let user: usize = rec[0].parse()?;
        let label: u32 = rec[2].parse()?;
        max_label = max_label.max(label as usize);
        for (v, field) in row.iter_mut().zip(rec.iter().skip(3)) {
            *v = S::of(field.parse::<f64>()?);
        }
        let entry = users.entry(user).or_insert_with(|| (Shard::empty(dim), Shard::empty(dim)));
        match &rec[1] {
            "train" => entry.0.push(&row, label),
            "test" => entry.1.push(&row, label),
            other => bail!("unknown split `{other}`"),
        }
    }
    let users = users.into_values().map(|(train, test)| UserData { train, test }).collect();
    Ok(FederatedDataset::new(users, dim, classes.unwrap_or(max_label + 1))?)
}

pub fn load_dataset<S: Real>(cfg: &ExperimentConfig) -> Result<FederatedDataset<S>> {
    Ok(match cfg.dataset {
        DatasetKind::Synthetic => synth_generate(&synth_config(cfg)?)?,
        DatasetKind::Binary => {
            let path = cfg.path.as_ref().context("`path` missing")?;
            read_dataset(BufReader::new(File::open(path)?))?.0
        }
        DatasetKind::Csv => read_csv_dataset(cfg.path.as_ref().context("`path` missing")?, cfg.classes)?,
        DatasetKind::Idx => {
            let mut pool: Shard<S> = load_idx(
                cfg.idx_images.as_ref().context("`idx_images` missing")?,
                cfg.idx_labels.as_ref().context("`idx_labels` missing")?,
            )?;
            if let Some(n) = cfg.pool_size {
                pool = subsample_pool(&pool, n, cfg.data_seed)?;
            }
            let classes = cfg
                .classes
                .unwrap_or_else(|| pool.labels().iter().copied().max().map_or(1, |m| m as usize + 1));
            let users = cfg.users.context("`users` missing")?;
            let gamma = cfg.gamma.context("`gamma` missing")?;
            preprocess(partition_by_similarity(&pool, users, gamma, classes, cfg.data_seed)?)
        }
    })
}

/// Dataset as seen by the model, and the model. MLP inputs are projected
/// once onto the leading principal components of the pooled train split.
pub fn build_model<S: Real>(
    cfg: &ExperimentConfig,
    data: FederatedDataset<S>,
) -> Result<(FederatedDataset<S>, Box<dyn Model<S>>)> {
    let l2 = S::of(cfg.l2_reg);
    Ok(match cfg.model {
        ModelKind::Logreg => {
            let m = LogReg::new(data.dim(), data.num_classes(), l2);
            (data, Box::new(m))
        }
        ModelKind::Mlp => {
            let k = cfg.pca_components.min(data.dim());
            let pca = pca_fit(&data.pooled_train(), k)?;
            let projected = data.map_features(k, |x, out| pca.project(x, out));
            let m = Mlp::new(k, cfg.hidden, projected.num_classes(), l2);
            (projected, Box::new(m))
        }
    })
}

pub fn mechanism_params<S: Real>(cfg: &TrainConfig, data: &FederatedDataset<S>, delta: Option<f64>) -> MechanismParams {
    let users = data.num_users() as u64;
    let records = data.train_records() as u64;
    MechanismParams {
        sigma_g: cfg.sigma_g,
        local_steps: cfg.local_steps,
        rounds: cfg.rounds,
        user_ratio: cfg.user_ratio,
        data_ratio: cfg.data_ratio,
        users,
        records,
        delta: delta.unwrap_or_else(|| MechanismParams::default_delta(users, records)),
    }
}

/// Privacy report of one configuration; infinite ε without noise.
pub fn privacy_report<S: Real>(cfg: &TrainConfig, data: &FederatedDataset<S>, delta: Option<f64>) -> Result<PrivacyReport> {
    let cfg = cfg.effective();
    let p = mechanism_params(&cfg, data, delta);
    let warm = cfg.warm_rounds();
    if cfg.algorithm.is_private() && cfg.sigma_g > 0.0 {
        Ok(third_party_report(&p, warm)?)
    } else {
        Ok(PrivacyReport {
            eps_third_party: f64::INFINITY,
            eps_server: f64::INFINITY,
            delta: p.delta,
            delta_server: p.delta,
            best_alpha: f64::NAN,
            path: AccountingPath::Rdp,
            warm_rounds: warm,
        })
    }
}

fn run_options(cfg: &ExperimentConfig, reference: Option<f64>) -> RunOptions {
    RunOptions {
        eval_every: cfg.eval_every,
        tail_fraction: cfg.tail_fraction,
        reference,
        delta: cfg.delta,
        parallel: true,
        zero_controls: false,
    }
}

fn reference_value<S: Real>(cfg: &ExperimentConfig, data: &FederatedDataset<S>, model: &dyn Model<S>) -> Result<Option<f64>> {
    if !(cfg.reference && model.is_convex()) {
        return Ok(None);
    }
    let opt = reference_optimum(data, model)?;
    if !opt.converged {
        eprintln!(
            "warning: reference optimum stopped at |grad F| = {:e}; loss gaps are approximate",
            opt.grad_norm
        );
    }
    Ok(Some(opt.value))
}

/// Files written for one algorithm by `train`.
#[derive(Clone, Debug)]
pub struct AlgorithmOutputs {
    pub algorithm: Algorithm,
    pub run_csvs: Vec<PathBuf>,
    pub aggregate_csv: PathBuf,
    pub report_json: PathBuf,
    pub report: PrivacyReport,
    pub traces_tail_accuracy: Vec<f64>,
    pub final_accuracy: Vec<f64>,
    pub final_train_loss: Vec<f64>,
}

pub fn run_name(algo: Algorithm, repeat: u64) -> String {
    format!("{}_run{}.csv", algo.name().to_ascii_lowercase(), repeat)
}

fn train_generic<S: Real>(cfg: &ExperimentConfig) -> Result<Vec<AlgorithmOutputs>> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("cannot create {}", cfg.output_dir.display()))?;
    let (data, model) = build_model(cfg, load_dataset::<S>(cfg)?)?;
    let reference = reference_value(cfg, &data, model.as_ref())?;
    let mut out = Vec::new();
    for &algo in &cfg.algorithms {
        let base = cfg.train_config(algo, cfg.seed);
        let mut traces: Vec<TrainingTrace<S>> = Vec::new();
        let mut run_csvs = Vec::new();
        for r in 0..cfg.repeats {
            let tc = TrainConfig {
                seed: cfg.seed + r,
                ..base.clone()
            };
            let trace = run(&tc, &data, model.as_ref(), run_options(cfg, reference))?;
            let path = cfg.output_dir.join(run_name(algo, r));
            write_run_csv(&path, algo.name(), tc.seed, &trace.rows)?;
            run_csvs.push(path);
            traces.push(trace);
        }
        let stem = algo.name().to_ascii_lowercase();
        let aggregate_csv = cfg.output_dir.join(format!("{stem}_aggregate.csv"));
        let rows: Vec<_> = traces.iter().map(|t| t.rows.clone()).collect();
        write_aggregate_csv(&aggregate_csv, algo.name(), &rows)?;
        let report = privacy_report(&base, &data, cfg.delta)?;
        let report_json = cfg.output_dir.join(format!("{stem}_privacy.json"));
        write_report(&report_json, &report)?;
        out.push(AlgorithmOutputs {
            algorithm: algo,
            run_csvs,
            aggregate_csv,
            report_json,
            report,
            traces_tail_accuracy: traces
                .iter()
                .map(|t| tail_average(&t.rows, cfg.tail_fraction.max(f64::MIN_POSITIVE)))
                .collect::<dpfed::Result<_>>()?,
            final_accuracy: traces.iter().map(|t| t.rows.last().map_or(f64::NAN, |r| r.accuracy)).collect(),
            final_train_loss: traces.iter().map(|t| t.rows.last().map_or(f64::NAN, |r| r.train_loss)).collect(),
        });
    }
    Ok(out)
}

/// Runs every configured algorithm `repeats` times and writes per-run CSVs,
/// an aggregate CSV and a privacy report per algorithm.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<AlgorithmOutputs>> {
    match cfg.precision {
        Precision::F64 => train_generic::<f64>(cfg),
        Precision::F32 => train_generic::<f32>(cfg),
    }
}

fn sweep_generic<S: Real>(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let budget = cfg.budget_eps.context("sweep needs `budget_eps`")?;
    if cfg.sigma_grid.is_empty() || cfg.k_grid.is_empty() {
        bail!("sweep needs non-empty `sigma_grid` and `k_grid`");
    }
    let algo = cfg.algorithms[0];
    fs::create_dir_all(&cfg.output_dir)?;
    let (data, model) = build_model(cfg, load_dataset::<S>(cfg)?)?;
    let mut rows = Vec::new();
    for &sigma_g in &cfg.sigma_grid {
        for &k in &cfg.k_grid {
            let base = TrainConfig {
                sigma_g,
                local_steps: k,
                ..cfg.train_config(algo, cfg.seed)
            }
            .effective();
            let p = mechanism_params(&base, &data, cfg.delta);
            let t = max_rounds(budget, &p, base.warm_rounds())?;
            let mut tails = Vec::new();
            if t > 0 {
                let opts = RunOptions {
                    eval_every: 0,
                    ..run_options(cfg, None)
                };
                let cell_dir = cfg.output_dir.join(format!("sigma{sigma_g}_K{k}"));
                fs::create_dir_all(&cell_dir)?;
                for r in 0..cfg.repeats {
                    let tc = TrainConfig {
                        rounds: t,
                        seed: cfg.seed + r,
                        ..base.clone()
                    };
                    let trace = run(&tc, &data, model.as_ref(), opts.clone())?;
                    write_run_csv(&cell_dir.join(run_name(algo, r)), algo.name(), tc.seed, &trace.rows)?;
                    tails.push(tail_average(&trace.rows, cfg.tail_fraction)?);
                }
            }
            let (acc_mean, acc_std) = if tails.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&tails) };
            rows.push(SweepRow {
                sigma_g,
                local_steps: k,
                rounds: t,
                acc_mean,
                acc_std,
            });
        }
    }
    write_sweep_csv(&cfg.output_dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// For each `(σ_g, K)` cell: the largest `T` within `budget_eps`, then
/// `repeats` runs reporting the tail-averaged test accuracy.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    match cfg.precision {
        Precision::F64 => sweep_generic::<f64>(cfg),
        Precision::F32 => sweep_generic::<f32>(cfg),
    }
}
