use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dpfed(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dpfed"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn json_ok(args: &[&str]) -> Value {
    let out = dpfed(args, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

const HEADER: &str = "round,algo,seed,train_loss,metric_kind,accuracy,grad_dissim,grad_log_dissim,eps_so_far,clip_C";

fn write_config(dir: &Path, out: &str, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"
output_dir = "{out}"
dataset = "synthetic"
users = 8
records = 40
alpha = 1.0
beta = 1.0
dim = 6
classes = 3
algorithms = ["DP_SCAFFOLD_WARM", "FEDAVG"]
rounds = 6
local_steps = 3
user_ratio = 0.5
data_ratio = 0.25
eta0 = 0.5
sigma_g = 2.0
clip_mode = "median"
seed = 4
{extra}
"#,
        out = dir.join(out).display()
    );
    let path = dir.join(format!("{out}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn parse_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>().join(","), HEADER);
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn train_writes_the_file_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "out", "");
    let summary = json_ok(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(summary["outputs"].as_array().unwrap().len(), 2);
    let out = dir.path().join("out");
    let mut names: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "dp_scaffold_warm_aggregate.csv",
            "dp_scaffold_warm_privacy.json",
            "dp_scaffold_warm_run0.csv",
            "dp_scaffold_warm_run1.csv",
            "dp_scaffold_warm_run2.csv",
            "fedavg_aggregate.csv",
            "fedavg_privacy.json",
            "fedavg_run0.csv",
            "fedavg_run1.csv",
            "fedavg_run2.csv",
        ]
    );

    // aggregate rows are recomputable from the run files
    let runs: Vec<_> = (0..3)
        .map(|r| parse_csv(&out.join(format!("dp_scaffold_warm_run{r}.csv"))))
        .collect();
    let agg = parse_csv(&out.join("dp_scaffold_warm_aggregate.csv"));
    assert_eq!(agg.len(), 2 * runs[0].len());
    for (i, pair) in agg.chunks(2).enumerate() {
        assert_eq!((pair[0][2].as_str(), pair[1][2].as_str()), ("mean", "std"));
        for col in [3, 5, 6, 7, 9] {
            let xs: Vec<f64> = runs.iter().map(|r| r[i][col].parse().unwrap()).collect();
            let mean = xs.iter().sum::<f64>() / 3.0;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
            let got_mean: f64 = pair[0][col].parse().unwrap();
            let got_std: f64 = pair[1][col].parse().unwrap();
            assert!((got_mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
            assert!((got_std - std).abs() <= 1e-12 * std.abs().max(1.0));
        }
    }

    // non-private runs have no finite ε
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("fedavg_privacy.json")).unwrap()).unwrap();
    assert!(report["eps_third_party"].is_null());
    let fedavg = parse_csv(&out.join("fedavg_run0.csv"));
    assert!(fedavg.iter().all(|r| r[8] == "inf"));
}

#[test]
fn reruns_and_thread_counts_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_config(dir.path(), "a", "repeats = 1");
    let b = write_config(dir.path(), "b", "repeats = 1");
    let c = write_config(dir.path(), "c", "repeats = 1");
    for (cfg, threads) in [(&a, "1"), (&b, "1"), (&c, "4")] {
        let out = dpfed(&["train", "--config", cfg.to_str().unwrap()], &[("DPFED_THREADS", threads)]);
        assert!(out.status.success());
    }
    for name in ["dp_scaffold_warm_run0.csv", "fedavg_run0.csv"] {
        let first = fs::read(dir.path().join("a").join(name)).unwrap();
        assert_eq!(first, fs::read(dir.path().join("b").join(name)).unwrap());
        assert_eq!(first, fs::read(dir.path().join("c").join(name)).unwrap());
    }
}

#[test]
fn train_report_matches_standalone_account() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "out", "repeats = 1\nalgorithms = [\"DP_SCAFFOLD_WARM\"]");
    let cfg = fs::read_to_string(&cfg).unwrap().replace("algorithms = [\"DP_SCAFFOLD_WARM\", \"FEDAVG\"]\n", "");
    let path = dir.path().join("one.toml");
    fs::write(&path, cfg).unwrap();
    json_ok(&["train", "--config", path.to_str().unwrap()]);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/dp_scaffold_warm_privacy.json")).unwrap()).unwrap();
    // 8 users with 32 training records each; ⌈4/l⌉ = 8 warm rounds
    let standalone = json_ok(&[
        "account", "--sigma-g", "2", "--local-steps", "3", "--rounds", "6", "--user-ratio", "0.5", "--data-ratio",
        "0.25", "--users", "8", "--records", "32", "--warm-rounds", "8",
    ]);
    assert_eq!(report, standalone);
}

#[test]
fn csv_and_binary_datasets_train_identically() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("d.bin");
    let csv = dir.path().join("d.csv");
    json_ok(&[
        "generate", "--users", "6", "--records", "30", "--alpha", "1", "--beta", "1", "--dim", "5", "--classes", "3",
        "--seed", "2", "--out", bin.to_str().unwrap(), "--csv", csv.to_str().unwrap(),
    ]);
    let base = |out: &str, source: &str| {
        format!(
            "output_dir = \"{}\"\n{source}\nrepeats = 1\nalgorithms = [\"DP_FEDAVG\"]\nrounds = 4\nlocal_steps = 2\nuser_ratio = 0.5\ndata_ratio = 0.25\neta0 = 0.5\nsigma_g = 1.0\n",
            dir.path().join(out).display()
        )
    };
    let cfg_bin = dir.path().join("bin.toml");
    let cfg_csv = dir.path().join("csv.toml");
    fs::write(&cfg_bin, base("ob", "dataset = \"binary\"\npath = \"d.bin\"")).unwrap();
    fs::write(&cfg_csv, base("oc", "dataset = \"csv\"\npath = \"d.csv\"\nclasses = 3")).unwrap();
    json_ok(&["train", "--config", cfg_bin.to_str().unwrap()]);
    json_ok(&["train", "--config", cfg_csv.to_str().unwrap()]);
    assert_eq!(
        fs::read(dir.path().join("ob/dp_fedavg_run0.csv")).unwrap(),
        fs::read(dir.path().join("oc/dp_fedavg_run0.csv")).unwrap()
    );
}

#[test]
fn accountant_subcommands() {
    let rounds = json_ok(&[
        "max-rounds", "--budget-eps", "3", "--sigma-g", "10", "--local-steps", "20", "--user-ratio", "0.05",
        "--data-ratio", "0.2", "--users", "100", "--records", "4000",
    ]);
    assert_eq!(rounds["rounds"], 324);
    assert!(rounds["eps_third_party"].as_f64().unwrap() <= 3.0);

    let sigma = |eps: &str| {
        json_ok(&[
            "sigma", "--eps", eps, "--delta", "1e-5", "--rounds", "100", "--local-steps", "10", "--user-ratio", "0.1",
            "--data-ratio", "0.2", "--users", "100",
        ])["sigma_g"]
            .as_f64()
            .unwrap()
    };
    assert!((sigma("0.5") / sigma("1") - 2.0).abs() < 1e-12);

    let dp = json_ok(&[
        "account", "--path", "dp", "--sigma-g", "10", "--local-steps", "5", "--rounds", "100", "--user-ratio", "0.05",
        "--data-ratio", "0.2", "--users", "100", "--records", "4000",
    ]);
    assert_eq!(dp["path"], "DP_PATH");
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "out", "sigma = 3.0");
    let out = dpfed(&["train", "--config", cfg.to_str().unwrap()], &[]);
    assert!(!out.status.success());
    let line: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(line["error"].as_str().unwrap().contains("unknown field"));

    let out = dpfed(
        &[
            "account", "--sigma-g", "0", "--local-steps", "5", "--rounds", "10", "--user-ratio", "0.05",
            "--data-ratio", "0.2", "--users", "100", "--records", "4000",
        ],
        &[],
    );
    assert!(!out.status.success());
    assert!(serde_json::from_slice::<Value>(&out.stderr).unwrap()["error"].is_string());
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            dpfed_cli::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
