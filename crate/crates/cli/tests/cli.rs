use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_w2dual");

/// Small settings so a run takes a second or two.
const TINY: &[&str] = &[
    "--set",
    "train.batch_size=64",
    "--set",
    "pretrain.enabled=false",
    "--set",
    "potential.hidden=[8, 8]",
    "--set",
    "amortizer.hidden=[8]",
    "--set",
    "train.eval_every=5",
    "--set",
    "train.eval_samples=256",
    "--set",
    "train.final_eval_samples=512",
];

fn w2dual(root: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(root)
        .env("W2DUAL_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn tiny_train(root: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--iters", "10", "--trials", "1", "--out", out];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    w2dual(root, &args)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Metrics rows without the timing column.
fn metrics_without_time(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

fn checkpoint(dir: &Path) -> PathBuf {
    dir.join("trial_0/checkpoints/final.json")
}

#[test]
fn gaussian_training_reports_uvp() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tiny_train(tmp.path(), "g", &["--task", "gauss_to_gauss_2d", "--loss", "regression", "--solver", "lbfgs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("g");
    let r = report(&dir);
    let uvp = &r["l2_uvp_final"];
    assert!(uvp["mean"].as_f64().unwrap() >= 0.0);
    assert_eq!(uvp["std"].as_f64().unwrap(), 0.0);
    for f in ["effective_config.toml", "trial_0/metrics.csv", "figures/dual_value.svg", "figures/pushforward.svg"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    assert!(checkpoint(&dir).exists());
}

#[test]
fn tasks_without_ground_truth_report_the_dual_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tiny_train(tmp.path(), "m", &["--task", "moons", "--solver", "lbfgs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(&tmp.path().join("m"));
    assert!(r.get("l2_uvp_final").is_none());
    let trial = &r["per_trial"][0];
    assert!(trial.get("l2_uvp_final").is_none());
    assert_eq!(trial["dual_value_trace"].as_array().unwrap().len(), 10);
}

#[test]
fn regression_without_solver_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tiny_train(tmp.path(), "x", &["--loss", "regression", "--solver", "none"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!tmp.path().join("x/report.json").exists());
}

#[test]
fn config_errors_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[task]\nname = \"moons\"\n\n[conjugate]\ntau = \"fast\"\n").unwrap();
    let o = w2dual(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.toml:5"), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_with_numerical_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tiny_train(tmp.path(), "nan", &["--set", "train.lr=1e300", "--set", "train.eval_every=0"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(tmp.path().join("nan/trial_0/checkpoints/crash_checkpoint.json").exists());
}

#[test]
fn effective_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tiny_train(tmp.path(), "a", &["--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = tmp.path().join("a");
    let cfg = a.join("effective_config.toml");
    let o = w2dual(tmp.path(), &["train", "--config", cfg.to_str().unwrap(), "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = tmp.path().join("b");
    assert_eq!(
        metrics_without_time(&a.join("trial_0/metrics.csv")),
        metrics_without_time(&b.join("trial_0/metrics.csv"))
    );
    let strip = |p: &Path| std::fs::read_to_string(p).unwrap().replace("out = \"b\"", "out = \"a\"");
    assert_eq!(strip(&cfg), strip(&b.join("effective_config.toml")));
}

#[test]
fn artifacts_stay_under_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path().join("work");
    let root = tmp.path().join("root");
    std::fs::create_dir_all(&work).unwrap();
    let mut args = vec!["train", "--iters", "3", "--trials", "1"];
    args.extend_from_slice(TINY);
    let o = Command::new(BIN)
        .args(&args)
        .current_dir(&work)
        .env("W2DUAL_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(&work).unwrap().count(), 0);
    assert!(root.join("runs/gauss_to_gauss_2d/report.json").exists());
}

#[test]
fn linesearch_bench_rows_and_equivalence() {
    let tmp = tempfile::tempdir().unwrap();
    let o = w2dual(tmp.path(), &["bench-linesearch", "--dims", "8", "--batch", "64", "--trials", "2", "--out", "ls"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(tmp.path().join("ls/linesearch_bench.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4 * 2);
    for r in &rows {
        assert_eq!(&r[6], "1", "{r:?} did not converge");
        assert!(r[5].parse::<f64>().unwrap() >= 1.0);
    }
    for trial in ["0", "1"] {
        let iters = |m: &str| rows.iter().find(|r| &r[0] == m && &r[3] == trial).unwrap()[5].to_string();
        assert_eq!(iters("parallel_armijo"), iters("backtracking_armijo"));
    }
}

#[test]
fn checkpoint_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tiny_train(tmp.path(), "g", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = checkpoint(&tmp.path().join("g"));
    let ck = ck.to_str().unwrap();

    let o = w2dual(tmp.path(), &["eval", "--checkpoint", ck, "--samples", "256", "--out", "ev"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ev: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("ev/eval.json")).unwrap()).unwrap();
    assert!(ev["l2_uvp"]["uvp_percent"].as_f64().is_some());

    let o = w2dual(tmp.path(), &["trace-conjugate", "--checkpoint", ck, "--batch", "32", "--out", "tr"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(tmp.path().join("tr/conjugate_trace.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    for init in ["amortized", "zero"] {
        let gaps: Vec<f64> = rows
            .iter()
            .filter(|r| &r[0] == "lbfgs" && &r[1] == init)
            .map(|r| r[3].parse().unwrap())
            .collect();
        assert!(!gaps.is_empty() && gaps.len() <= 101);
        assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{init}: {gaps:?}");
    }
    assert!(tmp.path().join("tr/conjugate_trace.svg").exists());

    let o = w2dual(
        tmp.path(),
        &["export-figures", "--checkpoint", ck, "--samples", "100", "--resolution", "41", "--out", "fig"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["pushforward.csv", "interpolation.csv", "interpolation.svg", "landscape_0.csv", "landscape_0.svg"] {
        assert!(tmp.path().join("fig").join(f).exists(), "{f} missing");
    }
}

#[test]
fn missing_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["eval", "trace-conjugate", "export-figures"] {
        let o = w2dual(tmp.path(), &[cmd, "--checkpoint", "absent.json"]);
        assert!(!o.status.success());
        assert!(stderr(&o).contains("absent.json"));
    }
}
