use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;
use w2dual_core::conjugate::{NetworkPotential, Potential, QuadraticPotential};
use w2dual_core::diffcore::mean;
use w2dual_core::evaluation::svg;
use w2dual_core::linalg::random_spd;
use w2dual_core::rng::{derive_seed, keyed_rng};
use w2dual_core::trainer::{dual_value, InitReport, FINAL_CHECKPOINT};
use w2dual_core::{
    conjugate, Checkpoint, Distribution, LineSearchConfig, LineSearchMethod, RunOutput, Sampler, SolverConfig,
    SolverKind, StopRule, TrainState, Trainer,
};

use crate::config::{resolve_task, RunConfig, EFFECTIVE_CONFIG};
use crate::{figures, CliError};

const FIGURE_SAMPLES: usize = 2000;

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}

#[derive(Serialize)]
struct TrialReport {
    seed: u64,
    steps: u64,
    init: InitReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    l2_uvp_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    l2_uvp_std_error: Option<f64>,
    dual_value_trace: Vec<(u64, f64)>,
    wall_s: f64,
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(EFFECTIVE_CONFIG), cfg.to_toml())?;
    let task = resolve_task(&cfg.task)?;
    let mut trials = Vec::new();
    for i in 0..cfg.trials {
        let tc = cfg.trial(i);
        let dir = out.join(format!("trial_{i}"));
        std::fs::create_dir_all(&dir)?;
        let t0 = Instant::now();
        let trainer = Trainer::new(task.clone(), tc.clone())?;
        let (mut state, init) = trainer.init_state()?;
        let ck_dir = dir.join("checkpoints");
        let run_out = RunOutput {
            metrics: Some(dir.join("metrics.csv")),
            checkpoint_dir: Some(ck_dir.clone()),
            append_metrics: false,
        };
        eprintln!("trial {i}: seed {} for {} steps", tc.seed, tc.n_iters);
        let summary = trainer.run(&mut state, &run_out)?;
        trainer.checkpoint(&state).save(&ck_dir.join(FINAL_CHECKPOINT))?;
        if i == 0 {
            let fig = out.join("figures");
            figures::training_curves(&summary, &fig)?;
            figures::pushforward_figures(&trainer, &state, FIGURE_SAMPLES, tc.seed, &fig)?;
        }
        if let Some(u) = &summary.final_uvp {
            eprintln!("trial {i}: final L2-UVP {:.4}%", u.uvp_percent);
        }
        trials.push(TrialReport {
            seed: tc.seed,
            steps: state.step,
            init,
            l2_uvp_final: summary.final_uvp.as_ref().map(|u| u.uvp_percent),
            l2_uvp_std_error: summary.final_uvp.as_ref().map(|u| u.std_error),
            dual_value_trace: summary.dual_value_trace(),
            wall_s: t0.elapsed().as_secs_f64(),
        });
    }
    let mut report = json!({
        "task": cfg.task,
        "trials": trials.len(),
        "solver": cfg.train.conjugate.solver.name(),
        "loss": cfg.train.amortization.name(),
        "per_trial": trials,
    });
    let uvps: Option<Vec<f64>> = trials.iter().map(|t| t.l2_uvp_final).collect();
    if let Some(u) = uvps {
        let (m, s) = mean_std(&u);
        report["l2_uvp_final"] = json!({ "mean": m, "std": s, "n_samples": cfg.train.final_eval_samples });
    }
    write_json(&out.join("report.json"), &report)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Rebuilds the trainer that wrote `path`.
pub fn load_checkpoint(path: &Path) -> Result<(Trainer, TrainState), CliError> {
    if !path.exists() {
        return Err(CliError::Other(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    let name = if ck.config.reversed {
        ck.task.strip_suffix("_reversed").unwrap_or(&ck.task)
    } else {
        &ck.task
    };
    let trainer = Trainer::new(resolve_task(name)?, ck.config.clone())?;
    if ck.state.theta.layout != *trainer.potential().layout() || ck.state.phi.layout != *trainer.amortizer().network().layout() {
        return Err(CliError::Config(format!(
            "checkpoint {} does not match its recorded architecture",
            path.display()
        )));
    }
    Ok((trainer, ck.state))
}

pub fn eval(checkpoint: &Path, samples: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let (trainer, state) = load_checkpoint(checkpoint)?;
    std::fs::create_dir_all(out)?;
    let uvp = trainer.evaluate_uvp(&state.theta, samples, derive_seed(seed, &[0xe1]))?;
    let task = trainer.task();
    let x = task.alpha.sample(samples, derive_seed(seed, &[0xe2]))?;
    let y = task.beta.sample(samples, derive_seed(seed, &[0xe3]))?;
    let (_, res) = trainer.solve_conjugates(&state, &y, &trainer.config().conjugate)?;
    let v = dual_value(trainer.potential(), &state.theta, &x, &res.x_star, &y)?;
    let mut report = json!({
        "checkpoint": checkpoint.display().to_string(),
        "task": task.name,
        "step": state.step,
        "samples": samples,
        "dual_value": v,
        "mean_conj_iters": res.mean_iters(),
        "mean_conj_grad_norm": res.mean_grad_inf_norm(),
        "failed_rows": res.n_failed(),
    });
    if let Some(u) = uvp {
        report["l2_uvp"] = serde_json::to_value(&u)?;
    }
    write_json(&out.join("eval.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub struct BenchOptions {
    pub dims: Vec<usize>,
    pub batch: usize,
    pub trials: usize,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

/// L-BFGS settings of the line-search comparison: decay 2/3 over 15
/// candidates, stopping once `‖∇J‖∞ ≤ 0.1`.
pub fn bench_solver(method: LineSearchMethod) -> SolverConfig {
    SolverConfig {
        solver: SolverKind::Lbfgs,
        max_iter: 100,
        tol: 0.1,
        stop_rule: StopRule::GradInf,
        linesearch: LineSearchConfig::new(method, 1.5, 15),
        ..SolverConfig::benchmark()
    }
}

struct BenchRow {
    method: LineSearchMethod,
    dim: usize,
    trial: usize,
    wall_ms: f64,
    mean_iters: f64,
    converged: f64,
    evaluations: f64,
    fallbacks: usize,
}

pub fn bench_linesearch(o: &BenchOptions) -> Result<(), CliError> {
    if o.batch == 0 || o.trials == 0 {
        return Err(CliError::Config("batch and trials must be positive".into()));
    }
    let trained = match &o.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let dims = match &trained {
        Some((t, _)) => vec![t.task().dim()],
        None => o.dims.clone(),
    };
    if dims.iter().any(|&d| d == 0) {
        return Err(CliError::Config("dimensions must be positive".into()));
    }
    std::fs::create_dir_all(&o.out)?;
    let mut rows = Vec::new();
    for &dim in &dims {
        for trial in 0..o.trials {
            let quad;
            let net;
            let (f, y): (&dyn Potential, Array2<f64>) = match &trained {
                Some((t, s)) => {
                    net = NetworkPotential::new(t.potential(), &s.theta);
                    let y = t.task().beta.sample(o.batch, derive_seed(o.seed, &[trial as u64]))?;
                    (&net, y)
                }
                None => {
                    let mut rng = keyed_rng(o.seed, &[dim as u64, trial as u64]);
                    quad = QuadraticPotential::new(random_spd(dim, 1.0, 100.0, &mut rng));
                    let normal = Sampler::new(Distribution::StandardNormal { dim })?;
                    let y = normal.sample(o.batch, derive_seed(o.seed, &[dim as u64, trial as u64, 1]))? * 3.0;
                    (&quad, y)
                }
            };
            let x0 = Array2::zeros(y.dim());
            for method in LineSearchMethod::ALL {
                let t0 = Instant::now();
                let res = conjugate(f, &y, &x0, &bench_solver(method))?;
                let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
                let n = res.n_rows() as f64;
                rows.push(BenchRow {
                    method,
                    dim,
                    trial,
                    wall_ms,
                    mean_iters: res.mean_iters(),
                    converged: res.converged().iter().filter(|&&c| c).count() as f64 / n,
                    evaluations: res.evaluations.iter().sum::<usize>() as f64 / n,
                    fallbacks: res.wolfe_fallbacks.iter().sum(),
                });
            }
        }
    }
    let mut w = csv::Writer::from_path(&o.out.join("linesearch_bench.csv"))?;
    w.write_record([
        "method",
        "dim",
        "batch",
        "trial",
        "wall_ms",
        "mean_iters",
        "converged_fraction",
        "mean_evaluations",
        "wolfe_fallbacks",
    ])
    ?;
    for r in &rows {
        w.write_record([
            r.method.name().to_string(),
            r.dim.to_string(),
            o.batch.to_string(),
            r.trial.to_string(),
            format!("{:.3}", r.wall_ms),
            r.mean_iters.to_string(),
            r.converged.to_string(),
            r.evaluations.to_string(),
            r.fallbacks.to_string(),
        ])
        ?;
    }
    w.flush()?;
    let mut s = csv::Writer::from_path(&o.out.join("linesearch_summary.csv"))?;
    s.write_record(["method", "dim", "mean_wall_ms", "mean_iters"])
        ?;
    for &dim in &dims {
        for method in LineSearchMethod::ALL {
            let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.dim == dim && r.method == method).collect();
            let wall: Vec<f64> = sel.iter().map(|r| r.wall_ms).collect();
            let iters: Vec<f64> = sel.iter().map(|r| r.mean_iters).collect();
            let line = [method.name().to_string(), dim.to_string(), format!("{:.3}", mean(&wall)), mean(&iters).to_string()];
            println!("{}", line.join(","));
            s.write_record(&line)?;
        }
    }
    s.flush()?;
    Ok(())
}

/// Mean over rows of `J_k − best`, where a row that stopped keeps its last
/// value.
pub fn j_gap_curve(history: &[Vec<f64>], best: &[f64]) -> Vec<f64> {
    let len = history.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let gaps: Vec<f64> = history
                .iter()
                .zip(best)
                .map(|(h, b)| h[k.min(h.len() - 1)] - b)
                .collect();
            mean(&gaps)
        })
        .collect()
}

pub fn trace_conjugate(checkpoint: &Path, solvers: &[String], batch: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let (trainer, state) = load_checkpoint(checkpoint)?;
    if batch == 0 {
        return Err(CliError::Config("batch must be positive".into()));
    }
    let kinds = solvers
        .iter()
        .map(|s| match SolverKind::parse(s)? {
            SolverKind::None => Err(w2dual_core::Error::Config("tracing needs a solver other than `none`".into())),
            k => Ok(k),
        })
        .collect::<w2dual_core::Result<Vec<_>>>()?;
    std::fs::create_dir_all(out)?;
    let y = trainer.task().beta.sample(batch, derive_seed(seed, &[0x7c]))?;
    let amortized = trainer.amortizer().predict(&state.phi, &y)?;
    let zero = Array2::zeros(y.dim());
    let f = NetworkPotential::new(trainer.potential(), &state.theta);
    let mut runs = Vec::new();
    for &kind in &kinds {
        let mut cfg = trainer.config().conjugate.clone().with_solver(kind);
        cfg.record_history = true;
        for (label, x0) in [("amortized", &amortized), ("zero", &zero)] {
            let res = conjugate(&f, &y, x0, &cfg)?;
            let hist = res.history.expect("history was requested");
            runs.push((kind.name(), label, hist));
        }
    }
    let best: Vec<f64> = (0..batch)
        .map(|r| {
            runs.iter()
                .flat_map(|(_, _, h)| h[r].iter().copied())
                .filter(|v| v.is_finite())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut w = csv::Writer::from_path(&out.join("conjugate_trace.csv"))?;
    w.write_record(["solver", "init", "iter", "j_gap"])
        ?;
    let mut series = Vec::new();
    for (solver, init, hist) in &runs {
        let curve = j_gap_curve(hist, &best);
        for (k, g) in curve.iter().enumerate() {
            w.write_record([solver.to_string(), init.to_string(), k.to_string(), g.to_string()])
                ?;
        }
        let label = format!("{solver}, {init} init");
        series.push((label, curve.iter().enumerate().map(|(k, g)| (k as f64, *g)).collect::<Vec<_>>()));
    }
    w.flush()?;
    let refs: Vec<(&str, Vec<(f64, f64)>)> = series.iter().map(|(l, p)| (l.as_str(), p.clone())).collect();
    svg::write(&out.join("conjugate_trace.svg"), &svg::lines("mean J gap per iteration", &refs, true))?;
    Ok(())
}

pub fn export_figures(checkpoint: &Path, samples: usize, resolution: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let (trainer, state) = load_checkpoint(checkpoint)?;
    if samples == 0 {
        return Err(CliError::Config("samples must be positive".into()));
    }
    figures::all(&trainer, &state, samples, resolution, seed, out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}
