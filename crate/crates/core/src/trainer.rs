//! Alternating training of the dual potential `f_θ` and the amortization
//! model `x̃_φ`.
//!
//! Each step samples `X ∼ α` and `Y ∼ β`, predicts `x̃_φ(Y)`, fine-tunes the
//! predictions with the conjugate solver, takes an Adam step on `θ` along
//! the envelope gradient of the dual and then an Adam step on `φ` along the
//! selected amortization loss.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::amortization::{amortization_loss, AmortBatch, AmortLossKind};
use crate::conjugate::{conjugate, ConjugateResult, NetworkPotential, SolverConfig, SolverKind};
use crate::diffcore::{mean, Activation, ParamVector};
use crate::error::{Error, Result};
use crate::evaluation::{csv_err, l2_uvp, UvpReport};
use crate::measures::TaskSpec;
use crate::optim::{cosine_lr, AdamConfig, AdamState};
use crate::potentials::{
    default_amortizer_hidden, default_hidden_2d, default_hidden_nd, pretrain_identity, AmortModel, Architecture,
    GradientField, Network, PretrainConfig,
};
use crate::rng::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_iters: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Final learning rate as a fraction of `lr_init`.
    pub cosine_floor: f64,
    pub potential: Architecture,
    pub amortizer: Architecture,
    pub conjugate: SolverConfig,
    pub amortization: AmortLossKind,
    /// Let the cycle loss also update the potential.
    pub connect_potential: bool,
    /// Identity pretraining for both models; `None` skips it.
    pub pretrain: Option<PretrainConfig>,
    /// Evaluate ℒ²-UVP every this many steps (0 disables).
    pub eval_every: usize,
    pub eval_samples: usize,
    pub final_eval_samples: usize,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Swap the roles of the two measures.
    pub reversed: bool,
}

impl TrainConfig {
    /// Settings for `dim`-dimensional Gaussian-style problems.
    pub fn benchmark(dim: usize) -> Self {
        Self {
            n_iters: 250_000,
            batch_size: 1024,
            lr_init: 5e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.5,
            cosine_floor: 1e-4,
            potential: Architecture::Icnn {
                hidden: default_hidden_nd(dim),
                activation: Activation::Elu,
                actnorm: true,
            },
            amortizer: Architecture::InitNn {
                hidden: default_amortizer_hidden(),
                activation: Activation::Elu,
            },
            conjugate: SolverConfig::benchmark(),
            amortization: AmortLossKind::Regression,
            connect_potential: false,
            pretrain: Some(PretrainConfig::default()),
            eval_every: 1000,
            eval_samples: 4096,
            final_eval_samples: 16384,
            checkpoint_every: 0,
            seed: 0,
            reversed: false,
        }
    }

    /// Settings for the 2-D synthetic tasks.
    pub fn synthetic() -> Self {
        let act = Activation::LeakyRelu(0.2);
        Self {
            n_iters: 50_000,
            batch_size: 10_000,
            potential: Architecture::Icnn {
                hidden: default_hidden_2d(),
                activation: act,
                actnorm: true,
            },
            amortizer: Architecture::InitNn {
                hidden: default_amortizer_hidden(),
                activation: act,
            },
            conjugate: SolverConfig::synthetic(),
            ..Self::benchmark(2)
        }
    }

    /// Preset by dimension: synthetic settings in 2-D, benchmark otherwise.
    pub fn for_dim(dim: usize) -> Self {
        if dim == 2 {
            Self::synthetic()
        } else {
            Self::benchmark(dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iters == 0 || self.batch_size == 0 {
            return Err(Error::config("n_iters and batch_size must be positive"));
        }
        if !(self.lr_init > 0.0) || !self.lr_init.is_finite() {
            return Err(Error::config("lr_init must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.cosine_floor) {
            return Err(Error::config("cosine_floor must lie in [0, 1]"));
        }
        if !self.potential.is_potential() {
            return Err(Error::config("the potential must be a scalar network (icnn or mlp)"));
        }
        if self.amortization == AmortLossKind::Regression && self.conjugate.solver == SolverKind::None {
            return Err(Error::config(
                "the regression amortization loss needs solver targets; pick a conjugate solver other than `none`",
            ));
        }
        if self.connect_potential && self.amortization != AmortLossKind::Cycle {
            return Err(Error::config("connect_potential applies to the cycle loss only"));
        }
        if self.eval_every > 0 && self.eval_samples < 2 {
            return Err(Error::config("eval_samples must be at least 2"));
        }
        if self.final_eval_samples < 2 {
            return Err(Error::config("final_eval_samples must be at least 2"));
        }
        self.conjugate.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.adam_beta1, self.adam_beta2)
    }
}

/// Everything that changes during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub theta: ParamVector,
    pub phi: ParamVector,
    pub adam_theta: AdamState,
    pub adam_phi: AdamState,
    pub step: u64,
}

impl TrainState {
    pub fn is_consistent(&self) -> bool {
        self.adam_theta.len() == self.theta.len() && self.adam_phi.len() == self.phi.len()
    }
}

/// `−mean f(X) + mean J_f(X*; Y)`.
pub fn dual_value(f: &Network, theta: &ParamVector, x: &Array2<f64>, x_star: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x_star.dim() != y.dim() {
        return Err(Error::dim("conjugate points and targets differ in shape"));
    }
    let fx = f.values(theta, x)?;
    let fs = f.values(theta, x_star)?;
    let j: Vec<f64> = fs
        .iter()
        .zip(x_star.rows())
        .zip(y.rows())
        .map(|((v, a), b)| v - a.dot(&b))
        .collect();
    Ok(-mean(&fx) + mean(&j))
}

/// `−mean ∇_θ f(X) + mean ∇_θ f(X*)`; `X*` is held constant.
pub fn dual_grad(f: &Network, theta: &ParamVector, x: &Array2<f64>, x_star: &Array2<f64>) -> Result<ParamVector> {
    Ok(dual_value_and_grad_parts(f, theta, x, x_star)?.1)
}

/// Means of `f(X)` and `f(X*)` with the dual gradient, from one pass over
/// the stacked batch.
fn dual_value_and_grad_parts(
    f: &Network,
    theta: &ParamVector,
    x: &Array2<f64>,
    x_star: &Array2<f64>,
) -> Result<((f64, f64), ParamVector)> {
    if x.ncols() != x_star.ncols() {
        return Err(Error::dim("sample and conjugate widths differ"));
    }
    let n = x.nrows();
    let m = x_star.nrows();
    let stacked = concatenate(Axis(0), &[x.view(), x_star.view()]).map_err(|e| Error::dim(e.to_string()))?;
    let trace = f.trace(theta, &stacked, None)?;
    let out = trace.output().column(0).to_vec();
    let w = Array2::from_shape_fn((n + m, 1), |(r, _)| if r < n { -1.0 / n as f64 } else { 1.0 / m as f64 });
    let g = f.backward(theta, &trace, Some(&w), None)?;
    Ok(((mean(&out[..n]), mean(&out[n..])), theta.with_values(g.params)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub dual_value: f64,
    pub mean_conj_iters: f64,
    pub mean_conj_grad_norm: f64,
    pub amort_loss: f64,
    pub failed_rows: usize,
    pub l2_uvp: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PretrainSummary {
    pub initial_loss: f64,
    pub held_out_loss: f64,
    pub warning: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InitReport {
    pub potential: Option<PretrainSummary>,
    pub amortizer: Option<PretrainSummary>,
}

/// Saved training progress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub task: String,
    pub config: TrainConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        ck.state.theta.layout.validate()?;
        ck.state.phi.layout.validate()?;
        if !ck.state.is_consistent() {
            return Err(Error::Contract("checkpoint optimizer buffers do not match parameters".into()));
        }
        Ok(ck)
    }
}

pub const METRICS_HEADER: [&str; 7] = [
    "step",
    "dual_value",
    "mean_conj_iters",
    "mean_conj_grad_norm",
    "amort_loss",
    "l2_uvp",
    "wall_ms",
];

/// Appends step metrics to a CSV file.
pub struct MetricsLog {
    w: csv::Writer<std::fs::File>,
}

impl MetricsLog {
    /// Creates the file, or appends to it when `append` is set and it exists.
    pub fn open(path: &Path, append: bool) -> Result<Self> {
        let exists = append && path.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(exists)
            .truncate(!exists)
            .open(path)?;
        let mut w = csv::Writer::from_writer(file);
        if !exists {
            w.write_record(METRICS_HEADER).map_err(csv_err)?;
        }
        Ok(Self { w })
    }

    pub fn write(&mut self, m: &StepMetrics) -> Result<()> {
        self.w
            .write_record([
                m.step.to_string(),
                m.dual_value.to_string(),
                m.mean_conj_iters.to_string(),
                m.mean_conj_grad_norm.to_string(),
                m.amort_loss.to_string(),
                m.l2_uvp.map(|v| v.to_string()).unwrap_or_default(),
                format!("{:.3}", m.wall_ms),
            ])
            .map_err(csv_err)?;
        self.w.flush()?;
        Ok(())
    }
}

/// Where a run writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub metrics: Option<PathBuf>,
    /// Directory for periodic and crash checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Append to an existing metrics file instead of truncating it.
    pub append_metrics: bool,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub history: Vec<StepMetrics>,
    pub final_uvp: Option<UvpReport>,
}

impl TrainSummary {
    pub fn dual_value_trace(&self) -> Vec<(u64, f64)> {
        self.history.iter().map(|m| (m.step, m.dual_value)).collect()
    }
}

pub const CRASH_CHECKPOINT: &str = "crash_checkpoint.json";
pub const FINAL_CHECKPOINT: &str = "final.json";

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_{step:08}.json")
}

pub struct Trainer {
    task: TaskSpec,
    cfg: TrainConfig,
    potential: Network,
    amortizer: AmortModel,
}

impl Trainer {
    pub fn new(task: TaskSpec, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let task = if cfg.reversed { task.reversed()? } else { task };
        let dim = task.dim();
        let potential = cfg.potential.build(dim)?;
        let amortizer = AmortModel::new(&cfg.amortizer, dim)?;
        Ok(Self {
            task,
            cfg,
            potential,
            amortizer,
        })
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn potential(&self) -> &Network {
        &self.potential
    }

    pub fn amortizer(&self) -> &AmortModel {
        &self.amortizer
    }

    /// Fresh parameters, with ActNorm initialized on `α` samples and both
    /// models pretrained towards the identity map.
    pub fn init_state(&self) -> Result<(TrainState, InitReport)> {
        let seed = self.cfg.seed;
        let mut theta = self.potential.init_params_seeded(derive_seed(seed, &[0x7e7a]));
        let has_actnorm = theta.layout.slots().iter().any(|s| s.name.starts_with("actnorm"));
        if has_actnorm {
            let xs = self.task.alpha.sample(self.cfg.batch_size, derive_seed(seed, &[0xac7]))?;
            theta = self.potential.actnorm_init(&theta, &xs)?;
        }
        let mut phi = self.amortizer.network().init_params_seeded(derive_seed(seed, &[0x9f1]));
        if let AmortModel::Direct(net) = &self.amortizer {
            // An InitNN with a zero residual is exactly the identity.
            phi = net.zero_residual(&phi)?;
        }
        let mut report = InitReport::default();
        if let Some(pc) = &self.cfg.pretrain {
            let r = pretrain_identity(&GradientField(&self.potential), &theta, &self.task.alpha, pc, derive_seed(seed, &[0x11]))?;
            theta = r.params;
            report.potential = Some(PretrainSummary {
                initial_loss: r.initial_loss,
                held_out_loss: r.held_out_loss,
                warning: r.warning,
            });
            let r = pretrain_identity(&self.amortizer, &phi, &self.task.beta, pc, derive_seed(seed, &[0x12]))?;
            phi = r.params;
            report.amortizer = Some(PretrainSummary {
                initial_loss: r.initial_loss,
                held_out_loss: r.held_out_loss,
                warning: r.warning,
            });
        }
        let state = TrainState {
            adam_theta: AdamState::new(theta.len()),
            adam_phi: AdamState::new(phi.len()),
            theta,
            phi,
            step: 0,
        };
        Ok((state, report))
    }

    /// The batches used at `step`.
    pub fn batches(&self, step: u64) -> Result<(Array2<f64>, Array2<f64>)> {
        let seed = self.cfg.seed;
        let x = self.task.alpha.sample(self.cfg.batch_size, derive_seed(seed, &[0xa, step]))?;
        let y = self.task.beta.sample(self.cfg.batch_size, derive_seed(seed, &[0xb, step]))?;
        Ok((x, y))
    }

    /// Amortized predictions fine-tuned by the configured solver.
    pub fn solve_conjugates(&self, state: &TrainState, y: &Array2<f64>, solver: &SolverConfig) -> Result<(Array2<f64>, ConjugateResult)> {
        let x_tilde = self.amortizer.predict(&state.phi, y)?;
        let f = NetworkPotential::new(&self.potential, &state.theta);
        let res = conjugate(&f, y, &x_tilde, solver)?;
        Ok((x_tilde, res))
    }

    /// One training step. On error the state is left untouched.
    pub fn step(&self, state: &mut TrainState) -> Result<StepMetrics> {
        let t0 = Instant::now();
        let step = state.step;
        let (x, y) = self.batches(step)?;
        let (x_tilde, res) = self.solve_conjugates(state, &y, &self.cfg.conjugate)?;
        let x_star = &res.x_star;

        let ((mean_fx, _), grad_v) = dual_value_and_grad_parts(&self.potential, &state.theta, &x, x_star)?;
        let dual = -mean_fx + mean(&res.j_values);

        let batch = AmortBatch {
            y: &y,
            x_tilde: &x_tilde,
            x_star: Some(x_star),
        };
        let amort = amortization_loss(
            self.cfg.amortization,
            &self.potential,
            &state.theta,
            &self.amortizer,
            &state.phi,
            &batch,
            self.cfg.connect_potential,
        )?;

        // Ascend the dual: descend on its negative.
        let mut g_theta: Vec<f64> = grad_v.values.iter().map(|g| -g).collect();
        if let Some(extra) = &amort.grad_theta {
            for (g, e) in g_theta.iter_mut().zip(extra) {
                *g += e;
            }
        }
        if !dual.is_finite()
            || !amort.loss.is_finite()
            || g_theta.iter().any(|g| !g.is_finite())
            || amort.grad_phi.iter().any(|g| !g.is_finite())
        {
            return Err(Error::Numerical(format!(
                "non-finite dual value, loss or gradient at step {step} (dual {dual}, amortization loss {})",
                amort.loss
            )));
        }

        let lr = cosine_lr(step, self.cfg.n_iters as u64, self.cfg.lr_init, self.cfg.cosine_floor);
        let adam = self.cfg.adam();
        let mut next = state.clone();
        next.adam_theta.step(&mut next.theta.values, &g_theta, lr, &adam);
        next.adam_phi.step(&mut next.phi.values, &amort.grad_phi, lr, &adam);
        if !next.theta.is_finite() || !next.phi.is_finite() {
            return Err(Error::Numerical(format!("parameters became non-finite at step {step}")));
        }
        next.step += 1;
        *state = next;

        Ok(StepMetrics {
            step: state.step,
            dual_value: dual,
            mean_conj_iters: res.mean_iters(),
            mean_conj_grad_norm: res.mean_grad_inf_norm(),
            amort_loss: amort.loss,
            failed_rows: res.n_failed(),
            l2_uvp: None,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// The learned forward map `x ↦ ∇f_θ(x)`.
    pub fn transport(&self, theta: &ParamVector, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.potential.grad_input(theta, x)
    }

    /// The learned inverse map `y ↦ argmin_x J_f(x; y)`, warm-started by the
    /// amortizer and solved with the synthetic-mode solver.
    pub fn inverse_transport(&self, state: &TrainState, y: &Array2<f64>) -> Result<Array2<f64>> {
        let solver = SolverConfig {
            solver: SolverKind::Lbfgs,
            ..SolverConfig::synthetic()
        };
        Ok(self.solve_conjugates(state, y, &solver)?.1.x_star)
    }

    /// ℒ²-UVP of `∇f_θ` against the ground truth, if the task has one.
    pub fn evaluate_uvp(&self, theta: &ParamVector, n: usize, seed: u64) -> Result<Option<UvpReport>> {
        let Some(gt) = &self.task.ground_truth else {
            return Ok(None);
        };
        let t = |x: &Array2<f64>| self.transport(theta, x);
        let t_star = |x: &Array2<f64>| Ok(gt.apply(x.view()));
        l2_uvp(&t, &t_star, &self.task.alpha, &self.task.beta, n, seed).map(Some)
    }

    pub fn checkpoint(&self, state: &TrainState) -> Checkpoint {
        Checkpoint {
            task: self.task.name.clone(),
            config: self.cfg.clone(),
            state: state.clone(),
        }
    }

    /// Trains until `n_iters` steps have been taken, then reports the final
    /// ℒ²-UVP. A numerical failure writes a crash checkpoint (when a
    /// checkpoint directory is set) holding the last good state.
    pub fn run(&self, state: &mut TrainState, out: &RunOutput) -> Result<TrainSummary> {
        if !state.is_consistent() {
            return Err(Error::Contract("optimizer buffers do not match parameters".into()));
        }
        let mut log = match &out.metrics {
            Some(p) => Some(MetricsLog::open(p, out.append_metrics)?),
            None => None,
        };
        if let Some(d) = &out.checkpoint_dir {
            std::fs::create_dir_all(d)?;
        }
        let n_iters = self.cfg.n_iters as u64;
        let mut history = Vec::new();
        while state.step < n_iters {
            let mut m = match self.step(state) {
                Ok(m) => m,
                Err(e) => {
                    if let (Error::Numerical(_), Some(d)) = (&e, &out.checkpoint_dir) {
                        self.checkpoint(state).save(&d.join(CRASH_CHECKPOINT))?;
                    }
                    return Err(e);
                }
            };
            let every = self.cfg.eval_every as u64;
            if every > 0 && (m.step % every == 0 || m.step == n_iters) {
                let r = self.evaluate_uvp(&state.theta, self.cfg.eval_samples, derive_seed(self.cfg.seed, &[0xe7, m.step]))?;
                m.l2_uvp = r.map(|r| r.uvp_percent);
            }
            if let Some(l) = log.as_mut() {
                l.write(&m)?;
            }
            let ck = self.cfg.checkpoint_every as u64;
            if let (true, Some(d)) = (ck > 0 && m.step % ck == 0, &out.checkpoint_dir) {
                self.checkpoint(state).save(&d.join(checkpoint_name(m.step)))?;
            }
            history.push(m);
        }
        let final_uvp = self.evaluate_uvp(&state.theta, self.cfg.final_eval_samples, derive_seed(self.cfg.seed, &[0xf1a1]))?;
        Ok(TrainSummary { history, final_uvp })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{task_by_name, Distribution, Sampler};
    use ndarray::array;

    fn half_sq(dim: usize) -> (Network, ParamVector) {
        let net = Network::mlp(dim, &[3], Activation::Elu).unwrap();
        let p = ParamVector::zeros(net.layout().clone());
        (net, p)
    }

    #[test]
    fn dual_value_point_masses() {
        let (f, th) = half_sq(2);
        let a = array![[1.0, 2.0]];
        let b = array![[-3.0, 0.5]];
        // exact conjugate of ½‖x‖² at b is b
        let v = dual_value(&f, &th, &a, &b, &b).unwrap();
        let expect = -0.5 * 5.0 - 0.5 * 9.25;
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn dual_value_standard_normal() {
        let (f, th) = half_sq(2);
        let s = Sampler::new(Distribution::StandardNormal { dim: 2 }).unwrap();
        let n = 100_000;
        let x = s.sample(n, 1).unwrap();
        let y = s.sample(n, 2).unwrap();
        let v = dual_value(&f, &th, &x, &y, &y).unwrap();
        // Per-sample terms −½‖x‖² − ½‖y‖² have variance ½ + ½ = 1.
        let se = (1.0 / n as f64).sqrt();
        assert!((v + 2.0).abs() <= 3.0 * se, "{v}");
    }

    #[test]
    fn perturbed_conjugates_raise_the_dual() {
        let (f, th) = half_sq(2);
        let x = array![[0.1, 0.2], [1.0, -1.0]];
        let y = array![[0.5, 0.5], [-2.0, 1.0]];
        let exact = dual_value(&f, &th, &x, &y, &y).unwrap();
        let off = dual_value(&f, &th, &x, &(&y + 0.1), &y).unwrap();
        assert!(off > exact);
    }

    #[test]
    fn dual_grad_vanishes_for_permuted_conjugates() {
        let f = Network::icnn(2, &[4, 4], Activation::Elu, false).unwrap();
        let th = f.init_params_seeded(4);
        let x = array![[0.1, 0.2], [1.0, -1.0], [0.3, 0.9]];
        let xs = x.select(Axis(0), &[2, 0, 1]);
        let g = dual_grad(&f, &th, &x, &xs).unwrap();
        assert!(g.values.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn dual_grad_single_scale_parameter() {
        // f = exp(log_alpha)·½‖x‖² with zero MLP part: ∂f/∂log_alpha = f.
        let (f, th) = half_sq(2);
        let x = array![[1.0, 2.0], [0.0, 1.0]];
        let xs = array![[3.0, 0.0], [1.0, 1.0]];
        let g = dual_grad(&f, &th, &x, &xs).unwrap();
        let half_sq_mean = |a: &Array2<f64>| a.rows().into_iter().map(|r| 0.5 * r.dot(&r)).sum::<f64>() / a.nrows() as f64;
        let expect = -half_sq_mean(&x) + half_sq_mean(&xs);
        let i = th.layout.get("log_alpha").unwrap().offset;
        assert!((g.values[i] - expect).abs() < 1e-12);
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            n_iters: 6,
            batch_size: 32,
            potential: Architecture::Mlp {
                hidden: vec![8],
                activation: Activation::Elu,
            },
            amortizer: Architecture::InitNn {
                hidden: vec![8],
                activation: Activation::Elu,
            },
            pretrain: Some(PretrainConfig {
                n_iters: 20,
                batch_size: 64,
                held_out: 128,
                ..PretrainConfig::default()
            }),
            eval_every: 3,
            eval_samples: 256,
            final_eval_samples: 512,
            ..TrainConfig::synthetic()
        }
    }

    #[test]
    fn regression_without_solver_rejected() {
        let mut cfg = tiny_config();
        cfg.conjugate.solver = SolverKind::None;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.amortization = AmortLossKind::Objective;
        cfg.validate().unwrap();
    }

    #[test]
    fn presets() {
        let b = TrainConfig::benchmark(8);
        assert_eq!((b.n_iters, b.batch_size, b.lr_init), (250_000, 1024, 5e-4));
        assert_eq!((b.adam_beta1, b.adam_beta2, b.cosine_floor), (0.5, 0.5, 1e-4));
        assert_eq!(b.potential.hidden(), &[64, 64, 32]);
        let s = TrainConfig::synthetic();
        assert_eq!((s.n_iters, s.batch_size), (50_000, 10_000));
        assert_eq!(s.potential.hidden(), &[128, 128]);
        assert_eq!(s.conjugate.tol, 0.001);
        assert_eq!(s.conjugate.linesearch.candidates, 30);
        b.validate().unwrap();
        s.validate().unwrap();
    }

    #[test]
    fn equal_seeds_give_equal_logs() {
        let task = task_by_name("gauss_to_gauss_2d").unwrap();
        let tr = Trainer::new(task, tiny_config()).unwrap();
        let run = || {
            let (mut st, _) = tr.init_state().unwrap();
            let s = tr.run(&mut st, &RunOutput::default()).unwrap();
            (st, s)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        let strip = |h: &[StepMetrics]| h.iter().map(|m| StepMetrics { wall_ms: 0.0, ..m.clone() }).collect::<Vec<_>>();
        assert_eq!(strip(&sa.history), strip(&sb.history));
        assert!(sa.history[2].l2_uvp.is_some() && sa.history[0].l2_uvp.is_none());
        assert!(sa.final_uvp.is_some());
    }

    #[test]
    fn no_ground_truth_no_uvp() {
        let task = task_by_name("moons").unwrap();
        let tr = Trainer::new(task, tiny_config()).unwrap();
        let (mut st, _) = tr.init_state().unwrap();
        let s = tr.run(&mut st, &RunOutput::default()).unwrap();
        assert!(s.final_uvp.is_none());
        assert!(s.history.iter().all(|m| m.l2_uvp.is_none() && m.dual_value.is_finite()));
    }
}
