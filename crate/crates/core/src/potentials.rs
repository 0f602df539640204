//! Potential and amortization architectures.
//!
//! * [`Architecture::Icnn`]: input-convex network. The `z` path uses
//!   softplus-positive kernels, activations are convex and nondecreasing and
//!   ActNorm scales are `exp(log_scale) > 0`, so the output is convex in `x`
//!   for every parameter value.
//! * [`Architecture::Mlp`]: unconstrained scalar potential.
//! * [`Architecture::InitNn`]: direct amortization model `y ↦ y + r(y)`.
//!
//! Both potentials end with an activation and add `exp(log_alpha)·½‖x‖²`.

use std::ops::Deref;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffcore::{mean, Activation, Graph, GraphBuilder, ParamVector};
use crate::error::{Error, Result};
use crate::measures::Sampler;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{derive_seed, keyed_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Icnn {
        hidden: Vec<usize>,
        activation: Activation,
        actnorm: bool,
    },
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
    InitNn {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

impl Architecture {
    pub fn build(&self, dim: usize) -> Result<Network> {
        if dim == 0 {
            return Err(Error::config("input dimension must be positive"));
        }
        let graph = match self {
            Architecture::Icnn {
                hidden,
                activation,
                actnorm,
            } => build_icnn(dim, hidden, *activation, *actnorm)?,
            Architecture::Mlp { hidden, activation } => build_mlp(dim, hidden, *activation),
            Architecture::InitNn { hidden, activation } => build_init_nn(dim, hidden, *activation),
        };
        Ok(Network {
            arch: self.clone(),
            dim,
            graph,
        })
    }

    pub fn is_potential(&self) -> bool {
        !matches!(self, Architecture::InitNn { .. })
    }

    pub fn hidden(&self) -> &[usize] {
        match self {
            Architecture::Icnn { hidden, .. }
            | Architecture::Mlp { hidden, .. }
            | Architecture::InitNn { hidden, .. } => hidden,
        }
    }
}

/// Hidden sizes used for `dim`-dimensional benchmark-style problems.
pub fn default_hidden_nd(dim: usize) -> Vec<usize> {
    vec![(2 * dim).max(64), (2 * dim).max(64), dim.max(32)]
}

/// Hidden sizes used for 2-D synthetic problems.
pub fn default_hidden_2d() -> Vec<usize> {
    vec![128, 128]
}

pub fn default_amortizer_hidden() -> Vec<usize> {
    vec![512, 512]
}

fn build_icnn(dim: usize, hidden: &[usize], act: Activation, actnorm: bool) -> Result<Graph> {
    if hidden.is_empty() {
        return Err(Error::config("icnn needs at least one hidden layer"));
    }
    if !act.is_convex_monotone() {
        return Err(Error::config("icnn activation must be convex and nondecreasing"));
    }
    let mut b = GraphBuilder::new(dim);
    let x = b.input();
    let z = b.dense(x, hidden[0], "w_x.0", true);
    let mut z = b.act(z, act);
    for (i, &h) in hidden.iter().enumerate().skip(1) {
        let wz = b.positive_dense(z, h, &format!("w_z.{}", i - 1), false);
        let wx = b.dense(x, h, &format!("w_x.{i}"), true);
        z = b.add(wz, wx);
        if actnorm {
            z = b.actnorm(z, &format!("actnorm.{}", i - 1));
        }
        z = b.act(z, act);
    }
    let wz = b.positive_dense(z, 1, &format!("w_z.{}", hidden.len() - 1), false);
    let wx = b.dense(x, 1, &format!("w_x.{}", hidden.len()), true);
    let y = b.add(wz, wx);
    let y = b.act(y, act);
    let q = b.half_sq_norm(x, "log_alpha");
    b.add(y, q);
    Ok(b.finish())
}

fn build_mlp(dim: usize, hidden: &[usize], act: Activation) -> Graph {
    let mut b = GraphBuilder::new(dim);
    let x = b.input();
    let mut z = x;
    for (i, &h) in hidden.iter().enumerate() {
        z = b.dense(z, h, &format!("dense.{i}"), true);
        z = b.act(z, act);
    }
    let z = b.dense(z, 1, &format!("dense.{}", hidden.len()), true);
    let z = b.act(z, act);
    let q = b.half_sq_norm(x, "log_alpha");
    b.add(z, q);
    b.finish()
}

fn build_init_nn(dim: usize, hidden: &[usize], act: Activation) -> Graph {
    let mut b = GraphBuilder::new(dim);
    let x = b.input();
    let mut z = x;
    for (i, &h) in hidden.iter().enumerate() {
        z = b.dense(z, h, &format!("dense.{i}"), true);
        z = b.act(z, act);
    }
    let r = b.dense(z, dim, &format!("dense.{}", hidden.len()), true);
    // passthrough: identity at zero residual
    b.add(x, r);
    b.finish()
}

/// A concrete network for a fixed input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    arch: Architecture,
    dim: usize,
    graph: Graph,
}

impl Deref for Network {
    type Target = Graph;

    fn deref(&self) -> &Graph {
        &self.graph
    }
}

impl Network {
    pub fn icnn(dim: usize, hidden: &[usize], activation: Activation, actnorm: bool) -> Result<Self> {
        Architecture::Icnn {
            hidden: hidden.to_vec(),
            activation,
            actnorm,
        }
        .build(dim)
    }

    pub fn mlp(dim: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        Architecture::Mlp {
            hidden: hidden.to_vec(),
            activation,
        }
        .build(dim)
    }

    pub fn init_nn(dim: usize, hidden: &[usize], activation: Activation) -> Result<Self> {
        Architecture::InitNn {
            hidden: hidden.to_vec(),
            activation,
        }
        .build(dim)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn init_params_seeded(&self, seed: u64) -> ParamVector {
        self.graph.init_params(&mut keyed_rng(seed, &[0x1a17]))
    }

    /// Parameters whose final residual dense layer is zero (InitNN only),
    /// i.e. the exact identity map.
    pub fn zero_residual(&self, params: &ParamVector) -> Result<ParamVector> {
        let Architecture::InitNn { hidden, .. } = &self.arch else {
            return Err(Error::config("zero_residual applies to InitNN only"));
        };
        let mut p = params.clone();
        let last = hidden.len();
        p.tensor_mut(&format!("dense.{last}.kernel"))?.fill(0.0);
        p.tensor_mut(&format!("dense.{last}.bias"))?.fill(0.0);
        Ok(p)
    }
}

/// A parameterized map `Rⁿ → Rⁿ` with a parameter pullback.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn apply(&self, params: &ParamVector, x: &Array2<f64>) -> Result<Array2<f64>>;
    /// Parameter gradient of `Σ_r ⟨out_bar_r, F(x_r)⟩`.
    fn pullback(&self, params: &ParamVector, x: &Array2<f64>, out_bar: &Array2<f64>) -> Result<Vec<f64>>;
}

/// `x ↦ ∇ₓf(x)` for a scalar potential.
pub struct GradientField<'a>(pub &'a Network);

impl VectorField for GradientField<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, params: &ParamVector, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.0.grad_input(params, x)
    }

    fn pullback(&self, params: &ParamVector, x: &Array2<f64>, out_bar: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.0.directional_grad_adjoints(params, x, out_bar)?.1)
    }
}

/// Amortization model predicting conjugate argmins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "network", rename_all = "snake_case")]
pub enum AmortModel {
    /// The network output is the prediction.
    Direct(Network),
    /// The prediction is the input gradient of a scalar network.
    Gradient(Network),
}

impl AmortModel {
    pub fn new(arch: &Architecture, dim: usize) -> Result<Self> {
        let net = arch.build(dim)?;
        Ok(if arch.is_potential() {
            AmortModel::Gradient(net)
        } else {
            AmortModel::Direct(net)
        })
    }

    pub fn network(&self) -> &Network {
        match self {
            AmortModel::Direct(n) | AmortModel::Gradient(n) => n,
        }
    }

    pub fn predict(&self, params: &ParamVector, y: &Array2<f64>) -> Result<Array2<f64>> {
        self.apply(params, y)
    }
}

impl VectorField for AmortModel {
    fn dim(&self) -> usize {
        self.network().dim()
    }

    fn apply(&self, params: &ParamVector, y: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            AmortModel::Direct(n) => n.forward(params, y),
            AmortModel::Gradient(n) => n.grad_input(params, y),
        }
    }

    fn pullback(&self, params: &ParamVector, y: &Array2<f64>, out_bar: &Array2<f64>) -> Result<Vec<f64>> {
        match self {
            AmortModel::Direct(n) => Ok(n.vjp(params, y, out_bar)?.1),
            AmortModel::Gradient(n) => GradientField(n).pullback(params, y, out_bar),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub n_iters: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub held_out: usize,
    /// Held-out loss above this raises the warning flag.
    pub target_loss: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            n_iters: 2000,
            lr: 1e-3,
            batch_size: 1024,
            held_out: 4096,
            target_loss: 1e-2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub params: ParamVector,
    pub initial_loss: f64,
    pub held_out_loss: f64,
    /// The held-out loss did not reach `target_loss`.
    pub warning: bool,
}

/// Mean over rows of `‖F(x) − x‖²`.
pub fn identity_loss(field: &dyn VectorField, params: &ParamVector, x: &Array2<f64>) -> Result<f64> {
    let out = field.apply(params, x)?;
    let per_row: Vec<f64> = (&out - x).rows().into_iter().map(|r| r.dot(&r)).collect();
    Ok(mean(&per_row))
}

/// Fit `field ≈ identity` on samples of `sampler` with Adam.
pub fn pretrain_identity(
    field: &dyn VectorField,
    params: &ParamVector,
    sampler: &Sampler,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<PretrainReport> {
    if sampler.dim() != field.dim() {
        return Err(Error::dim("sampler and model dimensions differ"));
    }
    let held = sampler.sample(cfg.held_out.max(1), derive_seed(seed, &[0x4e1d]))?;
    let initial_loss = identity_loss(field, params, &held)?;
    let mut p = params.clone();
    let mut adam = AdamState::new(p.len());
    let adam_cfg = AdamConfig::default();
    if initial_loss > 0.0 {
        for it in 0..cfg.n_iters {
            let x = sampler.sample(cfg.batch_size, derive_seed(seed, &[0x97e7, it as u64]))?;
            let out = field.apply(&p, &x)?;
            let scale = 2.0 / x.nrows() as f64;
            let resid = (&out - &x) * scale;
            let grad = field.pullback(&p, &x, &resid)?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "identity pretraining diverged at iteration {it}"
                )));
            }
            adam.step(&mut p.values, &grad, cfg.lr, &adam_cfg);
        }
    }
    let held_out_loss = identity_loss(field, &p, &held)?;
    if !held_out_loss.is_finite() {
        return Err(Error::Numerical("identity pretraining produced a non-finite loss".into()));
    }
    Ok(PretrainReport {
        params: p,
        initial_loss,
        held_out_loss,
        warning: held_out_loss > cfg.target_loss,
    })
}
