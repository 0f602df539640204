//! Losses for training the amortization model `x̃_φ(y) ≈ argmin_x J_f(x; y)`.
//!
//! The potential is held fixed: no loss produces a gradient for its
//! parameters, except the cycle loss when explicitly connected.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::diffcore::{mean, ParamVector};
use crate::error::{Error, Result};
use crate::potentials::{AmortModel, Network, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmortLossKind {
    /// `mean J_f(x̃(y); y)`
    Objective,
    /// `mean ‖∇f(x̃(y)) − y‖²`
    Cycle,
    /// `mean ‖x̃(y) − x̆(y)‖²` against solver outputs.
    Regression,
}

impl AmortLossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "objective" => Ok(Self::Objective),
            "cycle" => Ok(Self::Cycle),
            "regression" => Ok(Self::Regression),
            _ => Err(Error::config(format!("unknown amortization loss `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Objective => "objective",
            Self::Cycle => "cycle",
            Self::Regression => "regression",
        }
    }
}

/// Loss value with its adjoint with respect to the predictions.
#[derive(Clone, Debug)]
pub struct PredictionLoss {
    pub loss: f64,
    /// `∂loss/∂x̃`, one row per prediction.
    pub adjoint: Array2<f64>,
    /// Potential-parameter gradient; only the connected cycle loss has one.
    pub grad_theta: Option<Vec<f64>>,
}

fn check(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

pub fn loss_objective(f: &Network, theta: &ParamVector, x_tilde: &Array2<f64>, y: &Array2<f64>) -> Result<PredictionLoss> {
    check(x_tilde, y, "predictions and targets")?;
    let n = y.nrows() as f64;
    let (v, g) = f.value_and_grad_input(theta, x_tilde)?;
    let per_row: Vec<f64> = v
        .iter()
        .zip(x_tilde.rows())
        .zip(y.rows())
        .map(|((fv, x), y)| fv - x.dot(&y))
        .collect();
    Ok(PredictionLoss {
        loss: mean(&per_row),
        adjoint: (g - y) / n,
        grad_theta: None,
    })
}

pub fn loss_cycle(
    f: &Network,
    theta: &ParamVector,
    x_tilde: &Array2<f64>,
    y: &Array2<f64>,
    connect_potential: bool,
) -> Result<PredictionLoss> {
    check(x_tilde, y, "predictions and targets")?;
    let n = y.nrows() as f64;
    let resid = f.grad_input(theta, x_tilde)? - y;
    let per_row: Vec<f64> = resid.rows().into_iter().map(|r| r.dot(&r)).collect();
    let v = resid * (2.0 / n);
    let (adjoint, grad_theta) = f.directional_grad_adjoints(theta, x_tilde, &v)?;
    Ok(PredictionLoss {
        loss: mean(&per_row),
        adjoint,
        grad_theta: connect_potential.then_some(grad_theta),
    })
}

pub fn loss_regression(x_tilde: &Array2<f64>, x_star: &Array2<f64>) -> Result<PredictionLoss> {
    check(x_tilde, x_star, "predictions and solver targets")?;
    let n = x_star.nrows() as f64;
    let diff = x_tilde - x_star;
    let per_row: Vec<f64> = diff.rows().into_iter().map(|r| r.dot(&r)).collect();
    Ok(PredictionLoss {
        loss: mean(&per_row),
        adjoint: diff * (2.0 / n),
        grad_theta: None,
    })
}

/// Inputs to one amortization update.
pub struct AmortBatch<'a> {
    pub y: &'a Array2<f64>,
    /// `x̃_φ(y)` at the current amortizer parameters.
    pub x_tilde: &'a Array2<f64>,
    /// Fine-tuned solutions; required by the regression loss.
    pub x_star: Option<&'a Array2<f64>>,
}

#[derive(Clone, Debug)]
pub struct AmortLossGrad {
    pub loss: f64,
    pub grad_phi: Vec<f64>,
    pub grad_theta: Option<Vec<f64>>,
}

/// Loss of the selected kind and its gradient for the amortizer parameters.
#[allow(clippy::too_many_arguments)]
pub fn amortization_loss(
    kind: AmortLossKind,
    f: &Network,
    theta: &ParamVector,
    model: &AmortModel,
    phi: &ParamVector,
    batch: &AmortBatch<'_>,
    connect_potential: bool,
) -> Result<AmortLossGrad> {
    let pl = match kind {
        AmortLossKind::Objective => loss_objective(f, theta, batch.x_tilde, batch.y)?,
        AmortLossKind::Cycle => loss_cycle(f, theta, batch.x_tilde, batch.y, connect_potential)?,
        AmortLossKind::Regression => {
            let xs = batch
                .x_star
                .ok_or_else(|| Error::Contract("regression loss needs solver targets".into()))?;
            loss_regression(batch.x_tilde, xs)?
        }
    };
    let grad_phi = model.pullback(phi, batch.y, &pl.adjoint)?;
    Ok(AmortLossGrad {
        loss: pl.loss,
        grad_phi,
        grad_theta: pl.grad_theta,
    })
}
