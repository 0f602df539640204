//! Learning Euclidean Wasserstein-2 transport maps by maximizing the
//! Kantorovich dual over a parametric potential `f`, with the convex
//! conjugate `f*` predicted by an amortization model and fine-tuned by a
//! batched numerical solver.

pub mod amortization;
pub mod conjugate;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod measures;
pub mod optim;
pub mod potentials;
pub mod rng;
pub mod trainer;

pub use amortization::AmortLossKind;
pub use conjugate::{conjugate, ConjugateResult, LineSearchConfig, LineSearchMethod, SolverConfig, SolverKind, StopRule};
pub use diffcore::{Activation, ParamVector};
pub use error::{Error, Result};
pub use evaluation::UvpReport;
pub use measures::{task_by_name, Distribution, Sampler, TaskSpec};
pub use potentials::{AmortModel, Architecture, Network, PretrainConfig};
pub use trainer::{Checkpoint, RunOutput, TrainConfig, TrainState, Trainer};
