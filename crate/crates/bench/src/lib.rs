//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use w2dual_core::conjugate::QuadraticPotential;
use w2dual_core::linalg::random_spd;
use w2dual_core::rng::{derive_seed, keyed_rng};
use w2dual_core::{Activation, Distribution, Network, ParamVector, Sampler};

/// Random SPD quadratic (condition number ≤ 100) with `batch` targets.
pub fn quadratic_problem(dim: usize, batch: usize, seed: u64) -> (QuadraticPotential, Array2<f64>) {
    let mut rng = keyed_rng(seed, &[dim as u64]);
    let f = QuadraticPotential::new(random_spd(dim, 1.0, 100.0, &mut rng));
    (f, normal(dim, batch, derive_seed(seed, &[1])) * 3.0)
}

pub fn normal(dim: usize, n: usize, seed: u64) -> Array2<f64> {
    Sampler::new(Distribution::StandardNormal { dim })
        .and_then(|s| s.sample(n, seed))
        .expect("valid sampler")
}

/// Seeded ICNN with its parameters.
pub fn icnn(dim: usize, hidden: &[usize], seed: u64) -> (Network, ParamVector) {
    let net = Network::icnn(dim, hidden, Activation::Elu, false).expect("valid architecture");
    let p = net.init_params_seeded(seed);
    (net, p)
}
