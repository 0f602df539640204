//! Probability measures to couple: seeded samplers for synthetic 2-D
//! distributions and Gaussians, plus closed-form transport maps between
//! Gaussians used as ground truth.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::keyed_rng;

/// Distribution families understood by [`Sampler`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    PointMass { at: Vec<f64> },
    StandardNormal { dim: usize },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Equal-weight isotropic mixture.
    GaussianMixture { means: Vec<Vec<f64>>, std: f64 },
    /// Uniform on the dark cells of a 4x4 board covering `[-h, h]²`.
    Checkerboard { half_width: f64 },
    Moons { noise: f64 },
    Circles { inner: f64, outer: f64, noise: f64 },
    /// The S-curve manifold projected onto its two curved coordinates.
    SCurve { noise: f64 },
}

impl Distribution {
    pub fn eight_gaussians(radius: f64, std: f64) -> Self {
        let means = (0..8)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 8.0;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Distribution::GaussianMixture { means, std }
    }

    /// Parse a family from its serialized form, e.g. a config table.
    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::config(format!("distribution: {e}")))
    }
}

/// Immutable, thread-safe sampler. Sampling is a pure function of
/// `(sampler, n_batch, seed)`.
#[derive(Clone, Debug)]
pub struct Sampler {
    dist: Distribution,
    dim: usize,
    // Gaussian: (mean, cholesky factor)
    gaussian: Option<(Array1<f64>, Array2<f64>)>,
}

impl Sampler {
    pub fn new(dist: Distribution) -> Result<Self> {
        let mut gaussian = None;
        let dim = match &dist {
            Distribution::PointMass { at } => at.len(),
            Distribution::StandardNormal { dim } => *dim,
            Distribution::Gaussian { mean, cov } => {
                let cov = rows_to_array(cov)?;
                if cov.nrows() != mean.len() {
                    return Err(Error::config("gaussian mean and covariance sizes differ"));
                }
                linalg::check_spd(&cov, "gaussian covariance")?;
                gaussian = Some((Array1::from(mean.clone()), linalg::cholesky(&cov)?));
                mean.len()
            }
            Distribution::GaussianMixture { means, std } => {
                if means.is_empty() || *std < 0.0 {
                    return Err(Error::config("mixture needs components and std >= 0"));
                }
                let d = means[0].len();
                if means.iter().any(|m| m.len() != d) {
                    return Err(Error::config("mixture means have different sizes"));
                }
                d
            }
            Distribution::Checkerboard { half_width } => {
                if *half_width <= 0.0 {
                    return Err(Error::config("checkerboard half width must be positive"));
                }
                2
            }
            Distribution::Moons { .. } | Distribution::SCurve { .. } => 2,
            Distribution::Circles { inner, outer, .. } => {
                if *inner <= 0.0 || *outer <= 0.0 {
                    return Err(Error::config("circle radii must be positive"));
                }
                2
            }
        };
        if dim == 0 {
            return Err(Error::config("sampler dimension must be positive"));
        }
        Ok(Self { dist, dim, gaussian })
    }

    /// Build from a family name and a JSON parameter object.
    pub fn from_family(family: &str, params: serde_json::Value) -> Result<Self> {
        let mut obj = match params {
            serde_json::Value::Object(m) => m,
            serde_json::Value::Null => Default::default(),
            _ => return Err(Error::config("sampler parameters must be a table")),
        };
        obj.insert("family".into(), serde_json::Value::String(family.into()));
        Self::new(Distribution::from_json(serde_json::Value::Object(obj))?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    /// Draw `n_batch` samples as an `n_batch × dim` matrix.
    pub fn sample(&self, n_batch: usize, seed: u64) -> Result<Array2<f64>> {
        if n_batch == 0 {
            return Err(Error::config("n_batch must be at least 1"));
        }
        let mut rng = keyed_rng(seed, &[n_batch as u64]);
        let mut out = Array2::zeros((n_batch, self.dim));
        for mut row in out.rows_mut() {
            let point = self.draw(&mut rng);
            row.assign(&point);
        }
        Ok(out)
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Array1<f64> {
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        match &self.dist {
            Distribution::PointMass { at } => Array1::from(at.clone()),
            Distribution::StandardNormal { dim } => Array1::from_shape_fn(*dim, |_| normal()),
            Distribution::Gaussian { .. } => {
                let (mean, chol) = self.gaussian.as_ref().expect("validated in new");
                let z = Array1::from_shape_fn(self.dim, |_| normal());
                mean + &chol.dot(&z)
            }
            Distribution::GaussianMixture { means, std } => {
                let k = rng.random_range(0..means.len());
                Array1::from_shape_fn(self.dim, |i| {
                    means[k][i] + std * rng.sample::<f64, _>(StandardNormal)
                })
            }
            Distribution::Checkerboard { half_width } => {
                let cell = half_width / 2.0;
                // 8 dark cells of a 4x4 board: (i + j) even.
                let idx = rng.random_range(0..8usize);
                let i = idx / 2;
                let j = 2 * (idx % 2) + (i % 2);
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                Array1::from(vec![
                    -half_width + (i as f64 + u) * cell,
                    -half_width + (j as f64 + v) * cell,
                ])
            }
            Distribution::Moons { noise } => {
                let upper = rng.random_bool(0.5);
                let t = PI * rng.random::<f64>();
                let (x, y) = if upper {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let nx = rng.sample::<f64, _>(StandardNormal);
                let ny = rng.sample::<f64, _>(StandardNormal);
                // Centred at the origin.
                Array1::from(vec![x - 0.5 + noise * nx, y - 0.25 + noise * ny])
            }
            Distribution::Circles {
                inner,
                outer,
                noise,
            } => {
                let r = if rng.random_bool(0.5) { *inner } else { *outer };
                let a = 2.0 * PI * rng.random::<f64>();
                let nx = rng.sample::<f64, _>(StandardNormal);
                let ny = rng.sample::<f64, _>(StandardNormal);
                Array1::from(vec![r * a.cos() + noise * nx, r * a.sin() + noise * ny])
            }
            Distribution::SCurve { noise } => {
                let t = 3.0 * PI * (rng.random::<f64>() - 0.5);
                let x = t.sin();
                let z = t.signum() * (t.cos() - 1.0);
                let nx = rng.sample::<f64, _>(StandardNormal);
                let nz = rng.sample::<f64, _>(StandardNormal);
                Array1::from(vec![x + noise * nx, z + noise * nz])
            }
        }
    }
}

pub(crate) fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::config("ragged matrix rows"));
    }
    Ok(Array2::from_shape_fn((n, m), |(i, j)| rows[i][j]))
}

pub(crate) fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// The affine map `x ↦ linear · x + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub linear: Array2<f64>,
    pub offset: Array1<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            linear: Array2::eye(dim),
            offset: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Apply row-wise to a batch.
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.linear.t()) + &self.offset.view().insert_axis(Axis(0))
    }
}

/// Two Gaussians `N(mean_a, cov_a)` and `N(mean_b, cov_b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub mean_a: Array1<f64>,
    pub mean_b: Array1<f64>,
    pub cov_a: Array2<f64>,
    pub cov_b: Array2<f64>,
}

impl GaussianPair {
    pub fn new(
        mean_a: Array1<f64>,
        cov_a: Array2<f64>,
        mean_b: Array1<f64>,
        cov_b: Array2<f64>,
    ) -> Result<Self> {
        let n = mean_a.len();
        if mean_b.len() != n || cov_a.dim() != (n, n) || cov_b.dim() != (n, n) {
            return Err(Error::config("gaussian pair shapes are inconsistent"));
        }
        linalg::check_spd(&cov_a, "cov_a")?;
        linalg::check_spd(&cov_b, "cov_b")?;
        Ok(Self {
            mean_a,
            mean_b,
            cov_a,
            cov_b,
        })
    }

    /// Random pair with means from `N(0, I)` and covariance eigenvalues
    /// log-uniform in `[0.5, 0.5·cond]`.
    pub fn random(dim: usize, cond: f64, seed: u64) -> Result<Self> {
        let mut rng = keyed_rng(seed, &[dim as u64, 0x9a55]);
        let mut normal = |n| Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let mean_a = normal(dim);
        let mean_b = normal(dim);
        let cov_a = linalg::random_spd(dim, 0.5, cond, &mut rng);
        let cov_b = linalg::random_spd(dim, 0.5, cond, &mut rng);
        Self::new(mean_a, cov_a, mean_b, cov_b)
    }

    pub fn dim(&self) -> usize {
        self.mean_a.len()
    }

    pub fn sampler_a(&self) -> Result<Sampler> {
        Sampler::new(Distribution::Gaussian {
            mean: self.mean_a.to_vec(),
            cov: array_to_rows(&self.cov_a),
        })
    }

    pub fn sampler_b(&self) -> Result<Sampler> {
        Sampler::new(Distribution::Gaussian {
            mean: self.mean_b.to_vec(),
            cov: array_to_rows(&self.cov_b),
        })
    }

    /// Linear part of the optimal map,
    /// `A^{-1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2}` for covariances `A`, `B`.
    pub fn transport_matrix(&self) -> Result<Array2<f64>> {
        let a_half = linalg::sym_sqrt(&self.cov_a)?;
        let a_inv_half = linalg::sym_inv_sqrt(&self.cov_a)?;
        let middle = linalg::sym_sqrt(&a_half.dot(&self.cov_b).dot(&a_half))?;
        let m = a_inv_half.dot(&middle).dot(&a_inv_half);
        Ok((&m + &m.t()) * 0.5)
    }
}

/// Closed-form optimal map between the two Gaussians of `pair`.
pub fn gaussian_ground_truth_map(pair: &GaussianPair) -> Result<AffineMap> {
    linalg::check_spd(&pair.cov_a, "cov_a")?;
    linalg::check_spd(&pair.cov_b, "cov_b")?;
    let m = pair.transport_matrix()?;
    let offset = &pair.mean_b - &m.dot(&pair.mean_a);
    Ok(AffineMap { linear: m, offset })
}

/// A transport problem between two measures.
#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub name: String,
    pub alpha: Sampler,
    pub beta: Sampler,
    pub ground_truth: Option<AffineMap>,
}

impl TaskSpec {
    pub fn new(
        name: impl Into<String>,
        alpha: Sampler,
        beta: Sampler,
        ground_truth: Option<AffineMap>,
    ) -> Result<Self> {
        if alpha.dim() != beta.dim() {
            return Err(Error::config("alpha and beta dimensions differ"));
        }
        if let Some(gt) = &ground_truth {
            if gt.dim() != alpha.dim() {
                return Err(Error::config("ground truth map dimension differs"));
            }
        }
        Ok(Self {
            name: name.into(),
            alpha,
            beta,
            ground_truth,
        })
    }

    pub fn from_gaussian_pair(name: impl Into<String>, pair: &GaussianPair) -> Result<Self> {
        Self::new(
            name,
            pair.sampler_a()?,
            pair.sampler_b()?,
            Some(gaussian_ground_truth_map(pair)?),
        )
    }

    pub fn dim(&self) -> usize {
        self.alpha.dim()
    }

    /// The same problem with the roles of the two measures exchanged.
    /// Ground truth is dropped unless it can be inverted (affine maps).
    pub fn reversed(&self) -> Result<Self> {
        let gt = match &self.ground_truth {
            Some(map) => {
                let inv = linalg::sym_matrix_fn(&map.linear, |v| 1.0 / v)?;
                let offset = -inv.dot(&map.offset);
                Some(AffineMap { linear: inv, offset })
            }
            None => None,
        };
        Self::new(
            format!("{}_reversed", self.name),
            self.beta.clone(),
            self.alpha.clone(),
            gt,
        )
    }
}

/// Seed used to draw the fixed covariances of the registry's Gaussian tasks.
pub const REGISTRY_GAUSSIAN_SEED: u64 = 2022;

fn standard_normal_2d() -> Sampler {
    Sampler::new(Distribution::StandardNormal { dim: 2 }).expect("valid")
}

/// Named tasks addressable from the command line.
pub fn synthetic_task_registry() -> Vec<TaskSpec> {
    let mut tasks = Vec::new();
    let to = |name: &str, beta: Distribution| {
        TaskSpec::new(name, standard_normal_2d(), Sampler::new(beta).expect("valid"), None)
            .expect("valid")
    };
    tasks.push(to("gauss_to_ring", Distribution::eight_gaussians(4.0, 0.1)));
    tasks.push(to("checkerboard", Distribution::Checkerboard { half_width: 2.0 }));
    tasks.push(to("moons", Distribution::Moons { noise: 0.05 }));
    tasks.push(to(
        "circles",
        Distribution::Circles {
            inner: 1.0,
            outer: 2.0,
            noise: 0.03,
        },
    ));
    tasks.push(to("s_curve", Distribution::SCurve { noise: 0.05 }));
    for dim in [2usize, 4, 8, 16] {
        let pair = GaussianPair::random(dim, 10.0, REGISTRY_GAUSSIAN_SEED).expect("valid");
        tasks.push(
            TaskSpec::from_gaussian_pair(format!("gauss_to_gauss_{dim}d"), &pair).expect("valid"),
        );
    }
    tasks
}

pub fn task_by_name(name: &str) -> Result<TaskSpec> {
    synthetic_task_registry()
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::config(format!("unknown task `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn point_mass_is_degenerate() {
        let s = Sampler::new(Distribution::PointMass { at: vec![0.0, 0.0] }).unwrap();
        assert_eq!(s.sample(3, 1).unwrap(), Array2::<f64>::zeros((3, 2)));
    }

    #[test]
    fn zero_batch_rejected() {
        let s = standard_normal_2d();
        assert!(matches!(s.sample(0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_family_is_config_error() {
        let err = Sampler::from_family("swiss_roll", serde_json::json!({})).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let ok = Sampler::from_family("moons", serde_json::json!({"noise": 0.1})).unwrap();
        assert_eq!(ok.dim(), 2);
    }

    #[test]
    fn standard_normal_mean_within_clt_bound() {
        let s = Sampler::new(Distribution::StandardNormal { dim: 2 }).unwrap();
        let x = s.sample(100_000, 11).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        // 3 sigma / sqrt(N) ≈ 0.0095, the stated 0.02 bound is looser.
        assert!(mean.iter().all(|m| m.abs() < 0.02), "{mean}");
    }

    #[test]
    fn ring_norms_within_five_sigma() {
        let s = Sampler::new(Distribution::eight_gaussians(4.0, 0.1)).unwrap();
        let x = s.sample(20_000, 5).unwrap();
        for row in x.rows() {
            let r = row.dot(&row).sqrt();
            // |‖x‖ - 4| ≤ ‖noise‖, and ‖noise‖ of a 2-D normal exceeds 5σ with
            // probability e^{-12.5} per draw.
            assert!((r - 4.0).abs() <= 0.5, "{r}");
        }
    }

    #[test]
    fn checkerboard_lands_on_dark_cells() {
        let s = Sampler::new(Distribution::Checkerboard { half_width: 2.0 }).unwrap();
        let x = s.sample(5000, 3).unwrap();
        for row in x.rows() {
            assert!(row.iter().all(|v| (-2.0..=2.0).contains(v)));
            let i = ((row[0] + 2.0).floor() as i64).min(3);
            let j = ((row[1] + 2.0).floor() as i64).min(3);
            assert_eq!((i + j) % 2, 0);
        }
    }

    #[test]
    fn circles_radii() {
        let s = Sampler::new(Distribution::Circles {
            inner: 1.0,
            outer: 2.0,
            noise: 0.0,
        })
        .unwrap();
        let x = s.sample(1000, 3).unwrap();
        for row in x.rows() {
            let r = row.dot(&row).sqrt();
            assert!((r - 1.0).abs() < 1e-12 || (r - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_ground_truth_for_equal_measures() {
        let pair =
            GaussianPair::new(array![0.0, 0.0], Array2::eye(2), array![0.0, 0.0], Array2::eye(2))
                .unwrap();
        let map = gaussian_ground_truth_map(&pair).unwrap();
        for (a, b) in map.linear.iter().zip(Array2::<f64>::eye(2).iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(map.offset.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn scalar_scaling_ground_truth() {
        let pair = GaussianPair::new(
            array![0.0, 0.0],
            Array2::eye(2),
            array![0.0, 0.0],
            Array2::eye(2) * 4.0,
        )
        .unwrap();
        let map = gaussian_ground_truth_map(&pair).unwrap();
        for (a, b) in map.linear.iter().zip((Array2::<f64>::eye(2) * 2.0).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn commuting_covariances_satisfy_bures_identity() {
        let cov_a = array![[2.0, 0.0], [0.0, 4.0]];
        let cov_b = array![[3.0, 0.0], [0.0, 0.5]];
        let pair =
            GaussianPair::new(array![1.0, -1.0], cov_a.clone(), array![0.0, 2.0], cov_b.clone())
                .unwrap();
        let m = gaussian_ground_truth_map(&pair).unwrap().linear;
        // Commuting diagonal case: M = diag(sqrt(b_i / a_i)).
        let oracle = array![[(3.0f64 / 2.0).sqrt(), 0.0], [0.0, (0.5f64 / 4.0).sqrt()]];
        for (a, b) in m.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let resid = m.dot(&m).dot(&cov_a) - &cov_b;
        assert!(resid.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn non_spd_pair_is_config_error() {
        let bad = array![[1.0, 2.0], [2.0, 1.0]];
        let err = GaussianPair::new(array![0.0, 0.0], bad, array![0.0, 0.0], Array2::eye(2));
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn registry_contract() {
        let reg = synthetic_task_registry();
        assert!(reg.len() >= 6);
        assert!(task_by_name("gauss_to_gauss_2d").unwrap().ground_truth.is_some());
        assert!(task_by_name("moons").unwrap().ground_truth.is_none());
        assert!(task_by_name("nope").is_err());
        for t in &reg {
            assert_eq!(t.alpha.dim(), t.beta.dim());
        }
    }
}
