//! Transport-map metrics, a brute-force conjugation oracle and figure
//! exports.

pub mod svg;

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::conjugate::{conjugate, Potential, SolverConfig};
use crate::diffcore::{mean, pairwise_sum};
use crate::error::{Error, Result};
use crate::measures::Sampler;
use crate::rng::derive_seed;

/// A batched map `Rⁿ → Rⁿ`.
pub type MapFn<'a> = dyn Fn(&Array2<f64>) -> Result<Array2<f64>> + 'a;

/// Below this the denominator of the unexplained-variance ratio is treated
/// as zero.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UvpReport {
    pub uvp_percent: f64,
    pub n_samples: usize,
    /// Total variance `E‖y − Ey‖²` of the target measure.
    pub variance_beta: f64,
    /// Monte-Carlo standard error of `uvp_percent` (delta method over the
    /// numerator and denominator samples).
    pub std_error: f64,
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|v| (v - m) * (v - m)).collect();
    (pairwise_sum(&dev) / (xs.len() - 1) as f64).sqrt()
}

/// Total variance of the rows of `y` and the per-row squared deviations.
pub fn total_variance(y: &Array2<f64>) -> (f64, Vec<f64>) {
    let n = y.nrows();
    let mu: Array1<f64> = y
        .columns()
        .into_iter()
        .map(|c| pairwise_sum(&c.to_vec()) / n as f64)
        .collect();
    let sq: Vec<f64> = y
        .rows()
        .into_iter()
        .map(|r| {
            let d = &r - &mu;
            d.dot(&d)
        })
        .collect();
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    (pairwise_sum(&sq) / denom, sq)
}

/// `100 · E_α‖T(x) − T*(x)‖² / Var(β)`, by Monte Carlo.
pub fn l2_uvp(t: &MapFn<'_>, t_star: &MapFn<'_>, alpha: &Sampler, beta: &Sampler, n: usize, seed: u64) -> Result<UvpReport> {
    let x = alpha.sample(n, derive_seed(seed, &[0xa1]))?;
    let y = beta.sample(n, derive_seed(seed, &[0xb2]))?;
    let (var, sq) = total_variance(&y);
    if !(var >= MIN_VARIANCE) {
        return Err(Error::DegenerateMeasure(format!(
            "target variance {var:e} is below {MIN_VARIANCE:e}"
        )));
    }
    let a = t(&x)?;
    let b = t_star(&x)?;
    if a.dim() != b.dim() || a.dim() != x.dim() {
        return Err(Error::dim("map outputs disagree with the input shape"));
    }
    let d: Vec<f64> = (&a - &b).rows().into_iter().map(|r| r.dot(&r)).collect();
    let num = mean(&d);
    let uvp = 100.0 * num / var;
    let nf = n as f64;
    let se_num = 100.0 / var * sample_sd(&d) / nf.sqrt();
    let se_den = 100.0 * num / (var * var) * sample_sd(&sq) / nf.sqrt();
    Ok(UvpReport {
        uvp_percent: uvp,
        n_samples: n,
        variance_beta: var,
        std_error: (se_num * se_num + se_den * se_den).sqrt(),
    })
}

/// Axis-aligned square grid `[lo, hi]^dim` with `resolution` points per
/// axis, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, resolution: usize) -> Result<Self> {
        if !(hi > lo) || resolution < 2 {
            return Err(Error::config("grid needs hi > lo and at least two points per axis"));
        }
        Ok(Self { lo, hi, resolution })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.resolution - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.resolution {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    /// All grid points; in 2-D row `i·res + k` is `(coord(k), coord(i))`.
    pub fn points(&self, dim: usize) -> Result<Array2<f64>> {
        let r = self.resolution;
        match dim {
            1 => Ok(Array2::from_shape_fn((r, 1), |(i, _)| self.coord(i))),
            2 => Ok(Array2::from_shape_fn((r * r, 2), |(p, c)| {
                if c == 0 {
                    self.coord(p % r)
                } else {
                    self.coord(p / r)
                }
            })),
            _ => Err(Error::dim("grids are supported in one or two dimensions")),
        }
    }
}

const GRID_CHUNK: usize = 16384;

fn potential_on(f: &dyn Potential, pts: &Array2<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pts.nrows());
    let mut start = 0;
    while start < pts.nrows() {
        let end = (start + GRID_CHUNK).min(pts.nrows());
        let chunk = pts.slice(ndarray::s![start..end, ..]).to_owned();
        out.extend(f.values(&chunk)?);
        start = end;
    }
    Ok(out)
}

/// Exhaustive minimization of `J(·; y)` over a fixed grid. The potential is
/// evaluated once and reused for every query.
pub struct GridOracle {
    pub grid: GridSpec,
    points: Array2<f64>,
    f_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridMin {
    pub x: Vec<f64>,
    pub j: f64,
}

impl GridOracle {
    pub fn new(f: &dyn Potential, grid: GridSpec) -> Result<Self> {
        let points = grid.points(f.dim())?;
        let f_values = potential_on(f, &points)?;
        Ok(Self { grid, points, f_values })
    }

    pub fn solve(&self, y: &[f64]) -> Result<GridMin> {
        if y.len() != self.points.ncols() {
            return Err(Error::dim("query dimension differs from the grid"));
        }
        let mut best = (f64::INFINITY, 0);
        for (p, row) in self.points.rows().into_iter().enumerate() {
            let j = self.f_values[p] - row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            if j < best.0 {
                best = (j, p);
            }
        }
        Ok(GridMin {
            x: self.points.row(best.1).to_vec(),
            j: best.0,
        })
    }
}

/// One-shot grid minimization of `J(·; y)`.
pub fn grid_conjugate_oracle(f: &dyn Potential, y: &[f64], grid: GridSpec) -> Result<GridMin> {
    GridOracle::new(f, grid)?.solve(y)
}

/// Source samples and their images.
#[derive(Clone, Debug)]
pub struct PushForward {
    pub source: Array2<f64>,
    pub mapped: Array2<f64>,
}

pub fn pushforward_export(map: &MapFn<'_>, sampler: &Sampler, n: usize, seed: u64) -> Result<PushForward> {
    let source = sampler.sample(n, seed)?;
    let mapped = map(&source)?;
    if mapped.dim() != source.dim() {
        return Err(Error::dim("map changed the sample shape"));
    }
    Ok(PushForward { source, mapped })
}

/// Points along `(1 − t)·x + t·T(x)` for each `t`.
pub fn interpolation_export(push: &PushForward, t_values: &[f64]) -> Result<Vec<(f64, Array2<f64>)>> {
    t_values
        .iter()
        .map(|&t| {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(format!("interpolation time {t} outside [0, 1]")));
            }
            let pts = if t == 0.0 {
                push.source.clone()
            } else if t == 1.0 {
                push.mapped.clone()
            } else {
                &push.source * (1.0 - t) + &push.mapped * t
            };
            Ok((t, pts))
        })
        .collect()
}

/// `J(x; y)` on a 2-D grid with the cells above `J(y; y)` masked.
#[derive(Clone, Debug)]
pub struct LandscapeGrid {
    pub y: Vec<f64>,
    pub grid: GridSpec,
    /// `j[[i, k]]` is the value at `(coord(k), coord(i))`.
    pub j: Array2<f64>,
    pub mask: Array2<bool>,
    pub j_at_y: f64,
    pub x_breve: Vec<f64>,
}

pub fn landscape_export(f: &dyn Potential, y: &[f64], grid: GridSpec, solver: &SolverConfig) -> Result<LandscapeGrid> {
    if f.dim() != 2 || y.len() != 2 {
        return Err(Error::dim("landscapes are two-dimensional"));
    }
    let pts = grid.points(2)?;
    let fv = potential_on(f, &pts)?;
    let yy = Array2::from_shape_vec((1, 2), y.to_vec()).map_err(|e| Error::dim(e.to_string()))?;
    let j_at_y = f.values(&yy)?[0] - (y[0] * y[0] + y[1] * y[1]);
    let r = grid.resolution;
    let mut j = Array2::zeros((r, r));
    let mut mask = Array2::from_elem((r, r), false);
    for (p, row) in pts.rows().into_iter().enumerate() {
        let v = fv[p] - (row[0] * y[0] + row[1] * y[1]);
        j[[p / r, p % r]] = v;
        mask[[p / r, p % r]] = v > j_at_y;
    }
    let sol = conjugate(f, &yy, &yy, solver)?;
    Ok(LandscapeGrid {
        y: y.to_vec(),
        grid,
        j,
        mask,
        j_at_y,
        x_breve: sol.x_star.row(0).to_vec(),
    })
}

/// Writes `set_id, t, x1..xn` rows.
pub fn write_points_csv(path: &Path, sets: &[(&str, f64, &Array2<f64>)]) -> Result<()> {
    let dim = sets.first().map(|s| s.2.ncols()).unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["set_id".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, t, pts) in sets {
        if pts.ncols() != dim {
            return Err(Error::dim("point sets differ in dimension"));
        }
        for row in pts.rows() {
            let mut rec = vec![id.to_string(), t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `x1, x2, j, masked` rows.
pub fn write_landscape_csv(path: &Path, land: &LandscapeGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["x1", "x2", "j", "masked"]).map_err(csv_err)?;
    let r = land.grid.resolution;
    for i in 0..r {
        for k in 0..r {
            w.write_record([
                land.grid.coord(k).to_string(),
                land.grid.coord(i).to_string(),
                land.j[[i, k]].to_string(),
                (land.mask[[i, k]] as u8).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
