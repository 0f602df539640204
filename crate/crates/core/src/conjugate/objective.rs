use ndarray::{Array2, ArrayView2, Axis};

use crate::diffcore::ParamVector;
use crate::error::{Error, Result};
use crate::potentials::Network;

/// A batched scalar potential `f: Rⁿ → R` with input gradients.
///
/// Implementations must be row-local: the value for a row depends on that
/// row only.
pub trait Potential {
    fn dim(&self) -> usize;
    fn values(&self, x: &Array2<f64>) -> Result<Vec<f64>>;
    fn values_and_grads(&self, x: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)>;
}

/// A network potential at fixed parameters.
#[derive(Clone, Copy)]
pub struct NetworkPotential<'a> {
    pub net: &'a Network,
    pub params: &'a ParamVector,
}

impl<'a> NetworkPotential<'a> {
    pub fn new(net: &'a Network, params: &'a ParamVector) -> Self {
        Self { net, params }
    }
}

impl Potential for NetworkPotential<'_> {
    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn values(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        self.net.values(self.params, x)
    }

    fn values_and_grads(&self, x: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        self.net.value_and_grad_input(self.params, x)
    }
}

/// `f(x) = ½ xᵀ A x + bᵀ x` with symmetric `A`.
#[derive(Clone, Debug)]
pub struct QuadraticPotential {
    pub a: Array2<f64>,
    pub b: Option<ndarray::Array1<f64>>,
}

impl QuadraticPotential {
    pub fn new(a: Array2<f64>) -> Self {
        Self { a, b: None }
    }

    /// `½‖x‖²`, whose conjugate is itself.
    pub fn half_sq_norm(dim: usize) -> Self {
        Self::new(Array2::eye(dim))
    }
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn values(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.values_and_grads(x)?.0)
    }

    fn values_and_grads(&self, x: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        if x.ncols() != self.dim() {
            return Err(Error::dim("quadratic potential input width"));
        }
        let mut grads = Array2::zeros(x.dim());
        let mut vals = Vec::with_capacity(x.nrows());
        for (r, row) in x.rows().into_iter().enumerate() {
            let mut ax = self.a.dot(&row);
            let mut v = 0.5 * row.dot(&ax);
            if let Some(b) = &self.b {
                v += b.dot(&row);
                ax += b;
            }
            vals.push(v);
            grads.row_mut(r).assign(&ax);
        }
        Ok((vals, grads))
    }
}

/// `J(x; y) = f(x) − ⟨x, y⟩` for a batch of targets `y`.
pub struct ConjugateObjective<'a> {
    f: &'a dyn Potential,
    y: ArrayView2<'a, f64>,
}

impl<'a> ConjugateObjective<'a> {
    pub fn new(f: &'a dyn Potential, y: ArrayView2<'a, f64>) -> Result<Self> {
        if y.ncols() != f.dim() {
            return Err(Error::dim(format!(
                "targets have {} columns, potential dimension is {}",
                y.ncols(),
                f.dim()
            )));
        }
        Ok(Self { f, y })
    }

    pub fn n_rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn targets(&self) -> ArrayView2<'a, f64> {
        self.y
    }

    fn check(&self, x: &Array2<f64>, rows: &[usize]) -> Result<()> {
        if x.nrows() != rows.len() || x.ncols() != self.dim() {
            return Err(Error::dim("points and row indices disagree"));
        }
        Ok(())
    }

    /// `J(x_k; y_{rows[k]})` for each row `k` of `x`.
    pub fn values_at(&self, x: &Array2<f64>, rows: &[usize]) -> Result<Vec<f64>> {
        self.check(x, rows)?;
        let mut v = self.f.values(x)?;
        for (k, &r) in rows.iter().enumerate() {
            v[k] -= x.row(k).dot(&self.y.row(r));
        }
        Ok(v)
    }

    /// Values and gradients `∇f(x) − y`.
    pub fn values_grads_at(&self, x: &Array2<f64>, rows: &[usize]) -> Result<(Vec<f64>, Array2<f64>)> {
        self.check(x, rows)?;
        let (mut v, mut g) = self.f.values_and_grads(x)?;
        for (k, &r) in rows.iter().enumerate() {
            let yr = self.y.row(r);
            v[k] -= x.row(k).dot(&yr);
            g.row_mut(k).zip_mut_with(&yr, |gv, yv| *gv -= yv);
        }
        Ok((v, g))
    }

    pub fn values_all(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        let rows: Vec<usize> = (0..self.n_rows()).collect();
        self.values_at(x, &rows)
    }

    pub fn values_grads_all(&self, x: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let rows: Vec<usize> = (0..self.n_rows()).collect();
        self.values_grads_at(x, &rows)
    }
}

pub(crate) fn gather_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

pub(crate) fn inf_norm<'b>(v: impl IntoIterator<Item = &'b f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| if x.abs() > m || x.is_nan() { x.abs() } else { m })
}
