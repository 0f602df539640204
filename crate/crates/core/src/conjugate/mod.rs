//! Batched numerical solution of the conjugate problem
//! `x̆(y) = argmin_x f(x) − ⟨x, y⟩`.
//!
//! Each row is solved independently and frozen as soon as it meets the
//! stopping rule, so a row's result is bit-identical to solving it alone.

mod adam;
mod lbfgs;
mod linesearch;
mod objective;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lbfgs::{LbfgsState, CURVATURE_EPS};
pub use linesearch::{
    armijo_condition, armijo_gap, search, wolfe_checks, LineSearchConfig, LineSearchMethod, LineSearchResult,
    StepOutcome, WolfeChecks,
};
pub use objective::{ConjugateObjective, NetworkPotential, Potential, QuadraticPotential};

use objective::inf_norm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Use the initial guess as is.
    None,
    Lbfgs,
    Adam,
}

impl SolverKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SolverKind::None),
            "lbfgs" => Ok(SolverKind::Lbfgs),
            "adam" => Ok(SolverKind::Adam),
            _ => Err(Error::config(format!("unknown conjugate solver `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::None => "none",
            SolverKind::Lbfgs => "lbfgs",
            SolverKind::Adam => "adam",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Every coordinate moved by less than `tol` in the last iteration.
    IterateChange,
    /// `‖∇J‖∞ ≤ tol`.
    GradInf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSolverConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamSolverConfig {
    fn default() -> Self {
        Self {
            lr_init: 0.1,
            lr_final: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub solver: SolverKind,
    pub max_iter: usize,
    pub tol: f64,
    pub stop_rule: StopRule,
    /// L-BFGS memory size.
    pub memory: usize,
    pub linesearch: LineSearchConfig,
    pub adam: AdamSolverConfig,
    /// Keep every row's objective trajectory.
    #[serde(default)]
    pub record_history: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl SolverConfig {
    /// Settings for the higher-dimensional benchmark pairs.
    pub fn benchmark() -> Self {
        Self {
            solver: SolverKind::Lbfgs,
            max_iter: 100,
            tol: 0.1,
            stop_rule: StopRule::IterateChange,
            memory: 10,
            linesearch: LineSearchConfig::new(LineSearchMethod::ParallelArmijo, 1.5, 10),
            adam: AdamSolverConfig::default(),
            record_history: false,
        }
    }

    /// Settings for the 2-D synthetic tasks.
    pub fn synthetic() -> Self {
        Self {
            tol: 0.001,
            linesearch: LineSearchConfig::new(LineSearchMethod::ParallelArmijo, 1.5, 30),
            ..Self::benchmark()
        }
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::config(format!("conjugate tol must be positive, got {}", self.tol)));
        }
        if self.memory == 0 {
            return Err(Error::config("L-BFGS memory must be positive"));
        }
        let a = &self.adam;
        if !(a.lr_init > 0.0 && a.lr_final > 0.0 && a.lr_final <= a.lr_init) {
            return Err(Error::config("adam learning rates must satisfy 0 < lr_final <= lr_init"));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        self.linesearch.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Converged,
    MaxIter,
    /// The line search accepted no candidate; the row stays at its last
    /// iterate.
    NoAcceptableStep,
    /// The objective or gradient became non-finite; the row stays at its
    /// last finite iterate.
    NonFinite,
    /// No solver ran.
    Skipped,
}

#[derive(Clone, Debug)]
pub struct ConjugateResult {
    pub x_star: Array2<f64>,
    pub j_values: Vec<f64>,
    pub grad_inf_norms: Vec<f64>,
    pub iters: Vec<usize>,
    pub status: Vec<RowStatus>,
    /// Objective evaluations per row, including the initial one.
    pub evaluations: Vec<usize>,
    /// Wolfe searches that fell back to an Armijo-only step, per row.
    pub wolfe_fallbacks: Vec<usize>,
    /// Objective value after each iteration, starting with the initial
    /// value, when requested.
    pub history: Option<Vec<Vec<f64>>>,
}

impl ConjugateResult {
    pub fn converged(&self) -> Vec<bool> {
        self.status.iter().map(|s| *s == RowStatus::Converged).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.j_values.len()
    }

    pub fn mean_iters(&self) -> f64 {
        let n = self.iters.len().max(1) as f64;
        self.iters.iter().sum::<usize>() as f64 / n
    }

    pub fn mean_grad_inf_norm(&self) -> f64 {
        crate::diffcore::mean(&self.grad_inf_norms)
    }

    pub fn n_failed(&self) -> usize {
        self.status
            .iter()
            .filter(|s| matches!(s, RowStatus::NonFinite | RowStatus::NoAcceptableStep))
            .count()
    }
}

/// Working state shared by the solvers.
pub(crate) struct Run {
    pub x: Array2<f64>,
    pub j: Vec<f64>,
    pub g: Array2<f64>,
    pub iters: Vec<usize>,
    pub status: Vec<RowStatus>,
    pub evaluations: Vec<usize>,
    pub wolfe_fallbacks: Vec<usize>,
    pub history: Option<Vec<Vec<f64>>>,
    pub active: Vec<usize>,
}

impl Run {
    fn into_result(self) -> ConjugateResult {
        let grad_inf_norms = self.g.rows().into_iter().map(|r| inf_norm(r.iter())).collect();
        ConjugateResult {
            x_star: self.x,
            j_values: self.j,
            grad_inf_norms,
            iters: self.iters,
            status: self.status,
            evaluations: self.evaluations,
            wolfe_fallbacks: self.wolfe_fallbacks,
            history: self.history,
        }
    }

    fn record(&mut self, row: usize) {
        if let Some(h) = self.history.as_mut() {
            h[row].push(self.j[row]);
        }
    }

    /// Stops rows that are done; returns whether `row` stopped.
    fn check_stop(&mut self, row: usize, max_change: f64, cfg: &SolverConfig) -> bool {
        let done = match cfg.stop_rule {
            StopRule::IterateChange => max_change < cfg.tol,
            StopRule::GradInf => inf_norm(self.g.row(row).iter()) <= cfg.tol,
        };
        if done {
            self.status[row] = RowStatus::Converged;
        }
        done
    }
}

fn row_finite(v: f64, g: ndarray::ArrayView1<'_, f64>) -> bool {
    v.is_finite() && g.iter().all(|x| x.is_finite())
}

/// Minimizes `f(x) − ⟨x, y⟩` for every row of `y`, starting from `x_init`.
pub fn conjugate(f: &dyn Potential, y: &Array2<f64>, x_init: &Array2<f64>, cfg: &SolverConfig) -> Result<ConjugateResult> {
    cfg.validate()?;
    if x_init.dim() != y.dim() {
        return Err(Error::dim(format!(
            "initial points {:?} and targets {:?} differ in shape",
            x_init.dim(),
            y.dim()
        )));
    }
    let obj = ConjugateObjective::new(f, y.view())?;
    let n = y.nrows();
    let (j, g) = obj.values_grads_all(x_init)?;
    let mut run = Run {
        x: x_init.clone(),
        j,
        g,
        iters: vec![0; n],
        status: vec![RowStatus::MaxIter; n],
        evaluations: vec![1; n],
        wolfe_fallbacks: vec![0; n],
        history: cfg.record_history.then(|| vec![Vec::new(); n]),
        active: Vec::with_capacity(n),
    };
    for r in 0..n {
        run.record(r);
        if !row_finite(run.j[r], run.g.row(r)) {
            run.status[r] = RowStatus::NonFinite;
        } else if cfg.solver == SolverKind::None {
            run.status[r] = RowStatus::Skipped;
        } else if cfg.stop_rule == StopRule::GradInf && inf_norm(run.g.row(r).iter()) <= cfg.tol {
            run.status[r] = RowStatus::Converged;
        } else {
            run.active.push(r);
        }
    }
    match cfg.solver {
        SolverKind::None => {}
        SolverKind::Lbfgs => run_lbfgs(&obj, &mut run, cfg)?,
        SolverKind::Adam => adam::run_adam(&obj, &mut run, cfg)?,
    }
    for &r in &run.active {
        run.status[r] = RowStatus::MaxIter;
    }
    Ok(run.into_result())
}

fn run_lbfgs(obj: &ConjugateObjective<'_>, run: &mut Run, cfg: &SolverConfig) -> Result<()> {
    let dim = obj.dim();
    let mut states: Vec<Option<LbfgsState>> = vec![None; run.x.nrows()];
    for &r in &run.active {
        states[r] = Some(LbfgsState::new(cfg.memory, run.x.row(r).to_vec(), run.g.row(r).to_vec()));
    }
    for _ in 0..cfg.max_iter {
        if run.active.is_empty() {
            break;
        }
        let rows = run.active.clone();
        let k = rows.len();
        let x = objective::gather_rows(&run.x, &rows);
        let g0 = objective::gather_rows(&run.g, &rows);
        let j0: Vec<f64> = rows.iter().map(|&r| run.j[r]).collect();
        let mut p = Array2::zeros((k, dim));
        for (i, &r) in rows.iter().enumerate() {
            let st = states[r].as_mut().expect("active row has state");
            let mut d = st.direction();
            let slope: f64 = d.iter().zip(&st.g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
                // Not a descent direction: drop the curvature history.
                st.reset();
                d = st.g.iter().map(|v| -v).collect();
            }
            p.row_mut(i).assign(&ndarray::ArrayView1::from(&d));
        }
        let ls = linesearch::search(obj, &rows, &x, &p, &j0, &g0, &cfg.linesearch)?;
        let mut still = Vec::with_capacity(k);
        for (i, &r) in rows.iter().enumerate() {
            run.evaluations[r] += ls.evaluations[i];
            let out = ls.outcomes[i];
            if !out.accepted {
                run.status[r] = RowStatus::NoAcceptableStep;
                continue;
            }
            if out.wolfe_fallback {
                run.wolfe_fallbacks[r] += 1;
            }
            let x_new: Vec<f64> = (0..dim).map(|c| x[[i, c]] + out.alpha * p[[i, c]]).collect();
            if !row_finite(ls.values[i], ls.grads.row(i)) || x_new.iter().any(|v| !v.is_finite()) {
                run.status[r] = RowStatus::NonFinite;
                continue;
            }
            let max_change = x_new
                .iter()
                .zip(x.row(i))
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            run.x.row_mut(r).assign(&ndarray::ArrayView1::from(&x_new));
            run.j[r] = ls.values[i];
            run.g.row_mut(r).assign(&ls.grads.row(i));
            run.iters[r] += 1;
            run.record(r);
            states[r]
                .as_mut()
                .expect("active row has state")
                .update(x_new, ls.grads.row(i).to_vec());
            if !run.check_stop(r, max_change, cfg) {
                still.push(r);
            }
        }
        run.active = still;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn self_conjugate_quadratic() {
        let f = QuadraticPotential::half_sq_norm(2);
        let y = array![[3.0, 4.0]];
        let res = conjugate(&f, &y, &Array2::zeros((1, 2)), &SolverConfig::synthetic()).unwrap();
        assert!((res.x_star[[0, 0]] - 3.0).abs() < 1e-9);
        assert!((res.x_star[[0, 1]] - 4.0).abs() < 1e-9);
        assert!((-res.j_values[0] - 12.5).abs() < 1e-9);
        assert_eq!(res.status[0], RowStatus::Converged);
    }

    #[test]
    fn diagonal_quadratic_matches_linear_solve() {
        let f = QuadraticPotential::new(array![[2.0, 0.0], [0.0, 4.0]]);
        let y = array![[2.0, 4.0]];
        let mut cfg = SolverConfig::synthetic();
        cfg.tol = 1e-10;
        let res = conjugate(&f, &y, &Array2::zeros((1, 2)), &cfg).unwrap();
        assert!((res.x_star[[0, 0]] - 1.0).abs() < 1e-6);
        assert!((res.x_star[[0, 1]] - 1.0).abs() < 1e-6);
        assert!((res.j_values[0] + 3.0).abs() < 1e-9);
    }

    #[test]
    fn every_line_search_solves_quadratic() {
        let f = QuadraticPotential::new(array![[3.0, 1.0], [1.0, 2.0]]);
        let y = array![[1.0, -2.0], [0.5, 0.5], [-4.0, 3.0]];
        for m in LineSearchMethod::ALL {
            let mut cfg = SolverConfig::synthetic();
            cfg.linesearch.method = m;
            cfg.stop_rule = StopRule::GradInf;
            cfg.tol = 1e-8;
            let res = conjugate(&f, &y, &Array2::zeros((3, 2)), &cfg).unwrap();
            assert!(res.converged().iter().all(|&c| c), "{m}: {:?}", res.status);
            assert!(res.grad_inf_norms.iter().all(|&g| g <= 1e-8));
        }
    }

    #[test]
    fn solver_none_passes_through() {
        let f = QuadraticPotential::half_sq_norm(2);
        let y = array![[3.0, 4.0]];
        let x0 = array![[1.0, 1.0]];
        let res = conjugate(&f, &y, &x0, &SolverConfig::synthetic().with_solver(SolverKind::None)).unwrap();
        assert_eq!(res.x_star, x0);
        assert_eq!(res.status[0], RowStatus::Skipped);
        assert_eq!(res.j_values[0], 1.0 - 7.0);
        assert_eq!(res.grad_inf_norms[0], 3.0);
    }

    #[test]
    fn optimal_start_stops_after_one_iteration() {
        let f = QuadraticPotential::half_sq_norm(2);
        let y = array![[3.0, 4.0]];
        let res = conjugate(&f, &y, &y, &SolverConfig::synthetic()).unwrap();
        assert_eq!(res.iters[0], 1);
        assert_eq!(res.x_star, y);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let f = QuadraticPotential::half_sq_norm(2);
        let y = array![[3.0, 4.0]];
        assert!(conjugate(&f, &y, &Array2::zeros((2, 2)), &SolverConfig::synthetic()).is_err());
    }

    struct Nan;
    impl Potential for Nan {
        fn dim(&self) -> usize {
            1
        }
        fn values(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
            Ok(self.values_and_grads(x)?.0)
        }
        // ½x² for x < 2, NaN beyond.
        fn values_and_grads(&self, x: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
            let v = x.column(0).iter().map(|&t| if t < 2.0 { 0.5 * t * t } else { f64::NAN }).collect();
            let g = x.mapv(|t| if t < 2.0 { t } else { f64::NAN });
            Ok((v, g))
        }
    }

    #[test]
    fn non_finite_rows_are_frozen() {
        let y = array![[1.0], [5.0], [0.5]];
        let x0 = array![[0.0], [0.0], [3.0]];
        let res = conjugate(&Nan, &y, &x0, &SolverConfig::synthetic()).unwrap();
        assert_eq!(res.status[0], RowStatus::Converged);
        assert!((res.x_star[[0, 0]] - 1.0).abs() < 1e-6);
        // Row 1 is pulled towards 5 and leaves the finite region; NaN
        // candidates fail Armijo so the search only accepts finite points.
        assert!(res.x_star[[1, 0]] < 2.0);
        assert!(res.j_values[1].is_finite());
        assert_eq!(res.status[2], RowStatus::NonFinite);
        assert_eq!(res.x_star[[2, 0]], 3.0);
    }

    #[test]
    fn history_is_monotone() {
        let f = QuadraticPotential::new(array![[3.0, 1.0], [1.0, 2.0]]);
        let y = array![[1.0, -2.0]];
        let mut cfg = SolverConfig::synthetic();
        cfg.record_history = true;
        let res = conjugate(&f, &y, &array![[5.0, 5.0]], &cfg).unwrap();
        let h = &res.history.unwrap()[0];
        assert_eq!(h.len(), res.iters[0] + 1);
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }
}
