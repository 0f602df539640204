//! Batched step-length selection along per-row search directions.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::objective::ConjugateObjective;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearchMethod {
    BacktrackingArmijo,
    ParallelArmijo,
    BacktrackingWolfe,
    BacktrackingStrongWolfe,
}

impl LineSearchMethod {
    pub const ALL: [LineSearchMethod; 4] = [
        LineSearchMethod::BacktrackingArmijo,
        LineSearchMethod::ParallelArmijo,
        LineSearchMethod::BacktrackingWolfe,
        LineSearchMethod::BacktrackingStrongWolfe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LineSearchMethod::BacktrackingArmijo => "backtracking_armijo",
            LineSearchMethod::ParallelArmijo => "parallel_armijo",
            LineSearchMethod::BacktrackingWolfe => "backtracking_wolfe",
            LineSearchMethod::BacktrackingStrongWolfe => "backtracking_strong_wolfe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown line search `{s}`")))
    }
}

impl std::fmt::Display for LineSearchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub method: LineSearchMethod,
    pub c1: f64,
    pub c2: f64,
    /// Decay base; candidate `m` is `alpha_init · tau^{-m}`.
    pub tau: f64,
    /// Number of candidates.
    pub candidates: usize,
    pub alpha_init: f64,
    /// Parallel Armijo only: evaluate the grid in blocks of this many
    /// candidates, largest first, stopping at the first block with an
    /// accepted step. `None` evaluates the whole grid at once. The selected
    /// step is the same either way.
    #[serde(default)]
    pub chunk: Option<usize>,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            method: LineSearchMethod::ParallelArmijo,
            c1: 1e-4,
            c2: 0.9,
            tau: 1.5,
            candidates: 10,
            alpha_init: 1.0,
            chunk: None,
        }
    }
}

impl LineSearchConfig {
    pub fn new(method: LineSearchMethod, tau: f64, candidates: usize) -> Self {
        Self {
            method,
            tau,
            candidates,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::config(format!(
                "line search needs 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if !(self.tau > 1.0) || !self.tau.is_finite() {
            return Err(Error::config(format!("line search tau must exceed 1, got {}", self.tau)));
        }
        if self.candidates == 0 {
            return Err(Error::config("line search needs at least one candidate"));
        }
        if !(self.alpha_init > 0.0) || !self.alpha_init.is_finite() {
            return Err(Error::config("alpha_init must be positive"));
        }
        if self.chunk == Some(0) {
            return Err(Error::config("line search chunk must be positive"));
        }
        Ok(())
    }

    /// Candidate step lengths in descending order.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.candidates)
            .map(|m| self.alpha_init * self.tau.powi(-(m as i32)))
            .collect()
    }
}

/// Sufficient-decrease margin `J0 + c1·α·slope − J(α)`; the step is accepted
/// when it is non-negative.
pub fn armijo_gap(j0: f64, slope: f64, alpha: f64, j_alpha: f64, c1: f64) -> f64 {
    j0 + c1 * alpha * slope - j_alpha
}

/// Armijo margin for a scalar-valued objective along `x + αp`.
pub fn armijo_condition(j: impl Fn(&[f64]) -> f64, grad0: &[f64], x: &[f64], p: &[f64], alpha: f64, c1: f64) -> f64 {
    let slope = dot(p, grad0);
    let xa: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + alpha * b).collect();
    armijo_gap(j(x), slope, alpha, j(&xa), c1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WolfeChecks {
    pub armijo: bool,
    pub curvature: bool,
    pub strong: bool,
}

/// `slope0 = pᵀ∇J(x)`, `slope_alpha = pᵀ∇J(x + αp)`.
pub fn wolfe_checks(j0: f64, slope0: f64, alpha: f64, j_alpha: f64, slope_alpha: f64, c1: f64, c2: f64) -> WolfeChecks {
    WolfeChecks {
        armijo: armijo_gap(j0, slope0, alpha, j_alpha, c1) >= 0.0,
        curvature: -slope_alpha <= -c2 * slope0,
        strong: slope_alpha.abs() <= c2 * slope0.abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub alpha: f64,
    pub accepted: bool,
    /// A Wolfe search found no candidate meeting both conditions and fell
    /// back to the largest Armijo-accepted one.
    pub wolfe_fallback: bool,
}

/// Per-row result of a batched search.
///
/// `values` and `grads` hold the objective at `x + αp` for accepted rows;
/// rejected rows keep their input values.
#[derive(Clone, Debug)]
pub struct LineSearchResult {
    pub outcomes: Vec<StepOutcome>,
    pub values: Vec<f64>,
    pub grads: Array2<f64>,
    /// Objective evaluations spent per row (value-only and value+gradient
    /// each count once).
    pub evaluations: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Searches along `p` from `x` for the listed objective rows.
///
/// `x`, `p` and `g0` are indexed like `rows`; `j0` are the current values.
pub fn search(
    obj: &ConjugateObjective<'_>,
    rows: &[usize],
    x: &Array2<f64>,
    p: &Array2<f64>,
    j0: &[f64],
    g0: &Array2<f64>,
    cfg: &LineSearchConfig,
) -> Result<LineSearchResult> {
    let k = rows.len();
    if x.dim() != p.dim() || x.dim() != g0.dim() || x.nrows() != k || j0.len() != k {
        return Err(Error::dim("line search inputs disagree"));
    }
    let slopes: Vec<f64> = (0..k).map(|i| p.row(i).dot(&g0.row(i))).collect();
    let ctx = Ctx {
        obj,
        rows,
        x,
        p,
        j0,
        slopes: &slopes,
        cfg,
    };
    match cfg.method {
        LineSearchMethod::ParallelArmijo => ctx.parallel_armijo(g0),
        LineSearchMethod::BacktrackingArmijo => ctx.backtracking_armijo(g0),
        LineSearchMethod::BacktrackingWolfe => ctx.backtracking_wolfe(g0, false),
        LineSearchMethod::BacktrackingStrongWolfe => ctx.backtracking_wolfe(g0, true),
    }
}

struct Ctx<'c, 'o> {
    obj: &'c ConjugateObjective<'o>,
    rows: &'c [usize],
    x: &'c Array2<f64>,
    p: &'c Array2<f64>,
    j0: &'c [f64],
    slopes: &'c [f64],
    cfg: &'c LineSearchConfig,
}

impl Ctx<'_, '_> {
    /// Points `x_i + α p_i` for each `(i, α)`.
    fn points(&self, pairs: &[(usize, f64)]) -> Array2<f64> {
        let n = self.x.ncols();
        let mut out = Array2::zeros((pairs.len(), n));
        for (r, &(i, a)) in pairs.iter().enumerate() {
            let xi = self.x.row(i);
            let pi = self.p.row(i);
            for c in 0..n {
                out[[r, c]] = xi[c] + a * pi[c];
            }
        }
        out
    }

    fn obj_rows(&self, pairs: &[(usize, f64)]) -> Vec<usize> {
        pairs.iter().map(|&(i, _)| self.rows[i]).collect()
    }

    fn eval_values(&self, pairs: &[(usize, f64)]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        self.obj.values_at(&self.points(pairs), &self.obj_rows(pairs))
    }

    fn eval_grads(&self, pairs: &[(usize, f64)]) -> Result<(Vec<f64>, Array2<f64>)> {
        if pairs.is_empty() {
            return Ok((Vec::new(), Array2::zeros((0, self.x.ncols()))));
        }
        self.obj.values_grads_at(&self.points(pairs), &self.obj_rows(pairs))
    }

    fn accepts(&self, i: usize, alpha: f64, j: f64) -> bool {
        armijo_gap(self.j0[i], self.slopes[i], alpha, j, self.cfg.c1) >= 0.0
    }

    fn empty_result(&self, g0: &Array2<f64>) -> LineSearchResult {
        let grid = self.cfg.grid();
        let smallest = *grid.last().unwrap_or(&self.cfg.alpha_init);
        LineSearchResult {
            outcomes: vec![
                StepOutcome {
                    alpha: smallest,
                    accepted: false,
                    wolfe_fallback: false,
                };
                self.rows.len()
            ],
            values: self.j0.to_vec(),
            grads: g0.clone(),
            evaluations: vec![0; self.rows.len()],
        }
    }

    /// Fill values and gradients at the accepted steps.
    fn finish_armijo(&self, mut res: LineSearchResult) -> Result<LineSearchResult> {
        let pairs: Vec<(usize, f64)> = res
            .outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.accepted)
            .map(|(i, o)| (i, o.alpha))
            .collect();
        let (v, g) = self.eval_grads(&pairs)?;
        for (r, &(i, _)) in pairs.iter().enumerate() {
            res.values[i] = v[r];
            res.grads.row_mut(i).assign(&g.row(r));
            res.evaluations[i] += 1;
        }
        Ok(res)
    }

    fn parallel_armijo(&self, g0: &Array2<f64>) -> Result<LineSearchResult> {
        let grid = self.cfg.grid();
        let chunk = self.cfg.chunk.unwrap_or(grid.len()).max(1);
        let mut res = self.empty_result(g0);
        let mut pending: Vec<usize> = (0..self.rows.len()).collect();
        for block in grid.chunks(chunk) {
            if pending.is_empty() {
                break;
            }
            let pairs: Vec<(usize, f64)> = pending
                .iter()
                .flat_map(|&i| block.iter().map(move |&a| (i, a)))
                .collect();
            let vals = self.eval_values(&pairs)?;
            let mut still = Vec::new();
            for (pi, &i) in pending.iter().enumerate() {
                res.evaluations[i] += block.len();
                let base = pi * block.len();
                // The block is in descending order, so the first accepted
                // candidate is the largest.
                let hit = (0..block.len()).find(|&m| self.accepts(i, block[m], vals[base + m]));
                match hit {
                    Some(m) => {
                        res.outcomes[i].alpha = block[m];
                        res.outcomes[i].accepted = true;
                    }
                    None => still.push(i),
                }
            }
            pending = still;
        }
        self.finish_armijo(res)
    }

    fn backtracking_armijo(&self, g0: &Array2<f64>) -> Result<LineSearchResult> {
        let grid = self.cfg.grid();
        let mut res = self.empty_result(g0);
        let mut pending: Vec<usize> = (0..self.rows.len()).collect();
        for &alpha in &grid {
            if pending.is_empty() {
                break;
            }
            let pairs: Vec<(usize, f64)> = pending.iter().map(|&i| (i, alpha)).collect();
            let vals = self.eval_values(&pairs)?;
            let mut still = Vec::new();
            for (r, &i) in pending.iter().enumerate() {
                res.evaluations[i] += 1;
                if self.accepts(i, alpha, vals[r]) {
                    res.outcomes[i].alpha = alpha;
                    res.outcomes[i].accepted = true;
                } else {
                    still.push(i);
                }
            }
            pending = still;
        }
        self.finish_armijo(res)
    }

    /// Both conditions are re-checked at every candidate; if none passes,
    /// the largest Armijo-accepted candidate is used and flagged.
    fn backtracking_wolfe(&self, g0: &Array2<f64>, strong: bool) -> Result<LineSearchResult> {
        let grid = self.cfg.grid();
        let mut res = self.empty_result(g0);
        let mut fallback: Vec<Option<(f64, f64, Vec<f64>)>> = vec![None; self.rows.len()];
        let mut pending: Vec<usize> = (0..self.rows.len()).collect();
        for &alpha in &grid {
            if pending.is_empty() {
                break;
            }
            let pairs: Vec<(usize, f64)> = pending.iter().map(|&i| (i, alpha)).collect();
            let (vals, grads) = self.eval_grads(&pairs)?;
            let mut still = Vec::new();
            for (r, &i) in pending.iter().enumerate() {
                res.evaluations[i] += 1;
                let g_row = grads.row(r);
                let slope_a: f64 = self.p.row(i).iter().zip(g_row.iter()).map(|(a, b)| a * b).sum();
                let w = wolfe_checks(self.j0[i], self.slopes[i], alpha, vals[r], slope_a, self.cfg.c1, self.cfg.c2);
                let ok = w.armijo && if strong { w.strong } else { w.curvature };
                if ok {
                    res.outcomes[i].alpha = alpha;
                    res.outcomes[i].accepted = true;
                    res.values[i] = vals[r];
                    res.grads.row_mut(i).assign(&g_row);
                } else {
                    if w.armijo && fallback[i].is_none() {
                        fallback[i] = Some((alpha, vals[r], g_row.to_vec()));
                    }
                    still.push(i);
                }
            }
            pending = still;
        }
        for i in pending {
            if let Some((alpha, v, g)) = fallback[i].take() {
                res.outcomes[i] = StepOutcome {
                    alpha,
                    accepted: true,
                    wolfe_fallback: true,
                };
                res.values[i] = v;
                res.grads.row_mut(i).assign(&ndarray::ArrayView1::from(&g));
            }
        }
        Ok(res)
    }
}
