//! Per-row Adam on the conjugate objective with a cosine-annealed step size.

use super::objective::{gather_rows, ConjugateObjective};
use super::{row_finite, Run, SolverConfig};
use crate::error::Result;
use crate::optim::{cosine_lr, AdamConfig, AdamState};

pub(crate) fn run_adam(obj: &ConjugateObjective<'_>, run: &mut Run, cfg: &SolverConfig) -> Result<()> {
    let dim = obj.dim();
    let acfg = AdamConfig::new(cfg.adam.beta1, cfg.adam.beta2);
    let floor = cfg.adam.lr_final / cfg.adam.lr_init;
    let mut states: Vec<AdamState> = vec![AdamState::new(dim); run.x.nrows()];
    for t in 0..cfg.max_iter {
        if run.active.is_empty() {
            break;
        }
        let lr = cosine_lr(t as u64, cfg.max_iter as u64, cfg.adam.lr_init, floor);
        let rows = run.active.clone();
        let x_old = gather_rows(&run.x, &rows);
        let mut x_new = x_old.clone();
        for (i, &r) in rows.iter().enumerate() {
            let g = run.g.row(r).to_vec();
            let mut xi = x_new.row(i).to_vec();
            states[r].step(&mut xi, &g, lr, &acfg);
            x_new.row_mut(i).assign(&ndarray::ArrayView1::from(&xi));
        }
        let (v, g) = obj.values_grads_at(&x_new, &rows)?;
        let mut still = Vec::with_capacity(rows.len());
        for (i, &r) in rows.iter().enumerate() {
            run.evaluations[r] += 1;
            if !row_finite(v[i], g.row(i)) || x_new.row(i).iter().any(|c| !c.is_finite()) {
                run.status[r] = super::RowStatus::NonFinite;
                continue;
            }
            let max_change = x_new
                .row(i)
                .iter()
                .zip(x_old.row(i))
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            run.x.row_mut(r).assign(&x_new.row(i));
            run.j[r] = v[i];
            run.g.row_mut(r).assign(&g.row(i));
            run.iters[r] += 1;
            run.record(r);
            if !run.check_stop(r, max_change, cfg) {
                still.push(r);
            }
        }
        run.active = still;
    }
    Ok(())
}
