use std::path::Path;

use ndarray::Array2;
use w2dual_core::evaluation::{
    interpolation_export, landscape_export, pushforward_export, svg, write_landscape_csv, write_points_csv, GridSpec,
    PushForward,
};
use w2dual_core::rng::derive_seed;
use w2dual_core::trainer::TrainSummary;
use w2dual_core::{conjugate::NetworkPotential, SolverConfig, TrainState, Trainer};

use crate::CliError;

pub const INTERPOLATION_TIMES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const LANDSCAPE_QUERIES: usize = 3;

/// Dual-value and ℒ²-UVP traces of a finished run.
pub fn training_curves(summary: &TrainSummary, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let dual: Vec<(f64, f64)> = summary.dual_value_trace().into_iter().map(|(s, v)| (s as f64, v)).collect();
    svg::write(&dir.join("dual_value.svg"), &svg::lines("dual objective", &[("V", dual)], false))?;
    let uvp: Vec<(f64, f64)> = summary
        .history
        .iter()
        .filter_map(|m| m.l2_uvp.map(|u| (m.step as f64, u)))
        .collect();
    if !uvp.is_empty() {
        svg::write(&dir.join("l2_uvp.svg"), &svg::lines("L2-UVP (%)", &[("L2-UVP", uvp)], true))?;
    }
    Ok(())
}

fn pushes(trainer: &Trainer, state: &TrainState, n: usize, seed: u64) -> Result<(PushForward, PushForward), CliError> {
    let task = trainer.task();
    let fwd = |x: &Array2<f64>| trainer.transport(&state.theta, x);
    let forward = pushforward_export(&fwd, &task.alpha, n, derive_seed(seed, &[1]))?;
    let inv = |y: &Array2<f64>| trainer.inverse_transport(state, y);
    let inverse = pushforward_export(&inv, &task.beta, n, derive_seed(seed, &[2]))?;
    Ok((forward, inverse))
}

/// Forward and inverse push-forwards as CSV and SVG.
pub fn pushforward_figures(trainer: &Trainer, state: &TrainState, n: usize, seed: u64, dir: &Path) -> Result<(PushForward, PushForward), CliError> {
    std::fs::create_dir_all(dir)?;
    let (fwd, inv) = pushes(trainer, state, n, seed)?;
    write_points_csv(
        &dir.join("pushforward.csv"),
        &[("alpha", 0.0, &fwd.source), ("grad_f_alpha", 1.0, &fwd.mapped)],
    )?;
    write_points_csv(
        &dir.join("inverse_pushforward.csv"),
        &[("beta", 0.0, &inv.source), ("grad_fstar_beta", 1.0, &inv.mapped)],
    )?;
    svg::write(
        &dir.join("pushforward.svg"),
        &svg::scatter(
            "push-forward of alpha",
            &[("alpha", &fwd.source), ("beta", &inv.source), ("grad f # alpha", &fwd.mapped)],
        ),
    )?;
    svg::write(
        &dir.join("inverse_pushforward.svg"),
        &svg::scatter(
            "push-forward of beta",
            &[("beta", &inv.source), ("alpha", &fwd.source), ("grad f* # beta", &inv.mapped)],
        ),
    )?;
    Ok((fwd, inv))
}

/// Every figure that can be made from a trained state.
pub fn all(trainer: &Trainer, state: &TrainState, n: usize, resolution: usize, seed: u64, dir: &Path) -> Result<(), CliError> {
    let (fwd, _) = pushforward_figures(trainer, state, n, seed, dir)?;
    let frames = interpolation_export(&fwd, &INTERPOLATION_TIMES)?;
    let labels: Vec<String> = frames.iter().map(|(t, _)| format!("t={t}")).collect();
    let sets: Vec<(&str, f64, &Array2<f64>)> = frames.iter().zip(&labels).map(|((t, p), l)| (l.as_str(), *t, p)).collect();
    write_points_csv(&dir.join("interpolation.csv"), &sets)?;
    let plot: Vec<(&str, &Array2<f64>)> = sets.iter().map(|(l, _, p)| (*l, *p)).collect();
    svg::write(&dir.join("interpolation.svg"), &svg::scatter("interpolation", &plot))?;
    if trainer.task().dim() == 2 {
        let f = NetworkPotential::new(trainer.potential(), &state.theta);
        let grid = GridSpec::new(-5.0, 5.0, resolution)?;
        let ys = trainer.task().beta.sample(LANDSCAPE_QUERIES, derive_seed(seed, &[3]))?;
        for (i, y) in ys.rows().into_iter().enumerate() {
            let land = landscape_export(&f, &y.to_vec(), grid, &SolverConfig::synthetic())?;
            write_landscape_csv(&dir.join(format!("landscape_{i}.csv")), &land)?;
            let title = format!("J(x; y) at y = ({:.2}, {:.2})", y[0], y[1]);
            svg::write(&dir.join(format!("landscape_{i}.svg")), &svg::landscape(&title, &land))?;
        }
    }
    Ok(())
}
