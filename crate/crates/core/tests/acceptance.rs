//! Acceptance suite. Prints one PASS/FAIL line per criterion on stdout and
//! exits non-zero if any criterion fails. Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 1 6`.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use w2dual_core::conjugate::{search, ConjugateObjective, NetworkPotential, QuadraticPotential};
use w2dual_core::evaluation::{l2_uvp, GridOracle, GridSpec};
use w2dual_core::linalg::random_spd;
use w2dual_core::measures::{task_by_name, GaussianPair};
use w2dual_core::rng::keyed_rng;
use w2dual_core::trainer::{dual_grad, dual_value};
use w2dual_core::{
    conjugate, Activation, AmortLossKind, Architecture, LineSearchConfig, LineSearchMethod, Network, ParamVector,
    SolverConfig, SolverKind, StopRule, TaskSpec, TrainConfig, TrainState, Trainer,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

fn perturbed(p: &ParamVector, scale: f64, seed: u64) -> ParamVector {
    let mut rng = keyed_rng(seed, &[0x9e7]);
    let v = p.values.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect();
    p.with_values(v).unwrap()
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

// 1 ------------------------------------------------------------------------

fn quadratic_exactness() -> Outcome {
    let t0 = Instant::now();
    let cfg = SolverConfig {
        solver: SolverKind::Lbfgs,
        max_iter: 100,
        tol: 1e-4,
        stop_rule: StopRule::GradInf,
        linesearch: LineSearchConfig::new(LineSearchMethod::ParallelArmijo, 1.5, 30),
        ..SolverConfig::synthetic()
    };
    let mut worst_resid = 0.0f64;
    let mut worst_err = 0.0f64;
    let mut max_iters = 0;
    let mut failures = 0;
    for k in 0..100u64 {
        let n = [2usize, 4, 8][(k % 3) as usize];
        let mut rng = keyed_rng(11, &[k]);
        let a = random_spd(n, 1.0, 100.0, &mut rng);
        let y = normal_matrix(&mut rng, 1, n, 3.0);
        let f = QuadraticPotential::new(a.clone());
        let res = conjugate(&f, &y, &Array2::zeros((1, n)), &cfg).unwrap();
        let x = res.x_star.row(0).to_owned();
        let resid = (a.dot(&x) - y.row(0)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // independent oracle: LU solve of A x = y
        let exact = to_dmatrix(&a).lu().solve(&DVector::from_iterator(n, y.row(0).iter().copied())).unwrap();
        let err = x.iter().zip(exact.iter()).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        worst_resid = worst_resid.max(resid);
        worst_err = worst_err.max(err);
        max_iters = max_iters.max(res.iters[0]);
        if resid > 1e-4 || res.iters[0] > 100 {
            failures += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 10.0,
        format!(
            "max ‖Ax−y‖∞ = {worst_resid:.2e} (gate 1e-4), max |x − A⁻¹y| = {worst_err:.2e}, max iters {max_iters} (gate 100), {failures} failures, {secs:.2} s (gate 10 s)"
        ),
    )
}

// 2 ------------------------------------------------------------------------

/// A 2-D ICNN trained briefly on the Gaussian pair.
/// Trained once and shared by criteria 2 and 5.
fn trained_icnn() -> &'static (Trainer, TrainState) {
    static TRAINED: OnceLock<(Trainer, TrainState)> = OnceLock::new();
    TRAINED.get_or_init(train_icnn)
}

fn train_icnn() -> (Trainer, TrainState) {
    let mut cfg = TrainConfig::synthetic();
    cfg.potential = Architecture::Icnn {
        hidden: vec![32, 32],
        activation: Activation::LeakyRelu(0.2),
        actnorm: true,
    };
    cfg.amortizer = Architecture::InitNn {
        hidden: vec![32, 32],
        activation: Activation::LeakyRelu(0.2),
    };
    cfg.n_iters = 500;
    cfg.batch_size = 256;
    cfg.eval_every = 0;
    cfg.conjugate.linesearch.chunk = Some(1);
    cfg.seed = 3;
    let tr = Trainer::new(task_by_name("gauss_to_gauss_2d").unwrap(), cfg).unwrap();
    let (mut st, _) = tr.init_state().unwrap();
    tr.run(&mut st, &Default::default()).unwrap();
    (tr, st)
}

fn grid_oracle() -> Outcome {
    let t0 = Instant::now();
    let (tr, st) = trained_icnn();
    let train_s = t0.elapsed().as_secs_f64();
    let f = NetworkPotential::new(tr.potential(), &st.theta);
    let y = tr.task().beta.sample(100, 77).unwrap();
    let solver = SolverConfig {
        solver: SolverKind::Lbfgs,
        ..SolverConfig::synthetic()
    };
    let (_, res) = tr.solve_conjugates(&st, &y, &solver).unwrap();
    let oracle = GridOracle::new(&f, GridSpec::new(-5.0, 5.0, 401).unwrap()).unwrap();
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for (i, row) in y.rows().into_iter().enumerate() {
        let g = oracle.solve(&row.to_vec()).unwrap();
        let gap = res.j_values[i] - g.j;
        worst = worst.max(gap);
        if gap > 1e-2 {
            violations += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        violations == 0 && secs < 60.0,
        format!(
            "max (J_solver − J_grid) = {worst:.2e} (gate 1e-2), {violations}/100 violations, {secs:.1} s incl. {train_s:.1} s training (gate 60 s)"
        ),
    )
}

// 3 ------------------------------------------------------------------------

/// `s(x) = Σ_r ⟨w_r, net(x_r)⟩`.
fn scalarized(net: &Network, p: &ParamVector, x: &Array2<f64>, w: &Array2<f64>) -> f64 {
    let out = net.forward(p, x).unwrap();
    (&out * w).sum()
}

fn rel_err(g: &[f64], fd: &[f64]) -> f64 {
    let num = g.iter().zip(fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let den = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    num / den.max(1e-12)
}

fn gradient_suites() -> Outcome {
    let t0 = Instant::now();
    let h = 1e-4;
    let mut worst = [0.0f64; 6];
    let names = ["icnn", "mlp", "init_nn"];
    for inst in 0..100u64 {
        let mut rng = keyed_rng(33, &[inst]);
        let dim = 2 + (inst % 3) as usize;
        let nets = [
            Network::icnn(dim, &[6, 5], Activation::Elu, inst % 2 == 0).unwrap(),
            Network::mlp(dim, &[6, 5], Activation::Elu).unwrap(),
            Network::init_nn(dim, &[6, 5], Activation::Elu).unwrap(),
        ];
        for (a, net) in nets.iter().enumerate() {
            let p = perturbed(&net.init_params_seeded(inst), 0.3, inst);
            let x = normal_matrix(&mut rng, 3, dim, 1.5);
            let w = normal_matrix(&mut rng, 3, net.output_dim(), 1.0);
            let (gx, gp) = net.vjp(&p, &x, &w).unwrap();
            let s = |p: &ParamVector, x: &Array2<f64>| scalarized(net, p, x, &w);
            let mut fd_x = Vec::new();
            for idx in 0..x.len() {
                let (r, c) = (idx / dim, idx % dim);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[[r, c]] += h;
                xm[[r, c]] -= h;
                fd_x.push((s(&p, &xp) - s(&p, &xm)) / (2.0 * h));
            }
            let mut fd_p = Vec::new();
            for i in 0..p.len() {
                let mut vp = p.values.clone();
                let mut vm = p.values.clone();
                vp[i] += h;
                vm[i] -= h;
                fd_p.push((s(&p.with_values(vp).unwrap(), &x) - s(&p.with_values(vm).unwrap(), &x)) / (2.0 * h));
            }
            worst[2 * a] = worst[2 * a].max(rel_err(gx.as_slice().unwrap(), &fd_x));
            worst[2 * a + 1] = worst[2 * a + 1].max(rel_err(&gp, &fd_p));
        }
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let parts: Vec<String> = names
        .iter()
        .enumerate()
        .map(|(a, n)| format!("{n} input {:.1e} / params {:.1e}", worst[2 * a], worst[2 * a + 1]))
        .collect();
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        max <= 1e-3 && secs < 30.0,
        format!("max rel err {max:.2e} (gate 1e-3): {}; {secs:.1} s (gate 30 s)", parts.join(", ")),
    )
}

// 4 ------------------------------------------------------------------------

fn tight_solver() -> SolverConfig {
    SolverConfig {
        solver: SolverKind::Lbfgs,
        max_iter: 1000,
        tol: 1e-6,
        stop_rule: StopRule::IterateChange,
        ..SolverConfig::synthetic()
    }
}

fn danskin() -> Outcome {
    let h = 1e-5;
    let net = Network::icnn(2, &[3], Activation::Elu, false).unwrap();
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let mut rng = keyed_rng(44, &[inst]);
        let th = perturbed(&net.init_params_seeded(inst), 0.3, inst);
        let x = normal_matrix(&mut rng, 16, 2, 1.0);
        let y = normal_matrix(&mut rng, 16, 2, 1.0);
        let solve = |th: &ParamVector, init: &Array2<f64>| {
            conjugate(&NetworkPotential::new(&net, th), &y, init, &tight_solver()).unwrap().x_star
        };
        let xs = solve(&th, &y);
        let g = dual_grad(&net, &th, &x, &xs).unwrap();
        let mut fd = Vec::with_capacity(th.len());
        for i in 0..th.len() {
            let mut vp = th.values.clone();
            let mut vm = th.values.clone();
            vp[i] += h;
            vm[i] -= h;
            let (tp, tm) = (th.with_values(vp).unwrap(), th.with_values(vm).unwrap());
            let vp = dual_value(&net, &tp, &x, &solve(&tp, &xs), &y).unwrap();
            let vm = dual_value(&net, &tm, &x, &solve(&tm, &xs), &y).unwrap();
            fd.push((vp - vm) / (2.0 * h));
        }
        let num: f64 = g.values.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(num / den.max(1e-12));
    }
    outcome(worst <= 1e-2, format!("max ‖g − g_fd‖₂/‖g_fd‖₂ = {worst:.2e} over 20 instances (gate 1e-2)"))
}

// 5 ------------------------------------------------------------------------

fn icnn_convexity() -> Outcome {
    let (tr, st) = trained_icnn();
    let mut settings: Vec<(Network, ParamVector)> = Vec::new();
    settings.push((tr.potential().clone(), st.theta.clone()));
    for s in 0..4u64 {
        let net = Network::icnn(2 + s as usize, &[16, 16], Activation::Elu, s % 2 == 0).unwrap();
        let p = net.init_params_seeded(s);
        settings.push((net.clone(), p.clone()));
        settings.push((net, perturbed(&p, 2.0, 100 + s)));
    }
    settings.push((tr.potential().clone(), perturbed(&st.theta, 1.0, 7)));
    let per = 10_000usize.div_ceil(settings.len());
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for (k, (net, p)) in settings.iter().enumerate() {
        let mut rng = keyed_rng(55, &[k as u64]);
        let a = normal_matrix(&mut rng, per, net.dim(), 3.0);
        let b = normal_matrix(&mut rng, per, net.dim(), 3.0);
        let m = (&a + &b) * 0.5;
        let (fa, fb, fm) = (net.values(p, &a).unwrap(), net.values(p, &b).unwrap(), net.values(p, &m).unwrap());
        for i in 0..per {
            let gap = fm[i] - 0.5 * (fa[i] + fb[i]);
            worst = worst.max(gap);
            if gap > 1e-10 {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "{violations} violations in {} midpoint probes over {} parameter settings, max f(m) − mean = {worst:.2e} (gate 1e-10)",
            per * settings.len(),
            settings.len()
        ),
    )
}

// 6 ------------------------------------------------------------------------

fn linesearch_equivalence() -> Outcome {
    let mut mismatches = 0;
    let mut accepted = 0;
    for k in 0..1000u64 {
        let mut rng = keyed_rng(66, &[k]);
        let n = 1 + (rng.next_u32() % 8) as usize;
        let f = QuadraticPotential::new(random_spd(n, 0.1, 100.0, &mut rng));
        let y = normal_matrix(&mut rng, 1, n, 2.0);
        let x = normal_matrix(&mut rng, 1, n, 2.0);
        let obj = ConjugateObjective::new(&f, y.view()).unwrap();
        let (j0, g0) = obj.values_grads_all(&x).unwrap();
        let mut p = normal_matrix(&mut rng, 1, n, 1.0);
        let slope: f64 = (&p * &g0).sum();
        // mostly descent directions, some ascent ones
        if (slope > 0.0) == (rng.random::<f64>() < 0.9) {
            p.mapv_inplace(|v| -v);
        }
        let tau = 1.1 + 2.0 * rng.random::<f64>();
        let m = 1 + (rng.next_u32() % 30) as usize;
        let alpha_init = 0.25 + 4.0 * rng.random::<f64>();
        let run = |method| {
            let mut cfg = LineSearchConfig::new(method, tau, m);
            cfg.alpha_init = alpha_init;
            search(&obj, &[0], &x, &p, &j0, &g0, &cfg).unwrap().outcomes[0]
        };
        let par = run(LineSearchMethod::ParallelArmijo);
        let back = run(LineSearchMethod::BacktrackingArmijo);
        if par.accepted != back.accepted || (par.accepted && par.alpha.to_bits() != back.alpha.to_bits()) {
            mismatches += 1;
        }
        accepted += par.accepted as usize;
    }
    // wall time on a batch, reported only
    let mut rng = keyed_rng(67, &[]);
    let f = QuadraticPotential::new(random_spd(8, 1.0, 100.0, &mut rng));
    let y = normal_matrix(&mut rng, 1024, 8, 3.0);
    let x0 = Array2::zeros(y.dim());
    let time = |method| {
        let cfg = SolverConfig {
            solver: SolverKind::Lbfgs,
            tol: 0.1,
            stop_rule: StopRule::GradInf,
            linesearch: LineSearchConfig::new(method, 1.5, 15),
            ..SolverConfig::benchmark()
        };
        let t = Instant::now();
        for _ in 0..5 {
            conjugate(&f, &y, &x0, &cfg).unwrap();
        }
        t.elapsed().as_secs_f64() * 1e3 / 5.0
    };
    let (tp, tb) = (time(LineSearchMethod::ParallelArmijo), time(LineSearchMethod::BacktrackingArmijo));
    outcome(
        mismatches == 0,
        format!(
            "{mismatches}/1000 mismatches ({accepted} accepted); batch 1024 wall time parallel {tp:.1} ms vs backtracking {tb:.1} ms (reported, not gated)"
        ),
    )
}

// 7, 8 ---------------------------------------------------------------------

const SEEDS: [u64; 3] = [0, 1, 2];

fn desk_config(loss: AmortLossKind, solver: SolverKind, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::synthetic();
    cfg.n_iters = 20_000;
    cfg.batch_size = 1024;
    cfg.potential = Architecture::Mlp {
        hidden: vec![32, 32],
        activation: Activation::Elu,
    };
    cfg.amortizer = Architecture::InitNn {
        hidden: vec![32, 32],
        activation: Activation::Elu,
    };
    cfg.amortization = loss;
    cfg.conjugate.solver = solver;
    cfg.conjugate.linesearch.chunk = Some(1);
    cfg.eval_every = 0;
    cfg.seed = seed;
    cfg
}

fn final_uvp(task: &TaskSpec, cfg: TrainConfig) -> f64 {
    let label = format!("{}+{} seed {}", cfg.conjugate.solver.name(), cfg.amortization.name(), cfg.seed);
    let t = Instant::now();
    let tr = Trainer::new(task.clone(), cfg).unwrap();
    let (mut st, _) = tr.init_state().unwrap();
    let summary = tr.run(&mut st, &Default::default()).unwrap();
    let uvp = summary.final_uvp.unwrap().uvp_percent;
    eprintln!("    {label}: final L2-UVP {uvp:.4}% ({:.0} s)", t.elapsed().as_secs_f64());
    uvp
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ")
}

fn end_to_end() -> Outcome {
    let task = task_by_name("gauss_to_gauss_2d").unwrap();
    let t0 = Instant::now();
    let u: Vec<f64> = SEEDS
        .iter()
        .map(|&s| final_uvp(&task, desk_config(AmortLossKind::Regression, SolverKind::Lbfgs, s)))
        .collect();
    let m = mean(&u);
    outcome(
        m < 1.0,
        format!(
            "mean final L2-UVP {m:.4}% (gate < 1%), seeds [{}], {:.0} s",
            fmt_list(&u),
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn ablation() -> Outcome {
    let task = task_by_name("gauss_to_gauss_2d").unwrap();
    let run = |solver| -> Vec<f64> {
        SEEDS
            .iter()
            .map(|&s| final_uvp(&task, desk_config(AmortLossKind::Objective, solver, s)))
            .collect()
    };
    let tuned = run(SolverKind::Lbfgs);
    let raw = run(SolverKind::None);
    let (mt, mr) = (mean(&tuned), mean(&raw));
    outcome(
        mt < mr,
        format!(
            "objective loss: lbfgs mean {mt:.4}% [{}] vs none mean {mr:.4}% [{}] (gate: lbfgs strictly lower)",
            fmt_list(&tuned),
            fmt_list(&raw)
        ),
    )
}

// 9 ------------------------------------------------------------------------

fn uvp_sanity() -> Outcome {
    let pair = GaussianPair::random(3, 10.0, 5).unwrap();
    let task = TaskSpec::from_gaussian_pair("g3", &pair).unwrap();
    let gt = task.ground_truth.clone().unwrap();
    let t_star = |x: &Array2<f64>| Ok(gt.apply(x.view()));
    let exact = l2_uvp(&t_star, &t_star, &task.alpha, &task.beta, 100_000, 1).unwrap();
    let mean_b: Array1<f64> = pair.mean_b.clone();
    let constant = |x: &Array2<f64>| Ok(Array2::from_shape_fn(x.dim(), |(_, j)| mean_b[j]));
    let c = l2_uvp(&constant, &t_star, &task.alpha, &task.beta, 100_000, 2).unwrap();
    let z = (c.uvp_percent - 100.0).abs() / c.std_error;
    outcome(
        exact.uvp_percent == 0.0 && z <= 3.0,
        format!(
            "T = T* gives {}; constant mean map gives {:.3}% ± {:.3} ({z:.2} standard errors from 100, gate 3)",
            exact.uvp_percent, c.uvp_percent, c.std_error
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "conjugate exactness on quadratics", quadratic_exactness),
        (2, "grid-oracle agreement", grid_oracle),
        (3, "gradient suites", gradient_suites),
        (4, "Danskin check", danskin),
        (5, "ICNN convexity", icnn_convexity),
        (6, "line-search equivalence", linesearch_equivalence),
        (7, "end-to-end desk-scale training", end_to_end),
        (8, "fine-tuning ablation direction", ablation),
        (9, "L2-UVP sanity", uvp_sanity),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {id}: {name}: {} [{:.1} s]", o.detail, t.elapsed().as_secs_f64());
        failed += (!o.pass) as u32;
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
