use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::activation::{sigmoid, softplus, softplus_inv, Activation};
use super::{Layout, ParamVector};
use crate::error::{Error, Result};

/// Register index. Register 0 holds the input; op `i` writes register `i + 1`.
pub type Reg = usize;

/// ActNorm variance guard.
pub const ACTNORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Op {
    /// `u W + b` with `W` stored row-major as `fan_in × fan_out`.
    Dense {
        src: Reg,
        kernel: usize,
        bias: Option<usize>,
        fan_in: usize,
        fan_out: usize,
    },
    /// Like [`Op::Dense`] with effective kernel `softplus(W)`, so every
    /// effective weight is nonnegative.
    PositiveDense {
        src: Reg,
        kernel: usize,
        bias: Option<usize>,
        fan_in: usize,
        fan_out: usize,
    },
    /// Per-channel `u · exp(log_scale) + shift`.
    ActNorm {
        src: Reg,
        log_scale: usize,
        shift: usize,
        width: usize,
    },
    Act {
        src: Reg,
        act: Activation,
    },
    Add {
        lhs: Reg,
        rhs: Reg,
    },
    /// Row-wise `exp(log_alpha) · ½‖u‖²`, a single output column.
    HalfSqNorm {
        src: Reg,
        log_alpha: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
enum Init {
    LecunNormal { fan_in: usize },
    PositiveLecun { fan_in: usize },
    Zeros,
}

/// Layer descriptions for plain sequential stacks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { out: usize, bias: bool },
    PositiveDense { out: usize },
    ActNorm,
    Activation(Activation),
    /// Adds `exp(log_alpha)·½‖x‖²` of the network *input* to the current
    /// scalar output (or is the whole output when it is the first layer).
    QuadraticSkip,
}

/// A fixed network: ops over registers plus the parameter layout they index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    input_dim: usize,
    widths: Vec<usize>,
    ops: Vec<Op>,
    layout: Layout,
    inits: Vec<(usize, Init)>,
}

/// Values (and optional tangents) of every register from one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    values: Vec<Array2<f64>>,
    tangents: Option<Vec<Array2<f64>>>,
    // Effective positive kernels, indexed by op.
    positive: Vec<Option<Vec<f64>>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.values.last().expect("graph has an input register")
    }

    pub fn output_tangent(&self) -> Option<&Array2<f64>> {
        self.tangents.as_ref().map(|t| t.last().expect("non-empty"))
    }

    pub fn register(&self, r: Reg) -> &Array2<f64> {
        &self.values[r]
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.values.pop().expect("non-empty")
    }
}

/// Adjoints with respect to the input, the input tangent and the parameters.
#[derive(Clone, Debug)]
pub struct Grads {
    pub input: Array2<f64>,
    pub input_tangent: Option<Array2<f64>>,
    pub params: Vec<f64>,
}

pub struct GraphBuilder {
    input_dim: usize,
    widths: Vec<usize>,
    ops: Vec<Op>,
    layout: Layout,
    inits: Vec<(usize, Init)>,
}

impl GraphBuilder {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            widths: vec![input_dim],
            ops: Vec::new(),
            layout: Layout::new(),
            inits: Vec::new(),
        }
    }

    pub fn input(&self) -> Reg {
        0
    }

    pub fn width(&self, r: Reg) -> usize {
        self.widths[r]
    }

    fn param(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let offset = self.layout.push(name, shape);
        self.inits.push((self.layout.slots().len() - 1, init));
        offset
    }

    fn emit(&mut self, op: Op, width: usize) -> Reg {
        self.ops.push(op);
        self.widths.push(width);
        self.widths.len() - 1
    }

    pub fn dense(&mut self, src: Reg, fan_out: usize, name: &str, bias: bool) -> Reg {
        let fan_in = self.widths[src];
        let kernel = self.param(
            format!("{name}.kernel"),
            &[fan_in, fan_out],
            Init::LecunNormal { fan_in },
        );
        let bias = bias.then(|| self.param(format!("{name}.bias"), &[fan_out], Init::Zeros));
        self.emit(
            Op::Dense {
                src,
                kernel,
                bias,
                fan_in,
                fan_out,
            },
            fan_out,
        )
    }

    pub fn positive_dense(&mut self, src: Reg, fan_out: usize, name: &str, bias: bool) -> Reg {
        let fan_in = self.widths[src];
        let kernel = self.param(
            format!("{name}.kernel"),
            &[fan_in, fan_out],
            Init::PositiveLecun { fan_in },
        );
        let bias = bias.then(|| self.param(format!("{name}.bias"), &[fan_out], Init::Zeros));
        self.emit(
            Op::PositiveDense {
                src,
                kernel,
                bias,
                fan_in,
                fan_out,
            },
            fan_out,
        )
    }

    pub fn actnorm(&mut self, src: Reg, name: &str) -> Reg {
        let width = self.widths[src];
        let log_scale = self.param(format!("{name}.log_scale"), &[width], Init::Zeros);
        let shift = self.param(format!("{name}.shift"), &[width], Init::Zeros);
        self.emit(
            Op::ActNorm {
                src,
                log_scale,
                shift,
                width,
            },
            width,
        )
    }

    pub fn act(&mut self, src: Reg, act: Activation) -> Reg {
        let w = self.widths[src];
        self.emit(Op::Act { src, act }, w)
    }

    pub fn add(&mut self, lhs: Reg, rhs: Reg) -> Reg {
        assert_eq!(self.widths[lhs], self.widths[rhs], "add: width mismatch");
        let w = self.widths[lhs];
        self.emit(Op::Add { lhs, rhs }, w)
    }

    pub fn half_sq_norm(&mut self, src: Reg, name: &str) -> Reg {
        let log_alpha = self.param(name.to_string(), &[], Init::Zeros);
        self.emit(Op::HalfSqNorm { src, log_alpha }, 1)
    }

    pub fn finish(self) -> Graph {
        Graph {
            input_dim: self.input_dim,
            widths: self.widths,
            ops: self.ops,
            layout: self.layout,
            inits: self.inits,
        }
    }
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

// Standard deviation of a unit normal truncated to [-2, 2].
const TRUNC_STD: f64 = 0.879_625_661_034_239_8;

fn weights(w: &[f64], fan_in: usize, fan_out: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((fan_in, fan_out), w).expect("kernel slot shape")
}

// The matrix products below go through matrixmultiply, whose blocking
// depends on the inner and output widths only, so each output row is
// computed the same way whatever the batch size.

/// `out = u W (+ b)`.
fn affine(u: &Array2<f64>, w: &[f64], b: Option<&[f64]>, fan_out: usize) -> Array2<f64> {
    let (n, fan_in) = u.dim();
    let mut out = Array2::zeros((n, fan_out));
    general_mat_mul(1.0, u, &weights(w, fan_in, fan_out), 0.0, &mut out);
    if let Some(b) = b {
        let b = ArrayView1::from(b);
        for mut row in out.rows_mut() {
            row += &b;
        }
    }
    out
}

/// `out = g Wᵀ`.
fn times_wt(g: &Array2<f64>, w: &[f64], fan_in: usize) -> Array2<f64> {
    let (n, fan_out) = g.dim();
    let mut out = Array2::zeros((n, fan_in));
    general_mat_mul(1.0, g, &weights(w, fan_in, fan_out).t(), 0.0, &mut out);
    out
}

/// `wbar += uᵀ g`.
fn acc_outer(u: &Array2<f64>, g: &Array2<f64>, wbar: &mut [f64]) {
    let fan_in = u.ncols();
    let fan_out = g.ncols();
    let mut wb = ArrayViewMut2::from_shape((fan_in, fan_out), wbar).expect("kernel slot shape");
    general_mat_mul(1.0, &u.t(), g, 1.0, &mut wb);
}

fn acc_colsum(g: &Array2<f64>, bbar: &mut [f64]) {
    for row in g.rows() {
        for (o, v) in bbar.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, v: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &v,
        None => *slot = Some(v),
    }
}

impl Graph {
    /// Plain sequential stack, see [`LayerSpec`].
    pub fn sequential(input_dim: usize, layers: &[LayerSpec]) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::dim("input dimension must be positive"));
        }
        let mut b = GraphBuilder::new(input_dim);
        let mut cur = b.input();
        for (i, layer) in layers.iter().enumerate() {
            let name = format!("layer{i}");
            cur = match *layer {
                LayerSpec::Dense { out, bias } => b.dense(cur, out, &name, bias),
                LayerSpec::PositiveDense { out } => b.positive_dense(cur, out, &name, true),
                LayerSpec::ActNorm => b.actnorm(cur, &name),
                LayerSpec::Activation(a) => b.act(cur, a),
                LayerSpec::QuadraticSkip => {
                    let q = b.half_sq_norm(0, &format!("{name}.log_alpha"));
                    if cur == 0 {
                        q
                    } else if b.width(cur) == 1 {
                        b.add(cur, q)
                    } else {
                        return Err(Error::dim(format!(
                            "quadratic skip needs a scalar output, got width {}",
                            b.width(cur)
                        )));
                    }
                }
            };
        }
        Ok(b.finish())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty")
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    /// Draw initial parameters: truncated LeCun-normal kernels, positive
    /// kernels whose softplus matches the magnitude of such a draw, zeros
    /// elsewhere.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = ParamVector::zeros(self.layout.clone());
        for &(slot_idx, init) in &self.inits {
            let slot = &self.layout.slots()[slot_idx];
            let vals = &mut p.values[slot.offset..slot.offset + slot.numel()];
            match init {
                Init::Zeros => vals.fill(0.0),
                Init::LecunNormal { fan_in } => {
                    let std = (1.0 / fan_in as f64).sqrt() / TRUNC_STD;
                    vals.iter_mut().for_each(|v| *v = std * truncated_normal(rng));
                }
                Init::PositiveLecun { fan_in } => {
                    let std = (1.0 / fan_in as f64).sqrt() / TRUNC_STD;
                    vals.iter_mut().for_each(|v| {
                        let w = (std * truncated_normal(rng)).abs().max(1e-4);
                        *v = softplus_inv(w);
                    });
                }
            }
        }
        p
    }

    fn check(&self, params: &ParamVector, x: &Array2<f64>) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(Error::dim(format!(
                "parameter vector has {} entries, network expects {}",
                params.len(),
                self.layout.len()
            )));
        }
        if x.ncols() != self.input_dim {
            return Err(Error::dim(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &ParamVector, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.trace(params, x, None)?.into_output())
    }

    /// Forward pass keeping every register; with `tangent` also propagates
    /// the directional derivative along that input direction.
    pub fn trace(
        &self,
        params: &ParamVector,
        x: &Array2<f64>,
        tangent: Option<&Array2<f64>>,
    ) -> Result<Trace> {
        self.check(params, x)?;
        if let Some(t) = tangent {
            if t.dim() != x.dim() {
                return Err(Error::dim("tangent shape differs from input shape"));
            }
        }
        let p = &params.values;
        let n = x.nrows();
        let mut values = Vec::with_capacity(self.widths.len());
        values.push(x.as_standard_layout().into_owned());
        let mut tangents = tangent.map(|t| {
            let mut v = Vec::with_capacity(self.widths.len());
            v.push(t.as_standard_layout().into_owned());
            v
        });
        let mut positive = vec![None; self.ops.len()];

        for (i, op) in self.ops.iter().enumerate() {
            let (val, tan) = match *op {
                Op::Dense {
                    src,
                    kernel,
                    bias,
                    fan_in,
                    fan_out,
                } => {
                    let w = &p[kernel..kernel + fan_in * fan_out];
                    let b = bias.map(|o| &p[o..o + fan_out]);
                    let y = affine(&values[src], w, b, fan_out);
                    let t = tangents.as_ref().map(|t| affine(&t[src], w, None, fan_out));
                    (y, t)
                }
                Op::PositiveDense {
                    src,
                    kernel,
                    bias,
                    fan_in,
                    fan_out,
                } => {
                    let w: Vec<f64> = p[kernel..kernel + fan_in * fan_out]
                        .iter()
                        .map(|&k| softplus(k))
                        .collect();
                    let b = bias.map(|o| &p[o..o + fan_out]);
                    let y = affine(&values[src], &w, b, fan_out);
                    let t = tangents.as_ref().map(|t| affine(&t[src], &w, None, fan_out));
                    positive[i] = Some(w);
                    (y, t)
                }
                Op::ActNorm {
                    src,
                    log_scale,
                    shift,
                    width,
                } => {
                    let s: Vec<f64> = p[log_scale..log_scale + width].iter().map(|v| v.exp()).collect();
                    let sh = &p[shift..shift + width];
                    let mut y = values[src].clone();
                    for mut row in y.rows_mut() {
                        for ((v, &sj), &tj) in row.iter_mut().zip(&s).zip(sh) {
                            *v = *v * sj + tj;
                        }
                    }
                    let t = tangents.as_ref().map(|t| {
                        let mut ty = t[src].clone();
                        for mut row in ty.rows_mut() {
                            for (v, &sj) in row.iter_mut().zip(&s) {
                                *v *= sj;
                            }
                        }
                        ty
                    });
                    (y, t)
                }
                Op::Act { src, act } => {
                    let u = &values[src];
                    let y = u.mapv(|v| act.value(v));
                    let t = tangents.as_ref().map(|t| {
                        let mut ty = t[src].clone();
                        ty.zip_mut_with(u, |tv, &uv| *tv *= act.deriv(uv));
                        ty
                    });
                    (y, t)
                }
                Op::Add { lhs, rhs } => {
                    let y = &values[lhs] + &values[rhs];
                    let t = tangents.as_ref().map(|t| &t[lhs] + &t[rhs]);
                    (y, t)
                }
                Op::HalfSqNorm { src, log_alpha } => {
                    let c = p[log_alpha].exp();
                    let u = &values[src];
                    let mut y = Array2::zeros((n, 1));
                    for (r, row) in u.rows().into_iter().enumerate() {
                        y[[r, 0]] = c * 0.5 * row.dot(&row);
                    }
                    let t = tangents.as_ref().map(|t| {
                        let mut ty = Array2::zeros((n, 1));
                        for (r, (row, trow)) in u.rows().into_iter().zip(t[src].rows()).enumerate() {
                            ty[[r, 0]] = c * row.dot(&trow);
                        }
                        ty
                    });
                    (y, t)
                }
            };
            values.push(val);
            if let (Some(ts), Some(t)) = (tangents.as_mut(), tan) {
                ts.push(t);
            }
        }
        Ok(Trace {
            values,
            tangents,
            positive,
        })
    }

    /// Reverse pass from output adjoints `out_bar` (for the values) and
    /// `out_tangent_bar` (for the tangents; requires a tangent trace).
    pub fn backward(
        &self,
        params: &ParamVector,
        trace: &Trace,
        out_bar: Option<&Array2<f64>>,
        out_tangent_bar: Option<&Array2<f64>>,
    ) -> Result<Grads> {
        let n = trace.values[0].nrows();
        let out_shape = (n, self.output_dim());
        for g in [out_bar, out_tangent_bar].into_iter().flatten() {
            if g.dim() != out_shape {
                return Err(Error::dim(format!(
                    "output adjoint has shape {:?}, expected {:?}",
                    g.dim(),
                    out_shape
                )));
            }
        }
        if out_tangent_bar.is_some() && trace.tangents.is_none() {
            return Err(Error::Contract("tangent adjoint given for a primal-only trace".into()));
        }
        let p = &params.values;
        let mut pbar = vec![0.0; p.len()];
        let regs = self.widths.len();
        let mut bars: Vec<Option<Array2<f64>>> = vec![None; regs];
        let mut tbars: Vec<Option<Array2<f64>>> = vec![None; regs];
        bars[regs - 1] = out_bar.map(|g| g.as_standard_layout().into_owned());
        tbars[regs - 1] = out_tangent_bar.map(|g| g.as_standard_layout().into_owned());
        let tans = trace.tangents.as_ref();

        for (i, op) in self.ops.iter().enumerate().rev() {
            let ybar = bars[i + 1].take();
            let tybar = tbars[i + 1].take();
            if ybar.is_none() && tybar.is_none() {
                continue;
            }
            match *op {
                Op::Dense {
                    src,
                    kernel,
                    bias,
                    fan_in,
                    fan_out,
                }
                | Op::PositiveDense {
                    src,
                    kernel,
                    bias,
                    fan_in,
                    fan_out,
                } => {
                    let positive = trace.positive[i].as_deref();
                    let w = positive.unwrap_or(&p[kernel..kernel + fan_in * fan_out]);
                    let mut wbar = vec![0.0; fan_in * fan_out];
                    if let Some(g) = &ybar {
                        acc_outer(&trace.values[src], g, &mut wbar);
                        if let Some(b) = bias {
                            acc_colsum(g, &mut pbar[b..b + fan_out]);
                        }
                        accumulate(&mut bars[src], times_wt(g, w, fan_in));
                    }
                    if let Some(tg) = &tybar {
                        let ts = tans.expect("checked above");
                        acc_outer(&ts[src], tg, &mut wbar);
                        accumulate(&mut tbars[src], times_wt(tg, w, fan_in));
                    }
                    let kbar = &mut pbar[kernel..kernel + fan_in * fan_out];
                    if positive.is_some() {
                        for ((o, g), &k) in kbar.iter_mut().zip(&wbar).zip(&p[kernel..]) {
                            *o += g * sigmoid(k);
                        }
                    } else {
                        for (o, g) in kbar.iter_mut().zip(&wbar) {
                            *o += g;
                        }
                    }
                }
                Op::ActNorm {
                    src,
                    log_scale,
                    shift,
                    width,
                } => {
                    let s: Vec<f64> = p[log_scale..log_scale + width].iter().map(|v| v.exp()).collect();
                    let mut lsbar = vec![0.0; width];
                    if let Some(g) = &ybar {
                        acc_colsum(g, &mut pbar[shift..shift + width]);
                        let u = &trace.values[src];
                        for (grow, urow) in g.rows().into_iter().zip(u.rows()) {
                            for ((o, gv), uv) in lsbar.iter_mut().zip(grow).zip(urow) {
                                *o += gv * uv;
                            }
                        }
                        let mut ubar = g.clone();
                        for mut row in ubar.rows_mut() {
                            row.iter_mut().zip(&s).for_each(|(v, sj)| *v *= sj);
                        }
                        accumulate(&mut bars[src], ubar);
                    }
                    if let Some(tg) = &tybar {
                        let ut = &tans.expect("checked")[src];
                        for (grow, urow) in tg.rows().into_iter().zip(ut.rows()) {
                            for ((o, gv), uv) in lsbar.iter_mut().zip(grow).zip(urow) {
                                *o += gv * uv;
                            }
                        }
                        let mut tubar = tg.clone();
                        for mut row in tubar.rows_mut() {
                            row.iter_mut().zip(&s).for_each(|(v, sj)| *v *= sj);
                        }
                        accumulate(&mut tbars[src], tubar);
                    }
                    for (j, o) in pbar[log_scale..log_scale + width].iter_mut().enumerate() {
                        *o += s[j] * lsbar[j];
                    }
                }
                Op::Act { src, act } => {
                    let u = &trace.values[src];
                    let mut ubar = Array2::zeros(u.dim());
                    if let Some(g) = &ybar {
                        ndarray::Zip::from(&mut ubar)
                            .and(g)
                            .and(u)
                            .for_each(|o, &gv, &uv| *o = gv * act.deriv(uv));
                    }
                    if let Some(tg) = &tybar {
                        let ut = &tans.expect("checked")[src];
                        ndarray::Zip::from(&mut ubar)
                            .and(tg)
                            .and(u)
                            .and(ut)
                            .for_each(|o, &gv, &uv, &tv| *o += gv * act.second_deriv(uv) * tv);
                        let mut tubar = tg.clone();
                        tubar.zip_mut_with(u, |v, &uv| *v *= act.deriv(uv));
                        accumulate(&mut tbars[src], tubar);
                    }
                    accumulate(&mut bars[src], ubar);
                }
                Op::Add { lhs, rhs } => {
                    if let Some(g) = ybar {
                        accumulate(&mut bars[lhs], g.clone());
                        accumulate(&mut bars[rhs], g);
                    }
                    if let Some(tg) = tybar {
                        accumulate(&mut tbars[lhs], tg.clone());
                        accumulate(&mut tbars[rhs], tg);
                    }
                }
                Op::HalfSqNorm { src, log_alpha } => {
                    let c = p[log_alpha].exp();
                    let u = &trace.values[src];
                    let y = &trace.values[i + 1];
                    let mut ubar = Array2::zeros(u.dim());
                    let mut labar = 0.0;
                    if let Some(g) = &ybar {
                        for r in 0..n {
                            let gr = g[[r, 0]];
                            labar += gr * y[[r, 0]];
                            ubar.row_mut(r).scaled_add(c * gr, &u.row(r));
                        }
                    }
                    if let Some(tg) = &tybar {
                        let ts = tans.expect("checked");
                        let (ut, yt) = (&ts[src], &ts[i + 1]);
                        let mut tubar = Array2::zeros(u.dim());
                        for r in 0..n {
                            let gr = tg[[r, 0]];
                            labar += gr * yt[[r, 0]];
                            ubar.row_mut(r).scaled_add(c * gr, &ut.row(r));
                            tubar.row_mut(r).scaled_add(c * gr, &u.row(r));
                        }
                        accumulate(&mut tbars[src], tubar);
                    }
                    pbar[log_alpha] += labar;
                    accumulate(&mut bars[src], ubar);
                }
            }
        }
        let input = bars[0]
            .take()
            .unwrap_or_else(|| Array2::zeros((n, self.input_dim)));
        let input_tangent = trace.tangents.as_ref().map(|_| {
            tbars[0]
                .take()
                .unwrap_or_else(|| Array2::zeros((n, self.input_dim)))
        });
        Ok(Grads {
            input,
            input_tangent,
            params: pbar,
        })
    }

    fn require_scalar(&self) -> Result<()> {
        if self.output_dim() != 1 {
            return Err(Error::Contract(format!(
                "expected a scalar-output model, output width is {}",
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Row-wise scalar values of a scalar-output model.
    pub fn values(&self, params: &ParamVector, x: &Array2<f64>) -> Result<Vec<f64>> {
        self.require_scalar()?;
        Ok(self.forward(params, x)?.into_raw_vec_and_offset().0)
    }

    /// Values and input gradients `∂f/∂x` of a scalar-output model.
    pub fn value_and_grad_input(
        &self,
        params: &ParamVector,
        x: &Array2<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        self.require_scalar()?;
        let trace = self.trace(params, x, None)?;
        let ones = Array2::ones((x.nrows(), 1));
        let g = self.backward(params, &trace, Some(&ones), None)?;
        Ok((trace.into_output().into_raw_vec_and_offset().0, g.input))
    }

    pub fn grad_input(&self, params: &ParamVector, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.value_and_grad_input(params, x)?.1)
    }

    /// Vector-Jacobian product: adjoints of `Σ ⟨out_bar, model(x)⟩`.
    pub fn vjp(
        &self,
        params: &ParamVector,
        x: &Array2<f64>,
        out_bar: &Array2<f64>,
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        let trace = self.trace(params, x, None)?;
        let g = self.backward(params, &trace, Some(out_bar), None)?;
        Ok((g.input, g.params))
    }

    /// Parameter gradient of a loss given its adjoint with respect to the
    /// model output.
    pub fn grad_params(
        &self,
        params: &ParamVector,
        x: &Array2<f64>,
        out_bar: &Array2<f64>,
    ) -> Result<ParamVector> {
        let (_, g) = self.vjp(params, x, out_bar)?;
        params.with_values(g)
    }

    /// Parameter gradient of `mean_rows f(x)`.
    pub fn grad_params_mean(&self, params: &ParamVector, x: &Array2<f64>) -> Result<ParamVector> {
        self.require_scalar()?;
        let w = Array2::from_elem((x.nrows(), 1), 1.0 / x.nrows() as f64);
        self.grad_params(params, x, &w)
    }

    /// Adjoints of `Σ_r w_r ⟨v_r, ∇ₓf(x_r)⟩` for a scalar model: returns the
    /// input adjoint `Σ w_r H(x_r) v_r` (row-wise Hessian-vector products)
    /// and the parameter adjoint.
    pub fn directional_grad_adjoints(
        &self,
        params: &ParamVector,
        x: &Array2<f64>,
        v: &Array2<f64>,
    ) -> Result<(Array2<f64>, Vec<f64>)> {
        self.require_scalar()?;
        let trace = self.trace(params, x, Some(v))?;
        let ones = Array2::ones((x.nrows(), 1));
        let g = self.backward(params, &trace, None, Some(&ones))?;
        Ok((g.input, g.params))
    }

    /// Standardize every ActNorm layer on `x`: after the call each such
    /// layer's output on `x` has per-channel zero mean and unit variance
    /// (up to the `1e-6` variance guard).
    pub fn actnorm_init(&self, params: &ParamVector, x: &Array2<f64>) -> Result<ParamVector> {
        let mut p = params.clone();
        let n = x.nrows() as f64;
        for op in &self.ops {
            if let Op::ActNorm {
                src,
                log_scale,
                shift,
                width,
            } = *op
            {
                let trace = self.trace(&p, x, None)?;
                let u = &trace.values[src];
                for j in 0..width {
                    let col: Vec<f64> = u.column(j).to_vec();
                    let mu = super::pairwise_sum(&col) / n;
                    let dev: Vec<f64> = col.iter().map(|v| (v - mu) * (v - mu)).collect();
                    let var = super::pairwise_sum(&dev) / n;
                    let ls = -0.5 * (var + ACTNORM_EPS).ln();
                    p.values[log_scale + j] = ls;
                    p.values[shift + j] = -mu * ls.exp();
                }
            }
        }
        Ok(p)
    }
}
