//! Manifold-constrained hyper-connection kernels.
//!
//! Per token `t`, the `n` normalized streams are flattened into one vector of
//! length `n·D` and fed to three dynamic heads
//! `H̃ = α · tanh(θ · x_t) + b`, followed by a sigmoid (pre), a doubled
//! sigmoid (post) and a Sinkhorn-Knopp projection of `exp(H̃)` (res).
//!
//! `res[t, i, j]` is the flow from source stream `j` into destination stream
//! `i`, so mixing is the left multiplication `out[t, i] = Σ_j res[t, i, j]·r[t, j]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Backward, BackwardCtx, Bound, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SinkhornConfig {
    pub iters: usize,
    pub tol: f32,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            iters: 20,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub alpha: ParamId,
    pub theta: ParamId,
    pub bias: ParamId,
}

/// α/θ/b for the pre, post and res heads of one sublayer.
#[derive(Clone, Copy, Debug)]
pub struct HyperHeadParams {
    pub streams: usize,
    pub width: usize,
    pub pre: HeadParams,
    pub post: HeadParams,
    pub res: HeadParams,
}

impl HyperHeadParams {
    /// Registers `{prefix}.{pre,post,res}.{alpha,theta,bias}` with random θ and
    /// identity-style gates and biases (see [`init_identity`]).
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        streams: usize,
        width: usize,
        gamma: f32,
        rng: &mut R,
    ) -> Result<Self> {
        let nd = streams * width;
        let std = 0.5 / (nd as f32).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let mut head = |store: &mut ParamStore, name: &str, rows: usize, bias_shape: &[usize]| {
            let theta: Vec<f32> = (0..rows * nd).map(|_| normal.sample(rng)).collect();
            Ok::<_, Error>(HeadParams {
                alpha: store.add(format!("{prefix}.{name}.alpha"), Tensor::scalar(0.0))?,
                theta: store.add(
                    format!("{prefix}.{name}.theta"),
                    Tensor::new(&[rows, nd], theta)?,
                )?,
                bias: store.add(format!("{prefix}.{name}.bias"), Tensor::zeros(bias_shape))?,
            })
        };
        let pre = head(store, "pre", streams, &[streams])?;
        let post = head(store, "post", streams, &[streams])?;
        let res = head(store, "res", streams * streams, &[streams, streams])?;
        let params = Self {
            streams,
            width,
            pre,
            post,
            res,
        };
        init_identity(store, &params, gamma)?;
        Ok(params)
    }
}

/// Sets every α to 0, `b_res = γ·I` and `b_pre = b_post = 0`, so the heads
/// produce `H_pre = 0.5`, `H_post = 1` and `H_res ≈ I` for any input.
pub fn init_identity(store: &mut ParamStore, params: &HyperHeadParams, gamma: f32) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::config(format!(
            "identity gamma must be > 0, got {gamma}"
        )));
    }
    let n = params.streams;
    for head in [params.pre, params.post, params.res] {
        store.get_mut(head.alpha).data_mut()[0] = 0.0;
        store.get_mut(head.bias).data_mut().fill(0.0);
    }
    let b = store.get_mut(params.res.bias).data_mut();
    for i in 0..n {
        b[i * n + i] = gamma;
    }
    Ok(())
}

/// Pre/post/res matrices of one sublayer, living on a tape.
#[derive(Clone, Copy, Debug)]
pub struct HyperMatrices {
    /// `[L, n]`, entries in (0, 1).
    pub pre: Var,
    /// `[L, n]`, entries in (0, 2).
    pub post: Var,
    /// `[L, n, n]`, doubly stochastic per token.
    pub res: Var,
}

fn stream_dims(tape: &Tape, r: Var) -> Result<(usize, usize, usize)> {
    match *tape.shape(r) {
        [l, n, d] => Ok((l, n, d)),
        ref s => Err(Error::shape(format!(
            "expected [L, n, D] streams, got {s:?}"
        ))),
    }
}

fn dynamic_head(
    tape: &mut Tape,
    flat: Var,
    head: &HeadParams,
    bound: &Bound,
    rows: usize,
) -> Result<Var> {
    let z = tape.linear(flat, bound.var(head.theta), None)?;
    let z = tape.tanh(z)?;
    let z = tape.scale_by(z, bound.var(head.alpha))?;
    let b = tape.reshape(bound.var(head.bias), &[rows])?;
    tape.add_bias(z, b)
}

pub fn gen_hyper_matrices(
    tape: &mut Tape,
    rnorm: Var,
    params: &HyperHeadParams,
    bound: &Bound,
    sinkhorn: SinkhornConfig,
) -> Result<HyperMatrices> {
    let (l, n, d) = stream_dims(tape, rnorm)?;
    if n != params.streams || d != params.width {
        return Err(Error::shape(format!(
            "streams [{l}, {n}, {d}] do not match head params (n = {}, D = {})",
            params.streams, params.width
        )));
    }
    let flat = tape.reshape(rnorm, &[l, n * d])?;
    let pre = dynamic_head(tape, flat, &params.pre, bound, n)?;
    let pre = tape.sigmoid(pre)?;
    let post = dynamic_head(tape, flat, &params.post, bound, n)?;
    let post = tape.sigmoid(post)?;
    let post = tape.scale(post, 2.0)?;
    let res = dynamic_head(tape, flat, &params.res, bound, n * n)?;
    let res = tape.reshape(res, &[l, n, n])?;
    let res = sinkhorn_knopp(tape, res, sinkhorn.iters, sinkhorn.tol)?;
    Ok(HyperMatrices { pre, post, res })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    /// Normalize each row (sum over the last axis).
    Rows,
    /// Normalize each column (sum over the middle axis).
    Cols,
}

struct NormalizeOp {
    axis: Axis,
    n: usize,
    sums: Vec<f32>,
}

fn flat_index(axis: Axis, n: usize, t: usize, line: usize, k: usize) -> usize {
    match axis {
        Axis::Rows => (t * n + line) * n + k,
        Axis::Cols => (t * n + k) * n + line,
    }
}

impl Backward for NormalizeOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let n = self.n;
        let y = ctx.output.data();
        let g = ctx.grad;
        let mut gx = vec![0.0f32; y.len()];
        for (line_id, &s) in self.sums.iter().enumerate() {
            let (t, line) = (line_id / n, line_id % n);
            let dot: f32 = (0..n)
                .map(|k| {
                    let i = flat_index(self.axis, n, t, line, k);
                    g[i] * y[i]
                })
                .sum();
            for k in 0..n {
                let i = flat_index(self.axis, n, t, line, k);
                gx[i] = (g[i] - dot) / s;
            }
        }
        vec![Some(gx)]
    }
}

fn normalize(tape: &mut Tape, x: Var, axis: Axis) -> Result<Var> {
    let (l, n, n2) = stream_dims(tape, x)?;
    if n != n2 {
        return Err(Error::shape("normalize expects square per-token matrices"));
    }
    let src = tape.data(x);
    let mut out = vec![0.0f32; src.len()];
    let mut sums = Vec::with_capacity(l * n);
    for t in 0..l {
        for line in 0..n {
            let s: f32 = (0..n).map(|k| src[flat_index(axis, n, t, line, k)]).sum();
            for k in 0..n {
                let i = flat_index(axis, n, t, line, k);
                out[i] = src[i] / s;
            }
            sums.push(s);
        }
    }
    let t = Tensor::new(&[l, n, n], out)?;
    tape.push(t, &[x], NormalizeOp { axis, n, sums })
}

/// Largest `|row sum − 1|` or `|column sum − 1|` over all tokens.
pub fn doubly_stochastic_deviation(values: &[f32], n: usize) -> f64 {
    let mut worst = 0.0f64;
    for m in values.chunks_exact(n * n) {
        for i in 0..n {
            let row: f64 = (0..n).map(|j| m[i * n + j] as f64).sum();
            let col: f64 = (0..n).map(|j| m[j * n + i] as f64).sum();
            worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
    }
    worst
}

/// `exp(logits)` followed by up to `iters` column-then-row normalization
/// passes, stopping early once the deviation drops below `tol`. Returns the
/// deviation after each completed pass alongside the result.
pub fn sinkhorn_knopp_traced(
    tape: &mut Tape,
    logits: Var,
    iters: usize,
    tol: f32,
) -> Result<(Var, Vec<f64>)> {
    let (_, n, n2) = stream_dims(tape, logits)?;
    if n != n2 {
        return Err(Error::shape("sinkhorn expects [L, n, n] logits"));
    }
    if iters == 0 {
        return Err(Error::config("sinkhorn needs at least one iteration"));
    }
    let mut m = tape.exp(logits)?;
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        m = normalize(tape, m, Axis::Cols)?;
        m = normalize(tape, m, Axis::Rows)?;
        let dev = doubly_stochastic_deviation(tape.data(m), n);
        trace.push(dev);
        if dev < tol as f64 {
            break;
        }
    }
    Ok((m, trace))
}

pub fn sinkhorn_knopp(tape: &mut Tape, logits: Var, iters: usize, tol: f32) -> Result<Var> {
    sinkhorn_knopp_traced(tape, logits, iters, tol).map(|(m, _)| m)
}

struct PreContractOp {
    l: usize,
    n: usize,
    d: usize,
}

impl Backward for PreContractOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let Self { l, n, d } = *self;
        let h = ctx.inputs[0].data();
        let r = ctx.inputs[1].data();
        let g = ctx.grad;
        let gh = ctx.needs[0].then(|| {
            let mut gh = vec![0.0f32; l * n];
            for t in 0..l {
                let gt = &g[t * d..(t + 1) * d];
                for i in 0..n {
                    let rs = &r[(t * n + i) * d..(t * n + i + 1) * d];
                    gh[t * n + i] = gt.iter().zip(rs).map(|(a, b)| a * b).sum();
                }
            }
            gh
        });
        let gr = ctx.needs[1].then(|| {
            let mut gr = vec![0.0f32; l * n * d];
            for t in 0..l {
                for i in 0..n {
                    let w = h[t * n + i];
                    for k in 0..d {
                        gr[(t * n + i) * d + k] = w * g[t * d + k];
                    }
                }
            }
            gr
        });
        vec![gh, gr]
    }
}

/// `y[t, :] = Σ_i h[t, i] · r[t, i, :]`.
pub fn pre_contract(tape: &mut Tape, h: Var, r: Var) -> Result<Var> {
    let (l, n, d) = stream_dims(tape, r)?;
    if tape.shape(h) != [l, n] {
        return Err(Error::shape(format!(
            "pre_contract: H {:?} vs streams [{l}, {n}, {d}]",
            tape.shape(h)
        )));
    }
    let (hv, rv) = (tape.data(h), tape.data(r));
    let mut y = vec![0.0f32; l * d];
    for t in 0..l {
        for i in 0..n {
            let w = hv[t * n + i];
            let rs = &rv[(t * n + i) * d..(t * n + i + 1) * d];
            y[t * d..(t + 1) * d]
                .iter_mut()
                .zip(rs)
                .for_each(|(o, x)| *o += w * x);
        }
    }
    let out = Tensor::new(&[l, d], y)?;
    tape.push(out, &[h, r], PreContractOp { l, n, d })
}

struct PostExpandOp {
    l: usize,
    n: usize,
    d: usize,
}

impl Backward for PostExpandOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let Self { l, n, d } = *self;
        let h = ctx.inputs[0].data();
        let y = ctx.inputs[1].data();
        let g = ctx.grad;
        let gh = ctx.needs[0].then(|| {
            let mut gh = vec![0.0f32; l * n];
            for t in 0..l {
                let yt = &y[t * d..(t + 1) * d];
                for i in 0..n {
                    let gs = &g[(t * n + i) * d..(t * n + i + 1) * d];
                    gh[t * n + i] = gs.iter().zip(yt).map(|(a, b)| a * b).sum();
                }
            }
            gh
        });
        let gy = ctx.needs[1].then(|| {
            let mut gy = vec![0.0f32; l * d];
            for t in 0..l {
                for i in 0..n {
                    let w = h[t * n + i];
                    for k in 0..d {
                        gy[t * d + k] += w * g[(t * n + i) * d + k];
                    }
                }
            }
            gy
        });
        vec![gh, gy]
    }
}

/// `out[t, i, :] = h[t, i] · y[t, :]`.
pub fn post_expand(tape: &mut Tape, h: Var, y: Var) -> Result<Var> {
    let (l, n) = match *tape.shape(h) {
        [l, n] => (l, n),
        ref s => {
            return Err(Error::shape(format!(
                "post_expand: H must be [L, n], got {s:?}"
            )))
        }
    };
    let d = match *tape.shape(y) {
        [ly, d] if ly == l => d,
        ref s => {
            return Err(Error::shape(format!(
                "post_expand: y {s:?} does not match H [{l}, {n}]"
            )))
        }
    };
    let (hv, yv) = (tape.data(h), tape.data(y));
    let mut out = vec![0.0f32; l * n * d];
    for t in 0..l {
        for i in 0..n {
            let w = hv[t * n + i];
            for k in 0..d {
                out[(t * n + i) * d + k] = w * yv[t * d + k];
            }
        }
    }
    let out = Tensor::new(&[l, n, d], out)?;
    tape.push(out, &[h, y], PostExpandOp { l, n, d })
}

struct ResMixOp {
    l: usize,
    n: usize,
    d: usize,
}

impl Backward for ResMixOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let Self { l, n, d } = *self;
        let h = ctx.inputs[0].data();
        let r = ctx.inputs[1].data();
        let g = ctx.grad;
        let gh = ctx.needs[0].then(|| {
            let mut gh = vec![0.0f32; l * n * n];
            for t in 0..l {
                for i in 0..n {
                    let gs = &g[(t * n + i) * d..(t * n + i + 1) * d];
                    for j in 0..n {
                        let rs = &r[(t * n + j) * d..(t * n + j + 1) * d];
                        gh[(t * n + i) * n + j] = gs.iter().zip(rs).map(|(a, b)| a * b).sum();
                    }
                }
            }
            gh
        });
        let gr = ctx.needs[1].then(|| {
            let mut gr = vec![0.0f32; l * n * d];
            for t in 0..l {
                for i in 0..n {
                    let gs = &g[(t * n + i) * d..(t * n + i + 1) * d];
                    for j in 0..n {
                        let w = h[(t * n + i) * n + j];
                        gr[(t * n + j) * d..(t * n + j + 1) * d]
                            .iter_mut()
                            .zip(gs)
                            .for_each(|(o, x)| *o += w * x);
                    }
                }
            }
            gr
        });
        vec![gh, gr]
    }
}

/// `out[t, i, :] = Σ_j h[t, i, j] · r[t, j, :]` (row = destination, column = source).
pub fn res_mix(tape: &mut Tape, h: Var, r: Var) -> Result<Var> {
    let (l, n, d) = stream_dims(tape, r)?;
    if tape.shape(h) != [l, n, n] {
        return Err(Error::shape(format!(
            "res_mix: H {:?} vs streams [{l}, {n}, {d}]",
            tape.shape(h)
        )));
    }
    let (hv, rv) = (tape.data(h), tape.data(r));
    let mut out = vec![0.0f32; l * n * d];
    for t in 0..l {
        for i in 0..n {
            let o = &mut out[(t * n + i) * d..(t * n + i + 1) * d];
            for j in 0..n {
                let w = hv[(t * n + i) * n + j];
                let rs = &rv[(t * n + j) * d..(t * n + j + 1) * d];
                o.iter_mut().zip(rs).for_each(|(o, x)| *o += w * x);
            }
        }
    }
    let out = Tensor::new(&[l, n, d], out)?;
    tape.push(out, &[h, r], ResMixOp { l, n, d })
}
