use crate::error::{Error, Result};
use crate::numerics::tape::{Backward, BackwardCtx, Tape, Var};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Silu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Tanh,
    Silu,
    Softplus,
    Exp,
}

impl From<Activation> for Unary {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Sigmoid => Unary::Sigmoid,
            Activation::Tanh => Unary::Tanh,
            Activation::Silu => Unary::Silu,
        }
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Unary {
    fn apply(self, x: f32) -> f32 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Silu => x * sigmoid(x),
            Unary::Softplus => softplus(x),
            Unary::Exp => x.exp(),
        }
    }

    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Softplus => sigmoid(x),
            Unary::Exp => y,
        }
    }
}

struct UnaryOp(Unary);

impl Backward for UnaryOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let x = ctx.inputs[0].data();
        let y = ctx.output.data();
        let g = x
            .iter()
            .zip(y)
            .zip(ctx.grad)
            .map(|((&x, &y), &g)| g * self.0.derivative(x, y))
            .collect();
        vec![Some(g)]
    }
}

struct AddOp;

impl Backward for AddOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        ctx.needs
            .iter()
            .map(|&n| n.then(|| ctx.grad.to_vec()))
            .collect()
    }
}

struct SubOp;

impl Backward for SubOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        vec![
            ctx.needs[0].then(|| ctx.grad.to_vec()),
            ctx.needs[1].then(|| ctx.grad.iter().map(|g| -g).collect()),
        ]
    }
}

struct MulOp;

impl Backward for MulOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let a = ctx.inputs[0].data();
        let b = ctx.inputs[1].data();
        vec![
            ctx.needs[0].then(|| ctx.grad.iter().zip(b).map(|(g, b)| g * b).collect()),
            ctx.needs[1].then(|| ctx.grad.iter().zip(a).map(|(g, a)| g * a).collect()),
        ]
    }
}

struct ScaleOp(f32);

impl Backward for ScaleOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        vec![Some(ctx.grad.iter().map(|g| g * self.0).collect())]
    }
}

struct ScaleByOp;

impl Backward for ScaleByOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let x = ctx.inputs[0].data();
        let s = ctx.inputs[1].data()[0];
        vec![
            ctx.needs[0].then(|| ctx.grad.iter().map(|g| g * s).collect()),
            ctx.needs[1].then(|| {
                let dot: f64 = ctx
                    .grad
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| g as f64 * x as f64)
                    .sum();
                vec![dot as f32]
            }),
        ]
    }
}

/// Sums `grad` (viewed as rows of width `width`) down to one row.
fn sum_rows(grad: &[f32], width: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; width];
    for row in grad.chunks_exact(width) {
        out.iter_mut().zip(row).for_each(|(o, g)| *o += g);
    }
    out
}

struct AddBiasOp;

impl Backward for AddBiasOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let width = ctx.inputs[1].len();
        vec![
            ctx.needs[0].then(|| ctx.grad.to_vec()),
            ctx.needs[1].then(|| sum_rows(ctx.grad, width)),
        ]
    }
}

/// `c[m×n] = a[m×k] · b[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: callers pass buffers sized m·k, k·n and m·n under the given
    // strides; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct LinearOp {
    rows: usize,
    din: usize,
    dout: usize,
}

impl Backward for LinearOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let Self { rows, din, dout } = *self;
        let x = ctx.inputs[0].data();
        let w = ctx.inputs[1].data();
        let g = ctx.grad;
        let mut out = Vec::with_capacity(ctx.inputs.len());
        out.push(ctx.needs[0].then(|| {
            let mut gx = vec![0.0f32; rows * din];
            gemm(rows, dout, din, g, dout, 1, w, din, 1, &mut gx);
            gx
        }));
        out.push(ctx.needs[1].then(|| {
            let mut gw = vec![0.0f32; dout * din];
            gemm(dout, rows, din, g, 1, dout, x, din, 1, &mut gw);
            gw
        }));
        if ctx.inputs.len() == 3 {
            out.push(ctx.needs[2].then(|| sum_rows(g, dout)));
        }
        out
    }
}

struct RmsNormOp {
    width: usize,
    inv_rms: Vec<f32>,
}

impl Backward for RmsNormOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let d = self.width;
        let x = ctx.inputs[0].data();
        let gain = ctx.inputs[1].data();
        let g = ctx.grad;
        let gx = ctx.needs[0].then(|| {
            let mut gx = vec![0.0f32; x.len()];
            for (row, &r) in self.inv_rms.iter().enumerate() {
                let xs = &x[row * d..(row + 1) * d];
                let gs = &g[row * d..(row + 1) * d];
                let dot: f32 = xs
                    .iter()
                    .zip(gs)
                    .zip(gain)
                    .map(|((x, g), w)| x * g * w)
                    .sum();
                let coef = r * r * r * dot / d as f32;
                for i in 0..d {
                    gx[row * d + i] = r * gain[i] * gs[i] - coef * xs[i];
                }
            }
            gx
        });
        let ggain = ctx.needs[1].then(|| {
            let mut gg = vec![0.0f32; d];
            for (row, &r) in self.inv_rms.iter().enumerate() {
                for i in 0..d {
                    gg[i] += g[row * d + i] * x[row * d + i] * r;
                }
            }
            gg
        });
        vec![gx, ggain]
    }
}

struct ReshapeOp;

impl Backward for ReshapeOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        vec![Some(ctx.grad.to_vec())]
    }
}

struct SumOp;

impl Backward for SumOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        vec![Some(vec![ctx.grad[0]; ctx.inputs[0].len()])]
    }
}

struct CrossEntropyOp {
    classes: usize,
    targets: Vec<Option<usize>>,
    count: usize,
}

impl Backward for CrossEntropyOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let k = self.classes;
        let logits = ctx.inputs[0].data();
        let scale = ctx.grad[0] / self.count as f32;
        let mut gl = vec![0.0f32; logits.len()];
        for (row, target) in self.targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            let z = &logits[row * k..(row + 1) * k];
            let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let denom: f32 = z.iter().map(|v| (v - max).exp()).sum();
            for c in 0..k {
                let p = (z[c] - max).exp() / denom;
                let onehot = if c == t { 1.0 } else { 0.0 };
                gl[row * k + c] = scale * (p - onehot);
            }
        }
        vec![Some(gl)]
    }
}

struct GatherRowsOp {
    index: Vec<usize>,
    width: usize,
}

impl Backward for GatherRowsOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let w = self.width;
        let mut gx = vec![0.0f32; ctx.inputs[0].len()];
        for (m, &row) in self.index.iter().enumerate() {
            gx[row * w..(row + 1) * w]
                .iter_mut()
                .zip(&ctx.grad[m * w..(m + 1) * w])
                .for_each(|(a, b)| *a += b);
        }
        vec![Some(gx)]
    }
}

struct ScatterRowsOp {
    index: Vec<usize>,
    width: usize,
}

impl Backward for ScatterRowsOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let w = self.width;
        let mut gy = Vec::with_capacity(self.index.len() * w);
        for &row in &self.index {
            gy.extend_from_slice(&ctx.grad[row * w..(row + 1) * w]);
        }
        vec![Some(gy)]
    }
}

struct StackMiddleOp {
    parts: usize,
    width: usize,
}

impl Backward for StackMiddleOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let (n, d) = (self.parts, self.width);
        let rows = ctx.grad.len() / (n * d);
        (0..n)
            .map(|e| {
                ctx.needs[e].then(|| {
                    let mut g = Vec::with_capacity(rows * d);
                    for t in 0..rows {
                        let off = (t * n + e) * d;
                        g.extend_from_slice(&ctx.grad[off..off + d]);
                    }
                    g
                })
            })
            .collect()
    }
}

struct MeanMiddleOp {
    parts: usize,
    width: usize,
}

impl Backward for MeanMiddleOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let (n, d) = (self.parts, self.width);
        let inv = 1.0 / n as f32;
        let rows = ctx.grad.len() / d;
        let mut g = vec![0.0f32; rows * n * d];
        for t in 0..rows {
            for e in 0..n {
                for i in 0..d {
                    g[(t * n + e) * d + i] = ctx.grad[t * d + i] * inv;
                }
            }
        }
        vec![Some(g)]
    }
}

fn same_shape(tape: &Tape, a: Var, b: Var, op: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

fn trailing(tape: &Tape, x: Var) -> Result<usize> {
    tape.shape(x)
        .last()
        .copied()
        .ok_or_else(|| Error::shape("expected rank >= 1"))
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        self.push(t, &[a, b], AddOp)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        self.push(t, &[a, b], SubOp)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        self.push(t, &[a, b], MulOp)
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        let data = self.data(x).iter().map(|v| v * c).collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.push(t, &[x], ScaleOp(c))
    }

    /// Multiplies by a learnable one-element tensor.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape(format!(
                "scale_by expects a scalar, got {:?}",
                self.shape(s)
            )));
        }
        let c = self.data(s)[0];
        let data = self.data(x).iter().map(|v| v * c).collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.push(t, &[x, s], ScaleByOp)
    }

    /// `x + b` with `b` broadcast along the trailing dimension only.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = trailing(self, x)?;
        if self.shape(b) != [d] {
            return Err(Error::shape(format!(
                "bias {:?} does not match trailing dim {d}",
                self.shape(b)
            )));
        }
        let bias = self.data(b);
        let mut data = self.data(x).to_vec();
        for row in data.chunks_exact_mut(d) {
            row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
        }
        let t = Tensor::new(self.shape(x), data)?;
        self.push(t, &[x, b], AddBiasOp)
    }

    /// `y[..., o] = Σ_i w[o, i]·x[..., i] + b[o]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let din = trailing(self, x)?;
        let ws = self.shape(w);
        if ws.len() != 2 || ws[1] != din {
            return Err(Error::shape(format!(
                "linear: weight {:?} incompatible with input {:?}",
                ws,
                self.shape(x)
            )));
        }
        let dout = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape(format!(
                    "linear: bias {:?} expected [{dout}]",
                    self.shape(b)
                )));
            }
        }
        let rows = self.value(x).len() / din.max(1);
        let mut y = vec![0.0f32; rows * dout];
        gemm(
            rows,
            din,
            dout,
            self.data(x),
            din,
            1,
            self.data(w),
            1,
            din,
            &mut y,
        );
        if let Some(b) = b {
            let bias = self.data(b);
            for row in y.chunks_exact_mut(dout) {
                row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
            }
        }
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = dout;
        let t = Tensor::new(&shape, y)?;
        let op = LinearOp { rows, din, dout };
        match b {
            Some(b) => self.push(t, &[x, w, b], op),
            None => self.push(t, &[x, w], op),
        }
    }

    fn unary(&mut self, x: Var, u: Unary) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| u.apply(v)).collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.push(t, &[x], UnaryOp(u))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.unary(x, kind.into())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Tanh)
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Silu)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    /// `y = x / sqrt(mean(x²) + eps) · gain` over the trailing dimension.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f32) -> Result<Var> {
        let d = trailing(self, x)?;
        if d == 0 || self.shape(gain) != [d] {
            return Err(Error::shape(format!(
                "rms_norm: gain {:?} vs trailing dim {d}",
                self.shape(gain)
            )));
        }
        let xs = self.data(x);
        let g = self.data(gain);
        let mut y = vec![0.0f32; xs.len()];
        let mut inv_rms = Vec::with_capacity(xs.len() / d);
        for (row, out) in xs.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
            let ms = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / d as f64;
            let denom = (ms + eps as f64).sqrt();
            let r = if denom > 0.0 {
                (1.0 / denom) as f32
            } else {
                0.0
            };
            for i in 0..d {
                out[i] = row[i] * r * g[i];
            }
            inv_rms.push(r);
        }
        let t = Tensor::new(self.shape(x), y)?;
        self.push(t, &[x, gain], RmsNormOp { width: d, inv_rms })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, &[x], ReshapeOp)
    }

    /// Sum of all entries, accumulated in 64-bit.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.data(x).iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(s as f32), &[x], SumOp)
    }

    /// Mean cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::shape(format!(
                "cross_entropy: logits {:?} vs {} targets",
                shape,
                targets.len()
            )));
        }
        let k = shape[1];
        let z = self.data(logits);
        let mut total = 0.0f64;
        let mut count = 0usize;
        for (row, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            if t >= k {
                return Err(Error::shape(format!(
                    "target {t} out of range for {k} classes"
                )));
            }
            let zr = &z[row * k..(row + 1) * k];
            let max = zr.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = max + zr.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            total += lse - zr[t] as f64;
            count += 1;
        }
        if count == 0 {
            return Err(Error::config("cross_entropy: no target rows"));
        }
        let loss = (total / count as f64) as f32;
        let op = CrossEntropyOp {
            classes: k,
            targets: targets.to_vec(),
            count,
        };
        self.push(Tensor::scalar(loss), &[logits], op)
    }

    /// Selects rows of a `[rows, width]` tensor.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(Error::shape("gather_rows expects rank 2"));
        }
        let (rows, w) = (shape[0], shape[1]);
        let src = self.data(x);
        let mut out = Vec::with_capacity(index.len() * w);
        for &r in index {
            if r >= rows {
                return Err(Error::shape(format!("row {r} out of range {rows}")));
            }
            out.extend_from_slice(&src[r * w..(r + 1) * w]);
        }
        let t = Tensor::new(&[index.len(), w], out)?;
        let op = GatherRowsOp {
            index: index.to_vec(),
            width: w,
        };
        self.push(t, &[x], op)
    }

    /// Places row `m` of `y` at row `index[m]` of a zero `[rows, width]` tensor.
    pub fn scatter_rows(&mut self, y: Var, index: &[usize], rows: usize) -> Result<Var> {
        let shape = self.shape(y);
        if shape.len() != 2 || shape[0] != index.len() {
            return Err(Error::shape(format!(
                "scatter_rows: {:?} vs {} indices",
                shape,
                index.len()
            )));
        }
        let w = shape[1];
        let src = self.data(y);
        let mut out = vec![0.0f32; rows * w];
        for (m, &r) in index.iter().enumerate() {
            if r >= rows {
                return Err(Error::shape(format!("row {r} out of range {rows}")));
            }
            out[r * w..(r + 1) * w].copy_from_slice(&src[m * w..(m + 1) * w]);
        }
        let t = Tensor::new(&[rows, w], out)?;
        let op = ScatterRowsOp {
            index: index.to_vec(),
            width: w,
        };
        self.push(t, &[y], op)
    }

    /// Stacks `n` tensors of shape `[rows, width]` into `[rows, n, width]`.
    pub fn stack_middle(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("stack of nothing"))?;
        let shape = self.shape(first).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("stack_middle expects rank-2 parts"));
        }
        for &p in parts {
            same_shape(self, first, p, "stack_middle")?;
        }
        let (rows, d, n) = (shape[0], shape[1], parts.len());
        let mut out = vec![0.0f32; rows * n * d];
        for (e, &p) in parts.iter().enumerate() {
            let src = self.data(p);
            for t in 0..rows {
                out[(t * n + e) * d..(t * n + e + 1) * d].copy_from_slice(&src[t * d..(t + 1) * d]);
            }
        }
        let t = Tensor::new(&[rows, n, d], out)?;
        self.push(t, parts, StackMiddleOp { parts: n, width: d })
    }

    /// Mean over the middle axis of `[rows, n, width]`.
    pub fn mean_middle(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || shape[1] == 0 {
            return Err(Error::shape(format!("mean_middle: bad shape {shape:?}")));
        }
        let (rows, n, d) = (shape[0], shape[1], shape[2]);
        let src = self.data(x);
        let mut out = vec![0.0f32; rows * d];
        for t in 0..rows {
            for e in 0..n {
                let off = (t * n + e) * d;
                for i in 0..d {
                    out[t * d + i] += src[off + i];
                }
            }
        }
        let inv = 1.0 / n as f32;
        out.iter_mut().for_each(|v| *v *= inv);
        let t = Tensor::new(&[rows, d], out)?;
        self.push(t, &[x], MeanMiddleOp { parts: n, width: d })
    }
}
