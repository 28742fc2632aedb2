//! Selective state-space scans, top-k token selection, and the two
//! spectral-spatial blocks built on them.
//!
//! The recurrence per channel `d` and state `s`:
//!
//! ```text
//! h[t, d, s] = exp(Δ[t, d] · A[d, s]) · h[t-1, d, s] + Δ[t, d] · B[t, s] · x[t, d]
//! y[t, d]    = Σ_s C[t, s] · h[t, d, s] + skip[d] · x[t, d]
//! ```
//!
//! with `A = −exp(A_log)`, `Δ = softplus(W_Δ x + b_Δ)`, `B = W_B x`,
//! `C = W_C x`, followed by an output projection.

use std::cell::Cell;
use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{Backward, BackwardCtx, Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Sequences per parallel work item. Fixed so that reductions over chunks
/// happen in the same order for any thread count.
const SCAN_CHUNK: usize = 16;

thread_local! {
    static SCAN_STEPS: Cell<u64> = const { Cell::new(0) };
}

/// Recurrence steps (sequence × timestep) executed by forward scans on this
/// thread since the last reset.
pub fn scan_steps() -> u64 {
    SCAN_STEPS.with(Cell::get)
}

pub fn reset_scan_steps() {
    SCAN_STEPS.with(|c| c.set(0));
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputInit {
    Zero,
    Random,
}

/// Parameters of one selective scan over `width` channels.
#[derive(Clone, Copy, Debug)]
pub struct SsmParams {
    pub width: usize,
    pub state: usize,
    pub delta_w: ParamId,
    pub delta_b: ParamId,
    pub b_proj: ParamId,
    pub c_proj: ParamId,
    pub a_log: ParamId,
    pub skip: ParamId,
    pub out: ParamId,
}

impl SsmParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        state: usize,
        out_init: OutputInit,
        rng: &mut R,
    ) -> Result<Self> {
        if width == 0 || state == 0 {
            return Err(Error::config("ssm width and state size must be >= 1"));
        }
        let std = 0.5 / (width as f32).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let randn =
            |n: usize, rng: &mut R| -> Vec<f32> { (0..n).map(|_| normal.sample(rng)).collect() };
        // softplus(b) = dt, with dt log-uniform in [1e-3, 1e-1]
        let delta_b: Vec<f32> = (0..width)
            .map(|_| {
                let dt: f32 = (rng.random_range(0.001f32.ln()..0.1f32.ln())).exp();
                dt + (-(-dt).exp_m1()).ln()
            })
            .collect();
        let a_log: Vec<f32> = (0..width)
            .flat_map(|_| (0..state).map(|s| ((s + 1) as f32).ln()))
            .collect();
        let out = match out_init {
            OutputInit::Zero => vec![0.0; width * width],
            OutputInit::Random => randn(width * width, rng)
                .into_iter()
                .map(|v| v * 0.4)
                .collect(),
        };
        Ok(Self {
            width,
            state,
            delta_w: store.add(
                format!("{prefix}.delta_w"),
                Tensor::new(&[width, width], randn(width * width, rng))?,
            )?,
            delta_b: store.add(format!("{prefix}.delta_b"), Tensor::new(&[width], delta_b)?)?,
            b_proj: store.add(
                format!("{prefix}.b_proj"),
                Tensor::new(&[state, width], randn(state * width, rng))?,
            )?,
            c_proj: store.add(
                format!("{prefix}.c_proj"),
                Tensor::new(&[state, width], randn(state * width, rng))?,
            )?,
            a_log: store.add(
                format!("{prefix}.a_log"),
                Tensor::new(&[width, state], a_log)?,
            )?,
            skip: store.add(format!("{prefix}.skip"), Tensor::full(&[width], 1.0))?,
            out: store.add(format!("{prefix}.out"), Tensor::new(&[width, width], out)?)?,
        })
    }
}

struct ScanDims {
    batch: usize,
    steps: usize,
    width: usize,
    state: usize,
}

struct RecurrenceOp {
    dims: ScanDims,
    /// `[batch, steps, width, state]`
    hidden: Vec<f32>,
}

struct ChunkForward {
    y: Vec<f32>,
    hidden: Vec<f32>,
    steps: u64,
}

#[derive(Default)]
struct ChunkBackward {
    gx: Vec<f32>,
    gdelta: Vec<f32>,
    gb: Vec<f32>,
    gc: Vec<f32>,
    ga: Vec<f32>,
    gskip: Vec<f32>,
}

struct ScanInputs<'a> {
    x: &'a [f32],
    delta: &'a [f32],
    a: Vec<f32>,
    b: &'a [f32],
    c: &'a [f32],
    skip: &'a [f32],
}

fn forward_chunk(
    dims: &ScanDims,
    inp: &ScanInputs<'_>,
    seqs: std::ops::Range<usize>,
) -> ChunkForward {
    let (t_len, dw, ns) = (dims.steps, dims.width, dims.state);
    let count = seqs.len();
    let mut y = vec![0.0f32; count * t_len * dw];
    let mut hidden = vec![0.0f32; count * t_len * dw * ns];
    let mut h = vec![0.0f32; dw * ns];
    for (local, seq) in seqs.enumerate() {
        h.fill(0.0);
        for t in 0..t_len {
            let row = seq * t_len + t;
            let bt = &inp.b[row * ns..(row + 1) * ns];
            let ct = &inp.c[row * ns..(row + 1) * ns];
            for d in 0..dw {
                let xv = inp.x[row * dw + d];
                let dt = inp.delta[row * dw + d];
                let hs = &mut h[d * ns..(d + 1) * ns];
                let mut acc = 0.0f32;
                for s in 0..ns {
                    let decay = (dt * inp.a[d * ns + s]).exp();
                    hs[s] = decay * hs[s] + dt * bt[s] * xv;
                    acc += ct[s] * hs[s];
                }
                y[(local * t_len + t) * dw + d] = acc + inp.skip[d] * xv;
            }
            let off = (local * t_len + t) * dw * ns;
            hidden[off..off + dw * ns].copy_from_slice(&h);
        }
    }
    ChunkForward {
        y,
        hidden,
        steps: (count * t_len) as u64,
    }
}

fn backward_chunk(
    dims: &ScanDims,
    inp: &ScanInputs<'_>,
    hidden: &[f32],
    grad: &[f32],
    seqs: std::ops::Range<usize>,
) -> ChunkBackward {
    let (t_len, dw, ns) = (dims.steps, dims.width, dims.state);
    let count = seqs.len();
    let mut out = ChunkBackward {
        gx: vec![0.0; count * t_len * dw],
        gdelta: vec![0.0; count * t_len * dw],
        gb: vec![0.0; count * t_len * ns],
        gc: vec![0.0; count * t_len * ns],
        ga: vec![0.0; dw * ns],
        gskip: vec![0.0; dw],
    };
    let mut carry = vec![0.0f32; dw * ns];
    for (local, seq) in seqs.enumerate() {
        carry.fill(0.0);
        for t in (0..t_len).rev() {
            let row = seq * t_len + t;
            let lrow = local * t_len + t;
            let bt = &inp.b[row * ns..(row + 1) * ns];
            let ct = &inp.c[row * ns..(row + 1) * ns];
            let h_now = &hidden[row * dw * ns..(row + 1) * dw * ns];
            for d in 0..dw {
                let gy = grad[row * dw + d];
                let xv = inp.x[row * dw + d];
                let dt = inp.delta[row * dw + d];
                let mut gx = gy * inp.skip[d];
                let mut gdt = 0.0f32;
                out.gskip[d] += gy * xv;
                for s in 0..ns {
                    let i = d * ns + s;
                    let a = inp.a[i];
                    let decay = (dt * a).exp();
                    let h_prev = if t > 0 {
                        hidden[(row - 1) * dw * ns + i]
                    } else {
                        0.0
                    };
                    let gh = gy * ct[s] + carry[i];
                    out.gc[lrow * ns + s] += gy * h_now[i];
                    let gdecay = gh * h_prev;
                    gdt += gdecay * decay * a + gh * bt[s] * xv;
                    out.ga[i] += gdecay * decay * dt;
                    out.gb[lrow * ns + s] += gh * dt * xv;
                    gx += gh * dt * bt[s];
                    carry[i] = gh * decay;
                }
                out.gx[lrow * dw + d] = gx;
                out.gdelta[lrow * dw + d] = gdt;
            }
        }
    }
    out
}

fn chunks(batch: usize) -> Vec<std::ops::Range<usize>> {
    (0..batch)
        .step_by(SCAN_CHUNK)
        .map(|s| s..(s + SCAN_CHUNK).min(batch))
        .collect()
}

fn inputs<'a>(tensors: &[&'a Tensor]) -> ScanInputs<'a> {
    ScanInputs {
        x: tensors[0].data(),
        delta: tensors[1].data(),
        a: tensors[2].data().iter().map(|v| -v.exp()).collect(),
        b: tensors[3].data(),
        c: tensors[4].data(),
        skip: tensors[5].data(),
    }
}

impl Backward for RecurrenceOp {
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> {
        let dims = &self.dims;
        let inp = inputs(&ctx.inputs);
        let parts: Vec<ChunkBackward> = chunks(dims.batch)
            .into_par_iter()
            .map(|r| backward_chunk(dims, &inp, &self.hidden, ctx.grad, r))
            .collect();
        let mut total = ChunkBackward {
            ga: vec![0.0; dims.width * dims.state],
            gskip: vec![0.0; dims.width],
            ..Default::default()
        };
        for p in parts {
            total.gx.extend(p.gx);
            total.gdelta.extend(p.gdelta);
            total.gb.extend(p.gb);
            total.gc.extend(p.gc);
            total.ga.iter_mut().zip(&p.ga).for_each(|(a, b)| *a += b);
            total
                .gskip
                .iter_mut()
                .zip(&p.gskip)
                .for_each(|(a, b)| *a += b);
        }
        // dA/dA_log = A
        let ga_log = total.ga.iter().zip(&inp.a).map(|(g, a)| g * a).collect();
        vec![
            Some(total.gx),
            Some(total.gdelta),
            Some(ga_log),
            Some(total.gb),
            Some(total.gc),
            Some(total.gskip),
        ]
    }
}

/// The bare recurrence on `[batch, steps, width]` inputs with precomputed
/// `Δ` (`[batch, steps, width]`), `B`, `C` (`[batch, steps, state]`).
pub fn ssm_recurrence(
    tape: &mut Tape,
    x: Var,
    delta: Var,
    a_log: Var,
    b: Var,
    c: Var,
    skip: Var,
) -> Result<Var> {
    let (batch, steps, width) = match *tape.shape(x) {
        [b, t, d] => (b, t, d),
        ref s => {
            return Err(Error::shape(format!(
                "scan input must be [B, T, D], got {s:?}"
            )))
        }
    };
    let state = match *tape.shape(a_log) {
        [d, n] if d == width => n,
        ref s => return Err(Error::shape(format!("A_log {s:?} vs width {width}"))),
    };
    if tape.shape(delta) != [batch, steps, width]
        || tape.shape(b) != [batch, steps, state]
        || tape.shape(c) != [batch, steps, state]
        || tape.shape(skip) != [width]
    {
        return Err(Error::shape("selective scan operand shapes disagree"));
    }
    if steps == 0 {
        return Err(Error::shape("selective scan needs T >= 1"));
    }
    let dims = ScanDims {
        batch,
        steps,
        width,
        state,
    };
    let tensors = [
        tape.value(x),
        tape.value(delta),
        tape.value(a_log),
        tape.value(b),
        tape.value(c),
        tape.value(skip),
    ];
    let inp = inputs(&tensors);
    let parts: Vec<ChunkForward> = chunks(batch)
        .into_par_iter()
        .map(|r| forward_chunk(&dims, &inp, r))
        .collect();
    let mut y = Vec::with_capacity(batch * steps * width);
    let mut hidden = Vec::with_capacity(batch * steps * width * state);
    let mut step_count = 0;
    for p in parts {
        y.extend(p.y);
        hidden.extend(p.hidden);
        step_count += p.steps;
    }
    SCAN_STEPS.with(|c| c.set(c.get() + step_count));
    let out = Tensor::new(&[batch, steps, width], y)?;
    tape.push(
        out,
        &[x, delta, a_log, b, c, skip],
        RecurrenceOp { dims, hidden },
    )
}

/// Full selective scan with input-dependent `Δ`, `B`, `C` and the output
/// projection. Accepts `[T, D]` (one sequence) or `[B, T, D]`.
pub fn selective_scan(tape: &mut Tape, x: Var, params: &SsmParams, bound: &Bound) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let x3 = match *shape.as_slice() {
        [t, d] => tape.reshape(x, &[1, t, d])?,
        [_, _, _] => x,
        _ => return Err(Error::shape(format!("selective_scan: bad input {shape:?}"))),
    };
    if shape.last() != Some(&params.width) {
        return Err(Error::shape(format!(
            "selective_scan: input width {:?} vs params {}",
            shape.last(),
            params.width
        )));
    }
    let delta = tape.linear(
        x3,
        bound.var(params.delta_w),
        Some(bound.var(params.delta_b)),
    )?;
    let delta = tape.softplus(delta)?;
    let b = tape.linear(x3, bound.var(params.b_proj), None)?;
    let c = tape.linear(x3, bound.var(params.c_proj), None)?;
    let y = ssm_recurrence(
        tape,
        x3,
        delta,
        bound.var(params.a_log),
        b,
        c,
        bound.var(params.skip),
    )?;
    let y = tape.linear(y, bound.var(params.out), None)?;
    tape.reshape(y, &shape)
}

/// Tokens picked for one cluster scan, in ascending raster order.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSelection {
    pub indices: Vec<usize>,
    /// Score of each selected token, aligned with `indices`.
    pub scores: Vec<f32>,
    pub k: usize,
}

impl TokenSelection {
    /// Boolean mask of length `len` marking selected tokens.
    pub fn mask(&self, len: usize) -> Vec<bool> {
        let mut m = vec![false; len];
        self.indices.iter().for_each(|&i| m[i] = true);
        m
    }
}

/// The `k` largest scores, ties broken toward the lower index, returned in
/// ascending index order.
pub fn topk_select(scores: &[f32], k: usize) -> Result<TokenSelection> {
    let l = scores.len();
    if k == 0 || k > l {
        return Err(Error::config(format!("top-k: k = {k} outside 1..={l}")));
    }
    let order =
        |&a: &usize, &b: &usize| -> Ordering { scores[b].total_cmp(&scores[a]).then(a.cmp(&b)) };
    let mut idx: Vec<usize> = (0..l).collect();
    if k < l {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(TokenSelection {
        scores: idx.iter().map(|&i| scores[i]).collect(),
        indices: idx,
        k,
    })
}

/// Zero `[len, D]` tensor with row `sel.indices[m]` set to `y_sel[m]`.
pub fn scatter_restore(
    tape: &mut Tape,
    y_sel: Var,
    sel: &TokenSelection,
    len: usize,
) -> Result<Var> {
    if tape.shape(y_sel).first() != Some(&sel.k) || sel.indices.len() != sel.k {
        return Err(Error::shape(format!(
            "scatter_restore: {:?} rows vs k = {}",
            tape.shape(y_sel),
            sel.k
        )));
    }
    tape.scatter_rows(y_sel, &sel.indices, len)
}

/// `ceil(fraction · len)` clamped to `1..=len`.
pub fn topk_count(fraction: f64, len: usize) -> usize {
    ((fraction * len as f64).ceil() as usize).clamp(1, len.max(1))
}

/// One independent scan per `(i, j)` entry of `H_res`, each over the `k`
/// tokens with the largest `H_res[:, i, j]`, scattered back and summed onto
/// the input. `params` holds the `n²` scans in row-major `(i, j)` order.
pub fn cluster_wise_spatial_mamba(
    tape: &mut Tape,
    y: Var,
    hres: Var,
    k: usize,
    params: &[SsmParams],
    bound: &Bound,
) -> Result<(Var, Vec<TokenSelection>)> {
    let (l, _) = match *tape.shape(y) {
        [l, d] => (l, d),
        ref s => {
            return Err(Error::shape(format!(
                "cluster scan input must be [L, D], got {s:?}"
            )))
        }
    };
    let n = match *tape.shape(hres) {
        [lh, n, n2] if lh == l && n == n2 => n,
        ref s => return Err(Error::shape(format!("H_res {s:?} vs L = {l}"))),
    };
    if params.len() != n * n {
        return Err(Error::config(format!(
            "{} cluster scans for n = {n}, expected {}",
            params.len(),
            n * n
        )));
    }
    let scores: Vec<Vec<f32>> = (0..n * n)
        .map(|ij| {
            tape.data(hres)
                .iter()
                .skip(ij)
                .step_by(n * n)
                .copied()
                .collect()
        })
        .collect();
    let mut acc: Option<Var> = None;
    let mut selections = Vec::with_capacity(n * n);
    for (ij, p) in params.iter().enumerate() {
        let sel = topk_select(&scores[ij], k)?;
        let g = tape.gather_rows(y, &sel.indices)?;
        let s = selective_scan(tape, g, p, bound)?;
        let back = scatter_restore(tape, s, &sel, l)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, back)?,
            None => back,
        });
        selections.push(sel);
    }
    let out = match acc {
        Some(a) => tape.add(y, a)?,
        None => y,
    };
    Ok((out, selections))
}

/// Splits each token's `D` channels into `groups` sub-tokens of width
/// `D / groups`, scans along them, and adds the result back onto `y`.
pub fn spectral_mamba(
    tape: &mut Tape,
    y: Var,
    groups: usize,
    params: &SsmParams,
    bound: &Bound,
) -> Result<Var> {
    let (l, d) = match *tape.shape(y) {
        [l, d] => (l, d),
        ref s => {
            return Err(Error::shape(format!(
                "spectral scan input must be [L, D], got {s:?}"
            )))
        }
    };
    if groups == 0 || d % groups != 0 {
        return Err(Error::shape(format!(
            "{groups} groups do not divide D = {d}"
        )));
    }
    let seq = tape.reshape(y, &[l, groups, d / groups])?;
    let s = selective_scan(tape, seq, params, bound)?;
    let s = tape.reshape(s, &[l, d])?;
    tape.add(y, s)
}
