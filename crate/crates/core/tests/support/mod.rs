//! Independent 64-bit reference implementations used by the integration
//! tests. Written as plain loops over slices; they share no code with the
//! library beyond reading parameter values.

#![allow(dead_code)]

use esmhc_core::model::{EsMhc, LayerParams};
use esmhc_core::numerics::{ParamId, ParamStore};
use esmhc_core::ssm::SsmParams;
use rand::Rng;

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y).abs())
        .fold(0.0, f64::max)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Alternating normalization of `exp(logits)` for one `n × n` matrix until
/// both marginals are within `1e-12` of one.
pub fn sinkhorn(logits: &[f64], n: usize) -> Vec<f64> {
    let mut m: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    for _ in 0..100_000 {
        for j in 0..n {
            let s: f64 = (0..n).map(|i| m[i * n + j]).sum();
            (0..n).for_each(|i| m[i * n + j] /= s);
        }
        for i in 0..n {
            let s: f64 = m[i * n..(i + 1) * n].iter().sum();
            m[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= s);
        }
        let worst = (0..n)
            .map(|j| ((0..n).map(|i| m[i * n + j]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        if worst < 1e-12 {
            break;
        }
    }
    m
}

/// Exactly `iters` rounds of column then row normalization of `exp(logits)`.
pub fn sinkhorn_rounds(logits: &[f64], n: usize, iters: usize) -> Vec<f64> {
    let mut m: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    for _ in 0..iters {
        for j in 0..n {
            let s: f64 = (0..n).map(|i| m[i * n + j]).sum();
            (0..n).for_each(|i| m[i * n + j] /= s);
        }
        for i in 0..n {
            let s: f64 = m[i * n..(i + 1) * n].iter().sum();
            m[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= s);
        }
    }
    m
}

/// Indices of the `k` largest scores (ties to the lower index) by a full
/// stable sort, returned ascending.
pub fn topk_by_sort<T: PartialOrd + Copy>(scores: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    top
}

pub struct ScanWeights {
    pub width: usize,
    pub state: usize,
    pub delta_w: Vec<f64>,
    pub delta_b: Vec<f64>,
    pub b_proj: Vec<f64>,
    pub c_proj: Vec<f64>,
    pub a_log: Vec<f64>,
    pub skip: Vec<f64>,
    pub out: Vec<f64>,
}

fn value(store: &ParamStore, id: ParamId) -> Vec<f64> {
    to_f64(store.get(id).data())
}

impl ScanWeights {
    pub fn from_store(store: &ParamStore, p: &SsmParams) -> Self {
        Self {
            width: p.width,
            state: p.state,
            delta_w: value(store, p.delta_w),
            delta_b: value(store, p.delta_b),
            b_proj: value(store, p.b_proj),
            c_proj: value(store, p.c_proj),
            a_log: value(store, p.a_log),
            skip: value(store, p.skip),
            out: value(store, p.out),
        }
    }

    /// One causal sequence `x` of shape `[T, width]`, stepped one token at a
    /// time.
    pub fn scan(&self, x: &[f64]) -> Vec<f64> {
        let (dw, ns) = (self.width, self.state);
        let steps = x.len() / dw;
        let mut h = vec![0.0f64; dw * ns];
        let mut out = vec![0.0f64; x.len()];
        for t in 0..steps {
            let xt = &x[t * dw..(t + 1) * dw];
            let dot =
                |w: &[f64], row: usize| -> f64 { (0..dw).map(|i| w[row * dw + i] * xt[i]).sum() };
            let b: Vec<f64> = (0..ns).map(|s| dot(&self.b_proj, s)).collect();
            let c: Vec<f64> = (0..ns).map(|s| dot(&self.c_proj, s)).collect();
            let mut y = vec![0.0f64; dw];
            for d in 0..dw {
                let dt = (self.delta_b[d] + dot(&self.delta_w, d)).exp().ln_1p();
                for s in 0..ns {
                    let a = -self.a_log[d * ns + s].exp();
                    h[d * ns + s] = (dt * a).exp() * h[d * ns + s] + dt * b[s] * xt[d];
                    y[d] += c[s] * h[d * ns + s];
                }
                y[d] += self.skip[d] * xt[d];
            }
            for o in 0..dw {
                out[t * dw + o] = (0..dw).map(|i| self.out[o * dw + i] * y[i]).sum();
            }
        }
        out
    }
}

/// `y + Σ_(i,j) scatter(scan_ij(gather(y, topk(hres[:, i, j]))))` with
/// `y: [L, D]`, `hres: [L, n, n]`.
pub fn cluster_scan(
    y: &[f64],
    hres: &[f64],
    n: usize,
    d: usize,
    k: usize,
    scans: &[ScanWeights],
) -> Vec<f64> {
    let l = y.len() / d;
    let mut out = y.to_vec();
    for i in 0..n {
        for j in 0..n {
            let scores: Vec<f64> = (0..l).map(|t| hres[(t * n + i) * n + j]).collect();
            let sel = topk_by_sort(&scores, k);
            let gathered: Vec<f64> = sel
                .iter()
                .flat_map(|&t| y[t * d..(t + 1) * d].to_vec())
                .collect();
            let s = scans[i * n + j].scan(&gathered);
            for (m, &t) in sel.iter().enumerate() {
                for c in 0..d {
                    out[t * d + c] += s[m * d + c];
                }
            }
        }
    }
    out
}

/// Per pixel, a scan over `groups` sub-tokens of width `D / groups`, plus
/// the input.
pub fn spectral_scan(y: &[f64], d: usize, groups: usize, scan: &ScanWeights) -> Vec<f64> {
    assert_eq!(groups * scan.width, d);
    let mut out = y.to_vec();
    for (px, row) in y.chunks(d).enumerate() {
        let s = scan.scan(row);
        for c in 0..d {
            out[px * d + c] += s[c];
        }
    }
    out
}

pub fn rms_norm_rows(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    let d = gain.len();
    x.chunks(d)
        .flat_map(|row| {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let r = 1.0 / (ms + eps).sqrt();
            row.iter()
                .zip(gain)
                .map(move |(v, g)| v * r * g)
                .collect::<Vec<_>>()
        })
        .collect()
}

struct Head {
    alpha: f64,
    theta: Vec<f64>,
    bias: Vec<f64>,
}

impl Head {
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let nd = x.len();
        self.bias
            .iter()
            .enumerate()
            .map(|(r, b)| {
                let z: f64 = (0..nd).map(|c| self.theta[r * nd + c] * x[c]).sum();
                self.alpha * z.tanh() + b
            })
            .collect()
    }
}

fn head(store: &ParamStore, h: &esmhc_core::mhc::HeadParams) -> Head {
    Head {
        alpha: store.get(h.alpha).data()[0] as f64,
        theta: value(store, h.theta),
        bias: value(store, h.bias),
    }
}

/// Matrices of one sublayer at every token: `(pre [L·n], post [L·n], res [L·n·n])`,
/// with `iters` Sinkhorn rounds or full convergence for `None`.
pub fn hyper_matrices(
    store: &ParamStore,
    heads: &esmhc_core::mhc::HyperHeadParams,
    rn: &[f64],
    n: usize,
    d: usize,
    iters: Option<usize>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (hp, hq, hr) = (
        head(store, &heads.pre),
        head(store, &heads.post),
        head(store, &heads.res),
    );
    let (mut pre, mut post, mut res) = (Vec::new(), Vec::new(), Vec::new());
    for x in rn.chunks(n * d) {
        pre.extend(hp.eval(x).into_iter().map(sigmoid));
        post.extend(hq.eval(x).into_iter().map(|v| 2.0 * sigmoid(v)));
        let logits = hr.eval(x);
        res.extend(match iters {
            Some(it) => sinkhorn_rounds(&logits, n, it),
            None => sinkhorn(&logits, n),
        });
    }
    (pre, post, res)
}

/// `F(x, H_res)` of one sublayer.
type Block<'a> = dyn Fn(&[f64], &[f64]) -> Vec<f64> + 'a;

/// One full model layer (SSM sublayer then FFN sublayer) on `r: [L, n, D]`,
/// running exactly `config.sinkhorn_iters` Sinkhorn rounds.
pub fn layer(model: &EsMhc, idx: usize, r: &[f64], eps: f64) -> Vec<f64> {
    let store = &model.store;
    let cfg = &model.config;
    let n = model.expansion();
    let d = cfg.hidden;
    let l = r.len() / (n * d);
    let p: &LayerParams = &model.layers()[idx];

    let sublayer = |r: &[f64], heads, norm: ParamId, f: &Block| -> Vec<f64> {
        let rn = rms_norm_rows(r, &value(store, norm), eps);
        let (pre, post, res) = hyper_matrices(store, heads, &rn, n, d, Some(cfg.sinkhorn_iters));
        let mut x = vec![0.0f64; l * d];
        for t in 0..l {
            for i in 0..n {
                for c in 0..d {
                    x[t * d + c] += pre[t * n + i] * rn[(t * n + i) * d + c];
                }
            }
        }
        let y = f(&x, &res);
        let mut out = vec![0.0f64; r.len()];
        for t in 0..l {
            for i in 0..n {
                for c in 0..d {
                    let mixed: f64 = (0..n)
                        .map(|j| res[(t * n + i) * n + j] * r[(t * n + j) * d + c])
                        .sum();
                    out[(t * n + i) * d + c] = mixed + post[t * n + i] * y[t * d + c];
                }
            }
        }
        out
    };

    let scans: Vec<ScanWeights> = p
        .ssm
        .cluster
        .iter()
        .map(|s| ScanWeights::from_store(store, s))
        .collect();
    let spectral = ScanWeights::from_store(store, &p.ssm.spectral);
    let ssm_out = value(store, p.ssm.out);
    let k = cfg.topk(l);
    let ssm = |x: &[f64], res: &[f64]| -> Vec<f64> {
        let c = cluster_scan(x, res, n, d, k, &scans);
        let s = spectral_scan(&c, d, cfg.spectral_groups, &spectral);
        s.chunks(d)
            .flat_map(|row| {
                (0..d)
                    .map(|o| (0..d).map(|i| ssm_out[o * d + i] * row[i]).sum::<f64>())
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let (w1, b1, w2, b2) = (
        value(store, p.ffn.w1),
        value(store, p.ffn.b1),
        value(store, p.ffn.w2),
        value(store, p.ffn.b2),
    );
    let hid = b1.len();
    let ffn = |x: &[f64], _: &[f64]| -> Vec<f64> {
        x.chunks(d)
            .flat_map(|row| {
                let z: Vec<f64> = (0..hid)
                    .map(|h| {
                        let v = b1[h] + (0..d).map(|i| w1[h * d + i] * row[i]).sum::<f64>();
                        v * sigmoid(v)
                    })
                    .collect();
                (0..d)
                    .map(|o| b2[o] + (0..hid).map(|h| w2[o * hid + h] * z[h]).sum::<f64>())
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let after_ssm = sublayer(r, &p.ssm.heads, p.ssm.norm, &ssm);
    sublayer(&after_ssm, &p.ffn.heads, p.ffn.norm, &ffn)
}

/// Adds uniform noise of half-width `scale` to every parameter except the
/// state decays and step biases, so no block sits at its zero init.
pub fn perturb<R: Rng>(store: &mut ParamStore, rng: &mut R, scale: f32) {
    for (name, t) in store.iter_mut() {
        if name.ends_with("a_log") || name.ends_with("delta_b") {
            continue;
        }
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-scale..scale));
    }
}
