use crate::error::{Error, Result};
use crate::mhc::{gen_hyper_matrices, post_expand, pre_contract, res_mix, HyperHeadParams};
use crate::numerics::{Bound, ParamId, Tape, Tensor, Var};
use crate::ssm::{cluster_wise_spatial_mamba, spectral_mamba, TokenSelection};

use super::{EsMhc, ModelInput, RMS_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sublayer {
    Ssm,
    Ffn,
}

impl Sublayer {
    pub fn name(self) -> &'static str {
        match self {
            Sublayer::Ssm => "ssm",
            Sublayer::Ffn => "ffn",
        }
    }
}

/// Matrix values produced by one sublayer during a forward pass.
#[derive(Clone, Debug)]
pub struct SublayerTrace {
    pub layer: usize,
    pub sublayer: Sublayer,
    /// `[L, n]`
    pub pre: Vec<f32>,
    /// `[L, n]`
    pub post: Vec<f32>,
    /// `[L, n, n]`, `res[t, dst, src]`
    pub res: Vec<f32>,
    /// Cluster-scan selections in `(dst, src)` order; empty for FFN.
    pub selections: Vec<TokenSelection>,
}

#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    pub sublayers: Vec<SublayerTrace>,
}

impl EsMhc {
    fn heads_and_norm(&self, layer: usize, which: Sublayer) -> (&HyperHeadParams, ParamId) {
        let p = &self.layers()[layer];
        match which {
            Sublayer::Ssm => (&p.ssm.heads, p.ssm.norm),
            Sublayer::Ffn => (&p.ffn.heads, p.ffn.norm),
        }
    }

    /// One hyper-connected sublayer on streams `r` (`[L, n, D]`):
    /// `res_mix(H_res, r) + post_expand(H_post, F(pre_contract(H_pre, norm(r))))`.
    pub fn sublayer_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        layer: usize,
        which: Sublayer,
        r: Var,
        trace: Option<&mut ForwardTrace>,
    ) -> Result<Var> {
        if layer >= self.layers().len() {
            return Err(Error::config(format!("layer {layer} out of range")));
        }
        let (heads, norm) = self.heads_and_norm(layer, which);
        let rn = tape.rms_norm(r, bound.var(norm), RMS_EPS)?;
        let h = gen_hyper_matrices(tape, rn, heads, bound, self.config.sinkhorn())?;
        let x = pre_contract(tape, h.pre, rn)?;
        let (y, selections) = match which {
            Sublayer::Ssm => self.ssm_block(tape, bound, layer, x, h.res)?,
            Sublayer::Ffn => (self.ffn_block(tape, bound, layer, x)?, Vec::new()),
        };
        if let Some(trace) = trace {
            trace.sublayers.push(SublayerTrace {
                layer,
                sublayer: which,
                pre: tape.data(h.pre).to_vec(),
                post: tape.data(h.post).to_vec(),
                res: tape.data(h.res).to_vec(),
                selections,
            });
        }
        let mixed = res_mix(tape, h.res, r)?;
        let update = post_expand(tape, h.post, y)?;
        tape.add(mixed, update)
    }

    fn ssm_block(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        layer: usize,
        x: Var,
        hres: Var,
    ) -> Result<(Var, Vec<TokenSelection>)> {
        let p = &self.layers()[layer].ssm;
        let k = self.config.topk(tape.shape(x)[0]);
        let (c, sels) = cluster_wise_spatial_mamba(tape, x, hres, k, &p.cluster, bound)?;
        let s = spectral_mamba(tape, c, self.config.spectral_groups, &p.spectral, bound)?;
        Ok((tape.linear(s, bound.var(p.out), None)?, sels))
    }

    fn ffn_block(&self, tape: &mut Tape, bound: &Bound, layer: usize, x: Var) -> Result<Var> {
        let p = &self.layers()[layer].ffn;
        let z = tape.linear(x, bound.var(p.w1), Some(bound.var(p.b1)))?;
        let z = tape.silu(z)?;
        tape.linear(z, bound.var(p.w2), Some(bound.var(p.b2)))
    }

    /// SSM sublayer followed by FFN sublayer.
    pub fn layer_forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        layer: usize,
        r: Var,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<Var> {
        let r =
            self.sublayer_forward(tape, bound, layer, Sublayer::Ssm, r, trace.as_deref_mut())?;
        self.sublayer_forward(tape, bound, layer, Sublayer::Ffn, r, trace)
    }

    /// Logits `[L, K]` from the stream mean of the final layer output.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: &ModelInput,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<Var> {
        let mut r = self.embed_streams(tape, bound, input)?;
        for l in 0..self.layers().len() {
            r = self.layer_forward(tape, bound, l, r, trace.as_deref_mut())?;
        }
        let h = tape.mean_middle(r)?;
        let (w, b) = self.head();
        tape.linear(h, bound.var(w), Some(bound.var(b)))
    }

    /// Forward pass on a throwaway tape.
    pub fn logits(&self, input: &ModelInput) -> Result<Tensor> {
        self.logits_traced(input, None)
    }

    pub fn logits_traced(
        &self,
        input: &ModelInput,
        trace: Option<&mut ForwardTrace>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape)?;
        let y = self.forward(&mut tape, &bound, input, trace)?;
        Ok(tape.value(y).clone())
    }
}
