//! The full network: per-stream embeddings, a stack of hyper-connected
//! layers (a state-space sublayer and an FFN sublayer each), and a linear
//! head on the stream mean.

mod embed;
mod layer;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{split_spectrum, BandRange, HsiCube, SpectrumGroup, FULL};
use crate::mhc::{init_identity, HyperHeadParams, SinkhornConfig};
use crate::numerics::{ParamId, ParamStore, Tensor};
use crate::ssm::{topk_count, OutputInit, SsmParams};

pub use embed::{positional_encoding, ModelInput};
pub use layer::{ForwardTrace, Sublayer, SublayerTrace};
pub use train::{
    argmax_labels, load_model, predict, save_model, train, EpochObserver, EpochRecord, ModelMeta,
    TrainLog,
};

pub const RMS_EPS: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    /// Number of residual streams, FULL included.
    pub expansion: usize,
    pub layers: usize,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f32,
    /// Fraction of tokens each cluster scan visits; `k = ceil(frac · L)`.
    pub topk_frac: f64,
    pub spectral_groups: usize,
    pub state: usize,
    pub ffn_mult: usize,
    pub seed: u64,
    pub lr: f32,
    pub epochs: usize,
    pub identity_gamma: f32,
    /// Initial value of every head gate α.
    pub gate_init: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            expansion: 5,
            layers: 2,
            sinkhorn_iters: 20,
            sinkhorn_tol: 1e-6,
            topk_frac: 0.25,
            spectral_groups: 8,
            state: 16,
            ffn_mult: 2,
            seed: 42,
            lr: 1e-3,
            epochs: 300,
            identity_gamma: 6.0,
            gate_init: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.hidden < 4 || !self.hidden.is_multiple_of(4) {
            return fail(format!(
                "hidden = {} must be a positive multiple of 4",
                self.hidden
            ));
        }
        for (name, v) in [
            ("expansion", self.expansion),
            ("layers", self.layers),
            ("sinkhorn_iters", self.sinkhorn_iters),
            ("spectral_groups", self.spectral_groups),
            ("state", self.state),
            ("ffn_mult", self.ffn_mult),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        if !self.hidden.is_multiple_of(self.spectral_groups) {
            return fail(format!(
                "spectral_groups = {} does not divide hidden = {}",
                self.spectral_groups, self.hidden
            ));
        }
        if !(self.topk_frac > 0.0 && self.topk_frac <= 1.0) {
            return fail(format!("topk_frac = {} outside (0, 1]", self.topk_frac));
        }
        if self.sinkhorn_tol.is_nan() || self.sinkhorn_tol < 0.0 {
            return fail("sinkhorn_tol must be >= 0".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr = {} must be positive", self.lr));
        }
        if !(self.identity_gamma > 0.0 && self.identity_gamma.is_finite()) {
            return fail(format!(
                "identity_gamma = {} must be positive",
                self.identity_gamma
            ));
        }
        if !self.gate_init.is_finite() {
            return fail("gate_init must be finite".into());
        }
        Ok(())
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            iters: self.sinkhorn_iters,
            tol: self.sinkhorn_tol,
        }
    }

    pub fn topk(&self, tokens: usize) -> usize {
        topk_count(self.topk_frac, tokens)
    }
}

/// A named residual stream and the bands it embeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub name: String,
    pub bands: Vec<usize>,
}

impl From<&SpectrumGroup> for StreamInfo {
    fn from(g: &SpectrumGroup) -> Self {
        Self {
            name: g.name.clone(),
            bands: g.bands.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EmbedParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub gain: ParamId,
}

#[derive(Clone, Debug)]
pub struct SsmBlockParams {
    pub heads: HyperHeadParams,
    pub norm: ParamId,
    /// `n²` scans in row-major `(dst, src)` order.
    pub cluster: Vec<SsmParams>,
    pub spectral: SsmParams,
    pub out: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct FfnBlockParams {
    pub heads: HyperHeadParams,
    pub norm: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub ssm: SsmBlockParams,
    pub ffn: FfnBlockParams,
}

#[derive(Clone, Debug)]
pub struct EsMhc {
    pub config: ModelConfig,
    pub store: ParamStore,
    streams: Vec<StreamInfo>,
    bands: usize,
    classes: usize,
    embed: Vec<EmbedParams>,
    layers: Vec<LayerParams>,
    head_w: ParamId,
    head_b: ParamId,
}

fn randn(rng: &mut ChaCha8Rng, n: usize, std: f32) -> Vec<f32> {
    let normal = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| normal.sample(rng)).collect()
}

impl EsMhc {
    /// Builds a freshly initialized model. `streams[0]` must be FULL and
    /// `streams.len()` must equal `config.expansion`.
    pub fn new(
        config: ModelConfig,
        streams: Vec<StreamInfo>,
        bands: usize,
        classes: usize,
    ) -> Result<Self> {
        config.validate()?;
        if classes == 0 {
            return Err(Error::config("model needs at least one class"));
        }
        if streams.len() != config.expansion {
            return Err(Error::config(format!(
                "expansion = {} but {} spectrum groups were given",
                config.expansion,
                streams.len()
            )));
        }
        if streams[0].name != FULL {
            return Err(Error::config("the first stream must be FULL"));
        }
        for s in &streams {
            if s.bands.is_empty() {
                return Err(Error::config(format!(
                    "spectrum group {} has no bands",
                    s.name
                )));
            }
            if let Some(&b) = s.bands.iter().find(|&&b| b >= bands) {
                return Err(Error::config(format!(
                    "stream {} uses band {b} of {bands}",
                    s.name
                )));
            }
        }
        let (n, d) = (streams.len(), config.hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();

        let mut embed = Vec::with_capacity(n);
        for (e, s) in streams.iter().enumerate() {
            let c = s.bands.len();
            let w = randn(&mut rng, d * c, 1.0 / (c as f32).sqrt());
            embed.push(EmbedParams {
                weight: store.add(format!("embed.{e}.weight"), Tensor::new(&[d, c], w)?)?,
                bias: store.add(format!("embed.{e}.bias"), Tensor::zeros(&[d]))?,
                gain: store.add(format!("embed.{e}.gain"), Tensor::full(&[d], 1.0))?,
            });
        }

        let gamma = config.identity_gamma;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("layer{l}");
            let ssm_heads = HyperHeadParams::register(
                &mut store,
                &format!("{p}.ssm.heads"),
                n,
                d,
                gamma,
                &mut rng,
            )?;
            let ssm_norm = store.add(format!("{p}.ssm.norm"), Tensor::full(&[d], 1.0))?;
            let mut cluster = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    cluster.push(SsmParams::register(
                        &mut store,
                        &format!("{p}.ssm.cluster{i}_{j}"),
                        d,
                        config.state,
                        OutputInit::Random,
                        &mut rng,
                    )?);
                }
            }
            let spectral = SsmParams::register(
                &mut store,
                &format!("{p}.ssm.spectral"),
                d / config.spectral_groups,
                config.state,
                OutputInit::Random,
                &mut rng,
            )?;
            let ssm_out = store.add(format!("{p}.ssm.out"), Tensor::zeros(&[d, d]))?;

            let ffn_heads = HyperHeadParams::register(
                &mut store,
                &format!("{p}.ffn.heads"),
                n,
                d,
                gamma,
                &mut rng,
            )?;
            let ffn_norm = store.add(format!("{p}.ffn.norm"), Tensor::full(&[d], 1.0))?;
            let hid = config.ffn_mult * d;
            let w1 = randn(&mut rng, hid * d, 1.0 / (d as f32).sqrt());
            let ffn = FfnBlockParams {
                heads: ffn_heads,
                norm: ffn_norm,
                w1: store.add(format!("{p}.ffn.w1"), Tensor::new(&[hid, d], w1)?)?,
                b1: store.add(format!("{p}.ffn.b1"), Tensor::zeros(&[hid]))?,
                w2: store.add(format!("{p}.ffn.w2"), Tensor::zeros(&[d, hid]))?,
                b2: store.add(format!("{p}.ffn.b2"), Tensor::zeros(&[d]))?,
            };
            layers.push(LayerParams {
                ssm: SsmBlockParams {
                    heads: ssm_heads,
                    norm: ssm_norm,
                    cluster,
                    spectral,
                    out: ssm_out,
                },
                ffn,
            });
        }
        let hw = randn(&mut rng, classes * d, 0.1 / (d as f32).sqrt());
        let head_w = store.add("head.weight", Tensor::new(&[classes, d], hw)?)?;
        let head_b = store.add("head.bias", Tensor::zeros(&[classes]))?;

        let mut model = Self {
            config,
            store,
            streams,
            bands,
            classes,
            embed,
            layers,
            head_w,
            head_b,
        };
        model.set_gates(model.config.gate_init);
        Ok(model)
    }

    /// Splits the cube's wavelengths by `boundaries` and builds a model on the
    /// resulting groups.
    pub fn for_cube(
        config: ModelConfig,
        cube: &HsiCube,
        boundaries: &[BandRange],
        classes: usize,
    ) -> Result<Self> {
        let groups = split_spectrum(cube.wavelengths(), boundaries)?;
        let streams = groups.iter().map(StreamInfo::from).collect();
        Self::new(config, streams, cube.bands(), classes)
    }

    /// Applies [`init_identity`] to every head of every sublayer (all gates 0).
    pub fn identity_init(&mut self, gamma: f32) -> Result<()> {
        for l in &self.layers {
            init_identity(&mut self.store, &l.ssm.heads, gamma)?;
            init_identity(&mut self.store, &l.ffn.heads, gamma)?;
        }
        Ok(())
    }

    fn set_gates(&mut self, value: f32) {
        for l in &self.layers {
            for heads in [&l.ssm.heads, &l.ffn.heads] {
                for h in [heads.pre, heads.post, heads.res] {
                    self.store.get_mut(h.alpha).data_mut()[0] = value;
                }
            }
        }
    }

    pub fn streams(&self) -> &[StreamInfo] {
        &self.streams
    }

    pub fn stream_names(&self) -> Vec<String> {
        self.streams.iter().map(|s| s.name.clone()).collect()
    }

    pub fn expansion(&self) -> usize {
        self.streams.len()
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn embed_params(&self) -> &[EmbedParams] {
        &self.embed
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn head(&self) -> (ParamId, ParamId) {
        (self.head_w, self.head_b)
    }
}
