//! Spectrum-aware manifold-constrained hyper-connections for hyperspectral
//! image classification, with the mixing matrices exposed for inspection.

pub mod error;
pub mod hsi;
pub mod inspect;
pub mod metrics;
pub mod mhc;
pub mod model;
pub mod numerics;
pub mod ssm;

pub use error::{Error, Result};
pub use hsi::{BandRange, HsiCube, LabelMap, SpectrumGroup, SplitMasks};
pub use inspect::{AssociationTable, AsymmetryRow, Head, HeatmapSet};
pub use metrics::{ConfusionMatrix, Scores};
pub use mhc::{HyperHeadParams, HyperMatrices, SinkhornConfig};
pub use model::{EsMhc, ForwardTrace, ModelConfig, ModelInput, Sublayer, TrainLog};
pub use numerics::{ParamStore, Tape, Tensor, Var};
pub use ssm::{SsmParams, TokenSelection};
