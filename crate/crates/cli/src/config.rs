//! Run configuration: a JSON file with flag overrides on top.

use std::fs;
use std::path::{Path, PathBuf};

use esmhc_core::hsi::{boundaries_for_expansion, BandRange, SyntheticConfig};
use esmhc_core::inspect::default_export_epochs;
use esmhc_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_ECHO: &str = "config.json";

/// Parameters of the `synth` subcommand's generated scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub noise: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            bands: 40,
            classes: 4,
            noise: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
    /// Fraction of each class drawn for training.
    pub train_fraction: f64,
    /// Stream boundaries besides FULL; the preset for `model.expansion` when
    /// absent.
    pub boundaries: Option<Vec<BandRange>>,
    /// Epochs whose matrices are exported during training; `{1, 10, 50,
    /// final}` when absent.
    pub export_epochs: Option<Vec<usize>>,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            cube: None,
            labels: None,
            out: PathBuf::from("out"),
            train_fraction: 0.1,
            boundaries: None,
            export_epochs: None,
            synth: SynthSettings::default(),
        }
    }
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub cube: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub expansion: Option<usize>,
    pub topk_frac: Option<f64>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Self, CliError> {
        let mut c = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(v) = &o.cube {
            c.cube = Some(v.clone());
        }
        if let Some(v) = &o.labels {
            c.labels = Some(v.clone());
        }
        if let Some(v) = &o.out {
            c.out = v.clone();
        }
        let m = &mut c.model;
        m.seed = o.seed.unwrap_or(m.seed);
        m.epochs = o.epochs.unwrap_or(m.epochs);
        m.expansion = o.expansion.unwrap_or(m.expansion);
        m.topk_frac = o.topk_frac.unwrap_or(m.topk_frac);
        m.hidden = o.hidden.unwrap_or(m.hidden);
        m.layers = o.layers.unwrap_or(m.layers);
        if c.export_epochs.is_none() {
            c.export_epochs = Some(default_export_epochs(c.model.epochs));
        }
        if c.boundaries.is_none() {
            c.boundaries = Some(boundaries_for_expansion(c.model.expansion)?);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if let Some(b) = &self.boundaries {
            if b.len() + 1 != self.model.expansion {
                return Err(CliError::config(format!(
                    "{} boundaries plus FULL do not make expansion {}",
                    b.len(),
                    self.model.expansion
                )));
            }
        }
        if let Some(e) = &self.export_epochs {
            if let Some(bad) = e.iter().find(|&&e| e == 0 || e > self.model.epochs) {
                return Err(CliError::config(format!(
                    "export epoch {bad} outside 1..={}",
                    self.model.epochs
                )));
            }
        }
        Ok(())
    }

    pub fn boundaries(&self) -> &[BandRange] {
        self.boundaries.as_deref().unwrap_or_default()
    }

    pub fn cube_path(&self) -> Result<&Path, CliError> {
        self.cube
            .as_deref()
            .ok_or_else(|| CliError::config("no cube given (--cube or \"cube\" in the config)"))
    }

    pub fn labels_path(&self) -> Result<&Path, CliError> {
        self.labels.as_deref().ok_or_else(|| {
            CliError::config("no labels given (--labels or \"labels\" in the config)")
        })
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        let s = &self.synth;
        SyntheticConfig {
            noise: s.noise,
            ..SyntheticConfig::new(s.height, s.width, s.bands, s.classes, self.model.seed)
        }
    }

    /// Writes the resolved configuration to `out/config.json`.
    pub fn echo(&self) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(CliError::io)?;
        let path = self.out.join(CONFIG_ECHO);
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(&path, json + "\n").map_err(CliError::io)?;
        Ok(path)
    }
}
