use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open wavelength interval `[min_nm, max_nm)` naming one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandRange {
    pub name: String,
    pub min_nm: f64,
    pub max_nm: f64,
}

impl BandRange {
    pub fn new(name: &str, min_nm: f64, max_nm: f64) -> Self {
        Self {
            name: name.to_string(),
            min_nm,
            max_nm,
        }
    }

    pub fn contains(&self, wavelength: f64) -> bool {
        self.min_nm <= wavelength && wavelength < self.max_nm
    }
}

/// Bands assigned to one residual stream.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumGroup {
    pub name: String,
    pub min_nm: f64,
    pub max_nm: f64,
    pub bands: Vec<usize>,
}

pub const FULL: &str = "FULL";

/// VIS / NIR / SWIR1 / SWIR2 (400-700-1000-1800-2500 nm).
pub fn standard_boundaries() -> Vec<BandRange> {
    vec![
        BandRange::new("VIS", 400.0, 700.0),
        BandRange::new("NIR", 700.0, 1000.0),
        BandRange::new("SWIR1", 1000.0, 1800.0),
        BandRange::new("SWIR2", 1800.0, 2500.0),
    ]
}

/// Boundary preset giving `expansion` streams (FULL included), built by
/// merging adjacent ranges of the four-group split.
pub fn boundaries_for_expansion(expansion: usize) -> Result<Vec<BandRange>> {
    Ok(match expansion {
        1 => Vec::new(),
        2 => vec![BandRange::new("VNIR-SWIR", 400.0, 2500.0)],
        3 => vec![
            BandRange::new("VNIR", 400.0, 1000.0),
            BandRange::new("SWIR", 1000.0, 2500.0),
        ],
        4 => vec![
            BandRange::new("VIS", 400.0, 700.0),
            BandRange::new("NIR", 700.0, 1000.0),
            BandRange::new("SWIR", 1000.0, 2500.0),
        ],
        5 => standard_boundaries(),
        n => {
            return Err(Error::config(format!(
                "no spectrum preset for expansion {n}; supply explicit boundaries"
            )))
        }
    })
}

/// Assigns every band to the range containing its wavelength. The FULL group
/// (all bands) is always first; then one group per range, in order.
pub fn split_spectrum(wavelengths: &[f64], boundaries: &[BandRange]) -> Result<Vec<SpectrumGroup>> {
    for (i, r) in boundaries.iter().enumerate() {
        if r.min_nm.partial_cmp(&r.max_nm) != Some(Ordering::Less) {
            return Err(Error::Partition(format!(
                "range {} is empty or invalid: [{}, {})",
                r.name, r.min_nm, r.max_nm
            )));
        }
        if r.name == FULL {
            return Err(Error::Partition("FULL is reserved".into()));
        }
        if let Some(prev) = i.checked_sub(1).map(|j| &boundaries[j]) {
            if prev.max_nm > r.min_nm {
                return Err(Error::Partition(format!(
                    "ranges {} and {} overlap or are out of order",
                    prev.name, r.name
                )));
            }
        }
        if boundaries[..i].iter().any(|p| p.name == r.name) {
            return Err(Error::Partition(format!("duplicate range name {}", r.name)));
        }
    }

    let mut groups = Vec::with_capacity(boundaries.len() + 1);
    groups.push(SpectrumGroup {
        name: FULL.to_string(),
        min_nm: 0.0,
        max_nm: f64::INFINITY,
        bands: (0..wavelengths.len()).collect(),
    });
    groups.extend(boundaries.iter().map(|r| SpectrumGroup {
        name: r.name.clone(),
        min_nm: r.min_nm,
        max_nm: r.max_nm,
        bands: Vec::new(),
    }));
    if boundaries.is_empty() {
        return Ok(groups);
    }
    for (band, &wl) in wavelengths.iter().enumerate() {
        let slot = boundaries
            .iter()
            .position(|r| r.contains(wl))
            .ok_or_else(|| {
                Error::Partition(format!(
                    "band {band} at {wl} nm is not covered by any range"
                ))
            })?;
        groups[slot + 1].bands.push(band);
    }
    Ok(groups)
}
