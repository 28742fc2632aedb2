//! Hyperspectral cubes, label maps, spectrum grouping and train/test splits.

mod io;
mod spectrum;
mod split;
mod synthetic;

pub use io::{
    decode_cube, decode_labels, encode_cube, encode_labels, load_cube, load_labels, save_cube,
    save_labels, CUBE_MAGIC, LABEL_MAGIC,
};
pub use spectrum::{
    boundaries_for_expansion, split_spectrum, standard_boundaries, BandRange, SpectrumGroup, FULL,
};
pub use split::{round_half_up_count, stratified_split, SplitMasks};
pub use synthetic::{gen_synthetic_cube, gen_synthetic_cube_with, SyntheticConfig};

use crate::error::{Error, Result};

/// Hyperspectral image, band-interleaved-by-pixel: value `(r, c, b)` lives
/// at `(r * width + c) * bands + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
    wavelengths: Vec<f64>,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        values: Vec<f32>,
        wavelengths: Vec<f64>,
    ) -> Result<Self> {
        let n = height
            .checked_mul(width)
            .and_then(|p| p.checked_mul(bands))
            .ok_or_else(|| Error::format("cube dimensions overflow"))?;
        if values.len() != n {
            return Err(Error::format(format!(
                "cube {height}x{width}x{bands} needs {n} values, got {}",
                values.len()
            )));
        }
        if wavelengths.len() != bands {
            return Err(Error::format(format!(
                "wavelength count mismatch: {} wavelengths for {bands} bands",
                wavelengths.len()
            )));
        }
        if wavelengths
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
            || wavelengths.iter().any(|w| !w.is_finite())
        {
            return Err(Error::format(
                "wavelengths must be finite and strictly increasing",
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("cube contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            bands,
            values,
            wavelengths,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn spectrum(&self, pixel: usize) -> &[f32] {
        &self.values[pixel * self.bands..(pixel + 1) * self.bands]
    }

    /// `[pixels, band_indices.len()]` matrix of the selected bands.
    pub fn select_bands(&self, band_indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.pixels() * band_indices.len());
        for p in 0..self.pixels() {
            let s = self.spectrum(p);
            out.extend(band_indices.iter().map(|&b| s[b]));
        }
        out
    }
}

/// Per-pixel class labels; 0 is unlabeled, classes are `1..=num_classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u16>) -> Result<Self> {
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::format("label dimensions overflow"))?;
        if labels.len() != n {
            return Err(Error::format(format!(
                "label map {height}x{width} needs {n} labels, got {}",
                labels.len()
            )));
        }
        if num_classes > u16::MAX as usize {
            return Err(Error::format("too many classes"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize > num_classes) {
            return Err(Error::format(format!(
                "label {bad} exceeds class count {num_classes}"
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Per-band z-score over all pixels (population std). Zero-variance bands
/// become all zeros.
pub fn zscore_normalize(cube: &HsiCube) -> HsiCube {
    let (c, p) = (cube.bands, cube.pixels());
    let mut mean = vec![0.0f64; c];
    for px in cube.values.chunks_exact(c) {
        mean.iter_mut().zip(px).for_each(|(m, &v)| *m += v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= p.max(1) as f64);
    let mut var = vec![0.0f64; c];
    for px in cube.values.chunks_exact(c) {
        for b in 0..c {
            let d = px[b] as f64 - mean[b];
            var[b] += d * d;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / p.max(1) as f64).sqrt()).collect();
    let mut values = cube.values.clone();
    for px in values.chunks_exact_mut(c) {
        for b in 0..c {
            px[b] = if std[b] > 0.0 {
                ((px[b] as f64 - mean[b]) / std[b]) as f32
            } else {
                0.0
            };
        }
    }
    HsiCube {
        values,
        ..cube.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_cubes() {
        assert!(HsiCube::new(1, 1, 2, vec![0.0; 2], vec![500.0]).is_err());
        assert!(HsiCube::new(1, 1, 2, vec![0.0; 2], vec![500.0, 500.0]).is_err());
        assert!(HsiCube::new(1, 1, 2, vec![0.0; 3], vec![500.0, 600.0]).is_err());
        assert!(HsiCube::new(1, 1, 1, vec![f32::NAN], vec![500.0]).is_err());
        assert!(LabelMap::new(1, 2, 1, vec![0, 2]).is_err());
    }

    #[test]
    fn zscore_examples() {
        // Two pixels, band 0 = {1, 3}, band 1 constant.
        let cube = HsiCube::new(1, 2, 2, vec![1.0, 7.0, 3.0, 7.0], vec![500.0, 600.0]).unwrap();
        let z = zscore_normalize(&cube);
        assert_eq!(z.values(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn zscore_random_cube_has_zero_mean_unit_std() {
        let (cube, _) = gen_synthetic_cube(9, 7, 5, 3, 4).unwrap();
        let z = zscore_normalize(&cube);
        for b in 0..5 {
            let vals: Vec<f64> = (0..z.pixels()).map(|p| z.spectrum(p)[b] as f64).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            assert!(m.abs() < 1e-5, "band {b} mean {m}");
            assert!((s - 1.0).abs() < 1e-4, "band {b} std {s}");
        }
    }
}
