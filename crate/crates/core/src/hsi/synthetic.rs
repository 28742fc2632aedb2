//! Small labeled cubes with known structure for tests and demos.
//!
//! Classes occupy Voronoi cells around `K` distinct seed pixels. Each class
//! has a smooth signature (baseline plus three Gaussian bumps over the
//! wavelength axis); pixels carry their class signature plus i.i.d. Gaussian
//! noise whose σ is a fraction of the global signature range.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub seed: u64,
    /// Noise σ as a fraction of the signature value range.
    pub noise: f64,
}

impl SyntheticConfig {
    pub fn new(height: usize, width: usize, bands: usize, classes: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            bands,
            classes,
            seed,
            noise: 0.05,
        }
    }
}

pub fn gen_synthetic_cube(
    height: usize,
    width: usize,
    bands: usize,
    classes: usize,
    seed: u64,
) -> Result<(HsiCube, LabelMap)> {
    gen_synthetic_cube_with(&SyntheticConfig::new(height, width, bands, classes, seed))
}

/// Class signatures sampled at `wavelengths`, `[classes][bands]`.
fn signatures(rng: &mut ChaCha8Rng, classes: usize, wavelengths: &[f64]) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| {
            let base = rng.random_range(0.1..0.4);
            let bumps: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.1..0.6),
                        rng.random_range(400.0..2500.0),
                        rng.random_range(80.0..400.0),
                    )
                })
                .collect();
            wavelengths
                .iter()
                .map(|&wl| {
                    base + bumps
                        .iter()
                        .map(|&(a, c, w)| a * (-0.5 * ((wl - c) / w).powi(2)).exp())
                        .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

pub fn gen_synthetic_cube_with(cfg: &SyntheticConfig) -> Result<(HsiCube, LabelMap)> {
    let SyntheticConfig {
        height,
        width,
        bands,
        classes,
        seed,
        noise,
    } = *cfg;
    if classes < 2 {
        return Err(Error::config("synthetic cube needs at least 2 classes"));
    }
    if bands == 0 {
        return Err(Error::config("synthetic cube needs at least 1 band"));
    }
    let pixels = height * width;
    if pixels < classes {
        return Err(Error::config(format!(
            "{height}x{width} image cannot hold {classes} classes"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config(
            "noise fraction must be finite and non-negative",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wavelengths: Vec<f64> = (0..bands)
        .map(|i| 400.0 + (i as f64 + 0.5) * 2100.0 / bands as f64)
        .collect();

    let seeds: Vec<(f64, f64)> = sample(&mut rng, pixels, classes)
        .iter()
        .map(|p| ((p / width) as f64, (p % width) as f64))
        .collect();
    let labels: Vec<u16> = (0..pixels)
        .map(|p| {
            let (r, c) = ((p / width) as f64, (p % width) as f64);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, &(sr, sc)) in seeds.iter().enumerate() {
                let d = (r - sr).powi(2) + (c - sc).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best as u16 + 1
        })
        .collect();

    let sig = signatures(&mut rng, classes, &wavelengths);
    let lo = sig.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = sig
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let sigma = noise * (hi - lo);
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");

    let mut values = Vec::with_capacity(pixels * bands);
    for &l in &labels {
        for &s in &sig[l as usize - 1] {
            let n = if sigma > 0.0 {
                normal.sample(&mut rng)
            } else {
                0.0
            };
            values.push((s + n) as f32);
        }
    }
    let cube = HsiCube::new(height, width, bands, values, wavelengths)?;
    let labels = LabelMap::new(height, width, classes, labels)?;
    Ok((cube, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_with_all_classes() {
        let (a, la) = gen_synthetic_cube(8, 8, 12, 2, 1).unwrap();
        let (b, lb) = gen_synthetic_cube(8, 8, 12, 2, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let counts = la.class_counts();
        assert!(counts[1] > 0 && counts[2] > 0);
        assert_eq!(counts[0], 0);
        assert!(a
            .wavelengths()
            .iter()
            .all(|&w| (400.0..2500.0).contains(&w)));
    }

    #[test]
    fn noiseless_spectra_are_constant_within_class() {
        let mut cfg = SyntheticConfig::new(6, 5, 9, 3, 2);
        cfg.noise = 0.0;
        let (cube, labels) = gen_synthetic_cube_with(&cfg).unwrap();
        for c in 1..=3u16 {
            let pix: Vec<usize> = (0..30).filter(|&p| labels.labels()[p] == c).collect();
            for &p in &pix[1..] {
                assert_eq!(cube.spectrum(p), cube.spectrum(pix[0]));
            }
        }
    }

    #[test]
    fn nearest_centroid_recovers_clean_labels() {
        let mut cfg = SyntheticConfig::new(10, 10, 20, 4, 5);
        cfg.noise = 0.0;
        let (cube, labels) = gen_synthetic_cube_with(&cfg).unwrap();
        let k = labels.num_classes();
        let mut centroids = vec![vec![0.0f64; cube.bands()]; k];
        let counts = labels.class_counts();
        for p in 0..cube.pixels() {
            let c = labels.labels()[p] as usize - 1;
            for (acc, &v) in centroids[c].iter_mut().zip(cube.spectrum(p)) {
                *acc += v as f64 / counts[c + 1] as f64;
            }
        }
        for p in 0..cube.pixels() {
            let dist = |c: usize| -> f64 {
                cube.spectrum(p)
                    .iter()
                    .zip(&centroids[c])
                    .map(|(&v, m)| (v as f64 - m).powi(2))
                    .sum()
            };
            let best = (0..k).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
            assert_eq!(best + 1, labels.labels()[p] as usize);
        }
    }

    #[test]
    fn rejects_single_class() {
        assert!(gen_synthetic_cube(4, 4, 4, 1, 0).is_err());
    }
}
