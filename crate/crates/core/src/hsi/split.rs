use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabelMap;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub test: Vec<bool>,
    pub seed: u64,
}

impl SplitMasks {
    pub fn train_count(&self) -> usize {
        self.train.iter().filter(|&&b| b).count()
    }

    pub fn test_count(&self) -> usize {
        self.test.iter().filter(|&&b| b).count()
    }
}

/// `max(1, round_half_up(fraction · n))` for a class of `n` pixels.
pub fn round_half_up_count(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    // The epsilon absorbs representation error such as 0.1 · 45 = 4.4999….
    let k = (fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
    k.clamp(1, n)
}

/// Per-class seeded draw of training pixels; every other labeled pixel is test.
pub fn stratified_split(labels: &LabelMap, fraction: f64, seed: u64) -> Result<SplitMasks> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.num_classes() + 1];
    for (p, &l) in labels.labels().iter().enumerate() {
        if l > 0 {
            by_class[l as usize].push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = vec![false; labels.pixels()];
    let mut test = vec![false; labels.pixels()];
    for (class, pixels) in by_class.iter().enumerate().skip(1) {
        if pixels.is_empty() {
            log::warn!("class {class} has no labeled pixels; skipped");
            continue;
        }
        let k = round_half_up_count(fraction, pixels.len());
        let chosen = sample(&mut rng, pixels.len(), k);
        for &p in pixels {
            test[p] = true;
        }
        for i in chosen.iter() {
            train[pixels[i]] = true;
            test[pixels[i]] = false;
        }
    }
    Ok(SplitMasks { train, test, seed })
}
