use crate::error::{Error, Result};
use crate::hsi::{zscore_normalize, HsiCube};
use crate::numerics::{Bound, Tape, Tensor, Var};

use super::{EsMhc, RMS_EPS};

/// 2-D sinusoidal encoding, `[height·width, d]` in raster order. The first
/// `d/2` channels encode the row and the last `d/2` the column, each as
/// interleaved `sin, cos` pairs at frequencies `10000^(-2i / (d/2))`.
pub fn positional_encoding(height: usize, width: usize, d: usize) -> Result<Vec<f32>> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(Error::config(format!(
            "positional encoding needs d % 4 == 0, got {d}"
        )));
    }
    let half = d / 2;
    let freqs: Vec<f64> = (0..half / 2)
        .map(|i| 10000f64.powf(-((2 * i) as f64) / half as f64))
        .collect();
    let mut out = vec![0.0f32; height * width * d];
    for r in 0..height {
        for c in 0..width {
            let row = &mut out[(r * width + c) * d..(r * width + c + 1) * d];
            for (i, &f) in freqs.iter().enumerate() {
                let (a, b) = (r as f64 * f, c as f64 * f);
                row[2 * i] = a.sin() as f32;
                row[2 * i + 1] = a.cos() as f32;
                row[half + 2 * i] = b.sin() as f32;
                row[half + 2 * i + 1] = b.cos() as f32;
            }
        }
    }
    Ok(out)
}

/// Model-ready view of one cube: z-scored band subsets per stream plus the
/// positional encoding for its geometry.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub height: usize,
    pub width: usize,
    /// `[L, C_e]` per stream.
    pub streams: Vec<Tensor>,
    /// `[L, D]`.
    pub position: Tensor,
}

impl ModelInput {
    pub fn new(cube: &HsiCube, model: &EsMhc) -> Result<Self> {
        if cube.bands() != model.bands() {
            return Err(Error::shape(format!(
                "cube has {} bands, model expects {}",
                cube.bands(),
                model.bands()
            )));
        }
        let norm = zscore_normalize(cube);
        let l = cube.pixels();
        let streams = model
            .streams()
            .iter()
            .map(|s| Tensor::new(&[l, s.bands.len()], norm.select_bands(&s.bands)))
            .collect::<Result<Vec<_>>>()?;
        let d = model.config.hidden;
        let position = Tensor::new(
            &[l, d],
            positional_encoding(cube.height(), cube.width(), d)?,
        )?;
        Ok(Self {
            height: cube.height(),
            width: cube.width(),
            streams,
            position,
        })
    }

    pub fn tokens(&self) -> usize {
        self.height * self.width
    }
}

impl EsMhc {
    /// Stream tensor `[L, n, D]`: per-stream linear embedding and RMS norm,
    /// with the positional encoding added to FULL only.
    pub fn embed_streams(&self, tape: &mut Tape, bound: &Bound, input: &ModelInput) -> Result<Var> {
        if input.streams.len() != self.expansion() {
            return Err(Error::shape(format!(
                "input has {} streams, model has {}",
                input.streams.len(),
                self.expansion()
            )));
        }
        let mut parts = Vec::with_capacity(self.expansion());
        for (e, (x, p)) in input.streams.iter().zip(self.embed_params()).enumerate() {
            let x = tape.constant(x.clone())?;
            let z = tape.linear(x, bound.var(p.weight), Some(bound.var(p.bias)))?;
            let mut z = tape.rms_norm(z, bound.var(p.gain), RMS_EPS)?;
            if e == 0 {
                let pe = tape.constant(input.position.clone())?;
                z = tape.add(z, pe)?;
            }
            parts.push(z);
        }
        tape.stack_middle(&parts)
    }
}
