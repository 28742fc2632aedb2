//! Binary containers for cubes and label maps.
//!
//! Cube: `HSICUBE1`, u32 H, W, C, C × f64 wavelengths, H·W·C × f32 values
//! (band-interleaved-by-pixel). Labels: `HSILBL01`, u32 H, W, K, H·W × u16.
//! All little-endian. A human-readable JSON echo is written next to each file
//! as `<path>.json` and never read back.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::{HsiCube, LabelMap};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 8] = b"HSICUBE1";
pub const LABEL_MAGIC: &[u8; 8] = b"HSILBL01";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("file truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn product(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::format(format!("dimension overflow in {dims:?}")))
}

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + cube.bands() * 8 + cube.values().len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    for d in [cube.height(), cube.width(), cube.bands()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for w in cube.wavelengths() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for v in cube.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_cube(buf: &[u8]) -> Result<HsiCube> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8).ok() != Some(CUBE_MAGIC.as_slice()) {
        return Err(Error::format("bad cube magic"));
    }
    let (h, w, c) = (r.u32()?, r.u32()?, r.u32()?);
    let n = product(&[h, w, c])?;
    let wl_bytes = product(&[c, 8])?;
    let val_bytes = product(&[n, 4])?;
    let expected = wl_bytes
        .checked_add(val_bytes)
        .ok_or_else(|| Error::format("dimension overflow"))?;
    if buf.len() - r.pos != expected {
        return Err(Error::format(format!(
            "cube {h}x{w}x{c} needs {expected} payload bytes, file has {}",
            buf.len() - r.pos
        )));
    }
    let wavelengths = r
        .take(wl_bytes)?
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let values = r
        .take(val_bytes)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    r.finish()?;
    HsiCube::new(h, w, c, values, wavelengths)
}

pub fn encode_labels(labels: &LabelMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + labels.pixels() * 2);
    out.extend_from_slice(LABEL_MAGIC);
    for d in [labels.height(), labels.width(), labels.num_classes()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for l in labels.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_labels(buf: &[u8]) -> Result<LabelMap> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8).ok() != Some(LABEL_MAGIC.as_slice()) {
        return Err(Error::format("bad label magic"));
    }
    let (h, w, k) = (r.u32()?, r.u32()?, r.u32()?);
    let bytes = product(&[h, w, 2])?;
    if buf.len() - r.pos != bytes {
        return Err(Error::format(format!(
            "label map {h}x{w} needs {bytes} payload bytes, file has {}",
            buf.len() - r.pos
        )));
    }
    let labels = r
        .take(bytes)?
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
        .collect();
    r.finish()?;
    LabelMap::new(h, w, k, labels)
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    fs::write(path, encode_cube(cube))?;
    let meta = json!({
        "kind": "hsi-cube",
        "height": cube.height(),
        "width": cube.width(),
        "bands": cube.bands(),
        "wavelength_min_nm": cube.wavelengths().first(),
        "wavelength_max_nm": cube.wavelengths().last(),
    });
    fs::write(sidecar(path), serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(())
}

pub fn load_cube(path: &Path) -> Result<HsiCube> {
    decode_cube(&fs::read(path)?)
}

/// Writes the label container; `class_names` (1-based order) only feed the
/// JSON echo.
pub fn save_labels(labels: &LabelMap, path: &Path, class_names: Option<&[String]>) -> Result<()> {
    fs::write(path, encode_labels(labels))?;
    let names: Vec<String> = match class_names {
        Some(n) => n.to_vec(),
        None => (1..=labels.num_classes())
            .map(|c| format!("class_{c}"))
            .collect(),
    };
    let meta = json!({
        "kind": "hsi-labels",
        "height": labels.height(),
        "width": labels.width(),
        "classes": labels.num_classes(),
        "class_names": names,
        "class_counts": &labels.class_counts()[1..],
    });
    fs::write(sidecar(path), serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    decode_labels(&fs::read(path)?)
}
