//! Spatial views of the hyper-connection matrices: per-element heatmaps
//! (8-bit PGM plus raw CSV), class-region association tables, flow
//! asymmetry between stream pairs, and top-k selection masks.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::hsi::LabelMap;
use crate::model::{EpochObserver, EpochRecord, EsMhc, ForwardTrace, Sublayer, SublayerTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    Pre,
    Post,
    Res,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Pre => "pre",
            Head::Post => "post",
            Head::Res => "res",
        }
    }
}

/// One `H × W` map. For `res`, `dst` is the row stream and `src` the column
/// stream; `pre`/`post` maps have no `src`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub dst: String,
    pub src: Option<String>,
    pub values: Vec<f32>,
}

impl HeatMap {
    /// `SRC-to-DST` for res maps, the stream name otherwise.
    pub fn tag(&self) -> String {
        match &self.src {
            Some(s) => format!("{s}-to-{}", self.dst),
            None => self.dst.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapSet {
    pub head: Head,
    pub layer: usize,
    pub sublayer: Sublayer,
    pub epoch: usize,
    pub height: usize,
    pub width: usize,
    pub maps: Vec<HeatMap>,
}

impl HeatmapSet {
    /// Splits one sublayer's trace into its pre, post and res sets.
    pub fn from_trace(
        trace: &SublayerTrace,
        names: &[String],
        height: usize,
        width: usize,
        epoch: usize,
    ) -> Result<[HeatmapSet; 3]> {
        let n = names.len();
        let l = height * width;
        if trace.pre.len() != l * n || trace.res.len() != l * n * n {
            return Err(Error::shape(format!(
                "trace sized for {} tokens, geometry {height}x{width} with n = {n}",
                trace.pre.len() / n.max(1)
            )));
        }
        let column = |data: &[f32], stride: usize, k: usize| -> Vec<f32> {
            data.iter().skip(k).step_by(stride).copied().collect()
        };
        let vector_maps = |data: &[f32]| -> Vec<HeatMap> {
            (0..n)
                .map(|i| HeatMap {
                    dst: names[i].clone(),
                    src: None,
                    values: column(data, n, i),
                })
                .collect()
        };
        let res_maps = (0..n * n)
            .map(|ij| HeatMap {
                dst: names[ij / n].clone(),
                src: Some(names[ij % n].clone()),
                values: column(&trace.res, n * n, ij),
            })
            .collect();
        let set = |head, maps| HeatmapSet {
            head,
            layer: trace.layer,
            sublayer: trace.sublayer,
            epoch,
            height,
            width,
            maps,
        };
        Ok([
            set(Head::Pre, vector_maps(&trace.pre)),
            set(Head::Post, vector_maps(&trace.post)),
            set(Head::Res, res_maps),
        ])
    }

    pub fn stem(&self) -> String {
        format!(
            "{}_L{}_{}_e{:04}",
            self.head.name(),
            self.layer,
            self.sublayer.name(),
            self.epoch
        )
    }

    pub fn file_stem(&self, map: &HeatMap) -> String {
        format!("{}_{}", self.stem(), map.tag())
    }
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::shape("PGM pixel count does not match geometry"));
    }
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    fs::write(path, buf)?;
    Ok(())
}

/// Grey levels `255 · label / K`; unlabeled pixels stay black.
pub fn render_label_map(labels: &LabelMap) -> Vec<u8> {
    let k = labels.num_classes().max(1) as u32;
    labels
        .labels()
        .iter()
        .map(|&l| ((l as u32 * 255 + k / 2) / k) as u8)
        .collect()
}

/// Reads a binary 8-bit PGM as written by [`write_pgm`].
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let buf = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(format!("bad PGM field {s}")))
    };
    if fields[0] != "P5" || num(&fields[3])? != 255 {
        return Err(Error::format("only binary 8-bit PGM is supported"));
    }
    let (w, h) = (num(&fields[1])?, num(&fields[2])?);
    let pixels = buf.get(pos..).unwrap_or_default().to_vec();
    if pixels.len() != w * h {
        return Err(Error::format("PGM payload size mismatch"));
    }
    Ok((w, h, pixels))
}

/// Min-max scaling to 0..=255; a constant map becomes mid-gray.
pub fn normalize_to_u8(values: &[f32]) -> (Vec<u8>, f32, f32) {
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let px = if max > min {
        let span = (max - min) as f64;
        values
            .iter()
            .map(|&v| ((v - min) as f64 / span * 255.0).round() as u8)
            .collect()
    } else {
        vec![128; values.len()]
    };
    (px, min, max)
}

pub fn raw_csv(values: &[f32], width: usize) -> String {
    let mut s = String::from("row,col,value\n");
    for (p, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", p / width, p % width, v);
    }
    s
}

/// Parses a `row,col,value` CSV back into `(height, width, values)`.
pub fn read_raw_csv(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("row,col,value") {
        return Err(Error::format("raw CSV header must be row,col,value"));
    }
    let mut cells = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(format!("raw CSV line {}: {line}", i + 2));
        if parts.len() != 3 {
            return Err(bad());
        }
        let r: usize = parts[0].parse().map_err(|_| bad())?;
        let c: usize = parts[1].parse().map_err(|_| bad())?;
        let v: f32 = parts[2].parse().map_err(|_| bad())?;
        cells.push((r, c, v));
    }
    let height = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let width = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if cells.len() != height * width {
        return Err(Error::format("raw CSV does not cover a full grid"));
    }
    let mut values = vec![0.0; height * width];
    for (r, c, v) in cells {
        values[r * width + c] = v;
    }
    Ok((height, width, values))
}

/// Writes `<stem>_<tag>.pgm` and `.csv` per map plus `<stem>_range.csv`
/// holding each map's min, max and a constant flag.
pub fn export_heatmaps(set: &HeatmapSet, dir: &Path) -> Result<Vec<PathBuf>> {
    let l = set.height * set.width;
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(2 * set.maps.len() + 1);
    let mut ranges = String::from("map,min,max,constant\n");
    for map in &set.maps {
        if map.values.len() != l {
            return Err(Error::shape(format!(
                "map {} has {} values for {}x{}",
                map.tag(),
                map.values.len(),
                set.height,
                set.width
            )));
        }
        let stem = set.file_stem(map);
        let (px, min, max) = normalize_to_u8(&map.values);
        let pgm = dir.join(format!("{stem}.pgm"));
        write_pgm(&pgm, set.width, set.height, &px)?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, raw_csv(&map.values, set.width))?;
        let _ = writeln!(ranges, "{},{min},{max},{}", map.tag(), min == max);
        files.push(pgm);
        files.push(csv);
    }
    let range_path = dir.join(format!("{}_range.csv", set.stem()));
    fs::write(&range_path, ranges)?;
    files.push(range_path);
    Ok(files)
}

/// Binary PGM (255 = selected) per cluster scan of one SSM sublayer.
pub fn export_selection_masks(
    trace: &SublayerTrace,
    names: &[String],
    height: usize,
    width: usize,
    epoch: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let n = names.len();
    if trace.selections.len() != n * n {
        return Err(Error::shape(format!(
            "{} selections for n = {n}",
            trace.selections.len()
        )));
    }
    fs::create_dir_all(dir)?;
    trace
        .selections
        .iter()
        .enumerate()
        .map(|(ij, sel)| {
            let px: Vec<u8> = sel
                .mask(height * width)
                .into_iter()
                .map(|b| if b { 255 } else { 0 })
                .collect();
            let path = dir.join(format!(
                "topk_L{}_e{:04}_{}-to-{}.pgm",
                trace.layer,
                epoch,
                names[ij % n],
                names[ij / n]
            ));
            write_pgm(&path, width, height, &px)?;
            Ok(path)
        })
        .collect()
}

/// Every heatmap set and selection mask in a forward trace.
pub fn export_trace(
    trace: &ForwardTrace,
    names: &[String],
    height: usize,
    width: usize,
    epoch: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for sub in &trace.sublayers {
        for set in HeatmapSet::from_trace(sub, names, height, width, epoch)? {
            files.extend(export_heatmaps(&set, dir)?);
        }
        if sub.sublayer == Sublayer::Ssm {
            files.extend(export_selection_masks(
                sub, names, height, width, epoch, dir,
            )?);
        }
    }
    Ok(files)
}

/// `{1, 10, 50, total}` clipped to `total`.
pub fn default_export_epochs(total: usize) -> Vec<usize> {
    let mut e: Vec<usize> = [1, 10, 50, total]
        .into_iter()
        .filter(|&e| e >= 1 && e <= total)
        .collect();
    e.sort_unstable();
    e.dedup();
    e
}

/// Writes every traced epoch in `epochs` under `dir`.
pub struct ExportObserver {
    pub epochs: Vec<usize>,
    pub dir: PathBuf,
    pub height: usize,
    pub width: usize,
    pub files: Vec<PathBuf>,
}

impl ExportObserver {
    pub fn new(epochs: Vec<usize>, dir: PathBuf, height: usize, width: usize) -> Self {
        Self {
            epochs,
            dir,
            height,
            width,
            files: Vec::new(),
        }
    }
}

impl EpochObserver for ExportObserver {
    fn wants_trace(&mut self, epoch: usize) -> bool {
        self.epochs.contains(&epoch)
    }

    fn observe(
        &mut self,
        model: &EsMhc,
        record: &EpochRecord,
        trace: Option<&ForwardTrace>,
    ) -> Result<()> {
        if let Some(trace) = trace {
            let names = model.stream_names();
            let files = export_trace(
                trace,
                &names,
                self.height,
                self.width,
                record.epoch,
                &self.dir,
            )?;
            log::info!("epoch {}: exported {} files", record.epoch, files.len());
            self.files.extend(files);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssociationRow {
    pub dst: String,
    pub src: Option<String>,
    /// 1-based class label.
    pub winner_class: u16,
    pub winner_mean: f64,
    /// Mean over each class's pixels; NaN for classes with none.
    pub class_means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssociationTable {
    pub classes: usize,
    pub rows: Vec<AssociationRow>,
}

impl AssociationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dst,src,winner_class,winner_mean");
        for c in 1..=self.classes {
            let _ = write!(s, ",class_{c}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{}",
                r.dst,
                r.src.as_deref().unwrap_or(""),
                r.winner_class,
                r.winner_mean
            );
            for m in &r.class_means {
                let _ = write!(s, ",{m}");
            }
            s.push('\n');
        }
        s
    }
}

/// For each map, the class whose labeled region has the highest mean value
/// (ties to the lower class).
pub fn class_association(set: &HeatmapSet, labels: &LabelMap) -> Result<AssociationTable> {
    if labels.height() != set.height || labels.width() != set.width {
        return Err(Error::shape("label map and heatmap geometry differ"));
    }
    let k = labels.num_classes();
    let counts = labels.class_counts();
    if counts[1..].iter().all(|&c| c == 0) {
        return Err(Error::config("label map has no labeled pixels"));
    }
    let rows = set
        .maps
        .iter()
        .map(|map| {
            let mut sums = vec![0.0f64; k];
            for (&l, &v) in labels.labels().iter().zip(&map.values) {
                if l > 0 {
                    sums[l as usize - 1] += v as f64;
                }
            }
            let means: Vec<f64> = (0..k)
                .map(|c| {
                    if counts[c + 1] > 0 {
                        sums[c] / counts[c + 1] as f64
                    } else {
                        f64::NAN
                    }
                })
                .collect();
            let mut best: Option<usize> = None;
            for c in 0..k {
                if !means[c].is_nan() && best.is_none_or(|b| means[c] > means[b]) {
                    best = Some(c);
                }
            }
            let b = best.expect("at least one labeled class");
            AssociationRow {
                dst: map.dst.clone(),
                src: map.src.clone(),
                winner_class: b as u16 + 1,
                winner_mean: means[b],
                class_means: means,
            }
        })
        .collect();
    Ok(AssociationTable { classes: k, rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsymmetryRow {
    pub a: String,
    pub b: String,
    /// Mean over pixels of `|map(a→b) − map(b→a)|`.
    pub mean_abs_diff: f64,
    /// Pearson correlation of the two maps; NaN if either is constant.
    pub correlation: f64,
}

fn pearson(x: &[f32], y: &[f32]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a as f64 - mx, b as f64 - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        f64::NAN
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// One row per unordered stream pair of a res heatmap set.
pub fn asymmetry_report(set: &HeatmapSet) -> Result<Vec<AsymmetryRow>> {
    if set.head != Head::Res {
        return Err(Error::config("asymmetry needs res maps"));
    }
    let n = (set.maps.len() as f64).sqrt().round() as usize;
    if n * n != set.maps.len() {
        return Err(Error::shape(format!(
            "{} maps is not a square count",
            set.maps.len()
        )));
    }
    let mut rows = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            // flow a→b lands in row b, column a
            let ab = &set.maps[b * n + a];
            let ba = &set.maps[a * n + b];
            let diff = ab
                .values
                .iter()
                .zip(&ba.values)
                .map(|(&x, &y)| (x as f64 - y as f64).abs())
                .sum::<f64>()
                / ab.values.len().max(1) as f64;
            rows.push(AsymmetryRow {
                a: ba.dst.clone(),
                b: ab.dst.clone(),
                mean_abs_diff: diff,
                correlation: pearson(&ab.values, &ba.values),
            });
        }
    }
    Ok(rows)
}

pub fn asymmetry_csv(rows: &[AsymmetryRow]) -> String {
    let mut s = String::from("stream_a,stream_b,mean_abs_diff,correlation\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.a, r.b, r.mean_abs_diff, r.correlation);
    }
    s
}
