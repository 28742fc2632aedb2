use std::fs;
use std::path::{Path, PathBuf};

use esmhc_core::hsi::{
    gen_synthetic_cube_with, load_cube, load_labels, save_cube, save_labels, split_spectrum,
    stratified_split, SplitMasks,
};
use esmhc_core::inspect::{
    asymmetry_csv, asymmetry_report, class_association, export_trace, render_label_map, write_pgm,
    ExportObserver,
};
use esmhc_core::metrics::{confusion, scores, scores_csv, scores_table};
use esmhc_core::model::{load_model, predict, save_model, train as fit};
use esmhc_core::{EsMhc, ForwardTrace, Head, HeatmapSet, HsiCube, LabelMap, ModelInput};
use log::info;
use serde_json::json;

use crate::{CliError, RunConfig};

pub const SPLIT_FILE: &str = "split.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const HEATMAP_DIR: &str = "h";
pub const ASSOC_DIR: &str = "assoc";

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn data_err(path: &Path) -> impl Fn(esmhc_core::Error) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

fn read_cube(config: &RunConfig) -> Result<HsiCube, CliError> {
    let p = config.cube_path()?;
    load_cube(p).map_err(data_err(p))
}

fn read_labels(config: &RunConfig) -> Result<LabelMap, CliError> {
    let p = config.labels_path()?;
    load_labels(p).map_err(data_err(p))
}

fn read_model(dir: &Path) -> Result<EsMhc, CliError> {
    load_model(dir).map_err(data_err(dir))
}

fn check_geometry(cube: &HsiCube, labels: &LabelMap) -> Result<(), CliError> {
    if cube.height() != labels.height() || cube.width() != labels.width() {
        return Err(CliError::data(format!(
            "cube is {}x{} but labels are {}x{}",
            cube.height(),
            cube.width(),
            labels.height(),
            labels.width()
        )));
    }
    Ok(())
}

pub fn synth(config: &RunConfig) -> Result<(), CliError> {
    config.echo()?;
    let cube_path = config
        .cube
        .clone()
        .unwrap_or_else(|| config.out.join("synthetic.hsi"));
    let labels_path = config
        .labels
        .clone()
        .unwrap_or_else(|| config.out.join("synthetic_gt.lbl"));
    let (cube, labels) = gen_synthetic_cube_with(&config.synthetic())?;
    save_cube(&cube, &cube_path).map_err(data_err(&cube_path))?;
    save_labels(&labels, &labels_path, None).map_err(data_err(&labels_path))?;
    println!("{}", cube_path.display());
    println!("{}", labels_path.display());
    Ok(())
}

fn parse_wavelengths(path: &Path) -> Result<Vec<f64>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().map_err(|_| {
                CliError::data(format!("{}: {t:?} is not a wavelength", path.display()))
            })
        })
        .collect()
}

/// `0-49 52 60-61` style listing of sorted indices.
fn band_ranges(bands: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < bands.len() {
        let mut j = i;
        while j + 1 < bands.len() && bands[j + 1] == bands[j] + 1 {
            j += 1;
        }
        parts.push(if i == j {
            bands[i].to_string()
        } else {
            format!("{}-{}", bands[i], bands[j])
        });
        i = j + 1;
    }
    parts.join(" ")
}

pub fn split_bands(config: &RunConfig, wavelengths: Option<&Path>) -> Result<(), CliError> {
    let wl = match wavelengths {
        Some(p) => parse_wavelengths(p)?,
        None => read_cube(config)?.wavelengths().to_vec(),
    };
    let groups = split_spectrum(&wl, config.boundaries())?;
    println!("group,min_nm,max_nm,count,bands");
    for g in &groups {
        println!(
            "{},{},{},{},{}",
            g.name,
            g.min_nm,
            g.max_nm,
            g.bands.len(),
            band_ranges(&g.bands)
        );
    }
    Ok(())
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect()
}

fn write_split(split: &SplitMasks, fraction: f64, path: &Path) -> Result<(), CliError> {
    let v = json!({
        "seed": split.seed,
        "train_fraction": fraction,
        "pixels": split.train.len(),
        "train": indices(&split.train),
        "test": indices(&split.test),
    });
    write(
        path,
        &(serde_json::to_string(&v).expect("split serializes") + "\n"),
    )
}

fn read_split(path: &Path, pixels: usize) -> Result<SplitMasks, CliError> {
    let bad = |m: &str| CliError::data(format!("{}: {m}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(&e.to_string()))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
    if v["pixels"].as_u64() != Some(pixels as u64) {
        return Err(bad(&format!("split is not for {pixels} pixels")));
    }
    let mask = |key: &str| -> Result<Vec<bool>, CliError> {
        let mut m = vec![false; pixels];
        for i in v[key]
            .as_array()
            .ok_or_else(|| bad(&format!("missing {key}")))?
        {
            let i = i
                .as_u64()
                .filter(|&i| (i as usize) < pixels)
                .ok_or_else(|| bad("bad pixel index"))?;
            m[i as usize] = true;
        }
        Ok(m)
    };
    Ok(SplitMasks {
        train: mask("train")?,
        test: mask("test")?,
        seed: v["seed"].as_u64().unwrap_or_default(),
    })
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    config.echo()?;
    let cube = read_cube(config)?;
    let labels = read_labels(config)?;
    check_geometry(&cube, &labels)?;
    let mut model = EsMhc::for_cube(
        config.model.clone(),
        &cube,
        config.boundaries(),
        labels.num_classes(),
    )?;
    let input = ModelInput::new(&cube, &model)?;
    let split = stratified_split(&labels, config.train_fraction, config.model.seed)?;
    write_split(&split, config.train_fraction, &config.out.join(SPLIT_FILE))?;
    info!(
        "{} streams ({}), {} parameters, {} train / {} test pixels",
        model.expansion(),
        model.stream_names().join(", "),
        model.store.num_values(),
        split.train_count(),
        split.test_count()
    );
    let epochs = config.export_epochs.clone().unwrap_or_default();
    let mut observer = ExportObserver::new(
        epochs,
        config.out.join(HEATMAP_DIR),
        cube.height(),
        cube.width(),
    );
    let log = fit(&mut model, &input, &labels, &split.train, &mut observer)?;
    save_model(&model, &config.out)?;
    let log_path = config.out.join(LOG_FILE);
    log.write_csv(&log_path).map_err(data_err(&log_path))?;
    if let Some(last) = log.records.last() {
        println!(
            "epoch {}: loss {:.6}, train OA {:.4}; {} matrix files",
            last.epoch,
            last.loss,
            last.train_oa,
            observer.files.len()
        );
    }
    Ok(())
}

pub fn eval(config: &RunConfig, model_dir: Option<&Path>) -> Result<(), CliError> {
    let dir = model_dir.unwrap_or(&config.out);
    let model = read_model(dir)?;
    config.echo()?;
    let cube = read_cube(config)?;
    let labels = read_labels(config)?;
    check_geometry(&cube, &labels)?;
    let split_path = dir.join(SPLIT_FILE);
    let split = if split_path.is_file() {
        read_split(&split_path, labels.pixels())?
    } else {
        stratified_split(&labels, config.train_fraction, model.config.seed)?
    };
    let input = ModelInput::new(&cube, &model)?;
    let (pred, _) = predict(&model, &input)?;
    let s = scores(&confusion(&pred, &labels, &split.test)?)?;
    let out = &config.out;
    write(&out.join("metrics.csv"), &scores_csv(&s, None))?;
    let table = scores_table(&s, None);
    write(&out.join("metrics.txt"), &table)?;
    let lbl = out.join("prediction.lbl");
    save_labels(&pred, &lbl, None).map_err(data_err(&lbl))?;
    let pgm = out.join("prediction.pgm");
    write_pgm(&pgm, pred.width(), pred.height(), &render_label_map(&pred))
        .map_err(data_err(&pgm))?;
    print!("{table}");
    Ok(())
}

fn traced(
    config: &RunConfig,
    model_dir: Option<&Path>,
) -> Result<(EsMhc, HsiCube, ForwardTrace), CliError> {
    let model = read_model(model_dir.unwrap_or(&config.out))?;
    let cube = read_cube(config)?;
    let input = ModelInput::new(&cube, &model)?;
    let mut trace = ForwardTrace::default();
    model.logits_traced(&input, Some(&mut trace))?;
    Ok((model, cube, trace))
}

pub fn export_h(config: &RunConfig, model_dir: Option<&Path>) -> Result<(), CliError> {
    let (model, cube, trace) = traced(config, model_dir)?;
    config.echo()?;
    let dir = config.out.join(HEATMAP_DIR);
    let names = model.stream_names();
    let files = export_trace(
        &trace,
        &names,
        cube.height(),
        cube.width(),
        model.config.epochs,
        &dir,
    )?;
    println!("{} files in {}", files.len(), dir.display());
    Ok(())
}

pub fn associate(config: &RunConfig, model_dir: Option<&Path>) -> Result<(), CliError> {
    let (model, cube, trace) = traced(config, model_dir)?;
    let labels = read_labels(config)?;
    check_geometry(&cube, &labels)?;
    config.echo()?;
    let dir = config.out.join(ASSOC_DIR);
    fs::create_dir_all(&dir).map_err(CliError::io)?;
    let names = model.stream_names();
    let mut written: Vec<PathBuf> = Vec::new();
    for sub in &trace.sublayers {
        for set in HeatmapSet::from_trace(
            sub,
            &names,
            cube.height(),
            cube.width(),
            model.config.epochs,
        )? {
            let path = dir.join(format!("{}_association.csv", set.stem()));
            write(&path, &class_association(&set, &labels)?.to_csv())?;
            written.push(path);
            if set.head == Head::Res {
                let path = dir.join(format!("{}_asymmetry.csv", set.stem()));
                write(&path, &asymmetry_csv(&asymmetry_report(&set)?))?;
                written.push(path);
            }
        }
    }
    println!("{} tables in {}", written.len(), dir.display());
    Ok(())
}
