use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::LabelMap;
use crate::numerics::{
    adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Tape, Tensor,
};

use super::{EsMhc, ForwardTrace, ModelConfig, ModelInput, StreamInfo};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub train_oa: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,train_oa,seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{:.6}", r.epoch, r.loss, r.train_oa, r.seconds);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Hook invoked after every epoch's update.
pub trait EpochObserver {
    /// Whether to capture the matrices of this epoch's forward pass.
    fn wants_trace(&mut self, _epoch: usize) -> bool {
        false
    }

    fn observe(
        &mut self,
        _model: &EsMhc,
        _record: &EpochRecord,
        _trace: Option<&ForwardTrace>,
    ) -> Result<()> {
        Ok(())
    }
}

impl EpochObserver for () {}

fn targets(labels: &LabelMap, mask: &[bool], classes: usize) -> Result<Vec<Option<usize>>> {
    if mask.len() != labels.pixels() {
        return Err(Error::shape(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            labels.pixels()
        )));
    }
    if labels.num_classes() > classes {
        return Err(Error::config(format!(
            "labels have {} classes, model has {classes}",
            labels.num_classes()
        )));
    }
    Ok(labels
        .labels()
        .iter()
        .zip(mask)
        .map(|(&l, &m)| (m && l > 0).then(|| l as usize - 1))
        .collect())
}

/// Per-row argmax plus one; ties go to the lower class.
pub fn argmax_labels(logits: &Tensor) -> Result<Vec<u16>> {
    let [_, k] = *logits.shape() else {
        return Err(Error::shape(format!(
            "logits must be [L, K], got {:?}",
            logits.shape()
        )));
    };
    if k == 0 {
        return Err(Error::shape("logits have no classes"));
    }
    Ok(logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best as u16 + 1
        })
        .collect())
}

/// Full-image Adam training on the masked cross-entropy for
/// `model.config.epochs` epochs.
pub fn train(
    model: &mut EsMhc,
    input: &ModelInput,
    labels: &LabelMap,
    train_mask: &[bool],
    observer: &mut dyn EpochObserver,
) -> Result<TrainLog> {
    let targets = targets(labels, train_mask, model.classes())?;
    let count = targets.iter().flatten().count();
    if count == 0 {
        return Err(Error::config("no labeled pixels in the training mask"));
    }
    if input.tokens() != labels.pixels() {
        return Err(Error::shape("input and label geometry differ"));
    }
    let adam = AdamConfig {
        lr: model.config.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&model.store, adam);
    let mut log = TrainLog::default();
    for epoch in 1..=model.config.epochs {
        let start = Instant::now();
        let mut trace = observer.wants_trace(epoch).then(ForwardTrace::default);
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape)?;
        let logits = model.forward(&mut tape, &bound, input, trace.as_mut())?;
        let loss = tape.cross_entropy(logits, &targets)?;
        let pred = argmax_labels(tape.value(logits))?;
        let correct = targets
            .iter()
            .zip(&pred)
            .filter(|(t, &p)| t.is_some_and(|t| t + 1 == p as usize))
            .count();
        let loss_value = tape.data(loss)[0] as f64;
        let grads = tape.backward(loss)?;
        model.store.accumulate(&grads, &bound);
        drop(tape);
        adam_step(&mut model.store, &mut state);
        model.store.zero_grad();
        if let Some((name, _)) = model.store.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::numeric(format!(
                "parameter {name} became non-finite at epoch {epoch}"
            )));
        }
        let record = EpochRecord {
            epoch,
            loss: loss_value,
            train_oa: correct as f64 / count as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} train OA {:.4}",
            record.loss,
            record.train_oa
        );
        observer.observe(model, &record, trace.as_ref())?;
        log.records.push(record);
    }
    Ok(log)
}

/// Predicted label map and the raw logits.
pub fn predict(model: &EsMhc, input: &ModelInput) -> Result<(LabelMap, Tensor)> {
    let logits = model.logits(input)?;
    let labels = argmax_labels(&logits)?;
    let map = LabelMap::new(input.height, input.width, model.classes(), labels)?;
    Ok((map, logits))
}

/// Everything besides parameter values needed to rebuild a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub streams: Vec<StreamInfo>,
    pub bands: usize,
    pub classes: usize,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const META_FILE: &str = "model.json";

/// Writes `model.ckpt` and `model.json` into `dir`.
pub fn save_model(model: &EsMhc, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = ModelMeta {
        config: model.config.clone(),
        streams: model.streams().to_vec(),
        bands: model.bands(),
        classes: model.classes(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::format(e.to_string()))?;
    fs::write(dir.join(META_FILE), json)?;
    save_checkpoint(&model.store, &dir.join(CHECKPOINT_FILE))
}

pub fn load_model(dir: &Path) -> Result<EsMhc> {
    let text = fs::read_to_string(dir.join(META_FILE))?;
    let meta: ModelMeta =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("{META_FILE}: {e}")))?;
    let mut model = EsMhc::new(meta.config, meta.streams, meta.bands, meta.classes)?;
    model
        .store
        .load_values(load_checkpoint(&dir.join(CHECKPOINT_FILE))?)?;
    Ok(model)
}
