//! Confusion matrix, OA / AA / Cohen's kappa, and their report formats.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hsi::LabelMap;

/// `counts[truth][pred]` over classes `1..=K` stored zero-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::shape(format!(
                "{} counts for {classes} classes",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Zero-based indices.
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.classes..(c + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|r| self.get(r, c)).sum()
    }
}

/// Tallies masked pixels. Every masked pixel must carry a ground-truth label;
/// a prediction of 0 there is an error.
pub fn confusion(pred: &LabelMap, truth: &LabelMap, mask: &[bool]) -> Result<ConfusionMatrix> {
    if pred.height() != truth.height()
        || pred.width() != truth.width()
        || mask.len() != truth.pixels()
    {
        return Err(Error::shape("prediction, truth and mask geometry differ"));
    }
    let k = truth.num_classes().max(pred.num_classes());
    let mut cm = ConfusionMatrix::new(k);
    for (p, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let (t, y) = (truth.labels()[p], pred.labels()[p]);
        if t == 0 {
            return Err(Error::config(format!("mask covers unlabeled pixel {p}")));
        }
        if y == 0 {
            return Err(Error::config(format!(
                "prediction is 0 at masked pixel {p}"
            )));
        }
        cm.add(t as usize - 1, y as usize - 1);
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scores {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// `None` for classes without test support.
    pub per_class: Vec<Option<f64>>,
    pub support: Vec<u64>,
}

pub fn scores(cm: &ConfusionMatrix) -> Result<Scores> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::config("confusion matrix is empty"));
    }
    let k = cm.classes();
    let n = total as f64;
    let trace: u64 = (0..k).map(|c| cm.get(c, c)).sum();
    let support: Vec<u64> = (0..k).map(|c| cm.row_sum(c)).collect();
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| (support[c] > 0).then(|| cm.get(c, c) as f64 / support[c] as f64))
        .collect();
    let supported: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = supported.iter().sum::<f64>() / supported.len() as f64;
    let po = trace as f64 / n;
    let pe = (0..k)
        .map(|c| support[c] as f64 * cm.col_sum(c) as f64)
        .sum::<f64>()
        / (n * n);
    // p_e = 1 only when every pixel sits in one class predicted perfectly.
    let kappa = if pe < 1.0 {
        (po - pe) / (1.0 - pe)
    } else {
        1.0
    };
    Ok(Scores {
        oa: po,
        aa,
        kappa,
        per_class,
        support,
    })
}

fn class_name(names: Option<&[String]>, c: usize) -> String {
    names
        .and_then(|n| n.get(c).cloned())
        .unwrap_or_else(|| format!("class {}", c + 1))
}

/// `class,name,support,accuracy` rows, then OA, AA and kappa. Accuracy of a
/// class without support is left empty.
pub fn scores_csv(s: &Scores, names: Option<&[String]>) -> String {
    let mut out = String::from("class,name,support,accuracy\n");
    for (c, acc) in s.per_class.iter().enumerate() {
        let acc = acc.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c + 1,
            class_name(names, c),
            s.support[c],
            acc
        );
    }
    let _ = writeln!(out, "OA,,,{}", s.oa);
    let _ = writeln!(out, "AA,,,{}", s.aa);
    let _ = writeln!(out, "Kappa,,,{}", s.kappa);
    out
}

/// Per-class accuracies in percent followed by an OA / AA / Kappa footer.
pub fn scores_table(s: &Scores, names: Option<&[String]>) -> String {
    let labels: Vec<String> = (0..s.per_class.len())
        .map(|c| class_name(names, c))
        .collect();
    let width = labels.iter().map(String::len).chain([9]).max().unwrap_or(9);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>3}  {:<width$}  {:>7}  {:>8}",
        "No.", "Class", "Samples", "Acc(%)"
    );
    let rule = "-".repeat(3 + 2 + width + 2 + 7 + 2 + 8);
    let _ = writeln!(out, "{rule}");
    for (c, acc) in s.per_class.iter().enumerate() {
        let acc = acc
            .map(|a| format!("{:.2}", 100.0 * a))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:>3}  {:<width$}  {:>7}  {:>8}",
            c + 1,
            labels[c],
            s.support[c],
            acc
        );
    }
    let _ = writeln!(out, "{rule}");
    for (name, v) in [("OA(%)", s.oa), ("AA(%)", s.aa), ("Kappa(%)", s.kappa)] {
        let _ = writeln!(
            out,
            "{:>3}  {:<width$}  {:>7}  {:>8.2}",
            "",
            name,
            "",
            100.0 * v
        );
    }
    out
}
