//! Agreement measures between human and machine labels.
//!
//! All measures treat label 1 (polite) as the positive class. ROC AUC comes in
//! two flavours: [`MetricsRow::roc_auc_labels`] scores hard predicted labels
//! (which reduces to balanced accuracy), [`prob_auc`] scores probabilities.
//! A measure whose denominator vanishes is reported as `None` rather than a
//! number.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[actual][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 2]; 2]) -> Result<Self> {
        let cm = Self { counts };
        if cm.total() == 0 {
            return Err(Error::InvalidArgument("confusion matrix is empty".into()));
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_negatives(&self) -> u64 {
        self.counts[0][0]
    }

    pub fn false_positives(&self) -> u64 {
        self.counts[0][1]
    }

    pub fn false_negatives(&self) -> u64 {
        self.counts[1][0]
    }

    pub fn true_positives(&self) -> u64 {
        self.counts[1][1]
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = [[0u64; 2]; 2];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t > 1 || p > 1 {
            return Err(Error::InvalidArgument(format!("labels must be 0 or 1, got ({t}, {p})")));
        }
        counts[t as usize][p as usize] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    pub f1: Option<f64>,
    pub roc_auc_labels: Option<f64>,
    pub kappa: Option<f64>,
}

impl MetricsRow {
    pub fn undefined_flags(&self) -> Vec<&'static str> {
        let mut flags = Vec::new();
        if self.f1.is_none() {
            flags.push("f1");
        }
        if self.roc_auc_labels.is_none() {
            flags.push("roc_auc_labels");
        }
        if self.kappa.is_none() {
            flags.push("kappa");
        }
        flags
    }
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsRow> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let (tn, fp, fn_, tp) = (
        cm.true_negatives() as u128,
        cm.false_positives() as u128,
        cm.false_negatives() as u128,
        cm.true_positives() as u128,
    );
    let n = n as u128;
    let accuracy = (tn + tp) as f64 / n as f64;

    let f1_den = 2 * tp + fp + fn_;
    let f1 = (f1_den > 0).then(|| (2 * tp) as f64 / f1_den as f64);

    let positives = tp + fn_;
    let negatives = tn + fp;
    // (sensitivity + specificity) / 2 as one exact ratio of integers
    let roc_auc_labels = (positives > 0 && negatives > 0)
        .then(|| (tp * negatives + tn * positives) as f64 / (2 * positives * negatives) as f64);

    let rows = [tn + fp, fn_ + tp];
    let cols = [tn + fn_, fp + tp];
    let chance = rows[0] * cols[0] + rows[1] * cols[1];
    let kappa_den = n * n - chance;
    // (p_o - p_e) / (1 - p_e) scaled by n^2; the numerator may be negative
    let kappa = (kappa_den > 0).then(|| ((n * (tn + tp)) as f64 - chance as f64) / kappa_den as f64);

    Ok(MetricsRow {
        accuracy,
        f1,
        roc_auc_labels,
        kappa,
    })
}

/// Probability-based ROC AUC (Mann-Whitney statistic, ties count one half).
pub fn prob_auc(y_true: &[u8], scores: &[f64]) -> Result<f64> {
    if y_true.len() != scores.len() {
        return Err(Error::Shape(format!("{} labels vs {} scores", y_true.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(y_true.iter().copied()).collect();
    if pairs.iter().any(|&(_, y)| y > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    let positives = pairs.iter().filter(|p| p.1 == 1).count() as u128;
    let negatives = pairs.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass("ROC AUC needs both classes".into()));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the U statistic, kept integral: each positive earns 2 per lower
    // negative and 1 per tied negative.
    let mut twice_u: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let pos = pairs[i..j].iter().filter(|p| p.1 == 1).count() as u128;
        let neg = (j - i) as u128 - pos;
        twice_u += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * positives * negatives) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Kappa,
    Auc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Band {
    BelowModerate,
    Moderate,
    Substantial,
    AlmostPerfect,
    BelowAcceptable,
    Acceptable,
    Excellent,
    Outstanding,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Band::BelowModerate => "below-moderate",
            Band::Moderate => "moderate",
            Band::Substantial => "substantial",
            Band::AlmostPerfect => "almost-perfect",
            Band::BelowAcceptable => "below-acceptable",
            Band::Acceptable => "acceptable",
            Band::Excellent => "excellent",
            Band::Outstanding => "outstanding",
        };
        f.write_str(s)
    }
}

/// Verbal interpretation band; intervals are lower-inclusive.
///
/// Kappa: `[.4, .6)` moderate, `[.6, .8)` substantial, `[.8, 1]` almost perfect.
/// AUC: `[.7, .8)` acceptable, `[.8, .9)` excellent, `[.9, 1]` outstanding.
pub fn interpret(measure: Measure, value: f64) -> Result<Band> {
    let range = match measure {
        Measure::Kappa => -1.0..=1.0,
        Measure::Auc => 0.0..=1.0,
    };
    if !range.contains(&value) {
        return Err(Error::InvalidArgument(format!("{measure:?} value {value} out of range")));
    }
    Ok(match measure {
        Measure::Kappa if value >= 0.8 => Band::AlmostPerfect,
        Measure::Kappa if value >= 0.6 => Band::Substantial,
        Measure::Kappa if value >= 0.4 => Band::Moderate,
        Measure::Kappa => Band::BelowModerate,
        Measure::Auc if value >= 0.9 => Band::Outstanding,
        Measure::Auc if value >= 0.8 => Band::Excellent,
        Measure::Auc if value >= 0.7 => Band::Acceptable,
        Measure::Auc => Band::BelowAcceptable,
    })
}

/// Rounds half away from zero on the decimal expansion (not the binary value),
/// so `0.825` becomes `0.83`.
pub fn round_half_up(value: f64, decimals: usize) -> f64 {
    format_fixed(value, decimals).parse().expect("formatted number")
}

fn format_fixed(value: f64, decimals: usize) -> String {
    let negative = value < 0.0;
    // 15 significant digits recover the intended decimal of a computed ratio.
    let repr = format!("{:.*e}", 14, value.abs());
    let (mantissa, exp) = repr.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    let digits: Vec<u8> = mantissa.bytes().filter(u8::is_ascii_digit).map(|b| b - b'0').collect();
    // value = 0.d1 d2 d3 ... * 10^(exp + 1)
    let point = exp + 1;
    let keep = point + decimals as i32;
    let mut kept: Vec<u8> = if keep <= 0 {
        Vec::new()
    } else {
        digits.iter().copied().take(keep as usize).collect()
    };
    kept.resize(keep.max(0) as usize, 0);
    let next = if keep < 0 {
        0
    } else {
        digits.get(keep as usize).copied().unwrap_or(0)
    };
    let mut int_part: u128 = kept.iter().fold(0u128, |acc, &d| acc * 10 + d as u128);
    if next >= 5 {
        int_part += 1;
    }
    let scale = 10u128.pow(decimals as u32);
    let whole = int_part / scale;
    let frac = int_part % scale;
    let sign = if negative && int_part != 0 { "-" } else { "" };
    if decimals == 0 {
        format!("{sign}{whole}")
    } else {
        format!("{sign}{whole}.{frac:0width$}", width = decimals)
    }
}

/// Two-decimal display in the style `.84` / `1.00` / `-.12`.
pub fn format_score(value: Option<f64>) -> String {
    match value {
        None => "n/a".to_string(),
        Some(v) => {
            let s = format_fixed(v, 2);
            if let Some(rest) = s.strip_prefix("0.") {
                format!(".{rest}")
            } else if let Some(rest) = s.strip_prefix("-0.") {
                format!("-.{rest}")
            } else {
                s
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMetrics {
    pub model: String,
    #[serde(flatten)]
    pub row: MetricsRow,
    #[serde(default)]
    pub undefined_flags: Vec<String>,
}

impl NamedMetrics {
    pub fn new(model: impl Into<String>, row: MetricsRow) -> Self {
        Self {
            model: model.into(),
            undefined_flags: row.undefined_flags().into_iter().map(String::from).collect(),
            row,
        }
    }

    pub fn display_name(&self) -> &str {
        if self.model.trim().is_empty() {
            "(unnamed)"
        } else {
            &self.model
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: String,
}

/// Comparison table (two-decimal values) plus a full-precision JSON twin.
pub fn render_report(rows: &[NamedMetrics]) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one row".into()));
    }
    let header = ["Model", "Accuracy", "F1", "ROC AUC", "Kappa"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.display_name().to_string(),
                format_score(Some(r.row.accuracy)),
                format_score(r.row.f1),
                format_score(r.row.roc_auc_labels),
                format_score(r.row.kappa),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for line in &body {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let render_line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut text = render_line(&header.map(String::from));
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    text.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for line in &body {
        text.push_str(&render_line(line));
    }
    let json = serde_json::to_string_pretty(rows)? + "\n";
    Ok(Report { text, json })
}

/// Confusion matrix laid out with actual classes as rows.
pub fn render_confusion(title: &str, cm: &ConfusionMatrix) -> String {
    let c = &cm.counts;
    let w = c.iter().flatten().map(|v| v.to_string().len()).max().unwrap_or(1).max(8);
    format!(
        "{title}\n{:<20} {:>w$} {:>w$}\n{:<20} {:>w$} {:>w$}\n{:<20} {:>w$} {:>w$}\n",
        "Actual \\ Predicted", "Impolite", "Polite", "Impolite", c[0][0], c[0][1], "Polite", c[1][0], c[1][1],
    )
}
