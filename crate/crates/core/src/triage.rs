//! Confidence-threshold triage of machine scores.
//!
//! Items whose winning-class probability reaches the threshold are accepted
//! automatically; the rest go to a human review queue. Auto-accepted items
//! that disagree with an existing human label are surfaced as suspected
//! rating errors.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageItem {
    pub id: String,
    pub predicted: u8,
    /// Probability of the predicted class, in `[0.5, 1]`.
    pub probability: f64,
    pub human: Option<u8>,
}

impl TriageItem {
    pub fn validate(&self) -> Result<()> {
        if self.predicted > 1 || self.human.is_some_and(|h| h > 1) {
            return Err(Error::InvalidArgument(format!("item {}: labels must be 0 or 1", self.id)));
        }
        if !(0.5..=1.0).contains(&self.probability) {
            return Err(Error::InvalidArgument(format!(
                "item {}: max probability {} outside [0.5, 1]",
                self.id, self.probability
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageReport {
    pub threshold: f64,
    pub total: usize,
    pub auto_count: usize,
    pub review_count: usize,
    pub coverage: f64,
    pub auto: Vec<TriageItem>,
    pub review: Vec<TriageItem>,
    /// Auto items carrying a human label.
    pub labeled_auto: usize,
    pub agree_count: usize,
    /// Machine 1, human 0.
    pub machine_polite: Vec<TriageItem>,
    /// Machine 0, human 1.
    pub machine_impolite: Vec<TriageItem>,
}

impl TriageReport {
    pub fn disagreement_count(&self) -> usize {
        self.machine_polite.len() + self.machine_impolite.len()
    }

    pub fn residual(&self) -> f64 {
        1.0 - self.coverage
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn summary(&self) -> String {
        let (cov, res) = display_coverage(self.auto_count, self.total);
        format!(
            "threshold {}: {} of {} auto-accepted (coverage {cov}), {} to review (residual {res})",
            self.threshold, self.auto_count, self.total, self.review_count
        )
    }
}

/// Partitions items by `probability >= threshold`, keeping input order.
pub fn run_triage(items: &[TriageItem], threshold: f64) -> Result<TriageReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    for item in items {
        item.validate()?;
    }
    let (auto, review): (Vec<TriageItem>, Vec<TriageItem>) =
        items.iter().cloned().partition(|i| i.probability >= threshold);
    let mut agree_count = 0;
    let mut labeled_auto = 0;
    let mut machine_polite = Vec::new();
    let mut machine_impolite = Vec::new();
    for item in &auto {
        match item.human {
            None => {}
            Some(h) if h == item.predicted => {
                labeled_auto += 1;
                agree_count += 1;
            }
            Some(_) => {
                labeled_auto += 1;
                if item.predicted == 1 {
                    machine_polite.push(item.clone());
                } else {
                    machine_impolite.push(item.clone());
                }
            }
        }
    }
    let total = items.len();
    let coverage = if total == 0 {
        0.0
    } else {
        auto.len() as f64 / total as f64
    };
    Ok(TriageReport {
        threshold,
        total,
        auto_count: auto.len(),
        review_count: review.len(),
        coverage,
        auto,
        review,
        labeled_auto,
        agree_count,
        machine_polite,
        machine_impolite,
    })
}

/// Coverage and residual as percentages with one decimal. Coverage is
/// truncated (never overstated) and the residual is its complement, so the
/// two displayed values always add up to 100.0%.
pub fn display_coverage(auto: usize, total: usize) -> (String, String) {
    if total == 0 {
        return ("n/a".into(), "n/a".into());
    }
    let permille = (auto as u128 * 1000 / total as u128) as u64;
    let residual = 1000 - permille;
    (
        format!("{}.{}%", permille / 10, permille % 10),
        format!("{}.{}%", residual / 10, residual % 10),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigestEntry {
    pub id: String,
    pub machine: u8,
    pub probability: f64,
    pub human: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Digest {
    pub threshold: f64,
    pub auto_count: usize,
    pub total: usize,
    pub coverage: f64,
    pub residual: f64,
    pub coverage_display: String,
    pub residual_display: String,
    pub machine_polite_count: usize,
    pub machine_impolite_count: usize,
    pub entries: Vec<DigestEntry>,
}

impl Digest {
    pub fn direction_counts(&self) -> (usize, usize) {
        (self.machine_polite_count, self.machine_impolite_count)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Threshold {}: {} of {} auto-accepted ({}), residual review {}",
            self.threshold, self.auto_count, self.total, self.coverage_display, self.residual_display
        );
        let _ = writeln!(
            out,
            "Disagreements: {} (machine 1 / human 0: {}, machine 0 / human 1: {})",
            self.entries.len(),
            self.machine_polite_count,
            self.machine_impolite_count
        );
        if self.entries.is_empty() {
            return out;
        }
        let id_w = self.entries.iter().map(|e| e.id.chars().count()).max().unwrap_or(2).max(2);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<id_w$}  {:>7}  {:>11}  {:>5}", "id", "machine", "probability", "human");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<id_w$}  {:>7}  {:>11.4}  {:>5}",
                e.id, e.machine, e.probability, e.human
            );
        }
        out
    }
}

/// Lists auto-accepted disagreements with direction counts and the residual
/// review share. Fails when no auto-accepted item has a human label.
pub fn disagreement_digest(report: &TriageReport) -> Result<Digest> {
    let any_label = report.auto.iter().chain(&report.review).any(|i| i.human.is_some());
    if !any_label || (report.auto_count > 0 && report.labeled_auto == 0) {
        return Err(Error::InvalidArgument(
            "disagreement digest needs human labels on auto-accepted items".into(),
        ));
    }
    let entries: Vec<DigestEntry> = report
        .machine_polite
        .iter()
        .chain(&report.machine_impolite)
        .map(|i| DigestEntry {
            id: i.id.clone(),
            machine: i.predicted,
            probability: i.probability,
            human: i.human.expect("disagreement carries a human label"),
        })
        .collect();
    let (coverage_display, residual_display) = display_coverage(report.auto_count, report.total);
    Ok(Digest {
        threshold: report.threshold,
        auto_count: report.auto_count,
        total: report.total,
        coverage: report.coverage,
        residual: report.residual(),
        coverage_display,
        residual_display,
        machine_polite_count: report.machine_polite.len(),
        machine_impolite_count: report.machine_impolite.len(),
        entries,
    })
}

/// Review queue for external raters: `id,text_ref,machine_label,probability`.
/// `text_ref` resolves an item id to wherever its text lives.
pub fn write_review_queue(
    path: &Path,
    report: &TriageReport,
    text_ref: impl Fn(&str) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "text_ref", "machine_label", "probability"])?;
    for item in &report.review {
        w.write_record([
            item.id.as_str(),
            text_ref(&item.id).as_str(),
            &item.predicted.to_string(),
            &format!("{}", item.probability),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
