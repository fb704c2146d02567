//! AUC/ROC evaluation and per-category reports.

mod fewshot;
mod roc;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use fewshot::{few_shot_experiment, write_few_shot_csv, FewShotPlan, FewShotResult};
pub use roc::{auc, roc_curve, trapezoid_area, RocPoint};

use crate::error::{Error, Result};
use crate::estimation::ModelParams;
use crate::fsutil;
use crate::manifest::{Label, ManifestItem};
use crate::scoring::{score_source, ScoringConfig};
use crate::source::PpfFiles;

/// One scored test item; `score` is oriented so that higher = more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub path: PathBuf,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub category: String,
    pub method: String,
    pub top_k_percent: f64,
    pub auc: f64,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub roc: Vec<RocPoint>,
    pub scores: Vec<ItemScore>,
}

impl EvalReport {
    /// Builds AUC and ROC from already-oriented item scores.
    pub fn from_scores(
        category: impl Into<String>,
        config: &ScoringConfig,
        scores: Vec<ItemScore>,
    ) -> Result<Self> {
        let pairs: Vec<(f64, Label)> = scores.iter().map(|s| (s.score, s.label)).collect();
        let auc = auc(&pairs)?;
        let roc = roc_curve(&pairs)?;
        let n_anomalous = pairs.iter().filter(|p| p.1 == Label::Anomalous).count();
        Ok(Self {
            category: category.into(),
            method: config.method.to_string(),
            top_k_percent: config.top_k_percent,
            auc,
            n_normal: pairs.len() - n_anomalous,
            n_anomalous,
            roc,
            scores,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fsutil::write_json_atomic(path.as_ref(), self)
    }
}

/// Scores every test item's PPF file and builds the category report.
pub fn evaluate_category(
    category: &str,
    model: &ModelParams,
    test_items: &[ManifestItem],
    config: &ScoringConfig,
    jobs: usize,
) -> Result<EvalReport> {
    let files = PpfFiles(test_items.iter().map(|i| i.path.clone()).collect());
    let raw = score_source(&files, model, config, jobs).map_err(|e| match e {
        Error::AtIndex { index, source } => {
            Error::Evaluation(format!("{}: {source}", test_items[index].path.display()))
        }
        other => other,
    })?;
    let scores = test_items
        .iter()
        .zip(raw)
        .map(|(item, s)| ItemScore {
            path: item.path.clone(),
            label: item.label,
            score: config.orient(s),
        })
        .collect();
    EvalReport::from_scores(category, config, scores)
}

/// Formats with 17 significant digits, trimming trailing zeros but keeping
/// one fractional digit. Parses back to the same `f64`.
pub fn format_g17(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0" } else { "0.0" }.into();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let mut out = if (-5..17).contains(&exp) {
        format!("{x:.prec$}", prec = (16 - exp).max(0) as usize)
    } else {
        mantissa.to_string()
    };
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.push('0');
        }
    } else {
        out.push_str(".0");
    }
    if !(-5..17).contains(&exp) {
        write!(out, "e{exp}").unwrap();
    }
    out
}

pub fn write_roc_csv(path: impl AsRef<Path>, roc: &[RocPoint]) -> Result<()> {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in roc {
        writeln!(
            s,
            "{},{},{}",
            format_g17(p.threshold),
            format_g17(p.fpr),
            format_g17(p.tpr)
        )
        .unwrap();
    }
    fsutil::write_atomic(path.as_ref(), s.as_bytes())
}
