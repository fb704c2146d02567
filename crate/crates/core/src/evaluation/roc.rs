use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::manifest::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Items with score ≥ threshold are called anomalous. The leading
    /// (0, 0) point has threshold +∞, written as `null` in JSON.
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn ser_threshold<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if *t == f64::INFINITY {
        s.serialize_none()
    } else {
        s.serialize_some(t)
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

fn class_counts(scores: &[(f64, Label)]) -> Result<(usize, usize)> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::Evaluation(format!("score {s} is not a number")));
    }
    let n1 = scores
        .iter()
        .filter(|(_, l)| *l == Label::Anomalous)
        .count();
    let n0 = scores.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::Evaluation(format!(
            "AUC needs both classes; got {n0} normal and {n1} anomalous"
        )));
    }
    Ok((n0, n1))
}

/// Indices sorted by score, split into runs of equal score.
fn tie_groups(scores: &[(f64, Label)], descending: bool) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let c = scores[a].0.total_cmp(&scores[b].0);
        if descending {
            c.reverse()
        } else {
            c
        }
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]].0 == scores[i].0 => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Mann-Whitney AUC with average ranks for ties; higher score = anomalous.
///
/// `AUC = (R₁ − n₁(n₁+1)/2) / (n₀·n₁)` with R₁ the rank sum of the anomalous
/// items. Ranks are half-integers, so the numerator is exact.
pub fn auc(scores: &[(f64, Label)]) -> Result<f64> {
    let (n0, n1) = class_counts(scores)?;
    let mut rank_sum = 0.0f64;
    let mut seen = 0usize;
    for group in tie_groups(scores, false) {
        let first = seen + 1;
        let last = seen + group.len();
        let avg_rank = (first + last) as f64 / 2.0;
        let anomalous = group
            .iter()
            .filter(|&&i| scores[i].1 == Label::Anomalous)
            .count();
        rank_sum += avg_rank * anomalous as f64;
        seen = last;
    }
    let n1f = n1 as f64;
    Ok((rank_sum - n1f * (n1f + 1.0) / 2.0) / (n0 as f64 * n1f))
}

/// ROC curve from (0, 0) to (1, 1), one point per distinct score.
pub fn roc_curve(scores: &[(f64, Label)]) -> Result<Vec<RocPoint>> {
    let (n0, n1) = class_counts(scores)?;
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in tie_groups(scores, true) {
        for &i in &group {
            match scores[i].1 {
                Label::Anomalous => tp += 1,
                Label::Normal => fp += 1,
            }
        }
        out.push(RocPoint {
            threshold: scores[group[0]].0,
            fpr: fp as f64 / n0 as f64,
            tpr: tp as f64 / n1 as f64,
        });
    }
    Ok(out)
}

pub fn trapezoid_area(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}
