//! Set-level anomaly scores against a fitted model.
//!
//! All three scores start from the squared Mahalanobis distances of the set's
//! descriptors, sorted in descending order before any summation so that a
//! score never depends on storage order:
//!
//! * energy: `−|X|·ln ρ + lnΓ(|X|+1) + Σ_top-κ M²(x)`, κ = `max(1, ⌈k·|X|/100⌉)`
//! * AS: `Σ M(x)` (or `Σ M²(x)` with `as_squared`)
//! * log-likelihood: `[|X| ln ρ − ρ − lnΓ(|X|+1)] + lnΓ(|X|+1) + Σ ln N(x; μ, Σ)`
//!
//! The energy leaves out the `+ρ` constant of the negative Poisson log-pmf;
//! it does not affect rankings.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::estimation::ModelParams;
use crate::ppf::PointPatternSet;
use crate::source::{par_map, SetSource};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    Energy,
    As,
    Loglik,
}

impl ScoreMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::Energy => "energy",
            ScoreMethod::As => "as",
            ScoreMethod::Loglik => "loglik",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "energy" => Ok(ScoreMethod::Energy),
            "as" => Ok(ScoreMethod::As),
            "loglik" => Ok(ScoreMethod::Loglik),
            other => Err(format!(
                "unknown method '{other}' (expected energy, as, loglik)"
            )),
        }
    }
}

/// How raw scores map to "higher = more anomalous" for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Energy and AS as-is, log-likelihood negated.
    #[default]
    Standard,
    /// Every raw score used as-is, log-likelihood included.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub method: ScoreMethod,
    #[serde(default = "default_top_k")]
    pub top_k_percent: f64,
    #[serde(default)]
    pub as_squared: bool,
    #[serde(default)]
    pub orientation: Orientation,
}

fn default_top_k() -> f64 {
    100.0
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self::new(ScoreMethod::Energy)
    }
}

impl ScoringConfig {
    pub fn new(method: ScoreMethod) -> Self {
        Self {
            method,
            top_k_percent: 100.0,
            as_squared: false,
            orientation: Orientation::Standard,
        }
    }

    pub fn with_top_k(mut self, k: f64) -> Result<Self> {
        self.top_k_percent = k;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.top_k_percent;
        if !(k > 0.0 && k <= 100.0) {
            return Err(Error::Scoring(format!(
                "top-k percent {k} outside (0, 100]"
            )));
        }
        Ok(())
    }

    /// Maps a raw score to "higher = more anomalous".
    pub fn orient(&self, raw: f64) -> f64 {
        match (self.method, self.orientation) {
            (ScoreMethod::Loglik, Orientation::Standard) => -raw,
            _ => raw,
        }
    }
}

/// κ = max(1, ⌈k·n/100⌉), capped at n; 0 for the empty set.
pub fn top_k_count(n: usize, top_k_percent: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let kappa = (top_k_percent * n as f64 / 100.0).ceil() as usize;
    kappa.clamp(1, n)
}

fn check_dim(got: usize, model: &ModelParams) -> Result<()> {
    if got != model.dim() {
        return Err(Error::Scoring(format!(
            "dimension mismatch: input has {got}, model has {}",
            model.dim()
        )));
    }
    Ok(())
}

fn mahalanobis_sq_with<T: Copy + Into<f64>>(x: &[T], model: &ModelParams, z: &mut [f64]) -> f64 {
    for ((zi, xi), mi) in z.iter_mut().zip(x).zip(model.mu()) {
        *zi = (*xi).into() - mi;
    }
    model.cholesky().forward_solve_in_place(z);
    z.iter().map(|v| v * v).sum()
}

/// (x−μ)ᵀ Σ_shrunk⁻¹ (x−μ) as ‖z‖², with L·z = x−μ solved by forward
/// substitution.
pub fn mahalanobis_sq<T: Copy + Into<f64>>(x: &[T], model: &ModelParams) -> Result<f64> {
    check_dim(x.len(), model)?;
    let mut z = vec![0.0; model.dim()];
    let m2 = mahalanobis_sq_with(x, model, &mut z);
    if !m2.is_finite() {
        return Err(Error::Scoring(format!(
            "non-finite Mahalanobis distance {m2}"
        )));
    }
    Ok(m2)
}

/// Squared Mahalanobis distances of every descriptor, sorted descending.
pub fn sorted_distances(set: &PointPatternSet, model: &ModelParams) -> Result<Vec<f64>> {
    check_dim(set.dim(), model)?;
    let mut z = vec![0.0; model.dim()];
    let mut d: Vec<f64> = set
        .iter()
        .map(|x| mahalanobis_sq_with(x, model, &mut z))
        .collect();
    if let Some(bad) = d.iter().find(|v| !v.is_finite()) {
        return Err(Error::Scoring(format!(
            "non-finite Mahalanobis distance {bad}"
        )));
    }
    d.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(d)
}

fn check_intensity(n: usize, model: &ModelParams) -> Result<()> {
    if n > 0 && (model.rho().is_nan() || model.rho() <= 0.0) {
        return Err(Error::Scoring(format!(
            "model intensity rho = {} is not positive; refit on non-empty training sets",
            model.rho()
        )));
    }
    Ok(())
}

/// −|X|·ln ρ + lnΓ(|X|+1).
fn cardinality_energy(n: usize, rho: f64) -> f64 {
    -(n as f64) * rho.ln() + ln_gamma(n as f64 + 1.0)
}

/// Energy from precomputed descending distances.
pub fn energy_from_sorted(sorted: &[f64], rho: f64, top_k_percent: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    let kappa = top_k_count(n, top_k_percent);
    let feature: f64 = sorted[..kappa].iter().sum();
    cardinality_energy(n, rho) + feature
}

/// RFS energy with the feature term restricted to the top `top_k_percent`
/// of squared distances. The empty set scores 0.
pub fn rfs_energy(set: &PointPatternSet, model: &ModelParams, top_k_percent: f64) -> Result<f64> {
    if !(top_k_percent > 0.0 && top_k_percent <= 100.0) {
        return Err(Error::Scoring(format!(
            "top-k percent {top_k_percent} outside (0, 100]"
        )));
    }
    check_dim(set.dim(), model)?;
    if set.is_empty() {
        warn!(
            "empty descriptor set '{}': energy defined as 0",
            set.source_id
        );
        return Ok(0.0);
    }
    check_intensity(set.len(), model)?;
    let d = sorted_distances(set, model)?;
    Ok(energy_from_sorted(&d, model.rho(), top_k_percent))
}

/// Sum of Mahalanobis distances over all descriptors (squared if asked).
pub fn score_as(set: &PointPatternSet, model: &ModelParams, squared: bool) -> Result<f64> {
    let d = sorted_distances(set, model)?;
    Ok(if squared {
        d.iter().sum()
    } else {
        d.iter().map(|v| v.sqrt()).sum()
    })
}

/// Log-likelihood from precomputed descending distances.
pub fn log_likelihood_from_sorted(sorted: &[f64], model: &ModelParams) -> f64 {
    let n = sorted.len() as f64;
    let rho = model.rho();
    let log_n_fact = ln_gamma(n + 1.0);
    let cardinality = n * rho.ln() - rho - log_n_fact;
    let per_point_const = 0.5 * model.dim() as f64 * LN_2PI + model.cholesky().half_log_det();
    let m2_sum: f64 = sorted.iter().sum();
    let feature = -0.5 * m2_sum - n * per_point_const;
    cardinality + log_n_fact + feature
}

/// Poisson RFS log-likelihood with a Gaussian feature density.
pub fn rfs_log_likelihood(set: &PointPatternSet, model: &ModelParams) -> Result<f64> {
    check_dim(set.dim(), model)?;
    if model.rho().is_nan() || model.rho() <= 0.0 {
        return Err(Error::Scoring(format!(
            "log-likelihood needs a positive intensity, model has rho = {}",
            model.rho()
        )));
    }
    let d = sorted_distances(set, model)?;
    Ok(log_likelihood_from_sorted(&d, model))
}

/// Raw configured score of one set.
pub fn score_set(
    set: &PointPatternSet,
    model: &ModelParams,
    config: &ScoringConfig,
) -> Result<f64> {
    config.validate()?;
    match config.method {
        ScoreMethod::Energy => rfs_energy(set, model, config.top_k_percent),
        ScoreMethod::As => score_as(set, model, config.as_squared),
        ScoreMethod::Loglik => rfs_log_likelihood(set, model),
    }
}

/// Scores every set of `source`, in order. The first failing set (by index)
/// aborts with its index attached. Output is identical for any `jobs`.
pub fn score_source<S: SetSource + ?Sized>(
    source: &S,
    model: &ModelParams,
    config: &ScoringConfig,
    jobs: usize,
) -> Result<Vec<f64>> {
    config.validate()?;
    par_map(source.len(), jobs, |i| {
        source
            .get(i)
            .and_then(|set| score_set(&set, model, config))
            .map_err(|e| Error::at(i, e))
    })
    .into_iter()
    .collect()
}

pub fn score_batch(
    sets: &[PointPatternSet],
    model: &ModelParams,
    config: &ScoringConfig,
    jobs: usize,
) -> Result<Vec<f64>> {
    score_source(sets, model, config, jobs)
}
