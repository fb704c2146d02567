//! Fitting the IID-cluster Poisson model from normal training sets.
//!
//! The parameters separate: the Poisson intensity is the mean cardinality,
//! and the feature density is a single Gaussian whose mean and covariance are
//! the pooled (point-weighted) sample moments with a maximum-likelihood
//! denominator. The covariance is then shrunk toward `m·I`, `m = tr(Σ)/D`,
//! with the Ledoit-Wolf closed-form intensity, and factorized by Cholesky.
//!
//! [`fit_model`] streams the training collection twice: pass 1 accumulates the
//! mean, pass 2 the scatter matrix and the fourth moment `Σ‖x−μ‖⁴`. Because
//! `Σₖ xₖᵀ S xₖ = n‖S‖²_F` for the scatter `S` of the same centered points,
//! the Ledoit-Wolf dispersion term needs no third pass:
//!
//! ```text
//! n²·D·b̄² = Σₖ (‖xₖ‖⁴ − 2 xₖᵀ S xₖ + ‖S‖²_F) = Σₖ ‖xₖ‖⁴ − n‖S‖²_F
//! ```
//!
//! Traversal order is fixed: sets in collection order, points in storage
//! order. With `jobs > 1` the collection is cut into `jobs` contiguous chunks
//! whose partial sums are merged in chunk order.

use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::linalg::{Cholesky, SquareMatrix};
use crate::ppf::PointPatternSet;
use crate::source::{par_map, SetSource};

pub const MODEL_FILE_VERSION: u32 = 1;

/// Below this d² the spread around the identity target is treated as zero.
pub const DEGENERATE_SPREAD: f64 = 1e-15;

const JITTER_RELATIVE: f64 = 1e-6;
const JITTER_FLOOR: f64 = 1e-12;
const JITTER_RETRIES: usize = 3;
const JITTER_GROWTH: f64 = 10.0;

const SYMMETRY_TOL: f64 = 1e-12;
const RECONSTRUCTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// Every training set was empty; the intensity is zero.
    ZeroIntensity,
    /// d² below threshold; the covariance collapsed onto the identity target.
    DegenerateSpread { d2: f64 },
    /// Cholesky needed diagonal jitter.
    Jitter { amount: f64, attempts: usize },
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitWarning::ZeroIntensity => write!(f, "all training sets are empty; rho = 0"),
            FitWarning::DegenerateSpread { d2 } => write!(
                f,
                "covariance has no spread around its identity target (d2 = {d2:e}); alpha = 1"
            ),
            FitWarning::Jitter { amount, attempts } => write!(
                f,
                "shrunk covariance not positive definite; added {amount:e} to the diagonal after {attempts} attempt(s)"
            ),
        }
    }
}

fn check_dim(expected: &mut Option<usize>, set: &PointPatternSet, index: usize) -> Result<()> {
    match *expected {
        None => *expected = Some(set.dim()),
        Some(d) if d != set.dim() => {
            return Err(Error::Estimation(format!(
                "set {index} has dimension {}, expected {d}",
                set.dim()
            )))
        }
        _ => {}
    }
    Ok(())
}

/// Pass-1 accumulator: cardinalities and coordinate sums.
#[derive(Debug, Clone, Default)]
pub struct MeanAccumulator {
    dim: Option<usize>,
    n_sets: u64,
    n_points: u64,
    sum: Vec<f64>,
}

impl MeanAccumulator {
    pub fn push(&mut self, set: &PointPatternSet, index: usize) -> Result<()> {
        check_dim(&mut self.dim, set, index)?;
        if self.sum.is_empty() {
            self.sum = vec![0.0; set.dim()];
        }
        self.n_sets += 1;
        self.n_points += set.len() as u64;
        for x in set.iter() {
            for (s, v) in self.sum.iter_mut().zip(x) {
                *s += f64::from(*v);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: MeanAccumulator) -> Result<()> {
        let Some(d) = other.dim else {
            return Ok(());
        };
        match self.dim {
            None => {
                *self = other;
                return Ok(());
            }
            Some(mine) if mine != d => {
                return Err(Error::Estimation(format!(
                    "dimension mismatch between partial sums ({mine} vs {d})"
                )))
            }
            _ => {}
        }
        self.n_sets += other.n_sets;
        self.n_points += other.n_points;
        for (s, o) in self.sum.iter_mut().zip(other.sum) {
            *s += o;
        }
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn n_sets(&self) -> u64 {
        self.n_sets
    }

    pub fn n_points(&self) -> u64 {
        self.n_points
    }

    pub fn intensity(&self) -> Result<f64> {
        if self.n_sets == 0 {
            return Err(Error::Estimation("no training sets".into()));
        }
        Ok(self.n_points as f64 / self.n_sets as f64)
    }

    pub fn mean(&self) -> Result<Vec<f64>> {
        if self.n_points == 0 {
            return Err(Error::Estimation(
                "training sets contain no descriptors; mean undefined".into(),
            ));
        }
        let n = self.n_points as f64;
        Ok(self.sum.iter().map(|s| s / n).collect())
    }
}

/// Pass-2 accumulator: scatter about a fixed mean and the fourth moment.
#[derive(Debug, Clone)]
pub struct ScatterAccumulator {
    mu: Vec<f64>,
    n_points: u64,
    /// Upper triangle (i ≤ j) of Σ (x−μ)(x−μ)ᵀ, row-major D×D storage.
    scatter: Vec<f64>,
    /// Σ ‖x−μ‖⁴.
    fourth: f64,
    centered: Vec<f64>,
}

impl ScatterAccumulator {
    pub fn new(mu: Vec<f64>) -> Self {
        let d = mu.len();
        Self {
            mu,
            n_points: 0,
            scatter: vec![0.0; d * d],
            fourth: 0.0,
            centered: vec![0.0; d],
        }
    }

    pub fn push(&mut self, set: &PointPatternSet, index: usize) -> Result<()> {
        let d = self.mu.len();
        if set.dim() != d {
            return Err(Error::Estimation(format!(
                "set {index} has dimension {}, expected {d}",
                set.dim()
            )));
        }
        for x in set.iter() {
            let mut norm_sq = 0.0;
            for ((c, v), m) in self.centered.iter_mut().zip(x).zip(&self.mu) {
                *c = f64::from(*v) - m;
                norm_sq += *c * *c;
            }
            self.fourth += norm_sq * norm_sq;
            for i in 0..d {
                let ci = self.centered[i];
                let row = &mut self.scatter[i * d + i..(i + 1) * d];
                for (s, cj) in row.iter_mut().zip(&self.centered[i..]) {
                    *s += ci * cj;
                }
            }
            self.n_points += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: ScatterAccumulator) {
        debug_assert_eq!(self.mu, other.mu);
        self.n_points += other.n_points;
        self.fourth += other.fourth;
        for (s, o) in self.scatter.iter_mut().zip(other.scatter) {
            *s += o;
        }
    }

    /// Σ (x−μ)(x−μ)ᵀ / n, exactly symmetric.
    pub fn covariance(&self) -> Result<SquareMatrix> {
        if self.n_points == 0 {
            return Err(Error::Estimation("covariance of zero points".into()));
        }
        let d = self.mu.len();
        let n = self.n_points as f64;
        let mut sigma = SquareMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let v = self.scatter[i * d + j] / n;
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        Ok(sigma)
    }

    /// Ledoit-Wolf shrinkage using the collapsed fourth-moment form of b̄².
    pub fn shrink(&self) -> Result<Shrinkage> {
        let sigma = self.covariance()?;
        let d = sigma.dim() as f64;
        let n = self.n_points as f64;
        let b_bar_sq = ((self.fourth - n * sigma.frobenius_sq()) / (d * n * n)).max(0.0);
        Ok(shrink_with(&sigma, b_bar_sq))
    }
}

/// Output of Ledoit-Wolf shrinkage, with the intermediate statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Shrinkage {
    pub sigma_shrunk: SquareMatrix,
    pub alpha: f64,
    /// m = tr(Σ)/D, the identity-target scale.
    pub target_scale: f64,
    pub d2: f64,
    pub b_bar_sq: f64,
}

fn shrink_with(sigma: &SquareMatrix, b_bar_sq: f64) -> Shrinkage {
    let dim = sigma.dim();
    let d = dim as f64;
    let m = sigma.trace() / d;
    let d2 = sigma
        .sub(&SquareMatrix::scaled_identity(dim, m))
        .frobenius_sq()
        / d;
    let alpha = if d2 < DEGENERATE_SPREAD {
        1.0
    } else {
        b_bar_sq.min(d2) / d2
    };
    let mut shrunk = sigma.scale(1.0 - alpha);
    shrunk.add_diagonal(alpha * m);
    Shrinkage {
        sigma_shrunk: shrunk,
        alpha,
        target_scale: m,
        d2,
        b_bar_sq,
    }
}

/// ρ = Σ|X| / (number of sets).
pub fn fit_poisson_intensity(sets: &[PointPatternSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::Estimation("no training sets".into()));
    }
    let total: u64 = sets.iter().map(|s| s.len() as u64).sum();
    if total == 0 {
        warn!("{}", FitWarning::ZeroIntensity);
    }
    Ok(total as f64 / sets.len() as f64)
}

/// Pooled mean over all descriptors of all sets (point-weighted).
pub fn fit_feature_mean(sets: &[PointPatternSet]) -> Result<Vec<f64>> {
    let mut acc = MeanAccumulator::default();
    for (i, s) in sets.iter().enumerate() {
        acc.push(s, i)?;
    }
    acc.mean()
}

/// Σ (x−μ)(x−μ)ᵀ / Σ|X|, maximum-likelihood denominator.
pub fn fit_empirical_covariance(sets: &[PointPatternSet], mu: &[f64]) -> Result<SquareMatrix> {
    let mut acc = ScatterAccumulator::new(mu.to_vec());
    for (i, s) in sets.iter().enumerate() {
        acc.push(s, i)?;
    }
    acc.covariance()
}

/// Ledoit-Wolf shrinkage of `sigma` toward `m·I`.
///
/// Accepts any `sigma`, so b̄² is accumulated point by point with
/// `⟨xxᵀ−S, xxᵀ−S⟩ = (‖x‖⁴ − 2xᵀSx + ‖S‖²_F)/D` instead of the fourth-moment
/// shortcut [`fit_model`] uses.
pub fn ledoit_wolf_shrink(
    sets: &[PointPatternSet],
    mu: &[f64],
    sigma: &SquareMatrix,
) -> Result<Shrinkage> {
    let dim = mu.len();
    if sigma.dim() != dim {
        return Err(Error::Estimation(format!(
            "covariance is {0}x{0} but mean has {dim} components",
            sigma.dim()
        )));
    }
    let s_norm_sq = sigma.frobenius_sq();
    let d = dim as f64;
    let mut n = 0u64;
    let mut acc = 0.0;
    let mut x = vec![0.0; dim];
    for (i, set) in sets.iter().enumerate() {
        if set.dim() != dim {
            return Err(Error::Estimation(format!(
                "set {i} has dimension {}, expected {dim}",
                set.dim()
            )));
        }
        for row in set.iter() {
            for ((c, v), m) in x.iter_mut().zip(row).zip(mu) {
                *c = f64::from(*v) - m;
            }
            let norm_sq: f64 = x.iter().map(|v| v * v).sum();
            acc += (norm_sq * norm_sq - 2.0 * sigma.quadratic_form(&x) + s_norm_sq) / d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Estimation("shrinkage over zero points".into()));
    }
    let n = n as f64;
    Ok(shrink_with(sigma, (acc / (n * n)).max(0.0)))
}

/// The fitted normal model: (ρ, μ, Σ_shrunk, α) and the Cholesky factor of
/// Σ_shrunk. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    rho: f64,
    mu: Vec<f64>,
    sigma_shrunk: SquareMatrix,
    alpha: f64,
    chol: Cholesky,
    n_train_sets: u64,
    n_train_points: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    dim: usize,
    rho: f64,
    alpha: f64,
    n_train_sets: u64,
    n_train_points: u64,
    mu: Vec<f64>,
    sigma_shrunk: Vec<f64>,
}

impl ModelParams {
    /// Validates the parts and factorizes `sigma_shrunk` (no jitter).
    pub fn from_parts(
        rho: f64,
        mu: Vec<f64>,
        sigma_shrunk: SquareMatrix,
        alpha: f64,
        n_train_sets: u64,
        n_train_points: u64,
    ) -> Result<Self> {
        let dim = mu.len();
        if dim == 0 {
            return Err(Error::Model("dimension must be positive".into()));
        }
        if sigma_shrunk.dim() != dim {
            return Err(Error::Model(format!(
                "covariance is {0}x{0} but mean has {dim} components",
                sigma_shrunk.dim()
            )));
        }
        if !(rho.is_finite() && rho >= 0.0) {
            return Err(Error::Model(format!("invalid intensity {rho}")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Model(format!(
                "shrinkage intensity {alpha} outside [0,1]"
            )));
        }
        if mu
            .iter()
            .chain(sigma_shrunk.as_slice())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Model("non-finite mean or covariance entry".into()));
        }
        let asym = sigma_shrunk.asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(Error::Model(format!(
                "covariance asymmetric (relative {asym:e})"
            )));
        }
        let chol = Cholesky::factor(&sigma_shrunk).map_err(|e| {
            Error::Model(format!(
                "covariance not positive definite (pivot {} = {:e}); {}",
                e.pivot,
                e.value,
                condition_summary(&sigma_shrunk)
            ))
        })?;
        let recon = chol.reconstruct().sub(&sigma_shrunk).frobenius();
        let scale = sigma_shrunk.frobenius();
        if recon > RECONSTRUCTION_TOL * scale {
            return Err(Error::Model(format!(
                "Cholesky reconstruction error {:e} exceeds tolerance",
                recon / scale
            )));
        }
        Ok(Self {
            rho,
            mu,
            sigma_shrunk,
            alpha,
            chol,
            n_train_sets,
            n_train_points,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma_shrunk(&self) -> &SquareMatrix {
        &self.sigma_shrunk
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub fn n_train_sets(&self) -> u64 {
        self.n_train_sets
    }

    pub fn n_train_points(&self) -> u64 {
        self.n_train_points
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self.to_file()).expect("model serializes")
    }

    fn to_file(&self) -> ModelFile {
        ModelFile {
            version: MODEL_FILE_VERSION,
            dim: self.dim(),
            rho: self.rho,
            alpha: self.alpha,
            n_train_sets: self.n_train_sets,
            n_train_points: self.n_train_points,
            mu: self.mu.clone(),
            sigma_shrunk: self.sigma_shrunk.as_slice().to_vec(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fsutil::write_json_atomic(path.as_ref(), &self.to_file())
    }

    /// Loads a model file; the Cholesky factor is recomputed and revalidated.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file: ModelFile = fsutil::read_json(path)?;
        let ctx = |e: Error| match e {
            Error::Model(msg) => Error::Model(format!("{}: {msg}", path.display())),
            other => other,
        };
        if file.version != MODEL_FILE_VERSION {
            return Err(ctx(Error::Model(format!(
                "unsupported model version {}",
                file.version
            ))));
        }
        if file.mu.len() != file.dim || file.sigma_shrunk.len() != file.dim * file.dim {
            return Err(ctx(Error::Model(format!(
                "declared dim {} but mu has {} and sigma_shrunk {} entries",
                file.dim,
                file.mu.len(),
                file.sigma_shrunk.len()
            ))));
        }
        let sigma = SquareMatrix::from_row_major(file.dim, file.sigma_shrunk);
        Self::from_parts(
            file.rho,
            file.mu,
            sigma,
            file.alpha,
            file.n_train_sets,
            file.n_train_points,
        )
        .map_err(ctx)
    }
}

fn condition_summary(sigma: &SquareMatrix) -> String {
    let diag: Vec<f64> = (0..sigma.dim()).map(|i| sigma[(i, i)]).collect();
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    let max = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!(
        "diagonal range [{min:e}, {max:e}], trace/D {:e}",
        sigma.trace() / sigma.dim() as f64
    )
}

/// A fitted model plus fit diagnostics.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: ModelParams,
    pub warnings: Vec<FitWarning>,
    pub sigma_empirical: SquareMatrix,
    pub shrinkage: Shrinkage,
}

/// Fits the model from in-memory sets, single-threaded.
pub fn fit_model(sets: &[PointPatternSet]) -> Result<FitReport> {
    fit_model_from(sets, 1)
}

fn chunks(len: usize, jobs: usize) -> Vec<std::ops::Range<usize>> {
    let jobs = jobs.clamp(1, len.max(1));
    let base = len / jobs;
    let extra = len % jobs;
    let mut start = 0;
    (0..jobs)
        .map(|j| {
            let end = start + base + usize::from(j < extra);
            let r = start..end;
            start = end;
            r
        })
        .collect()
}

fn run_chunks<S, A, F>(
    source: &S,
    jobs: usize,
    init: impl Fn() -> A + Sync,
    push: F,
) -> Result<Vec<A>>
where
    S: SetSource + ?Sized,
    A: Send,
    F: Fn(&mut A, &PointPatternSet, usize) -> Result<()> + Sync,
{
    let ranges = chunks(source.len(), jobs);
    par_map(ranges.len(), jobs, |c| {
        let mut acc = init();
        for i in ranges[c].clone() {
            let set = source.get(i).map_err(|e| Error::at(i, e))?;
            push(&mut acc, &set, i)?;
        }
        Ok(acc)
    })
    .into_iter()
    .collect()
}

/// Two-pass streaming fit over any [`SetSource`]. Results for a fixed `jobs`
/// are deterministic; different `jobs` agree to rounding.
pub fn fit_model_from<S: SetSource + ?Sized>(source: &S, jobs: usize) -> Result<FitReport> {
    if source.is_empty() {
        return Err(Error::Estimation("no training sets".into()));
    }
    let mut warnings = Vec::new();

    let mut mean_acc = MeanAccumulator::default();
    for part in run_chunks(source, jobs, MeanAccumulator::default, |a, s, i| {
        a.push(s, i)
    })? {
        mean_acc.merge(part)?;
    }
    let rho = mean_acc.intensity()?;
    if rho == 0.0 {
        warnings.push(FitWarning::ZeroIntensity);
    }
    let mu = mean_acc.mean()?;

    let mut parts = run_chunks(
        source,
        jobs,
        || ScatterAccumulator::new(mu.clone()),
        |a, s, i| a.push(s, i),
    )?
    .into_iter();
    let mut scatter = parts.next().expect("at least one chunk");
    for part in parts {
        scatter.merge(part);
    }
    let sigma = scatter.covariance()?;
    let shrinkage = scatter.shrink()?;
    if shrinkage.d2 < DEGENERATE_SPREAD {
        warnings.push(FitWarning::DegenerateSpread { d2: shrinkage.d2 });
    }

    let (sigma_shrunk, chol) = factor_with_jitter(&shrinkage, &mut warnings)?;
    for w in &warnings {
        warn!("{w}");
    }
    let model = ModelParams {
        rho,
        mu,
        sigma_shrunk,
        alpha: shrinkage.alpha,
        chol,
        n_train_sets: mean_acc.n_sets(),
        n_train_points: mean_acc.n_points(),
    };
    Ok(FitReport {
        model,
        warnings,
        sigma_empirical: sigma,
        shrinkage,
    })
}

fn factor_with_jitter(
    shrinkage: &Shrinkage,
    warnings: &mut Vec<FitWarning>,
) -> Result<(SquareMatrix, Cholesky)> {
    let base = &shrinkage.sigma_shrunk;
    let first = match Cholesky::factor(base) {
        Ok(c) => return Ok((base.clone(), c)),
        Err(e) => e,
    };
    let mut jitter = JITTER_RELATIVE * shrinkage.target_scale.max(JITTER_FLOOR);
    for attempt in 1..=JITTER_RETRIES {
        let mut candidate = base.clone();
        candidate.add_diagonal(jitter);
        if let Ok(c) = Cholesky::factor(&candidate) {
            warnings.push(FitWarning::Jitter {
                amount: jitter,
                attempts: attempt,
            });
            return Ok((candidate, c));
        }
        jitter *= JITTER_GROWTH;
    }
    Err(Error::Model(format!(
        "Cholesky failed at pivot {} ({:e}) even with diagonal jitter up to {:e}; alpha {}, {}",
        first.pivot,
        first.value,
        jitter / JITTER_GROWTH,
        shrinkage.alpha,
        condition_summary(base)
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson, StandardNormal};

    fn set(dim: usize, rows: &[&[f32]]) -> PointPatternSet {
        PointPatternSet::from_rows(dim, rows).unwrap()
    }

    /// Naive Ledoit-Wolf: materializes every x xᵀ.
    fn naive_lw(points: &[Vec<f64>]) -> (SquareMatrix, f64) {
        let d = points[0].len();
        let n = points.len() as f64;
        let mu: Vec<f64> = (0..d)
            .map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n)
            .collect();
        let centered: Vec<Vec<f64>> = points
            .iter()
            .map(|p| p.iter().zip(&mu).map(|(a, b)| a - b).collect())
            .collect();
        let outer = |x: &[f64]| {
            let mut m = SquareMatrix::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] = x[i] * x[j];
                }
            }
            m
        };
        let mut s = SquareMatrix::zeros(d);
        for x in &centered {
            let o = outer(x);
            for i in 0..d {
                for j in 0..d {
                    s[(i, j)] += o[(i, j)] / n;
                }
            }
        }
        let inner = |a: &SquareMatrix, b: &SquareMatrix| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / d as f64
        };
        let m = inner(&s, &SquareMatrix::identity(d));
        let diff = s.sub(&SquareMatrix::scaled_identity(d, m));
        let d2 = inner(&diff, &diff);
        let mut b_bar = 0.0;
        for x in &centered {
            let dev = outer(x).sub(&s);
            b_bar += inner(&dev, &dev);
        }
        b_bar /= n * n;
        let alpha = if d2 < 1e-15 { 1.0 } else { b_bar.min(d2) / d2 };
        let mut out = s.scale(1.0 - alpha);
        out.add_diagonal(alpha * m);
        (out, alpha)
    }

    fn gaussian_sets(
        rng: &mut ChaCha8Rng,
        n_sets: usize,
        per_set: usize,
        scales: &[f64],
    ) -> Vec<PointPatternSet> {
        let d = scales.len();
        (0..n_sets)
            .map(|_| {
                let data: Vec<f32> = (0..per_set * d)
                    .map(|k| {
                        let z: f64 = StandardNormal.sample(rng);
                        (z * scales[k % d]) as f32
                    })
                    .collect();
                PointPatternSet::new(d, data).unwrap()
            })
            .collect()
    }

    fn points_of(sets: &[PointPatternSet]) -> Vec<Vec<f64>> {
        sets.iter()
            .flat_map(|s| s.iter().map(|x| x.iter().map(|v| f64::from(*v)).collect()))
            .collect()
    }

    #[test]
    fn intensity_is_mean_cardinality() {
        let sets: Vec<_> = [3usize, 5, 7]
            .iter()
            .map(|&n| PointPatternSet::new(1, vec![0.0; n]).unwrap())
            .collect();
        assert_eq!(fit_poisson_intensity(&sets).unwrap(), 5.0);
        let one = [PointPatternSet::new(2, vec![1.0; 84]).unwrap()];
        assert_eq!(fit_poisson_intensity(&one).unwrap(), 42.0);
        assert!(fit_poisson_intensity(&[]).is_err());
        let empties = [PointPatternSet::empty(3).unwrap()];
        assert_eq!(fit_poisson_intensity(&empties).unwrap(), 0.0);
    }

    #[test]
    fn intensity_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pois = Poisson::new(50.0).unwrap();
        let sets: Vec<_> = (0..500)
            .map(|_| {
                let n = pois.sample(&mut rng) as usize;
                PointPatternSet::new(1, vec![0.0; n]).unwrap()
            })
            .collect();
        let rho = fit_poisson_intensity(&sets).unwrap();
        assert!((rho - 50.0).abs() <= 1.0, "rho {rho}");
    }

    #[test]
    fn mean_is_point_weighted() {
        let sets = [set(2, &[&[0.0, 0.0]]), set(2, &[&[2.0, 2.0]])];
        assert_eq!(fit_feature_mean(&sets).unwrap(), vec![1.0, 1.0]);
        let sets = [set(1, &[&[4.0]]), set(1, &[&[0.0], &[0.0], &[0.0]])];
        assert_eq!(fit_feature_mean(&sets).unwrap(), vec![1.0]);
    }

    #[test]
    fn mean_dimension_mismatch() {
        let sets = [set(1, &[&[4.0]]), set(2, &[&[0.0, 1.0]])];
        assert!(matches!(fit_feature_mean(&sets), Err(Error::Estimation(_))));
        assert!(matches!(fit_model(&sets), Err(Error::Estimation(_))));
    }

    #[test]
    fn mean_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu0: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let sets: Vec<_> = (0..25)
            .map(|_| {
                let data: Vec<f32> = (0..1000 * 8)
                    .map(|k| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (mu0[k % 8] + z) as f32
                    })
                    .collect();
                PointPatternSet::new(8, data).unwrap()
            })
            .collect();
        let mu = fit_feature_mean(&sets).unwrap();
        for (a, b) in mu.iter().zip(&mu0) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
    }

    #[test]
    fn covariance_ml_denominator() {
        let sets = [set(1, &[&[-1.0], &[1.0]])];
        let sigma = fit_empirical_covariance(&sets, &[0.0]).unwrap();
        assert_eq!(sigma[(0, 0)], 1.0);
        let same = [set(2, &[&[3.0, 1.0], &[3.0, 1.0], &[3.0, 1.0]])];
        let mu = fit_feature_mean(&same).unwrap();
        let sigma = fit_empirical_covariance(&same, &mu).unwrap();
        assert_eq!(sigma, SquareMatrix::zeros(2));
        assert!(fit_empirical_covariance(&[PointPatternSet::empty(1).unwrap()], &[0.0]).is_err());
    }

    #[test]
    fn covariance_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scales = [1.0, 2.0, 0.5, 3.0];
        let sets = gaussian_sets(&mut rng, 40, 1000, &scales);
        let mu = fit_feature_mean(&sets).unwrap();
        let sigma = fit_empirical_covariance(&sets, &mu).unwrap();
        let mut truth = SquareMatrix::zeros(4);
        for (i, s) in scales.iter().enumerate() {
            truth[(i, i)] = s * s;
        }
        let rel = sigma.sub(&truth).frobenius() / truth.frobenius();
        assert!(rel <= 0.05, "rel {rel}");
    }

    #[test]
    fn per_point_identity_matches_materialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for d in [1usize, 3, 8] {
            let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut s = SquareMatrix::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    s[(i, j)] = a[i * d + j] + a[j * d + i];
                }
            }
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut dev = SquareMatrix::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    dev[(i, j)] = x[i] * x[j] - s[(i, j)];
                }
            }
            let naive = dev.frobenius_sq() / d as f64;
            let norm_sq: f64 = x.iter().map(|v| v * v).sum();
            let fast =
                (norm_sq * norm_sq - 2.0 * s.quadratic_form(&x) + s.frobenius_sq()) / d as f64;
            assert_relative_eq!(naive, fast, max_relative = 1e-12);
        }
    }

    #[test]
    fn shrinkage_matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scales: Vec<f64> = (1..=8).map(|v| (v as f64).sqrt()).collect();
        let sets = gaussian_sets(&mut rng, 10, 500, &scales);
        let (naive, naive_alpha) = naive_lw(&points_of(&sets));

        let mu = fit_feature_mean(&sets).unwrap();
        let sigma = fit_empirical_covariance(&sets, &mu).unwrap();
        let per_point = ledoit_wolf_shrink(&sets, &mu, &sigma).unwrap();
        let streamed = fit_model(&sets).unwrap();
        for sh in [&per_point, &streamed.shrinkage] {
            assert_relative_eq!(sh.alpha, naive_alpha, max_relative = 1e-8);
            let rel = sh.sigma_shrunk.sub(&naive).frobenius() / naive.frobenius();
            assert!(rel < 1e-8, "rel {rel}");
        }
    }

    #[test]
    fn shrinkage_few_points_high_dim() {
        // n < D: empirical covariance singular, shrunk one must not be
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sets = gaussian_sets(&mut rng, 1, 10, &[1.0; 32]);
        let (naive, naive_alpha) = naive_lw(&points_of(&sets));
        let fit = fit_model(&sets).unwrap();
        assert!(fit.model.alpha() > 0.0 && fit.model.alpha() <= 1.0);
        assert_relative_eq!(fit.model.alpha(), naive_alpha, max_relative = 1e-8);
        let rel = fit.model.sigma_shrunk().sub(&naive).frobenius() / naive.frobenius();
        assert!(rel < 1e-8);
        assert!(fit.warnings.is_empty(), "{:?}", fit.warnings);
    }

    #[test]
    fn one_dimensional_shrinkage_is_identity_map() {
        let sets = [set(1, &[&[1.0], &[2.5], &[-4.0], &[0.25]])];
        let mu = fit_feature_mean(&sets).unwrap();
        let sigma = fit_empirical_covariance(&sets, &mu).unwrap();
        let sh = ledoit_wolf_shrink(&sets, &mu, &sigma).unwrap();
        assert_relative_eq!(sh.sigma_shrunk[(0, 0)], sigma[(0, 0)], max_relative = 1e-15);
    }

    #[test]
    fn shrinkage_endpoints_by_substitution() {
        let sigma = SquareMatrix::from_row_major(2, vec![2.0, 0.5, 0.5, 1.0]);
        let m = sigma.trace() / 2.0;
        let combine = |alpha: f64| {
            let mut s = sigma.scale(1.0 - alpha);
            s.add_diagonal(alpha * m);
            s
        };
        assert_eq!(combine(0.0), sigma);
        assert_eq!(combine(1.0), SquareMatrix::scaled_identity(2, m));
        // b̄² = 0 gives alpha = 0; b̄² ≥ d² gives alpha = 1
        assert_eq!(shrink_with(&sigma, 0.0).alpha, 0.0);
        assert_eq!(shrink_with(&sigma, 1e9).alpha, 1.0);
        assert_eq!(
            shrink_with(&sigma, 1e9).sigma_shrunk,
            SquareMatrix::scaled_identity(2, m)
        );
    }

    #[test]
    fn two_point_model() {
        let sets = [set(1, &[&[-1.0]]), set(1, &[&[1.0]])];
        let fit = fit_model(&sets).unwrap();
        assert_eq!(fit.model.rho(), 1.0);
        assert_eq!(fit.model.mu(), &[0.0]);
        assert_eq!(fit.model.sigma_shrunk()[(0, 0)], 1.0);
        assert_eq!(fit.model.n_train_sets(), 2);
        assert_eq!(fit.model.n_train_points(), 2);
    }

    #[test]
    fn identical_points_get_jittered_diagonal() {
        let sets = [
            set(3, &[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]]),
            set(3, &[&[1.0, 2.0, 3.0]]),
        ];
        let fit = fit_model(&sets).unwrap();
        assert_eq!(fit.model.alpha(), 1.0);
        assert!(fit
            .warnings
            .iter()
            .any(|w| matches!(w, FitWarning::DegenerateSpread { .. })));
        let jitter = fit
            .warnings
            .iter()
            .find_map(|w| match w {
                FitWarning::Jitter { amount, .. } => Some(*amount),
                _ => None,
            })
            .expect("jitter warning");
        assert_eq!(jitter, 1e-6 * 1e-12);
        let s = fit.model.sigma_shrunk();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s[(i, j)], if i == j { jitter } else { 0.0 });
            }
        }
    }

    #[test]
    fn empty_training_errors() {
        assert!(matches!(fit_model(&[]), Err(Error::Estimation(_))));
        let empties = [
            PointPatternSet::empty(2).unwrap(),
            PointPatternSet::empty(2).unwrap(),
        ];
        assert!(matches!(fit_model(&empties), Err(Error::Estimation(_))));
    }

    #[test]
    fn parallel_chunks_agree_with_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sets = gaussian_sets(&mut rng, 37, 20, &[1.0, 2.0, 3.0, 0.5, 1.5]);
        let seq = fit_model_from(&sets[..], 1).unwrap().model;
        let par = fit_model_from(&sets[..], 4).unwrap().model;
        let again = fit_model_from(&sets[..], 4).unwrap().model;
        assert_eq!(par, again);
        let rel =
            par.sigma_shrunk().sub(seq.sigma_shrunk()).frobenius() / seq.sigma_shrunk().frobenius();
        assert!(rel < 1e-12, "{rel}");
        assert_relative_eq!(par.alpha(), seq.alpha(), max_relative = 1e-12);
        assert_eq!(par.rho(), seq.rho());
    }

    #[test]
    fn chunking_covers_range() {
        for (len, jobs) in [(10, 3), (2, 8), (0, 4), (7, 1)] {
            let cs = chunks(len, jobs);
            assert_eq!(cs.first().unwrap().start, 0);
            assert_eq!(cs.last().unwrap().end, len);
            assert!(cs.windows(2).all(|w| w[0].end == w[1].start));
        }
    }

    #[test]
    fn model_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sets = gaussian_sets(&mut rng, 5, 30, &[1.0, 0.3, 2.0]);
        let model = fit_model(&sets).unwrap().model;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.json");
        model.save(&p).unwrap();
        let back = ModelParams::load(&p).unwrap();
        assert_eq!(back, model);
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        for key in [
            "version",
            "dim",
            "rho",
            "alpha",
            "n_train_sets",
            "n_train_points",
            "mu",
            "sigma_shrunk",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["sigma_shrunk"].as_array().unwrap().len(), 9);
    }

    #[test]
    fn model_load_rejects_bad_covariance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let write = |sigma: &str| {
            std::fs::write(
                &p,
                format!(
                    r#"{{"version":1,"dim":2,"rho":3.0,"alpha":0.1,"n_train_sets":1,"n_train_points":3,
                    "mu":[0.0,0.0],"sigma_shrunk":{sigma}}}"#
                ),
            )
            .unwrap();
        };
        write("[1.0, 2.0, 2.0, 1.0]");
        assert!(matches!(ModelParams::load(&p), Err(Error::Model(_))));
        write("[1.0, 0.5, 0.4, 1.0]");
        assert!(matches!(ModelParams::load(&p), Err(Error::Model(_))));
        write("[1.0, 0.0, 0.0]");
        assert!(matches!(ModelParams::load(&p), Err(Error::Model(_))));
        write("[1.0, 0.0, 0.0, 1.0]");
        assert!(ModelParams::load(&p).is_ok());
    }
}
