//! Seeded Poisson-Gaussian point-pattern corpora with controllable anomalies.
//!
//! Normal sets draw |X| ~ Poisson(ρ₀) and descriptors i.i.d. N(μ₀, Σ₀).
//! Anomalous sets draw |X| ~ Poisson(factor·ρ₀) and translate
//! ⌈fraction·|X|⌉ of their descriptors by `δ·Σ₀^{1/2}·u`, where `u` is the
//! leading eigenvector of Σ₀, i.e. by δ Mahalanobis units.
//!
//! Every set has its own ChaCha stream keyed by (role, index), so a corpus
//! is the same whatever order or thread count it is generated with.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::linalg::{Cholesky, SquareMatrix};
use crate::manifest::{write_manifest, Label, Manifest, ManifestItem, Split};
use crate::ppf::{write_ppf, PointPatternSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub rho0: f64,
    /// Defaults to the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<Vec<f64>>,
    /// Row-major D×D; defaults to the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<Vec<f64>>,
    #[serde(default)]
    pub anomaly_shift_delta: f64,
    #[serde(default)]
    pub anomaly_fraction: f64,
    #[serde(default = "unit")]
    pub cardinality_factor: f64,
    /// Use |X| = round(ρ) exactly instead of a Poisson draw.
    #[serde(default)]
    pub fixed_cardinality: bool,
    #[serde(default = "default_category")]
    pub category: String,
    #[serde(default)]
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

fn default_category() -> String {
    "synthetic".into()
}

impl SyntheticConfig {
    pub fn new(dim: usize, rho0: f64, seed: u64) -> Self {
        Self {
            dim,
            rho0,
            mu0: None,
            sigma0: None,
            anomaly_shift_delta: 0.0,
            anomaly_fraction: 0.0,
            cardinality_factor: 1.0,
            fixed_cardinality: false,
            category: default_category(),
            seed,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        fsutil::read_json(path.as_ref())
    }
}

/// Which population a set is drawn from; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train = 0,
    TestNormal = 1,
    TestAnomalous = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub role: Role,
    pub index: u64,
}

impl StreamKey {
    pub fn new(role: Role, index: u64) -> Self {
        Self { role, index }
    }
}

/// A validated configuration with Σ₀'s factor and the shift vector precomputed.
#[derive(Debug, Clone)]
pub struct Generator {
    cfg: SyntheticConfig,
    mu0: Vec<f64>,
    sigma0: SquareMatrix,
    chol: Cholesky,
    shift: Vec<f64>,
}

impl Generator {
    pub fn new(cfg: SyntheticConfig) -> Result<Self> {
        let d = cfg.dim;
        let invalid = |m: String| Err(Error::Validation(format!("synthetic config: {m}")));
        if d == 0 {
            return invalid("dim must be positive".into());
        }
        if !(cfg.rho0 > 0.0 && cfg.rho0.is_finite()) {
            return invalid(format!("rho0 must be positive, got {}", cfg.rho0));
        }
        if !(cfg.cardinality_factor > 0.0 && cfg.cardinality_factor.is_finite()) {
            return invalid(format!(
                "cardinality_factor must be positive, got {}",
                cfg.cardinality_factor
            ));
        }
        if !(0.0..=1.0).contains(&cfg.anomaly_fraction) {
            return invalid(format!(
                "anomaly_fraction {} outside [0, 1]",
                cfg.anomaly_fraction
            ));
        }
        if !cfg.anomaly_shift_delta.is_finite() {
            return invalid("anomaly_shift_delta must be finite".into());
        }
        let mu0 = cfg.mu0.clone().unwrap_or_else(|| vec![0.0; d]);
        if mu0.len() != d || mu0.iter().any(|v| !v.is_finite()) {
            return invalid(format!("mu0 must have {d} finite components"));
        }
        let sigma0 = match &cfg.sigma0 {
            None => SquareMatrix::identity(d),
            Some(v) if v.len() == d * d => SquareMatrix::from_row_major(d, v.clone()),
            Some(v) => {
                return invalid(format!(
                    "sigma0 has {} entries, expected {}",
                    v.len(),
                    d * d
                ))
            }
        };
        if sigma0.asymmetry() > 1e-12 {
            return invalid("sigma0 is not symmetric".into());
        }
        let chol = match Cholesky::factor(&sigma0) {
            Ok(c) => c,
            Err(e) => return invalid(format!("sigma0 not positive definite (pivot {})", e.pivot)),
        };
        let (lambda, u) = leading_eigenpair(&sigma0);
        let scale = cfg.anomaly_shift_delta * lambda.sqrt();
        let shift = u.iter().map(|v| v * scale).collect();
        Ok(Self {
            cfg,
            mu0,
            sigma0,
            chol,
            shift,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn sigma0(&self) -> &SquareMatrix {
        &self.sigma0
    }

    /// δ·Σ₀^{1/2}·u.
    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    fn rng(&self, key: StreamKey) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(((key.role as u64) << 48) | (key.index & 0xffff_ffff_ffff));
        rng
    }

    fn cardinality(&self, lambda: f64, rng: &mut ChaCha8Rng) -> usize {
        if self.cfg.fixed_cardinality {
            return lambda.round() as usize;
        }
        Poisson::new(lambda)
            .expect("validated positive intensity")
            .sample(rng) as usize
    }

    fn gaussian_points(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let d = self.cfg.dim;
        let l = self.chol.lower();
        let mut z = vec![0.0; d];
        (0..n)
            .map(|_| {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(rng);
                }
                (0..d)
                    .map(|i| {
                        self.mu0[i]
                            + l.row(i)[..=i]
                                .iter()
                                .zip(&z)
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    fn to_set(&self, points: Vec<Vec<f64>>, key: StreamKey) -> PointPatternSet {
        let flat: Vec<f32> = points.into_iter().flatten().map(|v| v as f32).collect();
        let id = match key.role {
            Role::Train => format!("train_{:05}", key.index),
            Role::TestNormal => format!("good_{:05}", key.index),
            Role::TestAnomalous => format!("anomalous_{:05}", key.index),
        };
        PointPatternSet::new(self.cfg.dim, flat)
            .expect("finite Gaussian draws")
            .with_source_id(id)
    }

    pub fn sample_normal_set(&self, key: StreamKey) -> PointPatternSet {
        let mut rng = self.rng(key);
        let n = self.cardinality(self.cfg.rho0, &mut rng);
        let pts = self.gaussian_points(n, &mut rng);
        self.to_set(pts, key)
    }

    pub fn sample_anomalous_set(&self, key: StreamKey) -> PointPatternSet {
        let mut rng = self.rng(key);
        let n = self.cardinality(self.cfg.cardinality_factor * self.cfg.rho0, &mut rng);
        let mut pts = self.gaussian_points(n, &mut rng);
        for p in pts
            .iter_mut()
            .take(shifted_count(self.cfg.anomaly_fraction, n))
        {
            for (v, s) in p.iter_mut().zip(&self.shift) {
                *v += s;
            }
        }
        self.to_set(pts, key)
    }

    pub fn sample(&self, key: StreamKey) -> PointPatternSet {
        match key.role {
            Role::TestAnomalous => self.sample_anomalous_set(key),
            _ => self.sample_normal_set(key),
        }
    }
}

/// ⌈fraction·n⌉, immune to products like 0.1·30 = 3.0000000000000004.
fn shifted_count(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let rounded = raw.round();
    let c = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (c as usize).min(n)
}

/// Largest eigenvalue of a symmetric matrix and its unit eigenvector, sign
/// fixed so the largest-magnitude component is positive.
fn leading_eigenpair(m: &SquareMatrix) -> (f64, Vec<f64>) {
    let d = m.dim();
    let eig = nalgebra::DMatrix::from_row_slice(d, d, m.as_slice()).symmetric_eigen();
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty matrix");
    let mut u: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    let pivot = u
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    if pivot < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    (lambda, u)
}

/// Writes `n_train` normal training sets and a labelled test split under
/// `out_dir`, plus `out_dir/manifest.json`. The returned manifest holds the
/// paths as written, relative to `out_dir`.
pub fn generate_dataset(
    cfg: &SyntheticConfig,
    n_train: usize,
    n_test_normal: usize,
    n_test_anomalous: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let gen = Generator::new(cfg.clone())?;
    let out_dir = out_dir.as_ref();
    for sub in ["train", "test/good", "test/anomalous"] {
        let p = out_dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut jobs: Vec<(StreamKey, PathBuf, Label, Split)> = Vec::new();
    for i in 0..n_train {
        jobs.push((
            StreamKey::new(Role::Train, i as u64),
            PathBuf::from(format!("train/normal_{i:05}.ppf")),
            Label::Normal,
            Split::Train,
        ));
    }
    for i in 0..n_test_normal {
        jobs.push((
            StreamKey::new(Role::TestNormal, i as u64),
            PathBuf::from(format!("test/good/good_{i:05}.ppf")),
            Label::Normal,
            Split::Test,
        ));
    }
    for i in 0..n_test_anomalous {
        jobs.push((
            StreamKey::new(Role::TestAnomalous, i as u64),
            PathBuf::from(format!("test/anomalous/anomalous_{i:05}.ppf")),
            Label::Anomalous,
            Split::Test,
        ));
    }
    jobs.par_iter()
        .map(|(key, rel, _, _)| write_ppf(&gen.sample(*key), out_dir.join(rel)))
        .collect::<Result<()>>()?;
    let manifest = Manifest {
        category: cfg.category.clone(),
        items: jobs
            .into_iter()
            .map(|(_, path, label, split)| ManifestItem {
                path,
                label,
                split,
                defect_type: (label == Label::Anomalous).then(|| "shift".to_string()),
            })
            .collect(),
    };
    write_manifest(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}
