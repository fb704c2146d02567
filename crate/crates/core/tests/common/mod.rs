//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rfs_energy::{
    evaluate_category, fit_model_from, generate_dataset, read_manifest, EvalReport, Label,
    ModelParams, PointPatternSet, PpfFiles, ScoringConfig, SquareMatrix, SyntheticConfig,
};

/// A·Aᵀ/D + `floor`·I with A uniform in [-1, 1].
pub fn random_spd(d: usize, floor: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * floor
}

pub fn to_square(m: &DMatrix<f64>) -> SquareMatrix {
    let d = m.nrows();
    SquareMatrix::from_row_major(d, (0..d * d).map(|k| m[(k / d, k % d)]).collect())
}

pub fn to_dmatrix(m: &SquareMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), m.as_slice())
}

/// Sets of Gaussian rows with cardinalities in `sizes`.
pub fn gaussian_sets(
    sizes: &[usize],
    mean: &[f64],
    cov: &DMatrix<f64>,
    rng: &mut impl Rng,
) -> Vec<PointPatternSet> {
    let d = mean.len();
    let l = cov.clone().cholesky().expect("SPD").l();
    sizes
        .iter()
        .map(|&n| {
            let mut flat = Vec::with_capacity(n * d);
            for _ in 0..n {
                let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
                let x = &l * z;
                flat.extend((0..d).map(|i| (mean[i] + x[i]) as f32));
            }
            PointPatternSet::new(d, flat).unwrap()
        })
        .collect()
}

pub struct NaiveShrinkage {
    pub rho: f64,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_shrunk: DMatrix<f64>,
    pub alpha: f64,
}

/// Ledoit-Wolf toward m·I, written from the closed form: every outer product
/// x·xᵀ is materialized and ⟨A, B⟩ = tr(A·Bᵀ)/D.
pub fn naive_ledoit_wolf(sets: &[PointPatternSet]) -> NaiveShrinkage {
    let d = sets[0].dim();
    let rows: Vec<DVector<f64>> = sets
        .iter()
        .flat_map(|s| {
            s.iter()
                .map(|r| DVector::from_iterator(d, r.iter().map(|&v| v as f64)))
        })
        .collect();
    let n = rows.len() as f64;
    let rho = n / sets.len() as f64;
    let mu = rows.iter().fold(DVector::zeros(d), |acc, r| acc + r) / n;
    let outer: Vec<DMatrix<f64>> = rows
        .iter()
        .map(|r| {
            let c = r - &mu;
            &c * c.transpose()
        })
        .collect();
    let sigma = outer.iter().fold(DMatrix::zeros(d, d), |acc, o| acc + o) / n;
    let inner = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a * b.transpose()).trace() / d as f64;
    let m = sigma.trace() / d as f64;
    let target = DMatrix::identity(d, d) * m;
    let diff = &sigma - &target;
    let d2 = inner(&diff, &diff);
    let b_bar2 = outer
        .iter()
        .map(|o| {
            let e = o - &sigma;
            inner(&e, &e)
        })
        .sum::<f64>()
        / (n * n);
    let alpha = if d2 < 1e-15 { 1.0 } else { b_bar2.min(d2) / d2 };
    let sigma_shrunk = &sigma * (1.0 - alpha) + target * alpha;
    NaiveShrinkage {
        rho,
        mu,
        sigma,
        sigma_shrunk,
        alpha,
    }
}

/// (x−μ)ᵀ Σ⁻¹ (x−μ) with an explicitly inverted Σ.
pub fn naive_mahalanobis_sq(x: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let inv = sigma.clone().try_inverse().expect("invertible");
    let c = DVector::from_iterator(x.len(), x.iter().zip(mu).map(|(a, b)| a - b));
    (c.transpose() * inv * &c)[(0, 0)]
}

/// Fraction of (normal, anomalous) pairs ranked correctly, ties counting ½.
pub fn pair_counting_auc(scores: &[(f64, Label)]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for &(a, la) in scores {
        if la != Label::Anomalous {
            continue;
        }
        for &(n, ln) in scores {
            if ln != Label::Normal {
                continue;
            }
            pairs += 1.0;
            if a > n {
                wins += 1.0;
            } else if a == n {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Relative Frobenius distance ‖a − b‖ / ‖b‖.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Writes a synthetic corpus to `dir`, fits on its train split and evaluates
/// its test split.
pub fn synth_fit_eval(
    cfg: &SyntheticConfig,
    counts: (usize, usize, usize),
    scoring: &ScoringConfig,
    dir: &Path,
) -> (ModelParams, EvalReport) {
    generate_dataset(cfg, counts.0, counts.1, counts.2, dir).unwrap();
    let m = read_manifest(dir.join("manifest.json")).unwrap();
    let train = PpfFiles(m.train().map(|i| i.path.clone()).collect());
    let model = fit_model_from(&train, 4).unwrap().model;
    let test: Vec<_> = m.test().cloned().collect();
    let report = evaluate_category(&m.category, &model, &test, scoring, 4).unwrap();
    (model, report)
}
