//! Anomaly scoring of variable-size descriptor sets with a Poisson random
//! finite set model.
//!
//! Each image is represented by the unordered set of its local descriptors
//! ([`PointPatternSet`]). Normal training sets fit an IID-cluster Poisson
//! model: a Poisson intensity for the cardinality and a single Gaussian, with
//! a Ledoit-Wolf shrunk covariance, for the descriptors ([`fit_model`]). New
//! sets are scored with the RFS energy ([`rfs_energy`]), the sum of
//! Mahalanobis distances, or the RFS log-likelihood, and scores are evaluated
//! by AUC.

pub mod cli;
pub mod error;
pub mod estimation;
pub mod evaluation;
mod fsutil;
pub mod linalg;
pub mod manifest;
pub mod ppf;
pub mod scoring;
pub mod source;
pub mod synthetic;

pub use error::{Error, Result};
pub use estimation::{
    fit_empirical_covariance, fit_feature_mean, fit_model, fit_model_from, fit_poisson_intensity,
    ledoit_wolf_shrink, FitReport, FitWarning, ModelParams, Shrinkage,
};
pub use evaluation::{
    auc, evaluate_category, few_shot_experiment, roc_curve, EvalReport, FewShotPlan, FewShotResult,
    ItemScore, RocPoint,
};
pub use linalg::{Cholesky, SquareMatrix};
pub use manifest::{read_manifest, write_manifest, Label, Manifest, ManifestItem, Split};
pub use ppf::{read_ppf, write_ppf, Keypoint, PointPatternSet};
pub use scoring::{
    mahalanobis_sq, rfs_energy, rfs_log_likelihood, score_as, score_batch, score_set, Orientation,
    ScoreMethod, ScoringConfig,
};
pub use source::{PpfFiles, SetSource};
pub use synthetic::{generate_dataset, Generator, StreamKey, SyntheticConfig};
