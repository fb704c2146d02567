//! Few-shot harness: fit on n randomly drawn normal sets, evaluate, repeat.
//!
//! Every (shot, repeat) draw uses its own ChaCha stream keyed by
//! `(seed, shot, repeat)`, so results do not depend on execution order or
//! the number of worker threads.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::auc;
use crate::error::{Error, Result};
use crate::estimation::fit_model_from;
use crate::fsutil;
use crate::manifest::Label;
use crate::ppf::PointPatternSet;
use crate::scoring::{score_set, ScoringConfig};
use crate::source::par_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotPlan {
    pub shots: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    /// Worker threads; does not affect results.
    #[serde(default = "one")]
    pub jobs: usize,
}

fn one() -> usize {
    1
}

impl FewShotPlan {
    pub fn new(shots: Vec<usize>, repeats: usize, seed: u64) -> Self {
        Self {
            shots,
            repeats,
            seed,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotResult {
    pub shots: usize,
    pub repeats: usize,
    pub seed: u64,
    pub mean_auc: f64,
    pub per_repeat_auc: Vec<f64>,
    /// Fit warnings from any repeat, deduplicated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Stream id for one draw: shot count in the high 32 bits, repeat in the low.
fn draw_rng(seed: u64, shots: usize, repeat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((shots as u64) << 32) | (repeat as u64 & 0xffff_ffff));
    rng
}

/// Indices of the training sets used for one (shot, repeat) draw, ascending.
pub fn draw_indices(pool_len: usize, shots: usize, seed: u64, repeat: usize) -> Vec<usize> {
    let mut rng = draw_rng(seed, shots, repeat);
    let mut idx = rand::seq::index::sample(&mut rng, pool_len, shots).into_vec();
    idx.sort_unstable();
    idx
}

fn one_repeat(
    pool: &[PointPatternSet],
    test: &[(PointPatternSet, Label)],
    shots: usize,
    repeat: usize,
    seed: u64,
    config: &ScoringConfig,
) -> Result<(f64, Vec<String>)> {
    let chosen: Vec<&PointPatternSet> = draw_indices(pool.len(), shots, seed, repeat)
        .into_iter()
        .map(|i| &pool[i])
        .collect();
    let fit = fit_model_from(chosen.as_slice(), 1)?;
    let scored = test
        .iter()
        .enumerate()
        .map(|(i, (set, label))| {
            score_set(set, &fit.model, config)
                .map(|s| (config.orient(s), *label))
                .map_err(|e| Error::at(i, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let warnings = fit.warnings.iter().map(|w| w.to_string()).collect();
    Ok((auc(&scored)?, warnings))
}

/// Runs every (shot, repeat) combination of `plan`.
pub fn few_shot_experiment(
    pool: &[PointPatternSet],
    test: &[(PointPatternSet, Label)],
    plan: &FewShotPlan,
    config: &ScoringConfig,
) -> Result<Vec<FewShotResult>> {
    config.validate()?;
    if plan.repeats == 0 {
        return Err(Error::Evaluation("repeats must be at least 1".into()));
    }
    for &n in &plan.shots {
        if n == 0 || n > pool.len() {
            return Err(Error::Evaluation(format!(
                "cannot draw {n} training sets from a pool of {}",
                pool.len()
            )));
        }
    }
    let tasks: Vec<(usize, usize)> = plan
        .shots
        .iter()
        .flat_map(|&s| (0..plan.repeats).map(move |r| (s, r)))
        .collect();
    let outcomes = par_map(tasks.len(), plan.jobs, |t| {
        let (shots, repeat) = tasks[t];
        one_repeat(pool, test, shots, repeat, plan.seed, config)
            .map_err(|e| Error::Evaluation(format!("shots {shots}, repeat {repeat}: {e}")))
    });
    let mut outcomes = outcomes.into_iter();
    let mut results = Vec::with_capacity(plan.shots.len());
    for &shots in &plan.shots {
        let mut per_repeat = Vec::with_capacity(plan.repeats);
        let mut warnings: Vec<String> = Vec::new();
        for _ in 0..plan.repeats {
            let (a, ws) = outcomes.next().expect("one outcome per task")?;
            per_repeat.push(a);
            for w in ws {
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
        }
        let mean_auc = per_repeat.iter().sum::<f64>() / per_repeat.len() as f64;
        results.push(FewShotResult {
            shots,
            repeats: plan.repeats,
            seed: plan.seed,
            mean_auc,
            per_repeat_auc: per_repeat,
            warnings,
        });
    }
    Ok(results)
}

/// CSV with header `shots,repeat,auc`, one row per repeat.
pub fn write_few_shot_csv(path: impl AsRef<Path>, results: &[FewShotResult]) -> Result<()> {
    let mut s = String::from("shots,repeat,auc\n");
    for r in results {
        for (i, a) in r.per_repeat_auc.iter().enumerate() {
            writeln!(s, "{},{},{}", r.shots, i, super::format_g17(*a)).unwrap();
        }
    }
    fsutil::write_atomic(path.as_ref(), s.as_bytes())
}
