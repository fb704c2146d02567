//! `rfs-energy` command line.
//!
//! Exit codes: 0 success, 1 domain error (diagnostic on stderr), 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};

use crate::error::Result;
use crate::estimation::{fit_model_from, ModelParams};
use crate::evaluation::{
    evaluate_category, few_shot_experiment, format_g17, write_few_shot_csv, write_roc_csv,
    FewShotPlan,
};
use crate::fsutil;
use crate::manifest::read_manifest;
use crate::ppf::read_ppf;
use crate::scoring::{score_set, Orientation, ScoreMethod, ScoringConfig};
use crate::source::PpfFiles;
use crate::synthetic::{generate_dataset, SyntheticConfig};

#[derive(Debug, Parser)]
#[command(
    name = "rfs-energy",
    version,
    about = "Poisson RFS energy anomaly scoring of descriptor sets"
)]
struct Cli {
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model from the train split of a manifest.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score PPF files; one value per line.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[command(flatten)]
        scoring: ScoringArgs,
    },
    /// Evaluate the test split of a manifest and report AUC.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
        /// JSON report output.
        #[arg(long)]
        report: Option<PathBuf>,
        /// ROC CSV output (threshold,fpr,tpr).
        #[arg(long)]
        roc: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Few-shot experiment: fit on n drawn train sets, evaluate, repeat.
    Fewshot {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10,16")]
        shots: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        scoring: ScoringArgs,
        /// JSON results output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV output (shots,repeat,auc).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Generate a synthetic corpus (PPF files + manifest.json).
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        test_normal: usize,
        #[arg(long, default_value_t = 100)]
        test_anomalous: usize,
    },
}

#[derive(Debug, Args)]
struct ScoringArgs {
    #[arg(long, default_value = "energy")]
    method: ScoreMethod,
    /// Percent of largest squared distances kept in the energy feature term.
    #[arg(long = "topk", default_value_t = 100.0)]
    top_k: f64,
    /// AS sums squared distances instead of distances.
    #[arg(long)]
    as_squared: bool,
    /// Use the raw log-likelihood as the anomaly score (no negation).
    #[arg(long)]
    loglik_raw: bool,
}

impl ScoringArgs {
    fn config(&self) -> Result<ScoringConfig> {
        let cfg = ScoringConfig {
            method: self.method,
            top_k_percent: self.top_k,
            as_squared: self.as_squared,
            orientation: if self.loglik_raw {
                Orientation::Raw
            } else {
                Orientation::Standard
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `argv` (program name first), runs the subcommand, returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(if cli.verbose {
            LevelFilter::Info
        } else {
            LevelFilter::Warn
        })
        .format_timestamp(None)
        .format_target(false)
        .try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn print_line(s: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{s}");
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Fit {
            manifest,
            out,
            jobs,
        } => {
            let m = read_manifest(&manifest)?;
            let files = PpfFiles(
                m.train_for_fitting()?
                    .iter()
                    .map(|i| i.path.clone())
                    .collect(),
            );
            let fit = fit_model_from(&files, jobs)?;
            fit.model.save(&out)?;
            info!(
                "fit {} sets / {} points: rho {} alpha {}",
                fit.model.n_train_sets(),
                fit.model.n_train_points(),
                fit.model.rho(),
                fit.model.alpha()
            );
        }
        Command::Score {
            model,
            input,
            scoring,
        } => {
            let cfg = scoring.config()?;
            let model = ModelParams::load(&model)?;
            let single = input.len() == 1;
            for path in &input {
                let set = read_ppf(path)?;
                let s = score_set(&set, &model, &cfg)?;
                if single {
                    print_line(&format_g17(s));
                } else {
                    print_line(&format!("{}\t{}", path.display(), format_g17(s)));
                }
            }
        }
        Command::Eval {
            model,
            manifest,
            scoring,
            report,
            roc,
            jobs,
        } => {
            let cfg = scoring.config()?;
            let model = ModelParams::load(&model)?;
            let m = read_manifest(&manifest)?;
            let test: Vec<_> = m.test().cloned().collect();
            let r = evaluate_category(&m.category, &model, &test, &cfg, jobs)?;
            if let Some(p) = report {
                r.save(p)?;
            }
            if let Some(p) = roc {
                write_roc_csv(p, &r.roc)?;
            }
            print_line(&format_g17(r.auc));
        }
        Command::Fewshot {
            manifest,
            shots,
            repeats,
            seed,
            scoring,
            out,
            csv,
            jobs,
        } => {
            let cfg = scoring.config()?;
            let m = read_manifest(&manifest)?;
            let pool = m
                .train_for_fitting()?
                .iter()
                .map(|i| read_ppf(&i.path))
                .collect::<Result<Vec<_>>>()?;
            let test = m
                .test()
                .map(|i| read_ppf(&i.path).map(|s| (s, i.label)))
                .collect::<Result<Vec<_>>>()?;
            let plan = FewShotPlan {
                shots,
                repeats,
                seed,
                jobs,
            };
            let results = few_shot_experiment(&pool, &test, &plan, &cfg)?;
            if let Some(p) = out {
                fsutil::write_json_atomic(&p, &results)?;
            }
            if let Some(p) = csv {
                write_few_shot_csv(p, &results)?;
            }
            for r in &results {
                for w in &r.warnings {
                    log::warn!("{} shot(s): {w}", r.shots);
                }
                print_line(&format!("{}\t{}", r.shots, format_g17(r.mean_auc)));
            }
        }
        Command::Synth {
            config,
            out,
            seed,
            train,
            test_normal,
            test_anomalous,
        } => {
            let mut cfg = SyntheticConfig::load(&config)?;
            cfg.seed = seed;
            let m = generate_dataset(&cfg, train, test_normal, test_anomalous, &out)?;
            info!("wrote {} items to {}", m.items.len(), out.display());
        }
    }
    Ok(())
}
