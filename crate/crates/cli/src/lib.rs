//! Command-line front end for `hudcalib`.
//!
//! ```text
//! hudcalib synth --seed 7 -o corpus
//! hudcalib evaluate --annotations corpus/annotations.json \
//!     --predictions corpus/predictions.jsonl --vocab corpus/vocab.txt -o report
//! hudcalib calibrate ... --objective kl
//! hudcalib case-study ... --question-id 17 --temperature 2
//! ```
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or input error. Failures
//! are reported on stderr as a single JSON line.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hudcalib::synth::SynthSpec;

use crate::config::{FitArgs, RunArgs, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "hudcalib",
    version,
    about = "Human-uncertainty evaluation and temperature calibration for multi-annotator VQA data"
)]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, env = "HUDCALIB_THREADS", global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predictions against human distributions at T = 1 and write the
    /// HUD split, statistics and per-sample records.
    Evaluate(EvaluateArgs),
    /// Fit a softmax temperature on a grid and compare metrics before and after.
    Calibrate(CalibrateArgs),
    /// Per-label human and model probabilities for one question.
    CaseStudy(CaseStudyArgs),
    /// Generate a synthetic corpus with known human distributions.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct CaseStudyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Question to break down.
    #[arg(long, value_name = "ID")]
    pub question_id: u64,
    /// Temperature for the calibrated column.
    #[arg(long, short = 't', default_value_t = 1.0, value_name = "T")]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// RNG seed; derived from the clock and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    /// Annotators per question.
    #[arg(long, default_value_t = 10)]
    pub annotators: usize,
    /// Fewest distinct human labels per question (at least 2).
    #[arg(long, default_value_t = 2)]
    pub labels_min: usize,
    #[arg(long, default_value_t = 5)]
    pub labels_max: usize,
    /// Weights of yes,maybe,no confidence labels.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.2, 0.1])]
    pub mix: Vec<f64>,
    /// Logit scale; above 1 the model is overconfident.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Standard deviation of Gaussian logit noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, short = 'o', value_name = "DIR")]
    pub output_dir: PathBuf,
}

impl SynthArgs {
    fn spec(&self) -> SynthSpec {
        SynthSpec {
            seed: 0,
            num_samples: self.samples,
            vocab_size: self.vocab_size,
            annotators_per_sample: self.annotators,
            labels_per_sample: (self.labels_min, self.labels_max),
            confidence_mix: [self.mix[0], self.mix[1], self.mix[2]],
            model_distortion: self.alpha,
            model_noise: self.sigma,
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    match threads {
        None | Some(0) => Ok(()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal("cannot start thread pool", e)),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Evaluate(a) => commands::cmd_evaluate(&RunConfig::resolve(a.run, FitArgs::default())?),
        Command::Calibrate(a) => commands::cmd_calibrate(&RunConfig::resolve(a.run, a.fit)?).map(drop),
        Command::CaseStudy(a) => {
            let cfg = RunConfig::resolve(a.run, FitArgs::default())?;
            commands::cmd_case_study(&cfg, a.question_id, a.temperature).map(drop)
        }
        Command::Synth(a) => commands::cmd_synth(a.spec(), a.seed, &a.output_dir).map(drop),
    }
}
