//! Run configuration: command-line flags layered over an optional TOML
//! file, then over built-in defaults. Flags win on conflict.

use std::path::{Path, PathBuf};

use clap::Args;
use hudcalib::calibrate::Objective;
use hudcalib::hud::{ConfidenceScale, EvalSet};
use hudcalib::ingest::JoinPolicy;
use hudcalib::metrics::{EvalOptions, SupportPolicy};
use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_GRID: (f64, f64, f64) = (0.1, 2.0, 0.05);
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

/// Flags shared by evaluate, calibrate and case-study.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file with any of the settings below; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Annotation file (JSON array).
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    /// Prediction file (JSON lines with question_id and logits).
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
    /// Answer vocabulary, one entry per line.
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Directory for report files (created if missing).
    #[arg(long, short = 'o', value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// How to treat ids present in only one input: strict | intersect [default: strict].
    #[arg(long, value_name = "POLICY")]
    pub join: Option<String>,
    /// Values for yes,maybe,no [default: 1.0,0.5,0.01].
    #[arg(long, value_name = "YES,MAYBE,NO", value_delimiter = ',', num_args = 3)]
    pub confidence_values: Option<Vec<f64>>,
    /// Number of equal-width ECE bins [default: 10].
    #[arg(long, value_name = "N")]
    pub ece_bins: Option<usize>,
    /// Probability floor applied before divergences [default: 1e-8].
    #[arg(long, value_name = "X")]
    pub floor: Option<f64>,
    /// Number of HUD histogram bins [default: 20].
    #[arg(long, value_name = "N")]
    pub histogram_bins: Option<usize>,
    /// Divergence support: human-labels | residual-bin [default: human-labels].
    #[arg(long, value_name = "POLICY")]
    pub support: Option<String>,
}

/// Extra flags of the calibrate command.
#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    /// Fitting objective: ece | kl | tvd | entce | none [default: kl].
    #[arg(long, value_name = "NAME")]
    pub objective: Option<String>,
    /// First grid temperature [default: 0.1].
    #[arg(long, value_name = "T")]
    pub grid_start: Option<f64>,
    /// Last grid temperature [default: 2.0].
    #[arg(long, value_name = "T")]
    pub grid_stop: Option<f64>,
    /// Grid spacing [default: 0.05].
    #[arg(long, value_name = "T")]
    pub grid_step: Option<f64>,
    /// Set whose metrics the objective is computed on: all | low | medium | high [default: all].
    #[arg(long, value_name = "SET")]
    pub scope: Option<String>,
}

/// Settings file layout. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub annotations: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub join: Option<String>,
    pub confidence_values: Option<Vec<f64>>,
    pub ece_bins: Option<usize>,
    pub floor: Option<f64>,
    pub histogram_bins: Option<usize>,
    pub support: Option<String>,
    pub objective: Option<String>,
    pub grid: Option<[f64; 3]>,
    pub scope: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage("config not found", format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage("invalid config", e.message()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub annotation_path: PathBuf,
    pub prediction_path: PathBuf,
    pub vocabulary_path: PathBuf,
    pub output_dir: PathBuf,
    pub join_policy: JoinPolicy,
    pub scale: ConfidenceScale,
    pub grid: (f64, f64, f64),
    /// `None` when the objective is explicitly "none".
    pub objective: Option<Objective>,
    pub scope: EvalSet,
    pub eval: EvalOptions,
    pub histogram_bins: usize,
}

fn required(flag: Option<PathBuf>, file: Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::usage("missing setting", format!("--{name} is required")))
}

fn parse_with<T>(
    value: Option<String>,
    what: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Option<T>, CliError> {
    value
        .map(|v| parse(&v).map_err(|e| CliError::usage(format!("invalid {what}"), e)))
        .transpose()
}

pub fn parse_support(s: &str) -> Result<SupportPolicy, String> {
    match s {
        "human-labels" | "human" => Ok(SupportPolicy::HumanLabels),
        "residual-bin" | "residual" => Ok(SupportPolicy::ResidualBin),
        other => Err(format!(
            "unknown support policy {other:?} (expected human-labels or residual-bin)"
        )),
    }
}

/// `Ok(None)` for "none".
pub fn parse_objective(s: &str) -> Result<Option<Objective>, String> {
    if s.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

impl RunConfig {
    pub fn resolve(run: RunArgs, fit: FitArgs) -> Result<Self, CliError> {
        let file = match &run.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };

        let scale = match run.confidence_values.or(file.confidence_values) {
            None => ConfidenceScale::default(),
            Some(v) if v.len() == 3 => {
                ConfidenceScale::new(v[0], v[1], v[2]).map_err(|e| CliError::usage("invalid confidence values", e))?
            }
            Some(v) => {
                return Err(CliError::usage(
                    "invalid confidence values",
                    format!("expected 3 values, got {}", v.len()),
                ))
            }
        };

        let defaults = EvalOptions::default();
        let floor = run.floor.or(file.floor).unwrap_or(defaults.floor);
        if !(floor > 0.0 && floor < 1.0) {
            return Err(CliError::usage("invalid floor", format!("{floor} is not in (0, 1)")));
        }
        let ece_bins = run.ece_bins.or(file.ece_bins).unwrap_or(defaults.ece_bins);
        if ece_bins == 0 {
            return Err(CliError::usage("invalid ece bins", "need at least one bin"));
        }
        let histogram_bins = run
            .histogram_bins
            .or(file.histogram_bins)
            .unwrap_or(DEFAULT_HISTOGRAM_BINS);
        if histogram_bins == 0 {
            return Err(CliError::usage("invalid histogram bins", "need at least one bin"));
        }
        let support = parse_with(run.support.or(file.support), "support policy", parse_support)?.unwrap_or_default();

        let file_grid = file.grid.map(|g| (g[0], g[1], g[2]));
        let (start, stop, step) = file_grid.unwrap_or(DEFAULT_GRID);
        let grid = (
            fit.grid_start.unwrap_or(start),
            fit.grid_stop.unwrap_or(stop),
            fit.grid_step.unwrap_or(step),
        );

        Ok(Self {
            annotation_path: required(run.annotations, file.annotations, "annotations")?,
            prediction_path: required(run.predictions, file.predictions, "predictions")?,
            vocabulary_path: required(run.vocab, file.vocab, "vocab")?,
            output_dir: required(run.output_dir, file.output_dir, "output-dir")?,
            join_policy: parse_with(run.join.or(file.join), "join policy", |s| s.parse())?.unwrap_or_default(),
            scale,
            grid,
            objective: parse_with(fit.objective.or(file.objective), "objective", parse_objective)?
                .unwrap_or(Some(Objective::MeanKl)),
            scope: parse_with(fit.scope.or(file.scope), "scope", |s| s.parse())?.unwrap_or(EvalSet::All),
            eval: EvalOptions {
                floor,
                ece_bins,
                support,
            },
            histogram_bins,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunArgs {
        RunArgs {
            annotations: Some("a.json".into()),
            predictions: Some("p.jsonl".into()),
            vocab: Some("v.txt".into()),
            output_dir: Some("out".into()),
            ..RunArgs::default()
        }
    }

    #[test]
    fn defaults() {
        let c = RunConfig::resolve(base(), FitArgs::default()).unwrap();
        assert_eq!(c.join_policy, JoinPolicy::Strict);
        assert_eq!(c.scale, ConfidenceScale::default());
        assert_eq!(c.grid, (0.1, 2.0, 0.05));
        assert_eq!(c.objective, Some(Objective::MeanKl));
        assert_eq!(c.scope, EvalSet::All);
        assert_eq!(c.eval, EvalOptions::default());
        assert_eq!(c.histogram_bins, 20);
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("hudcalib-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(
            &path,
            "objective = \"ece\"\njoin = \"intersect\"\ngrid = [0.5, 1.5, 0.1]\nece_bins = 15\nvocab = \"file_vocab.txt\"\n",
        )
        .unwrap();
        let run = RunArgs {
            config: Some(path),
            ece_bins: Some(5),
            ..base()
        };
        let fit = FitArgs {
            grid_step: Some(0.25),
            ..FitArgs::default()
        };
        let c = RunConfig::resolve(run, fit).unwrap();
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(c.objective, Some(Objective::Ece));
        assert_eq!(c.join_policy, JoinPolicy::Intersect);
        assert_eq!(c.grid, (0.5, 1.5, 0.25));
        assert_eq!(c.eval.ece_bins, 5);
        assert_eq!(c.vocabulary_path, PathBuf::from("v.txt"));
    }

    #[test]
    fn rejects_bad_values() {
        let fit = FitArgs {
            objective: Some("none".into()),
            ..FitArgs::default()
        };
        assert_eq!(RunConfig::resolve(base(), fit).unwrap().objective, None);

        for run in [
            RunArgs {
                join: Some("outer".into()),
                ..base()
            },
            RunArgs {
                floor: Some(0.0),
                ..base()
            },
            RunArgs {
                confidence_values: Some(vec![1.0, 0.5, 0.0]),
                ..base()
            },
            RunArgs { vocab: None, ..base() },
        ] {
            assert_eq!(RunConfig::resolve(run, FitArgs::default()).unwrap_err().exit, 2);
        }
    }
}
