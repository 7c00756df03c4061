//! Temperature scaling and grid-search temperature fitting.
//!
//! Logits are divided by a scalar `T > 0` before the softmax. The fit
//! re-evaluates the corpus at every grid candidate and keeps the temperature
//! minimizing the chosen objective on one evaluation set (the whole corpus
//! by default). Candidates are scored in parallel; ties go to the smallest T.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hud::{EvalSet, PreparedSample, SplitAssignment};
use crate::ingest::Vocabulary;
use crate::metrics::{evaluate, EvalOptions, MetricRow, MetricsError, MetricsTable};

/// Tolerance on the step multiple when deciding whether `stop` is on the grid.
const GRID_MULTIPLE_TOL: f64 = 1e-9;

/// Absolute change below which a comparison cell counts as unchanged.
pub const UNCHANGED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum TemperatureError {
    #[error("temperature must be positive, got {0}")]
    NonPositive(f64),
    #[error("logit vector is empty")]
    EmptyLogits,
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrateError {
    #[error("invalid grid: start={start} stop={stop} step={step}")]
    InvalidGrid { start: f64, stop: f64, step: f64 },
    #[error("temperature grid is empty")]
    EmptyGrid,
    #[error("grid candidate {0} is not a positive temperature")]
    BadCandidate(f64),
    #[error("tables cover different sets or sample counts")]
    SetMismatch,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Temperature(#[from] TemperatureError),
}

/// Softmax of `logits / temperature`, computed with the maximum subtracted.
pub fn apply_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>, TemperatureError> {
    if !(temperature > 0.0) {
        return Err(TemperatureError::NonPositive(temperature));
    }
    let max = logits
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(TemperatureError::EmptyLogits)?;
    let mut out: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, TemperatureError> {
    apply_temperature(logits, 1.0)
}

/// `[start, start + step, ..]` up to `stop`. `stop` is included (exactly)
/// when `stop − start` is a whole multiple of `step`. Values are rounded to
/// 12 decimals so 0.1 + 10·0.05 prints as 0.6.
pub fn make_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, CalibrateError> {
    let valid = start > 0.0 && step > 0.0 && stop >= start && start.is_finite() && stop.is_finite();
    if !valid {
        return Err(CalibrateError::InvalidGrid { start, stop, step });
    }
    let multiple = (stop - start) / step;
    let count = (multiple + GRID_MULTIPLE_TOL).floor() as usize;
    let mut grid: Vec<f64> = (0..=count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect();
    grid[0] = start;
    if (multiple - multiple.round()).abs() < GRID_MULTIPLE_TOL {
        grid[count] = stop;
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "ECE")]
    Ece,
    #[serde(rename = "MeanKL")]
    MeanKl,
    #[serde(rename = "MeanTVD")]
    MeanTvd,
    #[serde(rename = "MeanEntCE")]
    MeanEntce,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Ece => "ECE",
            Objective::MeanKl => "MeanKL",
            Objective::MeanTvd => "MeanTVD",
            Objective::MeanEntce => "MeanEntCE",
        }
    }

    pub fn score(self, row: &MetricRow) -> f64 {
        match self {
            Objective::Ece => row.ece,
            Objective::MeanKl => row.kl,
            Objective::MeanTvd => row.tvd,
            Objective::MeanEntce => row.entce,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ece" => Ok(Objective::Ece),
            "kl" | "meankl" => Ok(Objective::MeanKl),
            "tvd" | "meantvd" => Ok(Objective::MeanTvd),
            "entce" | "meanentce" => Ok(Objective::MeanEntce),
            _ => Err(format!("unknown objective {s:?} (expected ece, kl, tvd or entce)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub objective: Objective,
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub best_score: f64,
    /// The best temperature is the largest grid candidate; the optimum may
    /// lie beyond the grid.
    pub saturated: bool,
}

/// Picks the minimal score; ties go to the smaller temperature.
pub(crate) fn select_best(grid: &[f64], scores: &[f64]) -> Option<(f64, f64)> {
    grid.iter()
        .zip(scores)
        .fold(None, |best: Option<(f64, f64)>, (&t, &s)| match best {
            Some((bt, bs)) if bs < s || (bs == s && bt <= t) => Some((bt, bs)),
            _ => Some((t, s)),
        })
}

pub fn fit_temperature(
    samples: &[PreparedSample],
    vocab: &Vocabulary,
    split: &SplitAssignment,
    objective: Objective,
    grid: &[f64],
    opts: &EvalOptions,
    scope: EvalSet,
) -> Result<TemperatureFit, CalibrateError> {
    if grid.is_empty() {
        return Err(CalibrateError::EmptyGrid);
    }
    if let Some(&bad) = grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(CalibrateError::BadCandidate(bad));
    }
    let scores = grid
        .par_iter()
        .map(|&t| {
            let eval = evaluate(samples, vocab, split, t, opts)?;
            let row = eval.table.row(scope).ok_or(MetricsError::EmptySet(scope))?;
            Ok(objective.score(row))
        })
        .collect::<Result<Vec<f64>, MetricsError>>()?;

    let (temperature, best_score) = select_best(grid, &scores).ok_or(CalibrateError::EmptyGrid)?;
    let max = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TemperatureFit {
        temperature,
        objective,
        grid: grid.to_vec(),
        scores,
        best_score,
        saturated: temperature == max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    VqaAcc,
    Tvd,
    Kl,
    Entce,
    Ece,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::VqaAcc, Metric::Tvd, Metric::Kl, Metric::Entce, Metric::Ece];

    pub fn name(self) -> &'static str {
        match self {
            Metric::VqaAcc => "VQA-Acc",
            Metric::Tvd => "TVD",
            Metric::Kl => "KL(H||M)",
            Metric::Entce => "EntCE",
            Metric::Ece => "ECE",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::VqaAcc
    }

    pub fn value(self, row: &MetricRow) -> f64 {
        match self {
            Metric::VqaAcc => row.vqa_acc,
            Metric::Tvd => row.tvd,
            Metric::Kl => row.kl,
            Metric::Entce => row.entce,
            Metric::Ece => row.ece,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Improved,
    Worsened,
    Unchanged,
}

impl Direction {
    pub fn classify(metric: Metric, before: f64, after: f64) -> Self {
        let delta = after - before;
        if delta.abs() < UNCHANGED_TOL {
            Direction::Unchanged
        } else if (delta > 0.0) == metric.higher_is_better() {
            Direction::Improved
        } else {
            Direction::Worsened
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            Direction::Improved => "(+)",
            Direction::Worsened => "(-)",
            Direction::Unchanged => "(=)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub set: EvalSet,
    pub metric: Metric,
    pub before: f64,
    pub after: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Set-major, metrics in `Metric::ALL` order.
    pub cells: Vec<ComparisonCell>,
}

impl Comparison {
    pub fn cell(&self, set: EvalSet, metric: Metric) -> Option<&ComparisonCell> {
        self.cells.iter().find(|c| c.set == set && c.metric == metric)
    }
}

pub fn calibration_report(before: &MetricsTable, after: &MetricsTable) -> Result<Comparison, CalibrateError> {
    if before.rows.len() != after.rows.len() {
        return Err(CalibrateError::SetMismatch);
    }
    let mut cells = Vec::with_capacity(before.rows.len() * Metric::ALL.len());
    for (b, a) in before.rows.iter().zip(&after.rows) {
        if b.set != a.set || b.sample_count != a.sample_count {
            return Err(CalibrateError::SetMismatch);
        }
        for metric in Metric::ALL {
            let (vb, va) = (metric.value(b), metric.value(a));
            cells.push(ComparisonCell {
                set: b.set,
                metric,
                before: vb,
                after: va,
                direction: Direction::classify(metric, vb, va),
            });
        }
    }
    Ok(Comparison { cells })
}
