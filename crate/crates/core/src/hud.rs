//! Human confidence distributions, HUD scores and the tercile split.
//!
//! Each annotator's confidence label is quantized (yes/maybe/no to
//! 1.0/0.5/0.01 by default). Annotations are grouped by response; a label's
//! mean confidence is the average over its annotators, the HUD score is the
//! unweighted mean over labels, and the human distribution is the vector of
//! mean confidences normalized to sum to one.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AnnotatedSample, ConfidenceLabel, EvalSample};

#[derive(Debug, Error, PartialEq)]
pub enum HudError {
    #[error("sample question_id={0} has no annotations")]
    NoAnnotations(u64),
    #[error("tercile split needs at least 3 samples, got {0}")]
    TooFewSamples(usize),
    #[error("duplicate question_id {0} in split input")]
    DuplicateId(u64),
    #[error("non-finite HUD score for question_id={0}")]
    NonFiniteScore(u64),
    #[error("confidence value for {label} must be in (0, 1], got {value}")]
    InvalidScale { label: ConfidenceLabel, value: f64 },
    #[error("histogram needs at least one bin")]
    NoBins,
}

/// Numeric value assigned to each confidence label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScale {
    pub yes: f64,
    pub maybe: f64,
    pub no: f64,
}

impl Default for ConfidenceScale {
    fn default() -> Self {
        Self {
            yes: 1.0,
            maybe: 0.5,
            no: 0.01,
        }
    }
}

impl ConfidenceScale {
    pub fn new(yes: f64, maybe: f64, no: f64) -> Result<Self, HudError> {
        let scale = Self { yes, maybe, no };
        for label in [ConfidenceLabel::Yes, ConfidenceLabel::Maybe, ConfidenceLabel::No] {
            let value = scale.quantify(label);
            if !(value > 0.0 && value <= 1.0) {
                return Err(HudError::InvalidScale { label, value });
            }
        }
        Ok(scale)
    }

    pub fn quantify(&self, label: ConfidenceLabel) -> f64 {
        match label {
            ConfidenceLabel::Yes => self.yes,
            ConfidenceLabel::Maybe => self.maybe,
            ConfidenceLabel::No => self.no,
        }
    }
}

/// Quantizes a label with the default scale.
pub fn quantify_confidence(label: ConfidenceLabel) -> f64 {
    ConfidenceScale::default().quantify(label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanDistribution {
    /// Distinct responses in first-appearance order.
    pub labels: Vec<String>,
    pub mean_confidence: Vec<f64>,
    pub probs: Vec<f64>,
    pub hud_score: f64,
}

impl HumanDistribution {
    pub fn label_count(&self) -> usize {
        self.labels.len()
    }
}

pub fn build_human_distribution(
    sample: &AnnotatedSample,
    scale: &ConfidenceScale,
) -> Result<HumanDistribution, HudError> {
    if sample.annotations.is_empty() {
        return Err(HudError::NoAnnotations(sample.question_id));
    }

    let mut labels: Vec<String> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for a in &sample.annotations {
        let value = scale.quantify(a.confidence);
        match labels.iter().position(|l| *l == a.response) {
            Some(i) => {
                sums[i] += value;
                counts[i] += 1;
            }
            None => {
                labels.push(a.response.clone());
                sums.push(value);
                counts.push(1);
            }
        }
    }

    let mean_confidence: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let total: f64 = mean_confidence.iter().sum();
    let probs = mean_confidence.iter().map(|m| m / total).collect();
    let hud_score = total / mean_confidence.len() as f64;

    Ok(HumanDistribution {
        labels,
        mean_confidence,
        probs,
        hud_score,
    })
}

/// An evaluable sample paired with its human distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub eval: EvalSample,
    pub human: HumanDistribution,
}

impl PreparedSample {
    pub fn question_id(&self) -> u64 {
        self.eval.question_id()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<PreparedSample>,
    pub removed: usize,
}

/// Drops samples whose annotators all gave the same response; they carry no
/// distribution to compare against.
pub fn filter_single_label(samples: Vec<PreparedSample>) -> FilterOutcome {
    let total = samples.len();
    let kept: Vec<PreparedSample> = samples.into_iter().filter(|s| s.human.label_count() >= 2).collect();
    FilterOutcome {
        removed: total - kept.len(),
        kept,
    }
}

/// HUD level of a sample. `Low` holds the highest HUD scores (annotators most
/// certain), `High` the lowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HudLevel {
    Low,
    Medium,
    High,
}

impl HudLevel {
    pub const ALL: [HudLevel; 3] = [HudLevel::Low, HudLevel::Medium, HudLevel::High];

    pub fn as_str(self) -> &'static str {
        match self {
            HudLevel::Low => "low",
            HudLevel::Medium => "medium",
            HudLevel::High => "high",
        }
    }
}

impl fmt::Display for HudLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HudLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(HudLevel::Low),
            "medium" | "med" => Ok(HudLevel::Medium),
            "high" => Ok(HudLevel::High),
            other => Err(format!("unknown HUD level {other:?}")),
        }
    }
}

/// A report row key: the whole filtered corpus or one tercile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSet {
    All,
    Low,
    Medium,
    High,
}

impl EvalSet {
    pub const ROWS: [EvalSet; 4] = [EvalSet::All, EvalSet::Low, EvalSet::Medium, EvalSet::High];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalSet::All => "all",
            EvalSet::Low => "low",
            EvalSet::Medium => "medium",
            EvalSet::High => "high",
        }
    }

    pub fn contains(self, level: HudLevel) -> bool {
        match self {
            EvalSet::All => true,
            other => other == EvalSet::from(level),
        }
    }
}

impl From<HudLevel> for EvalSet {
    fn from(level: HudLevel) -> Self {
        match level {
            HudLevel::Low => EvalSet::Low,
            HudLevel::Medium => EvalSet::Medium,
            HudLevel::High => EvalSet::High,
        }
    }
}

impl fmt::Display for EvalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(EvalSet::All),
            other => other.parse::<HudLevel>().map(EvalSet::from),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitEntry {
    pub question_id: u64,
    pub hud_score: f64,
    pub level: HudLevel,
}

/// Assignment of every sample to a HUD level.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    /// Entries sorted by descending HUD score, ties by ascending id.
    entries: Vec<SplitEntry>,
    lookup: HashMap<u64, HudLevel>,
}

impl SplitAssignment {
    pub fn entries(&self) -> &[SplitEntry] {
        &self.entries
    }

    pub fn level(&self, question_id: u64) -> Option<HudLevel> {
        self.lookup.get(&question_id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn members(&self, level: HudLevel) -> impl Iterator<Item = &SplitEntry> {
        self.entries.iter().filter(move |e| e.level == level)
    }

    /// Sizes of the (Low, Medium, High) sets.
    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |level| self.members(level).count();
        (count(HudLevel::Low), count(HudLevel::Medium), count(HudLevel::High))
    }

    /// HUD-score thresholds between Low/Medium and Medium/High, each the
    /// midpoint of the two scores adjacent to the cut.
    pub fn boundaries(&self) -> [f64; 2] {
        let (low, medium, _) = self.sizes();
        let cut = |at: usize| (self.entries[at - 1].hud_score + self.entries[at].hud_score) / 2.0;
        [cut(low), cut(low + medium)]
    }
}

/// Set sizes for `n` samples: Low gets ⌈n/3⌉, Medium ⌈rest/2⌉, High the rest.
pub fn tercile_sizes(n: usize) -> (usize, usize, usize) {
    let low = n.div_ceil(3);
    let medium = (n - low).div_ceil(2);
    (low, medium, n - low - medium)
}

pub fn split_terciles(scores: &[(u64, f64)]) -> Result<SplitAssignment, HudError> {
    if scores.len() < 3 {
        return Err(HudError::TooFewSamples(scores.len()));
    }
    let mut lookup = HashMap::with_capacity(scores.len());
    for &(id, score) in scores {
        if !score.is_finite() {
            return Err(HudError::NonFiniteScore(id));
        }
        if lookup.insert(id, HudLevel::Low).is_some() {
            return Err(HudError::DuplicateId(id));
        }
    }

    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let (low, medium, _) = tercile_sizes(sorted.len());
    let entries: Vec<SplitEntry> = sorted
        .into_iter()
        .enumerate()
        .map(|(rank, (question_id, hud_score))| {
            let level = if rank < low {
                HudLevel::Low
            } else if rank < low + medium {
                HudLevel::Medium
            } else {
                HudLevel::High
            };
            lookup.insert(question_id, level);
            SplitEntry {
                question_id,
                hud_score,
                level,
            }
        })
        .collect();

    Ok(SplitAssignment { entries, lookup })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SetStatistics {
    pub sample_count: usize,
    pub mean_label_count: f64,
    pub mean_hud: f64,
    /// Population standard deviation.
    pub std_hud: f64,
}

/// Summary over `(label_count, hud_score)` pairs.
pub fn summarize(items: &[(usize, f64)]) -> SetStatistics {
    let n = items.len();
    if n == 0 {
        return SetStatistics {
            sample_count: 0,
            mean_label_count: 0.0,
            mean_hud: 0.0,
            std_hud: 0.0,
        };
    }
    let nf = n as f64;
    let mean_label_count = items.iter().map(|&(c, _)| c as f64).sum::<f64>() / nf;
    let mean_hud = items.iter().map(|&(_, h)| h).sum::<f64>() / nf;
    let variance = items.iter().map(|&(_, h)| (h - mean_hud).powi(2)).sum::<f64>() / nf;
    SetStatistics {
        sample_count: n,
        mean_label_count,
        mean_hud,
        std_hud: variance.sqrt(),
    }
}

/// Uniform-bin histogram over [0, 1], the last bin closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn unit_interval(values: impl IntoIterator<Item = f64>, bins: usize) -> Result<Self, HudError> {
        if bins == 0 {
            return Err(HudError::NoBins);
        }
        let mut counts = vec![0; bins];
        for v in values {
            counts[unit_bin(v, bins)] += 1;
        }
        let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        Ok(Self { edges, counts })
    }
}

/// Index of the bin `[i/bins, (i+1)/bins)` holding `x`; values at or above
/// 1.0 land in the last bin, values below 0 in the first.
pub(crate) fn unit_bin(x: f64, bins: usize) -> usize {
    if !(x > 0.0) {
        return 0;
    }
    let mut i = ((x * bins as f64).floor() as usize).min(bins - 1);
    // x * bins can round across an edge; settle against the exact edges.
    if i > 0 && x < i as f64 / bins as f64 {
        i -= 1;
    } else if i + 1 < bins && x >= (i + 1) as f64 / bins as f64 {
        i += 1;
    }
    i
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HudStatistics {
    /// Rows in `EvalSet::ROWS` order.
    pub sets: Vec<(EvalSet, SetStatistics)>,
    pub histogram: Histogram,
    pub boundaries: [f64; 2],
}

impl HudStatistics {
    pub fn get(&self, set: EvalSet) -> Option<&SetStatistics> {
        self.sets.iter().find(|(s, _)| *s == set).map(|(_, st)| st)
    }
}

/// Per-set label-count and HUD-score statistics plus histogram data for the
/// HUD-score distribution plot.
pub fn hud_statistics(
    samples: &[PreparedSample],
    split: &SplitAssignment,
    histogram_bins: usize,
) -> Result<HudStatistics, HudError> {
    let mut per_level: HashMap<HudLevel, Vec<(usize, f64)>> = HashMap::new();
    let mut all = Vec::with_capacity(samples.len());
    let mut ordered: Vec<&PreparedSample> = samples.iter().collect();
    ordered.sort_by_key(|s| s.question_id());
    for s in ordered {
        let item = (s.human.label_count(), s.human.hud_score);
        all.push(item);
        if let Some(level) = split.level(s.question_id()) {
            per_level.entry(level).or_default().push(item);
        }
    }

    let mut sets = vec![(EvalSet::All, summarize(&all))];
    for level in HudLevel::ALL {
        let items = per_level.remove(&level).unwrap_or_default();
        sets.push((level.into(), summarize(&items)));
    }

    Ok(HudStatistics {
        sets,
        histogram: Histogram::unit_interval(all.iter().map(|&(_, h)| h), histogram_bins)?,
        boundaries: split.boundaries(),
    })
}
