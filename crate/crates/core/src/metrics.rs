//! Human-correlated evaluation: VQA-Accuracy, total variation distance,
//! KL(human ‖ model), entropy calibration error and expected calibration
//! error, reduced per HUD set.
//!
//! Divergences are measured on the sample's human label set. The model's
//! full-vocabulary distribution is restricted to those labels, floored and
//! renormalized (see [`align_support`]). All logarithms are natural.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{apply_temperature, TemperatureError};
use crate::hud::{unit_bin, EvalSet, HudLevel, HumanDistribution, PreparedSample, SplitAssignment};
use crate::ingest::{AnnotatedSample, Vocabulary};

/// Annotator count at which VQA-Accuracy saturates.
const VQA_FULL_CREDIT: f64 = 3.0;

/// Label used for the residual-mass entry under [`SupportPolicy::ResidualBin`].
pub const RESIDUAL_LABEL: &str = "<other>";

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("probability vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("model probability is zero at index {0}")]
    ZeroProbability(usize),
    #[error("no samples to evaluate")]
    EmptySamples,
    #[error("ECE needs at least one bin")]
    ZeroBins,
    #[error("evaluation set {0} is empty")]
    EmptySet(EvalSet),
    #[error("question_id={0} has no HUD level in the split")]
    Unassigned(u64),
    #[error(transparent)]
    Temperature(#[from] TemperatureError),
}

/// Which labels a sample's divergences are measured over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportPolicy {
    /// The sample's distinct human labels only.
    #[default]
    HumanLabels,
    /// Human labels plus one entry holding the model's remaining mass.
    ResidualBin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub floor: f64,
    pub ece_bins: usize,
    pub support: SupportPolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            floor: 1e-8,
            ece_bins: 10,
            support: SupportPolicy::HumanLabels,
        }
    }
}

/// Human and model distributions over a common support.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub support: Vec<String>,
    pub human: Vec<f64>,
    pub model: Vec<f64>,
    /// Human labels missing from the vocabulary.
    pub absent: usize,
}

fn floor_and_normalize(v: &mut [f64], floor: f64) {
    for x in v.iter_mut() {
        *x = x.max(floor);
    }
    let total: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Restricts a full-vocabulary model distribution to the human labels.
///
/// Labels absent from the vocabulary receive `floor`. Both vectors are then
/// floored at `floor` and renormalized, which keeps KL finite.
pub fn align_support(
    hd: &HumanDistribution,
    probs_over_vocab: &[f64],
    vocab: &Vocabulary,
    floor: f64,
    policy: SupportPolicy,
) -> AlignedPair {
    let mut support = hd.labels.clone();
    let mut human = hd.probs.clone();
    let mut absent = 0;
    let mut model: Vec<f64> = hd
        .labels
        .iter()
        .map(|label| match vocab.index_of(label) {
            Some(i) => probs_over_vocab[i],
            None => {
                absent += 1;
                floor
            }
        })
        .collect();

    if policy == SupportPolicy::ResidualBin {
        let matched: f64 = hd
            .labels
            .iter()
            .filter_map(|label| vocab.index_of(label))
            .map(|i| probs_over_vocab[i])
            .sum();
        support.push(RESIDUAL_LABEL.to_string());
        human.push(0.0);
        model.push((1.0 - matched).max(0.0));
    }

    floor_and_normalize(&mut human, floor);
    floor_and_normalize(&mut model, floor);
    AlignedPair {
        support,
        human,
        model,
        absent,
    }
}

/// Shannon entropy in nats, with 0·ln 0 = 0.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn check_lengths(p: &[f64], q: &[f64]) -> Result<(), MetricsError> {
    if p.len() == q.len() {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch(p.len(), q.len()))
    }
}

/// Total variation distance, ½ Σ |pᵢ − qᵢ|.
pub fn tvd(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(p, q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// KL(p ‖ q) with `p` the reference (human) distribution.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(p, q)?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if qi == 0.0 {
            return Err(MetricsError::ZeroProbability(i));
        }
        if pi > 0.0 {
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total)
}

/// H(model) − H(human); positive when the model is more spread out.
pub fn entce_signed(human: &[f64], model: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(human, model)?;
    Ok(entropy(model) - entropy(human))
}

/// |H(model) − H(human)|.
pub fn entce(human: &[f64], model: &[f64]) -> Result<f64, MetricsError> {
    entce_signed(human, model).map(f64::abs)
}

/// min(#annotators who gave `predicted` / 3, 1).
pub fn vqa_accuracy(predicted: &str, sample: &AnnotatedSample) -> f64 {
    let matches = sample.annotations.iter().filter(|a| a.response == predicted).count();
    (matches as f64 / VQA_FULL_CREDIT).min(1.0)
}

/// Expected calibration error over `(confidence, accuracy)` pairs with
/// `bins` equal-width bins on [0, 1].
pub fn ece(samples: &[(f64, f64)], bins: usize) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    if bins == 0 {
        return Err(MetricsError::ZeroBins);
    }
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut acc = vec![0.0; bins];
    for &(c, a) in samples {
        let b = unit_bin(c, bins);
        count[b] += 1;
        conf[b] += c;
        acc[b] += a;
    }
    let n = samples.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let k = count[b] as f64;
            (k / n) * (acc[b] / k - conf[b] / k).abs()
        })
        .sum())
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Order-fixed pairwise summation.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        values.iter().sum()
    } else {
        let (left, right) = values.split_at(values.len() / 2);
        pairwise_sum(left) + pairwise_sum(right)
    }
}

/// Everything computed for one sample at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub question_id: u64,
    pub set: HudLevel,
    pub hud_score: f64,
    pub support: Vec<String>,
    pub human: Vec<f64>,
    pub model: Vec<f64>,
    pub tvd: f64,
    pub kl: f64,
    pub entce_signed: f64,
    pub vqa_acc: f64,
    pub confidence: f64,
    #[serde(skip)]
    pub predicted: String,
    #[serde(skip)]
    pub absent_labels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub set: EvalSet,
    pub vqa_acc: f64,
    pub tvd: f64,
    pub kl: f64,
    pub entce: f64,
    pub ece: f64,
    pub sample_count: usize,
}

/// One row per set, in `EvalSet::ROWS` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn row(&self, set: EvalSet) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.set == set)
    }

    /// Reduces per-sample records into the table. Records are summed in
    /// ascending question-id order.
    pub fn from_records(records: &[SampleRecord], ece_bins: usize) -> Result<Self, MetricsError> {
        let mut ordered: Vec<&SampleRecord> = records.iter().collect();
        ordered.sort_by_key(|r| r.question_id);

        let rows = EvalSet::ROWS
            .into_iter()
            .map(|set| {
                let members: Vec<&SampleRecord> = ordered.iter().copied().filter(|r| set.contains(r.set)).collect();
                if members.is_empty() {
                    return Err(MetricsError::EmptySet(set));
                }
                let n = members.len() as f64;
                let mean =
                    |f: fn(&SampleRecord) -> f64| pairwise_sum(&members.iter().map(|r| f(r)).collect::<Vec<_>>()) / n;
                let pairs: Vec<(f64, f64)> = members.iter().map(|r| (r.confidence, r.vqa_acc)).collect();
                Ok(MetricRow {
                    set,
                    vqa_acc: mean(|r| r.vqa_acc),
                    tvd: mean(|r| r.tvd),
                    kl: mean(|r| r.kl),
                    entce: mean(|r| r.entce_signed.abs()),
                    ece: ece(&pairs, ece_bins)?,
                    sample_count: members.len(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub table: MetricsTable,
    /// Sorted by question id.
    pub records: Vec<SampleRecord>,
}

impl Evaluation {
    /// Labels seen in human responses but absent from the vocabulary.
    pub fn absent_label_count(&self) -> usize {
        self.records.iter().map(|r| r.absent_labels).sum()
    }
}

pub fn score_sample(
    sample: &PreparedSample,
    vocab: &Vocabulary,
    level: HudLevel,
    temperature: f64,
    opts: &EvalOptions,
) -> Result<SampleRecord, MetricsError> {
    let annotated = sample.eval.sample();
    let logits = &sample.eval.prediction().logits;
    let probs = apply_temperature(logits, temperature)?;
    let top = argmax(logits).ok_or(TemperatureError::EmptyLogits)?;
    let predicted = vocab.get(top).unwrap_or_default().to_string();
    let aligned = align_support(&sample.human, &probs, vocab, opts.floor, opts.support);

    Ok(SampleRecord {
        question_id: annotated.question_id,
        set: level,
        hud_score: sample.human.hud_score,
        tvd: tvd(&aligned.human, &aligned.model)?,
        kl: kl(&aligned.human, &aligned.model)?,
        entce_signed: entce_signed(&aligned.human, &aligned.model)?,
        vqa_acc: vqa_accuracy(&predicted, annotated),
        confidence: probs[top],
        support: aligned.support,
        human: aligned.human,
        model: aligned.model,
        predicted,
        absent_labels: aligned.absent,
    })
}

/// Scores every sample at `temperature` and reduces per HUD set.
pub fn evaluate(
    samples: &[PreparedSample],
    vocab: &Vocabulary,
    split: &SplitAssignment,
    temperature: f64,
    opts: &EvalOptions,
) -> Result<Evaluation, MetricsError> {
    if !(temperature > 0.0) {
        return Err(TemperatureError::NonPositive(temperature).into());
    }
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let mut ordered: Vec<&PreparedSample> = samples.iter().collect();
    ordered.sort_by_key(|s| s.question_id());

    let records = ordered
        .par_iter()
        .map(|s| {
            let level = split
                .level(s.question_id())
                .ok_or(MetricsError::Unassigned(s.question_id()))?;
            score_sample(s, vocab, level, temperature, opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = MetricsTable::from_records(&records, opts.ece_bins)?;
    Ok(Evaluation { table, records })
}
