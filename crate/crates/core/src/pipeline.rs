//! Join → human distributions → single-label filter → tercile split.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::hud::{
    build_human_distribution, filter_single_label, split_terciles, ConfidenceScale, PreparedSample, SplitAssignment,
};
use crate::ingest::{join_samples, AnnotatedSample, JoinPolicy, PredictionSet, Vocabulary};
use crate::Error;

/// Bookkeeping about what the pipeline dropped or could not match.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PrepareSummary {
    pub joined: usize,
    pub dropped_annotation_ids: Vec<u64>,
    pub dropped_prediction_ids: Vec<u64>,
    pub removed_single_label: usize,
    pub evaluated: usize,
    /// Human labels of evaluated samples that are missing from the
    /// vocabulary, with their number of occurrences.
    pub unmatched_labels: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub samples: Vec<PreparedSample>,
    pub split: SplitAssignment,
    pub summary: PrepareSummary,
}

/// Joined samples with their human distributions, before filtering.
pub fn build_prepared(
    annotations: Vec<AnnotatedSample>,
    predictions: Vec<PredictionSet>,
    join: JoinPolicy,
    scale: &ConfidenceScale,
) -> Result<(Vec<PreparedSample>, PrepareSummary), Error> {
    let joined = join_samples(annotations, predictions, join)?;
    let summary = PrepareSummary {
        joined: joined.samples.len(),
        dropped_annotation_ids: joined.dropped_annotations,
        dropped_prediction_ids: joined.dropped_predictions,
        ..PrepareSummary::default()
    };
    let samples = joined
        .samples
        .into_par_iter()
        .map(|eval| {
            let human = build_human_distribution(eval.sample(), scale)?;
            Ok(PreparedSample { eval, human })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok((samples, summary))
}

pub fn prepare(
    annotations: Vec<AnnotatedSample>,
    predictions: Vec<PredictionSet>,
    vocab: &Vocabulary,
    join: JoinPolicy,
    scale: &ConfidenceScale,
) -> Result<Prepared, Error> {
    let (samples, mut summary) = build_prepared(annotations, predictions, join, scale)?;
    let filtered = filter_single_label(samples);
    summary.removed_single_label = filtered.removed;
    summary.evaluated = filtered.kept.len();
    for s in &filtered.kept {
        for label in &s.human.labels {
            if vocab.index_of(label).is_none() {
                *summary.unmatched_labels.entry(label.clone()).or_default() += 1;
            }
        }
    }

    let scores: Vec<(u64, f64)> = filtered
        .kept
        .iter()
        .map(|s| (s.question_id(), s.human.hud_score))
        .collect();
    let split = split_terciles(&scores)?;
    Ok(Prepared {
        samples: filtered.kept,
        split,
        summary,
    })
}
