//! Naive re-computation of the full evaluation table, used to cross-check
//! [`crate::metrics::evaluate`].
//!
//! Nothing here calls into `hud`, `metrics` or `calibrate`: the join,
//! grouping, split, softmax, alignment and every metric are written out
//! again with plain loops. Only the data types are shared. Supports the
//! default confidence values (1.0 / 0.5 / 0.01) and the human-label support.

#![allow(clippy::needless_range_loop, clippy::manual_div_ceil)]

use std::collections::BTreeMap;

use crate::hud::EvalSet;
use crate::ingest::{AnnotatedSample, ConfidenceLabel, PredictionSet, Vocabulary};
use crate::metrics::{MetricRow, MetricsError, MetricsTable};
use crate::synth::Corpus;

struct OracleSample {
    question_id: u64,
    hud: f64,
    vqa_acc: f64,
    confidence: f64,
    tvd: f64,
    kl: f64,
    entce: f64,
}

/// Evaluates a synthetic corpus at `temperature` with floor 1e-8 and 10 ECE
/// bins.
pub fn brute_force_evaluate(corpus: &Corpus, temperature: f64) -> Result<MetricsTable, MetricsError> {
    brute_force_evaluate_with(
        &corpus.annotations,
        &corpus.predictions,
        &corpus.vocab,
        temperature,
        1e-8,
        10,
    )
}

pub fn brute_force_evaluate_with(
    annotations: &[AnnotatedSample],
    predictions: &[PredictionSet],
    vocab: &Vocabulary,
    temperature: f64,
    floor: f64,
    bins: usize,
) -> Result<MetricsTable, MetricsError> {
    let entries = vocab.entries();
    let mut logits_by_id: BTreeMap<u64, &Vec<f64>> = BTreeMap::new();
    for p in predictions {
        logits_by_id.insert(p.question_id, &p.logits);
    }

    let mut scored: Vec<OracleSample> = Vec::new();
    for a in annotations {
        let logits = match logits_by_id.get(&a.question_id) {
            Some(l) => *l,
            None => continue,
        };

        // Group responses in first-appearance order.
        let mut labels: Vec<&str> = Vec::new();
        let mut totals: Vec<f64> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for ann in &a.annotations {
            let v = match ann.confidence {
                ConfidenceLabel::Yes => 1.0,
                ConfidenceLabel::Maybe => 0.5,
                ConfidenceLabel::No => 0.01,
            };
            let mut found = false;
            for j in 0..labels.len() {
                if labels[j] == ann.response {
                    totals[j] += v;
                    counts[j] += 1.0;
                    found = true;
                    break;
                }
            }
            if !found {
                labels.push(&ann.response);
                totals.push(v);
                counts.push(1.0);
            }
        }
        if labels.len() < 2 {
            continue;
        }
        let mut means = Vec::new();
        let mut mean_sum = 0.0;
        for j in 0..labels.len() {
            means.push(totals[j] / counts[j]);
            mean_sum += totals[j] / counts[j];
        }
        let hud = mean_sum / labels.len() as f64;

        // Tempered softmax over the full vocabulary.
        let mut top = 0;
        for k in 1..logits.len() {
            if logits[k] > logits[top] {
                top = k;
            }
        }
        let mut probs = vec![0.0; logits.len()];
        let mut z = 0.0;
        for k in 0..logits.len() {
            probs[k] = ((logits[k] - logits[top]) / temperature).exp();
            z += probs[k];
        }
        for k in 0..logits.len() {
            probs[k] /= z;
        }

        let mut matches = 0;
        for ann in &a.annotations {
            if ann.response == entries[top] {
                matches += 1;
            }
        }
        let vqa_acc = if matches >= 3 { 1.0 } else { matches as f64 / 3.0 };

        // Human and model vectors on the human labels.
        let mut human = Vec::new();
        let mut model = Vec::new();
        for j in 0..labels.len() {
            human.push(means[j] / mean_sum);
            let mut mass = floor;
            for k in 0..entries.len() {
                if entries[k] == labels[j] {
                    mass = probs[k];
                }
            }
            model.push(mass);
        }
        let mut hz = 0.0;
        let mut mz = 0.0;
        for j in 0..labels.len() {
            if human[j] < floor {
                human[j] = floor;
            }
            if model[j] < floor {
                model[j] = floor;
            }
            hz += human[j];
            mz += model[j];
        }
        let mut tvd = 0.0;
        let mut kl = 0.0;
        let mut h_human = 0.0;
        let mut h_model = 0.0;
        for j in 0..labels.len() {
            let p = human[j] / hz;
            let q = model[j] / mz;
            tvd += (p - q).abs() / 2.0;
            kl += p * (p.ln() - q.ln());
            h_human -= p * p.ln();
            h_model -= q * q.ln();
        }

        scored.push(OracleSample {
            question_id: a.question_id,
            hud,
            vqa_acc,
            confidence: probs[top],
            tvd,
            kl,
            entce: (h_model - h_human).abs(),
        });
    }

    if scored.is_empty() {
        return Err(MetricsError::EmptySamples);
    }

    // Rank: highest HUD first, ties by id; Low = ceil(n/3), Medium = ceil(rest/2).
    scored.sort_by(|x, y| {
        y.hud
            .partial_cmp(&x.hud)
            .unwrap()
            .then(x.question_id.cmp(&y.question_id))
    });
    let n = scored.len();
    let n_low = (n + 2) / 3;
    let n_medium = (n - n_low + 1) / 2;
    let mut level_of: BTreeMap<u64, EvalSet> = BTreeMap::new();
    for (rank, s) in scored.iter().enumerate() {
        let set = if rank < n_low {
            EvalSet::Low
        } else if rank < n_low + n_medium {
            EvalSet::Medium
        } else {
            EvalSet::High
        };
        level_of.insert(s.question_id, set);
    }
    scored.sort_by_key(|s| s.question_id);

    let mut rows = Vec::new();
    for set in [EvalSet::All, EvalSet::Low, EvalSet::Medium, EvalSet::High] {
        let mut count = 0usize;
        let (mut acc, mut tvd, mut kl, mut entce) = (0.0, 0.0, 0.0, 0.0);
        for s in &scored {
            if set == EvalSet::All || level_of[&s.question_id] == set {
                count += 1;
                acc += s.vqa_acc;
                tvd += s.tvd;
                kl += s.kl;
                entce += s.entce;
            }
        }
        if count == 0 {
            return Err(MetricsError::EmptySet(set));
        }

        let mut ece = 0.0;
        for m in 0..bins {
            let lo = m as f64 / bins as f64;
            let hi = (m + 1) as f64 / bins as f64;
            let mut in_bin = 0.0;
            let mut conf_sum = 0.0;
            let mut acc_sum = 0.0;
            for s in &scored {
                if set != EvalSet::All && level_of[&s.question_id] != set {
                    continue;
                }
                let above_lo = m == 0 || s.confidence >= lo;
                let below_hi = m + 1 == bins || s.confidence < hi;
                if above_lo && below_hi {
                    in_bin += 1.0;
                    conf_sum += s.confidence;
                    acc_sum += s.vqa_acc;
                }
            }
            if in_bin > 0.0 {
                ece += in_bin / count as f64 * (acc_sum / in_bin - conf_sum / in_bin).abs();
            }
        }

        let c = count as f64;
        rows.push(MetricRow {
            set,
            vqa_acc: acc / c,
            tvd: tvd / c,
            kl: kl / c,
            entce: entce / c,
            ece,
            sample_count: count,
        });
    }
    Ok(MetricsTable { rows })
}
