//! Seeded synthetic corpora with known human distributions.
//!
//! Each sample draws `k` labels from the vocabulary, spreads the annotators
//! over them (every label gets at least one), and draws each annotator's
//! confidence from `confidence_mix`. The "calibrated" logits are `ln p` on
//! the human support and `ln 1e-12` elsewhere, so their softmax is the human
//! distribution up to vanishing off-support mass. The emitted logits are
//! `alpha · calibrated + N(0, sigma²)`; dividing by `T = alpha` undoes the
//! scaling exactly when `sigma = 0`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hud::{build_human_distribution, ConfidenceScale};
use crate::ingest::{
    write_annotations, write_predictions, write_vocabulary, AnnotatedSample, Annotation, ConfidenceLabel,
    PredictionSet, Vocabulary,
};

/// Probability mass given to each off-support class before distortion.
const OFF_SUPPORT_MASS: f64 = 1e-12;

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const VOCABULARY_FILE: &str = "vocab.txt";
pub const TRUTHS_FILE: &str = "true_distributions.jsonl";

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error(
        "labels per sample must satisfy 2 <= min <= max <= vocab_size; got min={min} max={max} vocab_size={vocab_size}"
    )]
    LabelRange { min: usize, max: usize, vocab_size: usize },
    #[error("labels_max={max} exceeds annotators_per_sample={annotators}")]
    TooFewAnnotators { max: usize, annotators: usize },
    #[error("confidence mix must be three nonnegative weights summing to 1, got {0:?}")]
    BadMix([f64; 3]),
    #[error("model distortion must be positive and finite, got {0}")]
    BadDistortion(f64),
    #[error("model noise must be nonnegative and finite, got {0}")]
    BadNoise(f64),
    #[error("num_samples must be at least 1")]
    NoSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub num_samples: usize,
    pub vocab_size: usize,
    pub annotators_per_sample: usize,
    pub labels_per_sample: (usize, usize),
    /// Weights over (yes, maybe, no).
    pub confidence_mix: [f64; 3],
    /// Logit scale factor alpha; > 1 makes the model overconfident.
    pub model_distortion: f64,
    /// Standard deviation of the Gaussian logit noise.
    pub model_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_samples: 1000,
            vocab_size: 50,
            annotators_per_sample: 10,
            labels_per_sample: (2, 5),
            confidence_mix: [0.7, 0.2, 0.1],
            model_distortion: 1.0,
            model_noise: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (min, max) = self.labels_per_sample;
        if !(2 <= min && min <= max && max <= self.vocab_size) {
            return Err(SynthError::LabelRange {
                min,
                max,
                vocab_size: self.vocab_size,
            });
        }
        if max > self.annotators_per_sample {
            return Err(SynthError::TooFewAnnotators {
                max,
                annotators: self.annotators_per_sample,
            });
        }
        let mix = self.confidence_mix;
        let nonnegative = mix.iter().all(|w| *w >= 0.0 && w.is_finite());
        if !nonnegative || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SynthError::BadMix(mix));
        }
        if !(self.model_distortion > 0.0 && self.model_distortion.is_finite()) {
            return Err(SynthError::BadDistortion(self.model_distortion));
        }
        if !(self.model_noise >= 0.0 && self.model_noise.is_finite()) {
            return Err(SynthError::BadNoise(self.model_noise));
        }
        if self.num_samples == 0 {
            return Err(SynthError::NoSamples);
        }
        Ok(())
    }
}

/// The human distribution a synthetic sample was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueDistribution {
    pub question_id: u64,
    pub labels: Vec<String>,
    pub mean_confidence: Vec<f64>,
    pub probs: Vec<f64>,
    pub hud_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub annotations: Vec<AnnotatedSample>,
    pub predictions: Vec<PredictionSet>,
    pub vocab: Vocabulary,
    pub truths: Vec<TrueDistribution>,
}

pub fn label_name(index: usize) -> String {
    format!("ans_{index:04}")
}

/// splitmix64 finalizer; decorrelates per-sample seeds.
fn mix_seed(seed: u64, question_id: u64) -> u64 {
    let mut z = seed ^ question_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const CONFIDENCES: [ConfidenceLabel; 3] = [ConfidenceLabel::Yes, ConfidenceLabel::Maybe, ConfidenceLabel::No];

fn generate_sample(
    spec: &SynthSpec,
    vocab: &Vocabulary,
    confidence: &WeightedIndex<f64>,
    noise: Option<&Normal<f64>>,
    question_id: u64,
) -> (AnnotatedSample, PredictionSet, TrueDistribution) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, question_id));
    let (min, max) = spec.labels_per_sample;
    let k = rng.random_range(min..=max);
    let chosen = rand::seq::index::sample(&mut rng, spec.vocab_size, k).into_vec();

    let mut assigned: Vec<usize> = (0..k).collect();
    assigned.extend((k..spec.annotators_per_sample).map(|_| rng.random_range(0..k)));
    assigned.shuffle(&mut rng);

    let annotations: Vec<Annotation> = assigned
        .iter()
        .map(|&slot| Annotation {
            response: vocab.get(chosen[slot]).unwrap_or_default().to_string(),
            confidence: CONFIDENCES[confidence.sample(&mut rng)],
        })
        .collect();
    let sample = AnnotatedSample {
        question_id,
        image_id: format!("synth_{question_id:06}"),
        question: format!("synthetic question {question_id}"),
        annotations,
    };
    let human = build_human_distribution(&sample, &ConfidenceScale::default())
        .expect("synthetic samples always carry annotations");

    let mut logits = vec![OFF_SUPPORT_MASS.ln(); spec.vocab_size];
    for (label, p) in human.labels.iter().zip(&human.probs) {
        if let Some(i) = vocab.index_of(label) {
            logits[i] = p.ln();
        }
    }
    for l in &mut logits {
        *l *= spec.model_distortion;
        if let Some(normal) = noise {
            *l += normal.sample(&mut rng);
        }
    }

    let truth = TrueDistribution {
        question_id,
        labels: human.labels,
        mean_confidence: human.mean_confidence,
        probs: human.probs,
        hud_score: human.hud_score,
    };
    (sample, PredictionSet { question_id, logits }, truth)
}

pub fn generate_corpus(spec: &SynthSpec) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let vocab = Vocabulary::new((0..spec.vocab_size).map(label_name))
        .expect("generated label names are distinct and non-empty");
    let confidence = WeightedIndex::new(spec.confidence_mix).map_err(|_| SynthError::BadMix(spec.confidence_mix))?;
    let noise = (spec.model_noise > 0.0)
        .then(|| Normal::new(0.0, spec.model_noise).map_err(|_| SynthError::BadNoise(spec.model_noise)))
        .transpose()?;

    let generated: Vec<_> = (1..=spec.num_samples as u64)
        .into_par_iter()
        .map(|qid| generate_sample(spec, &vocab, &confidence, noise.as_ref(), qid))
        .collect();

    let mut corpus = Corpus {
        annotations: Vec::with_capacity(generated.len()),
        predictions: Vec::with_capacity(generated.len()),
        vocab,
        truths: Vec::with_capacity(generated.len()),
    };
    for (sample, prediction, truth) in generated {
        corpus.annotations.push(sample);
        corpus.predictions.push(prediction);
        corpus.truths.push(truth);
    }
    Ok(corpus)
}

pub fn write_truths<W: Write>(mut writer: W, truths: &[TrueDistribution]) -> io::Result<()> {
    for t in truths {
        serde_json::to_writer(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes the four corpus files into `dir` (which must exist).
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> io::Result<()> {
    fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
        File::create(dir.join(name)).map(BufWriter::new)
    }

    let mut w = create(dir, ANNOTATIONS_FILE)?;
    write_annotations(&mut w, &corpus.annotations)?;
    w.flush()?;
    let mut w = create(dir, PREDICTIONS_FILE)?;
    write_predictions(&mut w, &corpus.predictions)?;
    w.flush()?;
    let mut w = create(dir, VOCABULARY_FILE)?;
    write_vocabulary(&mut w, &corpus.vocab)?;
    w.flush()?;
    let mut w = create(dir, TRUTHS_FILE)?;
    write_truths(&mut w, &corpus.truths)?;
    w.flush()
}
