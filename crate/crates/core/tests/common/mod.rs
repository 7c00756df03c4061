#![allow(dead_code)]

use hudcalib::hud::ConfidenceScale;
use hudcalib::ingest::JoinPolicy;
use hudcalib::pipeline::{prepare, Prepared};
use hudcalib::synth::{generate_corpus, Corpus, SynthSpec};

pub fn corpus(seed: u64, num_samples: usize, alpha: f64, sigma: f64) -> Corpus {
    generate_corpus(&SynthSpec {
        seed,
        num_samples,
        model_distortion: alpha,
        model_noise: sigma,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn prepared(corpus: &Corpus) -> Prepared {
    prepare(
        corpus.annotations.clone(),
        corpus.predictions.clone(),
        &corpus.vocab,
        JoinPolicy::Strict,
        &ConfidenceScale::default(),
    )
    .unwrap()
}
