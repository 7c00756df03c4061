//! Human uncertainty in disagreement (HUD) for multi-annotator VQA data.
//!
//! The crate turns annotator responses with yes/maybe/no confidence labels
//! into per-sample human distributions and HUD scores, splits samples into
//! low/medium/high uncertainty terciles, scores model logits against the
//! human distributions (VQA-Accuracy, TVD, KL, EntCE, ECE), and fits a
//! softmax temperature toward either calibration error or the human
//! distributions.
//!
//! ```
//! use hudcalib::hud::{build_human_distribution, ConfidenceScale};
//! use hudcalib::ingest::{AnnotatedSample, Annotation, ConfidenceLabel::*};
//!
//! let sample = AnnotatedSample {
//!     question_id: 1,
//!     image_id: "1".into(),
//!     question: "What color is the bus?".into(),
//!     annotations: vec![
//!         Annotation::new("blue and gray", Yes),
//!         Annotation::new("Blue and Gray.", Maybe),
//!         Annotation::new("blue", Yes),
//!         Annotation::new("gray and white", Maybe),
//!     ],
//! };
//! let hd = build_human_distribution(&sample, &ConfidenceScale::default()).unwrap();
//! assert_eq!(hd.mean_confidence, [0.75, 1.0, 0.5]);
//! assert_eq!(hd.hud_score, 0.75);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod hud;
pub mod ingest;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod synth;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Hud(#[from] hud::HudError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Calibrate(#[from] calibrate::CalibrateError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
