//! Parsing of annotation, prediction and vocabulary files, answer
//! normalization, and the join of annotations with predictions.
//!
//! Annotation files are a JSON array of
//! `{question_id, image_id, question?, answers: [{answer, answer_confidence}]}`.
//! Prediction files are JSON lines of `{question_id, logits: [..]}`, read as a
//! stream. The vocabulary is plain text with one answer per line; the line
//! number is the class index of the logits.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Read, Write};
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of ids listed in a strict join error.
const MAX_LISTED_IDS: usize = 10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed {what} JSON at byte {offset}: {message}")]
    Malformed {
        what: &'static str,
        offset: usize,
        message: String,
    },
    #[error("unknown confidence label {value:?} in sample question_id={question_id}")]
    UnknownConfidence { question_id: u64, value: String },
    #[error("duplicate question_id {0}")]
    DuplicateId(u64),
    #[error("sample question_id={0} has no annotations")]
    EmptyAnnotations(u64),
    #[error("prediction question_id={question_id} has {found} logits, vocabulary has {expected}")]
    LengthMismatch {
        question_id: u64,
        expected: usize,
        found: usize,
    },
    #[error("prediction question_id={question_id} has non-finite logit at index {index}")]
    NonFinite { question_id: u64, index: usize },
    #[error("vocabulary line {line} is empty")]
    EmptyVocabularyEntry { line: usize },
    #[error("vocabulary entry {entry:?} on line {line} duplicates line {first_line}")]
    DuplicateVocabularyEntry {
        entry: String,
        line: usize,
        first_line: usize,
    },
    #[error("{count} question ids have no match under strict join; first: {listed:?}")]
    Unmatched { count: usize, listed: Vec<u64> },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Lower-cases, trims, collapses internal whitespace and strips terminal
/// `.,!?` punctuation.
pub fn normalize_answer(raw: &str) -> String {
    let lowered = raw.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | '!' | '?') || c.is_whitespace())
        .to_string()
}

/// An annotator's self-reported certainty in their own response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceLabel {
    Yes,
    Maybe,
    No,
}

impl ConfidenceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceLabel::Yes => "yes",
            ConfidenceLabel::Maybe => "maybe",
            ConfidenceLabel::No => "no",
        }
    }
}

impl fmt::Display for ConfidenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Error returned when a string is not one of `yes`, `maybe`, `no`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown confidence label {0:?}")]
pub struct UnknownConfidenceLabel(pub String);

impl FromStr for ConfidenceLabel {
    type Err = UnknownConfidenceLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yes" => Ok(ConfidenceLabel::Yes),
            "maybe" => Ok(ConfidenceLabel::Maybe),
            "no" => Ok(ConfidenceLabel::No),
            other => Err(UnknownConfidenceLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    /// Normalized response text.
    pub response: String,
    pub confidence: ConfidenceLabel,
}

impl Annotation {
    pub fn new(response: &str, confidence: ConfidenceLabel) -> Self {
        Self {
            response: normalize_answer(response),
            confidence,
        }
    }
}

/// One question with every annotator's (response, confidence) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSample {
    pub question_id: u64,
    pub image_id: String,
    pub question: String,
    pub annotations: Vec<Annotation>,
}

/// Raw model scores for one question, positional over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub question_id: u64,
    pub logits: Vec<f64>,
}

/// Ordered answer classes; position `i` is logit index `i`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from raw entries, normalizing each one.
    pub fn new<I, S>(entries: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::default();
        for (i, raw) in entries.into_iter().enumerate() {
            vocab.push(raw.as_ref(), i + 1)?;
        }
        Ok(vocab)
    }

    fn push(&mut self, raw: &str, line: usize) -> Result<(), IngestError> {
        let entry = normalize_answer(raw);
        if entry.is_empty() {
            return Err(IngestError::EmptyVocabularyEntry { line });
        }
        if let Some(&first) = self.index.get(&entry) {
            return Err(IngestError::DuplicateVocabularyEntry {
                entry,
                line,
                first_line: first + 1,
            });
        }
        self.index.insert(entry.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(String::as_str)
    }

    /// Class index of an already-normalized answer.
    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }
}

/// A sample whose annotation and prediction share one question id.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    sample: AnnotatedSample,
    prediction: PredictionSet,
}

impl EvalSample {
    /// Returns `None` when the question ids differ.
    pub fn new(sample: AnnotatedSample, prediction: PredictionSet) -> Option<Self> {
        (sample.question_id == prediction.question_id).then_some(Self { sample, prediction })
    }

    pub fn question_id(&self) -> u64 {
        self.sample.question_id
    }

    pub fn sample(&self) -> &AnnotatedSample {
        &self.sample
    }

    pub fn prediction(&self) -> &PredictionSet {
        &self.prediction
    }

    pub fn into_parts(self) -> (AnnotatedSample, PredictionSet) {
        (self.sample, self.prediction)
    }
}

// --- annotation file --------------------------------------------------------

#[derive(Deserialize)]
struct RawSample {
    question_id: u64,
    #[serde(deserialize_with = "string_or_number")]
    image_id: String,
    #[serde(default)]
    question: String,
    answers: Vec<RawAnswer>,
}

#[derive(Deserialize)]
struct RawAnswer {
    answer: String,
    answer_confidence: String,
}

#[derive(Serialize)]
struct OutSample<'a> {
    question_id: u64,
    image_id: &'a str,
    question: &'a str,
    answers: Vec<OutAnswer<'a>>,
}

#[derive(Serialize)]
struct OutAnswer<'a> {
    answer: &'a str,
    answer_confidence: &'static str,
}

fn string_or_number<'de, D: Deserializer<'de>>(deserializer: D) -> Result<String, D::Error> {
    struct IdVisitor;

    impl Visitor<'_> for IdVisitor {
        type Value = String;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a string or integer identifier")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<String, E> {
            Ok(v.to_string())
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<String, E> {
            Ok(v.to_string())
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<String, E> {
            Ok(v.to_string())
        }
    }

    deserializer.deserialize_any(IdVisitor)
}

/// Translates serde_json's 1-based line/column into a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let line_start: usize = bytes
        .split_inclusive(|&b| b == b'\n')
        .take(line.saturating_sub(1))
        .map(<[u8]>::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

fn malformed(what: &'static str, bytes: &[u8], err: serde_json::Error) -> IngestError {
    IngestError::Malformed {
        what,
        offset: byte_offset(bytes, err.line(), err.column()),
        message: err.to_string(),
    }
}

/// Parses a VQA-style annotation array. Responses are normalized and input
/// order is preserved.
pub fn parse_annotations<R: Read>(mut reader: R) -> Result<Vec<AnnotatedSample>, IngestError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let raw: Vec<RawSample> = serde_json::from_slice(&bytes).map_err(|e| malformed("annotation", &bytes, e))?;

    let mut seen = HashSet::with_capacity(raw.len());
    raw.into_iter()
        .map(|r| {
            if !seen.insert(r.question_id) {
                return Err(IngestError::DuplicateId(r.question_id));
            }
            if r.answers.is_empty() {
                return Err(IngestError::EmptyAnnotations(r.question_id));
            }
            let annotations = r
                .answers
                .into_iter()
                .map(|a| {
                    let confidence = a.answer_confidence.parse().map_err(|UnknownConfidenceLabel(value)| {
                        IngestError::UnknownConfidence {
                            question_id: r.question_id,
                            value,
                        }
                    })?;
                    Ok(Annotation::new(&a.answer, confidence))
                })
                .collect::<Result<Vec<_>, IngestError>>()?;
            Ok(AnnotatedSample {
                question_id: r.question_id,
                image_id: r.image_id,
                question: r.question,
                annotations,
            })
        })
        .collect()
}

pub fn write_annotations<W: Write>(mut writer: W, samples: &[AnnotatedSample]) -> io::Result<()> {
    let out: Vec<OutSample<'_>> = samples
        .iter()
        .map(|s| OutSample {
            question_id: s.question_id,
            image_id: &s.image_id,
            question: &s.question,
            answers: s
                .annotations
                .iter()
                .map(|a| OutAnswer {
                    answer: &a.response,
                    answer_confidence: a.confidence.as_str(),
                })
                .collect(),
        })
        .collect();
    serde_json::to_writer_pretty(&mut writer, &out)?;
    writer.write_all(b"\n")
}

// --- prediction file --------------------------------------------------------

/// A logit that may be written as a JSON number or as a numeric string
/// (`"NaN"` and `"inf"` are read, then rejected as non-finite).
struct Logit(f64);

impl<'de> Deserialize<'de> for Logit {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct LogitVisitor;

        impl Visitor<'_> for LogitVisitor {
            type Value = Logit;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Logit, E> {
                Ok(Logit(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Logit, E> {
                Ok(Logit(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Logit, E> {
                Ok(Logit(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Logit, E> {
                v.trim()
                    .parse::<f64>()
                    .map(Logit)
                    .map_err(|_| E::invalid_value(de::Unexpected::Str(v), &self))
            }
        }

        deserializer.deserialize_any(LogitVisitor)
    }
}

#[derive(Deserialize)]
struct RawPrediction {
    question_id: u64,
    logits: Vec<Logit>,
}

#[derive(Serialize)]
struct OutPrediction<'a> {
    question_id: u64,
    logits: &'a [f64],
}

/// Streaming reader over a JSON-lines prediction dump. Blank lines are
/// skipped; each item is validated against the vocabulary size.
pub struct PredictionReader<R> {
    lines: io::Lines<R>,
    vocab_size: usize,
    offset: usize,
    seen: HashSet<u64>,
}

impl<R: BufRead> PredictionReader<R> {
    pub fn new(reader: R, vocab_size: usize) -> Self {
        Self {
            lines: reader.lines(),
            vocab_size,
            offset: 0,
            seen: HashSet::new(),
        }
    }

    fn parse_line(&mut self, line: &str, line_offset: usize) -> Result<PredictionSet, IngestError> {
        let raw: RawPrediction = serde_json::from_str(line).map_err(|e| IngestError::Malformed {
            what: "prediction",
            offset: line_offset + e.column().saturating_sub(1),
            message: e.to_string(),
        })?;
        let question_id = raw.question_id;
        if raw.logits.len() != self.vocab_size {
            return Err(IngestError::LengthMismatch {
                question_id,
                expected: self.vocab_size,
                found: raw.logits.len(),
            });
        }
        if let Some(index) = raw.logits.iter().position(|l| !l.0.is_finite()) {
            return Err(IngestError::NonFinite { question_id, index });
        }
        if !self.seen.insert(question_id) {
            return Err(IngestError::DuplicateId(question_id));
        }
        Ok(PredictionSet {
            question_id,
            logits: raw.logits.into_iter().map(|l| l.0).collect(),
        })
    }
}

impl<R: BufRead> Iterator for PredictionReader<R> {
    type Item = Result<PredictionSet, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            let line_offset = self.offset;
            self.offset += line.len() + 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&line, line_offset));
        }
    }
}

pub fn parse_predictions<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<Vec<PredictionSet>, IngestError> {
    PredictionReader::new(reader, vocab.len()).collect()
}

pub fn write_predictions<W: Write>(mut writer: W, predictions: &[PredictionSet]) -> io::Result<()> {
    for p in predictions {
        serde_json::to_writer(
            &mut writer,
            &OutPrediction {
                question_id: p.question_id,
                logits: &p.logits,
            },
        )?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

// --- vocabulary file --------------------------------------------------------

pub fn parse_vocabulary<R: BufRead>(reader: R) -> Result<Vocabulary, IngestError> {
    let mut vocab = Vocabulary::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        vocab.push(line.trim_end_matches('\r'), i + 1)?;
    }
    Ok(vocab)
}

pub fn write_vocabulary<W: Write>(mut writer: W, vocab: &Vocabulary) -> io::Result<()> {
    for entry in vocab.entries() {
        writeln!(writer, "{entry}")?;
    }
    Ok(())
}

// --- join -------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinPolicy {
    #[default]
    Strict,
    Intersect,
}

impl FromStr for JoinPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(JoinPolicy::Strict),
            "intersect" => Ok(JoinPolicy::Intersect),
            other => Err(format!("unknown join policy {other:?} (expected strict or intersect)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinOutcome {
    /// Joined samples, in annotation order.
    pub samples: Vec<EvalSample>,
    /// Annotation ids with no prediction.
    pub dropped_annotations: Vec<u64>,
    /// Prediction ids with no annotation.
    pub dropped_predictions: Vec<u64>,
}

impl JoinOutcome {
    pub fn dropped(&self) -> usize {
        self.dropped_annotations.len() + self.dropped_predictions.len()
    }
}

pub fn join_samples(
    annotations: Vec<AnnotatedSample>,
    predictions: Vec<PredictionSet>,
    policy: JoinPolicy,
) -> Result<JoinOutcome, IngestError> {
    let mut by_id: HashMap<u64, PredictionSet> = HashMap::with_capacity(predictions.len());
    let mut prediction_order = Vec::with_capacity(predictions.len());
    for p in predictions {
        let id = p.question_id;
        prediction_order.push(id);
        if by_id.insert(id, p).is_some() {
            return Err(IngestError::DuplicateId(id));
        }
    }

    let mut samples = Vec::with_capacity(annotations.len());
    let mut dropped_annotations = Vec::new();
    for a in annotations {
        match by_id.remove(&a.question_id) {
            Some(p) => samples.push(EvalSample {
                sample: a,
                prediction: p,
            }),
            None => dropped_annotations.push(a.question_id),
        }
    }
    let dropped_predictions: Vec<u64> = prediction_order
        .into_iter()
        .filter(|id| by_id.contains_key(id))
        .collect();

    if policy == JoinPolicy::Strict && !(dropped_annotations.is_empty() && dropped_predictions.is_empty()) {
        let missing: Vec<u64> = dropped_annotations
            .iter()
            .chain(&dropped_predictions)
            .copied()
            .collect();
        return Err(IngestError::Unmatched {
            count: missing.len(),
            listed: missing.into_iter().take(MAX_LISTED_IDS).collect(),
        });
    }

    Ok(JoinOutcome {
        samples,
        dropped_annotations,
        dropped_predictions,
    })
}
