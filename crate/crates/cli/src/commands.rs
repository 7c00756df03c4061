//! The four subcommands. Each reads its inputs, runs the library pipeline and
//! writes report files sequentially into the output directory.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use hudcalib::calibrate::{apply_temperature, calibration_report, fit_temperature, make_grid, softmax, TemperatureFit};
use hudcalib::hud::hud_statistics;
use hudcalib::ingest::{
    parse_annotations, parse_predictions, parse_vocabulary, AnnotatedSample, IngestError, PredictionSet, Vocabulary,
};
use hudcalib::metrics::{align_support, argmax, evaluate, vqa_accuracy, Evaluation};
use hudcalib::pipeline::{build_prepared, prepare, Prepared};
use hudcalib::report::{
    comparison_markdown, format_sig, metrics_markdown, write_histogram_csv, write_hud_stats_csv, write_metrics_csv,
    write_per_sample, write_split_manifest,
};
use hudcalib::synth::{generate_corpus, write_corpus, SynthSpec};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            CliError::usage(format!("{what} not found"), path.display())
        } else {
            CliError::usage(format!("cannot read {what}"), format!("{}: {e}", path.display()))
        }
    })
}

fn invalid(what: &str, path: &Path) -> impl FnOnce(IngestError) -> CliError {
    let path = path.display().to_string();
    let what = what.to_string();
    move |e| CliError::usage(format!("invalid {what}"), format!("{path}: {e}"))
}

/// Reads the vocabulary, then the annotation and prediction files in
/// parallel.
fn load_inputs(cfg: &RunConfig) -> Result<(Vec<AnnotatedSample>, Vec<PredictionSet>, Vocabulary), CliError> {
    let vocab = parse_vocabulary(open(&cfg.vocabulary_path, "vocabulary")?)
        .map_err(invalid("vocabulary", &cfg.vocabulary_path))?;
    let ann_reader = open(&cfg.annotation_path, "annotations")?;
    let pred_reader = open(&cfg.prediction_path, "predictions")?;

    let (annotations, predictions) = thread::scope(|s| {
        let ann = s.spawn(|| parse_annotations(ann_reader).map_err(invalid("annotations", &cfg.annotation_path)));
        let preds = parse_predictions(pred_reader, &vocab).map_err(invalid("predictions", &cfg.prediction_path));
        let ann = ann
            .join()
            .unwrap_or_else(|_| Err(CliError::internal("annotation reader panicked", "")));
        (ann, preds)
    });
    Ok((annotations?, predictions?, vocab))
}

fn load_prepared(cfg: &RunConfig) -> Result<(Prepared, Vocabulary), CliError> {
    let (annotations, predictions, vocab) = load_inputs(cfg)?;
    let prepared = prepare(annotations, predictions, &vocab, cfg.join_policy, &cfg.scale)?;
    let s = &prepared.summary;
    let dropped = s.dropped_annotation_ids.len() + s.dropped_prediction_ids.len();
    if dropped > 0 {
        eprintln!("warning: {dropped} ids present in only one input were dropped");
    }
    if !s.unmatched_labels.is_empty() {
        let total: usize = s.unmatched_labels.values().sum();
        eprintln!(
            "warning: {} distinct human labels ({total} occurrences) are not in the vocabulary",
            s.unmatched_labels.len()
        );
    }
    Ok((prepared, vocab))
}

fn create_output_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::usage("cannot create output directory", format!("{}: {e}", dir.display())))
}

fn write_output<F>(dir: &Path, name: &str, fill: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    let path = dir.join(name);
    let file = File::create(&path)
        .map_err(|e| CliError::internal("cannot write output", format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    fill(&mut w)?;
    w.flush()?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    write_output(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    write_output(dir, name, |w| Ok(w.write_all(text.as_bytes())?))
}

fn write_table(dir: &Path, stem: &str, eval: &Evaluation) -> Result<(), CliError> {
    write_output(dir, &format!("{stem}.csv"), |w| Ok(write_metrics_csv(w, &eval.table)?))?;
    write_text(dir, &format!("{stem}.md"), &metrics_markdown(&eval.table))?;
    Ok(())
}

/// Metrics at T = 1 plus the split and HUD statistics.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let (prepared, vocab) = load_prepared(cfg)?;
    let eval = evaluate(&prepared.samples, &vocab, &prepared.split, 1.0, &cfg.eval)?;
    let stats = hud_statistics(&prepared.samples, &prepared.split, cfg.histogram_bins)?;

    let dir = &cfg.output_dir;
    create_output_dir(dir)?;
    write_table(dir, "metrics_before", &eval)?;
    write_output(dir, "split_manifest.csv", |w| {
        Ok(write_split_manifest(w, &prepared.split)?)
    })?;
    write_output(dir, "hud_stats.csv", |w| Ok(write_hud_stats_csv(w, &stats)?))?;
    write_output(dir, "hud_histogram.csv", |w| Ok(write_histogram_csv(w, &stats)?))?;
    write_output(dir, "per_sample.jsonl", |w| Ok(write_per_sample(w, &eval.records)?))?;
    write_json(dir, "summary.json", &prepared.summary)?;

    print!("{}", metrics_markdown(&eval.table));
    Ok(())
}

/// Grid-searches a temperature and compares metrics before and after.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<TemperatureFit, CliError> {
    let objective = cfg
        .objective
        .ok_or_else(|| CliError::usage("no objective selected", "pass --objective ece|kl|tvd|entce"))?;
    let (start, stop, step) = cfg.grid;
    let grid = make_grid(start, stop, step)?;
    let (prepared, vocab) = load_prepared(cfg)?;
    let (samples, split) = (&prepared.samples, &prepared.split);

    let fit = fit_temperature(samples, &vocab, split, objective, &grid, &cfg.eval, cfg.scope)?;
    let before = evaluate(samples, &vocab, split, 1.0, &cfg.eval)?;
    let after = evaluate(samples, &vocab, split, fit.temperature, &cfg.eval)?;
    let comparison = calibration_report(&before.table, &after.table)?;

    let dir = &cfg.output_dir;
    create_output_dir(dir)?;
    write_json(dir, "fit.json", &fit)?;
    write_table(dir, "metrics_after", &after)?;
    write_text(dir, "comparison.md", &comparison_markdown(&comparison))?;

    println!(
        "temperature {} ({} on {} = {})",
        fit.temperature,
        objective.name(),
        cfg.scope,
        format_sig(fit.best_score)
    );
    if fit.saturated {
        eprintln!(
            "warning: fitted temperature {} is the largest grid candidate; the optimum may lie beyond the grid",
            fit.temperature
        );
    }
    print!("{}", comparison_markdown(&comparison));
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseRow {
    pub label: String,
    pub vqa_acc_if_predicted: f64,
    pub human_mean_confidence: f64,
    pub human_prob: f64,
    pub model_prob_uncalibrated: f64,
    pub model_prob_at_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStudy {
    pub question_id: u64,
    pub image_id: String,
    pub question: String,
    pub hud_score: f64,
    pub temperature: f64,
    /// Vocabulary answer with the largest logit.
    pub predicted: String,
    pub predicted_vqa_acc: f64,
    pub rows: Vec<CaseRow>,
}

/// Per-label breakdown of one sample, written to `case_<id>.json`.
pub fn cmd_case_study(cfg: &RunConfig, question_id: u64, temperature: f64) -> Result<CaseStudy, CliError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CliError::usage(
            "invalid temperature",
            format!("{temperature} is not positive"),
        ));
    }
    let (annotations, predictions, vocab) = load_inputs(cfg)?;
    let (samples, _) = build_prepared(annotations, predictions, cfg.join_policy, &cfg.scale)?;
    let sample = samples
        .iter()
        .find(|s| s.question_id() == question_id)
        .ok_or_else(|| CliError::usage("unknown question id", question_id))?;

    let annotated = sample.eval.sample();
    let logits = &sample.eval.prediction().logits;
    let plain = softmax(logits).map_err(hudcalib::metrics::MetricsError::from)?;
    let tempered = apply_temperature(logits, temperature).map_err(hudcalib::metrics::MetricsError::from)?;
    let floor = cfg.eval.floor;
    let at_one = align_support(&sample.human, &plain, &vocab, floor, cfg.eval.support);
    let at_t = align_support(&sample.human, &tempered, &vocab, floor, cfg.eval.support);

    let human = &sample.human;
    let rows = at_one
        .support
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let own = human.labels.iter().position(|l| l == label);
            CaseRow {
                label: label.clone(),
                vqa_acc_if_predicted: own.map_or(0.0, |_| vqa_accuracy(label, annotated)),
                human_mean_confidence: own.map_or(0.0, |j| human.mean_confidence[j]),
                human_prob: own.map_or(0.0, |j| human.probs[j]),
                model_prob_uncalibrated: at_one.model[i],
                model_prob_at_t: at_t.model[i],
            }
        })
        .collect();
    let predicted = argmax(logits)
        .and_then(|k| vocab.get(k))
        .unwrap_or_default()
        .to_string();
    let case = CaseStudy {
        question_id,
        image_id: annotated.image_id.clone(),
        question: annotated.question.clone(),
        hud_score: human.hud_score,
        temperature,
        predicted_vqa_acc: vqa_accuracy(&predicted, annotated),
        predicted,
        rows,
    };

    create_output_dir(&cfg.output_dir)?;
    let path = write_json(&cfg.output_dir, &format!("case_{question_id}.json"), &case)?;
    println!("{}", path.display());
    Ok(case)
}

/// Generates a synthetic corpus. Without a seed one is taken from the clock
/// and printed so the run can be repeated.
pub fn cmd_synth(mut spec: SynthSpec, seed: Option<u64>, output_dir: &Path) -> Result<u64, CliError> {
    spec.seed = seed.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or_default()
    });
    let corpus = generate_corpus(&spec)?;
    create_output_dir(output_dir)?;
    write_corpus(&corpus, output_dir)?;
    println!("seed {}", spec.seed);
    Ok(spec.seed)
}
