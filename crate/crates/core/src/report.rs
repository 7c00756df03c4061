//! Tabular outputs: CSV files with six significant digits and aligned
//! Markdown tables.

use std::io::{self, Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::calibrate::{Comparison, Metric};
use crate::hud::{EvalSet, HudStatistics, SplitAssignment};
use crate::metrics::{MetricRow, MetricsTable, SampleRecord};

pub const SIGNIFICANT_DIGITS: usize = 6;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad metrics CSV: {0}")]
    Format(String),
}

/// Rounds to `digits` significant digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

/// Shortest decimal rendering of `x` rounded to six significant digits.
pub fn format_sig(x: f64) -> String {
    let r = round_sig(x, SIGNIFICANT_DIGITS);
    if r == 0.0 {
        "0".to_string()
    } else {
        r.to_string()
    }
}

impl MetricsTable {
    /// Every metric rounded as it is written to CSV.
    pub fn rounded(&self) -> Self {
        let r = |x| round_sig(x, SIGNIFICANT_DIGITS);
        Self {
            rows: self
                .rows
                .iter()
                .map(|row| MetricRow {
                    vqa_acc: r(row.vqa_acc),
                    tvd: r(row.tvd),
                    kl: r(row.kl),
                    entce: r(row.entce),
                    ece: r(row.ece),
                    ..*row
                })
                .collect(),
        }
    }
}

const METRICS_HEADER: [&str; 7] = ["set", "vqa_acc", "tvd", "kl", "entce", "ece", "sample_count"];

pub fn write_metrics_csv<W: Write>(writer: W, table: &MetricsTable) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for row in &table.rows {
        w.write_record([
            row.set.as_str().to_string(),
            format_sig(row.vqa_acc),
            format_sig(row.tvd),
            format_sig(row.kl),
            format_sig(row.entce),
            format_sig(row.ece),
            row.sample_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(reader: R) -> Result<MetricsTable, ReportError> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(METRICS_HEADER) {
        return Err(ReportError::Format(format!("unexpected header {:?}", r.headers()?)));
    }
    let bad = |what: &str, value: &str| ReportError::Format(format!("bad {what} {value:?}"));
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let num = |i: usize| record[i].parse::<f64>().map_err(|_| bad(METRICS_HEADER[i], &record[i]));
        rows.push(MetricRow {
            set: record[0].parse::<EvalSet>().map_err(|_| bad("set", &record[0]))?,
            vqa_acc: num(1)?,
            tvd: num(2)?,
            kl: num(3)?,
            entce: num(4)?,
            ece: num(5)?,
            sample_count: record[6].parse().map_err(|_| bad("sample_count", &record[6]))?,
        });
    }
    Ok(MetricsTable { rows })
}

fn display_set(set: EvalSet) -> &'static str {
    match set {
        EvalSet::All => "All",
        EvalSet::Low => "Low",
        EvalSet::Medium => "Med",
        EvalSet::High => "High",
    }
}

/// Renders rows as a Markdown table with padded columns.
fn markdown(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count(), 3])
                .max()
                .unwrap_or(3)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

pub fn metrics_markdown(table: &MetricsTable) -> String {
    let header: Vec<String> = ["HUD set", "VQA-Acc", "TVD", "KL(H||M)", "EntCE", "ECE", "N"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                display_set(r.set).to_string(),
                format!("{:.3}", r.vqa_acc),
                format!("{:.3}", r.tvd),
                format!("{:.3}", r.kl),
                format!("{:.3}", r.entce),
                format!("{:.3}", r.ece),
                r.sample_count.to_string(),
            ]
        })
        .collect();
    markdown(&header, &rows)
}

/// Before/after table; each "after" cell carries `(+)`, `(-)` or `(=)`.
pub fn comparison_markdown(comparison: &Comparison) -> String {
    let mut header = vec!["HUD set".to_string()];
    for m in Metric::ALL {
        header.push(format!("{} before", m.name()));
        header.push(format!("{} after", m.name()));
    }
    let mut rows = Vec::new();
    for set in EvalSet::ROWS {
        let mut row = vec![display_set(set).to_string()];
        for m in Metric::ALL {
            match comparison.cell(set, m) {
                Some(c) => {
                    row.push(format!("{:.3}", c.before));
                    row.push(format!("{:.3} {}", c.after, c.direction.marker()));
                }
                None => row.extend(["".to_string(), "".to_string()]),
            }
        }
        if comparison.cells.iter().any(|c| c.set == set) {
            rows.push(row);
        }
    }
    let mut out = markdown(&header, &rows);
    out.push_str("\n(+) improved, (-) worsened, (=) unchanged\n");
    out
}

/// `question_id,hud_score,level`, ascending by question id.
pub fn write_split_manifest<W: Write>(writer: W, split: &SplitAssignment) -> Result<(), ReportError> {
    let mut entries = split.entries().to_vec();
    entries.sort_by_key(|e| e.question_id);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["question_id", "hud_score", "level"])?;
    for e in entries {
        w.write_record([e.question_id.to_string(), format_sig(e.hud_score), e.level.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_hud_stats_csv<W: Write>(writer: W, stats: &HudStatistics) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["set", "sample_count", "mean_label_count", "mean_hud", "std_hud"])?;
    for (set, s) in &stats.sets {
        w.write_record([
            set.to_string(),
            s.sample_count.to_string(),
            format_sig(s.mean_label_count),
            format_sig(s.mean_hud),
            format_sig(s.std_hud),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per histogram bin; the overall mean, std and the two split
/// boundaries are repeated on every row so the file plots on its own.
pub fn write_histogram_csv<W: Write>(writer: W, stats: &HudStatistics) -> Result<(), ReportError> {
    let overall = stats
        .get(EvalSet::All)
        .ok_or_else(|| ReportError::Format("statistics lack the all row".into()))?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "bin_lo",
        "bin_hi",
        "count",
        "mean_hud",
        "std_hud",
        "boundary_low_medium",
        "boundary_medium_high",
    ])?;
    let h = &stats.histogram;
    for (i, count) in h.counts.iter().enumerate() {
        w.write_record([
            format_sig(h.edges[i]),
            format_sig(h.edges[i + 1]),
            count.to_string(),
            format_sig(overall.mean_hud),
            format_sig(overall.std_hud),
            format_sig(stats.boundaries[0]),
            format_sig(stats.boundaries[1]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write, T: Serialize>(mut writer: W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_per_sample<W: Write>(writer: W, records: &[SampleRecord]) -> io::Result<()> {
    write_jsonl(writer, records)
}
