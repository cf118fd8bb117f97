//! CSV reports. The first line is a comment carrying the format version and
//! the configuration fingerprint; the rest is plain CSV.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use wavefill_core::metrics::MetricReport;
use wavefill_sampler::Scheme;

use crate::config::{CellSpec, TrainingMode};
use crate::error::{Error, Result};
use crate::run::{BenchResult, BenchRow, SampleRecord};

pub const REPORT_FORMAT: &str = "wavefill-bench-report v1";

#[derive(Serialize, Deserialize)]
struct RowRecord {
    mode: TrainingMode,
    row_coverage: f64,
    lambda: usize,
    scheme: Scheme,
    masked_mse_2x2: Option<f64>,
    sobel_mse: Option<f64>,
    /// reserved for externally computed perceptual scores
    lpips: Option<f64>,
    n_unobserved: usize,
    n_samples: usize,
    wall_time_s: f64,
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    mode: TrainingMode,
    row_coverage: f64,
    lambda: usize,
    scheme: Scheme,
    sample: usize,
    masked_mse_2x2: Option<f64>,
    sobel_mse: Option<f64>,
    n_unobserved: usize,
    wall_time_s: f64,
}

fn header_line(fingerprint: &str) -> String {
    format!("# {REPORT_FORMAT} fingerprint={fingerprint}\n")
}

fn write_csv<T: Serialize>(
    path: &Path,
    fingerprint: &str,
    records: impl IntoIterator<Item = T>,
    columns: &[&str],
) -> Result<()> {
    let mut buf = header_line(fingerprint).into_bytes();
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(&mut buf);
        w.write_record(columns)?;
        for r in records {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads the header comment; a different format version, or a fingerprint
/// other than `expected`, is a version error.
fn read_csv<T: for<'de> Deserialize<'de>>(
    path: &Path,
    expected: Option<&str>,
) -> Result<(String, Vec<T>)> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let version_err = |msg: String| Error::Version {
        path: path.to_path_buf(),
        msg,
    };
    let rest = first
        .trim_end()
        .strip_prefix("# ")
        .and_then(|l| l.strip_prefix(REPORT_FORMAT))
        .ok_or_else(|| {
            version_err(format!(
                "expected a '{REPORT_FORMAT}' header, found {:?}",
                first.trim_end()
            ))
        })?;
    let fingerprint = rest
        .trim()
        .strip_prefix("fingerprint=")
        .ok_or_else(|| version_err("header has no fingerprint".into()))?
        .to_string();
    if let Some(exp) = expected {
        if exp != fingerprint {
            return Err(version_err(format!(
                "fingerprint {fingerprint} does not match expected {exp}"
            )));
        }
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let records = r.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok((fingerprint, records))
}

const ROW_COLUMNS: [&str; 10] = [
    "mode",
    "row_coverage",
    "lambda",
    "scheme",
    "masked_mse_2x2",
    "sobel_mse",
    "lpips",
    "n_unobserved",
    "n_samples",
    "wall_time_s",
];
const SAMPLE_COLUMNS: [&str; 9] = [
    "mode",
    "row_coverage",
    "lambda",
    "scheme",
    "sample",
    "masked_mse_2x2",
    "sobel_mse",
    "n_unobserved",
    "wall_time_s",
];

/// Writes the per-cell rows.
pub fn save_report(path: &Path, result: &BenchResult) -> Result<()> {
    let records = result.rows.iter().map(|r| RowRecord {
        mode: r.mode,
        row_coverage: r.row_coverage,
        lambda: r.lambda,
        scheme: r.scheme,
        masked_mse_2x2: r.report.masked_mse_2x2,
        sobel_mse: r.report.sobel_mse,
        lpips: None,
        n_unobserved: r.report.n_unobserved,
        n_samples: r.n_samples,
        wall_time_s: r.wall_time,
    });
    write_csv(path, &result.fingerprint, records, &ROW_COLUMNS)
}

/// Reads per-cell rows back; per-sample records are not part of this file.
pub fn load_report(path: &Path, expected_fingerprint: Option<&str>) -> Result<BenchResult> {
    let (fingerprint, records) = read_csv::<RowRecord>(path, expected_fingerprint)?;
    let rows = records
        .into_iter()
        .map(|r| BenchRow {
            mode: r.mode,
            row_coverage: r.row_coverage,
            lambda: r.lambda,
            scheme: r.scheme,
            report: MetricReport {
                masked_mse_2x2: r.masked_mse_2x2,
                sobel_mse: r.sobel_mse,
                n_unobserved: r.n_unobserved,
                fingerprint: fingerprint.clone(),
            },
            n_samples: r.n_samples,
            wall_time: r.wall_time_s,
        })
        .collect();
    Ok(BenchResult {
        fingerprint,
        rows,
        samples: Vec::new(),
    })
}

/// Writes the raw per-sample records.
pub fn save_samples(path: &Path, result: &BenchResult) -> Result<()> {
    let records = result.samples.iter().map(|s| SampleRow {
        mode: s.cell.mode,
        row_coverage: s.cell.row_coverage,
        lambda: s.cell.lambda,
        scheme: s.cell.scheme,
        sample: s.sample,
        masked_mse_2x2: s.report.masked_mse_2x2,
        sobel_mse: s.report.sobel_mse,
        n_unobserved: s.report.n_unobserved,
        wall_time_s: s.wall_time,
    });
    write_csv(path, &result.fingerprint, records, &SAMPLE_COLUMNS)
}

pub fn load_samples(path: &Path, expected_fingerprint: Option<&str>) -> Result<Vec<SampleRecord>> {
    let (fingerprint, records) = read_csv::<SampleRow>(path, expected_fingerprint)?;
    Ok(records
        .into_iter()
        .map(|s| SampleRecord {
            cell: CellSpec {
                mode: s.mode,
                row_coverage: s.row_coverage,
                lambda: s.lambda,
                scheme: s.scheme,
            },
            sample: s.sample,
            report: MetricReport {
                masked_mse_2x2: s.masked_mse_2x2,
                sobel_mse: s.sobel_mse,
                n_unobserved: s.n_unobserved,
                fingerprint: fingerprint.clone(),
            },
            wall_time: s.wall_time_s,
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.5}"))
}

/// Human-readable table of the per-cell rows.
pub fn format_table(result: &BenchResult) -> String {
    let header = [
        "mode",
        "row",
        "lambda",
        "scheme",
        "masked_mse_2x2",
        "sobel_mse",
        "n",
        "time_s",
    ];
    let body: Vec<[String; 8]> = result
        .rows
        .iter()
        .map(|r| {
            [
                r.mode.to_string(),
                format!("{:.0}%", 100.0 * r.row_coverage),
                r.lambda.to_string(),
                r.scheme.to_string(),
                opt(r.report.masked_mse_2x2),
                opt(r.report.sobel_mse),
                r.n_samples.to_string(),
                format!("{:.1}", r.wall_time),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i < 4 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(
        &mut out,
        &rule.iter().map(String::as_str).collect::<Vec<_>>(),
    );
    for row in &body {
        line(
            &mut out,
            &row.iter().map(String::as_str).collect::<Vec<_>>(),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: TrainingMode, scheme: Scheme, mse: Option<f64>) -> BenchRow {
        BenchRow {
            mode,
            row_coverage: 0.15,
            lambda: 15,
            scheme,
            report: MetricReport {
                masked_mse_2x2: mse,
                sobel_mse: Some(0.1 / 3.0),
                n_unobserved: 3000,
                fingerprint: "abc".into(),
            },
            n_samples: 16,
            wall_time: 12.25,
        }
    }

    #[test]
    fn table_is_aligned() {
        let result = BenchResult {
            fingerprint: "abc".into(),
            rows: vec![
                row(TrainingMode::Full, Scheme::Pma, Some(0.0123)),
                row(TrainingMode::Double, Scheme::AasOnly, None),
            ],
            samples: Vec::new(),
        };
        let t = format_table(&result);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].contains("0.01230"));
        assert!(lines[3].contains(" - "));
        assert_eq!(lines[1].len(), lines[2].len());
    }
}
