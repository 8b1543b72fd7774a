use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{histogram, CaseReport, RoiMetrics, DISPLAY_THRESHOLD};
use crate::error::{Error, Result};

pub const METRIC_NAMES: [&str; 4] = ["position_error", "angle_error", "log10_amplitude_error", "relative_max"];

pub const HISTOGRAM_BINS: usize = 20;

fn metric(m: &RoiMetrics, name: &str) -> f64 {
    match name {
        "position_error" => m.position_error,
        "angle_error" => m.angle_error,
        "log10_amplitude_error" => m.log10_amplitude_error,
        _ => m.relative_max,
    }
}

/// One row per realization and ROI.
pub fn write_metrics_csv(path: impl AsRef<Path>, reports: &[CaseReport]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "case_id",
        "roi",
        "realization_seed",
        "position_error",
        "angle_error",
        "log10_amplitude_error",
        "relative_max",
        "detected",
    ])?;
    for report in reports {
        for r in &report.realizations {
            for (roi, m) in r.rois.iter().enumerate() {
                let name = report.rois.get(roi).map_or("", |s| s.name.as_str());
                w.write_record([
                    report.spec.id.clone(),
                    name.to_string(),
                    r.seed.to_string(),
                    format!("{:.17e}", m.position_error),
                    format!("{:.17e}", m.angle_error),
                    format!("{:.17e}", m.log10_amplitude_error),
                    format!("{:.17e}", m.relative_max),
                    m.detected.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn summary_value(report: &CaseReport) -> Value {
    let rois: serde_json::Map<String, Value> = report
        .rois
        .iter()
        .map(|roi| {
            let mut entry = serde_json::Map::new();
            entry.insert("detection_rate".into(), json!(roi.detection_rate));
            for name in METRIC_NAMES {
                let h = roi.metrics.by_name(name).expect("known metric");
                entry.insert(
                    name.into(),
                    json!({
                        "median": finite_or_null(h.median),
                        "lower_5": finite_or_null(h.lower),
                        "upper_95": finite_or_null(h.upper),
                    }),
                );
            }
            (roi.name.clone(), Value::Object(entry))
        })
        .collect();
    json!({
        "case_id": report.spec.id,
        "modality": report.spec.modality.to_string(),
        "realizations": report.realizations.len(),
        "master_seed": report.master_seed,
        "rois": rois,
    })
}

/// Medians, 90% intervals and detection rates. A single report is written as
/// an object, several as an array.
pub fn write_summary_json(path: impl AsRef<Path>, reports: &[CaseReport]) -> Result<()> {
    let path = path.as_ref();
    let value = match reports {
        [one] => summary_value(one),
        many => Value::Array(many.iter().map(summary_value).collect()),
    };
    let text = serde_json::to_string_pretty(&value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Two-column `bin_center count` files `hist_<metric>_<roi>.dat`. ROIs whose
/// relative maximum is below the display threshold are left out.
pub fn write_histograms(dir: impl AsRef<Path>, report: &CaseReport) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    for (i, roi) in report.rois.iter().enumerate() {
        for name in METRIC_NAMES {
            let values = report
                .realizations
                .iter()
                .map(|r| &r.rois[i])
                .filter(|m| m.relative_max >= DISPLAY_THRESHOLD)
                .map(|m| metric(m, name));
            let path = dir.join(format!("hist_{name}_{}.dat", roi.name));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(file);
            let io = |e| Error::io(&path, e);
            writeln!(w, "# bin_center count").map_err(io)?;
            for (center, count) in histogram(values, HISTOGRAM_BINS) {
                writeln!(w, "{center:.10e} {count}").map_err(io)?;
            }
            w.flush().map_err(io)?;
            written.push(path);
        }
    }
    Ok(written)
}
