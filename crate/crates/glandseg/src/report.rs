//! CSV serialisation of metric reports and training histories.
//!
//! A report file holds one `image_id,class,di` row per image and class,
//! followed by a `class,mean,std` header line and one summary row per class.

use std::path::Path;

use glandseg_core::loss::MetricReport;
use glandseg_core::train::History;

use crate::error::{Error, Result};
use crate::io::ensure_parent;

pub const REPORT_HEADER: [&str; 3] = ["image_id", "class", "di"];
pub const SUMMARY_HEADER: [&str; 3] = ["class", "mean", "std"];

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    let mut row = |fields: [&str; 3]| w.write_record(fields).map_err(Error::csv(path));
    row(REPORT_HEADER)?;
    for (id, values) in report.image_ids.iter().zip(&report.per_image) {
        for (class, di) in report.class_names.iter().zip(values) {
            row([id, class, &di.to_string()])?;
        }
    }
    row(SUMMARY_HEADER)?;
    for (c, class) in report.class_names.iter().enumerate() {
        row([
            class,
            &report.mean[c].to_string(),
            &report.std[c].to_string(),
        ])?;
    }
    w.flush().map_err(Error::io(path))
}

/// Parses a report written by [`write_report`]; summary rows are recomputed
/// from the per-image values and checked against the file.
pub fn read_report(path: &Path) -> Result<MetricReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(Error::csv(path))?;
    let bad = |msg: &str| Error::Dataset(format!("{}: {msg}", path.display()));
    let rows: Vec<csv::StringRecord> = reader
        .records()
        .collect::<Result<_, _>>()
        .map_err(Error::csv(path))?;
    if rows.first().map(|r| r.iter().eq(REPORT_HEADER)) != Some(true) {
        return Err(bad("missing report header"));
    }
    let split = rows
        .iter()
        .position(|r| r.iter().eq(SUMMARY_HEADER))
        .ok_or_else(|| bad("missing summary header"))?;
    let mut class_names: Vec<String> = Vec::new();
    let mut image_ids: Vec<String> = Vec::new();
    let mut per_image: Vec<Vec<f64>> = Vec::new();
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| bad(&format!("{s} is not a number")))
    };
    for r in &rows[1..split] {
        if image_ids.last().map(String::as_str) != Some(&r[0]) {
            image_ids.push(r[0].to_string());
            per_image.push(Vec::new());
        }
        let row = per_image.last_mut().expect("row pushed above");
        if image_ids.len() == 1 {
            class_names.push(r[1].to_string());
        } else if class_names.get(row.len()).map(String::as_str) != Some(&r[1]) {
            return Err(bad("classes differ between images"));
        }
        row.push(parse(&r[2])?);
    }
    let report = MetricReport::from_rows(class_names, image_ids, per_image)?;
    let summary = &rows[split + 1..];
    if summary.len() != report.class_names.len() {
        return Err(bad("summary rows do not match the classes"));
    }
    for (c, r) in summary.iter().enumerate() {
        if r[0] != report.class_names[c]
            || parse(&r[1])? != report.mean[c]
            || parse(&r[2])? != report.std[c]
        {
            return Err(bad("summary rows disagree with the per-image values"));
        }
    }
    Ok(report)
}

/// Column names of the history file for a model with `num_classes` outputs.
pub fn history_header(num_classes: usize) -> Vec<&'static str> {
    let mut h = vec!["epoch", "train_loss", "val_di_gland", "val_di_background"];
    if num_classes > 2 {
        h.push("val_di_border");
    }
    h
}

pub fn write_history(path: &Path, history: &History, num_classes: usize) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    w.write_record(history_header(num_classes))
        .map_err(Error::csv(path))?;
    for e in &history.epochs {
        let mut row = vec![e.epoch.to_string(), e.train_loss.to_string()];
        row.push(e.val_di[1].to_string());
        row.push(e.val_di[0].to_string());
        row.extend(e.val_di.iter().skip(2).map(f64::to_string));
        w.write_record(&row).map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}
