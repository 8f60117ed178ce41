//! Patient-grouped cross-validation runs and offline evaluation.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! config.txt
//! folds.csv                  patient_id,fold
//! fold<k>/model.gseg
//! fold<k>/history.csv
//! fold<k>/report.csv
//! fold<k>/predictions/<stem>.png
//! report.csv                 all validation images of all folds
//! final/...                  only with a test directory: model trained on
//!                            every patch, its history, and the test report
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use glandseg_core::data::{resize_mask_nearest, Image, LabelMask};
use glandseg_core::folds::split_folds;
use glandseg_core::loss::{image_level_report, MetricReport};
use glandseg_core::train::{merge_border, predict_masks, train_model, EpochRecord, Sample};
use glandseg_core::unet::build_unet;
use glandseg_core::UNetModel;

use crate::config::ExperimentConfig;
use crate::dataset::{load_dataset, Dataset, Item};
use crate::error::{Error, Result};
use crate::io::{ensure_parent, read_mask, save_checkpoint, write_mask};
use crate::report::{write_history, write_report};

/// Classes reported by evaluation; the border class is merged into gland.
pub const EVAL_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub folds: Vec<MetricReport>,
    pub aggregate: MetricReport,
    pub test: Option<MetricReport>,
}

/// Progress messages emitted while an experiment runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Progress<'a> {
    FoldStart {
        fold: usize,
        train: usize,
        val: usize,
    },
    Epoch {
        label: &'a str,
        total: usize,
        record: &'a EpochRecord,
    },
    FoldDone {
        label: &'a str,
        report: &'a MetricReport,
    },
}

fn samples(items: &[&Item], config: &ExperimentConfig) -> Result<Vec<Sample>> {
    items.iter().map(|i| i.sample(config.border())).collect()
}

/// Predicts every item, merges the border class, and scores the result
/// against the binary references.
fn predict_and_score(
    model: &UNetModel<f32>,
    items: &[&Item],
    batch_size: usize,
    predictions_dir: &Path,
) -> Result<MetricReport> {
    let images: Vec<&Image> = items.iter().map(|i| &i.image).collect();
    let preds: Vec<LabelMask> = predict_masks(model, &images, batch_size)?
        .iter()
        .map(merge_border)
        .collect();
    fs::create_dir_all(predictions_dir).map_err(Error::io(predictions_dir))?;
    for (item, pred) in items.iter().zip(&preds) {
        write_mask(
            &predictions_dir.join(format!("{}.png", item.record.stem())),
            pred,
        )?;
    }
    Ok(image_level_report(
        items
            .iter()
            .zip(&preds)
            .map(|(item, pred)| (item.record.stem(), pred, &item.mask)),
        EVAL_CLASSES,
    )?)
}

fn train_one(
    config: &ExperimentConfig,
    label: &str,
    seed: u64,
    train: &[Sample],
    val: &[Sample],
    dir: &Path,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<UNetModel<f32>> {
    let unet = config.unet();
    let mut model = build_unet::<f32>(unet, seed)?;
    let history = train_model(&mut model, train, val, &config.train(), |record| {
        progress(Progress::Epoch {
            label,
            total: config.epochs,
            record,
        })
    })?;
    save_checkpoint(&dir.join("model.gseg"), &model)?;
    write_history(&dir.join("history.csv"), &history, unet.num_classes)?;
    Ok(model)
}

/// Runs k-fold cross-validation and, with a test directory, a final
/// retrain on all data evaluated on the test cohort.
pub fn run_experiment(
    config: &ExperimentConfig,
    mut progress: impl FnMut(Progress<'_>),
) -> Result<ExperimentSummary> {
    config.validate()?;
    let data = load_dataset(&config.data_dir, config.input_side, config.input_channels)?;
    let test = match &config.test_dir {
        Some(dir) => Some(load_dataset(dir, config.input_side, config.input_channels)?),
        None => None,
    };
    let records = data.records();
    let split = split_folds(&records, config.folds, config.seed)?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let config_path = out.join("config.txt");
    fs::write(&config_path, config.to_text()).map_err(Error::io(&config_path))?;
    write_folds(&out.join("folds.csv"), &split.assignment)?;

    let mut fold_reports = Vec::with_capacity(config.folds);
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for fold in 0..config.folds {
        let train_items: Vec<&Item> = split
            .training_indices(&records, fold)
            .into_iter()
            .map(|i| &data.items[i])
            .collect();
        let val_items: Vec<&Item> = split
            .validation_indices(&records, fold)
            .into_iter()
            .map(|i| &data.items[i])
            .collect();
        progress(Progress::FoldStart {
            fold,
            train: train_items.len(),
            val: val_items.len(),
        });
        let dir = out.join(format!("fold{fold}"));
        let label = format!("fold {fold}");
        let model = train_one(
            config,
            &label,
            config.seed.wrapping_add(fold as u64),
            &samples(&train_items, config)?,
            &samples(&val_items, config)?,
            &dir,
            &mut progress,
        )?;
        let report = predict_and_score(
            &model,
            &val_items,
            config.batch_size,
            &dir.join("predictions"),
        )?;
        write_report(&dir.join("report.csv"), &report)?;
        progress(Progress::FoldDone {
            label: &label,
            report: &report,
        });
        rows.extend(
            report
                .image_ids
                .iter()
                .cloned()
                .zip(report.per_image.iter().cloned()),
        );
        fold_reports.push(report);
    }
    let (ids, per_image) = rows.into_iter().unzip();
    let aggregate = MetricReport::from_rows(fold_reports[0].class_names.clone(), ids, per_image)?;
    write_report(&out.join("report.csv"), &aggregate)?;

    let test_report = match test {
        Some(test) => Some(run_final(config, &data, &test, &mut progress)?),
        None => None,
    };
    Ok(ExperimentSummary {
        folds: fold_reports,
        aggregate,
        test: test_report,
    })
}

fn run_final(
    config: &ExperimentConfig,
    data: &Dataset,
    test: &Dataset,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<MetricReport> {
    let dir = config.output_dir.join("final");
    let all: Vec<&Item> = data.items.iter().collect();
    let model = train_one(
        config,
        "final",
        config.seed.wrapping_add(config.folds as u64),
        &samples(&all, config)?,
        &[],
        &dir,
        progress,
    )?;
    let test_items: Vec<&Item> = test.items.iter().collect();
    let report = predict_and_score(
        &model,
        &test_items,
        config.batch_size,
        &dir.join("predictions"),
    )?;
    write_report(&dir.join("test_report.csv"), &report)?;
    progress(Progress::FoldDone {
        label: "test",
        report: &report,
    });
    Ok(report)
}

fn write_folds(path: &Path, assignment: &std::collections::BTreeMap<String, usize>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::csv(path))?;
    w.write_record(["patient_id", "fold"])
        .map_err(Error::csv(path))?;
    for (patient, fold) in assignment {
        w.write_record([patient.as_str(), &fold.to_string()])
            .map_err(Error::csv(path))?;
    }
    w.flush().map_err(Error::io(path))
}

/// Scores a model on every patch of a dataset, writing predicted masks
/// to `predictions_dir`.
pub fn evaluate_checkpoint(
    model: &UNetModel<f32>,
    data_dir: &Path,
    predictions_dir: &Path,
    batch_size: usize,
) -> Result<MetricReport> {
    let data = load_dataset(
        data_dir,
        model.config.input_side,
        model.config.input_channels,
    )?;
    let items: Vec<&Item> = data.items.iter().collect();
    predict_and_score(model, &items, batch_size.max(1), predictions_dir)
}

/// Scores saved prediction masks against the references of a dataset.
///
/// Every `<stem>.png` in `predictions_dir` must match a manifest entry; the
/// reference is resized to the prediction's side.
pub fn evaluate_predictions(data_dir: &Path, predictions_dir: &Path) -> Result<MetricReport> {
    let records = crate::dataset::read_manifest(data_dir)?;
    let mut triples = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(predictions_dir)
        .map_err(Error::io(predictions_dir))?
        .map(|e| e.map(|e| e.path()).map_err(Error::io(predictions_dir)))
        .collect::<Result<_>>()?;
    entries.retain(|p| p.extension().is_some_and(|e| e == "png"));
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no prediction masks found",
            predictions_dir.display()
        )));
    }
    let stems: std::collections::BTreeSet<String> = records.iter().map(|r| r.stem()).collect();
    let mut predicted = std::collections::BTreeMap::new();
    for path in &entries {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if !stems.contains(&stem) {
            return Err(Error::Dataset(format!(
                "{}: {stem} is not in the manifest",
                path.display()
            )));
        }
        predicted.insert(stem, path);
    }
    // in manifest order
    for record in &records {
        let stem = record.stem();
        let Some(path) = predicted.get(&stem) else {
            continue;
        };
        let pred = merge_border(&read_mask(path)?);
        let reference = read_mask(&data_dir.join(&record.mask_path))?;
        if reference.width() != reference.height() {
            return Err(Error::Dataset(format!(
                "{stem}: reference mask is not square"
            )));
        }
        let reference = resize_mask_nearest(&reference, pred.width())?;
        triples.push((stem, pred, reference));
    }
    Ok(image_level_report(
        triples.iter().map(|(s, p, r)| (s.clone(), p, r)),
        EVAL_CLASSES,
    )?)
}

/// Writes the argmax mask of `image_path` at the input's resolution, plus an
/// optional copy of the input with predicted gland contours drawn in green.
pub fn predict_file(
    model: &UNetModel<f32>,
    image_path: &Path,
    mask_out: &Path,
    overlay_out: Option<&Path>,
) -> Result<LabelMask> {
    let cfg = model.config;
    let image = crate::io::read_image(image_path, cfg.input_channels)?;
    if image.width() != image.height() {
        return Err(Error::Dataset(format!(
            "{}: expected a square image, got {}x{}",
            image_path.display(),
            image.width(),
            image.height()
        )));
    }
    let small = glandseg_core::data::resize_image_bilinear(&image, cfg.input_side)?;
    let pred = predict_masks(model, &[&small], 1)?.remove(0);
    let mask = resize_mask_nearest(&pred, image.width())?;
    ensure_parent(mask_out)?;
    write_mask(mask_out, &mask)?;
    if let Some(path) = overlay_out {
        ensure_parent(path)?;
        crate::io::write_image(path, &overlay(&image, &mask))?;
    }
    Ok(mask)
}

/// Input image with every non-background pixel that touches a different
/// label (4-neighbourhood) painted green.
pub fn overlay(image: &Image, mask: &LabelMask) -> Image {
    let (w, h) = (mask.width(), mask.height());
    let edge = |x: usize, y: usize| {
        let l = mask.get(x, y);
        l != 0
            && [(0, -1), (0, 1), (-1, 0), (1, 0)].iter().any(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                nx >= 0
                    && ny >= 0
                    && (nx as usize) < w
                    && (ny as usize) < h
                    && mask.get(nx as usize, ny as usize) != l
            })
    };
    let rgb = |c: usize, x: usize, y: usize| image.get(c.min(image.channels() - 1), x, y);
    Image::from_fn(3, w, h, |c, x, y| {
        if edge(x, y) {
            [0.0, 1.0, 0.0][c]
        } else {
            rgb(c, x, y)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_marks_inner_contour_only() {
        let image = Image::filled(3, 5, 5, 0.5);
        let mask = LabelMask::from_fn(5, 5, |x, y| (x >= 1 && x <= 3 && y >= 1 && y <= 3) as u8);
        let o = overlay(&image, &mask);
        assert_eq!(o.get(1, 1, 1), 1.0);
        assert_eq!(o.get(1, 2, 2), 0.5);
        assert_eq!(o.get(1, 0, 0), 0.5);
    }
}
