//! Dataset directories: `images/<stem>.png`, `masks/<stem>.png` and a
//! `manifest.csv` listing one [`PatchRecord`] per row, with paths relative
//! to the dataset root.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use glandseg_core::data::patches::extract_patches;
use glandseg_core::data::{
    add_border_class, resize_image_bilinear, resize_mask_nearest, synth_dataset, Image, LabelMask,
    PatchRecord, SynthConfig,
};
use glandseg_core::train::Sample;

use crate::error::{Error, Result};
use crate::io::{read_image, read_mask, write_image, write_mask};

pub const MANIFEST: &str = "manifest.csv";
pub const MANIFEST_HEADER: [&str; 6] = [
    "patient_id",
    "slide_id",
    "x",
    "y",
    "image_path",
    "mask_path",
];

pub fn read_manifest(root: &Path) -> Result<Vec<PatchRecord>> {
    let path = root.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::Dataset(format!("{} not found", path.display())));
    }
    let mut reader = csv::Reader::from_path(&path).map_err(Error::csv(&path))?;
    let header = reader.headers().map_err(Error::csv(&path))?;
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Dataset(format!(
            "{}: expected header {}",
            path.display(),
            MANIFEST_HEADER.join(",")
        )));
    }
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(Error::csv(&path))?;
        let coord = |i: usize| {
            row[i].parse::<usize>().map_err(|_| {
                Error::Dataset(format!(
                    "{} row {}: {} is not a pixel coordinate",
                    path.display(),
                    line + 2,
                    &row[i]
                ))
            })
        };
        records.push(PatchRecord {
            patient_id: row[0].to_string(),
            slide_id: row[1].to_string(),
            x: coord(2)?,
            y: coord(3)?,
            image_path: row[4].to_string(),
            mask_path: row[5].to_string(),
        });
    }
    Ok(records)
}

pub fn write_manifest(root: &Path, records: &[PatchRecord]) -> Result<()> {
    fs::create_dir_all(root).map_err(Error::io(root))?;
    let path = root.join(MANIFEST);
    let mut writer = csv::Writer::from_path(&path).map_err(Error::csv(&path))?;
    writer
        .write_record(MANIFEST_HEADER)
        .map_err(Error::csv(&path))?;
    for r in records {
        let (x, y) = (r.x.to_string(), r.y.to_string());
        writer
            .write_record([
                r.patient_id.as_str(),
                &r.slide_id,
                &x,
                &y,
                &r.image_path,
                &r.mask_path,
            ])
            .map_err(Error::csv(&path))?;
    }
    writer.flush().map_err(Error::io(&path))
}

/// One manifest row with its rasters at model resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub record: PatchRecord,
    pub image: Image,
    /// Binary reference labels (0 background, 1 gland).
    pub mask: LabelMask,
}

impl Item {
    /// Training example; with `border_width` the gland contour becomes class 2.
    pub fn sample(&self, border_width: Option<usize>) -> Result<Sample> {
        let mask = match border_width {
            Some(width) => add_border_class(&self.mask, width)?,
            None => self.mask.clone(),
        };
        Ok(Sample {
            id: self.record.stem(),
            image: self.image.clone(),
            mask,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub items: Vec<Item>,
}

impl Dataset {
    pub fn records(&self) -> Vec<PatchRecord> {
        self.items.iter().map(|i| i.record.clone()).collect()
    }
}

fn check_records(root: &Path, records: &[PatchRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: manifest lists no patches",
            root.display()
        )));
    }
    let mut stems = BTreeSet::new();
    for r in records {
        if !stems.insert(r.stem()) {
            return Err(Error::Dataset(format!("duplicate patch {}", r.stem())));
        }
        for rel in [&r.image_path, &r.mask_path] {
            if !root.join(rel).is_file() {
                return Err(Error::Dataset(format!(
                    "{}: {rel} listed in the manifest does not exist",
                    root.display()
                )));
            }
        }
    }
    Ok(())
}

/// Reads and validates a whole dataset, resizing every pair to `side`.
///
/// All files are checked before any is decoded, so a broken manifest fails
/// fast.
pub fn load_dataset(root: &Path, side: usize, channels: usize) -> Result<Dataset> {
    let records = read_manifest(root)?;
    check_records(root, &records)?;
    let mut items = Vec::with_capacity(records.len());
    for record in records {
        let image = read_image(&root.join(&record.image_path), channels)?;
        let mask = read_mask(&root.join(&record.mask_path))?;
        if (image.width(), image.height()) != (mask.width(), mask.height()) {
            return Err(Error::Dataset(format!(
                "{}: image is {}x{} but its mask is {}x{}",
                record.stem(),
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        if mask.labels().iter().any(|&l| l > 1) {
            return Err(Error::Dataset(format!(
                "{}: reference masks must be binary (0 background, 1 gland)",
                record.mask_path
            )));
        }
        if image.width() != image.height() {
            return Err(Error::Dataset(format!(
                "{}: patches must be square, got {}x{}",
                record.stem(),
                image.width(),
                image.height()
            )));
        }
        items.push(Item {
            image: resize_image_bilinear(&image, side)?,
            mask: resize_mask_nearest(&mask, side)?,
            record,
        });
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        items,
    })
}

fn write_pair(root: &Path, record: &PatchRecord, image: &Image, mask: &LabelMask) -> Result<()> {
    for dir in ["images", "masks"] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(Error::io(&d))?;
    }
    write_image(&root.join(&record.image_path), image)?;
    write_mask(&root.join(&record.mask_path), mask)
}

/// Writes a synthetic dataset and its manifest under `root`.
pub fn write_synth(root: &Path, config: &SynthConfig) -> Result<Vec<PatchRecord>> {
    let samples = synth_dataset(config)?;
    let records: Vec<PatchRecord> = samples.iter().map(|s| s.record.clone()).collect();
    for s in &samples {
        write_pair(root, &s.record, &s.image, &s.mask)?;
    }
    write_manifest(root, &records)?;
    Ok(records)
}

/// Cuts one source raster and its mask into overlapping square patches and
/// adds them to the dataset at `root`, creating it if needed.
pub fn patchify(
    image_path: &Path,
    mask_path: &Path,
    patient_id: &str,
    slide_id: &str,
    size: usize,
    overlap: f64,
    root: &Path,
) -> Result<Vec<PatchRecord>> {
    for (what, id) in [("patient", patient_id), ("slide", slide_id)] {
        if id.is_empty() || id.contains("__") || id.contains(['/', '\\', ',']) {
            return Err(Error::Config(format!(
                "{what} id {id:?} must be non-empty without '__', ',' or path separators"
            )));
        }
    }
    let image = read_image(image_path, 3)?;
    let mask = read_mask(mask_path)?;
    let mut records = if root.join(MANIFEST).is_file() {
        read_manifest(root)?
    } else {
        Vec::new()
    };
    let existing: BTreeSet<String> = records.iter().map(|r| r.stem()).collect();
    let patches = extract_patches(&image, &mask, size, overlap)?;
    let mut added = Vec::with_capacity(patches.len());
    for (x, y, img, m) in patches {
        let mut record = PatchRecord {
            patient_id: patient_id.to_string(),
            slide_id: slide_id.to_string(),
            x,
            y,
            image_path: String::new(),
            mask_path: String::new(),
        };
        let stem = record.stem();
        if existing.contains(&stem) {
            return Err(Error::Dataset(format!(
                "patch {stem} is already in the manifest"
            )));
        }
        record.image_path = format!("images/{stem}.png");
        record.mask_path = format!("masks/{stem}.png");
        write_pair(root, &record, &img, &m)?;
        added.push(record);
    }
    records.extend(added.iter().cloned());
    write_manifest(root, &records)?;
    Ok(added)
}
