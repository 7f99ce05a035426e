//! Dataset directory layout and bulk corruption.
//!
//! A dataset directory holds `images/NNNN.png`, `labels/NNNN.png` (training
//! labels, possibly corrupted) and `clean/NNNN.png` (evaluation ground truth),
//! plus a `meta.json` describing shape and category count.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError};
use crate::morph::{jed_corrupt, JedSpec};
use crate::raster::{Image, LabelMap};
use crate::rng::{domain, stream_rng};
use crate::synth::{generate_sample, SynthError, SynthSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    Fs {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("dataset at {dir} is incomplete or inconsistent:\n{problems}")]
    Inconsistent { dir: String, problems: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Fs { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DatasetMeta {
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub num_categories: usize,
}

/// An in-memory dataset: images with their training labels and clean labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub images: Vec<Image>,
    pub labels: Vec<LabelMap>,
    pub clean: Vec<LabelMap>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn sample_name(index: usize) -> String {
    format!("{index:04}.png")
}

fn meta_path(dir: &Path) -> PathBuf {
    dir.join("meta.json")
}

fn write_meta(dir: &Path, meta: &DatasetMeta) -> Result<(), DataError> {
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    fs::write(meta_path(dir), text).map_err(fs_err(dir))
}

fn read_meta(dir: &Path) -> Result<DatasetMeta, DataError> {
    let path = meta_path(dir);
    let text = fs::read_to_string(&path).map_err(fs_err(&path))?;
    serde_json::from_str(&text).map_err(|e| DataError::Inconsistent {
        dir: dir.display().to_string(),
        problems: format!("meta.json: {e}"),
    })
}

/// Generates the synthetic dataset described by `spec` and writes it under
/// `dir`. Training labels start out identical to the clean labels; run the
/// corruption pass to add noise.
pub fn write_dataset(spec: &SynthSpec, dir: &Path) -> Result<(), DataError> {
    spec.validate()?;
    for sub in ["images", "labels", "clean"] {
        fs::create_dir_all(dir.join(sub)).map_err(fs_err(dir))?;
    }
    let samples: Vec<(Image, LabelMap)> = (0..spec.num_images)
        .into_par_iter()
        .map(|i| generate_sample(spec, i))
        .collect::<Result<_, _>>()?;
    for (i, (image, labels)) in samples.iter().enumerate() {
        let name = sample_name(i);
        io::write_image_png(&dir.join("images").join(&name), image)?;
        io::write_label_png(&dir.join("labels").join(&name), labels)?;
        io::write_label_png(&dir.join("clean").join(&name), labels)?;
    }
    write_meta(
        dir,
        &DatasetMeta {
            num_images: spec.num_images,
            height: spec.height,
            width: spec.width,
            num_categories: spec.num_categories,
        },
    )
}

/// Loads a dataset directory, verifying that every sample is complete and
/// shape-consistent. All problems are reported at once.
pub fn read_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let meta = read_meta(dir)?;
    let mut problems = Vec::new();
    let mut images = Vec::with_capacity(meta.num_images);
    let mut labels = Vec::with_capacity(meta.num_images);
    let mut clean = Vec::with_capacity(meta.num_images);
    for i in 0..meta.num_images {
        let name = sample_name(i);
        let img_path = dir.join("images").join(&name);
        let lab_path = dir.join("labels").join(&name);
        let cln_path = dir.join("clean").join(&name);
        let mut missing = false;
        for p in [&img_path, &lab_path, &cln_path] {
            if !p.exists() {
                problems.push(format!("missing {}", p.display()));
                missing = true;
            }
        }
        if missing {
            continue;
        }
        match (
            io::read_image_png(&img_path),
            io::read_label_png(&lab_path, meta.num_categories),
            io::read_label_png(&cln_path, meta.num_categories),
        ) {
            (Ok(img), Ok(lab), Ok(cln)) => {
                if img.height() != meta.height
                    || img.width() != meta.width
                    || !lab.same_shape(&cln)
                    || lab.height() != img.height()
                    || lab.width() != img.width()
                {
                    problems.push(format!("shape mismatch in sample {name}"));
                } else {
                    images.push(img);
                    labels.push(lab);
                    clean.push(cln);
                }
            }
            (img, lab, cln) => {
                for err in [img.err(), lab.err(), cln.err()].into_iter().flatten() {
                    problems.push(err.to_string());
                }
            }
        }
    }
    if !problems.is_empty() {
        return Err(DataError::Inconsistent {
            dir: dir.display().to_string(),
            problems: problems.join("\n"),
        });
    }
    Ok(Dataset { meta, images, labels, clean })
}

/// Summary of a corruption pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptReport {
    pub num_images: usize,
    /// Samples skipped because they had no foreground.
    pub num_no_foreground: usize,
    /// Fraction of label pixels changed across the dataset.
    pub changed_fraction: f64,
}

/// Applies JED corruption to every training label of the dataset at `in_dir`
/// and writes the corrupted copy to `out_dir`. Images and clean labels are
/// carried over unchanged. Sample `i` uses the random stream
/// `(spec.seed, JED, i)`, so corruption order is irrelevant.
pub fn corrupt_dataset(in_dir: &Path, out_dir: &Path, spec: &JedSpec) -> Result<CorruptReport, DataError> {
    let ds = read_dataset(in_dir)?;
    for sub in ["images", "labels", "clean"] {
        fs::create_dir_all(out_dir.join(sub)).map_err(fs_err(out_dir))?;
    }
    let corrupted: Vec<(LabelMap, bool)> = ds
        .labels
        .par_iter()
        .enumerate()
        .map(|(i, lab)| {
            let mut rng = stream_rng(spec.seed, domain::JED, i as u64);
            jed_corrupt(lab, spec, &mut rng)
        })
        .collect();

    let mut changed = 0u64;
    let mut no_fg = 0usize;
    for (i, (noisy, warned)) in corrupted.iter().enumerate() {
        let name = sample_name(i);
        io::write_image_png(&out_dir.join("images").join(&name), &ds.images[i])?;
        io::write_label_png(&out_dir.join("labels").join(&name), noisy)?;
        io::write_label_png(&out_dir.join("clean").join(&name), &ds.clean[i])?;
        changed += noisy
            .data()
            .iter()
            .zip(ds.labels[i].data())
            .filter(|(a, b)| a != b)
            .count() as u64;
        no_fg += usize::from(*warned);
    }
    write_meta(out_dir, &ds.meta)?;
    let total_px = (ds.meta.num_images * ds.meta.height * ds.meta.width) as f64;
    Ok(CorruptReport {
        num_images: ds.meta.num_images,
        num_no_foreground: no_fg,
        changed_fraction: changed as f64 / total_px,
    })
}
