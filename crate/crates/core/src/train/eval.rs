//! Model evaluation against clean labels.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{read_dataset, DataError, Dataset};
use crate::loss::{iou_dice, LossError};
use crate::model::{DualStreamModel, Tensor4};
use crate::raster::LabelMap;
use crate::train::checkpoint::{load_checkpoint, CheckpointError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint expects {expected} input channels, dataset has {got}")]
    ChannelMismatch { expected: usize, got: usize },
}

/// Mean per-image scores for one category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: usize,
    pub iou: f64,
    pub dice: f64,
}

/// Dataset-level evaluation: per-category means over images, plus the
/// foreground average (background excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_category: Vec<CategoryScore>,
    pub foreground_iou: f64,
    pub foreground_dice: f64,
}

/// Images pre-flattened to the model's input layout.
pub struct EvalSet {
    pub chw: Vec<Vec<f64>>,
    pub clean: Vec<LabelMap>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
}

impl EvalSet {
    pub fn from_dataset(ds: &Dataset) -> Self {
        Self {
            chw: ds.images.iter().map(|img| img.to_chw()).collect(),
            clean: ds.clean.clone(),
            height: ds.meta.height,
            width: ds.meta.width,
            channels: ds.images.first().map_or(0, |i| i.channels()),
            num_classes: ds.meta.num_categories,
        }
    }
}

/// Per-pixel argmax over the channel axis of one image of logits.
/// Ties break toward the lowest category, matching the probability route.
pub fn argmax_chw(logits: &[f64], num_classes: usize, hw: usize) -> Vec<u8> {
    let mut out = vec![0u8; hw];
    for (p, o) in out.iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_v = logits[p];
        for c in 1..num_classes {
            let v = logits[c * hw + p];
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        *o = best as u8;
    }
    out
}

/// Evaluates the primary stream's argmax prediction against clean labels.
pub fn evaluate_set(model: &DualStreamModel, set: &EvalSet, batch_size: usize) -> Result<EvalSummary, EvalError> {
    if set.chw.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let y = set.num_classes;
    let hw = set.height * set.width;
    let mut sums = vec![(0.0f64, 0.0f64); y];
    let n = set.chw.len();
    let mut i = 0;
    while i < n {
        let bn = batch_size.min(n - i);
        let mut x = Tensor4::zeros(bn, set.channels, set.height, set.width);
        for slot in 0..bn {
            x.image_mut(slot).copy_from_slice(&set.chw[i + slot]);
        }
        let (primary, _) = model.forward_eval(&x);
        for slot in 0..bn {
            let pred_data = argmax_chw(primary.image(slot), y, hw);
            let pred = LabelMap::new(set.height, set.width, y, pred_data).expect("argmax in range");
            for (cat, acc) in sums.iter_mut().enumerate() {
                let (iou, dice) = iou_dice(&pred, &set.clean[i + slot], cat)?;
                acc.0 += iou;
                acc.1 += dice;
            }
        }
        i += bn;
    }
    let per_category: Vec<CategoryScore> = sums
        .iter()
        .enumerate()
        .map(|(category, &(iou, dice))| CategoryScore {
            category,
            iou: iou / n as f64,
            dice: dice / n as f64,
        })
        .collect();
    let fg = &per_category[1..];
    let fg_n = fg.len().max(1) as f64;
    Ok(EvalSummary {
        foreground_iou: fg.iter().map(|s| s.iou).sum::<f64>() / fg_n,
        foreground_dice: fg.iter().map(|s| s.dice).sum::<f64>() / fg_n,
        per_category,
    })
}

/// Loads a checkpoint and evaluates it on the dataset at `data_dir`.
pub fn evaluate_checkpoint(ckpt: &Path, data_dir: &Path, batch_size: usize) -> Result<EvalSummary, EvalError> {
    let loaded = load_checkpoint(ckpt)?;
    let ds = read_dataset(data_dir)?;
    let set = EvalSet::from_dataset(&ds);
    if set.channels != loaded.model.cfg.in_channels {
        return Err(EvalError::ChannelMismatch {
            expected: loaded.model.cfg.in_channels,
            got: set.channels,
        });
    }
    evaluate_set(&loaded.model, &set, batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_break_low() {
        // 2 categories, 1 pixel, equal logits.
        assert_eq!(argmax_chw(&[0.5, 0.5], 2, 1), vec![0]);
        assert_eq!(argmax_chw(&[0.4, 0.5], 2, 1), vec![1]);
    }
}
