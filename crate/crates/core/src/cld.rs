//! Clean-label mask sampling: a per-pixel vote between the model's
//! prediction and the given (possibly noisy) annotation.
//!
//! Strategy 1 keeps only confident predictions and self-trains on them.
//! Strategy 2 additionally keeps pixels where the prediction agrees with the
//! given label, which tempers confirmation bias. Disentangling activates only
//! after a warm-up phase in which every given annotation supervises.

use thiserror::Error;

use crate::raster::{argmax_confidence, LabelMap, ProbMap, SelectionMask};

#[derive(Debug, Error)]
pub enum CldError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Keep pixels with confidence >= gamma; supervise with the prediction.
    Strategy1,
    /// Keep pixels with confidence >= gamma or prediction == given label.
    Strategy2,
}

/// What supervises a pixel kept by the confidence branch: the model's vote
/// (prediction) or the given annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSource {
    Vote,
    Given,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CldConfig {
    pub strategy: Strategy,
    pub gamma: f64,
    pub warmup_epochs: usize,
    pub target_source: TargetSource,
}

impl Default for CldConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Strategy2,
            gamma: 0.9,
            warmup_epochs: 10,
            target_source: TargetSource::Vote,
        }
    }
}

impl CldConfig {
    pub fn validate(&self) -> Result<(), CldError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CldError::InvalidConfig(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

/// True once the warm-up phase is over and mask sampling should run.
pub fn is_disentangling_active(epoch: usize, cfg: &CldConfig) -> bool {
    epoch >= cfg.warmup_epochs
}

/// Votes per pixel and returns the selection mask together with the
/// supervision targets.
///
/// The confidence comparison is `>= gamma`. Pixels with mask 0 carry the
/// given label as an inert filler; every loss ignores them. No gradient
/// flows through this operation: callers hand in detached probabilities.
pub fn sample_clean_mask(
    probs: &ProbMap,
    given: &LabelMap,
    cfg: &CldConfig,
) -> Result<(SelectionMask, LabelMap), CldError> {
    cfg.validate()?;
    if probs.height() != given.height() || probs.width() != given.width() {
        return Err(CldError::ShapeMismatch(format!(
            "probs {}x{} vs labels {}x{}",
            probs.height(),
            probs.width(),
            given.height(),
            given.width()
        )));
    }
    if probs.num_categories() != given.num_categories() {
        return Err(CldError::ShapeMismatch(format!(
            "probs have {} categories, labels {}",
            probs.num_categories(),
            given.num_categories()
        )));
    }
    let (h, w) = (given.height(), given.width());
    let (pred, conf) = argmax_confidence(probs);
    let mut mask = vec![0u8; h * w];
    let mut targets = vec![0u8; h * w];
    for i in 0..h * w {
        let predicted = pred.data()[i];
        let label = given.data()[i];
        let confident = conf[i] >= cfg.gamma;
        let agrees = predicted == label;
        let selected = match cfg.strategy {
            Strategy::Strategy1 => confident,
            Strategy::Strategy2 => confident || agrees,
        };
        mask[i] = u8::from(selected);
        targets[i] = if selected && confident && cfg.target_source == TargetSource::Vote {
            predicted
        } else {
            label
        };
    }
    let mask = SelectionMask::new(h, w, mask).expect("binary entries");
    let targets = LabelMap::new(h, w, given.num_categories(), targets).expect("indices in range");
    Ok((mask, targets))
}
