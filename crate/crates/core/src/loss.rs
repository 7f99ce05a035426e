//! Loss functions and segmentation metrics.
//!
//! The clean-stream loss is a cross-entropy averaged over the pixels selected
//! by the product of the two sampling masks; the noisy-stream loss is the
//! plain per-pixel mean. A fused logits-level variant provides the analytic
//! gradient used by training.

use thiserror::Error;

use crate::model::Tensor4;
use crate::raster::{LabelMap, ProbMap, SelectionMask};

/// Probabilities are clamped here before the log so a selected pixel with an
/// exactly-zero target probability yields a large but finite loss.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Trade-off weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 20.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(format!("loss weights must be finite and nonnegative, got ({}, {})", self.lambda1, self.lambda2));
        }
        Ok(())
    }
}

fn check_shapes(probs: &ProbMap, targets: &LabelMap, masks: &[&SelectionMask]) -> Result<(), LossError> {
    if probs.height() != targets.height() || probs.width() != targets.width() {
        return Err(LossError::ShapeMismatch(format!(
            "probs {}x{} vs targets {}x{}",
            probs.height(),
            probs.width(),
            targets.height(),
            targets.width()
        )));
    }
    if probs.num_categories() != targets.num_categories() {
        return Err(LossError::ShapeMismatch(format!(
            "probs have {} categories, targets {}",
            probs.num_categories(),
            targets.num_categories()
        )));
    }
    for m in masks {
        if m.height() != probs.height() || m.width() != probs.width() {
            return Err(LossError::ShapeMismatch(format!(
                "mask {}x{} vs probs {}x{}",
                m.height(),
                m.width(),
                probs.height(),
                probs.width()
            )));
        }
    }
    Ok(())
}

/// Mean per-pixel cross-entropy over the pixels where both masks are 1.
///
/// Returns exactly 0 when no pixel is selected.
pub fn masked_ce(
    probs: &ProbMap,
    targets: &LabelMap,
    mask_cld: &SelectionMask,
    mask_cbs: &SelectionMask,
) -> Result<f64, LossError> {
    check_shapes(probs, targets, &[mask_cld, mask_cbs])?;
    let y = probs.num_categories();
    let mut sum = 0.0;
    let mut selected = 0u64;
    for (i, (&t, (&m1, &m2))) in targets
        .data()
        .iter()
        .zip(mask_cld.data().iter().zip(mask_cbs.data()))
        .enumerate()
    {
        if m1 * m2 == 1 {
            let p = probs.data()[i * y + t as usize];
            sum += -(p.max(LOG_CLAMP)).ln();
            selected += 1;
        }
    }
    Ok(if selected == 0 { 0.0 } else { sum / selected as f64 })
}

/// Unmasked mean per-pixel cross-entropy (identical to [`masked_ce`] with
/// all-ones masks).
pub fn mean_ce(probs: &ProbMap, targets: &LabelMap) -> Result<f64, LossError> {
    check_shapes(probs, targets, &[])?;
    let y = probs.num_categories();
    let mut sum = 0.0;
    for (i, &t) in targets.data().iter().enumerate() {
        let p = probs.data()[i * y + t as usize];
        sum += -(p.max(LOG_CLAMP)).ln();
    }
    Ok(sum / targets.data().len() as f64)
}

/// Weighted combination of the two stream losses.
pub fn total_loss(l_clean: f64, l_noisy: f64, w: &LossWeights) -> f64 {
    w.lambda1 * l_clean + w.lambda2 * l_noisy
}

/// Per-category intersection-over-union and Dice overlap.
///
/// Both scores are defined as 1.0 when the category is absent from both maps.
pub fn iou_dice(pred: &LabelMap, truth: &LabelMap, category: usize) -> Result<(f64, f64), LossError> {
    if !pred.same_shape(truth) {
        return Err(LossError::ShapeMismatch(format!(
            "pred {}x{} vs truth {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let c = category as u8;
    let mut inter = 0u64;
    let mut p_count = 0u64;
    let mut t_count = 0u64;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let pi = p == c;
        let ti = t == c;
        inter += u64::from(pi && ti);
        p_count += u64::from(pi);
        t_count += u64::from(ti);
    }
    if p_count == 0 && t_count == 0 {
        return Ok((1.0, 1.0));
    }
    let union = p_count + t_count - inter;
    let iou = inter as f64 / union as f64;
    let dice = 2.0 * inter as f64 / (p_count + t_count) as f64;
    Ok((iou, dice))
}

/// Unnormalized contribution of one image to a masked softmax cross-entropy:
/// the summed loss, the number of selected pixels, and the gradient of the
/// *sum* with respect to the logits.
pub struct CePartial {
    pub loss_sum: f64,
    pub selected: u64,
    /// Same layout as the logits slice handed in: (category, row, col).
    pub dlogits: Vec<f64>,
}

/// Masked softmax cross-entropy on raw logits for one image, stored
/// channel-major as (category, row, col). `masks` is None for the unmasked
/// (noisy-stream) case.
///
/// The analytic gradient per selected pixel is `softmax(z) - onehot(target)`;
/// unselected pixels contribute exactly zero.
pub fn softmax_ce_partial(
    logits: &[f64],
    num_classes: usize,
    h: usize,
    w: usize,
    targets: &LabelMap,
    masks: Option<(&SelectionMask, &SelectionMask)>,
) -> CePartial {
    assert_eq!(logits.len(), num_classes * h * w);
    assert_eq!((targets.height(), targets.width()), (h, w));
    let hw = h * w;
    let mut dlogits = vec![0.0; logits.len()];
    let mut loss_sum = 0.0;
    let mut selected = 0u64;
    let mut probs = vec![0.0; num_classes];
    for p in 0..hw {
        if let Some((m1, m2)) = masks {
            if m1.data()[p] * m2.data()[p] == 0 {
                continue;
            }
        }
        let mut max = f64::NEG_INFINITY;
        for c in 0..num_classes {
            max = max.max(logits[c * hw + p]);
        }
        let mut denom = 0.0;
        for c in 0..num_classes {
            let e = (logits[c * hw + p] - max).exp();
            probs[c] = e;
            denom += e;
        }
        let t = targets.data()[p] as usize;
        loss_sum += denom.ln() - (logits[t * hw + p] - max);
        for c in 0..num_classes {
            dlogits[c * hw + p] = probs[c] / denom;
        }
        dlogits[t * hw + p] -= 1.0;
        selected += 1;
    }
    CePartial { loss_sum, selected, dlogits }
}

/// Converts one image of upsampled logits into per-image probability maps.
pub fn probmaps_from_logits(logits: &Tensor4) -> Vec<ProbMap> {
    let (n, y, h, w) = (logits.n, logits.c, logits.h, logits.w);
    let hw = h * w;
    (0..n)
        .map(|i| {
            let img = logits.image(i);
            let mut data = vec![0.0; hw * y];
            for p in 0..hw {
                let mut max = f64::NEG_INFINITY;
                for c in 0..y {
                    max = max.max(img[c * hw + p]);
                }
                let mut denom = 0.0;
                for c in 0..y {
                    let e = (img[c * hw + p] - max).exp();
                    data[p * y + c] = e;
                    denom += e;
                }
                for c in 0..y {
                    data[p * y + c] /= denom;
                }
            }
            ProbMap::new_unchecked(h, w, y, data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::to_one_hot;

    fn probs_2px() -> (ProbMap, LabelMap) {
        // 1x2 image, 2 categories; target probabilities 0.5 and 0.25.
        let probs = ProbMap::new(1, 2, 2, vec![0.5, 0.5, 0.25, 0.75]).unwrap();
        let targets = LabelMap::new(1, 2, 2, vec![0, 0]).unwrap();
        (probs, targets)
    }

    #[test]
    fn masked_ce_hand_values() {
        let (probs, targets) = probs_2px();
        let ones = SelectionMask::ones(1, 2);
        let loss = masked_ce(&probs, &targets, &ones, &ones).unwrap();
        let expect = (2f64.ln() + 4f64.ln()) / 2.0;
        assert!((loss - expect).abs() < 1e-12, "{loss} vs {expect}");

        // Perfectly confident correct predictions give zero loss.
        let labels = LabelMap::new(2, 2, 3, vec![0, 1, 2, 1]).unwrap();
        let oh = to_one_hot(&labels);
        let ones = SelectionMask::ones(2, 2);
        assert_eq!(masked_ce(&oh, &labels, &ones, &ones).unwrap(), 0.0);
    }

    #[test]
    fn masked_ce_ignores_unselected_and_empty_mask_is_zero() {
        let (probs, targets) = probs_2px();
        let mut m = SelectionMask::zeros(1, 2);
        assert_eq!(masked_ce(&probs, &targets, &m, &SelectionMask::ones(1, 2)).unwrap(), 0.0);
        m.set(0, 0, 1);
        let loss = masked_ce(&probs, &targets, &m, &SelectionMask::ones(1, 2)).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mean_ce_matches_masked_with_ones_and_uniform_value() {
        let (probs, targets) = probs_2px();
        let ones = SelectionMask::ones(1, 2);
        let a = mean_ce(&probs, &targets).unwrap();
        let b = masked_ce(&probs, &targets, &ones, &ones).unwrap();
        assert!((a - b).abs() < 1e-12);

        let third = 1.0 / 3.0;
        let probs = ProbMap::new(1, 1, 3, vec![third, third, third]).unwrap();
        let targets = LabelMap::new(1, 1, 3, vec![1]).unwrap();
        assert!((mean_ce(&probs, &targets).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weighting() {
        let w = LossWeights::default();
        assert_eq!(total_loss(1.0, 0.5, &w), 11.0);
        assert_eq!(total_loss(0.0, 0.0, &w), 0.0);
        let only_clean = LossWeights { lambda1: 1.0, lambda2: 0.0 };
        assert_eq!(total_loss(0.7, 123.0, &only_clean), 0.7);
    }

    #[test]
    fn iou_dice_cases() {
        let a = LabelMap::new(2, 2, 2, vec![1, 1, 0, 0]).unwrap();
        assert_eq!(iou_dice(&a, &a, 1).unwrap(), (1.0, 1.0));

        let b = LabelMap::new(2, 2, 2, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(iou_dice(&a, &b, 1).unwrap(), (0.0, 0.0));

        // Both empty for a category: defined as perfect agreement.
        assert_eq!(iou_dice(&a, &a, 0).unwrap(), (1.0, 1.0));
        let empty = LabelMap::new(2, 2, 3, vec![0, 0, 0, 0]).unwrap();
        assert_eq!(iou_dice(&empty, &empty, 2).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn iou_dice_half_overlap() {
        // |P| = |T| = 100, |P∩T| = 50 on a 20x20 grid.
        let mut p = vec![0u8; 400];
        let mut t = vec![0u8; 400];
        for i in 0..100 {
            p[i] = 1;
        }
        for i in 50..150 {
            t[i] = 1;
        }
        let p = LabelMap::new(20, 20, 2, p).unwrap();
        let t = LabelMap::new(20, 20, 2, t).unwrap();
        let (iou, dice) = iou_dice(&p, &t, 1).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
        assert!((dice - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dice_dominates_iou() {
        let p = LabelMap::new(2, 3, 2, vec![1, 1, 0, 0, 1, 0]).unwrap();
        let t = LabelMap::new(2, 3, 2, vec![1, 0, 1, 0, 1, 0]).unwrap();
        let (iou, dice) = iou_dice(&p, &t, 1).unwrap();
        assert!(dice >= iou);
    }

    #[test]
    fn softmax_partial_matches_probability_route() {
        let logits = vec![0.3, -1.0, 0.5, 2.0, -0.2, 0.9]; // 3 categories, 1x2 image, CHW
        let targets = LabelMap::new(1, 2, 3, vec![2, 0]).unwrap();
        let part = softmax_ce_partial(&logits, 3, 1, 2, &targets, None);
        assert_eq!(part.selected, 2);

        // Convert logits to a ProbMap and compare against masked_ce.
        let t = Tensor4::from_data(1, 3, 1, 2, logits);
        let probs = &probmaps_from_logits(&t)[0];
        let ones = SelectionMask::ones(1, 2);
        let reference = masked_ce(probs, &targets, &ones, &ones).unwrap();
        assert!((part.loss_sum / 2.0 - reference).abs() < 1e-12);
    }

    #[test]
    fn softmax_partial_zero_mask_gives_exact_zeros() {
        let logits = vec![0.3, -1.0, 0.5, 2.0, -0.2, 0.9];
        let targets = LabelMap::new(1, 2, 3, vec![2, 0]).unwrap();
        let zeros = SelectionMask::zeros(1, 2);
        let ones = SelectionMask::ones(1, 2);
        let part = softmax_ce_partial(&logits, 3, 1, 2, &targets, Some((&zeros, &ones)));
        assert_eq!(part.loss_sum, 0.0);
        assert_eq!(part.selected, 0);
        assert!(part.dlogits.iter().all(|&g| g == 0.0));
    }
}
