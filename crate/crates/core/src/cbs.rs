//! Class-balanced sampling: per image, cap every category's selected pixel
//! count at `rho` times the count of the rarest present category, keeping a
//! uniform random subset of the over-represented ones.

use rand::Rng;
use thiserror::Error;

use crate::raster::{class_histogram, ClassCounts, LabelMap, SelectionMask};

#[derive(Debug, Error)]
pub enum CbsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("imbalance ratio undefined: all counts are zero")]
    EmptyCounts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbsConfig {
    /// Cap factor: no category keeps more than `floor(rho * omega)` pixels,
    /// where omega is the smallest nonzero per-category count.
    pub rho: f64,
    pub seed: u64,
    /// When false, the subsampling stream is derived from the image index
    /// alone, so the same pixels are kept across epochs.
    pub resample_each_batch: bool,
}

impl Default for CbsConfig {
    fn default() -> Self {
        Self { rho: 10.0, seed: 0, resample_each_batch: true }
    }
}

impl CbsConfig {
    pub fn validate(&self) -> Result<(), CbsError> {
        if !(self.rho >= 1.0) {
            return Err(CbsError::InvalidConfig(format!("rho must be >= 1, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Subsamples `base_mask` so that, per category of `labels`, at most
/// `floor(rho * omega)` selected pixels remain (omega = smallest nonzero
/// pre-sampling count). Categories at or below the cap are kept in full.
/// Retained pixels are a uniform random subset; the retained *counts* depend
/// only on the inputs, never on the seed.
pub fn sample_balanced_mask(
    labels: &LabelMap,
    base_mask: &SelectionMask,
    cfg: &CbsConfig,
    rng: &mut impl Rng,
) -> Result<SelectionMask, CbsError> {
    cfg.validate()?;
    let counts = class_histogram(labels, base_mask).map_err(|e| CbsError::ShapeMismatch(e.to_string()))?;
    let Some(omega) = counts.min_present() else {
        return Ok(SelectionMask::zeros(labels.height(), labels.width()));
    };
    let cap = (cfg.rho * omega as f64).floor() as u64;

    let mut out = base_mask.clone();
    for (cat, &count) in counts.counts().iter().enumerate() {
        if count as f64 <= cfg.rho * omega as f64 {
            continue;
        }
        // Collect this category's selected pixels in row-major order, then
        // keep a uniform sample of exactly `cap` of them.
        let mut pixels: Vec<usize> = labels
            .data()
            .iter()
            .zip(base_mask.data())
            .enumerate()
            .filter_map(|(i, (&c, &m))| (m == 1 && c as usize == cat).then_some(i))
            .collect();
        let keep = cap as usize;
        for i in 0..keep {
            let j = rng.gen_range(i..pixels.len());
            pixels.swap(i, j);
        }
        for &p in &pixels[keep..] {
            out.set(p / labels.width(), p % labels.width(), 0);
        }
    }
    Ok(out)
}

/// Ratio of the largest to the smallest nonzero per-category count.
pub fn imbalance_ratio(counts: &ClassCounts) -> Result<f64, CbsError> {
    let nonzero: Vec<u64> = counts.counts().iter().copied().filter(|&c| c > 0).collect();
    let (Some(&max), Some(&min)) = (nonzero.iter().max(), nonzero.iter().min()) else {
        return Err(CbsError::EmptyCounts);
    };
    Ok(max as f64 / min as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::class_histogram;
    use crate::rng::{domain, stream_rng};

    // Under the 10100-pixel base mask the bg/disk/cup counts are 10000/80/20;
    // the remaining pixels are filler the mask excludes.
    fn skewed_labels() -> LabelMap {
        let mut data = vec![0u8; 12000];
        for d in data.iter_mut().take(80) {
            *d = 1;
        }
        for d in data.iter_mut().skip(80).take(20) {
            *d = 2;
        }
        for d in data.iter_mut().skip(10100) {
            *d = 1;
        }
        LabelMap::new(120, 100, 3, data).unwrap()
    }

    fn base_mask_first_10100() -> SelectionMask {
        let mut m = SelectionMask::zeros(120, 100);
        for i in 0..10100 {
            m.set(i / 100, i % 100, 1);
        }
        m
    }

    #[test]
    fn caps_apply_per_category() {
        let labels = skewed_labels();
        let base = base_mask_first_10100();
        let pre = class_histogram(&labels, &base).unwrap();
        assert_eq!(pre.counts(), &[10000, 80, 20]);

        let cfg = CbsConfig::default();
        let mut rng = stream_rng(cfg.seed, domain::CBS, 0);
        let out = sample_balanced_mask(&labels, &base, &cfg, &mut rng).unwrap();
        let post = class_histogram(&labels, &out).unwrap();
        assert_eq!(post.counts(), &[200, 80, 20]);
        assert!(out.is_subset_of(&base));
    }

    #[test]
    fn counts_are_seed_independent_but_pixels_vary() {
        let labels = skewed_labels();
        let base = base_mask_first_10100();
        let cfg = CbsConfig::default();
        let a = sample_balanced_mask(&labels, &base, &cfg, &mut stream_rng(0, domain::CBS, 1)).unwrap();
        let b = sample_balanced_mask(&labels, &base, &cfg, &mut stream_rng(0, domain::CBS, 2)).unwrap();
        assert_eq!(
            class_histogram(&labels, &a).unwrap().counts(),
            class_histogram(&labels, &b).unwrap().counts()
        );
        assert_ne!(a, b);
        // Same stream reproduces the exact mask.
        let c = sample_balanced_mask(&labels, &base, &cfg, &mut stream_rng(0, domain::CBS, 1)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn under_cap_categories_are_untouched() {
        let mut data = vec![0u8; 100];
        for d in data.iter_mut().take(50) {
            *d = 1;
        }
        let labels = LabelMap::new(10, 10, 2, data).unwrap();
        let base = SelectionMask::ones(10, 10);
        let cfg = CbsConfig::default();
        let out = sample_balanced_mask(&labels, &base, &cfg, &mut stream_rng(0, domain::CBS, 0)).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn single_category_image_is_untouched() {
        let labels = LabelMap::filled(8, 8, 3, 0);
        let base = SelectionMask::ones(8, 8);
        let out =
            sample_balanced_mask(&labels, &base, &CbsConfig::default(), &mut stream_rng(0, domain::CBS, 0)).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn empty_base_mask_yields_empty_output() {
        let labels = LabelMap::filled(4, 4, 3, 1);
        let base = SelectionMask::zeros(4, 4);
        let out =
            sample_balanced_mask(&labels, &base, &CbsConfig::default(), &mut stream_rng(0, domain::CBS, 0)).unwrap();
        assert_eq!(out, SelectionMask::zeros(4, 4));
    }

    #[test]
    fn imbalance_ratio_arithmetic() {
        assert_eq!(imbalance_ratio(&ClassCounts::new(vec![200, 80, 20])).unwrap(), 10.0);
        assert_eq!(imbalance_ratio(&ClassCounts::new(vec![5, 5, 5])).unwrap(), 1.0);
        assert_eq!(imbalance_ratio(&ClassCounts::new(vec![7, 0, 14])).unwrap(), 2.0);
        assert!(imbalance_ratio(&ClassCounts::new(vec![0, 0])).is_err());
    }

    #[test]
    fn rho_below_one_is_rejected() {
        let cfg = CbsConfig { rho: 0.5, ..CbsConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
