//! Core raster types: images, label maps, per-pixel probability maps and
//! binary selection masks, plus the per-category pixel accounting shared by
//! every other module.
//!
//! All types are immutable after construction and validate their invariants
//! up front, so downstream code can index without re-checking.

use thiserror::Error;

/// Tolerance for the per-pixel probability simplex check.
pub const SIMPLEX_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
}

/// H×W×C raster with values in `[0, 1]`, stored row-major as (row, col, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(RasterError::Invalid {
                what: "image shape",
                detail: format!("{height}x{width}x{channels}"),
            });
        }
        if data.len() != height * width * channels {
            return Err(RasterError::ShapeMismatch(format!(
                "image data has {} values, expected {}",
                data.len(),
                height * width * channels
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(RasterError::Invalid {
                what: "image value",
                detail: format!("{v} outside [0, 1]"),
            });
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Copies into (channel, row, col) order, the layout the model consumes.
    pub fn to_chw(&self) -> Vec<f64> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; h * w * c];
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    out[(ch * h + r) * w + col] = self.data[(r * w + col) * c + ch];
                }
            }
        }
        out
    }
}

/// H×W map of category indices in `[0, num_categories)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    num_categories: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, num_categories: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if height == 0 || width == 0 || num_categories == 0 || num_categories > 256 {
            return Err(RasterError::Invalid {
                what: "label map shape",
                detail: format!("{height}x{width}, {num_categories} categories"),
            });
        }
        if data.len() != height * width {
            return Err(RasterError::ShapeMismatch(format!(
                "label data has {} entries, expected {}",
                data.len(),
                height * width
            )));
        }
        if let Some(v) = data.iter().find(|v| (**v as usize) >= num_categories) {
            return Err(RasterError::Invalid {
                what: "category index",
                detail: format!("{v} >= {num_categories}"),
            });
        }
        Ok(Self { height, width, num_categories, data })
    }

    pub fn filled(height: usize, width: usize, num_categories: usize, value: u8) -> Self {
        assert!((value as usize) < num_categories);
        Self { height, width, num_categories, data: vec![value; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// H×W×Y per-pixel probability simplex, stored as (row, col, category).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    num_categories: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, num_categories: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if data.len() != height * width * num_categories || num_categories == 0 {
            return Err(RasterError::ShapeMismatch(format!(
                "probability data has {} values, expected {}x{}x{}",
                data.len(),
                height,
                width,
                num_categories
            )));
        }
        for px in data.chunks_exact(num_categories) {
            let mut sum = 0.0;
            for &v in px {
                if !v.is_finite() || v < 0.0 {
                    return Err(RasterError::Invalid {
                        what: "probability",
                        detail: format!("{v} is negative or non-finite"),
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(RasterError::Invalid {
                    what: "probability sum",
                    detail: format!("{sum} deviates from 1 by more than {SIMPLEX_TOL}"),
                });
            }
        }
        Ok(Self { height, width, num_categories, data })
    }

    /// Constructor for values already known to lie on the simplex (softmax outputs).
    pub(crate) fn new_unchecked(height: usize, width: usize, num_categories: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * num_categories);
        Self { height, width, num_categories, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    /// The probability vector of one pixel.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.width + col) * self.num_categories;
        &self.data[base..base + self.num_categories]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// H×W binary mask; entries are 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl SelectionMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != height * width {
            return Err(RasterError::ShapeMismatch(format!(
                "mask data has {} entries, expected {}",
                data.len(),
                height * width
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(RasterError::Invalid {
                what: "mask entry",
                detail: "entries must be 0 or 1".into(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![1; height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        assert!(value <= 1);
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of selected pixels.
    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / (self.height * self.width) as f64
    }

    /// True if every selected pixel of `self` is also selected in `other`.
    pub fn is_subset_of(&self, other: &SelectionMask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }
}

/// Per-category pixel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    counts: Vec<u64>,
}

impl ClassCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, category: usize) -> u64 {
        self.counts[category]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Smallest count among categories that are present (nonzero). `None` if all zero.
    pub fn min_present(&self) -> Option<u64> {
        self.counts.iter().copied().filter(|&c| c > 0).min()
    }

    /// Per-category fractions of the total. Zeros if nothing was counted.
    pub fn fractions(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// Expands an index map into per-pixel one-hot vectors (H×W×Y).
///
/// The result is a valid [`ProbMap`]: exactly one 1 per pixel, at the labeled
/// category, so `argmax_confidence` inverts it.
pub fn to_one_hot(labels: &LabelMap) -> ProbMap {
    let y = labels.num_categories();
    let mut data = vec![0.0; labels.height() * labels.width() * y];
    for (i, &c) in labels.data().iter().enumerate() {
        data[i * y + c as usize] = 1.0;
    }
    ProbMap::new_unchecked(labels.height(), labels.width(), y, data)
}

/// Per-pixel argmax category and its probability.
///
/// Ties break toward the lowest category index, so the result is deterministic.
pub fn argmax_confidence(probs: &ProbMap) -> (LabelMap, Vec<f64>) {
    let (h, w, y) = (probs.height(), probs.width(), probs.num_categories());
    let mut pred = vec![0u8; h * w];
    let mut conf = vec![0.0; h * w];
    for (i, px) in probs.data().chunks_exact(y).enumerate() {
        let mut best = 0usize;
        let mut best_v = px[0];
        for (c, &v) in px.iter().enumerate().skip(1) {
            if v > best_v {
                best = c;
                best_v = v;
            }
        }
        pred[i] = best as u8;
        conf[i] = best_v;
    }
    let labels = LabelMap::new(h, w, y, pred).expect("argmax indices are < num_categories");
    (labels, conf)
}

/// Counts pixels per category among those selected by `mask`.
pub fn class_histogram(labels: &LabelMap, mask: &SelectionMask) -> Result<ClassCounts, RasterError> {
    if labels.height() != mask.height() || labels.width() != mask.width() {
        return Err(RasterError::ShapeMismatch(format!(
            "labels {}x{} vs mask {}x{}",
            labels.height(),
            labels.width(),
            mask.height(),
            mask.width()
        )));
    }
    let mut counts = vec![0u64; labels.num_categories()];
    for (&c, &m) in labels.data().iter().zip(mask.data()) {
        if m == 1 {
            counts[c as usize] += 1;
        }
    }
    Ok(ClassCounts::new(counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_single_pixel() {
        let labels = LabelMap::new(1, 1, 3, vec![2]).unwrap();
        let oh = to_one_hot(&labels);
        assert_eq!(oh.pixel(0, 0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_hot_two_pixels() {
        let labels = LabelMap::new(2, 1, 2, vec![0, 1]).unwrap();
        let oh = to_one_hot(&labels);
        assert_eq!(oh.pixel(0, 0), &[1.0, 0.0]);
        assert_eq!(oh.pixel(1, 0), &[0.0, 1.0]);
    }

    #[test]
    fn argmax_basic_and_ties() {
        let p = ProbMap::new(1, 1, 3, vec![0.1, 0.7, 0.2]).unwrap();
        let (pred, conf) = argmax_confidence(&p);
        assert_eq!(pred.get(0, 0), 1);
        assert_eq!(conf[0], 0.7);

        let p = ProbMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        let (pred, conf) = argmax_confidence(&p);
        assert_eq!(pred.get(0, 0), 0);
        assert_eq!(conf[0], 0.5);

        let third = 1.0 / 3.0;
        let p = ProbMap::new(1, 1, 3, vec![third, third, third]).unwrap();
        let (pred, conf) = argmax_confidence(&p);
        assert_eq!(pred.get(0, 0), 0);
        assert!((conf[0] - third).abs() < 1e-15);
    }

    #[test]
    fn histogram_counting() {
        let labels = LabelMap::new(2, 2, 3, vec![0, 0, 1, 2]).unwrap();
        let all = SelectionMask::ones(2, 2);
        let counts = class_histogram(&labels, &all).unwrap();
        assert_eq!(counts.counts(), &[2, 1, 1]);

        let mask = SelectionMask::new(2, 2, vec![1, 0, 0, 0]).unwrap();
        let counts = class_histogram(&labels, &mask).unwrap();
        assert_eq!(counts.counts(), &[1, 0, 0]);
    }

    #[test]
    fn histogram_shape_mismatch_errors() {
        let labels = LabelMap::new(2, 2, 3, vec![0, 0, 1, 2]).unwrap();
        let mask = SelectionMask::ones(3, 2);
        assert!(class_histogram(&labels, &mask).is_err());
    }

    #[test]
    fn label_map_rejects_out_of_range() {
        assert!(LabelMap::new(1, 2, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn prob_map_rejects_bad_simplex() {
        assert!(ProbMap::new(1, 1, 2, vec![0.6, 0.6]).is_err());
        assert!(ProbMap::new(1, 1, 2, vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn image_bounds_check() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(Image::new(1, 1, 1, vec![0.5]).is_ok());
    }
}
