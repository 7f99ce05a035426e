//! Binary morphology and label corruption by joint erosion/dilation.
//!
//! The corruption recipe erodes or dilates each category's coverage area with
//! a randomly drawn square kernel, repeated for a randomly drawn number of
//! iterations. Eroded pixels revert to background; dilated pixels overwrite
//! whatever they land on, later categories over earlier ones.

use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::io::{self, IoError};
use crate::raster::{LabelMap, SelectionMask};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid kernel range [{0}, {1}]")]
    KernelRange(usize, usize),
    #[error("invalid iteration range [{0}, {1}]")]
    IterRange(usize, usize),
}

/// Parameters of the joint erosion/dilation corruption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JedSpec {
    pub kernel_min: usize,
    pub kernel_max: usize,
    pub iter_min: usize,
    pub iter_max: usize,
    pub seed: u64,
}

impl JedSpec {
    pub fn new(kernel_min: usize, kernel_max: usize, iter_min: usize, iter_max: usize, seed: u64) -> Result<Self, NoiseError> {
        if kernel_min < 1 || kernel_min > kernel_max {
            return Err(NoiseError::KernelRange(kernel_min, kernel_max));
        }
        if iter_min < 1 || iter_min > iter_max {
            return Err(NoiseError::IterRange(iter_min, iter_max));
        }
        Ok(Self { kernel_min, kernel_max, iter_min, iter_max, seed })
    }

    /// Kernel 2..=5, iterations 3..=8.
    pub fn with_seed(seed: u64) -> Self {
        Self { kernel_min: 2, kernel_max: 5, iter_min: 3, iter_max: 8, seed }
    }
}

/// Window offsets covered by a `k`-wide kernel anchored at a pixel.
///
/// Odd kernels are centered; even kernels extend one pixel further toward
/// the high side: offsets run from `-(k-1)/2` to `k/2` (integer division).
#[inline]
pub fn kernel_window(kernel: usize) -> (isize, isize) {
    let k = kernel as isize;
    (-((k - 1) / 2), k / 2)
}

// Sliding extremum over [i+lo, i+hi] clipped to [0, n), applied along rows.
// `erode` takes the window minimum, otherwise the maximum.
fn filter_rows(src: &[u8], h: usize, w: usize, lo: isize, hi: isize, erode: bool) -> Vec<u8> {
    let mut out = vec![0u8; h * w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        let dst = &mut out[r * w..(r + 1) * w];
        for (i, d) in dst.iter_mut().enumerate() {
            let a = (i as isize + lo).max(0) as usize;
            let b = ((i as isize + hi).min(w as isize - 1)) as usize;
            let window = &row[a..=b];
            *d = if erode {
                *window.iter().min().unwrap()
            } else {
                *window.iter().max().unwrap()
            };
        }
    }
    out
}

fn transpose(src: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            out[c * h + r] = src[r * w + c];
        }
    }
    out
}

// A square structuring element separates into two 1-D passes; clipping at the
// borders keeps the window a product set, so separability still holds.
fn morph(mask: &SelectionMask, kernel: usize, erode: bool) -> SelectionMask {
    assert!(kernel >= 1, "kernel must be >= 1");
    let (h, w) = (mask.height(), mask.width());
    let (lo, hi) = kernel_window(kernel);
    let pass1 = filter_rows(mask.data(), h, w, lo, hi, erode);
    let t = transpose(&pass1, h, w);
    let pass2 = filter_rows(&t, w, h, lo, hi, erode);
    let data = transpose(&pass2, w, h);
    SelectionMask::new(h, w, data).expect("filter preserves binary entries")
}

/// Output is 1 iff every pixel in the kernel window (clipped at borders) is 1.
pub fn binary_erode(mask: &SelectionMask, kernel: usize) -> SelectionMask {
    morph(mask, kernel, true)
}

/// Output is 1 iff any pixel in the kernel window (clipped at borders) is 1.
pub fn binary_dilate(mask: &SelectionMask, kernel: usize) -> SelectionMask {
    morph(mask, kernel, false)
}

/// Corrupts a label map by iterative random erosion or dilation per category.
///
/// For each foreground category index in ascending order, draws an operation
/// (erode or dilate, uniformly), a kernel size and an iteration count from
/// `spec`'s ranges — in that order — and applies the operation repeatedly to
/// the category's binary mask taken from the input map. The corrupted masks
/// are then composited over a background canvas in ascending category order,
/// so dilated pixels of a later category overwrite earlier ones and eroded
/// pixels revert to background.
///
/// Returns the corrupted map and a flag that is true when the input had no
/// foreground at all (in which case the map is returned unchanged and the
/// random stream is left untouched).
pub fn jed_corrupt(labels: &LabelMap, spec: &JedSpec, rng: &mut impl Rng) -> (LabelMap, bool) {
    let (h, w, num_categories) = (labels.height(), labels.width(), labels.num_categories());
    if labels.data().iter().all(|&c| c == 0) {
        return (labels.clone(), true);
    }
    let mut out = vec![0u8; h * w];
    for cat in 1..num_categories {
        let dilate = rng.gen_range(0..2) == 1;
        let kernel = rng.gen_range(spec.kernel_min..=spec.kernel_max);
        let iters = rng.gen_range(spec.iter_min..=spec.iter_max);

        let data: Vec<u8> = labels.data().iter().map(|&c| u8::from(c as usize == cat)).collect();
        let mut mask = SelectionMask::new(h, w, data).unwrap();
        for _ in 0..iters {
            mask = if dilate { binary_dilate(&mask, kernel) } else { binary_erode(&mask, kernel) };
        }
        for (o, &m) in out.iter_mut().zip(mask.data()) {
            if m == 1 {
                *o = cat as u8;
            }
        }
    }
    let corrupted = LabelMap::new(h, w, num_categories, out).expect("composited indices stay in range");
    (corrupted, false)
}

/// Loads an externally produced noisy label file, validating category indices.
pub fn ingest_external_labels(path: &Path, num_categories: usize) -> Result<LabelMap, IoError> {
    io::read_label_png(path, num_categories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream_rng};

    fn mask_from(h: usize, w: usize, ones: &[(usize, usize)]) -> SelectionMask {
        let mut m = SelectionMask::zeros(h, w);
        for &(r, c) in ones {
            m.set(r, c, 1);
        }
        m
    }

    #[test]
    fn erode_full_mask_is_fixed_point() {
        let m = SelectionMask::ones(5, 5);
        assert_eq!(binary_erode(&m, 3), m);
    }

    #[test]
    fn erode_lone_pixel_vanishes() {
        let m = mask_from(5, 5, &[(2, 2)]);
        assert_eq!(binary_erode(&m, 3), SelectionMask::zeros(5, 5));
    }

    #[test]
    fn erode_block_leaves_center() {
        let mut m = SelectionMask::zeros(7, 7);
        for r in 2..5 {
            for c in 2..5 {
                m.set(r, c, 1);
            }
        }
        assert_eq!(binary_erode(&m, 3), mask_from(7, 7, &[(3, 3)]));
    }

    #[test]
    fn dilate_empty_stays_empty() {
        let m = SelectionMask::zeros(4, 6);
        assert_eq!(binary_dilate(&m, 5), m);
    }

    #[test]
    fn dilate_lone_pixel_becomes_block() {
        let m = mask_from(5, 5, &[(2, 2)]);
        let d = binary_dilate(&m, 3);
        let mut expect = SelectionMask::zeros(5, 5);
        for r in 1..4 {
            for c in 1..4 {
                expect.set(r, c, 1);
            }
        }
        assert_eq!(d, expect);
    }

    #[test]
    fn even_kernel_window_is_asymmetric() {
        assert_eq!(kernel_window(2), (0, 1));
        assert_eq!(kernel_window(3), (-1, 1));
        assert_eq!(kernel_window(4), (-1, 2));
        assert_eq!(kernel_window(5), (-2, 2));
    }

    #[test]
    fn jed_no_foreground_is_identity_with_flag() {
        let labels = LabelMap::filled(6, 6, 3, 0);
        let spec = JedSpec::with_seed(1);
        let mut rng = stream_rng(spec.seed, domain::JED, 0);
        let (out, warned) = jed_corrupt(&labels, &spec, &mut rng);
        assert!(warned);
        assert_eq!(out, labels);
    }

    #[test]
    fn jed_is_reproducible() {
        let mut data = vec![0u8; 16 * 16];
        for r in 5..10 {
            for c in 4..12 {
                data[r * 16 + c] = 1;
            }
        }
        let labels = LabelMap::new(16, 16, 2, data).unwrap();
        let spec = JedSpec::with_seed(42);
        let (a, _) = jed_corrupt(&labels, &spec, &mut stream_rng(spec.seed, domain::JED, 7));
        let (b, _) = jed_corrupt(&labels, &spec, &mut stream_rng(spec.seed, domain::JED, 7));
        assert_eq!(a, b);
    }

    #[test]
    fn jed_single_dilate_matches_morphology_primitive() {
        // Disk-shaped category 1 in a 2-category map.
        let (h, w) = (15, 15);
        let mut data = vec![0u8; h * w];
        for r in 0..h {
            for c in 0..w {
                let (dr, dc) = (r as f64 - 7.0, c as f64 - 7.0);
                if dr * dr + dc * dc <= 9.0 {
                    data[r * w + c] = 1;
                }
            }
        }
        let labels = LabelMap::new(h, w, 2, data.clone()).unwrap();
        let spec = JedSpec::new(3, 3, 1, 1, 0).unwrap();

        // Find a stream whose first draw picks dilation.
        let index = (0..64)
            .find(|&i| stream_rng(spec.seed, domain::JED, i).gen_range(0..2) == 1)
            .expect("some stream draws dilate");
        let (out, _) = jed_corrupt(&labels, &spec, &mut stream_rng(spec.seed, domain::JED, index));

        let mask = SelectionMask::new(h, w, data.iter().map(|&c| u8::from(c == 1)).collect()).unwrap();
        let dilated = binary_dilate(&mask, 3);
        for i in 0..h * w {
            assert_eq!(out.data()[i], dilated.data()[i]);
        }
    }

    #[test]
    fn jed_erosion_changes_interior_region() {
        let (h, w) = (20, 20);
        let mut data = vec![0u8; h * w];
        for r in 6..14 {
            for c in 6..14 {
                data[r * w + c] = 1;
            }
        }
        let labels = LabelMap::new(h, w, 2, data).unwrap();
        let spec = JedSpec::new(2, 2, 1, 1, 0).unwrap();
        let index = (0..64)
            .find(|&i| stream_rng(spec.seed, domain::JED, i).gen_range(0..2) == 0)
            .expect("some stream draws erode");
        let (out, _) = jed_corrupt(&labels, &spec, &mut stream_rng(spec.seed, domain::JED, index));
        let changed = out.data().iter().zip(labels.data()).filter(|(a, b)| a != b).count();
        assert!(changed > 0);
    }

    #[test]
    fn jed_never_invents_categories() {
        let mut data = vec![0u8; 12 * 12];
        for r in 3..8 {
            for c in 3..8 {
                data[r * 12 + c] = 2;
            }
        }
        // Category 1 absent from the input; it must stay absent.
        let labels = LabelMap::new(12, 12, 4, data).unwrap();
        let spec = JedSpec::with_seed(9);
        for index in 0..8 {
            let (out, _) = jed_corrupt(&labels, &spec, &mut stream_rng(spec.seed, domain::JED, index));
            assert!(out.data().iter().all(|&c| c == 0 || c == 2));
        }
    }
}
