//! Deterministic synthetic fundus-like dataset generator.
//!
//! Each sample is a textured background with an elliptical "disk" region
//! (category 1) and a smaller concentric elliptical "cup" region (category 2)
//! strictly inside it. Ellipse areas are drawn so that dataset-level category
//! fractions approach the configured targets, and pixel intensity correlates
//! with category so the task is learnable. Everything is a pure function of
//! `(seed, index)`.

use rand::Rng;
use thiserror::Error;

use crate::raster::{Image, LabelMap};
use crate::rng::{domain, stream_rng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthesis spec: {0}")]
    InvalidSpec(String),
    #[error("infeasible geometry: ellipse semi-axis {axis:.1} px does not fit a {height}x{width} image with a border margin")]
    InfeasibleGeometry { axis: f64, height: usize, width: usize },
    #[error("sample index {index} out of range (num_images = {num_images})")]
    IndexOutOfRange { index: usize, num_images: usize },
}

/// Configuration of the synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    pub num_categories: usize,
    /// Target dataset-level fraction per category; must sum to 1.
    pub target_fractions: Vec<f64>,
    pub seed: u64,
    /// Probability that a sample carries no cup annotation.
    pub cup_missing_prob: f64,
}

impl SynthSpec {
    /// Defaults: 3 categories with fractions 98.99% / 0.81% / 0.20%,
    /// 10% of samples missing the cup.
    pub fn new(num_images: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            num_images,
            height,
            width,
            num_categories: 3,
            target_fractions: vec![0.9899, 0.0081, 0.0020],
            seed,
            cup_missing_prob: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.num_images == 0 || self.height == 0 || self.width == 0 {
            return Err(SynthError::InvalidSpec("empty dataset or image".into()));
        }
        if !(2..=3).contains(&self.num_categories) {
            return Err(SynthError::InvalidSpec(format!(
                "num_categories must be 2 or 3, got {}",
                self.num_categories
            )));
        }
        if self.target_fractions.len() != self.num_categories {
            return Err(SynthError::InvalidSpec(format!(
                "{} target fractions for {} categories",
                self.target_fractions.len(),
                self.num_categories
            )));
        }
        let sum: f64 = self.target_fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.target_fractions.iter().any(|&f| f < 0.0) {
            return Err(SynthError::InvalidSpec(format!("target fractions must be nonnegative and sum to 1, got {sum}")));
        }
        if self.target_fractions[1] <= 0.0 {
            return Err(SynthError::InvalidSpec("disk fraction must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.cup_missing_prob) {
            return Err(SynthError::InvalidSpec(format!(
                "cup_missing_prob {} outside [0, 1]",
                self.cup_missing_prob
            )));
        }
        Ok(())
    }
}

// Per-category RGB means. Contrast is deliberately strong: the point of the
// texture model is a learnable signal, not photorealism.
const CATEGORY_MEANS: [[f64; 3]; 3] = [
    [0.40, 0.26, 0.20], // background
    [0.82, 0.62, 0.38], // disk
    [0.97, 0.90, 0.62], // cup
];
const TEXTURE_SIGMA: f64 = 0.05;
const SHADING_STRENGTH: f64 = 0.04;
const AREA_JITTER: f64 = 0.2;

/// Generates sample `index`. Deterministic given `(spec.seed, index)`.
pub fn generate_sample(spec: &SynthSpec, index: usize) -> Result<(Image, LabelMap), SynthError> {
    spec.validate()?;
    if index >= spec.num_images {
        return Err(SynthError::IndexOutOfRange { index, num_images: spec.num_images });
    }
    let mut rng = stream_rng(spec.seed, domain::SYNTH, index as u64);
    let (h, w) = (spec.height, spec.width);
    let total_px = (h * w) as f64;

    // Cup draw comes first so the stream layout is independent of presence.
    let cup_possible = spec.num_categories == 3 && spec.target_fractions[2] > 0.0 && spec.cup_missing_prob < 1.0;
    let cup_missing_draw: f64 = rng.gen();
    let cup_present = cup_possible && cup_missing_draw >= spec.cup_missing_prob;

    // Present cups are scaled up so the dataset-level cup fraction still hits
    // its target when a share of samples has none.
    let cup_area_target = if cup_present {
        spec.target_fractions[2] * total_px / (1.0 - spec.cup_missing_prob)
    } else {
        0.0
    };
    let disk_area_target = spec.target_fractions[1] * total_px + cup_area_target;

    let area_scale = 1.0 + AREA_JITTER * (rng.gen::<f64>() * 2.0 - 1.0);
    let disk_area = disk_area_target * area_scale;
    let cup_area = cup_area_target * area_scale;

    let ecc: f64 = rng.gen_range(0.7..1.0);
    let mut semi_a = (disk_area / (std::f64::consts::PI * ecc)).sqrt();
    let mut semi_b = ecc * semi_a;
    if rng.gen_range(0..2) == 1 {
        std::mem::swap(&mut semi_a, &mut semi_b);
    }

    // Keep the disk strictly inside the image with a 2 px margin.
    let margin_r = semi_b.ceil() + 2.0;
    let margin_c = semi_a.ceil() + 2.0;
    if 2.0 * margin_r >= h as f64 || 2.0 * margin_c >= w as f64 {
        return Err(SynthError::InfeasibleGeometry {
            axis: semi_a.max(semi_b),
            height: h,
            width: w,
        });
    }
    let center_r: f64 = rng.gen_range(margin_r..h as f64 - margin_r);
    let center_c: f64 = rng.gen_range(margin_c..w as f64 - margin_c);

    // Concentric cup with the same eccentricity: strictly inside the disk.
    let cup_scale = if cup_present { (cup_area / disk_area).sqrt() } else { 0.0 };

    let shade_angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (shade_dr, shade_dc) = (shade_angle.sin(), shade_angle.cos());

    let mut labels = vec![0u8; h * w];
    let mut pixels = vec![0.0f64; h * w * 3];
    let diag = ((h * h + w * w) as f64).sqrt();
    for r in 0..h {
        for c in 0..w {
            let dr = (r as f64 - center_r) / semi_b;
            let dc = (c as f64 - center_c) / semi_a;
            let rho2 = dr * dr + dc * dc;
            let cat = if cup_present && rho2 <= cup_scale * cup_scale {
                2
            } else if rho2 <= 1.0 {
                1
            } else {
                0
            };
            labels[r * w + c] = cat;
            let shade = SHADING_STRENGTH * (shade_dr * r as f64 + shade_dc * c as f64) / diag;
            for ch in 0..3 {
                let noise: f64 = rng.gen::<f64>() * 2.0 - 1.0;
                let v = CATEGORY_MEANS[cat as usize][ch] + shade + TEXTURE_SIGMA * noise;
                // Quantize to the 8-bit grid so file round-trips are bit-exact.
                pixels[(r * w + c) * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }

    let image = Image::new(h, w, 3, pixels).expect("generated values lie in [0,1]");
    let label_map = LabelMap::new(h, w, spec.num_categories, labels).expect("generated labels in range");
    Ok((image, label_map))
}
