//! Summary reports: category-distribution tables, retained-annotation
//! fractions, and aggregated run results.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::cbs::{imbalance_ratio, sample_balanced_mask, CbsConfig, CbsError};
use crate::cld::{sample_clean_mask, CldConfig, CldError};
use crate::dataset::{read_dataset, DataError, Dataset};
use crate::loss::probmaps_from_logits;
use crate::model::{DualStreamModel, Tensor4};
use crate::raster::{class_histogram, ClassCounts, SelectionMask};
use crate::rng::{domain, stream_rng};
use crate::train::config::TrainConfig;
use crate::train::trainer::{EpochRecord, MetricRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cbs(#[from] CbsError),
    #[error(transparent)]
    Cld(#[from] CldError),
    #[error("{path}: {msg}")]
    Malformed { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no runs found under {0}")]
    NoRuns(String),
}

/// Dataset-level category fractions before and after per-image balanced
/// sampling (all-ones base mask).
pub struct HistogramReport {
    pub pre_counts: ClassCounts,
    pub post_counts: ClassCounts,
    pub pre_ratio: f64,
    pub post_ratio: f64,
}

impl HistogramReport {
    pub fn compute(ds: &Dataset, cbs: &CbsConfig, seed: u64) -> Result<Self, ReportError> {
        let y = ds.meta.num_categories;
        let mut pre = vec![0u64; y];
        let mut post = vec![0u64; y];
        for (i, labels) in ds.labels.iter().enumerate() {
            let ones = SelectionMask::ones(labels.height(), labels.width());
            let hist = class_histogram(labels, &ones).expect("shapes match");
            for (acc, &c) in pre.iter_mut().zip(hist.counts()) {
                *acc += c;
            }
            let mut rng = stream_rng(seed, domain::CBS, i as u64);
            let balanced = sample_balanced_mask(labels, &ones, cbs, &mut rng)?;
            let hist = class_histogram(labels, &balanced).expect("shapes match");
            for (acc, &c) in post.iter_mut().zip(hist.counts()) {
                *acc += c;
            }
        }
        let pre_counts = ClassCounts::new(pre);
        let post_counts = ClassCounts::new(post);
        let pre_ratio = imbalance_ratio(&pre_counts)?;
        let post_ratio = imbalance_ratio(&post_counts)?;
        Ok(Self { pre_counts, post_counts, pre_ratio, post_ratio })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("category distribution (% of selected pixels)\n");
        out.push_str(&format!("{:<10} {:>12} {:>12}\n", "category", "no sampling", "balanced"));
        let pre = self.pre_counts.fractions();
        let post = self.post_counts.fractions();
        for (c, (a, b)) in pre.iter().zip(&post).enumerate() {
            out.push_str(&format!("{c:<10} {:>11.2}% {:>11.2}%\n", a * 100.0, b * 100.0));
        }
        out.push_str(&format!(
            "imbalance ratio: {:.1} before, {:.1} after\n",
            self.pre_ratio, self.post_ratio
        ));
        out
    }
}

/// Dataset-level retained-annotation fractions of the three sampling
/// configurations, computed with a (typically warmed-up) model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetainedFractions {
    /// Clean-label mask alone.
    pub cld: f64,
    /// Balanced sampling alone (all-ones base).
    pub cbs: f64,
    /// Both: balanced sampling over the clean-label mask.
    pub cld_cbs: f64,
}

impl RetainedFractions {
    pub fn compute(
        model: &DualStreamModel,
        ds: &Dataset,
        cld: &CldConfig,
        cbs: &CbsConfig,
        seed: u64,
    ) -> Result<Self, ReportError> {
        let (h, w) = (ds.meta.height, ds.meta.width);
        let mut sum_cld = 0.0;
        let mut sum_cbs = 0.0;
        let mut sum_both = 0.0;
        for (i, (image, labels)) in ds.images.iter().zip(&ds.labels).enumerate() {
            let mut x = Tensor4::zeros(1, image.channels(), h, w);
            x.image_mut(0).copy_from_slice(&image.to_chw());
            let (primary, _) = model.forward_eval(&x);
            let probs = probmaps_from_logits(&primary).remove(0);
            let (cld_mask, targets) = sample_clean_mask(&probs, labels, cld)?;
            let ones = SelectionMask::ones(h, w);
            let cbs_alone =
                sample_balanced_mask(labels, &ones, cbs, &mut stream_rng(seed, domain::CBS, (i as u64) << 1))?;
            let both = sample_balanced_mask(
                &targets,
                &cld_mask,
                cbs,
                &mut stream_rng(seed, domain::CBS, ((i as u64) << 1) | 1),
            )?;
            sum_cld += cld_mask.fraction();
            sum_cbs += cbs_alone.fraction();
            sum_both += both.fraction();
        }
        let n = ds.len() as f64;
        Ok(Self { cld: sum_cld / n, cbs: sum_cbs / n, cld_cbs: sum_both / n })
    }
}

/// One completed training run, reconstructed from its output directory.
pub struct RunSummary {
    pub name: String,
    pub ablation: String,
    pub seed: u64,
    pub final_epoch: usize,
    /// Final-epoch mean IoU/Dice per category.
    pub per_category: Vec<(usize, f64, f64)>,
    pub foreground_iou: f64,
    pub foreground_dice: f64,
    pub last_cld_fraction: Option<f64>,
    pub last_retained_fraction: Option<f64>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| ReportError::Malformed {
                path: path.display().to_string(),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn load_run(dir: &Path) -> Result<RunSummary, ReportError> {
    let config_text = fs::read_to_string(dir.join("config.txt")).map_err(|source| ReportError::Io {
        path: dir.join("config.txt").display().to_string(),
        source,
    })?;
    let cfg = TrainConfig::parse(&config_text).map_err(|e| ReportError::Malformed {
        path: dir.display().to_string(),
        msg: e.to_string(),
    })?;
    let metrics: Vec<MetricRecord> = read_jsonl(&dir.join("metrics.jsonl"))?;
    let last_epoch = metrics.iter().map(|m| m.epoch).max().ok_or_else(|| ReportError::Malformed {
        path: dir.display().to_string(),
        msg: "metrics.jsonl holds no records".into(),
    })?;
    let mut per_category: Vec<(usize, f64, f64)> = metrics
        .iter()
        .filter(|m| m.epoch == last_epoch)
        .map(|m| (m.category, m.iou, m.dice))
        .collect();
    per_category.sort_by_key(|&(c, _, _)| c);
    let fg: Vec<&(usize, f64, f64)> = per_category.iter().filter(|&&(c, _, _)| c > 0).collect();
    let fg_n = fg.len().max(1) as f64;
    let train_log: Vec<EpochRecord> = read_jsonl(&dir.join("train_log.jsonl")).unwrap_or_default();
    let last_log = train_log.last();
    Ok(RunSummary {
        name: dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        ablation: cfg.ablation.to_string(),
        seed: cfg.seed,
        final_epoch: last_epoch,
        foreground_iou: fg.iter().map(|&&(_, i, _)| i).sum::<f64>() / fg_n,
        foreground_dice: fg.iter().map(|&&(_, _, d)| d).sum::<f64>() / fg_n,
        per_category,
        last_cld_fraction: last_log.map(|r| r.cld_fraction),
        last_retained_fraction: last_log.map(|r| r.retained_fraction),
    })
}

/// Aggregates every run directory under `runs_dir` (any directory holding a
/// `config.txt` and `metrics.jsonl`) and renders mean scores per ablation.
pub fn runs_report(runs_dir: &Path) -> Result<String, ReportError> {
    let mut dirs: Vec<_> = fs::read_dir(runs_dir)
        .map_err(|source| ReportError::Io { path: runs_dir.display().to_string(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("config.txt").exists() && p.join("metrics.jsonl").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(ReportError::NoRuns(runs_dir.display().to_string()));
    }
    let runs: Vec<RunSummary> = dirs.iter().map(|d| load_run(d)).collect::<Result<_, _>>()?;

    let mut by_mode: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for run in &runs {
        by_mode.entry(run.ablation.as_str()).or_default().push(run);
    }

    let mut out = String::new();
    out.push_str(&format!("{} runs under {}\n\n", runs.len(), runs_dir.display()));
    out.push_str("final foreground scores (mean over seeds, %)\n");
    out.push_str(&format!("{:<10} {:>5} {:>9} {:>9}\n", "mode", "runs", "IoU", "Dice"));
    for (mode, group) in &by_mode {
        let n = group.len() as f64;
        let iou = group.iter().map(|r| r.foreground_iou).sum::<f64>() / n;
        let dice = group.iter().map(|r| r.foreground_dice).sum::<f64>() / n;
        out.push_str(&format!("{mode:<10} {:>5} {:>8.2} {:>8.2}\n", group.len(), iou * 100.0, dice * 100.0));
    }

    out.push_str("\nper-category IoU (mean over seeds, %)\n");
    for (mode, group) in &by_mode {
        let n_cat = group[0].per_category.len();
        let mut row = format!("{mode:<10}");
        for c in 0..n_cat {
            let mean = group
                .iter()
                .filter_map(|r| r.per_category.get(c).map(|&(_, i, _)| i))
                .sum::<f64>()
                / group.len() as f64;
            row.push_str(&format!(" cat{c} {:>6.2}", mean * 100.0));
        }
        out.push_str(&row);
        out.push('\n');
    }

    out.push_str("\nretained annotations at final epoch (mean over seeds, %)\n");
    for (mode, group) in &by_mode {
        let sel: Vec<f64> = group.iter().filter_map(|r| r.last_retained_fraction).collect();
        let cld: Vec<f64> = group.iter().filter_map(|r| r.last_cld_fraction).collect();
        if sel.is_empty() {
            continue;
        }
        out.push_str(&format!(
            "{mode:<10} clean-mask {:>6.2}%  effective {:>6.2}%\n",
            cld.iter().sum::<f64>() / cld.len() as f64 * 100.0,
            sel.iter().sum::<f64>() / sel.len() as f64 * 100.0,
        ));
    }
    Ok(out)
}

/// Loads the dataset at `data_dir` and renders the histogram table.
pub fn histogram_report(data_dir: &Path, rho: f64, seed: u64) -> Result<String, ReportError> {
    let ds = read_dataset(data_dir)?;
    let cbs = CbsConfig { rho, seed, resample_each_batch: true };
    let report = HistogramReport::compute(&ds, &cbs, seed)?;
    Ok(report.render())
}
