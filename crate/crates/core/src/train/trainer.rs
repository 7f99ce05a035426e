//! The training loop: warm-up gating, per-batch mask sampling, dual-stream
//! losses, poly learning-rate decay, checkpointing and metric logging.
//!
//! Every run is a pure function of its configuration: data order, mask
//! subsampling and weight init all come from named streams of the global
//! seed, and all floating-point reductions have a fixed order.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbs::{sample_balanced_mask, CbsError};
use crate::cld::{is_disentangling_active, sample_clean_mask, CldError};
use crate::dataset::{read_dataset, DataError, Dataset};
use crate::loss::{probmaps_from_logits, softmax_ce_partial, total_loss};
use crate::model::{DualStreamModel, ModelConfig, Tensor4};
use crate::raster::SelectionMask;
use crate::rng::{domain, stream_rng};
use crate::train::checkpoint::{save_checkpoint, CheckpointError};
use crate::train::config::{Ablation, ConfigError, TrainConfig};
use crate::train::eval::{evaluate_set, EvalError, EvalSet, EvalSummary};
use crate::train::optim::{poly_lr, SgdMomentum};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cld(#[from] CldError),
    #[error(transparent)]
    Cbs(#[from] CbsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at epoch {epoch}, step {step}: clean {loss_clean}, noisy {loss_noisy}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss_clean: f64,
        loss_noisy: f64,
    },
}

/// One evaluation record; serialized as a JSON line in `metrics.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub category: usize,
    pub iou: f64,
    pub dice: f64,
}

/// Per-epoch training record; serialized as a JSON line in `train_log.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_clean: f64,
    pub loss_noisy: f64,
    pub loss_total: f64,
    /// Mean fraction of pixels selected by the clean-label mask.
    pub cld_fraction: f64,
    /// Mean fraction of pixels surviving both masks (the effective
    /// supervision set of the clean stream).
    pub retained_fraction: f64,
}

pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub epochs_run: usize,
    pub final_eval: EvalSummary,
    pub final_checkpoint: PathBuf,
}

fn io_err<P: AsRef<std::path::Path>>(path: P) -> impl FnOnce(std::io::Error) -> TrainError {
    let path = path.as_ref().display().to_string();
    move |source| TrainError::Io { path, source }
}

// Stream index for per-image balanced subsampling. Resampling streams carry a
// tag bit so they never collide with the per-image fixed streams.
fn cbs_stream_index(resample: bool, global_step: usize, slot: usize, dataset_index: usize) -> u64 {
    if resample {
        (1 << 55) | ((global_step as u64) << 8) | slot as u64
    } else {
        dataset_index as u64
    }
}

/// Runs a full training job as described by `cfg`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let train_ds = read_dataset(&cfg.data_dir)?;
    if train_ds.is_empty() {
        return Err(ConfigError::Invalid("training dataset is empty".into()).into());
    }
    let val_ds: Option<Dataset> = cfg.val_dir.as_deref().map(read_dataset).transpose()?;

    let num_classes = train_ds.meta.num_categories;
    let in_channels = train_ds.images[0].channels();
    let (h, w) = (train_ds.meta.height, train_ds.meta.width);

    let model_cfg = ModelConfig {
        in_channels,
        num_classes,
        widths: cfg.model_widths.clone(),
        strides: cfg.model_strides.clone(),
        fusion_hidden: cfg.fusion_hidden,
        fusion_kernel: 1,
        dual_stream: cfg.ablation.dual_stream(),
    };
    model_cfg.validate().map_err(ConfigError::Invalid)?;
    let mut model = DualStreamModel::new(model_cfg, &mut stream_rng(cfg.seed, domain::MODEL_INIT, 0));
    let mut optimizer = SgdMomentum::new(cfg.momentum);

    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_flat_kv()).map_err(io_err(&cfg.out_dir))?;
    let mut metrics = fs::File::create(cfg.out_dir.join("metrics.jsonl")).map_err(io_err(&cfg.out_dir))?;
    let mut train_log = fs::File::create(cfg.out_dir.join("train_log.jsonl")).map_err(io_err(&cfg.out_dir))?;

    let images_chw: Vec<Vec<f64>> = train_ds.images.iter().map(|i| i.to_chw()).collect();
    let (eval_set, eval_split) = match &val_ds {
        Some(ds) => (EvalSet::from_dataset(ds), "val"),
        None => (
            EvalSet {
                chw: images_chw.clone(),
                clean: train_ds.clean.clone(),
                height: h,
                width: w,
                channels: in_channels,
                num_classes,
            },
            "train",
        ),
    };

    let n = train_ds.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let max_iter = (total_steps.saturating_sub(1)).max(1);
    let hw = h * w;

    let mut global_step = 0usize;
    let mut final_eval: Option<EvalSummary> = None;
    let final_ckpt_path = cfg.out_dir.join("ckpt_final.bin");

    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(cfg.seed, domain::SHUFFLE, epoch as u64));
        let active = cfg.ablation != Ablation::Baseline && is_disentangling_active(epoch, &cfg.cld);

        let mut sum_clean = 0.0;
        let mut sum_noisy = 0.0;
        let mut sum_cld_frac = 0.0;
        let mut sum_retained_frac = 0.0;
        let mut images_seen = 0usize;

        for chunk in order.chunks(cfg.batch_size) {
            let bn = chunk.len();
            let mut x = Tensor4::zeros(bn, in_channels, h, w);
            for (slot, &idx) in chunk.iter().enumerate() {
                x.image_mut(slot).copy_from_slice(&images_chw[idx]);
            }
            let fwd = model.forward_train(&x);

            // The voting mask consumes the primary stream's probabilities,
            // detached: nothing below feeds back into the forward graph.
            let probmaps = (active && cfg.ablation.uses_cld()).then(|| probmaps_from_logits(&fwd.logits_primary));

            let ones = SelectionMask::ones(h, w);
            let mut clean_loss_sum = 0.0;
            let mut clean_selected = 0u64;
            let mut d_primary = Tensor4::zeros(bn, num_classes, h, w);
            let mut noisy_loss_sum = 0.0;
            let mut d_noisy = fwd.logits_noisy.as_ref().map(|_| Tensor4::zeros(bn, num_classes, h, w));

            for (slot, &idx) in chunk.iter().enumerate() {
                let given = &train_ds.labels[idx];
                let (cld_mask, targets) = if let Some(pm) = &probmaps {
                    sample_clean_mask(&pm[slot], given, &cfg.cld)?
                } else {
                    (ones.clone(), given.clone())
                };
                let cbs_mask = if active && cfg.ablation.uses_cbs() {
                    let stream = cbs_stream_index(cfg.cbs.resample_each_batch, global_step, slot, idx);
                    sample_balanced_mask(&targets, &cld_mask, &cfg.cbs, &mut stream_rng(cfg.seed, domain::CBS, stream))?
                } else {
                    cld_mask.clone()
                };
                // cbs_mask is a subset of cld_mask, so it alone counts the
                // pixels that survive both.
                sum_cld_frac += cld_mask.fraction();
                sum_retained_frac += cbs_mask.fraction();

                let part = softmax_ce_partial(
                    fwd.logits_primary.image(slot),
                    num_classes,
                    h,
                    w,
                    &targets,
                    Some((&cld_mask, &cbs_mask)),
                );
                clean_loss_sum += part.loss_sum;
                clean_selected += part.selected;
                d_primary.image_mut(slot).copy_from_slice(&part.dlogits);

                if let (Some(noisy_logits), Some(dn)) = (&fwd.logits_noisy, &mut d_noisy) {
                    let part_n = softmax_ce_partial(noisy_logits.image(slot), num_classes, h, w, given, None);
                    noisy_loss_sum += part_n.loss_sum;
                    dn.image_mut(slot).copy_from_slice(&part_n.dlogits);
                }
            }
            images_seen += bn;

            let loss_clean = if clean_selected == 0 { 0.0 } else { clean_loss_sum / clean_selected as f64 };
            let noisy_count = (bn * hw) as f64;
            let loss_noisy = if d_noisy.is_some() { noisy_loss_sum / noisy_count } else { 0.0 };
            let loss = total_loss(loss_clean, loss_noisy, &cfg.weights);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step: global_step,
                    loss_clean,
                    loss_noisy,
                });
            }
            sum_clean += loss_clean;
            sum_noisy += loss_noisy;

            if clean_selected > 0 {
                let scale = cfg.weights.lambda1 / clean_selected as f64;
                for g in &mut d_primary.data {
                    *g *= scale;
                }
            }
            if let Some(dn) = &mut d_noisy {
                let scale = cfg.weights.lambda2 / noisy_count;
                for g in &mut dn.data {
                    *g *= scale;
                }
            }

            model.zero_grads();
            model.backward(&fwd.cache, &d_primary, d_noisy.as_ref());
            let lr = poly_lr(global_step.min(max_iter), max_iter, cfg.lr0, cfg.poly_power);
            optimizer.step(&mut model, lr);
            global_step += 1;
        }

        let record = EpochRecord {
            epoch,
            loss_clean: sum_clean / steps_per_epoch as f64,
            loss_noisy: sum_noisy / steps_per_epoch as f64,
            loss_total: total_loss(sum_clean / steps_per_epoch as f64, sum_noisy / steps_per_epoch as f64, &cfg.weights),
            cld_fraction: sum_cld_frac / images_seen as f64,
            retained_fraction: sum_retained_frac / images_seen as f64,
        };
        writeln!(train_log, "{}", serde_json::to_string(&record).expect("record serializes"))
            .map_err(io_err(&cfg.out_dir))?;

        let last = epoch + 1 == cfg.epochs;
        let mut eval_note = String::new();
        if (epoch + 1) % cfg.eval_every == 0 || last {
            let summary = evaluate_set(&model, &eval_set, cfg.batch_size)?;
            for s in &summary.per_category {
                let rec = MetricRecord {
                    epoch,
                    split: eval_split.to_string(),
                    category: s.category,
                    iou: s.iou,
                    dice: s.dice,
                };
                writeln!(metrics, "{}", serde_json::to_string(&rec).expect("record serializes"))
                    .map_err(io_err(&cfg.out_dir))?;
            }
            eval_note = format!(", fg iou {:.4}", summary.foreground_iou);
            if last {
                final_eval = Some(summary);
            }
        }
        if (epoch + 1) % cfg.checkpoint_every == 0 || last {
            let path = cfg.out_dir.join(format!("ckpt_{epoch:03}.bin"));
            save_checkpoint(&path, &mut model, &optimizer, epoch + 1, cfg.seed)?;
            if last {
                save_checkpoint(&final_ckpt_path, &mut model, &optimizer, epoch + 1, cfg.seed)?;
            }
        }
        eprintln!(
            "[{}] epoch {epoch:3} loss {:.4} (clean {:.4}, noisy {:.4}) retained {:.3}{} [{:.1}s]",
            cfg.ablation,
            record.loss_total,
            record.loss_clean,
            record.loss_noisy,
            record.retained_fraction,
            eval_note,
            epoch_start.elapsed().as_secs_f64(),
        );
    }

    Ok(TrainOutcome {
        out_dir: cfg.out_dir.clone(),
        epochs_run: cfg.epochs,
        final_eval: final_eval.expect("final epoch always evaluates"),
        final_checkpoint: final_ckpt_path,
    })
}
