//! Temporary diagnostic: vote composition of the warm-up model.

use noisyseg::cld::{sample_clean_mask, CldConfig};
use noisyseg::dataset::read_dataset;
use noisyseg::loss::probmaps_from_logits;
use noisyseg::model::Tensor4;
use noisyseg::train::{load_checkpoint, train, TrainConfig};

#[test]
#[ignore]
fn diag_warmup_votes() {
    let mut cfg = TrainConfig::parse(
        "epochs = 10\nbatch_size = 6\ndata_dir = /tmp/exp/train_jed_mild\nout_dir = /tmp/exp/diag_warm\nablation = baseline\neval_every = 10\ncheckpoint_every = 10\nmodel.widths = 6,12,24,48\nmodel.strides = 2,2,1,1\nlr0 = 0.01\n",
    )
    .unwrap();
    cfg.seed = 0;
    train(&cfg).unwrap();

    let ck = load_checkpoint(std::path::Path::new("/tmp/exp/diag_warm/ckpt_final.bin")).unwrap();
    let ds = read_dataset(std::path::Path::new("/tmp/exp/train_jed_mild")).unwrap();
    let clean_ds = read_dataset(std::path::Path::new("/tmp/exp/train_clean")).unwrap();
    let cld = CldConfig::default();

    // counts[true][target] over selected pixels; drops[true] over unselected.
    let mut sel = [[0u64; 3]; 3];
    let mut drop = [0u64; 3];
    let mut conf_sum = [0.0f64; 3];
    let mut conf_n = [0u64; 3];
    for i in 0..ds.len() {
        let img = &ds.images[i];
        let mut x = Tensor4::zeros(1, img.channels(), img.height(), img.width());
        x.image_mut(0).copy_from_slice(&img.to_chw());
        let (logits, _) = ck.model.forward_eval(&x);
        let probs = probmaps_from_logits(&logits).remove(0);
        let (mask, targets) = sample_clean_mask(&probs, &ds.labels[i], &cld).unwrap();
        let truth = &clean_ds.clean[i];
        for r in 0..img.height() {
            for c in 0..img.width() {
                let t = truth.get(r, c) as usize;
                let px = probs.pixel(r, c);
                let conf = px.iter().cloned().fold(f64::MIN, f64::max);
                conf_sum[t] += conf;
                conf_n[t] += 1;
                if mask.get(r, c) == 1 {
                    sel[t][targets.get(r, c) as usize] += 1;
                } else {
                    drop[t] += 1;
                }
            }
        }
    }
    for t in 0..3 {
        println!(
            "true {t}: mean max-prob {:.3}, selected {:?}, dropped {}",
            conf_sum[t] / conf_n[t] as f64,
            sel[t],
            drop[t]
        );
    }
}
