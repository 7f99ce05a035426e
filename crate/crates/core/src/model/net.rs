//! Dual-stream segmentation network: two structurally identical encoders
//! with independent parameters, a pointwise fusion module that concatenates
//! their features, and per-stream classifier heads with bilinear upsampling
//! back to input resolution.
//!
//! Single-stream mode (ablations without noisy-feature assistance) drops the
//! noisy branch entirely and feeds the clean features straight into the
//! clean classifier.

use rand::Rng;

use super::layers::{
    relu_backward, relu_forward, upsample_bilinear, upsample_bilinear_backward, BatchNorm2d, BnCache, Conv2d,
};
use super::tensor::Tensor4;

/// Architecture knobs. The defaults give a 4-stage encoder with overall
/// stride 8 and feature depth 64, trainable on CPU in minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Output channels of the four encoder stages; the last is the feature depth D.
    pub widths: Vec<usize>,
    /// Stride of each encoder stage.
    pub strides: Vec<usize>,
    /// Hidden channel count of the two fusion transforms.
    pub fusion_hidden: usize,
    /// Kernel size of the fusion transforms (pointwise by default).
    pub fusion_kernel: usize,
    /// Whether the noisy branch (encoder, classifier, fusion) exists.
    pub dual_stream: bool,
}

impl ModelConfig {
    pub fn single_stream(in_channels: usize, num_classes: usize) -> Self {
        Self { dual_stream: false, ..Self::dual(in_channels, num_classes) }
    }

    pub fn dual(in_channels: usize, num_classes: usize) -> Self {
        Self {
            in_channels,
            num_classes,
            widths: vec![8, 16, 32, 64],
            strides: vec![2, 2, 2, 1],
            fusion_hidden: 256,
            fusion_kernel: 1,
            dual_stream: true,
        }
    }

    pub fn feature_depth(&self) -> usize {
        *self.widths.last().expect("at least one stage")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err("widths and strides must be non-empty and equal length".into());
        }
        if self.in_channels == 0 || self.num_classes == 0 || self.fusion_hidden == 0 {
            return Err("channel counts must be positive".into());
        }
        if self.fusion_kernel % 2 == 0 {
            return Err("fusion kernel must be odd".into());
        }
        if self.strides.iter().any(|&s| s == 0) {
            return Err("strides must be positive".into());
        }
        Ok(())
    }
}

struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBlock {
    fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let pad = kernel / 2;
        Self {
            conv: Conv2d::new_kaiming(in_c, out_c, kernel, stride, pad, false, rng),
            bn: BatchNorm2d::new(out_c),
        }
    }
}

struct BlockCache {
    conv_out: Tensor4,
    bn: BnCache,
    out: Tensor4,
}

impl ConvBlock {
    fn forward_train(&mut self, x: &Tensor4) -> BlockCache {
        let conv_out = self.conv.forward(x);
        let (mut out, bn) = self.bn.forward_train(&conv_out);
        relu_forward(&mut out);
        BlockCache { conv_out, bn, out }
    }

    fn forward_eval(&self, x: &Tensor4) -> Tensor4 {
        let mut out = self.bn.forward_eval(&self.conv.forward(x));
        relu_forward(&mut out);
        out
    }

    fn backward(&mut self, input: &Tensor4, cache: &BlockCache, mut dy: Tensor4) -> Tensor4 {
        relu_backward(&cache.out, &mut dy);
        let d_conv = self.bn.backward(&cache.conv_out, &dy, &cache.bn);
        self.conv.backward(input, &d_conv)
    }

    fn zero_grads(&mut self) {
        self.conv.zero_grads();
        self.bn.zero_grads();
    }
}

pub struct Encoder {
    blocks: Vec<ConvBlock>,
}

pub struct EncoderCache {
    input: Tensor4,
    stages: Vec<BlockCache>,
}

impl Encoder {
    fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut blocks = Vec::new();
        let mut in_c = cfg.in_channels;
        for (&w, &s) in cfg.widths.iter().zip(&cfg.strides) {
            blocks.push(ConvBlock::new(in_c, w, 3, s, rng));
            in_c = w;
        }
        Self { blocks }
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> (Tensor4, EncoderCache) {
        let mut stages: Vec<BlockCache> = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let input = if i == 0 { x } else { &stages[i - 1].out };
            let cache = block.forward_train(input);
            stages.push(cache);
        }
        let out = stages.last().expect("encoder has stages").out.clone();
        (out, EncoderCache { input: x.clone(), stages })
    }

    pub fn forward_eval(&self, x: &Tensor4) -> Tensor4 {
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = block.forward_eval(&cur);
        }
        cur
    }

    pub fn backward(&mut self, cache: &EncoderCache, mut dy: Tensor4) {
        for i in (0..self.blocks.len()).rev() {
            let input = if i == 0 { &cache.input } else { &cache.stages[i - 1].out };
            dy = self.blocks[i].backward(input, &cache.stages[i], dy);
        }
    }

    fn zero_grads(&mut self) {
        for b in &mut self.blocks {
            b.zero_grads();
        }
    }
}

/// Channel concatenation followed by two conv+BN+ReLU transforms that bring
/// the depth back to D.
pub struct FusionModule {
    block1: ConvBlock,
    block2: ConvBlock,
    depth: usize,
}

pub struct FusionCache {
    cat: Tensor4,
    stage1: BlockCache,
    stage2: BlockCache,
}

impl FusionModule {
    fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.feature_depth();
        Self {
            block1: ConvBlock::new(2 * d, cfg.fusion_hidden, cfg.fusion_kernel, 1, rng),
            block2: ConvBlock::new(cfg.fusion_hidden, d, cfg.fusion_kernel, 1, rng),
            depth: d,
        }
    }

    pub fn forward_train(&mut self, f_clean: &Tensor4, f_noisy: &Tensor4) -> (Tensor4, FusionCache) {
        assert!(f_clean.same_shape(f_noisy), "fusion inputs must align");
        let cat = Tensor4::concat_channels(f_clean, f_noisy);
        let stage1 = self.block1.forward_train(&cat);
        let stage2 = self.block2.forward_train(&stage1.out);
        let out = stage2.out.clone();
        (out, FusionCache { cat, stage1, stage2 })
    }

    pub fn forward_eval(&self, f_clean: &Tensor4, f_noisy: &Tensor4) -> Tensor4 {
        assert!(f_clean.same_shape(f_noisy), "fusion inputs must align");
        let cat = Tensor4::concat_channels(f_clean, f_noisy);
        self.block2.forward_eval(&self.block1.forward_eval(&cat))
    }

    /// Returns gradients for (clean features, noisy features).
    pub fn backward(&mut self, cache: &FusionCache, dy: Tensor4) -> (Tensor4, Tensor4) {
        let d_mid = self.block2.backward(&cache.stage1.out, &cache.stage2, dy);
        let d_cat = self.block1.backward(&cache.cat, &cache.stage1, d_mid);
        d_cat.split_channels(self.depth)
    }

    fn zero_grads(&mut self) {
        self.block1.zero_grads();
        self.block2.zero_grads();
    }
}

/// 1x1 conv head producing per-category logits, bilinearly upsampled to the
/// requested resolution.
pub struct Classifier {
    conv: Conv2d,
}

pub struct ClsCache {
    input: Tensor4,
    feat_hw: (usize, usize),
}

impl Classifier {
    fn new(in_c: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        Self { conv: Conv2d::new_kaiming(in_c, num_classes, 1, 1, 0, true, rng) }
    }

    pub fn forward_train(&self, f: &Tensor4, out_hw: (usize, usize)) -> (Tensor4, ClsCache) {
        let logits = self.conv.forward(f);
        let up = upsample_bilinear(&logits, out_hw.0, out_hw.1);
        (up, ClsCache { input: f.clone(), feat_hw: (f.h, f.w) })
    }

    pub fn forward_eval(&self, f: &Tensor4, out_hw: (usize, usize)) -> Tensor4 {
        upsample_bilinear(&self.conv.forward(f), out_hw.0, out_hw.1)
    }

    pub fn backward(&mut self, cache: &ClsCache, d_logits_up: &Tensor4) -> Tensor4 {
        let d_feat = upsample_bilinear_backward(d_logits_up, cache.feat_hw.0, cache.feat_hw.1);
        self.conv.backward(&cache.input, &d_feat)
    }

    fn zero_grads(&mut self) {
        self.conv.zero_grads();
    }
}

/// Visitor over named parameter and buffer arrays, in a fixed structural
/// order. The optimizer and the checkpoint format are both built on it.
pub trait ParamVisitor {
    fn param(&mut self, name: &str, data: &mut [f64], grad: &mut [f64]);
    fn buffer(&mut self, _name: &str, _data: &mut [f64]) {}
}

pub struct DualStreamModel {
    pub cfg: ModelConfig,
    clean_encoder: Encoder,
    clean_classifier: Classifier,
    noisy_encoder: Option<Encoder>,
    noisy_classifier: Option<Classifier>,
    fusion: Option<FusionModule>,
}

pub struct ForwardCache {
    clean_enc: EncoderCache,
    noisy_enc: Option<EncoderCache>,
    fusion: Option<FusionCache>,
    clean_cls: ClsCache,
    noisy_cls: Option<ClsCache>,
}

/// Training-mode forward outputs: upsampled logits per stream.
pub struct TrainForward {
    /// Clean-stream logits; computed from fused features in dual-stream mode.
    pub logits_primary: Tensor4,
    pub logits_noisy: Option<Tensor4>,
    pub cache: ForwardCache,
}

impl DualStreamModel {
    /// Construction order (clean encoder, clean classifier, then the noisy
    /// branch and fusion) is fixed: it determines how the init stream is
    /// consumed and therefore the reproducible initial weights.
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Self {
        cfg.validate().expect("valid model config");
        let clean_encoder = Encoder::new(&cfg, rng);
        let clean_classifier = Classifier::new(cfg.feature_depth(), cfg.num_classes, rng);
        let (noisy_encoder, noisy_classifier, fusion) = if cfg.dual_stream {
            (
                Some(Encoder::new(&cfg, rng)),
                Some(Classifier::new(cfg.feature_depth(), cfg.num_classes, rng)),
                Some(FusionModule::new(&cfg, rng)),
            )
        } else {
            (None, None, None)
        };
        Self { cfg, clean_encoder, clean_classifier, noisy_encoder, noisy_classifier, fusion }
    }

    pub fn forward_train(&mut self, x: &Tensor4) -> TrainForward {
        assert_eq!(x.c, self.cfg.in_channels, "model input channels");
        let out_hw = (x.h, x.w);
        let (f_c, clean_enc) = self.clean_encoder.forward_train(x);
        if self.cfg.dual_stream {
            let (f_n, noisy_enc) = self.noisy_encoder.as_mut().unwrap().forward_train(x);
            let (f_a, fusion) = self.fusion.as_mut().unwrap().forward_train(&f_c, &f_n);
            let (logits_primary, clean_cls) = self.clean_classifier.forward_train(&f_a, out_hw);
            let (logits_noisy, noisy_cls) = self.noisy_classifier.as_ref().unwrap().forward_train(&f_n, out_hw);
            TrainForward {
                logits_primary,
                logits_noisy: Some(logits_noisy),
                cache: ForwardCache {
                    clean_enc,
                    noisy_enc: Some(noisy_enc),
                    fusion: Some(fusion),
                    clean_cls,
                    noisy_cls: Some(noisy_cls),
                },
            }
        } else {
            let (logits_primary, clean_cls) = self.clean_classifier.forward_train(&f_c, out_hw);
            TrainForward {
                logits_primary,
                logits_noisy: None,
                cache: ForwardCache { clean_enc, noisy_enc: None, fusion: None, clean_cls, noisy_cls: None },
            }
        }
    }

    /// Deterministic evaluation-mode forward (running batch-norm statistics).
    pub fn forward_eval(&self, x: &Tensor4) -> (Tensor4, Option<Tensor4>) {
        let out_hw = (x.h, x.w);
        let f_c = self.clean_encoder.forward_eval(x);
        if self.cfg.dual_stream {
            let f_n = self.noisy_encoder.as_ref().unwrap().forward_eval(x);
            let f_a = self.fusion.as_ref().unwrap().forward_eval(&f_c, &f_n);
            let primary = self.clean_classifier.forward_eval(&f_a, out_hw);
            let noisy = self.noisy_classifier.as_ref().unwrap().forward_eval(&f_n, out_hw);
            (primary, Some(noisy))
        } else {
            (self.clean_classifier.forward_eval(&f_c, out_hw), None)
        }
    }

    /// Evaluation-mode clean-encoder features.
    pub fn encode_clean(&self, x: &Tensor4) -> Tensor4 {
        self.clean_encoder.forward_eval(x)
    }

    /// Evaluation-mode noisy-encoder features (dual-stream models only).
    pub fn encode_noisy(&self, x: &Tensor4) -> Tensor4 {
        self.noisy_encoder.as_ref().expect("noisy encoder exists").forward_eval(x)
    }

    /// Evaluation-mode feature fusion.
    pub fn fuse(&self, f_clean: &Tensor4, f_noisy: &Tensor4) -> Tensor4 {
        self.fusion.as_ref().expect("fusion exists").forward_eval(f_clean, f_noisy)
    }

    /// Backpropagates the two loss gradients. `d_noisy` must be present iff
    /// the model is dual-stream; gradients accumulate into the layers.
    pub fn backward(&mut self, cache: &ForwardCache, d_primary: &Tensor4, d_noisy: Option<&Tensor4>) {
        if self.cfg.dual_stream {
            let d_fa = self.clean_classifier.backward(&cache.clean_cls, d_primary);
            let (d_fc, d_fn_fuse) = self.fusion.as_mut().unwrap().backward(cache.fusion.as_ref().unwrap(), d_fa);
            let d_noisy = d_noisy.expect("dual-stream backward needs noisy gradient");
            let mut d_fn = self
                .noisy_classifier
                .as_mut()
                .unwrap()
                .backward(cache.noisy_cls.as_ref().unwrap(), d_noisy);
            for (a, &b) in d_fn.data.iter_mut().zip(&d_fn_fuse.data) {
                *a += b;
            }
            self.noisy_encoder.as_mut().unwrap().backward(cache.noisy_enc.as_ref().unwrap(), d_fn);
            self.clean_encoder.backward(&cache.clean_enc, d_fc);
        } else {
            assert!(d_noisy.is_none(), "single-stream model has no noisy gradient");
            let d_fc = self.clean_classifier.backward(&cache.clean_cls, d_primary);
            self.clean_encoder.backward(&cache.clean_enc, d_fc);
        }
    }

    pub fn zero_grads(&mut self) {
        self.clean_encoder.zero_grads();
        self.clean_classifier.zero_grads();
        if let Some(e) = &mut self.noisy_encoder {
            e.zero_grads();
        }
        if let Some(c) = &mut self.noisy_classifier {
            c.zero_grads();
        }
        if let Some(f) = &mut self.fusion {
            f.zero_grads();
        }
    }

    pub fn visit_params(&mut self, v: &mut impl ParamVisitor) {
        fn visit_block(prefix: &str, b: &mut ConvBlock, v: &mut impl ParamVisitor) {
            v.param(&format!("{prefix}.conv.weight"), &mut b.conv.weight, &mut b.conv.grad_weight);
            if let (Some(bias), Some(gb)) = (&mut b.conv.bias, &mut b.conv.grad_bias) {
                v.param(&format!("{prefix}.conv.bias"), bias, gb);
            }
            v.param(&format!("{prefix}.bn.gamma"), &mut b.bn.gamma, &mut b.bn.grad_gamma);
            v.param(&format!("{prefix}.bn.beta"), &mut b.bn.beta, &mut b.bn.grad_beta);
            v.buffer(&format!("{prefix}.bn.running_mean"), &mut b.bn.running_mean);
            v.buffer(&format!("{prefix}.bn.running_var"), &mut b.bn.running_var);
        }
        fn visit_encoder(prefix: &str, e: &mut Encoder, v: &mut impl ParamVisitor) {
            for (i, b) in e.blocks.iter_mut().enumerate() {
                visit_block(&format!("{prefix}.stage{i}"), b, v);
            }
        }
        fn visit_classifier(prefix: &str, c: &mut Classifier, v: &mut impl ParamVisitor) {
            v.param(&format!("{prefix}.conv.weight"), &mut c.conv.weight, &mut c.conv.grad_weight);
            if let (Some(bias), Some(gb)) = (&mut c.conv.bias, &mut c.conv.grad_bias) {
                v.param(&format!("{prefix}.conv.bias"), bias, gb);
            }
        }
        visit_encoder("clean_encoder", &mut self.clean_encoder, v);
        visit_classifier("clean_classifier", &mut self.clean_classifier, v);
        if let Some(e) = &mut self.noisy_encoder {
            visit_encoder("noisy_encoder", e, v);
        }
        if let Some(c) = &mut self.noisy_classifier {
            visit_classifier("noisy_classifier", c, v);
        }
        if let Some(f) = &mut self.fusion {
            visit_block("fusion.block1", &mut f.block1, v);
            visit_block("fusion.block2", &mut f.block2, v);
        }
    }

    /// Overall spatial downsampling factor of the encoder.
    pub fn encoder_stride(&self) -> usize {
        self.cfg.strides.iter().product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{domain, stream_rng};

    struct Collect(Vec<(String, usize)>);
    impl ParamVisitor for Collect {
        fn param(&mut self, name: &str, data: &mut [f64], _grad: &mut [f64]) {
            self.0.push((name.to_string(), data.len()));
        }
    }

    fn tiny_cfg(dual: bool) -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            num_classes: 3,
            widths: vec![4, 6],
            strides: vec![2, 1],
            fusion_hidden: 8,
            fusion_kernel: 1,
            dual_stream: dual,
        }
    }

    #[test]
    fn parameter_groups_are_disjoint_and_streams_isolated() {
        let mut rng = stream_rng(0, domain::MODEL_INIT, 0);
        let mut model = DualStreamModel::new(tiny_cfg(true), &mut rng);
        let mut c = Collect(Vec::new());
        model.visit_params(&mut c);
        let names: Vec<&str> = c.0.iter().map(|(n, _)| n.as_str()).collect();
        let unique: std::collections::HashSet<&&str> = names.iter().collect();
        assert_eq!(unique.len(), names.len(), "parameter names must be unique");
        assert!(names.iter().any(|n| n.starts_with("clean_encoder")));
        assert!(names.iter().any(|n| n.starts_with("noisy_encoder")));
        assert!(names.iter().any(|n| n.starts_with("fusion")));

        // Perturbing a clean-encoder weight must leave the noisy features
        // untouched.
        let mut rng2 = stream_rng(0, domain::MODEL_INIT, 0);
        let mut model2 = DualStreamModel::new(tiny_cfg(true), &mut rng2);
        struct Perturb;
        impl ParamVisitor for Perturb {
            fn param(&mut self, name: &str, data: &mut [f64], _grad: &mut [f64]) {
                if name == "clean_encoder.stage0.conv.weight" {
                    data[0] += 10.0;
                }
            }
        }
        model2.visit_params(&mut Perturb);
        let x = Tensor4::from_data(1, 2, 8, 8, (0..128).map(|i| (i as f64) / 128.0).collect());
        assert_eq!(model.encode_noisy(&x).data, model2.encode_noisy(&x).data);
        assert_ne!(model.encode_clean(&x).data, model2.encode_clean(&x).data);
    }

    #[test]
    fn forward_shapes_and_finiteness() {
        let mut rng = stream_rng(1, domain::MODEL_INIT, 0);
        let mut model = DualStreamModel::new(tiny_cfg(true), &mut rng);
        let x = Tensor4::zeros(2, 2, 8, 8);
        let fwd = model.forward_train(&x);
        assert_eq!((fwd.logits_primary.c, fwd.logits_primary.h, fwd.logits_primary.w), (3, 8, 8));
        assert!(fwd.logits_primary.is_finite());
        assert!(fwd.logits_noisy.as_ref().unwrap().is_finite());

        // Feature maps downsample by the stride product.
        let f = model.encode_clean(&x);
        assert_eq!((f.h, f.w), (8 / model.encoder_stride(), 8 / model.encoder_stride()));
        assert_eq!(f.c, model.cfg.feature_depth());
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = stream_rng(2, domain::MODEL_INIT, 0);
        let model = DualStreamModel::new(tiny_cfg(false), &mut rng);
        let x = Tensor4::from_data(1, 2, 8, 8, (0..128).map(|i| ((i * 31) % 97) as f64 / 97.0).collect());
        let (a, _) = model.forward_eval(&x);
        let (b, _) = model.forward_eval(&x);
        assert_eq!(a.data, b.data);
    }
}
