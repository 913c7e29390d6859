//! DCSCN-style single-image super-resolution.
//!
//! Each ×4 stage runs a stack of 3×3 conv + PReLU feature layers, keeps
//! every layer's output, concatenates them, and feeds the result to a
//! network-in-network reconstruction block (a 1×1 path and a 1×1→3×3
//! path). A final conv emits `r²` channels that are pixel-shuffled and
//! added to a bicubic upsample of the stage input. ×16 is two ×4 stages in
//! sequence with a `[0, 1]` clamp between them.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::frame::{DepthFrame, PrivacyLevel, Provenance};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{kaiming_conv, ParamSet};
use crate::resample::resample_bicubic;
use crate::rng::{seeded, StageRng};
use crate::tensor::{Element, Tensor};

pub use crate::metrics::psnr;

/// Upscale factor of a single reconstruction stage.
pub const STAGE_FACTOR: usize = 4;
/// Largest output side [`sr_forward`] will produce.
pub const MAX_OUTPUT_SIDE: usize = 224;
const PRELU_INIT: f32 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrConfig {
    pub scale: usize,
    pub feature_layers: usize,
    pub feature_filters: Vec<usize>,
    pub nin_a1_filters: usize,
    pub nin_b1_filters: usize,
    pub nin_b2_filters: usize,
    /// High-resolution patch side used for training.
    pub patch_size: usize,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig {
            scale: 4,
            feature_layers: 5,
            feature_filters: vec![32, 26, 22, 18, 16],
            nin_a1_filters: 32,
            nin_b1_filters: 16,
            nin_b2_filters: 16,
            patch_size: 32,
        }
    }
}

impl SrConfig {
    pub fn with_scale(scale: usize) -> Self {
        let mut c = SrConfig {
            scale,
            ..Default::default()
        };
        if scale == 16 {
            c.patch_size = 64;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scale != 4 && self.scale != 16 {
            return bad(format!("scale must be 4 or 16, got {}", self.scale));
        }
        if self.feature_layers == 0 || self.feature_filters.len() != self.feature_layers {
            return bad(format!(
                "feature_filters has {} entries for {} feature layers",
                self.feature_filters.len(),
                self.feature_layers
            ));
        }
        if self.feature_filters.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!("feature_filters must be non-increasing: {:?}", self.feature_filters));
        }
        if self.feature_filters.contains(&0)
            || self.nin_a1_filters == 0
            || self.nin_b1_filters == 0
            || self.nin_b2_filters == 0
        {
            return bad("filter counts must be positive".into());
        }
        if self.patch_size == 0 || self.patch_size % self.scale != 0 {
            return bad(format!(
                "patch_size {} must be a positive multiple of scale {}",
                self.patch_size, self.scale
            ));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        if self.scale == 16 {
            2
        } else {
            1
        }
    }

    fn concat_width(&self) -> usize {
        self.feature_filters.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrModel {
    config: SrConfig,
    params: ParamSet,
}

/// Builds a model with Kaiming fan-in initialization. The last
/// reconstruction conv of every stage starts at zero, so an untrained model
/// reproduces bicubic upsampling.
pub fn build_dcscn(config: &SrConfig, seed: u64) -> Result<SrModel> {
    config.validate()?;
    let mut rng = seeded(seed);
    let mut p = ParamSet::new();
    fn conv(p: &mut ParamSet, rng: &mut StageRng, name: &str, out: usize, inp: usize, k: usize, act: bool) {
        p.push(format!("{name}.w"), kaiming_conv(rng, out, inp, k));
        p.push(format!("{name}.b"), Tensor::zeros(&[out]));
        if act {
            p.push(format!("{name}.a"), Tensor::full(&[out], PRELU_INIT));
        }
    }
    for s in 0..config.stages() {
        let mut prev = 1;
        for (j, &f) in config.feature_filters.iter().enumerate() {
            conv(&mut p, &mut rng, &format!("s{s}.feat{j}"), f, prev, 3, true);
            prev = f;
        }
        let total = config.concat_width();
        conv(&mut p, &mut rng, &format!("s{s}.a1"), config.nin_a1_filters, total, 1, true);
        conv(&mut p, &mut rng, &format!("s{s}.b1"), config.nin_b1_filters, total, 1, true);
        conv(&mut p, &mut rng, &format!("s{s}.b2"), config.nin_b2_filters, config.nin_b1_filters, 3, true);
        let r2 = STAGE_FACTOR * STAGE_FACTOR;
        p.push(format!("s{s}.out.w"), Tensor::zeros(&[r2, config.nin_a1_filters + config.nin_b2_filters, 3, 3]));
        p.push(format!("s{s}.out.b"), Tensor::zeros(&[r2]));
    }
    Ok(SrModel {
        config: config.clone(),
        params: p,
    })
}

impl SrModel {
    pub fn config(&self) -> &SrConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Rebuilds a model from a config and a full parameter set, checking
    /// every name and shape.
    pub fn from_params(config: SrConfig, params: &ParamSet) -> Result<Self> {
        let mut model = build_dcscn(&config, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    /// Records the forward pass for a `[b, 1, h, w]` input, returning the
    /// unclamped `[b, 1, h*scale, w*scale]` prediction.
    pub fn forward_graph<T: Element>(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "model has {} parameter tensors, graph supplied {}",
                self.params.len(),
                params.len()
            )));
        }
        let mut cursor = params.iter().copied();
        let mut next = || cursor.next().expect("parameter list matches model layout");
        let mut x = x;
        for s in 0..self.config.stages() {
            if s > 0 {
                x = g.clamp(x, T::zero(), T::one())?;
            }
            let mut feats = Vec::with_capacity(self.config.feature_layers);
            let mut h = x;
            for _ in 0..self.config.feature_layers {
                h = conv_prelu(g, h, next(), next(), next(), 1)?;
                feats.push(h);
            }
            let cat = g.concat_channels(&feats)?;
            let a1 = conv_prelu(g, cat, next(), next(), next(), 0)?;
            let b1 = conv_prelu(g, cat, next(), next(), next(), 0)?;
            let b2 = conv_prelu(g, b1, next(), next(), next(), 1)?;
            let nin = g.concat_channels(&[a1, b2])?;
            let (ow, ob) = (next(), next());
            let res = g.conv2d(nin, ow, ob, 1, 1)?;
            let res = g.depth_to_space(res, STAGE_FACTOR)?;
            let (_, _, hh, ww) = g.value(x).dims4("sr_forward")?;
            let base = g.upsample_bicubic(x, hh * STAGE_FACTOR, ww * STAGE_FACTOR)?;
            x = g.add(res, base)?;
        }
        Ok(x)
    }

    /// Bicubic baseline matching this model's stage structure: one ×4
    /// resample, or two clamped ×4 resamples for scale 16.
    pub fn bicubic_reference(&self, lr: &DepthFrame) -> Result<DepthFrame> {
        let mut f = lr.clone();
        for _ in 0..self.config.stages() {
            f = resample_bicubic(&f, f.width() * STAGE_FACTOR, f.height() * STAGE_FACTOR)?;
        }
        Ok(f.with_derived_from(Some(lr.privacy_level())))
    }
}

fn conv_prelu<T: Element>(g: &mut Graph<T>, x: Var, w: Var, b: Var, a: Var, pad: usize) -> Result<Var> {
    let y = g.conv2d(x, w, b, 1, pad)?;
    g.prelu(y, a)
}

fn frame_tensor(frames: &[&DepthFrame], op: &'static str) -> Result<Tensor<f32>> {
    let (w, h) = (frames[0].width(), frames[0].height());
    let mut data = Vec::with_capacity(frames.len() * w * h);
    for f in frames {
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "{op}: {}x{} frame in a batch of {w}x{h}",
                f.width(),
                f.height()
            )));
        }
        data.extend_from_slice(f.normalized_or_err(op)?);
    }
    Tensor::new(vec![frames.len(), 1, h, w], data)
}

/// Enhances a normalized low-resolution frame. The result is clamped to
/// `[0, 1]` and records the privacy tier of its source.
pub fn sr_forward(model: &SrModel, lr: &DepthFrame) -> Result<DepthFrame> {
    lr.normalized_or_err("sr_forward")?;
    let scale = model.config.scale;
    if lr.width() * scale > MAX_OUTPUT_SIDE || lr.height() * scale > MAX_OUTPUT_SIDE {
        return Err(Error::DimensionOverflow {
            width: lr.width(),
            height: lr.height(),
            scale,
            max: MAX_OUTPUT_SIDE,
        });
    }
    let mut g = Graph::<f32>::new();
    let params = model.params.to_graph(&mut g, false);
    let x = g.constant(frame_tensor(&[lr], "sr_forward")?);
    let y = model.forward_graph(&mut g, &params, x)?;
    let out = g.value(y).data().to_vec();
    Ok(DepthFrame::normalized(lr.width() * scale, lr.height() * scale, out, lr.provenance())?
        .with_depth_range(lr.depth_range())
        .with_derived_from(Some(lr.privacy_level())))
}

/// Super-resolution training data must come from sources disjoint from the
/// deployment dataset.
pub fn check_provenance(provenance: Provenance) -> Result<()> {
    match provenance {
        Provenance::Public | Provenance::Synthetic => Ok(()),
        Provenance::Private => Err(Error::PrivateProvenance),
    }
}

/// Low/high-resolution training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPairSet {
    pub pairs: Vec<(DepthFrame, DepthFrame)>,
    pub provenance: Provenance,
    pub source: String,
    pub scale: usize,
}

/// Random `patch_size` crops from high-resolution frames, each paired with
/// its bicubic downsample.
pub fn extract_patch_pairs(
    frames: &[DepthFrame],
    provenance: Provenance,
    source: &str,
    config: &SrConfig,
    count: usize,
    seed: u64,
) -> Result<PatchPairSet> {
    check_provenance(provenance)?;
    config.validate()?;
    if frames.iter().any(|f| f.provenance() == Provenance::Private) {
        return Err(Error::PrivateProvenance);
    }
    if frames.is_empty() {
        return Err(Error::EmptySplit("super-resolution training"));
    }
    let p = config.patch_size;
    let lp = p / config.scale;
    let mut rng = seeded(seed);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let f = &frames[rng.random_range(0..frames.len())];
        let src = f.normalized_or_err("extract_patch_pairs")?;
        if f.width() < p || f.height() < p {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} frame smaller than patch {p}",
                f.width(),
                f.height()
            )));
        }
        let x0 = rng.random_range(0..=f.width() - p);
        let y0 = rng.random_range(0..=f.height() - p);
        let mut crop = Vec::with_capacity(p * p);
        for y in y0..y0 + p {
            crop.extend_from_slice(&src[y * f.width() + x0..][..p]);
        }
        let hr = DepthFrame::normalized(p, p, crop, provenance)?;
        let lr = resample_bicubic(&hr, lp, lp)?;
        pairs.push((lr, hr));
    }
    Ok(PatchPairSet {
        pairs,
        provenance,
        source: source.into(),
        scale: config.scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SrTrainConfig {
    fn default() -> Self {
        SrTrainConfig {
            lr: 1e-3,
            batch: 16,
            steps: 2000,
            seed: 0,
        }
    }
}

/// Adam on the MSE between the enhanced low-resolution patch and its
/// high-resolution original. Returns the per-step loss.
pub fn train_sr(model: &mut SrModel, pairs: &PatchPairSet, hyper: &SrTrainConfig) -> Result<Vec<f32>> {
    check_provenance(pairs.provenance)?;
    if pairs.scale != model.config.scale {
        return Err(Error::Config(format!(
            "pairs built for scale {}, model has scale {}",
            pairs.scale, model.config.scale
        )));
    }
    if hyper.steps == 0 {
        return Ok(Vec::new());
    }
    if pairs.pairs.is_empty() {
        return Err(Error::EmptySplit("super-resolution training"));
    }
    if hyper.batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    let mut rng = seeded(hyper.seed);
    let mut state = AdamState::new(AdamConfig::with_lr(hyper.lr), model.params.tensors());
    let mut curve = Vec::with_capacity(hyper.steps);
    let mut lr_batch: Vec<&DepthFrame> = Vec::with_capacity(hyper.batch);
    let mut hr_batch: Vec<&DepthFrame> = Vec::with_capacity(hyper.batch);
    for step in 0..hyper.steps {
        lr_batch.clear();
        hr_batch.clear();
        for _ in 0..hyper.batch {
            let (lr, hr) = &pairs.pairs[rng.random_range(0..pairs.pairs.len())];
            lr_batch.push(lr);
            hr_batch.push(hr);
        }
        let mut g = Graph::<f32>::new();
        let vars = model.params.to_graph(&mut g, true);
        let x = g.constant(frame_tensor(&lr_batch, "train_sr")?);
        let target = g.constant(frame_tensor(&hr_batch, "train_sr")?);
        let loss = model
            .forward_graph(&mut g, &vars, x)
            .and_then(|y| g.mse_loss(y, target))
            .map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss { step },
                e => e,
            })?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        curve.push(value);
        g.backward(loss)?;
        let grads: Vec<Tensor<f32>> = vars
            .iter()
            .map(|&v| g.take_grad(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect();
        adam_step(model.params.tensors_mut(), &grads, &mut state)?;
    }
    Ok(curve)
}

/// Privacy tier an enhanced frame inherits for bookkeeping.
pub fn enhanced_source_level(frame: &DepthFrame) -> Option<PrivacyLevel> {
    frame.derived_from_privacy_level()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resample::downsample;

    fn smooth_frame(w: usize, h: usize, phase: f32) -> DepthFrame {
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f32, (i / w) as f32);
                0.5 + 0.3 * libm::sinf(0.21 * x + phase) * libm::cosf(0.17 * y - phase)
            })
            .collect();
        DepthFrame::normalized(w, h, data, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SrConfig::default().validate().is_ok());
        assert!(SrConfig::with_scale(16).validate().is_ok());
        let mut c = SrConfig::default();
        c.scale = 8;
        assert!(c.validate().is_err());
        let mut c = SrConfig::default();
        c.feature_filters = vec![16, 32, 22, 18, 16];
        assert!(c.validate().is_err());
        let mut c = SrConfig::default();
        c.patch_size = 30;
        assert!(c.validate().is_err());
        let mut c = SrConfig::default();
        c.feature_layers = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn untrained_model_is_bicubic() {
        let model = build_dcscn(&SrConfig::default(), 1).unwrap();
        let lr = smooth_frame(14, 14, 0.3);
        let sr = sr_forward(&model, &lr).unwrap();
        assert_eq!((sr.width(), sr.height()), (56, 56));
        assert_eq!(sr, model.bicubic_reference(&lr).unwrap());
        assert_eq!(sr.derived_from_privacy_level(), Some(PrivacyLevel::Strong));
        assert_eq!(sr.privacy_level(), PrivacyLevel::Weak);
    }

    #[test]
    fn cascade_reaches_224() {
        let model = build_dcscn(&SrConfig::with_scale(16), 2).unwrap();
        let lr = smooth_frame(14, 14, 1.0);
        let sr = sr_forward(&model, &lr).unwrap();
        assert_eq!((sr.width(), sr.height()), (224, 224));
        assert_eq!(sr, model.bicubic_reference(&lr).unwrap());
        let too_big = smooth_frame(15, 14, 0.0);
        assert!(matches!(sr_forward(&model, &too_big), Err(Error::DimensionOverflow { .. })));
    }

    #[test]
    fn builds_are_deterministic() {
        let a = build_dcscn(&SrConfig::default(), 5).unwrap();
        let b = build_dcscn(&SrConfig::default(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params().scalar_count(), b.params().scalar_count());
        let c = build_dcscn(&SrConfig::default(), 6).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.params().scalar_count(), c.params().scalar_count());
    }

    #[test]
    fn provenance_rule() {
        assert!(check_provenance(Provenance::Synthetic).is_ok());
        assert!(check_provenance(Provenance::Public).is_ok());
        assert_eq!(check_provenance(Provenance::Private), Err(Error::PrivateProvenance));
        let frames = [smooth_frame(64, 64, 0.0)];
        let err = extract_patch_pairs(&frames, Provenance::Private, "x", &SrConfig::default(), 4, 0);
        assert_eq!(err.unwrap_err(), Error::PrivateProvenance);
    }

    #[test]
    fn patch_pairs() {
        let frames = [smooth_frame(64, 48, 0.0), smooth_frame(64, 48, 1.0)];
        let cfg = SrConfig::default();
        let a = extract_patch_pairs(&frames, Provenance::Synthetic, "m", &cfg, 6, 9).unwrap();
        let b = extract_patch_pairs(&frames, Provenance::Synthetic, "m", &cfg, 6, 9).unwrap();
        assert_eq!(a, b);
        for (lr, hr) in &a.pairs {
            assert_eq!((lr.width(), hr.width()), (8, 32));
            assert_eq!(lr, &downsample(hr, 4).unwrap());
        }
    }

    #[test]
    fn zero_steps_is_a_no_op() {
        let frames = [smooth_frame(64, 64, 0.0)];
        let cfg = SrConfig::default();
        let pairs = extract_patch_pairs(&frames, Provenance::Synthetic, "m", &cfg, 4, 0).unwrap();
        let mut model = build_dcscn(&cfg, 3).unwrap();
        let before = model.clone();
        let curve = train_sr(&mut model, &pairs, &SrTrainConfig { steps: 0, ..Default::default() }).unwrap();
        assert!(curve.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn private_pairs_cannot_train() {
        let frames = [smooth_frame(64, 64, 0.0)];
        let cfg = SrConfig::default();
        let mut pairs = extract_patch_pairs(&frames, Provenance::Synthetic, "m", &cfg, 4, 0).unwrap();
        pairs.provenance = Provenance::Private;
        let mut model = build_dcscn(&cfg, 3).unwrap();
        assert_eq!(
            train_sr(&mut model, &pairs, &SrTrainConfig { steps: 1, ..Default::default() }),
            Err(Error::PrivateProvenance)
        );
    }

    #[test]
    fn short_training_reduces_loss_deterministically() {
        let frames: Vec<_> = (0..3).map(|k| smooth_frame(64, 64, k as f32)).collect();
        let cfg = SrConfig::default();
        let pairs = extract_patch_pairs(&frames, Provenance::Synthetic, "m", &cfg, 8, 1).unwrap();
        let hyper = SrTrainConfig { lr: 1e-3, batch: 8, steps: 30, seed: 4 };
        let mut a = build_dcscn(&cfg, 3).unwrap();
        let ca = train_sr(&mut a, &pairs, &hyper).unwrap();
        let mut b = build_dcscn(&cfg, 3).unwrap();
        let cb = train_sr(&mut b, &pairs, &hyper).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a, b);
        let head: f32 = ca[..5].iter().sum::<f32>() / 5.0;
        let tail: f32 = ca[ca.len() - 5..].iter().sum::<f32>() / 5.0;
        assert!(tail < head, "{head} -> {tail}");
    }
}
