//! Residual-block depth-frame classifier, balanced sampling, augmentation
//! and evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::frame::{clamp_unit, normalize_depth, DepthFrame};
use crate::metrics::{argmax, auc_binary};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{kaiming_conv, ParamSet};
use crate::resample::resample_bicubic;
use crate::rng::{seeded, StageRng};
use crate::sr::{sr_forward, SrModel};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClsConfig {
    pub num_classes: usize,
    #[serde(default = "default_side")]
    pub input_side: usize,
    /// Channels per residual stage; every stage after the first halves the
    /// spatial size.
    #[serde(default = "default_blocks")]
    pub blocks: Vec<usize>,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_side() -> usize {
    224
}

fn default_blocks() -> Vec<usize> {
    vec![16, 32, 64]
}

fn default_groups() -> usize {
    4
}

/// The stem reduces the input side by this factor before the first stage.
pub const STEM_REDUCTION: usize = 8;

impl ClsConfig {
    pub fn new(num_classes: usize) -> Self {
        ClsConfig {
            num_classes,
            input_side: default_side(),
            blocks: default_blocks(),
            groups: default_groups(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("blocks must list at least one stage".into()));
        }
        if self.groups == 0 || self.blocks.iter().any(|&c| c == 0 || c % self.groups != 0) {
            return Err(Error::Config(format!(
                "every stage width must be a positive multiple of groups={}",
                self.groups
            )));
        }
        let mut side = self.input_side;
        if side == 0 || side % STEM_REDUCTION != 0 {
            return Err(Error::Config(format!(
                "input_side {} must be a positive multiple of {STEM_REDUCTION}",
                self.input_side
            )));
        }
        side /= STEM_REDUCTION;
        for _ in 1..self.blocks.len() {
            side = side.div_ceil(2);
        }
        if side < 1 {
            return Err(Error::Config("input too small for the stage plan".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsModel {
    config: ClsConfig,
    params: ParamSet,
}

fn conv_params(p: &mut ParamSet, rng: &mut StageRng, name: &str, out: usize, inp: usize, k: usize) {
    p.push(format!("{name}.w"), kaiming_conv(rng, out, inp, k));
    p.push(format!("{name}.b"), Tensor::zeros(&[out]));
}

fn norm_params(p: &mut ParamSet, name: &str, ch: usize, gamma: f32) {
    p.push(format!("{name}.g"), Tensor::full(&[ch], gamma));
    p.push(format!("{name}.beta"), Tensor::zeros(&[ch]));
}

/// Fresh classifier. The last normalization of each residual branch starts
/// at zero gain and the head starts at zero, so the untrained model predicts
/// the uniform distribution.
pub fn build_classifier(config: &ClsConfig) -> Result<ClsModel> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let mut p = ParamSet::new();
    let c0 = config.blocks[0];
    conv_params(&mut p, &mut rng, "stem", c0, 1, 3);
    norm_params(&mut p, "stem.n", c0, 1.0);
    let mut cin = c0;
    for (i, &c) in config.blocks.iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        conv_params(&mut p, &mut rng, &format!("s{i}.c1"), c, cin, 3);
        norm_params(&mut p, &format!("s{i}.n1"), c, 1.0);
        conv_params(&mut p, &mut rng, &format!("s{i}.c2"), c, c, 3);
        norm_params(&mut p, &format!("s{i}.n2"), c, 0.0);
        if stride != 1 || cin != c {
            conv_params(&mut p, &mut rng, &format!("s{i}.proj"), c, cin, 1);
        }
        cin = c;
    }
    p.push("head.w", Tensor::zeros(&[config.num_classes, cin]));
    p.push("head.b", Tensor::zeros(&[config.num_classes]));
    Ok(ClsModel {
        config: config.clone(),
        params: p,
    })
}

impl ClsModel {
    pub fn config(&self) -> &ClsConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: ClsConfig, params: &ParamSet) -> Result<Self> {
        let mut model = build_classifier(&config)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    /// Logits `[b, num_classes]` for `x [b, 1, side, side]`.
    pub fn forward_graph<T: Element>(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::Config(format!(
                "model has {} parameter tensors, graph supplied {}",
                self.params.len(),
                params.len()
            )));
        }
        let groups = self.config.groups;
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("length checked");
        let x = g.avg_pool(x, 2)?;
        let (w, b) = (next(), next());
        let h = g.conv2d(x, w, b, 2, 1)?;
        let (gm, bt) = (next(), next());
        let h = g.group_norm(h, gm, bt, groups)?;
        let h = g.relu(h)?;
        let mut h = g.avg_pool(h, 2)?;
        let mut cin = self.config.blocks[0];
        for (i, &c) in self.config.blocks.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let (w1, b1, g1, be1) = (next(), next(), next(), next());
            let (w2, b2, g2, be2) = (next(), next(), next(), next());
            let r = g.conv2d(h, w1, b1, stride, 1)?;
            let r = g.group_norm(r, g1, be1, groups)?;
            let r = g.relu(r)?;
            let r = g.conv2d(r, w2, b2, 1, 1)?;
            let r = g.group_norm(r, g2, be2, groups)?;
            let short = if stride != 1 || cin != c {
                let (wp, bp) = (next(), next());
                g.conv2d(h, wp, bp, stride, 0)?
            } else {
                h
            };
            let s = g.add(r, short)?;
            h = g.relu(s)?;
            cin = c;
        }
        let pooled = g.global_avg_pool(h)?;
        let (hw, hb) = (next(), next());
        g.dense(pooled, hw, hb)
    }

    /// Logits for a batch of preprocessed frames, without gradients.
    pub fn logits(&self, frames: &[&DepthFrame]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::<f32>::new();
        let vars = self.params.to_graph(&mut g, false);
        let x = g.constant(self.input_tensor(frames)?);
        let y = self.forward_graph(&mut g, &vars, x)?;
        Ok(g
            .value(y)
            .data()
            .chunks_exact(self.config.num_classes)
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect())
    }

    fn input_tensor(&self, frames: &[&DepthFrame]) -> Result<Tensor<f32>> {
        let side = self.config.input_side;
        let mut data = Vec::with_capacity(frames.len() * side * side);
        for f in frames {
            if f.width() != side || f.height() != side {
                return Err(Error::DimensionMismatch(format!(
                    "classifier expects {side}x{side}, got {}x{}",
                    f.width(),
                    f.height()
                )));
            }
            data.extend_from_slice(f.normalized_or_err("classifier input")?);
        }
        Tensor::new(vec![frames.len(), 1, side, side], data)
    }
}

/// Brings a frame to the classifier input: bicubic downsample to
/// `target_dim`, optional enhancement, then bicubic resize to
/// `input_side`. Nothing is persisted.
pub fn preprocess(
    frame: &DepthFrame,
    target_dim: usize,
    sr: Option<&SrModel>,
    input_side: usize,
) -> Result<DepthFrame> {
    let f = normalize_depth(frame)?;
    let low = if f.width() == target_dim && f.height() == target_dim {
        f
    } else {
        resample_bicubic(&f, target_dim, target_dim)?
    };
    let enhanced = match sr {
        Some(model) => sr_forward(model, &low)?,
        None => low,
    };
    if enhanced.width() == input_side && enhanced.height() == input_side {
        Ok(enhanced)
    } else {
        resample_bicubic(&enhanced, input_side, input_side)
    }
}

/// One draw of the label-preserving training transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub dx: i64,
    pub dy: i64,
    pub noise_sigma: f64,
}

pub const SHIFT_FRACTION: f64 = 0.05;
pub const NOISE_SIGMA: f64 = 0.01;

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip: false,
        dx: 0,
        dy: 0,
        noise_sigma: 0.0,
    };

    pub fn sample<R: Rng>(rng: &mut R, width: usize, height: usize) -> Self {
        let mx = libm::floor(SHIFT_FRACTION * width as f64) as i64;
        let my = libm::floor(SHIFT_FRACTION * height as f64) as i64;
        AugmentParams {
            flip: rng.random_bool(0.5),
            dx: rng.random_range(-mx..=mx),
            dy: rng.random_range(-my..=my),
            noise_sigma: NOISE_SIGMA,
        }
    }

    /// Flip, then translate with edge clamping, then add clamped Gaussian
    /// noise drawn from `rng`.
    pub fn apply<R: Rng>(&self, frame: &DepthFrame, rng: &mut R) -> Result<DepthFrame> {
        let src = frame.normalized_or_err("augment")?;
        let (w, h) = (frame.width(), frame.height());
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = (y as i64 - self.dy).clamp(0, h as i64 - 1) as usize;
            for x in 0..w {
                let mut sx = (x as i64 - self.dx).clamp(0, w as i64 - 1) as usize;
                if self.flip {
                    sx = w - 1 - sx;
                }
                out.push(src[sy * w + sx]);
            }
        }
        if self.noise_sigma > 0.0 {
            let dist = Normal::new(0.0, self.noise_sigma)
                .map_err(|_| Error::Config(format!("bad noise sigma {}", self.noise_sigma)))?;
            for v in &mut out {
                *v = clamp_unit(*v + dist.sample(rng) as f32);
            }
        }
        frame.derive(w, h, out)
    }
}

/// Random flip, shift and noise for training.
pub fn augment<R: Rng>(frame: &DepthFrame, rng: &mut R) -> Result<DepthFrame> {
    AugmentParams::sample(rng, frame.width(), frame.height()).apply(frame, rng)
}

/// Class-balanced index stream. Each class cycles through its own
/// reshuffled queue, so minority classes are revisited more often.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    queues: Vec<Vec<usize>>,
    cursor: Vec<usize>,
    remainder_start: usize,
    rng: StageRng,
}

impl BalancedSampler {
    pub fn new(labels: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        let mut queues = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: num_classes,
                });
            }
            queues[l].push(i);
        }
        if let Some(c) = queues.iter().position(Vec::is_empty) {
            return Err(Error::EmptyClass(c));
        }
        let mut rng = seeded(seed);
        for q in &mut queues {
            q.shuffle(&mut rng);
        }
        Ok(BalancedSampler {
            cursor: vec![0; num_classes],
            queues,
            remainder_start: 0,
            rng,
        })
    }

    fn draw(&mut self, class: usize) -> usize {
        if self.cursor[class] == self.queues[class].len() {
            self.queues[class].shuffle(&mut self.rng);
            self.cursor[class] = 0;
        }
        let i = self.queues[class][self.cursor[class]];
        self.cursor[class] += 1;
        i
    }

    /// Indices of the next batch: `batch / k` per class, the remainder
    /// handed out round-robin across successive batches.
    pub fn next_batch(&mut self, batch: usize) -> Vec<usize> {
        let k = self.queues.len();
        let mut out = Vec::with_capacity(batch);
        for c in 0..k {
            for _ in 0..batch / k {
                out.push(self.draw(c));
            }
        }
        for j in 0..batch % k {
            let c = (self.remainder_start + j) % k;
            out.push(self.draw(c));
        }
        self.remainder_start = (self.remainder_start + batch % k) % k;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClsTrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub augment: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ClsTrainConfig {
    fn default() -> Self {
        ClsTrainConfig {
            lr: 2e-3,
            batch: 16,
            steps: 300,
            seed: 0,
            augment: true,
        }
    }
}

/// Adam on softmax cross-entropy over balanced, augmented batches of
/// preprocessed frames. Returns the per-step loss.
pub fn train_cls(
    model: &mut ClsModel,
    frames: &[DepthFrame],
    labels: &[usize],
    hyper: &ClsTrainConfig,
) -> Result<Vec<f32>> {
    if frames.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames for {} labels",
            frames.len(),
            labels.len()
        )));
    }
    if hyper.steps == 0 {
        return Ok(Vec::new());
    }
    if frames.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if hyper.batch == 0 {
        return Err(Error::Config("batch must be positive".into()));
    }
    let mut sampler = BalancedSampler::new(labels, model.config.num_classes, hyper.seed)?;
    let mut rng = seeded(crate::rng::derive_seed(hyper.seed, "augment"));
    let mut state = AdamState::new(AdamConfig::with_lr(hyper.lr), model.params.tensors());
    let mut curve = Vec::with_capacity(hyper.steps);
    for step in 0..hyper.steps {
        let idx = sampler.next_batch(hyper.batch);
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let owned: Vec<DepthFrame> = if hyper.augment {
            idx.iter()
                .map(|&i| augment(&frames[i], &mut rng))
                .collect::<Result<_>>()?
        } else {
            idx.iter().map(|&i| frames[i].clone()).collect()
        };
        let refs: Vec<&DepthFrame> = owned.iter().collect();
        let mut g = Graph::<f32>::new();
        let vars = model.params.to_graph(&mut g, true);
        let x = g.constant(model.input_tensor(&refs)?);
        let loss = model
            .forward_graph(&mut g, &vars, x)
            .and_then(|y| g.softmax_cross_entropy(y, &batch_labels))
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

/// Test-set metrics for one (input dimension, enhancement) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub task: String,
    pub dim: usize,
    pub dcscn: bool,
    pub num_classes: usize,
    pub test_accuracy: f64,
    /// One-vs-rest AUC per class; `None` when the class is absent from (or
    /// is the only class in) the test split.
    pub auc: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn accuracy_from_confusion(&self) -> f64 {
        let trace: u64 = (0..self.num_classes).map(|i| self.confusion[i][i]).sum();
        trace as f64 / self.total() as f64
    }
}

/// Softmax of one logit row, computed stably in f64.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = logits.iter().map(|&v| libm::exp(v - m)).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Builds a report from per-sample class scores (probabilities or logits).
pub fn evaluate_scores(
    scores: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    task: &str,
    dim: usize,
    dcscn: bool,
) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (row, &y) in scores.iter().zip(labels) {
        if row.len() != num_classes {
            return Err(Error::DimensionMismatch(format!(
                "score row of length {} for {num_classes} classes",
                row.len()
            )));
        }
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: num_classes,
            });
        }
        confusion[y][argmax(row)] += 1;
    }
    let auc = (0..num_classes)
        .map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let l: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            match auc_binary(&s, &l) {
                Ok(a) => Ok(Some(a)),
                Err(Error::UndefinedAuc) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport {
        task: task.into(),
        dim,
        dcscn,
        num_classes,
        test_accuracy: 0.0,
        auc,
        confusion,
    };
    report.test_accuracy = report.accuracy_from_confusion();
    Ok(report)
}

/// Evaluates preprocessed test frames in fixed-order mini-batches.
pub fn evaluate(
    model: &ClsModel,
    frames: &[DepthFrame],
    labels: &[usize],
    task: &str,
    dim: usize,
    dcscn: bool,
) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(16) {
        let refs: Vec<&DepthFrame> = chunk.iter().collect();
        for row in model.logits(&refs)? {
            scores.push(softmax(&row));
        }
    }
    evaluate_scores(&scores, labels, model.config.num_classes, task, dim, dcscn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Provenance;
    use proptest::prelude::*;

    fn ramp(side: usize) -> DepthFrame {
        let data = (0..side * side).map(|i| (i % 97) as f32 / 97.0).collect();
        DepthFrame::normalized(side, side, data, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ClsConfig::new(2).validate().is_ok());
        assert!(ClsConfig::new(1).validate().is_err());
        let mut c = ClsConfig::new(5);
        c.blocks = vec![16, 30];
        assert!(c.validate().is_err());
        c.blocks = vec![];
        assert!(c.validate().is_err());
        let mut c = ClsConfig::new(2);
        c.input_side = 100;
        assert!(c.validate().is_err());
    }

    #[test]
    fn logits_shape_and_uniform_start() {
        let mut c = ClsConfig::new(5);
        c.input_side = 32;
        let m = build_classifier(&c).unwrap();
        let f = ramp(32);
        let out = m.logits(&[&f, &f, &f]).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| r.len() == 5 && r.iter().all(|&v| v == 0.0)));
        assert!(m.logits(&[&ramp(24)]).is_err());
    }

    #[test]
    fn identity_augment_and_double_flip() {
        let f = ramp(20);
        let mut rng = seeded(1);
        assert_eq!(AugmentParams::IDENTITY.apply(&f, &mut rng).unwrap(), f);
        let flip = AugmentParams {
            flip: true,
            ..AugmentParams::IDENTITY
        };
        let once = flip.apply(&f, &mut rng).unwrap();
        assert_ne!(once, f);
        assert_eq!(flip.apply(&once, &mut rng).unwrap(), f);
    }

    #[test]
    fn shift_clamps_to_edge() {
        let f = DepthFrame::normalized(4, 1, vec![0.1, 0.2, 0.3, 0.4], Provenance::Synthetic).unwrap();
        let p = AugmentParams {
            dx: 2,
            ..AugmentParams::IDENTITY
        };
        let out = p.apply(&f, &mut seeded(0)).unwrap();
        assert_eq!(out.as_normalized().unwrap(), &[0.1, 0.1, 0.1, 0.2]);
    }

    #[test]
    fn augment_keeps_dims() {
        let f = ramp(40);
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let p = AugmentParams::sample(&mut rng, 40, 40);
            assert!(p.dx.abs() <= 2 && p.dy.abs() <= 2);
        }
        for _ in 0..50 {
            let a = augment(&f, &mut rng).unwrap();
            assert_eq!((a.width(), a.height()), (40, 40));
            assert!(a.as_normalized().unwrap().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn balanced_batches() {
        let mut labels = vec![1usize; 100];
        labels.extend(vec![0usize; 900]);
        let mut s = BalancedSampler::new(&labels, 2, 7).unwrap();
        for _ in 0..50 {
            let b = s.next_batch(32);
            let pos = b.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(pos, 16);
        }
        let five: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let mut s = BalancedSampler::new(&five, 5, 0).unwrap();
        let b = s.next_batch(20);
        for c in 0..5 {
            assert_eq!(b.iter().filter(|&&i| five[i] == c).count(), 4);
        }
        assert_eq!(BalancedSampler::new(&[0, 0, 2], 3, 0).unwrap_err(), Error::EmptyClass(1));
    }

    #[test]
    fn balanced_at_reference_imbalance() {
        // 11,994 positives of 113,379 frames, scaled to 1000
        let pos = 106;
        let labels: Vec<usize> = (0..1000).map(|i| usize::from(i < pos)).collect();
        let mut s = BalancedSampler::new(&labels, 2, 11).unwrap();
        for _ in 0..100 {
            let b = s.next_batch(16);
            assert_eq!(b.iter().filter(|&&i| labels[i] == 1).count(), 8);
        }
    }

    #[test]
    fn remainder_is_round_robin() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let mut s = BalancedSampler::new(&labels, 3, 0).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..3 {
            for i in s.next_batch(8) {
                counts[labels[i]] += 1;
            }
        }
        assert_eq!(counts, [8, 8, 8]);
    }

    #[test]
    fn perfect_and_constant_scores() {
        let labels = [0, 1, 2, 1, 0];
        let onehot: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| (0..3).map(|c| f64::from(u8::from(c == y))).collect())
            .collect();
        let r = evaluate_scores(&onehot, &labels, 3, "icu", 224, false).unwrap();
        assert_eq!(r.test_accuracy, 1.0);
        assert!(r.auc.iter().all(|a| *a == Some(1.0)));
        assert_eq!(r.confusion, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);

        let labels = [0, 1, 0, 1, 1, 0];
        let flat = vec![vec![0.5, 0.5]; 6];
        let r = evaluate_scores(&flat, &labels, 2, "hh", 14, true).unwrap();
        assert_eq!(r.test_accuracy, 0.5);
        assert_eq!(r.auc, vec![Some(0.5), Some(0.5)]);
    }

    #[test]
    fn absent_class_has_undefined_auc() {
        let r = evaluate_scores(&[vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.0]], &[0, 1], 3, "icu", 56, false)
            .unwrap();
        assert_eq!(r.auc[2], None);
        assert_eq!(r.auc[0], Some(1.0));
    }

    #[test]
    fn zero_steps_and_determinism() {
        let mut c = ClsConfig::new(2);
        c.input_side = 32;
        let frames: Vec<DepthFrame> = (0..8)
            .map(|i| {
                let v = if i % 2 == 0 { 0.2 } else { 0.8 };
                DepthFrame::normalized(32, 32, vec![v; 1024], Provenance::Synthetic).unwrap()
            })
            .collect();
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let base = build_classifier(&c).unwrap();
        let mut m = base.clone();
        let hyper = ClsTrainConfig {
            steps: 0,
            ..Default::default()
        };
        assert!(train_cls(&mut m, &frames, &labels, &hyper).unwrap().is_empty());
        assert_eq!(m, base);

        let hyper = ClsTrainConfig {
            steps: 30,
            batch: 4,
            lr: 5e-3,
            ..Default::default()
        };
        let mut a = base.clone();
        let mut b = base.clone();
        let ca = train_cls(&mut a, &frames, &labels, &hyper).unwrap();
        let cb = train_cls(&mut b, &frames, &labels, &hyper).unwrap();
        assert_eq!(ca, cb);
        assert_eq!(a, b);
        assert!((ca[0] - core::f32::consts::LN_2).abs() < 1e-6);
        let tail: f32 = ca[25..].iter().sum::<f32>() / 5.0;
        assert!(tail < core::f32::consts::LN_2, "{ca:?}");
    }

    #[test]
    fn preprocess_dims() {
        let f = ramp(224);
        let p = preprocess(&f, 14, None, 224).unwrap();
        assert_eq!((p.width(), p.height()), (224, 224));
        let same = preprocess(&f, 224, None, 224).unwrap();
        assert_eq!(same, f);
    }

    proptest! {
        #[test]
        fn argmax_shift_invariant(row in proptest::collection::vec(-50i32..50, 2..6), c in -100i32..100) {
            let a: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            let b: Vec<f64> = a.iter().map(|v| v + c as f64).collect();
            prop_assert_eq!(argmax(&a), argmax(&b));
        }

        #[test]
        fn confusion_is_consistent(rows in proptest::collection::vec((0usize..3, 0u8..4, 0u8..4, 0u8..4), 1..60)) {
            let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let scores: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.1 as f64, r.2 as f64, r.3 as f64]).collect();
            let rep = evaluate_scores(&scores, &labels, 3, "t", 14, false).unwrap();
            prop_assert_eq!(rep.accuracy_from_confusion(), rep.test_accuracy);
            for c in 0..3 {
                let n = labels.iter().filter(|&&y| y == c).count() as u64;
                prop_assert_eq!(rep.confusion[c].iter().sum::<u64>(), n);
            }
            for a in rep.auc.iter().flatten() {
                prop_assert!((0.0..=1.0).contains(a));
            }
        }
    }
}
