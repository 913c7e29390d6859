//! Finite-difference verification of reverse-mode gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::{Element, Tensor};

/// A scalar-valued computation that can be built at any precision.
pub trait Probe {
    fn build<T: Element>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per input; `None` checks every coordinate.
    pub coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            eps: 1e-6,
            coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Per input: `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`
    /// over the checked coordinates (0 when both vanish).
    pub rel_err: Vec<f64>,
    pub coords: usize,
}

impl GradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().copied().fold(0.0, f64::max)
    }
}

fn eval_f64<P: Probe>(probe: &P, inputs: &[Tensor<f64>]) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.constant(x.clone())).collect();
    let root = probe.build(&mut g, &vars)?;
    Ok(g.value(root).item())
}

/// Compares gradients computed at precision `T` with central differences
/// of the same computation evaluated in `f64`.
pub fn gradient_check<T: Element, P: Probe>(
    probe: &P,
    inputs: &[Tensor<f64>],
    opts: CheckOptions,
) -> Result<GradCheck> {
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.cast::<T>())).collect();
    let root = probe.build(&mut g, &vars)?;
    if !g.value(root).is_scalar() {
        return Err(Error::NonScalarRoot(g.value(root).shape().to_vec()));
    }
    g.backward(root)?;
    let mut rng = seeded(opts.seed);
    let mut rel_err = Vec::with_capacity(inputs.len());
    let mut coords = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let n = inputs[k].numel();
        let analytic: Vec<f64> = match g.grad(v) {
            Some(t) => t.data().iter().map(|x| x.as_f64()).collect(),
            None => alloc::vec![0.0; n],
        };
        let picks: Vec<usize> = match opts.coords_per_input {
            Some(m) if m < n => (0..m).map(|_| rng.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for j in picks {
            let orig = work[k].data()[j];
            work[k].data_mut()[j] = orig + opts.eps;
            let up = eval_f64(probe, &work)?;
            work[k].data_mut()[j] = orig - opts.eps;
            let down = eval_f64(probe, &work)?;
            work[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            diff += (analytic[j] - numeric) * (analytic[j] - numeric);
            na += analytic[j] * analytic[j];
            nn += numeric * numeric;
            coords += 1;
        }
        let scale = libm::sqrt(na.max(nn));
        rel_err.push(if scale == 0.0 { 0.0 } else { libm::sqrt(diff) / scale });
    }
    Ok(GradCheck { rel_err, coords })
}

/// Every differentiable graph operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Conv2d,
    Prelu,
    Relu,
    Add,
    Clamp,
    DepthToSpace,
    ConcatChannels,
    MseLoss,
    SoftmaxCrossEntropy,
    Sum,
    GlobalAvgPool,
    AvgPool,
    Dense,
    GroupNorm,
    UpsampleBicubic,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::Conv2d,
        OpKind::Prelu,
        OpKind::Relu,
        OpKind::Add,
        OpKind::Clamp,
        OpKind::DepthToSpace,
        OpKind::ConcatChannels,
        OpKind::MseLoss,
        OpKind::SoftmaxCrossEntropy,
        OpKind::Sum,
        OpKind::GlobalAvgPool,
        OpKind::AvgPool,
        OpKind::Dense,
        OpKind::GroupNorm,
        OpKind::UpsampleBicubic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::Prelu => "prelu",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Clamp => "clamp",
            OpKind::DepthToSpace => "depth_to_space",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::MseLoss => "mse_loss",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::Sum => "sum",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::AvgPool => "avg_pool",
            OpKind::Dense => "dense",
            OpKind::GroupNorm => "group_norm",
            OpKind::UpsampleBicubic => "upsample_bicubic",
        }
    }
}

const CLAMP_LO: f64 = -0.5;
const CLAMP_HI: f64 = 0.5;
/// Inputs of piecewise-linear ops stay this far from their kinks.
const KINK_MARGIN: f64 = 0.05;

/// A randomly shaped instance of one op. Non-scalar outputs are reduced
/// with `mse_loss` against a fixed random target so every output element
/// contributes a distinct weight.
#[derive(Debug, Clone)]
pub struct OpCase {
    pub op: OpKind,
    pub inputs: Vec<Tensor<f64>>,
    target: Option<Tensor<f64>>,
    stride: usize,
    pad: usize,
    r: usize,
    groups: usize,
    out_hw: (usize, usize),
    labels: Vec<usize>,
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn away_from(rng: &mut impl Rng, shape: &[usize], kinks: &[f64]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.random_range(-1.0..1.0);
        if kinks.iter().all(|k| (v - k).abs() > KINK_MARGIN) {
            break v;
        }
    })
}

impl OpCase {
    pub fn random(op: OpKind, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let rng = &mut rng;
        let b = rng.random_range(1..=2);
        let c = rng.random_range(1..=3);
        let h = rng.random_range(2..=5);
        let w = rng.random_range(2..=5);
        let x4 = [b, c, h, w];
        let mut case = OpCase {
            op,
            inputs: Vec::new(),
            target: None,
            stride: 1,
            pad: 0,
            r: 1,
            groups: 1,
            out_hw: (h, w),
            labels: Vec::new(),
        };
        match op {
            OpKind::Conv2d => {
                let k = if rng.random_bool(0.5) { 3 } else { 1 };
                case.pad = if k == 3 { rng.random_range(0..=1) } else { 0 };
                case.stride = rng.random_range(1..=2);
                let (h, w) = (h.max(k), w.max(k));
                let co = rng.random_range(1..=3);
                case.inputs = vec![uniform(rng, &[b, c, h, w]), uniform(rng, &[co, c, k, k]), uniform(rng, &[co])];
            }
            OpKind::Prelu => case.inputs = vec![away_from(rng, &x4, &[0.0]), uniform(rng, &[c])],
            OpKind::Relu => case.inputs = vec![away_from(rng, &x4, &[0.0])],
            OpKind::Add => case.inputs = vec![uniform(rng, &x4), uniform(rng, &x4)],
            OpKind::Clamp => case.inputs = vec![away_from(rng, &x4, &[CLAMP_LO, CLAMP_HI])],
            OpKind::DepthToSpace => {
                case.r = rng.random_range(1..=2);
                case.inputs = vec![uniform(rng, &[b, c * case.r * case.r, h, w])];
            }
            OpKind::ConcatChannels => {
                let n = rng.random_range(1..=3);
                case.inputs = (0..n)
                    .map(|_| {
                        let ci = rng.random_range(1..=3);
                        uniform(rng, &[b, ci, h, w])
                    })
                    .collect();
            }
            OpKind::MseLoss => case.inputs = vec![uniform(rng, &x4), uniform(rng, &x4)],
            OpKind::SoftmaxCrossEntropy => {
                let k = rng.random_range(2..=5);
                case.labels = (0..b).map(|_| rng.random_range(0..k)).collect();
                case.inputs = vec![Tensor::from_fn(&[b, k], |_| rng.random_range(-3.0..3.0))];
            }
            OpKind::Sum | OpKind::GlobalAvgPool => case.inputs = vec![uniform(rng, &x4)],
            OpKind::AvgPool => {
                case.r = rng.random_range(1..=2);
                case.inputs = vec![uniform(rng, &[b, c, h * case.r, w * case.r])];
            }
            OpKind::Dense => {
                let (fin, fout) = (rng.random_range(1..=6), rng.random_range(1..=4));
                case.inputs = vec![uniform(rng, &[b, fin]), uniform(rng, &[fout, fin]), uniform(rng, &[fout])];
            }
            OpKind::GroupNorm => {
                case.groups = rng.random_range(1..=2);
                let c = case.groups * rng.random_range(1..=2);
                case.inputs = vec![uniform(rng, &[b, c, h, w]), uniform(rng, &[c]), uniform(rng, &[c])];
            }
            OpKind::UpsampleBicubic => {
                case.out_hw = (rng.random_range(1..=8), rng.random_range(1..=8));
                case.inputs = vec![uniform(rng, &x4)];
            }
        }
        let mut probe = case.clone();
        probe.target = None;
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = case.inputs.iter().map(|x| g.constant(x.clone())).collect();
        let out = probe.apply(&mut g, &vars).expect("generated shapes are valid");
        if !g.value(out).is_scalar() {
            case.target = Some(uniform(rng, g.value(out).shape()));
        }
        case
    }

    fn apply<T: Element>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
        match self.op {
            OpKind::Conv2d => g.conv2d(x[0], x[1], x[2], self.stride, self.pad),
            OpKind::Prelu => g.prelu(x[0], x[1]),
            OpKind::Relu => g.relu(x[0]),
            OpKind::Add => g.add(x[0], x[1]),
            OpKind::Clamp => g.clamp(x[0], T::of_f64(CLAMP_LO), T::of_f64(CLAMP_HI)),
            OpKind::DepthToSpace => g.depth_to_space(x[0], self.r),
            OpKind::ConcatChannels => g.concat_channels(x),
            OpKind::MseLoss => g.mse_loss(x[0], x[1]),
            OpKind::SoftmaxCrossEntropy => g.softmax_cross_entropy(x[0], &self.labels),
            OpKind::Sum => g.sum(x[0]),
            OpKind::GlobalAvgPool => g.global_avg_pool(x[0]),
            OpKind::AvgPool => g.avg_pool(x[0], self.r),
            OpKind::Dense => g.dense(x[0], x[1], x[2]),
            OpKind::GroupNorm => g.group_norm(x[0], x[1], x[2], self.groups),
            OpKind::UpsampleBicubic => g.upsample_bicubic(x[0], self.out_hw.0, self.out_hw.1),
        }
    }
}

impl Probe for OpCase {
    fn build<T: Element>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var> {
        let out = self.apply(g, inputs)?;
        match &self.target {
            Some(t) => {
                let t = g.constant(t.cast::<T>());
                g.mse_loss(out, t)
            }
            None => Ok(out),
        }
    }
}

/// Checks one random instance of `op` at full precision.
pub fn check_op(op: OpKind, seed: u64) -> Result<GradCheck> {
    let case = OpCase::random(op, seed);
    gradient_check::<f64, _>(&case, &case.inputs, CheckOptions { seed, ..CheckOptions::default() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    struct Square;

    impl Probe for Square {
        fn build<T: Element>(&self, g: &mut Graph<T>, x: &[Var]) -> Result<Var> {
            let zero = g.constant(Tensor::zeros(g.value(x[0]).shape()));
            g.mse_loss(x[0], zero)
        }
    }

    #[test]
    fn every_op_passes_a_few_seeds() {
        for op in OpKind::ALL {
            for seed in 0..5 {
                let r = check_op(op, seed).unwrap();
                assert!(r.max_rel_err() < 1e-6, "{} seed {seed}: {:?}", op.name(), r.rel_err);
                assert!(r.coords > 0);
            }
        }
    }

    #[test]
    fn exact_for_quadratic() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = gradient_check::<f64, _>(&Square, &[x.clone()], CheckOptions::default()).unwrap();
        assert!(r.max_rel_err() < 1e-8);
        assert_eq!(r.coords, 3);
        let r = gradient_check::<f32, _>(&Square, &[x], CheckOptions::default()).unwrap();
        assert!(r.max_rel_err() < 1e-6);
    }
}
