//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the node list
//! is already topologically sorted; [`Graph::backward`] walks it once in
//! reverse. Every op checks its output for NaN/Inf before it is recorded.

pub mod check;
pub mod kernels;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::resample::{KernelParams, ResamplePlan};
use crate::tensor::{Element, Tensor};
use kernels::ConvGeom;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Prelu { x: Var, slope: Var, channels: usize, inner: usize },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Clamp { x: Var, lo: T, hi: T },
    DepthToSpace { x: Var, r: usize },
    Concat { xs: Vec<Var> },
    Mse { pred: Var, target: Var },
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Sum { x: Var },
    GlobalAvgPool { x: Var },
    AvgPool { x: Var, k: usize },
    Dense { x: Var, w: Var, b: Var },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, xhat: Vec<T>, rstd: Vec<f64> },
    Upsample { x: Var, plan: ResamplePlan },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, false)
    }

    /// Input that receives a gradient on [`backward`](Self::backward).
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    fn push_leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// 2-D cross-correlation with zero padding. `weight` is
    /// `[out_ch, in_ch, kh, kw]` with odd kernel sides.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let (batch, in_ch, h, w) = self.value(x).dims4(OP)?;
        let (out_ch, wc, kh, kw) = self.value(weight).dims4(OP)?;
        if wc != in_ch {
            return Err(shape_err(OP, format!("input channels {in_ch} != weight input channels {wc}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err(OP, format!("kernel {kh}x{kw} must have odd sides")));
        }
        if stride == 0 {
            return Err(shape_err(OP, "stride must be >= 1".into()));
        }
        if self.shape(bias) != [out_ch] {
            return Err(shape_err(OP, format!("bias shape {:?} != [{out_ch}]", self.shape(bias))));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err(OP, format!("height/width {h}x{w} smaller than kernel {kh}x{kw}")));
        }
        let geom = ConvGeom {
            batch,
            in_ch,
            h,
            w,
            out_ch,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let t = Tensor::new(vec![batch, out_ch, geom.oh, geom.ow], out)?;
        self.push(OP, t, Op::Conv2d { x, w: weight, b: bias, geom }, &[x, weight, bias])
    }

    /// Parametric ReLU with one slope per channel (dimension 1, or a single
    /// channel for rank-1 inputs).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        const OP: &str = "prelu";
        let shape = self.shape(x).to_vec();
        let channels = if shape.len() >= 2 { shape[1] } else { 1 };
        if self.shape(slope) != [channels] {
            return Err(shape_err(
                OP,
                format!("slope shape {:?} != [{channels}] channels", self.shape(slope)),
            ));
        }
        let inner: usize = shape.iter().skip(2).product();
        let xs = self.value(x).data();
        let s = self.value(slope).data();
        let out: Vec<T> = xs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = (i / inner) % channels;
                if v > T::zero() {
                    v
                } else {
                    s[c] * v
                }
            })
            .collect();
        let t = Tensor::new(shape, out)?;
        self.push(OP, t, Op::Prelu { x, slope, channels, inner }, &[x, slope])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = v.data().iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect();
        let t = Tensor::new(v.shape().to_vec(), out)?;
        self.push("relu", t, Op::Relu { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "add";
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(OP, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(p, q)| *p + *q)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push(OP, t, Op::Add { a, b }, &[a, b])
    }

    /// Elementwise clamp into `[lo, hi]`; the gradient passes where the
    /// input lies inside the interval (boundaries included).
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        let v = self.value(x);
        let out = v.data().iter().map(|&a| a.max(lo).min(hi)).collect();
        let t = Tensor::new(v.shape().to_vec(), out)?;
        self.push("clamp", t, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Pixel shuffle: `[b, c*r*r, h, w] -> [b, c, h*r, w*r]` with
    /// `out[b, c, y*r + i, x*r + j] = in[b, c*r*r + i*r + j, y, x]`.
    pub fn depth_to_space(&mut self, x: Var, r: usize) -> Result<Var> {
        const OP: &str = "depth_to_space";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        if r == 0 || c % (r * r) != 0 {
            return Err(shape_err(OP, format!("channels {c} not divisible by r^2 = {}", r * r)));
        }
        let out = shuffle(self.value(x).data(), b, c / (r * r), h, w, r, false);
        let t = Tensor::new(vec![b, c / (r * r), h * r, w * r], out)?;
        self.push(OP, t, Op::DepthToSpace { x, r }, &[x])
    }

    /// Channel-wise concatenation of rank-4 tensors, order preserved.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *xs.first().ok_or_else(|| shape_err(OP, "no inputs".into()))?;
        let (b, _, h, w) = self.value(first).dims4(OP)?;
        let mut total = 0;
        for &v in xs {
            let (vb, vc, vh, vw) = self.value(v).dims4(OP)?;
            if (vb, vh, vw) != (b, h, w) {
                return Err(shape_err(
                    OP,
                    format!("input {:?} does not match batch/height/width of {:?}", self.shape(v), self.shape(first)),
                ));
            }
            total += vc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for &v in xs {
                let c = self.shape(v)[1];
                out.extend_from_slice(&self.value(v).data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        let t = Tensor::new(vec![b, total, h, w], out)?;
        self.push(OP, t, Op::Concat { xs: xs.to_vec() }, xs)
    }

    /// Mean squared error, accumulated in `f64`.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        const OP: &str = "mse_loss";
        if self.shape(pred) != self.shape(target) {
            return Err(shape_err(OP, format!("{:?} vs {:?}", self.shape(pred), self.shape(target))));
        }
        let p = self.value(pred).data();
        let q = self.value(target).data();
        let mut acc = 0f64;
        for (a, b) in p.iter().zip(q) {
            let d = a.as_f64() - b.as_f64();
            acc += d * d;
        }
        let t = Tensor::scalar(T::of_f64(acc / p.len() as f64));
        self.push(OP, t, Op::Mse { pred, target }, &[pred, target])
    }

    /// Mean negative log-softmax of the true class over a `[b, k]` batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let (b, k) = match self.shape(logits) {
            &[b, k] => (b, k),
            s => return Err(shape_err(OP, format!("expected [batch, classes], got {s:?}"))),
        };
        if labels.len() != b {
            return Err(shape_err(OP, format!("{} labels for batch {b}", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let data = self.value(logits).data();
        let mut probs = Vec::with_capacity(b * k);
        let mut loss = 0f64;
        for (row, &y) in data.chunks_exact(k).zip(labels) {
            let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let z: f64 = row.iter().map(|v| libm::exp(v.as_f64() - m)).sum();
            for v in row {
                probs.push(T::of_f64(libm::exp(v.as_f64() - m) / z));
            }
            loss -= row[y].as_f64() - m - libm::log(z);
        }
        let t = Tensor::scalar(T::of_f64(loss / b as f64));
        self.push(
            OP,
            t,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let acc: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        self.push("sum", Tensor::scalar(T::of_f64(acc)), Op::Sum { x }, &[x])
    }

    /// `[b, c, h, w] -> [b, c]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "global_avg_pool";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        let hw = h * w;
        let out = self
            .value(x)
            .data()
            .chunks_exact(hw)
            .map(|p| T::of_f64(p.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
            .collect();
        let t = Tensor::new(vec![b, c], out)?;
        self.push(OP, t, Op::GlobalAvgPool { x }, &[x])
    }

    /// Non-overlapping `k x k` mean pooling; spatial sides must divide by `k`.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        const OP: &str = "avg_pool";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(shape_err(OP, format!("height/width {h}x{w} not divisible by window {k}")));
        }
        let (oh, ow) = (h / k, w / k);
        let src = self.value(x).data();
        let norm = (k * k) as f64;
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in src.chunks_exact(h * w) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0f64;
                    for dy in 0..k {
                        for v in &plane[(oy * k + dy) * w + ox * k..][..k] {
                            acc += v.as_f64();
                        }
                    }
                    out.push(T::of_f64(acc / norm));
                }
            }
        }
        let t = Tensor::new(vec![b, c, oh, ow], out)?;
        self.push(OP, t, Op::AvgPool { x, k }, &[x])
    }

    /// Affine layer: `x [b, in]`, `w [out, in]`, `b [out]` -> `[b, out]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (batch, fin) = match self.shape(x) {
            &[b, f] => (b, f),
            s => return Err(shape_err(OP, format!("expected [batch, features], got {s:?}"))),
        };
        let (fout, win) = match self.shape(weight) {
            &[o, i] => (o, i),
            s => return Err(shape_err(OP, format!("expected [out, in] weight, got {s:?}"))),
        };
        if win != fin {
            return Err(shape_err(OP, format!("input features {fin} != weight input {win}")));
        }
        if self.shape(bias) != [fout] {
            return Err(shape_err(OP, format!("bias shape {:?} != [{fout}]", self.shape(bias))));
        }
        let xs = self.value(x).data();
        let ws = self.value(weight).data();
        let bs = self.value(bias).data();
        let mut out = Vec::with_capacity(batch * fout);
        for row in xs.chunks_exact(fin) {
            for (o, wrow) in ws.chunks_exact(fin).enumerate() {
                out.push(bs[o] + kernels::dot(row, wrow));
            }
        }
        let t = Tensor::new(vec![batch, fout], out)?;
        self.push(OP, t, Op::Dense { x, w: weight, b: bias }, &[x, weight, bias])
    }

    /// Group normalization with per-sample statistics and a per-channel
    /// affine transform. No running statistics are kept.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        const OP: &str = "group_norm";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        if groups == 0 || c % groups != 0 {
            return Err(shape_err(OP, format!("channels {c} not divisible into {groups} groups")));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(OP, format!("affine parameters must have shape [{c}]")));
        }
        let hw = h * w;
        let cg = c / groups;
        let n = (cg * hw) as f64;
        let src = self.value(x).data();
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(src.len());
        let mut out = Vec::with_capacity(src.len());
        let mut rstd = Vec::with_capacity(b * groups);
        for chunk in src.chunks_exact(cg * hw).enumerate() {
            let (gi, vals) = chunk;
            let mean = vals.iter().map(|v| v.as_f64()).sum::<f64>() / n;
            let var = vals
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            let r = 1.0 / libm::sqrt(var + GROUP_NORM_EPS);
            rstd.push(r);
            let c0 = (gi % groups) * cg;
            for (j, v) in vals.iter().enumerate() {
                let ch = c0 + j / hw;
                let xh = T::of_f64((v.as_f64() - mean) * r);
                xhat.push(xh);
                out.push(gm[ch] * xh + bt[ch]);
            }
        }
        let t = Tensor::new(vec![b, c, h, w], out)?;
        self.push(
            OP,
            t,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Fixed (non-learned) bicubic resize of every plane of `[b, c, h, w]`.
    pub fn upsample_bicubic(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        const OP: &str = "upsample_bicubic";
        let (b, c, h, w) = self.value(x).dims4(OP)?;
        let plan = ResamplePlan::new(w, h, out_w, out_h, KernelParams::default())?;
        let mut out = Vec::with_capacity(b * c * out_h * out_w);
        for plane in self.value(x).data().chunks_exact(h * w) {
            out.extend(plan.apply(plane));
        }
        let t = Tensor::new(vec![b, c, out_h, out_w], out)?;
        self.push(OP, t, Op::Upsample { x, plan }, &[x])
    }

    /// Fills `grad` for every node that depends on a `param` leaf with
    /// `d(root)/d(node)`. Previous gradients are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(Tensor::full(rv.shape(), T::one()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &gout)?;
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&mut self, i: usize, gout: &Tensor<T>) -> Result<()> {
        let go = gout.data();
        // Contributions are computed against immutable node values, then
        // accumulated.
        let mut contrib: Vec<(Var, Tensor<T>)> = Vec::new();
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (x, w, b, geom) = (*x, *w, *b, *geom);
                if self.wants(x) {
                    let g = kernels::conv2d_grad_input(&geom, go, self.value(w).data());
                    contrib.push((x, Tensor::new(self.shape(x).to_vec(), g)?));
                }
                if self.wants(w) {
                    let g = kernels::conv2d_grad_weight(&geom, go, self.value(x).data());
                    contrib.push((w, Tensor::new(self.shape(w).to_vec(), g)?));
                }
                if self.wants(b) {
                    contrib.push((b, Tensor::new(vec![geom.out_ch], kernels::conv2d_grad_bias(&geom, go))?));
                }
            }
            Op::Prelu { x, slope, channels, inner } => {
                let (x, slope, channels, inner) = (*x, *slope, *channels, *inner);
                let xs = self.value(x).data();
                let s = self.value(slope).data();
                if self.wants(x) {
                    let g = xs
                        .iter()
                        .zip(go)
                        .enumerate()
                        .map(|(j, (&v, &gv))| if v > T::zero() { gv } else { s[(j / inner) % channels] * gv })
                        .collect();
                    contrib.push((x, Tensor::new(self.shape(x).to_vec(), g)?));
                }
                if self.wants(slope) {
                    let mut acc = vec![0f64; channels];
                    for (j, (&v, &gv)) in xs.iter().zip(go).enumerate() {
                        if v <= T::zero() {
                            acc[(j / inner) % channels] += (v * gv).as_f64();
                        }
                    }
                    contrib.push((slope, Tensor::new(vec![channels], acc.into_iter().map(T::of_f64).collect())?));
                }
            }
            Op::Relu { x } => {
                let x = *x;
                let g = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(go)
                    .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                contrib.push((x, Tensor::new(self.shape(x).to_vec(), g)?));
            }
            Op::Add { a, b } => {
                contrib.push((*a, gout.clone()));
                contrib.push((*b, gout.clone()));
            }
            Op::Clamp { x, lo, hi } => {
                let (x, lo, hi) = (*x, *lo, *hi);
                let g = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(go)
                    .map(|(&v, &gv)| if v >= lo && v <= hi { gv } else { T::zero() })
                    .collect();
                contrib.push((x, Tensor::new(self.shape(x).to_vec(), g)?));
            }
            Op::DepthToSpace { x, r } => {
                let (x, r) = (*x, *r);
                let (b, c, h, w) = self.value(x).dims4("depth_to_space")?;
                let g = shuffle(go, b, c / (r * r), h, w, r, true);
                contrib.push((x, Tensor::new(self.shape(x).to_vec(), g)?));
            }
            Op::Concat { xs } => {
                let shape = gout.shape();
                let (b, total, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut offset = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if self.wants(v) {
                        let mut g = Vec::with_capacity(b * c * hw);
                        for bi in 0..b {
                            g.extend_from_slice(&go[(bi * total + offset) * hw..][..c * hw]);
                        }
                        contrib.push((v, Tensor::new(self.shape(v).to_vec(), g)?));
                    }
                    offset += c;
                }
            }
            Op::Mse { pred, target } => {
                let (pred, target) = (*pred, *target);
                let p = self.value(pred).data();
                let q = self.value(target).data();
                let scale = 2.0 * go[0].as_f64() / p.len() as f64;
                let diff: Vec<f64> = p.iter().zip(q).map(|(a, b)| scale * (a.as_f64() - b.as_f64())).collect();
                if self.wants(pred) {
                    contrib.push((pred, Tensor::new(self.shape(pred).to_vec(), diff.iter().map(|&d| T::of_f64(d)).collect())?));
                }
                if self.wants(target) {
                    contrib.push((target, Tensor::new(self.shape(target).to_vec(), diff.iter().map(|&d| T::of_f64(-d)).collect())?));
                }
            }
            Op::SoftmaxCe { logits, labels, probs } => {
                let k = self.shape(*logits)[1];
                let b = labels.len();
                let scale = go[0].as_f64() / b as f64;
                let mut g: Vec<T> = probs.iter().map(|p| T::of_f64(p.as_f64() * scale)).collect();
                for (r, &y) in labels.iter().enumerate() {
                    let p = probs[r * k + y].as_f64();
                    g[r * k + y] = T::of_f64((p - 1.0) * scale);
                }
                contrib.push((*logits, Tensor::new(self.shape(*logits).to_vec(), g)?));
            }
            Op::Sum { x } => {
                contrib.push((*x, Tensor::full(self.shape(*x), go[0])));
            }
            Op::GlobalAvgPool { x } => {
                let x = *x;
                let (_, _, h, w) = self.value(x).dims4("global_avg_pool")?;
                let hw = h * w;
                let inv = T::of_f64(1.0 / hw as f64);
                let mut g = Vec::with_capacity(go.len() * hw);
                for &gv in go {
                    g.extend(core::iter::repeat(gv * inv).take(hw));
                }
                contrib.push((x, Tensor::new(self.shape(x).to_vec(), g)?));
            }
            Op::AvgPool { x, k } => {
                let (x, k) = (*x, *k);
                let (b, c, h, w) = self.value(x).dims4("avg_pool")?;
                let (oh, ow) = (h / k, w / k);
                let inv = T::of_f64(1.0 / (k * k) as f64);
                let mut g = vec![T::zero(); b * c * h * w];
                for (p, gp) in g.chunks_exact_mut(h * w).enumerate() {
                    let src = &go[p * oh * ow..][..oh * ow];
                    for y in 0..h {
                        for xx in 0..w {
                            gp[y * w + xx] = src[(y / k) * ow + xx / k] * inv;
                        }
                    }
                }
                contrib.push((x, Tensor::new(self.shape(x).to_vec(), g)?));
            }
            Op::Dense { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let xs = self.value(x).data();
                let ws = self.value(w).data();
                let (batch, fin) = (self.shape(x)[0], self.shape(x)[1]);
                let fout = self.shape(w)[0];
                if self.wants(x) {
                    let mut g = vec![T::zero(); batch * fin];
                    for (bi, grow) in g.chunks_exact_mut(fin).enumerate() {
                        for o in 0..fout {
                            axpy_slice(go[bi * fout + o], &ws[o * fin..][..fin], grow);
                        }
                    }
                    contrib.push((x, Tensor::new(vec![batch, fin], g)?));
                }
                if self.wants(w) {
                    let mut g = vec![T::zero(); fout * fin];
                    for (o, grow) in g.chunks_exact_mut(fin).enumerate() {
                        for bi in 0..batch {
                            axpy_slice(go[bi * fout + o], &xs[bi * fin..][..fin], grow);
                        }
                    }
                    contrib.push((w, Tensor::new(vec![fout, fin], g)?));
                }
                if self.wants(b) {
                    let g = (0..fout)
                        .map(|o| T::of_f64((0..batch).map(|bi| go[bi * fout + o].as_f64()).sum()))
                        .collect();
                    contrib.push((b, Tensor::new(vec![fout], g)?));
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, xhat, rstd } => {
                let (x, gamma, beta, groups) = (*x, *gamma, *beta, *groups);
                let (_, c, h, w) = self.value(x).dims4("group_norm")?;
                let hw = h * w;
                let cg = c / groups;
                let n = (cg * hw) as f64;
                let gm = self.value(gamma).data();
                let mut dgamma = vec![0f64; c];
                let mut dbeta = vec![0f64; c];
                let mut dx = Vec::with_capacity(go.len());
                for (gi, (gchunk, xchunk)) in go.chunks_exact(cg * hw).zip(xhat.chunks_exact(cg * hw)).enumerate() {
                    let c0 = (gi % groups) * cg;
                    let mut s1 = 0f64;
                    let mut s2 = 0f64;
                    for (j, (&gv, &xh)) in gchunk.iter().zip(xchunk).enumerate() {
                        let ch = c0 + j / hw;
                        let (gv, xh) = (gv.as_f64(), xh.as_f64());
                        dgamma[ch] += gv * xh;
                        dbeta[ch] += gv;
                        let dxh = gv * gm[ch].as_f64();
                        s1 += dxh;
                        s2 += dxh * xh;
                    }
                    let r = rstd[gi];
                    for (j, (&gv, &xh)) in gchunk.iter().zip(xchunk).enumerate() {
                        let ch = c0 + j / hw;
                        let dxh = gv.as_f64() * gm[ch].as_f64();
                        dx.push(T::of_f64(r / n * (n * dxh - s1 - xh.as_f64() * s2)));
                    }
                }
                if self.wants(x) {
                    contrib.push((x, Tensor::new(self.shape(x).to_vec(), dx)?));
                }
                if self.wants(gamma) {
                    contrib.push((gamma, Tensor::new(vec![c], dgamma.into_iter().map(T::of_f64).collect())?));
                }
                if self.wants(beta) {
                    contrib.push((beta, Tensor::new(vec![c], dbeta.into_iter().map(T::of_f64).collect())?));
                }
            }
            Op::Upsample { x, plan } => {
                let x = *x;
                let (oh, ow) = (plan.vertical.out_len, plan.horizontal.out_len);
                let mut g = Vec::with_capacity(self.value(x).numel());
                for plane in go.chunks_exact(oh * ow) {
                    g.extend(plan.apply_transpose(plane));
                }
                contrib.push((x, Tensor::new(self.shape(x).to_vec(), g)?));
            }
        }
        for (v, g) in contrib {
            self.accumulate(v, g);
        }
        Ok(())
    }
}

#[inline]
fn axpy_slice<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * *b;
    }
}

/// Pixel shuffle (`inverse == false`) or its inverse over `[b, c*r*r, h, w]`.
/// For the inverse, `src` is laid out as `[b, c, h*r, w*r]`.
fn shuffle<T: Element>(src: &[T], b: usize, c: usize, h: usize, w: usize, r: usize, inverse: bool) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    let (oh, ow) = (h * r, w * r);
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let ch = ci * r * r + i * r + j;
                    for y in 0..h {
                        for x in 0..w {
                            let packed = ((bi * c * r * r + ch) * h + y) * w + x;
                            let spread = ((bi * c + ci) * oh + y * r + i) * ow + x * r + j;
                            if inverse {
                                out[packed] = src[spread];
                            } else {
                                out[spread] = src[packed];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse pixel shuffle: `[b, c, h*r, w*r] -> [b, c*r*r, h, w]`.
pub fn space_to_depth<T: Element>(t: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = t.dims4("space_to_depth")?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(shape_err("space_to_depth", format!("{h}x{w} not divisible by {r}")));
    }
    let out = shuffle(t.data(), b, c, h / r, w / r, r, true);
    Tensor::new(vec![b, c * r * r, h / r, w / r], out)
}

#[cfg(test)]
mod tests;
