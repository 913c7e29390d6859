//! Keys cubic-convolution resampling.
//!
//! Sampling positions follow the half-pixel convention: output pixel `i`
//! of `n_out` maps to input coordinate `(i + 0.5) * n_in / n_out - 0.5`.
//! Each output sample is a 4-tap combination of its neighbours along each
//! axis (horizontal pass first, then vertical), with clamp-to-edge
//! addressing. Passes accumulate in `f64` and round once per pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frame::{clamp_unit, DepthFrame};
use crate::tensor::Element;

pub use crate::frame::{normalize_depth, privacy_gate, privacy_level, PrivacyThresholds};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub a: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { a: -0.5 }
    }
}

/// Keys piecewise-cubic convolution kernel, support `[-2, 2]`.
pub fn keys_kernel(x: f64, params: KernelParams) -> f64 {
    let a = params.a;
    let x = libm::fabs(x);
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Precomputed 4-tap filter for one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisTaps {
    pub in_len: usize,
    pub out_len: usize,
    pub index: Vec<[usize; 4]>,
    pub weight: Vec<[f64; 4]>,
}

impl AxisTaps {
    pub fn new(in_len: usize, out_len: usize, params: KernelParams) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let last = in_len as isize - 1;
        let mut index = Vec::with_capacity(out_len);
        let mut weight = Vec::with_capacity(out_len);
        for o in 0..out_len {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let base = libm::floor(center);
            let t = center - base;
            let base = base as isize;
            let mut idx = [0usize; 4];
            let mut w = [0f64; 4];
            for k in 0..4 {
                let pos = base - 1 + k as isize;
                idx[k] = pos.clamp(0, last) as usize;
                w[k] = keys_kernel(t + 1.0 - k as f64, params);
            }
            index.push(idx);
            weight.push(w);
        }
        AxisTaps {
            in_len,
            out_len,
            index,
            weight,
        }
    }
}

/// Separable plan for resampling a `w x h` plane to `out_w x out_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    pub horizontal: AxisTaps,
    pub vertical: AxisTaps,
}

impl ResamplePlan {
    pub fn new(w: usize, h: usize, out_w: usize, out_h: usize, params: KernelParams) -> Result<Self> {
        if w == 0 || h == 0 || out_w == 0 || out_h == 0 {
            return Err(Error::ZeroDimension);
        }
        Ok(ResamplePlan {
            horizontal: AxisTaps::new(w, out_w, params),
            vertical: AxisTaps::new(h, out_h, params),
        })
    }

    pub fn in_dims(&self) -> (usize, usize) {
        (self.horizontal.in_len, self.vertical.in_len)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        (self.horizontal.out_len, self.vertical.out_len)
    }

    /// Resamples one plane, horizontal pass then vertical pass.
    pub fn apply<T: Element>(&self, src: &[T]) -> Vec<T> {
        let (w, h) = self.in_dims();
        let (ow, oh) = self.out_dims();
        debug_assert_eq!(src.len(), w * h);
        let mut mid = vec![T::zero(); ow * h];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let out = &mut mid[y * ow..(y + 1) * ow];
            for (o, (idx, wt)) in self
                .horizontal
                .index
                .iter()
                .zip(&self.horizontal.weight)
                .enumerate()
            {
                let mut acc = 0f64;
                for k in 0..4 {
                    acc += wt[k] * row[idx[k]].as_f64();
                }
                out[o] = T::of_f64(acc);
            }
        }
        let mut dst = vec![T::zero(); ow * oh];
        let mut acc = vec![0f64; ow];
        for (o, (idx, wt)) in self
            .vertical
            .index
            .iter()
            .zip(&self.vertical.weight)
            .enumerate()
        {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for k in 0..4 {
                let row = &mid[idx[k] * ow..(idx[k] + 1) * ow];
                let wk = wt[k];
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += wk * v.as_f64();
                }
            }
            for (d, a) in dst[o * ow..(o + 1) * ow].iter_mut().zip(&acc) {
                *d = T::of_f64(*a);
            }
        }
        dst
    }

    /// Adjoint of [`apply`](Self::apply): scatters an output-shaped gradient
    /// back onto the input plane.
    pub fn apply_transpose<T: Element>(&self, grad_out: &[T]) -> Vec<T> {
        let (w, h) = self.in_dims();
        let (ow, oh) = self.out_dims();
        debug_assert_eq!(grad_out.len(), ow * oh);
        let mut mid = vec![0f64; ow * h];
        for o in 0..oh {
            let idx = self.vertical.index[o];
            let wt = self.vertical.weight[o];
            let g = &grad_out[o * ow..(o + 1) * ow];
            for k in 0..4 {
                let row = &mut mid[idx[k] * ow..(idx[k] + 1) * ow];
                for (m, v) in row.iter_mut().zip(g) {
                    *m += wt[k] * v.as_f64();
                }
            }
        }
        let mut dst = vec![0f64; w * h];
        for y in 0..h {
            let g = &mid[y * ow..(y + 1) * ow];
            let row = &mut dst[y * w..(y + 1) * w];
            for (o, gv) in g.iter().enumerate() {
                let idx = self.horizontal.index[o];
                let wt = self.horizontal.weight[o];
                for k in 0..4 {
                    row[idx[k]] += wt[k] * gv;
                }
            }
        }
        dst.into_iter().map(T::of_f64).collect()
    }
}

/// Resamples a normalized plane without clamping. This is the arithmetic
/// shared by [`resample_bicubic`] and the differentiable upsampling op.
pub fn resample_plane<T: Element>(src: &[T], w: usize, h: usize, out_w: usize, out_h: usize) -> Result<Vec<T>> {
    if src.len() != w * h {
        return Err(Error::DimensionMismatch(alloc::format!(
            "plane {w}x{h} needs {} samples, got {}",
            w * h,
            src.len()
        )));
    }
    Ok(ResamplePlan::new(w, h, out_w, out_h, KernelParams::default())?.apply(src))
}

/// Bicubic resampling of a normalized frame. Output is clamped to `[0, 1]`
/// and its privacy tier recomputed from the new dimensions.
pub fn resample_bicubic(frame: &DepthFrame, out_w: usize, out_h: usize) -> Result<DepthFrame> {
    let src = frame.normalized_or_err("resample_bicubic")?;
    let mut out = resample_plane(src, frame.width(), frame.height(), out_w, out_h)?;
    for v in &mut out {
        *v = clamp_unit(*v);
    }
    frame.derive(out_w, out_h, out)
}

/// Downsamples by an integer factor per axis.
pub fn downsample(frame: &DepthFrame, factor: usize) -> Result<DepthFrame> {
    if factor == 0 || frame.width() % factor != 0 || frame.height() % factor != 0 {
        return Err(Error::Config(alloc::format!(
            "{}x{} frame is not divisible by factor {factor}",
            frame.width(),
            frame.height()
        )));
    }
    resample_bicubic(frame, frame.width() / factor, frame.height() / factor)
}
