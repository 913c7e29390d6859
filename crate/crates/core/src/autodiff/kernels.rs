//! Convolution kernels: per-sample im2col followed by a matrix product.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// `[lo, hi)` range of output positions along an axis of length `out`
    /// whose input index `o * stride + k - pad` lands inside `[0, len)`.
    #[inline]
    fn valid(&self, k: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = k as isize - self.pad as isize;
        // o * s + shift >= 0
        let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
        // o * s + shift <= len - 1
        let hi_incl = (len as isize - 1 - shift).div_euclid(s);
        let hi = (hi_incl + 1).clamp(0, out as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }
}

/// Eight-lane dot product; the lane split is fixed so results are
/// reproducible.
#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
        + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
        + tail
}

/// Row-major `C[m, n] = op(A)[m, k] * op(B)[k, n] + beta * C`. A transposed
/// operand is stored as `[k, m]` (resp. `[n, k]`).
#[allow(clippy::too_many_arguments)]
fn gemm<T: Element>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, beta: T, c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every strided access, and `c` is a
    // distinct mutable borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }
}

/// Unfolds one sample `[in_ch, h, w]` into `[in_ch * kh * kw, oh * ow]`.
fn im2col<T: Element>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let ohw = g.oh * g.ow;
    col.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..g.in_ch {
        let xin = &x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid(kx, g.w, g.ow);
                let row = &mut col[((ci * g.kh + ky) * g.kw + kx) * ohw..][..ohw];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let irow = &xin[iy * g.w..][..g.w];
                    let orow = &mut row[oy * g.ow..][..g.ow];
                    if g.stride == 1 {
                        let off = ox0 + kx - g.pad;
                        orow[ox0..ox1].copy_from_slice(&irow[off..off + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            orow[ox] = irow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto `[in_ch, h, w]`.
fn col2im<T: Element>(g: &ConvGeom, col: &[T], x: &mut [T]) {
    let ohw = g.oh * g.ow;
    for ci in 0..g.in_ch {
        let xin = &mut x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid(kx, g.w, g.ow);
                let row = &col[((ci * g.kh + ky) * g.kw + kx) * ohw..][..ohw];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let irow = &mut xin[iy * g.w..][..g.w];
                    let grow = &row[oy * g.ow..][..g.ow];
                    if g.stride == 1 {
                        let off = ox0 + kx - g.pad;
                        for (d, s) in irow[off..off + (ox1 - ox0)].iter_mut().zip(&grow[ox0..ox1]) {
                            *d += *s;
                        }
                    } else {
                        for ox in ox0..ox1 {
                            irow[ox * g.stride + kx - g.pad] += grow[ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Element>(g: &ConvGeom, x: &[T], w: &[T], bias: &[T]) -> Vec<T> {
    let (ihw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.patch_len());
    let mut out = vec![T::zero(); g.batch * g.out_ch * ohw];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * ohw] };
    for b in 0..g.batch {
        let xin = &x[b * g.in_ch * ihw..][..g.in_ch * ihw];
        let ob = &mut out[b * g.out_ch * ohw..][..g.out_ch * ohw];
        for (plane, &bv) in ob.chunks_exact_mut(ohw).zip(bias) {
            plane.iter_mut().for_each(|v| *v = bv);
        }
        let cols = if g.is_pointwise() {
            xin
        } else {
            im2col(g, xin, &mut col);
            &col
        };
        gemm(g.out_ch, kk, ohw, w, false, cols, false, T::one(), ob);
    }
    out
}

pub fn conv2d_grad_input<T: Element>(g: &ConvGeom, gout: &[T], w: &[T]) -> Vec<T> {
    let (ihw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.patch_len());
    let mut gin = vec![T::zero(); g.batch * g.in_ch * ihw];
    let mut col = vec![T::zero(); kk * ohw];
    for b in 0..g.batch {
        let go = &gout[b * g.out_ch * ohw..][..g.out_ch * ohw];
        let gi = &mut gin[b * g.in_ch * ihw..][..g.in_ch * ihw];
        if g.is_pointwise() {
            gemm(kk, g.out_ch, ohw, w, true, go, false, T::zero(), gi);
        } else {
            gemm(kk, g.out_ch, ohw, w, true, go, false, T::zero(), &mut col);
            col2im(g, &col, gi);
        }
    }
    gin
}

pub fn conv2d_grad_weight<T: Element>(g: &ConvGeom, gout: &[T], x: &[T]) -> Vec<T> {
    let (ihw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.patch_len());
    let mut gw = vec![T::zero(); g.out_ch * kk];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * ohw] };
    for b in 0..g.batch {
        let xin = &x[b * g.in_ch * ihw..][..g.in_ch * ihw];
        let go = &gout[b * g.out_ch * ohw..][..g.out_ch * ohw];
        let cols = if g.is_pointwise() {
            xin
        } else {
            im2col(g, xin, &mut col);
            &col
        };
        gemm(g.out_ch, ohw, kk, go, false, cols, true, T::one(), &mut gw);
    }
    gw
}

pub fn conv2d_grad_bias<T: Element>(g: &ConvGeom, gout: &[T]) -> Vec<T> {
    let ohw = g.oh * g.ow;
    (0..g.out_ch)
        .map(|co| {
            let mut acc = 0f64;
            for b in 0..g.batch {
                for v in &gout[(b * g.out_ch + co) * ohw..][..ohw] {
                    acc += v.as_f64();
                }
            }
            T::of_f64(acc)
        })
        .collect()
}
