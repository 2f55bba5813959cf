//! im2col / col2im kernels shared by the convolution and transposed
//! convolution ops.
//!
//! Every convolution is expressed through a [`ConvGeometry`] that describes
//! the *forward* cross-correlation from a `[c_in, h, w]` image to a
//! `[c_out, ho, wo]` map. A transposed convolution uses the same geometry with
//! the roles of input and output swapped, so it is the exact adjoint by
//! construction.

use crate::real::{gemm, MatMut, MatRef};
use crate::{Real, TensorError};

/// Zero padding applied around the image before correlation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const VALID: Padding = Padding { top: 0, bottom: 0, left: 0, right: 0 };

    pub fn symmetric(ph: usize, pw: usize) -> Self {
        Self { top: ph, bottom: ph, left: pw, right: pw }
    }

    /// TensorFlow-style "same" padding for a strided convolution: output size
    /// is `ceil(len / stride)`, extra padding goes to the bottom/right.
    pub fn same(h: usize, w: usize, kernel: (usize, usize), stride: (usize, usize)) -> Self {
        let (top, bottom) = same_1d(h, kernel.0, stride.0);
        let (left, right) = same_1d(w, kernel.1, stride.1);
        Self { top, bottom, left, right }
    }

    /// Cropping that makes a transposed convolution output exactly
    /// `len * stride` (the adjoint of [`Padding::same`]).
    pub fn same_transpose(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        let split = |k: usize, s: usize| {
            let total = k.saturating_sub(s);
            (total / 2, total - total / 2)
        };
        let (top, bottom) = split(kernel.0, stride.0);
        let (left, right) = split(kernel.1, stride.1);
        Self { top, bottom, left, right }
    }
}

fn same_1d(len: usize, k: usize, s: usize) -> (usize, usize) {
    let out = len.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(len);
    (total / 2, total - total / 2)
}

/// Output length of a strided correlation, or `None` when non-positive.
pub fn conv_out_len(len: usize, pad: usize, k: usize, s: usize) -> Option<usize> {
    let padded = len + pad;
    if padded < k || s == 0 {
        None
    } else {
        Some((padded - k) / s + 1)
    }
}

/// Output length of a transposed correlation, or `None` when the crop eats
/// the whole output.
pub fn conv_transpose_out_len(len: usize, crop: usize, k: usize, s: usize) -> Option<usize> {
    if len == 0 || s == 0 {
        return None;
    }
    let full = (len - 1) * s + k;
    if full <= crop {
        None
    } else {
        Some(full - crop)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub ho: usize,
    pub wo: usize,
}

/// Upper bound on im2col buffer elements per chunk.
const COLS_BUDGET: usize = 1 << 22;

impl ConvGeometry {
    pub fn forward(
        op: &'static str,
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: Padding,
    ) -> Result<Self, TensorError> {
        let ho = conv_out_len(h, pad.top + pad.bottom, kernel.0, stride.0);
        let wo = conv_out_len(w, pad.left + pad.right, kernel.1, stride.1);
        match (ho, wo) {
            (Some(ho), Some(wo)) => Ok(Self {
                c_in,
                h,
                w,
                c_out,
                kh: kernel.0,
                kw: kernel.1,
                sh: stride.0,
                sw: stride.1,
                pad_top: pad.top,
                pad_left: pad.left,
                ho,
                wo,
            }),
            _ => Err(TensorError::NonPositiveOutput { op, input: vec![h, w], kernel, stride }),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    /// Output rows handled per im2col chunk.
    pub fn rows_per_chunk(&self) -> usize {
        let per_row = self.patch_len() * self.wo;
        (COLS_BUDGET / per_row.max(1)).clamp(1, self.ho)
    }

    pub fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.rows_per_chunk();
        let ho = self.ho;
        (0..ho).step_by(step).map(move |r0| (r0, (r0 + step).min(ho)))
    }
}

/// Fills `cols` (`[c_in*kh*kw, (r1-r0)*wo]`) with patches of `img` for output
/// rows `r0..r1`.
pub(crate) fn im2col<T: Real>(img: &[T], g: &ConvGeometry, r0: usize, r1: usize, cols: &mut [T]) {
    let n = (r1 - r0) * g.wo;
    debug_assert!(cols.len() >= g.patch_len() * n);
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * n..(row + 1) * n];
                let mut idx = 0;
                for oy in r0..r1 {
                    let iy = (oy * g.sh + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy as usize >= g.h {
                        dst[idx..idx + g.wo].fill(T::zero());
                        idx += g.wo;
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.sw + kx) as isize - g.pad_left as isize;
                        dst[idx] = if ix < 0 || ix as usize >= g.w { T::zero() } else { src[ix as usize] };
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds `cols` back into `img`.
pub(crate) fn col2im_add<T: Real>(cols: &[T], g: &ConvGeometry, r0: usize, r1: usize, img: &mut [T]) {
    let n = (r1 - r0) * g.wo;
    let mut row = 0;
    for c in 0..g.c_in {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * n..(row + 1) * n];
                let mut idx = 0;
                for oy in r0..r1 {
                    let iy = (oy * g.sh + ky) as isize - g.pad_top as isize;
                    if iy < 0 || iy as usize >= g.h {
                        idx += g.wo;
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.sw + kx) as isize - g.pad_left as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + src[idx];
                        }
                        idx += 1;
                    }
                }
                row += 1;
            }
        }
    }
}

/// `out[c_out, ho, wo] = K[c_out, patch] * im2col(img)` for one batch item.
pub(crate) fn correlate<T: Real>(img: &[T], kernel: &[T], g: &ConvGeometry, out: &mut [T]) {
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); plen * g.rows_per_chunk() * g.wo];
    for (r0, r1) in g.chunks() {
        let n = (r1 - r0) * g.wo;
        im2col(img, g, r0, r1, &mut cols);
        let c = MatMut { data: out, offset: r0 * g.wo, rows: g.c_out, cols: n, rs: g.ho * g.wo, cs: 1 };
        gemm(MatRef::new(kernel, g.c_out, plen), MatRef::new(&cols[..plen * n], plen, n), T::zero(), c);
    }
}

/// Adjoint of [`correlate`] with respect to the image:
/// `img += col2im(K^T * out)`.
pub(crate) fn correlate_adjoint_input<T: Real>(
    out: &[T],
    kernel: &[T],
    g: &ConvGeometry,
    img: &mut [T],
) {
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); plen * g.rows_per_chunk() * g.wo];
    for (r0, r1) in g.chunks() {
        let n = (r1 - r0) * g.wo;
        let o = MatRef { data: out, offset: r0 * g.wo, rows: g.c_out, cols: n, rs: g.ho * g.wo, cs: 1 };
        gemm(MatRef::new(kernel, g.c_out, plen).t(), o, T::zero(), MatMut::new(&mut cols[..plen * n], plen, n));
        col2im_add(&cols[..plen * n], g, r0, r1, img);
    }
}

/// Kernel gradient of [`correlate`]: `dK += out * im2col(img)^T`.
pub(crate) fn correlate_adjoint_kernel<T: Real>(
    img: &[T],
    out: &[T],
    g: &ConvGeometry,
    dkernel: &mut [T],
) {
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); plen * g.rows_per_chunk() * g.wo];
    for (r0, r1) in g.chunks() {
        let n = (r1 - r0) * g.wo;
        im2col(img, g, r0, r1, &mut cols);
        let o = MatRef { data: out, offset: r0 * g.wo, rows: g.c_out, cols: n, rs: g.ho * g.wo, cs: 1 };
        gemm(o, MatRef::new(&cols[..plen * n], plen, n).t(), T::one(), MatMut::new(dkernel, g.c_out, plen));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_formulas() {
        assert_eq!(conv_out_len(70, 0, 5, 2), Some(33));
        assert_eq!(conv_out_len(1000, 0, 9, 2), Some(496));
        assert_eq!(conv_out_len(4, 0, 5, 1), None);
        assert_eq!(conv_transpose_out_len(1, 0, 5, 2), Some(5));
        assert_eq!(conv_transpose_out_len(55, 0, 9, 2), Some(117));
    }

    #[test]
    fn same_padding_keeps_ceil_size() {
        let p = Padding::same(70, 1000, (5, 9), (2, 2));
        assert_eq!(conv_out_len(70, p.top + p.bottom, 5, 2), Some(35));
        assert_eq!(conv_out_len(1000, p.left + p.right, 9, 2), Some(500));
        let t = Padding::same_transpose((5, 9), (2, 2));
        assert_eq!(conv_transpose_out_len(35, t.top + t.bottom, 5, 2), Some(70));
        assert_eq!(conv_transpose_out_len(500, t.left + t.right, 9, 2), Some(1000));
    }

    #[test]
    fn chunked_correlation_matches_naive() {
        let g = ConvGeometry::forward("t", 2, 7, 9, 3, (3, 4), (2, 1), Padding::symmetric(1, 2)).unwrap();
        let img: Vec<f64> = (0..2 * 7 * 9).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let k: Vec<f64> = (0..3 * 2 * 12).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut out = vec![0.0; 3 * g.ho * g.wo];
        correlate(&img, &k, &g, &mut out);
        for co in 0..3 {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut s = 0.0;
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..4 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox + kx) as isize - 2;
                                if iy >= 0 && iy < 7 && ix >= 0 && ix < 9 {
                                    s += img[ci * 63 + iy as usize * 9 + ix as usize]
                                        * k[((co * 2 + ci) * 3 + ky) * 4 + kx];
                                }
                            }
                        }
                    }
                    assert_eq!(out[(co * g.ho + oy) * g.wo + ox], s);
                }
            }
        }
    }
}
