use super::Real;
use crate::error::{ensure, Result};

/// Geometry of one `C_in×H×W → C_out×H'×W'` cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

fn out_dim(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    ensure!(
        padded >= k,
        Shape,
        "kernel {k} larger than padded input {padded}"
    );
    ensure!(
        (padded - k) % stride == 0,
        Shape,
        "output size ({len}+2*{pad}-{k})/{stride}+1 is not an integer"
    );
    Ok((padded - k) / stride + 1)
}

impl ConvGeom {
    pub fn new(x_shape: &[usize], w_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        ensure!(x_shape.len() == 3, Shape, "conv2d input must be C×H×W, got {x_shape:?}");
        ensure!(
            w_shape.len() == 4,
            Shape,
            "conv2d kernel must be C_out×C_in×k×k, got {w_shape:?}"
        );
        let (c_in, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
        let (c_out, kc, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        ensure!(kc == c_in, Shape, "kernel expects {kc} input channels, input has {c_in}");
        ensure!(kh == kw, Shape, "only square kernels are supported, got {kh}×{kw}");
        ensure!(kh >= 1, InvalidArgument, "kernel size must be at least 1");
        ensure!(stride >= 1, InvalidArgument, "stride must be at least 1");
        let h_out = out_dim(h, kh, stride, pad)?;
        let w_out = out_dim(w, kh, stride, pad)?;
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k: kh,
            stride,
            pad,
            h_out,
            w_out,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Input row/column hit by output index `o` and kernel tap `t`, if not padding.
    #[inline]
    fn source(&self, o: usize, t: usize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }

    /// Unfolds the input into a `(C_in·k·k) × (H'·W')` row-major matrix.
    pub fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let cols = self.out_pixels();
        let mut out = vec![T::zero(); self.patch_len() * cols];
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut out[row * cols..(row + 1) * cols];
                    for oi in 0..self.h_out {
                        let Some(si) = self.source(oi, ki, self.h) else {
                            continue;
                        };
                        let src_row = &plane[si * self.w..(si + 1) * self.w];
                        let dst_row = &mut dst[oi * self.w_out..(oi + 1) * self.w_out];
                        if self.stride == 1 {
                            // contiguous run of valid columns
                            let lo = self.pad.saturating_sub(kj);
                            let hi = (self.w + self.pad).saturating_sub(kj).min(self.w_out);
                            if lo < hi {
                                let s0 = lo + kj - self.pad;
                                dst_row[lo..hi].copy_from_slice(&src_row[s0..s0 + (hi - lo)]);
                            }
                        } else {
                            for (oj, d) in dst_row.iter_mut().enumerate() {
                                if let Some(sj) = self.source(oj, kj, self.w) {
                                    *d = src_row[sj];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back onto a `C_in×H×W` buffer.
    pub fn col2im<T: Real>(&self, cols_buf: &[T]) -> Vec<T> {
        let cols = self.out_pixels();
        let mut x = vec![T::zero(); self.c_in * self.h * self.w];
        for c in 0..self.c_in {
            let plane = &mut x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols_buf[row * cols..(row + 1) * cols];
                    for oi in 0..self.h_out {
                        let Some(si) = self.source(oi, ki, self.h) else {
                            continue;
                        };
                        let src_row = &src[oi * self.w_out..(oi + 1) * self.w_out];
                        let dst_row = &mut plane[si * self.w..(si + 1) * self.w];
                        for (oj, &g) in src_row.iter().enumerate() {
                            if let Some(sj) = self.source(oj, kj, self.w) {
                                dst_row[sj] = dst_row[sj] + g;
                            }
                        }
                    }
                }
            }
        }
        x
    }
}
