//! Dense kernels shared by the dense and convolution ops. All matrices are
//! row-major slices; every routine accumulates into `c`.

use super::tensor::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn matmul_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    T::gemm_acc(m, k, n, a, [k, 1], b, [n, 1], c);
}

/// `c[m×n] += aᵀ · b` where `a` is stored `k×m` and `b` is `k×n`.
pub fn matmul_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    T::gemm_acc(m, k, n, a, [1, m], b, [n, 1], c);
}

/// `c[m×n] += a · bᵀ` where `a` is `m×k` and `b` is stored `n×k`.
pub fn matmul_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    T::gemm_acc(m, k, n, a, [k, 1], b, [1, k], c);
}

/// Sliding-window geometry of a 2-D convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Geometry of a convolution reading `channels×in_h×in_w`, or `None`
    /// when the kernel does not fit.
    pub fn new(channels: usize, in_h: usize, in_w: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || kernel == 0 || in_h + 2 * pad < kernel || in_w + 2 * pad < kernel {
            return None;
        }
        let out_h = (in_h + 2 * pad - kernel) / stride + 1;
        let out_w = (in_w + 2 * pad - kernel) / stride + 1;
        Some(ConvGeom { channels, in_h, in_w, kernel, stride, pad, out_h, out_w })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        if pos >= 0 && (pos as usize) < limit {
            Some(pos as usize)
        } else {
            None
        }
    }
}

/// Unfold one image (`channels×in_h×in_w`) into a `col_rows×col_cols` matrix.
pub fn im2col<T: Scalar>(g: &ConvGeom, img: &[T]) -> Vec<T> {
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    let ncols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.in_h) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kj, g.in_w) {
                            dst[oy * g.out_w + ox] = img[(c * g.in_h + iy) * g.in_w + ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a column matrix back onto an image.
pub fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], img: &mut [T]) {
    let ncols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ki, g.in_h) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kj, g.in_w) {
                            img[(c * g.in_h + iy) * g.in_w + ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}
