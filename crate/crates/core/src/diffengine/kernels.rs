//! Forward kernels for the linear operators: matrix product and the three
//! faces of 2-D convolution (forward, transposed, kernel-gradient).
//!
//! Convolutions are lowered to GEMM through an im2col buffer, one batch item
//! at a time, so every output element is produced by the same sequence of
//! floating-point operations regardless of batch size.

use super::tensor::{Element, Tensor};
use super::TensorError;

/// Stride and symmetric zero padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }

    /// Output extent of a convolution over `input` with a `kernel`-wide window.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if self.stride == 0 || kernel == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }

    /// Spatial extent produced by the transposed convolution (no output padding).
    pub fn transposed_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let full = (input.checked_sub(1)?) * self.stride + kernel;
        full.checked_sub(2 * self.pad).filter(|&v| v > 0)
    }
}

fn dims4<T: Element>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 4], TensorError> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        other => Err(TensorError::Rank {
            op,
            expected: 4,
            shape: other.to_vec(),
        }),
    }
}

struct Window {
    c: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeom,
}

impl Window {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ow` whose input column `ow * stride + kj - pad` lies
    /// inside the image.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let s = self.geom.stride;
        let off = kj as isize - self.geom.pad as isize;
        // smallest ow with ow*s + off >= 0
        let lo = if off >= 0 {
            0
        } else {
            ((-off) as usize).div_ceil(s)
        };
        // smallest ow with ow*s + off >= w
        let hi = ((self.w as isize - off).max(0) as usize).div_ceil(s);
        (lo.min(self.ow), hi.min(self.ow).max(lo.min(self.ow)))
    }

    /// Unfold one image `[C,H,W]` into `col[(c,ki,kj), (oh,ow)]`.
    fn im2col<T: Element>(&self, img: &[T], col: &mut [T]) {
        let s = self.geom.stride;
        let p = self.geom.pad as isize;
        let cols = self.cols();
        let mut row = 0;
        for c in 0..self.c {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let (lo, hi) = self.valid_cols(kj);
                    let first = (lo * s + kj) as isize - p;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oh in 0..self.oh {
                        let ih = (oh * s + ki) as isize - p;
                        let line = &mut dst[oh * self.ow..(oh + 1) * self.ow];
                        if ih < 0 || ih >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if hi > lo {
                            let start = ih as usize * self.w + first as usize;
                            if s == 1 {
                                line[lo..hi].copy_from_slice(&plane[start..start + hi - lo]);
                            } else {
                                let src = &plane[start..];
                                for (v, &x) in line[lo..hi].iter_mut().zip(src.iter().step_by(s)) {
                                    *v = x;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Fold `col` back into an image, accumulating overlapping windows.
    fn col2im<T: Element>(&self, col: &[T], img: &mut [T]) {
        img.fill(T::zero());
        let s = self.geom.stride;
        let p = self.geom.pad as isize;
        let cols = self.cols();
        let mut row = 0;
        for c in 0..self.c {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let (lo, hi) = self.valid_cols(kj);
                    if hi <= lo {
                        row += 1;
                        continue;
                    }
                    let first = (lo * s + kj) as isize - p;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oh in 0..self.oh {
                        let ih = (oh * s + ki) as isize - p;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let start = ih as usize * self.w + first as usize;
                        let line = &src[oh * self.ow + lo..oh * self.ow + hi];
                        if s == 1 {
                            for (d, &v) in plane[start..start + hi - lo].iter_mut().zip(line) {
                                *d = *d + v;
                            }
                        } else {
                            for (d, &v) in plane[start..].iter_mut().step_by(s).zip(line) {
                                *d = *d + v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Cross-correlation `y[n,o] = sum_c k[o,c] * x[n,c]`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    geom: ConvGeom,
) -> Result<Tensor<T>, TensorError> {
    let [n, c, h, w] = dims4(x, "conv2d input")?;
    let [o, kc, kh, kw] = dims4(k, "conv2d kernel")?;
    if kc != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let (oh, ow) = match (geom.out_extent(h, kh), geom.out_extent(w, kw)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d (empty output)",
                lhs: x.shape().to_vec(),
                rhs: k.shape().to_vec(),
            })
        }
    };
    let win = Window {
        c,
        kh,
        kw,
        h,
        w,
        oh,
        ow,
        geom,
    };
    let (rows, cols) = (win.rows(), win.cols());
    let mut col = vec![T::zero(); rows * cols];
    let mut out = vec![T::zero(); n * o * cols];
    let kd = k.data();
    for b in 0..n {
        win.im2col(&x.data()[b * c * h * w..(b + 1) * c * h * w], &mut col);
        let dst = &mut out[b * o * cols..(b + 1) * o * cols];
        // SAFETY: kd is o x rows, col is rows x cols, dst is o x cols, all contiguous.
        unsafe {
            T::gemm(
                o,
                rows,
                cols,
                T::one(),
                kd.as_ptr(),
                rows as isize,
                1,
                col.as_ptr(),
                cols as isize,
                1,
                T::zero(),
                dst.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
    }
    Tensor::new(vec![n, o, oh, ow], out)
}

/// Adjoint of [`conv2d`] with respect to its input: maps `[N,O,oh,ow]` back
/// to `[N,C,h,w]` using kernel `[O,C,kh,kw]`.
pub fn conv2d_transpose<T: Element>(
    y: &Tensor<T>,
    k: &Tensor<T>,
    geom: ConvGeom,
    out_hw: (usize, usize),
) -> Result<Tensor<T>, TensorError> {
    let [n, o, oh, ow] = dims4(y, "conv_transpose input")?;
    let [ko, c, kh, kw] = dims4(k, "conv_transpose kernel")?;
    let (h, w) = out_hw;
    if ko != o || geom.out_extent(h, kh) != Some(oh) || geom.out_extent(w, kw) != Some(ow) {
        return Err(TensorError::ShapeMismatch {
            op: "conv_transpose",
            lhs: y.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let win = Window {
        c,
        kh,
        kw,
        h,
        w,
        oh,
        ow,
        geom,
    };
    let (rows, cols) = (win.rows(), win.cols());
    let mut col = vec![T::zero(); rows * cols];
    let mut out = vec![T::zero(); n * c * h * w];
    let kd = k.data();
    for b in 0..n {
        let src = &y.data()[b * o * cols..(b + 1) * o * cols];
        // SAFETY: k^T is rows x o (strides 1, rows), src is o x cols, col is rows x cols.
        unsafe {
            T::gemm(
                rows,
                o,
                cols,
                T::one(),
                kd.as_ptr(),
                1,
                rows as isize,
                src.as_ptr(),
                cols as isize,
                1,
                T::zero(),
                col.as_mut_ptr(),
                cols as isize,
                1,
            );
        }
        win.col2im(&col, &mut out[b * c * h * w..(b + 1) * c * h * w]);
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Gradient of `<conv2d(x, k), gy>` with respect to `k`.
pub fn conv2d_kernel_grad<T: Element>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    geom: ConvGeom,
    kernel_hw: (usize, usize),
) -> Result<Tensor<T>, TensorError> {
    let [n, c, h, w] = dims4(x, "conv_kernel_grad input")?;
    let [gn, o, oh, ow] = dims4(gy, "conv_kernel_grad output-grad")?;
    let (kh, kw) = kernel_hw;
    if gn != n || geom.out_extent(h, kh) != Some(oh) || geom.out_extent(w, kw) != Some(ow) {
        return Err(TensorError::ShapeMismatch {
            op: "conv_kernel_grad",
            lhs: x.shape().to_vec(),
            rhs: gy.shape().to_vec(),
        });
    }
    let win = Window {
        c,
        kh,
        kw,
        h,
        w,
        oh,
        ow,
        geom,
    };
    let (rows, cols) = (win.rows(), win.cols());
    let mut col = vec![T::zero(); rows * cols];
    let mut out = vec![T::zero(); o * rows];
    for b in 0..n {
        win.im2col(&x.data()[b * c * h * w..(b + 1) * c * h * w], &mut col);
        let g = &gy.data()[b * o * cols..(b + 1) * o * cols];
        // SAFETY: g is o x cols, col^T is cols x rows, out is o x rows.
        unsafe {
            T::gemm(
                o,
                cols,
                rows,
                T::one(),
                g.as_ptr(),
                cols as isize,
                1,
                col.as_ptr(),
                1,
                cols as isize,
                T::one(),
                out.as_mut_ptr(),
                rows as isize,
                1,
            );
        }
    }
    Tensor::new(vec![o, c, kh, kw], out)
}

/// `op(a) * op(b)` for rank-2 tensors, where `op` optionally transposes.
pub fn matmul<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    trans_a: bool,
    trans_b: bool,
) -> Result<Tensor<T>, TensorError> {
    let (ar, ac) = match a.shape() {
        &[r, c] => (r, c),
        other => {
            return Err(TensorError::Rank {
                op: "matmul lhs",
                expected: 2,
                shape: other.to_vec(),
            })
        }
    };
    let (br, bc) = match b.shape() {
        &[r, c] => (r, c),
        other => {
            return Err(TensorError::Rank {
                op: "matmul rhs",
                expected: 2,
                shape: other.to_vec(),
            })
        }
    };
    let (m, k, rsa, csa) = if trans_a {
        (ac, ar, 1, ac as isize)
    } else {
        (ar, ac, ac as isize, 1)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (bc, br, 1, bc as isize)
    } else {
        (br, bc, bc as isize, 1)
    };
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    if m > 0 && n > 0 {
        // SAFETY: strides derived from the checked shapes above.
        unsafe {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                a.data().as_ptr(),
                rsa,
                csa,
                b.data().as_ptr(),
                rsb,
                csb,
                T::zero(),
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::new(vec![m, n], out)
}
