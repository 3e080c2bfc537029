//! Dense kernels shared by the layers. All matrices are row-major.

/// Matrix operand view: `data` holds a row-major matrix, optionally read as
/// its transpose.
#[derive(Clone, Copy)]
pub struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a · b + beta · out` where `out` is `m × n` row-major.
pub fn gemm(a: Mat<'_>, b: Mat<'_>, out: &mut [f64], beta: f64) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner dimension mismatch");
    assert_eq!(out.len(), m * n, "gemm output size mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: shapes and strides above describe in-bounds views of the
    // borrowed slices, and `out` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu_inplace(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zeroes `grad` where the rectified activation `out` is not positive.
pub fn relu_backward_inplace(out: &[f64], grad: &mut [f64]) {
    for (g, o) in grad.iter_mut().zip(out) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sliding-window geometry for a square kernel over a `channels × height × width` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Source coordinate along an axis of length `len` for every
    /// `(k, out_coord)`, or `usize::MAX` when it falls in the padding.
    fn source_table(&self, out_len: usize, len: usize) -> Vec<usize> {
        let mut table = Vec::with_capacity(self.kernel * out_len);
        for k in 0..self.kernel {
            for o in 0..out_len {
                let v = (o * self.stride + k) as isize - self.padding as isize;
                table.push(if v >= 0 && (v as usize) < len { v as usize } else { usize::MAX });
            }
        }
        table
    }

    /// Unfolds `image` into `cols` of shape `patch_len × positions`.
    pub fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let positions = oh * ow;
        debug_assert_eq!(image.len(), self.channels * self.height * self.width);
        debug_assert_eq!(cols.len(), self.patch_len() * positions);
        let ys = self.source_table(oh, self.height);
        let xs = self.source_table(ow, self.width);
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..][..self.height * self.width];
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    let xk = &xs[kx * ow..(kx + 1) * ow];
                    for (oy, line) in dst.chunks_exact_mut(ow).enumerate() {
                        let y = ys[ky * oh + oy];
                        if y == usize::MAX {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[y * self.width..][..self.width];
                        for (v, &x) in line.iter_mut().zip(xk) {
                            *v = if x == usize::MAX { 0.0 } else { src[x] };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: scatters-and-adds `cols` back into `image`.
    pub fn col2im_add(&self, cols: &[f64], image: &mut [f64]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let positions = oh * ow;
        let ys = self.source_table(oh, self.height);
        let xs = self.source_table(ow, self.width);
        for c in 0..self.channels {
            let plane = &mut image[c * self.height * self.width..][..self.height * self.width];
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let src = &cols[row * positions..(row + 1) * positions];
                    let xk = &xs[kx * ow..(kx + 1) * ow];
                    for (oy, line) in src.chunks_exact(ow).enumerate() {
                        let y = ys[ky * oh + oy];
                        if y == usize::MAX {
                            continue;
                        }
                        let dst = &mut plane[y * self.width..][..self.width];
                        for (v, &x) in line.iter().zip(xk) {
                            if x != usize::MAX {
                                dst[x] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let expect = naive(&a, &b, 2, 3, 4);
        let mut out = vec![0.0; 8];
        gemm(Mat::new(&a, 2, 3), Mat::new(&b, 3, 4), &mut out, 0.0);
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // (b^T)^T via a stored transpose
        let mut bt = vec![0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                bt[c * 3 + r] = b[r * 4 + c];
            }
        }
        let mut out2 = vec![1.0; 8];
        gemm(Mat::new(&a, 2, 3), Mat::new(&bt, 4, 3).t(), &mut out2, 0.0);
        assert_eq!(out, out2);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let w = Window {
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        let image: Vec<f64> = (0..40).map(|v| ((v * 7) % 11) as f64 - 5.0).collect();
        let cols_probe: Vec<f64> = (0..w.patch_len() * w.positions()).map(|v| ((v * 3) % 5) as f64).collect();
        let mut cols = vec![0.0; cols_probe.len()];
        w.im2col(&image, &mut cols);
        let mut back = vec![0.0; image.len()];
        w.col2im_add(&cols_probe, &mut back);
        // <im2col(x), y> == <x, col2im(y)>
        assert!((dot(&cols, &cols_probe) - dot(&image, &back)).abs() < 1e-9);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
