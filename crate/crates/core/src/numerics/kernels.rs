//! Raw compute kernels behind the graph ops.
//!
//! Convolutions are im2col + GEMM. Activations are NHWC `[B, H, W, C]`;
//! conv kernels are HWIO `[k, k, Cin, Cout]` and transposed-conv kernels HWOI
//! `[k, k, Cout, Cin]`, so an im2col row (kh, kw, c order) lines up with the
//! flattened kernel.
//!
//! Parallel paths only ever write disjoint output slices and keep the
//! per-element accumulation order of the serial loop, so results are bitwise
//! identical whatever the thread schedule.

use rayon::prelude::*;

use super::tensor::Scalar;

/// Below this many multiply-adds the rayon dispatch costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 16;

/// `c = a @ b` with `a: [m,k]`, `b: [k,n]`.
pub fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, crow: &mut [S]| {
        crow.iter_mut().for_each(|v| *v = S::zero());
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| row(i, crow));
    } else {
        c.chunks_mut(n).enumerate().for_each(|(i, crow)| row(i, crow));
    }
}

/// `c = a^T @ b` with `a: [m,k]`, `b: [m,n]`, `c: [k,n]`.
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    // Parallelise over rows of c; each row p reads column p of a.
    let row = |p: usize, crow: &mut [S]| {
        crow.iter_mut().for_each(|v| *v = S::zero());
        for i in 0..m {
            let av = a[i * k + p];
            let brow = &b[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(|(p, crow)| row(p, crow));
    } else {
        c.chunks_mut(n).enumerate().for_each(|(p, crow)| row(p, crow));
    }
}

/// `c = a @ b^T` with `a: [m,k]`, `b: [n,k]`, `c: [m,n]`.
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let row = |i: usize, crow: &mut [S]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            *cv = acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| row(i, crow));
    } else {
        c.chunks_mut(n).enumerate().for_each(|(i, crow)| row(i, crow));
    }
}

/// Geometry of one spatial conv axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        batch: usize,
        in_h: usize,
        in_w: usize,
        in_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        ConvGeom {
            batch,
            in_h,
            in_w,
            in_c,
            kernel,
            stride,
            pad,
            out_h: conv_out_len(in_h, kernel, stride, pad),
            out_w: conv_out_len(in_w, kernel, stride, pad),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// NHWC input -> cols `[batch * out_h * out_w, k*k*in_c]`, zero padding.
pub fn im2col<S: Scalar>(x: &[S], g: &ConvGeom, cols: &mut [S]) {
    let patch = g.patch_len();
    let per_image = g.out_positions() * patch;
    debug_assert_eq!(x.len(), g.batch * g.in_h * g.in_w * g.in_c);
    debug_assert_eq!(cols.len(), g.batch * per_image);

    let fill_image = |b: usize, dst: &mut [S]| {
        let src = &x[b * g.in_h * g.in_w * g.in_c..(b + 1) * g.in_h * g.in_w * g.in_c];
        let mut r = 0usize;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let row = &mut dst[r * patch..(r + 1) * patch];
                let mut off = 0usize;
                for kh in 0..g.kernel {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    for kw in 0..g.kernel {
                        let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                        let dst_run = &mut row[off..off + g.in_c];
                        if ih >= 0 && (ih as usize) < g.in_h && iw >= 0 && (iw as usize) < g.in_w {
                            let s = (ih as usize * g.in_w + iw as usize) * g.in_c;
                            dst_run.copy_from_slice(&src[s..s + g.in_c]);
                        } else {
                            dst_run.iter_mut().for_each(|v| *v = S::zero());
                        }
                        off += g.in_c;
                    }
                }
                r += 1;
            }
        }
    };

    if g.batch > 1 && g.batch * per_image >= PAR_THRESHOLD {
        cols.par_chunks_mut(per_image)
            .enumerate()
            .for_each(|(b, dst)| fill_image(b, dst));
    } else {
        cols.chunks_mut(per_image)
            .enumerate()
            .for_each(|(b, dst)| fill_image(b, dst));
    }
}

/// Adjoint of [`im2col`]: scatter-add cols back onto an NHWC image buffer.
/// `out` must be zeroed by the caller when accumulation is not wanted.
pub fn col2im<S: Scalar>(cols: &[S], g: &ConvGeom, out: &mut [S]) {
    let patch = g.patch_len();
    let per_image = g.out_positions() * patch;
    let image_len = g.in_h * g.in_w * g.in_c;
    debug_assert_eq!(cols.len(), g.batch * per_image);
    debug_assert_eq!(out.len(), g.batch * image_len);

    let scatter_image = |b: usize, dst: &mut [S]| {
        let src = &cols[b * per_image..(b + 1) * per_image];
        let mut r = 0usize;
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let row = &src[r * patch..(r + 1) * patch];
                let mut off = 0usize;
                for kh in 0..g.kernel {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    for kw in 0..g.kernel {
                        let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                        if ih >= 0 && (ih as usize) < g.in_h && iw >= 0 && (iw as usize) < g.in_w {
                            let d = (ih as usize * g.in_w + iw as usize) * g.in_c;
                            let dst_run = &mut dst[d..d + g.in_c];
                            let src_run = &row[off..off + g.in_c];
                            for (dv, &sv) in dst_run.iter_mut().zip(src_run) {
                                *dv = *dv + sv;
                            }
                        }
                        off += g.in_c;
                    }
                }
                r += 1;
            }
        }
    };

    // Images are disjoint, so batch-level parallelism is race-free.
    if g.batch > 1 && g.batch * per_image >= PAR_THRESHOLD {
        out.par_chunks_mut(image_len)
            .enumerate()
            .for_each(|(b, dst)| scatter_image(b, dst));
    } else {
        out.chunks_mut(image_len)
            .enumerate()
            .for_each(|(b, dst)| scatter_image(b, dst));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_identity() {
        // matmul(I, A) = A
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let a = vec![3.0, -1.0, 2.5, 7.0];
        let mut c = vec![0.0; 4];
        matmul_nn(&eye, &a, 2, 2, 2, &mut c);
        assert_eq!(c, a);
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let mut rng = crate::numerics::rng::SeededRng::new(1);
        let (m, k, n) = (7, 5, 9);
        let mut a = vec![0.0f64; m * k];
        let mut b = vec![0.0f64; k * n];
        rng.fill_uniform(&mut a, -1.0, 1.0);
        rng.fill_uniform(&mut b, -1.0, 1.0);
        let want = naive_matmul(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul_nn(&a, &b, m, k, n, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a^T laid out as [k,m] -> transpose to recover a
        let mut at = vec![0.0f64; m * k];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c2 = vec![0.0; m * n];
        matmul_tn(&at, &b, k, m, n, &mut c2);
        for (x, y) in c2.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut bt = vec![0.0f64; k * n];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c3 = vec![0.0; m * n];
        matmul_nt(&a, &bt, m, k, n, &mut c3);
        for (x, y) in c3.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), c> == <x, col2im(c)> for random x, c.
        let g = ConvGeom::new(2, 6, 5, 3, 3, 2, 1);
        let mut rng = crate::numerics::rng::SeededRng::new(2);
        let mut x = vec![0.0f64; g.batch * g.in_h * g.in_w * g.in_c];
        let mut c = vec![0.0f64; g.batch * g.out_positions() * g.patch_len()];
        rng.fill_uniform(&mut x, -1.0, 1.0);
        rng.fill_uniform(&mut c, -1.0, 1.0);

        let mut cols = vec![0.0f64; c.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();

        let mut back = vec![0.0f64; x.len()];
        col2im(&c, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();

        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_geometry() {
        assert_eq!(conv_out_len(32, 5, 2, 2), 16);
        assert_eq!(conv_out_len(16, 5, 2, 2), 8);
        assert_eq!(conv_out_len(4, 3, 1, 1), 4);
    }
}
