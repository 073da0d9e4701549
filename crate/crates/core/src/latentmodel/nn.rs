//! Batched layer kernels on NHWC row-major buffers with hand-written backward passes.

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};

/// `C (m×n) = op(A) · op(B)` on row-major slices, replacing or accumulating into `C`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize, trans_a: bool, trans_b: bool, accumulate: bool) {
    let a = if trans_a { MatRef::from_row_major_slice(a, k, m).transpose() } else { MatRef::from_row_major_slice(a, m, k) };
    let b = if trans_b { MatRef::from_row_major_slice(b, n, k).transpose() } else { MatRef::from_row_major_slice(b, k, n) };
    let c = MatMut::from_row_major_slice_mut(c, m, n);
    let beta = if accumulate { Accum::Add } else { Accum::Replace };
    matmul(c, beta, a, b, 1.0, Par::Seq);
}

/// Spatial shape of an NHWC activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }
}

/// Output extent of a 3×3 convolution with padding one.
pub fn conv_out(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

/// 3×3 convolution, zero padding one, weights `[9·cin, cout]` in `(ky, kx, c)` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub input: Shape,
    pub cout: usize,
    pub stride: usize,
}

impl Conv {
    pub fn output(&self) -> Shape {
        Shape { h: conv_out(self.input.h, self.stride), w: conv_out(self.input.w, self.stride), c: self.cout }
    }

    pub fn weight_len(&self) -> usize {
        9 * self.input.c * self.cout
    }

    fn im2col(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let (i, o) = (self.input, self.output());
        let kc = 9 * i.c;
        let mut col = vec![0.0; batch * o.h * o.w * kc];
        for b in 0..batch {
            let xb = &x[b * i.len()..(b + 1) * i.len()];
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let row = &mut col[((b * o.h + oy) * o.w + ox) * kc..][..kc];
                    for ky in 0..3 {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= i.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= i.w as isize {
                                continue;
                            }
                            let src = (iy as usize * i.w + ix as usize) * i.c;
                            row[(ky * 3 + kx) * i.c..][..i.c].copy_from_slice(&xb[src..src + i.c]);
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64], batch: usize) -> Vec<f64> {
        let (i, o) = (self.input, self.output());
        let kc = 9 * i.c;
        let mut dx = vec![0.0; batch * i.len()];
        for b in 0..batch {
            let xb = &mut dx[b * i.len()..(b + 1) * i.len()];
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let row = &col[((b * o.h + oy) * o.w + ox) * kc..][..kc];
                    for ky in 0..3 {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= i.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= i.w as isize {
                                continue;
                            }
                            let dst = (iy as usize * i.w + ix as usize) * i.c;
                            for (d, s) in xb[dst..dst + i.c].iter_mut().zip(&row[(ky * 3 + kx) * i.c..][..i.c]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output and the im2col buffer needed by `backward`.
    pub fn forward(&self, x: &[f64], w: &[f64], bias: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let o = self.output();
        let rows = batch * o.h * o.w;
        let col = self.im2col(x, batch);
        let mut y = vec![0.0; rows * o.c];
        for r in 0..rows {
            y[r * o.c..(r + 1) * o.c].copy_from_slice(bias);
        }
        gemm(&mut y, &col, w, rows, 9 * self.input.c, o.c, false, false, true);
        (y, col)
    }

    /// Accumulates weight and bias gradients; returns the input gradient when asked.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        col: &[f64],
        dy: &[f64],
        w: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        batch: usize,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let o = self.output();
        let rows = batch * o.h * o.w;
        let kc = 9 * self.input.c;
        gemm(dw, col, dy, kc, rows, o.c, true, false, true);
        for r in 0..rows {
            for (g, d) in db.iter_mut().zip(&dy[r * o.c..(r + 1) * o.c]) {
                *g += d;
            }
        }
        if !need_dx {
            return None;
        }
        let mut dcol = vec![0.0; rows * kc];
        gemm(&mut dcol, dy, w, rows, o.c, kc, false, true, false);
        Some(self.col2im(&dcol, batch))
    }
}

/// Fully connected layer, weights `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn forward(&self, x: &[f64], w: &[f64], bias: &[f64], batch: usize) -> Vec<f64> {
        let mut y = vec![0.0; batch * self.output];
        for b in 0..batch {
            y[b * self.output..(b + 1) * self.output].copy_from_slice(bias);
        }
        gemm(&mut y, x, w, batch, self.input, self.output, false, false, true);
        y
    }

    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f64],
        dy: &[f64],
        w: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
        batch: usize,
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        gemm(dw, x, dy, self.input, batch, self.output, true, false, true);
        for b in 0..batch {
            for (g, d) in db.iter_mut().zip(&dy[b * self.output..(b + 1) * self.output]) {
                *g += d;
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = vec![0.0; batch * self.input];
        gemm(&mut dx, dy, w, batch, self.output, self.input, false, true, false);
        Some(dx)
    }
}

/// Nearest-neighbour resize from `from` to `(to_h, to_w)` spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resize {
    pub from: Shape,
    pub to_h: usize,
    pub to_w: usize,
}

impl Resize {
    pub fn output(&self) -> Shape {
        Shape { h: self.to_h, w: self.to_w, c: self.from.c }
    }

    fn source(&self, oy: usize, ox: usize) -> usize {
        let sy = oy * self.from.h / self.to_h;
        let sx = ox * self.from.w / self.to_w;
        (sy * self.from.w + sx) * self.from.c
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let (i, o) = (self.from, self.output());
        let mut y = vec![0.0; batch * o.len()];
        for b in 0..batch {
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let s = b * i.len() + self.source(oy, ox);
                    let d = b * o.len() + (oy * o.w + ox) * o.c;
                    y[d..d + o.c].copy_from_slice(&x[s..s + i.c]);
                }
            }
        }
        y
    }

    pub fn backward(&self, dy: &[f64], batch: usize) -> Vec<f64> {
        let (i, o) = (self.from, self.output());
        let mut dx = vec![0.0; batch * i.len()];
        for b in 0..batch {
            for oy in 0..o.h {
                for ox in 0..o.w {
                    let s = b * i.len() + self.source(oy, ox);
                    let d = b * o.len() + (oy * o.w + ox) * o.c;
                    for c in 0..o.c {
                        dx[s + c] += dy[d + c];
                    }
                }
            }
        }
        dx
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `dy` by the positive part of the activation output.
pub fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (d, v) in dy.iter_mut().zip(y) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn tanh_inplace(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_backward(y: &[f64], dy: &mut [f64]) {
    for (d, v) in dy.iter_mut().zip(y) {
        *d *= 1.0 - v * v;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli cross-entropy of target `t ∈ [0,1]` given a logit, stable for large |a|.
pub fn bce_with_logit(a: f64, t: f64) -> f64 {
    a.max(0.0) - a * t + (-a.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(c: &Conv, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
        let (i, o) = (c.input, c.output());
        let mut y = vec![0.0; o.len()];
        for oy in 0..o.h {
            for ox in 0..o.w {
                for co in 0..o.c {
                    let mut s = bias[co];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * c.stride + ky) as isize - 1;
                            let ix = (ox * c.stride + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= i.h as isize || ix >= i.w as isize {
                                continue;
                            }
                            for ci in 0..i.c {
                                s += x[(iy as usize * i.w + ix as usize) * i.c + ci] * w[((ky * 3 + kx) * i.c + ci) * o.c + co];
                            }
                        }
                    }
                    y[(oy * o.w + ox) * o.c + co] = s;
                }
            }
        }
        y
    }

    #[test]
    fn gemm_transposes() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3×2
        let mut c = [0.0; 4];
        gemm(&mut c, &a, &b, 2, 3, 2, false, false, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        let mut d = [0.0; 9];
        gemm(&mut d, &a, &a, 3, 2, 3, true, false, false);
        assert_eq!(d[0], 17.0);
        let mut e = [0.0; 4];
        gemm(&mut e, &a, &a, 2, 3, 2, false, true, false);
        assert_eq!(e, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (h, w, cin, cout, stride) in [(7, 5, 2, 3, 2), (6, 6, 1, 2, 1), (13, 13, 3, 4, 2)] {
            let c = Conv { input: Shape { h, w, c: cin }, cout, stride };
            let x: Vec<f64> = (0..c.input.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wt: Vec<f64> = (0..c.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bias: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (y, _) = c.forward(&x, &wt, &bias, 1);
            let want = naive_conv(&c, &x, &wt, &bias);
            for (a, b) in y.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_input_gradient_is_adjoint() {
        // <conv(x) - b, dy> = <x, convᵀ dy> for the linear part
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Conv { input: Shape { h: 9, w: 8, c: 2 }, cout: 3, stride: 2 };
        let x: Vec<f64> = (0..c.input.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wt: Vec<f64> = (0..c.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..c.output().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, col) = c.forward(&x, &wt, &[0.0; 3], 1);
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; 3];
        let dx = c.backward(&col, &dy, &wt, &mut dw, &mut db, 1, true).unwrap();
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        let rhs_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-10);
    }

    #[test]
    fn resize_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = Resize { from: Shape { h: 13, w: 13, c: 2 }, to_h: 25, to_w: 25 };
        let x: Vec<f64> = (0..r.from.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..r.output().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = r.forward(&x, 1);
        let dx = r.backward(&dy, 1);
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_is_stable() {
        assert!((bce_with_logit(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!(bce_with_logit(800.0, 1.0).abs() < 1e-300 + 1e-12);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }
}
