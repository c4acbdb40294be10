//! Forward and backward kernels over single-sample tensors.
//!
//! Convolutions use "same" zero padding and stride 1 and run as a patch
//! matrix product.

use super::tensor::Tensor3;
use crate::scalar::Scalar;

/// Valid output range along one axis for a tap offset `d`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Unfolds `input` into a `(c·k·k) × (h·w)` patch matrix.
fn im2col<T: Scalar>(input: &Tensor3<T>, k: usize) -> Vec<T> {
    let (ic, h, w) = (input.channels(), input.height(), input.width());
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![T::zero(); ic * k * k * hw];
    for i in 0..ic {
        let plane = input.plane(i);
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (y0, y1) = tap_range(dy, h);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x0, x1) = tap_range(dx, w);
                let row = &mut cols[((i * k + ky) * k + kx) * hw..][..hw];
                for y in y0..y1 {
                    let src = ((y as isize + dy) as usize) * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    row[y * w + x0..y * w + x1].copy_from_slice(&plane[src + sx0..src + sx0 + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back into `din`.
fn col2im_add<T: Scalar>(cols: &[T], k: usize, din: &mut Tensor3<T>) {
    let (ic, h, w) = (din.channels(), din.height(), din.width());
    let hw = h * w;
    let pad = (k / 2) as isize;
    for i in 0..ic {
        let plane = din.plane_mut(i);
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (y0, y1) = tap_range(dy, h);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (x0, x1) = tap_range(dx, w);
                let row = &cols[((i * k + ky) * k + kx) * hw..][..hw];
                for y in y0..y1 {
                    let dst = ((y as isize + dy) as usize) * w + (x0 as isize + dx) as usize;
                    for (d, &g) in plane[dst..dst + (x1 - x0)].iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d<T: Scalar>(
    input: &Tensor3<T>,
    weight: &[T],
    bias: &[T],
    out_c: usize,
    k: usize,
) -> Tensor3<T> {
    let (ic, h, w) = (input.channels(), input.height(), input.width());
    debug_assert_eq!(weight.len(), out_c * ic * k * k);
    let mut out = Tensor3::zeros(out_c, h, w);
    for o in 0..out_c {
        out.plane_mut(o).fill(bias[o]);
    }
    let kk = ic * k * k;
    if k == 1 {
        T::gemm(out_c, kk, h * w, weight, false, input.as_slice(), false, T::one(), out.as_mut_slice());
    } else {
        let cols = im2col(input, k);
        T::gemm(out_c, kk, h * w, weight, false, &cols, false, T::one(), out.as_mut_slice());
    }
    out
}

/// Accumulates weight and bias gradients into `dw`/`db` and, when requested,
/// writes the input gradient.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor3<T>,
    weight: &[T],
    dout: &Tensor3<T>,
    k: usize,
    dw: &mut [T],
    db: &mut [T],
    din: Option<&mut Tensor3<T>>,
) {
    let (ic, h, w) = (input.channels(), input.height(), input.width());
    let out_c = dout.channels();
    let (kk, hw) = (ic * k * k, h * w);
    for o in 0..out_c {
        db[o] += dout.plane(o).iter().copied().sum::<T>();
    }
    let owned;
    let cols: &[T] = if k == 1 {
        input.as_slice()
    } else {
        owned = im2col(input, k);
        &owned
    };
    // dW (out_c × kk) += dout (out_c × hw) · colsᵀ
    T::gemm(out_c, hw, kk, dout.as_slice(), false, cols, true, T::one(), dw);
    if let Some(din) = din {
        if k == 1 {
            T::gemm(kk, out_c, hw, weight, true, dout.as_slice(), false, T::one(), din.as_mut_slice());
        } else {
            let mut dcols = vec![T::zero(); kk * hw];
            T::gemm(kk, out_c, hw, weight, true, dout.as_slice(), false, T::zero(), &mut dcols);
            col2im_add(&dcols, k, din);
        }
    }
}

pub(crate) fn relu_inplace<T: Scalar>(t: &mut Tensor3<T>) {
    for v in t.as_mut_slice() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the post-activation output was clipped.
pub(crate) fn relu_backward_inplace<T: Scalar>(activated: &Tensor3<T>, grad: &mut Tensor3<T>) {
    for (g, &a) in grad.as_mut_slice().iter_mut().zip(activated.as_slice()) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 average pooling; dimensions must be even.
pub(crate) fn avg_pool2<T: Scalar>(input: &Tensor3<T>) -> Tensor3<T> {
    let (c, h, w) = (input.channels(), input.height(), input.width());
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = Tensor3::zeros(c, oh, ow);
    for ch in 0..c {
        let ip = input.plane(ch);
        let op = out.plane_mut(ch);
        for y in 0..oh {
            let r0 = &ip[2 * y * w..2 * y * w + w];
            let r1 = &ip[(2 * y + 1) * w..(2 * y + 1) * w + w];
            for x in 0..ow {
                op[y * ow + x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Scalar>(dout: &Tensor3<T>) -> Tensor3<T> {
    let (c, oh, ow) = (dout.channels(), dout.height(), dout.width());
    let (h, w) = (oh * 2, ow * 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut din = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        let gp = dout.plane(ch);
        let dp = din.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                dp[y * w + x] = gp[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    din
}

/// Nearest-neighbour ×2 upsampling.
pub(crate) fn upsample2<T: Scalar>(input: &Tensor3<T>) -> Tensor3<T> {
    let (c, h, w) = (input.channels(), input.height(), input.width());
    let (oh, ow) = (h * 2, w * 2);
    let mut out = Tensor3::zeros(c, oh, ow);
    for ch in 0..c {
        let ip = input.plane(ch);
        let op = out.plane_mut(ch);
        for y in 0..oh {
            for x in 0..ow {
                op[y * ow + x] = ip[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(dout: &Tensor3<T>) -> Tensor3<T> {
    let (c, oh, ow) = (dout.channels(), dout.height(), dout.width());
    let (h, w) = (oh / 2, ow / 2);
    let mut din = Tensor3::zeros(c, h, w);
    for ch in 0..c {
        let gp = dout.plane(ch);
        let dp = din.plane_mut(ch);
        for y in 0..oh {
            for x in 0..ow {
                dp[(y / 2) * w + x / 2] += gp[y * ow + x];
            }
        }
    }
    din
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &Tensor3<f64>, weight: &[f64], bias: &[f64], out_c: usize, k: usize) -> Vec<f64> {
        let (ic, h, w) = (input.channels(), input.height(), input.width());
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; out_c * h * w];
        for o in 0..out_c {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias[o];
                    for i in 0..ic {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (sy, sx) = (y + ky - pad, x + kx - pad);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * ic + i) * k + ky as usize) * k + kx as usize]
                                    * input.at(i, sy as usize, sx as usize);
                            }
                        }
                    }
                    out[(o * h + y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * scale).collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        for k in [1, 3] {
            let input = Tensor3::from_vec(2, 5, 4, seq(40, 0.1)).unwrap();
            let weight = seq(3 * 2 * k * k, 0.05);
            let bias = vec![0.1, -0.2, 0.3];
            let fast = conv2d(&input, &weight, &bias, 3, k);
            let slow = naive_conv(&input, &weight, &bias, 3, k);
            for (a, b) in fast.as_slice().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pool_and_upsample_adjoint() {
        // <pool(x), g> == <x, pool_backward(g)> and likewise for upsampling
        let x = Tensor3::from_vec(1, 4, 4, seq(16, 0.3)).unwrap();
        let g = Tensor3::from_vec(1, 2, 2, seq(4, 0.7)).unwrap();
        let lhs: f64 = avg_pool2(&x).as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.as_slice().iter().zip(avg_pool2_backward(&g).as_slice()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let gu = Tensor3::from_vec(1, 8, 8, seq(64, 0.2)).unwrap();
        let lhs: f64 = upsample2(&x).as_slice().iter().zip(gu.as_slice()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.as_slice().iter().zip(upsample2_backward(&gu).as_slice()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
