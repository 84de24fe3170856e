//! Network operators and their reverse-mode counterparts.
//!
//! Convolutions go through im2col and a GEMM; every operator loops over the
//! batch one sample at a time, so a sample's result never depends on what
//! else is in the batch.

use super::tensor::{gemm, Mat, Scalar, Tensor};
use crate::error::{Error, Result};

fn im2col3x3<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::ZERO;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::ZERO;
                        }
                    }
                }
            }
        }
    }
}

fn col2im3x3<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += *s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += *s),
                    }
                }
            }
        }
    }
}

fn check_kernel<T: Scalar>(
    what: &str,
    kernel: &Tensor<T>,
    expect: [usize; 4],
    bias: &[T],
    bias_len: usize,
) -> Result<()> {
    if kernel.shape() != expect || bias.len() != bias_len {
        return Err(Error::Dimension(format!(
            "{what}: kernel {:?} / bias {} incompatible with expected {expect:?} / {bias_len}",
            kernel.shape(),
            bias.len()
        )));
    }
    Ok(())
}

/// Same-padded 3x3 convolution followed by ReLU. Kernel shape is
/// `(out_c, in_c, 3, 3)`.
pub fn conv3x3_relu<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    let out_c = kernel.shape()[0];
    check_kernel("conv3x3", kernel, [out_c, c, 3, 3], bias, out_c)?;
    let hw = h * w;
    let k = c * 9;
    let mut cols = vec![T::ZERO; k * hw];
    let mut y = Tensor::zeros([n, out_c, h, w]);
    for s in 0..n {
        im2col3x3(x.sample(s), c, h, w, &mut cols);
        let out = y.sample_mut(s);
        gemm(
            Mat::new(kernel.data(), out_c, k),
            Mat::new(&cols, k, hw),
            T::ZERO,
            out,
        );
        for (o, row) in out.chunks_exact_mut(hw).enumerate() {
            let b = bias[o];
            for v in row {
                let z = *v + b;
                *v = if z > T::ZERO { z } else { T::ZERO };
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv3x3_relu`] given its input `x`, output `y` and the
/// upstream gradient `dy`. Returns `(dx, dkernel, dbias)`.
pub fn conv3x3_relu_backward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = x.shape();
    let out_c = kernel.shape()[0];
    let hw = h * w;
    let k = c * 9;
    let mut cols = vec![T::ZERO; k * hw];
    let mut dcols = vec![T::ZERO; k * hw];
    let mut dpre = vec![T::ZERO; out_c * hw];
    let mut dk = vec![T::ZERO; out_c * k];
    let mut db = vec![T::ZERO; out_c];
    let mut dx = Tensor::zeros(x.shape());
    for s in 0..n {
        for ((d, &g), &out) in dpre.iter_mut().zip(dy.sample(s)).zip(y.sample(s)) {
            *d = if out > T::ZERO { g } else { T::ZERO };
        }
        for (o, row) in dpre.chunks_exact(hw).enumerate() {
            let mut acc = T::ZERO;
            for &v in row {
                acc += v;
            }
            db[o] += acc;
        }
        im2col3x3(x.sample(s), c, h, w, &mut cols);
        gemm(
            Mat::new(&dpre, out_c, hw),
            Mat::new(&cols, k, hw).t(),
            T::ONE,
            &mut dk,
        );
        gemm(
            Mat::new(kernel.data(), out_c, k).t(),
            Mat::new(&dpre, out_c, hw),
            T::ZERO,
            &mut dcols,
        );
        col2im3x3(&dcols, c, h, w, dx.sample_mut(s));
    }
    (dx, dk, db)
}

/// 2x2 max pooling with stride 2. Also returns, for every output value, the
/// flat index of the winning input element; ties keep the first element in
/// row-major window order.
pub fn maxpool2x2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "max pooling needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    let src = x.data();
    let dst = out.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i0 = base + 2 * y * w + 2 * xx;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                dst[o] = src[best];
                idx.push(best);
                o += 1;
            }
        }
    }
    Ok((out, idx))
}

pub fn maxpool2x2_backward<T: Scalar>(dy: &Tensor<T>, indices: &[usize], input_shape: [usize; 4]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in indices.iter().zip(dy.data()) {
        d[i] += g;
    }
    dx
}

/// Transposed 2x2 convolution with stride 2 (spatial dims double). Kernel
/// shape is `(in_c, out_c, 2, 2)`.
pub fn upconv2x2<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    let out_c = kernel.shape()[1];
    check_kernel("upconv2x2", kernel, [c, out_c, 2, 2], bias, out_c)?;
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut m = vec![T::ZERO; out_c * 4 * hw];
    let mut y = Tensor::zeros([n, out_c, oh, ow]);
    for s in 0..n {
        gemm(
            Mat::new(kernel.data(), c, out_c * 4).t(),
            Mat::new(x.sample(s), c, hw),
            T::ZERO,
            &mut m,
        );
        let out = y.sample_mut(s);
        for o in 0..out_c {
            for dy in 0..2 {
                for dx in 0..2 {
                    let row = &m[((o * 4) + dy * 2 + dx) * hw..][..hw];
                    for yy in 0..h {
                        let dst = &mut out[(o * oh + 2 * yy + dy) * ow..][..ow];
                        for xx in 0..w {
                            dst[2 * xx + dx] = row[yy * w + xx] + bias[o];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dkernel, dbias)` for [`upconv2x2`].
pub fn upconv2x2_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = x.shape();
    let out_c = kernel.shape()[1];
    let hw = h * w;
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = vec![T::ZERO; out_c * 4 * hw];
    let mut dk = vec![T::ZERO; c * out_c * 4];
    let mut db = vec![T::ZERO; out_c];
    let mut dx = Tensor::zeros(x.shape());
    for s in 0..n {
        let up = dy.sample(s);
        for o in 0..out_c {
            let mut acc = T::ZERO;
            for dyy in 0..2 {
                for dxx in 0..2 {
                    let row = &mut g[((o * 4) + dyy * 2 + dxx) * hw..][..hw];
                    for yy in 0..h {
                        let src = &up[(o * oh + 2 * yy + dyy) * ow..][..ow];
                        for xx in 0..w {
                            let v = src[2 * xx + dxx];
                            row[yy * w + xx] = v;
                            acc += v;
                        }
                    }
                }
            }
            db[o] += acc;
        }
        gemm(
            Mat::new(kernel.data(), c, out_c * 4),
            Mat::new(&g, out_c * 4, hw),
            T::ZERO,
            dx.sample_mut(s),
        );
        gemm(
            Mat::new(x.sample(s), c, hw),
            Mat::new(&g, out_c * 4, hw).t(),
            T::ONE,
            &mut dk,
        );
    }
    (dx, dk, db)
}

/// Channel concatenation; encoder channels follow decoder channels.
pub fn concat_skip<T: Scalar>(decoder: &Tensor<T>, encoder: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c1, h, w] = decoder.shape();
    let [n2, c2, h2, w2] = encoder.shape();
    if n != n2 || h != h2 || w != w2 {
        return Err(Error::Dimension(format!(
            "skip concat: decoder {:?} vs encoder {:?}",
            decoder.shape(),
            encoder.shape()
        )));
    }
    let mut out = Tensor::zeros([n, c1 + c2, h, w]);
    for s in 0..n {
        let dst = out.sample_mut(s);
        let split = decoder.sample_len();
        dst[..split].copy_from_slice(decoder.sample(s));
        dst[split..].copy_from_slice(encoder.sample(s));
    }
    Ok(out)
}

/// Inverse of [`concat_skip`] for gradients: the first `c1` channels and the rest.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, c1: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    let mut a = Tensor::zeros([n, c1, h, w]);
    let mut b = Tensor::zeros([n, c - c1, h, w]);
    for s in 0..n {
        let src = x.sample(s);
        let split = c1 * h * w;
        a.sample_mut(s).copy_from_slice(&src[..split]);
        b.sample_mut(s).copy_from_slice(&src[split..]);
    }
    (a, b)
}

/// Per-pixel linear projection to one channel (a 1x1 convolution). Kernel
/// shape is `(1, in_c, 1, 1)`.
pub fn project<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    check_kernel("projection", kernel, [1, c, 1, 1], bias, 1)?;
    let hw = h * w;
    let mut y = Tensor::zeros([n, 1, h, w]);
    for s in 0..n {
        let out = y.sample_mut(s);
        out.fill(bias[0]);
        for (ci, plane) in x.sample(s).chunks_exact(hw).enumerate() {
            let k = kernel.data()[ci];
            for (o, &v) in out.iter_mut().zip(plane) {
                *o += k * v;
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dkernel, dbias)` for [`project`].
pub fn project_backward<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = vec![T::ZERO; c];
    let mut db = vec![T::ZERO; 1];
    for s in 0..n {
        let g = dy.sample(s);
        for &v in g {
            db[0] += v;
        }
        let xs = x.sample(s);
        let dxs = dx.sample_mut(s);
        for ci in 0..c {
            let k = kernel.data()[ci];
            let mut acc = T::ZERO;
            for ((d, &xv), &gv) in dxs[ci * hw..(ci + 1) * hw].iter_mut().zip(&xs[ci * hw..]).zip(g) {
                *d = k * gv;
                acc += xv * gv;
            }
            dk[ci] += acc;
        }
    }
    (dx, dk, db)
}

/// Logistic function, kept strictly inside (0, 1) even where the float
/// result would round to an endpoint.
pub fn sigmoid<T: Scalar>(z: &Tensor<T>) -> Tensor<T> {
    let data = z
        .data()
        .iter()
        .map(|&v| {
            let s = if v >= T::ZERO {
                T::ONE / (T::ONE + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::ONE + e)
            };
            if s < T::TINY {
                T::TINY
            } else if s > T::BELOW_ONE {
                T::BELOW_ONE
            } else {
                s
            }
        })
        .collect();
    Tensor::from_vec(z.shape(), data).expect("same shape")
}

/// Mean binary cross-entropy over every element, with predictions clamped to
/// `[eps, 1 - eps]` before the logarithms. Accumulates in `f64`.
pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "loss: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.data().len();
    if n == 0 {
        return Err(Error::Invalid("loss over an empty tensor".into()));
    }
    let mut sum = 0.0f64;
    for (&p, &y) in pred.data().iter().zip(target.data()) {
        let p = p.to_f64().clamp(eps, 1.0 - eps);
        let y = y.to_f64();
        sum += y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(-sum / n as f64)
}

/// Gradient of [`bce_loss`] with respect to the pre-sigmoid logits, given
/// the sigmoid outputs. Zero where the clamp is active.
pub fn bce_logit_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Tensor<T> {
    let inv_n = 1.0 / pred.data().len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let pf = p.to_f64();
            if pf < eps || pf > 1.0 - eps {
                T::ZERO
            } else {
                (p - y) * T::from_f64(inv_n)
            }
        })
        .collect();
    Tensor::from_vec(pred.shape(), data).expect("same shape")
}
