//! Bias-free layer primitives with hand-written backward passes.
//!
//! Every tensor keeps its channels on the last axis. 2D operations act on an
//! explicit pair of axes; all remaining non-channel axes behave as batch axes.
//! This lets the same convolution run over the photometric axes of a patch
//! tensor `[N, b, b, w, w, C]`, over its spatial axes, or over a plain feature
//! map `[N, h, w, C]`.

use super::tensor::{gemm, Mat, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves extents.
    Same,
    /// No padding; extents shrink by `kernel - 1`.
    Valid,
}

/// Shape viewed as `[outer, a0, mid, a1, inner, channels]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PlaneDims {
    outer: usize,
    a0: usize,
    mid: usize,
    a1: usize,
    inner: usize,
    ch: usize,
}

impl PlaneDims {
    fn new(shape: &[usize], axes: (usize, usize)) -> Result<Self> {
        let nd = shape.len();
        let (x, y) = axes;
        if !(x < y && y + 1 < nd) {
            return Err(Error::ShapeMismatch(format!(
                "axes {axes:?} must be increasing and precede the channel axis of shape {shape:?}"
            )));
        }
        Ok(PlaneDims {
            outer: shape[..x].iter().product(),
            a0: shape[x],
            mid: shape[x + 1..y].iter().product(),
            a1: shape[y],
            inner: shape[y + 1..nd - 1].iter().product(),
            ch: shape[nd - 1],
        })
    }

    /// Start of the channel vector at the given position.
    #[inline]
    fn offset(&self, o: usize, i0: usize, m: usize, i1: usize, n: usize) -> usize {
        ((((o * self.a0 + i0) * self.mid + m) * self.a1 + i1) * self.inner + n) * self.ch
    }

    fn positions(&self) -> usize {
        self.outer * self.a0 * self.mid * self.a1 * self.inner
    }
}

fn with_plane(shape: &[usize], axes: (usize, usize), e0: usize, e1: usize, ch: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axes.0] = e0;
    s[axes.1] = e1;
    let last = s.len() - 1;
    s[last] = ch;
    s
}

fn check_kernel<T: Real>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let ws = weights.shape();
    if ws.len() != 4 || ws[0] != ws[1] || ws[0] % 2 == 0 {
        return Err(Error::ShapeMismatch(format!(
            "convolution weights must be [k, k, c_in, c_out] with odd k, got {ws:?}"
        )));
    }
    let cin = *input.shape().last().unwrap_or(&0);
    if ws[2] != cin {
        return Err(Error::ShapeMismatch(format!(
            "weights expect {} input channels, tensor has {cin}",
            ws[2]
        )));
    }
    Ok((ws[0], ws[2], ws[3]))
}

fn conv_geometry(d: &PlaneDims, k: usize, padding: Padding) -> Result<(usize, usize, usize)> {
    match padding {
        Padding::Same => Ok((d.a0, d.a1, (k - 1) / 2)),
        Padding::Valid => {
            if d.a0 < k || d.a1 < k {
                return Err(Error::ShapeMismatch(format!(
                    "valid convolution with kernel {k} on extents {}x{}",
                    d.a0, d.a1
                )));
            }
            Ok((d.a0 - k + 1, d.a1 - k + 1, 0))
        }
    }
}

/// Visits every (output row, kernel tap) pair whose source lies inside the
/// input: `f(col_offset, input_offset)`, `col_offset` indexing the im2col
/// matrix of width `k² · C`.
fn for_each_tap(d: &PlaneDims, k: usize, o0: usize, o1: usize, pad: usize, mut f: impl FnMut(usize, usize)) {
    let row_width = k * k * d.ch;
    let mut row = 0;
    for o in 0..d.outer {
        for i0 in 0..o0 {
            for m in 0..d.mid {
                for i1 in 0..o1 {
                    for n in 0..d.inner {
                        for ki in 0..k {
                            let s0 = (i0 + ki) as isize - pad as isize;
                            if s0 < 0 || s0 >= d.a0 as isize {
                                continue;
                            }
                            for kj in 0..k {
                                let s1 = (i1 + kj) as isize - pad as isize;
                                if s1 < 0 || s1 >= d.a1 as isize {
                                    continue;
                                }
                                let col = row * row_width + (ki * k + kj) * d.ch;
                                f(col, d.offset(o, s0 as usize, m, s1 as usize, n));
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

fn im2col<T: Real>(input: &[T], d: &PlaneDims, k: usize, o0: usize, o1: usize, pad: usize) -> Vec<T> {
    let rows = d.outer * o0 * d.mid * o1 * d.inner;
    let mut col = vec![T::zero(); rows * k * k * d.ch];
    let ch = d.ch;
    for_each_tap(d, k, o0, o1, pad, |c, i| {
        col[c..c + ch].copy_from_slice(&input[i..i + ch]);
    });
    col
}

fn col2im<T: Real>(col: &[T], d: &PlaneDims, k: usize, o0: usize, o1: usize, pad: usize, out: &mut [T]) {
    let ch = d.ch;
    for_each_tap(d, k, o0, o1, pad, |c, i| {
        for (dst, src) in out[i..i + ch].iter_mut().zip(&col[c..c + ch]) {
            *dst += *src;
        }
    });
}

/// Bias-free cross-correlation over the axis pair `axes`; weights are
/// `[k, k, c_in, c_out]`.
pub fn conv2d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, padding: Padding, axes: (usize, usize)) -> Result<Tensor<T>> {
    let (k, cin, cout) = check_kernel(input, weights)?;
    let d = PlaneDims::new(input.shape(), axes)?;
    let (o0, o1, pad) = conv_geometry(&d, k, padding)?;
    let col = im2col(input.data(), &d, k, o0, o1, pad);
    let rows = d.outer * o0 * d.mid * o1 * d.inner;
    let mut out = Tensor::zeros(&with_plane(input.shape(), axes, o0, o1, cout));
    gemm(
        Mat::new(&col, rows, k * k * cin),
        Mat::new(weights.data(), k * k * cin, cout),
        out.data_mut(),
        false,
    );
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input and weights.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: Padding,
    axes: (usize, usize),
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (k, cin, cout) = check_kernel(input, weights)?;
    let d = PlaneDims::new(input.shape(), axes)?;
    let (o0, o1, pad) = conv_geometry(&d, k, padding)?;
    let expected = with_plane(input.shape(), axes, o0, o1, cout);
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "conv2d gradient shape {:?}, expected {expected:?}",
            grad_out.shape()
        )));
    }
    let rows = d.outer * o0 * d.mid * o1 * d.inner;
    let width = k * k * cin;
    let col = im2col(input.data(), &d, k, o0, o1, pad);
    let mut grad_w = Tensor::zeros(weights.shape());
    gemm(
        Mat::new(&col, rows, width).t(),
        Mat::new(grad_out.data(), rows, cout),
        grad_w.data_mut(),
        false,
    );
    let mut grad_col = col;
    gemm(
        Mat::new(grad_out.data(), rows, cout),
        Mat::new(weights.data(), width, cout).t(),
        &mut grad_col,
        false,
    );
    let mut grad_in = Tensor::zeros(input.shape());
    col2im(&grad_col, &d, k, o0, o1, pad, grad_in.data_mut());
    Ok((grad_in, grad_w))
}

/// Axis pairs of a patch tensor `[..., b, b, w, w, C]`: `(spatial, photometric)`.
pub fn patch_axes(ndim: usize) -> Result<((usize, usize), (usize, usize))> {
    if ndim < 5 {
        return Err(Error::ShapeMismatch(format!(
            "patch tensors need at least 5 axes, got {ndim}"
        )));
    }
    Ok(((ndim - 5, ndim - 4), (ndim - 3, ndim - 2)))
}

/// Separable 4D convolution: a `same` convolution over the photometric axes
/// followed by a `valid` convolution over the spatial axes.
pub fn sepconv4d<T: Real>(input: &Tensor<T>, photometric: &Tensor<T>, spatial: &Tensor<T>) -> Result<Tensor<T>> {
    let (sp, ph) = patch_axes(input.ndim())?;
    let mid = conv2d(input, photometric, Padding::Same, ph)?;
    conv2d(&mid, spatial, Padding::Valid, sp)
}

/// Gradients of [`sepconv4d`]: `(input, photometric, spatial)`.
pub fn sepconv4d_backward<T: Real>(
    input: &Tensor<T>,
    photometric: &Tensor<T>,
    spatial: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (sp, ph) = patch_axes(input.ndim())?;
    let mid = conv2d(input, photometric, Padding::Same, ph)?;
    let (grad_mid, grad_sp) = conv2d_backward(&mid, spatial, grad_out, Padding::Valid, sp)?;
    let (grad_in, grad_ph) = conv2d_backward(input, photometric, &grad_mid, Padding::Same, ph)?;
    Ok((grad_in, grad_ph, grad_sp))
}

/// 2×2 max-pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index of the selected maximum.
pub fn maxpool2<T: Real>(input: &Tensor<T>, axes: (usize, usize)) -> Result<(Tensor<T>, Vec<usize>)> {
    let d = PlaneDims::new(input.shape(), axes)?;
    if d.a0 % 2 != 0 || d.a1 % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "max-pooling needs even extents, got {}x{}",
            d.a0, d.a1
        )));
    }
    let (h0, h1) = (d.a0 / 2, d.a1 / 2);
    let mut out = Tensor::zeros(&with_plane(input.shape(), axes, h0, h1, d.ch));
    let mut argmax = vec![0usize; out.len()];
    let od = PlaneDims { a0: h0, a1: h1, ..d };
    let src = input.data();
    for o in 0..d.outer {
        for i0 in 0..h0 {
            for m in 0..d.mid {
                for i1 in 0..h1 {
                    for n in 0..d.inner {
                        let dst = od.offset(o, i0, m, i1, n);
                        let cands = [
                            d.offset(o, 2 * i0, m, 2 * i1, n),
                            d.offset(o, 2 * i0, m, 2 * i1 + 1, n),
                            d.offset(o, 2 * i0 + 1, m, 2 * i1, n),
                            d.offset(o, 2 * i0 + 1, m, 2 * i1 + 1, n),
                        ];
                        for c in 0..d.ch {
                            let mut best = cands[0] + c;
                            for cand in &cands[1..] {
                                if src[cand + c] > src[best] {
                                    best = cand + c;
                                }
                            }
                            out.data_mut()[dst + c] = src[best];
                            argmax[dst + c] = best;
                        }
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward<T: Real>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::ShapeMismatch("max-pool gradient size".into()));
    }
    let mut grad_in = Tensor::zeros(input_shape);
    for (g, &i) in grad_out.data().iter().zip(argmax) {
        grad_in.data_mut()[i] += *g;
    }
    Ok(grad_in)
}

/// Nearest-neighbor 2× upsampling.
pub fn upsample_nearest2<T: Real>(input: &Tensor<T>, axes: (usize, usize)) -> Result<Tensor<T>> {
    let d = PlaneDims::new(input.shape(), axes)?;
    let od = PlaneDims {
        a0: 2 * d.a0,
        a1: 2 * d.a1,
        ..d
    };
    let mut out = Tensor::zeros(&with_plane(input.shape(), axes, od.a0, od.a1, d.ch));
    for o in 0..d.outer {
        for i0 in 0..od.a0 {
            for m in 0..d.mid {
                for i1 in 0..od.a1 {
                    for n in 0..d.inner {
                        let s = d.offset(o, i0 / 2, m, i1 / 2, n);
                        let t = od.offset(o, i0, m, i1, n);
                        out.data_mut()[t..t + d.ch].copy_from_slice(&input.data()[s..s + d.ch]);
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_tconv<T: Real>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize)> {
    let ws = weights.shape();
    let cin = *input.shape().last().unwrap_or(&0);
    if ws.len() != 4 || ws[0] != 2 || ws[1] != 2 || ws[2] != cin {
        return Err(Error::ShapeMismatch(format!(
            "transposed convolution weights must be [2, 2, {cin}, c_out], got {ws:?}"
        )));
    }
    Ok((ws[2], ws[3]))
}

/// Output offsets of positions `(2 i0 + di, 2 i1 + dj)`, in input row order.
fn stride2_offsets(d: &PlaneDims, od: &PlaneDims, di: usize, dj: usize) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(d.positions());
    for o in 0..d.outer {
        for i0 in 0..d.a0 {
            for m in 0..d.mid {
                for i1 in 0..d.a1 {
                    for n in 0..d.inner {
                        offsets.push(od.offset(o, 2 * i0 + di, m, 2 * i1 + dj, n));
                    }
                }
            }
        }
    }
    offsets
}

/// Transposed convolution with a 2×2 kernel and stride 2: doubles both plane
/// extents. Weights are `[2, 2, c_in, c_out]`.
pub fn transposed_conv2<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, axes: (usize, usize)) -> Result<Tensor<T>> {
    let (cin, cout) = check_tconv(input, weights)?;
    let d = PlaneDims::new(input.shape(), axes)?;
    let od = PlaneDims {
        a0: 2 * d.a0,
        a1: 2 * d.a1,
        ch: cout,
        ..d
    };
    let p = d.positions();
    let mut out = Tensor::zeros(&with_plane(input.shape(), axes, od.a0, od.a1, cout));
    let mut dense = vec![T::zero(); p * cout];
    for di in 0..2 {
        for dj in 0..2 {
            let w = &weights.data()[(di * 2 + dj) * cin * cout..(di * 2 + dj + 1) * cin * cout];
            gemm(Mat::new(input.data(), p, cin), Mat::new(w, cin, cout), &mut dense, false);
            let full = out.data_mut();
            for (row, t) in dense.chunks_exact(cout).zip(stride2_offsets(&d, &od, di, dj)) {
                full[t..t + cout].copy_from_slice(row);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`transposed_conv2`] with respect to input and weights.
pub fn transposed_conv2_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    axes: (usize, usize),
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (cin, cout) = check_tconv(input, weights)?;
    let d = PlaneDims::new(input.shape(), axes)?;
    let od = PlaneDims {
        a0: 2 * d.a0,
        a1: 2 * d.a1,
        ch: cout,
        ..d
    };
    let expected = with_plane(input.shape(), axes, od.a0, od.a1, cout);
    if grad_out.shape() != expected.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "transposed convolution gradient shape {:?}, expected {expected:?}",
            grad_out.shape()
        )));
    }
    let p = d.positions();
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w = Tensor::zeros(weights.shape());
    let mut dense = vec![T::zero(); p * cout];
    for di in 0..2 {
        for dj in 0..2 {
            let range = (di * 2 + dj) * cin * cout..(di * 2 + dj + 1) * cin * cout;
            for (row, t) in dense.chunks_exact_mut(cout).zip(stride2_offsets(&d, &od, di, dj)) {
                row.copy_from_slice(&grad_out.data()[t..t + cout]);
            }
            gemm(
                Mat::new(&dense, p, cout),
                Mat::new(&weights.data()[range.clone()], cin, cout).t(),
                grad_in.data_mut(),
                true,
            );
            gemm(
                Mat::new(input.data(), p, cin).t(),
                Mat::new(&dense, p, cout),
                &mut grad_w.data_mut()[range],
                false,
            );
        }
    }
    Ok((grad_in, grad_w))
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its output.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(y, g)| if *y > T::zero() { *g } else { T::zero() })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("same shape")
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
        return Err(Error::ShapeMismatch(format!("cannot concatenate {sa:?} and {sb:?}")));
    }
    let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
    let mut shape = sa.to_vec();
    *shape.last_mut().unwrap() = ca + cb;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for (x, y) in a.data().chunks_exact(ca.max(1)).zip(b.data().chunks_exact(cb.max(1))) {
        data.extend_from_slice(x);
        data.extend_from_slice(y);
    }
    Tensor::from_vec(&shape, data)
}

/// Splits a channel gradient back into the two concatenated parts.
pub fn concat_channels_backward<T: Real>(grad_out: &Tensor<T>, channels_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = grad_out.shape();
    let c = *s.last().unwrap_or(&0);
    if channels_a > c {
        return Err(Error::ShapeMismatch("concat split exceeds channels".into()));
    }
    let mut sa = s.to_vec();
    let mut sb = s.to_vec();
    *sa.last_mut().unwrap() = channels_a;
    *sb.last_mut().unwrap() = c - channels_a;
    let mut da = Vec::with_capacity(grad_out.len());
    let mut db = Vec::with_capacity(grad_out.len());
    for chunk in grad_out.data().chunks_exact(c.max(1)) {
        da.extend_from_slice(&chunk[..channels_a]);
        db.extend_from_slice(&chunk[channels_a..]);
    }
    Ok((Tensor::from_vec(&sa, da)?, Tensor::from_vec(&sb, db)?))
}
