//! Differentiable layer primitives in f64 with hand-written backward passes.
//!
//! Activations are (H, W, T, C) arrays, channel last so the inner loops of
//! the convolutions run over contiguous memory. Convolution weights are
//! (C_out, KH, KW, KT, C_in); transpose-convolution weights are
//! (C_in, KH, KW, KT, C_out), which makes a transpose convolution exactly the
//! data-backward of an ordinary convolution and lets the three conv kernels
//! below serve both layer types.

use ndarray::{Array1, Array2, Array4, Array5, Dimension};

/// Output extent of a strided convolution along one axis.
#[inline]
pub fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Output extent of a transpose convolution along one axis.
#[inline]
pub fn tconv_out_len(input: usize, k: usize, stride: usize, pad: usize, out_pad: usize) -> usize {
    (input - 1) * stride + k + out_pad - 2 * pad
}

fn flat(x: &Array4<f64>) -> &[f64] {
    x.as_slice().expect("activations are standard layout")
}

fn flat5(w: &Array5<f64>) -> &[f64] {
    w.as_slice().expect("weights are standard layout")
}

/// y[i,j,t,co] = b[co] + sum_{di,dj,dt,ci} w[co,di,dj,dt,ci] * x_padded[...]
pub fn conv3d_forward(
    x: &Array4<f64>,
    w: &Array5<f64>,
    b: Option<&Array1<f64>>,
    stride: (usize, usize, usize),
    pad: usize,
) -> Array4<f64> {
    let (ih, iw, it, ci) = x.dim();
    let (co, kh, kw, kt, ci_w) = w.dim();
    assert_eq!(ci, ci_w, "input channels {ci} do not match weights {ci_w}");
    let (oh, ow, ot) = (
        conv_out_len(ih, kh, stride.0, pad),
        conv_out_len(iw, kw, stride.1, pad),
        conv_out_len(it, kt, stride.2, pad),
    );
    let xs = flat(x);
    let ws = flat5(w);
    let mut y = vec![0.0f64; oh * ow * ot * co];

    for oi in 0..oh {
        for oj in 0..ow {
            for otk in 0..ot {
                let yoff = ((oi * ow + oj) * ot + otk) * co;
                for di in 0..kh {
                    let ii = (oi * stride.0 + di) as isize - pad as isize;
                    if ii < 0 || ii >= ih as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let jj = (oj * stride.1 + dj) as isize - pad as isize;
                        if jj < 0 || jj >= iw as isize {
                            continue;
                        }
                        for dt in 0..kt {
                            let tt = (otk * stride.2 + dt) as isize - pad as isize;
                            if tt < 0 || tt >= it as isize {
                                continue;
                            }
                            let xoff =
                                (((ii as usize) * iw + jj as usize) * it + tt as usize) * ci;
                            for c_o in 0..co {
                                let woff = (((c_o * kh + di) * kw + dj) * kt + dt) * ci;
                                let mut acc = 0.0;
                                for c_i in 0..ci {
                                    acc += ws[woff + c_i] * xs[xoff + c_i];
                                }
                                y[yoff + c_o] += acc;
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    for c_o in 0..co {
                        y[yoff + c_o] += b[c_o];
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((oh, ow, ot, co), y).unwrap()
}

/// Gradient of a convolution with respect to its input.
pub fn conv3d_backward_data(
    gy: &Array4<f64>,
    w: &Array5<f64>,
    in_dims: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: usize,
) -> Array4<f64> {
    let (oh, ow, ot, co) = gy.dim();
    let (co_w, kh, kw, kt, ci) = w.dim();
    assert_eq!(co, co_w, "grad channels {co} do not match weights {co_w}");
    let (ih, iw, it) = in_dims;
    let gys = flat(gy);
    let ws = flat5(w);
    let mut gx = vec![0.0f64; ih * iw * it * ci];

    for oi in 0..oh {
        for oj in 0..ow {
            for otk in 0..ot {
                let yoff = ((oi * ow + oj) * ot + otk) * co;
                for di in 0..kh {
                    let ii = (oi * stride.0 + di) as isize - pad as isize;
                    if ii < 0 || ii >= ih as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let jj = (oj * stride.1 + dj) as isize - pad as isize;
                        if jj < 0 || jj >= iw as isize {
                            continue;
                        }
                        for dt in 0..kt {
                            let tt = (otk * stride.2 + dt) as isize - pad as isize;
                            if tt < 0 || tt >= it as isize {
                                continue;
                            }
                            let xoff =
                                (((ii as usize) * iw + jj as usize) * it + tt as usize) * ci;
                            for c_o in 0..co {
                                let g = gys[yoff + c_o];
                                if g == 0.0 {
                                    continue;
                                }
                                let woff = (((c_o * kh + di) * kw + dj) * kt + dt) * ci;
                                for c_i in 0..ci {
                                    gx[xoff + c_i] += g * ws[woff + c_i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((ih, iw, it, ci), gx).unwrap()
}

/// Gradient of a convolution with respect to its weights.
pub fn conv3d_backward_weights(
    x: &Array4<f64>,
    gy: &Array4<f64>,
    k: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: usize,
) -> Array5<f64> {
    let (ih, iw, it, ci) = x.dim();
    let (oh, ow, ot, co) = gy.dim();
    let (kh, kw, kt) = k;
    let xs = flat(x);
    let gys = flat(gy);
    let mut gw = vec![0.0f64; co * kh * kw * kt * ci];

    for oi in 0..oh {
        for oj in 0..ow {
            for otk in 0..ot {
                let yoff = ((oi * ow + oj) * ot + otk) * co;
                for di in 0..kh {
                    let ii = (oi * stride.0 + di) as isize - pad as isize;
                    if ii < 0 || ii >= ih as isize {
                        continue;
                    }
                    for dj in 0..kw {
                        let jj = (oj * stride.1 + dj) as isize - pad as isize;
                        if jj < 0 || jj >= iw as isize {
                            continue;
                        }
                        for dt in 0..kt {
                            let tt = (otk * stride.2 + dt) as isize - pad as isize;
                            if tt < 0 || tt >= it as isize {
                                continue;
                            }
                            let xoff =
                                (((ii as usize) * iw + jj as usize) * it + tt as usize) * ci;
                            for c_o in 0..co {
                                let g = gys[yoff + c_o];
                                if g == 0.0 {
                                    continue;
                                }
                                let woff = (((c_o * kh + di) * kw + dj) * kt + dt) * ci;
                                for c_i in 0..ci {
                                    gw[woff + c_i] += g * xs[xoff + c_i];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Array5::from_shape_vec((co, kh, kw, kt, ci), gw).unwrap()
}

/// Per-output-channel sum over all locations; bias gradient for both layer
/// kinds.
pub fn channel_sums(gy: &Array4<f64>) -> Array1<f64> {
    let (_, _, _, c) = gy.dim();
    let mut out = Array1::zeros(c);
    for (idx, &g) in flat(gy).iter().enumerate() {
        out[idx % c] += g;
    }
    out
}

// --- transpose convolutions -------------------------------------------------

/// Transpose convolution: scatter each input location through the kernel.
/// Weights are (C_in, KH, KW, KT, C_out).
pub fn tconv3d_forward(
    x: &Array4<f64>,
    w: &Array5<f64>,
    b: Option<&Array1<f64>>,
    stride: (usize, usize, usize),
    pad: usize,
    out_pad: (usize, usize, usize),
) -> Array4<f64> {
    let (ih, iw, it, ci) = x.dim();
    let (ci_w, kh, kw, kt, co) = w.dim();
    assert_eq!(ci, ci_w, "input channels {ci} do not match weights {ci_w}");
    assert!(
        out_pad.0 < stride.0.max(1) && out_pad.1 < stride.1.max(1) && out_pad.2 < stride.2.max(1),
        "output padding must be smaller than stride"
    );
    let out_dims = (
        tconv_out_len(ih, kh, stride.0, pad, out_pad.0),
        tconv_out_len(iw, kw, stride.1, pad, out_pad.1),
        tconv_out_len(it, kt, stride.2, pad, out_pad.2),
    );
    // A transpose conv forward is the data-backward of the matching conv.
    let mut y = conv3d_backward_data(x, w, out_dims, stride, pad);
    if let Some(b) = b {
        for (idx, v) in y.as_slice_mut().unwrap().iter_mut().enumerate() {
            *v += b[idx % co];
        }
    }
    y
}

/// Gradient of a transpose convolution with respect to its input: the
/// forward pass of the matching convolution.
pub fn tconv3d_backward_data(
    gy: &Array4<f64>,
    w: &Array5<f64>,
    stride: (usize, usize, usize),
    pad: usize,
) -> Array4<f64> {
    conv3d_forward(gy, w, None, stride, pad)
}

/// Gradient of a transpose convolution with respect to its weights: the
/// weight-backward of the matching convolution with input and gradient
/// swapped.
pub fn tconv3d_backward_weights(
    x: &Array4<f64>,
    gy: &Array4<f64>,
    k: (usize, usize, usize),
    stride: (usize, usize, usize),
    pad: usize,
) -> Array5<f64> {
    conv3d_backward_weights(gy, x, k, stride, pad)
}

// --- dense layers ------------------------------------------------------------

pub fn affine_forward(x: &Array1<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    w.dot(x) + b
}

/// Returns (gx, gw, gb).
pub fn affine_backward(
    x: &Array1<f64>,
    gy: &Array1<f64>,
    w: &Array2<f64>,
) -> (Array1<f64>, Array2<f64>, Array1<f64>) {
    let gx = w.t().dot(gy);
    let gw = gy
        .view()
        .insert_axis(ndarray::Axis(1))
        .dot(&x.view().insert_axis(ndarray::Axis(0)));
    (gx, gw, gy.clone())
}

/// The same affine map applied independently at every (i, j, t) location — a
/// 1x1x1 convolution sharing weights with the pooled form.
pub fn affine_map_forward(x: &Array4<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array4<f64> {
    let (h, wd, t, ci) = x.dim();
    let (co, ci_w) = w.dim();
    assert_eq!(ci, ci_w);
    let xs = flat(x);
    let ws = w.as_slice().unwrap();
    let mut y = vec![0.0f64; h * wd * t * co];
    for loc in 0..h * wd * t {
        let xoff = loc * ci;
        let yoff = loc * co;
        for o in 0..co {
            let mut acc = b[o];
            let woff = o * ci;
            for i in 0..ci {
                acc += ws[woff + i] * xs[xoff + i];
            }
            y[yoff + o] = acc;
        }
    }
    Array4::from_shape_vec((h, wd, t, co), y).unwrap()
}

/// Returns (gx, gw, gb) for the per-location affine map.
pub fn affine_map_backward(
    x: &Array4<f64>,
    gy: &Array4<f64>,
    w: &Array2<f64>,
) -> (Array4<f64>, Array2<f64>, Array1<f64>) {
    let (h, wd, t, ci) = x.dim();
    let (_, _, _, co) = gy.dim();
    let xs = flat(x);
    let gys = flat(gy);
    let ws = w.as_slice().unwrap();
    let mut gx = vec![0.0f64; h * wd * t * ci];
    let mut gw = Array2::<f64>::zeros((co, ci));
    let mut gb = Array1::<f64>::zeros(co);
    let gws = gw.as_slice_mut().unwrap();
    for loc in 0..h * wd * t {
        let xoff = loc * ci;
        let yoff = loc * co;
        for o in 0..co {
            let g = gys[yoff + o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let woff = o * ci;
            for i in 0..ci {
                gx[xoff + i] += g * ws[woff + i];
                gws[woff + i] += g * xs[xoff + i];
            }
        }
    }
    (
        Array4::from_shape_vec((h, wd, t, ci), gx).unwrap(),
        gw,
        gb,
    )
}

// --- pointwise & pooling ------------------------------------------------------

pub fn relu<D: Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Backward of ReLU given the pre-activation; the subgradient at exactly 0 is
/// taken as 0.
pub fn relu_backward<D: Dimension>(
    pre: &ndarray::Array<f64, D>,
    gy: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    let mut g = gy.clone();
    g.zip_mut_with(pre, |gv, &p| {
        if p <= 0.0 {
            *gv = 0.0;
        }
    });
    g
}

/// Spatio-temporal mean over (H, W, T), leaving the channel vector.
pub fn mean_pool(x: &Array4<f64>) -> Array1<f64> {
    let (h, w, t, c) = x.dim();
    let n = (h * w * t) as f64;
    let mut out = Array1::zeros(c);
    for (idx, &v) in flat(x).iter().enumerate() {
        out[idx % c] += v;
    }
    out.mapv_into(|v| v / n)
}

/// Backward of the mean pool: spread the channel gradient evenly.
pub fn mean_pool_backward(gf: &Array1<f64>, dims: (usize, usize, usize)) -> Array4<f64> {
    let (h, w, t) = dims;
    let c = gf.len();
    let n = (h * w * t) as f64;
    let mut gx = Array4::zeros((h, w, t, c));
    for (idx, v) in gx.as_slice_mut().unwrap().iter_mut().enumerate() {
        *v = gf[idx % c] / n;
    }
    gx
}

/// Multiply a gradient by the gradient-reversal factor -lambda. The forward
/// half of the layer is the identity, so only the backward hook exists.
pub fn grl_backward<D: Dimension>(g: &ndarray::Array<f64, D>, lambda: f64) -> ndarray::Array<f64, D> {
    g.mapv(|v| -lambda * v)
}

#[allow(unused)]
pub fn grl_forward<T>(x: T) -> T {
    x
}
