//! Tensor primitives with analytic backward passes.
//!
//! Feature maps live in channel-major layout: a `[channels, batch·h·w]`
//! matrix whose column index is `(b·h + y)·w + x`. Convolutions become
//! GEMMs over im2col patch matrices, the 2×2 stride-2 deconvolution becomes
//! a GEMM plus a non-overlapping scatter, and batch-norm reduces over the
//! column axis. Everything is `f64` so gradients can be checked against
//! central finite differences.

use ndarray::{Array2, ArrayView2};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Feature {
    pub c: usize,
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub data: Array2<f64>,
}

impl Feature {
    pub fn zeros(c: usize, b: usize, h: usize, w: usize) -> Feature {
        Feature {
            c,
            b,
            h,
            w,
            data: Array2::zeros((c, b * h * w)),
        }
    }

    pub fn cols(&self) -> usize {
        self.b * self.h * self.w
    }

    #[inline]
    pub fn col(&self, b: usize, y: usize, x: usize) -> usize {
        (b * self.h + y) * self.w + x
    }
}

// ---------------------------------------------------------------------------
// Convolution (odd kernel, same padding, stride 1)
// ---------------------------------------------------------------------------

pub struct ConvCache {
    pub cols: Array2<f64>,
    pub in_c: usize,
    pub in_b: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
}

/// Patch matrix: row `(c·k + kh)·k + kw` holds the input shifted by the
/// kernel offset, zero-padded at the borders.
fn im2col(x: &Feature, k: usize) -> Array2<f64> {
    let p = (k - 1) / 2;
    let mut out = Array2::zeros((x.c * k * k, x.cols()));
    for c in 0..x.c {
        for kh in 0..k {
            for kw in 0..k {
                let row = (c * k + kh) * k + kw;
                let shift = kw as isize - p as isize;
                let x0 = (-shift).max(0) as usize;
                let x1 = ((x.w as isize - shift).max(0) as usize).min(x.w);
                for b in 0..x.b {
                    for y in 0..x.h {
                        let sy = y as isize + kh as isize - p as isize;
                        if sy < 0 || sy >= x.h as isize {
                            continue;
                        }
                        let dst = x.col(b, y, 0);
                        let src = x.col(b, sy as usize, 0);
                        for xx in x0..x1 {
                            out[[row, dst + xx]] =
                                x.data[[c, (src as isize + xx as isize + shift) as usize]];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of `im2col`: scatter-adds patch-matrix gradients back onto the
/// input grid.
fn col2im(dcols: &Array2<f64>, c: usize, b: usize, h: usize, w: usize, k: usize) -> Feature {
    let p = (k - 1) / 2;
    let mut dx = Feature::zeros(c, b, h, w);
    for ci in 0..c {
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                let shift = kw as isize - p as isize;
                let x0 = (-shift).max(0) as usize;
                let x1 = ((w as isize - shift).max(0) as usize).min(w);
                for bb in 0..b {
                    for y in 0..h {
                        let sy = y as isize + kh as isize - p as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = (bb * h + y) * w;
                        let src = (bb * h + sy as usize) * w;
                        for xx in x0..x1 {
                            dx.data[[ci, (src as isize + xx as isize + shift) as usize]] +=
                                dcols[[row, dst + xx]];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// `w` is the weight tensor viewed as `[out_ch, in_ch·k²]`.
pub fn conv2d_forward(
    x: &Feature,
    w: ArrayView2<f64>,
    bias: &[f64],
    k: usize,
) -> (Feature, ConvCache) {
    let cols = im2col(x, k);
    let mut y = w.dot(&cols);
    for (o, mut row) in y.rows_mut().into_iter().enumerate() {
        row += bias[o];
    }
    let out = Feature {
        c: w.nrows(),
        b: x.b,
        h: x.h,
        w: x.w,
        data: y,
    };
    let cache = ConvCache {
        cols,
        in_c: x.c,
        in_b: x.b,
        in_h: x.h,
        in_w: x.w,
        k,
    };
    (out, cache)
}

/// Returns (dx, dWeight `[out_ch, in_ch·k²]`, dBias).
pub fn conv2d_backward(
    dy: &Feature,
    w: ArrayView2<f64>,
    cache: &ConvCache,
) -> (Feature, Array2<f64>, Vec<f64>) {
    let dw = dy.data.dot(&cache.cols.t());
    let db: Vec<f64> = dy.data.rows().into_iter().map(|r| r.sum()).collect();
    let dcols = w.t().dot(&dy.data);
    let dx = col2im(
        &dcols, cache.in_c, cache.in_b, cache.in_h, cache.in_w, cache.k,
    );
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// Deconvolution (2×2 kernel, stride 2)
// ---------------------------------------------------------------------------

pub struct DeconvCache {
    pub x: Array2<f64>,
    pub in_c: usize,
    pub in_b: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
}

/// Reshapes the `[out_ch, in_ch, 2, 2]` weight into the GEMM matrix
/// `[out_ch·4, in_ch]` with row `o·4 + dy·2 + dx`.
fn deconv_matrix(w: &[f64], co: usize, ci: usize) -> Array2<f64> {
    let mut m = Array2::zeros((co * 4, ci));
    for o in 0..co {
        for i in 0..ci {
            for dy in 0..2 {
                for dx in 0..2 {
                    m[[o * 4 + dy * 2 + dx, i]] = w[((o * ci + i) * 2 + dy) * 2 + dx];
                }
            }
        }
    }
    m
}

/// Stride equals kernel size, so every output pixel receives exactly one
/// contribution: upsampling is a GEMM followed by a pure scatter.
pub fn deconv2d_forward(x: &Feature, w: &[f64], bias: &[f64], co: usize) -> (Feature, DeconvCache) {
    let m = deconv_matrix(w, co, x.c);
    let ycols = m.dot(&x.data);
    let mut out = Feature::zeros(co, x.b, 2 * x.h, 2 * x.w);
    for o in 0..co {
        for b in 0..x.b {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let src = x.col(b, y, xx);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let dst = out.col(b, 2 * y + dy, 2 * xx + dx);
                            out.data[[o, dst]] = ycols[[o * 4 + dy * 2 + dx, src]] + bias[o];
                        }
                    }
                }
            }
        }
    }
    let cache = DeconvCache {
        x: x.data.clone(),
        in_c: x.c,
        in_b: x.b,
        in_h: x.h,
        in_w: x.w,
        out_c: co,
    };
    (out, cache)
}

/// Returns (dx, dWeight flat `[out_ch, in_ch, 2, 2]`, dBias).
pub fn deconv2d_backward(
    dy: &Feature,
    w: &[f64],
    cache: &DeconvCache,
) -> (Feature, Vec<f64>, Vec<f64>) {
    let (ci, co) = (cache.in_c, cache.out_c);
    let (b, h, wid) = (cache.in_b, cache.in_h, cache.in_w);
    let mut dycols = Array2::zeros((co * 4, b * h * wid));
    let mut db = vec![0.0; co];
    for o in 0..co {
        for bb in 0..b {
            for y in 0..h {
                for xx in 0..wid {
                    let src = (bb * h + y) * wid + xx;
                    for dy_ in 0..2 {
                        for dx_ in 0..2 {
                            let dst = (bb * dy.h + (2 * y + dy_)) * dy.w + (2 * xx + dx_);
                            let g = dy.data[[o, dst]];
                            dycols[[o * 4 + dy_ * 2 + dx_, src]] = g;
                            db[o] += g;
                        }
                    }
                }
            }
        }
    }
    let dm = dycols.dot(&cache.x.t());
    let mut dw = vec![0.0; co * ci * 4];
    for o in 0..co {
        for i in 0..ci {
            for dy_ in 0..2 {
                for dx_ in 0..2 {
                    dw[((o * ci + i) * 2 + dy_) * 2 + dx_] = dm[[o * 4 + dy_ * 2 + dx_, i]];
                }
            }
        }
    }
    let m = deconv_matrix(w, co, ci);
    let dxd = m.t().dot(&dycols);
    let dx = Feature {
        c: ci,
        b,
        h,
        w: wid,
        data: dxd,
    };
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

pub struct BnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Vec<f64>,
}

/// Train-mode batch norm over the column axis with biased variance.
/// Returns the output, the backward cache, and the batch statistics so the
/// caller can fold them into the running estimates.
pub fn bn_forward_train(
    x: &Feature,
    gamma: &[f64],
    beta: &[f64],
) -> (Feature, BnCache, Vec<f64>, Vec<f64>) {
    let n = x.cols() as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    let mut inv = vec![0.0; x.c];
    let mut xhat = Array2::zeros(x.data.raw_dim());
    let mut out = Feature::zeros(x.c, x.b, x.h, x.w);
    for c in 0..x.c {
        let row = x.data.row(c);
        let mu = row.sum() / n;
        let v = row.iter().map(|&e| (e - mu) * (e - mu)).sum::<f64>() / n;
        let istd = 1.0 / (v + BN_EPS).sqrt();
        mean[c] = mu;
        var[c] = v;
        inv[c] = istd;
        for (i, &e) in row.iter().enumerate() {
            let xh = (e - mu) * istd;
            xhat[[c, i]] = xh;
            out.data[[c, i]] = gamma[c] * xh + beta[c];
        }
    }
    (out, BnCache { xhat, inv_std: inv }, mean, var)
}

/// Eval-mode batch norm using the running statistics.
pub fn bn_forward_eval(
    x: &Feature,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Feature {
    let mut out = Feature::zeros(x.c, x.b, x.h, x.w);
    for c in 0..x.c {
        let istd = 1.0 / (running_var[c] + BN_EPS).sqrt();
        let (mu, g, bta) = (running_mean[c], gamma[c], beta[c]);
        for (i, &e) in x.data.row(c).iter().enumerate() {
            out.data[[c, i]] = g * (e - mu) * istd + bta;
        }
    }
    out
}

/// Returns (dx, dGamma, dBeta) for train-mode batch norm.
pub fn bn_backward(dy: &Feature, gamma: &[f64], cache: &BnCache) -> (Feature, Vec<f64>, Vec<f64>) {
    let n = dy.cols() as f64;
    let mut dgamma = vec![0.0; dy.c];
    let mut dbeta = vec![0.0; dy.c];
    let mut dx = Feature::zeros(dy.c, dy.b, dy.h, dy.w);
    for c in 0..dy.c {
        let dyr = dy.data.row(c);
        let xh = cache.xhat.row(c);
        let sum_dy: f64 = dyr.sum();
        let sum_dy_xh: f64 = dyr.iter().zip(xh.iter()).map(|(a, b)| a * b).sum();
        dgamma[c] = sum_dy_xh;
        dbeta[c] = sum_dy;
        let scale = gamma[c] * cache.inv_std[c] / n;
        for i in 0..dyr.len() {
            dx.data[[c, i]] = scale * (n * dyr[i] - sum_dy - xh[i] * sum_dy_xh);
        }
    }
    (dx, dgamma, dbeta)
}

/// New running statistics: EMA with the given momentum.
pub fn bn_update_running(running: &[f64], batch: &[f64], momentum: f64) -> Vec<f64> {
    running
        .iter()
        .zip(batch)
        .map(|(&r, &b)| (1.0 - momentum) * r + momentum * b)
        .collect()
}

// ---------------------------------------------------------------------------
// ReLU / max-pool / sigmoid / concat
// ---------------------------------------------------------------------------

/// In-place rectifier; the mask records which entries stayed positive.
pub fn relu_forward(mut x: Feature) -> (Feature, Vec<bool>) {
    let mut mask = vec![false; x.c * x.cols()];
    let cols = x.cols();
    for c in 0..x.c {
        for i in 0..cols {
            let v = x.data[[c, i]];
            if v > 0.0 {
                mask[c * cols + i] = true;
            } else {
                x.data[[c, i]] = 0.0;
            }
        }
    }
    (x, mask)
}

pub fn relu_backward(dy: &mut Feature, mask: &[bool]) {
    let cols = dy.cols();
    for c in 0..dy.c {
        for i in 0..cols {
            if !mask[c * cols + i] {
                dy.data[[c, i]] = 0.0;
            }
        }
    }
}

/// 2×2 stride-2 max pooling; ties resolve to the first maximum in raster
/// order, recorded per (channel, output pixel) as the source column.
pub fn maxpool_forward(x: &Feature) -> (Feature, Vec<u32>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Feature::zeros(x.c, x.b, oh, ow);
    let mut arg = vec![0u32; x.c * out.cols()];
    for c in 0..x.c {
        for b in 0..x.b {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_col = 0usize;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let col = x.col(b, 2 * y + dy, 2 * xx + dx);
                            let v = x.data[[c, col]];
                            if v > best {
                                best = v;
                                best_col = col;
                            }
                        }
                    }
                    let ocol = out.col(b, y, xx);
                    out.data[[c, ocol]] = best;
                    arg[c * out.cols() + ocol] = best_col as u32;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(
    dy: &Feature,
    arg: &[u32],
    in_c: usize,
    in_b: usize,
    in_h: usize,
    in_w: usize,
) -> Feature {
    let mut dx = Feature::zeros(in_c, in_b, in_h, in_w);
    let cols = dy.cols();
    for c in 0..dy.c {
        for i in 0..cols {
            dx.data[[c, arg[c * cols + i] as usize]] += dy.data[[c, i]];
        }
    }
    dx
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_forward(x: &Feature) -> Feature {
    let mut out = Feature::zeros(x.c, x.b, x.h, x.w);
    for (o, &i) in out.data.iter_mut().zip(x.data.iter()) {
        *o = sigmoid(i);
    }
    out
}

/// Channel concatenation, first operand on top.
pub fn concat_forward(a: &Feature, b: &Feature) -> Feature {
    debug_assert_eq!((a.b, a.h, a.w), (b.b, b.h, b.w));
    let mut out = Feature::zeros(a.c + b.c, a.b, a.h, a.w);
    out.data.slice_mut(ndarray::s![..a.c, ..]).assign(&a.data);
    out.data.slice_mut(ndarray::s![a.c.., ..]).assign(&b.data);
    out
}

pub fn concat_backward(dy: &Feature, c_a: usize) -> (Feature, Feature) {
    let da = Feature {
        c: c_a,
        b: dy.b,
        h: dy.h,
        w: dy.w,
        data: dy.data.slice(ndarray::s![..c_a, ..]).to_owned(),
    };
    let db = Feature {
        c: dy.c - c_a,
        b: dy.b,
        h: dy.h,
        w: dy.w,
        data: dy.data.slice(ndarray::s![c_a.., ..]).to_owned(),
    };
    (da, db)
}

// ---------------------------------------------------------------------------
