//! Whole-network forward pass, loss, and backpropagation.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::network::ops::{
    bn_backward, bn_forward_eval, bn_forward_train, bn_update_running, concat_backward,
    concat_forward, conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward,
    maxpool_backward, maxpool_forward, relu_backward, relu_forward, sigmoid_forward, BnCache,
    ConvCache, DeconvCache, Feature, BN_MOMENTUM,
};
use crate::network::NetworkParams;
use crate::volume::Slice2D;

/// Clamp for log arguments in the cross-entropy.
const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One training example: a normalized input slice and one binary mask per
/// decoder track (mask n marks structure label n).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Slice2D,
    pub masks: Vec<Slice2D>,
}

// ---------------------------------------------------------------------------
// Forward with caches
// ---------------------------------------------------------------------------

struct ConvModCache {
    conv: ConvCache,
    bn: BnCache,
    relu: Vec<bool>,
}

struct EncCache {
    cm: ConvModCache,
    pool_arg: Vec<u32>,
    pre_pool: (usize, usize, usize, usize),
}

struct DecCache {
    deconv: DeconvCache,
    bn_a: BnCache,
    relu_a: Vec<bool>,
    conv: ConvCache,
    bn_b: BnCache,
    relu_b: Vec<bool>,
}

struct TrackCache {
    decs: Vec<DecCache>,      // stored deepest-first (j = depth+1 … 1)
    skips: Vec<ConvModCache>, // stored j = depth … 1
    map: ConvCache,
}

pub(crate) struct GraphCaches {
    enc: Vec<EncCache>,
    tracks: Vec<TrackCache>,
}

/// Pending running-statistic refresh recorded during a train-mode forward.
pub(crate) struct StatUpdate {
    bn_prefix: String,
    mean: Vec<f64>,
    var: Vec<f64>,
}

pub(crate) struct ForwardOut {
    pub maps: Vec<Feature>,
    pub(crate) caches: Option<GraphCaches>,
    pub(crate) updates: Vec<StatUpdate>,
}

fn weight_view<'a>(params: &'a NetworkParams, name: &str) -> ArrayView2<'a, f64> {
    let meta = params.meta(name);
    let co = meta.shape[0];
    ArrayView2::from_shape((co, meta.len / co), params.view(name)).expect("contiguous weight")
}

#[allow(clippy::too_many_arguments)]
fn convmod_forward(
    params: &NetworkParams,
    conv_prefix: &str,
    bn_prefix: &str,
    k: usize,
    x: &Feature,
    train: bool,
    want_cache: bool,
    updates: &mut Vec<StatUpdate>,
) -> (Feature, Option<ConvModCache>) {
    let w = weight_view(params, &format!("{conv_prefix}.weight"));
    let bias = params.view(&format!("{conv_prefix}.bias"));
    let (z, conv_cache) = conv2d_forward(x, w, bias, k);
    let gamma = params.view(&format!("{bn_prefix}.gamma"));
    let beta = params.view(&format!("{bn_prefix}.beta"));
    let (y, bn_cache) = if train {
        let (y, cache, mean, var) = bn_forward_train(&z, gamma, beta);
        updates.push(StatUpdate {
            bn_prefix: bn_prefix.to_string(),
            mean,
            var,
        });
        (y, Some(cache))
    } else {
        let rm = params.view(&format!("{bn_prefix}.running_mean"));
        let rv = params.view(&format!("{bn_prefix}.running_var"));
        (bn_forward_eval(&z, gamma, beta, rm, rv), None)
    };
    let (y, mask) = relu_forward(y);
    let cache = if want_cache {
        Some(ConvModCache {
            conv: conv_cache,
            bn: bn_cache.expect("cache implies train mode"),
            relu: mask,
        })
    } else {
        None
    };
    (y, cache)
}

#[allow(clippy::too_many_arguments)]
fn decmod_forward(
    params: &NetworkParams,
    prefix: &str,
    k: usize,
    x: &Feature,
    train: bool,
    want_cache: bool,
    updates: &mut Vec<StatUpdate>,
) -> (Feature, Option<DecCache>) {
    let wname = format!("{prefix}.deconv.weight");
    let co = params.meta(&wname).shape[0];
    let (z, deconv_cache) = deconv2d_forward(
        x,
        params.view(&wname),
        params.view(&format!("{prefix}.deconv.bias")),
        co,
    );
    let gamma_a = params.view(&format!("{prefix}.bn_a.gamma"));
    let beta_a = params.view(&format!("{prefix}.bn_a.beta"));
    let (y, bn_a) = if train {
        let (y, cache, mean, var) = bn_forward_train(&z, gamma_a, beta_a);
        updates.push(StatUpdate {
            bn_prefix: format!("{prefix}.bn_a"),
            mean,
            var,
        });
        (y, Some(cache))
    } else {
        let rm = params.view(&format!("{prefix}.bn_a.running_mean"));
        let rv = params.view(&format!("{prefix}.bn_a.running_var"));
        (bn_forward_eval(&z, gamma_a, beta_a, rm, rv), None)
    };
    let (y, relu_a) = relu_forward(y);

    let w = weight_view(params, &format!("{prefix}.conv.weight"));
    let bias = params.view(&format!("{prefix}.conv.bias"));
    let (z2, conv_cache) = conv2d_forward(&y, w, bias, k);
    let gamma_b = params.view(&format!("{prefix}.bn_b.gamma"));
    let beta_b = params.view(&format!("{prefix}.bn_b.beta"));
    let (y2, bn_b) = if train {
        let (y2, cache, mean, var) = bn_forward_train(&z2, gamma_b, beta_b);
        updates.push(StatUpdate {
            bn_prefix: format!("{prefix}.bn_b"),
            mean,
            var,
        });
        (y2, Some(cache))
    } else {
        let rm = params.view(&format!("{prefix}.bn_b.running_mean"));
        let rv = params.view(&format!("{prefix}.bn_b.running_var"));
        (bn_forward_eval(&z2, gamma_b, beta_b, rm, rv), None)
    };
    let (y2, relu_b) = relu_forward(y2);
    let cache = if want_cache {
        Some(DecCache {
            deconv: deconv_cache,
            bn_a: bn_a.expect("cache implies train mode"),
            relu_a,
            conv: conv_cache,
            bn_b: bn_b.expect("cache implies train mode"),
            relu_b,
        })
    } else {
        None
    };
    (y2, cache)
}

/// Runs the whole graph on a `[1, B·S·S]` input feature.
pub(crate) fn run_network(
    params: &NetworkParams,
    x: Feature,
    train: bool,
    want_caches: bool,
) -> Result<ForwardOut> {
    let spec = &params.spec;
    let s = spec.input_size;
    if x.c != 1 || x.h != s || x.w != s {
        return Err(Error::Shape(format!(
            "input is {}×{}×{}, network expects 1×{s}×{s}",
            x.c, x.h, x.w
        )));
    }
    let d = spec.depth;
    let mut updates = Vec::new();
    let mut enc_caches = Vec::new();
    let mut pooled: Vec<Feature> = Vec::with_capacity(d + 1);

    let mut cur = x;
    for i in 1..=d + 1 {
        let (y, cm) = convmod_forward(
            params,
            &format!("enc{i}.conv"),
            &format!("enc{i}.bn"),
            spec.encoder_kernel,
            &cur,
            train,
            want_caches,
            &mut updates,
        );
        let pre = (y.c, y.b, y.h, y.w);
        let (p, arg) = maxpool_forward(&y);
        if want_caches {
            enc_caches.push(EncCache {
                cm: cm.expect("cache requested"),
                pool_arg: arg,
                pre_pool: pre,
            });
        }
        cur = p.clone();
        pooled.push(p);
    }
    drop(cur);

    let mut tracks = Vec::new();
    let mut maps = Vec::new();
    for n in 1..=spec.degree {
        let k = spec.track_kernel(n);
        let mut decs = Vec::new();
        let mut skips = Vec::new();
        let mut cur = pooled[d].clone();
        for j in (1..=d + 1).rev() {
            let (y, dc) = decmod_forward(
                params,
                &format!("track{n}.dec{j}"),
                k,
                &cur,
                train,
                want_caches,
                &mut updates,
            );
            if let Some(dc) = dc {
                decs.push(dc);
            }
            if j > 1 {
                let (sy, sc) = convmod_forward(
                    params,
                    &format!("track{n}.skip{}.conv", j - 1),
                    &format!("track{n}.skip{}.bn", j - 1),
                    k,
                    &pooled[j - 2],
                    train,
                    want_caches,
                    &mut updates,
                );
                if let Some(sc) = sc {
                    skips.push(sc);
                }
                cur = concat_forward(&y, &sy);
            } else {
                cur = y;
            }
        }
        let w = weight_view(params, &format!("track{n}.map.weight"));
        let bias = params.view(&format!("track{n}.map.bias"));
        let (z, map_cache) = conv2d_forward(&cur, w, bias, k);
        maps.push(sigmoid_forward(&z));
        if want_caches {
            tracks.push(TrackCache {
                decs,
                skips,
                map: map_cache,
            });
        }
    }

    let caches = want_caches.then_some(GraphCaches {
        enc: enc_caches,
        tracks,
    });
    Ok(ForwardOut {
        maps,
        caches,
        updates,
    })
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

fn accumulate(grads: &mut NetworkParams, name: &str, values: impl IntoIterator<Item = f64>) {
    for (dst, src) in grads.view_mut(name).iter_mut().zip(values) {
        *dst += src;
    }
}

fn add_feature(acc: &mut Option<Feature>, f: Feature) {
    match acc {
        Some(a) => a.data += &f.data,
        None => *acc = Some(f),
    }
}

/// Backpropagates per-track logit gradients through the graph,
/// accumulating parameter gradients.
pub(crate) fn run_backward(
    params: &NetworkParams,
    caches: &GraphCaches,
    dlogits: Vec<Feature>,
    grads: &mut NetworkParams,
) {
    let spec = params.spec.clone();
    let d = spec.depth;
    let mut dpooled: Vec<Option<Feature>> = (0..=d).map(|_| None).collect();

    for (t, dz) in dlogits.into_iter().enumerate() {
        let n = t + 1;
        let tc = &caches.tracks[t];
        let w_map = weight_view(params, &format!("track{n}.map.weight"));
        let (mut dy, dw, db) = conv2d_backward(&dz, w_map, &tc.map);
        accumulate(grads, &format!("track{n}.map.weight"), dw.iter().cloned());
        accumulate(grads, &format!("track{n}.map.bias"), db);

        for j in 1..=d + 1 {
            let prefix = format!("track{n}.dec{j}");
            let dc = &tc.decs[d + 1 - j];
            relu_backward(&mut dy, &dc.relu_b);
            let gamma_b = params.view(&format!("{prefix}.bn_b.gamma"));
            let (dzc, dgb, dbb) = bn_backward(&dy, gamma_b, &dc.bn_b);
            accumulate(grads, &format!("{prefix}.bn_b.gamma"), dgb);
            accumulate(grads, &format!("{prefix}.bn_b.beta"), dbb);
            let w_conv = weight_view(params, &format!("{prefix}.conv.weight"));
            let (mut dya, dwc, dbc) = conv2d_backward(&dzc, w_conv, &dc.conv);
            accumulate(grads, &format!("{prefix}.conv.weight"), dwc.iter().cloned());
            accumulate(grads, &format!("{prefix}.conv.bias"), dbc);
            relu_backward(&mut dya, &dc.relu_a);
            let gamma_a = params.view(&format!("{prefix}.bn_a.gamma"));
            let (dzd, dga, dba) = bn_backward(&dya, gamma_a, &dc.bn_a);
            accumulate(grads, &format!("{prefix}.bn_a.gamma"), dga);
            accumulate(grads, &format!("{prefix}.bn_a.beta"), dba);
            let (dx, dwd, dbd) = deconv2d_backward(
                &dzd,
                params.view(&format!("{prefix}.deconv.weight")),
                &dc.deconv,
            );
            accumulate(grads, &format!("{prefix}.deconv.weight"), dwd);
            accumulate(grads, &format!("{prefix}.deconv.bias"), dbd);

            if j == d + 1 {
                add_feature(&mut dpooled[d], dx);
            } else {
                let (ddec, dskip) = concat_backward(&dx, spec.dec_out(j + 1));
                let sp = format!("track{n}.skip{j}");
                let sc = &tc.skips[d - j];
                let mut ds = dskip;
                relu_backward(&mut ds, &sc.relu);
                let gamma_s = params.view(&format!("{sp}.bn.gamma"));
                let (dzs, dgs, dbs) = bn_backward(&ds, gamma_s, &sc.bn);
                accumulate(grads, &format!("{sp}.bn.gamma"), dgs);
                accumulate(grads, &format!("{sp}.bn.beta"), dbs);
                let w_s = weight_view(params, &format!("{sp}.conv.weight"));
                let (dxs, dws, dbs2) = conv2d_backward(&dzs, w_s, &sc.conv);
                accumulate(grads, &format!("{sp}.conv.weight"), dws.iter().cloned());
                accumulate(grads, &format!("{sp}.conv.bias"), dbs2);
                add_feature(&mut dpooled[j - 1], dxs);
                dy = ddec;
            }
        }
    }

    let mut carry: Option<Feature> = None;
    for i in (1..=d + 1).rev() {
        let mut g = dpooled[i - 1]
            .take()
            .expect("every pooled output feeds the graph");
        if let Some(c) = carry.take() {
            g.data += &c.data;
        }
        let ec = &caches.enc[i - 1];
        let (pc, pb, ph, pw) = ec.pre_pool;
        let mut dpre = maxpool_backward(&g, &ec.pool_arg, pc, pb, ph, pw);
        relu_backward(&mut dpre, &ec.cm.relu);
        let gamma = params.view(&format!("enc{i}.bn.gamma"));
        let (dz, dg, dbta) = bn_backward(&dpre, gamma, &ec.cm.bn);
        accumulate(grads, &format!("enc{i}.bn.gamma"), dg);
        accumulate(grads, &format!("enc{i}.bn.beta"), dbta);
        let w = weight_view(params, &format!("enc{i}.conv.weight"));
        let (dx, dw, db) = conv2d_backward(&dz, w, &ec.cm.conv);
        accumulate(grads, &format!("enc{i}.conv.weight"), dw.iter().cloned());
        accumulate(grads, &format!("enc{i}.conv.bias"), db);
        if i > 1 {
            carry = Some(dx);
        }
    }
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

fn batch_to_feature(batch: &[TrainSample], s: usize) -> Result<Feature> {
    let b = batch.len();
    let mut x = Feature::zeros(1, b, s, s);
    for (bi, sample) in batch.iter().enumerate() {
        if sample.image.width != s || sample.image.height != s {
            return Err(Error::Shape(format!(
                "sample {bi} is {}×{}, network expects {s}×{s}",
                sample.image.width, sample.image.height
            )));
        }
        let base = bi * s * s;
        for (i, &v) in sample.image.values.iter().enumerate() {
            x.data[[0, base + i]] = v;
        }
    }
    Ok(x)
}

fn batch_targets(batch: &[TrainSample], degree: usize, s: usize) -> Result<Vec<Vec<f64>>> {
    let b = batch.len();
    let mut targets = vec![vec![0.0; b * s * s]; degree];
    for (bi, sample) in batch.iter().enumerate() {
        if sample.masks.len() != degree {
            return Err(Error::Validation(format!(
                "sample {bi} carries {} masks, network has {degree} tracks",
                sample.masks.len()
            )));
        }
        for (t, mask) in sample.masks.iter().enumerate() {
            if mask.width != s || mask.height != s {
                return Err(Error::Shape(format!(
                    "mask {t} of sample {bi} is {}×{}, expected {s}×{s}",
                    mask.width, mask.height
                )));
            }
            let base = bi * s * s;
            for (i, &v) in mask.values.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Validation(format!(
                        "mask {t} of sample {bi} holds non-binary value {v}"
                    )));
                }
                targets[t][base + i] = v;
            }
        }
    }
    Ok(targets)
}

fn bce_terms(maps: &[Feature], targets: &[Vec<f64>]) -> (f64, f64) {
    let mut total = 0.0;
    let mut count = 0.0;
    for (map, tgt) in maps.iter().zip(targets) {
        for (p, &t) in map.data.iter().zip(tgt.iter()) {
            total += -t * p.max(LOG_EPS).ln() - (1.0 - t) * (1.0 - p).max(LOG_EPS).ln();
            count += 1.0;
        }
    }
    (total, count)
}

/// Mean binary cross-entropy of a batch without touching any state; used
/// for validation losses and finite-difference checks.
pub fn batch_loss(params: &NetworkParams, batch: &[TrainSample], mode: Mode) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let s = params.spec.input_size;
    let x = batch_to_feature(batch, s)?;
    let targets = batch_targets(batch, params.spec.degree, s)?;
    let out = run_network(params, x, mode == Mode::Train, false)?;
    let (total, count) = bce_terms(&out.maps, &targets);
    Ok(total / count)
}

/// Train-mode forward + backward over a batch. Returns the mean binary
/// cross-entropy and a gradient buffer shaped like the parameters; batch
/// statistics are folded into the running estimates as a side effect.
pub fn loss_and_gradients(
    params: &mut NetworkParams,
    batch: &[TrainSample],
) -> Result<(f64, NetworkParams)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let s = params.spec.input_size;
    let x = batch_to_feature(batch, s)?;
    let targets = batch_targets(batch, params.spec.degree, s)?;
    let out = run_network(params, x, true, true)?;
    let (total, count) = bce_terms(&out.maps, &targets);
    let loss = total / count;

    // dL/dz = (σ(z) − t) / count for every logit.
    let mut dlogits = Vec::with_capacity(out.maps.len());
    for (map, tgt) in out.maps.iter().zip(&targets) {
        let mut dz = Feature::zeros(map.c, map.b, map.h, map.w);
        for ((d, &p), &t) in dz.data.iter_mut().zip(map.data.iter()).zip(tgt.iter()) {
            *d = (p - t) / count;
        }
        dlogits.push(dz);
    }

    let mut grads = params.zeros_like();
    run_backward(
        params,
        out.caches.as_ref().expect("caches requested"),
        dlogits,
        &mut grads,
    );

    for u in &out.updates {
        let new_mean = bn_update_running(
            params.view(&format!("{}.running_mean", u.bn_prefix)),
            &u.mean,
            BN_MOMENTUM,
        );
        params
            .view_mut(&format!("{}.running_mean", u.bn_prefix))
            .copy_from_slice(&new_mean);
        let new_var = bn_update_running(
            params.view(&format!("{}.running_var", u.bn_prefix)),
            &u.var,
            BN_MOMENTUM,
        );
        params
            .view_mut(&format!("{}.running_var", u.bn_prefix))
            .copy_from_slice(&new_var);
    }
    Ok((loss, grads))
}

/// Runs one slice through the network and returns the per-track probability
/// maps as slices with the same orientation tag as the input.
pub fn forward(params: &NetworkParams, slice: &Slice2D, mode: Mode) -> Result<Vec<Slice2D>> {
    let s = params.spec.input_size;
    if slice.width != s || slice.height != s {
        return Err(Error::Shape(format!(
            "slice is {}×{}, network expects {s}×{s}",
            slice.width, slice.height
        )));
    }
    let mut x = Feature::zeros(1, 1, s, s);
    for (i, &v) in slice.values.iter().enumerate() {
        x.data[[0, i]] = v;
    }
    let out = run_network(params, x, mode == Mode::Train, false)?;
    Ok(out
        .maps
        .into_iter()
        .map(|m| Slice2D {
            axis: slice.axis,
            index: slice.index,
            width: s,
            height: s,
            values: m.data.into_raw_vec_and_offset().0,
        })
        .collect())
}

// ---------------------------------------------------------------------------
