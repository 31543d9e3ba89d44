//! Slice preparation and whole-volume inference.
//!
//! Volumes rarely match the network's square input size, so every slice is
//! min-max normalized and then centered on an `S`-by-`S` canvas (padding with
//! zeros, cropping symmetrically when the slice is larger). Inference runs
//! the network over every slice along an anatomical axis and reassembles the
//! per-structure probability maps into volumes on the original grid.

use crate::error::{Error, Result};
use crate::network::model::{forward, Mode, TrainSample};
use crate::network::{NetworkParams, NetworkSpec};
use crate::volume::{
    extract_label_slice, extract_slice, insert_slice, Axis, LabelVolume, ProbabilityStack,
    ScalarVolume, Slice2D,
};

/// Min-max normalizes a slice to `[0, 1]`. A constant slice (including all
/// zeros outside the head) maps to all zeros.
pub fn normalize_slice(slice: &Slice2D) -> Result<Slice2D> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &slice.values {
        if !v.is_finite() {
            return Err(Error::Validation(format!(
                "slice {:?}/{} contains a non-finite intensity",
                slice.axis, slice.index
            )));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut out = slice.clone();
    if hi > lo {
        let inv = 1.0 / (hi - lo);
        for v in &mut out.values {
            *v = (*v - lo) * inv;
        }
    } else {
        out.values.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(out)
}

/// Centers `slice` on an `s`-by-`s` canvas. Smaller slices are zero-padded;
/// larger ones are cropped symmetrically (extra pixel toward the high end).
pub fn embed_center(slice: &Slice2D, s: usize) -> Slice2D {
    let du = (s as isize - slice.width as isize).div_euclid(2);
    let dv = (s as isize - slice.height as isize).div_euclid(2);
    let mut values = vec![0.0; s * s];
    for v in 0..s {
        let sv = v as isize - dv;
        if sv < 0 || sv >= slice.height as isize {
            continue;
        }
        for u in 0..s {
            let su = u as isize - du;
            if su < 0 || su >= slice.width as isize {
                continue;
            }
            values[v * s + u] = slice.values[sv as usize * slice.width + su as usize];
        }
    }
    Slice2D {
        axis: slice.axis,
        index: slice.index,
        width: s,
        height: s,
        values,
    }
}

/// Inverse of [`embed_center`]: recovers a `width`-by-`height` slice from the
/// model canvas. Regions that fell outside the canvas come back as zero.
pub fn extract_center(canvas: &Slice2D, width: usize, height: usize) -> Slice2D {
    let s = canvas.width;
    debug_assert_eq!(canvas.width, canvas.height);
    let du = (s as isize - width as isize).div_euclid(2);
    let dv = (s as isize - height as isize).div_euclid(2);
    let mut values = vec![0.0; width * height];
    for v in 0..height {
        let cv = v as isize + dv;
        if cv < 0 || cv >= s as isize {
            continue;
        }
        for u in 0..width {
            let cu = u as isize + du;
            if cu < 0 || cu >= s as isize {
                continue;
            }
            values[v * width + u] = canvas.values[cv as usize * s + cu as usize];
        }
    }
    Slice2D {
        axis: canvas.axis,
        index: canvas.index,
        width,
        height,
        values,
    }
}

/// Builds the per-slice training set for one anatomical axis: normalized MRI
/// slices paired with one binary mask per structure (label `n` feeds mask
/// `n-1`), all centered on the network canvas.
pub fn volume_samples(
    mri: &ScalarVolume,
    labels: &LabelVolume,
    axis: Axis,
    spec: &NetworkSpec,
) -> Result<Vec<TrainSample>> {
    spec.validate()?;
    mri.header.check_same_grid(&labels.header, "label volume")?;
    let s = spec.input_size;
    let count = mri.header.dims[axis.fixed_dim()];
    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let image = embed_center(&normalize_slice(&extract_slice(mri, axis, index)?)?, s);
        let label_slice = extract_label_slice(labels, axis, index)?;
        let masks = (1..=spec.degree)
            .map(|n| {
                let mut mask = Slice2D {
                    axis,
                    index,
                    width: label_slice.width,
                    height: label_slice.height,
                    values: label_slice
                        .labels
                        .iter()
                        .map(|&l| if l as usize == n { 1.0 } else { 0.0 })
                        .collect(),
                };
                mask = embed_center(&mask, s);
                mask
            })
            .collect();
        samples.push(TrainSample { image, masks });
    }
    Ok(samples)
}

/// Runs slice-wise inference along all three anatomical axes and returns one
/// probability stack per axis (axial, sagittal, coronal order). Each stack
/// holds `degree` probability volumes on the input grid.
pub fn infer_volume(
    params_by_axis: &[NetworkParams; 3],
    mri: &ScalarVolume,
) -> Result<[ProbabilityStack; 3]> {
    let degree = params_by_axis[0].spec.degree;
    if params_by_axis.iter().any(|p| p.spec.degree != degree) {
        return Err(Error::Validation(format!(
            "axis networks disagree on structure count: {:?}",
            params_by_axis
                .iter()
                .map(|p| p.spec.degree)
                .collect::<Vec<_>>()
        )));
    }
    let dims = mri.header.dims;
    let spacing = mri.header.spacing;
    let mut stacks = Vec::with_capacity(3);
    for (axis, params) in Axis::ALL.into_iter().zip(params_by_axis) {
        let s = params.spec.input_size;
        let mut maps: Vec<ScalarVolume> = (0..degree)
            .map(|_| ScalarVolume::zeros(dims, spacing))
            .collect();
        for index in 0..dims[axis.fixed_dim()] {
            let raw = extract_slice(mri, axis, index)?;
            let (w, h) = (raw.width, raw.height);
            let canvas = embed_center(&normalize_slice(&raw)?, s);
            let outputs = forward(params, &canvas, Mode::Eval)?;
            for (map, out) in maps.iter_mut().zip(&outputs) {
                insert_slice(map, &extract_center(out, w, h))?;
            }
        }
        stacks.push(ProbabilityStack { axis, maps });
    }
    let mut it = stacks.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

// ---------------------------------------------------------------------------
