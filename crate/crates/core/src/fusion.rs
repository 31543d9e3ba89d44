//! Probability-map labelling and three-direction label fusion.
//!
//! Each per-direction network emits `N` probability maps per slice. Labelling
//! turns those into a discrete slice: a pixel takes the track index with the
//! highest probability when that maximum clears a background threshold ε,
//! otherwise background. The three directional label volumes (axial,
//! sagittal, coronal) are then merged: where at least two directions agree
//! the majority label wins; where all three disagree, the label with the
//! highest count over the in-plane neighborhood window of each directional
//! volume (pooled across the three) wins. All ties break toward the smallest
//! label, and background participates like any other label.
//!
//! An optional mask restricts nonzero output to voxels inside allowed tissue
//! regions (typically grey matter) — a removal-only post-processing step.

use crate::error::{Error, Result};
use crate::volume::{Axis, LabelSlice2D, LabelVolume, ProbabilityStack, Slice2D};

/// Parameters of the labelling and fusion stages.
#[derive(Debug, Clone)]
pub struct FusionConfig {
    /// Background threshold ε of the argmax labelling.
    pub epsilon: f64,
    /// In-plane neighborhood window edge (odd); 3 → the 3×3 window.
    pub neighborhood: usize,
    /// When present, output labels survive only where the mask carries an
    /// allowed label.
    pub gm_mask: Option<GmMask>,
}

/// Allowed-region mask for the post-fusion elimination step.
#[derive(Debug, Clone)]
pub struct GmMask {
    pub mask: LabelVolume,
    /// Mask labels inside which segmentation output is kept.
    pub allowed: Vec<u8>,
}

impl Default for FusionConfig {
    fn default() -> FusionConfig {
        FusionConfig {
            epsilon: 0.3,
            neighborhood: 3,
            gm_mask: None,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Validation(format!(
                "epsilon must lie in (0,1), got {}",
                self.epsilon
            )));
        }
        if self.neighborhood % 2 == 0 || self.neighborhood == 0 {
            return Err(Error::Validation(format!(
                "neighborhood window must be odd and ≥ 1, got {}",
                self.neighborhood
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Thresholded argmax labelling
// ---------------------------------------------------------------------------

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Validation(format!(
            "epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    Ok(())
}

#[inline]
fn argmax_label(probs: impl Iterator<Item = f64>, epsilon: f64) -> Result<u8> {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0usize;
    let mut n = 0usize;
    for p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!("probability {p} outside [0,1]")));
        }
        // Strict comparison keeps the smallest track index on exact ties.
        if p > best {
            best = p;
            arg = n;
        }
        n += 1;
    }
    Ok(if best >= epsilon { (arg + 1) as u8 } else { 0 })
}

/// Labels one slice from its `N` per-track probability maps: pixel =
/// argmax track (1-based) where the maximum reaches ε, else 0. Ties break to
/// the smallest track.
pub fn label_slice(maps: &[Slice2D], epsilon: f64) -> Result<LabelSlice2D> {
    check_epsilon(epsilon)?;
    let first = maps
        .first()
        .ok_or_else(|| Error::Validation("label_slice requires at least one map".into()))?;
    if maps.len() > 255 {
        return Err(Error::Validation(format!(
            "{} tracks exceed the u8 label range",
            maps.len()
        )));
    }
    for m in maps {
        if (m.width, m.height, m.axis, m.index)
            != (first.width, first.height, first.axis, first.index)
        {
            return Err(Error::Shape(
                "probability maps of one slice must share axis, index and size".into(),
            ));
        }
    }
    let mut labels = Vec::with_capacity(first.values.len());
    for i in 0..first.values.len() {
        labels.push(argmax_label(maps.iter().map(|m| m.values[i]), epsilon)?);
    }
    Ok(LabelSlice2D {
        axis: first.axis,
        index: first.index,
        width: first.width,
        height: first.height,
        labels,
    })
}

/// Volume-level equivalent of applying [`label_slice`] to every slice of a
/// probability stack (the labelling rule is pointwise, so the composition
/// collapses to a per-voxel argmax).
pub fn label_stack(stack: &ProbabilityStack, epsilon: f64) -> Result<LabelVolume> {
    check_epsilon(epsilon)?;
    let degree = stack.degree();
    if degree == 0 {
        return Err(Error::Validation("probability stack has no maps".into()));
    }
    if degree > 255 {
        return Err(Error::Validation(format!(
            "{degree} tracks exceed the u8 label range"
        )));
    }
    let first = &stack.maps[0];
    for m in &stack.maps[1..] {
        first.header.check_same_grid(&m.header, "label_stack")?;
    }
    let count = first.header.voxel_count();
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        labels.push(argmax_label(stack.maps.iter().map(|m| m.data[i]), epsilon)?);
    }
    let header =
        crate::volume::VolumeHeader::label(first.header.dims, first.header.spacing, degree as u8);
    LabelVolume::from_data(header, labels)
}

// ---------------------------------------------------------------------------
// Three-direction fusion
// ---------------------------------------------------------------------------

/// Merges the axial, sagittal and coronal segmentations of one volume.
///
/// Majority first: wherever at least two of the three agree, that label wins
/// outright. Only at full-disagreement voxels does the neighborhood vote run:
/// each directional volume contributes its in-plane window (at the voxel's
/// own slice, along that volume's native axis), the counts are pooled, and
/// the most frequent label wins with ties to the smallest label.
pub fn fuse_directions(
    r_a: &LabelVolume,
    r_s: &LabelVolume,
    r_c: &LabelVolume,
    cfg: &FusionConfig,
) -> Result<LabelVolume> {
    cfg.validate()?;
    r_a.header.check_same_grid(&r_s.header, "fuse_directions")?;
    r_a.header.check_same_grid(&r_c.header, "fuse_directions")?;
    if r_a.n_labels() != r_s.n_labels() || r_a.n_labels() != r_c.n_labels() {
        return Err(Error::Shape(format!(
            "directional volumes disagree on n_labels: {}, {}, {}",
            r_a.n_labels(),
            r_s.n_labels(),
            r_c.n_labels()
        )));
    }
    if let Some(gm) = &cfg.gm_mask {
        r_a.header
            .check_same_grid(&gm.mask.header, "fuse_directions gm mask")?;
    }

    let dims = r_a.header.dims;
    let n_labels = r_a.n_labels() as usize;
    let mut out = r_a.clone();
    let mut counts = vec![0u32; n_labels + 1];

    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let la = r_a.at(x, y, z);
                let ls = r_s.at(x, y, z);
                let lc = r_c.at(x, y, z);
                let label = if la == ls || la == lc {
                    la
                } else if ls == lc {
                    ls
                } else {
                    counts.iter_mut().for_each(|c| *c = 0);
                    pool_window(r_a, Axis::Axial, [x, y, z], cfg.neighborhood, &mut counts);
                    pool_window(
                        r_s,
                        Axis::Sagittal,
                        [x, y, z],
                        cfg.neighborhood,
                        &mut counts,
                    );
                    pool_window(r_c, Axis::Coronal, [x, y, z], cfg.neighborhood, &mut counts);
                    let mut best = 0u32;
                    let mut arg = 0u8;
                    for (l, &c) in counts.iter().enumerate() {
                        if c > best {
                            best = c;
                            arg = l as u8;
                        }
                    }
                    arg
                };
                out.set(x, y, z, label);
            }
        }
    }

    if let Some(gm) = &cfg.gm_mask {
        eliminate_outside(&mut out, gm);
    }
    Ok(out)
}

/// Accumulates label counts over the in-plane `window`×`window` neighborhood
/// of `voxel` in `vol`, along `axis`. Out-of-grid samples contribute nothing.
fn pool_window(
    vol: &LabelVolume,
    axis: Axis,
    voxel: [usize; 3],
    window: usize,
    counts: &mut [u32],
) {
    let dims = vol.header.dims;
    let half = (window / 2) as isize;
    let (du, dv) = axis.plane_dims();
    let fixed = axis.fixed_dim();
    for ov in -half..=half {
        let v = voxel[dv] as isize + ov;
        if v < 0 || v >= dims[dv] as isize {
            continue;
        }
        for ou in -half..=half {
            let u = voxel[du] as isize + ou;
            if u < 0 || u >= dims[du] as isize {
                continue;
            }
            let mut p = [0usize; 3];
            p[du] = u as usize;
            p[dv] = v as usize;
            p[fixed] = voxel[fixed];
            counts[vol.at(p[0], p[1], p[2]) as usize] += 1;
        }
    }
}

fn eliminate_outside(out: &mut LabelVolume, gm: &GmMask) {
    let mut allowed = [false; 256];
    for &l in &gm.allowed {
        allowed[l as usize] = true;
    }
    for (o, &m) in out.data.iter_mut().zip(gm.mask.data.iter()) {
        if !allowed[m as usize] {
            *o = 0;
        }
    }
}

/// Full aggregation: label each directional probability stack with ε, then
/// fuse. Exactly equals performing the two steps manually.
pub fn probability_fuse_infer(
    stacks: &[ProbabilityStack; 3],
    cfg: &FusionConfig,
) -> Result<LabelVolume> {
    let mut by_axis: [Option<&ProbabilityStack>; 3] = [None, None, None];
    for s in stacks {
        let slot = match s.axis {
            Axis::Axial => 0,
            Axis::Sagittal => 1,
            Axis::Coronal => 2,
        };
        if by_axis[slot].is_some() {
            return Err(Error::Validation(format!(
                "duplicate {} stack in probability fusion",
                s.axis
            )));
        }
        by_axis[slot] = Some(s);
    }
    let [Some(sa), Some(ss), Some(sc)] = by_axis else {
        return Err(Error::Validation(
            "probability fusion needs one stack per axis".into(),
        ));
    };
    if sa.degree() != ss.degree() || sa.degree() != sc.degree() {
        return Err(Error::Shape(format!(
            "stacks disagree on track count: {}, {}, {}",
            sa.degree(),
            ss.degree(),
            sc.degree()
        )));
    }
    let r_a = label_stack(sa, cfg.epsilon)?;
    let r_s = label_stack(ss, cfg.epsilon)?;
    let r_c = label_stack(sc, cfg.epsilon)?;
    fuse_directions(&r_a, &r_s, &r_c, cfg)
}

// ---------------------------------------------------------------------------
