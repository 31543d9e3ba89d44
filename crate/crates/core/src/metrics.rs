//! Segmentation overlap and electric-field comparison metrics.
//!
//! Segmentation quality is measured per structure label with the Dice
//! coefficient (reported as a percentage) and the Hausdorff distance in mm.
//! Field agreement is measured over tissue regions with a normalized mean
//! absolute difference ("global error") and the relative difference of the
//! region maxima ("local error"), conventionally after capping both fields at
//! their 99.9th percentile to suppress staircasing singularities at tissue
//! boundaries.
//!
//! The Hausdorff implementation uses an exact three-pass squared Euclidean
//! distance transform (one 1D lower-envelope transform per axis, weighted by
//! voxel spacing), so it matches a brute-force O(n²) scan exactly while
//! staying O(n) per volume.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ScalarVolume};

/// Percentile used by the capping post-processing step.
pub const DEFAULT_PERCENTILE: f64 = 99.9;

// ---------------------------------------------------------------------------
// Dice
// ---------------------------------------------------------------------------

/// Dice overlap of `label` between two segmentations, in percent:
/// `2|A∩B| / (|A|+|B|) × 100`. When both masks are empty the structures agree
/// vacuously and the result is defined as 100.
pub fn dice(r: &LabelVolume, r0: &LabelVolume, label: u8) -> Result<f64> {
    r.header.check_same_grid(&r0.header, "dice")?;
    let mut a = 0u64;
    let mut b = 0u64;
    let mut ab = 0u64;
    for (&x, &y) in r.data.iter().zip(r0.data.iter()) {
        let in_a = x == label;
        let in_b = y == label;
        a += in_a as u64;
        b += in_b as u64;
        ab += (in_a && in_b) as u64;
    }
    if a + b == 0 {
        return Ok(100.0);
    }
    Ok(200.0 * ab as f64 / (a + b) as f64)
}

/// Mean Dice over all foreground labels `1..=n_labels` of the reference
/// volume `r0`.
pub fn mean_foreground_dice(r: &LabelVolume, r0: &LabelVolume) -> Result<f64> {
    let n = r0.n_labels();
    if n == 0 {
        return Err(Error::UndefinedMetric(
            "reference volume has no foreground labels".into(),
        ));
    }
    let mut acc = 0.0;
    for label in 1..=n {
        acc += dice(r, r0, label)?;
    }
    Ok(acc / n as f64)
}

// ---------------------------------------------------------------------------
// Hausdorff
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HausdorffMode {
    /// max over a∈A of the distance from a to the nearest point of B.
    Directed,
    /// max of the two directed distances; a metric on nonempty voxel sets.
    Symmetric,
}

/// Hausdorff distance between the `label` masks of two segmentations, in mm
/// (voxel centers scaled by the header spacing). Exact.
pub fn hausdorff(r: &LabelVolume, r0: &LabelVolume, label: u8, mode: HausdorffMode) -> Result<f64> {
    r.header.check_same_grid(&r0.header, "hausdorff")?;
    let dims = r.header.dims;
    let spacing = r.header.spacing;
    let a: Vec<bool> = r.data.iter().map(|&v| v == label).collect();
    let b: Vec<bool> = r0.data.iter().map(|&v| v == label).collect();
    if !a.iter().any(|&m| m) || !b.iter().any(|&m| m) {
        return Err(Error::UndefinedMetric(format!(
            "hausdorff undefined: label {label} mask empty in at least one volume"
        )));
    }
    let d_ab = directed_sq_max(&a, &b, dims, spacing);
    match mode {
        HausdorffMode::Directed => Ok(d_ab.sqrt()),
        HausdorffMode::Symmetric => {
            let d_ba = directed_sq_max(&b, &a, dims, spacing);
            Ok(d_ab.max(d_ba).sqrt())
        }
    }
}

/// Maximum over source voxels of the squared distance to the target set.
fn directed_sq_max(source: &[bool], target: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> f64 {
    let dist_sq = edt_sq(target, dims, spacing);
    source
        .iter()
        .zip(dist_sq.iter())
        .filter(|(&s, _)| s)
        .map(|(_, &d)| d)
        .fold(0.0, f64::max)
}

/// Large finite stand-in for "no feature anywhere on this line"; any real
/// squared distance beats it, so it never survives into a final result when
/// the target set is nonempty.
const FAR: f64 = 1e30;

/// Exact squared Euclidean distance transform: for every voxel, the squared
/// mm distance to the nearest `true` voxel (0 when the voxel itself is set).
fn edt_sq(mask: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let [nx, ny, nz] = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut d: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { FAR }).collect();

    let n_max = nx.max(ny).max(nz);
    let mut line = vec![0.0; n_max];
    let mut out = vec![0.0; n_max];
    let mut v = vec![0usize; n_max];
    let mut z_env = vec![0.0; n_max + 1];

    // x pass
    for zz in 0..nz {
        for yy in 0..ny {
            for xx in 0..nx {
                line[xx] = d[idx(xx, yy, zz)];
            }
            dt1d(&line[..nx], spacing[0], &mut out, &mut v, &mut z_env);
            for xx in 0..nx {
                d[idx(xx, yy, zz)] = out[xx];
            }
        }
    }
    // y pass
    for zz in 0..nz {
        for xx in 0..nx {
            for yy in 0..ny {
                line[yy] = d[idx(xx, yy, zz)];
            }
            dt1d(&line[..ny], spacing[1], &mut out, &mut v, &mut z_env);
            for yy in 0..ny {
                d[idx(xx, yy, zz)] = out[yy];
            }
        }
    }
    // z pass
    for yy in 0..ny {
        for xx in 0..nx {
            for zz in 0..nz {
                line[zz] = d[idx(xx, yy, zz)];
            }
            dt1d(&line[..nz], spacing[2], &mut out, &mut v, &mut z_env);
            for zz in 0..nz {
                d[idx(xx, yy, zz)] = out[zz];
            }
        }
    }
    d
}

/// 1D lower-envelope distance transform (Felzenszwalb & Huttenlocher) with
/// sample positions `i·s`: `out[q] = min_p ((q−p)²·s² + f[p])`.
fn dt1d(f: &[f64], s: f64, out: &mut [f64], v: &mut [usize], z_env: &mut [f64]) {
    let n = f.len();
    let s2 = s * s;
    let mut k = 0usize;
    v[0] = 0;
    z_env[0] = f64::NEG_INFINITY;
    z_env[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            // Abscissa where the parabolas rooted at p and q cross.
            let cross = ((q * q - p * p) as f64 * s2 + f[q] - f[p]) / (2.0 * s2 * (q - p) as f64);
            if cross <= z_env[k] {
                if k == 0 {
                    // q dominates everywhere seen so far.
                    v[0] = q;
                    z_env[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z_env[k] = cross;
                z_env[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        let x = q as f64;
        while z_env[k + 1] < x {
            k += 1;
        }
        let dq = (x - v[k] as f64) * s;
        out[q] = dq * dq + f[v[k]];
    }
}

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

/// Flat indices of voxels whose mask label is in `labels`.
fn region_indices(mask: &LabelVolume, labels: &[u8]) -> Vec<usize> {
    let mut in_set = [false; 256];
    for &l in labels {
        in_set[l as usize] = true;
    }
    mask.data
        .iter()
        .enumerate()
        .filter(|(_, &l)| in_set[l as usize])
        .map(|(i, _)| i)
        .collect()
}

// ---------------------------------------------------------------------------
// Percentile capping
// ---------------------------------------------------------------------------

/// q-th percentile (linear interpolation between order statistics) of `e`
/// over the region, plus a copy of `e` with region values above it clamped.
pub fn percentile_cap(
    e: &ScalarVolume,
    mask: &LabelVolume,
    labels: &[u8],
    q: f64,
) -> Result<(f64, ScalarVolume)> {
    e.header.check_same_grid(&mask.header, "percentile_cap")?;
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::Validation(format!(
            "percentile {q} outside [0, 100]"
        )));
    }
    let region = region_indices(mask, labels);
    if region.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "percentile undefined: region {labels:?} is empty"
        )));
    }
    let mut values: Vec<f64> = region.iter().map(|&i| e.data[i]).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = q / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let cap = values[lo] + (values[hi] - values[lo]) * (rank - lo as f64);

    let mut capped = e.clone();
    for &i in &region {
        if capped.data[i] > cap {
            capped.data[i] = cap;
        }
    }
    Ok((cap, capped))
}

// ---------------------------------------------------------------------------
// Field errors
// ---------------------------------------------------------------------------

/// Normalized mean absolute field difference over a region, in percent:
/// `(1 / max_region max(E, E0)) × (Σ_region |E−E0| / I) × 100` with `I` the
/// region voxel count.
pub fn global_error(
    e: &ScalarVolume,
    e0: &ScalarVolume,
    mask: &LabelVolume,
    labels: &[u8],
) -> Result<f64> {
    e.header.check_same_grid(&e0.header, "global_error")?;
    e.header.check_same_grid(&mask.header, "global_error")?;
    let region = region_indices(mask, labels);
    if region.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "global error undefined: region {labels:?} is empty"
        )));
    }
    let mut denom = f64::NEG_INFINITY;
    let mut acc = 0.0;
    for &i in &region {
        denom = denom.max(e.data[i].max(e0.data[i]));
        acc += (e.data[i] - e0.data[i]).abs();
    }
    if denom == 0.0 {
        return Err(Error::UndefinedMetric(
            "global error undefined: both fields are identically zero on the region".into(),
        ));
    }
    Ok(acc / region.len() as f64 / denom * 100.0)
}

/// Relative difference of the region maxima, in percent:
/// `|max(E) − max(E0)| / max(E0) × 100`. Intended to run on
/// percentile-capped fields.
pub fn local_error(
    e: &ScalarVolume,
    e0: &ScalarVolume,
    mask: &LabelVolume,
    labels: &[u8],
) -> Result<f64> {
    e.header.check_same_grid(&e0.header, "local_error")?;
    e.header.check_same_grid(&mask.header, "local_error")?;
    let region = region_indices(mask, labels);
    if region.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "local error undefined: region {labels:?} is empty"
        )));
    }
    let max_e = region
        .iter()
        .map(|&i| e.data[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let max_e0 = region
        .iter()
        .map(|&i| e0.data[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max_e0 == 0.0 {
        return Err(Error::UndefinedMetric(
            "local error undefined: reference field maximum is zero on the region".into(),
        ));
    }
    Ok((max_e - max_e0).abs() / max_e0 * 100.0)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Mean / standard deviation over per-case metric values.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryStat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single case.
    pub sd: f64,
    pub n: usize,
}

impl SummaryStat {
    /// None when no case produced a defined value.
    pub fn from_values(values: &[f64]) -> Option<SummaryStat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(SummaryStat { mean, sd, n })
    }
}

/// Per-structure segmentation quality row; `None` stats mean the metric was
/// undefined in every case (for instance Hausdorff with an empty mask).
#[derive(Debug, Clone, Serialize)]
pub struct StructureRow {
    pub structure: String,
    pub dice_pct: Option<SummaryStat>,
    pub hausdorff_mm: Option<SummaryStat>,
}

/// Per-region field comparison row.
#[derive(Debug, Clone, Serialize)]
pub struct RegionRow {
    pub region: String,
    pub global_err_pct: Option<SummaryStat>,
    pub local_err_pct: Option<SummaryStat>,
}

/// Evaluation report: structure rows (Dice / Hausdorff) and region rows
/// (global / local field error), each aggregated over the evaluated cases.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub structures: Vec<StructureRow>,
    pub regions: Vec<RegionRow>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// CSV with one row per (name, metric): `kind,name,metric,mean,sd,n`.
    /// Undefined metrics emit `undefined` in the mean column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,name,metric,mean,sd,n\n");
        let mut push = |kind: &str, name: &str, metric: &str, stat: &Option<SummaryStat>| match stat
        {
            Some(s) => out.push_str(&format!(
                "{kind},{name},{metric},{:.6},{:.6},{}\n",
                s.mean, s.sd, s.n
            )),
            None => out.push_str(&format!("{kind},{name},{metric},undefined,,0\n")),
        };
        for row in &self.structures {
            push("structure", &row.structure, "dice_pct", &row.dice_pct);
            push(
                "structure",
                &row.structure,
                "hausdorff_mm",
                &row.hausdorff_mm,
            );
        }
        for row in &self.regions {
            push("region", &row.region, "global_err_pct", &row.global_err_pct);
            push("region", &row.region, "local_err_pct", &row.local_err_pct);
        }
        out
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{LabelVolume, ScalarVolume, VolumeHeader};

    fn labels_16(data: &[(usize, usize, usize)], label: u8) -> LabelVolume {
        let mut v = LabelVolume::zeros([16, 16, 16], [1.0, 1.0, 1.0], label.max(1)).unwrap();
        for &(x, y, z) in data {
            v.set(x, y, z, label);
        }
        v
    }

    fn scalar_from(dims: [usize; 3], values: Vec<f64>) -> ScalarVolume {
        ScalarVolume::from_data(
            VolumeHeader::scalar(dims, [1.0, 1.0, 1.0], crate::volume::Dtype::F64),
            values,
        )
        .unwrap()
    }

    // -- dice ---------------------------------------------------------------

    #[test]
    fn dice_identity_and_disjoint() {
        let a = labels_16(&[(1, 1, 1), (2, 1, 1)], 1);
        assert_eq!(dice(&a, &a, 1).unwrap(), 100.0);
        let b = labels_16(&[(5, 5, 5)], 1);
        assert_eq!(dice(&a, &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn dice_hand_case() {
        // |A|=4, |B|=6, |A∩B|=3 → 2·3/10 = 60%
        let a = labels_16(&[(0, 0, 0), (1, 0, 0), (2, 0, 0), (3, 0, 0)], 1);
        let b = labels_16(
            &[
                (1, 0, 0),
                (2, 0, 0),
                (3, 0, 0),
                (4, 0, 0),
                (5, 0, 0),
                (6, 0, 0),
            ],
            1,
        );
        assert_eq!(dice(&a, &b, 1).unwrap(), 60.0);
        assert_eq!(dice(&b, &a, 1).unwrap(), 60.0);
    }

    #[test]
    fn dice_both_empty_is_100() {
        let a = labels_16(&[], 1);
        let b = labels_16(&[], 1);
        assert_eq!(dice(&a, &b, 1).unwrap(), 100.0);
    }

    // -- hausdorff ----------------------------------------------------------

    #[test]
    fn hausdorff_identity_zero() {
        let a = labels_16(&[(3, 4, 5), (10, 2, 7)], 1);
        assert_eq!(hausdorff(&a, &a, 1, HausdorffMode::Symmetric).unwrap(), 0.0);
    }

    #[test]
    fn hausdorff_pythagorean() {
        let a = labels_16(&[(0, 0, 0)], 1);
        let b = labels_16(&[(3, 4, 0)], 1);
        assert_eq!(hausdorff(&a, &b, 1, HausdorffMode::Directed).unwrap(), 5.0);
        assert_eq!(hausdorff(&a, &b, 1, HausdorffMode::Symmetric).unwrap(), 5.0);
    }

    #[test]
    fn hausdorff_uses_spacing() {
        let mut a = LabelVolume::zeros([8, 8, 8], [2.0, 1.0, 1.0], 1).unwrap();
        let mut b = LabelVolume::zeros([8, 8, 8], [2.0, 1.0, 1.0], 1).unwrap();
        a.set(0, 0, 0, 1);
        b.set(3, 0, 0, 1);
        assert_eq!(hausdorff(&a, &b, 1, HausdorffMode::Symmetric).unwrap(), 6.0);
    }

    #[test]
    fn hausdorff_directed_le_symmetric() {
        // A is a subset neighborhood of B's single point: directed A→B small,
        // B→A may be larger.
        let a = labels_16(&[(2, 2, 2), (3, 2, 2)], 1);
        let b = labels_16(&[(2, 2, 2), (12, 2, 2)], 1);
        let d = hausdorff(&a, &b, 1, HausdorffMode::Directed).unwrap();
        let s = hausdorff(&a, &b, 1, HausdorffMode::Symmetric).unwrap();
        assert!(d <= s);
        assert_eq!(s, 9.0); // (12,2,2) to nearest of A = (3,2,2)
    }

    #[test]
    fn hausdorff_empty_mask_undefined() {
        let a = labels_16(&[(1, 1, 1)], 1);
        let b = labels_16(&[], 1);
        assert!(matches!(
            hausdorff(&a, &b, 1, HausdorffMode::Symmetric),
            Err(Error::UndefinedMetric(_))
        ));
    }

    /// Brute-force O(n²) oracle for the directed Hausdorff distance.
    fn brute_directed(a: &LabelVolume, b: &LabelVolume, label: u8) -> f64 {
        let pts = |v: &LabelVolume| -> Vec<[f64; 3]> {
            let dims = v.header.dims;
            let sp = v.header.spacing;
            let mut out = Vec::new();
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        if v.at(x, y, z) == label {
                            out.push([x as f64 * sp[0], y as f64 * sp[1], z as f64 * sp[2]]);
                        }
                    }
                }
            }
            out
        };
        let pa = pts(a);
        let pb = pts(b);
        let mut worst = 0.0f64;
        for p in &pa {
            let mut best = f64::INFINITY;
            for q in &pb {
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                best = best.min(d2);
            }
            worst = worst.max(best);
        }
        worst.sqrt()
    }

    #[test]
    fn hausdorff_matches_brute_force_on_random_masks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let mut a = LabelVolume::zeros([16, 16, 16], [1.0, 1.0, 1.0], 1).unwrap();
            let mut b = LabelVolume::zeros([16, 16, 16], [1.0, 1.0, 1.0], 1).unwrap();
            for v in [&mut a, &mut b] {
                for _ in 0..rng.random_range(1..40) {
                    let (x, y, z) = (
                        rng.random_range(0..16),
                        rng.random_range(0..16),
                        rng.random_range(0..16),
                    );
                    v.set(x, y, z, 1);
                }
            }
            let fast = hausdorff(&a, &b, 1, HausdorffMode::Directed).unwrap();
            assert_eq!(fast, brute_directed(&a, &b, 1));
            let sym = hausdorff(&a, &b, 1, HausdorffMode::Symmetric).unwrap();
            assert_eq!(
                sym,
                brute_directed(&a, &b, 1).max(brute_directed(&b, &a, 1))
            );
        }
    }

    // -- percentile ---------------------------------------------------------

    #[test]
    fn percentile_interpolation_case() {
        let e = scalar_from([10, 10, 10], (0..1000).map(|i| i as f64).collect());
        let mask = LabelVolume::from_data(
            VolumeHeader::label([10, 10, 10], [1.0, 1.0, 1.0], 1),
            vec![1u8; 1000],
        )
        .unwrap();
        let (p, capped) = percentile_cap(&e, &mask, &[1], 99.9).unwrap();
        // 0.999·(1000−1) interpolates between 998 and 999 → 998.001, up to
        // one rounding step of the rank arithmetic.
        assert!((p - 998.001).abs() < 1e-9, "got {p}");
        assert_eq!(capped.data[999], p);
        assert_eq!(capped.data[998], 998.0);
        // q=100 → max; q=0 → min
        assert_eq!(percentile_cap(&e, &mask, &[1], 100.0).unwrap().0, 999.0);
        assert_eq!(percentile_cap(&e, &mask, &[1], 0.0).unwrap().0, 0.0);
    }

    #[test]
    fn percentile_constant_field() {
        let e = scalar_from([4, 4, 4], vec![2.5; 64]);
        let mask = LabelVolume::from_data(
            VolumeHeader::label([4, 4, 4], [1.0, 1.0, 1.0], 1),
            vec![1u8; 64],
        )
        .unwrap();
        let (p, capped) = percentile_cap(&e, &mask, &[1], 99.9).unwrap();
        assert_eq!(p, 2.5);
        assert_eq!(capped, e);
    }

    #[test]
    fn percentile_cap_only_touches_region() {
        let e = scalar_from([2, 1, 1], vec![5.0, 50.0]);
        let mut mask = LabelVolume::zeros([2, 1, 1], [1.0, 1.0, 1.0], 1).unwrap();
        mask.set(0, 0, 0, 1);
        let (p, capped) = percentile_cap(&e, &mask, &[1], 50.0).unwrap();
        assert_eq!(p, 5.0);
        assert_eq!(capped.data, vec![5.0, 50.0]); // voxel outside region untouched
    }

    #[test]
    fn percentile_empty_region_undefined() {
        let e = scalar_from([2, 2, 2], vec![0.0; 8]);
        let mask = LabelVolume::zeros([2, 2, 2], [1.0, 1.0, 1.0], 1).unwrap();
        assert!(matches!(
            percentile_cap(&e, &mask, &[1], 99.9),
            Err(Error::UndefinedMetric(_))
        ));
    }

    // -- field errors -------------------------------------------------------

    fn full_mask(dims: [usize; 3]) -> LabelVolume {
        LabelVolume::from_data(
            VolumeHeader::label(dims, [1.0, 1.0, 1.0], 1),
            vec![1u8; dims[0] * dims[1] * dims[2]],
        )
        .unwrap()
    }

    #[test]
    fn global_error_cases() {
        let dims = [2, 1, 1];
        let mask = full_mask(dims);
        let e0 = scalar_from(dims, vec![2.0, 2.0]);
        let e_same = e0.clone();
        assert_eq!(global_error(&e_same, &e0, &mask, &[1]).unwrap(), 0.0);

        let e1 = scalar_from(dims, vec![1.0, 1.0]);
        assert_eq!(global_error(&e1, &e0, &mask, &[1]).unwrap(), 50.0);

        let e2 = scalar_from(dims, vec![0.0, 2.0]);
        assert_eq!(global_error(&e2, &e0, &mask, &[1]).unwrap(), 50.0);
    }

    #[test]
    fn global_error_scale_invariant() {
        let dims = [4, 1, 1];
        let mask = full_mask(dims);
        let e = scalar_from(dims, vec![1.0, 3.0, 0.5, 2.0]);
        let e0 = scalar_from(dims, vec![1.5, 2.0, 1.0, 2.5]);
        let base = global_error(&e, &e0, &mask, &[1]).unwrap();
        for c in [0.1, 7.0, 1234.5] {
            let ec = scalar_from(dims, e.data.iter().map(|v| v * c).collect());
            let e0c = scalar_from(dims, e0.data.iter().map(|v| v * c).collect());
            let scaled = global_error(&ec, &e0c, &mask, &[1]).unwrap();
            assert!((scaled - base).abs() < 1e-12);
        }
    }

    #[test]
    fn global_error_zero_fields_undefined() {
        let dims = [2, 1, 1];
        let mask = full_mask(dims);
        let z = scalar_from(dims, vec![0.0, 0.0]);
        assert!(matches!(
            global_error(&z, &z, &mask, &[1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn local_error_cases() {
        let dims = [2, 1, 1];
        let mask = full_mask(dims);
        let e0 = scalar_from(dims, vec![0.5, 1.0]);
        assert_eq!(local_error(&e0, &e0, &mask, &[1]).unwrap(), 0.0);
        let e = scalar_from(dims, vec![0.2, 1.1]);
        assert!((local_error(&e, &e0, &mask, &[1]).unwrap() - 10.0).abs() < 1e-12);
        let z = scalar_from(dims, vec![0.0, 0.0]);
        assert_eq!(local_error(&z, &e0, &mask, &[1]).unwrap(), 100.0);
        assert!(matches!(
            local_error(&e, &z, &mask, &[1]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    // -- report -------------------------------------------------------------

    #[test]
    fn summary_stat_and_csv() {
        let s = SummaryStat::from_values(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.sd - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(SummaryStat::from_values(&[5.0]).unwrap().sd, 0.0);
        assert!(SummaryStat::from_values(&[]).is_none());

        let report = MetricReport {
            structures: vec![StructureRow {
                structure: "label 1".into(),
                dice_pct: SummaryStat::from_values(&[90.0]),
                hausdorff_mm: None,
            }],
            regions: vec![],
        };
        let csv = report.to_csv();
        assert!(csv.contains("structure,label 1,dice_pct,90.000000,0.000000,1"));
        assert!(csv.contains("structure,label 1,hausdorff_mm,undefined,,0"));
    }

    // -- properties ---------------------------------------------------------

    proptest::proptest! {
        #[test]
        fn dice_symmetric_and_bounded(points_a in proptest::collection::vec((0usize..8, 0usize..8, 0usize..8), 0..30),
                                      points_b in proptest::collection::vec((0usize..8, 0usize..8, 0usize..8), 0..30)) {
            let mut a = LabelVolume::zeros([8, 8, 8], [1.0, 1.0, 1.0], 1).unwrap();
            let mut b = LabelVolume::zeros([8, 8, 8], [1.0, 1.0, 1.0], 1).unwrap();
            for (x, y, z) in points_a { a.set(x, y, z, 1); }
            for (x, y, z) in points_b { b.set(x, y, z, 1); }
            let dab = dice(&a, &b, 1).unwrap();
            let dba = dice(&b, &a, 1).unwrap();
            proptest::prop_assert_eq!(dab, dba);
            proptest::prop_assert!((0.0..=100.0).contains(&dab));
        }

        #[test]
        fn percentile_monotone_in_q(values in proptest::collection::vec(0.0f64..100.0, 8..64),
                                    q1 in 0.0f64..100.0, q2 in 0.0f64..100.0) {
            let n = values.len();
            let e = ScalarVolume::from_data(
                VolumeHeader::scalar([n, 1, 1], [1.0, 1.0, 1.0], crate::volume::Dtype::F64),
                values,
            ).unwrap();
            let mask = LabelVolume::from_data(
                VolumeHeader::label([n, 1, 1], [1.0, 1.0, 1.0], 1),
                vec![1u8; n],
            ).unwrap();
            let (lo_q, hi_q) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let (p_lo, capped) = percentile_cap(&e, &mask, &[1], lo_q).unwrap();
            let (p_hi, _) = percentile_cap(&e, &mask, &[1], hi_q).unwrap();
            proptest::prop_assert!(p_lo <= p_hi);
            let max_after = capped.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(max_after <= p_lo + 1e-12);
        }
    }
}
