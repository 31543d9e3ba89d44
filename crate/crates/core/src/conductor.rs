//! Conductivity assignment and electrode montage construction.
//!
//! A labeled head model becomes a volume conductor by looking every tissue
//! label up in a [`ConductivityTable`] (S/m); background stays at exactly 0
//! (air). Stimulation electrodes are then rasterized onto the scalp: each is
//! an axis-aligned stack grown outward from the first tissue voxel of every
//! footprint column — saline-soaked sponge with a thin rubber sheet at the
//! outer face, where the current is injected. A [`Montage`] bundles the final
//! conductivity volume with the source/sink node locations and the injected
//! current, ready for the field solver.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dtype, LabelVolume, ScalarVolume, VolumeHeader};

/// Default injected current in ampere (2 mA).
pub const DEFAULT_CURRENT_A: f64 = 2e-3;
/// Conductivity of saline-soaked sponge, S/m.
pub const SPONGE_SIGMA: f64 = 1.6;
/// Conductivity of conductive electrode rubber, S/m.
pub const RUBBER_SIGMA: f64 = 0.1;
/// Label given to sponge voxels by the shipped tissue table.
pub const SPONGE_LABEL: u8 = 20;
/// Label given to rubber voxels by the shipped tissue table.
pub const RUBBER_LABEL: u8 = 21;

// ---------------------------------------------------------------------------
// Conductivity table
// ---------------------------------------------------------------------------

/// One tissue row: display name and isotropic conductivity in S/m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueEntry {
    pub name: String,
    pub sigma: f64,
}

/// Label → conductivity mapping. Label 0 is reserved for air and always maps
/// to exactly 0 S/m; it cannot be overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityTable {
    entries: BTreeMap<u8, TissueEntry>,
}

impl ConductivityTable {
    pub fn new() -> ConductivityTable {
        ConductivityTable {
            entries: BTreeMap::new(),
        }
    }

    /// The table shipped with this crate: the 19 head tissues plus the two
    /// electrode materials (sponge, rubber) on labels 20/21.
    pub fn default_head() -> ConductivityTable {
        ConductivityTable::from_json(crate::assets::HEAD_TISSUES_JSON)
            .expect("bundled tissue table is valid")
    }

    /// Parses `{ "<label>": {"name": ..., "sigma": ...}, ... }`.
    pub fn from_json(text: &str) -> Result<ConductivityTable> {
        let raw: BTreeMap<String, TissueEntry> =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("tissue table: {e}")))?;
        let mut table = ConductivityTable::new();
        for (key, entry) in raw {
            let label: u8 = key
                .parse()
                .map_err(|_| Error::Format(format!("tissue table label {key:?} is not a u8")))?;
            table.insert(label, entry)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, label: u8, entry: TissueEntry) -> Result<()> {
        if label == 0 {
            return Err(Error::Validation(
                "label 0 is air and always maps to 0 S/m; it cannot be redefined".into(),
            ));
        }
        if !entry.sigma.is_finite() || entry.sigma < 0.0 {
            return Err(Error::Validation(format!(
                "conductivity for label {label} ({}) must be finite and ≥ 0, got {}",
                entry.name, entry.sigma
            )));
        }
        self.entries.insert(label, entry);
        Ok(())
    }

    pub fn get(&self, label: u8) -> Option<&TissueEntry> {
        self.entries.get(&label)
    }

    /// Conductivity for a label; label 0 is always 0 S/m.
    pub fn sigma(&self, label: u8) -> Option<f64> {
        if label == 0 {
            return Some(0.0);
        }
        self.entries.get(&label).map(|e| e.sigma)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, &TissueEntry)> {
        self.entries.iter().map(|(&l, e)| (l, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Default for ConductivityTable {
    fn default() -> ConductivityTable {
        ConductivityTable::new()
    }
}

/// Pointwise lookup of every voxel's conductivity. Fails listing all labels
/// present in the model but absent from the table.
pub fn assign_conductivity(model: &LabelVolume, table: &ConductivityTable) -> Result<ScalarVolume> {
    let mut lut = [f64::NAN; 256];
    lut[0] = 0.0;
    let mut missing: Vec<u8> = Vec::new();
    let mut present = [false; 256];
    for &l in &model.data {
        present[l as usize] = true;
    }
    for l in 1..256 {
        if present[l] {
            match table.sigma(l as u8) {
                Some(s) => lut[l] = s,
                None => missing.push(l as u8),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "labels without conductivity entries: {missing:?}"
        )));
    }
    let data: Vec<f64> = model.data.iter().map(|&l| lut[l as usize]).collect();
    ScalarVolume::from_data(
        VolumeHeader::scalar(model.header.dims, model.header.spacing, Dtype::F64),
        data,
    )
}

// ---------------------------------------------------------------------------
// Electrode geometry
// ---------------------------------------------------------------------------

/// Signed grid axis; the sign is the outward normal of the scalp patch the
/// electrode sits on (`+z` = electrode on the high-z side of the head).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisDir {
    #[serde(rename = "+x")]
    XPos,
    #[serde(rename = "-x")]
    XNeg,
    #[serde(rename = "+y")]
    YPos,
    #[serde(rename = "-y")]
    YNeg,
    #[serde(rename = "+z")]
    ZPos,
    #[serde(rename = "-z")]
    ZNeg,
}

impl AxisDir {
    /// 0, 1 or 2 for x, y, z.
    pub fn axis(self) -> usize {
        match self {
            AxisDir::XPos | AxisDir::XNeg => 0,
            AxisDir::YPos | AxisDir::YNeg => 1,
            AxisDir::ZPos | AxisDir::ZNeg => 2,
        }
    }

    /// +1 when outward means increasing index, −1 otherwise.
    pub fn sign(self) -> isize {
        match self {
            AxisDir::XPos | AxisDir::YPos | AxisDir::ZPos => 1,
            AxisDir::XNeg | AxisDir::YNeg | AxisDir::ZNeg => -1,
        }
    }

    /// The two in-plane axes, ascending.
    pub fn plane(self) -> (usize, usize) {
        match self.axis() {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }
}

impl std::fmt::Display for AxisDir {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AxisDir::XPos => "+x",
            AxisDir::XNeg => "-x",
            AxisDir::YPos => "+y",
            AxisDir::YNeg => "-y",
            AxisDir::ZPos => "+z",
            AxisDir::ZNeg => "-z",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Anode,
    Cathode,
}

/// Sponge-electrode description. Distances in mm; the electrode patch is
/// axis-aligned, `size_mm[0]` spanning the lower-numbered in-plane axis.
///
/// `sponge_thickness_mm` is the full stack height (the classic 5 mm pad);
/// the rubber sheet occupies `rubber_thickness_mm` of it, by default at the
/// outer face (`rubber_inset_mm` = 0 — current is injected "on top"), and
/// saline fills the rest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElectrodeSpec {
    /// Patch center on the scalp, mm. The component along `normal_axis` is
    /// ignored (the stack follows the scalp surface).
    pub center_mm: [f64; 3],
    pub normal_axis: AxisDir,
    #[serde(default = "default_size")]
    pub size_mm: [f64; 2],
    #[serde(default = "default_sponge_thickness")]
    pub sponge_thickness_mm: f64,
    #[serde(default = "default_rubber_thickness")]
    pub rubber_thickness_mm: f64,
    /// Distance from the stack's outer face to the rubber layer.
    #[serde(default)]
    pub rubber_inset_mm: f64,
    #[serde(default = "default_sponge_sigma")]
    pub sponge_sigma: f64,
    #[serde(default = "default_rubber_sigma")]
    pub rubber_sigma: f64,
    pub polarity: Polarity,
}

fn default_size() -> [f64; 2] {
    [50.0, 50.0]
}
fn default_sponge_thickness() -> f64 {
    5.0
}
fn default_rubber_thickness() -> f64 {
    1.0
}
fn default_sponge_sigma() -> f64 {
    SPONGE_SIGMA
}
fn default_rubber_sigma() -> f64 {
    RUBBER_SIGMA
}

impl ElectrodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation(format!(
                "electrode size must be positive, got {:?}",
                self.size_mm
            )));
        }
        if !(self.sponge_thickness_mm > 0.0) || !(self.rubber_thickness_mm > 0.0) {
            return Err(Error::Validation(
                "electrode thicknesses must be > 0".into(),
            ));
        }
        if self.rubber_thickness_mm + self.rubber_inset_mm > self.sponge_thickness_mm {
            return Err(Error::Validation(format!(
                "rubber sheet ({} mm at inset {} mm) does not fit in a {} mm stack",
                self.rubber_thickness_mm, self.rubber_inset_mm, self.sponge_thickness_mm
            )));
        }
        if !(self.rubber_inset_mm >= 0.0) {
            return Err(Error::Validation("rubber inset must be ≥ 0".into()));
        }
        if !(self.sponge_sigma > 0.0) || !(self.rubber_sigma > 0.0) {
            return Err(Error::Validation(
                "electrode conductivities must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Result of rasterizing one electrode.
#[derive(Debug, Clone, Serialize)]
pub struct ElectrodeFootprint {
    pub polarity: Polarity,
    pub normal_axis: AxisDir,
    /// Total stack voxels written (saline + rubber).
    pub stack_voxels: usize,
    pub saline_voxels: usize,
    pub rubber_voxels: usize,
    /// Node (grid corner) nearest the center of the rubber's outer face —
    /// the current injection site for this electrode.
    pub contact_node: [usize; 3],
    /// Flat voxel indices modified by the placement.
    #[serde(skip)]
    pub modified: Vec<usize>,
}

/// Rasterizes an electrode onto the conductivity volume.
///
/// Every footprint column is scanned from the grid boundary inward along the
/// electrode normal; the stack grows outward from the first tissue voxel
/// (`model` label ≠ 0). Only air voxels are overwritten, and anything
/// protruding past the grid is clipped.
pub fn place_electrode(
    sigma: &ScalarVolume,
    model: &LabelVolume,
    spec: &ElectrodeSpec,
) -> Result<(ScalarVolume, ElectrodeFootprint)> {
    spec.validate()?;
    sigma
        .header
        .check_same_grid(&model.header, "place_electrode")?;
    let dims = sigma.header.dims;
    let sp = sigma.header.spacing;
    let axis = spec.normal_axis.axis();
    let outward = spec.normal_axis.sign();
    let (ua, va) = spec.normal_axis.plane();

    // Footprint voxel ranges: `size/spacing` voxels centered on `center_mm`.
    // Voxel i spans [i·s, (i+1)·s) mm, so its center sits at (i+0.5)·s.
    let count_u = ((spec.size_mm[0] / sp[ua]).round() as usize).max(1);
    let count_v = ((spec.size_mm[1] / sp[va]).round() as usize).max(1);
    let first = |c_mm: f64, s: f64, count: usize| -> isize {
        let center_vox = c_mm / s - 0.5;
        (center_vox - (count as f64 - 1.0) / 2.0).round() as isize
    };
    let u0 = first(spec.center_mm[ua], sp[ua], count_u);
    let v0 = first(spec.center_mm[va], sp[va], count_v);

    let stack_h = ((spec.sponge_thickness_mm / sp[axis]).round() as usize).max(1);
    let rubber_h = ((spec.rubber_thickness_mm / sp[axis]).round() as usize).max(1);
    let inset = (spec.rubber_inset_mm / sp[axis]).round() as usize;
    if rubber_h + inset > stack_h {
        return Err(Error::Placement(format!(
            "rubber does not fit: {rubber_h} voxels at inset {inset} in a {stack_h}-voxel stack"
        )));
    }
    // Layer k (1 = on the scalp, stack_h = outer face) is rubber within the
    // inset window, saline elsewhere.
    let rubber_lo = stack_h - inset - rubber_h + 1;
    let rubber_hi = stack_h - inset;

    let mut out = sigma.clone();
    let mut footprint = ElectrodeFootprint {
        polarity: spec.polarity,
        normal_axis: spec.normal_axis,
        stack_voxels: 0,
        saline_voxels: 0,
        rubber_voxels: 0,
        contact_node: [0; 3],
        modified: Vec::new(),
    };
    let mut touched_scalp = false;
    // Rubber voxel closest (in-plane) to the electrode center; its outer face
    // defines the contact node.
    let mut best: Option<([usize; 3], f64)> = None;

    for iv in 0..count_v {
        let v = v0 + iv as isize;
        if v < 0 || v >= dims[va] as isize {
            continue;
        }
        for iu in 0..count_u {
            let u = u0 + iu as isize;
            if u < 0 || u >= dims[ua] as isize {
                continue;
            }
            let mut p = [0usize; 3];
            p[ua] = u as usize;
            p[va] = v as usize;
            // Scan inward from the outer boundary for the scalp surface.
            let n_axis = dims[axis] as isize;
            let scan: Box<dyn Iterator<Item = isize>> = if outward > 0 {
                Box::new((0..n_axis).rev())
            } else {
                Box::new(0..n_axis)
            };
            let mut surface: Option<isize> = None;
            for w in scan {
                p[axis] = w as usize;
                if model.at(p[0], p[1], p[2]) != 0 {
                    surface = Some(w);
                    break;
                }
            }
            let Some(surface_w) = surface else {
                continue;
            };
            touched_scalp = true;
            for k in 1..=stack_h {
                let w = surface_w + outward * k as isize;
                if w < 0 || w >= n_axis {
                    continue;
                }
                p[axis] = w as usize;
                if model.at(p[0], p[1], p[2]) != 0 {
                    continue; // never overwrite tissue
                }
                let idx = sigma.header.index(p[0], p[1], p[2]);
                let is_rubber = (rubber_lo..=rubber_hi).contains(&k);
                out.data[idx] = if is_rubber {
                    spec.rubber_sigma
                } else {
                    spec.sponge_sigma
                };
                footprint.modified.push(idx);
                footprint.stack_voxels += 1;
                if is_rubber {
                    footprint.rubber_voxels += 1;
                    if k == rubber_hi {
                        let du = (p[ua] as f64 + 0.5) * sp[ua] - spec.center_mm[ua];
                        let dv = (p[va] as f64 + 0.5) * sp[va] - spec.center_mm[va];
                        let d2 = du * du + dv * dv;
                        if best.map_or(true, |(_, b)| d2 < b) {
                            best = Some((p, d2));
                        }
                    }
                } else {
                    footprint.saline_voxels += 1;
                }
            }
        }
    }

    if !touched_scalp {
        return Err(Error::Placement(
            "electrode footprint lies entirely off the scalp".into(),
        ));
    }
    if footprint.saline_voxels == 0 || footprint.rubber_voxels == 0 {
        return Err(Error::Placement(format!(
            "electrode rasterized {} saline and {} rubber voxels; both materials are required",
            footprint.saline_voxels, footprint.rubber_voxels
        )));
    }

    // Contact node: in-plane the node nearest the electrode center, along the
    // axis the outer face of the central rubber voxel.
    let (rubber_voxel, _) = best.expect("rubber voxels exist");
    let mut node = [0usize; 3];
    node[ua] =
        ((spec.center_mm[ua] / sp[ua]).round() as isize).clamp(0, dims[ua] as isize) as usize;
    node[va] =
        ((spec.center_mm[va] / sp[va]).round() as isize).clamp(0, dims[va] as isize) as usize;
    node[axis] = if outward > 0 {
        rubber_voxel[axis] + 1
    } else {
        rubber_voxel[axis]
    };
    footprint.contact_node = node;
    Ok((out, footprint))
}

// ---------------------------------------------------------------------------
// Montage
// ---------------------------------------------------------------------------

/// Everything the field solver needs: the conductivity volume with both
/// electrodes rasterized, the injection node pair, and the current.
#[derive(Debug, Clone)]
pub struct Montage {
    pub sigma: ScalarVolume,
    /// Node coordinates (grid corners) of the current source (anode contact).
    pub source_node: [usize; 3],
    /// Node coordinates of the current sink (cathode contact).
    pub sink_node: [usize; 3],
    /// Injected current in ampere.
    pub current: f64,
    pub anode: ElectrodeFootprint,
    pub cathode: ElectrodeFootprint,
}

/// Places both electrodes on the conductivity volume and derives the
/// injection nodes: source at the node nearest the center of the anode
/// rubber's outer face, sink likewise for the cathode.
pub fn build_montage(
    sigma: &ScalarVolume,
    model: &LabelVolume,
    anode: &ElectrodeSpec,
    cathode: &ElectrodeSpec,
    current: f64,
) -> Result<Montage> {
    if !(current > 0.0) || !current.is_finite() {
        return Err(Error::Validation(format!(
            "injected current must be positive, got {current}"
        )));
    }
    if anode.polarity != Polarity::Anode || cathode.polarity != Polarity::Cathode {
        return Err(Error::Validation(
            "build_montage expects (anode, cathode) in that order".into(),
        ));
    }
    let (sigma1, anode_fp) = place_electrode(sigma, model, anode)?;
    let (sigma2, cathode_fp) = place_electrode(&sigma1, model, cathode)?;
    if anode_fp.contact_node == cathode_fp.contact_node {
        return Err(Error::Placement(
            "anode and cathode contact nodes coincide".into(),
        ));
    }
    // The node must actually touch rubber in the final volume.
    for (fp, spec) in [(&anode_fp, anode), (&cathode_fp, cathode)] {
        if !node_touches_value(&sigma2, fp.contact_node, spec.rubber_sigma) {
            return Err(Error::Placement(format!(
                "{:?} contact node {:?} is not adjacent to rubber",
                fp.polarity, fp.contact_node
            )));
        }
    }
    Ok(Montage {
        sigma: sigma2,
        source_node: anode_fp.contact_node,
        sink_node: cathode_fp.contact_node,
        current,
        anode: anode_fp,
        cathode: cathode_fp,
    })
}

/// True when any of the ≤8 voxels sharing the node carries `value`.
fn node_touches_value(sigma: &ScalarVolume, node: [usize; 3], value: f64) -> bool {
    let dims = sigma.header.dims;
    for dz in 0..2usize {
        for dy in 0..2usize {
            for dx in 0..2usize {
                let x = node[0] as isize - 1 + dx as isize;
                let y = node[1] as isize - 1 + dy as isize;
                let z = node[2] as isize - 1 + dz as isize;
                if x < 0 || y < 0 || z < 0 {
                    continue;
                }
                let (x, y, z) = (x as usize, y as usize, z as usize);
                if x >= dims[0] || y >= dims[1] || z >= dims[2] {
                    continue;
                }
                if sigma.at(x, y, z) == value {
                    return true;
                }
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Montage descriptors
// ---------------------------------------------------------------------------

/// JSON description of a stimulation setup.
///
/// `patch` is the realistic sponge-pair montage. `plates` covers the two
/// opposite grid faces with ideal plate electrodes (current injected across
/// every face node, weighted by the attached edge conductance) — the
/// configuration used by the analytic slab benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MontageDescriptor {
    Patch {
        anode: ElectrodeSpec,
        cathode: ElectrodeSpec,
        #[serde(default = "default_current")]
        current: f64,
    },
    Plates {
        /// Anode face: `+z` puts the positive plate on the high-z face.
        axis: AxisDir,
        #[serde(default = "default_current")]
        current: f64,
    },
}

fn default_current() -> f64 {
    DEFAULT_CURRENT_A
}

impl MontageDescriptor {
    pub fn from_json(text: &str) -> Result<MontageDescriptor> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("montage descriptor: {e}")))
    }

    pub fn current(&self) -> f64 {
        match self {
            MontageDescriptor::Patch { current, .. } => *current,
            MontageDescriptor::Plates { current, .. } => *current,
        }
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_matches_published_values() {
        let t = ConductivityTable::default_head();
        assert_eq!(t.len(), 21);
        let by_name = |n: &str| {
            t.iter()
                .find(|(_, e)| e.name == n)
                .map(|(_, e)| e.sigma)
                .unwrap()
        };
        assert_eq!(by_name("CSF"), 1.80);
        assert_eq!(by_name("GM"), 0.20);
        assert_eq!(by_name("WM"), 0.14);
        assert_eq!(by_name("Bone (Cortical)"), 0.008);
        assert_eq!(by_name("Bone (Cancellous)"), 0.027);
        assert_eq!(by_name("Saline sponge"), 1.6);
        assert_eq!(by_name("Electrode rubber"), 0.1);
        assert_eq!(t.sigma(0), Some(0.0));
    }

    #[test]
    fn assign_lookup_and_missing_labels() {
        let mut model = LabelVolume::zeros([3, 1, 1], [1.0; 3], 9).unwrap();
        model.set(0, 0, 0, 7); // CSF in the shipped table
        model.set(1, 0, 0, 9); // GM
        let table = ConductivityTable::default_head();
        let sigma = assign_conductivity(&model, &table).unwrap();
        assert_eq!(sigma.at(0, 0, 0), 1.80);
        assert_eq!(sigma.at(1, 0, 0), 0.20);
        assert_eq!(sigma.at(2, 0, 0), 0.0);

        let mut empty = ConductivityTable::new();
        empty
            .insert(
                7,
                TissueEntry {
                    name: "CSF".into(),
                    sigma: 1.8,
                },
            )
            .unwrap();
        let err = assign_conductivity(&model, &empty).unwrap_err();
        match err {
            Error::Validation(msg) => assert!(msg.contains('9'), "{msg}"),
            other => panic!("expected ValidationError, got {other:?}"),
        }
    }

    /// 64³ grid, 1 mm voxels, a flat tissue slab occupying z ∈ [20, 40].
    fn slab_model() -> (ScalarVolume, LabelVolume) {
        let mut model = LabelVolume::zeros([64, 64, 64], [1.0; 3], 1).unwrap();
        for z in 20..=40 {
            for y in 0..64 {
                for x in 0..64 {
                    model.set(x, y, z, 1);
                }
            }
        }
        let mut table = ConductivityTable::new();
        table
            .insert(
                1,
                TissueEntry {
                    name: "Skin".into(),
                    sigma: 0.1,
                },
            )
            .unwrap();
        let sigma = assign_conductivity(&model, &table).unwrap();
        (sigma, model)
    }

    fn electrode(polarity: Polarity, dir: AxisDir) -> ElectrodeSpec {
        ElectrodeSpec {
            center_mm: [32.0, 32.0, 32.0],
            normal_axis: dir,
            size_mm: [50.0, 50.0],
            sponge_thickness_mm: 5.0,
            rubber_thickness_mm: 1.0,
            rubber_inset_mm: 0.0,
            sponge_sigma: SPONGE_SIGMA,
            rubber_sigma: RUBBER_SIGMA,
            polarity,
        }
    }

    #[test]
    fn slab_rasterization_counts() {
        let (sigma, model) = slab_model();
        let (out, fp) =
            place_electrode(&sigma, &model, &electrode(Polarity::Anode, AxisDir::ZPos)).unwrap();
        // 50×50 footprint, 5-voxel stack: outermost layer rubber, 4 saline.
        assert_eq!(fp.stack_voxels, 50 * 50 * 5);
        assert_eq!(fp.rubber_voxels, 50 * 50);
        assert_eq!(fp.saline_voxels, 50 * 50 * 4);
        // Stack sits at z = 41..=45, centered footprint 7..=56.
        assert_eq!(out.at(32, 32, 41), SPONGE_SIGMA);
        assert_eq!(out.at(32, 32, 44), SPONGE_SIGMA);
        assert_eq!(out.at(32, 32, 45), RUBBER_SIGMA);
        assert_eq!(out.at(7, 7, 45), RUBBER_SIGMA);
        assert_eq!(out.at(6, 32, 45), 0.0);
        assert_eq!(out.at(32, 32, 46), 0.0);
        // Contact node: outer face of the central rubber voxel.
        assert_eq!(fp.contact_node, [32, 32, 46]);
    }

    #[test]
    fn placement_modifies_only_reported_voxels() {
        let (sigma, model) = slab_model();
        let (out, fp) =
            place_electrode(&sigma, &model, &electrode(Polarity::Anode, AxisDir::ZNeg)).unwrap();
        let mut changed: Vec<usize> = sigma
            .data
            .iter()
            .zip(out.data.iter())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        changed.sort_unstable();
        let mut reported = fp.modified.clone();
        reported.sort_unstable();
        assert_eq!(changed, reported);
    }

    #[test]
    fn off_scalp_placement_fails() {
        let (sigma, model) = slab_model();
        let mut spec = electrode(Polarity::Anode, AxisDir::ZPos);
        spec.center_mm = [500.0, 500.0, 0.0];
        assert!(matches!(
            place_electrode(&sigma, &model, &spec),
            Err(Error::Placement(_))
        ));
    }

    #[test]
    fn opposite_faces_build_a_montage() {
        let (sigma, model) = slab_model();
        let anode = electrode(Polarity::Anode, AxisDir::ZPos);
        let cathode = electrode(Polarity::Cathode, AxisDir::ZNeg);
        let m = build_montage(&sigma, &model, &anode, &cathode, DEFAULT_CURRENT_A).unwrap();
        assert_eq!(m.current, 2e-3);
        assert_eq!(m.source_node, [32, 32, 46]);
        // Cathode stack grows downward from z=20: voxels 15..=19, rubber at 15,
        // outer face node z=15.
        assert_eq!(m.sink_node, [32, 32, 15]);
        assert_ne!(m.source_node, m.sink_node);
        // Footprints must not overlap.
        let a: std::collections::HashSet<usize> = m.anode.modified.iter().copied().collect();
        assert!(m.cathode.modified.iter().all(|i| !a.contains(i)));
        // Both contact nodes touch rubber.
        assert_eq!(m.sigma.at(32, 32, 45), RUBBER_SIGMA);
        assert_eq!(m.sigma.at(32, 32, 15), RUBBER_SIGMA);
    }

    #[test]
    fn rubber_inset_moves_the_sheet_inward() {
        let (sigma, model) = slab_model();
        let mut spec = electrode(Polarity::Anode, AxisDir::ZPos);
        spec.rubber_inset_mm = 2.0;
        let (out, _) = place_electrode(&sigma, &model, &spec).unwrap();
        assert_eq!(out.at(32, 32, 43), RUBBER_SIGMA);
        assert_eq!(out.at(32, 32, 44), SPONGE_SIGMA);
        assert_eq!(out.at(32, 32, 45), SPONGE_SIGMA);
    }

    #[test]
    fn electrode_clipped_at_grid_boundary() {
        let (sigma, model) = slab_model();
        let mut spec = electrode(Polarity::Anode, AxisDir::ZPos);
        spec.center_mm = [2.0, 32.0, 0.0]; // footprint hangs off the x=0 side
        let (_, fp) = place_electrode(&sigma, &model, &spec).unwrap();
        assert!(fp.stack_voxels < 50 * 50 * 5);
        assert!(fp.rubber_voxels > 0);
    }

    #[test]
    fn montage_descriptor_round_trip() {
        let text = r#"{"type": "plates", "axis": "+z", "current": 0.002}"#;
        let d = MontageDescriptor::from_json(text).unwrap();
        match d {
            MontageDescriptor::Plates { axis, current } => {
                assert_eq!(axis, AxisDir::ZPos);
                assert_eq!(current, 0.002);
            }
            _ => panic!("expected plates"),
        }

        let patch = MontageDescriptor::Patch {
            anode: electrode(Polarity::Anode, AxisDir::ZPos),
            cathode: electrode(Polarity::Cathode, AxisDir::ZNeg),
            current: 2e-3,
        };
        let json = serde_json::to_string(&patch).unwrap();
        let back = MontageDescriptor::from_json(&json).unwrap();
        assert_eq!(back.current(), 2e-3);
    }
}
