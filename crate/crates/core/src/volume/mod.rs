//! Voxel volumes, the `.vvol` container format, axis slicing and the
//! label-embedding operations used to assemble head models.
//!
//! Two volume flavours exist: [`ScalarVolume`] (MRI intensities, potentials,
//! field magnitudes — always `f64` in memory) and [`LabelVolume`] (tissue or
//! structure indices stored as `u8`, `0` = background/air). Both share a
//! [`VolumeHeader`] describing grid dimensions and voxel spacing in mm.
//!
//! Data is dense, x-fastest: voxel `(x, y, z)` lives at index
//! `x + dims[0]*(y + dims[1]*z)`.
//!
//! The `.vvol` file format is one line of JSON (the header) followed by the
//! raw little-endian payload. It is deliberately minimal so that round-trips
//! are bit-exact and any language can parse it; NIfTI/DICOM are out of scope.

mod phantom;

pub use phantom::{make_phantom, make_phantom_family, PhantomShape, PhantomSpec};

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Header
// ---------------------------------------------------------------------------

/// Element type of the on-disk payload. In memory scalar volumes are always
/// `f64`; the dtype is kept so that saving reproduces the original file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    I16,
    F32,
    F64,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::I16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Whether the payload is a scalar field or a label map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Scalar,
    Label,
}

/// Anatomical slicing direction. The index convention is fixed here once and
/// for all so that multi-direction fusion is reproducible:
/// axial slices fix `z`, sagittal slices fix `x`, coronal slices fix `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Axial,
    Sagittal,
    Coronal,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Sagittal, Axis::Coronal];

    /// The volume dimension held fixed by slices along this axis.
    pub fn fixed_dim(self) -> usize {
        match self {
            Axis::Axial => 2,
            Axis::Sagittal => 0,
            Axis::Coronal => 1,
        }
    }

    /// The two volume dimensions spanning the slice plane, in
    /// (width, height) order.
    pub fn plane_dims(self) -> (usize, usize) {
        match self {
            Axis::Axial => (0, 1),
            Axis::Sagittal => (1, 2),
            Axis::Coronal => (0, 2),
        }
    }

    /// Maps in-plane pixel coordinates `(u, v)` at slice `index` back to a
    /// voxel coordinate.
    pub fn voxel_at(self, index: usize, u: usize, v: usize) -> [usize; 3] {
        match self {
            Axis::Axial => [u, v, index],
            Axis::Sagittal => [index, u, v],
            Axis::Coronal => [u, index, v],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Sagittal => "sagittal",
            Axis::Coronal => "coronal",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Axis> {
        match s {
            "axial" => Ok(Axis::Axial),
            "sagittal" => Ok(Axis::Sagittal),
            "coronal" => Ok(Axis::Coronal),
            other => Err(Error::Validation(format!(
                "unknown axis {other:?} (expected axial, sagittal or coronal)"
            ))),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid geometry plus payload description; serialized verbatim as the first
/// line of a `.vvol` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    /// Voxels per axis (x, y, z).
    pub dims: [usize; 3],
    /// Voxel edge lengths in mm.
    pub spacing: [f64; 3],
    pub dtype: Dtype,
    pub kind: VolumeKind,
    /// Highest label value in use; present iff `kind == Label`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_labels: Option<u8>,
}

impl VolumeHeader {
    pub fn scalar(dims: [usize; 3], spacing: [f64; 3], dtype: Dtype) -> VolumeHeader {
        VolumeHeader {
            dims,
            spacing,
            dtype,
            kind: VolumeKind::Scalar,
            n_labels: None,
        }
    }

    pub fn label(dims: [usize; 3], spacing: [f64; 3], n_labels: u8) -> VolumeHeader {
        VolumeHeader {
            dims,
            spacing,
            dtype: Dtype::U8,
            kind: VolumeKind::Label,
            n_labels: Some(n_labels),
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Flat index of voxel `(x, y, z)`; x-fastest ordering.
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Format(format!(
                "all dims must be ≥ 1, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Format(format!(
                "all spacings must be positive and finite, got {:?}",
                self.spacing
            )));
        }
        match self.kind {
            VolumeKind::Label => {
                if self.dtype != Dtype::U8 {
                    return Err(Error::Format("label volumes must use dtype u8".into()));
                }
                match self.n_labels {
                    None => return Err(Error::Format("label volume header lacks n_labels".into())),
                    Some(0) => {
                        return Err(Error::Format("n_labels must be ≥ 1".into()));
                    }
                    Some(_) => {}
                }
            }
            VolumeKind::Scalar => {
                if self.n_labels.is_some() {
                    return Err(Error::Format(
                        "scalar volume header must not carry n_labels".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn check_same_grid(&self, other: &VolumeHeader, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        if self.spacing != other.spacing {
            return Err(Error::Shape(format!(
                "{what}: spacing {:?} vs {:?}",
                self.spacing, other.spacing
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Volumes
// ---------------------------------------------------------------------------

/// Dense 3D grid of real values (MRI intensities, conductivities, potentials,
/// field magnitudes). Values are `f64` in memory; `header.dtype` only governs
/// on-disk representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    pub header: VolumeHeader,
    pub data: Vec<f64>,
}

impl ScalarVolume {
    /// All-zero volume stored as f64 on disk.
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> ScalarVolume {
        let header = VolumeHeader::scalar(dims, spacing, Dtype::F64);
        let data = vec![0.0; header.voxel_count()];
        ScalarVolume { header, data }
    }

    pub fn from_data(header: VolumeHeader, data: Vec<f64>) -> Result<ScalarVolume> {
        header.validate()?;
        if header.kind != VolumeKind::Scalar {
            return Err(Error::Validation("header kind must be scalar".into()));
        }
        if data.len() != header.voxel_count() {
            return Err(Error::Shape(format!(
                "payload has {} values, dims {:?} require {}",
                data.len(),
                header.dims,
                header.voxel_count()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {v} in volume data"
            )));
        }
        Ok(ScalarVolume { header, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.header.dims
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.header.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.header.index(x, y, z);
        self.data[i] = v;
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_volume(&Volume::Scalar(self.clone()), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScalarVolume> {
        match load_volume(path)? {
            Volume::Scalar(v) => Ok(v),
            Volume::Label(_) => Err(Error::Validation(
                "expected a scalar volume, found a label volume".into(),
            )),
        }
    }
}

/// Dense 3D grid of structure/tissue labels; `0` is background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub header: VolumeHeader,
    pub data: Vec<u8>,
}

impl LabelVolume {
    pub fn zeros(dims: [usize; 3], spacing: [f64; 3], n_labels: u8) -> Result<LabelVolume> {
        let header = VolumeHeader::label(dims, spacing, n_labels);
        header.validate()?;
        let data = vec![0u8; header.voxel_count()];
        Ok(LabelVolume { header, data })
    }

    pub fn from_data(header: VolumeHeader, data: Vec<u8>) -> Result<LabelVolume> {
        header.validate()?;
        if header.kind != VolumeKind::Label {
            return Err(Error::Validation("header kind must be label".into()));
        }
        if data.len() != header.voxel_count() {
            return Err(Error::Shape(format!(
                "payload has {} values, dims {:?} require {}",
                data.len(),
                header.dims,
                header.voxel_count()
            )));
        }
        let n = header.n_labels.unwrap();
        if let Some(&v) = data.iter().find(|&&v| v > n) {
            return Err(Error::Validation(format!(
                "label value {v} exceeds n_labels = {n}"
            )));
        }
        Ok(LabelVolume { header, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.header.dims
    }

    pub fn n_labels(&self) -> u8 {
        self.header.n_labels.unwrap_or(0)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.header.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u8) {
        let i = self.header.index(x, y, z);
        self.data[i] = v;
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_volume(&Volume::Label(self.clone()), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LabelVolume> {
        match load_volume(path)? {
            Volume::Label(v) => Ok(v),
            Volume::Scalar(_) => Err(Error::Validation(
                "expected a label volume, found a scalar volume".into(),
            )),
        }
    }
}

/// Either volume flavour, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

impl Volume {
    pub fn header(&self) -> &VolumeHeader {
        match self {
            Volume::Scalar(v) => &v.header,
            Volume::Label(v) => &v.header,
        }
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

/// Writes a volume in `.vvol` format: one line of JSON, `\n`, raw
/// little-endian payload in x-fastest order.
///
/// Scalar data is stored at `header.dtype`; values must be exactly
/// representable there (integral and in range for `u8`/`i16`, round-trippable
/// for `f32`) so that save→load→save is byte-identical.
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_volume(v)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

/// In-memory `.vvol` encoding; used by [`save_volume`] and by byte-level
/// determinism checks.
pub fn encode_volume(v: &Volume) -> Result<Vec<u8>> {
    let header = v.header();
    header.validate()?;
    let mut out = serde_json::to_string(header)?.into_bytes();
    out.push(b'\n');
    match v {
        Volume::Label(lv) => {
            debug_assert_eq!(header.dtype, Dtype::U8);
            out.extend_from_slice(&lv.data);
        }
        Volume::Scalar(sv) => {
            for (i, &val) in sv.data.iter().enumerate() {
                if !val.is_finite() {
                    return Err(Error::Validation(format!(
                        "non-finite value {val} at flat index {i}"
                    )));
                }
                match header.dtype {
                    Dtype::U8 => {
                        if val.fract() != 0.0 || !(0.0..=255.0).contains(&val) {
                            return Err(Error::Validation(format!(
                                "value {val} at flat index {i} not representable as u8"
                            )));
                        }
                        out.push(val as u8);
                    }
                    Dtype::I16 => {
                        if val.fract() != 0.0 || !(-32768.0..=32767.0).contains(&val) {
                            return Err(Error::Validation(format!(
                                "value {val} at flat index {i} not representable as i16"
                            )));
                        }
                        out.extend_from_slice(&(val as i16).to_le_bytes());
                    }
                    Dtype::F32 => {
                        let f = val as f32;
                        if f as f64 != val {
                            return Err(Error::Validation(format!(
                                "value {val} at flat index {i} not representable as f32"
                            )));
                        }
                        out.extend_from_slice(&f.to_le_bytes());
                    }
                    Dtype::F64 => out.extend_from_slice(&val.to_le_bytes()),
                }
            }
        }
    }
    Ok(out)
}

/// Reads a `.vvol` file written by [`save_volume`].
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let bytes = std::fs::read(path.as_ref())?;
    decode_volume(&bytes)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line terminator".into()))?;
    let header: VolumeHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Format(format!("malformed header: {e}")))?;
    header.validate()?;
    let payload = &bytes[newline + 1..];
    let expected = header.voxel_count() * header.dtype.size_bytes();
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header requires {expected}",
            payload.len()
        )));
    }
    match header.kind {
        VolumeKind::Label => {
            let data = payload.to_vec();
            Ok(Volume::Label(LabelVolume::from_data(header, data)?))
        }
        VolumeKind::Scalar => {
            let n = header.voxel_count();
            let mut data = Vec::with_capacity(n);
            match header.dtype {
                Dtype::U8 => data.extend(payload.iter().map(|&b| b as f64)),
                Dtype::I16 => {
                    for c in payload.chunks_exact(2) {
                        data.push(i16::from_le_bytes([c[0], c[1]]) as f64);
                    }
                }
                Dtype::F32 => {
                    for c in payload.chunks_exact(4) {
                        let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                        if !v.is_finite() {
                            return Err(Error::Format(format!("non-finite payload value {v}")));
                        }
                        data.push(v);
                    }
                }
                Dtype::F64 => {
                    for c in payload.chunks_exact(8) {
                        let v = f64::from_le_bytes(c.try_into().unwrap());
                        if !v.is_finite() {
                            return Err(Error::Format(format!("non-finite payload value {v}")));
                        }
                        data.push(v);
                    }
                }
            }
            Ok(Volume::Scalar(ScalarVolume { header, data }))
        }
    }
}

// ---------------------------------------------------------------------------
// Slicing
// ---------------------------------------------------------------------------

/// One 2D plane of real values extracted from a volume. Pixel `(u, v)` lives
/// at `values[v * width + u]`; the `(u, v)` → voxel mapping is defined by
/// [`Axis::voxel_at`].
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub axis: Axis,
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Label counterpart of [`Slice2D`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSlice2D {
    pub axis: Axis,
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

fn plane_extent(dims: [usize; 3], axis: Axis) -> (usize, usize) {
    let (du, dv) = axis.plane_dims();
    (dims[du], dims[dv])
}

fn check_slice_index(dims: [usize; 3], axis: Axis, index: usize) -> Result<()> {
    let bound = dims[axis.fixed_dim()];
    if index >= bound {
        return Err(Error::Bounds(format!(
            "{axis} slice index {index} outside 0..{bound}"
        )));
    }
    Ok(())
}

/// Extracts the plane `index` along `axis` from a scalar volume.
pub fn extract_slice(v: &ScalarVolume, axis: Axis, index: usize) -> Result<Slice2D> {
    check_slice_index(v.header.dims, axis, index)?;
    let (width, height) = plane_extent(v.header.dims, axis);
    let mut values = Vec::with_capacity(width * height);
    for vv in 0..height {
        for u in 0..width {
            let [x, y, z] = axis.voxel_at(index, u, vv);
            values.push(v.at(x, y, z));
        }
    }
    Ok(Slice2D {
        axis,
        index,
        width,
        height,
        values,
    })
}

/// Writes a slice back into the volume plane it came from.
pub fn insert_slice(v: &mut ScalarVolume, slice: &Slice2D) -> Result<()> {
    check_slice_index(v.header.dims, slice.axis, slice.index)?;
    let (width, height) = plane_extent(v.header.dims, slice.axis);
    if (slice.width, slice.height) != (width, height) {
        return Err(Error::Shape(format!(
            "slice is {}×{}, {} plane requires {width}×{height}",
            slice.width, slice.height, slice.axis
        )));
    }
    for vv in 0..height {
        for u in 0..width {
            let [x, y, z] = slice.axis.voxel_at(slice.index, u, vv);
            v.set(x, y, z, slice.values[vv * width + u]);
        }
    }
    Ok(())
}

/// Extracts the plane `index` along `axis` from a label volume.
pub fn extract_label_slice(v: &LabelVolume, axis: Axis, index: usize) -> Result<LabelSlice2D> {
    check_slice_index(v.header.dims, axis, index)?;
    let (width, height) = plane_extent(v.header.dims, axis);
    let mut labels = Vec::with_capacity(width * height);
    for vv in 0..height {
        for u in 0..width {
            let [x, y, z] = axis.voxel_at(index, u, vv);
            labels.push(v.at(x, y, z));
        }
    }
    Ok(LabelSlice2D {
        axis,
        index,
        width,
        height,
        labels,
    })
}

// ---------------------------------------------------------------------------
// Masking and embedding
// ---------------------------------------------------------------------------

/// Zeroes every voxel whose mask label is not in `keep` (skull-stripping when
/// `keep` is the set of brain labels).
pub fn apply_mask(v: &ScalarVolume, mask: &LabelVolume, keep: &[u8]) -> Result<ScalarVolume> {
    v.header.check_same_grid(&mask.header, "apply_mask")?;
    let mut keep_set = [false; 256];
    for &k in keep {
        keep_set[k as usize] = true;
    }
    let mut out = v.clone();
    for (o, &m) in out.data.iter_mut().zip(mask.data.iter()) {
        if !keep_set[m as usize] {
            *o = 0.0;
        }
    }
    Ok(out)
}

/// Overlays a deep-structure segmentation onto a whole-head tissue model:
/// wherever `deep` is nonzero the output takes `deep + label_offset`,
/// elsewhere it keeps `base`. The canonical use passes
/// `label_offset = base.n_labels()` so the embedded structures occupy a fresh
/// label range.
pub fn embed_labels(
    base: &LabelVolume,
    deep: &LabelVolume,
    label_offset: u8,
) -> Result<LabelVolume> {
    base.header.check_same_grid(&deep.header, "embed_labels")?;
    let base_n = base.n_labels() as u32;
    let deep_n = deep.n_labels() as u32;
    let offset = label_offset as u32;
    let total = base_n + deep_n;
    if total > 255 {
        return Err(Error::Validation(format!(
            "combined label count {total} exceeds u8 range"
        )));
    }
    if offset + deep_n > 255 {
        return Err(Error::Validation(format!(
            "label overflow: offset {offset} + {deep_n} deep labels exceeds u8 range"
        )));
    }
    if offset > base_n {
        return Err(Error::Validation(format!(
            "label overflow: offset {offset} exceeds base label count {base_n}, embedded \
             values would pass the combined label count {total}"
        )));
    }
    let mut out = base.clone();
    // max() rather than the plain sum keeps the operation idempotent: once the
    // deep range is already part of `base`, re-embedding changes nothing. For
    // the canonical offset = base.n_labels() the two coincide.
    out.header.n_labels = Some(base_n.max(offset + deep_n) as u8);
    for (o, &d) in out.data.iter_mut().zip(deep.data.iter()) {
        if d > 0 {
            *o = d + label_offset;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Probability stacks
// ---------------------------------------------------------------------------

/// Per-direction network output: one probability volume per structure track,
/// all on the source volume's grid. Produced by slice-wise inference along
/// `axis` and consumed by the fusion stage.
#[derive(Debug, Clone)]
pub struct ProbabilityStack {
    pub axis: Axis,
    /// `maps[n]` holds structure `n+1`'s probability at every voxel.
    pub maps: Vec<ScalarVolume>,
}

impl ProbabilityStack {
    pub fn degree(&self) -> usize {
        self.maps.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.maps[0].header.dims
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_volume(dims: [usize; 3]) -> ScalarVolume {
        // voxel (i,j,k) = i + 10j + 100k: lets index arithmetic be read off
        // directly in assertions.
        let mut v = ScalarVolume::zeros(dims, [1.0, 1.0, 1.0]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    v.set(x, y, z, x as f64 + 10.0 * y as f64 + 100.0 * z as f64);
                }
            }
        }
        v
    }

    #[test]
    fn round_trip_all_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        for dtype in [Dtype::U8, Dtype::I16, Dtype::F32, Dtype::F64] {
            let header = VolumeHeader::scalar([4, 4, 4], [1.0, 1.0, 1.0], dtype);
            let data = (0..64).map(|i| i as f64).collect();
            let v = ScalarVolume::from_data(header, data).unwrap();
            let path = dir.path().join(format!("{dtype:?}.vvol"));
            v.save(&path).unwrap();
            let loaded = ScalarVolume::load(&path).unwrap();
            assert_eq!(v, loaded);
            // Byte-identical second generation.
            let first = std::fs::read(&path).unwrap();
            let second = encode_volume(&Volume::Scalar(loaded)).unwrap();
            assert_eq!(first, second);
        }
    }

    #[test]
    fn round_trip_label_volume() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = LabelVolume::zeros([3, 3, 3], [1.0, 1.0, 1.0], 7).unwrap();
        v.set(1, 2, 0, 7);
        v.set(0, 0, 2, 3);
        let path = dir.path().join("labels.vvol");
        v.save(&path).unwrap();
        let loaded = LabelVolume::load(&path).unwrap();
        assert_eq!(v, loaded);
    }

    #[test]
    fn truncated_payload_rejected() {
        let header = VolumeHeader::scalar([2, 2, 2], [1.0, 1.0, 1.0], Dtype::F32);
        let mut bytes = serde_json::to_string(&header).unwrap().into_bytes();
        bytes.push(b'\n');
        bytes.extend_from_slice(&[0u8; 7 * 4]); // 7 of 8 values
        match decode_volume(&bytes) {
            Err(Error::Format(_)) => {}
            other => panic!("expected FormatError, got {other:?}"),
        }
    }

    #[test]
    fn label_above_n_labels_rejected() {
        let header = VolumeHeader::label([2, 1, 1], [1.0, 1.0, 1.0], 7);
        let mut bytes = serde_json::to_string(&header).unwrap().into_bytes();
        bytes.push(b'\n');
        bytes.extend_from_slice(&[9, 0]);
        match decode_volume(&bytes) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected ValidationError, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_rejected() {
        let bytes = b"{\"dims\": [2, 2\n".to_vec();
        assert!(matches!(decode_volume(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unrepresentable_values_rejected_on_save() {
        let header = VolumeHeader::scalar([1, 1, 1], [1.0, 1.0, 1.0], Dtype::U8);
        let v = ScalarVolume::from_data(header, vec![0.5]).unwrap();
        assert!(matches!(
            encode_volume(&Volume::Scalar(v)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn axial_slice_matches_index_arithmetic() {
        let v = ramp_volume([4, 3, 2]);
        let s = extract_slice(&v, Axis::Axial, 1).unwrap();
        assert_eq!((s.width, s.height), (4, 3));
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(s.values[y * 4 + x], x as f64 + 10.0 * y as f64 + 100.0);
            }
        }
    }

    #[test]
    fn sagittal_and_coronal_orientation() {
        let v = ramp_volume([4, 3, 2]);
        let s = extract_slice(&v, Axis::Sagittal, 2).unwrap();
        assert_eq!((s.width, s.height), (3, 2));
        // (u,v) = (y,z) at x=2
        assert_eq!(s.values[1 * 3 + 2], 2.0 + 10.0 * 2.0 + 100.0);
        let c = extract_slice(&v, Axis::Coronal, 1).unwrap();
        assert_eq!((c.width, c.height), (4, 2));
        // (u,v) = (x,z) at y=1
        assert_eq!(c.values[1 * 4 + 3], 3.0 + 10.0 + 100.0);
    }

    #[test]
    fn extract_insert_round_trip_every_axis() {
        let v = ramp_volume([4, 6, 2]);
        for axis in Axis::ALL {
            let mut rebuilt = ScalarVolume::zeros(v.dims(), v.header.spacing);
            for index in 0..v.dims()[axis.fixed_dim()] {
                let s = extract_slice(&v, axis, index).unwrap();
                insert_slice(&mut rebuilt, &s).unwrap();
            }
            assert_eq!(v, rebuilt);
        }
    }

    #[test]
    fn slice_index_bound() {
        let v = ramp_volume([4, 3, 2]);
        assert!(matches!(
            extract_slice(&v, Axis::Axial, 2),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn slicing_partitions_voxels() {
        // The multiset of all slices along any axis contains every voxel
        // exactly once: sums must agree with the volume sum.
        let v = ramp_volume([5, 4, 3]);
        let total: f64 = v.data.iter().sum();
        for axis in Axis::ALL {
            let mut acc = 0.0;
            let mut count = 0usize;
            for index in 0..v.dims()[axis.fixed_dim()] {
                let s = extract_slice(&v, axis, index).unwrap();
                acc += s.values.iter().sum::<f64>();
                count += s.values.len();
            }
            assert_eq!(count, v.data.len());
            assert_eq!(acc, total);
        }
    }

    #[test]
    fn apply_mask_keeps_only_requested_labels() {
        let v = ramp_volume([2, 2, 1]);
        let mut mask = LabelVolume::zeros([2, 2, 1], [1.0, 1.0, 1.0], 2).unwrap();
        mask.set(1, 0, 0, 1);
        mask.set(0, 1, 0, 2);
        let kept = apply_mask(&v, &mask, &[1]).unwrap();
        assert_eq!(kept.at(1, 0, 0), v.at(1, 0, 0));
        assert_eq!(kept.at(0, 1, 0), 0.0);
        assert_eq!(kept.at(0, 0, 0), 0.0);

        // keep = all labels present → unchanged
        let all = apply_mask(&v, &mask, &[0, 1, 2]).unwrap();
        assert_eq!(all, v);

        // empty keep-set → all zero
        let none = apply_mask(&v, &mask, &[]).unwrap();
        assert!(none.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn embed_labels_offsets_deep_structures() {
        let base = LabelVolume::zeros([2, 2, 1], [1.0, 1.0, 1.0], 13).unwrap();
        let mut deep = LabelVolume::zeros([2, 2, 1], [1.0, 1.0, 1.0], 7).unwrap();
        deep.set(1, 1, 0, 1);
        let out = embed_labels(&base, &deep, 13).unwrap();
        assert_eq!(out.at(1, 1, 0), 14);
        assert_eq!(out.at(0, 0, 0), 0);
        assert_eq!(out.n_labels(), 20);

        // Idempotence: embedding the same deep volume into the result again
        // reproduces it exactly, header included.
        let again = embed_labels(&out, &deep, 13).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn embed_labels_overflow() {
        let base = LabelVolume::zeros([1, 1, 1], [1.0, 1.0, 1.0], 250).unwrap();
        let deep = LabelVolume::zeros([1, 1, 1], [1.0, 1.0, 1.0], 7).unwrap();
        assert!(matches!(
            embed_labels(&base, &deep, 250),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn embed_all_zero_deep_is_identity_on_data() {
        let mut base = LabelVolume::zeros([2, 2, 2], [1.0, 1.0, 1.0], 3).unwrap();
        base.set(0, 1, 1, 2);
        let deep = LabelVolume::zeros([2, 2, 2], [1.0, 1.0, 1.0], 2).unwrap();
        let out = embed_labels(&base, &deep, 3).unwrap();
        assert_eq!(out.data, base.data);
        assert_eq!(out.n_labels(), 5);
    }
}
