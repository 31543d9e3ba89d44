//! Synthetic ellipsoid phantoms: desk-scale stand-ins for head MRI datasets.
//!
//! A phantom descriptor lists ellipsoids in voxel coordinates, each carrying a
//! structure label and a mean intensity. Rasterization paints them in order
//! (later shapes overwrite earlier ones), then additive Gaussian noise and a
//! clamp produce the "MRI". Shapes with label 0 are intensity-only: they shade
//! the image (for instance an outer head shell) without labeling anything.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dtype, LabelVolume, ScalarVolume, VolumeHeader};

/// One ellipsoid: voxel `(x,y,z)` belongs to it when
/// Σ_a ((p_a − center_a) / radii_a)² ≤ 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomShape {
    /// Structure label painted into the label volume; 0 = intensity only.
    pub label: u8,
    /// Ellipsoid center in voxel coordinates.
    pub center: [f64; 3],
    /// Semi-axes in voxels, all > 0.
    pub radii: [f64; 3],
    /// Mean image intensity inside the shape, before noise.
    pub mean_intensity: f64,
}

/// Full phantom descriptor as stored in JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(default = "default_dims")]
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing: [f64; 3],
    /// Image intensity outside every shape, before noise.
    pub background_mean: f64,
    /// Standard deviation of the additive Gaussian noise; 0 disables it.
    pub noise_sigma: f64,
    /// Intensities are clamped into this range after noise.
    #[serde(default = "default_clamp")]
    pub clamp: [f64; 2],
    pub shapes: Vec<PhantomShape>,
}

fn default_dims() -> [usize; 3] {
    [64, 64, 64]
}

fn default_spacing() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

fn default_clamp() -> [f64; 2] {
    [0.0, 255.0]
}

impl PhantomSpec {
    pub fn from_json(text: &str) -> Result<PhantomSpec> {
        let spec: PhantomSpec =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("phantom spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Highest structure label used by any shape.
    pub fn n_labels(&self) -> u8 {
        self.shapes.iter().map(|s| s.label).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation("phantom dims must be ≥ 1".into()));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation("phantom spacing must be > 0".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Validation("noise_sigma must be ≥ 0".into()));
        }
        if !(self.clamp[0] < self.clamp[1]) {
            return Err(Error::Validation("clamp range must satisfy lo < hi".into()));
        }
        if self.shapes.is_empty() {
            return Err(Error::Validation("phantom needs at least one shape".into()));
        }
        let n = self.n_labels();
        if n == 0 {
            return Err(Error::Validation(
                "phantom needs at least one shape with a nonzero label".into(),
            ));
        }
        // Every structure label up to the maximum must be represented by at
        // least one ellipsoid, otherwise downstream per-structure training
        // targets would be silently empty.
        let mut seen = vec![false; n as usize + 1];
        for shape in &self.shapes {
            seen[shape.label as usize] = true;
            if shape.radii.iter().any(|&r| !(r > 0.0)) {
                return Err(Error::Validation(format!(
                    "shape label {} has non-positive radius {:?}",
                    shape.label, shape.radii
                )));
            }
            for a in 0..3 {
                let lo = shape.center[a] - shape.radii[a];
                let hi = shape.center[a] + shape.radii[a];
                if !(lo >= 0.0 && hi <= (self.dims[a] - 1) as f64) {
                    return Err(Error::Validation(format!(
                        "shape label {} extends outside the grid on axis {a} \
                         (reach {lo:.2}..{hi:.2}, axis holds 0..{})",
                        shape.label,
                        self.dims[a] - 1
                    )));
                }
            }
        }
        if let Some(missing) = (1..=n).find(|&l| !seen[l as usize]) {
            return Err(Error::Validation(format!(
                "no ellipsoid carries label {missing} (labels must cover 1..={n})"
            )));
        }
        Ok(())
    }
}

/// Rasterizes a phantom descriptor into a noisy intensity volume (`f32` on
/// disk) and its ground-truth label volume. Deterministic for a fixed seed.
pub fn make_phantom(spec: &PhantomSpec, seed: u64) -> Result<(ScalarVolume, LabelVolume)> {
    spec.validate()?;
    let dims = spec.dims;
    let count = dims[0] * dims[1] * dims[2];
    let mut intensity = vec![spec.background_mean; count];
    let mut labels = vec![0u8; count];

    let index = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    for shape in &spec.shapes {
        let lo = |a: usize| (shape.center[a] - shape.radii[a]).floor().max(0.0) as usize;
        let hi = |a: usize| ((shape.center[a] + shape.radii[a]).ceil() as usize).min(dims[a] - 1);
        for z in lo(2)..=hi(2) {
            let dz = (z as f64 - shape.center[2]) / shape.radii[2];
            for y in lo(1)..=hi(1) {
                let dy = (y as f64 - shape.center[1]) / shape.radii[1];
                for x in lo(0)..=hi(0) {
                    let dx = (x as f64 - shape.center[0]) / shape.radii[0];
                    if dx * dx + dy * dy + dz * dz <= 1.0 {
                        let i = index(x, y, z);
                        intensity[i] = shape.mean_intensity;
                        if shape.label > 0 {
                            labels[i] = shape.label;
                        }
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::Validation(format!("noise distribution: {e}")))?;
    for v in intensity.iter_mut() {
        let noisy = *v + noise.sample(&mut rng);
        let clamped = noisy.clamp(spec.clamp[0], spec.clamp[1]);
        // The image is stored as f32; round now so the in-memory volume equals
        // its own save/load round-trip bit for bit.
        *v = clamped as f32 as f64;
    }

    let mri = ScalarVolume::from_data(
        VolumeHeader::scalar(dims, spec.spacing, Dtype::F32),
        intensity,
    )?;
    let truth = LabelVolume::from_data(
        VolumeHeader::label(dims, spec.spacing, spec.n_labels()),
        labels,
    )?;
    Ok((mri, truth))
}

/// Generates `count` anatomical variants of one descriptor: every ellipsoid's
/// center is jittered by up to ±2 voxels and its radii by up to ±1 voxel,
/// clamped so shapes stay inside the grid and non-degenerate. Member `i` is
/// fully determined by `base_seed + i`, so families are reproducible and
/// individual members can be regenerated in isolation.
pub fn make_phantom_family(
    spec: &PhantomSpec,
    count: usize,
    base_seed: u64,
) -> Result<Vec<(ScalarVolume, LabelVolume)>> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(i as u64));
            let mut member = spec.clone();
            for shape in &mut member.shapes {
                for a in 0..3 {
                    let half = (spec.dims[a] - 1) as f64 / 2.0;
                    let r = (shape.radii[a] + rng.random_range(-1.0..=1.0)).clamp(1.0, half);
                    let c = (shape.center[a] + rng.random_range(-2.0..=2.0))
                        .clamp(r, (spec.dims[a] - 1) as f64 - r);
                    shape.radii[a] = r;
                    shape.center[a] = c;
                }
            }
            let noise_seed: u64 = rng.random();
            make_phantom(&member, noise_seed)
        })
        .collect()
}
