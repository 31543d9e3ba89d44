//! Single-encoder, multi-decoder segmentation networks.
//!
//! The architecture is a U-Net relative: one shared encoder column of
//! `depth+1` conv→BN→ReLU→maxpool stages, then `degree` independent decoder
//! tracks. Each track runs `depth+1` decode stages (2×2 stride-2
//! deconvolution →BN→ReLU followed by a convolution →BN→ReLU), adapts the
//! matching encoder output through a per-track skip convolution at each of
//! the `depth` intermediate resolutions, concatenates decoder-first, and
//! ends in a single-channel convolution + logistic sigmoid probability map.
//! One track per target structure: track n learns structure label n.
//!
//! Channel widths follow a fixed doubling law: encoder stage `i` emits
//! `2^(i+2)` channels, decode stage `j` emits `2^(j+1)`, skip adapters keep
//! their input width `2^(j+2)`, and the final map reads 4 channels. Spatial
//! sizes halve per encoder stage and double per decode stage, so an `S×S`
//! input yields `S×S` maps.
//!
//! Everything — forward, backward, ADAM, initialization — is implemented
//! here in plain `f64` so gradients can be validated against central finite
//! differences and training is bit-reproducible from a seed.

mod infer;
mod model;
pub mod ops;
mod train;

pub use infer::{infer_volume, normalize_slice, volume_samples};
pub use model::{batch_loss, forward, loss_and_gradients, Mode, TrainSample};
pub use train::{adam_step, train, AdamState, EpochLog, TrainConfig};

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Network specification
// ---------------------------------------------------------------------------

fn default_input_size() -> usize {
    256
}
fn default_kernel() -> usize {
    3
}

/// Architecture hyperparameters. `degree` is the number of decoder tracks
/// (= output structures), `depth` the number of intermediate resolutions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub degree: usize,
    pub depth: usize,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default = "default_kernel")]
    pub encoder_kernel: usize,
    /// Per-track convolution kernel (decode convs, skip adapters and map);
    /// defaults to `encoder_kernel` for every track.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_kernels: Option<Vec<usize>>,
}

impl NetworkSpec {
    pub fn new(degree: usize, depth: usize, input_size: usize, kernel: usize) -> NetworkSpec {
        NetworkSpec {
            degree,
            depth,
            input_size,
            encoder_kernel: kernel,
            decoder_kernels: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 || self.depth == 0 {
            return Err(Error::Spec("degree and depth must be at least 1".into()));
        }
        let s = self.input_size;
        if s == 0 || !s.is_power_of_two() {
            return Err(Error::Spec(format!("input size {s} is not a power of two")));
        }
        let div = 1usize << (self.depth + 1);
        if s % div != 0 {
            return Err(Error::Spec(format!(
                "input size {s} is not divisible by 2^(depth+1) = {div}"
            )));
        }
        let check_kernel = |k: usize| -> Result<()> {
            if k < 3 || k % 2 == 0 {
                return Err(Error::Spec(format!("kernel {k} must be odd and ≥ 3")));
            }
            Ok(())
        };
        check_kernel(self.encoder_kernel)?;
        if let Some(ks) = &self.decoder_kernels {
            if ks.len() != self.degree {
                return Err(Error::Spec(format!(
                    "expected {} decoder kernels, got {}",
                    self.degree,
                    ks.len()
                )));
            }
            for &k in ks {
                check_kernel(k)?;
            }
        }
        Ok(())
    }

    /// Kernel for decoder track `n` (1-based).
    pub fn track_kernel(&self, n: usize) -> usize {
        match &self.decoder_kernels {
            Some(ks) => ks[n - 1],
            None => self.encoder_kernel,
        }
    }

    /// Encoder stage output channels, `i` 1-based.
    pub(crate) fn enc_out(&self, i: usize) -> usize {
        1 << (i + 2)
    }

    pub(crate) fn enc_in(&self, i: usize) -> usize {
        if i == 1 {
            1
        } else {
            self.enc_out(i - 1)
        }
    }

    /// Decode stage deconvolution input channels, `j` 1-based
    /// (`depth+1` is the deepest stage).
    pub(crate) fn dec_in(&self, j: usize) -> usize {
        if j == self.depth + 1 {
            1 << (j + 2)
        } else {
            1 << (j + 3)
        }
    }

    pub(crate) fn dec_out(&self, j: usize) -> usize {
        1 << (j + 1)
    }

    pub(crate) fn skip_ch(&self, j: usize) -> usize {
        1 << (j + 2)
    }
}

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

/// Location of one named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    /// False for batch-norm running statistics.
    pub trainable: bool,
}

/// All parameters of one network as a single flat `f64` vector plus a
/// manifest describing the named tensors inside it. The manifest order is
/// frozen (encoder stages, then per track: decode stages deep→shallow, skip
/// adapters deep→shallow, map), which fixes both the checkpoint layout and
/// the initialization draw order.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    manifest: Vec<TensorMeta>,
    pub(crate) data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl NetworkParams {
    fn from_parts(spec: NetworkSpec, manifest: Vec<TensorMeta>, data: Vec<f64>) -> NetworkParams {
        let index = manifest
            .iter()
            .enumerate()
            .map(|(i, m)| (m.name.clone(), i))
            .collect();
        NetworkParams {
            spec,
            manifest,
            data,
            index,
        }
    }

    pub fn manifest(&self) -> &[TensorMeta] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn meta(&self, name: &str) -> &TensorMeta {
        &self.manifest[self.index[name]]
    }

    pub fn view(&self, name: &str) -> &[f64] {
        let m = self.meta(name);
        &self.data[m.offset..m.offset + m.len]
    }

    pub fn view_mut(&mut self, name: &str) -> &mut [f64] {
        let m = &self.manifest[self.index[name]];
        let (o, l) = (m.offset, m.len);
        &mut self.data[o..o + l]
    }

    /// A zero-filled gradient buffer with the same manifest.
    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams {
            spec: self.spec.clone(),
            manifest: self.manifest.clone(),
            data: vec![0.0; self.data.len()],
            index: self.index.clone(),
        }
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Builds the tensor manifest for a spec; returns it with the total length.
fn build_manifest(spec: &NetworkSpec) -> (Vec<TensorMeta>, usize) {
    let mut manifest = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, shape: Vec<usize>, trainable: bool, offset: &mut usize| {
        let len: usize = shape.iter().product();
        manifest.push(TensorMeta {
            name,
            shape,
            offset: *offset,
            len,
            trainable,
        });
        *offset += len;
    };
    let bn = |prefix: &str,
              c: usize,
              offset: &mut usize,
              push: &mut dyn FnMut(String, Vec<usize>, bool, &mut usize)| {
        push(format!("{prefix}.gamma"), vec![c], true, offset);
        push(format!("{prefix}.beta"), vec![c], true, offset);
        push(format!("{prefix}.running_mean"), vec![c], false, offset);
        push(format!("{prefix}.running_var"), vec![c], false, offset);
    };

    let d = spec.depth;
    let rk = spec.encoder_kernel;
    for i in 1..=d + 1 {
        let (ci, co) = (spec.enc_in(i), spec.enc_out(i));
        push(
            format!("enc{i}.conv.weight"),
            vec![co, ci, rk, rk],
            true,
            &mut offset,
        );
        push(format!("enc{i}.conv.bias"), vec![co], true, &mut offset);
        bn(&format!("enc{i}.bn"), co, &mut offset, &mut push);
    }
    for n in 1..=spec.degree {
        let k = spec.track_kernel(n);
        for j in (1..=d + 1).rev() {
            let (ci, co) = (spec.dec_in(j), spec.dec_out(j));
            let p = format!("track{n}.dec{j}");
            push(
                format!("{p}.deconv.weight"),
                vec![co, ci, 2, 2],
                true,
                &mut offset,
            );
            push(format!("{p}.deconv.bias"), vec![co], true, &mut offset);
            bn(&format!("{p}.bn_a"), co, &mut offset, &mut push);
            push(
                format!("{p}.conv.weight"),
                vec![co, co, k, k],
                true,
                &mut offset,
            );
            push(format!("{p}.conv.bias"), vec![co], true, &mut offset);
            bn(&format!("{p}.bn_b"), co, &mut offset, &mut push);
        }
        for j in (1..=d).rev() {
            let c = spec.skip_ch(j);
            let p = format!("track{n}.skip{j}");
            push(
                format!("{p}.conv.weight"),
                vec![c, c, k, k],
                true,
                &mut offset,
            );
            push(format!("{p}.conv.bias"), vec![c], true, &mut offset);
            bn(&format!("{p}.bn"), c, &mut offset, &mut push);
        }
        push(
            format!("track{n}.map.weight"),
            vec![1, 4, k, k],
            true,
            &mut offset,
        );
        push(format!("track{n}.map.bias"), vec![1], true, &mut offset);
    }
    (manifest, offset)
}

/// Builds and initializes a network: He-uniform weights (bound
/// `√(6/fan_in)`, fan-in = in_channels·k²), zero biases, γ=1, β=0, running
/// mean 0 and running variance 1. Draws happen in manifest order, so a seed
/// pins every parameter.
pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_network_from_rng(spec, &mut rng)
}

pub(crate) fn build_network_from_rng(
    spec: &NetworkSpec,
    rng: &mut ChaCha8Rng,
) -> Result<NetworkParams> {
    spec.validate()?;
    let (manifest, total) = build_manifest(spec);
    let mut data = vec![0.0; total];
    for m in &manifest {
        let slot = &mut data[m.offset..m.offset + m.len];
        if m.name.ends_with(".weight") {
            let fan_in: usize = m.shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in slot.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        } else if m.name.ends_with(".gamma") || m.name.ends_with(".running_var") {
            slot.fill(1.0);
        }
        // Biases, β and running means stay zero.
    }
    Ok(NetworkParams::from_parts(spec.clone(), manifest, data))
}

// ---------------------------------------------------------------------------
// Module shape audit
// ---------------------------------------------------------------------------

/// Output shape of one layer of one module, as produced by walking the
/// graph with the real channel/size rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleShape {
    pub module: String,
    pub layer: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Enumerates every module's output shape for a spec by propagating sizes
/// through the same rules the forward pass uses.
pub fn module_shapes(spec: &NetworkSpec) -> Result<Vec<ModuleShape>> {
    spec.validate()?;
    let mut out = Vec::new();
    let s = spec.input_size;
    let d = spec.depth;
    let mut sz = s;
    for i in 1..=d + 1 {
        let c = spec.enc_out(i);
        out.push(ModuleShape {
            module: format!("enc{i}"),
            layer: "conv".into(),
            channels: c,
            height: sz,
            width: sz,
        });
        sz /= 2;
        out.push(ModuleShape {
            module: format!("enc{i}"),
            layer: "pool".into(),
            channels: c,
            height: sz,
            width: sz,
        });
    }
    for n in 1..=spec.degree {
        let mut sz = s >> (d + 1);
        for j in (1..=d + 1).rev() {
            let c = spec.dec_out(j);
            sz *= 2;
            out.push(ModuleShape {
                module: format!("track{n}.dec{j}"),
                layer: "deconv".into(),
                channels: c,
                height: sz,
                width: sz,
            });
            out.push(ModuleShape {
                module: format!("track{n}.dec{j}"),
                layer: "conv".into(),
                channels: c,
                height: sz,
                width: sz,
            });
            if j > 1 {
                let sc = spec.skip_ch(j - 1);
                out.push(ModuleShape {
                    module: format!("track{n}.skip{}", j - 1),
                    layer: "conv".into(),
                    channels: sc,
                    height: sz,
                    width: sz,
                });
                out.push(ModuleShape {
                    module: format!("track{n}.concat{}", j - 1),
                    layer: "concat".into(),
                    channels: c + sc,
                    height: sz,
                    width: sz,
                });
            }
        }
        out.push(ModuleShape {
            module: format!("track{n}.map"),
            layer: "conv".into(),
            channels: 1,
            height: s,
            width: s,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_FORMAT: &str = "headfield-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    spec: NetworkSpec,
    count: usize,
    manifest: Vec<TensorMeta>,
}

/// Serializes parameters: one JSON header line, then the raw little-endian
/// `f64` payload. Round-trips bit-exactly.
pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        spec: params.spec.clone(),
        count: params.data.len(),
        manifest: params.manifest.clone(),
    };
    let mut buf = serde_json::to_string(&header)?.into_bytes();
    buf.push(b'\n');
    buf.reserve(params.data.len() * 8);
    for v in &params.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "not a checkpoint file (format '{}')",
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    header.spec.validate()?;
    let (expected_manifest, total) = build_manifest(&header.spec);
    if header.manifest != expected_manifest || header.count != total {
        return Err(Error::Format(
            "checkpoint manifest does not match its architecture spec".into(),
        ));
    }
    let payload = &bytes[nl + 1..];
    if payload.len() != total * 8 {
        return Err(Error::Format(format!(
            "checkpoint payload holds {} bytes, expected {}",
            payload.len(),
            total * 8
        )));
    }
    let mut data = Vec::with_capacity(total);
    for chunk in payload.chunks_exact(8) {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(
                "checkpoint contains non-finite values".into(),
            ));
        }
        data.push(v);
    }
    Ok(NetworkParams::from_parts(
        header.spec,
        expected_manifest,
        data,
    ))
}

// ---------------------------------------------------------------------------
