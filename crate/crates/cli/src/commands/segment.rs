use std::path::PathBuf;

use headfield_core::error::Result;
use headfield_core::fusion::{probability_fuse_infer, FusionConfig, GmMask};
use headfield_core::network::{infer_volume, load_checkpoint};
use headfield_core::volume::{LabelVolume, ScalarVolume};

use crate::manifest::RunRecorder;
use crate::SegmentArgs;

pub fn run(args: &SegmentArgs) -> Result<()> {
    let mut rec = RunRecorder::new("segment", super::config_value(args)?, None);
    rec.input(&args.mri);
    let mri = ScalarVolume::load(&args.mri)?;
    let mut params = Vec::with_capacity(3);
    for path in [&args.axial, &args.sagittal, &args.coronal] {
        rec.input(path);
        params.push(load_checkpoint(path)?);
    }
    let params: [_; 3] = params.try_into().expect("three checkpoints");

    let gm_mask = match (&args.gm_mask, &args.gm_labels) {
        (Some(path), Some(list)) => {
            rec.input(path);
            Some(GmMask {
                mask: LabelVolume::load(path)?,
                allowed: super::parse_list(list, "mask label")?,
            })
        }
        // clap's `requires` makes the flags come in pairs.
        _ => None,
    };
    let cfg = FusionConfig {
        epsilon: args.epsilon,
        neighborhood: args.neighborhood,
        gm_mask,
    };

    let stacks = infer_volume(&params, &mri)?;
    let fused = probability_fuse_infer(&stacks, &cfg)?;
    fused.save(&args.out)?;
    rec.output(&args.out);
    rec.write(PathBuf::from(format!(
        "{}.manifest.json",
        args.out.display()
    )))
}
