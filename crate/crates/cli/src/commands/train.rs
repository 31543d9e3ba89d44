use std::fs;
use std::path::PathBuf;

use headfield_core::error::{Error, Result};
use headfield_core::network::{save_checkpoint, train, volume_samples, NetworkSpec, TrainConfig};
use headfield_core::volume::{LabelVolume, ScalarVolume};

use crate::manifest::RunRecorder;
use crate::TrainArgs;

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut rec = RunRecorder::new("train", super::config_value(args)?, Some(args.seed));
    let axis = super::parse_axis(&args.axis)?;
    if args.slice_stride == 0 {
        return Err(Error::Validation("slice stride must be at least 1".into()));
    }

    let mut spec = NetworkSpec::new(
        args.degree,
        args.depth,
        args.input_size,
        args.encoder_kernel,
    );
    if let Some(list) = &args.kernels {
        spec.decoder_kernels = Some(super::parse_list(list, "kernel")?);
    }
    spec.validate()?;

    // Dataset convention: one {case}/mri.vvol + {case}/labels.vvol pair per
    // subdirectory, cases in name order.
    let mut cases: Vec<PathBuf> = fs::read_dir(&args.data)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("mri.vvol").is_file() && p.join("labels.vvol").is_file())
        .collect();
    cases.sort();
    if cases.is_empty() {
        return Err(Error::Validation(format!(
            "dataset directory {} holds no case subdirectories with mri.vvol + labels.vvol",
            args.data.display()
        )));
    }

    let mut samples = Vec::new();
    for case in &cases {
        let mri_path = case.join("mri.vvol");
        let labels_path = case.join("labels.vvol");
        let mri = ScalarVolume::load(&mri_path)?;
        let labels = LabelVolume::load(&labels_path)?;
        rec.input(&mri_path);
        rec.input(&labels_path);
        let all = volume_samples(&mri, &labels, axis, &spec)?;
        samples.extend(all.into_iter().step_by(args.slice_stride));
    }

    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        learning_rate: args.learning_rate,
        rng_seed: args.seed,
        val_fraction: args.val_fraction,
        ..TrainConfig::default()
    };
    let (params, logs) = train(&spec, &samples, &cfg)?;

    save_checkpoint(&params, &args.out)?;
    rec.output(&args.out);
    let log_path = PathBuf::from(format!("{}.log.json", args.out.display()));
    let log_text = serde_json::to_string_pretty(&logs).map_err(Error::Json)?;
    fs::write(&log_path, log_text + "\n")?;
    rec.output(&log_path);
    let last = logs.last().expect("at least one epoch");
    match last.val_loss {
        Some(v) => eprintln!(
            "trained {} epochs on {} slices: loss {:.6}, val {:.6}",
            logs.len(),
            samples.len(),
            last.train_loss,
            v
        ),
        None => eprintln!(
            "trained {} epochs on {} slices: loss {:.6}",
            logs.len(),
            samples.len(),
            last.train_loss
        ),
    }
    rec.write(PathBuf::from(format!(
        "{}.manifest.json",
        args.out.display()
    )))
}
