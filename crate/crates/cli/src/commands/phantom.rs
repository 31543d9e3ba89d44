use std::fs;

use headfield_core::assets::DEEP7_PHANTOM_JSON;
use headfield_core::error::Result;
use headfield_core::volume::{make_phantom, make_phantom_family, PhantomSpec};

use crate::manifest::RunRecorder;
use crate::PhantomArgs;

pub fn run(args: &PhantomArgs) -> Result<()> {
    let mut rec = RunRecorder::new("phantom", super::config_value(args)?, Some(args.seed));
    let text = if args.spec == "deep7" {
        DEEP7_PHANTOM_JSON.to_string()
    } else {
        rec.input(&args.spec);
        fs::read_to_string(&args.spec)?
    };
    let spec = PhantomSpec::from_json(&text)?;
    fs::create_dir_all(&args.out)?;

    match args.family {
        None => {
            let (mri, labels) = make_phantom(&spec, args.seed)?;
            let mri_path = args.out.join("mri.vvol");
            let labels_path = args.out.join("labels.vvol");
            mri.save(&mri_path)?;
            labels.save(&labels_path)?;
            rec.output(&mri_path);
            rec.output(&labels_path);
        }
        Some(count) => {
            for (i, (mri, labels)) in make_phantom_family(&spec, count, args.seed)?
                .into_iter()
                .enumerate()
            {
                let dir = args.out.join(format!("case{i:02}"));
                fs::create_dir_all(&dir)?;
                let mri_path = dir.join("mri.vvol");
                let labels_path = dir.join("labels.vvol");
                mri.save(&mri_path)?;
                labels.save(&labels_path)?;
                rec.output(&mri_path);
                rec.output(&labels_path);
            }
        }
    }
    rec.write(args.out.join("manifest.json"))
}
