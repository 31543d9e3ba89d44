use std::path::PathBuf;

use headfield_core::error::Result;
use headfield_core::volume::{embed_labels, LabelVolume};

use crate::manifest::RunRecorder;
use crate::AssembleArgs;

pub fn run(args: &AssembleArgs) -> Result<()> {
    let mut rec = RunRecorder::new("assemble-model", super::config_value(args)?, None);
    rec.input(&args.base);
    rec.input(&args.deep);
    let base = LabelVolume::load(&args.base)?;
    let deep = LabelVolume::load(&args.deep)?;
    let merged = embed_labels(&base, &deep, args.offset)?;
    merged.save(&args.out)?;
    rec.output(&args.out);
    rec.write(PathBuf::from(format!(
        "{}.manifest.json",
        args.out.display()
    )))
}
