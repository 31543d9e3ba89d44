use std::fs;

use headfield_core::assets::{DEEP7_PHANTOM_JSON, HEAD_TISSUES_JSON, SLAB_PLATES_JSON};
use headfield_core::error::Result;

use crate::manifest::RunRecorder;
use crate::AssetsArgs;

pub fn run(args: &AssetsArgs) -> Result<()> {
    let mut rec = RunRecorder::new("assets", super::config_value(args)?, None);
    fs::create_dir_all(&args.out)?;
    for (name, text) in [
        ("deep7.json", DEEP7_PHANTOM_JSON),
        ("tissues.json", HEAD_TISSUES_JSON),
        ("slab_plates.json", SLAB_PLATES_JSON),
    ] {
        let path = args.out.join(name);
        fs::write(&path, text)?;
        rec.output(&path);
    }
    rec.write(args.out.join("manifest.json"))
}
