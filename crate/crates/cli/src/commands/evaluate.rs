use std::fs;
use std::path::PathBuf;

use headfield_core::error::{Error, Result};
use headfield_core::metrics::{
    dice, global_error, hausdorff, local_error, percentile_cap, HausdorffMode, MetricReport,
    RegionRow, StructureRow, SummaryStat,
};
use headfield_core::volume::{LabelVolume, ScalarVolume};

use crate::manifest::RunRecorder;
use crate::EvaluateArgs;

/// Folds one metric evaluation into an optional report cell: undefined
/// metrics (empty masks, zero fields) become empty cells, real errors abort.
fn cell(r: Result<f64>) -> Result<Option<SummaryStat>> {
    match r {
        Ok(v) => Ok(SummaryStat::from_values(&[v])),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn run(args: &EvaluateArgs) -> Result<()> {
    let mut rec = RunRecorder::new("evaluate", super::config_value(args)?, None);
    rec.input(&args.seg_a);
    rec.input(&args.seg_b);
    let a = LabelVolume::load(&args.seg_a)?;
    let b = LabelVolume::load(&args.seg_b)?;

    let mut structures = Vec::new();
    for label in 1..=b.n_labels() {
        structures.push(StructureRow {
            structure: format!("label {label}"),
            dice_pct: cell(dice(&a, &b, label))?,
            hausdorff_mm: cell(hausdorff(&a, &b, label, HausdorffMode::Symmetric))?,
        });
    }

    let mut regions = Vec::new();
    if let (Some(ea_path), Some(eb_path)) = (&args.efield_a, &args.efield_b) {
        rec.input(ea_path);
        rec.input(eb_path);
        let ea = ScalarVolume::load(ea_path)?;
        let eb = ScalarVolume::load(eb_path)?;
        let labels: Vec<u8> = match &args.regions {
            Some(list) => super::parse_list(list, "region label")?,
            None => (1..=b.n_labels()).collect(),
        };
        for label in labels {
            // Cap each field at the region percentile before comparing.
            let capped =
                percentile_cap(&ea, &b, &[label], args.cap_percentile).and_then(|(_, ca)| {
                    let (_, cb) = percentile_cap(&eb, &b, &[label], args.cap_percentile)?;
                    Ok((ca, cb))
                });
            let (global, local) = match capped {
                Ok((ca, cb)) => (
                    cell(global_error(&ca, &cb, &b, &[label]))?,
                    cell(local_error(&ca, &cb, &b, &[label]))?,
                ),
                Err(Error::UndefinedMetric(_)) => (None, None),
                Err(e) => return Err(e),
            };
            regions.push(RegionRow {
                region: format!("label {label}"),
                global_err_pct: global,
                local_err_pct: local,
            });
        }
    }

    let report = MetricReport {
        structures,
        regions,
    };
    fs::write(&args.out, report.to_csv())?;
    rec.output(&args.out);
    let json_path = args.out.with_extension("json");
    fs::write(&json_path, report.to_json() + "\n")?;
    rec.output(&json_path);
    rec.write(PathBuf::from(format!(
        "{}.manifest.json",
        args.out.display()
    )))
}
