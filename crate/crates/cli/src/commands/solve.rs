use std::fs;

use headfield_core::conductor::{
    assign_conductivity, build_montage, ConductivityTable, MontageDescriptor,
};
use headfield_core::error::{Error, Result};
use headfield_core::spfd::{
    assemble, assemble_grid, compute_efield, current_audit, plate_current, solve, CurrentVector,
    NodeGrid, SolverConfig,
};
use headfield_core::volume::{Dtype, LabelVolume, ScalarVolume, VolumeHeader};

use crate::manifest::RunRecorder;
use crate::SolveArgs;

pub fn run(args: &SolveArgs) -> Result<()> {
    let mut rec = RunRecorder::new("solve", super::config_value(args)?, None);
    rec.input(&args.model);
    rec.input(&args.montage);
    let model = LabelVolume::load(&args.model)?;
    let table = if args.table == "default" {
        ConductivityTable::default_head()
    } else {
        rec.input(&args.table);
        ConductivityTable::from_json(&fs::read_to_string(&args.table)?)?
    };
    let descriptor = MontageDescriptor::from_json(&fs::read_to_string(&args.montage)?)?;
    let sigma = assign_conductivity(&model, &table)?;

    let (grid, src) = match &descriptor {
        MontageDescriptor::Patch {
            anode,
            cathode,
            current,
        } => {
            let montage = build_montage(&sigma, &model, anode, cathode, *current)?;
            assemble(&montage.sigma, &montage)?
        }
        MontageDescriptor::Plates { axis, current } => {
            let grid = assemble_grid(&sigma)?;
            let src = plate_current(&grid, *axis, *current)?;
            (grid, src)
        }
    };

    let cfg = SolverConfig {
        method: args.method.parse()?,
        tol: args.tol,
        omega: args.omega,
        max_iters: args.max_iters,
        mg_levels: args.mg_levels,
        ..SolverConfig::default()
    };
    cfg.validate()?;
    let phi = solve(&grid, &src, &cfg)?;
    let efield = compute_efield(&phi, &grid, &grid.sigma)?;

    // Audit across the mid-plane between the electrodes, along the axis
    // where they are farthest apart.
    let (audit_axis, audit_plane, expected) = audit_site(&grid, &src);
    let audit = current_audit(&phi, &grid, audit_axis, audit_plane)?;
    let audit_rel = (audit - expected).abs() / src.current;

    let conductive: Vec<f64> = grid
        .sigma
        .data
        .iter()
        .zip(&efield.magnitude.data)
        .filter(|(&s, _)| s > 0.0)
        .map(|(_, &e)| e)
        .collect();
    let e_max = conductive.iter().cloned().fold(0.0, f64::max);
    let e_mean = if conductive.is_empty() {
        0.0
    } else {
        conductive.iter().sum::<f64>() / conductive.len() as f64
    };

    fs::create_dir_all(&args.out)?;
    let phi_vol = ScalarVolume::from_data(
        VolumeHeader::scalar(grid.node_dims, grid.spacing, Dtype::F64),
        phi.phi.clone(),
    )?;
    for (name, vol) in [
        ("phi.vvol", &phi_vol),
        ("ex.vvol", &efield.ex),
        ("ey.vvol", &efield.ey),
        ("ez.vvol", &efield.ez),
        ("emag.vvol", &efield.magnitude),
    ] {
        let path = args.out.join(name);
        vol.save(&path)?;
        rec.output(&path);
    }

    let report = serde_json::json!({
        "method": args.method,
        "iterations": phi.iterations,
        "fine_sweeps": phi.fine_sweeps,
        "residual": phi.residual_norm,
        "injected_current_a": src.current,
        "audit_axis": audit_axis,
        "audit_plane": audit_plane,
        "audit_current_a": audit,
        "audit_expected_a": expected,
        "audit_relative_error": audit_rel,
        "e_max_v_per_m": e_max,
        "e_mean_v_per_m": e_mean,
    });
    let report_path = args.out.join("report.json");
    let text = serde_json::to_string_pretty(&report).map_err(Error::Json)?;
    fs::write(&report_path, text + "\n")?;
    rec.output(&report_path);
    eprintln!(
        "solved in {} iterations (residual {:.3e}); plane audit {:.6} mA vs {:.6} mA injected",
        phi.iterations,
        phi.residual_norm,
        audit.abs() * 1e3,
        src.current * 1e3
    );
    rec.write(args.out.join("manifest.json"))
}

/// Picks the audit plane: the voxel layer halfway between source and sink
/// along their axis of largest separation. The expected signed current
/// follows the flow direction (positive toward increasing index).
fn audit_site(grid: &NodeGrid, src: &CurrentVector) -> (usize, usize, f64) {
    let coords = |flat: usize| {
        let [n1x, n1y, _] = grid.node_dims;
        [flat % n1x, (flat / n1x) % n1y, flat / (n1x * n1y)]
    };
    let s = coords(src.source);
    let t = coords(src.sink);
    let axis = (0..3)
        .max_by_key(|&a| (s[a] as isize - t[a] as isize).abs())
        .unwrap();
    let mid = (s[axis] + t[axis]) / 2;
    let plane = mid.min(grid.voxel_dims[axis] - 1);
    let expected = if s[axis] <= t[axis] {
        src.current
    } else {
        -src.current
    };
    (axis, plane, expected)
}
