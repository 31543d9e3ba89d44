//! Black-box subcommand tests: each case runs the real binary and checks
//! files, exit codes and stderr.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use headfield_core::network::{build_network, save_checkpoint, NetworkSpec};
use headfield_core::volume::{LabelVolume, ScalarVolume};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_headfield"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A 16³ one-ball phantom descriptor used by the fast tests.
const BALL_SPEC: &str = r#"{
  "dims": [16, 16, 16],
  "background_mean": 10.0,
  "noise_sigma": 2.0,
  "shapes": [
    {"label": 1, "center": [8.0, 8.0, 8.0], "radii": [4.0, 4.0, 4.0], "mean_intensity": 120.0}
  ]
}"#;

fn write_ball_spec(dir: &Path) -> PathBuf {
    let path = dir.join("ball.json");
    std::fs::write(&path, BALL_SPEC).unwrap();
    path
}

/// Generates a tiny dataset directory with `cases` phantom variants.
fn make_dataset(dir: &Path, cases: usize) -> PathBuf {
    let spec = write_ball_spec(dir);
    let data = dir.join("data");
    let out = run(&[
        "phantom",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "5",
        "--family",
        &cases.to_string(),
    ]);
    assert_exit(&out, 0);
    data
}

#[test]
fn phantom_deep7_writes_seven_label_pair_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let res = run(&[
            "phantom",
            "--spec",
            "deep7",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "9",
        ]);
        assert_exit(&res, 0);
    }
    let labels = LabelVolume::load(out_a.join("labels.vvol")).unwrap();
    assert_eq!(labels.n_labels(), 7);
    let mri = ScalarVolume::load(out_a.join("mri.vvol")).unwrap();
    assert_eq!(mri.header.dims, labels.header.dims);
    // Same seed ⇒ identical bytes.
    for name in ["mri.vvol", "labels.vvol"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    // And a manifest with the seed recorded.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["subcommand"], "phantom");
}

#[test]
fn phantom_missing_spec_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&[
        "phantom",
        "--spec",
        tmp.path().join("nope.json").to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_dataset(tmp.path(), 2);
    let ckpt = tmp.path().join("net.ckpt");
    let res = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--axis",
        "axial",
        "--out",
        ckpt.to_str().unwrap(),
        "--degree",
        "2",
        "--depth",
        "1",
        "--kernels",
        "5,7",
        "--input-size",
        "16",
        "--epochs",
        "2",
        "--batch",
        "4",
        "--seed",
        "3",
    ]);
    assert_exit(&res, 0);
    let params = headfield_core::network::load_checkpoint(&ckpt).unwrap();
    assert_eq!(params.spec.degree, 2);
    assert_eq!(params.spec.decoder_kernels, Some(vec![5, 7]));
    let logs: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("net.ckpt.log.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(logs.as_array().unwrap().len(), 2);
    assert!(
        logs[0]["val_loss"].is_number(),
        "default 10% split logs val loss"
    );
    assert!(tmp.path().join("net.ckpt.manifest.json").is_file());
}

#[test]
fn train_rejects_zero_depth_and_empty_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_dataset(tmp.path(), 1);
    let ckpt = tmp.path().join("net.ckpt");
    let res = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--axis",
        "axial",
        "--out",
        ckpt.to_str().unwrap(),
        "--depth",
        "0",
        "--input-size",
        "16",
    ]);
    assert_exit(&res, 2);

    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let res = run(&[
        "train",
        "--data",
        empty.to_str().unwrap(),
        "--axis",
        "axial",
        "--out",
        ckpt.to_str().unwrap(),
        "--input-size",
        "16",
    ]);
    assert_exit(&res, 2);
    assert!(stderr(&res).contains("no case subdirectories"));
}

fn save_net(path: &Path, degree: usize, seed: u64) {
    let spec = NetworkSpec::new(degree, 1, 16, 3);
    let params = build_network(&spec, seed).unwrap();
    save_checkpoint(&params, path).unwrap();
}

#[test]
fn segment_high_epsilon_yields_background_and_mixed_degree_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = make_dataset(tmp.path(), 1);
    let mri = data.join("case00/mri.vvol");
    let (a, s, c) = (
        tmp.path().join("a.ckpt"),
        tmp.path().join("s.ckpt"),
        tmp.path().join("c.ckpt"),
    );
    save_net(&a, 1, 1);
    save_net(&s, 1, 2);
    save_net(&c, 1, 3);
    let out = tmp.path().join("seg.vvol");
    // Untrained maps hover near 0.5, far below ε=0.99.
    let res = run(&[
        "segment",
        "--mri",
        mri.to_str().unwrap(),
        "--axial",
        a.to_str().unwrap(),
        "--sagittal",
        s.to_str().unwrap(),
        "--coronal",
        c.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epsilon",
        "0.99",
    ]);
    assert_exit(&res, 0);
    let seg = LabelVolume::load(&out).unwrap();
    let fg = seg.data.iter().filter(|&&l| l != 0).count();
    assert!(
        (fg as f64) < 0.02 * seg.data.len() as f64,
        "ε=0.99 should leave almost everything background, got {fg} foreground"
    );

    save_net(&s, 2, 2); // now degree 2 amid degree 1
    let res = run(&[
        "segment",
        "--mri",
        mri.to_str().unwrap(),
        "--axial",
        a.to_str().unwrap(),
        "--sagittal",
        s.to_str().unwrap(),
        "--coronal",
        c.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
    assert!(stderr(&res).contains("structure count"));
}

#[test]
fn assemble_model_embeds_deep_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let mut base = LabelVolume::zeros([8, 8, 8], [1.0; 3], 3).unwrap();
    for z in 0..8 {
        for y in 0..8 {
            for x in 0..8 {
                base.set(x, y, z, 3);
            }
        }
    }
    let mut deep = LabelVolume::zeros([8, 8, 8], [1.0; 3], 2).unwrap();
    deep.set(4, 4, 4, 2);
    let (bp, dp, op) = (
        tmp.path().join("base.vvol"),
        tmp.path().join("deep.vvol"),
        tmp.path().join("model.vvol"),
    );
    base.save(&bp).unwrap();
    deep.save(&dp).unwrap();
    let res = run(&[
        "assemble-model",
        "--base",
        bp.to_str().unwrap(),
        "--deep",
        dp.to_str().unwrap(),
        "--offset",
        "3",
        "--out",
        op.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    let merged = LabelVolume::load(&op).unwrap();
    assert_eq!(merged.at(4, 4, 4), 5);
    assert_eq!(merged.at(0, 0, 0), 3);
    assert_eq!(merged.n_labels(), 5);
}

/// Uniform σ=0.2 S/m slab: GM (label 9) everywhere in the default table.
fn save_slab(path: &Path, label: u8) {
    let mut v = LabelVolume::zeros([10, 10, 10], [1.0; 3], label).unwrap();
    v.data.iter_mut().for_each(|l| *l = label);
    v.save(path).unwrap();
}

#[test]
fn solve_slab_reports_uniform_field_and_clean_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("slab.vvol");
    save_slab(&model, 9);
    let montage = tmp.path().join("plates.json");
    std::fs::write(
        &montage,
        r#"{"type": "plates", "axis": "+z", "current": 0.002}"#,
    )
    .unwrap();
    let out = tmp.path().join("fields");
    let res = run(&[
        "solve",
        "--model",
        model.to_str().unwrap(),
        "--montage",
        montage.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    let emag = ScalarVolume::load(out.join("emag.vvol")).unwrap();
    for &e in &emag.data {
        assert!(
            (e - 100.0).abs() <= 1.0,
            "|E| {e} off the 100 V/m slab value"
        );
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["audit_relative_error"].as_f64().unwrap() < 1e-3);
    assert_eq!(report["injected_current_a"].as_f64().unwrap(), 0.002);
    assert!(out.join("phi.vvol").is_file());
    assert!(out.join("ex.vvol").is_file());
}

#[test]
fn solve_unmapped_label_exits_2_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("slab.vvol");
    save_slab(&model, 22); // beyond the 21-entry default table
    let montage = tmp.path().join("plates.json");
    std::fs::write(&montage, r#"{"type": "plates", "axis": "+z"}"#).unwrap();
    let res = run(&[
        "solve",
        "--model",
        model.to_str().unwrap(),
        "--montage",
        montage.to_str().unwrap(),
        "--out",
        tmp.path().join("f").to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
    assert!(stderr(&res).contains("22"), "stderr: {}", stderr(&res));
}

#[test]
fn solve_convergence_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("slab.vvol");
    save_slab(&model, 9);
    let montage = tmp.path().join("plates.json");
    std::fs::write(&montage, r#"{"type": "plates", "axis": "+z"}"#).unwrap();
    let res = run(&[
        "solve",
        "--model",
        model.to_str().unwrap(),
        "--montage",
        montage.to_str().unwrap(),
        "--out",
        tmp.path().join("f").to_str().unwrap(),
        "--max-iters",
        "2",
        "--tol",
        "1e-14",
    ]);
    assert_exit(&res, 3);
}

#[test]
fn evaluate_identity_yields_perfect_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let mut seg = LabelVolume::zeros([8, 8, 8], [1.0; 3], 2).unwrap();
    for z in 2..6 {
        for y in 2..6 {
            for x in 2..6 {
                seg.set(x, y, z, 1);
            }
        }
    }
    let sp = tmp.path().join("seg.vvol");
    seg.save(&sp).unwrap();
    let mut field = ScalarVolume::zeros([8, 8, 8], [1.0; 3]);
    field
        .data
        .iter_mut()
        .enumerate()
        .for_each(|(i, v)| *v = 1.0 + (i % 7) as f64);
    let fp = tmp.path().join("e.vvol");
    field.save(&fp).unwrap();
    let out = tmp.path().join("report.csv");
    let res = run(&[
        "evaluate",
        "--seg-a",
        sp.to_str().unwrap(),
        "--seg-b",
        sp.to_str().unwrap(),
        "--efield-a",
        fp.to_str().unwrap(),
        "--efield-b",
        fp.to_str().unwrap(),
        "--regions",
        "1,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    let csv = std::fs::read_to_string(&out).unwrap();
    let line = |needle: &str| {
        csv.lines()
            .find(|l| l.contains(needle))
            .unwrap_or_else(|| panic!("no row {needle} in:\n{csv}"))
            .to_string()
    };
    assert!(line("structure,label 1,dice_pct").contains("100.000000"));
    assert!(line("structure,label 1,hausdorff_mm").contains(",0.000000,"));
    assert!(line("region,label 1,global_err_pct").contains(",0.000000,"));
    assert!(line("region,label 1,local_err_pct").contains(",0.000000,"));
    // Label 2 exists in the header but has no voxels: undefined rows.
    assert!(line("structure,label 2,hausdorff_mm").contains("undefined"));
    assert!(line("region,label 2,global_err_pct").contains("undefined"));
    // Both-empty Dice is 100 by convention.
    assert!(line("structure,label 2,dice_pct").contains("100.000000"));
    assert!(out.with_extension("json").is_file());
}

#[test]
fn evaluate_dim_mismatch_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let a = LabelVolume::zeros([8, 8, 8], [1.0; 3], 1).unwrap();
    let b = LabelVolume::zeros([16, 16, 16], [1.0; 3], 1).unwrap();
    let (ap, bp) = (tmp.path().join("a.vvol"), tmp.path().join("b.vvol"));
    a.save(&ap).unwrap();
    b.save(&bp).unwrap();
    let res = run(&[
        "evaluate",
        "--seg-a",
        ap.to_str().unwrap(),
        "--seg-b",
        bp.to_str().unwrap(),
        "--out",
        tmp.path().join("r.csv").to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
}

#[test]
fn assets_exports_bundled_descriptors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("assets");
    let res = run(&["assets", "--out", out.to_str().unwrap()]);
    assert_exit(&res, 0);
    for name in ["deep7.json", "tissues.json", "slab_plates.json"] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let tissues: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("tissues.json")).unwrap()).unwrap();
    assert_eq!(tissues["7"]["sigma"].as_f64().unwrap(), 1.80);
}
