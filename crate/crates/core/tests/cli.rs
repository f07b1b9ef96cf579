use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;
use varhardy::grid::io::{
    load_grid_function, load_half_space, save_grid_function, save_half_space,
};
use varhardy::grid::{const_lp_norm, GridBox, GridFunction, ScaleLadder};
use varhardy::suites::{rng_for, samples, SuiteConfig};

fn varhardy(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varhardy"))
        .args(args)
        .current_dir(out)
        .env_remove("VARHARDY_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn sample_grid_function(dir: &Path) -> (GridFunction, String) {
    let grid = GridBox::line(-8.0, 8.0, 512).unwrap();
    let f = samples::packets(&grid, &mut rng_for(3, "cli"), 2);
    let path = dir.join("f.bin");
    save_grid_function(&path, &f).unwrap();
    (f, path.display().to_string())
}

#[test]
fn norm_with_constant_exponent_is_the_l2_norm() {
    let dir = tempdir().unwrap();
    let (f, path) = sample_grid_function(dir.path());
    let o = varhardy(&["norm", "--p", "const:2", &path], dir.path());
    assert!(o.status.success(), "{o:?}");
    let v: f64 = stdout(&o).parse().unwrap();
    let want = const_lp_norm(&f, 2.0);
    assert!((v - want).abs() < 1e-7 * want, "{v} vs {want}");
}

#[test]
fn modular_and_hardy_norm_print_numbers() {
    let dir = tempdir().unwrap();
    let (_, path) = sample_grid_function(dir.path());
    for verb in ["modular", "hardy-norm"] {
        let o = varhardy(&[verb, "--p", "bump:0.9:0.75", &path], dir.path());
        assert!(o.status.success(), "{verb}: {o:?}");
        let v: f64 = stdout(&o).parse().unwrap();
        assert!(v.is_finite() && v > 0.0);
    }
}

#[test]
fn molecular_pipeline_round_trips() {
    let dir = tempdir().unwrap();
    let (f, path) = sample_grid_function(dir.path());
    let bundle = dir.path().join("d.json").display().to_string();
    let o = varhardy(
        &[
            "decompose",
            "--p",
            "paper-example-1",
            &path,
            "--out",
            &bundle,
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["kind"], "molecular");
    let back = dir.path().join("f2.bin");
    let o = varhardy(
        &["reconstruct", &bundle, "--out", back.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let g = load_grid_function(&back).unwrap();
    let res = f.sub(&g).l2_norm() / f.l2_norm();
    assert!(res < 0.02, "residual {res}");
}

#[test]
fn tent_pipeline_round_trips() {
    let dir = tempdir().unwrap();
    let grid = GridBox::line(-4.0, 4.0, 128).unwrap();
    let ladder = ScaleLadder::new(0.5 * grid.h(), 4.0, 24).unwrap();
    let f = samples::half_space(&grid, &ladder, &mut rng_for(5, "cli"));
    let path = dir.path().join("F.bin");
    save_half_space(&path, &f).unwrap();
    let bundle = dir.path().join("t.json").display().to_string();
    let o = varhardy(
        &[
            "decompose",
            "--p",
            "paper-example-1",
            path.to_str().unwrap(),
            "--out",
            &bundle,
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let back = dir.path().join("F2.bin");
    let o = varhardy(
        &["reconstruct", &bundle, "--out", back.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let g = load_half_space(&back).unwrap();
    let res = f.axpy(-1.0, &g).l2_dt_over_t() / f.l2_dt_over_t();
    assert!(res < 1e-6, "residual {res}");
}

#[test]
fn frac_apply_bmo_and_carleson() {
    let dir = tempdir().unwrap();
    let (_, path) = sample_grid_function(dir.path());
    let grid = GridBox::line(-8.0, 8.0, 512).unwrap();
    let odd = GridFunction::from_fn(&grid, |x| x[0] * (-x[0] * x[0]).exp()).unwrap();
    let odd_path = dir.path().join("odd.bin");
    save_grid_function(&odd_path, &odd).unwrap();
    let out = dir.path().join("frac.bin");
    let o = varhardy(
        &[
            "frac-apply",
            "--gamma",
            "0.25",
            odd_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let o = varhardy(
        &[
            "frac-apply",
            "--gamma",
            "0.25",
            &path,
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(1),
        "nonzero mean has a divergent tail"
    );
    assert_eq!(load_grid_function(&out).unwrap().grid().node_count(), 512);
    for verb in ["bmo-norm", "carleson"] {
        let o = varhardy(&[verb, "--p", "bump:0.9:0.75", &path], dir.path());
        assert!(o.status.success(), "{verb}: {o:?}");
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert!(v["value"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempdir().unwrap();
    let o = varhardy(&["integrate", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a grid file").unwrap();
    let o = varhardy(
        &["norm", "--p", "const:2", junk.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed"));
}

#[test]
fn empty_suite_list_succeeds_with_an_empty_bundle() {
    let dir = tempdir().unwrap();
    let o = varhardy(&["run", "--suite", "none", "--out", "bundle"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(dir.path().join("bundle/summary.csv")).unwrap();
    assert_eq!(csv, "suite,check,passed,value,bound\n");
}

#[test]
fn violated_kernel_fails_with_witness() {
    let dir = tempdir().unwrap();
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/bad-kernel.toml");
    let o = Command::new(env!("CARGO_BIN_EXE_varhardy"))
        .args(["run", cfg])
        .env("VARHARDY_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("semigroup.kernel-decay"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("semigroup.json")).unwrap())
            .unwrap();
    let w = &report["metrics"]["kernel_witness"];
    assert_eq!(w["t"], 1.0);
    assert!(w["y"][0].as_f64().unwrap() > 1e5);
}

#[test]
fn shipped_default_config_matches_builtin() {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/default.toml"
    ))
    .unwrap();
    assert_eq!(
        SuiteConfig::from_toml(&text).unwrap(),
        SuiteConfig::default()
    );
}

#[test]
fn config_rejects_unknown_names() {
    assert!(SuiteConfig::from_toml("sead = 3").is_err());
    let cfg = SuiteConfig::from_toml("suites = [\"hardy\", \"wavelets\"]").unwrap();
    assert!(cfg.validate().is_err());
    let cfg = SuiteConfig::from_toml("exponent = \"no-such-preset:\"").unwrap();
    assert!(cfg.validate().is_err());
}

#[test]
fn embed_check_and_frac_suite_report_json() {
    let dir = tempdir().unwrap();
    let o = varhardy(
        &[
            "embed-check",
            "--p",
            "bump:0.9:0.75",
            "--side",
            "1",
            "--center",
            "-0.5",
            "--points",
            "512",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["value"].as_f64().unwrap() > 0.0);
    assert_eq!(v["d"], 0);
    let o = varhardy(
        &[
            "frac-suite",
            "--gamma",
            "0.125",
            "--members",
            "6",
            "--points",
            "512",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["ratios"].as_array().unwrap().len(), 6);
    let o = varhardy(
        &["frac-suite", "--gamma", "0.125", "--p", "const:1.5"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "p_plus > 1 is a hypothesis error");
}
