use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dashgauss::Image;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_dashgauss");

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets").join(name)
}

fn dashgauss(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("DASH_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dashgauss(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_writes_one_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    ok(&[
        "analyze",
        p(&asset("gravel_128.png")),
        "--iters",
        "1000",
        "--out",
        p(&out),
    ]);
    let schedule = fs::read_to_string(out.join("schedule.csv")).unwrap();
    assert!(schedule.starts_with("iter,r_continuous,r_floored,p_target,p_fin\n"));
    assert!(!schedule.contains('\r'));
    let rows = csv_rows(&out.join("schedule.csv"));
    assert_eq!(rows.len(), 1000);
    assert_eq!(rows[999][2], "1");
    assert_eq!(rows[999][3], "1000", "P at the last iteration is the budget");
    let sig = csv_rows(&out.join("significance.csv"));
    assert_eq!(sig[0][0], "1");
    let r_m: f64 = sig.last().unwrap()[0].parse().unwrap();
    let r0: f64 = rows[0][1].parse().unwrap();
    assert!((r_m - r0).abs() <= 1e-5 * r_m);
    assert_eq!(json(&out.join("manifest.json"))["command"], "analyze");
}

#[test]
fn constant_image_caps_the_coarsest_factor() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("flat.png");
    Image::filled(64, 64, 1, 0.5).unwrap().save_png(&img).unwrap();
    let out = dir.path().join("a");
    let res = ok(&["analyze", p(&img), "--a", "4", "--out", p(&out)]);
    // A pure-DC image keeps all of its content at every factor, so the
    // content target is unreachable and the factor sits at the 8-pixel cap.
    assert!(String::from_utf8_lossy(&res.stderr).contains("unreachable"));
    let sig = csv_rows(&out.join("significance.csv"));
    assert_eq!(sig.last().unwrap()[0], "8");
}

#[test]
fn different_textures_switch_at_different_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let leave = |name: &str| -> Vec<usize> {
        let out = dir.path().join(name);
        ok(&["analyze", p(&asset(name)), "--out", p(&out)]);
        let floored: Vec<u32> = csv_rows(&out.join("schedule.csv"))
            .iter()
            .map(|r| r[2].parse().unwrap())
            .collect();
        (1..floored.len()).filter(|&k| floored[k] != floored[k - 1]).collect()
    };
    assert_ne!(leave("grass_128.png"), leave("brick_128.png"));
}

#[test]
fn analyze_reports_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    let res = dashgauss(&["analyze", p(&missing), "--out", p(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("missing.png"));

    let tiny = dir.path().join("tiny.png");
    Image::filled(3, 3, 1, 0.5).unwrap().save_png(&tiny).unwrap();
    let res = dashgauss(&["analyze", p(&tiny), "--out", p(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("tiny.png"));

    let garbage = dir.path().join("garbage.png");
    fs::write(&garbage, b"not an image").unwrap();
    let res = dashgauss(&["analyze", p(&garbage), "--out", p(dir.path())]);
    assert_eq!(res.status.code(), Some(1));

    assert_eq!(dashgauss(&["fit", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(dashgauss(&["--help"]).status.code(), Some(0));
}

#[test]
fn single_iteration_fit_writes_everything() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    ok(&[
        "fit",
        p(&asset("grass_128.png")),
        "--mode",
        "none",
        "--iters",
        "1",
        "--p-init",
        "1",
        "--out",
        p(&out),
    ]);
    for f in [
        "render.png",
        "checkpoint.csv",
        "metrics.csv",
        "summary.json",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(csv_rows(&out.join("metrics.csv")).len(), 1);
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert_eq!(summary.lines().count(), 1);
    let summary: Value = serde_json::from_str(&summary).unwrap();
    for key in [
        "psnr_full",
        "total_pixels",
        "total_pixel_primitive_cost",
        "wall_ms",
        "final_primitives",
    ] {
        assert!(summary.get(key).is_some(), "{key}");
    }
    let render = Image::load(out.join("render.png")).unwrap();
    assert_eq!((render.height(), render.width(), render.channels()), (128, 128, 3));
    // No stray temp files from the atomic writes.
    assert!(fs::read_dir(&out)
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().starts_with(".tmp")));
}

fn small_fit(out: &Path, mode: &str, seed: &str) {
    ok(&[
        "fit",
        p(&asset("brick_128.png")),
        "--mode",
        mode,
        "--iters",
        "60",
        "--p-init",
        "30",
        "--densify-interval",
        "20",
        "--densify-start",
        "20",
        "--seed",
        seed,
        "--out",
        p(out),
    ]);
}

#[test]
fn fixed_seed_fits_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    small_fit(&a, "dash", "4");
    small_fit(&b, "dash", "4");
    for f in ["checkpoint.csv", "metrics.csv", "render.png"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    small_fit(&c, "dash", "5");
    assert_ne!(
        fs::read(a.join("checkpoint.csv")).unwrap(),
        fs::read(c.join("checkpoint.csv")).unwrap()
    );
}

#[test]
fn dash_fit_renders_fewer_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let (d, n) = (dir.path().join("d"), dir.path().join("n"));
    small_fit(&d, "dash", "1");
    small_fit(&n, "none", "1");
    let pixels = |dir: &Path| json(&dir.join("summary.json"))["total_pixels"].as_u64().unwrap();
    assert!(pixels(&d) < pixels(&n));
}

#[test]
fn replay_reproduces_csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    small_fit(&first, "dash", "9");
    let second = dir.path().join("second");
    ok(&["replay", p(&first.join("manifest.json")), "--out", p(&second)]);
    for f in ["checkpoint.csv", "metrics.csv"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
    let (m1, m2) = (json(&first.join("manifest.json")), json(&second.join("manifest.json")));
    assert_eq!(m1["config"], m2["config"]);
    assert_eq!(m1["seed"], m2["seed"]);

    let analysis = dir.path().join("analysis");
    ok(&[
        "analyze",
        p(&asset("grass_128.png")),
        "--iters",
        "300",
        "--out",
        p(&analysis),
    ]);
    let again = dir.path().join("again");
    ok(&["replay", p(&analysis.join("manifest.json")), "--out", p(&again)]);
    for f in ["schedule.csv", "significance.csv"] {
        assert_eq!(
            fs::read(analysis.join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn compare_reports_dash_minus_none() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    ok(&[
        "compare",
        p(&asset("gravel_128.png")),
        "--iters",
        "60",
        "--p-init",
        "30",
        "--out",
        p(&out),
    ]);
    let report = json(&out.join("compare.json"));
    let dash = json(&out.join("dash/summary.json"));
    let none = json(&out.join("none/summary.json"));
    let delta = dash["psnr_full"].as_f64().unwrap() - none["psnr_full"].as_f64().unwrap();
    assert!((report["psnr_delta_db"].as_f64().unwrap() - delta).abs() < 1e-9);
    assert!(report["pixel_cost_reduction_pct"].as_f64().unwrap() > 0.0);
    for key in ["pixel_primitive_cost_reduction_pct", "wall_time_reduction_pct"] {
        assert!(report[key].is_number(), "{key}");
    }
    assert_eq!(json(&out.join("manifest.json"))["command"], "compare");
}
