use std::path::Path;
use std::process::{Command, Output};

fn gsmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsmr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gsmr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

/// Phantom, coils, mask and k-space for a 16^3 problem.
fn prepare(dir: &Path) {
    let d = ["--dims", "16", "16", "16"];
    ok(&[&["phantom"][..], &d, &["--out", &p(dir, "gt.gsmr")]].concat());
    ok(&[&["coils"][..], &d, &["--num-coils", "2", "--out", &p(dir, "coils.gsmr")]].concat());
    let line = ok(&[&["mask"][..], &d, &["--accel", "2", "--calib", "4", "--seed", "3", "--out", &p(dir, "mask.gsmr")]].concat());
    assert!(line.starts_with("samples=2048 acceleration=2.0"), "{line}");
    ok(&[
        "simulate", "--volume", &p(dir, "gt.gsmr"), "--coils", &p(dir, "coils.gsmr"), "--mask", &p(dir, "mask.gsmr"),
        "--noise-snr-db", "40", "--out", &p(dir, "k.gsmr"),
    ]);
}

fn recon(dir: &Path, tag: &str, extra: &[&str]) -> String {
    let mut args: Vec<String> = ["--threads", "1", "recon", "--init-points", "300", "--max-iters", "30", "--densify-interval", "10"]
        .map(String::from)
        .to_vec();
    for (flag, file) in [
        ("--kspace", "k.gsmr".to_string()),
        ("--coils", "coils.gsmr".to_string()),
        ("--mask", "mask.gsmr".to_string()),
        ("--out", format!("{tag}.gsmr")),
        ("--cloud", format!("{tag}_cloud.gsmr")),
        ("--log", format!("{tag}.log")),
        ("--report", format!("{tag}.json")),
    ] {
        args.push(flag.to_string());
        args.push(p(dir, &file));
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);

    let out = recon(d, "a", &["--eval-against", &p(d, "gt.gsmr"), "--zero-filled", &p(d, "zf.gsmr")]);
    assert!(out.starts_with("config {"), "{out}");
    assert!(out.contains("\"init_points\":300"));
    let done = out.lines().last().unwrap();
    assert!(done.starts_with("done iterations=30 "), "{done}");
    assert!(done.contains("psnr_db="));

    recon(d, "b", &["--eval-against", &p(d, "gt.gsmr")]);
    for f in ["a.gsmr", "a_cloud.gsmr", "a.log"] {
        let g = f.replacen('a', "b", 1);
        assert_eq!(std::fs::read(d.join(f)).unwrap(), std::fs::read(d.join(&g)).unwrap(), "{f} vs {g}");
    }
    let log = std::fs::read_to_string(d.join("a.log")).unwrap();
    assert_eq!(log.lines().count(), 30);
    assert_eq!(log.lines().next().unwrap().split(',').count(), 5);

    let info = ok(&["info", &p(d, "a.gsmr")]);
    assert_eq!(info.trim(), "kind=1 name=volume version=1 dims=16x16x16");
    let info = ok(&["info", &p(d, "a_cloud.gsmr")]);
    assert!(info.starts_with("kind=5 name=cloud version=1 gaussians="), "{info}");
    assert!(ok(&["info", &p(d, "mask.gsmr")]).starts_with("kind=3 name=mask"));

    let eval = ok(&["eval", "--recon", &p(d, "zf.gsmr"), "--reference", &p(d, "gt.gsmr")]);
    assert!(eval.starts_with("psnr_db=") && eval.contains(" ssim="), "{eval}");

    ok(&["slice", "--volume", &p(d, "a.gsmr"), "--z", "8", "--out", &p(d, "s.pgm")]);
    assert!(std::fs::read(d.join("s.pgm")).unwrap().starts_with(b"P5\n16 16\n255\n"));

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("a.json")).unwrap()).unwrap();
    assert_eq!(report["iterations_run"], 30);
}

#[test]
fn errors_are_single_machine_readable_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = gsmr(&["info", &p(d, "missing.gsmr")]);
    assert_eq!(out.status.code(), Some(7));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error code=7 kind=io message="), "{err}");

    std::fs::write(d.join("junk.gsmr"), b"NOPE1234").unwrap();
    let out = gsmr(&["info", &p(d, "junk.gsmr")]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8(out.stderr).unwrap().contains("magic"));

    let out = gsmr(&["phantom", "--dims", "4", "4", "4", "--out", &p(d, "x.gsmr")]);
    assert_eq!(out.status.code(), Some(1));

    let out = gsmr(&["mask", "--dims", "8", "8", "8", "--accel", "0.5", "--out", &p(d, "m.gsmr")]);
    assert_eq!(out.status.code(), Some(4));

    let out = gsmr(&["recon", "--bogus"]);
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error code=64 kind=usage"));

    assert_eq!(gsmr(&["--help"]).status.code(), Some(0));
}

#[test]
fn recon_rejects_bad_config_before_reading_inputs() {
    let out = gsmr(&["recon", "--kspace", "k", "--coils", "c", "--mask", "m", "--out", "o", "--init-points", "0"]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("kind=invalid_config") && err.contains("init_points"), "{err}");
}
