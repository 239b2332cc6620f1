use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn fpld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpld")).args(args).env_remove("FPLD_SEED").output().expect("spawn fpld")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn bounds_prints_bandwidth_term() {
    let o = fpld(&["bounds", "--K", "4", "--V", "256", "--bits-per-coord", "4", "--L", "1"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    let line = out.lines().find(|l| l.contains("bandwidth term")).unwrap();
    let value: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!((value / (2f64.powi(-8) / 24.0) - 1.0).abs() < 1e-6, "{value}");
    assert!(out.starts_with("homogeneous"));
}

#[test]
fn bounds_missing_flag_is_usage_error() {
    let o = fpld(&["bounds", "--V", "256", "--bits-per-coord", "4"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fpld(&["bounds", "--K", "4", "--V", "256"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fpld(&["bounds", "--K", "0", "--V", "256", "--B", "8"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bounds_list_routes_to_heterogeneous() {
    let o = fpld(&["bounds", "--K", "4", "--V", "256", "--B-list", "256,256,768,768"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(out.starts_with("heterogeneous"), "{out}");
    // (1/6K^2) * (2 * 4^-1 + 2 * 4^-3) with L = 1
    let expect = (2.0 * 0.25 + 2.0 / 64.0) / 96.0;
    let line = out.lines().find(|l| l.contains("bandwidth term")).unwrap();
    let value: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!((value - expect).abs() < 1e-9, "{value} vs {expect}");
    assert!(!out.contains("lower bound"));
}

#[test]
fn bounds_config_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.toml");
    std::fs::write(&cfg, "[bounds]\nK = 4\nV = 256\nB = 1024.0\nn = inf\n").unwrap();
    let csv = dir.path().join("b.csv");
    let o = fpld(&["bounds", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let text = String::from_utf8(read(&csv)).unwrap();
    assert!(text.starts_with("K,V,B,L,statistical_term,"), "{text}");
    assert!(text.contains(",0.0,"), "statistical term should vanish at n = inf: {text}");
    assert!(dir.path().join("b.manifest.toml").exists());
}

#[test]
fn allocate_reports_both_plans() {
    let o = fpld(&["allocate", "--w", "1,1,16,16", "--Btot", "2048", "--V", "256"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("integer plan: 256,256,768,768"), "{}", stdout(&o));

    let o = fpld(&["allocate", "--w", "3,3,3", "--Btot", "96", "--V", "8"]);
    assert!(stdout(&o).contains("integer plan: 32,32,32"), "{}", stdout(&o));

    let o = fpld(&["allocate", "--w", "1,1,16,16", "--Btot", "2048", "--V", "256", "--Bmax", "256"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn runs_are_byte_identical_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, jobs) in [(&a, "1"), (&b, "4")] {
        let o = fpld(&["fig2", "--seeds", "4", "--jobs", jobs, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{o:?}");
    }
    assert_eq!(read(&a.join("fig2.csv")), read(&b.join("fig2.csv")));
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("in.toml");
    std::fs::write(&cfg, "[sim]\nm = 32\nbits = 3\n\n[fig1]\nK_values = [2, 8]\nbits_values = [2, 5]\n").unwrap();
    let first = dir.path().join("first");
    let o = fpld(&[
        "fig1",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "2",
        "--seed",
        "11",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{o:?}");
    let manifest = first.join("fig1.manifest.toml");
    let text = String::from_utf8(read(&manifest)).unwrap();
    assert!(text.contains("seeds = [11, 12]"), "{text}");

    let second = dir.path().join("second");
    let o = fpld(&["fig1", "--config", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let csv = read(&first.join("fig1.csv"));
    assert_eq!(csv, read(&second.join("fig1.csv")));
    // 2 K values + 2 bit levels, 2 seeds each, plus the header
    assert_eq!(csv.iter().filter(|&&c| c == b'\n').count(), 9);
}

#[test]
fn seed_env_var_sets_first_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fpld"))
        .args(["fig2", "--seeds", "1", "--out", dir.path().to_str().unwrap()])
        .env("FPLD_SEED", "41")
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    let text = String::from_utf8(read(&dir.path().join("fig2.csv"))).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(4) == Some("41")), "{text}");
}

#[test]
fn bad_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[sim]\nvocab = 3\n").unwrap();
    let o = fpld(&["fig1", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = fpld(&["fig1", "--config", "/nonexistent/x.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/x.toml"));
}

#[test]
fn smoke_runs_finish_quickly() {
    let dir = tempfile::tempdir().unwrap();
    for exp in ["fig1", "fig2", "adaptive"] {
        let t = Instant::now();
        let o = fpld(&[exp, "--seeds", "3", "--plot", "--out", dir.path().to_str().unwrap()]);
        let took = t.elapsed();
        assert!(o.status.success(), "{o:?}");
        assert!(took < Duration::from_secs(10), "{exp} took {took:?}");
    }
    for f in ["fig1.csv", "fig1_K.svg", "fig2_B_tot_per_V.svg", "adaptive_diagnostics.csv", "adaptive.manifest.toml"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn validate_passes_and_catches_bias() {
    let o = fpld(&["validate"]);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}");
    assert!(out.lines().filter(|l| l.starts_with("[PASS]")).count() >= 7, "{out}");

    let o = fpld(&["validate", "--inject-bias", "0.001"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("[FAIL] dither-unbiased")), "{out}");
}
