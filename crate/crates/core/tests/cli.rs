use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn siv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siv")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

const TINY: &str = "n_truth = 16\nn_rec = 8\nT = 0.08\ntau = 0.02\ndt = 1e-3\nt_lo = 0.04\nt_hi = 0.08\n\
deltas = 1e-5, 1e-4, 1e-3, 1e-2, 1e-1\nmax_cg_iters = 3\nsnapshot_stride = 20\n";

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.txt");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(siv(&["verify", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(siv(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "n_truth = 16\nwobble = 3\n").unwrap();
    let out = dir.path().join("out");
    let o = siv(&["--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap(), "verify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wobble"));

    fs::write(&bad, "n_truth = 16\nn_rec = 32\n").unwrap();
    let o = siv(&["--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap(), "generate-truth"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let o = siv(&["--out", dir.path().to_str().unwrap(), "verify"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"));
}

#[test]
fn generate_truth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = siv(&["--config", &cfg, "--seed", "7", "--out", out.to_str().unwrap(), "generate-truth"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(a.join("truth")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n.to_string_lossy().ends_with(".siv2")));
    for name in &names {
        let x = fs::read(a.join("truth").join(name)).unwrap();
        let y = fs::read(b.join("truth").join(name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
    let c = dir.path().join("c");
    siv(&["--config", &cfg, "--seed", "8", "--out", c.to_str().unwrap(), "generate-truth"]);
    assert_ne!(fs::read(a.join("truth/rec_00000.siv2")).unwrap(), fs::read(c.join("truth/rec_00000.siv2")).unwrap());
}

#[test]
fn stability_sweep_csv_schema_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = siv(&["--config", &cfg, "--out", out.to_str().unwrap(), "stability-sweep"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(out);
    }
    let sweep = read_csv(&outputs[0].join("sweep.csv"));
    assert_eq!(sweep[0], ["delta", "psi_diff_sq", "u_diff_sq", "v_diff_sq"]);
    assert_eq!(sweep.len(), 6);
    for row in &sweep[1..] {
        assert!(row.iter().all(|v| v.parse::<f64>().unwrap() >= 0.0));
    }
    let slopes = read_csv(&outputs[0].join("slopes.csv"));
    assert_eq!(slopes[0], ["regime", "slope", "intercept", "npoints"]);
    assert_eq!(slopes.iter().skip(1).map(|r| r[0].as_str()).collect::<Vec<_>>(), ["lower", "upper"]);
    for f in ["sweep.csv", "slopes.csv"] {
        assert_eq!(fs::read(outputs[0].join(f)).unwrap(), fs::read(outputs[1].join(f)).unwrap());
    }
}

#[test]
fn reconstruct_resumes_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let truth = out.join("truth");
    assert_eq!(siv(&["--config", &cfg, "--out", out_s, "generate-truth"]).status.code(), Some(0));
    let o = siv(&["--config", &cfg, "--out", out_s, "reconstruct", "--truth", truth.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let full = read_csv(&out.join("epsilon.csv"));
    assert_eq!(full[0], ["t", "epsilon"]);
    assert_eq!(full.len(), 82);

    fs::remove_file(out.join("checkpoints/control_003.siv2")).unwrap();
    let o = siv(&["--config", &cfg, "--out", out_s, "reconstruct", "--truth", truth.to_str().unwrap(), "--resume"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(out.join("reconstruct_manifest.txt")).unwrap();
    assert!(manifest.contains("segments_resumed=3"), "{manifest}");
    let resumed = read_csv(&out.join("epsilon.csv"));
    assert_eq!(resumed.len(), full.len());
    for (a, b) in full[1..].iter().zip(&resumed[1..]) {
        let (x, y): (f64, f64) = (a[1].parse().unwrap(), b[1].parse().unwrap());
        assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-12), "{a:?} vs {b:?}");
    }
}
