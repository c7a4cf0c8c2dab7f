//! End-to-end tests of the `fnmiss` binary: exit codes, output schemas,
//! byte-level determinism, and the committed golden fixture.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fnmiss"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// mu_hat column (index 1) of a curve table.
fn mu_column(path: &Path) -> Vec<f64> {
    read(path)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

/// A small fully observed dataset with an intercept column; y has an
/// x-linear signal plus deterministic pseudo-noise.
fn write_complete_dataset(path: &Path) -> usize {
    let n = 40;
    let t_len = 6;
    let mut text = String::from("# grid: 0,0.2,0.4,0.6,0.8,1\nid,z,x1,x2,y_1,y_2,y_3,y_4,y_5,y_6\n");
    let mut state = 88172645463325252u64;
    let mut noise = || {
        // xorshift64 mapped to (-0.5, 0.5)
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for i in 0..n {
        let x2 = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
        text.push_str(&format!("{},1,1,{x2}", i + 1));
        for j in 0..t_len {
            let t = j as f64 / (t_len - 1) as f64;
            let y = 3.0 + 2.0 * t + x2 * (1.0 - t) + noise();
            text.push_str(&format!(",{y}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
    n
}

#[test]
fn schema_error_exits_2_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "# grid: 0,0.5,1\nid,z,x1,y_1,y_2,y_3\n1,2,1.0,1,2,3\n").unwrap();
    let out = bin()
        .args(["--out-dir", dir.path().to_str().unwrap(), "estimate", "--input"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
    assert!(stderr.contains("z must be 0 or 1"), "stderr: {stderr}");
}

#[test]
fn missing_grid_line_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "id,z,x1,y_1\n1,1,1.0,2.0\n").unwrap();
    let out = bin()
        .args(["--out-dir", dir.path().to_str().unwrap(), "estimate", "--input"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("# grid:"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "alpha = 0.05\nbogus_key = 3\n").unwrap();
    let out = bin()
        .args(["--out-dir", dir.path().to_str().unwrap(), "--config"])
        .arg(&cfg)
        .args(["simulate", "--n", "60", "--reps", "2", "--t-len", "8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2") && stderr.contains("bogus_key"), "stderr: {stderr}");
}

#[test]
fn cli_flag_overrides_config_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "alpha = 0.10\n").unwrap();
    let data = dir.path().join("data.csv");
    write_complete_dataset(&data);
    run_ok(bin()
        .args(["--out-dir", dir.path().to_str().unwrap(), "--config"])
        .arg(&cfg)
        .args(["estimate", "--alpha", "0.05", "--input"])
        .arg(&data));
    let manifest = read(&dir.path().join("manifest.txt"));
    assert!(manifest.contains("alpha,5.0000000000000003e-2"), "{manifest}");
}

#[test]
fn no_missingness_estimators_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_complete_dataset(&data);
    run_ok(bin()
        .args(["--out-dir", dir.path().to_str().unwrap(), "estimate", "--input"])
        .arg(&data));
    let or = mu_column(&dir.path().join("estimate_or.csv"));
    let dr = mu_column(&dir.path().join("estimate_dr.csv"));
    let cc = mu_column(&dir.path().join("estimate_cc.csv"));
    for j in 0..or.len() {
        assert!((or[j] - dr[j]).abs() < 1e-10, "OR/DR differ at {j}");
        assert!((or[j] - cc[j]).abs() < 1e-10, "OR/CC differ at {j}");
    }
}

#[test]
fn simulate_same_seed_is_byte_identical_across_threads() {
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        run_ok(bin().args([
            "--seed",
            "11",
            "--threads",
            threads,
            "--out-dir",
            dir.path().to_str().unwrap(),
            "simulate",
            "--n",
            "60,80",
            "--reps",
            "6",
            "--t-len",
            "12",
        ]));
        (
            read(&dir.path().join("coverage.csv")),
            read(&dir.path().join("metrics.csv")),
        )
    };
    let a = run("1");
    let b = run("1");
    assert_eq!(a, b, "same-seed same-thread runs differ");
    let c = run("3");
    assert_eq!(a, c, "thread count changed the output bytes");
}

#[test]
fn dataset_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin().args([
        "--seed",
        "5",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "simulate",
        "--n",
        "60",
        "--reps",
        "1",
        "--t-len",
        "10",
        "--export-dataset",
    ]));
    let exported = dir.path().join("dataset_n60.csv");
    run_ok(bin()
        .args([
            "--out-dir",
            dir.path().to_str().unwrap(),
            "estimate",
            "--echo-dataset",
            "echo.csv",
            "--input",
        ])
        .arg(&exported));
    assert_eq!(read(&exported), read(&dir.path().join("echo.csv")));
}

#[test]
fn bands_reproduces_estimate_output() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin().args([
        "--seed",
        "5",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "simulate",
        "--n",
        "70",
        "--reps",
        "1",
        "--t-len",
        "10",
        "--export-dataset",
    ]));
    run_ok(bin()
        .args([
            "--out-dir",
            dir.path().to_str().unwrap(),
            "estimate",
            "--partition",
            "0,0.5,1",
            "--input",
        ])
        .arg(dir.path().join("dataset_n70.csv")));
    for slug in ["or", "dr", "cc"] {
        run_ok(bin()
            .args([
                "--out-dir",
                dir.path().to_str().unwrap(),
                "bands",
                "--partition",
                "0,0.5,1",
                "--output",
            ])
            .arg(format!("bands_{slug}.csv"))
            .arg("--input")
            .arg(dir.path().join(format!("estimate_{slug}.est"))));
        assert_eq!(
            read(&dir.path().join(format!("estimate_{slug}.csv"))),
            read(&dir.path().join(format!("bands_{slug}.csv"))),
            "bands output differs from estimate for {slug}"
        );
    }
}

#[test]
fn estimation_failure_exits_3() {
    // two identical covariate columns make the Gram matrix singular
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut text = String::from("# grid: 0,1\nid,z,x1,x2,y_1,y_2\n");
    for i in 0..10 {
        text.push_str(&format!("{},1,1,1,{}.5,{}\n", i + 1, i, i));
    }
    std::fs::write(&data, text).unwrap();
    let out = bin()
        .args(["--out-dir", dir.path().to_str().unwrap(), "estimate", "--input"])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("singular"));
}

#[test]
fn golden_fixture_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .args([
            "--out-dir",
            dir.path().to_str().unwrap(),
            "estimate",
            "--alpha",
            "0.05",
            "--input",
        ])
        .arg(fixtures().join("golden_dataset.csv")));
    for name in [
        "estimate_or.csv",
        "estimate_or.est",
        "estimate_dr.csv",
        "estimate_dr.est",
        "estimate_cc.csv",
        "estimate_cc.est",
        "manifest.txt",
    ] {
        assert_eq!(
            read(&fixtures().join("expected").join(name)),
            read(&dir.path().join(name)),
            "golden mismatch for {name}"
        );
    }
}
