//! End-to-end checks against the compiled binary: output determinism,
//! the singleton-segment/leave-one-out equivalence, exit-code categories,
//! and the bit-stability of exported numbers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tikreg"))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

/// Deterministic 12 x 3 table with a linked response, in plain decimal.
fn toy_data(dir: &Path) -> (PathBuf, PathBuf) {
    let mut state = 97_u64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut x_text = String::from("a,b,c\n");
    let mut y_text = String::new();
    for _ in 0..12 {
        let row: Vec<f64> = (0..3).map(|_| next()).collect();
        let y = row[0] - 2.0 * row[1] + 0.5 * row[2] + 0.05 * next();
        x_text.push_str(&format!("{},{},{}\n", row[0], row[1], row[2]));
        y_text.push_str(&format!("{y}\n"));
    }
    (
        write_file(dir, "x.csv", &x_text),
        write_file(dir, "y.csv", &y_text),
    )
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn base_args(x: &Path, y: &Path, out: &Path) -> Vec<String> {
    [
        "--x", &x.display().to_string(),
        "--y", &y.display().to_string(),
        "--lambda-min", "1e-4",
        "--lambda-max", "1e4",
        "--lambda-count", "60",
        "--out", &out.display().to_string(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn output_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["curve.csv", "selection.json", "coefficients.csv", "residuals.csv"]
        .iter()
        .map(|name| (name.to_string(), fs::read(dir.join(name)).unwrap()))
        .collect()
}

/// Parses every numeric cell of a curve file, skipping the header.
fn curve_values(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| line.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn criterion_10_outputs_are_deterministic_and_singleton_segcv_matches_loocv() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = toy_data(dir.path());

    // Identical invocations, and invocations differing only in the thread
    // bound, must produce byte-identical files.
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    let mut args_a = base_args(&x, &y, &out_a);
    args_a.extend(["--rules".into(), "min,one-se,chi2".into()]);
    let mut args_b = base_args(&x, &y, &out_b);
    args_b.extend(["--rules".into(), "min,one-se,chi2".into()]);
    let mut args_c = base_args(&x, &y, &out_c);
    args_c.extend([
        "--rules".into(), "min,one-se,chi2".into(),
        "--threads".into(), "1".into(),
    ]);
    run_ok(&args_a.iter().map(String::as_str).collect::<Vec<_>>());
    run_ok(&args_b.iter().map(String::as_str).collect::<Vec<_>>());
    run_ok(&args_c.iter().map(String::as_str).collect::<Vec<_>>());

    let files_a = output_files(&out_a);
    assert_eq!(files_a, output_files(&out_b), "rerun changed output bytes");
    assert_eq!(files_a, output_files(&out_c), "thread bound changed output bytes");

    // Singleton segments turn segment CV into leave-one-out.
    let segments = write_file(dir.path(), "segments.txt", &(1..=12).map(|i| format!("{i}\n")).collect::<String>());
    let out_loo = dir.path().join("loo");
    let out_seg = dir.path().join("seg");
    run_ok(&base_args(&x, &y, &out_loo).iter().map(String::as_str).collect::<Vec<_>>());
    let mut args_seg = base_args(&x, &y, &out_seg);
    args_seg.extend([
        "--strategy".into(), "segcv".into(),
        "--segments".into(), segments.display().to_string(),
    ]);
    run_ok(&args_seg.iter().map(String::as_str).collect::<Vec<_>>());

    let loo = curve_values(&out_loo.join("curve.csv"));
    let seg = curve_values(&out_seg.join("curve.csv"));
    assert_eq!(loo.len(), seg.len());
    let mut worst = 0.0_f64;
    for (row_l, row_s) in loo.iter().zip(&seg) {
        for (a, b) in row_l.iter().zip(row_s) {
            let rel = (a - b).abs() / a.abs().max(1e-30);
            worst = worst.max(rel);
            assert!(rel <= 1e-10, "curve values diverge: {a} vs {b}");
        }
    }
    println!(
        "PASS criterion 10: byte-identical reruns (thread count included); singleton-segment \
         CV matches leave-one-out on every curve value (max rel {worst:.2e})"
    );
}

#[test]
fn curve_file_has_header_plus_one_line_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = toy_data(dir.path());
    let out = dir.path().join("out");
    let mut args = base_args(&x, &y, &out);
    args[9] = "50".into(); // lambda-count
    run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let text = fs::read_to_string(out.join("curve.csv")).unwrap();
    assert_eq!(text.lines().count(), 51);

    // Re-formatting what was written must reproduce it character for
    // character: the 17-digit round trip.
    for line in text.lines().skip(1) {
        for cell in line.split(',') {
            let v: f64 = cell.parse().unwrap();
            assert_eq!(format!("{v:.16e}"), cell);
        }
    }
}

#[test]
fn input_failures_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = toy_data(dir.path());
    let out = dir.path().join("out");

    // Missing predictor file.
    let mut args = base_args(Path::new("nothing_here.csv"), &y, &out);
    let status = bin().args(&args).output().unwrap();
    assert_eq!(status.status.code(), Some(2));

    // Non-numeric cell, with coordinates on stderr.
    let bad = write_file(dir.path(), "bad.csv", "1,2,3\n4,oops,6\n");
    args = base_args(&bad, &y, &out);
    let output = bin().args(&args).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 2, column 2"), "stderr: {stderr}");

    // Row-count mismatch between predictors and responses.
    let short = write_file(dir.path(), "short.csv", "1\n2\n3\n");
    args = base_args(&x, &short, &out);
    let status = bin().args(&args).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn numeric_failures_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = toy_data(dir.path());
    let out = dir.path().join("out");

    // lambda = 0 on a rank-deficient system (12 rows, 3 columns, but one
    // column duplicated) cannot produce an exact fit.
    let x_text = fs::read_to_string(&x).unwrap();
    let dup: String = x_text
        .lines()
        .map(|line| {
            let first = line.split(',').next().unwrap();
            format!("{line},{first}\n")
        })
        .collect();
    let x_dup = write_file(dir.path(), "x_dup.csv", &dup);

    let mut args = base_args(&x_dup, &y, &out);
    args.push("--include-zero".into());
    let output = bin().args(&args).output().unwrap();
    assert_eq!(
        output.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn configuration_failures_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = toy_data(dir.path());
    let out = dir.path().join("out");

    // Segment strategy without a segment file.
    let mut args = base_args(&x, &y, &out);
    args.extend(["--strategy".into(), "segcv".into()]);
    let status = bin().args(&args).output().unwrap();
    assert_eq!(status.status.code(), Some(4));

    // Alpha outside (0, 1).
    let mut args = base_args(&x, &y, &out);
    args.extend(["--rules".into(), "chi2".into(), "--alpha".into(), "1.5".into()]);
    let status = bin().args(&args).output().unwrap();
    assert_eq!(status.status.code(), Some(4));

    // Inverted lambda range.
    let mut args = base_args(&x, &y, &out);
    args[7] = "1e-6".into(); // lambda-max below lambda-min
    let status = bin().args(&args).output().unwrap();
    assert_eq!(status.status.code(), Some(4));

    // Unknown strategy name (flag-level rejection).
    let mut args = base_args(&x, &y, &out);
    args.extend(["--strategy".into(), "bootstrap".into()]);
    let status = bin().args(&args).output().unwrap();
    assert_eq!(status.status.code(), Some(4));
}

#[test]
fn sparse_segment_labels_warn_and_still_run() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = toy_data(dir.path());
    let out = dir.path().join("out");
    let labels = "5\n5\n5\n9\n9\n9\n5\n5\n5\n9\n9\n9\n";
    let segments = write_file(dir.path(), "segments.txt", labels);

    let mut args = base_args(&x, &y, &out);
    args.extend([
        "--strategy".into(), "vircv".into(),
        "--segments".into(), segments.display().to_string(),
    ]);
    let output = run_ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("relabelled 2 distinct values"), "stderr: {stderr}");
    assert!(out.join("curve.csv").exists());
}
