//! End-to-end tests of the benchmark binary: CSV shape, exit codes,
//! sweeps, and output redirection.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU32, Ordering};

fn bench() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_soa-bench"));
    // Isolate from the ambient environment.
    c.env_remove("SOA_BENCH_OUT_DIR");
    c
}

/// A fresh path in the system temp dir, unique per test process and call.
fn temp_path(name: &str) -> PathBuf {
    static SERIAL: AtomicU32 = AtomicU32::new(0);
    let serial = SERIAL.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!(
        "soa-bench-test-{}-{serial}-{name}",
        std::process::id()
    ))
}

fn stdout_lines(out: &Output) -> Vec<String> {
    String::from_utf8(out.stdout.clone())
        .expect("CSV output is UTF-8")
        .lines()
        .map(str::to_string)
        .collect()
}

const HEADER_TAIL: &str =
    ",allocs,deallocs,fragmentation,allocated_blocks,block_claims,rollbacks,retries";

#[test]
fn csv_has_header_numbered_rows_and_summary() {
    let out = bench()
        .args(["--app", "wa-tor", "--grid", "8x8", "--iterations", "4", "--threads", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 1 + 4 + 1, "header, four rows, summary");
    assert_eq!(
        lines[0],
        format!("iteration,wall_ms,live_fish,live_shark,live_cell{HEADER_TAIL}")
    );
    let columns = lines[0].split(',').count();
    for (i, line) in lines.iter().enumerate().skip(1) {
        assert_eq!(line.split(',').count(), columns, "ragged row: {line}");
        let label = line.split(',').next().unwrap();
        if i <= 4 {
            assert_eq!(label, (i - 1).to_string(), "rows are numbered from zero");
        } else {
            assert_eq!(label, "summary");
        }
    }
}

#[test]
fn zero_iterations_writes_only_the_header() {
    for app in ["wa-tor", "game-of-life", "nbody", "linux-scalability"] {
        let out = bench()
            .args(["--app", app, "--iterations", "0", "--threads", "1"])
            .args(if app == "nbody" || app == "linux-scalability" {
                ["--n", "128"].as_slice()
            } else {
                ["--grid", "8x8"].as_slice()
            })
            .output()
            .unwrap();
        assert!(out.status.success(), "{app} failed: {}", String::from_utf8_lossy(&out.stderr));
        let lines = stdout_lines(&out);
        assert_eq!(lines.len(), 1, "{app}: expected a lone header line, got {lines:?}");
        assert!(lines[0].starts_with("iteration,wall_ms,"));
    }
}

#[test]
fn same_seed_one_worker_no_timing_is_byte_identical() {
    let a = temp_path("det-a.csv");
    let b = temp_path("det-b.csv");
    for path in [&a, &b] {
        let out = bench()
            .args(["--app", "wa-tor", "--grid", "16x16", "--iterations", "12"])
            .args(["--threads", "1", "--seed", "99", "--no-timing"])
            .arg("--out")
            .arg(path)
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b, "identical runs must produce identical files");
    let _ = std::fs::remove_file(&a);
    let _ = std::fs::remove_file(&b);
}

#[test]
fn bad_configuration_exits_with_code_two() {
    let cases: &[&[&str]] = &[
        &["--app", "frogger"],
        &["--app", "nbody", "--grid", "8x8"],
        &["--app", "game-of-life", "--heap", "64MiB"],
        &["--app", "wa-tor", "--grid", "8"],
        &["--app", "wa-tor", "--grid", "2x2"],
        &["--app", "wa-tor", "--grid", "16x16", "--heap", "1KiB"],
        &["--app", "wa-tor", "--retries", "0"],
        &["--app", "wa-tor", "--lane-width", "65"],
        &["--app", "wa-tor", "--sweep", "retries=1,2"], // sweep without --out
        &["--app", "linux-scalability", "--seed", "3"],
    ];
    for args in cases {
        let out = bench().args(*args).output().unwrap();
        assert_eq!(
            out.status.code(),
            Some(2),
            "args {args:?}; stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(out.stdout.is_empty(), "args {args:?} wrote CSV before failing");
    }
}

#[test]
fn mid_run_exhaustion_keeps_partial_csv_and_exits_one() {
    // An arena that holds the initial population but not the peak one: the
    // run stops at the first failed step, keeps the rows written so far,
    // and writes no summary row.
    let path = temp_path("oom.csv");
    let out = bench()
        .args(["--app", "wa-tor", "--grid", "16x16", "--heap", "21KiB"])
        .args(["--iterations", "300", "--threads", "1"])
        .arg("--out")
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("out of memory"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() > 1, "the partial CSV keeps completed rows");
    assert!(lines.len() < 302, "the run stopped before all iterations");
    assert!(
        !lines.last().unwrap().starts_with("summary"),
        "an aborted run must not write a summary row"
    );
    let _ = std::fs::remove_file(&path);
}

#[test]
fn sweep_writes_one_csv_per_value() {
    let dir = temp_path("sweep");
    std::fs::create_dir_all(&dir).unwrap();
    let out = bench()
        .args(["--app", "wa-tor", "--grid", "8x8", "--iterations", "5", "--threads", "1"])
        .args(["--sweep", "retries=1,5"])
        .arg("--out")
        .arg(dir.join("run.csv"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for value in ["1", "5"] {
        let path = dir.join(format!("run_retries_{value}.csv"));
        let text = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("missing {}: {e}", path.display()));
        assert!(text.lines().last().unwrap().starts_with("summary"));
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn out_dir_environment_variable_redirects_files() {
    let dir = temp_path("redirect");
    std::fs::create_dir_all(&dir).unwrap();
    let out = bench()
        .args(["--app", "game-of-life", "--grid", "8x8", "--iterations", "2", "--threads", "1"])
        .args(["--out", "/nonexistent/elsewhere/gol.csv"])
        .env("SOA_BENCH_OUT_DIR", &dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("gol.csv").is_file(), "file lands in the override directory");
    let _ = std::fs::remove_dir_all(&dir);
}
