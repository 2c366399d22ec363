//! Acceptance gate for the command-line interface, continuing the numbered
//! verdicts from the library's acceptance tests.

use std::path::Path;
use std::process::{Command, Output};

fn gais(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gais"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .expect("binary runs")
}

#[test]
fn criterion_9_benchmark_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("twonorm.csv");
    let out = gais(
        &["generate", "--name", "twonorm", "--n", "300", "--seed", "1", "--out",
            data.to_str().unwrap()],
        "1",
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // The benchmark loop is sequential by construction, so a worker-pool
    // size hint must not change anything; it is varied here to prove that.
    let run = |path: &Path, threads: &str| {
        let out = gais(
            &["benchmark", "--input", data.to_str().unwrap(), "--methods",
                "gais,cnn,random", "--seeds", "0,1", "--epochs", "40", "--lr", "0.02",
                "--theta-s", "0.8", "--theta-c", "0.6", "--window", "64", "--overlap", "8",
                "--no-timing", "--out", path.to_str().unwrap()],
            threads,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    run(&first, "1");
    run(&second, "8");

    let first_bytes = std::fs::read(&first).unwrap();
    let second_bytes = std::fs::read(&second).unwrap();
    let ok = !first_bytes.is_empty() && first_bytes == second_bytes;
    println!("criterion 9: {}", if ok { "pass" } else { "fail" });
    assert!(ok, "criterion 9 failed: benchmark outputs differ between runs");
}
