//! End-to-end tests of the `bunn` binary: exit codes, emitted artifacts, and
//! thread-count-independent output bytes.

use std::path::Path;
use std::process::{Command, Output};

fn bunn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bunn"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn check_passes_on_fresh_build() {
    let out = bunn(&["check"]);
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("householder-orthogonality"));
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn injected_fault_yields_exit_code_4() {
    let out = bunn(&["check", "--inject-fault", "degenerate-householder"]);
    assert_eq!(out.status.code(), Some(4));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("FAIL"));
}

#[test]
fn bad_config_yields_exit_code_2() {
    let out = bunn(&["synthetic", "--task", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));

    let out = bunn(&["kernel", "--graph", "/nonexistent/graph.txt", "--t", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = bunn(&["gen-graph", "--kind", "moebius", "--n", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_graph_pipes_into_kernel() {
    let dir = tempdir("kernel");
    let graph = dir.join("p3.txt");
    let out = bunn(&["gen-graph", "--kind", "path", "--n", "3", "--out", path(&graph)]);
    assert!(out.status.success(), "{out:?}");

    let out = bunn(&["kernel", "--graph", path(&graph), "--t", "inf", "--mode", "limit"]);
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines() {
        assert_eq!(line, "0.25,0.5,0.25");
    }
}

#[test]
fn experiment_writes_artifacts_and_is_thread_invariant() {
    let run = |threads: &str, out_dir: &Path| {
        let out = bunn(&[
            "synthetic",
            "--task",
            "clique",
            "--model",
            "mlp",
            "--model",
            "baseline-constant-0",
            "--epochs",
            "2",
            "--seeds",
            "2",
            "--train-samples",
            "4",
            "--test-samples",
            "4",
            "--hidden",
            "8",
            "--threads",
            threads,
            "--out",
            path(out_dir),
        ]);
        assert!(out.status.success(), "{out:?}");
    };
    let d1 = tempdir("threads1");
    let d4 = tempdir("threads4");
    run("1", &d1);
    run("4", &d4);
    let a = std::fs::read(d1.join("results.csv")).unwrap();
    let b = std::fs::read(d4.join("results.csv")).unwrap();
    assert_eq!(a, b, "results.csv differs across thread counts");
    // summary.json carries a wall-clock runtime; everything else must match
    let strip_runtime = |p: &Path| -> String {
        std::fs::read_to_string(p.join("summary.json"))
            .unwrap()
            .lines()
            .filter(|l| !l.contains("runtime_seconds"))
            .collect()
    };
    assert_eq!(strip_runtime(&d1), strip_runtime(&d4));
    // resolved configs differ only in the thread count itself
    let a = std::fs::read_to_string(d1.join("config.resolved")).unwrap();
    let b = std::fs::read_to_string(d4.join("config.resolved")).unwrap();
    assert_eq!(
        a.replace("threads=1", ""),
        b.replace("threads=4", "")
    );
}

#[test]
fn config_file_merges_with_flag_overrides() {
    let dir = tempdir("config");
    let cfg = dir.join("exp.cfg");
    let out_dir = dir.join("run");
    std::fs::write(
        &cfg,
        format!(
            "epochs=2\nseeds=1\ntrain-samples=4\ntest-samples=4\n\
             models=mlp\nhidden=8\nn=6\nout={}\n",
            out_dir.display()
        ),
    )
    .unwrap();
    // --n on the command line must win over n=6 from the file
    let out = bunn(&["synthetic", "--config", path(&cfg), "--n", "8"]);
    assert!(out.status.success(), "{out:?}");
    let resolved = std::fs::read_to_string(out_dir.join("config.resolved")).unwrap();
    assert!(resolved.contains("n=8"), "{resolved}");
    assert!(resolved.contains("epochs=2"), "{resolved}");
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("bunn-cli-test-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}
