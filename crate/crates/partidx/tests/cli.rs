//! End-to-end tests of the command-line interface: pipeline plumbing, exit
//! codes, config handling, and byte-reproducibility of artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use partidx::io::save_fvecs;

const BIN: &str = env!("CARGO_BIN_EXE_partidx");

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn expect_ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Writes a small clustered dataset and query set under dir.
fn write_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(701);
    let centers: [[f32; 2]; 4] = [[8.0, 8.0], [-8.0, 8.0], [8.0, -8.0], [-8.0, -8.0]];
    let mut data = Vec::new();
    for i in 0..240 {
        let c = centers[i % 4];
        for j in 0..6 {
            let base = if j < 2 { c[j] } else { 0.0 };
            data.push(base + rng.sample::<f64, _>(StandardNormal) as f32);
        }
    }
    let mut queries = Vec::new();
    for i in 0..30 {
        let c = centers[i % 4];
        for j in 0..6 {
            let base = if j < 2 { c[j] } else { 0.0 };
            queries.push(base + rng.sample::<f64, _>(StandardNormal) as f32);
        }
    }
    let d_path = dir.join("base.fvecs");
    let q_path = dir.join("queries.fvecs");
    save_fvecs(&d_path, &data, 6).unwrap();
    save_fvecs(&q_path, &queries, 6).unwrap();
    (d_path, q_path)
}

#[test]
fn pipeline_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_dataset(dir);

    // two independent end-to-end runs from the same seed
    for tag in ["x", "y"] {
        expect_ok(
            &[
                "build-graph",
                "--data",
                "base.fvecs",
                "--k",
                "4",
                "--out",
                &format!("{}.phg", tag),
            ],
            dir,
        );
        expect_ok(
            &[
                "partition",
                "--graph",
                &format!("{}.phg", tag),
                "--bins",
                "4",
                "--eta",
                "0.05",
                "--seed",
                "42",
                "--out",
                &format!("{}.php", tag),
            ],
            dir,
        );
        expect_ok(
            &[
                "train",
                "--data",
                "base.fvecs",
                "--graph",
                &format!("{}.phg", tag),
                "--partition",
                &format!("{}.php", tag),
                "--model-kind",
                "mlp",
                "--blocks",
                "1",
                "--hidden",
                "8",
                "--epochs",
                "6",
                "--s",
                "4",
                "--out",
                &format!("{}.phm", tag),
            ],
            dir,
        );
        expect_ok(
            &[
                "build-index",
                "--data",
                "base.fvecs",
                "--levels",
                "4:mlp",
                "--k",
                "4",
                "--s",
                "4",
                "--blocks",
                "1",
                "--hidden",
                "8",
                "--epochs",
                "6",
                "--seed",
                "42",
                "--out",
                &format!("{}.phi", tag),
            ],
            dir,
        );
    }
    for ext in ["phg", "php", "phm", "phi"] {
        let a = fs::read(dir.join(format!("x.{}", ext))).unwrap();
        let b = fs::read(dir.join(format!("y.{}", ext))).unwrap();
        assert_eq!(a, b, "{} artifacts differ between identical runs", ext);
    }

    // querying with every bin probed is exhaustive search: use it to produce
    // exact ground truth, then check eval reports perfect accuracy for it
    expect_ok(
        &[
            "query", "--index", "x.phi", "--data", "base.fvecs", "--queries", "queries.fvecs",
            "--probes", "4", "--k", "3", "--out", "gt.ivecs",
        ],
        dir,
    );
    let out = expect_ok(
        &[
            "eval",
            "--index",
            "x.phi",
            "--queries",
            "queries.fvecs",
            "--gt",
            "gt.ivecs",
            "--k",
            "3",
            "--probes",
            "1;2;4",
        ],
        dir,
    );
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,probes,knn_accuracy,avg_candidates,q95_candidates,mean_query_us"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    let full: Vec<&str> = rows
        .iter()
        .find(|r| r.split(',').nth(1) == Some("4"))
        .unwrap()
        .split(',')
        .collect();
    assert_eq!(
        full[2].parse::<f64>().unwrap(),
        1.0,
        "full probing must have perfect recall"
    );
    assert!(!csv.contains('\r'));
    // timing column is zeroed by default so the CSV is byte-reproducible
    let again = expect_ok(
        &[
            "eval",
            "--index",
            "x.phi",
            "--queries",
            "queries.fvecs",
            "--gt",
            "gt.ivecs",
            "--k",
            "3",
            "--probes",
            "1;2;4",
        ],
        dir,
    );
    assert_eq!(csv, String::from_utf8(again.stdout).unwrap());
}

#[test]
fn baselines_round_trip_through_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_dataset(dir);
    // exhaustive probing of a 4-bin index yields exact ground truth
    expect_ok(
        &[
            "baseline", "--data", "base.fvecs", "--method", "kmeans", "--bins", "4", "--seed",
            "7", "--out", "gtsrc.phi",
        ],
        dir,
    );
    expect_ok(
        &[
            "query", "--index", "gtsrc.phi", "--data", "base.fvecs", "--queries",
            "queries.fvecs", "--probes", "4", "--k", "3", "--out", "gt.ivecs",
        ],
        dir,
    );
    // hyperplane trees route one root-to-leaf path, so their only probe
    // setting is 1; the flat structures take a real sweep
    for (method, extra, probes, rows) in [
        ("kmeans", vec!["--bins", "4"], "1;2", 2),
        ("lsh", vec!["--bits", "3"], "1;2", 2),
        ("pca-tree", vec!["--depth", "2"], "1", 1),
        ("rp-tree", vec!["--depth", "2"], "1", 1),
    ] {
        let out_name = format!("{}.phi", method);
        let mut args = vec!["baseline", "--data", "base.fvecs", "--method", method];
        args.extend(extra.iter().copied());
        args.extend(["--seed", "7", "--out", &out_name]);
        expect_ok(&args, dir);
        let out = expect_ok(
            &[
                "eval",
                "--index",
                &out_name,
                "--queries",
                "queries.fvecs",
                "--gt",
                "gt.ivecs",
                "--k",
                "3",
                "--probes",
                probes,
            ],
            dir,
        );
        let csv = String::from_utf8(out.stdout).unwrap();
        assert_eq!(csv.lines().count(), rows + 1, "{}: header + rows", method);
        assert!(
            csv.lines().nth(1).unwrap().starts_with(method),
            "{}: method column mismatch in {}",
            method,
            csv
        );
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_dataset(dir);

    // usage errors: unknown flag, unknown subcommand, bad grammar
    assert_eq!(code(&run(&["build-graph", "--bogus"], dir)), 2);
    assert_eq!(code(&run(&["no-such-command"], dir)), 2);
    assert_eq!(
        code(&run(
            &["partition", "--graph", "g.phg", "--eta", "abc", "--out", "p.php"],
            dir
        )),
        2,
        "unparseable eta is a usage error"
    );

    // missing input files
    assert_eq!(
        code(&run(
            &["build-graph", "--data", "absent.fvecs", "--out", "g.phg"],
            dir
        )),
        3
    );
    assert_eq!(
        code(&run(
            &["--config", "absent.conf", "build-graph", "--data", "base.fvecs", "--out", "g.phg"],
            dir
        )),
        3
    );

    // malformed artifact
    fs::write(dir.join("junk.phg"), b"PHXZ____not_a_real_file").unwrap();
    assert_eq!(
        code(&run(
            &["partition", "--graph", "junk.phg", "--bins", "2", "--out", "p.php"],
            dir
        )),
        4
    );
}

#[test]
fn config_file_merging() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_dataset(dir);
    fs::write(
        dir.join("run.conf"),
        "# build settings\ndata = base.fvecs\nk = 7\nout = from_file.phg\n",
    )
    .unwrap();
    // file supplies everything
    let out = expect_ok(&["--config", "run.conf", "build-graph"], dir);
    let echo = String::from_utf8(out.stderr).unwrap();
    assert!(echo.contains("# command: build-graph"), "echo header: {}", echo);
    assert!(echo.contains("k=7"), "effective k echoed: {}", echo);
    // CLI overrides the file
    expect_ok(
        &[
            "--config", "run.conf", "build-graph", "--k", "3", "--out", "cli_wins.phg",
        ],
        dir,
    );
    // the echoed settings replay as a config file
    let replay: String = echo
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{}\n", l))
        .collect();
    fs::write(dir.join("replay.conf"), replay).unwrap();
    expect_ok(
        &["--config", "replay.conf", "build-graph", "--out", "replayed.phg"],
        dir,
    );
    assert_eq!(
        fs::read(dir.join("from_file.phg")).unwrap(),
        fs::read(dir.join("replayed.phg")).unwrap(),
        "replayed run must reproduce the artifact"
    );
}

#[test]
fn spectral_check_reports_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_dataset(dir);
    let out = expect_ok(
        &["spectral-check", "--data", "base.fvecs", "--k", "4"],
        dir,
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "coordinate,threshold,lhs,bound,p1_size,p2_size"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    let lhs: f64 = row[2].parse().unwrap();
    let bound: f64 = row[3].parse().unwrap();
    assert!(lhs <= bound + 1e-9, "certificate violated: {} > {}", lhs, bound);
    let p1: usize = row[4].parse().unwrap();
    let p2: usize = row[5].parse().unwrap();
    assert_eq!(p1 + p2, 240);
}
