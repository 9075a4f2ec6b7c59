use std::path::Path;
use std::process::{Command, Output};

fn ifdet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifdet"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn ifdet")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = ifdet(args, dir);
    assert!(
        out.status.success(),
        "ifdet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn shapes_reports_flatten_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let s = ok(&["shapes", "--alpha", "128", "--beta", "256"], dir.path());
    assert!(s.contains("flatten        628992"), "{s}");
    assert!(s.contains("dense params   1258000"), "{s}");
    let s = ok(
        &["shapes", "--alpha", "64", "--beta", "128", "--classes", "6"],
        dir.path(),
    );
    assert!(s.contains("flatten        314496"), "{s}");
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        !ifdet(&["shapes", "--alpha", "3", "--beta", "5"], dir.path())
            .status
            .success()
    );
    std::fs::write(
        dir.path().join("junk.ifr"),
        b"not a dataset at all, just some bytes here",
    )
    .unwrap();
    std::fs::write(dir.path().join("junk.ifw"), b"nope").unwrap();
    let out = ifdet(
        &["eval", "--data", "junk.ifr", "--weights", "junk.ifw"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
    assert!(!ifdet(
        &[
            "gen",
            "--out",
            "x.ifr",
            "--count",
            "1",
            "--scenarios",
            "missing.toml"
        ],
        dir.path()
    )
    .status
    .success());
}

#[test]
fn gen_is_seeded_and_configurable() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sweep.toml"),
        "[sweep]\nn_interferers = [0, 2]\nmcs_indices = [4]\ntraffic = [\"high-traffic\"]\n",
    )
    .unwrap();
    for name in ["a.ifr", "b.ifr"] {
        ok(
            &[
                "--seed",
                "9",
                "gen",
                "--scenarios",
                "sweep.toml",
                "--out",
                name,
                "--count",
                "6",
            ],
            dir.path(),
        );
    }
    ok(
        &[
            "--seed",
            "10",
            "gen",
            "--scenarios",
            "sweep.toml",
            "--out",
            "c.ifr",
            "--count",
            "6",
        ],
        dir.path(),
    );
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.ifr"), read("b.ifr"));
    assert_ne!(read("a.ifr"), read("c.ifr"));
    assert_eq!(read("a.ifr").len(), 40 + 6 * (16 + 183_484));
}

#[test]
fn label_pairs_two_logs() {
    let dir = tempfile::tempdir().unwrap();
    // window 0: side 1 high, side 2 idle; window 1: side 1 silent
    std::fs::write(
        dir.path().join("g1.csv"),
        "timestamp_us,cb_total_count\n0,4\n50000,1\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("g2.csv"),
        "timestamp_us,cb_total_count\n10000,1\n120000,1\n",
    )
    .unwrap();
    ok(
        &[
            "label",
            "--log1",
            "g1.csv",
            "--log2",
            "g2.csv",
            "--window-ms",
            "100",
            "--out",
            "l.csv",
        ],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("l.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(
        rows,
        vec![
            "log,index,timestamp_us,cb_total_count,label",
            "1,0,0,4,CLEAN",
            "1,1,50000,1,CLEAN",
            "2,0,10000,1,INTERF",
            "2,1,120000,1,CLEAN",
        ]
    );
}

#[test]
fn end_to_end_gen_weights_eval_infer_bench() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--seed", "1", "gen", "--out", "d.ifr", "--count", "4"], d);
    ok(
        &[
            "--seed",
            "2",
            "init-weights",
            "--alpha",
            "64",
            "--beta",
            "128",
            "--stats-from",
            "d.ifr",
            "--out",
            "w.ifw",
        ],
        d,
    );
    let s = ok(
        &[
            "eval",
            "--data",
            "d.ifr",
            "--weights",
            "w.ifw",
            "--out",
            "ev",
        ],
        d,
    );
    assert!(s.contains("accuracy"), "{s}");
    let confusion = std::fs::read_to_string(d.join("ev_confusion.csv")).unwrap();
    assert!(confusion.starts_with("true\\pred,CLEAN,INTERF"));

    ok(
        &[
            "infer",
            "--data",
            "d.ifr",
            "--weights",
            "w.ifw",
            "--report",
            "r.csv",
        ],
        d,
    );
    let report = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert_eq!(report.lines().count(), 5);
    assert!(report.starts_with("slot_index,scenario_id,truth,predicted,prob_0,prob_1,latency_us"));

    let s = ok(
        &[
            "bench",
            "--weights",
            "w.ifw",
            "--iters",
            "3",
            "--no-warmup",
            "--out",
            "b",
        ],
        d,
    );
    assert!(s.contains("first call (cold)"), "{s}");
    let summary = std::fs::read_to_string(d.join("b_summary.csv")).unwrap();
    assert!(
        summary.lines().nth(1).unwrap().starts_with("all,2,"),
        "{summary}"
    );
    assert!(d.join("b_cdf.csv").exists() && d.join("b_moving_average.csv").exists());
}

#[test]
fn run_pipeline_with_logging() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "init-weights",
            "--alpha",
            "64",
            "--beta",
            "128",
            "--out",
            "w.ifw",
        ],
        d,
    );
    std::fs::write(
        d.join("run.toml"),
        "seed = 4\n[pipeline]\nslot_period_us = 2000\nlog_sample_every = 2\n",
    )
    .unwrap();
    let s = ok(
        &[
            "run",
            "--weights",
            "w.ifw",
            "--config",
            "run.toml",
            "--slots",
            "6",
            "--log",
            "log.ifr",
            "--report",
            "t",
        ],
        d,
    );
    assert!(s.contains("6 slots generated"), "{s}");
    assert!(s.contains("logged"), "{s}");
    assert!(d.join("t_summary.csv").exists());
}
