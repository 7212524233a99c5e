use featnet::cli::{main_with_args, EXIT_CONFIG, EXIT_FAILED, EXIT_OK};
use std::path::{Path, PathBuf};
use std::process::Command;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["featnet"];
    full.extend_from_slice(args);
    main_with_args(full)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_featnet"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_trace_with_config_header() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "run",
        "--config",
        s(&config("vrd2_ring.json")),
        "--out",
        s(dir.path()),
        "--set",
        "algorithm.iters=500",
    ]);
    assert_eq!(code, EXIT_OK);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let first = trace.lines().next().unwrap();
    let echoed: serde_json::Value = serde_json::from_str(first.strip_prefix("# config: ").unwrap()).unwrap();
    assert_eq!(echoed["algorithm"]["iters"], 500);
    assert!(trace.lines().nth(1).unwrap().starts_with("iteration,"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["final_record"]["iteration"], 500);
}

#[test]
fn invalid_step_exits_two_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config", s(&config("vrd2_ring.json")), "--out", s(dir.path())])
        .args(["--set", "algorithm.step=-1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("step"), "{err}");
}

#[test]
fn unknown_field_is_rejected_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config", s(&config("vrd2_ring.json")), "--out", s(dir.path())])
        .args(["--set", "algorithm.stepp=0.1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepp"));
}

#[test]
fn reruns_are_bit_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = vec![];
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(i.to_string());
        let status = bin()
            .env("FEATNET_THREADS", threads)
            .args(["run", "--config", s(&config("pvrd2_ring.json")), "--out", s(&out)])
            .args(["--set", "algorithm.iters=300"])
            .status()
            .unwrap();
        assert!(status.success());
        traces.push(std::fs::read(out.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let out = bin()
        .env("FEATNET_THREADS", "zero")
        .args([
            "run",
            "--config",
            s(&config("vrd2_ring.json")),
            "--set",
            "algorithm.iters=10",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn seeds_write_one_directory_per_replicate() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "run",
        "--config",
        s(&config("vrd2_ring.json")),
        "--out",
        s(dir.path()),
        "--set",
        "algorithm.iters=200",
        "--seeds",
        "3",
    ]);
    assert_eq!(code, EXIT_OK);
    for seed in 7..10 {
        assert!(dir.path().join(format!("seed-{seed}/trace.csv")).exists());
    }
    let overview: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("replicates.json")).unwrap()).unwrap();
    assert_eq!(overview["seeds"], serde_json::json!([7, 8, 9]));
    let a = std::fs::read(dir.path().join("seed-7/trace.csv")).unwrap();
    let b = std::fs::read(dir.path().join("seed-8/trace.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn gen_topology_then_rate_bound() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("ring4.json");
    let code = run(&[
        "gen-topology",
        "--out",
        s(&topo),
        "--set",
        "kind=ring",
        "--set",
        "agents=4",
    ]);
    assert_eq!(code, EXIT_OK);
    let a = featnet::topology::CombinationMatrix::load(&topo).unwrap();
    assert!((a.lambda() - 1.0 / 3.0).abs() < 1e-12);

    let out = bin()
        .args(["rate-bound", "--topology", s(&topo), "--depth", "2", "--samples", "100"])
        .args(["--step", "0.5", "--nu", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    // network term 1 - (1 - 1/9) / 200 beats the convexity term 1 - 0.5 * 2 / 5.
    let rho: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("rho "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((rho - (1.0 - (8.0 / 9.0) / 200.0)).abs() < 1e-15);
    assert!(text.contains("branch network"), "{text}");
}

#[test]
fn rate_bound_rejects_bad_lambda() {
    assert_eq!(
        run(&[
            "rate-bound",
            "--lambda",
            "1.0",
            "--samples",
            "10",
            "--step",
            "0.1",
            "--nu",
            "0.1"
        ]),
        EXIT_CONFIG
    );
}

#[test]
fn gen_data_round_trips_through_csv_config() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let code = run(&[
        "gen-data",
        "--out",
        s(&data),
        "--set",
        "samples=40",
        "--set",
        "features=6",
        "--set",
        "seed=3",
        "--set",
        "model=logistic",
    ]);
    assert_eq!(code, EXIT_OK);
    let ds = featnet::data::load_csv(&data, &Default::default()).unwrap();
    assert_eq!((ds.samples(), ds.features()), (40, 6));

    let cfg = serde_json::json!({
        "version": 1,
        "dataset": {"kind": "csv", "path": data},
        "partition": {"scheme": "even", "agents": 3},
        "topology": {"kind": "ring"},
        "model": {"loss": "logistic"},
        "reg_coeff": 0.01,
        "algorithm": {"name": "vrd2", "iters": 100, "seed": 1},
    });
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    assert_eq!(
        run(&["run", "--config", s(&path), "--out", s(&dir.path().join("o"))]),
        EXIT_OK
    );
}

#[test]
fn compare_needs_two_configs_on_one_dataset() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&[
            "compare",
            "--config",
            s(&config("vrd2_ring.json")),
            "--out",
            s(dir.path())
        ]),
        EXIT_CONFIG
    );
    assert_eq!(
        run(&[
            "compare",
            "--config",
            s(&config("vrd2_ring.json")),
            "--config",
            s(&config("softmax_rgg.json")),
            "--out",
            s(dir.path()),
        ]),
        EXIT_CONFIG
    );
}

#[test]
fn compare_writes_aligned_tables() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "compare",
        "--config",
        s(&config("vrd2_ring.json")),
        "--config",
        s(&config("naive_ring.json")),
        "--out",
        s(dir.path()),
        "--set",
        "algorithm.iters=200",
    ]);
    assert_eq!(code, EXIT_OK);
    for f in ["by_gradients.csv", "by_comm.csv", "compare.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let table = std::fs::read_to_string(dir.path().join("by_comm.csv")).unwrap();
    assert!(table.starts_with("# configs: "));
    assert!(table.lines().nth(1).unwrap().starts_with("comm_net,0-vrd2,1-naive"));
}

#[test]
fn audit_trips_on_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("pvrd2_ring.json");
    let base = [
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "--set",
        "algorithm.iters=100",
    ];
    let clean = run(&[&["audit"][..], &base[..]].concat());
    assert_eq!(clean, EXIT_OK);
    let fault = "algorithm.fault={\"iteration\":50,\"agent\":1,\"delta\":1e-3}";
    assert_eq!(
        run(&[&["audit"][..], &base[..], &["--set", fault][..]].concat()),
        EXIT_FAILED
    );
    // `run` reports but does not fail unless asked to.
    assert_eq!(run(&[&["run"][..], &base[..], &["--set", fault][..]].concat()), EXIT_OK);
    assert_eq!(
        run(&[&["run"][..], &base[..], &["--set", fault, "--strict-invariants"][..]].concat()),
        EXIT_FAILED
    );
}
