use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use eqc::data::load_dense_csv;

fn eqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqc")).args(args).output().expect("spawn eqc")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let o = eqc(&["simulate", "--family", "t3", "--n", "100", "--p", "50", "--noise", "0", "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = load_dense_csv(&out).unwrap();
    assert_eq!((d.n(), d.p()), (100, 50));
    assert_eq!(d.class_counts(), vec![(1, 50), (2, 50)]);

    let again = dir.path().join("e.csv");
    eqc(&["simulate", "--family", "t3", "--n", "100", "--p", "50", "--seed", "7", "--out", s(&again)]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn fit_then_predict_reproduces_in_sample_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let o = eqc(&["simulate", "--family", "lognormal", "--n", "80", "--p", "8", "--seed", "3", "--out", s(&data)]);
    assert!(o.status.success());
    let model = dir.path().join("m.eqc");
    let o = eqc(&[
        "fit", "--data", s(&data), "--classifier", "EQC-ridge", "--theta-grid", "0.2,0.5,0.8", "--alpha-grid", "0.01,1",
        "--seed", "1", "--out", s(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (p1, p2) = (dir.path().join("p1.csv"), dir.path().join("p2.csv"));
    for p in [&p1, &p2] {
        let o = eqc(&["predict", "--model", s(&model), "--data", s(&data), "--out", s(p)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&p1).unwrap();
    assert_eq!(text, fs::read_to_string(&p2).unwrap());
    assert!(text.starts_with("row,label,predicted\n"));
    assert_eq!(text.lines().count(), 81);
}

#[test]
fn usage_errors_exit_with_two() {
    let o = eqc(&["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(eqc(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(eqc(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = eqc(&["predict", "--model", "/nonexistent/m", "--data", "/nonexistent/d", "--out", s(&dir.path().join("p"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let cfg = dir.path().join("c.conf");
    fs::write(&cfg, "classifiers = QC\nreplications = 0\n").unwrap();
    assert_eq!(eqc(&["bench", "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let o = eqc(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

#[test]
fn bench_is_deterministic_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.conf");
    fs::write(
        &cfg,
        "classifiers = QC, EQC-ridge\nfamily = heterogeneous\nn_train = 60\np = 6\nnoise = 0, 0.5\n\
         replications = 3\ntest_size = 300\ntheta_grid = 0.25, 0.5, 0.75\nalpha_grid = 0.01, 1\nseed = 5\n",
    )
    .unwrap();
    let run = |out: &str, threads: &str| {
        let o = eqc(&["bench", "--config", s(&cfg), "--out", s(&dir.path().join(out)), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("a", "1");
    run("b", "1");
    run("c", "3");
    for f in ["results.csv", "summary.csv", "table.csv", "sensitivities.csv"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn bundled_small_config_runs() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.conf");
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let o = eqc(&["bench", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs() < 300);
    for f in ["results.csv", "summary.csv"] {
        assert!(dir.path().join(f).exists());
    }
}
