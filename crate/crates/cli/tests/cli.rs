use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gbcalib::calibration::target_sandwich;
use gbcalib::estimator::map_center;
use gbcalib::experiment::SimConfig;
use gbcalib::io::read_dataset_csv;
use gbcalib::model::whiten;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gbcalib"));
    c.env_remove("GBCALIB_THREADS");
    c
}

fn tiny() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.csv")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn gbcalib")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn fit_smoke() {
    let o = run(&["fit", p(&tiny())]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("p = 1"));
    assert!(out.contains("beta_1 = "));
    assert!(out.contains("95% interval ["));
}

#[test]
fn fit_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fit.csv");
    let o = run(&["fit", p(&tiny()), "--out", p(&csv)]);
    assert_eq!(code(&o), 0);
    let body = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().next().unwrap(), "coord,beta_hat,se,lo,hi");
    assert_eq!(body.lines().count(), 2);
}

#[test]
fn malformed_csv_reports_line_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "group_id,y,x_1\na,1.0,0.5\na,oops,0.1\n").unwrap();
    let o = run(&["fit", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("line 3"), "{}", text(&o.stderr));
}

#[test]
fn bad_level_exits_2() {
    let o = run(&["fit", p(&tiny()), "--level", "1.5"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("level"));
}

#[test]
fn sample_count_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let o = run(&[
            "sample",
            p(&tiny()),
            "--iterations",
            "10",
            "--burn-in",
            "5",
            "--seed",
            "42",
            "--out",
            p(path),
        ]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    }
    let body = std::fs::read(&a).unwrap();
    assert_eq!(body, std::fs::read(&b).unwrap());
    let s = text(&body);
    assert_eq!(s.lines().next().unwrap(), "draw_index,beta_1");
    assert_eq!(s.lines().count(), 1 + 5);
}

#[test]
fn zero_eta_exits_2() {
    let o = run(&["sample", p(&tiny()), "--eta", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn calibrate_row_count_and_identity_residual() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let cal = dir.path().join("cal.csv");
    let report = dir.path().join("report.json");
    let o = run(&[
        "sample",
        p(&tiny()),
        "--iterations",
        "300",
        "--burn-in",
        "100",
        "--eta",
        "2",
        "--out",
        p(&raw),
    ]);
    assert_eq!(code(&o), 0);
    let o = run(&[
        "calibrate",
        p(&tiny()),
        p(&raw),
        "--out",
        p(&cal),
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let cal_body = std::fs::read_to_string(&cal).unwrap();
    assert!(cal_body.starts_with("draw_index,beta_calib_1\n"));
    assert_eq!(
        cal_body.lines().count(),
        std::fs::read_to_string(&raw).unwrap().lines().count()
    );
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["identity_residual"].as_f64().unwrap() <= 1e-10);
    assert_eq!(doc["n_draws"].as_u64().unwrap(), 200);
}

#[test]
fn calibrate_matched_draws_give_identity_map() {
    let data = read_dataset_csv(std::fs::File::open(tiny()).unwrap()).unwrap();
    let cfg = SimConfig::default();
    let wd = whiten(&data, &cfg.working_cov().unwrap()).unwrap();
    let (h, spec) = (cfg.huber().unwrap(), cfg.ridge().unwrap());
    let center = map_center(&wd, &h, &spec, wd.n(), 1.0).unwrap();
    let v = target_sandwich(&wd, &h, &spec, &center, wd.n())
        .unwrap()
        .v_target
        .get(0, 0);
    // Draws with sample variance (divisor D) exactly V̂/n.
    let d = 101;
    let z: Vec<f64> = (0..d).map(|i| i as f64 - 50.0).collect();
    let var = z.iter().map(|x| x * x).sum::<f64>() / d as f64;
    let scale = (v / wd.n() as f64 / var).sqrt();
    let mut body = String::from("draw_index,beta_1\n");
    for (i, x) in z.iter().enumerate() {
        body.push_str(&format!("{i},{:e}\n", center[0] + scale * x));
    }
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let cal = dir.path().join("cal.csv");
    std::fs::write(&raw, body).unwrap();
    let o = run(&["calibrate", p(&tiny()), p(&raw), "--out", p(&cal)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let off = doc["omega_minus_identity_frobenius"].as_f64().unwrap();
    assert!(off < 1e-8, "{off}");
}

#[test]
fn constant_draws_are_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    std::fs::write(&raw, "draw_index,beta_1\n0,1.0\n1,1.0\n2,1.0\n").unwrap();
    let o = run(&[
        "calibrate",
        p(&tiny()),
        p(&raw),
        "--out",
        p(&dir.path().join("c.csv")),
    ]);
    assert_eq!(code(&o), 3, "{}", text(&o.stderr));
}

#[test]
fn config_precedence_flag_over_file_over_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[inference]\nlevel = 0.9\n").unwrap();
    let level_line = |args: &[&str]| {
        let o = run(args);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        text(&o.stdout)
            .lines()
            .find(|l| l.starts_with("beta_1"))
            .unwrap()
            .to_string()
    };
    let data = tiny();
    assert!(level_line(&["fit", p(&data)]).contains("95% interval"));
    assert!(level_line(&["fit", p(&data), "--config", p(&cfg)]).contains("90% interval"));
    assert!(
        level_line(&["fit", p(&data), "--config", p(&cfg), "--level", "0.8"])
            .contains("80% interval")
    );
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "levle = 0.9\n").unwrap();
    let o = run(&["fit", p(&tiny()), "--config", p(&cfg)]);
    assert_eq!(code(&o), 2);
}

const SMALL: &[&str] = &[
    "--g",
    "30",
    "--eta-grid",
    "0.1,10",
    "--reps",
    "3",
    "--iterations",
    "200",
    "--burn-in",
    "100",
    "--oracle-g",
    "200",
    "--oracle-reps",
    "5",
];

#[test]
fn experiment_writes_both_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["experiment", "--out-dir", p(dir.path())];
    args.extend_from_slice(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "method,eta,coverage,mean_width,bias,bias_sd,reps"
    );
    assert_eq!(metrics.lines().count(), 1 + 3 * 2);
    let records = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 3 * 2 * 3);
}

#[test]
fn experiment_with_one_rep_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "experiment",
        "--out-dir",
        p(dir.path()),
        "--reps",
        "1",
        "--target",
        "0.8",
    ]);
    assert_eq!(code(&o), 2);
    assert!(
        text(&o.stderr).contains("replications"),
        "{}",
        text(&o.stderr)
    );
}

#[test]
fn pseudo_true_prints_json() {
    let mut args = vec!["pseudo-true"];
    args.extend_from_slice(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let v = doc["value"][0].as_f64().unwrap();
    assert!(v > 0.0 && v < 2.0);
    assert_eq!(doc["oracle_reps"].as_u64().unwrap(), 5);
}

#[test]
fn threads_flag_and_env() {
    let o = run(&["--threads", "2", "fit", p(&tiny())]);
    assert_eq!(code(&o), 0);
    let o = bin()
        .env("GBCALIB_THREADS", "1")
        .args(["fit", p(&tiny())])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let o = run(&["--threads", "0", "fit", p(&tiny())]);
    assert_eq!(code(&o), 2);
}
