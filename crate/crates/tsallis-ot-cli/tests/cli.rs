//! End-to-end tests driving the compiled binary through its subcommands,
//! file formats, and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsallis_ot::{wasserstein_p, Coupling, DiscreteMeasure};

const MU: &str =
    r#"{"dim": 1, "atoms": [[0.0], [0.25], [0.5], [0.75]], "weights": [0.25, 0.25, 0.25, 0.25]}"#;
const NU: &str = r#"{"dim": 1, "atoms": [[0.1], [0.6], [0.9]], "weights": [0.5, 0.3, 0.2]}"#;

const SWEEP_HEADER: &str = "epsilon,gap,upper_env,kl_env,lower_env,solver_gap,converged";

fn case_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("create case dir");
    dir
}

fn stage(dir: &Path) -> (PathBuf, PathBuf) {
    let mu = dir.join("mu.json");
    let nu = dir.join("nu.json");
    fs::write(&mu, MU).expect("write mu");
    fs::write(&nu, NU).expect("write nu");
    (mu, nu)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsallis-ot"))
        .args(args)
        .env_remove("TSALLIS_OT_THREADS")
        .output()
        .expect("spawn binary")
}

fn run_with_threads(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsallis-ot"))
        .args(args)
        .env("TSALLIS_OT_THREADS", threads)
        .output()
        .expect("spawn binary")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn json_of(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).expect("read json")).expect("parse json")
}

#[test]
fn solve_reports_a_certified_value_and_writes_the_coupling() {
    let dir = case_dir("solve-happy");
    let (mu, nu) = stage(&dir);
    let out = dir.join("report.json");
    let result = run(&[
        "solve",
        "--q",
        "2",
        "--epsilon",
        "0.1",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0, "stderr: {}", stderr_of(&result));

    let report = json_of(&out);
    assert_eq!(report["method"], "dual_ascent");
    assert_eq!(report["converged"], true);
    let primal = report["primal_value"].as_f64().unwrap();
    let dual = report["dual_value"].as_f64().unwrap();
    let gap = report["gap"].as_f64().unwrap();
    let scale = primal.abs().max(1.0);
    assert!(gap >= 0.0 && gap <= 1e-6 * scale, "gap {gap}");
    assert!((primal - dual - gap).abs() <= 1e-12 * scale);
    assert_eq!(report["manifest"]["subcommand"], "solve");
    assert_eq!(report["manifest"]["config"]["epsilon"], 0.1);

    let coupling_path = dir.join("report.coupling.csv");
    assert_eq!(
        report["coupling"].as_str().unwrap(),
        coupling_path.to_str().unwrap()
    );
    let weights =
        Coupling::weights_from_csv(&fs::read_to_string(&coupling_path).unwrap()).unwrap();
    let mu_m = DiscreteMeasure::from_json(MU).unwrap();
    let nu_m = DiscreteMeasure::from_json(NU).unwrap();
    Coupling::new(weights, mu_m, nu_m).expect("coupling satisfies the stated marginals");
}

#[test]
fn zero_strength_dispatches_to_the_exact_route() {
    let dir = case_dir("solve-exact");
    let (mu, nu) = stage(&dir);
    let out = dir.join("report.json");
    let result = run(&[
        "solve",
        "--epsilon",
        "0",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0, "stderr: {}", stderr_of(&result));

    let report = json_of(&out);
    assert_eq!(report["method"], "exact_lp");
    assert_eq!(report["gap"].as_f64().unwrap(), 0.0);
    assert_eq!(report["iterations"].as_i64().unwrap(), 0);

    let mu_m = DiscreteMeasure::from_json(MU).unwrap();
    let nu_m = DiscreteMeasure::from_json(NU).unwrap();
    let expected = wasserstein_p(&mu_m, &nu_m, 1.0).unwrap();
    let primal = report["primal_value"].as_f64().unwrap();
    assert!((primal - expected).abs() <= 1e-9, "{primal} vs {expected}");
}

#[test]
fn a_malformed_measure_is_rejected_with_diagnostics() {
    let dir = case_dir("bad-measure");
    let bad = dir.join("bad.json");
    fs::write(&bad, r#"{"dim": 1, "atoms": [[0.0], [1.0]], "weights": [0.4, 0.5]}"#).unwrap();
    let nu = dir.join("nu.json");
    fs::write(&nu, NU).unwrap();
    let out = dir.join("report.json");
    let result = run(&[
        "solve",
        "--epsilon",
        "0.1",
        "--mu",
        bad.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 1);
    let stderr = stderr_of(&result);
    assert!(stderr.contains("mass"), "diagnostics name the failed check: {stderr}");
    assert!(stderr.contains("bad.json"), "diagnostics name the file: {stderr}");
    assert!(!out.exists(), "no report on a rejected input");
}

#[test]
fn unknown_flags_exit_with_the_usage_code() {
    let result = run(&["solve", "--bogus"]);
    assert_eq!(code(&result), 1);
    assert!(stderr_of(&result).contains("--help"), "points at the help text");
}

#[test]
fn help_prints_to_stdout_and_exits_clean() {
    let result = run(&["--help"]);
    assert_eq!(code(&result), 0);
    let stdout = String::from_utf8_lossy(&result.stdout).into_owned();
    for sub in ["solve", "sweep", "quantize", "shadow-check", "compare"] {
        assert!(stdout.contains(sub), "help lists {sub}");
    }
    assert!(result.stderr.is_empty());
}

#[test]
fn sweep_rows_follow_the_grid_and_rerun_byte_identical_across_thread_counts() {
    let dir = case_dir("sweep-det");
    let (mu, nu) = stage(&dir);
    let out1 = dir.join("s1.csv");
    let out4 = dir.join("s4.csv");
    let args = |out: &str| {
        vec![
            "sweep".to_string(),
            "--mu".into(),
            mu.to_str().unwrap().into(),
            "--nu".into(),
            nu.to_str().unwrap().into(),
            "--grid".into(),
            "0.1:0.5:5".into(),
            "--out".into(),
            out.into(),
        ]
    };
    let args1: Vec<String> = args(out1.to_str().unwrap());
    let argrefs1: Vec<&str> = args1.iter().map(String::as_str).collect();
    let result = run_with_threads(&argrefs1, "1");
    assert_eq!(code(&result), 0, "stderr: {}", stderr_of(&result));

    let args4: Vec<String> = args(out4.to_str().unwrap());
    let argrefs4: Vec<&str> = args4.iter().map(String::as_str).collect();
    let result = run_with_threads(&argrefs4, "4");
    assert_eq!(code(&result), 0, "stderr: {}", stderr_of(&result));

    let csv1 = fs::read(&out1).unwrap();
    let csv4 = fs::read(&out4).unwrap();
    assert_eq!(csv1, csv4, "sweep bodies differ across thread counts");

    let text = String::from_utf8(csv1).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), SWEEP_HEADER);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5, "one row per grid point");
    assert!(
        rows[0].starts_with("1.0000000000000001e-1,"),
        "numbers carry 17 significant digits: {}",
        rows[0]
    );

    let summary = json_of(&dir.join("s1.summary.json"));
    assert!(summary["slope"].as_f64().unwrap().is_finite());
    assert!(summary["r2"].as_f64().unwrap().is_finite());
    assert!(summary["band_violations"].is_u64());
    assert!(summary["banded_points"].is_u64());

    let manifest = json_of(&dir.join("s1.manifest.json"));
    assert_eq!(manifest["subcommand"], "sweep");
    assert_eq!(manifest["config"]["grid"]["count"], 5);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 2);
}

#[test]
fn compare_emits_one_gap_column_per_order() {
    let dir = case_dir("compare");
    let (mu, nu) = stage(&dir);
    let out = dir.join("cmp.csv");
    let result = run(&[
        "compare",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--q",
        "2",
        "--q",
        "1",
        "--grid",
        "0.1:0.5:3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0, "stderr: {}", stderr_of(&result));

    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epsilon,gap[q=2],gap[q=1]");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let fields: Vec<f64> = row.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields.len(), 3);
        assert!(fields.iter().all(|v| v.is_finite()));
        // regularization only adds cost, for either divergence order
        assert!(fields[1] > 0.0 && fields[2] > 0.0);
    }
    assert!(dir.join("cmp.manifest.json").exists());
}

#[test]
fn quantize_output_round_trips_as_a_measure() {
    let dir = case_dir("quantize");
    let (mu, _) = stage(&dir);
    let out = dir.join("quant.json");
    let result = run(&[
        "quantize",
        "--in",
        mu.to_str().unwrap(),
        "--n",
        "2",
        "--p",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0, "stderr: {}", stderr_of(&result));

    let quantized = DiscreteMeasure::from_json(&fs::read_to_string(&out).unwrap())
        .expect("output is a loadable measure");
    assert_eq!(quantized.len(), 2);

    // Four equal atoms at spacing 1/4 collapse pairwise, each moving 1/8.
    let report = json_of(&dir.join("quant.report.json"));
    let achieved = report["achieved_wp"].as_f64().unwrap();
    assert!((achieved - 0.125).abs() <= 1e-12, "achieved {achieved}");
    assert_eq!(report["seed"].as_u64().unwrap(), 0);
}

#[test]
fn shadow_check_certifies_the_split_identity() {
    let dir = case_dir("shadow");
    let (mu, nu) = stage(&dir);
    let base = dir.join("base.json");
    let result = run(&[
        "solve",
        "--epsilon",
        "0",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--out",
        base.to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0, "stderr: {}", stderr_of(&result));
    let target2 = dir.join("nu2.json");
    let result = run(&[
        "quantize",
        "--in",
        nu.to_str().unwrap(),
        "--n",
        "2",
        "--p",
        "2",
        "--out",
        target2.to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0, "stderr: {}", stderr_of(&result));

    let out = dir.join("shadow.json");
    let result = run(&[
        "shadow-check",
        "--pi",
        dir.join("base.coupling.csv").to_str().unwrap(),
        "--mu1",
        mu.to_str().unwrap(),
        "--mu2",
        nu.to_str().unwrap(),
        "--target2",
        target2.to_str().unwrap(),
        "--p",
        "2",
        "--q",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 0, "stderr: {}", stderr_of(&result));

    let report = json_of(&out);
    assert!(report["wp_change"].as_f64().unwrap() > 0.0);
    assert!(report["split_residual"].as_f64().unwrap() <= 1e-9);
    assert_eq!(report["contractive"], true);
    let before = report["divergence_before"].as_f64().unwrap();
    let after = report["divergence_after"].as_f64().unwrap();
    assert!(after <= before + 1e-9);
}

#[test]
fn an_exhausted_iteration_budget_exits_three_but_still_writes() {
    let dir = case_dir("nonconverged");
    let (mu, nu) = stage(&dir);
    let out = dir.join("report.json");
    let result = run(&[
        "solve",
        "--q",
        "2",
        "--epsilon",
        "1e-6",
        "--max-iter",
        "3",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&result), 3);
    let report = json_of(&out);
    assert_eq!(report["converged"], false);
    assert_eq!(report["iterations"].as_i64().unwrap(), 3);
    assert!(dir.join("report.coupling.csv").exists());
}

#[test]
fn rerun_reports_differ_only_in_the_timestamp() {
    let dir = case_dir("rerun");
    let (mu, nu) = stage(&dir);
    let out = dir.join("report.json");
    let args = [
        "solve",
        "--q",
        "1.5",
        "--epsilon",
        "0.25",
        "--mu",
        mu.to_str().unwrap(),
        "--nu",
        nu.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(code(&run(&args)), 0);
    let mut first = json_of(&out);
    assert_eq!(code(&run(&args)), 0);
    let mut second = json_of(&out);
    first["manifest"].as_object_mut().unwrap().remove("timestamp");
    second["manifest"].as_object_mut().unwrap().remove("timestamp");
    assert_eq!(first, second);
}

#[test]
fn a_bad_thread_count_is_a_usage_error() {
    let dir = case_dir("bad-threads");
    let (mu, _) = stage(&dir);
    let out = dir.join("quant.json");
    let args = [
        "quantize",
        "--in",
        mu.to_str().unwrap(),
        "--n",
        "2",
        "--out",
        out.to_str().unwrap(),
    ];
    let result = run_with_threads(&args, "abc");
    assert_eq!(code(&result), 1);
    assert!(stderr_of(&result).contains("TSALLIS_OT_THREADS"));
}
