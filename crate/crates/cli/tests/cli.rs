use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use herding_core::dispersion::csad;
use herding_core::panel::{compute_returns, load_prices_path, SeriesSpec};
use herding_core::regress::{arch_test, breusch_godfrey, classify_herding, herding_regression};
use herding_core::report::{ols_table, to_json, OlsReport};

fn herding(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_herding"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = herding(args, cwd);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn simulated(dir: &Path, periods: &str) {
    ok(&["simulate", "--seed", "4", "--periods", periods, "--assets", "20", "--out", "sim"], dir);
}

#[test]
fn ols_output_matches_library_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulated(dir, "300");
    ok(&["herd", "--prices", "sim/prices.csv", "--out", "o"], dir);

    let loaded = load_prices_path(dir.join("sim/prices.csv")).unwrap();
    let disp = csad(&compute_returns(&loaded.panel, &SeriesSpec::default()), 2);
    let fit = herding_regression(&disp).unwrap();
    let diags = vec![breusch_godfrey(&fit, 2).unwrap(), arch_test(&fit.residuals, 1).unwrap()];
    let report = OlsReport::new(&fit, diags, classify_herding(&fit, 0.05).unwrap());
    assert_eq!(fs::read_to_string(dir.join("o/herd_ols.txt")).unwrap(), ols_table(&report, &fit));
    assert_eq!(fs::read_to_string(dir.join("o/herd_ols.json")).unwrap(), to_json(&report).unwrap());
}

#[test]
fn dispersion_has_one_row_per_return_date() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulated(dir, "50");
    ok(&["dispersion", "--prices", "sim/prices.csv", "--out", "o"], dir);
    let prices = fs::read_to_string(dir.join("sim/prices.csv")).unwrap();
    let table = fs::read_to_string(dir.join("o/dispersion.csv")).unwrap();
    // header plus T price rows gives T − 1 returns
    assert_eq!(table.lines().count() - 1, prices.lines().count() - 2);
}

#[test]
fn identical_assets_give_zero_dispersion() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut prices = String::from("date,a,b,c\n");
    for d in 1..=20 {
        let p = 100.0 + d as f64 * 0.5 + (d % 3) as f64;
        prices.push_str(&format!("2021-03-{d:02},{p},{p},{p}\n"));
    }
    fs::write(dir.join("p.csv"), prices).unwrap();
    ok(&["dispersion", "--prices", "p.csv", "--out", "o"], dir);
    let table = fs::read_to_string(dir.join("o/dispersion.csv")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "csad").unwrap();
    for line in table.lines().skip(1) {
        assert_eq!(line.split(',').nth(col).unwrap().parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn empty_price_file_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("empty.csv"), "").unwrap();
    let out = herding(&["dispersion", "--prices", "empty.csv", "--out", "o"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    let out = herding(&["herd", "--out", "o"], dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_transition_row_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("run.toml"),
        "[synth]\nn_periods = 50\nn_assets = 5\ntrans = [[0.9, 0.1], [0.5, 0.6]]\n",
    )
    .unwrap();
    let out = herding(&["simulate", "--config", "run.toml", "--out", "o"], dir);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 1"), "{err}");
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), "seed = 1\n[synth]\nn_periods = 40\nn_assets = 5\n").unwrap();
    ok(&["simulate", "--config", "run.toml", "--periods", "30", "--out", "a"], dir);
    let truth = fs::read_to_string(dir.join("a/truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 31);
    ok(&["simulate", "--config", "run.toml", "--periods", "30", "--seed", "2", "--out", "b"], dir);
    assert_ne!(truth, fs::read_to_string(dir.join("b/truth.csv")).unwrap());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulated(dir, "400");
    for out in ["a", "b"] {
        ok(
            &["herd", "--mode", "ms", "--regimes", "2", "--restarts", "3", "--prices", "sim/prices.csv", "--out", out],
            dir,
        );
    }
    for name in ["herd_ms.txt", "herd_ms.json", "regime_probabilities.csv"] {
        assert_eq!(fs::read(dir.join("a").join(name)).unwrap(), fs::read(dir.join("b").join(name)).unwrap());
    }
}
