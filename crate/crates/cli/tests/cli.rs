use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn crplus(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crplus"))
        .arg("--config")
        .arg(fixtures().join("config.json"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = crplus(args, out);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn fails(args: &[&str], out: &Path, code: i32) -> String {
    let o = crplus(args, out);
    assert_eq!(
        o.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stderr).unwrap()
}

/// Writes a config next to copies of the fixtures with `edit` applied.
fn custom_config(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    for f in [
        "deaths.csv",
        "population.csv",
        "mapping.json",
        "params.json",
        "portfolio.csv",
    ] {
        fs::copy(fixtures().join(f), dir.join(f)).unwrap();
    }
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixtures().join("config.json")).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn run_with(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crplus"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(config.parent().unwrap().join("out"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn ingest_applies_mapping_and_comparability() {
    let dir = TempDir::new().unwrap();
    ok(&["ingest"], dir.path());
    let csv = fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("year,age_group,gender,population,cause_0,cause_1,cause_2")
    );
    // 1994 a1.f: circulatory 69 plus mental 13 * 0.78 = 10.14 -> 10; other 28
    assert_eq!(lines.next(), Some("1994,1,female,41000,28,79,49"));
    assert_eq!(csv.lines().count(), 1 + 6 * 4);
    let cov: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("coverage.json")).unwrap()).unwrap();
    assert_eq!(cov["adjusted_rows"], 12);
    assert_eq!(cov["unmapped_labels"]["other"], 818);
}

#[test]
fn ingest_rate_series_written_per_cell_and_cause() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |v| v["ingest"] = serde_json::json!({ "rate_series": true }));
    let o = run_with(&cfg, &["ingest"]);
    assert!(o.status.success());
    let rates = dir.path().join("out/rates");
    assert_eq!(fs::read_dir(&rates).unwrap().count(), 4 * 3);
    assert!(rates.join("a2.m.cause_1.csv").exists());
}

#[test]
fn missing_population_file_is_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |v| v["data"]["population"] = "nowhere.csv".into());
    let o = run_with(&cfg, &["ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.csv"));
}

#[test]
fn deaths_above_population_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |_| {});
    let pop = fs::read_to_string(dir.path().join("population.csv"))
        .unwrap()
        .replace("1994,1,female,41000", "1994,1,female,100");
    fs::write(dir.path().join("population.csv"), pop).unwrap();
    let o = run_with(&cfg, &["ingest"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_config_key_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |v| v["sampler"]["steps"] = 10.into());
    assert_eq!(run_with(&cfg, &["estimate"]).status.code(), Some(2));
}

#[test]
fn pipeline_is_reproducible_and_thread_independent() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        for cmd in ["simulate", "estimate", "forecast", "loss"] {
            ok(&["--threads", threads, cmd], dir.path());
        }
    }
    for f in [
        "dataset.csv",
        "samples/chain_0.csv",
        "samples/chain_1.csv",
        "diagnostics.json",
        "forecast.csv",
        "forecast.txt",
        "loss_pmf.csv",
        "risk_measures.json",
        "manifest.estimate.json",
    ] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn seed_flag_changes_simulation() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    ok(&["simulate"], a.path());
    ok(&["--seed", "8", "simulate"], b.path());
    assert_ne!(
        fs::read(a.path().join("dataset.csv")).unwrap(),
        fs::read(b.path().join("dataset.csv")).unwrap()
    );
    let hash = |d: &TempDir| {
        let m: serde_json::Value =
            serde_json::from_slice(&fs::read(d.path().join("manifest.simulate.json")).unwrap()).unwrap();
        (m["config_sha256"].clone(), m["seeds"].clone())
    };
    assert_ne!(hash(&a), hash(&b));
    assert_eq!(hash(&b).1, serde_json::json!([8]));
}

#[test]
fn forecast_tables_have_one_block_per_cell_and_year() {
    let dir = TempDir::new().unwrap();
    ok(&["simulate"], dir.path());
    ok(&["estimate"], dir.path());
    let text = ok(&["forecast"], dir.path());
    assert_eq!(text.matches("Leading death causes").count(), 4);
    let csv = fs::read_to_string(dir.path().join("forecast.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("cell,year,rank,cause,mean,q05,q95"));
    // 4 cells x 2 years x 3 causes
    assert_eq!(csv.lines().count(), 1 + 24);
    let rates = fs::read_to_string(dir.path().join("death_rates.csv")).unwrap();
    assert_eq!(rates.lines().count(), 1 + 8);
    for line in rates.lines().skip(1) {
        let v: Vec<f64> = line.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        assert!(0.0 < v[1] && v[1] <= v[0] && v[0] <= v[2] && v[2] < 1.0, "{line}");
    }
}

#[test]
fn forecast_without_samples_exits_4() {
    let dir = TempDir::new().unwrap();
    let err = fails(&["forecast"], dir.path(), 4);
    assert!(err.contains("estimate"), "{err}");
}

#[test]
fn forecast_with_no_years_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |v| v["forecast"]["years"] = serde_json::json!([]));
    assert_eq!(run_with(&cfg, &["forecast"]).status.code(), Some(2));
}

#[test]
fn burn_in_not_below_steps_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |v| v["sampler"]["burn_in"] = 2000.into());
    assert_eq!(run_with(&cfg, &["simulate"]).status.code(), Some(0));
    let o = run_with(&cfg, &["estimate"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn estimate_writes_samples_and_diagnostics() {
    let dir = TempDir::new().unwrap();
    ok(&["simulate"], dir.path());
    ok(&["estimate"], dir.path());
    let csv = fs::read_to_string(dir.path().join("samples/chain_1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 1500);
    let d: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(d["chains"], 2);
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.estimate.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([7, 8]));
    assert_eq!(m["inputs"][0]["file"], "dataset.csv");
    let outs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["file"].as_str().unwrap())
        .collect();
    assert!(outs.contains(&"samples/chain_0.json"));
    let stdout = ok(&["diagnose"], dir.path());
    assert!(stdout.starts_with("2 chains"));
}

#[test]
fn simulate_zero_probability_gives_no_deaths() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |_| {});
    let mut p: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("params.json")).unwrap()).unwrap();
    for dp in p["death_prob"].as_array_mut().unwrap() {
        dp["alpha"] = (-800.0).into();
        dp["beta"] = 0.0.into();
    }
    fs::write(dir.path().join("params.json"), p.to_string()).unwrap();
    assert!(run_with(&cfg, &["simulate"]).status.success());
    let csv = fs::read_to_string(dir.path().join("out/dataset.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(",50000,0,0,0"), "{line}");
    }
}

/// One policy with one unit of exposure: the loss is mixed Poisson with mean
/// `q` and variance `sum_k rho_k + sigma2_k rho_k^2`, `rho_k = q w_k`.
#[test]
fn single_policy_loss_matches_mixed_poisson_moments() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |v| {
        v["loss"]["params"] = "params.json".into();
        v["loss"]["n_max"] = 40.into();
        v["model"]["base_year"] = 1987.into();
        v["loss"]["levels"] = serde_json::json!([0.5]);
    });
    fs::write(
        dir.path().join("portfolio.csv"),
        "cell,exposure_units,count\na2.m,1,1\n",
    )
    .unwrap();
    let o = run_with(&cfg, &["loss"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let t: f64 = 2011.0 - 1987.0 + 1.0;
    assert_eq!(r["model_time"], t);
    let trend = (t / 150.0).atan() * 150.0;
    // a2.m: alpha -3.4, beta -0.02; u = [0, 1.4, 0.5], v = [0, -0.015, 0]
    let q = 0.5 * (-3.4 - 0.02 * trend).exp();
    let z = [0.0, 1.4 - 0.015 * trend, 0.5].map(f64::exp);
    let w = z.map(|x| x / z.iter().sum::<f64>());
    let var = q + 0.02 * (q * w[1]).powi(2) + 0.05 * (q * w[2]).powi(2);
    let mean = r["mean"].as_f64().unwrap();
    assert!((mean - q).abs() < 1e-12, "{mean} vs {q}");
    let got = r["variance"].as_f64().unwrap();
    assert!((got - var).abs() < 1e-12, "{got} vs {var}");
    assert_eq!(r["measures"][0]["value_at_risk"], 0);
    let pmf = fs::read_to_string(dir.path().join("out/loss_pmf.csv")).unwrap();
    assert_eq!(pmf.lines().count(), 1 + 41);
}

#[test]
fn loss_level_outside_unit_interval_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |v| {
        v["loss"]["params"] = "params.json".into();
        v["loss"]["levels"] = serde_json::json!([1.5]);
    });
    assert_eq!(run_with(&cfg, &["loss"]).status.code(), Some(2));
}

#[test]
fn loss_truncation_exits_5() {
    let dir = TempDir::new().unwrap();
    let cfg = custom_config(dir.path(), |v| {
        v["loss"]["params"] = "params.json".into();
        v["loss"]["n_max"] = 2.into();
    });
    let o = run_with(&cfg, &["loss"]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_max"));
}

#[test]
fn zero_threads_rejected() {
    let dir = TempDir::new().unwrap();
    fails(&["--threads", "0", "simulate"], dir.path(), 2);
}
