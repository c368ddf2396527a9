//! End-to-end pipeline tests driving the compiled binary.

use std::path::Path;
use std::process::{Command, Output};

fn glsmix(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glsmix"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_is_deterministic_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    write(
        &cfg,
        "model.name = sm1\ncorr.range = 50\ncorr.smoothness = 0.5\nstudy.m = 20\nstudy.n = 50\nseed = 7\n",
    );
    let out1 = dir.path().join("a");
    let run = glsmix(
        &["simulate", "--config", "run.cfg", "--out", "a"],
        dir.path(),
    );
    assert_success(&run);
    let data = std::fs::read_to_string(out1.join("data.csv")).unwrap();
    let lines: Vec<&str> = data.lines().collect();
    assert_eq!(lines.len(), 51); // header + 50 rows
    assert_eq!(lines[0].split(',').count(), 20);
    let sites = std::fs::read_to_string(out1.join("sites.csv")).unwrap();
    assert_eq!(sites.lines().count(), 21);

    // Same seed, second directory: byte-identical outputs.
    let run = glsmix(
        &["simulate", "--config", "run.cfg", "--out", "b"],
        dir.path(),
    );
    assert_success(&run);
    let data2 = std::fs::read_to_string(dir.path().join("b/data.csv")).unwrap();
    assert_eq!(data, data2);

    // A different worker count must not change the result.
    let run = glsmix(
        &["simulate", "--config", "run.cfg", "--out", "c", "--workers", "1"],
        dir.path(),
    );
    assert_success(&run);
    let data3 = std::fs::read_to_string(dir.path().join("c/data.csv")).unwrap();
    assert_eq!(data, data3);
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown model name: usage error (2).
    let cfg = dir.path().join("bad.cfg");
    write(
        &cfg,
        "model.name = nosuch\ncorr.range = 50\ncorr.smoothness = 0.5\nstudy.m = 10\nstudy.n = 5\n",
    );
    let run = glsmix(&["simulate", "--config", "bad.cfg"], dir.path());
    assert_eq!(run.status.code(), Some(2));

    // Missing --config: usage error (2).
    let run = glsmix(&["simulate"], dir.path());
    assert_eq!(run.status.code(), Some(2));

    // Missing site file: data error (3).
    let cfg = dir.path().join("fit.cfg");
    write(
        &cfg,
        "model.name = sm1\nsites.file = missing.csv\ndata.file = missing2.csv\n",
    );
    let run = glsmix(&["fit", "--config", "fit.cfg"], dir.path());
    assert_eq!(run.status.code(), Some(3));
}

#[test]
fn simulate_then_fit_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("run.cfg"),
        "model.name = lm1\nmodel.lambda = 1.0\ncorr.range = 50\ncorr.smoothness = 0.5\nstudy.m = 25\nstudy.n = 150\nseed = 11\nfit.mc_draws = 20000\n",
    );
    let run = glsmix(&["simulate", "--config", "run.cfg"], dir.path());
    assert_success(&run);
    write(
        &dir.path().join("fit.cfg"),
        "model.name = lm1\nmodel.lambda = 0.5\nsites.file = sites.csv\ndata.file = data.csv\nfit.mc_draws = 20000\nseed = 11\n",
    );
    let run = glsmix(&["fit", "--config", "fit.cfg"], dir.path());
    assert_success(&run);
    let fit = std::fs::read_to_string(dir.path().join("fit.txt")).unwrap();
    let get = |key: &str| -> f64 {
        fit.lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("{key} in:\n{fit}"))
            .split('=')
            .nth(1)
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    let range = get("corr.range");
    let lambda = get("model.lambda");
    assert!((20.0..=100.0).contains(&range), "range {range}");
    assert!((0.5..=2.0).contains(&lambda), "lambda {lambda}");
    assert_eq!(get("fit.skipped_rows"), 0.0);
}

#[test]
fn condsim_writes_draws_and_medians() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("run.cfg"),
        "model.name = lm1\nmodel.lambda = 1.0\ncorr.range = 50\ncorr.smoothness = 0.5\nstudy.m = 4\nstudy.n = 3\nseed = 5\n",
    );
    let run = glsmix(&["simulate", "--config", "run.cfg"], dir.path());
    assert_success(&run);
    write(
        &dir.path().join("targets.csv"),
        "x,y\n210.0,10.0\n210.0,150.0\n",
    );
    write(
        &dir.path().join("cs.cfg"),
        "model.name = lm1\nmodel.lambda = 1.0\ncorr.range = 50\ncorr.smoothness = 0.5\nsites.file = sites.csv\ndata.file = data.csv\ncondsim.targets.file = targets.csv\ncondsim.burnin = 500\ncondsim.steps = 2500\ncondsim.thin = 10\nseed = 5\n",
    );
    let run = glsmix(&["condsim", "--config", "cs.cfg"], dir.path());
    assert_success(&run);
    let draws = std::fs::read_to_string(dir.path().join("draws.csv")).unwrap();
    assert_eq!(draws.lines().count(), 201); // header + (2500-500)/10
    assert_eq!(draws.lines().next().unwrap(), "x_1,x_2");
    let med = std::fs::read_to_string(dir.path().join("medians.csv")).unwrap();
    assert_eq!(med.lines().count(), 3);
    assert!(med.starts_with("x,y,median\n"));
}

#[test]
fn chi_on_independent_columns_is_near_threshold_complement() {
    let dir = tempfile::tempdir().unwrap();
    // A negligible range makes the columns effectively independent.
    write(
        &dir.path().join("run.cfg"),
        "model.name = gaussian\ncorr.range = 0.0001\ncorr.smoothness = 0.5\nstudy.m = 12\nstudy.n = 500\nseed = 3\n",
    );
    let run = glsmix(&["simulate", "--config", "run.cfg"], dir.path());
    assert_success(&run);
    write(
        &dir.path().join("chi.cfg"),
        "sites.file = sites.csv\ndata.file = data.csv\nchi.thresholds = 0.5\nchi.bin_width = 300\n",
    );
    let run = glsmix(&["chi", "--config", "chi.cfg"], dir.path());
    assert_success(&run);
    let chi = std::fs::read_to_string(dir.path().join("chi.csv")).unwrap();
    let mut lines = chi.lines();
    assert_eq!(lines.next().unwrap(), "bin_center,p,q1,median,q3");
    // With independent columns chi-hat(0.5) concentrates near 1 - p = 0.5.
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let median: f64 = fields[3].parse().unwrap();
        assert!((median - 0.5).abs() < 0.1, "median {median}");
    }
}

#[test]
fn bootstrap_emits_ordered_intervals() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir.path().join("run.cfg"),
        "model.name = lm1\nmodel.lambda = 1.0\ncorr.range = 50\ncorr.smoothness = 0.5\nstudy.m = 15\nstudy.n = 40\nseed = 9\n",
    );
    let run = glsmix(&["simulate", "--config", "run.cfg"], dir.path());
    assert_success(&run);
    write(
        &dir.path().join("bs.cfg"),
        "model.name = lm1\nmodel.lambda = 1.0\ncorr.range = 50\ncorr.smoothness = 0.5\nsites.file = sites.csv\nbootstrap.n = 40\nbootstrap.b = 50\nbootstrap.mode = fast\nfit.mc_draws = 10000\nseed = 9\n",
    );
    let run = glsmix(&["bootstrap", "--config", "bs.cfg"], dir.path());
    assert_success(&run);
    let text = std::fs::read_to_string(dir.path().join("intervals.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "name,estimate,lower,upper");
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(fields[0], "lambda");
    let (lower, upper): (f64, f64) = (fields[2].parse().unwrap(), fields[3].parse().unwrap());
    assert!(lower < upper && lower > 0.0, "[{lower}, {upper}]");
}

#[test]
fn marginal_fit_writes_parameters() {
    let dir = tempfile::tempdir().unwrap();
    // Unit-exponential sample written as a single column.
    let mut rng_state = 0x9e3779b97f4a7c15u64;
    let mut next = || {
        rng_state = rng_state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (rng_state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut text = String::from("value\n");
    for _ in 0..2000 {
        let u: f64 = next().max(1e-12);
        text.push_str(&format!("{:.16e}\n", -u.ln()));
    }
    write(&dir.path().join("sample.csv"), &text);
    write(&dir.path().join("mf.cfg"), "data.file = sample.csv\n");
    let run = glsmix(&["marginal-fit", "--config", "mf.cfg"], dir.path());
    assert_success(&run);
    let fit = std::fs::read_to_string(dir.path().join("egpd.txt")).unwrap();
    let get = |key: &str| -> f64 {
        fit.lines()
            .find(|l| l.starts_with(key))
            .unwrap()
            .split('=')
            .nth(1)
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    assert!(get("egpd.sigma").is_finite() && get("egpd.sigma") > 0.0);
    assert!(get("egpd.xi").abs() < 0.5, "xi {}", get("egpd.xi"));
    assert_eq!(get("fit.samples"), 2000.0);
}
