use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn oscar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A short unitary run small enough for a test.
const SMALL_SCHRODINGER: &str = r#"
name = "small"
engine = "schrodinger"

[model]
eta = 0.3
epsilon = 10.0

[initial]
z0 = 3.0
spin_theta = 0.4

[numerics]
n_basis = 40
tau_end = 20.0
snapshot_times = [5.0, 10.0]

[grid]
z_min = -8.0
z_max = 8.0
points = 161
"#;

const SMALL_MASTER: &str = r#"
name = "small-master"
engine = "master"

[model]
eta = 0.3
epsilon = 10.0
q_inv = 0.01
d_diff = 5.0

[initial]
z0 = -3.0

[numerics]
n_basis = 36
tau_end = 4.0
sample_interval = 0.5
snapshot_times = [2.0, 4.0]

[grid]
z_min = -7.0
z_max = 7.0
points = 29
"#;

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Header hash, column names and numeric rows.
fn read(path: &Path) -> (String, Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#') || l.starts_with("# scenario_hash="));
    let hash = lines.next().unwrap().trim_start_matches("# scenario_hash=").to_string();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    (hash, header, rows)
}

#[test]
fn unknown_keys_exit_2_and_are_named() {
    let tmp = TempDir::new().unwrap();
    let out = oscar(&["evolve-schrodinger", "--config", "fig2", "--set", "etaa=0.3", "--out", path_str(tmp.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("etaa"), "{}", stderr(&out));

    let cfg = write_config(&tmp, "bad.toml", "engine = \"classical\"\n[model]\nepsilonn = 3.0\n");
    let out = oscar(&["evolve-classical", "--config", path_str(&cfg), "--out", path_str(tmp.path())]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("epsilonn"), "{}", stderr(&out));
}

#[test]
fn engine_mismatch_and_bad_values_exit_2() {
    let tmp = TempDir::new().unwrap();
    let o = path_str(tmp.path());
    assert_eq!(code(&oscar(&["evolve-master", "--config", "fig2", "--out", o])), 2);
    assert_eq!(code(&oscar(&["evolve-classical", "--set", "eta=-1", "--out", o])), 2);
    assert_eq!(code(&oscar(&["evolve-classical", "--set", "tau_end=0", "--out", o])), 2);
    assert_eq!(code(&oscar(&["evolve-schrodinger", "--config", "no-such-scenario", "--out", o])), 2);
}

#[test]
fn small_basis_exits_3() {
    let tmp = TempDir::new().unwrap();
    let out = oscar(&[
        "evolve-schrodinger", "--config", "fig2", "--set", "n_basis=60", "--out", path_str(tmp.path()),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("truncation"));
}

#[test]
fn positivity_violation_exits_4() {
    // damping without diffusion leaves the high-temperature regime
    let tmp = TempDir::new().unwrap();
    let out = oscar(&[
        "evolve-master", "--set", "q_inv=0.2", "--set", "d_diff=0", "--set", "z0=-2",
        "--set", "n_basis=32", "--set", "tau_end=3", "--set", "positivity_every=1",
        "--out", path_str(tmp.path()),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("positivity"));
}

#[test]
fn schrodinger_outputs_are_complete_and_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL_SCHRODINGER);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = oscar(&["evolve-schrodinger", "--config", path_str(&cfg), "--out", path_str(dir), "--seedless"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    for name in ["trajectory.csv", "snapshot_00.csv", "snapshot_01.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }

    let (hash, header, rows) = read(&a.join("trajectory.csv"));
    assert_eq!(header, ["tau", "z_mean", "p_mean", "sx", "sy", "sz", "norm", "energy"]);
    assert_eq!(rows.len(), 51);
    assert!((rows[0][1] - 3.0).abs() < 1e-8);
    for r in &rows {
        assert!((r[6] - 1.0).abs() < 1e-10, "norm {}", r[6]);
        assert!((r[7] - rows[0][7]).abs() < 1e-8, "energy drift");
    }
    // 17 significant digits
    let text = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    let field = text.lines().nth(2).unwrap().split(',').nth(1).unwrap();
    assert_eq!(field.split('e').next().unwrap().replace(['.', '-'], "").len(), 17, "{field}");

    let (h2, header, rows) = read(&a.join("snapshot_01.csv"));
    assert_eq!(h2, hash);
    assert_eq!(header, ["z", "density_alpha", "density_beta"]);
    let dz = 16.0 / 160.0;
    let mass: f64 = rows.iter().map(|r| r[1] + r[2]).sum::<f64>() * dz;
    assert!((mass - 1.0).abs() < 1e-6, "{mass}");

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["scenario_hash"], hash.as_str());
    assert_eq!(meta["scenario"]["numerics"]["n_basis"], 40);
    assert_eq!(meta["tool"]["version"], env!("CARGO_PKG_VERSION"));
    assert!(meta["constants"]["hbar"].as_f64().unwrap() > 0.0);
    assert!(meta["runtime_seconds"].as_f64().is_some());
}

#[test]
fn ode_and_spectral_methods_agree() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL_SCHRODINGER);
    let (a, b) = (tmp.path().join("spectral"), tmp.path().join("ode"));
    assert_eq!(code(&oscar(&["evolve-schrodinger", "--config", path_str(&cfg), "--out", path_str(&a)])), 0);
    let out = oscar(&[
        "evolve-schrodinger", "--config", path_str(&cfg), "--set", "method=ode", "--out", path_str(&b),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (ha, _, ra) = read(&a.join("trajectory.csv"));
    let (hb, _, rb) = read(&b.join("trajectory.csv"));
    assert_ne!(ha, hb);
    for (x, y) in ra.iter().zip(&rb) {
        for k in 0..8 {
            assert!((x[k] - y[k]).abs() < 1e-7, "column {k} at tau {}", x[0]);
        }
    }
}

#[test]
fn master_outputs_metrics_and_row_major_grids() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "m.toml", SMALL_MASTER);
    let dir = tmp.path().join("m");
    let out = oscar(&["evolve-master", "--config", path_str(&cfg), "--out", path_str(&dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let (hash, header, rows) = read(&dir.join("density_metrics.csv"));
    assert_eq!(
        header,
        ["tau", "trace", "purity", "z_mean", "z2_mean", "coherence_ratio", "diag_mass_1", "diag_mass_2"]
    );
    assert_eq!(rows.len(), 9);
    for r in &rows {
        assert!((r[1] - 1.0).abs() < 1e-10);
        assert!(r[2] <= 1.0 + 1e-10);
    }
    assert!((rows[0][3] + 3.0).abs() < 1e-8);

    for name in ["grid_00.csv", "grid_01.csv"] {
        let (h, header, rows) = read(&dir.join(name));
        assert_eq!(h, hash);
        assert_eq!(header, ["z", "zprime", "ln_abs_sum_diag", "ln_abs_sum_offdiag"]);
        assert_eq!(rows.len(), 29 * 29);
        // z is the slow index
        assert_eq!(rows[0][0], -7.0);
        assert_eq!(rows[1][0], -7.0);
        assert_eq!(rows[1][1], -6.5);
        assert_eq!(rows[29][0], -6.5);
        assert!(rows.iter().all(|r| r[2].is_finite() && r[3].is_finite()));
    }
}

#[test]
fn classical_keeps_spin_length() {
    let tmp = TempDir::new().unwrap();
    let out = oscar(&[
        "evolve-classical", "--set", "z0=13", "--set", "tau_end=60", "--out", path_str(tmp.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (_, _, rows) = read(&tmp.path().join("trajectory.csv"));
    for r in &rows {
        assert!((r[6] - 1.0).abs() < 1e-10);
        assert!((r[7] - rows[0][7]).abs() < 1e-8);
    }
}

#[test]
fn estimates_match_bundled_values() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("e");
    let out = oscar(&["estimate", "--config", "estimate-partial-reversal", "--out", path_str(&dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.join("estimates.csv")).unwrap();
    let get = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key},")))
            .unwrap_or_else(|| panic!("{key} missing"))
            .parse()
            .unwrap()
    };
    let rel = |v: f64, want: f64| (v / want - 1.0).abs();
    assert!(rel(get("eta"), 2.9e-3) < 0.02);
    assert!(rel(get("z_m_given"), 8.8e5) < 0.02);
    assert!(rel(get("epsilon_given"), 390.0) < 0.02);
    assert!(rel(get("shift_given"), 2.3e-9) < 0.03);
    assert!(rel(get("min_amplitude"), 1.72e3) < 0.03);
    assert!(rel(get("shift_partial"), 7e-7) < 0.03);
    assert!(rel(get("amplification"), 300.0) < 0.10);
    assert!(rel(get("noise_natural_bandwidth"), 9.7e-8) < 0.03);
}

#[test]
fn analyze_recovers_the_trajectory_spectrum() {
    let tmp = TempDir::new().unwrap();
    let run = tmp.path().join("run");
    let out = oscar(&[
        "evolve-classical", "--set", "z0=13", "--set", "tau_end=2000", "--out", path_str(&run),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let fresh = tmp.path().join("fresh");
    let out = oscar(&["analyze", "--input", path_str(&run), "--out", path_str(&fresh)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(run.join("spectrum.csv")).unwrap(),
        fs::read(fresh.join("spectrum.csv")).unwrap()
    );
    let a: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fresh.join("analysis.json")).unwrap()).unwrap();
    let (hash, _, _) = read(&run.join("trajectory.csv"));
    assert_eq!(a["scenario_hash"], hash.as_str());
    let shift = a["spectrum"]["peaks"][0]["shift"].as_f64().unwrap();
    assert!(shift < 0.0 && shift > -1e-2, "{shift}");
}

#[test]
fn sweep_isolates_runs_and_matches_single_runs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL_SCHRODINGER);
    let sweep = tmp.path().join("sweep");
    let out = oscar(&[
        "sweep", "--config", path_str(&cfg), "--config", "estimate-eq13", "--vary", "model.eta=0.2,0.3",
        "--set", "spectrum=false", "--jobs", "3", "--out", path_str(&sweep),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for sub in ["small_model.eta=0.2", "small_model.eta=0.3", "estimate-eq13_model.eta=0.2"] {
        assert!(sweep.join(sub).join("metadata.json").is_file(), "{sub}");
    }
    let single = tmp.path().join("single");
    let out = oscar(&[
        "evolve-schrodinger", "--config", path_str(&cfg), "--set", "spectrum=false", "--set", "model.eta=0.2",
        "--out", path_str(&single),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        fs::read(single.join("trajectory.csv")).unwrap(),
        fs::read(sweep.join("small_model.eta=0.2").join("trajectory.csv")).unwrap()
    );
}

#[test]
fn sweep_reports_the_worst_failure() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "small.toml", SMALL_SCHRODINGER);
    let out = oscar(&[
        "sweep", "--config", path_str(&cfg), "--vary", "n_basis=40,12", "--out", path_str(tmp.path()),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(tmp.path().join("small_n_basis=40").join("trajectory.csv").is_file());
}
