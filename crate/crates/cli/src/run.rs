//! Engine dispatch: one function per engine, each writing its data files
//! and returning diagnostics for the metadata file.

use std::path::Path;
use std::time::Instant;

use oscar_core::analysis::{
    detect_peak_split, four_peak_decomposition, fourier_shift, max_relative_increase,
    probability_density, ShiftReport,
};
use oscar_core::classical::{evolve_classical, spin_field_angle, ClassicalOptions, ClassicalState};
use oscar_core::fock::{self, PositionGrid};
use oscar_core::lindblad::{self, evolve_master_observed, initial_density, MasterOptions};
use oscar_core::model::{
    self, check_conditions, dimensionless_from_physical, minimum_amplitude, shift_estimate_classical,
    shift_estimate_oscar, thermal_noise_estimate, Bandwidth, GAMMA_ELECTRON, HBAR, K_B,
};
use oscar_core::ode::Tolerances;
use oscar_core::schrodinger::{
    evolve_ode, initial_state, sample_times, OdeOptions, SpectralPropagator, SpinorState,
};
use oscar_core::OscarError;
use serde_json::{json, Value};

use crate::config::{Engine, Method, Regime, Scenario};
use crate::error::CliError;
use crate::output::{number, OutputDir};

const TRAJECTORY_HEADER: [&str; 8] = ["tau", "z_mean", "p_mean", "sx", "sy", "sz", "norm", "energy"];

/// Runs `scenario` into `out` and writes `metadata.json` last.
pub fn run(scenario: &Scenario, out: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let hash = scenario.hash();
    let mut dir = OutputDir::create(out, &hash)?;
    let diagnostics = match scenario.engine {
        Engine::Schrodinger => schrodinger(scenario, &mut dir)?,
        Engine::Master => master(scenario, &mut dir)?,
        Engine::Classical => classical(scenario, &mut dir)?,
        Engine::Estimate => estimate(scenario, &mut dir)?,
    };
    let mut files = dir.written().to_vec();
    files.push("metadata.json".into());
    let metadata = json!({
        "tool": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "scenario_hash": hash,
        "scenario": scenario,
        "output_dir": out.display().to_string(),
        "seedless": true,
        "constants": { "hbar": HBAR, "k_b": K_B, "gamma_electron": GAMMA_ELECTRON },
        "conditions": check_conditions(
            scenario.model.eta,
            scenario.model.epsilon,
            scenario.initial.z0.hypot(scenario.initial.p0),
        ),
        "diagnostics": diagnostics,
        "files": files,
        "runtime_seconds": started.elapsed().as_secs_f64(),
    });
    dir.json("metadata.json", &metadata)
}

fn tolerances(s: &Scenario) -> Result<Tolerances, CliError> {
    Ok(Tolerances::new(s.numerics.rtol, s.numerics.atol)?)
}

fn initial_spinor(s: &Scenario) -> Result<SpinorState, CliError> {
    let i = &s.initial;
    Ok(initial_state(i.z0, i.p0, i.spin_theta, i.spin_phi, s.numerics.n_basis)?)
}

/// Writes `spectrum.csv` for the ⟨z⟩ series and reports its peaks. A
/// window too short to resolve anything is noted, not fatal.
fn spectrum(s: &Scenario, z: &[f64], dir: &mut OutputDir) -> Result<Value, CliError> {
    if !s.numerics.spectrum {
        return Ok(Value::Null);
    }
    match fourier_shift(z, s.numerics.sample_interval) {
        Ok(report) => {
            write_spectrum(&report, dir)?;
            Ok(shift_summary(&report))
        }
        Err(e @ (OscarError::Unresolved(_) | OscarError::Domain(_))) => {
            Ok(json!({ "error": e.to_string() }))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn write_spectrum(report: &ShiftReport, dir: &mut OutputDir) -> Result<(), CliError> {
    dir.csv(
        "spectrum.csv",
        &[],
        &["omega", "amplitude"],
        report.spectrum.iter().map(|&(w, a)| vec![w, a]),
    )
}

pub fn shift_summary(report: &ShiftReport) -> Value {
    json!({
        "frequency_resolution": report.frequency_resolution,
        "peaks": report.peaks,
    })
}

fn schrodinger(s: &Scenario, dir: &mut OutputDir) -> Result<Value, CliError> {
    let n = &s.numerics;
    let s0 = initial_spinor(s)?;
    let (traj, last) = match n.method {
        Method::Spectral => {
            let prop = SpectralPropagator::new(&s.model, n.n_basis)?;
            let times = sample_times(0.0, n.tau_end, n.sample_interval)?;
            let traj = prop.trajectory(&s0, &times, &n.snapshot_times)?;
            (traj, prop.propagate(&s0, n.tau_end)?)
        }
        Method::Ode => {
            let mut snapshot_times = n.snapshot_times.clone();
            snapshot_times.push(n.tau_end);
            let opts = OdeOptions {
                tolerances: tolerances(s)?,
                sample_interval: n.sample_interval,
                snapshot_times,
                leakage_tolerance: n.leakage_tolerance,
            };
            let mut traj = evolve_ode(&s0, &s.model, n.tau_end, &opts)?;
            let last = traj.snapshots.pop().expect("final snapshot requested");
            (traj, last)
        }
    };
    // the spectral route is exact in the truncated space, so the basis
    // edge is checked on the final state instead of during the run
    let leak = last.top_leakage().max(traj.snapshots.iter().map(|x| x.top_leakage()).fold(0.0, f64::max));
    if leak > n.leakage_tolerance {
        return Err(OscarError::Truncation {
            what: "top-of-basis population",
            value: leak,
            tolerance: n.leakage_tolerance,
        }
        .into());
    }

    dir.csv(
        "trajectory.csv",
        &[],
        &TRAJECTORY_HEADER,
        traj.samples
            .iter()
            .map(|o| vec![o.tau, o.z, o.p, o.sx, o.sy, o.sz, o.norm, o.energy]),
    )?;
    let spectrum = spectrum(s, &traj.series(|o| o.z), dir)?;

    let grid = s.grid.grid();
    let mut snapshots = Vec::new();
    for (k, state) in traj.snapshots.iter().enumerate() {
        let alpha = fock::reconstruct_on_grid(&state.c_alpha, &grid);
        let beta = fock::reconstruct_on_grid(&state.c_beta, &grid);
        let name = format!("snapshot_{k:02}.csv");
        dir.csv(
            &name,
            &[("tau", number(state.tau))],
            &["z", "density_alpha", "density_beta"],
            grid.points()
                .zip(alpha.iter().zip(&beta))
                .map(|(z, (a, b))| vec![z, a.norm_sqr(), b.norm_sqr()]),
        )?;
        let split = detect_peak_split(&probability_density(state, &grid), &grid)?;
        snapshots.push(json!({ "file": name, "tau": state.tau, "peaks": split }));
    }
    Ok(json!({
        "stats": traj.stats,
        "final_top_leakage": leak,
        "spectrum": spectrum,
        "snapshots": snapshots,
    }))
}

fn classical(s: &Scenario, dir: &mut OutputDir) -> Result<Value, CliError> {
    let i = &s.initial;
    let s0 = ClassicalState::new(i.z0, i.p0, i.spin_theta, i.spin_phi);
    let opts = ClassicalOptions {
        tolerances: tolerances(s)?,
        sample_interval: s.numerics.sample_interval,
    };
    let traj = evolve_classical(&s0, &s.model, s.numerics.tau_end, &opts)?;
    let energy = |c: &ClassicalState| {
        let b = s.model.effective_field(c.z);
        0.5 * (c.p * c.p + c.z * c.z) + b[0] * c.sx + b[2] * c.sz
    };
    // `norm` is the spin length relative to ½
    dir.csv(
        "trajectory.csv",
        &[],
        &TRAJECTORY_HEADER,
        traj.samples.iter().map(|x| {
            let c = &x.state;
            vec![x.tau, c.z, c.p, c.sx, c.sy, c.sz, 2.0 * c.spin_magnitude_sqr().sqrt(), energy(c)]
        }),
    )?;
    let spectrum = spectrum(s, &traj.series(|c| c.z), dir)?;
    let angles: Vec<f64> = traj
        .samples
        .iter()
        .filter_map(|x| spin_field_angle(&x.state, &s.model).ok())
        .collect();
    let drift = angles.iter().map(|a| (a - angles[0]).abs()).fold(0.0, f64::max);
    Ok(json!({
        "stats": traj.stats,
        "initial_moment_field_angle": model::moment_field_angle(&s.model, i.z0, s0.spin()).ok(),
        "max_spin_field_angle_drift": drift,
        "spectrum": spectrum,
    }))
}

fn master(s: &Scenario, dir: &mut OutputDir) -> Result<Value, CliError> {
    let n = &s.numerics;
    let rho = initial_density(&initial_spinor(s)?);
    let opts = MasterOptions {
        step: n.step,
        sample_interval: n.sample_interval,
        snapshot_times: n.snapshot_times.clone(),
        positivity_every: n.positivity_every,
        leakage_tolerance: n.leakage_tolerance,
        ..Default::default()
    };
    let grid = s.grid.grid();
    let mut rows = Vec::new();
    let traj = evolve_master_observed(&rho, &s.model, n.tau_end, &opts, |state, sample| {
        let d = four_peak_decomposition(state, &grid).ok();
        let m = &sample.summary;
        rows.push(vec![
            m.tau,
            m.trace,
            m.purity,
            m.z,
            m.z2,
            d.as_ref().map_or(f64::NAN, |d| d.coherence_ratio),
            d.as_ref().map_or(f64::NAN, |d| d.diag_masses[0]),
            d.as_ref().map_or(f64::NAN, |d| d.diag_masses[1]),
        ]);
    })?;
    let ratios: Vec<f64> = rows.iter().map(|r| r[5]).filter(|r| r.is_finite()).collect();
    dir.csv(
        "density_metrics.csv",
        &[],
        &["tau", "trace", "purity", "z_mean", "z2_mean", "coherence_ratio", "diag_mass_1", "diag_mass_2"],
        rows,
    )?;

    let mut snapshots = Vec::new();
    for (k, state) in traj.snapshots.iter().enumerate() {
        let name = format!("grid_{k:02}.csv");
        write_grid(&name, state, &grid, dir)?;
        let d = four_peak_decomposition(state, &grid).ok();
        snapshots.push(json!({ "file": name, "tau": state.tau, "decomposition": d }));
    }
    Ok(json!({
        "step": traj.step,
        "min_eigenvalue": traj.min_eigenvalue,
        "final_trace": traj.samples.last().map(|x| x.summary.trace),
        "coherence_max_relative_increase": (ratios.len() > 1).then(|| max_relative_increase(&ratios)),
        "snapshots": snapshots,
    }))
}

/// Both ln-fields on the grid, row-major in z.
fn write_grid(
    name: &str,
    state: &lindblad::DensityState,
    grid: &PositionGrid,
    dir: &mut OutputDir,
) -> Result<(), CliError> {
    let fields = lindblad::density_fields(state, grid);
    let m = grid.len();
    dir.csv(
        name,
        &[("tau", number(state.tau))],
        &["z", "zprime", "ln_abs_sum_diag", "ln_abs_sum_offdiag"],
        (0..m * m).map(|k| {
            let (i, j) = (k / m, k % m);
            vec![
                grid.point(i),
                grid.point(j),
                fields.ln_abs_sum_diag[(i, j)],
                fields.ln_abs_sum_offdiag[(i, j)],
            ]
        }),
    )
}

fn estimate(s: &Scenario, dir: &mut OutputDir) -> Result<Value, CliError> {
    let mut rows: Vec<(&str, f64)> = Vec::new();
    let (eta, epsilon, z_m) = match &s.physical {
        Some(phys) => {
            let p = &phys.params;
            let dim = dimensionless_from_physical(p)?;
            let (z_min_m, z_min) = minimum_amplitude(p)?;
            let natural = thermal_noise_estimate(p, Bandwidth::Natural)?;
            let given = thermal_noise_estimate(p, Bandwidth::Given)?;
            let eta = dim.model.eta;
            let as_given = shift_estimate_oscar(eta, dim.model.epsilon, dim.z_m)?;
            rows.extend([
                ("length_unit_m", dim.length_unit),
                ("eta", eta),
                ("epsilon_given", dim.model.epsilon),
                ("z_m_given", dim.z_m),
                ("q_inv", dim.model.q_inv),
                ("d_diff", dim.model.d_diff),
                ("shift_given", as_given),
                ("min_amplitude_m", z_min_m),
                ("min_amplitude", z_min),
                ("natural_bandwidth_rad_s", natural.bandwidth),
                ("noise_natural_bandwidth", natural.relative_frequency_noise),
                ("noise_given_bandwidth", given.relative_frequency_noise),
                ("force_rms_natural_n", natural.f_rms),
            ]);
            match phys.regime {
                Regime::Given => (eta, dim.model.epsilon, dim.z_m),
                Regime::PartialReversal => {
                    let eps = 2.0 * eta * z_min;
                    let partial = shift_estimate_oscar(eta, eps, z_min)?;
                    rows.extend([
                        ("epsilon_partial", eps),
                        ("b1_partial_t", eps * p.omega_c / p.gamma),
                        ("shift_partial", partial),
                        ("amplification", partial / as_given),
                    ]);
                    (eta, eps, z_min)
                }
            }
        }
        None => (s.model.eta, s.model.epsilon, s.initial.z0.hypot(s.initial.p0)),
    };
    let shift = shift_estimate_oscar(eta, epsilon, z_m)?;
    let spin = spin_vector(s);
    let theta = model::moment_field_angle(&s.model, s.initial.z0, spin).ok();
    rows.extend([("shift", shift), ("eta_used", eta), ("epsilon_used", epsilon), ("z_m_used", z_m)]);
    if s.physical.is_none() {
        if let Some(t) = theta {
            rows.push(("moment_field_angle", t));
            rows.push(("shift_classical", shift_estimate_classical(eta, epsilon, z_m, t)?));
        }
    }
    let c = check_conditions(eta, epsilon, z_m);
    rows.extend([
        ("adiabatic_ratio", c.adiabatic_ratio()),
        ("full_reversal_ratio", c.full_reversal_ratio()),
    ]);
    dir.records(
        "estimates.csv",
        &[],
        &["quantity", "value"],
        rows.iter().map(|(k, v)| vec![k.to_string(), number(*v)]),
    )?;
    let map: serde_json::Map<String, Value> = rows.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    Ok(Value::Object(map))
}

fn spin_vector(s: &Scenario) -> [f64; 3] {
    let (t, f) = (s.initial.spin_theta, s.initial.spin_phi);
    [0.5 * t.sin() * f.cos(), 0.5 * t.sin() * f.sin(), 0.5 * t.cos()]
}
