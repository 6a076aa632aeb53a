//! Scenario files: TOML with `[model]`, `[initial]`, `[numerics]`, `[grid]`
//! and, for estimates, `[physical]` sections. Unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use oscar_core::fock::{self, PositionGrid};
use oscar_core::model::{self, ModelParams, PhysicalParams, GAMMA_ELECTRON};
use oscar_core::{classical, lindblad, schrodinger, C64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Scenario files shipped with the binary, addressable by name.
pub const BUILTIN: &[(&str, &str)] = &[
    ("fig2", include_str!("../scenarios/fig2.toml")),
    ("fig3-quantum", include_str!("../scenarios/fig3-quantum.toml")),
    ("fig3-classical", include_str!("../scenarios/fig3-classical.toml")),
    ("fig4", include_str!("../scenarios/fig4.toml")),
    ("fig5", include_str!("../scenarios/fig5.toml")),
    ("estimate-eq13", include_str!("../scenarios/estimate-eq13.toml")),
    (
        "estimate-partial-reversal",
        include_str!("../scenarios/estimate-partial-reversal.toml"),
    ),
];

/// Keys accepted in each section; `""` is the top level. Used to resolve
/// bare `--set key=value` overrides and must mirror the structs below.
const KEYS: &[(&str, &[&str])] = &[
    ("", &["name", "engine"]),
    ("model", &["eta", "epsilon", "q_inv", "d_diff"]),
    (
        "initial",
        &["z0", "p0", "spin_theta", "spin_phi", "moment_angle"],
    ),
    (
        "numerics",
        &[
            "n_basis",
            "tau_end",
            "sample_interval",
            "method",
            "rtol",
            "atol",
            "step",
            "snapshot_times",
            "spectrum",
            "positivity_every",
            "leakage_tolerance",
        ],
    ),
    ("grid", &["z_min", "z_max", "points"]),
    (
        "physical",
        &[
            "k_c",
            "omega_c",
            "b1",
            "grad_bz",
            "z_m",
            "temperature",
            "q_factor",
            "bandwidth",
            "gamma",
            "regime",
        ],
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Schrodinger,
    Master,
    Classical,
    Estimate,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Schrodinger => "schrodinger",
            Engine::Master => "master",
            Engine::Classical => "classical",
            Engine::Estimate => "estimate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spectral,
    Ode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Use the amplitude and rf field as given.
    Given,
    /// Thermal-minimum amplitude with `ε = 2ηz_m`.
    PartialReversal,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub engine: Option<Engine>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub grid: GridSection,
    pub physical: Option<PhysicalSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub eta: f64,
    pub epsilon: f64,
    pub q_inv: f64,
    pub d_diff: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            eta: 0.3,
            epsilon: 10.0,
            q_inv: 0.0,
            d_diff: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub z0: f64,
    pub p0: f64,
    pub spin_theta: f64,
    pub spin_phi: f64,
    /// Angle between the magnetic moment and `B_eff(z0)`; replaces the
    /// Bloch angles when set.
    pub moment_angle: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    pub n_basis: Option<usize>,
    pub tau_end: f64,
    pub sample_interval: Option<f64>,
    pub method: Method,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub step: Option<f64>,
    pub snapshot_times: Vec<f64>,
    pub spectrum: bool,
    pub positivity_every: Option<usize>,
    pub leakage_tolerance: Option<f64>,
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            n_basis: None,
            tau_end: 100.0,
            sample_interval: None,
            method: Method::Spectral,
            rtol: None,
            atol: None,
            step: None,
            snapshot_times: Vec::new(),
            spectrum: true,
            positivity_every: None,
            leakage_tolerance: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub z_min: Option<f64>,
    pub z_max: Option<f64>,
    pub points: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalSection {
    pub k_c: f64,
    pub omega_c: f64,
    pub b1: f64,
    pub grad_bz: f64,
    pub z_m: f64,
    pub temperature: f64,
    pub q_factor: f64,
    pub bandwidth: f64,
    pub gamma: f64,
    pub regime: Regime,
}

impl Default for PhysicalSection {
    fn default() -> Self {
        Self {
            k_c: 0.014,
            omega_c: 2.0 * PI * 21.4e3,
            b1: 0.3e-3,
            grad_bz: 1.4e5,
            z_m: 28e-9,
            temperature: 3.0,
            q_factor: 1e4,
            bandwidth: 1.0,
            gamma: GAMMA_ELECTRON,
            regime: Regime::Given,
        }
    }
}

/// Everything a run depends on, with engine defaults filled in. Its JSON
/// form is hashed into every output header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub engine: Engine,
    pub model: ModelParams,
    pub initial: Initial,
    pub numerics: Numerics,
    pub grid: GridSpec,
    pub physical: Option<Physical>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Initial {
    pub z0: f64,
    pub p0: f64,
    pub spin_theta: f64,
    pub spin_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Numerics {
    pub n_basis: usize,
    pub tau_end: f64,
    pub sample_interval: f64,
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Master-equation step; `None` for the adaptive engines.
    pub step: Option<f64>,
    pub snapshot_times: Vec<f64>,
    pub spectrum: bool,
    pub positivity_every: usize,
    pub leakage_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn grid(&self) -> PositionGrid {
        PositionGrid::new(self.z_min, self.z_max, self.points).expect("validated at resolve")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Physical {
    pub params: PhysicalParams,
    pub regime: Regime,
}

impl Scenario {
    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("scenario serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

/// Reads `source`, which is a path or the name of a bundled scenario.
pub fn load_source(source: &str) -> Result<toml::Table, CliError> {
    let text = if Path::new(source).exists() {
        std::fs::read_to_string(source)
            .map_err(|e| CliError::Config(format!("cannot read {source}: {e}")))?
    } else if let Some((_, text)) = BUILTIN.iter().find(|(name, _)| *name == source) {
        text.to_string()
    } else {
        return Err(CliError::Config(format!(
            "no such config file or bundled scenario: {source}"
        )));
    };
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Config(format!("{source}: {e}")))
}

/// Applies one `key=value` override. `key` is `section.field`, a top-level
/// field, or a field name that occurs in exactly one section.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let (section, field) = resolve_key(key)?;
    let value = parse_value(raw.trim());
    let target = if section.is_empty() {
        table
    } else {
        table
            .entry(section)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{section}` is not a section")))?
    };
    target.insert(field.to_string(), value);
    Ok(())
}

fn resolve_key(key: &str) -> Result<(&'static str, &'static str), CliError> {
    let unknown = || CliError::Config(format!("unknown config key `{key}`"));
    if let Some((section, field)) = key.split_once('.') {
        let (s, fields) = KEYS
            .iter()
            .find(|(s, _)| !s.is_empty() && *s == section)
            .ok_or_else(unknown)?;
        let f = fields.iter().find(|f| **f == field).ok_or_else(unknown)?;
        return Ok((s, f));
    }
    let hits: Vec<(&'static str, &'static str)> = KEYS
        .iter()
        .filter_map(|(s, fields)| fields.iter().find(|f| **f == key).map(|f| (*s, *f)))
        .collect();
    match hits.as_slice() {
        [one] => Ok(*one),
        [] => Err(unknown()),
        _ => Err(CliError::Config(format!(
            "config key `{key}` is ambiguous; qualify it with its section"
        ))),
    }
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Parses a table into a scenario file, naming any unknown key.
pub fn parse(table: toml::Table) -> Result<ScenarioFile, CliError> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))
}

/// Loads a source, applies overrides and resolves defaults. `engine`
/// comes from the subcommand when it has one.
pub fn load(
    source: Option<&str>,
    overrides: &[String],
    engine: Option<Engine>,
) -> Result<Scenario, CliError> {
    let mut table = match source {
        Some(s) => load_source(s)?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let file = parse(table)?;
    let fallback = source
        .map(|s| {
            Path::new(s)
                .file_stem()
                .map_or(s.to_string(), |f| f.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "scenario".into());
    resolve(file, engine, fallback)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

pub fn resolve(
    file: ScenarioFile,
    engine: Option<Engine>,
    fallback_name: String,
) -> Result<Scenario, CliError> {
    let engine = match (engine, file.engine) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Config(format!(
                "scenario is for the {} engine, not {}",
                b.name(),
                a.name()
            )))
        }
        (Some(e), _) | (None, Some(e)) => e,
        (None, None) => return Err(CliError::Config("scenario does not name an engine".into())),
    };
    let m = &file.model;
    let model = ModelParams::new(m.eta, m.epsilon, m.q_inv, m.d_diff)?;
    if engine != Engine::Master && !model.is_unitary() && engine != Engine::Estimate {
        return Err(CliError::Config(format!(
            "the {} engine has no bath; set q_inv = d_diff = 0 or use the master engine",
            engine.name()
        )));
    }

    let i = &file.initial;
    for (name, v) in [("z0", i.z0), ("p0", i.p0), ("spin_theta", i.spin_theta), ("spin_phi", i.spin_phi)] {
        check(v.is_finite(), || format!("initial.{name} must be finite"))?;
    }
    let (spin_theta, spin_phi) = match i.moment_angle {
        Some(theta) => {
            let dir = model::spin_direction_for_moment_angle(&model, i.z0, theta)?;
            schrodinger::bloch_angles(dir)
        }
        None => (i.spin_theta, i.spin_phi),
    };
    let initial = Initial {
        z0: i.z0,
        p0: i.p0,
        spin_theta,
        spin_phi,
    };

    let n = &file.numerics;
    check(n.tau_end.is_finite() && n.tau_end > 0.0, || {
        format!("numerics.tau_end must be positive, got {}", n.tau_end)
    })?;
    let alpha0 = C64::new(i.z0, i.p0) / 2f64.sqrt();
    let n_basis = n.n_basis.unwrap_or_else(|| fock::recommended_basis_size(alpha0));
    check(n_basis >= 2, || format!("numerics.n_basis must be at least 2, got {n_basis}"))?;
    let sample_interval = n.sample_interval.unwrap_or(match engine {
        Engine::Master => lindblad::MasterOptions::default().sample_interval,
        _ => schrodinger::DEFAULT_SAMPLE_INTERVAL,
    });
    check(sample_interval.is_finite() && sample_interval > 0.0, || {
        format!("numerics.sample_interval must be positive, got {sample_interval}")
    })?;
    let tolerances = match engine {
        Engine::Classical => classical::DEFAULT_TOLERANCES,
        _ => schrodinger::DEFAULT_TOLERANCES,
    };
    let (rtol, atol) = (n.rtol.unwrap_or(tolerances.rtol), n.atol.unwrap_or(tolerances.atol));
    oscar_core::ode::Tolerances::new(rtol, atol)?;
    let step = match engine {
        Engine::Master => {
            let h = n.step.unwrap_or_else(|| lindblad::default_step(&model, n_basis));
            check(h.is_finite() && h > 0.0, || format!("numerics.step must be positive, got {h}"))?;
            Some(h)
        }
        _ => None,
    };
    let mut snapshot_times = n.snapshot_times.clone();
    for &t in &snapshot_times {
        check(t.is_finite() && (0.0..=n.tau_end).contains(&t), || {
            format!("snapshot time {t} lies outside [0, {}]", n.tau_end)
        })?;
    }
    snapshot_times.sort_by(f64::total_cmp);
    snapshot_times.dedup();
    let master_defaults = lindblad::MasterOptions::default();
    let numerics = Numerics {
        n_basis,
        tau_end: n.tau_end,
        sample_interval,
        method: n.method,
        rtol,
        atol,
        step,
        snapshot_times,
        spectrum: n.spectrum,
        positivity_every: n.positivity_every.unwrap_or(master_defaults.positivity_every),
        leakage_tolerance: n.leakage_tolerance.unwrap_or(match engine {
            Engine::Master => master_defaults.leakage_tolerance,
            _ => schrodinger::DEFAULT_TOP_LEAKAGE_TOLERANCE,
        }),
    };

    let auto = PositionGrid::for_amplitude(i.z0.hypot(i.p0))?;
    let g = &file.grid;
    let grid = GridSpec {
        z_min: g.z_min.unwrap_or(auto.z_min()),
        z_max: g.z_max.unwrap_or(auto.z_max()),
        // the master engine decomposes an M×M plane at every sample
        points: g.points.unwrap_or(if engine == Engine::Master { 256 } else { auto.len() }),
    };
    PositionGrid::new(grid.z_min, grid.z_max, grid.points)?;

    let physical = match file.physical {
        Some(p) => {
            let params = PhysicalParams {
                k_c: p.k_c,
                omega_c: p.omega_c,
                b1: p.b1,
                grad_bz: p.grad_bz,
                z_m: p.z_m,
                temperature: p.temperature,
                q_factor: p.q_factor,
                bandwidth: p.bandwidth,
                gamma: p.gamma,
            };
            params.validate()?;
            Some(Physical {
                params,
                regime: p.regime,
            })
        }
        None => None,
    };

    Ok(Scenario {
        name: file.name.unwrap_or(fallback_name),
        engine,
        model,
        initial,
        numerics,
        grid,
        physical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> toml::Table {
        text.parse().unwrap()
    }

    #[test]
    fn every_listed_key_is_accepted() {
        for (section, fields) in KEYS {
            for field in *fields {
                let key = if section.is_empty() {
                    field.to_string()
                } else {
                    format!("{section}.{field}")
                };
                let mut t = toml::Table::new();
                let value = match *field {
                    "engine" => "master",
                    "method" => "ode",
                    "regime" => "partial-reversal",
                    "name" => "x",
                    "snapshot_times" => "[1.0]",
                    "spectrum" => "false",
                    "n_basis" | "points" | "positivity_every" => "64",
                    _ => "0.5",
                };
                apply_override(&mut t, &format!("{key}={value}")).unwrap();
                parse(t).unwrap_or_else(|e| panic!("{key}: {e}"));
            }
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let mut t = toml::Table::new();
        let err = apply_override(&mut t, "etaa=0.3").unwrap_err();
        assert!(err.to_string().contains("etaa"), "{err}");
        let err = parse(table("[model]\netaa = 0.3\n")).unwrap_err();
        assert!(err.to_string().contains("etaa"), "{err}");
        let err = parse(table("[modle]\neta = 0.3\n")).unwrap_err();
        assert!(err.to_string().contains("modle"), "{err}");
    }

    #[test]
    fn bare_and_qualified_overrides_agree() {
        let mut a = toml::Table::new();
        let mut b = toml::Table::new();
        apply_override(&mut a, "eta=0.25").unwrap();
        apply_override(&mut b, "model.eta=0.25").unwrap();
        assert_eq!(a, b);
        apply_override(&mut a, "snapshot_times=[1.0, 2.5]").unwrap();
        let f = parse(a).unwrap();
        assert_eq!(f.model.eta, 0.25);
        assert_eq!(f.numerics.snapshot_times, vec![1.0, 2.5]);
    }

    #[test]
    fn engine_mismatch_is_a_config_error() {
        let f = parse(table("engine = \"classical\"\n")).unwrap();
        assert!(matches!(
            resolve(f, Some(Engine::Master), "x".into()),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn bundled_scenarios_resolve() {
        for (name, _) in BUILTIN {
            let s = load(Some(name), &[], None).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, *name);
        }
    }

    #[test]
    fn hash_tracks_every_parameter() {
        let base = load(Some("fig2"), &[], None).unwrap();
        assert_eq!(base.hash(), load(Some("fig2"), &[], None).unwrap().hash());
        let changed = load(Some("fig2"), &["numerics.rtol=1e-11".into()], None).unwrap();
        assert_ne!(base.hash(), changed.hash());
    }

    #[test]
    fn moment_angle_sets_spin_direction() {
        let s = load(None, &["engine=classical".into(), "moment_angle=0.0".into(), "z0=13".into()], None)
            .unwrap();
        let m = ModelParams::unitary(0.3, 10.0).unwrap();
        let dir = [
            0.5 * s.initial.spin_theta.sin() * s.initial.spin_phi.cos(),
            0.5 * s.initial.spin_theta.sin() * s.initial.spin_phi.sin(),
            0.5 * s.initial.spin_theta.cos(),
        ];
        assert!(model::moment_field_angle(&m, 13.0, dir).unwrap() < 1e-12);
    }
}
