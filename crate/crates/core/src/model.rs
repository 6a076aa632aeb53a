//! Model parameters, the spin-cantilever Hamiltonian, unit conversion and
//! the closed-form signal estimates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OscarError, Result};
use crate::fock;

/// Reduced Planck constant, J·s (CODATA 2018, exact).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K (exact).
pub const K_B: f64 = 1.380_649e-23;
/// Magnitude of the electron gyromagnetic ratio, rad/(s·T) (CODATA 2018).
pub const GAMMA_ELECTRON: f64 = 1.760_859_630_23e11;

/// Margin factor used to decide `a ≪ b` as `10·a ≤ b`.
pub const MUCH_LESS_MARGIN: f64 = 10.0;

/// Dimensionless parameters of the spin-cantilever model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Spin-cantilever coupling η.
    pub eta: f64,
    /// Rf field amplitude ε.
    pub epsilon: f64,
    /// Inverse quality factor Q⁻¹.
    pub q_inv: f64,
    /// Diffusion coefficient D = k_B T/(ħ ω_c).
    pub d_diff: f64,
}

impl ModelParams {
    pub fn new(eta: f64, epsilon: f64, q_inv: f64, d_diff: f64) -> Result<Self> {
        let p = Self {
            eta,
            epsilon,
            q_inv,
            d_diff,
        };
        p.validate()?;
        Ok(p)
    }

    /// A closed system (`Q⁻¹ = D = 0`).
    pub fn unitary(eta: f64, epsilon: f64) -> Result<Self> {
        Self::new(eta, epsilon, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta", self.eta),
            ("epsilon", self.epsilon),
            ("q_inv", self.q_inv),
            ("d_diff", self.d_diff),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(OscarError::domain(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_unitary(&self) -> bool {
        self.q_inv == 0.0 && self.d_diff == 0.0
    }

    /// The field `B_eff(z) = (ε, 0, −2ηz)` seen by the spin.
    pub fn effective_field(&self, z: f64) -> [f64; 3] {
        [self.epsilon, 0.0, -2.0 * self.eta * z]
    }
}

/// Dimensional description of the experiment, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Spring constant, N/m.
    pub k_c: f64,
    /// Angular frequency, rad/s.
    pub omega_c: f64,
    /// Rotating field amplitude, T.
    pub b1: f64,
    /// Field gradient |∂B_z/∂z|, T/m.
    pub grad_bz: f64,
    /// Cantilever vibration amplitude, m.
    pub z_m: f64,
    /// Temperature, K.
    pub temperature: f64,
    /// Quality factor.
    pub q_factor: f64,
    /// Measurement bandwidth, rad/s.
    pub bandwidth: f64,
    /// Gyromagnetic ratio, rad/(s·T).
    pub gamma: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_c", self.k_c),
            ("omega_c", self.omega_c),
            ("b1", self.b1),
            ("grad_bz", self.grad_bz),
            ("z_m", self.z_m),
            ("temperature", self.temperature),
            ("q_factor", self.q_factor),
            ("bandwidth", self.bandwidth),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(OscarError::domain(format!(
                    "{name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Zero-point length `Z₀ = (ħω_c/k_c)^{1/2}`, m.
    pub fn length_unit(&self) -> f64 {
        (HBAR * self.omega_c / self.k_c).sqrt()
    }
}

/// Result of [`dimensionless_from_physical`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensionless {
    pub model: ModelParams,
    /// Cantilever amplitude `Z_m/Z₀`.
    pub z_m: f64,
    /// Length unit Z₀, m.
    pub length_unit: f64,
    /// Momentum unit P₀ = ħ/Z₀, kg·m/s.
    pub momentum_unit: f64,
}

pub fn dimensionless_from_physical(phys: &PhysicalParams) -> Result<Dimensionless> {
    phys.validate()?;
    let z0 = phys.length_unit();
    let hbar_omega = HBAR * phys.omega_c;
    let eta = phys.gamma * HBAR * phys.grad_bz / (2.0 * (hbar_omega * phys.k_c).sqrt());
    let epsilon = phys.gamma * phys.b1 / phys.omega_c;
    let model = ModelParams::new(
        eta,
        epsilon,
        1.0 / phys.q_factor,
        K_B * phys.temperature / hbar_omega,
    )?;
    Ok(Dimensionless {
        model,
        z_m: phys.z_m / z0,
        length_unit: z0,
        momentum_unit: HBAR / z0,
    })
}

/// Inverse of [`dimensionless_from_physical`] given the cantilever
/// (`k_c`, `ω_c`), the gyromagnetic ratio and the measurement bandwidth,
/// none of which enter the dimensionless model.
pub fn physical_from_dimensionless(
    dimless: &Dimensionless,
    k_c: f64,
    omega_c: f64,
    gamma: f64,
    bandwidth: f64,
) -> Result<PhysicalParams> {
    if dimless.model.q_inv <= 0.0 {
        return Err(OscarError::domain("q_inv must be positive to recover Q"));
    }
    let hbar_omega = HBAR * omega_c;
    let z0 = (hbar_omega / k_c).sqrt();
    let m = &dimless.model;
    let phys = PhysicalParams {
        k_c,
        omega_c,
        b1: m.epsilon * omega_c / gamma,
        grad_bz: m.eta * 2.0 * (hbar_omega * k_c).sqrt() / (gamma * HBAR),
        z_m: dimless.z_m * z0,
        temperature: m.d_diff * hbar_omega / K_B,
        q_factor: 1.0 / m.q_inv,
        bandwidth,
        gamma,
    };
    phys.validate()?;
    Ok(phys)
}

/// The `2N×2N` matrix of `½(p² + z²) + εS_x − 2ηzS_z`.
///
/// Index `s·N + n` carries spin `s` (0 = `+½`, 1 = `−½`) and Fock level `n`.
/// The oscillator part is taken as the exact `diag(n + ½)` rather than the
/// product of truncated `p` and `z` matrices. The matrix is real symmetric.
pub fn hamiltonian_matrix(params: &ModelParams, size: usize) -> DMatrix<f64> {
    let dim = 2 * size;
    let mut h = DMatrix::zeros(dim, dim);
    let half_eps = 0.5 * params.epsilon;
    for n in 0..size {
        h[(n, n)] = n as f64 + 0.5;
        h[(size + n, size + n)] = n as f64 + 0.5;
        h[(n, size + n)] = half_eps;
        h[(size + n, n)] = half_eps;
    }
    // −2ηz·S_z: −η z on spin up, +η z on spin down
    for (k, w) in fock::ladder_weights(size).into_iter().enumerate() {
        let up = -params.eta * w;
        h[(k, k + 1)] = up;
        h[(k + 1, k)] = up;
        h[(size + k, size + k + 1)] = -up;
        h[(size + k + 1, size + k)] = -up;
    }
    h
}

/// Magnitude of the OSCAR frequency shift `η²/√(2η²z_m² + ε²)`.
///
/// The sign is branch dependent: `−` when the spin is anti-aligned with the
/// effective field (the ground branch), `+` otherwise.
pub fn shift_estimate_oscar(eta: f64, epsilon: f64, z_m: f64) -> Result<f64> {
    let denom = shift_denominator(eta, epsilon, z_m)?;
    Ok(eta * eta / denom)
}

/// Classical frequency shift `−η² cos θ/√(2η²z_m² + ε²)`.
///
/// `theta` is the angle between the spin's magnetic moment and the effective
/// field. The electron moment is antiparallel to its spin, so a spin
/// anti-aligned with the field has `θ = 0` and gives the negative (ground
/// branch) shift.
pub fn shift_estimate_classical(eta: f64, epsilon: f64, z_m: f64, theta: f64) -> Result<f64> {
    let denom = shift_denominator(eta, epsilon, z_m)?;
    Ok(-eta * eta * theta.cos() / denom)
}

fn shift_denominator(eta: f64, epsilon: f64, z_m: f64) -> Result<f64> {
    let denom = (2.0 * eta * eta * z_m * z_m + epsilon * epsilon).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        return Err(OscarError::domain(
            "shift estimate undefined for z_m = 0 and epsilon = 0",
        ));
    }
    Ok(denom)
}

/// Angle between the magnetic moment (`−S`) and `B_eff(z)` for a spin
/// pointing along `spin`.
pub fn moment_field_angle(params: &ModelParams, z: f64, spin: [f64; 3]) -> Result<f64> {
    let b = params.effective_field(z);
    let moment = [-spin[0], -spin[1], -spin[2]];
    angle_between(moment, b)
        .ok_or_else(|| OscarError::domain("effective field or spin vector vanishes"))
}

/// Unit spin direction whose magnetic moment makes angle `theta` with
/// `B_eff(z)`, tilted within the x–z plane.
pub fn spin_direction_for_moment_angle(params: &ModelParams, z: f64, theta: f64) -> Result<[f64; 3]> {
    let b = params.effective_field(z);
    let norm = (b[0] * b[0] + b[2] * b[2]).sqrt();
    if norm == 0.0 {
        return Err(OscarError::domain("effective field vanishes"));
    }
    let (bx, bz) = (b[0] / norm, b[2] / norm);
    // in-plane unit vector perpendicular to B̂
    let (px, pz) = (-bz, bx);
    let mx = theta.cos() * bx + theta.sin() * px;
    let mz = theta.cos() * bz + theta.sin() * pz;
    Ok([-mx, 0.0, -mz])
}

pub(crate) fn angle_between(a: [f64; 3], b: [f64; 3]) -> Option<f64> {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0).acos())
}

/// Adiabaticity (`2ηz_m ≪ ε²`) and full-reversal (`ε ≪ 2ηz_m`) conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub adiabatic_lhs: f64,
    pub adiabatic_rhs: f64,
    pub full_reversal_lhs: f64,
    pub full_reversal_rhs: f64,
    pub adiabatic_ok: bool,
    pub full_reversal_ok: bool,
}

impl ConditionReport {
    pub fn adiabatic_ratio(&self) -> f64 {
        self.adiabatic_rhs / self.adiabatic_lhs
    }

    pub fn full_reversal_ratio(&self) -> f64 {
        self.full_reversal_rhs / self.full_reversal_lhs
    }
}

pub fn check_conditions(eta: f64, epsilon: f64, z_m: f64) -> ConditionReport {
    let field_swing = 2.0 * eta * z_m;
    let eps_sq = epsilon * epsilon;
    ConditionReport {
        adiabatic_lhs: field_swing,
        adiabatic_rhs: eps_sq,
        full_reversal_lhs: epsilon,
        full_reversal_rhs: field_swing,
        adiabatic_ok: MUCH_LESS_MARGIN * field_swing <= eps_sq,
        full_reversal_ok: MUCH_LESS_MARGIN * epsilon <= field_swing,
    }
}

/// Which measurement bandwidth to use for the noise floor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// [`PhysicalParams::bandwidth`].
    Given,
    /// `B = ω_c/4Q`.
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalNoise {
    /// Bandwidth actually used, rad/s.
    pub bandwidth: f64,
    /// Rms thermal force `2(k_B T k_c B/Q ω_c)^{1/2}`, N.
    pub f_rms: f64,
    /// Relative frequency noise `F_rms/(2 k_c Z_m)`.
    pub relative_frequency_noise: f64,
}

pub fn thermal_noise_estimate(phys: &PhysicalParams, bandwidth: Bandwidth) -> Result<ThermalNoise> {
    phys.validate()?;
    let b = match bandwidth {
        Bandwidth::Given => phys.bandwidth,
        Bandwidth::Natural => phys.omega_c / (4.0 * phys.q_factor),
    };
    let kt = K_B * phys.temperature;
    let f_rms = 2.0 * (kt * phys.k_c * b / (phys.q_factor * phys.omega_c)).sqrt();
    Ok(ThermalNoise {
        bandwidth: b,
        f_rms,
        relative_frequency_noise: f_rms / (2.0 * phys.k_c * phys.z_m),
    })
}

/// Thermal rms amplitude `Z_rms = (k_B T/k_c)^{1/2}`, the smallest usable
/// cantilever amplitude. Returns `(metres, dimensionless)`.
pub fn minimum_amplitude(phys: &PhysicalParams) -> Result<(f64, f64)> {
    phys.validate()?;
    let z_rms = (K_B * phys.temperature / phys.k_c).sqrt();
    Ok((z_rms, z_rms / phys.length_unit()))
}
