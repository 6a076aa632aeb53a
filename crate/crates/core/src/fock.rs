//! Harmonic-oscillator eigenbasis primitives.
//!
//! The eigenfunctions are the normalized Hermite functions
//!
//! ```text
//! u_n(z) = (π^{1/4} 2^{n/2} √(n!))⁻¹ H_n(z) e^{−z²/2}
//! ```
//!
//! evaluated with the normalized three-term recurrence and a running
//! logarithmic scale, so neither the Gaussian factor nor the polynomial can
//! overflow or underflow in intermediate steps.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OscarError, Result};
use crate::C64;

/// Default tolerance on the probability lost by truncating a coherent state.
pub const DEFAULT_LEAKAGE_TOLERANCE: f64 = 1e-8;

const RESCALE_THRESHOLD: f64 = 1e100;

/// A truncated oscillator basis `u_0 .. u_{N−1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FockBasis {
    size: usize,
}

impl FockBasis {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(OscarError::domain(format!(
                "Fock basis needs at least 2 states, got {size}"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn position(&self) -> DMatrix<f64> {
        position_matrix(self.size)
    }

    pub fn momentum(&self) -> DMatrix<C64> {
        momentum_matrix(self.size)
    }

    pub fn derivative(&self) -> DMatrix<f64> {
        derivative_matrix(self.size)
    }

    pub fn number(&self) -> DMatrix<f64> {
        number_matrix(self.size)
    }
}

/// Smallest basis size keeping the truncation leakage of a coherent state
/// with amplitude `alpha0` well below 10⁻⁸ (a Poisson tail bound).
pub fn recommended_basis_size(alpha0: C64) -> usize {
    let mean = alpha0.norm_sqr();
    (mean + 10.0 * mean.sqrt() + 20.0).ceil() as usize
}

/// A uniform grid of positions, `points` samples from `z_min` to `z_max`
/// inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionGrid {
    z_min: f64,
    z_max: f64,
    points: usize,
}

impl PositionGrid {
    pub fn new(z_min: f64, z_max: f64, points: usize) -> Result<Self> {
        if !(z_min.is_finite() && z_max.is_finite()) || z_min >= z_max {
            return Err(OscarError::domain(format!(
                "grid bounds must satisfy z_min < z_max, got [{z_min}, {z_max}]"
            )));
        }
        if points < 2 {
            return Err(OscarError::domain(format!(
                "grid needs at least 2 points, got {points}"
            )));
        }
        Ok(Self {
            z_min,
            z_max,
            points,
        })
    }

    /// `[−1.6 z_m, 1.6 z_m]` with 2048 points: wide enough for both branch
    /// turning points plus the wavepacket tails.
    pub fn for_amplitude(z_m: f64) -> Result<Self> {
        let half = 1.6 * z_m.abs().max(1.0);
        Self::new(-half, half, 2048)
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.z_max - self.z_min) / (self.points - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        self.z_min + k as f64 * self.spacing()
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.points).map(move |k| self.point(k))
    }

    /// Trapezoid weight of grid point `k`.
    pub fn weight(&self, k: usize) -> f64 {
        if k == 0 || k + 1 == self.points {
            0.5 * self.spacing()
        } else {
            self.spacing()
        }
    }

    /// Trapezoid-rule integral of samples taken on this grid.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.points);
        values
            .iter()
            .enumerate()
            .map(|(k, v)| v * self.weight(k))
            .sum()
    }

    /// Index of the grid point closest to `z`, clamped to the grid.
    pub fn nearest_index(&self, z: f64) -> usize {
        let k = ((z - self.z_min) / self.spacing()).round();
        k.clamp(0.0, (self.points - 1) as f64) as usize
    }
}

/// Normalized oscillator eigenfunction `u_n(z)`.
pub fn hermite_function(n: usize, z: f64) -> f64 {
    let mut out = 0.0;
    scaled_recurrence(n + 1, z, |k, v| {
        if k == n {
            out = v;
        }
    });
    out
}

/// All eigenfunctions `u_0(z) .. u_{count−1}(z)` at one point.
pub fn hermite_functions(count: usize, z: f64) -> Vec<f64> {
    let mut out = vec![0.0; count];
    scaled_recurrence(count, z, |k, v| out[k] = v);
    out
}

/// Runs `u_{k+1} = √(2/(k+1)) z u_k − √(k/(k+1)) u_{k−1}` on rescaled values,
/// handing each finished `u_k` to `sink`.
fn scaled_recurrence(count: usize, z: f64, mut sink: impl FnMut(usize, f64)) {
    if count == 0 {
        return;
    }
    // u_k = v_k · exp(log_scale)
    let mut log_scale = -0.5 * z * z - 0.25 * PI.ln();
    let unscale = |v: f64, s: f64| -> f64 {
        if v == 0.0 {
            0.0
        } else {
            v.signum() * (v.abs().ln() + s).exp()
        }
    };
    let mut prev = 0.0;
    let mut cur = 1.0;
    sink(0, unscale(cur, log_scale));
    for k in 0..count - 1 {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * z * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_THRESHOLD {
            prev /= RESCALE_THRESHOLD;
            cur /= RESCALE_THRESHOLD;
            log_scale += RESCALE_THRESHOLD.ln();
        }
        sink(k + 1, unscale(cur, log_scale));
    }
}

/// Matrix `U[g, n] = u_n(z_g)` of eigenfunctions sampled on a grid.
pub fn basis_on_grid(count: usize, grid: &PositionGrid) -> DMatrix<f64> {
    let mut table = DMatrix::zeros(grid.len(), count);
    for (g, z) in grid.points().enumerate() {
        scaled_recurrence(count, z, |k, v| table[(g, k)] = v);
    }
    table
}

/// `Σ_n c_n u_n(z)` at every grid point.
pub fn reconstruct_on_grid(coeffs: &[C64], grid: &PositionGrid) -> Vec<C64> {
    let mut buf = vec![0.0; coeffs.len()];
    grid.points()
        .map(|z| {
            scaled_recurrence(coeffs.len(), z, |k, v| buf[k] = v);
            coeffs.iter().zip(&buf).map(|(c, u)| c * *u).sum()
        })
        .collect()
}

/// Coherent-state Fock coefficients `c_n = e^{−|α₀|²/2} α₀ⁿ/√(n!)`,
/// `n < size`, checked against [`DEFAULT_LEAKAGE_TOLERANCE`].
pub fn coherent_coefficients(alpha0: C64, size: usize) -> Result<Vec<C64>> {
    coherent_coefficients_with_tolerance(alpha0, size, DEFAULT_LEAKAGE_TOLERANCE)
}

pub fn coherent_coefficients_with_tolerance(
    alpha0: C64,
    size: usize,
    tolerance: f64,
) -> Result<Vec<C64>> {
    if size == 0 {
        return Err(OscarError::domain("coherent state needs at least one coefficient"));
    }
    let leakage = coherent_leakage(alpha0, size);
    if leakage > tolerance {
        return Err(OscarError::Truncation {
            what: "coherent-state leakage",
            value: leakage,
            tolerance,
        });
    }
    let mut coeffs = vec![C64::new(0.0, 0.0); size];
    if alpha0.norm_sqr() == 0.0 {
        coeffs[0] = C64::new(1.0, 0.0);
        return Ok(coeffs);
    }
    // the recurrence c_{n+1} = c_n α₀/√(n+1), carried in log-magnitude
    let (r, phase) = alpha0.to_polar();
    let ln_r = r.ln();
    let mut log_mag = -0.5 * r * r;
    for (n, c) in coeffs.iter_mut().enumerate() {
        *c = C64::from_polar(log_mag.exp(), n as f64 * phase);
        log_mag += ln_r - 0.5 * ((n + 1) as f64).ln();
    }
    Ok(coeffs)
}

/// Probability `Σ_{n ≥ size} |c_n|²` discarded by truncating a coherent state,
/// summed directly over the Poisson tail.
pub fn coherent_leakage(alpha0: C64, size: usize) -> f64 {
    let mean = alpha0.norm_sqr();
    if mean == 0.0 {
        return if size == 0 { 1.0 } else { 0.0 };
    }
    let ln_mean = mean.ln();
    // ln p_n = −λ + n ln λ − ln n!
    let mut ln_p = -mean;
    for n in 1..=size {
        ln_p += ln_mean - (n as f64).ln();
    }
    let mut n = size;
    let mut tail = 0.0;
    loop {
        let term = ln_p.exp();
        tail += term;
        let past_mode = (n as f64) > mean;
        if past_mode && (term <= 1e-18 * tail || term == 0.0) {
            break;
        }
        n += 1;
        ln_p += ln_mean - (n as f64).ln();
    }
    tail.min(1.0)
}

/// Off-diagonal ladder weights `√((k+1)/2)`, `k = 0 .. size−2`. Both the
/// position and the derivative matrix are built from them.
pub fn ladder_weights(size: usize) -> Vec<f64> {
    (0..size.saturating_sub(1))
        .map(|k| ((k + 1) as f64).sqrt() * FRAC_1_SQRT_2)
        .collect()
}

/// `z = (a + a†)/√2`.
pub fn position_matrix(size: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(size, size);
    for (k, w) in ladder_weights(size).into_iter().enumerate() {
        m[(k, k + 1)] = w;
        m[(k + 1, k)] = w;
    }
    m
}

/// `p = i(a† − a)/√2`.
pub fn momentum_matrix(size: usize) -> DMatrix<C64> {
    let mut m = DMatrix::from_element(size, size, C64::new(0.0, 0.0));
    for (k, w) in ladder_weights(size).into_iter().enumerate() {
        m[(k, k + 1)] = C64::new(0.0, -w);
        m[(k + 1, k)] = C64::new(0.0, w);
    }
    m
}

/// `∂/∂z = (a − a†)/√2`, so that `p = −i ∂/∂z`.
pub fn derivative_matrix(size: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(size, size);
    for (k, w) in ladder_weights(size).into_iter().enumerate() {
        m[(k, k + 1)] = w;
        m[(k + 1, k)] = -w;
    }
    m
}

/// `a†a = diag(0, 1, …, size−1)`.
pub fn number_matrix(size: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_fn(size, |k, _| k as f64))
}
