//! Observables extracted from trajectories and states: density peak
//! splitting, Fourier frequency shifts, branch factorization and the
//! four-peak decomposition of the density matrix in the `(z, z′)` plane.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{OscarError, Result};
use crate::fock::{self, PositionGrid};
use crate::lindblad::{self, DensityState};
use crate::model;
use crate::schrodinger::SpinorState;
use crate::C64;

/// Full width at half maximum of a Gaussian, in units of its σ.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// `P(z) = |u_α(z)|² + |u_β(z)|²` on the grid.
pub fn probability_density(state: &SpinorState, grid: &PositionGrid) -> Vec<f64> {
    let a = fock::reconstruct_on_grid(&state.c_alpha, grid);
    let b = fock::reconstruct_on_grid(&state.c_beta, grid);
    a.iter().zip(&b).map(|(x, y)| x.norm_sqr() + y.norm_sqr()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOptions {
    /// Minimum prominence as a fraction of the global maximum.
    pub prominence: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self { prominence: 0.05 }
    }
}

/// Up to two density peaks, ordered by position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSplit {
    pub peak_centers: [f64; 2],
    pub peak_masses: [f64; 2],
    /// Full widths at half maximum.
    pub peak_widths: [f64; 2],
    pub separation: f64,
    pub resolved: bool,
    /// Number of prominent peaks found; more than two flags an unexpected
    /// shape (the two largest are still reported).
    pub peak_count: usize,
    /// Grid index of the density minimum between the two peaks.
    pub boundary_index: Option<usize>,
}

impl PeakSplit {
    /// Second mass over first (ordered by position); 0 for a single peak.
    pub fn mass_ratio(&self) -> f64 {
        if self.peak_masses[0] > 0.0 {
            self.peak_masses[1] / self.peak_masses[0]
        } else {
            f64::INFINITY
        }
    }

    /// Smaller mass over larger.
    pub fn minor_to_major(&self) -> f64 {
        let [a, b] = self.peak_masses;
        let hi = a.max(b);
        if hi > 0.0 {
            a.min(b) / hi
        } else {
            0.0
        }
    }

    pub fn too_many_peaks(&self) -> bool {
        self.peak_count > 2
    }

    /// Grid index ranges (inclusive) belonging to each peak.
    pub fn supports(&self, grid: &PositionGrid) -> Option<[(usize, usize); 2]> {
        self.boundary_index
            .map(|b| [(0, b), (b, grid.len() - 1)])
    }
}

/// Trapezoid integral of `values` between grid indices `lo..=hi`.
fn integrate_range(grid: &PositionGrid, values: &[f64], lo: usize, hi: usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let h = grid.spacing();
    let inner: f64 = values[lo + 1..hi].iter().sum();
    h * (inner + 0.5 * (values[lo] + values[hi]))
}

/// Indices of local maxima together with their topographic prominence.
fn prominent_maxima(values: &[f64]) -> Vec<(usize, f64)> {
    let n = values.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        // treat a run of equal values as one candidate
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        let left_lower = i == 0 || values[i - 1] < values[i];
        let right_lower = j + 1 == n || values[j + 1] < values[i];
        if left_lower && right_lower {
            let peak = (i + j) / 2;
            let h = values[peak];
            let mut left_min = h;
            for k in (0..i).rev() {
                if values[k] > h {
                    break;
                }
                left_min = left_min.min(values[k]);
            }
            let mut right_min = h;
            for &v in &values[j + 1..] {
                if v > h {
                    break;
                }
                right_min = right_min.min(v);
            }
            // edges count as dropping to the lowest value seen
            out.push((peak, h - left_min.max(right_min)));
        }
        i = j + 1;
    }
    out
}

/// Full width at half maximum around `peak`, not crossing `lo..=hi`.
fn fwhm(grid: &PositionGrid, values: &[f64], peak: usize, lo: usize, hi: usize) -> f64 {
    let half = 0.5 * values[peak];
    let cross = |a: usize, b: usize| -> f64 {
        // linear interpolation between grid points a (above) and b (below)
        let (va, vb) = (values[a], values[b]);
        let t = if va != vb { (va - half) / (va - vb) } else { 0.0 };
        grid.point(a) + t * (grid.point(b) - grid.point(a))
    };
    let mut k = peak;
    while k > lo && values[k - 1] > half {
        k -= 1;
    }
    let left = if k > lo { cross(k, k - 1) } else { grid.point(lo) };
    let mut k = peak;
    while k < hi && values[k + 1] > half {
        k += 1;
    }
    let right = if k < hi { cross(k, k + 1) } else { grid.point(hi) };
    right - left
}

/// Locate the (at most two) prominent peaks of a density on `grid`, with
/// masses integrated up to the density minimum between them.
pub fn detect_peak_split(density: &[f64], grid: &PositionGrid) -> Result<PeakSplit> {
    detect_peak_split_with(density, grid, &PeakOptions::default())
}

pub fn detect_peak_split_with(
    density: &[f64],
    grid: &PositionGrid,
    options: &PeakOptions,
) -> Result<PeakSplit> {
    if density.len() != grid.len() {
        return Err(OscarError::domain(format!(
            "density has {} values for a grid of {}",
            density.len(),
            grid.len()
        )));
    }
    let max = density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(OscarError::Unresolved("density has no positive values".into()));
    }
    let mut peaks: Vec<(usize, f64)> = prominent_maxima(density)
        .into_iter()
        .filter(|&(_, p)| p >= options.prominence * max)
        .collect();
    let peak_count = peaks.len();
    if peak_count == 0 {
        return Err(OscarError::Unresolved("no prominent density peak".into()));
    }
    peaks.sort_by(|a, b| density[b.0].total_cmp(&density[a.0]));
    peaks.truncate(2);
    peaks.sort_by_key(|p| p.0);
    let last = grid.len() - 1;

    if peaks.len() == 1 {
        let k = peaks[0].0;
        let z = grid.point(k);
        return Ok(PeakSplit {
            peak_centers: [z, z],
            peak_masses: [grid.integrate(density), 0.0],
            peak_widths: [fwhm(grid, density, k, 0, last), 0.0],
            separation: 0.0,
            resolved: false,
            peak_count,
            boundary_index: None,
        });
    }
    let (i, j) = (peaks[0].0, peaks[1].0);
    let boundary = (i..=j)
        .min_by(|&a, &b| density[a].total_cmp(&density[b]))
        .expect("non-empty range");
    let widths = [
        fwhm(grid, density, i, 0, boundary),
        fwhm(grid, density, j, boundary, last),
    ];
    let separation = grid.point(j) - grid.point(i);
    Ok(PeakSplit {
        peak_centers: [grid.point(i), grid.point(j)],
        peak_masses: [
            integrate_range(grid, density, 0, boundary),
            integrate_range(grid, density, boundary, last),
        ],
        peak_widths: widths,
        separation,
        resolved: separation > widths[0] + widths[1],
        peak_count,
        boundary_index: Some(boundary),
    })
}

/// Width (FWHM) of the probability density of a coherent state.
pub fn coherent_fwhm() -> f64 {
    // P(z) ∝ exp(−(z − z0)²), σ = 1/√2
    FWHM_PER_SIGMA * std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierOptions {
    /// Search band in units of the cantilever frequency.
    pub band: (f64, f64),
    /// Peaks below this fraction of the strongest in-band amplitude are ignored.
    pub relative_threshold: f64,
    /// Zero-padding factor applied before the transform.
    pub padding: usize,
    /// Highest frequency kept in the returned spectrum.
    pub spectrum_max_omega: f64,
}

impl Default for FourierOptions {
    fn default() -> Self {
        Self {
            band: (0.9, 1.1),
            relative_threshold: 0.02,
            padding: 4,
            spectrum_max_omega: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    /// Angular frequency in units of ω_c.
    pub omega: f64,
    pub amplitude: f64,
    /// `omega − 1`.
    pub shift: f64,
    /// `|shift|` exceeds the frequency resolution.
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// Peaks in the search band, strongest first.
    pub peaks: Vec<SpectralPeak>,
    /// `2π/T` for the window length `T`.
    pub frequency_resolution: f64,
    /// `(ω, amplitude)` pairs of the padded spectrum up to the configured limit.
    pub spectrum: Vec<(f64, f64)>,
}

impl ShiftReport {
    pub fn peak_frequencies(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.omega).collect()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.amplitude).collect()
    }

    pub fn dominant(&self) -> &SpectralPeak {
        &self.peaks[0]
    }

    /// The two strongest peaks, ordered by frequency.
    pub fn pair(&self) -> Result<[SpectralPeak; 2]> {
        if self.peaks.len() < 2 {
            return Err(OscarError::Unresolved(format!(
                "expected two spectral peaks, found {}",
                self.peaks.len()
            )));
        }
        let mut pair = [self.peaks[0], self.peaks[1]];
        pair.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        Ok(pair)
    }

    /// Fails when a shift of size `shift` is below the window resolution.
    pub fn require_resolution(&self, shift: f64) -> Result<()> {
        if shift.abs() < self.frequency_resolution {
            return Err(OscarError::Unresolved(format!(
                "shift {shift:e} is below the frequency resolution {:e}",
                self.frequency_resolution
            )));
        }
        Ok(())
    }
}

/// Hann-windowed spectrum of a uniformly sampled series; peaks in the band
/// are refined by a parabola through the log-amplitude of three bins.
pub fn fourier_shift(series: &[f64], sample_interval: f64) -> Result<ShiftReport> {
    fourier_shift_with(series, sample_interval, &FourierOptions::default())
}

pub fn fourier_shift_with(
    series: &[f64],
    sample_interval: f64,
    options: &FourierOptions,
) -> Result<ShiftReport> {
    let m = series.len();
    if m < 16 || !(sample_interval > 0.0) {
        return Err(OscarError::domain("need at least 16 samples and a positive interval"));
    }
    let duration = m as f64 * sample_interval;
    let resolution = 2.0 * PI / duration;
    let nyquist = PI / sample_interval;
    if options.band.1 >= nyquist || options.band.0 >= options.band.1 {
        return Err(OscarError::domain(format!(
            "band {:?} invalid for Nyquist frequency {nyquist}",
            options.band
        )));
    }

    let mean = series.iter().sum::<f64>() / m as f64;
    let window: Vec<f64> = (0..m)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / (m - 1) as f64).cos())
        .collect();
    let window_sum: f64 = window.iter().sum();
    let len = m * options.padding.max(1);
    let mut buf: Vec<C64> = series
        .iter()
        .zip(&window)
        .map(|(&x, &w)| C64::new((x - mean) * w, 0.0))
        .chain(std::iter::repeat(C64::new(0.0, 0.0)))
        .take(len)
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);

    let d_omega = 2.0 * PI / (len as f64 * sample_interval);
    let amp: Vec<f64> = buf[..len / 2 + 1]
        .iter()
        .map(|c| 2.0 * c.norm() / window_sum)
        .collect();
    let lo = ((options.band.0 / d_omega).ceil() as usize).max(1);
    let hi = ((options.band.1 / d_omega).floor() as usize).min(amp.len() - 2);
    let band_max = amp[lo..=hi].iter().copied().fold(0.0, f64::max);
    if !(band_max > 0.0) {
        return Err(OscarError::Unresolved("no spectral content in the search band".into()));
    }

    let mut candidates: Vec<(usize, f64)> = (lo..=hi)
        .filter(|&k| amp[k] > amp[k - 1] && amp[k] >= amp[k + 1])
        .filter(|&k| amp[k] >= options.relative_threshold * band_max)
        .map(|k| (k, amp[k]))
        .collect();
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    // window sidelobes sit within a few resolution bins of their main lobe
    let exclusion = 3.0 * resolution;
    let mut peaks: Vec<SpectralPeak> = Vec::new();
    for (k, _) in candidates {
        let (a, b, c) = (amp[k - 1].ln(), amp[k].ln(), amp[k + 1].ln());
        let denom = a - 2.0 * b + c;
        let offset = if denom < 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
        let omega = (k as f64 + offset) * d_omega;
        let amplitude = (b - 0.25 * (a - c) * offset).exp();
        if peaks.iter().any(|p| (p.omega - omega).abs() < exclusion) {
            continue;
        }
        let shift = omega - 1.0;
        peaks.push(SpectralPeak {
            omega,
            amplitude,
            shift,
            resolved: shift.abs() > resolution,
        });
    }
    let spectrum = amp
        .iter()
        .enumerate()
        .map(|(k, &a)| (k as f64 * d_omega, a))
        .take_while(|&(w, _)| w <= options.spectrum_max_omega)
        .collect();
    Ok(ShiftReport {
        peaks,
        frequency_resolution: resolution,
        spectrum,
    })
}

/// The two predicted branch trajectories `z_m cos((1 ∓ |Δ|)τ)`; the first
/// is the lower-frequency (spin anti-aligned) branch.
pub fn branch_positions(tau: f64, z_m: f64, shift: f64) -> (f64, f64) {
    let d = shift.abs();
    (z_m * ((1.0 - d) * tau).cos(), z_m * ((1.0 + d) * tau).cos())
}

/// Signed frequency shifts `(−s, +s)` of the two branches, `s` from the
/// closed-form estimate.
pub fn oscar_shift_pair(eta: f64, epsilon: f64, z_m: f64) -> Result<(f64, f64)> {
    let s = model::shift_estimate_oscar(eta, epsilon, z_m)?;
    Ok((-s, s))
}

/// Best product approximation `R(z) χ` of one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFactor {
    /// Dominant singular value squared over the restricted norm squared.
    pub fidelity: f64,
    /// Normalized spin factor `χ`.
    pub spinor: [C64; 2],
    /// Probability inside the branch support.
    pub weight: f64,
    pub center: f64,
}

impl BranchFactor {
    /// Unit Bloch vector of the spin factor.
    pub fn spin_direction(&self) -> [f64; 3] {
        bloch_vector(&self.spinor)
    }
}

/// Unit Bloch vector of a normalized two-component spinor.
pub fn bloch_vector(chi: &[C64; 2]) -> [f64; 3] {
    let cross = chi[0].conj() * chi[1];
    [
        2.0 * cross.re,
        2.0 * cross.im,
        chi[0].norm_sqr() - chi[1].norm_sqr(),
    ]
}

/// Dominant eigenpair of a 2×2 Hermitian matrix `[[a, b], [b*, d]]`.
fn dominant_eigenpair(a: f64, b: C64, d: f64) -> (f64, [C64; 2]) {
    let mean = 0.5 * (a + d);
    let half_gap = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    let lambda = mean + half_gap;
    let v = if b.norm() > 0.0 {
        let v = [b, C64::new(lambda - a, 0.0)];
        let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        // fix the global phase so that the first component is real
        let phase = if v[0].norm() > 0.0 {
            v[0].conj() / v[0].norm()
        } else {
            C64::new(1.0, 0.0)
        };
        [v[0] * phase / norm, v[1] * phase / norm]
    } else if a >= d {
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
    } else {
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]
    };
    (lambda, v)
}

/// Product-state fidelity and spin factor of each branch of a resolved
/// split, from the grid-sampled spinor restricted to each peak's support.
pub fn branch_factorization(
    state: &SpinorState,
    grid: &PositionGrid,
    split: &PeakSplit,
) -> Result<[BranchFactor; 2]> {
    if !split.resolved {
        return Err(OscarError::Unresolved(
            "branch factorization needs two resolved peaks".into(),
        ));
    }
    let supports = split
        .supports(grid)
        .ok_or_else(|| OscarError::Unresolved("no boundary between peaks".into()))?;
    let ua = fock::reconstruct_on_grid(&state.c_alpha, grid);
    let ub = fock::reconstruct_on_grid(&state.c_beta, grid);
    let factor = |k: usize| -> BranchFactor {
        let (lo, hi) = supports[k];
        // Gram matrix of the 2 × points matrix with rows √w·u_α, √w·u_β
        let (mut aa, mut bb, mut ab) = (0.0, 0.0, C64::new(0.0, 0.0));
        for i in lo..=hi {
            let w = if (i == lo && lo > 0) || (i == hi && hi < grid.len() - 1) {
                0.5 * grid.spacing()
            } else {
                grid.weight(i)
            };
            aa += w * ua[i].norm_sqr();
            bb += w * ub[i].norm_sqr();
            ab += ua[i] * ub[i].conj() * w;
        }
        let (lambda, spinor) = dominant_eigenpair(aa, ab, bb);
        let weight = aa + bb;
        BranchFactor {
            fidelity: if weight > 0.0 { lambda / weight } else { 0.0 },
            spinor,
            weight,
            center: split.peak_centers[k],
        }
    };
    Ok([factor(0), factor(1)])
}

/// Four-peak structure of a density matrix in the `(z, z′)` plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourPeakDecomposition {
    /// Boundary between the two branches along z.
    pub boundary: f64,
    pub centers: [f64; 2],
    /// Trace probability `∫ Σ_s ρ_{s,s}(z, z) dz` over each branch.
    pub diag_masses: [f64; 2],
    /// `∫∫ Σ_{s,s′} |ρ_{s,s′}|²` over the disks about the two off-diagonal peaks.
    pub offdiag_masses: [f64; 2],
    /// The same Hilbert–Schmidt masses over the disks about the diagonal peaks.
    pub diag_hs_masses: [f64; 2],
    /// `∫∫ |Σ_s ρ_{s,s}|` over regions `[11, 22, 12, 21]`.
    pub abs_sum_diag_field: [f64; 4],
    /// `∫∫ |Σ_s ρ_{s,−s}|` over regions `[11, 22, 12, 21]`.
    pub abs_sum_offdiag_field: [f64; 4],
    /// Branch spin matrices `∫_k ρ_{s,s′}(z, z) dz / diag_mass_k`.
    pub branch_spin_matrices: [Matrix2<C64>; 2],
    /// Off-diagonal over diagonal Hilbert–Schmidt mass.
    pub coherence_ratio: f64,
}

impl FourPeakDecomposition {
    /// Unit-length-normalized mean spin direction of each branch.
    pub fn branch_spin_vectors(&self) -> [[f64; 3]; 2] {
        self.branch_spin_matrices.map(|chi| {
            let tr = (chi[(0, 0)] + chi[(1, 1)]).re;
            [
                2.0 * chi[(1, 0)].re / tr,
                2.0 * chi[(1, 0)].im / tr,
                (chi[(0, 0)] - chi[(1, 1)]).re / tr,
            ]
        })
    }
}

/// Four-peak masses of the `(z, z′)` plane. Trace masses and spin matrices
/// split the diagonal at the density minimum between the peaks; the
/// Hilbert–Schmidt and absolute-sum masses integrate a disk of radius half
/// the peak separation about each peak center `(c_k, c_l)`.
pub fn four_peak_decomposition(rho: &DensityState, grid: &PositionGrid) -> Result<FourPeakDecomposition> {
    let blocks = lindblad::grid_blocks(rho, grid);
    decompose_grid_blocks(&blocks, grid, rho.tau)
}

fn decompose_grid_blocks(
    blocks: &[DMatrix<C64>; 4],
    grid: &PositionGrid,
    tau: f64,
) -> Result<FourPeakDecomposition> {
    let g = grid.len();
    let diag: Vec<f64> = (0..g)
        .map(|i| (blocks[0][(i, i)] + blocks[3][(i, i)]).re)
        .collect();
    let split = detect_peak_split(&diag, grid)?;
    if !split.resolved {
        return Err(OscarError::Unresolved(format!(
            "diagonal peaks not resolved at tau = {tau}"
        )));
    }
    let b = split.boundary_index.expect("resolved split has a boundary");
    let h = grid.spacing();
    // weights that split the boundary point between both regions
    let region_weight = |i: usize, k: usize| -> f64 {
        let edge = if i == 0 || i == g - 1 { 0.5 } else { 1.0 };
        let share = match (i.cmp(&b), k) {
            (std::cmp::Ordering::Equal, _) => 0.5,
            (std::cmp::Ordering::Less, 0) | (std::cmp::Ordering::Greater, 1) => 1.0,
            _ => 0.0,
        };
        h * edge * share
    };
    let w: [Vec<f64>; 2] = [0, 1].map(|k| (0..g).map(|i| region_weight(i, k)).collect());

    // Peak regions are disks of radius s/2 about (c_k, c_l). Unlike full
    // quadrants they stay clear of the corner at (b, b), where the tails of a
    // broadened diagonal peak would otherwise pose as coherence.
    let c = split.peak_centers;
    let r2 = 0.25 * split.separation * split.separation;
    let edge = |i: usize| if i == 0 || i == g - 1 { 0.5 * h } else { h };
    let mut hs = [[0.0; 2]; 2];
    let mut abs_diag = [[0.0; 2]; 2];
    let mut abs_off = [[0.0; 2]; 2];
    for j in 0..g {
        let zj = grid.point(j);
        for i in 0..g {
            let zi = grid.point(i);
            let Some((k, l)) = (0..2)
                .flat_map(|k| (0..2).map(move |l| (k, l)))
                .find(|&(k, l)| (zi - c[k]).powi(2) + (zj - c[l]).powi(2) <= r2)
            else {
                continue;
            };
            let ww = edge(i) * edge(j);
            let sq: f64 = blocks.iter().map(|m| m[(i, j)].norm_sqr()).sum();
            hs[k][l] += ww * sq;
            abs_diag[k][l] += ww * (blocks[0][(i, j)] + blocks[3][(i, j)]).norm();
            abs_off[k][l] += ww * (blocks[1][(i, j)] + blocks[2][(i, j)]).norm();
        }
    }
    let mut chis = [Matrix2::zeros(); 2];
    let mut diag_masses = [0.0; 2];
    for k in 0..2 {
        let mut chi: Matrix2<C64> = Matrix2::zeros();
        for i in 0..g {
            for s in 0..2 {
                for t in 0..2 {
                    chi[(s, t)] += blocks[2 * s + t][(i, i)] * w[k][i];
                }
            }
        }
        diag_masses[k] = (chi[(0, 0)] + chi[(1, 1)]).re;
        chis[k] = if diag_masses[k] > 0.0 {
            chi / C64::new(diag_masses[k], 0.0)
        } else {
            chi
        };
    }
    let diag_hs = hs[0][0] + hs[1][1];
    let off_hs = hs[0][1] + hs[1][0];
    Ok(FourPeakDecomposition {
        boundary: grid.point(b),
        centers: split.peak_centers,
        diag_masses,
        offdiag_masses: [hs[0][1], hs[1][0]],
        diag_hs_masses: [hs[0][0], hs[1][1]],
        abs_sum_diag_field: [abs_diag[0][0], abs_diag[1][1], abs_diag[0][1], abs_diag[1][0]],
        abs_sum_offdiag_field: [abs_off[0][0], abs_off[1][1], abs_off[0][1], abs_off[1][0]],
        branch_spin_matrices: chis,
        coherence_ratio: if diag_hs > 0.0 { off_hs / diag_hs } else { 0.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherencePoint {
    pub tau: f64,
    /// `None` before the diagonal peaks separate.
    pub decomposition: Option<FourPeakDecomposition>,
}

impl CoherencePoint {
    pub fn coherence_ratio(&self) -> Option<f64> {
        self.decomposition.as_ref().map(|d| d.coherence_ratio)
    }
}

/// Four-peak decomposition of each snapshot; unresolved snapshots carry
/// no decomposition.
pub fn coherence_decay_curve(snapshots: &[DensityState], grid: &PositionGrid) -> Vec<CoherencePoint> {
    snapshots
        .iter()
        .map(|rho| CoherencePoint {
            tau: rho.tau,
            decomposition: four_peak_decomposition(rho, grid).ok(),
        })
        .collect()
}

/// Largest relative increase between consecutive values.
pub fn max_relative_increase(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| if w[0] > 0.0 { (w[1] - w[0]) / w[0] } else { 0.0 })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::initial_density;
    use crate::schrodinger::{initial_state, spinor};
    use approx::assert_relative_eq;

    fn gaussian_pair(grid: &PositionGrid, a: (f64, f64), b: (f64, f64)) -> Vec<f64> {
        // (center, mass) with unit-variance... σ = 0.7
        let s = 0.7f64;
        let norm = 1.0 / (s * (2.0 * PI).sqrt());
        grid.points()
            .map(|z| {
                a.1 * norm * (-(z - a.0).powi(2) / (2.0 * s * s)).exp()
                    + b.1 * norm * (-(z - b.0).powi(2) / (2.0 * s * s)).exp()
            })
            .collect()
    }

    #[test]
    fn coherent_density_is_a_single_gaussian() {
        let grid = PositionGrid::new(-20.0, 20.0, 4001).unwrap();
        let s = initial_state(13.0, 0.0, 0.7, 0.0, 200).unwrap();
        let p = probability_density(&s, &grid);
        assert_relative_eq!(grid.integrate(&p), 1.0, epsilon = 1e-6);
        let split = detect_peak_split(&p, &grid).unwrap();
        assert_eq!(split.peak_count, 1);
        assert_relative_eq!(split.peak_centers[0], 13.0, epsilon = 1e-9);
        assert_eq!(split.peak_masses[1], 0.0);
        assert_eq!(split.minor_to_major(), 0.0);
        assert!(!split.resolved);
        assert_relative_eq!(split.peak_widths[0], coherent_fwhm(), epsilon = 1e-4);
    }

    #[test]
    fn synthetic_three_to_one() {
        let grid = PositionGrid::new(-10.0, 10.0, 2001).unwrap();
        let p = gaussian_pair(&grid, (-4.0, 0.25), (4.0, 0.75));
        let split = detect_peak_split(&p, &grid).unwrap();
        assert!(split.resolved);
        assert_eq!(split.peak_count, 2);
        assert_relative_eq!(split.mass_ratio(), 3.0, epsilon = 0.03);
        assert_relative_eq!(split.separation, 8.0, epsilon = 1e-9);
        assert!(split.peak_masses.iter().sum::<f64>() <= 1.0 + 1e-6);
    }

    #[test]
    fn overlapping_peaks_are_not_resolved() {
        let grid = PositionGrid::new(-10.0, 10.0, 2001).unwrap();
        let p = gaussian_pair(&grid, (-0.9, 0.5), (0.9, 0.5));
        let split = detect_peak_split(&p, &grid).unwrap();
        assert_eq!(split.peak_count, 2);
        assert!(!split.resolved);
    }

    #[test]
    fn extra_peaks_are_flagged() {
        let grid = PositionGrid::new(-10.0, 10.0, 2001).unwrap();
        let mut p = gaussian_pair(&grid, (-5.0, 0.4), (0.0, 0.3));
        for (v, q) in p.iter_mut().zip(gaussian_pair(&grid, (5.0, 0.3), (50.0, 0.0))) {
            *v += q;
        }
        let split = detect_peak_split(&p, &grid).unwrap();
        assert!(split.too_many_peaks());
        assert_relative_eq!(split.peak_centers[0], -5.0, epsilon = 1e-9);
    }

    #[test]
    fn pure_cosine_shift() {
        let dt = 2.0 * PI / 16.0;
        let series: Vec<f64> = (0..=((8000.0 / dt) as usize))
            .map(|k| (0.992 * k as f64 * dt).cos())
            .collect();
        let report = fourier_shift(&series, dt).unwrap();
        assert_eq!(report.peaks.len(), 1);
        assert!((report.dominant().shift + 8e-3).abs() < 2e-4);
        assert_relative_eq!(report.dominant().amplitude, 1.0, epsilon = 0.02);
        assert!(report.dominant().resolved);
    }

    #[test]
    fn two_tone_beat() {
        let dt = 2.0 * PI / 16.0;
        let series: Vec<f64> = (0..=((8000.0 / dt) as usize))
            .map(|k| {
                let t = k as f64 * dt;
                10.0 * (0.992 * t).cos() + 3.0 * (1.008 * t).cos()
            })
            .collect();
        let report = fourier_shift(&series, dt).unwrap();
        let [lo, hi] = report.pair().unwrap();
        assert!((lo.shift + 8e-3).abs() < 1e-4);
        assert!((hi.shift - 8e-3).abs() < 1e-4);
        assert_relative_eq!(hi.amplitude / lo.amplitude, 0.3, epsilon = 0.01);
        assert_eq!(report.peaks.len(), 2);
    }

    #[test]
    fn short_window_is_unresolved() {
        let dt = 2.0 * PI / 16.0;
        let series: Vec<f64> = (0..400).map(|k| (0.999 * k as f64 * dt).cos()).collect();
        let report = fourier_shift(&series, dt).unwrap();
        assert!(!report.dominant().resolved);
        assert!(report.require_resolution(1e-3).is_err());
    }

    #[test]
    fn branch_position_identities() {
        assert_eq!(branch_positions(0.0, 13.0, 8e-3), (13.0, 13.0));
        let (a, b) = branch_positions(123.4, 13.0, 0.0);
        assert_eq!(a, b);
        // z1 − z2 = 2 z_m sin τ sin(Δτ)
        let d = 8e-3;
        let tau = PI / (2.0 * d) + 0.5;
        let (z1, z2) = branch_positions(tau, 13.0, d);
        assert_relative_eq!(z1 - z2, 2.0 * 13.0 * tau.sin() * (d * tau).sin(), epsilon = 1e-10);
    }

    fn cat(a: f64, n: usize, weights: (f64, f64), chis: ([C64; 2], [C64; 2])) -> SpinorState {
        let left = fock::coherent_coefficients(C64::new(-a / 2f64.sqrt(), 0.0), n).unwrap();
        let right = fock::coherent_coefficients(C64::new(a / 2f64.sqrt(), 0.0), n).unwrap();
        let (wl, wr) = (weights.0.sqrt(), weights.1.sqrt());
        let comp = |s: usize| -> Vec<C64> {
            left.iter()
                .zip(&right)
                .map(|(l, r)| l * chis.0[s] * wl + r * chis.1[s] * wr)
                .collect()
        };
        SpinorState::new(comp(0), comp(1), 0.0).unwrap()
    }

    #[test]
    fn product_branches_factorize() {
        let grid = PositionGrid::new(-12.0, 12.0, 1201).unwrap();
        let chi1 = spinor(2.5, 0.3);
        let chi2 = spinor(0.4, -1.0);
        let s = cat(6.0, 80, (0.7, 0.3), (chi1, chi2));
        let split = detect_peak_split(&probability_density(&s, &grid), &grid).unwrap();
        let f = branch_factorization(&s, &grid, &split).unwrap();
        for (b, chi) in f.iter().zip([chi1, chi2]) {
            assert!((b.fidelity - 1.0).abs() < 1e-10);
            let overlap = (b.spinor[0].conj() * chi[0] + b.spinor[1].conj() * chi[1]).norm();
            assert_relative_eq!(overlap, 1.0, epsilon = 1e-10);
        }
        assert_relative_eq!(f[0].weight, 0.7, epsilon = 1e-6);
        let phased = branch_factorization(&s.with_global_phase(1.234), &grid, &split).unwrap();
        for k in 0..2 {
            assert!((phased[k].fidelity - f[k].fidelity).abs() < 1e-12);
        }
    }

    #[test]
    fn entangled_branch_has_low_fidelity() {
        let grid = PositionGrid::new(-12.0, 12.0, 1201).unwrap();
        // within the right branch, spin up at one displacement and down at another
        let n = 80;
        let l = fock::coherent_coefficients(C64::new(-6.0 / 2f64.sqrt(), 0.0), n).unwrap();
        let r1 = fock::coherent_coefficients(C64::new(4.0 / 2f64.sqrt(), 0.0), n).unwrap();
        let r2 = fock::coherent_coefficients(C64::new(7.0 / 2f64.sqrt(), 0.0), n).unwrap();
        let ca: Vec<C64> = l.iter().zip(&r1).map(|(x, y)| (x + y) * 0.5f64.sqrt()).collect();
        let cb: Vec<C64> = r2.iter().map(|y| y * 0.5f64.sqrt()).collect();
        let s = SpinorState::new(ca, cb, 0.0).unwrap();
        let p = probability_density(&s, &grid);
        let split = detect_peak_split(&p, &grid).unwrap();
        if split.resolved {
            let f = branch_factorization(&s, &grid, &split).unwrap();
            assert!(f[1].fidelity < 0.95);
        }
    }

    #[test]
    fn unresolved_split_refuses_factorization() {
        let grid = PositionGrid::new(-10.0, 10.0, 401).unwrap();
        let s = initial_state(1.0, 0.0, 0.0, 0.0, 40).unwrap();
        let split = detect_peak_split(&probability_density(&s, &grid), &grid).unwrap();
        assert!(branch_factorization(&s, &grid, &split).is_err());
    }

    #[test]
    fn equal_weight_cat_has_full_coherence() {
        let grid = PositionGrid::new(-12.0, 12.0, 241).unwrap();
        let up = spinor(0.0, 0.0);
        let tilted = spinor(2.0, 0.5);
        let s = cat(6.0, 80, (0.5, 0.5), (up, tilted));
        let rho = initial_density(&s);
        let d = four_peak_decomposition(&rho, &grid).unwrap();
        assert!((d.coherence_ratio - 1.0).abs() < 1e-3, "{}", d.coherence_ratio);
        assert_relative_eq!(d.diag_masses[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(d.diag_masses[1], 0.5, epsilon = 1e-6);
        let v = d.branch_spin_vectors();
        assert_relative_eq!(v[0][2], 1.0, epsilon = 1e-6);
        assert_relative_eq!(v[1][2], 2.0f64.cos(), epsilon = 1e-6);
        // the abs-sum field sees only the spin overlap in the off quadrants
        let overlap = (up[0].conj() * tilted[0] + up[1].conj() * tilted[1]).norm();
        let ratio = d.abs_sum_diag_field[2] / d.abs_sum_diag_field[0];
        assert_relative_eq!(ratio, overlap, epsilon = 1e-4);
    }

    #[test]
    fn mixture_has_no_coherence() {
        let grid = PositionGrid::new(-12.0, 12.0, 241).unwrap();
        let a = initial_density(&initial_state(-6.0, 0.0, 0.0, 0.0, 80).unwrap());
        let b = initial_density(&initial_state(6.0, 0.0, 2.0, 0.0, 80).unwrap());
        let blocks = std::array::from_fn(|k| (&a.blocks[k] + &b.blocks[k]) * C64::new(0.5, 0.0));
        let rho = DensityState::new(blocks, 0.0).unwrap();
        let d = four_peak_decomposition(&rho, &grid).unwrap();
        assert!(d.coherence_ratio < 1e-3);
        assert!(d.coherence_ratio >= 0.0);
        let curve = coherence_decay_curve(&[rho.clone(), rho], &grid);
        assert!(curve.iter().all(|c| c.coherence_ratio().unwrap() < 1e-3));
    }

    #[test]
    fn single_packet_is_unresolved() {
        let grid = PositionGrid::new(-12.0, 12.0, 121).unwrap();
        let rho = initial_density(&initial_state(3.0, 0.0, 0.0, 0.0, 40).unwrap());
        assert!(matches!(
            four_peak_decomposition(&rho, &grid),
            Err(OscarError::Unresolved(_))
        ));
        assert!(coherence_decay_curve(&[rho], &grid)[0].decomposition.is_none());
    }

    #[test]
    fn relative_increase() {
        assert_relative_eq!(max_relative_increase(&[1.0, 0.5, 0.51, 0.2]), 0.02, epsilon = 1e-12);
    }
}
