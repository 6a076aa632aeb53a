//! Unitary evolution of the spinor wavefunction `Ψ = u_α(z,τ) α + u_β(z,τ) β`.
//!
//! Two independent propagators are provided:
//!
//! - [`evolve_ode`] integrates the Fock-coefficient equations `i ċ = H c` with
//!   adaptive Dormand–Prince steps. The free oscillator phase `e^{−i(n+½)τ}`
//!   is factored out analytically (interaction picture), so step sizes are
//!   set by the spin dynamics rather than by the highest Fock level.
//! - [`SpectralPropagator`] diagonalizes the `2N×2N` Hamiltonian once and
//!   evaluates `c(τ) = V e^{−iΛτ} Vᵀ c(0)` exactly at each sample time.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{OscarError, Result};
use crate::fock;
use crate::model::{self, ModelParams};
use crate::ode::{DormandPrince, OdeSystem, StepStats, Tolerances};
use crate::C64;

/// 16 samples per cantilever period.
pub const DEFAULT_SAMPLE_INTERVAL: f64 = 2.0 * PI / 16.0;

/// Default error control for [`evolve_ode`]. The global error grows about
/// linearly with the tolerance; `1e-12` keeps the norm drift near `1e-9`
/// per 1000 time units at η = 0.3, ε = 10.
pub const DEFAULT_TOLERANCES: Tolerances = Tolerances {
    rtol: 1e-12,
    atol: 1e-15,
};

/// Bound on `|c_{α,N−1}|² + |c_{β,N−1}|²` checked at every sample.
pub const DEFAULT_TOP_LEAKAGE_TOLERANCE: f64 = 1e-6;

/// Fock coefficients of the two spin components at time `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinorState {
    pub c_alpha: Vec<C64>,
    pub c_beta: Vec<C64>,
    pub tau: f64,
}

impl SpinorState {
    pub fn new(c_alpha: Vec<C64>, c_beta: Vec<C64>, tau: f64) -> Result<Self> {
        if c_alpha.len() != c_beta.len() || c_alpha.len() < 2 {
            return Err(OscarError::domain(format!(
                "spinor components must have equal length >= 2, got {} and {}",
                c_alpha.len(),
                c_beta.len()
            )));
        }
        Ok(Self {
            c_alpha,
            c_beta,
            tau,
        })
    }

    /// A product of orbital coefficients and a two-component spinor.
    pub fn product(orbital: &[C64], spin: [C64; 2], tau: f64) -> Result<Self> {
        Self::new(
            orbital.iter().map(|c| c * spin[0]).collect(),
            orbital.iter().map(|c| c * spin[1]).collect(),
            tau,
        )
    }

    pub fn basis_size(&self) -> usize {
        self.c_alpha.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c_alpha
            .iter()
            .chain(&self.c_beta)
            .map(|c| c.norm_sqr())
            .sum()
    }

    /// Population of the highest retained Fock level.
    pub fn top_leakage(&self) -> f64 {
        let n = self.basis_size() - 1;
        self.c_alpha[n].norm_sqr() + self.c_beta[n].norm_sqr()
    }

    /// Multiply by a global phase `e^{iφ}`.
    pub fn with_global_phase(&self, phi: f64) -> Self {
        let f = C64::from_polar(1.0, phi);
        Self {
            c_alpha: self.c_alpha.iter().map(|c| c * f).collect(),
            c_beta: self.c_beta.iter().map(|c| c * f).collect(),
            tau: self.tau,
        }
    }

    /// Stacked `[c_α; c_β]` vector of length `2N`.
    pub fn stacked(&self) -> DVector<C64> {
        DVector::from_iterator(
            2 * self.basis_size(),
            self.c_alpha.iter().chain(&self.c_beta).copied(),
        )
    }

    pub fn from_stacked(v: &DVector<C64>, tau: f64) -> Result<Self> {
        let n = v.len() / 2;
        Self::new(
            v.rows(0, n).iter().copied().collect(),
            v.rows(n, n).iter().copied().collect(),
            tau,
        )
    }
}

/// Bloch spinor `(cos(θ/2), e^{iφ} sin(θ/2))`.
pub fn spinor(theta: f64, phi: f64) -> [C64; 2] {
    [
        C64::new((0.5 * theta).cos(), 0.0),
        C64::from_polar((0.5 * theta).sin(), phi),
    ]
}

/// Polar and azimuthal angles of a (not necessarily normalized) direction.
pub fn bloch_angles(dir: [f64; 3]) -> (f64, f64) {
    let r = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    ((dir[2] / r).clamp(-1.0, 1.0).acos(), dir[1].atan2(dir[0]))
}

/// Coherent cantilever state with `⟨z⟩ = z0`, `⟨p⟩ = p0` times the spinor
/// with Bloch angles `(spin_theta, spin_phi)`.
pub fn initial_state(
    z0: f64,
    p0: f64,
    spin_theta: f64,
    spin_phi: f64,
    size: usize,
) -> Result<SpinorState> {
    let alpha0 = C64::new(z0, p0) * FRAC_1_SQRT_2;
    let orbital = fock::coherent_coefficients(alpha0, size)?;
    SpinorState::product(&orbital, spinor(spin_theta, spin_phi), 0.0)
}

/// Expectation values of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub tau: f64,
    pub z: f64,
    pub p: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    pub energy: f64,
    pub norm: f64,
    /// `⟨S·B_eff⟩ / (½|B_eff(⟨z⟩)|)`: +1 for a spin aligned with the field.
    pub alignment: f64,
}

impl Observables {
    pub fn spin(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }
}

/// `⟨z⟩, ⟨p⟩, ⟨S⟩, ⟨H⟩`, norm and spin-field alignment.
pub fn expectation_suite(state: &SpinorState, params: &ModelParams) -> Observables {
    let n = state.basis_size();
    let w = fock::ladder_weights(n);
    let (a, b) = (&state.c_alpha, &state.c_beta);

    // ⟨v|X|v⟩ and ⟨v|P|v⟩ from the single off-diagonal band
    let band = |v: &[C64]| -> (f64, f64) {
        let mut zx = 0.0;
        let mut px = 0.0;
        for k in 0..n - 1 {
            let cross = v[k].conj() * v[k + 1] * w[k];
            zx += 2.0 * cross.re;
            // P_{k,k+1} = −i w_k
            px += 2.0 * (cross * C64::new(0.0, -1.0)).re;
        }
        (zx, px)
    };
    let (za, pa) = band(a);
    let (zb, pb) = band(b);
    let pop_a: f64 = a.iter().map(|c| c.norm_sqr()).sum();
    let pop_b: f64 = b.iter().map(|c| c.norm_sqr()).sum();
    let ab: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let oscillator: f64 = a
        .iter()
        .zip(b)
        .enumerate()
        .map(|(k, (x, y))| (k as f64 + 0.5) * (x.norm_sqr() + y.norm_sqr()))
        .sum();

    let z = za + zb;
    let sx = ab.re;
    let sy = ab.im;
    let z_sz = 0.5 * (za - zb);
    let spin_energy = params.epsilon * sx - 2.0 * params.eta * z_sz;
    let field = params.effective_field(z);
    let field_norm = (field[0] * field[0] + field[2] * field[2]).sqrt();
    Observables {
        tau: state.tau,
        z,
        p: pa + pb,
        sx,
        sy,
        sz: 0.5 * (pop_a - pop_b),
        energy: oscillator + spin_energy,
        norm: pop_a + pop_b,
        alignment: if field_norm > 0.0 {
            spin_energy / (0.5 * field_norm)
        } else {
            0.0
        },
    }
}

/// Sampled observables plus optional full-state snapshots.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Observables>,
    pub snapshots: Vec<SpinorState>,
    /// Integrator counters; zero for spectral propagation.
    pub stats: StepStats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|o| o.tau).collect()
    }

    pub fn series(&self, f: impl Fn(&Observables) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }
}

/// `start, start + Δ, …` up to and including `end` (within rounding).
pub fn sample_times(start: f64, end: f64, interval: f64) -> Result<Vec<f64>> {
    if !(interval > 0.0) || !(end > start) {
        return Err(OscarError::domain(format!(
            "need end > start and a positive interval, got [{start}, {end}] step {interval}"
        )));
    }
    let count = ((end - start) / interval + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| start + k as f64 * interval).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub tolerances: Tolerances,
    pub sample_interval: f64,
    /// Times at which full states are kept.
    pub snapshot_times: Vec<f64>,
    pub leakage_tolerance: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            tolerances: DEFAULT_TOLERANCES,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
            snapshot_times: Vec::new(),
            leakage_tolerance: DEFAULT_TOP_LEAKAGE_TOLERANCE,
        }
    }
}

/// Interaction-picture coefficient equations, packed as `(re, im)` pairs in
/// spin-major order.
struct InteractionPicture {
    size: usize,
    half_eps: f64,
    eta: f64,
    weights: Vec<f64>,
}

impl OdeSystem for InteractionPicture {
    fn dim(&self) -> usize {
        4 * self.size
    }

    fn rhs(&self, tau: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.size;
        let b = as_complex(y);
        let d = as_complex_mut(dy);
        let up = C64::from_polar(1.0, tau); // e^{iτ} multiplies the lowering partner
        let down = up.conj();
        let (b_alpha, b_beta) = b.split_at(n);
        let (d_alpha, d_beta) = d.split_at_mut(n);
        for (own, other, out, coupling) in [
            (b_alpha, b_beta, d_alpha, -self.eta),
            (b_beta, b_alpha, d_beta, self.eta),
        ] {
            let w = &self.weights;
            for k in 0..n {
                let mut v = other[k] * self.half_eps;
                if k > 0 {
                    v += own[k - 1] * up * (coupling * w[k - 1]);
                }
                if k + 1 < n {
                    v += own[k + 1] * down * (coupling * w[k]);
                }
                // ḃ = −i v
                out[k] = C64::new(v.im, -v.re);
            }
        }
    }
}

/// View packed `(re, im)` pairs as complex numbers.
fn as_complex(y: &[f64]) -> &[C64] {
    assert!(y.len() % 2 == 0);
    // SAFETY: Complex<f64> is #[repr(C)] { re, im } with the alignment of f64.
    unsafe { std::slice::from_raw_parts(y.as_ptr().cast::<C64>(), y.len() / 2) }
}

fn as_complex_mut(y: &mut [f64]) -> &mut [C64] {
    assert!(y.len() % 2 == 0);
    // SAFETY: as in `as_complex`; the borrow is unique.
    unsafe { std::slice::from_raw_parts_mut(y.as_mut_ptr().cast::<C64>(), y.len() / 2) }
}

fn pack_interaction(state: &SpinorState) -> Vec<f64> {
    let mut y = Vec::with_capacity(4 * state.basis_size());
    for (k, c) in state.c_alpha.iter().enumerate().chain(state.c_beta.iter().enumerate()) {
        let b = c * C64::from_polar(1.0, (k as f64 + 0.5) * state.tau);
        y.push(b.re);
        y.push(b.im);
    }
    y
}

fn unpack_interaction(y: &[f64], size: usize, tau: f64) -> SpinorState {
    let comp = |offset: usize| -> Vec<C64> {
        (0..size)
            .map(|k| {
                let i = 2 * (offset + k);
                C64::new(y[i], y[i + 1]) * C64::from_polar(1.0, -(k as f64 + 0.5) * tau)
            })
            .collect()
    };
    SpinorState {
        c_alpha: comp(0),
        c_beta: comp(size),
        tau,
    }
}

/// Merge sample and snapshot times into one sorted output schedule.
fn schedule(samples: &[f64], snapshots: &[f64]) -> Vec<(f64, bool, bool)> {
    let mut out: Vec<(f64, bool, bool)> = samples.iter().map(|&t| (t, true, false)).collect();
    for &t in snapshots {
        match out.iter_mut().find(|e| (e.0 - t).abs() <= 1e-12 * t.abs().max(1.0)) {
            Some(e) => e.2 = true,
            None => out.push((t, false, true)),
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn check_top_leakage(state: &SpinorState, tolerance: f64) -> Result<()> {
    let leak = state.top_leakage();
    if leak > tolerance {
        return Err(OscarError::Truncation {
            what: "top-of-basis population",
            value: leak,
            tolerance,
        });
    }
    Ok(())
}

/// Integrate `i ċ = H c` from `state.tau` to `tau_end` with adaptive steps.
pub fn evolve_ode(
    state: &SpinorState,
    params: &ModelParams,
    tau_end: f64,
    options: &OdeOptions,
) -> Result<Trajectory> {
    params.validate()?;
    if !params.is_unitary() {
        return Err(OscarError::domain(
            "the Schrödinger engine is unitary; use the master equation for q_inv, d_diff > 0",
        ));
    }
    let times = sample_times(state.tau, tau_end, options.sample_interval)?;
    let size = state.basis_size();
    let system = InteractionPicture {
        size,
        half_eps: 0.5 * params.epsilon,
        eta: params.eta,
        weights: fock::ladder_weights(size),
    };
    let mut stepper = DormandPrince::new(state.tau, pack_interaction(state), options.tolerances);
    let mut traj = Trajectory::default();
    for (tau, sample, snapshot) in schedule(&times, &options.snapshot_times) {
        if tau < state.tau {
            continue;
        }
        stepper.advance_to(&system, tau)?;
        let current = unpack_interaction(stepper.y(), size, tau);
        check_top_leakage(&current, options.leakage_tolerance)?;
        if sample {
            traj.samples.push(expectation_suite(&current, params));
        }
        if snapshot {
            traj.snapshots.push(current);
        }
    }
    traj.stats = stepper.stats();
    Ok(traj)
}

/// Eigendecomposition of the Hamiltonian, reusable across initial states.
#[derive(Debug, Clone)]
pub struct SpectralPropagator {
    params: ModelParams,
    size: usize,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl SpectralPropagator {
    pub fn new(params: &ModelParams, size: usize) -> Result<Self> {
        params.validate()?;
        if !params.is_unitary() {
            return Err(OscarError::domain("spectral propagation requires q_inv = d_diff = 0"));
        }
        let h = model::hamiltonian_matrix(params, size);
        let eig = SymmetricEigen::try_new(h, f64::EPSILON, 0)
            .ok_or_else(|| OscarError::LinAlg("symmetric eigendecomposition did not converge".into()))?;
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(OscarError::LinAlg("non-finite eigenvalue".into()));
        }
        Ok(Self {
            params: *params,
            size,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Eigenvector `j` as a spinor state.
    pub fn eigenstate(&self, j: usize) -> SpinorState {
        let v = self.eigenvectors.column(j).map(|x| C64::new(x, 0.0));
        SpinorState::from_stacked(&v.into_owned(), 0.0).expect("basis size >= 1")
    }

    /// Amplitudes in the eigenbasis, keeping only those above `cutoff`.
    fn project(&self, state: &SpinorState) -> Result<(Vec<usize>, Vec<C64>)> {
        if state.basis_size() != self.size {
            return Err(OscarError::domain(format!(
                "state has basis size {}, propagator {}",
                state.basis_size(),
                self.size
            )));
        }
        let c = state.stacked();
        let re = self.eigenvectors.tr_mul(&c.map(|x| x.re));
        let im = self.eigenvectors.tr_mul(&c.map(|x| x.im));
        let amps: Vec<C64> = re.iter().zip(im.iter()).map(|(&r, &i)| C64::new(r, i)).collect();
        let max = amps.iter().map(|a| a.norm()).fold(0.0, f64::max);
        let keep: Vec<usize> = (0..amps.len())
            .filter(|&j| amps[j].norm() > 1e-16 * max)
            .collect();
        let kept = keep.iter().map(|&j| amps[j]).collect();
        Ok((keep, kept))
    }

    /// The state at absolute time `tau`, given `state` at `state.tau`.
    pub fn propagate(&self, state: &SpinorState, tau: f64) -> Result<SpinorState> {
        let (keep, amps) = self.project(state)?;
        let basis = self.eigenvectors.select_columns(keep.iter());
        Ok(self.evaluate(&basis, &keep, &amps, tau - state.tau, tau))
    }

    fn evaluate(
        &self,
        basis: &DMatrix<f64>,
        keep: &[usize],
        amps: &[C64],
        dt: f64,
        tau: f64,
    ) -> SpinorState {
        let phased: Vec<C64> = keep
            .iter()
            .zip(amps)
            .map(|(&j, a)| a * C64::from_polar(1.0, -self.eigenvalues[j] * dt))
            .collect();
        let re = basis * DVector::from_iterator(phased.len(), phased.iter().map(|c| c.re));
        let im = basis * DVector::from_iterator(phased.len(), phased.iter().map(|c| c.im));
        let n = self.size;
        SpinorState {
            c_alpha: (0..n).map(|k| C64::new(re[k], im[k])).collect(),
            c_beta: (0..n).map(|k| C64::new(re[n + k], im[n + k])).collect(),
            tau,
        }
    }

    /// Observables at each of `sample_times` (absolute), plus snapshots.
    pub fn trajectory(
        &self,
        state: &SpinorState,
        sample_times: &[f64],
        snapshot_times: &[f64],
    ) -> Result<Trajectory> {
        let (keep, amps) = self.project(state)?;
        let basis = self.eigenvectors.select_columns(keep.iter());
        let mut traj = Trajectory::default();
        for (tau, sample, snapshot) in schedule(sample_times, snapshot_times) {
            let current = self.evaluate(&basis, &keep, &amps, tau - state.tau, tau);
            if sample {
                traj.samples.push(expectation_suite(&current, &self.params));
            }
            if snapshot {
                traj.snapshots.push(current);
            }
        }
        Ok(traj)
    }
}

/// Spectral propagation evaluated exactly at `sample_times`.
pub fn evolve_spectral(
    state: &SpinorState,
    params: &ModelParams,
    sample_times: &[f64],
) -> Result<Trajectory> {
    SpectralPropagator::new(params, state.basis_size())?.trajectory(state, sample_times, &[])
}
