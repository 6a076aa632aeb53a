//! Density-matrix evolution under the high-temperature ohmic master equation
//!
//! ```text
//! ∂ρ/∂τ = −i[H, ρ] − (1/2Q)(z − z′)(∂_z − ∂_z′)ρ − (D/Q)(z − z′)²ρ
//! ```
//!
//! expanded in the Fock product basis `u_n(z) u_m(z′)`. Each spin block
//! `ρ_{s,s′}` is an `N×N` coefficient matrix `c`; multiplication by `z`
//! becomes `X c`, by `z′` becomes `c X`, `∂_z` becomes `D c` and `∂_z′`
//! becomes `c Dᵀ = −c D`. The dissipator is then
//! `−(1/2Q)[X, {D, c}] − (D/Q)[X, [X, c]]`, and every product is banded.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OscarError, Result};
use crate::fock::{self, PositionGrid};
use crate::model::ModelParams;
use crate::schrodinger::{sample_times, SpinorState};
use crate::C64;

/// Largest step allowed by the fixed-step integrator regardless of rates.
pub const MAX_STEP: f64 = 2.0 * PI / 64.0;

pub const DEFAULT_LEAKAGE_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_POSITIVITY_FLOOR: f64 = -1e-4;

/// Natural log used for grid cells where the field is exactly zero.
pub const LN_FLOOR: f64 = -708.0;

/// Blocks are stored in the order `(+,+), (+,−), (−,+), (−,−)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    pub blocks: [DMatrix<C64>; 4],
    pub tau: f64,
}

fn block_index(s: usize, s_prime: usize) -> usize {
    2 * s + s_prime
}

impl DensityState {
    pub fn new(blocks: [DMatrix<C64>; 4], tau: f64) -> Result<Self> {
        let n = blocks[0].nrows();
        if n < 2 || blocks.iter().any(|b| b.nrows() != n || b.ncols() != n) {
            return Err(OscarError::domain("density blocks must be square, equal and N >= 2"));
        }
        Ok(Self { blocks, tau })
    }

    pub fn basis_size(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// Spin block `ρ_{s,s′}` with `0 = +½`, `1 = −½`.
    pub fn block(&self, s: usize, s_prime: usize) -> &DMatrix<C64> {
        &self.blocks[block_index(s, s_prime)]
    }

    pub fn coeff(&self, s: usize, s_prime: usize, n: usize, m: usize) -> C64 {
        self.block(s, s_prime)[(n, m)]
    }

    /// The `2N×2N` matrix with index `s·N + n`.
    pub fn flattened(&self) -> DMatrix<C64> {
        let n = self.basis_size();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for s in 0..2 {
            for t in 0..2 {
                m.view_mut((s * n, t * n), (n, n)).copy_from(self.block(s, t));
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        (self.blocks[0].trace() + self.blocks[3].trace()).re
    }

    /// `Tr ρ²`, exact for Hermitian ρ.
    pub fn purity(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .map(|c| c.norm_sqr())
            .sum()
    }

    /// `max |ρ_{ss′,nm} − conj(ρ_{s′s,mn})|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for s in 0..2 {
            for t in 0..2 {
                let a = self.block(s, t);
                let b = self.block(t, s);
                for (i, j) in (0..a.nrows()).flat_map(|i| (0..a.ncols()).map(move |j| (i, j))) {
                    worst = worst.max((a[(i, j)] - b[(j, i)].conj()).norm());
                }
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.flattened();
        // symmetrize away rounding so the Hermitian solver sees exact input
        let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        h.symmetric_eigenvalues().min()
    }

    /// Population of the highest retained Fock level.
    pub fn top_leakage(&self) -> f64 {
        let n = self.basis_size() - 1;
        self.blocks[0][(n, n)].re + self.blocks[3][(n, n)].re
    }
}

/// Pure state `ρ_{s,s′} = c_s c_{s′}^†`.
pub fn initial_density(state: &SpinorState) -> DensityState {
    let comps = [
        nalgebra::DVector::from_column_slice(&state.c_alpha),
        nalgebra::DVector::from_column_slice(&state.c_beta),
    ];
    let blocks = std::array::from_fn(|b| &comps[b / 2] * comps[b % 2].adjoint());
    DensityState {
        blocks,
        tau: state.tau,
    }
}

/// Bath part of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BathParams {
    pub q_inv: f64,
    pub d_diff: f64,
}

impl BathParams {
    pub fn from_model(params: &ModelParams) -> Self {
        Self {
            q_inv: params.q_inv,
            d_diff: params.d_diff,
        }
    }

    /// The master equation assumes `k_B T ≫ ħω_c`; false flags a bath
    /// outside that regime (with dissipation switched on).
    pub fn high_temperature_ok(&self) -> bool {
        self.q_inv == 0.0 || self.d_diff >= 1.0
    }
}

/// Scalar diagnostics of a density matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySummary {
    pub tau: f64,
    pub trace: f64,
    pub purity: f64,
    pub z: f64,
    pub z2: f64,
    pub p: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    pub hermiticity_defect: f64,
    pub top_leakage: f64,
}

/// Grid renderings `ln|Σ_s ρ_{s,s}(z,z′)|` and `ln|Σ_s ρ_{s,−s}(z,z′)|`,
/// indexed `(z, z′)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFields {
    pub ln_abs_sum_diag: DMatrix<f64>,
    pub ln_abs_sum_offdiag: DMatrix<f64>,
}

pub fn summarize(rho: &DensityState) -> DensitySummary {
    let n = rho.basis_size();
    let w = fock::ladder_weights(n);
    let (a, b) = (&rho.blocks[0], &rho.blocks[3]);
    let mut z = 0.0;
    let mut z2 = 0.0;
    let mut p = 0.0;
    for k in 0..n {
        let diag = a[(k, k)].re + b[(k, k)].re;
        z2 += (k as f64 + 0.5) * diag;
        if k + 1 < n {
            // tr(Xρ) collects ρ_{k+1,k} + ρ_{k,k+1}
            let lower = a[(k + 1, k)] + b[(k + 1, k)];
            let upper = a[(k, k + 1)] + b[(k, k + 1)];
            z += w[k] * (lower + upper).re;
            // P_{k,k+1} = −i w_k, P_{k+1,k} = i w_k
            p += w[k] * (C64::new(0.0, -1.0) * lower + C64::new(0.0, 1.0) * upper).re;
        }
        if k + 2 < n {
            // (X²)_{k,k+2} = √((k+1)(k+2))/2
            let x2 = 0.5 * ((k as f64 + 1.0) * (k as f64 + 2.0)).sqrt();
            z2 += x2 * (a[(k + 2, k)] + b[(k + 2, k)] + a[(k, k + 2)] + b[(k, k + 2)]).re;
        }
    }
    let ab = rho.blocks[1].trace();
    DensitySummary {
        tau: rho.tau,
        trace: rho.trace(),
        purity: rho.purity(),
        z,
        z2,
        p,
        sx: ab.re,
        sy: -ab.im,
        sz: 0.5 * (a.trace().re - b.trace().re),
        hermiticity_defect: rho.hermiticity_defect(),
        top_leakage: rho.top_leakage(),
    }
}

/// `ρ_{s,s′}(z, z′)` sampled on `grid × grid`, in block order.
pub fn grid_blocks(rho: &DensityState, grid: &PositionGrid) -> [DMatrix<C64>; 4] {
    let u = fock::basis_on_grid(rho.basis_size(), grid).map(|x| C64::new(x, 0.0));
    let ut = u.transpose();
    std::array::from_fn(|b| &u * &rho.blocks[b] * &ut)
}

/// Natural log of `|v|`, floored at [`LN_FLOOR`].
pub fn ln_abs(v: C64) -> f64 {
    let a = v.norm();
    if a > 0.0 {
        a.ln().max(LN_FLOOR)
    } else {
        LN_FLOOR
    }
}

pub fn density_fields(rho: &DensityState, grid: &PositionGrid) -> DensityFields {
    let g = grid_blocks(rho, grid);
    DensityFields {
        ln_abs_sum_diag: (&g[0] + &g[3]).map(ln_abs),
        ln_abs_sum_offdiag: (&g[1] + &g[2]).map(ln_abs),
    }
}

/// Scalar observables plus, if a grid is supplied, both ln-fields.
pub fn density_observables(
    rho: &DensityState,
    grid: Option<&PositionGrid>,
) -> (DensitySummary, Option<DensityFields>) {
    (summarize(rho), grid.map(|g| density_fields(rho, g)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterOptions {
    /// Fixed step; `None` picks [`default_step`].
    pub step: Option<f64>,
    pub sample_interval: f64,
    pub snapshot_times: Vec<f64>,
    /// Check positivity every this many samples (0 disables).
    pub positivity_every: usize,
    pub positivity_floor: f64,
    pub leakage_tolerance: f64,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self {
            step: None,
            sample_interval: PI / 4.0,
            snapshot_times: Vec::new(),
            positivity_every: 8,
            positivity_floor: DEFAULT_POSITIVITY_FLOOR,
            leakage_tolerance: DEFAULT_LEAKAGE_TOLERANCE,
        }
    }
}

/// Per-sample record; `min_eigenvalue` is present when it was checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub summary: DensitySummary,
    pub min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityTrajectory {
    pub samples: Vec<DensitySample>,
    pub snapshots: Vec<DensityState>,
    pub step: f64,
    /// Most negative eigenvalue seen at any check.
    pub min_eigenvalue: Option<f64>,
}

/// Step bound `min(2π/64, 0.1/ε, 2.5/ρ)`. The engine works in the
/// interaction picture of the oscillator, so `ρ` bounds the spectral radius
/// of the remaining generator: spin coupling, drive and bath terms.
pub fn default_step(params: &ModelParams, size: usize) -> f64 {
    let n = size as f64;
    let x_max = (2.0 * n).sqrt();
    let radius = 1.0
        + params.epsilon
        + 4.0 * params.eta * x_max
        + 2.0 * params.q_inv * x_max * x_max
        + 4.0 * params.d_diff * params.q_inv * x_max * x_max;
    let mut h = MAX_STEP.min(2.5 / radius);
    if params.epsilon > 0.0 {
        h = h.min(0.1 / params.epsilon);
    }
    h
}

/// The generator in the interaction picture of `H0 = ½(p² + z²)`, applied
/// block by block with banded products. There `c_ij` carries the phase
/// `e^{i(i−j)τ}` and the ladder bands of `X` and `D` pick up `e^{∓iτ}`, so
/// the step size no longer scales with the basis size.
struct Liouvillian {
    n: usize,
    w: Vec<f64>,
    eta: f64,
    half_eps: f64,
    friction: f64,
    diffusion: f64,
    /// Blocks that can become nonzero; a zero block stays zero when ε = 0.
    active: [bool; 4],
}

/// Column-major `N×N` scratch buffers for one block evaluation.
struct Scratch {
    xl: Vec<C64>,
    xr: Vec<C64>,
    comm: Vec<C64>,
    anti: Vec<C64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); n * n];
        Self {
            xl: z.clone(),
            xr: z.clone(),
            comm: z.clone(),
            anti: z,
        }
    }
}

impl Liouvillian {
    fn new(params: &ModelParams, rho: &DensityState) -> Self {
        let n = rho.basis_size();
        let active = std::array::from_fn(|b| {
            params.epsilon != 0.0 || rho.blocks[b].iter().any(|c| c.norm_sqr() > 0.0)
        });
        Self {
            n,
            w: fock::ladder_weights(n),
            eta: params.eta,
            half_eps: 0.5 * params.epsilon,
            friction: 0.5 * params.q_inv,
            diffusion: params.d_diff * params.q_inv,
            active,
        }
    }

    /// `out = X c` (if `left`) or `c X` for the rotating position matrix
    /// `X_{k+1,k} = w_k q`, `X_{k,k+1} = w_k q̄`.
    fn mul_x(&self, c: &[C64], out: &mut [C64], left: bool, q: C64) {
        let (n, w) = (self.n, &self.w);
        let qc = q.conj();
        if left {
            for j in 0..n {
                let col = &c[j * n..(j + 1) * n];
                let o = &mut out[j * n..(j + 1) * n];
                o[0] = col[1] * (qc * w[0]);
                for i in 1..n - 1 {
                    o[i] = col[i - 1] * (q * w[i - 1]) + col[i + 1] * (qc * w[i]);
                }
                o[n - 1] = col[n - 2] * (q * w[n - 2]);
            }
        } else {
            for j in 0..n {
                let lo = (j > 0).then(|| qc * w[j - 1]);
                let hi = (j + 1 < n).then(|| q * w[j]);
                for i in 0..n {
                    let mut v = C64::new(0.0, 0.0);
                    if let Some(a) = lo {
                        v += c[(j - 1) * n + i] * a;
                    }
                    if let Some(b) = hi {
                        v += c[(j + 1) * n + i] * b;
                    }
                    out[j * n + i] = v;
                }
            }
        }
    }

    /// `out = [X, m]`.
    fn commutator_x(&self, m: &[C64], out: &mut [C64], q: C64) {
        self.mul_x(m, out, true, q);
        let (n, w) = (self.n, &self.w);
        let qc = q.conj();
        for j in 0..n {
            let lo = (j > 0).then(|| qc * w[j - 1]);
            let hi = (j + 1 < n).then(|| q * w[j]);
            for i in 0..n {
                if let Some(a) = lo {
                    out[j * n + i] -= m[(j - 1) * n + i] * a;
                }
                if let Some(b) = hi {
                    out[j * n + i] -= m[(j + 1) * n + i] * b;
                }
            }
        }
    }

    /// `out = D c + c D` for the rotating derivative matrix
    /// `D_{k+1,k} = −w_k q`, `D_{k,k+1} = w_k q̄`.
    fn anticommutator_d(&self, c: &[C64], out: &mut [C64], q: C64) {
        let (n, w) = (self.n, &self.w);
        let qc = q.conj();
        for j in 0..n {
            for i in 0..n {
                let mut v = C64::new(0.0, 0.0);
                if i > 0 {
                    v -= c[j * n + i - 1] * (q * w[i - 1]);
                }
                if i + 1 < n {
                    v += c[j * n + i + 1] * (qc * w[i]);
                }
                if j > 0 {
                    v += c[(j - 1) * n + i] * (qc * w[j - 1]);
                }
                if j + 1 < n {
                    v -= c[(j + 1) * n + i] * (q * w[j]);
                }
                out[j * n + i] = v;
            }
        }
    }

    /// Derivative of block `(s, s′)` into `out`.
    fn apply_block(
        &self,
        rho: &[&[C64]; 4],
        s: usize,
        t: usize,
        q: C64,
        out: &mut [C64],
        scr: &mut Scratch,
    ) {
        let n = self.n;
        let c = rho[block_index(s, t)];
        let sigma = |k: usize| if k == 0 { 0.5 } else { -0.5 };
        let (sig_s, sig_t) = (sigma(s), sigma(t));
        let cross_s = rho[block_index(1 - s, t)];
        let cross_t = rho[block_index(s, 1 - t)];
        let i_unit = C64::new(0.0, 1.0);

        self.mul_x(c, &mut scr.xl, true, q);
        self.mul_x(c, &mut scr.xr, false, q);
        for k in 0..n * n {
            scr.comm[k] = scr.xl[k] - scr.xr[k];
        }
        // out ← 2iη(σ_s X c − σ_s′ c X) − i(ε/2)(c_{−s,s′} − c_{s,−s′})
        for k in 0..n * n {
            let coherent = (scr.xl[k] * sig_s - scr.xr[k] * sig_t) * (2.0 * self.eta)
                - (cross_s[k] - cross_t[k]) * self.half_eps;
            out[k] = i_unit * coherent;
        }
        if self.diffusion != 0.0 {
            // −(D/Q)[X, [X, c]]
            self.commutator_x(&scr.comm, &mut scr.xl, q);
            for k in 0..n * n {
                out[k] -= scr.xl[k] * self.diffusion;
            }
        }
        if self.friction != 0.0 {
            // −(1/2Q)[X, {D, c}]
            self.anticommutator_d(c, &mut scr.anti, q);
            self.commutator_x(&scr.anti, &mut scr.xr, q);
            for k in 0..n * n {
                out[k] -= scr.xr[k] * self.friction;
            }
        }
    }

    /// Full derivative at time `tau`; the `(−,+)` block is filled by
    /// Hermiticity.
    fn apply(&self, tau: f64, rho: &[Vec<C64>; 4], out: &mut [Vec<C64>; 4], scr: &mut Scratch) {
        let q = C64::from_polar(1.0, tau);
        let views: [&[C64]; 4] = std::array::from_fn(|b| rho[b].as_slice());
        for (s, t) in [(0, 0), (0, 1), (1, 1)] {
            let b = block_index(s, t);
            if self.active[b] {
                self.apply_block(&views, s, t, q, &mut out[b], scr);
            } else {
                out[b].iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
            }
        }
        let n = self.n;
        let (upper, lower) = out.split_at_mut(2);
        for j in 0..n {
            for i in 0..n {
                lower[0][j * n + i] = upper[1][i * n + j].conj();
            }
        }
    }
}

/// Classical fourth-order Runge–Kutta on the packed blocks.
struct Rk4 {
    k: [[Vec<C64>; 4]; 4],
    tmp: [Vec<C64>; 4],
    scratch: Scratch,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        let z = || std::array::from_fn(|_| vec![C64::new(0.0, 0.0); n * n]);
        Self {
            k: std::array::from_fn(|_| z()),
            tmp: z(),
            scratch: Scratch::new(n),
        }
    }

    fn step(&mut self, op: &Liouvillian, tau: f64, y: &mut [Vec<C64>; 4], h: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        op.apply(tau, y, k1, &mut self.scratch);
        for b in 0..4 {
            for (t, (yv, kv)) in self.tmp[b].iter_mut().zip(y[b].iter().zip(&k1[b])) {
                *t = yv + kv * (0.5 * h);
            }
        }
        op.apply(tau + 0.5 * h, &self.tmp, k2, &mut self.scratch);
        for b in 0..4 {
            for (t, (yv, kv)) in self.tmp[b].iter_mut().zip(y[b].iter().zip(&k2[b])) {
                *t = yv + kv * (0.5 * h);
            }
        }
        op.apply(tau + 0.5 * h, &self.tmp, k3, &mut self.scratch);
        for b in 0..4 {
            for (t, (yv, kv)) in self.tmp[b].iter_mut().zip(y[b].iter().zip(&k3[b])) {
                *t = yv + kv * h;
            }
        }
        op.apply(tau + h, &self.tmp, k4, &mut self.scratch);
        let sixth = h / 6.0;
        for b in 0..4 {
            for (i, v) in y[b].iter_mut().enumerate() {
                *v += (k1[b][i] + (k2[b][i] + k3[b][i]) * 2.0 + k4[b][i]) * sixth;
            }
        }
    }
}

/// Multiply `c_ij` by `e^{i·sign·(i−j)τ}` in every block.
fn rotate(y: &mut [Vec<C64>; 4], n: usize, tau: f64, sign: f64) {
    // phases e^{iθk} for k = −(n−1)..(n−1)
    let phases: Vec<C64> = (0..2 * n - 1)
        .map(|k| C64::from_polar(1.0, sign * (k as f64 - (n as f64 - 1.0)) * tau))
        .collect();
    for block in y.iter_mut() {
        for j in 0..n {
            for i in 0..n {
                block[j * n + i] *= phases[i + n - 1 - j];
            }
        }
    }
}

fn pack(rho: &DensityState) -> [Vec<C64>; 4] {
    let n = rho.basis_size();
    let mut y = std::array::from_fn(|b| rho.blocks[b].as_slice().to_vec());
    rotate(&mut y, n, rho.tau, 1.0);
    y
}

fn unpack(y: &[Vec<C64>; 4], n: usize, tau: f64) -> DensityState {
    let mut lab = y.clone();
    rotate(&mut lab, n, tau, -1.0);
    DensityState {
        blocks: std::array::from_fn(|b| DMatrix::from_column_slice(n, n, &lab[b])),
        tau,
    }
}

/// Advance `rho` to `tau_end` with fixed RK4 steps, sampling every
/// `options.sample_interval`. The step is shortened uniformly within each
/// output interval so that sample and snapshot times are hit exactly.
pub fn evolve_master(
    rho: &DensityState,
    params: &ModelParams,
    tau_end: f64,
    options: &MasterOptions,
) -> Result<DensityTrajectory> {
    evolve_master_observed(rho, params, tau_end, options, |_, _| {})
}

/// [`evolve_master`] that also hands every sampled state to `observer`,
/// so per-sample analysis does not need the states kept as snapshots.
pub fn evolve_master_observed(
    rho: &DensityState,
    params: &ModelParams,
    tau_end: f64,
    options: &MasterOptions,
    mut observer: impl FnMut(&DensityState, &DensitySample),
) -> Result<DensityTrajectory> {
    params.validate()?;
    let n = rho.basis_size();
    let h_max = match options.step {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(OscarError::domain(format!("step must be positive, got {h}"))),
        None => default_step(params, n),
    };
    let times = sample_times(rho.tau, tau_end, options.sample_interval)?;
    let mut schedule: Vec<(f64, bool, bool)> = times.iter().map(|&t| (t, true, false)).collect();
    for &t in &options.snapshot_times {
        if t < rho.tau || t > tau_end {
            return Err(OscarError::domain(format!(
                "snapshot time {t} outside [{}, {tau_end}]",
                rho.tau
            )));
        }
        match schedule
            .iter_mut()
            .find(|e| (e.0 - t).abs() <= 1e-12 * t.abs().max(1.0))
        {
            Some(e) => e.2 = true,
            None => schedule.push((t, false, true)),
        }
    }
    schedule.sort_by(|a, b| a.0.total_cmp(&b.0));

    let op = Liouvillian::new(params, rho);
    let mut rk = Rk4::new(n);
    let mut y = pack(rho);
    let mut tau = rho.tau;
    let mut traj = DensityTrajectory {
        step: h_max,
        ..Default::default()
    };
    let mut sample_count = 0usize;
    for (target, sample, snapshot) in schedule {
        let span = target - tau;
        if span > 0.0 {
            let steps = (span / h_max).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for k in 0..steps {
                rk.step(&op, tau + k as f64 * h, &mut y, h);
            }
        }
        tau = target;
        let state = unpack(&y, n, tau);
        let summary = summarize(&state);
        if !summary.trace.is_finite() {
            return Err(OscarError::Convergence {
                tau,
                reason: "density matrix became non-finite".into(),
            });
        }
        if summary.top_leakage > options.leakage_tolerance {
            return Err(OscarError::Truncation {
                what: "top-of-basis population",
                value: summary.top_leakage,
                tolerance: options.leakage_tolerance,
            });
        }
        if sample {
            let check = options.positivity_every > 0 && sample_count % options.positivity_every == 0;
            let min_eigenvalue = check.then(|| state.min_eigenvalue());
            if let Some(lam) = min_eigenvalue {
                traj.min_eigenvalue = Some(traj.min_eigenvalue.map_or(lam, |m: f64| m.min(lam)));
                if lam < options.positivity_floor {
                    return Err(OscarError::Positivity {
                        tau,
                        min_eigenvalue: lam,
                        floor: options.positivity_floor,
                    });
                }
            }
            let record = DensitySample {
                summary,
                min_eigenvalue,
            };
            observer(&state, &record);
            traj.samples.push(record);
            sample_count += 1;
        }
        if snapshot {
            traj.snapshots.push(state);
        }
    }
    Ok(traj)
}
