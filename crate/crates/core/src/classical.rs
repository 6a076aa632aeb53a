//! Classical equations of motion for the cantilever coordinate and the spin
//! vector, which precesses about the effective field `B_eff = (ε, 0, −2ηz)`:
//!
//! ```text
//! ż = p          ṗ = −z + 2ηS_z
//! Ṡ = B_eff × S
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{OscarError, Result};
use crate::model::{self, ModelParams};
use crate::ode::{DormandPrince, OdeSystem, StepStats, Tolerances};
use crate::schrodinger::{sample_times, DEFAULT_SAMPLE_INTERVAL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalState {
    pub z: f64,
    pub p: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl ClassicalState {
    /// Spin of length ½ with Bloch angles `(theta, phi)`.
    pub fn new(z: f64, p: f64, spin_theta: f64, spin_phi: f64) -> Self {
        let (st, ct) = (0.5 * spin_theta.sin(), 0.5 * spin_theta.cos());
        Self {
            z,
            p,
            sx: st * spin_phi.cos(),
            sy: st * spin_phi.sin(),
            sz: ct,
        }
    }

    pub fn spin(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn spin_magnitude_sqr(&self) -> f64 {
        self.sx * self.sx + self.sy * self.sy + self.sz * self.sz
    }

    fn to_vec(self) -> Vec<f64> {
        vec![self.z, self.p, self.sx, self.sy, self.sz]
    }

    fn from_slice(y: &[f64]) -> Self {
        Self {
            z: y[0],
            p: y[1],
            sx: y[2],
            sy: y[3],
            sz: y[4],
        }
    }
}

/// Angle between the spin vector and `B_eff(z)`.
pub fn spin_field_angle(state: &ClassicalState, params: &ModelParams) -> Result<f64> {
    model::angle_between(state.spin(), params.effective_field(state.z))
        .ok_or_else(|| OscarError::domain("effective field or spin vector vanishes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalSample {
    pub tau: f64,
    pub state: ClassicalState,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassicalTrajectory {
    pub samples: Vec<ClassicalSample>,
    pub stats: StepStats,
}

impl ClassicalTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.tau).collect()
    }

    pub fn series(&self, f: impl Fn(&ClassicalState) -> f64) -> Vec<f64> {
        self.samples.iter().map(|s| f(&s.state)).collect()
    }
}

/// Default error control. The spin length is an exact invariant that the
/// integrator does not preserve; `1e-14` holds its drift below `1e-10` over
/// several thousand periods.
pub const DEFAULT_TOLERANCES: Tolerances = Tolerances {
    rtol: 1e-14,
    atol: 1e-17,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalOptions {
    pub tolerances: Tolerances,
    pub sample_interval: f64,
}

impl Default for ClassicalOptions {
    fn default() -> Self {
        Self {
            tolerances: DEFAULT_TOLERANCES,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
        }
    }
}

struct Equations<'a>(&'a ModelParams);

impl OdeSystem for Equations<'_> {
    fn dim(&self) -> usize {
        5
    }

    fn rhs(&self, _tau: f64, y: &[f64], dy: &mut [f64]) {
        let (eta, eps) = (self.0.eta, self.0.epsilon);
        let (z, p, sx, sy, sz) = (y[0], y[1], y[2], y[3], y[4]);
        let bz = -2.0 * eta * z;
        dy[0] = p;
        dy[1] = -z + 2.0 * eta * sz;
        // B × S with B = (ε, 0, bz)
        dy[2] = -bz * sy;
        dy[3] = bz * sx - eps * sz;
        dy[4] = eps * sy;
    }
}

/// Integrate from `tau = 0` to `tau_end`, sampling every
/// `options.sample_interval`. Dissipation parameters are ignored.
pub fn evolve_classical(
    state: &ClassicalState,
    params: &ModelParams,
    tau_end: f64,
    options: &ClassicalOptions,
) -> Result<ClassicalTrajectory> {
    params.validate()?;
    let s2 = state.spin_magnitude_sqr();
    if (s2 - 0.25).abs() > 1e-10 {
        return Err(OscarError::domain(format!(
            "classical spin must have length 1/2, got |S|² = {s2}"
        )));
    }
    let times = sample_times(0.0, tau_end, options.sample_interval)?;
    let system = Equations(params);
    let mut stepper = DormandPrince::new(0.0, state.to_vec(), options.tolerances);
    let mut traj = ClassicalTrajectory::default();
    for tau in times {
        stepper.advance_to(&system, tau)?;
        traj.samples.push(ClassicalSample {
            tau,
            state: ClassicalState::from_slice(stepper.y()),
        });
    }
    traj.stats = stepper.stats();
    Ok(traj)
}
