//! Driven (Rabi) dynamics of a qubit whose detuning is shifted by the bath.
//!
//! For a bath eigenvalue `Λ = λ A_z` the rotating-frame Hamiltonian is
//! `Ω S_x + Δ S_z` with `Δ = Λ + δ`, so the Bloch vector precesses at
//! `ω = √(Δ² + Ω²)` about `n = (Ω, 0, Δ)/ω`. Starting from `S_z = +1/2`,
//!
//! * `2 S_z(t) = f + (Ω²/ω²) cos ωt = Re[f + ζ(t)]`, with `f = Δ²/ω²` and
//!   `ζ = (Ω²/ω²) e^{-iωt}`,
//! * `2 S_y(t) = -(Ω/ω) sin ωt`,
//! * `2 S_x(t) = (ΔΩ/ω²)(1 - cos ωt)`.
//!
//! Bath averages of these are taken over an [`Ensemble`].

mod damping;
mod ensemble;
mod slow_noise;

pub use damping::{damped_lineshape, damped_rabi, damped_steady_state, BlochSeries};
pub use ensemble::{Averaging, BathLaw, Ensemble, HERMITE_NODES};
pub use slow_noise::{
    magnus_envelope, ou_exact_envelope, squared_noise_spectrum, trajectory_rabi_mc, MagnusEnvelope,
    MAGNUS_VALIDITY_LIMIT,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_evolution::QubitParams;
use crate::stats::Estimate;

/// Qubit Bloch vector `(⟨S_x⟩, ⟨S_y⟩, ⟨S_z⟩)`; pure states have length 1/2.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BlochVector {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl BlochVector {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Self {
        BlochVector { sx, sy, sz }
    }

    /// `S_z = +1/2`.
    pub fn up() -> Self {
        Self::new(0.0, 0.0, 0.5)
    }

    /// `S_z = -1/2`.
    pub fn down() -> Self {
        Self::new(0.0, 0.0, -0.5)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.sx * self.sx + self.sy * self.sy + self.sz * self.sz
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Initial qubit state for driven evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Up,
    Down,
}

impl InitialState {
    pub fn bloch(self) -> BlochVector {
        match self {
            InitialState::Up => BlochVector::up(),
            InitialState::Down => BlochVector::down(),
        }
    }
}

/// Effective rotation for one bath eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationFrame {
    /// `ω = √(Δ² + Ω²)`.
    pub omega_eff: f64,
    /// `n = (Ω, 0, Δ)/ω`.
    pub axis: [f64; 3],
}

/// Rotation generated by `Ω S_x + (Λ + δ) S_z`, with `Λ = λ A_z` passed as `shift`.
pub fn rotation_frame(shift: f64, qp: &QubitParams) -> Result<RotationFrame> {
    let delta = shift + qp.delta;
    let omega_eff = delta.hypot(qp.omega_rabi);
    if omega_eff == 0.0 {
        return Err(Error::Degenerate(
            "no drive and zero effective detuning: rotation axis undefined".into(),
        ));
    }
    Ok(RotationFrame {
        omega_eff,
        axis: [qp.omega_rabi / omega_eff, 0.0, delta / omega_eff],
    })
}

/// `U(t) = cos(ωt/2) 1 - i sin(ωt/2) n·σ` in the basis `(|↑⟩, |↓⟩)`.
pub fn propagator(frame: &RotationFrame, t: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (0.5 * frame.omega_eff * t).sin_cos();
    let [nx, ny, nz] = frame.axis;
    let i = Complex64::i();
    [
        [c - i * s * nz, -i * s * Complex64::new(nx, -ny)],
        [-i * s * Complex64::new(nx, ny), c + i * s * nz],
    ]
}

/// Rodrigues rotation of `v` by `angle` about the unit vector `axis`.
pub fn rotate(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let dot = axis[0] * v[0] + axis[1] * v[1] + axis[2] * v[2];
    let cross = [
        axis[1] * v[2] - axis[2] * v[1],
        axis[2] * v[0] - axis[0] * v[2],
        axis[0] * v[1] - axis[1] * v[0],
    ];
    std::array::from_fn(|k| dot * axis[k] + c * (v[k] - dot * axis[k]) + s * cross[k])
}

/// Undamped Bloch vector at time `t` for one bath eigenvalue.
pub fn bloch_at_eigenvalue(
    shift: f64,
    qp: &QubitParams,
    initial: BlochVector,
    t: f64,
) -> BlochVector {
    match rotation_frame(shift, qp) {
        Ok(frame) => BlochVector::from_array(rotate(
            initial.to_array(),
            frame.axis,
            frame.omega_eff * t,
        )),
        Err(_) => initial,
    }
}

/// Time-independent population `f` and oscillating part `ζ(t)` for one eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaF {
    pub f: f64,
    pub zeta: Complex64,
}

/// `f = Δ²/(Δ² + Ω²)`, `ζ = Ω² e^{-iωt}/(Δ² + Ω²)` with `Δ = shift + δ`.
///
/// Without drive and detuning the qubit does not move: `f = 1`, `ζ = 0`.
pub fn zeta_f_at_eigenvalue(shift: f64, qp: &QubitParams, t: f64) -> ZetaF {
    let delta = shift + qp.delta;
    let w2 = delta * delta + qp.omega_rabi * qp.omega_rabi;
    if w2 == 0.0 {
        return ZetaF {
            f: 1.0,
            zeta: Complex64::new(0.0, 0.0),
        };
    }
    let a = qp.omega_rabi * qp.omega_rabi / w2;
    ZetaF {
        f: delta * delta / w2,
        zeta: Complex64::from_polar(a, -w2.sqrt() * t),
    }
}

/// Bath-averaged Rabi signal for a qubit starting in `S_z = +1/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RabiEnvelope {
    pub t: Vec<f64>,
    /// `⟨f⟩`.
    pub f: Estimate,
    /// `⟨ζ(t)⟩`.
    pub zeta: Vec<Complex64>,
    /// `2⟨S_x⟩`, `2⟨S_y⟩`, `2⟨S_z⟩` with standard errors (zero for deterministic methods).
    pub sx2: Vec<Estimate>,
    pub sy2: Vec<Estimate>,
    pub sz2: Vec<Estimate>,
}

/// Average the undamped Rabi signal over the bath law.
pub fn rabi_average(
    law: BathLaw,
    qp: &QubitParams,
    t_grid: &[f64],
    method: &Averaging,
) -> Result<RabiEnvelope> {
    qp.check()?;
    let t_max = t_grid.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let ensemble = Ensemble::new(law, method, qp, t_max)?;
    Ok(rabi_average_over(&ensemble, qp, t_grid))
}

/// [`rabi_average`] over a prebuilt ensemble.
pub fn rabi_average_over(ensemble: &Ensemble, qp: &QubitParams, t_grid: &[f64]) -> RabiEnvelope {
    let omega = qp.omega_rabi;
    let f = ensemble.expect(|x| zeta_f_at_eigenvalue(x, qp, 0.0).f);
    let series = ensemble.expect_series(t_grid, |x, t| {
        let delta = x + qp.delta;
        let w2 = delta * delta + omega * omega;
        if w2 == 0.0 {
            return [0.0, 0.0, 0.0, 0.0, 1.0];
        }
        let w = w2.sqrt();
        let (s, c) = (w * t).sin_cos();
        let a = omega * omega / w2;
        [
            a * c,
            -a * s,
            delta * omega / w2 * (1.0 - c),
            -omega / w * s,
            delta * delta / w2 + a * c,
        ]
    });
    RabiEnvelope {
        t: t_grid.to_vec(),
        f,
        zeta: series
            .iter()
            .map(|e| Complex64::new(e[0].mean, e[1].mean))
            .collect(),
        sx2: series.iter().map(|e| e[2]).collect(),
        sy2: series.iter().map(|e| e[3]).collect(),
        sz2: series.iter().map(|e| e[4]).collect(),
    }
}

/// Weak-drive Lorentzian estimate `1 - Ω²/(δ̃² + λ²⟨ΔA_z²⟩ + Ω²)` of `⟨f⟩`.
pub fn rough_lineshape(delta_tilde: f64, qp: &QubitParams, lambda_var: f64) -> f64 {
    let o2 = qp.omega_rabi * qp.omega_rabi;
    let denom = delta_tilde * delta_tilde + lambda_var + o2;
    if denom == 0.0 {
        return 1.0;
    }
    1.0 - o2 / denom
}

/// Rate of the initial Gaussian decay of `|⟨ζ(t)⟩|`,
/// `γ = Ω²/(1 - ⟨f⟩) · √Var(1/ω)`, so that `|⟨ζ⟩|/(1 - ⟨f⟩) ≈ 1 - γ² t²/2`.
pub fn short_time_rate(law: BathLaw, qp: &QubitParams, method: &Averaging) -> Result<f64> {
    qp.check()?;
    if !(qp.omega_rabi > 0.0) {
        return Err(Error::arg("omega_rabi", "short-time rate needs a drive"));
    }
    let ensemble = Ensemble::new(law, method, qp, 0.0)?;
    let inv = |x: f64| 1.0 / (x + qp.delta).hypot(qp.omega_rabi);
    let f = ensemble.expect(|x| zeta_f_at_eigenvalue(x, qp, 0.0).f).mean;
    if !(1.0 - f > 1e-14) {
        return Err(Error::Degenerate(
            "no oscillating weight: 1 - <f> vanishes".into(),
        ));
    }
    let mean_inv = ensemble.expect(inv).mean;
    let var_inv = ensemble.expect(|x| (inv(x) - mean_inv).powi(2)).mean;
    if !(var_inv > 0.0) {
        return Err(Error::Degenerate(
            "frozen bath: all eigenvalues rotate at the same rate".into(),
        ));
    }
    Ok(qp.omega_rabi.powi(2) / (1.0 - f) * var_inv.sqrt())
}

/// Least-squares fit `y ≈ c + a cos(ωt) + b sin(ωt)` at fixed `ω`.
///
/// Returns `(c, amplitude, phase)` with `y ≈ c + amplitude · cos(ωt + phase)`.
pub fn fit_oscillation(t: &[f64], y: &[f64], omega: f64) -> Result<(f64, f64, f64)> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::arg("t", "need at least three samples"));
    }
    let mut normal = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = nalgebra::Vector3::<f64>::zeros();
    for (&ti, &yi) in t.iter().zip(y) {
        let (s, c) = (omega * ti).sin_cos();
        let row = nalgebra::Vector3::new(1.0, c, s);
        normal += row * row.transpose();
        rhs += row * yi;
    }
    let sol = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("oscillation fit is singular".into()))?;
    let (c0, a, b) = (sol[0], sol[1], sol[2]);
    Ok((c0, a.hypot(b), (-b).atan2(a)))
}
