//! Undriven evolution: free-induction decay, Ramsey fringes, spin echo,
//! Markovian damping and correlations between repeated measurements.
//!
//! In the quasi-static limit the bath shifts the qubit frequency by `λ A_z`
//! for the duration of a shot, so every quantity here is an average of a
//! phase factor over the bath law.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{BathSpec, NoiseKind, NoiseModel, OuProcess};
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::rng;
use crate::stats::Estimate;

/// Qubit drive and Markovian decay rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitParams {
    /// Detuning δ.
    pub delta: f64,
    /// Rabi frequency Ω.
    #[serde(default)]
    pub omega_rabi: f64,
    /// Transverse decay rate.
    #[serde(default)]
    pub gamma2: f64,
    /// Longitudinal decay rate.
    #[serde(default)]
    pub gamma1: f64,
}

impl QubitParams {
    pub fn new(delta: f64, omega_rabi: f64) -> Self {
        QubitParams {
            delta,
            omega_rabi,
            gamma2: 0.0,
            gamma1: 0.0,
        }
    }

    /// Radiative damping: `γ₁ = 2γ₂`.
    pub fn with_damping(self, gamma2: f64) -> Self {
        QubitParams {
            gamma2,
            gamma1: 2.0 * gamma2,
            ..self
        }
    }

    pub fn with_rates(self, gamma1: f64, gamma2: f64) -> Self {
        QubitParams {
            gamma1,
            gamma2,
            ..self
        }
    }

    pub fn is_damped(&self) -> bool {
        self.gamma1 > 0.0 || self.gamma2 > 0.0
    }

    pub fn check(&self) -> Result<()> {
        if !self.delta.is_finite() {
            return Err(Error::arg("delta", "must be finite"));
        }
        if !(self.omega_rabi >= 0.0 && self.omega_rabi.is_finite()) {
            return Err(Error::arg("omega_rabi", "must be finite and >= 0"));
        }
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0) {
            return Err(Error::arg("gamma", "decay rates must be >= 0"));
        }
        Ok(())
    }
}

/// Delays before and after the refocusing π pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoSchedule {
    pub t1: f64,
    pub t2: f64,
}

impl EchoSchedule {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t1 >= 0.0 && t2 >= 0.0) {
            return Err(Error::arg("t1/t2", "echo delays must be >= 0"));
        }
        Ok(EchoSchedule { t1, t2 })
    }
}

/// Bath-averaged coherence `Φ(t) = e^{-iδt} Π_k [cos(λα_k t/2) - i P_k sin(λα_k t/2)]`.
pub fn fid_coherence(spec: &BathSpec, delta: f64, t: f64) -> Complex64 {
    let lt = 0.5 * spec.lambda() * t;
    let product = spec
        .alpha()
        .iter()
        .zip(spec.polarization())
        .fold(Complex64::new(1.0, 0.0), |acc, (a, p)| {
            let (s, c) = (lt * a).sin_cos();
            acc * Complex64::new(c, -p * s)
        });
    Complex64::from_polar(1.0, -delta * t) * product
}

/// Quadratic short-time expansion of `|Φ(t)|²`: `1 - (λt)²/4 · Σ α_k²(1 - P_k²)`.
///
/// Accurate for `λt ≲ 0.1`.
pub fn fid_fidelity_short_time(spec: &BathSpec, t: f64) -> f64 {
    let g = gamma_fid(spec);
    1.0 - 0.25 * (g * t).powi(2)
}

/// FID rate `γ = λ √(Σ α_k² (1 - P_k²))`, equal to `2λ√⟨ΔA_z²⟩`.
pub fn gamma_fid(spec: &BathSpec) -> f64 {
    let s: f64 = spec
        .alpha()
        .iter()
        .zip(spec.polarization())
        .map(|(a, p)| a * a * (1.0 - p * p))
        .sum();
    spec.lambda() * s.sqrt()
}

/// Large-N Gaussian limit of `|Φ(t)|`: `exp(-γ² t² / 8)`.
pub fn fid_gaussian(spec: &BathSpec, t: f64) -> f64 {
    (-(gamma_fid(spec) * t).powi(2) / 8.0).exp()
}

/// FID coherence with additional Markovian transverse decay `e^{-γ₂ t}`.
pub fn fid_with_markov(spec: &BathSpec, qp: &QubitParams, t: f64) -> Result<Complex64> {
    if qp.omega_rabi != 0.0 {
        return Err(Error::arg("omega_rabi", "free evolution requires zero drive"));
    }
    Ok(fid_coherence(spec, qp.delta, t) * (-qp.gamma2 * t).exp())
}

/// Ramsey signal `|Φ(t)|²` for ideal π/2 pulses.
pub fn ramsey_probability(spec: &BathSpec, delta: f64, t: f64) -> f64 {
    fid_coherence(spec, delta, t).norm_sqr().min(1.0)
}

/// Echo fidelity: exact bath average and its Gaussian approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EchoFidelity {
    pub exact: f64,
    pub gaussian: f64,
}

/// `⟨cos²[λ A_z (t1 - t2)/2]⟩` for a quasi-static bath.
///
/// The average equals `(1 + Re Φ(t1 - t2))/2` with `Φ` the zero-detuning FID
/// coherence, which is exact for independent bath spins and any `N`. The
/// Gaussian companion is `(1 + exp[-γ² (t1 - t2)²/8])/2`.
pub fn spin_echo_fidelity(spec: &BathSpec, sched: &EchoSchedule) -> EchoFidelity {
    let dt = sched.t1 - sched.t2;
    let exact = 0.5 * (1.0 + fid_coherence(spec, 0.0, dt).re);
    EchoFidelity {
        exact,
        gaussian: 0.5 * (1.0 + fid_gaussian(spec, dt)),
    }
}

/// `J(t) = ∫ S(ω) sin⁴(ωt/2)/(ω/2)² dω` over the real line.
///
/// The quasi-static part of the noise is refocused by the echo and does not
/// contribute; static noise gives zero.
pub fn echo_decorrelation_integral(noise: &NoiseModel, t: f64) -> Result<f64> {
    noise.check()?;
    if t == 0.0 || noise.is_static() {
        return Ok(0.0);
    }
    let t = t.abs();
    let kernel = |w: f64| {
        let x = 0.5 * w * t;
        let sinc = if x.abs() < 1e-8 { 1.0 } else { x.sin() / x };
        // sin⁴(x)/(ω/2)² = t² sin²(x) sinc²(x)
        t * t * x.sin().powi(2) * sinc * sinc
    };
    let integrand = |w: f64| noise.spectral_density(w).unwrap() * kernel(w);
    let scale = noise.variance * t * t;
    let tol = Tolerance::new(1e-14 * scale, 1e-10);
    let period = 2.0 * PI / t;
    let segment = |lo: f64, hi: f64, marks: &[f64]| {
        quadrature::oscillatory_segment(integrand, lo, hi, period, marks, tol)
    };
    let (value, error) = match &noise.kind {
        NoiseKind::Ou { gamma_c } => {
            let g = *gamma_c;
            let marks = [g, 10.0 * g, 100.0 * g];
            let mut top = (1000.0 * g).max(200.0 / t);
            let first = segment(0.0, top, &marks);
            let (mut value, mut error) = (2.0 * first.value, 2.0 * first.error);
            // beyond `top`: ∫ 2 S · 4/ω² ≤ 8 var γ / (3π top³)
            let tail = |top: f64| 8.0 * noise.variance * g / (3.0 * PI * top.powi(3));
            for _ in 0..4 {
                let target = 1e-9 * value.abs();
                if tail(top) <= target {
                    break;
                }
                let next = top * (tail(top) / target).cbrt() * 1.05;
                let r = segment(top, next, &marks);
                value += 2.0 * r.value;
                error += 2.0 * r.error;
                top = next;
            }
            (value, error + tail(top))
        }
        NoiseKind::Spectral { omega, .. } => {
            let r = segment(0.0, *omega.last().unwrap(), omega);
            (2.0 * r.value, 2.0 * r.error)
        }
        NoiseKind::Static => unreachable!(),
    };
    let tolerance = 1e-8 * value.abs().max(1e-12 * scale);
    if error > tolerance {
        return Err(Error::Quadrature { error, tolerance });
    }
    Ok(value)
}

/// Echo signal with equal arms `t` under decorrelating Gaussian noise:
/// `1/2 + 1/2 e^{-2γ₂t} exp[-λ² J(t)]`.
pub fn echo_with_decorrelation(
    noise: &NoiseModel,
    qp: &QubitParams,
    lambda: f64,
    t: f64,
) -> Result<f64> {
    let j = echo_decorrelation_integral(noise, t)?;
    Ok(0.5 + 0.5 * (-2.0 * qp.gamma2 * t).exp() * (-lambda * lambda * j).exp())
}

/// Connected correlation of two binary measurements separated by `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorResult {
    /// `(1/8) exp[-(λτ)² (⟨ΔA²⟩ - C(Δt))]`.
    pub value: f64,
    /// Gaussian quasi-static average `(1/4) e^{-s²}(cosh c - 1)`,
    /// `s² = (λτ)²⟨ΔA²⟩`, `c = (λτ)² C(Δt)`; the formula above is its large-`s²` limit.
    pub gaussian: f64,
    pub valid: bool,
    pub reason: Option<String>,
}

/// Correlator `⟨M_j M_k⟩ - ⟨M⟩²` of measurements `M = 1` with probability
/// `cos²(λ ΔA_z τ/2)`, each of duration `τ`, taken `dt` apart.
///
/// The bath field is taken relative to its mean. The result is flagged
/// invalid when the noise decorrelates within a shot (`Γ_c τ > 0.1`).
pub fn sequential_correlator(
    noise: &NoiseModel,
    lambda: f64,
    tau: f64,
    dt: f64,
) -> Result<CorrelatorResult> {
    noise.check()?;
    let lt2 = (lambda * tau).powi(2);
    let cov = noise.autocovariance(dt);
    let s2 = lt2 * noise.variance;
    let c = lt2 * cov;
    let value = 0.125 * (-(s2 - c)).exp();
    let gaussian = 0.25 * (-s2).exp() * (c.cosh() - 1.0);
    let scale = noise.cutoff() * tau.abs();
    let (valid, reason) = if scale > 0.1 {
        (
            false,
            Some(format!("noise decorrelates within a shot: cutoff·tau = {scale:.3} > 0.1")),
        )
    } else {
        (true, None)
    };
    Ok(CorrelatorResult {
        value,
        gaussian,
        valid,
        reason,
    })
}

/// Monte-Carlo estimate of [`sequential_correlator`] from simulated shot pairs.
///
/// Each pair draws the bath field from the stationary law, advances it by
/// `dt` along an exact OU step and records two Bernoulli outcomes.
pub fn sequential_correlator_mc(
    noise: &NoiseModel,
    lambda: f64,
    tau: f64,
    dt: f64,
    shots: usize,
    seed: u64,
) -> Result<Estimate> {
    if shots < 2 {
        return Err(Error::arg("shots", "need at least two shot pairs"));
    }
    let centered = NoiseModel {
        mean: 0.0,
        ..noise.clone()
    };
    let process = OuProcess::new(&centered, dt.max(f64::MIN_POSITIVE))?;
    let phase = 0.5 * lambda * tau;
    let outcomes: Vec<(f64, f64)> = rng::chunks(shots)
        .into_par_iter()
        .map(|(index, len)| {
            let mut rng = rng::substream(seed, index);
            (0..len)
                .map(|_| {
                    let a1 = process.start(&mut rng);
                    let a2 = if dt == 0.0 { a1 } else { process.step(a1, &mut rng) };
                    let m1 = rng.random::<f64>() < (phase * a1).cos().powi(2);
                    let m2 = rng.random::<f64>() < (phase * a2).cos().powi(2);
                    (f64::from(u8::from(m1)), f64::from(u8::from(m2)))
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    let n = outcomes.len() as f64;
    let m1 = outcomes.iter().map(|o| o.0).sum::<f64>() / n;
    let m2 = outcomes.iter().map(|o| o.1).sum::<f64>() / n;
    let products: Vec<f64> = outcomes.iter().map(|(a, b)| (a - m1) * (b - m2)).collect();
    let est = Estimate::from_samples(&products);
    Ok(Estimate {
        mean: est.mean * n / (n - 1.0),
        std_error: est.std_error,
    })
}

/// Uncertainty `λ/(Ω√n)` of the bath field after `n` driven measurements.
pub fn phase_estimation_error(lambda: f64, omega_rabi: f64, n: u64) -> Result<f64> {
    if !(omega_rabi > 0.0) {
        return Err(Error::arg("omega_rabi", "must be > 0"));
    }
    if n == 0 {
        return Err(Error::arg("n", "need at least one measurement"));
    }
    Ok(lambda / (omega_rabi * (n as f64).sqrt()))
}
