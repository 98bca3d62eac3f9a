//! Rabi oscillations under slowly decorrelating bath noise.
//!
//! Under strong resonant drive a slow bath field shifts the Rabi frequency
//! to `√(Ω² + λ²A²) ≈ Ω + κ A²` with `κ = λ²/(2Ω)`, so the oscillation picks
//! up the random phase `κ ∫ A(s)² ds`. For Gaussian `A` the phase has mean
//! `κ⟨A²⟩t` and, for decorrelating noise, variance
//! `κ² ∫ S_{A²}(ω) sin²(ωt/2)/(ω/2)² dω` where the continuous part of the
//! spectrum of `A²` is `S_{A²}(ω) = 2 ∫ S(ω') S(ω - ω') dω'`. Static noise
//! is handled exactly: `⟨e^{-iκA²t}⟩ = (1 + 2iκ⟨A²⟩t)^{-1/2}`.

use std::f64::consts::PI;

use rayon::prelude::*;

use num_complex::Complex64;

use super::damping::{augmented, BlochSeries};
use super::{rotate, BlochVector, InitialState};
use crate::bath::{NoiseKind, NoiseModel, OuProcess};
use crate::error::{Error, Result};
use crate::free_evolution::QubitParams;
use crate::quadrature::{self, Tolerance};
use crate::rng;
use crate::stats::Moments;

/// Envelopes with `λ⁴⟨ΔA²⟩²/Ω⁴` above this are flagged invalid.
pub const MAGNUS_VALIDITY_LIMIT: f64 = 0.1;

/// Decay envelope of the Rabi oscillation from quadratic slow noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnusEnvelope {
    pub t: Vec<f64>,
    pub envelope: Vec<f64>,
    /// `λ⁴⟨ΔA²⟩²/Ω⁴`.
    pub validity: f64,
    pub valid: bool,
}

/// Continuous part of the spectrum of `A(t)²` for Gaussian `A`.
pub fn squared_noise_spectrum(noise: &NoiseModel, w: f64) -> Result<f64> {
    noise.check()?;
    match &noise.kind {
        NoiseKind::Static => Ok(0.0),
        NoiseKind::Ou { gamma_c } if *gamma_c == 0.0 => Ok(0.0),
        NoiseKind::Ou { gamma_c } => {
            let a = 2.0 * gamma_c;
            Ok(2.0 * noise.variance.powi(2) * (a / PI) / (w * w + a * a))
        }
        NoiseKind::Spectral { omega, .. } => {
            let top = *omega.last().unwrap();
            let (lo, hi) = ((w - top).max(-top), (w + top).min(top));
            if lo >= hi {
                return Ok(0.0);
            }
            let mut pts = vec![lo, hi];
            for o in omega {
                pts.extend([*o, -*o, w - o, w + o]);
            }
            pts.retain(|p| *p >= lo && *p <= hi);
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let s = |x: f64| noise.spectral_density(x).unwrap();
            let r = quadrature::integrate(
                |x| s(x) * s(w - x),
                &pts,
                Tolerance::new(1e-15 * noise.variance.powi(2).max(1e-300), 1e-11),
            );
            Ok(2.0 * r.value)
        }
    }
}

/// `∫ S_{A²}(ω) sin²(ωt/2)/(ω/2)² dω`, the variance of `∫₀ᵗ A(s)² ds`.
fn squared_noise_variance(noise: &NoiseModel, t: f64) -> Result<f64> {
    let t = t.abs();
    if t == 0.0 || noise.is_static() || noise.variance == 0.0 {
        return Ok(0.0);
    }
    let kernel = |w: f64| {
        let x = 0.5 * w * t;
        let sinc = if x.abs() < 1e-8 { 1.0 } else { x.sin() / x };
        t * t * sinc * sinc
    };
    let integrand = |w: f64| squared_noise_spectrum(noise, w).unwrap_or(0.0) * kernel(w);
    let scale = (noise.variance * t).powi(2);
    let tol = Tolerance::new(1e-14 * scale, 1e-10);
    let period = 2.0 * PI / t;
    let (value, error) = match &noise.kind {
        NoiseKind::Ou { gamma_c } => {
            let a = 2.0 * gamma_c;
            let marks = [a, 10.0 * a, 100.0 * a];
            let mut top = (1000.0 * a).max(200.0 / t);
            let first = quadrature::oscillatory_segment(integrand, 0.0, top, period, &marks, tol);
            let (mut value, mut error) = (2.0 * first.value, 2.0 * first.error);
            // beyond `top`: ∫ 2 S_{A²} · 4/ω² ≤ 16 var² a / (3π top³)
            let tail = |top: f64| 16.0 * noise.variance.powi(2) * a / (3.0 * PI * top.powi(3));
            for _ in 0..4 {
                let target = 1e-9 * value.abs();
                if tail(top) <= target {
                    break;
                }
                let next = top * (tail(top) / target).cbrt() * 1.05;
                let r = quadrature::oscillatory_segment(integrand, top, next, period, &marks, tol);
                value += 2.0 * r.value;
                error += 2.0 * r.error;
                top = next;
            }
            (value, error + tail(top))
        }
        NoiseKind::Spectral { omega, .. } => {
            let top = 2.0 * omega.last().unwrap();
            let marks: Vec<f64> = omega.iter().flat_map(|o| [*o, 2.0 * o]).collect();
            let r = quadrature::oscillatory_segment(integrand, 0.0, top, period, &marks, tol);
            (2.0 * r.value, 2.0 * r.error)
        }
        NoiseKind::Static => unreachable!(),
    };
    let tolerance = 1e-7 * value.abs().max(1e-12 * scale);
    if error > tolerance {
        return Err(Error::Quadrature { error, tolerance });
    }
    Ok(value)
}

/// Envelope of resonant Rabi oscillations under slow Gaussian noise of
/// the bath field (taken relative to its mean).
pub fn magnus_envelope(
    noise: &NoiseModel,
    lambda: f64,
    omega_rabi: f64,
    t_grid: &[f64],
) -> Result<MagnusEnvelope> {
    noise.check()?;
    if !(omega_rabi > 0.0) {
        return Err(Error::arg("omega_rabi", "envelope needs a drive"));
    }
    let kappa = lambda * lambda / (2.0 * omega_rabi);
    let var = noise.variance;
    let validity = (lambda / omega_rabi).powi(4) * var * var;
    let envelope = t_grid
        .par_iter()
        .map(|&t| {
            if noise.is_static() {
                Ok((1.0 + (2.0 * kappa * var * t).powi(2)).powf(-0.25))
            } else {
                let v = squared_noise_variance(noise, t)?;
                Ok((-0.5 * kappa * kappa * v).exp())
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MagnusEnvelope {
        t: t_grid.to_vec(),
        envelope,
        validity,
        valid: validity <= MAGNUS_VALIDITY_LIMIT,
    })
}

/// Exact resonant envelope `|E[exp(-iκ ∫₀ᵗ X²)]|` for Gaussian static or OU
/// noise `X`, from the Riccati solution of the OU generating function.
///
/// Unlike [`magnus_envelope`] this holds for any `Γ_c t`; in the quasi-static
/// regime the second-order envelope overstates the decay.
pub fn ou_exact_envelope(noise: &NoiseModel, lambda: f64, omega_rabi: f64, t_grid: &[f64]) -> Result<Vec<f64>> {
    noise.check()?;
    if !(omega_rabi > 0.0) {
        return Err(Error::arg("omega_rabi", "envelope needs a drive"));
    }
    let gamma = match noise.kind {
        NoiseKind::Static => 0.0,
        NoiseKind::Ou { gamma_c } => gamma_c,
        NoiseKind::Spectral { .. } => {
            return Err(Error::UnsupportedNoise("exact envelope needs static or OU noise".into()))
        }
    };
    let kappa = lambda * lambda / (2.0 * omega_rabi);
    let var = noise.variance;
    let beta = Complex64::new(0.0, kappa);
    Ok(t_grid
        .iter()
        .map(|&t| {
            if gamma == 0.0 {
                return (1.0 + 2.0 * beta * var * t).norm().powf(-0.5);
            }
            let nu = (gamma * gamma + 4.0 * gamma * var * beta).sqrt();
            // cosh + c sinh written with decaying exponentials only
            let c = (gamma + 2.0 * beta * var) / nu;
            let decay = (-2.0 * nu * t).exp();
            let w = 0.5 * ((1.0 + c) + (1.0 - c) * decay);
            (0.5 * gamma * t - 0.5 * (nu * t).re).exp() * w.norm().powf(-0.5)
        })
        .collect())
}

/// Piecewise schedule: substep length and count between consecutive grid times.
fn schedule(t_grid: &[f64], h_max: f64) -> Vec<(f64, usize)> {
    let mut now = 0.0;
    t_grid
        .iter()
        .map(|&t| {
            let len = t - now;
            now = t;
            if len <= 0.0 {
                return (0.0, 0);
            }
            let n = (len / h_max).ceil().max(1.0) as usize;
            (len / n as f64, n)
        })
        .collect()
}

/// Monte-Carlo Bloch evolution under a time-dependent bath field `λ A(t)`.
///
/// Each sample draws a stationary path of static or OU noise, holds it
/// constant over substeps of at most `0.05/ω` (and `0.1/Γ_c`), and propagates
/// the Bloch vector exactly across every substep.
#[allow(clippy::too_many_arguments)]
pub fn trajectory_rabi_mc(
    noise: &NoiseModel,
    lambda: f64,
    qp: &QubitParams,
    t_grid: &[f64],
    initial: InitialState,
    samples: usize,
    seed: u64,
) -> Result<BlochSeries> {
    qp.check()?;
    noise.check()?;
    if samples < 2 {
        return Err(Error::arg("samples", "need at least two trajectories"));
    }
    if t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::arg("t_grid", "times must be finite, >= 0 and non-decreasing"));
    }
    let spread = lambda.abs() * (noise.mean.abs() + 5.0 * noise.variance.sqrt());
    let rate = (qp.omega_rabi + qp.delta.abs() + spread).max(1e-12);
    let mut h_max = 0.05 / rate;
    if noise.cutoff() > 0.0 {
        h_max = h_max.min(0.1 / noise.cutoff());
    }
    let plan = schedule(t_grid, h_max);
    let processes = plan
        .iter()
        .map(|&(h, _)| OuProcess::new(noise, if h > 0.0 { h } else { 1.0 }))
        .collect::<Result<Vec<_>>>()?;
    let damped = qp.is_damped();
    let s0 = initial.bloch().to_array();
    let n_t = t_grid.len();
    let partials: Vec<Vec<[Moments; 3]>> = rng::chunks(samples)
        .into_par_iter()
        .map(|(index, len)| {
            let mut rng = rng::substream(seed, index);
            let mut acc = vec![[Moments::default(); 3]; n_t];
            for _ in 0..len {
                let mut x = processes[0].start(&mut rng);
                let mut s = s0;
                for (k, (&(h, n), process)) in plan.iter().zip(&processes).enumerate() {
                    for _ in 0..n {
                        let shift = lambda * x;
                        s = if damped {
                            let e = (augmented(shift, qp) * h).exp();
                            let v = e * nalgebra::Vector4::new(s[0], s[1], s[2], 1.0);
                            [v[0], v[1], v[2]]
                        } else {
                            let d = shift + qp.delta;
                            let w = d.hypot(qp.omega_rabi);
                            if w > 0.0 {
                                rotate(s, [qp.omega_rabi / w, 0.0, d / w], w * h)
                            } else {
                                s
                            }
                        };
                        x = process.step(x, &mut rng);
                    }
                    for c in 0..3 {
                        acc[k][c].push(s[c]);
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![[Moments::default(); 3]; n_t];
    for part in &partials {
        for (slot, p) in total.iter_mut().zip(part) {
            for c in 0..3 {
                slot[c].merge(&p[c]);
            }
        }
    }
    let (mean, err) = total
        .iter()
        .map(|m| {
            let e = m.map(|c| c.estimate());
            (
                BlochVector::new(e[0].mean, e[1].mean, e[2].mean),
                BlochVector::new(e[0].std_error, e[1].std_error, e[2].std_error),
            )
        })
        .unzip();
    Ok(BlochSeries {
        t: t_grid.to_vec(),
        mean,
        err,
    })
}
