//! Driven evolution with Markovian relaxation.
//!
//! For a bath eigenvalue `Λ` the Bloch equations are affine,
//! `dS/dt = (Ω, 0, Δ) × S - γ₂ (S_x, S_y, 0) - γ₁ (0, 0, S_z + 1/2)`,
//! and are propagated exactly with the matrix exponential of the augmented
//! 4×4 generator.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rayon::prelude::*;

use super::{Averaging, BathLaw, BlochVector, Ensemble, InitialState};
use crate::error::{Error, Result};
use crate::free_evolution::QubitParams;
use crate::stats::{Estimate, Moments};

/// Bath-averaged Bloch vectors on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochSeries {
    pub t: Vec<f64>,
    pub mean: Vec<BlochVector>,
    /// Standard errors; zero unless the average was sampled.
    pub err: Vec<BlochVector>,
}

impl BlochSeries {
    /// `2⟨S_z⟩` with its standard error at every time.
    pub fn sz2(&self) -> Vec<Estimate> {
        self.mean
            .iter()
            .zip(&self.err)
            .map(|(m, e)| Estimate {
                mean: 2.0 * m.sz,
                std_error: 2.0 * e.sz,
            })
            .collect()
    }
}

fn rates(shift: f64, qp: &QubitParams) -> (Matrix3<f64>, Vector3<f64>) {
    let d = shift + qp.delta;
    let o = qp.omega_rabi;
    let m = Matrix3::new(
        -qp.gamma2, -d, 0.0, //
        d, -qp.gamma2, -o, //
        0.0, o, -qp.gamma1,
    );
    (m, Vector3::new(0.0, 0.0, -0.5 * qp.gamma1))
}

pub(super) fn augmented(shift: f64, qp: &QubitParams) -> Matrix4<f64> {
    let (m, u) = rates(shift, qp);
    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&m);
    a.fixed_view_mut::<3, 1>(0, 3).copy_from(&u);
    a
}

/// Fixed point `S∞ = -M⁻¹ u` of the damped Bloch equations.
pub fn damped_steady_state(shift: f64, qp: &QubitParams) -> Result<BlochVector> {
    let (m, u) = rates(shift, qp);
    let s = m
        .lu()
        .solve(&(-u))
        .ok_or_else(|| Error::Degenerate("no unique steady state without damping".into()))?;
    Ok(BlochVector::new(s[0], s[1], s[2]))
}

/// Evolve one eigenvalue along a non-decreasing time grid starting at `t = 0`.
fn evolve(shift: f64, qp: &QubitParams, initial: BlochVector, t_grid: &[f64]) -> Result<Vec<[f64; 3]>> {
    let a = augmented(shift, qp);
    let mut x = Vector4::new(initial.sx, initial.sy, initial.sz, 1.0);
    let mut now = 0.0;
    let mut cached: Option<(f64, Matrix4<f64>)> = None;
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let dt = t - now;
        if dt != 0.0 {
            let step = match cached {
                Some((h, e)) if (h - dt).abs() <= 1e-13 * dt.abs() => e,
                _ => {
                    let e = (a * dt).exp();
                    cached = Some((dt, e));
                    e
                }
            };
            x = step * x;
            now = t;
        }
        if !(x[0].is_finite() && x[1].is_finite() && x[2].is_finite()) {
            return Err(Error::Integration {
                t,
                reason: "Bloch vector is no longer finite".into(),
            });
        }
        out.push([x[0], x[1], x[2]]);
    }
    Ok(out)
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::arg("t_grid", "times must be finite and >= 0"));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::arg("t_grid", "times must be non-decreasing"));
    }
    Ok(())
}

const NODE_CHUNK: usize = 2048;

/// Bath-averaged damped Rabi evolution.
pub fn damped_rabi(
    law: BathLaw,
    qp: &QubitParams,
    t_grid: &[f64],
    initial: InitialState,
    method: &Averaging,
) -> Result<BlochSeries> {
    qp.check()?;
    check_grid(t_grid)?;
    let t_max = t_grid.last().copied().unwrap_or(0.0);
    let ensemble = Ensemble::new(law, method, qp, t_max)?;
    damped_rabi_over(&ensemble, qp, t_grid, initial)
}

/// [`damped_rabi`] over a prebuilt ensemble.
pub fn damped_rabi_over(
    ensemble: &Ensemble,
    qp: &QubitParams,
    t_grid: &[f64],
    initial: InitialState,
) -> Result<BlochSeries> {
    check_grid(t_grid)?;
    let s0 = initial.bloch();
    let n_t = t_grid.len();
    let partials: Vec<Result<Vec<[Moments; 3]>>> = ensemble
        .nodes
        .par_chunks(NODE_CHUNK)
        .zip(ensemble.weights.par_chunks(NODE_CHUNK))
        .map(|(nodes, weights)| {
            let mut acc = vec![[Moments::default(); 3]; n_t];
            for (&x, &w) in nodes.iter().zip(weights) {
                let path = evolve(x, qp, s0, t_grid)?;
                for (slot, s) in acc.iter_mut().zip(path) {
                    for k in 0..3 {
                        if ensemble.sampled {
                            slot[k].push(s[k]);
                        } else {
                            slot[k].sum += w * s[k];
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![[Moments::default(); 3]; n_t];
    for part in partials {
        for (slot, p) in total.iter_mut().zip(part?) {
            for k in 0..3 {
                slot[k].merge(&p[k]);
            }
        }
    }
    let (mean, err) = total
        .iter()
        .map(|m| {
            if ensemble.sampled {
                let e = m.map(|c| c.estimate());
                (
                    BlochVector::new(e[0].mean, e[1].mean, e[2].mean),
                    BlochVector::new(e[0].std_error, e[1].std_error, e[2].std_error),
                )
            } else {
                (
                    BlochVector::new(m[0].sum, m[1].sum, m[2].sum),
                    BlochVector::default(),
                )
            }
        })
        .unzip();
    Ok(BlochSeries {
        t: t_grid.to_vec(),
        mean,
        err,
    })
}

/// Damped lineshape `1 - ⟨Ωγ₂ / [(γ₂/2)² + Δ² + Ω²]⟩`.
///
/// The expression is not bounded to `[0, 1]` for strong drive; callers
/// should flag values outside that range.
pub fn damped_lineshape(law: BathLaw, qp: &QubitParams, method: &Averaging) -> Result<f64> {
    qp.check()?;
    if !(qp.gamma2 > 0.0) {
        return Err(Error::arg("gamma2", "damped lineshape needs gamma2 > 0"));
    }
    let ensemble = Ensemble::new(law, method, qp, 0.0)?;
    let g = qp.gamma2;
    let o = qp.omega_rabi;
    let depth = ensemble.expect(|x| {
        let d = x + qp.delta;
        o * g / (0.25 * g * g + d * d + o * o)
    });
    Ok(1.0 - depth.mean)
}
