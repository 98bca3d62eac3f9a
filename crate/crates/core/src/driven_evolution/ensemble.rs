//! Discrete representations of the bath law used for averaging.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::{self, BathSpec, DensityOfStates};
use crate::error::{Error, Result};
use crate::free_evolution::QubitParams;
use crate::quadrature;
use crate::rng;
use crate::stats::{Estimate, Moments};

/// Gauss–Hermite order for Gaussian densities.
pub const HERMITE_NODES: usize = 200;

/// Largest `√2 σ t` handled by Gauss–Hermite before switching to panels.
const HERMITE_PHASE_LIMIT: f64 = 20.0;

/// Source of the bath eigenvalues `Λ = λ A_z`.
#[derive(Debug, Clone, Copy)]
pub enum BathLaw<'a> {
    Spec(&'a BathSpec),
    Dos(&'a DensityOfStates),
}

impl<'a> From<&'a BathSpec> for BathLaw<'a> {
    fn from(spec: &'a BathSpec) -> Self {
        BathLaw::Spec(spec)
    }
}

impl<'a> From<&'a DensityOfStates> for BathLaw<'a> {
    fn from(dos: &'a DensityOfStates) -> Self {
        BathLaw::Dos(dos)
    }
}

/// How the average over the bath is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Averaging {
    /// Exact eigenvalue law of a finite bath.
    Exact,
    /// Thermal samples of the bath.
    MonteCarlo { samples: usize, seed: u64 },
    /// Quadrature over the continuum density of states.
    Continuum,
}

/// Weighted eigenvalues `Λ_i` approximating the bath law.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// True for Monte-Carlo samples (equal weights, statistical errors).
    pub sampled: bool,
}

impl Ensemble {
    /// A single eigenvalue with unit weight.
    pub fn point(value: f64) -> Self {
        Ensemble {
            nodes: vec![value],
            weights: vec![1.0],
            sampled: false,
        }
    }

    /// Build the ensemble for averaging drive-dependent quantities up to `t_max`.
    ///
    /// Continuum averages use Gauss–Hermite nodes unless the integrand varies
    /// on scales the fixed rule cannot resolve (weak drive or long times), in
    /// which case composite Gauss–Legendre panels over ±12σ are used.
    pub fn new(law: BathLaw, method: &Averaging, qp: &QubitParams, t_max: f64) -> Result<Self> {
        match (law, method) {
            (BathLaw::Spec(spec), Averaging::Exact) => {
                let d = bath::az_distribution(spec)?;
                Ok(Ensemble {
                    nodes: d.values.iter().map(|v| spec.lambda() * v).collect(),
                    weights: d.probs,
                    sampled: false,
                })
            }
            (BathLaw::Spec(spec), Averaging::MonteCarlo { samples, seed }) => {
                let lambda = spec.lambda();
                Self::sampled(*samples, *seed, |rng| lambda * bath::sample_az(spec, rng))
            }
            (BathLaw::Spec(spec), Averaging::Continuum) => match bath::continuum_dos(spec, 0.0) {
                Ok(dos) => Ok(continuum_nodes(&dos, qp, t_max)),
                Err(Error::Degenerate(_)) => {
                    Ok(Self::point(spec.lambda() * bath::moments(spec).mean))
                }
                Err(e) => Err(e),
            },
            (BathLaw::Dos(_), Averaging::Exact) => Err(Error::arg(
                "method",
                "exact averaging needs a finite bath, not a density of states",
            )),
            (BathLaw::Dos(dos), Averaging::MonteCarlo { samples, seed }) => {
                Self::sampled(*samples, *seed, |rng| dos.sample(rng))
            }
            (BathLaw::Dos(dos), Averaging::Continuum) => Ok(continuum_nodes(dos, qp, t_max)),
        }
    }

    fn sampled(
        samples: usize,
        seed: u64,
        draw: impl Fn(&mut rng::StreamRng) -> f64 + Sync,
    ) -> Result<Self> {
        if samples < 2 {
            return Err(Error::arg("samples", "need at least two Monte-Carlo samples"));
        }
        let nodes: Vec<f64> = rng::chunks(samples)
            .into_par_iter()
            .map(|(index, len)| {
                let mut rng = rng::substream(seed, index);
                (0..len).map(|_| draw(&mut rng)).collect::<Vec<_>>()
            })
            .flatten()
            .collect();
        let w = 1.0 / samples as f64;
        Ok(Ensemble {
            weights: vec![w; nodes.len()],
            nodes,
            sampled: true,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[g(Λ)]` with a standard error for sampled ensembles (zero otherwise).
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> Estimate {
        self.expect_many(|x| [g(x)])[0]
    }

    /// Componentwise expectations of a vector-valued function.
    pub fn expect_many<const K: usize>(&self, g: impl Fn(f64) -> [f64; K]) -> [Estimate; K] {
        if self.sampled {
            let mut acc = [Moments::default(); K];
            for &x in &self.nodes {
                for (m, v) in acc.iter_mut().zip(g(x)) {
                    m.push(v);
                }
            }
            acc.map(|m| m.estimate())
        } else {
            let mut sum = [0.0; K];
            for (&x, &w) in self.nodes.iter().zip(&self.weights) {
                for (s, v) in sum.iter_mut().zip(g(x)) {
                    *s += w * v;
                }
            }
            sum.map(|mean| Estimate {
                mean,
                std_error: 0.0,
            })
        }
    }

    /// Expectations at every time of `t_grid`, computed in parallel over times.
    pub fn expect_series<const K: usize>(
        &self,
        t_grid: &[f64],
        g: impl Fn(f64, f64) -> [f64; K] + Sync,
    ) -> Vec<[Estimate; K]> {
        t_grid
            .par_iter()
            .map(|&t| self.expect_many(|x| g(x, t)))
            .collect()
    }
}

fn continuum_nodes(dos: &DensityOfStates, qp: &QubitParams, t_max: f64) -> Ensemble {
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (center, weight, sigma) in dos.components() {
        let hermite_ok = qp.omega_rabi >= sigma
            && std::f64::consts::SQRT_2 * sigma * t_max.abs() <= HERMITE_PHASE_LIMIT;
        if hermite_ok {
            let (x, w) = quadrature::gaussian_nodes(center, sigma, HERMITE_NODES);
            nodes.extend(x);
            weights.extend(w.iter().map(|w| w * weight));
            continue;
        }
        let mut width = 0.5 * sigma;
        if qp.omega_rabi > 0.0 {
            width = width.min(qp.omega_rabi);
        }
        if t_max > 0.0 {
            width = width.min(2.0 * std::f64::consts::PI / t_max.abs());
        }
        let (lo, hi) = (center - 12.0 * sigma, center + 12.0 * sigma);
        width = width.max((hi - lo) / 20_000.0);
        let mut edges = quadrature::panel_points(lo, hi, width, 1);
        let resonance = -qp.delta;
        if resonance > lo && resonance < hi {
            edges.push(resonance);
            edges.sort_by(f64::total_cmp);
        }
        let (gx, gw) = quadrature::gauss_legendre(10);
        for pair in edges.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let half = 0.5 * (b - a);
            if half <= 0.0 {
                continue;
            }
            let mid = 0.5 * (a + b);
            for (xi, wi) in gx.iter().zip(&gw) {
                let x = mid + half * xi;
                let z = (x - center) / sigma;
                let density = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                nodes.push(x);
                weights.push(weight * half * wi * density);
            }
        }
    }
    Ensemble {
        nodes,
        weights,
        sampled: false,
    }
}
