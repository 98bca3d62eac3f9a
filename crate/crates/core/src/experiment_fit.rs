//! Readout model for a driven superconducting qubit and its least-squares fit.
//!
//! The measured excited-state probability combines imperfect preparation
//! `I = tanh √(Γ/Ω)`, the measurement matrix `(M_↑↑, M_↓↓)` and the bath
//! averaged `⟨S_z⟩` of a qubit driven on resonance from `↓` with a Gaussian
//! density of states of width `λ`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::BathSpec;
use crate::driven_evolution::zeta_f_at_eigenvalue;
use crate::error::{Error, Result};
use crate::free_evolution::QubitParams;
use crate::quadrature;
use crate::rng;

pub const PARAM_NAMES: [&str; 4] = ["m_uu", "m_dd", "gamma_heat", "lambda"];

/// Two-sided 90% normal quantile.
const Z90: f64 = 1.6448536269514722;

const MAX_ITERATIONS: usize = 200;

/// Hyperfine scale of a GaAs dot: `λ_QD ≃ 207 ns⁻¹/√N`.
pub const GAAS_HYPERFINE: f64 = 207.0;

/// Readout and bath parameters (rates in ns⁻¹).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// P(measure ↑ | ↑).
    pub m_uu: f64,
    /// P(measure ↓ | ↓).
    pub m_dd: f64,
    /// Γ in `I = tanh √(Γ/Ω)`.
    pub gamma_heat: f64,
    /// Width of the Gaussian density of states.
    pub lambda: f64,
}

impl FitParams {
    pub fn new(m_uu: f64, m_dd: f64, gamma_heat: f64, lambda: f64) -> Result<Self> {
        let p = FitParams {
            m_uu,
            m_dd,
            gamma_heat,
            lambda,
        };
        p.check()?;
        Ok(p)
    }

    /// Values fitted to the superconducting phase-qubit Rabi data.
    pub fn reference() -> Self {
        FitParams {
            m_uu: 0.75,
            m_dd: 1.00,
            gamma_heat: 0.10,
            lambda: 0.27,
        }
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [("m_uu", self.m_uu), ("m_dd", self.m_dd)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::arg(name, "probability must lie in [0, 1]"));
            }
        }
        for (name, v) in [("gamma_heat", self.gamma_heat), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::arg(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.m_uu, self.m_dd, self.gamma_heat, self.lambda]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        FitParams {
            m_uu: a[0],
            m_dd: a[1],
            gamma_heat: a[2],
            lambda: a[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub omega_rabi: f64,
    pub p1: f64,
    pub sigma: f64,
}

/// Excited-state probabilities after a drive pulse of fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RabiDataset {
    /// Pulse length (ns).
    pub fixed_time: f64,
    pub points: Vec<DataPoint>,
}

impl RabiDataset {
    pub fn check(&self) -> Result<()> {
        if !(self.fixed_time >= 0.0 && self.fixed_time.is_finite()) {
            return Err(Error::arg("fixed_time", "must be finite and >= 0"));
        }
        for p in &self.points {
            if !(p.omega_rabi > 0.0 && p.omega_rabi.is_finite()) {
                return Err(Error::arg("omega_rabi", "every Rabi frequency must be > 0"));
            }
            if !(0.0..=1.0).contains(&p.p1) {
                return Err(Error::arg("p1", "probabilities must lie in [0, 1]"));
            }
            if !(p.sigma > 0.0 && p.sigma.is_finite()) {
                return Err(Error::arg("sigma", "uncertainties must be > 0"));
            }
        }
        Ok(())
    }

    /// Enough coverage in Ω to separate the four parameters.
    fn check_fittable(&self) -> Result<()> {
        self.check()?;
        if self.points.len() < 8 {
            return Err(Error::arg("data", "need at least 8 points"));
        }
        let (lo, hi) = self
            .points
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.omega_rabi), hi.max(p.omega_rabi)));
        if hi < 4.0 * lo {
            return Err(Error::arg("data", "Rabi frequencies must span at least a factor of 4"));
        }
        Ok(())
    }
}

/// Box constraints on `(m_uu, m_dd, gamma_heat, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: [f64; 4],
    pub upper: [f64; 4],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            lower: [0.0; 4],
            upper: [1.0, 1.0, f64::INFINITY, f64::INFINITY],
        }
    }
}

impl Bounds {
    fn project(&self, p: [f64; 4]) -> [f64; 4] {
        std::array::from_fn(|k| p[k].clamp(self.lower[k], self.upper[k]))
    }
}

/// 90% intervals `[lo, hi]` per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceIntervals {
    pub m_uu: [f64; 2],
    pub m_dd: [f64; 2],
    pub gamma_heat: [f64; 2],
    pub lambda: [f64; 2],
}

impl ConfidenceIntervals {
    fn from_arrays(center: [f64; 4], half: [f64; 4]) -> Self {
        let iv = |k: usize| [center[k] - half[k], center[k] + half[k]];
        ConfidenceIntervals {
            m_uu: iv(0),
            m_dd: iv(1),
            gamma_heat: iv(2),
            lambda: iv(3),
        }
    }

    pub fn to_array(&self) -> [[f64; 2]; 4] {
        [self.m_uu, self.m_dd, self.gamma_heat, self.lambda]
    }

    /// Which parameters of `p` fall inside their interval.
    pub fn contains(&self, p: &FitParams) -> [bool; 4] {
        let iv = self.to_array();
        let v = p.to_array();
        std::array::from_fn(|k| v[k] >= iv[k][0] && v[k] <= iv[k][1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: FitParams,
    pub ci90: ConfidenceIntervals,
    /// Weighted sum of squared residuals.
    pub residual: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub flags: Vec<String>,
}

/// Preparation efficiency `tanh √(Γ/Ω)`.
pub fn prep_efficiency(gamma_heat: f64, omega_rabi: f64) -> Result<f64> {
    if !(omega_rabi > 0.0) {
        return Err(Error::arg("omega_rabi", "must be > 0"));
    }
    if !(gamma_heat >= 0.0) {
        return Err(Error::arg("gamma_heat", "must be >= 0"));
    }
    Ok((gamma_heat / omega_rabi).sqrt().tanh())
}

/// Gauss–Legendre rule for the standard normal over ±12 with `panels` panels.
fn standard_normal_rule(panels: usize) -> (Vec<f64>, Vec<f64>) {
    let edges = quadrature::panel_points(-12.0, 12.0, f64::INFINITY, panels);
    let (gx, gw) = quadrature::gauss_legendre(10);
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    let mut nodes = Vec::with_capacity(panels * 10);
    let mut weights = Vec::with_capacity(panels * 10);
    for e in edges.windows(2) {
        let (mid, half) = (0.5 * (e[0] + e[1]), 0.5 * (e[1] - e[0]));
        for (x, w) in gx.iter().zip(&gw) {
            let z = mid + half * x;
            nodes.push(z);
            weights.push(half * w * (-0.5 * z * z).exp() / norm);
        }
    }
    (nodes, weights)
}

/// `⟨S_z(t)⟩` from `↓` under resonant drive, averaged over a Gaussian density
/// of width `lambda` centered on resonance.
///
/// The rule lives in the standardized variable so the model is smooth in
/// `lambda`; panels are halved only when the integrand outgrows them.
pub fn down_state_sz(lambda: f64, omega_rabi: f64, t: f64) -> f64 {
    let qp = QubitParams::new(0.0, omega_rabi);
    let sz = |x: f64| {
        let z = zeta_f_at_eigenvalue(x, &qp, t);
        -0.5 * (z.f + z.zeta.re)
    };
    if lambda == 0.0 {
        return sz(0.0);
    }
    let mut needed = 0.06f64;
    if omega_rabi > 0.0 {
        needed = needed.min(0.5 * omega_rabi / lambda);
    }
    if t > 0.0 {
        needed = needed.min(1.0 / (lambda * t));
    }
    let doublings = (0.06 / needed).log2().ceil().clamp(0.0, 8.0) as u32;
    let (nodes, weights) = standard_normal_rule(400 << doublings);
    nodes.iter().zip(&weights).map(|(z, w)| w * sz(lambda * z)).sum()
}

/// Measured excited-state probability `P₁ = ½ + s_z` with
/// `2s_z = M_↑↑ − M_↓↓ + I S_z(↓)(2M_↑↑ + 2M_↓↓ − 2)`.
pub fn model_signal(params: &FitParams, omega_rabi: f64, t: f64) -> Result<f64> {
    params.check()?;
    let i = prep_efficiency(params.gamma_heat, omega_rabi)?;
    let sz = down_state_sz(params.lambda, omega_rabi, t);
    let two_sz = params.m_uu - params.m_dd
        + i * sz * (2.0 * params.m_uu + 2.0 * params.m_dd - 2.0);
    Ok(0.5 + 0.5 * two_sz)
}

fn residuals(data: &RabiDataset, p: [f64; 4]) -> Result<Vec<f64>> {
    let params = FitParams::from_array(p);
    data.points
        .par_iter()
        .map(|d| Ok((model_signal(&params, d.omega_rabi, data.fixed_time)? - d.p1) / d.sigma))
        .collect()
}

fn chi2(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Central differences, one-sided at a bound.
fn jacobian(data: &RabiDataset, p: [f64; 4], bounds: &Bounds, r0: &[f64]) -> Result<DMatrix<f64>> {
    let n = data.points.len();
    let mut j = DMatrix::zeros(n, 4);
    for k in 0..4 {
        let h = 1e-6 * p[k].abs().max(1e-2);
        let mut up = p;
        let mut down = p;
        up[k] = (p[k] + h).min(bounds.upper[k]);
        down[k] = (p[k] - h).max(bounds.lower[k]);
        let ru = if up[k] > p[k] { Some(residuals(data, up)?) } else { None };
        let rd = if down[k] < p[k] { Some(residuals(data, down)?) } else { None };
        for i in 0..n {
            j[(i, k)] = match (&ru, &rd) {
                (Some(u), Some(d)) => (u[i] - d[i]) / (up[k] - down[k]),
                (Some(u), None) => (u[i] - r0[i]) / (up[k] - p[k]),
                (None, Some(d)) => (r0[i] - d[i]) / (p[k] - down[k]),
                (None, None) => 0.0,
            };
        }
    }
    Ok(j)
}

/// Weighted least squares of the readout model by projected
/// Levenberg–Marquardt with 90% intervals from the local curvature.
pub fn fit(data: &RabiDataset, initial: &FitParams, bounds: &Bounds) -> Result<FitReport> {
    data.check_fittable()?;
    let mut p = bounds.project(initial.to_array());
    let mut r = residuals(data, p)?;
    let mut chi = chi2(&r);
    let mut mu = 1e-3;
    let mut converged = false;
    let mut n_iter = 0;
    while n_iter < MAX_ITERATIONS {
        n_iter += 1;
        let j = jacobian(data, p, bounds, &r)?;
        let a: Matrix4<f64> = (j.transpose() * &j).fixed_view::<4, 4>(0, 0).into();
        let g: Vector4<f64> = (j.transpose() * DVector::from_column_slice(&r))
            .fixed_view::<4, 1>(0, 0)
            .into();
        // parameters pinned at a bound by the gradient stay put
        let free: [bool; 4] = std::array::from_fn(|k| {
            !((p[k] <= bounds.lower[k] && g[k] > 0.0) || (p[k] >= bounds.upper[k] && g[k] < 0.0))
        });
        let mut accepted = None;
        for _ in 0..30 {
            let mut m = a;
            for k in 0..4 {
                m[(k, k)] += mu * a[(k, k)].max(1e-12);
                if !free[k] {
                    for l in 0..4 {
                        m[(k, l)] = if k == l { 1.0 } else { 0.0 };
                        m[(l, k)] = if k == l { 1.0 } else { 0.0 };
                    }
                }
            }
            let rhs = Vector4::from_fn(|k, _| if free[k] { -g[k] } else { 0.0 });
            let Some(step) = m.lu().solve(&rhs) else {
                mu *= 4.0;
                continue;
            };
            let trial = bounds.project(std::array::from_fn(|k| p[k] + step[k]));
            let r_trial = residuals(data, trial)?;
            let chi_trial = chi2(&r_trial);
            if chi_trial < chi {
                accepted = Some((trial, r_trial, chi_trial));
                mu = (mu / 3.0).max(1e-12);
                break;
            }
            mu *= 4.0;
        }
        let Some((trial, r_trial, chi_trial)) = accepted else {
            converged = true;
            break;
        };
        let decrease = chi - chi_trial;
        p = trial;
        r = r_trial;
        chi = chi_trial;
        if decrease <= 1e-10 * chi || chi < 1e-28 {
            converged = true;
            break;
        }
    }
    let mut flags = Vec::new();
    if !converged {
        flags.push("not_converged".to_string());
    }
    for k in 0..4 {
        if p[k] <= bounds.lower[k] || p[k] >= bounds.upper[k] {
            flags.push(format!("at_bound:{}", PARAM_NAMES[k]));
        }
    }
    let j = jacobian(data, p, bounds, &r)?;
    let a: Matrix4<f64> = (j.transpose() * &j).fixed_view::<4, 4>(0, 0).into();
    let half = match a.try_inverse() {
        Some(cov) if (0..4).all(|k| cov[(k, k)] >= 0.0) => {
            std::array::from_fn(|k| Z90 * cov[(k, k)].sqrt())
        }
        _ => {
            flags.push("singular_curvature".to_string());
            [f64::NAN; 4]
        }
    };
    Ok(FitReport {
        params: FitParams::from_array(p),
        ci90: ConfidenceIntervals::from_arrays(p, half),
        residual: chi,
        n_iter,
        converged,
        flags,
    })
}

/// Gradient of the weighted objective at `params`.
pub fn objective_gradient(data: &RabiDataset, params: &FitParams) -> Result<[f64; 4]> {
    let p = params.to_array();
    let r = residuals(data, p)?;
    let j = jacobian(data, p, &Bounds::default(), &r)?;
    let g = j.transpose() * DVector::from_column_slice(&r);
    Ok(std::array::from_fn(|k| 2.0 * g[k]))
}

/// Model data with Gaussian noise of width `noise_sigma`, clipped to [0, 1].
pub fn synthetic_dataset(
    params: &FitParams,
    omegas: &[f64],
    fixed_time: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<RabiDataset> {
    if !(noise_sigma > 0.0) {
        return Err(Error::arg("noise_sigma", "must be > 0"));
    }
    let mut rng = rng::stream(seed);
    let points = omegas
        .iter()
        .map(|&w| {
            let clean = model_signal(params, w, fixed_time)?;
            let e: f64 = StandardNormal.sample(&mut rng);
            Ok(DataPoint {
                omega_rabi: w,
                p1: (clean + noise_sigma * e).clamp(0.0, 1.0),
                sigma: noise_sigma,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let data = RabiDataset { fixed_time, points };
    data.check()?;
    Ok(data)
}

/// Parameter sets for the physical systems the model describes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum Preset {
    /// Single GaAs dot with `n` equally coupled unpolarized nuclei.
    GaasQd { n: usize, lambda: f64, coupling: f64 },
    /// `m_s = 0` subspace of two exchange-coupled dots. The bath field is
    /// the difference of the two dot fields: `2n` spins with couplings
    /// `±1/√(2n)` and strength `√2 λ_QD`; the exchange `J` is the drive.
    Dqd {
        n_per_dot: usize,
        lambda_qd: f64,
        lambda: f64,
        coupling: f64,
        qubit: QubitParams,
    },
    /// Readout model of the phase qubit, pulse length in ns.
    Martinis { params: FitParams, fixed_time: f64 },
}

impl Preset {
    /// The finite bath for dot presets.
    pub fn bath(&self) -> Option<Result<BathSpec>> {
        match self {
            Preset::GaasQd { n, lambda, .. } => Some(BathSpec::homogeneous(*n, 0.0, *lambda)),
            Preset::Dqd {
                n_per_dot,
                lambda,
                coupling,
                ..
            } => {
                let alpha = (0..2 * n_per_dot)
                    .map(|k| if k < *n_per_dot { *coupling } else { -coupling })
                    .collect();
                Some(BathSpec::new(alpha, vec![0.0; 2 * n_per_dot], *lambda))
            }
            Preset::Martinis { .. } => None,
        }
    }
}

pub fn gaas_qd(n: usize) -> Result<Preset> {
    if n == 0 {
        return Err(Error::arg("n", "need at least one nuclear spin"));
    }
    Ok(Preset::GaasQd {
        n,
        lambda: GAAS_HYPERFINE / (n as f64).sqrt(),
        coupling: 1.0 / (n as f64).sqrt(),
    })
}

/// Double dot with `n_per_dot` nuclei per dot and exchange `exchange` (ns⁻¹).
pub fn dqd(n_per_dot: usize, exchange: f64) -> Result<Preset> {
    if n_per_dot == 0 {
        return Err(Error::arg("n", "need at least one nuclear spin per dot"));
    }
    if !(exchange >= 0.0 && exchange.is_finite()) {
        return Err(Error::arg("exchange", "must be finite and >= 0"));
    }
    let lambda_qd = GAAS_HYPERFINE / (n_per_dot as f64).sqrt();
    Ok(Preset::Dqd {
        n_per_dot,
        lambda_qd,
        lambda: std::f64::consts::SQRT_2 * lambda_qd,
        coupling: 1.0 / ((2 * n_per_dot) as f64).sqrt(),
        qubit: QubitParams::new(0.0, exchange),
    })
}

pub fn martinis() -> Preset {
    Preset::Martinis {
        params: FitParams::reference(),
        fixed_time: 25.0,
    }
}

/// Look a preset up by name; `n` defaults to 10⁵ nuclei and the exchange to
/// the bath strength (`Ω ≃ λ`).
pub fn preset(name: &str, n: Option<usize>, exchange: Option<f64>) -> Result<Preset> {
    let n = n.unwrap_or(100_000);
    match name {
        "gaas_qd" => gaas_qd(n),
        "dqd" => {
            let lambda = std::f64::consts::SQRT_2 * GAAS_HYPERFINE / (n.max(1) as f64).sqrt();
            dqd(n, exchange.unwrap_or(lambda))
        }
        "martinis" => Ok(martinis()),
        other => Err(Error::arg("preset", format!("unknown preset `{other}` (gaas_qd, dqd, martinis)"))),
    }
}
