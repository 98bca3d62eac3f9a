//! The mesoscopic spin bath: couplings, thermal sampling, the exact law of
//! `A_z = Σ α_k I_z^k`, its continuum density of states, slow decorrelation
//! noise, and the cooling figures of merit.
//!
//! Bath strengths and eigenvalues of `λ A_z` are angular frequencies in ns⁻¹.
//! Couplings are normalized so that `Σ α_k² = 1`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};
use crate::rng;

/// Largest inhomogeneous bath that is enumerated exactly (2^N configurations).
pub const EXACT_LIMIT: usize = 24;

/// Tolerance on `Σα² = 1` for user-supplied couplings.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Statistical description of the bath: couplings `α_k`, per-spin
/// polarizations `P_k = ⟨2 I_z^k⟩` and the overall strength `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BathSpecDoc", into = "BathSpecDoc")]
pub struct BathSpec {
    alpha: Vec<f64>,
    polarization: Vec<f64>,
    lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum PolarizationDoc {
    Uniform(f64),
    PerSpin(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BathSpecDoc {
    n: usize,
    alpha: Vec<f64>,
    polarization: PolarizationDoc,
    lambda: f64,
}

impl TryFrom<BathSpecDoc> for BathSpec {
    type Error = Error;

    fn try_from(doc: BathSpecDoc) -> Result<Self> {
        if doc.alpha.len() != doc.n {
            return Err(Error::InvalidBath(format!(
                "n = {} but {} couplings given",
                doc.n,
                doc.alpha.len()
            )));
        }
        let polarization = match doc.polarization {
            PolarizationDoc::Uniform(p) => vec![p; doc.n],
            PolarizationDoc::PerSpin(p) => p,
        };
        BathSpec::new(doc.alpha, polarization, doc.lambda)
    }
}

impl From<BathSpec> for BathSpecDoc {
    fn from(spec: BathSpec) -> Self {
        let uniform = spec.polarization.windows(2).all(|w| w[0] == w[1]);
        let polarization = match (uniform, spec.polarization.first()) {
            (true, Some(&p)) => PolarizationDoc::Uniform(p),
            _ => PolarizationDoc::PerSpin(spec.polarization),
        };
        BathSpecDoc {
            n: spec.alpha.len(),
            alpha: spec.alpha,
            polarization,
            lambda: spec.lambda,
        }
    }
}

impl BathSpec {
    /// Validating constructor. Couplings must already satisfy `Σα² = 1`.
    pub fn new(alpha: Vec<f64>, polarization: Vec<f64>, lambda: f64) -> Result<Self> {
        let spec = BathSpec {
            alpha,
            polarization,
            lambda,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Like [`BathSpec::new`] but rescales the couplings to unit norm first.
    pub fn normalized(alpha: Vec<f64>, polarization: Vec<f64>, lambda: f64) -> Result<Self> {
        let norm = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidBath("couplings have zero norm".into()));
        }
        Self::new(alpha.iter().map(|a| a / norm).collect(), polarization, lambda)
    }

    /// `N` spins with `α_k = 1/√N` and uniform polarization.
    pub fn homogeneous(n: usize, polarization: f64, lambda: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidBath("N must be at least 1".into()));
        }
        Self::new(
            vec![1.0 / (n as f64).sqrt(); n],
            vec![polarization; n],
            lambda,
        )
    }

    /// Randomly drawn couplings (see [`make_couplings`]) with uniform polarization.
    pub fn random(
        n: usize,
        sigma_alpha: f64,
        polarization: f64,
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::new(make_couplings(n, sigma_alpha, seed)?, vec![polarization; n], lambda)
    }

    /// Diagnostics for every violated invariant, as `(field, message)`.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if self.alpha.is_empty() {
            out.push(("alpha", "N must be at least 1".to_string()));
        }
        if self.polarization.len() != self.alpha.len() {
            out.push((
                "polarization",
                format!(
                    "{} polarizations for {} spins",
                    self.polarization.len(),
                    self.alpha.len()
                ),
            ));
        }
        if let Some(k) = self
            .polarization
            .iter()
            .position(|p| !(-1.0..=1.0).contains(p))
        {
            out.push((
                "polarization",
                format!("entry {k} = {} outside [-1, 1]", self.polarization[k]),
            ));
        }
        let norm: f64 = self.alpha.iter().map(|a| a * a).sum();
        if !self.alpha.is_empty() && !((norm - 1.0).abs() <= NORM_TOLERANCE) {
            out.push(("alpha", format!("sum of squared couplings is {norm}, expected 1")));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(("lambda", format!("bath strength {} must be finite and >= 0", self.lambda)));
        }
        out
    }

    /// [`BathSpec::problems`] for raw fields that need not form a valid bath.
    pub fn diagnose(alpha: &[f64], polarization: &[f64], lambda: f64) -> Vec<(&'static str, String)> {
        BathSpec {
            alpha: alpha.to_vec(),
            polarization: polarization.to_vec(),
            lambda,
        }
        .problems()
    }

    fn check(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::InvalidBath(format!("{field}: {msg}"))),
        }
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn polarization(&self) -> &[f64] {
        &self.polarization
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_polarization(mut self, p: f64) -> Self {
        self.polarization = vec![p; self.alpha.len()];
        self
    }

    /// True when all couplings coincide.
    pub fn is_homogeneous(&self) -> bool {
        let a0 = self.alpha[0];
        self.alpha.iter().all(|a| (a - a0).abs() <= 1e-12 * a0.abs().max(1e-300))
    }

    fn uniform_polarization(&self) -> Option<f64> {
        let p0 = self.polarization[0];
        self.polarization.iter().all(|&p| p == p0).then_some(p0)
    }
}

/// Couplings `α_k = 1/√N + σ_α g_k` with standard normal `g_k`, rescaled to `Σα² = 1`.
///
/// Negative couplings are kept; only the normalization is imposed.
pub fn make_couplings(n: usize, sigma_alpha: f64, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::arg("n", "number of bath spins must be at least 1"));
    }
    if !(sigma_alpha >= 0.0 && sigma_alpha.is_finite()) {
        return Err(Error::arg("sigma_alpha", "must be finite and >= 0"));
    }
    let mut rng = rng::stream(seed);
    let base = 1.0 / (n as f64).sqrt();
    let raw: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            base + sigma_alpha * g
        })
        .collect();
    let norm = raw.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidBath("drawn couplings vanish".into()));
    }
    Ok(raw.into_iter().map(|a| a / norm).collect())
}

/// One thermal configuration of the bath.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathSample {
    /// `I_z^k` eigenvalues, each ±1/2.
    pub spins: Vec<f64>,
    /// `A_z = Σ α_k spins_k`.
    pub az: f64,
}

/// Independent per-spin thermal draw: spin k is up with probability `(1 + P_k)/2`.
pub fn sample_bath(spec: &BathSpec, seed: u64) -> BathSample {
    sample_bath_with(spec, &mut rng::stream(seed))
}

pub fn sample_bath_with<R: Rng + ?Sized>(spec: &BathSpec, rng: &mut R) -> BathSample {
    let spins: Vec<f64> = spec
        .polarization
        .iter()
        .map(|p| {
            let up = rng.random::<f64>() < 0.5 * (1.0 + p);
            if up {
                0.5
            } else {
                -0.5
            }
        })
        .collect();
    let az = spins.iter().zip(&spec.alpha).map(|(s, a)| s * a).sum();
    BathSample { spins, az }
}

/// `A_z` for one thermal draw, without keeping the configuration.
pub fn sample_az<R: Rng + ?Sized>(spec: &BathSpec, rng: &mut R) -> f64 {
    spec.alpha
        .iter()
        .zip(&spec.polarization)
        .map(|(a, p)| {
            if rng.random::<f64>() < 0.5 * (1.0 + p) {
                0.5 * a
            } else {
                -0.5 * a
            }
        })
        .sum()
}

/// Exact probability mass function of `A_z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AzDistribution {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl AzDistribution {
    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| p * (v - m).powi(2))
            .sum()
    }

    /// `E[g(A_z)]`.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| p * g(*v)).sum()
    }

    /// `P(A_z <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.values.partition_point(|v| *v <= x);
        self.probs[..k].iter().sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Exact law of `A_z`.
///
/// Homogeneous couplings use the binomial (uniform polarization) or
/// Poisson-binomial form for any `N`; inhomogeneous baths are enumerated up
/// to [`EXACT_LIMIT`] spins.
pub fn az_distribution(spec: &BathSpec) -> Result<AzDistribution> {
    let n = spec.n();
    if spec.is_homogeneous() {
        let alpha = spec.alpha[0];
        let up_counts = match spec.uniform_polarization() {
            Some(p) => binomial_pmf(n, 0.5 * (1.0 + p)),
            None => poisson_binomial_pmf(&spec.polarization),
        };
        let (values, probs) = up_counts
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p > 0.0)
            .map(|(k, p)| (alpha * (k as f64 - 0.5 * n as f64), p))
            .unzip();
        let mut dist = AzDistribution { values, probs };
        if alpha < 0.0 {
            dist.values.reverse();
            dist.probs.reverse();
        }
        return Ok(normalize(dist));
    }
    if n > EXACT_LIMIT {
        return Err(Error::ExactTooLarge {
            n,
            limit: EXACT_LIMIT,
        });
    }
    Ok(normalize(enumerate(spec)))
}

fn normalize(mut dist: AzDistribution) -> AzDistribution {
    let total: f64 = dist.probs.iter().sum();
    dist.probs.iter_mut().for_each(|p| *p /= total);
    dist
}

/// Spin-by-spin convolution; coincident values are merged.
fn enumerate(spec: &BathSpec) -> AzDistribution {
    let scale: f64 = spec.alpha.iter().map(|a| a.abs()).sum::<f64>().max(1.0);
    let tol = 1e-13 * scale;
    let mut values = vec![0.0];
    let mut probs = vec![1.0];
    for (&a, &pol) in spec.alpha.iter().zip(&spec.polarization) {
        let up = 0.5 * (1.0 + pol);
        let half = 0.5 * a.abs();
        // Sign of α only relabels which branch is "up".
        let (w_hi, w_lo) = if a >= 0.0 { (up, 1.0 - up) } else { (1.0 - up, up) };
        let lo = values.iter().zip(&probs).map(|(v, p)| (v - half, p * w_lo));
        let hi = values.iter().zip(&probs).map(|(v, p)| (v + half, p * w_hi));
        let mut nv = Vec::with_capacity(values.len() * 2);
        let mut np = Vec::with_capacity(values.len() * 2);
        let mut push = |v: f64, p: f64| {
            if p <= 0.0 {
                return;
            }
            match nv.last() {
                Some(&last) if v - last <= tol => *np.last_mut().unwrap() += p,
                _ => {
                    nv.push(v);
                    np.push(p);
                }
            }
        };
        let (mut lo, mut hi) = (lo.peekable(), hi.peekable());
        loop {
            match (lo.peek(), hi.peek()) {
                (Some(&(vl, pl)), Some(&(vh, ph))) => {
                    if vl <= vh {
                        push(vl, pl);
                        lo.next();
                    } else {
                        push(vh, ph);
                        hi.next();
                    }
                }
                (Some(&(vl, pl)), None) => {
                    push(vl, pl);
                    lo.next();
                }
                (None, Some(&(vh, ph))) => {
                    push(vh, ph);
                    hi.next();
                }
                (None, None) => break,
            }
        }
        values = nv;
        probs = np;
    }
    AzDistribution { values, probs }
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// `P(k successes)` for `k = 0..=n`.
fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    let lf = ln_factorials(n);
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (0..=n)
        .map(|k| (lf[n] - lf[k] - lf[n - k] + k as f64 * lp + (n - k) as f64 * lq).exp())
        .collect()
}

fn poisson_binomial_pmf(polarization: &[f64]) -> Vec<f64> {
    let mut pmf = vec![1.0];
    for pol in polarization {
        let up = 0.5 * (1.0 + pol);
        let mut next = vec![0.0; pmf.len() + 1];
        for (k, p) in pmf.iter().enumerate() {
            next[k] += p * (1.0 - up);
            next[k + 1] += p * up;
        }
        pmf = next;
    }
    pmf
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    /// Fourth cumulant of `A_z`.
    pub fourth_cumulant: f64,
}

/// Cumulants of `A_z` from independent spins.
///
/// Each spin contributes `α_k (b_k - 1/2)` with `b_k` Bernoulli of success
/// probability `p = (1+P_k)/2`, whose fourth cumulant is `pq(1 - 6pq)`.
pub fn moments(spec: &BathSpec) -> Moments {
    let mut m = Moments {
        mean: 0.0,
        variance: 0.0,
        fourth_cumulant: 0.0,
    };
    for (&a, &p) in spec.alpha.iter().zip(&spec.polarization) {
        let pq = 0.25 * (1.0 - p * p);
        m.mean += 0.5 * a * p;
        m.variance += a * a * pq;
        m.fourth_cumulant += a.powi(4) * pq * (1.0 - 6.0 * pq);
    }
    m
}

/// Continuum density of states of `λ A_z` (plus an offset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityOfStates {
    pub mean: f64,
    pub sigma: f64,
    pub kind: DosKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DosKind {
    Gaussian,
    /// Gaussian-kernel density over tabulated eigenvalues.
    Tabulated {
        values: Vec<f64>,
        weights: Vec<f64>,
        bandwidth: f64,
    },
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

impl DensityOfStates {
    pub fn gaussian(mean: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) || !mean.is_finite() {
            return Err(Error::Degenerate(format!(
                "Gaussian density needs sigma > 0, got {sigma}"
            )));
        }
        Ok(DensityOfStates {
            mean,
            sigma,
            kind: DosKind::Gaussian,
        })
    }

    /// Kernel density of weighted eigenvalues with Gaussian kernels of width `bandwidth`.
    pub fn tabulated(values: Vec<f64>, weights: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if values.is_empty() || values.len() != weights.len() {
            return Err(Error::arg("weights", "need one weight per tabulated value"));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::arg("bandwidth", "must be > 0"));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::arg("weights", "must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::arg("weights", "must not all vanish"));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mean: f64 = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
        let var: f64 = values
            .iter()
            .zip(&weights)
            .map(|(v, w)| w * (v - mean).powi(2))
            .sum::<f64>()
            + bandwidth * bandwidth;
        Ok(DensityOfStates {
            mean,
            sigma: var.sqrt(),
            kind: DosKind::Tabulated {
                values,
                weights,
                bandwidth,
            },
        })
    }

    /// Gaussian components `(center, weight, width)` making up the density.
    pub fn components(&self) -> Vec<(f64, f64, f64)> {
        match &self.kind {
            DosKind::Gaussian => vec![(self.mean, 1.0, self.sigma)],
            DosKind::Tabulated {
                values,
                weights,
                bandwidth,
            } => values
                .iter()
                .zip(weights)
                .map(|(v, w)| (*v, *w, *bandwidth))
                .collect(),
        }
    }

    fn eval(&self, x: f64, order: u8) -> f64 {
        self.components()
            .iter()
            .map(|&(c, w, s)| {
                let z = (x - c) / s;
                let base = w * normal_pdf(z) / s;
                match order {
                    0 => base,
                    1 => -z / s * base,
                    _ => (z * z - 1.0) / (s * s) * base,
                }
            })
            .sum()
    }

    /// `ρ(Λ)`.
    pub fn density(&self, x: f64) -> f64 {
        self.eval(x, 0)
    }

    pub fn first_derivative(&self, x: f64) -> f64 {
        self.eval(x, 1)
    }

    /// `ρ''(Λ)`.
    pub fn second_derivative(&self, x: f64) -> f64 {
        self.eval(x, 2)
    }

    /// Interval outside which the density is negligible (12 widths beyond every component).
    pub fn support(&self) -> (f64, f64) {
        self.components()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(c, _, s)| {
                (lo.min(c - 12.0 * s), hi.max(c + 12.0 * s))
            })
    }

    /// Same density shifted by `shift`.
    pub fn shifted(&self, shift: f64) -> Self {
        let kind = match &self.kind {
            DosKind::Gaussian => DosKind::Gaussian,
            DosKind::Tabulated {
                values,
                weights,
                bandwidth,
            } => DosKind::Tabulated {
                values: values.iter().map(|v| v + shift).collect(),
                weights: weights.clone(),
                bandwidth: *bandwidth,
            },
        };
        DensityOfStates {
            mean: self.mean + shift,
            sigma: self.sigma,
            kind,
        }
    }

    /// Draw one eigenvalue from the density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = StandardNormal.sample(rng);
        match &self.kind {
            DosKind::Gaussian => self.mean + self.sigma * g,
            DosKind::Tabulated {
                values,
                weights,
                bandwidth,
            } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = values.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                values[pick] + bandwidth * g
            }
        }
    }
}

/// Gaussian density of `λ A_z + offset` matching the exact mean and variance.
pub fn continuum_dos(spec: &BathSpec, offset: f64) -> Result<DensityOfStates> {
    let m = moments(spec);
    let sigma = spec.lambda * m.variance.sqrt();
    if !(sigma > 0.0) {
        return Err(Error::Degenerate(
            "bath has zero variance (frozen or uncoupled); treat it as a fixed detuning".into(),
        ));
    }
    DensityOfStates::gaussian(offset + spec.lambda * m.mean, sigma)
}

/// Correlation structure of `A_z(t)`.
///
/// Spectral functions are two-sided: `⟨ΔA(t)ΔA(t')⟩ = ∫ S(ω) e^{iω(t-t')} dω`
/// over the whole real line, so `∫ S = variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub variance: f64,
    #[serde(default)]
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseKind {
    Static,
    /// Exponential decorrelation at rate `gamma_c` (Lorentzian spectrum).
    Ou { gamma_c: f64 },
    /// Tabulated `S(ω)` on `ω >= 0`, linearly interpolated, even in ω, zero beyond the table.
    Spectral { omega: Vec<f64>, density: Vec<f64> },
}

impl NoiseModel {
    pub fn static_noise(mean: f64, variance: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::Static,
            variance,
            mean,
        }
    }

    pub fn ou(mean: f64, variance: f64, gamma_c: f64) -> Self {
        NoiseModel {
            kind: NoiseKind::Ou { gamma_c },
            variance,
            mean,
        }
    }

    /// Tabulated spectrum; the variance is its integral over the real line.
    pub fn spectral(mean: f64, omega: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        let model = NoiseModel {
            kind: NoiseKind::Spectral { omega, density },
            variance: 0.0,
            mean,
        };
        let variance = model.tabulated_integral();
        let model = NoiseModel { variance, ..model };
        model.check()?;
        Ok(model)
    }

    /// Noise of a bath: variance `⟨ΔA_z²⟩` and mean `⟨A_z⟩`.
    pub fn from_bath(spec: &BathSpec, gamma_c: f64) -> Self {
        let m = moments(spec);
        if gamma_c > 0.0 {
            Self::ou(m.mean, m.variance, gamma_c)
        } else {
            Self::static_noise(m.mean, m.variance)
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(Error::arg("variance", "must be finite and >= 0"));
        }
        match &self.kind {
            NoiseKind::Static => Ok(()),
            NoiseKind::Ou { gamma_c } => {
                if *gamma_c >= 0.0 && gamma_c.is_finite() {
                    Ok(())
                } else {
                    Err(Error::arg("gamma_c", "must be finite and >= 0"))
                }
            }
            NoiseKind::Spectral { omega, density } => {
                if omega.len() < 2 || omega.len() != density.len() {
                    return Err(Error::arg("omega", "need at least two tabulated points"));
                }
                if omega[0] != 0.0 || omega.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::arg("omega", "must start at 0 and increase strictly"));
                }
                if density.iter().any(|s| *s < 0.0) {
                    return Err(Error::arg("density", "spectral function must be >= 0"));
                }
                Ok(())
            }
        }
    }

    /// Decorrelation rate; zero for static noise.
    pub fn cutoff(&self) -> f64 {
        match &self.kind {
            NoiseKind::Static => 0.0,
            NoiseKind::Ou { gamma_c } => *gamma_c,
            NoiseKind::Spectral { omega, .. } => *omega.last().unwrap(),
        }
    }

    /// True when the correlation function never decays.
    pub fn is_static(&self) -> bool {
        match self.kind {
            NoiseKind::Static => true,
            NoiseKind::Ou { gamma_c } => gamma_c == 0.0,
            NoiseKind::Spectral { .. } => false,
        }
    }

    fn tabulated_integral(&self) -> f64 {
        match &self.kind {
            NoiseKind::Spectral { omega, density } => {
                2.0 * omega
                    .windows(2)
                    .zip(density.windows(2))
                    .map(|(w, s)| 0.5 * (w[1] - w[0]) * (s[0] + s[1]))
                    .sum::<f64>()
            }
            _ => self.variance,
        }
    }

    /// Two-sided `S(ω)` for the continuous part of the spectrum.
    ///
    /// Static noise (and OU with zero cutoff) is a delta at ω = 0 and has no
    /// continuous part; `None` is returned.
    pub fn spectral_density(&self, w: f64) -> Option<f64> {
        match &self.kind {
            NoiseKind::Static => None,
            NoiseKind::Ou { gamma_c } if *gamma_c == 0.0 => None,
            NoiseKind::Ou { gamma_c } => {
                Some(self.variance * gamma_c / PI / (w * w + gamma_c * gamma_c))
            }
            NoiseKind::Spectral { omega, density } => {
                let x = w.abs();
                if x >= *omega.last().unwrap() {
                    return Some(0.0);
                }
                let k = omega.partition_point(|o| *o <= x) - 1;
                let f = (x - omega[k]) / (omega[k + 1] - omega[k]);
                Some(density[k] * (1.0 - f) + density[k + 1] * f)
            }
        }
    }

    /// `⟨ΔA(t+τ) ΔA(t)⟩`.
    pub fn autocovariance(&self, tau: f64) -> f64 {
        match &self.kind {
            NoiseKind::Static => self.variance,
            NoiseKind::Ou { gamma_c } => self.variance * (-gamma_c * tau.abs()).exp(),
            NoiseKind::Spectral { omega, .. } => {
                let top = *omega.last().unwrap();
                let mut pts = omega.clone();
                if tau != 0.0 {
                    let quarter = 0.5 * PI / tau.abs();
                    pts.extend(quadrature::panel_points(0.0, top, quarter, 1));
                    pts.sort_by(f64::total_cmp);
                    pts.dedup();
                }
                let r = quadrature::integrate(
                    |w| self.spectral_density(w).unwrap() * (w * tau).cos(),
                    &pts,
                    Tolerance::new(1e-14 * self.variance.max(1e-300), 1e-11),
                );
                2.0 * r.value
            }
        }
    }
}

/// Exact discrete-time generator for static or exponentially correlated Gaussian noise.
#[derive(Debug, Clone, Copy)]
pub struct OuProcess {
    mean: f64,
    sd: f64,
    decay: f64,
    kick: f64,
}

impl OuProcess {
    pub fn new(model: &NoiseModel, dt: f64) -> Result<Self> {
        model.check()?;
        let gamma = match model.kind {
            NoiseKind::Static => 0.0,
            NoiseKind::Ou { gamma_c } => gamma_c,
            NoiseKind::Spectral { .. } => {
                return Err(Error::UnsupportedNoise(
                    "trajectories can only be synthesized for static or OU noise".into(),
                ))
            }
        };
        if !(dt > 0.0) {
            return Err(Error::arg("dt", "time step must be > 0"));
        }
        let decay = (-gamma * dt).exp();
        let sd = model.variance.sqrt();
        Ok(OuProcess {
            mean: model.mean,
            sd,
            decay,
            kick: sd * (1.0 - decay * decay).max(0.0).sqrt(),
        })
    }

    /// Draw from the stationary law.
    pub fn start<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g: f64 = StandardNormal.sample(rng);
        self.mean + self.sd * g
    }

    /// Advance one step of length `dt`.
    pub fn step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        if self.kick == 0.0 {
            return x;
        }
        let g: f64 = StandardNormal.sample(rng);
        self.mean + (x - self.mean) * self.decay + self.kick * g
    }
}

/// Sampled path `A_z(k dt)`, `k = 0..steps`, started from the stationary law.
pub fn noise_trajectory(model: &NoiseModel, dt: f64, steps: usize, seed: u64) -> Result<Vec<f64>> {
    let process = OuProcess::new(model, dt)?;
    let mut rng = rng::stream(seed);
    let mut out = Vec::with_capacity(steps);
    let mut x = process.start(&mut rng);
    for _ in 0..steps {
        out.push(x);
        x = process.step(x, &mut rng);
    }
    Ok(out)
}

/// Reduction `η = √(1/(1-P))` of the dephasing rate after polarizing the bath to `P`.
pub fn cooling_improvement(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg("p", "polarization must lie in [0, 1)"));
    }
    Ok((1.0 / (1.0 - p)).sqrt())
}

/// Transverse variance `⟨A_⊥²⟩` of an infinite-temperature homogeneous bath
/// after ideal cooling into the dark state of every total-spin multiplet.
///
/// Multiplet `J` carries weight `d(N,J)(2J+1)/2^N` and contributes `J/(2N)`.
/// Only even `N` is supported.
pub fn dark_state_transverse_variance(n: usize) -> Result<f64> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::arg("n", "number of spins must be a positive even integer"));
    }
    let lf = ln_factorials(n);
    let ln_choose = |k: usize| lf[n] - lf[k] - lf[n - k];
    let half = n / 2;
    let ln2n = n as f64 * std::f64::consts::LN_2;
    let mut total = 0.0;
    for j in 0..=half {
        let k = half - j;
        // d(N,J) = C(N,k) - C(N,k-1) = C(N,k) (1 - k/(N-k+1))
        let ratio = 1.0 - k as f64 / (n - k + 1) as f64;
        let p = (ln_choose(k) - ln2n).exp() * ratio * (2 * j + 1) as f64;
        total += p * (j as f64 / 2.0) / n as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(spec: &BathSpec) -> Vec<(f64, f64)> {
        let n = spec.n();
        (0..1usize << n)
            .map(|mask| {
                let mut az = 0.0;
                let mut p = 1.0;
                for k in 0..n {
                    let up = mask >> k & 1 == 1;
                    let pu = 0.5 * (1.0 + spec.polarization()[k]);
                    az += if up { 0.5 } else { -0.5 } * spec.alpha()[k];
                    p *= if up { pu } else { 1.0 - pu };
                }
                (az, p)
            })
            .collect()
    }

    #[test]
    fn homogeneous_couplings_without_spread() {
        let a = make_couplings(4, 0.0, 99).unwrap();
        assert!(a.iter().all(|x| (x - 0.5).abs() < 1e-15));
        assert!(make_couplings(0, 0.1, 1).is_err());
    }

    #[test]
    fn couplings_are_normalized() {
        let a = make_couplings(30, 0.1 / 30f64.sqrt(), 7).unwrap();
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        let b = make_couplings(30, 0.1 / 30f64.sqrt(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coupling_spread_matches_request() {
        let n = 20;
        let target = 0.5 / (n as f64).sqrt();
        let mut sds = 0.0;
        for seed in 0..100 {
            let a = make_couplings(n, target, seed).unwrap();
            let m = a.iter().sum::<f64>() / n as f64;
            let v = a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            sds += v.sqrt();
        }
        let sd = sds / 100.0;
        assert!((sd - target).abs() < 0.2 * target, "sd {sd} target {target}");
    }

    #[test]
    fn fully_polarized_samples() {
        let spec = BathSpec::random(12, 0.2, 1.0, 1.0, 3).unwrap();
        let s = sample_bath(&spec, 11);
        assert!(s.spins.iter().all(|x| *x == 0.5));
        let expect: f64 = spec.alpha().iter().sum::<f64>() / 2.0;
        assert!((s.az - expect).abs() < 1e-14);
        let down = spec.clone().with_polarization(-1.0);
        assert!((sample_bath(&down, 5).az + expect).abs() < 1e-14);
    }

    #[test]
    fn sample_az_is_weighted_sum() {
        let spec = BathSpec::random(9, 0.3, 0.2, 1.0, 4).unwrap();
        let s = sample_bath(&spec, 21);
        let sum: f64 = s.spins.iter().zip(spec.alpha()).map(|(a, b)| a * b).sum();
        assert_eq!(s.az, sum);
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        let spec = BathSpec::homogeneous(10_000, 0.0, 1.0).unwrap();
        let mut rng = rng::stream(17);
        let draws = 100_000;
        let mean = (0..draws).map(|_| sample_az(&spec, &mut rng)).sum::<f64>() / draws as f64;
        assert!(mean.abs() < 3.0 * 0.5 / (draws as f64).sqrt(), "{mean}");
    }

    #[test]
    fn single_spin_distribution() {
        let spec = BathSpec::new(vec![1.0], vec![0.0], 1.0).unwrap();
        let d = az_distribution(&spec).unwrap();
        assert_eq!(d.values, vec![-0.5, 0.5]);
        assert_eq!(d.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn two_spin_distribution() {
        let spec = BathSpec::homogeneous(2, 0.0, 1.0).unwrap();
        let d = az_distribution(&spec).unwrap();
        let s = 1.0 / 2f64.sqrt();
        for (v, e) in d.values.iter().zip([-s, 0.0, s]) {
            assert!((v - e).abs() < 1e-15);
        }
        for (p, e) in d.probs.iter().zip([0.25, 0.5, 0.25]) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let spec = BathSpec::new(
            make_couplings(8, 0.2, 5).unwrap(),
            vec![0.1, -0.3, 0.5, 0.0, 0.9, -0.8, 0.2, 0.4],
            1.0,
        )
        .unwrap();
        let d = az_distribution(&spec).unwrap();
        let mut bf = brute_force(&spec);
        bf.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(d.len(), bf.len());
        for ((v, p), (bv, bp)) in d.values.iter().zip(&d.probs).zip(&bf) {
            assert!((v - bv).abs() < 1e-13 && (p - bp).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_rejects_large_inhomogeneous() {
        let spec = BathSpec::random(30, 0.05, 0.0, 1.0, 1).unwrap();
        assert!(matches!(
            az_distribution(&spec),
            Err(Error::ExactTooLarge { n: 30, .. })
        ));
        // homogeneous is fine at any size, also with mixed polarization
        let mut p = vec![0.1; 40];
        p[3] = 0.7;
        let h = BathSpec::new(vec![1.0 / 40f64.sqrt(); 40], p, 1.0).unwrap();
        let d = az_distribution(&h).unwrap();
        let m = moments(&h);
        assert_eq!(d.len(), 41);
        assert!((d.mean() - m.mean).abs() < 1e-13);
        assert!((d.variance() - m.variance).abs() < 1e-13);
    }

    #[test]
    fn moments_match_enumeration() {
        let spec = BathSpec::homogeneous(10, 0.0, 1.0).unwrap();
        let bf = brute_force(&spec);
        let var: f64 = bf.iter().map(|(a, p)| p * a * a).sum();
        let m4: f64 = bf.iter().map(|(a, p)| p * a.powi(4)).sum();
        let m = moments(&spec);
        assert!((m.variance - 0.25).abs() < 1e-15 && (var - 0.25).abs() < 1e-14);
        assert!((m4 - 3.0 * var * var - m.fourth_cumulant).abs() < 1e-14);
        assert!((m.fourth_cumulant + 1.0 / 80.0).abs() < 1e-15);

        let frozen = spec.with_polarization(1.0);
        let mf = moments(&frozen);
        assert_eq!(mf.variance, 0.0);
        assert_eq!(mf.fourth_cumulant, 0.0);
    }

    #[test]
    fn continuum_dos_properties() {
        let spec = BathSpec::homogeneous(50, 0.0, 1.0).unwrap();
        let dos = continuum_dos(&spec, 0.0).unwrap();
        assert!(dos.mean.abs() < 1e-15 && (dos.sigma - 0.5).abs() < 1e-15);
        let ratio = dos.second_derivative(dos.mean) / dos.density(dos.mean);
        assert!((ratio + 1.0 / (dos.sigma * dos.sigma)).abs() < 1e-12);
        let (lo, hi) = dos.support();
        let mass = quadrature::integrate(|x| dos.density(x), &[lo, hi], Tolerance::default());
        assert!((mass.value - 1.0).abs() < 1e-6);
        assert!(continuum_dos(&spec.with_polarization(1.0), 0.0).is_err());
    }

    #[test]
    fn tabulated_dos_derivatives() {
        let dos = DensityOfStates::tabulated(vec![-1.0, 0.5, 2.0], vec![1.0, 2.0, 1.0], 0.4).unwrap();
        let h = 1e-4;
        let x = 0.3;
        let fd1 = (dos.density(x + h) - dos.density(x - h)) / (2.0 * h);
        let fd2 = (dos.density(x + h) - 2.0 * dos.density(x) + dos.density(x - h)) / (h * h);
        assert!((fd1 - dos.first_derivative(x)).abs() < 1e-7);
        assert!((fd2 - dos.second_derivative(x)).abs() < 1e-5);
        let (lo, hi) = dos.support();
        let mass = quadrature::integrate(|x| dos.density(x), &[lo, hi], Tolerance::default());
        assert!((mass.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn static_trajectory_is_constant() {
        let m = NoiseModel::ou(0.0, 0.25, 0.0);
        let path = noise_trajectory(&m, 0.1, 100, 3).unwrap();
        assert!(path.iter().all(|x| *x == path[0]));
        let s = NoiseModel::static_noise(1.0, 0.25);
        let path = noise_trajectory(&s, 0.1, 10, 3).unwrap();
        assert!(path.iter().all(|x| *x == path[0]));
    }

    #[test]
    fn ou_trajectory_statistics() {
        let gamma = 0.3;
        let dt = 0.5;
        let m = NoiseModel::ou(0.2, 2.0, gamma);
        let path = noise_trajectory(&m, dt, 1_000_000, 42).unwrap();
        let n = path.len() as f64;
        let mean = path.iter().sum::<f64>() / n;
        let var = path.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let lag1 = path
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum::<f64>()
            / (n - 1.0)
            / var;
        assert!((var - 2.0).abs() < 0.02 * 2.0, "var {var}");
        assert!((lag1 - (-gamma * dt).exp()).abs() < 0.01, "lag1 {lag1}");
    }

    #[test]
    fn spectral_trajectory_rejected() {
        let m = NoiseModel::spectral(0.0, vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            noise_trajectory(&m, 0.1, 10, 1),
            Err(Error::UnsupportedNoise(_))
        ));
    }

    #[test]
    fn ou_spectrum_integrates_to_variance() {
        let m = NoiseModel::ou(0.0, 0.7, 0.05);
        // ω = γ tan θ maps the Lorentzian onto a flat density in θ.
        let r = quadrature::integrate(
            |th: f64| {
                let w = 0.05 * th.tan();
                m.spectral_density(w).unwrap() * 0.05 / th.cos().powi(2)
            },
            &[-0.5 * PI + 1e-12, 0.0, 0.5 * PI - 1e-12],
            Tolerance::default(),
        );
        assert!((r.value - 0.7).abs() < 1e-6);
    }

    #[test]
    fn tabulated_autocovariance() {
        // Flat S = c on [-W, W] gives C(τ) = 2c sin(Wτ)/τ.
        let m = NoiseModel::spectral(0.0, vec![0.0, 2.0], vec![0.25, 0.25]).unwrap();
        assert!((m.variance - 1.0).abs() < 1e-15);
        let tau = 1.3;
        assert!((m.autocovariance(tau) - 0.5 * (2.0 * tau).sin() / tau).abs() < 1e-10);
        assert!((m.autocovariance(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cooling_factor() {
        assert_eq!(cooling_improvement(0.0).unwrap(), 1.0);
        assert!((cooling_improvement(0.75).unwrap() - 2.0).abs() < 1e-15);
        assert!(cooling_improvement(1.0).is_err());
    }

    #[test]
    fn dark_state_two_spins() {
        assert!((dark_state_transverse_variance(2).unwrap() - 3.0 / 16.0).abs() < 1e-15);
        assert!(dark_state_transverse_variance(3).is_err());
        assert!(dark_state_transverse_variance(0).is_err());
    }

    #[test]
    fn json_round_trip_and_broadcast() {
        let doc = r#"{"n": 2, "alpha": [0.6, 0.8], "polarization": 0.5, "lambda": 2.0}"#;
        let spec: BathSpec = serde_json::from_str(doc).unwrap();
        assert_eq!(spec.polarization(), &[0.5, 0.5]);
        let back: BathSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(spec, back);
        let bad = r#"{"n": 2, "alpha": [0.6, 0.6], "polarization": 0.5, "lambda": 2.0}"#;
        assert!(serde_json::from_str::<BathSpec>(bad).is_err());
    }
}
