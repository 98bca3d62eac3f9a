//! Command-line front end: scenario configs, sweeps and file output.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical-validity error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bath::{self, BathSpec, DensityOfStates, NoiseModel, EXACT_LIMIT};
use crate::driven_evolution::{
    self as driven, magnus_envelope, trajectory_rabi_mc, Averaging, BathLaw, InitialState,
};
use crate::error::{Error, Result};
use crate::experiment_fit::{self as fitting, Bounds, FitParams};
use crate::free_evolution::{self as free, EchoSchedule, QubitParams};
use crate::io::{self, Header, Table};
use crate::stationary_phase as sp;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "spinbath", version, about = "Qubit dynamics in a quasi-static spin bath")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Scenario config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodArg>,
    /// Monte-Carlo samples (bath draws, trajectories or shot pairs).
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Write results even when an approximation is flagged invalid.
    #[arg(long, global = true)]
    pub allow_invalid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Exact,
    Mc,
    Continuum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Fid,
    Echo,
    Correlator,
    Rabi,
    Lineshape,
    Fit,
    Synth,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Free-induction decay over the time sweep.
    Fid,
    /// Spin-echo fidelity over (t1, t2), or equal arms under decorrelating noise.
    Echo,
    /// Correlation of two binary measurements versus their separation.
    Correlator,
    /// Driven evolution over the time sweep.
    Rabi,
    /// Steady-state population versus detuning.
    Lineshape,
    /// Fit the readout model to a Rabi dataset.
    Fit {
        /// CSV with columns omega, p1, sigma.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pulse length in ns; read from the dataset sidecar when absent.
        #[arg(long)]
        fixed_time: Option<f64>,
    },
    /// Emit a parameter preset (gaas_qd, dqd, martinis).
    Preset {
        name: String,
        /// Nuclear spins (per dot for dqd).
        #[arg(long)]
        n: Option<usize>,
        /// Exchange J in ns⁻¹ for dqd.
        #[arg(long)]
        exchange: Option<f64>,
    },
    /// Check a config and list diagnostics.
    Validate {
        /// Also check what this command would need.
        #[arg(long = "for", value_enum)]
        target: Option<Target>,
    },
    /// Generate a synthetic Rabi dataset (CSV plus JSON sidecar).
    Synth,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath: Option<BathConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubit: Option<QubitParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    /// Bath strength when the bath is not given as spins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    /// Second echo time axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep2: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Averaging>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Measurement duration for the correlator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Polarization {
    Uniform(f64),
    PerSpin(Vec<f64>),
}

impl Default for Polarization {
    fn default() -> Self {
        Polarization::Uniform(0.0)
    }
}

/// Bath given as spins or directly as a density of states of `λ A_z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BathConfig {
    Spins {
        alpha: Vec<f64>,
        #[serde(default)]
        polarization: Polarization,
        lambda: f64,
    },
    Homogeneous {
        n: usize,
        #[serde(default)]
        polarization: f64,
        lambda: f64,
    },
    /// Couplings `1/√N + σ_α g` rescaled to unit norm; `seed` defaults to the run seed.
    Random {
        n: usize,
        sigma_alpha: f64,
        #[serde(default)]
        polarization: f64,
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    GaussianDos {
        mean: f64,
        sigma: f64,
    },
    TabulatedDos {
        values: Vec<f64>,
        weights: Vec<f64>,
        bandwidth: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Lin,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default = "default_variable")]
    pub variable: String,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: Scale,
}

fn default_variable() -> String {
    "t".into()
}

impl Sweep {
    pub fn problem(&self) -> Option<String> {
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Some("bounds must be finite".into());
        }
        if !(self.start < self.stop) {
            return Some(format!("start {} must be below stop {}", self.start, self.stop));
        }
        if self.points < 2 {
            return Some("need at least 2 points".into());
        }
        if self.scale == Scale::Log && !(self.start > 0.0) {
            return Some("log sweeps need start > 0".into());
        }
        None
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.points - 1;
        (0..=n)
            .map(|k| {
                let s = k as f64 / n as f64;
                match self.scale {
                    Scale::Lin => self.start + (self.stop - self.start) * s,
                    Scale::Log => self.start * (self.stop / self.start).powf(s),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<FitParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub params: FitParams,
    pub omega_start: f64,
    pub omega_stop: f64,
    pub points: usize,
    pub fixed_time: f64,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            params: FitParams::reference(),
            omega_start: 0.05,
            omega_stop: 1.0,
            points: 20,
            fixed_time: 25.0,
            noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

/// A machine-readable finding about a config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: &'static str,
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(code: &'static str, path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            code,
            path: path.into(),
            message: message.into(),
        }
    }

    /// Flags an approximation outside its validity range rather than a bad config.
    pub fn is_validity(&self) -> bool {
        matches!(self.code, "STATPHASE_INVALID" | "MAGNUS_INVALID" | "CORRELATOR_INVALID")
    }
}

/// The bath as resolved from a config.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    Spec(BathSpec),
    Dos(DensityOfStates),
}

impl Law {
    pub fn as_law(&self) -> BathLaw<'_> {
        match self {
            Law::Spec(s) => s.into(),
            Law::Dos(d) => d.into(),
        }
    }

    /// Continuum density of `λ A_z`.
    pub fn dos(&self) -> Result<DensityOfStates> {
        match self {
            Law::Spec(s) => bath::continuum_dos(s, 0.0),
            Law::Dos(d) => Ok(d.clone()),
        }
    }
}

impl BathConfig {
    pub fn resolve(&self, seed: u64) -> Result<Law> {
        Ok(match self {
            BathConfig::Spins {
                alpha,
                polarization,
                lambda,
            } => {
                let p = match polarization {
                    Polarization::Uniform(p) => vec![*p; alpha.len()],
                    Polarization::PerSpin(p) => p.clone(),
                };
                Law::Spec(BathSpec::new(alpha.clone(), p, *lambda)?)
            }
            BathConfig::Homogeneous {
                n,
                polarization,
                lambda,
            } => Law::Spec(BathSpec::homogeneous(*n, *polarization, *lambda)?),
            BathConfig::Random {
                n,
                sigma_alpha,
                polarization,
                lambda,
                seed: own,
            } => Law::Spec(BathSpec::random(*n, *sigma_alpha, *polarization, *lambda, own.unwrap_or(seed))?),
            BathConfig::GaussianDos { mean, sigma } => Law::Dos(DensityOfStates::gaussian(*mean, *sigma)?),
            BathConfig::TabulatedDos {
                values,
                weights,
                bandwidth,
            } => Law::Dos(DensityOfStates::tabulated(values.clone(), weights.clone(), *bandwidth)?),
        })
    }
}

/// Load a config, reporting the field path of any parse error.
pub fn load_config(path: &std::path::Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Io(format!("config {path}: {}", e.into_inner()))
    })
}

/// Run-level settings after command-line overrides.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub format: Format,
}

pub fn resolve(mut config: ScenarioConfig, common: &Common) -> Resolved {
    let seed = common.seed.or(config.seed).unwrap_or(0);
    config.seed = Some(seed);
    let samples = common.samples;
    match common.method {
        Some(MethodArg::Exact) => config.method = Some(Averaging::Exact),
        Some(MethodArg::Continuum) => config.method = Some(Averaging::Continuum),
        Some(MethodArg::Mc) => {
            config.method = Some(Averaging::MonteCarlo {
                samples: samples.unwrap_or(DEFAULT_SAMPLES),
                seed,
            })
        }
        None => {
            if let Some(Averaging::MonteCarlo { samples: s, seed: ms }) = &mut config.method {
                if let Some(n) = samples {
                    *s = n;
                }
                if common.seed.is_some() {
                    *ms = seed;
                }
            }
        }
    }
    let format = common
        .format
        .or(config.output.as_ref().and_then(|o| o.format))
        .unwrap_or(Format::Csv);
    let out_path = common.out.clone().or(config.output.as_ref().and_then(|o| o.path.clone()));
    // output location is not part of the reproducible record
    config.output = None;
    let _ = out_path;
    Resolved { config, seed, format }
}

fn bath_diagnostics(cfg: &BathConfig, out: &mut Vec<Diagnostic>) {
    let mut push = |field: &str, msg: String| {
        let code = if field == "alpha" && msg.contains("squared couplings") {
            "BATH_NORM"
        } else {
            "BATH_INVALID"
        };
        out.push(Diagnostic::new(code, format!("bath.{field}"), msg));
    };
    match cfg {
        BathConfig::Spins {
            alpha,
            polarization,
            lambda,
        } => {
            let p = match polarization {
                Polarization::Uniform(p) => vec![*p; alpha.len()],
                Polarization::PerSpin(p) => p.clone(),
            };
            for (field, msg) in BathSpec::diagnose(alpha, &p, *lambda) {
                push(field, msg);
            }
        }
        BathConfig::Homogeneous { n, polarization, lambda } => {
            if *n == 0 {
                push("n", "N must be at least 1".into());
            } else {
                for (field, msg) in BathSpec::diagnose(&[1.0], &[*polarization], *lambda) {
                    push(field, msg);
                }
            }
        }
        BathConfig::Random {
            n,
            sigma_alpha,
            polarization,
            lambda,
            ..
        } => {
            if *n == 0 {
                push("n", "N must be at least 1".into());
            }
            if !(*sigma_alpha >= 0.0 && sigma_alpha.is_finite()) {
                push("sigma_alpha", "must be finite and >= 0".into());
            }
            for (field, msg) in BathSpec::diagnose(&[1.0], &[*polarization], *lambda) {
                push(field, msg);
            }
        }
        BathConfig::GaussianDos { mean, sigma } => {
            if let Err(e) = DensityOfStates::gaussian(*mean, *sigma) {
                out.push(Diagnostic::new("DOS_INVALID", "bath", e.to_string()));
            }
        }
        BathConfig::TabulatedDos {
            values,
            weights,
            bandwidth,
        } => {
            if let Err(e) = DensityOfStates::tabulated(values.clone(), weights.clone(), *bandwidth) {
                out.push(Diagnostic::new("DOS_INVALID", "bath", e.to_string()));
            }
        }
    }
}

fn missing(out: &mut Vec<Diagnostic>, path: &str, what: &str) {
    out.push(Diagnostic::new("CONFIG_MISSING", path, what));
}

/// All diagnostics for `config`; empty iff a run of `target` would accept it.
pub fn validate(config: &ScenarioConfig, target: Option<Target>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let seed = config.seed.unwrap_or(0);
    if let Some(b) = &config.bath {
        bath_diagnostics(b, &mut out);
    }
    let law = if out.is_empty() {
        config.bath.as_ref().and_then(|b| b.resolve(seed).ok())
    } else {
        None
    };
    if let Some(q) = &config.qubit {
        if let Err(e) = q.check() {
            out.push(Diagnostic::new("QUBIT_INVALID", "qubit", e.to_string()));
        }
    }
    if let Some(n) = &config.noise {
        if let Err(e) = n.check() {
            out.push(Diagnostic::new("NOISE_INVALID", "noise", e.to_string()));
        }
    }
    if let Some(l) = config.lambda {
        if !(l >= 0.0 && l.is_finite()) {
            out.push(Diagnostic::new("CONFIG_INVALID", "lambda", "must be finite and >= 0"));
        }
    }
    for (name, s) in [("sweep", &config.sweep), ("sweep2", &config.sweep2)] {
        if let Some(p) = s.as_ref().and_then(|s| s.problem()) {
            out.push(Diagnostic::new("SWEEP_INVALID", name, p));
        }
    }
    if let (Some(method), Some(law)) = (&config.method, &law) {
        match (method, law) {
            (Averaging::Exact, Law::Dos(_)) => out.push(Diagnostic::new(
                "METHOD_INVALID",
                "method",
                "exact averaging needs a bath of spins",
            )),
            (Averaging::Exact, Law::Spec(s)) if !s.is_homogeneous() && s.n() > EXACT_LIMIT => {
                out.push(Diagnostic::new(
                    "EXACT_TOO_LARGE",
                    "method",
                    format!("inhomogeneous bath with N = {} exceeds the exact limit of {EXACT_LIMIT}", s.n()),
                ))
            }
            (Averaging::MonteCarlo { samples, .. }, _) if *samples < 2 => {
                out.push(Diagnostic::new("METHOD_INVALID", "method.samples", "need at least 2 samples"))
            }
            _ => {}
        }
    }
    let Some(target) = target else { return out };
    let qp = config.qubit.unwrap_or(QubitParams::new(0.0, 0.0));
    let dynamic = config.noise.as_ref().is_some_and(|n| !n.is_static());
    match target {
        Target::Fid => {
            if !matches!(law, Some(Law::Spec(_))) && config.bath.is_none() {
                missing(&mut out, "bath", "fid needs a bath of spins");
            } else if matches!(law, Some(Law::Dos(_))) {
                out.push(Diagnostic::new("CONFIG_INVALID", "bath", "fid needs a bath of spins"));
            }
            if config.sweep.is_none() {
                missing(&mut out, "sweep", "time sweep required");
            }
        }
        Target::Echo => {
            if config.sweep.is_none() {
                missing(&mut out, "sweep", "time sweep required");
            }
            if config.noise.is_some() {
                if bath_strength(config, law.as_ref()).is_none() {
                    missing(&mut out, "lambda", "bath strength required with noise");
                }
            } else if config.bath.is_none() {
                missing(&mut out, "bath", "echo needs a bath of spins");
            } else if matches!(law, Some(Law::Dos(_))) {
                out.push(Diagnostic::new("CONFIG_INVALID", "bath", "echo surfaces need a bath of spins"));
            }
        }
        Target::Correlator => {
            if config.sweep.is_none() {
                missing(&mut out, "sweep", "separation sweep required");
            }
            match (&config.noise, config.tau) {
                (None, _) => missing(&mut out, "noise", "correlator needs a noise model"),
                (_, None) => missing(&mut out, "tau", "measurement duration required"),
                (Some(n), Some(tau)) => {
                    if n.cutoff() * tau.abs() > 0.1 {
                        out.push(Diagnostic::new(
                            "CORRELATOR_INVALID",
                            "tau",
                            format!("noise decorrelates within a shot: cutoff·tau = {:.3} > 0.1", n.cutoff() * tau),
                        ));
                    }
                }
            }
            if bath_strength(config, law.as_ref()).is_none() {
                missing(&mut out, "lambda", "bath strength required");
            }
        }
        Target::Rabi => {
            if config.sweep.is_none() {
                missing(&mut out, "sweep", "time sweep required");
            }
            if dynamic {
                let noise = config.noise.as_ref().unwrap();
                match bath_strength(config, law.as_ref()) {
                    None => missing(&mut out, "lambda", "bath strength required with noise"),
                    Some(l) if qp.omega_rabi > 0.0 && noise.check().is_ok() => {
                        let v = (l / qp.omega_rabi).powi(4) * noise.variance.powi(2);
                        if v > driven::MAGNUS_VALIDITY_LIMIT {
                            out.push(Diagnostic::new(
                                "MAGNUS_INVALID",
                                "noise.variance",
                                format!(
                                    "lambda^4 var^2 / Omega^4 = {v:.3} exceeds {}",
                                    driven::MAGNUS_VALIDITY_LIMIT
                                ),
                            ));
                        }
                    }
                    _ => {}
                }
            } else {
                match static_law(config, law.as_ref()) {
                    None => missing(&mut out, "bath", "rabi needs a bath or static noise with lambda"),
                    Some(l) if !qp.is_damped() && qp.omega_rabi > 0.0 => {
                        if let Ok(dos) = l.dos() {
                            let r = sp::zeta_stationary(&dos, qp.delta, qp.omega_rabi, 1.0);
                            if !r.valid {
                                out.push(Diagnostic::new(
                                    "STATPHASE_INVALID",
                                    "qubit.delta",
                                    r.reason.unwrap_or_default(),
                                ));
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        Target::Lineshape => {
            if config.sweep.is_none() {
                missing(&mut out, "sweep", "detuning sweep required");
            }
            if !(qp.omega_rabi > 0.0) {
                out.push(Diagnostic::new("CONFIG_INVALID", "qubit.omega_rabi", "lineshape needs a drive"));
            }
            match static_law(config, law.as_ref()) {
                None => missing(&mut out, "bath", "lineshape needs a bath"),
                Some(l) => {
                    if let (Ok(dos), Some(s)) = (l.dos(), &config.sweep) {
                        if s.problem().is_none() && qp.omega_rabi > 0.0 {
                            let bad: Vec<f64> = s
                                .values()
                                .into_iter()
                                .filter(|d| !sp::lineshape_stationary(&dos, *d, qp.omega_rabi).valid)
                                .collect();
                            if let Some(first) = bad.first() {
                                out.push(Diagnostic::new(
                                    "STATPHASE_INVALID",
                                    "sweep",
                                    format!(
                                        "stationary phase invalid (u <= 0 or vanishing density) at {} detunings, first {first}",
                                        bad.len()
                                    ),
                                ));
                            }
                        }
                    }
                }
            }
        }
        Target::Fit => {
            if config.fit.as_ref().and_then(|f| f.initial).is_some_and(|p| p.check().is_err()) {
                out.push(Diagnostic::new("FIT_INVALID", "fit.initial", "parameters out of range"));
            }
        }
        Target::Synth => {
            let s = config.synth.clone().unwrap_or_default();
            if s.params.check().is_err() {
                out.push(Diagnostic::new("FIT_INVALID", "synth.params", "parameters out of range"));
            }
            if !(s.omega_start > 0.0 && s.omega_start < s.omega_stop && s.points >= 2) {
                out.push(Diagnostic::new("SWEEP_INVALID", "synth", "need 0 < omega_start < omega_stop and points >= 2"));
            }
            if !(s.noise > 0.0) {
                out.push(Diagnostic::new("CONFIG_INVALID", "synth.noise", "must be > 0"));
            }
        }
    }
    out
}

fn bath_strength(config: &ScenarioConfig, law: Option<&Law>) -> Option<f64> {
    config.lambda.or(match law {
        Some(Law::Spec(s)) => Some(s.lambda()),
        _ => None,
    })
}

/// Bath law for quasi-static commands: the bath itself, or a Gaussian
/// density built from static noise and `lambda`.
fn static_law(config: &ScenarioConfig, law: Option<&Law>) -> Option<Law> {
    if let Some(l) = law {
        return Some(l.clone());
    }
    let noise = config.noise.as_ref().filter(|n| n.is_static())?;
    let l = config.lambda?;
    DensityOfStates::gaussian(l * noise.mean, l * noise.variance.sqrt())
        .ok()
        .map(Law::Dos)
}

fn default_method(law: &Law) -> Averaging {
    match law {
        Law::Spec(s) if s.is_homogeneous() || s.n() <= EXACT_LIMIT => Averaging::Exact,
        _ => Averaging::Continuum,
    }
}

enum Output {
    Table(Table),
    Report(Value),
    Written,
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn require<T: Clone>(v: &Option<T>, name: &'static str) -> Result<T> {
    v.clone().ok_or_else(|| Error::arg(name, "missing from config"))
}

fn run_fid(r: &Resolved) -> Result<Output> {
    let cfg = &r.config;
    let Law::Spec(spec) = require(&cfg.bath, "bath")?.resolve(r.seed)? else {
        return Err(Error::arg("bath", "fid needs a bath of spins"));
    };
    let qp = cfg.qubit.unwrap_or(QubitParams::new(0.0, 0.0));
    let t = require(&cfg.sweep, "sweep")?.values();
    let markov = qp.gamma2 > 0.0;
    let mut cols = vec![
        ("t", "time"),
        ("lambda_t_over_sqrt_n", "lambda t / sqrt(N), the revival time axis"),
        ("phi_re", "Re Phi(t), bath-averaged coherence"),
        ("phi_im", "Im Phi(t)"),
        ("phi_abs", "|Phi(t)|"),
        ("fidelity", "F = |Phi|^2"),
        ("gaussian", "large-N limit exp(-gamma_FID^2 t^2/8) of |Phi|"),
        ("short_time_fidelity", "1 - (lambda t)^2/4 sum alpha^2 (1 - P^2)"),
    ];
    if markov {
        cols.push(("markov_abs", "|Phi| times exp(-gamma2 t)"));
    }
    let mut table = Table::new(&cols);
    let scale = spec.lambda() / (spec.n() as f64).sqrt();
    let rows: Vec<Result<Vec<f64>>> = t
        .par_iter()
        .map(|&t| {
            let phi = free::fid_coherence(&spec, qp.delta, t);
            let mut row = vec![
                t,
                scale * t,
                phi.re,
                phi.im,
                phi.norm(),
                phi.norm_sqr(),
                free::fid_gaussian(&spec, t),
                free::fid_fidelity_short_time(&spec, t),
            ];
            if markov {
                row.push(free::fid_with_markov(&spec, &qp, t)?.norm());
            }
            Ok(row)
        })
        .collect();
    for row in rows {
        table.push(row?);
    }
    Ok(Output::Table(table))
}

fn run_echo(r: &Resolved) -> Result<Output> {
    let cfg = &r.config;
    let t1 = require(&cfg.sweep, "sweep")?.values();
    if let Some(noise) = &cfg.noise {
        let law = cfg.bath.as_ref().map(|b| b.resolve(r.seed)).transpose()?;
        let lambda = bath_strength(cfg, law.as_ref()).ok_or_else(|| Error::arg("lambda", "missing from config"))?;
        let qp = cfg.qubit.unwrap_or(QubitParams::new(0.0, 0.0));
        let mut table = Table::new(&[
            ("t", "arm length (pulse at t, echo at 2t)"),
            ("decorrelation_integral", "J(t) = int S(w) sin^4(wt/2)/(w/2)^2 dw"),
            ("echo", "1/2 + 1/2 exp(-2 gamma2 t) exp(-lambda^2 J)"),
        ]);
        let rows: Vec<Result<Vec<f64>>> = t1
            .par_iter()
            .map(|&t| {
                let j = free::echo_decorrelation_integral(noise, t)?;
                Ok(vec![t, j, free::echo_with_decorrelation(noise, &qp, lambda, t)?])
            })
            .collect();
        for row in rows {
            table.push(row?);
        }
        return Ok(Output::Table(table));
    }
    let Law::Spec(spec) = require(&cfg.bath, "bath")?.resolve(r.seed)? else {
        return Err(Error::arg("bath", "echo needs a bath of spins"));
    };
    let t2 = cfg.sweep2.as_ref().map_or_else(|| t1.clone(), |s| s.values());
    let mut table = Table::new(&[
        ("t1", "free evolution before the pi pulse"),
        ("t2", "free evolution after the pi pulse"),
        ("exact", "F_SE = <cos^2(lambda A_z (t1 - t2)/2)>"),
        ("gaussian", "(1 + exp(-gamma_FID^2 (t1 - t2)^2/8))/2"),
    ]);
    let pairs: Vec<(f64, f64)> = t1.iter().flat_map(|&a| t2.iter().map(move |&b| (a, b))).collect();
    let rows: Vec<Result<Vec<f64>>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let f = free::spin_echo_fidelity(&spec, &EchoSchedule::new(a, b)?);
            Ok(vec![a, b, f.exact, f.gaussian])
        })
        .collect();
    for row in rows {
        table.push(row?);
    }
    Ok(Output::Table(table))
}

fn run_correlator(r: &Resolved) -> Result<Output> {
    let cfg = &r.config;
    let noise = require(&cfg.noise, "noise")?;
    let tau = require(&cfg.tau, "tau")?;
    let law = cfg.bath.as_ref().map(|b| b.resolve(r.seed)).transpose()?;
    let lambda = bath_strength(cfg, law.as_ref()).ok_or_else(|| Error::arg("lambda", "missing from config"))?;
    let dt = require(&cfg.sweep, "sweep")?.values();
    let mc = match cfg.method {
        Some(Averaging::MonteCarlo { samples, seed }) => Some((samples, seed)),
        _ => None,
    };
    let mut cols = vec![
        ("dt", "separation between the two measurements"),
        ("value", "(1/8) exp(-(lambda tau)^2 (var - C(dt)))"),
        ("gaussian", "quasi-static Gaussian average (1/4) e^{-s^2}(cosh c - 1)"),
        ("valid", "1 when the noise is quasi-static within a shot"),
    ];
    if mc.is_some() {
        cols.push(("mc_mean", "simulated shot pairs"));
        cols.push(("mc_err", "standard error of mc_mean"));
    }
    let mut table = Table::new(&cols);
    for (k, &d) in dt.iter().enumerate() {
        let c = free::sequential_correlator(&noise, lambda, tau, d)?;
        let mut row = vec![d, c.value, c.gaussian, flag(c.valid)];
        if let Some((shots, seed)) = mc {
            let e = free::sequential_correlator_mc(&noise, lambda, tau, d, shots, seed.wrapping_add(k as u64))?;
            row.extend([e.mean, e.std_error]);
        }
        table.push(row);
    }
    Ok(Output::Table(table))
}

fn run_rabi(r: &Resolved) -> Result<Output> {
    let cfg = &r.config;
    let qp = cfg.qubit.unwrap_or(QubitParams::new(0.0, 0.0));
    let t = require(&cfg.sweep, "sweep")?.values();
    let law = cfg.bath.as_ref().map(|b| b.resolve(r.seed)).transpose()?;
    if let Some(noise) = cfg.noise.as_ref().filter(|n| !n.is_static()) {
        let lambda = bath_strength(cfg, law.as_ref()).ok_or_else(|| Error::arg("lambda", "missing from config"))?;
        let (samples, seed) = match cfg.method {
            Some(Averaging::MonteCarlo { samples, seed }) => (samples, seed),
            _ => (DEFAULT_SAMPLES, r.seed),
        };
        let series = trajectory_rabi_mc(noise, lambda, &qp, &t, InitialState::Up, samples, seed)?;
        let env = if qp.omega_rabi > 0.0 {
            Some(magnus_envelope(noise, lambda, qp.omega_rabi, &t)?)
        } else {
            None
        };
        let exact = if qp.omega_rabi > 0.0 {
            driven::ou_exact_envelope(noise, lambda, qp.omega_rabi, &t).ok()
        } else {
            None
        };
        let mut table = Table::new(&[
            ("t", "time"),
            ("omega_t", "Omega t"),
            ("sz2_mean", "2<S_z>, trajectory average"),
            ("sz2_err", "standard error of sz2_mean"),
            ("sy2_mean", "2<S_y>"),
            ("sy2_err", "standard error of sy2_mean"),
            ("magnus_envelope", "slow-noise decay envelope of the oscillation"),
            ("magnus_valid", "1 when lambda^4 var^2/Omega^4 is within the validity limit"),
            ("exact_envelope", "exact envelope for Gaussian OU noise (NaN for tabulated spectra)"),
        ]);
        for (k, &tk) in t.iter().enumerate() {
            let (e, v) = env.as_ref().map_or((f64::NAN, 0.0), |e| (e.envelope[k], flag(e.valid)));
            table.push(vec![
                tk,
                qp.omega_rabi * tk,
                2.0 * series.mean[k].sz,
                2.0 * series.err[k].sz,
                2.0 * series.mean[k].sy,
                2.0 * series.err[k].sy,
                e,
                v,
                exact.as_ref().map_or(f64::NAN, |x| x[k]),
            ]);
        }
        return Ok(Output::Table(table));
    }
    let law = static_law(cfg, law.as_ref()).ok_or_else(|| Error::arg("bath", "missing from config"))?;
    let method = cfg.method.unwrap_or_else(|| default_method(&law));
    if qp.is_damped() {
        let s = driven::damped_rabi(law.as_law(), &qp, &t, InitialState::Up, &method)?;
        let mut table = Table::new(&[
            ("t", "time"),
            ("omega_t", "Omega t"),
            ("sz2_mean", "2<S_z> with Markovian damping"),
            ("sz2_err", "standard error (Monte Carlo only)"),
            ("sy2_mean", "2<S_y>"),
            ("sy2_err", "standard error"),
            ("sx2_mean", "2<S_x>"),
            ("sx2_err", "standard error"),
        ]);
        for (k, &tk) in t.iter().enumerate() {
            let (m, e) = (s.mean[k].to_array(), s.err[k].to_array());
            table.push(vec![tk, qp.omega_rabi * tk, 2.0 * m[2], 2.0 * e[2], 2.0 * m[1], 2.0 * e[1], 2.0 * m[0], 2.0 * e[0]]);
        }
        return Ok(Output::Table(table));
    }
    let env = driven::rabi_average(law.as_law(), &qp, &t, &method)?;
    let gamma = if qp.omega_rabi > 0.0 {
        driven::short_time_rate(law.as_law(), &qp, &method).ok()
    } else {
        None
    };
    let dos = law.dos().ok();
    let amplitude = 1.0 - env.f.mean;
    let exact_phase = sp::unwrap_phase(
        &t.iter()
            .zip(&env.zeta)
            .map(|(tk, z)| (z * Complex64::from_polar(1.0, qp.omega_rabi * tk)).arg())
            .collect::<Vec<_>>(),
    );
    let mut table = Table::new(&[
        ("t", "time"),
        ("omega_t", "Omega t"),
        ("sz2_mean", "2<S_z> = <f> + Re<zeta>"),
        ("sz2_err", "standard error (Monte Carlo only)"),
        ("sy2_mean", "2<S_y>"),
        ("sy2_err", "standard error"),
        ("zeta_abs", "|<zeta(t)>|"),
        ("zeta_phase", "unwrapped phase of <zeta(t)> e^{i Omega t}"),
        ("short_time", "(1 - <f>) exp(-gamma^2 t^2/2), initial Gaussian decay of |<zeta>|"),
        ("stationary_abs", "|zeta| from the stationary-phase long-time form"),
        ("stationary_phase", "-theta(t), its phase relative to e^{-i Omega t}"),
        ("stationary_valid", "1 when u > 0 and the continuum density is usable"),
    ]);
    for (k, &tk) in t.iter().enumerate() {
        let short = gamma.map_or(f64::NAN, |g| amplitude * (-0.5 * (g * tk).powi(2)).exp());
        let s = dos
            .as_ref()
            .filter(|_| qp.omega_rabi > 0.0)
            .map(|d| sp::zeta_stationary(d, qp.delta, qp.omega_rabi, tk));
        let (s_abs, s_phase, s_valid) = match &s {
            Some(s) if s.valid => (s.value.norm(), -s.theta, 1.0),
            _ => (f64::NAN, f64::NAN, 0.0),
        };
        table.push(vec![
            tk,
            qp.omega_rabi * tk,
            env.sz2[k].mean,
            env.sz2[k].std_error,
            env.sy2[k].mean,
            env.sy2[k].std_error,
            env.zeta[k].norm(),
            exact_phase[k],
            short,
            s_abs,
            s_phase,
            s_valid,
        ]);
    }
    Ok(Output::Table(table))
}

fn run_lineshape(r: &Resolved) -> Result<Output> {
    let cfg = &r.config;
    let qp = require(&cfg.qubit, "qubit")?;
    let deltas = require(&cfg.sweep, "sweep")?.values();
    let law = cfg.bath.as_ref().map(|b| b.resolve(r.seed)).transpose()?;
    let law = static_law(cfg, law.as_ref()).ok_or_else(|| Error::arg("bath", "missing from config"))?;
    let method = cfg.method.unwrap_or_else(|| default_method(&law));
    let dos = law.dos()?;
    let mut table = Table::new(&[
        ("delta", "drive detuning"),
        ("brute", "<f> by direct quadrature over the continuum density"),
        ("stationary", "1 - rho(-delta) sqrt(2 pi Omega/u)"),
        ("u", "kernel timescale 5/(4 Omega) - Omega rho''/rho"),
        ("valid", "1 when the stationary-phase form applies"),
        ("f_mean", "<f> over the bath law with the chosen method (damped steady state when damped)"),
    ]);
    let rows: Vec<Result<Vec<f64>>> = deltas
        .par_iter()
        .map(|&d| {
            let q = QubitParams { delta: d, ..qp };
            let brute = sp::lineshape_bruteforce(&dos, d, qp.omega_rabi)?;
            let s = sp::lineshape_stationary(&dos, d, qp.omega_rabi);
            let f = if q.is_damped() {
                driven::damped_lineshape(law.as_law(), &q, &method)?
            } else {
                driven::rabi_average(law.as_law(), &q, &[0.0], &method)?.f.mean
            };
            Ok(vec![d, brute, s.value.re, s.u, flag(s.valid), f])
        })
        .collect();
    for row in rows {
        table.push(row?);
    }
    Ok(Output::Table(table))
}

fn run_fit(r: &Resolved, data: Option<PathBuf>, fixed_time: Option<f64>) -> Result<Output> {
    let fc = r.config.fit.clone().unwrap_or_default();
    let path = data.or(fc.data).ok_or_else(|| Error::arg("data", "no dataset given"))?;
    let dataset = io::read_dataset(&path, fixed_time.or(fc.fixed_time))?;
    let initial = fc.initial.unwrap_or(FitParams {
        m_uu: 0.8,
        m_dd: 0.9,
        gamma_heat: 0.2,
        lambda: 0.3,
    });
    let report = fitting::fit(&dataset, &initial, &fc.bounds.unwrap_or_default())?;
    Ok(Output::Report(json!({
        "fixed_time": dataset.fixed_time,
        "points": dataset.points.len(),
        "initial": initial,
        "fit": report,
    })))
}

fn run_synth(r: &Resolved, out: Option<&PathBuf>) -> Result<Output> {
    let s = r.config.synth.clone().unwrap_or_default();
    let path = out.ok_or_else(|| Error::arg("out", "synth writes a CSV plus sidecar and needs --out"))?;
    if !(s.points >= 2 && s.omega_start > 0.0 && s.omega_stop > s.omega_start) {
        return Err(Error::arg("synth", "need 0 < omega_start < omega_stop and points >= 2"));
    }
    let omegas: Vec<f64> = (0..s.points)
        .map(|k| s.omega_start + (s.omega_stop - s.omega_start) * k as f64 / (s.points - 1) as f64)
        .collect();
    let data = fitting::synthetic_dataset(&s.params, &omegas, s.fixed_time, s.noise, r.seed)?;
    let meta = json!({
        "generator": concat!("spinbath ", env!("CARGO_PKG_VERSION")),
        "command": "synth",
        "seed": r.seed,
        "config": r.config,
    });
    io::write_dataset(path, &data, &meta)?;
    Ok(Output::Written)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Quadrature { .. } | Error::Integration { .. } | Error::Fit(_) => EXIT_INVALID,
        _ => EXIT_CONFIG,
    }
}

fn report_diagnostics(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("error[{}] {}: {}", d.code, d.path, d.message);
    }
}

fn write_output(out: Option<&PathBuf>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Fid => "fid",
        Command::Echo => "echo",
        Command::Correlator => "correlator",
        Command::Rabi => "rabi",
        Command::Lineshape => "lineshape",
        Command::Fit { .. } => "fit",
        Command::Preset { .. } => "preset",
        Command::Validate { .. } => "validate",
        Command::Synth => "synth",
    }
}

/// Run a parsed command line and return the process exit code.
pub fn run(cli: Cli) -> i32 {
    let config = match &cli.common.config {
        Some(p) => match load_config(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error[CONFIG_PARSE] {e}");
                return EXIT_CONFIG;
            }
        },
        None => ScenarioConfig::default(),
    };
    let out_path = cli
        .common
        .out
        .clone()
        .or(config.output.as_ref().and_then(|o| o.path.clone()));
    let r = resolve(config, &cli.common);
    let name = command_name(&cli.command);
    let header = Header {
        command: name.to_string(),
        seed: r.seed,
        config: serde_json::to_value(&r.config).unwrap_or(Value::Null),
    };
    let target = match &cli.command {
        Command::Fid => Some(Target::Fid),
        Command::Echo => Some(Target::Echo),
        Command::Correlator => Some(Target::Correlator),
        Command::Rabi => Some(Target::Rabi),
        Command::Lineshape => Some(Target::Lineshape),
        Command::Fit { .. } => Some(Target::Fit),
        Command::Synth => Some(Target::Synth),
        Command::Preset { .. } => None,
        Command::Validate { target } => {
            let diags = validate(&r.config, *target);
            let res = write_output(out_path.as_ref(), |w| {
                let text = serde_json::to_string_pretty(&diags).map_err(|e| Error::Io(e.to_string()))?;
                writeln!(w, "{text}")?;
                Ok(())
            });
            if let Err(e) = res {
                eprintln!("error: {e}");
                return EXIT_CONFIG;
            }
            return if diags.iter().any(|d| !d.is_validity()) {
                EXIT_CONFIG
            } else if diags.is_empty() {
                EXIT_OK
            } else {
                EXIT_INVALID
            };
        }
    };
    if let Some(target) = target {
        let diags = validate(&r.config, Some(target));
        if diags.iter().any(|d| !d.is_validity()) {
            report_diagnostics(&diags);
            return EXIT_CONFIG;
        }
        if !diags.is_empty() && !cli.common.allow_invalid {
            report_diagnostics(&diags);
            eprintln!("rerun with --allow-invalid to write the results anyway");
            return EXIT_INVALID;
        }
    }
    let result = match &cli.command {
        Command::Fid => run_fid(&r),
        Command::Echo => run_echo(&r),
        Command::Correlator => run_correlator(&r),
        Command::Rabi => run_rabi(&r),
        Command::Lineshape => run_lineshape(&r),
        Command::Fit { data, fixed_time } => run_fit(&r, data.clone(), *fixed_time),
        Command::Preset { name, n, exchange } => fitting::preset(name, *n, *exchange)
            .and_then(|p| serde_json::to_value(p).map_err(|e| Error::Io(e.to_string())))
            .map(Output::Report),
        Command::Synth => run_synth(&r, out_path.as_ref()),
        Command::Validate { .. } => unreachable!(),
    };
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let written = match output {
        Output::Written => Ok(()),
        Output::Table(table) => write_output(out_path.as_ref(), |w| match r.format {
            Format::Csv => io::write_csv(w, &header, &table),
            Format::Json => io::write_json(w, &header, &table),
        }),
        Output::Report(v) => write_output(out_path.as_ref(), |w| io::write_report(w, &header, &v)),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}
