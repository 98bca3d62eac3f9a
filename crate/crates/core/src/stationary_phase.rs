//! Continuum lineshape and `⟨ζ(t)⟩` integrals over a density of states.
//!
//! Brute-force routes integrate directly over the bath eigenvalue `Λ`,
//! where the integrands are smooth. The closed forms come from mapping to
//! `ω = √((Λ+δ)² + Ω²)` and expanding around the branch point `ω = Ω`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::bath::DensityOfStates;
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};

const LINESHAPE_TOLERANCE: f64 = 1e-8;
const ZETA_TOLERANCE: f64 = 1e-6;

/// A stationary-phase estimate with its effective time and phase.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPhaseResult {
    /// NaN when `valid` is false.
    pub value: Complex64,
    pub u: f64,
    /// `√(t² + u²)`.
    pub tau: f64,
    /// `½ atan(t/u)`.
    pub theta: f64,
    pub valid: bool,
    pub reason: Option<String>,
}

impl StationaryPhaseResult {
    fn invalid(u: f64, t: f64, reason: impl Into<String>) -> Self {
        StationaryPhaseResult {
            value: Complex64::new(f64::NAN, f64::NAN),
            u,
            tau: t.hypot(u),
            theta: f64::NAN,
            valid: false,
            reason: Some(reason.into()),
        }
    }
}

fn check_drive(omega_rabi: f64) -> Result<()> {
    if omega_rabi.is_finite() && omega_rabi >= 0.0 {
        Ok(())
    } else {
        Err(Error::arg("omega_rabi", "must be finite and >= 0"))
    }
}

/// `ρ(−δ − √(ω²−Ω²)) + ρ(−δ + √(ω²−Ω²))`.
pub fn rho_sym(dos: &DensityOfStates, delta: f64, omega_rabi: f64, omega: f64) -> Result<f64> {
    if !(omega >= omega_rabi) {
        return Err(Error::arg("omega", "must be >= the Rabi frequency"));
    }
    let s = ((omega - omega_rabi) * (omega + omega_rabi)).sqrt();
    Ok(dos.density(-delta - s) + dos.density(-delta + s))
}

/// Breakpoints over the support: panels no wider than `width`, plus the
/// resonance `Λ = −δ` and the component centers.
fn lambda_points(dos: &DensityOfStates, delta: f64, width: f64) -> Vec<f64> {
    let (lo, hi) = dos.support();
    let narrowest = dos
        .components()
        .iter()
        .map(|c| c.2)
        .fold(f64::INFINITY, f64::min);
    let width = width.min(0.5 * narrowest).max((hi - lo) / 200_000.0);
    let mut pts = quadrature::panel_points(lo, hi, width, 8);
    pts.extend(dos.components().iter().map(|c| c.0));
    pts.push(-delta);
    pts.retain(|p| *p >= lo && *p <= hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Steady-state `⟨f⟩ = 1 − ∫ ρ(Λ) Ω²/((Λ+δ)² + Ω²) dΛ` by direct quadrature.
pub fn lineshape_bruteforce(dos: &DensityOfStates, delta: f64, omega_rabi: f64) -> Result<f64> {
    check_drive(omega_rabi)?;
    if omega_rabi == 0.0 {
        return Ok(1.0);
    }
    let w2 = omega_rabi * omega_rabi;
    let mut pts = lambda_points(dos, delta, f64::INFINITY);
    let (lo, hi) = (pts[0], *pts.last().unwrap());
    for k in [1.0, 3.0, 10.0, 30.0] {
        pts.extend([-delta - k * omega_rabi, -delta + k * omega_rabi]);
    }
    pts.retain(|p| *p >= lo && *p <= hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let r = quadrature::integrate(
        |x| {
            let d = x + delta;
            dos.density(x) * w2 / (d * d + w2)
        },
        &pts,
        Tolerance::new(1e-13, 1e-13),
    );
    let mass = r.within(LINESHAPE_TOLERANCE)?;
    Ok((1.0 - mass).clamp(0.0, 1.0))
}

/// The same lineshape through `ω = Ω + x²`, which removes the `1/√(ω−Ω)`
/// endpoint singularity of the `ω`-space form.
pub fn lineshape_transformed(dos: &DensityOfStates, delta: f64, omega_rabi: f64) -> Result<f64> {
    check_drive(omega_rabi)?;
    if omega_rabi == 0.0 {
        return Ok(1.0);
    }
    let w = omega_rabi;
    let mass = transformed_integral(dos, delta, w, |x, rho| {
        2.0 * w * w * rho / ((x * x + w) * (x * x + 2.0 * w).sqrt())
    })?;
    Ok((1.0 - mass).clamp(0.0, 1.0))
}

/// `∫_Ω^∞ ρ_sym(ω) ω/√(ω²−Ω²) dω` in the `x²` variables; equals one.
pub fn transformed_mass(dos: &DensityOfStates, delta: f64, omega_rabi: f64) -> Result<f64> {
    check_drive(omega_rabi)?;
    let w = omega_rabi;
    transformed_integral(dos, delta, w, |x, rho| {
        2.0 * (w + x * x) * rho / (x * x + 2.0 * w).sqrt()
    })
}

fn transformed_integral(
    dos: &DensityOfStates,
    delta: f64,
    omega_rabi: f64,
    g: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    let (lo, hi) = dos.support();
    let s_max = (lo + delta).abs().max((hi + delta).abs());
    let x_of = |s: f64| (s.hypot(omega_rabi) - omega_rabi).max(0.0).sqrt();
    let mut pts = quadrature::panel_points(0.0, x_of(s_max), f64::INFINITY, 400);
    for (c, _, width) in dos.components() {
        for k in -12..=12 {
            pts.push(x_of((c + delta + k as f64 * width).abs()));
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let r = quadrature::integrate(
        |x| {
            let omega = omega_rabi + x * x;
            g(x, rho_sym(dos, delta, omega_rabi, omega).unwrap_or(0.0))
        },
        &pts,
        Tolerance::new(1e-13, 1e-13),
    );
    r.within(LINESHAPE_TOLERANCE)
}

/// Kernel timescale `u = 5/(4Ω) − Ω ρ''(−δ)/ρ(−δ)`.
pub fn u_timescale(dos: &DensityOfStates, delta: f64, omega_rabi: f64) -> Result<f64> {
    if !(omega_rabi > 0.0 && omega_rabi.is_finite()) {
        return Err(Error::arg("omega_rabi", "must be finite and > 0"));
    }
    let rho = dos.density(-delta);
    if !(rho > f64::MIN_POSITIVE) {
        return Err(Error::Degenerate(format!(
            "density vanishes at the resonance -delta = {}",
            -delta
        )));
    }
    Ok(1.25 / omega_rabi - omega_rabi * dos.second_derivative(-delta) / rho)
}

/// Weak-drive lineshape `1 − ρ(−δ)√(2πΩ/u)`.
pub fn lineshape_stationary(dos: &DensityOfStates, delta: f64, omega_rabi: f64) -> StationaryPhaseResult {
    stationary(dos, delta, omega_rabi, 0.0, |rho, u, _, _| {
        Complex64::new(1.0 - rho * (2.0 * PI * omega_rabi / u).sqrt(), 0.0)
    })
}

/// Long-time form `ρ(−δ) e^{−iΩt} √(2πΩ) e^{−iθ}/√τ` of `⟨ζ(t)⟩`.
pub fn zeta_stationary(dos: &DensityOfStates, delta: f64, omega_rabi: f64, t: f64) -> StationaryPhaseResult {
    if !(t >= 0.0) {
        return StationaryPhaseResult::invalid(f64::NAN, t, "time must be >= 0");
    }
    stationary(dos, delta, omega_rabi, t, |rho, _, tau, theta| {
        Complex64::from_polar(
            rho * (2.0 * PI * omega_rabi / tau).sqrt(),
            -omega_rabi * t - theta,
        )
    })
}

fn stationary(
    dos: &DensityOfStates,
    delta: f64,
    omega_rabi: f64,
    t: f64,
    value: impl Fn(f64, f64, f64, f64) -> Complex64,
) -> StationaryPhaseResult {
    let u = match u_timescale(dos, delta, omega_rabi) {
        Ok(u) => u,
        Err(e) => return StationaryPhaseResult::invalid(f64::NAN, t, e.to_string()),
    };
    if !(u > 0.0) {
        return StationaryPhaseResult::invalid(u, t, format!("u = {u} <= 0: detuning dominated"));
    }
    let tau = t.hypot(u);
    let theta = 0.5 * (t / u).atan();
    StationaryPhaseResult {
        value: value(dos.density(-delta), u, tau, theta),
        u,
        tau,
        theta,
        valid: true,
        reason: None,
    }
}

/// `⟨ζ(t)⟩ = ∫ ρ(Λ) Ω² e^{−iωt}/ω² dΛ` by direct quadrature with panels of at
/// most a quarter oscillation period.
pub fn zeta_bruteforce(dos: &DensityOfStates, delta: f64, omega_rabi: f64, t: f64) -> Result<Complex64> {
    check_drive(omega_rabi)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::arg("t", "must be finite and >= 0"));
    }
    if omega_rabi == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let w2 = omega_rabi * omega_rabi;
    let mut width = 0.5 * omega_rabi;
    if t > 0.0 {
        width = width.min(0.5 * PI / t);
    }
    let pts = lambda_points(dos, delta, width);
    let r = quadrature::integrate(
        |x| {
            let d = x + delta;
            let o2 = d * d + w2;
            Complex64::from_polar(dos.density(x) * w2 / o2, -o2.sqrt() * t)
        },
        &pts,
        Tolerance::new(1e-11, 1e-11),
    );
    r.within(ZETA_TOLERANCE)
}

/// Unwrap a sequence of phases so consecutive entries differ by less than π.
pub fn unwrap_phase(phases: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(phases.len());
    let mut offset = 0.0f64;
    for (k, &p) in phases.iter().enumerate() {
        if k > 0 {
            let jump = p + offset - out[k - 1];
            offset -= 2.0 * PI * (jump / (2.0 * PI)).round();
        }
        out.push(p + offset);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::BathSpec;
    use crate::driven_evolution::{rabi_average, Averaging};
    use crate::free_evolution::QubitParams;

    fn gauss(sigma: f64) -> DensityOfStates {
        DensityOfStates::gaussian(0.0, sigma).unwrap()
    }

    #[test]
    fn rho_sym_examples() {
        let dos = DensityOfStates::gaussian(0.3, 0.7).unwrap();
        let r = rho_sym(&dos, -0.3, 1.0, 1.0).unwrap();
        assert!((r - 2.0 * dos.density(0.3)).abs() < 1e-15);
        assert!(rho_sym(&dos, 0.0, 1.0, 0.9).is_err());
        for w in [1.0, 2.0, 5.0] {
            assert!((transformed_mass(&dos, 0.2, w).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn lineshape_limits_and_dual_route() {
        let dos = gauss(1.0);
        assert_eq!(lineshape_bruteforce(&dos, 0.0, 0.0).unwrap(), 1.0);
        assert!(lineshape_bruteforce(&dos, 0.0, 1e3).unwrap() < 1e-5);
        for (delta, w) in [(0.0, 0.1), (0.5, 1.0), (-2.0, 0.3), (0.0, 4.0)] {
            let a = lineshape_bruteforce(&dos, delta, w).unwrap();
            let b = lineshape_transformed(&dos, delta, w).unwrap();
            assert!((a - b).abs() < 1e-6, "{delta} {w}: {a} vs {b}");
            assert!((0.0..=1.0).contains(&a));
        }
        let mix = DensityOfStates::tabulated(vec![-1.0, 0.5], vec![0.3, 0.7], 0.4).unwrap();
        let a = lineshape_bruteforce(&mix, 0.2, 0.3).unwrap();
        assert!((a - lineshape_transformed(&mix, 0.2, 0.3).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn u_examples() {
        for (sigma, w) in [(1.0, 0.5), (4.0, 1.0), (0.5, 2.0 * PI)] {
            let u = u_timescale(&gauss(sigma), 0.0, w).unwrap();
            assert!((u - (1.25 / w + w / (sigma * sigma))).abs() < 1e-12);
        }
        assert!((u_timescale(&gauss(1e6), 0.0, 2.0).unwrap() - 0.625).abs() < 1e-9);
        // far out on the flank the curvature is positive
        let r = lineshape_stationary(&gauss(1.0), 3.0, 1.0);
        assert!(r.u < 0.0 && !r.valid && r.value.re.is_nan());
        let r = zeta_stationary(&gauss(1.0), 100.0, 1.0, 1.0);
        assert!(!r.valid && r.reason.is_some());
    }

    #[test]
    fn stationary_lineshape_depth() {
        // weak drive over a broad density: the closed form undershoots the
        // Lorentzian depth πΩρ by the fixed factor √(8/(5π))
        let dos = gauss(4.0);
        let w = 1e-3;
        let brute = 1.0 - lineshape_bruteforce(&dos, 0.0, w).unwrap();
        let sp = 1.0 - lineshape_stationary(&dos, 0.0, w).value.re;
        assert!((brute / (PI * w * dos.density(0.0)) - 1.0).abs() < 1e-3);
        assert!((sp / brute - (8.0 / (5.0 * PI)).sqrt()).abs() < 1e-3, "{sp} vs {brute}");
        let r = lineshape_stationary(&gauss(1.0), 0.0, 1e-12);
        assert!((r.value.re - 1.0).abs() < 1e-5);
    }

    #[test]
    fn stationary_lineshape_depth_scaling() {
        let slope = |sigma: f64, omegas: [f64; 2]| {
            let dos = gauss(sigma);
            let d = omegas.map(|w| 1.0 - lineshape_stationary(&dos, 0.0, w).value.re);
            (d[1] / d[0]).ln() / (omegas[1] / omegas[0]).ln()
        };
        // saturates once the curvature term Ω/σ² dominates u
        assert!(slope(0.1, [1.0, 8.0]).abs() < 0.05);
        // linear while 5/(4Ω) dominates
        assert!((slope(10.0, [0.01, 0.08]) - 1.0).abs() < 0.05);
    }

    #[test]
    fn zeta_identities() {
        let dos = DensityOfStates::gaussian(0.2, 0.8).unwrap();
        let z0 = zeta_bruteforce(&dos, 0.1, 1.3, 0.0).unwrap();
        let f = lineshape_bruteforce(&dos, 0.1, 1.3).unwrap();
        assert!((z0.re - (1.0 - f)).abs() < 1e-10 && z0.im.abs() < 1e-14);
        let frozen = DensityOfStates::gaussian(-0.4, 1e-7).unwrap();
        let z = zeta_bruteforce(&frozen, 0.4, 2.0, 3.0).unwrap();
        assert!((z - Complex64::from_polar(1.0, -6.0)).norm() < 1e-9);
    }

    #[test]
    fn translation_invariance() {
        let dos = DensityOfStates::gaussian(0.3, 1.1).unwrap();
        let c = 2.5;
        let moved = dos.shifted(c);
        let a = lineshape_bruteforce(&dos, 0.2, 0.7).unwrap();
        let b = lineshape_bruteforce(&moved, 0.2 - c, 0.7).unwrap();
        assert!((a - b).abs() < 1e-8);
        let a = zeta_bruteforce(&dos, 0.2, 0.7, 13.0).unwrap();
        let b = zeta_bruteforce(&moved, 0.2 - c, 0.7, 13.0).unwrap();
        assert!((a - b).norm() < 1e-8);
    }

    #[test]
    fn stationary_phase_form() {
        let dos = gauss(4.0);
        let r = zeta_stationary(&dos, 0.0, 1.0, 0.0);
        assert!(r.theta == 0.0 && r.tau == r.u);
        let r = zeta_stationary(&dos, 0.0, 1.0, 1e9);
        assert!((r.theta - PI / 4.0).abs() < 1e-8);
        let (a, b) = (
            zeta_stationary(&dos, 0.0, 1.0, 20.0).value.norm(),
            zeta_stationary(&dos, 0.0, 1.0, 80.0).value.norm(),
        );
        let (c, d) = (
            zeta_bruteforce(&dos, 0.0, 1.0, 20.0).unwrap().norm(),
            zeta_bruteforce(&dos, 0.0, 1.0, 80.0).unwrap().norm(),
        );
        assert!(((b / a) / (d / c) - 1.0).abs() < 0.05, "{} vs {}", b / a, d / c);
    }

    #[test]
    fn stationary_matches_bruteforce() {
        let dos = gauss(2.0);
        for k in 0..=18 {
            let t = 10.0 + 5.0 * k as f64;
            let brute = zeta_bruteforce(&dos, 0.0, 1.0, t).unwrap();
            let sp = zeta_stationary(&dos, 0.0, 1.0, t).value;
            assert!((sp - brute).norm() < 0.1 * brute.norm(), "{t}");
        }
    }

    #[test]
    fn long_time_phase_is_minus_quarter_pi() {
        let dos = gauss(4.0);
        let t: Vec<f64> = (0..=30).map(|k| 50.0 + 5.0 * k as f64).collect();
        let phases: Vec<f64> = t
            .iter()
            .map(|&t| (zeta_bruteforce(&dos, 0.0, 1.0, t).unwrap() * Complex64::from_polar(1.0, t)).arg())
            .collect();
        for p in unwrap_phase(&phases) {
            assert!((p + PI / 4.0).abs() < 0.05, "{p}");
        }
    }

    #[test]
    fn finite_bath_matches_continuum() {
        // 200 equal couplings keep the exact law tractable; λ = 1, Ω = 2π
        let spec = BathSpec::homogeneous(200, 0.0, 1.0).unwrap();
        let qp = QubitParams::new(0.0, 2.0 * PI);
        let t: Vec<f64> = (0..=40).map(|k| 0.25 * k as f64).collect();
        let exact = rabi_average((&spec).into(), &qp, &t, &Averaging::Exact).unwrap();
        let dos = crate::bath::continuum_dos(&spec, 0.0).unwrap();
        for (k, &tk) in t.iter().enumerate() {
            let z = zeta_bruteforce(&dos, 0.0, 2.0 * PI, tk).unwrap();
            assert!((z - exact.zeta[k]).norm() < 0.02, "{tk}");
        }
    }

    #[test]
    fn unwrap_removes_jumps() {
        let raw = [3.0, -3.0, -2.9, 3.1];
        let u = unwrap_phase(&raw);
        assert!(u.windows(2).all(|w| (w[1] - w[0]).abs() < PI));
        assert!((u[1] - (2.0 * PI - 3.0)).abs() < 1e-12);
    }
}
