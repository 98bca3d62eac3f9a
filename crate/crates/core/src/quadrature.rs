//! Numerical quadrature: adaptive Gauss–Kronrod, Gauss–Legendre and
//! Gauss–Hermite rules.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Values that can be integrated: reals and complex numbers.
pub trait QuadValue:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn magnitude(self) -> f64;
}

impl QuadValue for f64 {
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<T> {
    pub value: T,
    /// Estimated absolute error.
    pub error: f64,
    pub intervals: usize,
}

impl<T: QuadValue> QuadResult<T> {
    /// Fails when the estimated error exceeds `tolerance`.
    pub fn within(self, tolerance: f64) -> Result<T> {
        if self.error <= tolerance && self.error.is_finite() {
            Ok(self.value)
        } else {
            Err(Error::Quadrature {
                error: self.error,
                tolerance,
            })
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-12,
            rel: 1e-10,
            max_intervals: 200_000,
        }
    }
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance {
            abs,
            rel,
            ..Default::default()
        }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod abscissae (XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel with its embedded 7-point Gauss estimate.
pub fn gauss_kronrod15<T: QuadValue>(f: &impl Fn(f64) -> T, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kron = kron + pair * WGK[j];
        if j % 2 == 1 {
            gauss = gauss + pair * WG[j / 2];
        }
    }
    let kron = kron * h;
    let gauss = gauss * h;
    (kron, (kron - gauss).magnitude())
}

struct Panel<T> {
    a: f64,
    b: f64,
    value: T,
    error: f64,
}

impl<T> PartialEq for Panel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T> Eq for Panel<T> {}
impl<T> PartialOrd for Panel<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Panel<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod quadrature over `[points[0], points[last]]`.
///
/// Interior entries of `points` are used as initial panel boundaries, which
/// is how callers pin down oscillation periods or kinks.
pub fn integrate<T: QuadValue>(
    f: impl Fn(f64) -> T,
    points: &[f64],
    tol: Tolerance,
) -> QuadResult<T> {
    assert!(points.len() >= 2, "need at least two breakpoints");
    let mut heap = BinaryHeap::with_capacity(points.len() * 2);
    for w in points.windows(2) {
        if w[1] > w[0] {
            let (value, error) = gauss_kronrod15(&f, w[0], w[1]);
            heap.push(Panel {
                a: w[0],
                b: w[1],
                value,
                error,
            });
        }
    }
    loop {
        let (total, err) = heap.iter().fold((T::default(), 0.0), |(v, e), p| {
            (v + p.value, e + p.error)
        });
        let target = tol.abs.max(tol.rel * total.magnitude());
        if err <= target || heap.len() >= tol.max_intervals || heap.is_empty() {
            return QuadResult {
                value: total,
                error: err,
                intervals: heap.len(),
            };
        }
        // Refine the worst panels in batches to keep the bookkeeping cheap.
        let batch = (heap.len() / 8).max(1);
        for _ in 0..batch {
            let Some(worst) = heap.pop() else { break };
            let mid = 0.5 * (worst.a + worst.b);
            if mid <= worst.a || mid >= worst.b {
                // Panel cannot be split further in floating point.
                heap.push(Panel {
                    error: 0.0,
                    ..worst
                });
                continue;
            }
            for (a, b) in [(worst.a, mid), (mid, worst.b)] {
                let (value, error) = gauss_kronrod15(&f, a, b);
                heap.push(Panel { a, b, value, error });
            }
        }
    }
}

/// Breakpoints splitting `[a, b]` into at least `min_panels` pieces, none
/// wider than `max_width`.
pub fn panel_points(a: f64, b: f64, max_width: f64, min_panels: usize) -> Vec<f64> {
    let n = (((b - a) / max_width).ceil() as usize).max(min_panels).max(1);
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// Integral over `[lo, hi]` of an integrand oscillating with period `period`
/// in its argument; panels of a quarter period are laid out over the first
/// 100 periods and at the extra breakpoints `marks`, the rest is left to
/// adaptive refinement.
pub fn oscillatory_segment<T: QuadValue>(
    f: impl Fn(f64) -> T,
    lo: f64,
    hi: f64,
    period: f64,
    marks: &[f64],
    tol: Tolerance,
) -> QuadResult<T> {
    let mut pts = vec![lo, hi];
    pts.extend(marks.iter().copied().filter(|p| *p > lo && *p < hi));
    let resolved = hi.min(lo.max(100.0 * period));
    if resolved > lo {
        pts.extend(panel_points(lo, resolved, 0.25 * period, 1));
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    integrate(f, &pts, tol)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Hermite nodes and weights for the weight function `exp(-x²)`.
///
/// Nodes start from the eigenvalues of the Jacobi matrix and are polished by
/// Newton iteration on the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (0.5 * i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guesses.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for mut z in guesses {
        let mut pp = 1.0;
        for _ in 0..20 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x.push(z);
        w.push(2.0 / (pp * pp));
    }
    (x, w)
}

/// Nodes and probability weights reproducing expectations over `N(mean, sigma²)`.
pub fn gaussian_nodes(mean: f64, sigma: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite(n);
    let norm = std::f64::consts::PI.sqrt();
    let nodes = x
        .iter()
        .map(|xi| mean + std::f64::consts::SQRT_2 * sigma * xi)
        .collect();
    let weights = w.iter().map(|wi| wi / norm).collect();
    (nodes, weights)
}
