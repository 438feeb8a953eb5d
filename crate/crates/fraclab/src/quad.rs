//! One-dimensional adaptive quadrature and fixed-order tensor rules.
//!
//! Everything in the crate that needs an integral funnels through here:
//! a globally adaptive Gauss–Kronrod (G7, K15) scheme for 1-d integrals,
//! Gauss–Legendre tensor rules for integrals over grid cells, and a
//! periodic trapezoid rule for angular integrals. All routines are pure
//! and use a fixed evaluation and summation order, so repeated runs give
//! bit-identical results.

use thiserror::Error;

/// K15 abscissae on [0, 1] side of the symmetric rule.
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

/// K15 weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_2,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

/// Embedded G7 weights (on the odd K15 abscissae).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    /// Best estimate of the integral.
    pub value: f64,
    /// Estimated absolute error.
    pub error: f64,
    /// Number of integrand evaluations.
    pub evaluations: usize,
    /// Whether the requested tolerance was met.
    pub converged: bool,
}

impl Quadrature {
    /// Converts a non-converged result into an error carrying the achieved accuracy.
    pub fn require(self, tol: f64) -> Result<f64, QuadError> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(QuadError::NonConvergent {
                requested: tol,
                achieved: self.error,
                value: self.value,
            })
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum QuadError {
    #[error("quadrature did not reach tolerance {requested:.3e}: achieved {achieved:.3e} (value {value:.6e})")]
    NonConvergent {
        requested: f64,
        achieved: f64,
        value: f64,
    },
    #[error("invalid integration interval [{a}, {b}]")]
    BadInterval { a: f64, b: f64 },
}

/// Single Gauss–Kronrod panel; returns (Kated value, error estimate).
fn gk15_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut res_abs = kronrod.abs();
    for j in 0..7 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        let sum = f1 + f2;
        kronrod += WGK[j] * sum;
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * sum;
        }
    }
    let value = kronrod * half;
    let raw = ((kronrod - gauss) * half).abs();
    // QUADPACK-style rescaling keeps the estimate meaningful on rough integrands.
    let scale = res_abs * half.abs();
    let err = if scale > 0.0 && raw > 0.0 {
        let e = raw * (200.0 * raw / scale).powf(1.5).min(1.0).max(raw / scale);
        e.min(scale)
    } else {
        raw
    };
    (value, err.max(f64::EPSILON * scale))
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Splits the panel with the largest error estimate until the summed
/// estimate drops below `tol · max(1, |value|)` (absolute for small values,
/// relative for large ones) or the panel budget is exhausted. Never panics
/// on rough integrands; inspect [`Quadrature::converged`].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Quadrature {
    integrate_with_breakpoints(f, &[a, b], tol)
}

/// Adaptive integration with interior breakpoints (e.g. known kinks).
///
/// `points` must be non-decreasing; integrates over [points[0], points[last]].
pub fn integrate_with_breakpoints<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: f64) -> Quadrature {
    assert!(points.len() >= 2, "need at least two breakpoints");
    let mut panels: Vec<Panel> = Vec::new();
    let mut evals = 0usize;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a == b {
            continue;
        }
        let (v, e) = gk15_panel(&f, a, b);
        evals += 15;
        panels.push(Panel {
            a,
            b,
            value: v,
            error: e,
        });
    }
    if panels.is_empty() {
        return Quadrature {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
            converged: true,
        };
    }
    const MAX_PANELS: usize = 4096;
    loop {
        let total_err: f64 = panels.iter().map(|p| p.error).sum();
        let rough: f64 = panels.iter().map(|p| p.value).sum();
        let target = tol * rough.abs().max(1.0);
        if total_err <= target || panels.len() >= MAX_PANELS {
            let value = sorted_sum(panels.iter().map(|p| p.value));
            return Quadrature {
                value,
                error: total_err,
                evaluations: evals,
                converged: total_err <= tol * value.abs().max(1.0),
            };
        }
        // Deterministic worst-panel selection: largest error, ties by left endpoint.
        let mut worst = 0;
        for (i, p) in panels.iter().enumerate() {
            let w = &panels[worst];
            if p.error > w.error || (p.error == w.error && p.a < w.a) {
                worst = i;
            }
        }
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Interval at machine resolution; put it back and accept.
            panels.push(p);
            let value = sorted_sum(panels.iter().map(|p| p.value));
            let total_err: f64 = panels.iter().map(|p| p.error).sum();
            return Quadrature {
                value,
                error: total_err,
                evaluations: evals,
                converged: total_err <= tol * value.abs().max(1.0),
            };
        }
        let (v1, e1) = gk15_panel(&f, p.a, mid);
        let (v2, e2) = gk15_panel(&f, mid, p.b);
        evals += 30;
        panels.push(Panel {
            a: p.a,
            b: mid,
            value: v1,
            error: e1,
        });
        panels.push(Panel {
            a: mid,
            b: p.b,
            value: v2,
            error: e2,
        });
    }
}

/// Sums panel contributions in a reproducible order (by magnitude, ascending).
fn sorted_sum<I: Iterator<Item = f64>>(it: I) -> f64 {
    let mut vals: Vec<f64> = it.collect();
    vals.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    vals.iter().sum()
}

/// Gauss–Legendre nodes and weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence. Cached per order by the callers that need it.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Chebyshev initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fixed-order Gauss–Legendre integral of `f` over `[a, b]`.
pub fn gauss_legendre_1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        acc += w * f(c + h * x);
    }
    acc * h
}

/// Tensor Gauss–Legendre integral of `f(x, y)` over a rectangle.
pub fn gauss_legendre_2d<F: Fn(f64, f64) -> f64>(
    f: F,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    order: usize,
) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let cx = 0.5 * (x0 + x1);
    let hx = 0.5 * (x1 - x0);
    let cy = 0.5 * (y0 + y1);
    let hy = 0.5 * (y1 - y0);
    let mut acc = 0.0;
    for (xi, wi) in nodes.iter().zip(weights.iter()) {
        let x = cx + hx * xi;
        let mut row = 0.0;
        for (yj, wj) in nodes.iter().zip(weights.iter()) {
            row += wj * f(x, cy + hy * yj);
        }
        acc += wi * row;
    }
    acc * hx * hy
}

/// Trapezoid rule for a 2π-periodic integrand; spectrally accurate for
/// smooth periodic functions.
pub fn trapezoid_periodic<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
    let step = 2.0 * std::f64::consts::PI / n as f64;
    let mut acc = 0.0;
    for k in 0..n {
        acc += f(k as f64 * step);
    }
    acc * step
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| 3.0 * x * x, 0.0, 2.0, 1e-12);
        assert!(q.converged);
        assert_relative_eq!(q.value, 8.0, max_relative = 1e-13);
    }

    #[test]
    fn integrable_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2
        let q = integrate(|x| x.powf(-0.5), 1e-300, 1.0, 1e-9);
        assert_relative_eq!(q.value, 2.0, max_relative = 1e-7);
    }

    #[test]
    fn oscillatory_integrand() {
        // ∫_0^{10π} sin x dx = 0
        let q = integrate(|x| x.sin(), 0.0, 10.0 * std::f64::consts::PI, 1e-10);
        assert!(q.converged);
        assert!(q.value.abs() < 1e-9);
    }

    #[test]
    fn breakpoints_handle_kinks() {
        let f = |x: f64| x.abs();
        let q = integrate_with_breakpoints(f, &[-1.0, 0.0, 1.0], 1e-12);
        assert_relative_eq!(q.value, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        // Tolerance below the roundoff floor: must flag rather than loop forever.
        let q = integrate(|x| 1.0 / x, 1e-280, 1.0, 1e-30);
        assert!(!q.converged);
        assert!(q.require(1e-30).is_err());
    }

    #[test]
    fn gauss_legendre_matches_known_rule() {
        let (n2, w2) = gauss_legendre(2);
        assert_relative_eq!(n2[1], 1.0 / 3.0_f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(w2[0], 1.0, max_relative = 1e-14);
        // order-16 rule integrates degree-31 polynomials exactly
        let v = gauss_legendre_1d(|x| x.powi(30), -1.0, 1.0, 16);
        assert_relative_eq!(v, 2.0 / 31.0, max_relative = 1e-12);
    }

    #[test]
    fn tensor_rule_integrates_smooth_2d() {
        let v = gauss_legendre_2d(|x, y| (x + y).exp(), 0.0, 1.0, 0.0, 1.0, 12);
        let exact = (std::f64::consts::E - 1.0) * (std::f64::consts::E - 1.0);
        assert_relative_eq!(v, exact, max_relative = 1e-12);
    }

    #[test]
    fn periodic_trapezoid_is_spectral() {
        let v = trapezoid_periodic(|t| (t.cos()).exp(), 32);
        // 2π I_0(1)
        assert_relative_eq!(v, 7.95492652101284, max_relative = 1e-10);
    }
}
