//! Kernels of fractional order 2s, their normalization constant, second
//! differences, and pointwise application of the integro-differential
//! operator by singular quadrature.
//!
//! A kernel is `K(y) = c(n,s) · a(y) · |y|^{-n-2s}` with a symmetric radial
//! multiplier `a` trapped between the ellipticity bounds `λ ≤ a ≤ Λ`. The
//! constant `c(n,s)` normalizes the pure power kernel so that the operator
//! acts as the multiplier `|ξ|^{2s}` on the Fourier side; it is computed by
//! quadrature once per `(n, s)` and cached, no closed form is assumed.

use crate::geom::{sphere_measure, Point};
use crate::quad::{self, QuadError};
use crate::report::InequalityReport;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum KernelError {
    #[error("order s must lie strictly inside (0,1), got {0}")]
    InvalidOrder(f64),
    #[error("dimension must be 1, 2, or 3, got {0}")]
    InvalidDimension(usize),
    #[error("ellipticity bounds must satisfy 0 < lambda <= Lambda, got ({0}, {1})")]
    InvalidEllipticity(f64, f64),
    #[error("far-field contribution is significant but the function declares no usable tail")]
    MissingTail,
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Radial multiplier of a kernel.
#[derive(Clone)]
pub enum Profile {
    /// a ≡ value.
    Constant(f64),
    /// Arbitrary symmetric multiplier; the caller asserts the bounds.
    Custom(Arc<dyn Fn(&Point) -> f64 + Send + Sync>),
}

impl Profile {
    pub fn eval(&self, y: &Point) -> f64 {
        match self {
            Profile::Constant(c) => *c,
            Profile::Custom(f) => f(y),
        }
    }
}

impl std::fmt::Debug for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Profile::Constant(c) => write!(f, "Profile::Constant({c})"),
            Profile::Custom(_) => write!(f, "Profile::Custom(..)"),
        }
    }
}

/// The normalization constant of the pure power kernel, together with the
/// quadrature error of its defining integral.
#[derive(Debug, Clone, Copy)]
pub struct NormalizationConstant {
    pub n: usize,
    pub s: f64,
    pub value: f64,
    pub error_estimate: f64,
}

/// A symmetric kernel with order, ellipticity pair and radial multiplier.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub n: usize,
    pub s: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    pub profile: Profile,
    pub norm: NormalizationConstant,
}

impl KernelSpec {
    /// The pure power kernel: `a ≡ 1`, `λ = Λ = 1`.
    pub fn fractional_laplacian(n: usize, s: f64) -> Result<Self, KernelError> {
        Self::with_profile(n, s, 1.0, 1.0, Profile::Constant(1.0))
    }

    pub fn with_profile(
        n: usize,
        s: f64,
        lambda: f64,
        big_lambda: f64,
        profile: Profile,
    ) -> Result<Self, KernelError> {
        if !(0.0..=3.0).contains(&(n as f64)) || n == 0 {
            return Err(KernelError::InvalidDimension(n));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(KernelError::InvalidOrder(s));
        }
        if !(lambda > 0.0 && big_lambda >= lambda) {
            return Err(KernelError::InvalidEllipticity(lambda, big_lambda));
        }
        let norm = normalization_constant(n, s, 1e-10)?;
        Ok(KernelSpec {
            n,
            s,
            lambda,
            big_lambda,
            profile,
            norm,
        })
    }

    /// Kernel value at a nonzero offset.
    pub fn eval(&self, y: &Point) -> f64 {
        let r = y.norm();
        self.norm.value * self.profile.eval(y) * r.powf(-(self.n as f64 + 2.0 * self.s))
    }

    /// True when the theorem-level dimensional restriction `2s < n` holds.
    pub fn theorem_scale(&self) -> bool {
        2.0 * self.s < self.n as f64
    }

    /// Integral of the multiplier over the unit sphere direction set,
    /// evaluated at radius `rho`: ∫_{S^{n-1}} a(ρθ) dθ.
    fn profile_sphere_integral(&self, rho: f64, angular: usize) -> f64 {
        sphere_integral(self.n, angular, |theta| {
            self.profile.eval(&theta.scale(rho))
        })
    }
}

/// ∫_{S^{n-1}} g(θ) dθ with a fixed-order rule (exact sets for n = 1,
/// periodic trapezoid for n = 2, product rule for n = 3).
pub fn sphere_integral<F: Fn(&Point) -> f64>(n: usize, order: usize, g: F) -> f64 {
    match n {
        1 => g(&Point::x1(1.0)) + g(&Point::x1(-1.0)),
        2 => quad::trapezoid_periodic(|phi| g(&Point::x2(phi.cos(), phi.sin())), order),
        3 => {
            // Product of a Gauss rule in cos(polar) and trapezoid in azimuth.
            let (nodes, weights) = quad::gauss_legendre(order.max(8));
            let m = order.max(8);
            let step = 2.0 * std::f64::consts::PI / m as f64;
            let mut acc = 0.0;
            for (c, w) in nodes.iter().zip(weights.iter()) {
                let sin_t = (1.0 - c * c).max(0.0).sqrt();
                let mut ring = 0.0;
                for k in 0..m {
                    let phi = k as f64 * step;
                    ring += g(&Point::new(&[sin_t * phi.cos(), sin_t * phi.sin(), *c]));
                }
                acc += w * ring * step;
            }
            acc
        }
        _ => panic!("dimension {n} not supported"),
    }
}

static NORM_CACHE: OnceLock<Mutex<HashMap<(usize, u64), NormalizationConstant>>> = OnceLock::new();

/// Computes the constant `c(n,s)` with
/// `c · ∫ (1 − cos ξ₁) / |ξ|^{n+2s} dξ = 1` to the requested tolerance.
///
/// Splitting: the transverse directions integrate out to a 1-d factor by the
/// substitution ζ = |t| w, leaving the master integral
/// `∫_0^∞ (1 − cos t) t^{-1-2s} dt`, handled as an alternating series near 0,
/// adaptive quadrature in the middle, and an integration-by-parts expansion
/// of the oscillatory tail. Results are cached per `(n, s)`.
pub fn normalization_constant(
    n: usize,
    s: f64,
    tol: f64,
) -> Result<NormalizationConstant, KernelError> {
    if n == 0 || n > 3 {
        return Err(KernelError::InvalidDimension(n));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(KernelError::InvalidOrder(s));
    }
    assert!(tol > 0.0);
    let cache = NORM_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (n, s.to_bits());
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        if hit.error_estimate <= tol * hit.value.abs() {
            return Ok(*hit);
        }
    }

    let (master, master_err) = master_cosine_integral(s, tol * 0.1)?;
    let (transverse, trans_err) = transverse_factor(n, s, tol * 0.1)?;
    let integral = 2.0 * transverse * master;
    let rel_err = master_err / master + trans_err / transverse.max(f64::MIN_POSITIVE);
    let value = 1.0 / integral;
    let result = NormalizationConstant {
        n,
        s,
        value,
        error_estimate: rel_err * value,
    };
    if rel_err > tol {
        return Err(KernelError::Quadrature(QuadError::NonConvergent {
            requested: tol,
            achieved: rel_err,
            value,
        }));
    }
    cache.lock().unwrap().insert(key, result);
    Ok(result)
}

/// `∫_0^∞ (1 − cos t) t^{-1-2s} dt` with an absolute error estimate.
fn master_cosine_integral(s: f64, tol: f64) -> Result<(f64, f64), KernelError> {
    // Near part [0,1]: alternating series Σ (-1)^{k+1} / ((2k)! (2k-2s)).
    let mut near = 0.0;
    let mut fact = 1.0f64; // (2k)!
    let mut sign = 1.0;
    let mut series_err = 0.0;
    for k in 1..40 {
        fact *= ((2 * k - 1) * (2 * k)) as f64;
        let term = sign / (fact * (2.0 * k as f64 - 2.0 * s));
        near += term;
        sign = -sign;
        series_err = term.abs();
        if series_err < 1e-18 {
            break;
        }
    }

    // Middle part [1, T] by adaptive quadrature with breakpoints at multiples of π.
    let t_end = 40.0 * std::f64::consts::PI;
    let beta = 1.0 + 2.0 * s;
    let mut points: Vec<f64> = vec![1.0];
    let mut k = 1.0;
    while k * std::f64::consts::PI < t_end {
        if k * std::f64::consts::PI > 1.0 {
            points.push(k * std::f64::consts::PI);
        }
        k += 1.0;
    }
    points.push(t_end);
    let mid = quad::integrate_with_breakpoints(
        |t| (1.0 - t.cos()) * t.powf(-beta),
        &points,
        tol * 0.5,
    );

    // Tail from T: ∫_T^∞ t^{-β} dt − ∫_T^∞ cos t · t^{-β} dt, the cosine
    // integral expanded by repeated integration by parts.
    let plain = t_end.powf(-2.0 * s) / (2.0 * s);
    let (cos_tail, cos_rem) = cosine_tail(beta, t_end, 5);

    let value = near + mid.value + plain - cos_tail;
    let err = series_err + mid.error + cos_rem;
    if err > tol * value.abs() * 10.0 + 1e-300 && !mid.converged {
        return Err(KernelError::Quadrature(QuadError::NonConvergent {
            requested: tol,
            achieved: err,
            value,
        }));
    }
    Ok((value, err))
}

/// `∫_T^∞ cos t · t^{-β} dt` by integration by parts, with a remainder bound.
///
/// Two steps per level: I_c(β) = −sin(T)·T^{-β} + β cos(T)·T^{-β-1} − β(β+1)·I_c(β+2).
fn cosine_tail(beta: f64, t: f64, levels: usize) -> (f64, f64) {
    let mut acc = 0.0;
    let mut coeff = 1.0;
    let mut b = beta;
    for _ in 0..levels {
        acc += coeff * (-t.sin() * t.powf(-b) + b * t.cos() * t.powf(-b - 1.0));
        coeff *= -b * (b + 1.0);
        b += 2.0;
    }
    // |I_c(b)| ≤ 2 T^{-b}
    let remainder = coeff.abs() * 2.0 * t.powf(-b);
    (acc, remainder)
}

/// `∫_{ℝ^{n-1}} (1 + |w|²)^{-(n+2s)/2} dw`, the transverse reduction factor.
/// Equals 1 for n = 1; computed on a compactified interval otherwise.
fn transverse_factor(n: usize, s: f64, tol: f64) -> Result<(f64, f64), KernelError> {
    match n {
        1 => Ok((1.0, 0.0)),
        2 => {
            // ∫_ℝ (1+w²)^{-1-s} dw = 2 ∫_0^{π/2} cos(φ)^{2s} dφ  (w = tan φ)
            let q = quad::integrate(
                |phi| phi.cos().powf(2.0 * s),
                0.0,
                std::f64::consts::FRAC_PI_2,
                tol,
            );
            Ok((2.0 * q.value, 2.0 * q.error))
        }
        3 => {
            // 2π ∫_0^∞ ρ (1+ρ²)^{-(3+2s)/2} dρ = 2π / (1+2s), exactly.
            Ok((2.0 * std::f64::consts::PI / (1.0 + 2.0 * s), 0.0))
        }
        _ => Err(KernelError::InvalidDimension(n)),
    }
}

/// Second difference `μ(u, x, y) = 2u(x) − u(x+y) − u(x−y)`.
pub fn second_difference<F: Fn(&Point) -> f64>(u: F, x: &Point, y: &Point) -> f64 {
    2.0 * u(x) - u(&x.add(y)) - u(&x.sub(y))
}

/// Declared decay of a globally defined function; the far-field integral of
/// the operator uses this to certify convergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailModel {
    /// Identically zero outside the given radius.
    CompactSupport(f64),
    /// Gaussian-type decay (faster than any power).
    GaussianDecay,
    /// `|u(x)| ≲ |x|^{-p}`; requires p > 2s for convergence.
    PowerDecay(f64),
}

/// A globally evaluable function together with its declared tail behavior.
#[derive(Clone)]
pub struct ProfiledFunction {
    pub f: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    pub tail: TailModel,
}

impl ProfiledFunction {
    pub fn new<F: Fn(&Point) -> f64 + Send + Sync + 'static>(f: F, tail: TailModel) -> Self {
        ProfiledFunction {
            f: Arc::new(f),
            tail,
        }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        (self.f)(x)
    }
}

/// Quadrature configuration for [`apply_pointwise`].
#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    /// Near/far split radius.
    pub split_radius: f64,
    /// Angular rule order for n = 2, 3.
    pub angular_order: usize,
    /// Radial tolerance.
    pub tol: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            split_radius: 1.0,
            angular_order: 128,
            tol: 1e-9,
        }
    }
}

/// Pointwise value of the operator: `½ ∫ μ(u, x, y) K(y) dy`.
///
/// The second-difference form removes the principal-value singularity:
/// `|μ| ≤ C |y|²` near the origin, so the near field is an ordinary radial
/// integral (computed in the variable w = ρ^{2-2s} to flatten the remaining
/// algebraic endpoint behavior). The far field substitutes v = split/ρ and
/// integrates over v ∈ (0, 1], using the declared tail model to certify
/// convergence.
pub fn apply_pointwise(
    kernel: &KernelSpec,
    u: &ProfiledFunction,
    x: &Point,
    cfg: &QuadConfig,
) -> Result<f64, KernelError> {
    let n = kernel.n;
    let s = kernel.s;
    let c = kernel.norm.value;
    let split = cfg.split_radius;
    if let TailModel::PowerDecay(p) = u.tail {
        if p <= 2.0 * s {
            return Err(KernelError::MissingTail);
        }
    }

    // Angular average of μ(u,x,ρθ)·a(ρθ), divided by ρ² (bounded as ρ → 0).
    let mu_sphere_over_rho2 = |rho: f64| -> f64 {
        let rho_eval = rho.max(split * 1e-4);
        let i = sphere_integral(n, cfg.angular_order, |theta| {
            let y = theta.scale(rho_eval);
            second_difference(|p| u.eval(p), x, &y) * kernel.profile.eval(&y)
        });
        i / (rho_eval * rho_eval)
    };

    // Near field: ∫_0^split ρ^{1-2s} G(ρ) dρ in the variable w = ρ^{2-2s}.
    let expo = 2.0 - 2.0 * s;
    let w_end = split.powf(expo);
    let inv = 1.0 / expo;
    let near_q = quad::integrate(
        |w| mu_sphere_over_rho2(w.powf(inv)) * inv,
        0.0,
        w_end,
        cfg.tol,
    );
    let near = 0.5 * c * near_q.value;

    // Far field: u(x)·∫_{|y|≥split} K − ∫_{|y|≥split} u(x+y) K(y) dy,
    // both via v = split/ρ on (0, 1].
    let v_floor = match u.tail {
        TailModel::CompactSupport(r_u) => {
            let reach = x.norm() + r_u;
            if reach <= split {
                1.0 // far field sees no support
            } else {
                (split / reach).max(1e-12)
            }
        }
        _ => 1e-9,
    };
    let tail_mass_q = quad::integrate(
        |v| {
            let rho = split / v;
            v.powf(2.0 * s - 1.0) * kernel.profile_sphere_integral(rho, cfg.angular_order)
        },
        1e-12,
        1.0,
        cfg.tol,
    );
    let tail_mass = c * split.powf(-2.0 * s) * tail_mass_q.value;

    let far_u_q = if v_floor >= 1.0 {
        quad::integrate(|_| 0.0, 0.0, 0.0, 1.0)
    } else {
        quad::integrate(
            |v| {
                let rho = split / v;
                let ring = sphere_integral(n, cfg.angular_order, |theta| {
                    let y = theta.scale(rho);
                    u.eval(&x.add(&y)) * kernel.profile.eval(&y)
                });
                v.powf(2.0 * s - 1.0) * ring
            },
            v_floor,
            1.0,
            cfg.tol,
        )
    };
    let far_u = c * split.powf(-2.0 * s) * far_u_q.value;

    let value = near + u.eval(x) * tail_mass - far_u;
    let err = 0.5 * c * near_q.error
        + tail_mass_q.error * c * split.powf(-2.0 * s) * u.eval(x).abs()
        + far_u_q.error * c * split.powf(-2.0 * s);
    if !near_q.converged && err > cfg.tol.max(1e-6 * value.abs()) * 100.0 {
        return Err(KernelError::Quadrature(QuadError::NonConvergent {
            requested: cfg.tol,
            achieved: err,
            value,
        }));
    }
    Ok(value)
}

/// Verifies the two-sided power bound and the symmetry `K(y) = K(−y)` at
/// every sample; the report carries worst-case ratios and offending points.
pub fn kernel_bounds_check(kernel: &KernelSpec, samples: &[Point]) -> InequalityReport {
    let mut report = InequalityReport::new("kernel_two_sided_bound");
    let c = kernel.norm.value;
    let exponent = -(kernel.n as f64 + 2.0 * kernel.s);
    let mut worst_upper: f64 = 0.0;
    let mut worst_lower: f64 = f64::INFINITY;
    let mut worst_asym: f64 = 0.0;
    let mut failures = Vec::new();
    for p in samples {
        let r = p.norm();
        if r == 0.0 {
            continue;
        }
        let k = kernel.eval(p);
        let k_neg = kernel.eval(&p.scale(-1.0));
        let envelope = c * r.powf(exponent);
        let upper = k / (kernel.big_lambda * envelope);
        let lower = k / (kernel.lambda * envelope);
        let asym = (k - k_neg).abs() / k.abs().max(k_neg.abs()).max(f64::MIN_POSITIVE);
        worst_upper = worst_upper.max(upper);
        worst_lower = worst_lower.min(lower);
        worst_asym = worst_asym.max(asym);
        if upper > 1.0 + 1e-12 || lower < 1.0 - 1e-12 || asym > 1e-12 {
            failures.push(format!(
                "sample ({:.6}, {:.6}): upper ratio {:.6e}, lower ratio {:.6e}, asymmetry {:.3e}",
                p.coords[0], p.coords[1], upper, lower, asym
            ));
        }
    }
    report.samples = samples.len();
    report.tolerance = 1e-12;
    report.worst_ratio = worst_upper.max(worst_asym + 1.0).max(
        if worst_lower.is_finite() && worst_lower < 1.0 {
            2.0 - worst_lower
        } else {
            0.0
        },
    );
    report = report
        .constant("worst_upper_ratio", worst_upper)
        .constant("worst_lower_ratio", worst_lower)
        .constant("worst_asymmetry", worst_asym);
    report.pass = failures.is_empty();
    for f in failures.into_iter().take(8) {
        report.notes.push(f);
    }
    report
}

/// Checks `ρ^{-2} ∫_{|y|<ρ} |y|² K + ∫_{|y|≥ρ} K ≤ Θ ρ^{-2s}` with
/// `Θ = ω_n Λ / s`, by radial quadrature of both pieces.
pub fn tail_mass_bound_check(kernel: &KernelSpec, rho: f64, h_cap: f64) -> InequalityReport {
    assert!(rho > 0.0 && rho < h_cap, "need 0 < rho < h");
    let n = kernel.n;
    let s = kernel.s;
    let c = kernel.norm.value;
    let angular = 64;

    // Near second moment: ρ^{-2} ∫_0^ρ r^{1-2s} Ā(r) dr (in w = r^{2-2s}).
    let expo = 2.0 - 2.0 * s;
    let inv = 1.0 / expo;
    let near_q = quad::integrate(
        |w| {
            let r = w.powf(inv).max(rho * 1e-8);
            kernel.profile_sphere_integral(r, angular) * inv
        },
        0.0,
        rho.powf(expo),
        1e-10,
    );
    let near = c * rho.powf(-2.0) * near_q.value;

    // Tail mass via v = ρ/r.
    let tail_q = quad::integrate(
        |v| v.powf(2.0 * s - 1.0) * kernel.profile_sphere_integral(rho / v, angular),
        1e-12,
        1.0,
        1e-10,
    );
    let tail = c * rho.powf(-2.0 * s) * tail_q.value;

    let lhs = near + tail;
    let theta = sphere_measure(n) * kernel.big_lambda / s;
    let rhs = theta * rho.powf(-2.0 * s);
    let mut report = InequalityReport::new("kernel_tail_mass_bound");
    report.lhs = lhs;
    report.rhs = rhs;
    report.worst_ratio = lhs / rhs;
    report.samples = 1;
    report.tolerance = 1e-9;
    report.pass = lhs <= rhs * (1.0 + report.tolerance);
    report
        .constant("theta", theta)
        .constant("near_second_moment", near)
        .constant("tail_mass", tail)
}
