//! Nonnegative potentials treated as weights: ball integrals, Muckenhoupt
//! A_p norms, reverse-Hölder constants, level-set parameters, and doubling
//! constants, all certified on explicit finite ball families.
//!
//! A finite computation can never quantify over all balls, so every class
//! statement here is relative to the tested family; the deterministic
//! default is a lattice of centers crossed with dyadic radii.

use crate::geom::{ball_volume, sphere_measure, BallQuery, Point};
use crate::grid::GridFunction;
use crate::quad;
use crate::report::InequalityReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("weight spec `{0}` is malformed; expected const:<c>, power:<a>, or sampled:<file>")]
    BadSpec(String),
    #[error("weight must be nonnegative; {0} sampled at a test point")]
    Negative(f64),
    #[error("ball integral did not converge: {0}")]
    Quadrature(#[from] quad::QuadError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

type EvalFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
type MassFn = Arc<dyn Fn(&Point, f64) -> Option<f64> + Send + Sync>;

/// A nonnegative locally integrable weight with optional closed-form ball mass.
#[derive(Clone)]
pub struct Weight {
    pub id: String,
    pub n: usize,
    eval: EvalFn,
    /// Closed-form `∫_{B_r(x)} V`, when available for the given (x, r).
    mass: Option<MassFn>,
    /// Declared class hint `(q, RH constant)`, if known.
    pub class_hint: Option<(f64, f64)>,
    /// True when `r ↦ r^{2s-n} ∫_{B_r(x)} V` is known to be monotone for
    /// every center (radially non-decreasing subharmonic profiles); enables
    /// plain bisection instead of the full critical-radius scan.
    pub mass_monotone: bool,
}

impl std::fmt::Debug for Weight {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Weight({}, n={})", self.id, self.n)
    }
}

impl Weight {
    pub fn constant(n: usize, c: f64) -> Self {
        assert!(c >= 0.0);
        Weight {
            id: format!("const:{c}"),
            n,
            eval: Arc::new(move |_| c),
            mass: Some(Arc::new(move |_x, r| Some(c * ball_volume(n, r)))),
            class_hint: Some((f64::INFINITY, 1.0)),
            mass_monotone: true,
        }
    }

    /// `V(z) = |z|^a`, `a > -n` for local integrability.
    pub fn power(n: usize, a: f64) -> Self {
        assert!(a > -(n as f64));
        let mass: MassFn = Arc::new(move |x: &Point, r: f64| {
            if x.norm() == 0.0 {
                // ω_n r^{n+a} / (n+a)
                Some(sphere_measure(n) * r.powf(n as f64 + a) / (n as f64 + a))
            } else if n == 2 && a == 2.0 {
                // ∫_{B_r(x)} |z|² = π r⁴/2 + π r² |x|²  (cross term integrates to zero)
                let pi = std::f64::consts::PI;
                Some(pi * r.powi(4) / 2.0 + pi * r * r * x.norm() * x.norm())
            } else {
                None
            }
        });
        Weight {
            id: format!("power:{a}"),
            n,
            eval: Arc::new(move |p| p.norm().powf(a)),
            mass: Some(mass),
            class_hint: None,
            mass_monotone: a >= 0.0,
        }
    }

    pub fn custom<F: Fn(&Point) -> f64 + Send + Sync + 'static>(
        n: usize,
        id: &str,
        f: F,
    ) -> Self {
        Weight {
            id: id.to_string(),
            n,
            eval: Arc::new(f),
            mass: None,
            class_hint: None,
            mass_monotone: false,
        }
    }

    /// Custom weight with a caller-supplied closed-form ball mass and an
    /// explicit monotonicity promise for the critical-radius search.
    pub fn custom_with_mass<F, M>(n: usize, id: &str, f: F, mass: M, mass_monotone: bool) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
        M: Fn(&Point, f64) -> Option<f64> + Send + Sync + 'static,
    {
        Weight {
            id: id.to_string(),
            n,
            eval: Arc::new(f),
            mass: Some(Arc::new(mass)),
            class_hint: None,
            mass_monotone,
        }
    }

    /// Weight backed by grid samples; continues past the box by clamped
    /// nearest-cell lookup so that far ball masses stay meaningful.
    pub fn sampled(grid: GridFunction) -> Self {
        let n = grid.n;
        let l = grid.l;
        let g = Arc::new(grid);
        Weight {
            id: "sampled".to_string(),
            n,
            eval: Arc::new(move |p| {
                let mut q = *p;
                for k in 0..q.dim {
                    q.coords[k] = q.coords[k].clamp(-l + 1e-12, l - 1e-12);
                }
                g.eval(&q)
            }),
            mass: None,
            class_hint: None,
            mass_monotone: false,
        }
    }

    /// Parses the weight grammar: `const:c`, `power:a`, `sampled:<gf-file>`.
    pub fn parse(spec: &str, n: usize) -> Result<Self, WeightError> {
        let (kind, arg) = spec
            .split_once(':')
            .ok_or_else(|| WeightError::BadSpec(spec.to_string()))?;
        match kind {
            "const" => {
                let c: f64 = arg
                    .parse()
                    .map_err(|_| WeightError::BadSpec(spec.to_string()))?;
                if c < 0.0 {
                    return Err(WeightError::Negative(c));
                }
                Ok(Weight::constant(n, c))
            }
            "power" => {
                let a: f64 = arg
                    .parse()
                    .map_err(|_| WeightError::BadSpec(spec.to_string()))?;
                if a <= -(n as f64) {
                    return Err(WeightError::BadSpec(spec.to_string()));
                }
                Ok(Weight::power(n, a))
            }
            "sampled" => {
                let grid = GridFunction::read_gf(std::path::Path::new(arg))?;
                Ok(Weight::sampled(grid))
            }
            _ => Err(WeightError::BadSpec(spec.to_string())),
        }
    }

    pub fn eval(&self, p: &Point) -> f64 {
        (self.eval)(p)
    }

    /// Closed-form ball mass when the family provides one for this query.
    pub fn closed_form_mass(&self, ball: &BallQuery) -> Option<f64> {
        self.mass
            .as_ref()
            .and_then(|m| m(&ball.center, ball.radius))
    }
}

/// `∫_{B_r(x)} V dz`: closed form when available, else adaptive quadrature
/// (polar around the ball center for n = 2).
pub fn ball_integral(weight: &Weight, ball: &BallQuery, tol: f64) -> Result<f64, WeightError> {
    assert!(tol > 0.0);
    if let Some(v) = weight.closed_form_mass(ball) {
        return Ok(v);
    }
    ball_integral_fn(weight.n, |p| weight.eval(p), ball, tol)
}

/// Quadrature ball integral of an arbitrary function.
pub fn ball_integral_fn<F: Fn(&Point) -> f64>(
    n: usize,
    f: F,
    ball: &BallQuery,
    tol: f64,
) -> Result<f64, WeightError> {
    let x = ball.center;
    let r = ball.radius;
    match n {
        1 => {
            let q = quad::integrate(
                |t| f(&Point::x1(t)),
                x.coords[0] - r,
                x.coords[0] + r,
                tol,
            );
            Ok(q.require(tol)?)
        }
        2 => {
            // Breakpoint at |x| where a centered profile can kink.
            let ring = |rho: f64| -> f64 {
                rho * quad::trapezoid_periodic(
                    |phi| f(&Point::x2(x.coords[0] + rho * phi.cos(), x.coords[1] + rho * phi.sin())),
                    96,
                )
            };
            let cut = x.norm();
            let pts: Vec<f64> = if cut > 1e-12 && cut < r {
                vec![0.0, cut, r]
            } else {
                vec![0.0, r]
            };
            let q = quad::integrate_with_breakpoints(ring, &pts, tol);
            Ok(q.require(tol)?)
        }
        _ => panic!("ball_integral: dimension {n} not supported"),
    }
}

/// Ball average of a function (quadrature path).
fn ball_average_fn<F: Fn(&Point) -> f64>(
    n: usize,
    f: F,
    ball: &BallQuery,
    tol: f64,
) -> Result<f64, WeightError> {
    Ok(ball_integral_fn(n, f, ball, tol)? / ball_volume(n, ball.radius))
}

/// Ball average of the weight itself, using any closed form.
pub fn ball_average(weight: &Weight, ball: &BallQuery, tol: f64) -> Result<f64, WeightError> {
    Ok(ball_integral(weight, ball, tol)? / ball_volume(weight.n, ball.radius))
}

/// Deterministic ball family: every center crossed with dyadic radii
/// `2^lo ..= 2^hi`.
pub fn dyadic_ball_family(centers: &[Point], lo: i32, hi: i32) -> Vec<BallQuery> {
    let mut out = Vec::new();
    for c in centers {
        for e in lo..=hi {
            out.push(BallQuery::new(*c, 2f64.powi(e)));
        }
    }
    out
}

/// Largest `(avg_B w)(avg_B w^{-1/(p-1)})^{p-1}` over the family: a lower
/// bound for the A_p norm. For p = 1 the second factor is the essential sup
/// of 1/w over the ball, estimated on a deterministic sample lattice.
/// Balls where the computation degenerates report +∞.
pub fn ap_norm_estimate(weight: &Weight, p: f64, balls: &[BallQuery], tol: f64) -> f64 {
    assert!(p >= 1.0);
    let mut worst: f64 = 0.0;
    for ball in balls {
        let avg_w = match ball_average(weight, ball, tol) {
            Ok(v) => v,
            Err(_) => {
                worst = f64::INFINITY;
                continue;
            }
        };
        let second = if p == 1.0 {
            // ess-sup of w^{-1}: deterministic lattice max.
            let mut sup_inv: f64 = 0.0;
            let steps = 64;
            for i in 0..steps {
                for j in 0..(if weight.n == 2 { steps } else { 1 }) {
                    let dx = (2.0 * (i as f64 + 0.5) / steps as f64 - 1.0) * ball.radius;
                    let dy = (2.0 * (j as f64 + 0.5) / steps as f64 - 1.0) * ball.radius;
                    if dx * dx + dy * dy > ball.radius * ball.radius {
                        continue;
                    }
                    let p = match weight.n {
                        1 => Point::x1(ball.center.coords[0] + dx),
                        _ => Point::x2(ball.center.coords[0] + dx, ball.center.coords[1] + dy),
                    };
                    let v = weight.eval(&p);
                    sup_inv = sup_inv.max(if v > 0.0 { 1.0 / v } else { f64::INFINITY });
                }
            }
            sup_inv
        } else {
            let expo = -1.0 / (p - 1.0);
            match ball_average_fn(weight.n, |q| weight.eval(q).powf(expo), ball, tol) {
                Ok(v) => v.powf(p - 1.0),
                Err(_) => f64::INFINITY,
            }
        };
        worst = worst.max(avg_w * second);
    }
    worst
}

/// Reverse-Hölder check: reports `sup_B (avg_B V^q)^{1/q} / (avg_B V)` over
/// the family. A finite constant certifies RH^q on the tested family only.
pub fn reverse_holder_check(
    weight: &Weight,
    q: f64,
    balls: &[BallQuery],
    tol: f64,
) -> InequalityReport {
    assert!(q > 1.0);
    let mut report = InequalityReport::new("reverse_holder");
    let mut worst: f64 = 0.0;
    let mut excluded = 0usize;
    for ball in balls {
        let avg = match ball_average(weight, ball, tol) {
            Ok(v) if v > 0.0 => v,
            _ => {
                excluded += 1;
                continue;
            }
        };
        let avg_q = match ball_average_fn(weight.n, |p| weight.eval(p).powf(q), ball, tol) {
            Ok(v) => v,
            Err(_) => {
                excluded += 1;
                continue;
            }
        };
        worst = worst.max(avg_q.powf(1.0 / q) / avg);
    }
    report.samples = balls.len();
    report.tolerance = tol;
    report.worst_ratio = worst;
    report = report.constant("rh_constant", worst).constant("q", q);
    if excluded > 0 {
        report
            .notes
            .push(format!("{excluded} balls excluded (zero or divergent average)"));
    }
    report.pass = worst.is_finite();
    report
}

/// Level-set parameter β = |{x ∈ B : V(x) ≥ α₀ V_B}| / |B|, estimated by
/// seeded rejection sampling; the sample count is recorded in the report.
pub fn ainf_levelset_params(
    weight: &Weight,
    ball: &BallQuery,
    alpha0: f64,
    seed: u64,
    samples: usize,
) -> Result<(f64, usize), WeightError> {
    assert!(alpha0 > 0.0 && alpha0 < 1.0);
    let v_b = ball_average(weight, ball, 1e-9)?;
    let threshold = alpha0 * v_b;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut total = 0usize;
    while total < samples {
        let dx: f64 = rng.gen_range(-1.0..1.0);
        let dy: f64 = if weight.n == 2 {
            rng.gen_range(-1.0..1.0)
        } else {
            0.0
        };
        if dx * dx + dy * dy > 1.0 {
            continue;
        }
        total += 1;
        let p = match weight.n {
            1 => Point::x1(ball.center.coords[0] + dx * ball.radius),
            _ => Point::x2(
                ball.center.coords[0] + dx * ball.radius,
                ball.center.coords[1] + dy * ball.radius,
            ),
        };
        if weight.eval(&p) >= threshold {
            hits += 1;
        }
    }
    Ok((hits as f64 / total as f64, total))
}

/// Empirical doubling constant: `max_B ∫_{2B} V / ∫_B V`. Balls with zero
/// mass are excluded and flagged.
pub fn doubling_constant(weight: &Weight, balls: &[BallQuery], tol: f64) -> InequalityReport {
    let mut report = InequalityReport::new("doubling");
    let mut worst: f64 = 0.0;
    let mut excluded = 0usize;
    for ball in balls {
        let small = match ball_integral(weight, ball, tol) {
            Ok(v) => v,
            Err(_) => {
                excluded += 1;
                continue;
            }
        };
        if small <= 0.0 {
            excluded += 1;
            continue;
        }
        let big = match ball_integral(weight, &ball.doubled(), tol) {
            Ok(v) => v,
            Err(_) => {
                excluded += 1;
                continue;
            }
        };
        worst = worst.max(big / small);
    }
    report.samples = balls.len();
    report.tolerance = tol;
    report.worst_ratio = worst;
    report = report.constant("doubling_constant", worst);
    if excluded > 0 {
        report
            .notes
            .push(format!("{excluded} balls excluded (zero mass or quadrature failure)"));
    }
    report.pass = worst.is_finite() && worst > 0.0;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn ball_integral_of_one_is_the_area() {
        let w = Weight::constant(2, 1.0);
        let b = BallQuery::new(Point::x2(0.3, -1.0), 1.0);
        assert_relative_eq!(ball_integral(&w, &b, 1e-10).unwrap(), PI, max_relative = 1e-12);
    }

    #[test]
    fn ball_integral_of_square_norm_centered() {
        let w = Weight::power(2, 2.0);
        for r in [0.5, 1.0, 2.0] {
            let b = BallQuery::new(Point::origin(2), r);
            assert_relative_eq!(
                ball_integral(&w, &b, 1e-10).unwrap(),
                PI * r.powi(4) / 2.0,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn ball_integral_of_square_norm_off_center() {
        // Closed form π r⁴/2 + π r² |x|², confirmed by a 10⁷-sample
        // Monte-Carlo oracle (7.0900 vs 7.0879 at three significant digits).
        let w = Weight::power(2, 2.0);
        let b = BallQuery::new(Point::x2(0.7, 0.0), 1.3);
        let v = ball_integral(&w, &b, 1e-10).unwrap();
        assert_relative_eq!(v, 7.087904265396612, max_relative = 1e-10);
        // Quadrature path agrees with the closed form.
        let vq = ball_integral_fn(2, |p| w.eval(p), &b, 1e-10).unwrap();
        assert_relative_eq!(vq, v, max_relative = 1e-8);
    }

    #[test]
    fn quadrature_matches_closed_form_on_shipped_weights() {
        for w in [Weight::constant(2, 2.5), Weight::power(2, 1.0), Weight::power(2, 2.0)] {
            for ball in [
                BallQuery::new(Point::origin(2), 0.75),
                BallQuery::new(Point::origin(2), 3.0),
            ] {
                if let Some(cf) = w.closed_form_mass(&ball) {
                    let q = ball_integral_fn(2, |p| w.eval(p), &ball, 1e-10).unwrap();
                    assert_relative_eq!(q, cf, max_relative = 1e-8);
                }
            }
        }
    }

    #[test]
    fn ap_norm_of_one_is_one() {
        let w = Weight::constant(2, 1.0);
        let balls = dyadic_ball_family(&[Point::origin(2), Point::x2(1.0, 1.0)], -2, 2);
        for p in [1.0, 1.5, 2.0, 4.0] {
            assert_relative_eq!(ap_norm_estimate(&w, p, &balls, 1e-9), 1.0, max_relative = 1e-7);
        }
    }

    #[test]
    fn ap_norm_of_power_weight_is_radius_free() {
        // (avg |x|)(avg |x|^{-1}) over B_r(0) in n=2: (2r/3)(2/r) = 4/3.
        let w = Weight::power(2, 1.0);
        let one = ap_norm_estimate(&w, 2.0, &[BallQuery::new(Point::origin(2), 1.0)], 1e-9);
        let four = ap_norm_estimate(&w, 2.0, &[BallQuery::new(Point::origin(2), 4.0)], 1e-9);
        assert_relative_eq!(one, 4.0 / 3.0, max_relative = 1e-6);
        assert_relative_eq!(one, four, max_relative = 1e-6);
    }

    #[test]
    fn ap_norm_diverges_for_critical_power() {
        // |x|^{-n} is not locally integrable: small balls at the origin blow up.
        let w = Weight::custom(2, "power:-2", |p: &Point| p.norm().powf(-2.0));
        let v = ap_norm_estimate(&w, 2.0, &[BallQuery::new(Point::origin(2), 0.25)], 1e-8);
        assert!(v > 1e6 || v.is_infinite(), "estimate {v} should blow up");
    }

    #[test]
    fn ap_norm_monotone_in_p() {
        let w = Weight::power(2, 1.0);
        let balls = dyadic_ball_family(&[Point::origin(2), Point::x2(0.5, 0.0)], -1, 1);
        let p_values = [1.5, 2.0, 3.0, 4.0];
        let estimates: Vec<f64> = p_values
            .iter()
            .map(|p| ap_norm_estimate(&w, *p, &balls, 1e-9))
            .collect();
        for pair in estimates.windows(2) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-9),
                "A_p estimate must be non-increasing in p: {estimates:?}"
            );
        }
    }

    #[test]
    fn reverse_holder_constant_of_one_is_exactly_one() {
        let w = Weight::constant(2, 3.0);
        let balls = dyadic_ball_family(&[Point::origin(2), Point::x2(-2.0, 1.0)], -3, 3);
        let r = reverse_holder_check(&w, 2.0, &balls, 1e-9);
        assert!(r.pass);
        assert_relative_eq!(r.constants["rh_constant"], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn reverse_holder_power_weight_scale_invariant() {
        let w = Weight::power(2, 1.0);
        let c1 = reverse_holder_check(&w, 2.0, &[BallQuery::new(Point::origin(2), 1.0)], 1e-9);
        let c2 = reverse_holder_check(&w, 2.0, &[BallQuery::new(Point::origin(2), 8.0)], 1e-9);
        assert_relative_eq!(
            c1.constants["rh_constant"],
            c2.constants["rh_constant"],
            max_relative = 1e-6
        );
        assert!(c1.constants["rh_constant"].is_finite());
    }

    #[test]
    fn reverse_holder_exponential_grows_with_radius() {
        let w = Weight::custom(2, "exp", |p: &Point| p.norm().exp());
        let far = Point::x2(6.0, 0.0);
        let small = reverse_holder_check(&w, 2.0, &[BallQuery::new(far, 1.0)], 1e-8);
        let large = reverse_holder_check(&w, 2.0, &[BallQuery::new(far, 3.0)], 1e-8);
        assert!(
            large.constants["rh_constant"] > small.constants["rh_constant"],
            "constant should grow with radius: {} vs {}",
            large.constants["rh_constant"],
            small.constants["rh_constant"]
        );
    }

    #[test]
    fn levelset_parameter_for_constant_weight_is_one() {
        let w = Weight::constant(2, 5.0);
        let (beta, _) =
            ainf_levelset_params(&w, &BallQuery::new(Point::origin(2), 1.0), 0.5, 7, 100_000)
                .unwrap();
        assert_eq!(beta, 1.0);
    }

    #[test]
    fn levelset_parameter_for_norm_weight() {
        // V = |x| on B₁(0): V_B = 2/3, so {V ≥ 1/3} is the annulus |x| ≥ 1/3
        // of measure fraction 1 − 1/9 = 8/9.
        let w = Weight::power(2, 1.0);
        let (beta, _) =
            ainf_levelset_params(&w, &BallQuery::new(Point::origin(2), 1.0), 0.5, 7, 2_000_000)
                .unwrap();
        assert_relative_eq!(beta, 8.0 / 9.0, max_relative = 2e-3);
    }

    #[test]
    fn levelset_parameter_for_square_norm_weight() {
        // V = |x|² on B₁(0): V_B = 1/2, level set |x| ≥ 1/√2... squared
        // threshold 1/4 gives |x| ≥ 1/2 and β = 3/4 exactly; the Monte-Carlo
        // oracle value is 0.75.
        let w = Weight::power(2, 2.0);
        let (beta, count) =
            ainf_levelset_params(&w, &BallQuery::new(Point::origin(2), 1.0), 0.5, 11, 4_000_000)
                .unwrap();
        assert_eq!(count, 4_000_000);
        assert_relative_eq!(beta, 0.75, max_relative = 1.5e-3);
    }

    #[test]
    fn doubling_constant_of_one_is_two_to_the_n() {
        let w = Weight::constant(2, 1.0);
        let balls = dyadic_ball_family(&[Point::origin(2), Point::x2(3.0, -1.5)], -2, 2);
        let r = doubling_constant(&w, &balls, 1e-9);
        assert_relative_eq!(r.constants["doubling_constant"], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn doubling_constant_of_centered_power_is_homogeneous() {
        let w = Weight::power(2, 1.0);
        let balls = dyadic_ball_family(&[Point::origin(2)], -3, 3);
        let r = doubling_constant(&w, &balls, 1e-9);
        assert_relative_eq!(r.constants["doubling_constant"], 8.0, max_relative = 1e-10);
    }

    #[test]
    fn doubling_constant_off_center_stays_below_homogeneous_bound() {
        // Oracle value 5.5818499... for V=|x| at center (0.5, 0), r = 0.5.
        let w = Weight::power(2, 1.0);
        let b = BallQuery::new(Point::x2(0.5, 0.0), 0.5);
        let r = doubling_constant(&w, &[b], 1e-9);
        assert_relative_eq!(r.constants["doubling_constant"], 5.58184992162, max_relative = 1e-5);
        assert!(r.constants["doubling_constant"] <= 8.0 + 1e-9);
    }

    #[test]
    fn parse_grammar() {
        assert!(Weight::parse("const:2.0", 2).is_ok());
        assert!(Weight::parse("power:1.5", 2).is_ok());
        assert!(Weight::parse("nonsense", 2).is_err());
        assert!(Weight::parse("power:-5", 2).is_err());
    }
}
