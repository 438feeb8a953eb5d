//! Numerical estimation of the fundamental solution of `L_K + V` as the
//! kernel of the discrete resolvent, and verification of its decay: the
//! free power bound, the Ξ-improved bound, and polynomial corollaries.
//!
//! The point source is a single-cell normalized indicator; piecewise
//! constants cannot resolve the near-field singularity, so estimates carry
//! a valid window `[5h, 0.75·L]` and all fits stay inside it.

use crate::geom::Point;
use crate::grid::{ExteriorModel, GridFunction};
use crate::kernel::KernelSpec;
use crate::regularity::XiSeries;
use crate::report::InequalityReport;
use crate::solver::{DirichletProblem, MaskSpec, SolverError};
use crate::weights::Weight;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FundSolError {
    #[error("source point must be a cell center strictly inside the box")]
    BadSource,
    #[error("valid window [{0:.3}, {1:.3}] is empty")]
    EmptyWindow(f64, f64),
    #[error("no positive decay rate fits the data")]
    FitInfeasible,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Discrete fundamental-solution estimate with its validity annotations.
#[derive(Debug, Clone)]
pub struct FundamentalSolutionEstimate {
    pub source: Point,
    pub u: GridFunction,
    pub s: f64,
    /// Estimates closer than this to the source are unreliable.
    pub r_min: f64,
    /// Fits exclude the outer quarter of the box radius.
    pub r_max: f64,
    pub residual: f64,
}

/// Sidecar metadata for serialized estimates.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateMeta {
    pub source: Vec<f64>,
    pub s: f64,
    pub n: usize,
    pub l: f64,
    pub h: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub residual: f64,
    pub interpretation: &'static str,
}

impl FundamentalSolutionEstimate {
    pub fn metadata(&self) -> EstimateMeta {
        EstimateMeta {
            source: self.source.coords[..self.u.n].to_vec(),
            s: self.s,
            n: self.u.n,
            l: self.u.l,
            h: self.u.h,
            r_min: self.r_min,
            r_max: self.r_max,
            residual: self.residual,
            interpretation: "kernel of the discrete resolvent; far-field surrogate for the \
                             continuum fundamental solution",
        }
    }

    /// (distance, value) pairs over the valid window, sorted by distance.
    pub fn decay_curve(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for i in 0..self.u.cell_count() {
            let d = self.u.cell_center(i).dist(&self.source);
            if d >= self.r_min && d <= self.r_max {
                out.push((d, self.u.values[i]));
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        out
    }
}

/// Solves `(L_K + V) u = δ_h` with zero exterior data on the box; the
/// discrete Dirac is the normalized indicator of the source cell.
pub fn estimate_fundamental_solution(
    kernel: &KernelSpec,
    potential: Option<&Weight>,
    source: &Point,
    l: f64,
    h: f64,
    tol: f64,
) -> Result<FundamentalSolutionEstimate, FundSolError> {
    let g = GridFunction::zeros(kernel.n, l, h, ExteriorModel::Zero)
        .map_err(SolverError::Grid)?;
    let source_cell = g.cell_index(source).ok_or(FundSolError::BadSource)?;
    let center = g.cell_center(source_cell);
    if center.dist(source) > 1e-9 * h {
        return Err(FundSolError::BadSource);
    }
    let mut problem = DirichletProblem::assemble(kernel, l, h, MaskSpec::FullBox, g)?;
    if let Some(w) = potential {
        problem = problem.with_potential(w.clone());
    }
    let mut delta = problem.empty_grid();
    delta.values[source_cell] = h.powi(-(kernel.n as i32));
    let solve = problem.solve_dirichlet(Some(&delta), tol)?;
    let r_min = 5.0 * h;
    let r_max = 0.75 * l;
    if r_min >= r_max {
        return Err(FundSolError::EmptyWindow(r_min, r_max));
    }
    Ok(FundamentalSolutionEstimate {
        source: center,
        u: solve.solution,
        s: kernel.s,
        r_min,
        r_max,
        residual: solve.residual,
    })
}

/// Least-squares slope of `ln u` against `ln d` over the positive part of a
/// decay curve.
pub fn log_log_slope(curve: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|(_, v)| *v > 0.0)
        .map(|(d, v)| (d.ln(), v.ln()))
        .collect();
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

/// Smallest `C` with `u(x) ≤ C |x−y|^{-(n-2s)}` on the window, plus the
/// nonnegativity check `min u ≥ -1e-8 · max u`.
pub fn free_decay_check(est: &FundamentalSolutionEstimate) -> InequalityReport {
    let n = est.u.n as f64;
    let expo = n - 2.0 * est.s;
    let curve = est.decay_curve();
    let mut c: f64 = 0.0;
    for &(d, v) in &curve {
        c = c.max(v * d.powf(expo));
    }
    let max_u = est.u.values.iter().cloned().fold(0.0f64, f64::max);
    let min_u = est.u.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut report = InequalityReport::new("fundamental_solution_free_decay");
    report.samples = curve.len();
    report.tolerance = 1e-8;
    report.worst_ratio = 1.0;
    report.pass = c.is_finite() && min_u >= -1e-8 * max_u;
    report = report
        .constant("c", c)
        .constant("min_value", min_u)
        .constant("max_value", max_u)
        .constant("window_lo", est.r_min)
        .constant("window_hi", est.r_max);
    if min_u < -1e-8 * max_u {
        report.notes.push(format!(
            "negative values beyond discretization tolerance: min {min_u:.3e}"
        ));
    }
    report
}

/// Fits `(ε, C)` so that `u(x) · d^{n-2s} · Ξ(ε(1+½ d·m)^{s/(d₀+1)}) ≤ C`
/// across the window; ε from a dyadic grid, C minimal per ε, the winner by
/// ℓ∞ log-residual.
pub fn xi_decay_check(
    est: &FundamentalSolutionEstimate,
    m_at_source: f64,
    d0: f64,
) -> Result<InequalityReport, FundSolError> {
    let n = est.u.n;
    let expo = n as f64 - 2.0 * est.s;
    let series = XiSeries::new(n, est.s);
    let curve = est.decay_curve();
    if curve.is_empty() {
        return Err(FundSolError::EmptyWindow(est.r_min, est.r_max));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for k in (-12..=0).rev() {
        let eps = 2f64.powi(k);
        let mut c: f64 = 0.0;
        for &(d, v) in &curve {
            if v <= 0.0 {
                continue;
            }
            let arg = eps * (1.0 + 0.5 * d * m_at_source).powf(est.s / (d0 + 1.0));
            c = c.max(v * d.powf(expo) * series.eval(arg));
        }
        if !(c > 0.0 && c.is_finite()) {
            continue;
        }
        let mut residual: f64 = 0.0;
        for &(d, v) in &curve {
            if v <= 0.0 {
                continue;
            }
            let arg = eps * (1.0 + 0.5 * d * m_at_source).powf(est.s / (d0 + 1.0));
            residual = residual.max((c / (v * d.powf(expo) * series.eval(arg))).ln());
        }
        match best {
            Some((_, _, r0)) if r0 <= residual => {}
            _ => best = Some((eps, c, residual)),
        }
    }
    let (eps, c, residual) = best.ok_or(FundSolError::FitInfeasible)?;
    let mut report = InequalityReport::new("fundamental_solution_xi_decay");
    report.samples = curve.len();
    report.tolerance = 0.0;
    report.worst_ratio = 1.0;
    report.pass = true;
    Ok(report
        .constant("epsilon", eps)
        .constant("c", c)
        .constant("log_residual", residual)
        .constant("m_at_source", m_at_source)
        .constant("d0", d0))
}

/// Smallest `C_N` with `u(x) ≤ C_N (1 + d·m)^{-N} d^{-(n-2s)}` for each
/// requested `N`, plus the numerically maximized `sup_t t^N / Ξ(t)`.
pub fn poly_decay_fit(
    est: &FundamentalSolutionEstimate,
    m_at_source: f64,
    orders: &[f64],
) -> InequalityReport {
    let n = est.u.n;
    let expo = n as f64 - 2.0 * est.s;
    let series = XiSeries::new(n, est.s);
    let curve = est.decay_curve();
    let mut report = InequalityReport::new("fundamental_solution_poly_decay");
    report.samples = curve.len();
    report.pass = true;
    report.worst_ratio = 1.0;
    for &order in orders {
        let mut c: f64 = 0.0;
        for &(d, v) in &curve {
            c = c.max(v * (1.0 + d * m_at_source).powf(order) * d.powf(expo));
        }
        report
            .constants
            .insert(format!("c_{order}"), c);
        // sup_t t^N / Ξ(t) on a fine log grid: finite because the series
        // beats any polynomial.
        let mut sup: f64 = 0.0;
        for k in 0..4000 {
            let t = 1e-3 * 1.01f64.powi(k);
            sup = sup.max(t.powf(order) / series.eval(t));
            if t > 1e6 {
                break;
            }
        }
        report
            .constants
            .insert(format!("sup_t_ratio_{order}"), sup);
        if !sup.is_finite() {
            report.pass = false;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn power_kernel(s: f64) -> KernelSpec {
        KernelSpec::fractional_laplacian(2, s).unwrap()
    }

    #[test]
    fn source_must_be_a_cell_center() {
        let k = power_kernel(0.5);
        let r = estimate_fundamental_solution(&k, None, &Point::x2(0.01, 0.0), 2.0, 0.25, 1e-10);
        assert!(matches!(r, Err(FundSolError::BadSource)));
    }

    #[test]
    fn source_linearity_doubles_exactly() {
        let k = power_kernel(0.5);
        let l = 2.0;
        let h = 0.25;
        let g = GridFunction::zeros(2, l, h, ExteriorModel::Zero).unwrap();
        let p = DirichletProblem::assemble(&k, l, h, MaskSpec::FullBox, g).unwrap();
        let mut delta = p.empty_grid();
        let idx = delta.cell_index(&Point::x2(0.125, 0.125)).unwrap();
        delta.values[idx] = 16.0;
        let u1 = p.solve_dirichlet(Some(&delta), 1e-12).unwrap().solution;
        let mut delta2 = delta.clone();
        delta2.values[idx] *= 2.0;
        let u2 = p.solve_dirichlet(Some(&delta2), 1e-12).unwrap().solution;
        for (a, b) in u1.values.iter().zip(u2.values.iter()) {
            assert_relative_eq!(2.0 * a, b, max_relative = 1e-9, epsilon = 1e-13);
        }
    }

    #[test]
    fn reflection_covariance_of_the_discrete_resolvent() {
        // The discrete operator commutes with the grid reflection, so the
        // estimate from a source at +τ is the reflection of the estimate
        // from −τ (the translation-covariance statement on matched grids).
        let k = power_kernel(0.5);
        let l = 1.0;
        let h = 0.125;
        let m = 16usize;
        let e1 = estimate_fundamental_solution(&k, None, &Point::x2(0.3125, 0.0625), l, h, 1e-11)
            .unwrap();
        let e2 = estimate_fundamental_solution(&k, None, &Point::x2(-0.3125, -0.0625), l, h, 1e-11)
            .unwrap();
        for iy in 0..m {
            for ix in 0..m {
                let a = e1.u.values[iy * m + ix];
                let b = e2.u.values[(m - 1 - iy) * m + (m - 1 - ix)];
                assert_relative_eq!(a, b, max_relative = 1e-7, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn estimate_is_reflection_symmetric_for_centered_even_potential() {
        // Odd cell count puts a cell center at the origin: with a potential
        // even about the origin the whole discrete system is reflection
        // symmetric and so is the estimate, to solver tolerance.
        let k = power_kernel(0.5);
        let w = Weight::power(2, 2.0);
        let m = 17usize;
        let l = 2.0;
        let h = 2.0 * l / m as f64;
        let est =
            estimate_fundamental_solution(&k, Some(&w), &Point::origin(2), l, h, 1e-12).unwrap();
        let u = &est.u;
        for iy in 0..m {
            for ix in 0..m {
                let a = u.values[iy * m + ix];
                let b = u.values[(m - 1 - iy) * m + (m - 1 - ix)];
                assert_relative_eq!(a, b, max_relative = 1e-7, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn free_decay_constant_and_nonnegativity() {
        let k = power_kernel(0.5);
        let est =
            estimate_fundamental_solution(&k, None, &Point::x2(0.125, 0.125), 4.0, 0.25, 1e-11)
                .unwrap();
        let report = free_decay_check(&est);
        assert!(report.pass, "notes: {:?}", report.notes);
        assert!(report.constants["c"] > 0.0 && report.constants["c"].is_finite());
    }

    #[test]
    fn free_decay_slope_is_roughly_minus_one() {
        // n=2, s=1/2: the free fundamental solution decays like 1/d, and the
        // log-log slope over the window must sit near −1. Module-scale check
        // with a generous bracket; the acceptance suite pins ±0.1.
        let k = power_kernel(0.5);
        let est =
            estimate_fundamental_solution(&k, None, &Point::x2(0.125, 0.125), 4.0, 0.25, 1e-11)
                .unwrap();
        let slope = log_log_slope(&est.decay_curve());
        assert!(
            (-1.35..=-0.65).contains(&slope),
            "slope {slope} far from -1"
        );
    }

    #[test]
    fn resolvent_monotonicity_in_the_potential() {
        let k = power_kernel(0.5);
        let src = Point::x2(0.125, 0.125);
        let free = estimate_fundamental_solution(&k, None, &src, 2.0, 0.25, 1e-11).unwrap();
        let screened = estimate_fundamental_solution(
            &k,
            Some(&Weight::constant(2, 1.0)),
            &src,
            2.0,
            0.25,
            1e-11,
        )
        .unwrap();
        let stronger = estimate_fundamental_solution(
            &k,
            Some(&Weight::constant(2, 4.0)),
            &src,
            2.0,
            0.25,
            1e-11,
        )
        .unwrap();
        for i in 0..free.u.cell_count() {
            assert!(screened.u.values[i] <= free.u.values[i] + 1e-10);
            assert!(stronger.u.values[i] <= screened.u.values[i] + 1e-10);
        }
    }

    #[test]
    fn xi_decay_fit_beats_free_decay_for_positive_potential() {
        let k = power_kernel(0.5);
        let src = Point::x2(0.125, 0.125);
        let screened = estimate_fundamental_solution(
            &k,
            Some(&Weight::constant(2, 1.0)),
            &src,
            4.0,
            0.25,
            1e-11,
        )
        .unwrap();
        // u·d is decreasing across the window for the screened estimate.
        let curve = screened.decay_curve();
        let first = curve.first().unwrap();
        let last = curve.last().unwrap();
        assert!(
            last.1 * last.0 < first.1 * first.0,
            "screened estimate should decay faster than 1/d"
        );
        let m = crate::auxfunc::m_v(&Weight::constant(2, 1.0), 0.5, &src, 1e-9)
            .unwrap()
            .value;
        let fit = xi_decay_check(&screened, m, 0.0).unwrap();
        assert!(fit.constants["epsilon"] > 0.0);
        assert!(fit.constants["c"].is_finite());
    }

    #[test]
    fn xi_fit_with_zero_epsilon_degenerates_to_free_decay() {
        // Ξ(0) = 1, so the ε → 0 limit of the fitted product reproduces the
        // free-decay constant exactly.
        let k = power_kernel(0.5);
        let est =
            estimate_fundamental_solution(&k, None, &Point::x2(0.125, 0.125), 2.0, 0.25, 1e-11)
                .unwrap();
        let free_c = free_decay_check(&est).constants["c"];
        let series = XiSeries::new(2, 0.5);
        let curve = est.decay_curve();
        let mut c0: f64 = 0.0;
        for &(d, v) in &curve {
            c0 = c0.max(v * d.powf(1.0) * series.eval(0.0));
        }
        assert_relative_eq!(c0, free_c, max_relative = 1e-12);
    }

    #[test]
    fn poly_decay_constants_increase_with_order() {
        let k = power_kernel(0.5);
        let src = Point::x2(0.125, 0.125);
        let w = Weight::constant(2, 1.0);
        let est = estimate_fundamental_solution(&k, Some(&w), &src, 4.0, 0.25, 1e-11).unwrap();
        let m = crate::auxfunc::m_v(&w, 0.5, &src, 1e-9).unwrap().value;
        let report = poly_decay_fit(&est, m, &[0.0, 1.0, 2.0, 4.0]);
        assert!(report.pass);
        // N = 0 reduces to the free-decay constant.
        assert_relative_eq!(
            report.constants["c_0"],
            free_decay_check(&est).constants["c"],
            max_relative = 1e-12
        );
        assert!(report.constants["c_1"] <= report.constants["c_2"]);
        assert!(report.constants["c_2"] <= report.constants["c_4"]);
        // Frozen 1-d maximization oracle: sup_t t²/Ξ(t) ≈ 0.9091 at t ≈ 3.2
        // for the exponent 3/2 series.
        assert_relative_eq!(
            report.constants["sup_t_ratio_2"],
            0.90910919095,
            max_relative = 1e-3
        );
    }
}
