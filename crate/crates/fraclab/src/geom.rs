//! Small geometric helpers: points, balls, and exact disc–rectangle areas.

use serde::{Deserialize, Serialize};

/// A point in ℝⁿ for n ∈ {1, 2, 3}; stored as up to three coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: [f64; 3],
    pub dim: usize,
}

impl Point {
    pub fn new(coords: &[f64]) -> Self {
        assert!((1..=3).contains(&coords.len()), "dimension must be 1..=3");
        let mut c = [0.0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Point {
            coords: c,
            dim: coords.len(),
        }
    }

    pub fn origin(dim: usize) -> Self {
        Point::new(&vec![0.0; dim])
    }

    pub fn x1(v: f64) -> Self {
        Point::new(&[v])
    }

    pub fn x2(x: f64, y: f64) -> Self {
        Point::new(&[x, y])
    }

    pub fn norm(&self) -> f64 {
        self.coords[..self.dim]
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.coords[..self.dim]
            .iter()
            .zip(other.coords[..self.dim].iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn add(&self, other: &Point) -> Point {
        debug_assert_eq!(self.dim, other.dim);
        let mut c = [0.0; 3];
        for i in 0..self.dim {
            c[i] = self.coords[i] + other.coords[i];
        }
        Point {
            coords: c,
            dim: self.dim,
        }
    }

    pub fn sub(&self, other: &Point) -> Point {
        debug_assert_eq!(self.dim, other.dim);
        let mut c = [0.0; 3];
        for i in 0..self.dim {
            c[i] = self.coords[i] - other.coords[i];
        }
        Point {
            coords: c,
            dim: self.dim,
        }
    }

    pub fn scale(&self, t: f64) -> Point {
        let mut c = [0.0; 3];
        for i in 0..self.dim {
            c[i] = self.coords[i] * t;
        }
        Point {
            coords: c,
            dim: self.dim,
        }
    }
}

/// A ball query: center and radius.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BallQuery {
    pub center: Point,
    pub radius: f64,
}

impl BallQuery {
    pub fn new(center: Point, radius: f64) -> Self {
        assert!(radius > 0.0, "ball radius must be positive");
        BallQuery { center, radius }
    }

    /// Ball of doubled radius, same center.
    pub fn doubled(&self) -> BallQuery {
        BallQuery {
            center: self.center,
            radius: 2.0 * self.radius,
        }
    }
}

/// Surface measure of the unit sphere S^{n-1}.
pub fn sphere_measure(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => panic!("dimension {n} not supported"),
    }
}

/// Volume of the unit ball B_1 in ℝⁿ.
pub fn unit_ball_volume(n: usize) -> f64 {
    sphere_measure(n) / n as f64
}

/// Volume of a ball of radius `r` in ℝⁿ.
pub fn ball_volume(n: usize, r: f64) -> f64 {
    unit_ball_volume(n) * r.powi(n as i32)
}

/// Antiderivative of sqrt(r² − x²): G(x) = (x·sqrt(r²−x²) + r²·asin(x/r)) / 2.
fn circle_antiderivative(x: f64, r: f64) -> f64 {
    let xc = x.clamp(-r, r);
    0.5 * (xc * (r * r - xc * xc).max(0.0).sqrt() + r * r * (xc / r).asin())
}

/// Exact area of the intersection of the disc |p − c| ≤ r with the
/// axis-aligned rectangle [x0, x1] × [y0, y1].
///
/// The chord length as a function of x is piecewise smooth with breakpoints
/// where the circle crosses the horizontal edges; each piece integrates in
/// closed form via the circular antiderivative.
pub fn disc_rect_area(cx: f64, cy: f64, r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    debug_assert!(x1 >= x0 && y1 >= y0 && r > 0.0);
    // Shift so the disc is centered at the origin.
    let (x0, x1) = (x0 - cx, x1 - cx);
    let (y0, y1) = (y0 - cy, y1 - cy);
    let a = x0.max(-r);
    let b = x1.min(r);
    if a >= b {
        return 0.0;
    }
    // Breakpoints: where sqrt(r²−x²) crosses |y0| or |y1|.
    let mut cuts = vec![a, b];
    for y in [y0, y1] {
        if y.abs() < r {
            let xc = (r * r - y * y).sqrt();
            for x in [-xc, xc] {
                if x > a && x < b {
                    cuts.push(x);
                }
            }
        }
    }
    cuts.sort_by(|p, q| p.total_cmp(q));
    cuts.dedup();
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let g = (r * r - mid * mid).max(0.0).sqrt();
        let top_is_circle = g < y1;
        let bot_is_circle = -g > y0;
        let top_mid = g.min(y1);
        let bot_mid = (-g).max(y0);
        if top_mid <= bot_mid {
            continue;
        }
        let mut piece = 0.0;
        if top_is_circle {
            piece += circle_antiderivative(hi, r) - circle_antiderivative(lo, r);
        } else {
            piece += y1 * (hi - lo);
        }
        if bot_is_circle {
            piece += circle_antiderivative(hi, r) - circle_antiderivative(lo, r);
        } else {
            piece -= y0 * (hi - lo);
        }
        area += piece;
    }
    area
}

/// Measure of the intersection of the interval [c−r, c+r] with [a, b].
pub fn interval_overlap(c: f64, r: f64, a: f64, b: f64) -> f64 {
    ((c + r).min(b) - (c - r).max(a)).max(0.0)
}
