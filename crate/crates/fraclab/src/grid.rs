//! Real-valued functions on a uniform cell grid over a box `[-L, L]^n`,
//! with a declared extension outside the box.
//!
//! Values are piecewise constant per cell, stored row-major (x fastest).
//! Cell `(ix, iy)` has center `(-L + (ix+½)h, -L + (iy+½)h)`. The exterior
//! model tells every consumer how the function continues beyond the box:
//! identically zero, a constant, an analytic closure, or a coarser sampled
//! annulus that is zero past its outer radius.
//!
//! # File format
//!
//! `.gf` files are line-oriented text, stable across versions:
//!
//! ```text
//! fraclab-grid v1
//! n <dim>
//! L <half-width>
//! h <cell width>
//! exterior <zero | const <c> | annulus <L_ext> <h_ext>>
//! values <count>
//! <one value per line, row-major>
//! [annulus values, row-major over the coarse box, if the tag says so]
//! ```

use crate::geom::Point;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path as FsPath;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("box half-width {l} is not an integer multiple of cell width {h}")]
    Incommensurate { l: f64, h: f64 },
    #[error("value count {got} does not match grid ({expected})")]
    ValueCount { got: usize, expected: usize },
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("point ({0}, {1}) lies outside the box and no exterior model is declared")]
    NoExterior(f64, f64),
    #[error("closure exteriors cannot be serialized")]
    UnserializableExterior,
    #[error("malformed grid file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Continuation of a grid function outside its box.
#[derive(Clone)]
pub enum ExteriorModel {
    Zero,
    Constant(f64),
    /// Analytic extension; not serializable.
    Closure(Arc<dyn Fn(&Point) -> f64 + Send + Sync>),
    /// Coarse sampled values on `[-l_ext, l_ext]^n`; zero beyond `l_ext`.
    /// Cells inside the fine box are present but never consulted.
    SampledAnnulus {
        l_ext: f64,
        h_ext: f64,
        values: Arc<Vec<f64>>,
    },
}

impl std::fmt::Debug for ExteriorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExteriorModel::Zero => write!(f, "Zero"),
            ExteriorModel::Constant(c) => write!(f, "Constant({c})"),
            ExteriorModel::Closure(_) => write!(f, "Closure(..)"),
            ExteriorModel::SampledAnnulus { l_ext, h_ext, .. } => {
                write!(f, "SampledAnnulus(l_ext={l_ext}, h_ext={h_ext})")
            }
        }
    }
}

/// A function on a uniform grid over `[-L, L]^n` with declared exterior.
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub n: usize,
    pub l: f64,
    pub h: f64,
    /// Cells per side.
    pub m: usize,
    /// Row-major cell values (x fastest).
    pub values: Vec<f64>,
    pub exterior: ExteriorModel,
}

impl GridFunction {
    pub fn zeros(n: usize, l: f64, h: f64, exterior: ExteriorModel) -> Result<Self, GridError> {
        if !(n == 1 || n == 2) {
            return Err(GridError::BadDimension(n));
        }
        let m_f = 2.0 * l / h;
        let m = m_f.round() as usize;
        if m == 0 || (m as f64 - m_f).abs() > 1e-9 * m_f.max(1.0) {
            return Err(GridError::Incommensurate { l, h });
        }
        let count = if n == 1 { m } else { m * m };
        Ok(GridFunction {
            n,
            l,
            h,
            m,
            values: vec![0.0; count],
            exterior,
        })
    }

    pub fn from_fn<F: Fn(&Point) -> f64>(
        n: usize,
        l: f64,
        h: f64,
        exterior: ExteriorModel,
        f: F,
    ) -> Result<Self, GridError> {
        let mut g = Self::zeros(n, l, h, exterior)?;
        for idx in 0..g.values.len() {
            let c = g.cell_center(idx);
            g.values[idx] = f(&c);
        }
        Ok(g)
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    pub fn cell_measure(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    pub fn cell_center(&self, idx: usize) -> Point {
        match self.n {
            1 => Point::x1(-self.l + (idx as f64 + 0.5) * self.h),
            2 => {
                let ix = idx % self.m;
                let iy = idx / self.m;
                Point::x2(
                    -self.l + (ix as f64 + 0.5) * self.h,
                    -self.l + (iy as f64 + 0.5) * self.h,
                )
            }
            _ => unreachable!(),
        }
    }

    /// Index of the cell containing `p`, or `None` outside the box.
    pub fn cell_index(&self, p: &Point) -> Option<usize> {
        let locate = |c: f64| -> Option<usize> {
            if c < -self.l || c >= self.l {
                return None;
            }
            let i = ((c + self.l) / self.h).floor() as usize;
            Some(i.min(self.m - 1))
        };
        match self.n {
            1 => locate(p.coords[0]),
            2 => {
                let ix = locate(p.coords[0])?;
                let iy = locate(p.coords[1])?;
                Some(iy * self.m + ix)
            }
            _ => unreachable!(),
        }
    }

    /// Evaluates the function anywhere: cell value inside the box, the
    /// exterior model outside.
    pub fn eval(&self, p: &Point) -> f64 {
        match self.cell_index(p) {
            Some(idx) => self.values[idx],
            None => self.exterior_eval(p),
        }
    }

    pub fn exterior_eval(&self, p: &Point) -> f64 {
        match &self.exterior {
            ExteriorModel::Zero => 0.0,
            ExteriorModel::Constant(c) => *c,
            ExteriorModel::Closure(f) => f(p),
            ExteriorModel::SampledAnnulus {
                l_ext,
                h_ext,
                values,
            } => {
                let m_ext = (2.0 * l_ext / h_ext).round() as usize;
                let locate = |c: f64| -> Option<usize> {
                    if c < -l_ext || c >= *l_ext {
                        return None;
                    }
                    Some((((c + l_ext) / h_ext).floor() as usize).min(m_ext - 1))
                };
                let idx = match self.n {
                    1 => locate(p.coords[0]),
                    2 => match (locate(p.coords[0]), locate(p.coords[1])) {
                        (Some(a), Some(b)) => Some(b * m_ext + a),
                        _ => None,
                    },
                    _ => unreachable!(),
                };
                idx.map(|i| values[i]).unwrap_or(0.0)
            }
        }
    }

    /// L² inner product over the box, cell-measure weighted.
    pub fn l2_product(&self, other: &GridFunction) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        let dv = self.cell_measure();
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * dv
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.l2_product(self)
    }

    /// Lᵖ norm over the box.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let dv = self.cell_measure();
        (self
            .values
            .iter()
            .map(|v| v.abs().powf(p))
            .sum::<f64>()
            * dv)
            .powf(1.0 / p)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// True when every nonzero cell center lies at distance ≥ `margin`
    /// from the box boundary.
    pub fn supported_inside(&self, margin: f64) -> bool {
        for (idx, v) in self.values.iter().enumerate() {
            if *v != 0.0 {
                let c = self.cell_center(idx);
                for k in 0..self.n {
                    if self.l - c.coords[k].abs() < margin {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = f(*v);
        }
        out
    }

    /// Serializes to the documented `.gf` text format.
    pub fn to_gf_string(&self) -> Result<String, GridError> {
        let mut out = String::new();
        out.push_str("fraclab-grid v1\n");
        writeln!(out, "n {}", self.n).unwrap();
        writeln!(out, "L {}", self.l).unwrap();
        writeln!(out, "h {}", self.h).unwrap();
        match &self.exterior {
            ExteriorModel::Zero => out.push_str("exterior zero\n"),
            ExteriorModel::Constant(c) => {
                writeln!(out, "exterior const {}", c).unwrap();
            }
            ExteriorModel::Closure(_) => return Err(GridError::UnserializableExterior),
            ExteriorModel::SampledAnnulus { l_ext, h_ext, .. } => {
                writeln!(out, "exterior annulus {} {}", l_ext, h_ext).unwrap();
            }
        }
        writeln!(out, "values {}", self.values.len()).unwrap();
        for v in &self.values {
            writeln!(out, "{}", v).unwrap();
        }
        if let ExteriorModel::SampledAnnulus { values, .. } = &self.exterior {
            for v in values.iter() {
                writeln!(out, "{}", v).unwrap();
            }
        }
        Ok(out)
    }

    pub fn write_gf(&self, path: &FsPath) -> Result<(), GridError> {
        std::fs::write(path, self.to_gf_string()?)?;
        Ok(())
    }

    pub fn from_gf_string(text: &str) -> Result<Self, GridError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| GridError::Parse("empty".into()))?;
        if header.trim() != "fraclab-grid v1" {
            return Err(GridError::Parse(format!("bad header: {header}")));
        }
        let mut n = 0usize;
        let mut l = 0.0f64;
        let mut h = 0.0f64;
        let mut exterior_tag: Option<Vec<String>> = None;
        let mut count = 0usize;
        for line in lines.by_ref() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["n", v] => n = v.parse().map_err(|_| GridError::Parse(line.into()))?,
                ["L", v] => l = v.parse().map_err(|_| GridError::Parse(line.into()))?,
                ["h", v] => h = v.parse().map_err(|_| GridError::Parse(line.into()))?,
                ["exterior", rest @ ..] => {
                    exterior_tag = Some(rest.iter().map(|s| s.to_string()).collect())
                }
                ["values", v] => {
                    count = v.parse().map_err(|_| GridError::Parse(line.into()))?;
                    break;
                }
                [] => {}
                _ => return Err(GridError::Parse(line.into())),
            }
        }
        let tag = exterior_tag.ok_or_else(|| GridError::Parse("missing exterior".into()))?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| GridError::Parse("truncated values".into()))?;
            values.push(
                line.trim()
                    .parse()
                    .map_err(|_| GridError::Parse(line.into()))?,
            );
        }
        let exterior = match tag.iter().map(|s| s.as_str()).collect::<Vec<_>>().as_slice() {
            ["zero"] => ExteriorModel::Zero,
            ["const", c] => {
                ExteriorModel::Constant(c.parse().map_err(|_| GridError::Parse("const".into()))?)
            }
            ["annulus", le, he] => {
                let l_ext: f64 = le.parse().map_err(|_| GridError::Parse("annulus".into()))?;
                let h_ext: f64 = he.parse().map_err(|_| GridError::Parse("annulus".into()))?;
                let m_ext = (2.0 * l_ext / h_ext).round() as usize;
                let ann_count = if n == 1 { m_ext } else { m_ext * m_ext };
                let mut ann = Vec::with_capacity(ann_count);
                for _ in 0..ann_count {
                    let line = lines
                        .next()
                        .ok_or_else(|| GridError::Parse("truncated annulus".into()))?;
                    ann.push(
                        line.trim()
                            .parse()
                            .map_err(|_| GridError::Parse(line.into()))?,
                    );
                }
                ExteriorModel::SampledAnnulus {
                    l_ext,
                    h_ext,
                    values: Arc::new(ann),
                }
            }
            other => return Err(GridError::Parse(format!("bad exterior tag {other:?}"))),
        };
        let mut g = GridFunction::zeros(n, l, h, exterior)?;
        if values.len() != g.values.len() {
            return Err(GridError::ValueCount {
                got: values.len(),
                expected: g.values.len(),
            });
        }
        g.values = values;
        Ok(g)
    }

    pub fn read_gf(path: &FsPath) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_gf_string(&text)
    }
}

/// sup of the values over cells whose centers lie in the ball.
pub fn ball_sup(g: &GridFunction, center: &Point, radius: f64) -> f64 {
    let mut sup = f64::NEG_INFINITY;
    for i in 0..g.cell_count() {
        if g.cell_center(i).dist(center) <= radius {
            sup = sup.max(g.values[i]);
        }
    }
    sup
}

/// `∫_B f(u)` over the ball: exact cell–disc intersection areas in 2-d,
/// cell-center membership (full cell measure) in 1-d.
pub fn ball_integral_cells<F: Fn(f64) -> f64>(
    g: &GridFunction,
    center: &Point,
    radius: f64,
    f: F,
) -> f64 {
    let mut acc = 0.0;
    match g.n {
        1 => {
            for i in 0..g.cell_count() {
                let c = g.cell_center(i);
                if c.dist(center) <= radius {
                    acc += f(g.values[i]) * g.h;
                }
            }
        }
        2 => {
            let (cx, cy) = (center.coords[0], center.coords[1]);
            // Only cells meeting the bounding square can intersect.
            let lo_x = (((cx - radius + g.l) / g.h).floor().max(0.0)) as usize;
            let hi_x = (((cx + radius + g.l) / g.h).ceil().min(g.m as f64)) as usize;
            let lo_y = (((cy - radius + g.l) / g.h).floor().max(0.0)) as usize;
            let hi_y = (((cy + radius + g.l) / g.h).ceil().min(g.m as f64)) as usize;
            for iy in lo_y..hi_y {
                for ix in lo_x..hi_x {
                    let x0 = -g.l + ix as f64 * g.h;
                    let y0 = -g.l + iy as f64 * g.h;
                    let area =
                        crate::geom::disc_rect_area(cx, cy, radius, x0, x0 + g.h, y0, y0 + g.h);
                    if area > 0.0 {
                        acc += f(g.values[iy * g.m + ix]) * area;
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    acc
}

/// Geometry tag used in serialized metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    pub n: usize,
    pub l: f64,
    pub h: f64,
    pub m: usize,
}

impl From<&GridFunction> for GridMeta {
    fn from(g: &GridFunction) -> Self {
        GridMeta {
            n: g.n,
            l: g.l,
            h: g.h,
            m: g.m,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cell_centers_and_lookup_agree() {
        let g = GridFunction::zeros(2, 2.0, 0.5, ExteriorModel::Zero).unwrap();
        assert_eq!(g.m, 8);
        for idx in 0..g.cell_count() {
            let c = g.cell_center(idx);
            assert_eq!(g.cell_index(&c), Some(idx));
        }
    }

    #[test]
    fn exterior_models_evaluate() {
        let mut g = GridFunction::zeros(2, 1.0, 0.5, ExteriorModel::Constant(3.0)).unwrap();
        g.values[0] = 7.0;
        assert_eq!(g.eval(&Point::x2(5.0, 0.0)), 3.0);
        assert_eq!(g.eval(&g.cell_center(0)), 7.0);
        let gz = GridFunction::zeros(1, 1.0, 0.25, ExteriorModel::Zero).unwrap();
        assert_eq!(gz.eval(&Point::x1(2.0)), 0.0);
    }

    #[test]
    fn incommensurate_h_is_rejected() {
        assert!(GridFunction::zeros(2, 1.0, 0.3, ExteriorModel::Zero).is_err());
    }

    #[test]
    fn gf_roundtrip_is_exact() {
        let g = GridFunction::from_fn(2, 1.0, 0.25, ExteriorModel::Constant(0.125), |p| {
            (p.coords[0] * 3.1 + p.coords[1]).sin() * 1.0e-3 + 1.0 / 3.0
        })
        .unwrap();
        let text = g.to_gf_string().unwrap();
        let back = GridFunction::from_gf_string(&text).unwrap();
        assert_eq!(g.values, back.values);
        assert_eq!(g.m, back.m);
        match back.exterior {
            ExteriorModel::Constant(c) => assert_eq!(c, 0.125),
            _ => panic!("wrong exterior"),
        }
        // Serialization is deterministic.
        assert_eq!(text, back.to_gf_string().unwrap());
    }

    #[test]
    fn annulus_roundtrip_and_eval() {
        let ann: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let g = GridFunction {
            n: 2,
            l: 1.0,
            h: 0.5,
            m: 4,
            values: vec![0.0; 16],
            exterior: ExteriorModel::SampledAnnulus {
                l_ext: 2.0,
                h_ext: 1.0,
                values: Arc::new(ann),
            },
        };
        let text = g.to_gf_string().unwrap();
        let back = GridFunction::from_gf_string(&text).unwrap();
        // Point in the annulus ring: cell (3, 1) of the coarse 4×4 grid.
        let v = back.eval(&Point::x2(1.5, -0.5));
        assert_relative_eq!(v, 7.0);
        // Beyond the outer radius the continuation is zero.
        assert_eq!(back.eval(&Point::x2(10.0, 0.0)), 0.0);
    }

    #[test]
    fn lp_norms_match_hand_computation() {
        let mut g = GridFunction::zeros(1, 1.0, 0.5, ExteriorModel::Zero).unwrap();
        g.values = vec![1.0, -2.0, 3.0, 0.0];
        assert_relative_eq!(g.l2_norm_sq(), 0.5 * (1.0 + 4.0 + 9.0));
        assert_relative_eq!(g.lp_norm(1.0), 0.5 * 6.0);
        assert_relative_eq!(g.sup_norm(), 3.0);
    }
}
