//! Report types shared by every verification routine.
//!
//! A check never panics on a mathematical failure: it returns a report with
//! `pass == false` and enough data to reconstruct the violation. Fitted
//! constants are stored per report and never reused implicitly elsewhere.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Result of checking one inequality over a sample family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InequalityReport {
    /// Short identifier of the inequality being checked.
    pub name: String,
    /// Worst-case left-hand side over the sample family.
    pub lhs: f64,
    /// Right-hand side paired with that worst case.
    pub rhs: f64,
    /// Worst LHS/RHS ratio observed (≤ 1 + tolerance means pass).
    pub worst_ratio: f64,
    /// Fitted or derived constants, by name. BTreeMap keeps serialization stable.
    pub constants: BTreeMap<String, f64>,
    /// Number of samples examined.
    pub samples: usize,
    /// Tolerance the verdict was judged against.
    pub tolerance: f64,
    pub pass: bool,
    /// Human-readable remarks (truncation bounds, flagged samples, ...).
    pub notes: Vec<String>,
}

impl InequalityReport {
    pub fn new(name: &str) -> Self {
        InequalityReport {
            name: name.to_string(),
            lhs: 0.0,
            rhs: 0.0,
            worst_ratio: 0.0,
            constants: BTreeMap::new(),
            samples: 0,
            tolerance: 0.0,
            pass: true,
            notes: Vec::new(),
        }
    }

    pub fn constant(mut self, key: &str, value: f64) -> Self {
        self.constants.insert(key.to_string(), value);
        self
    }

    pub fn note(mut self, msg: impl Into<String>) -> Self {
        self.notes.push(msg.into());
        self
    }
}

/// Harnack-type report: sup over the half ball against the L² average.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnackReport {
    pub center: Vec<f64>,
    pub radius: f64,
    /// sup of the solution over the half-radius ball.
    pub sup_half: f64,
    /// L² average over the full ball (normalization recorded in `notes`).
    pub l2_average: f64,
    /// sup_half / l2_average.
    pub ratio: f64,
    /// Decay-factor diagnostics for the improved inequality, if fitted.
    pub xi_argument: Option<f64>,
    pub fitted_epsilon: Option<f64>,
    pub fitted_constant: Option<f64>,
    pub notes: Vec<String>,
}

/// Weak-L^p quasinorm report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakNormReport {
    pub function_id: String,
    pub p: f64,
    /// sup_γ γ · ω(γ)^{1/p} over the γ grid plus all jump points.
    pub quasinorm: f64,
    /// γ values examined (grid part only; jump points are implicit).
    pub gamma_grid: Vec<f64>,
}

/// Any report the ledger can hold.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Report {
    Inequality(InequalityReport),
    Harnack(HarnackReport),
    WeakNorm(WeakNormReport),
    /// Free-form numeric facts (e.g. a computed constant with its tolerance).
    Scalar {
        name: String,
        value: f64,
        tolerance: f64,
        pass: bool,
    },
}

impl Report {
    pub fn passed(&self) -> bool {
        match self {
            Report::Inequality(r) => r.pass,
            Report::Harnack(_) => true,
            Report::WeakNorm(_) => true,
            Report::Scalar { pass, .. } => *pass,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Report::Inequality(r) => &r.name,
            Report::Harnack(_) => "harnack",
            Report::WeakNorm(r) => &r.function_id,
            Report::Scalar { name, .. } => name,
        }
    }
}
