//! Closed-form evaluation of the security bounds, as pure scalar functions.
//!
//! Raw formulas are never clamped here; probability-valued outputs are
//! clamped at the reporting layer so that the proof-algebra checks can see
//! the unclamped values.

use serde::Serialize;

use crate::error::{Error, Result};

/// A named bound evaluation for reports. `source` identifies the bound by
/// its defining formula.
#[derive(Debug, Clone, Serialize)]
pub struct BoundRecord {
    pub name: String,
    pub inputs: Vec<(String, f64)>,
    pub value: f64,
    pub source: String,
}

/// Distinguishing bound for a single uniform pair of states over `d`
/// symbols: `1 − 1/d`.
pub fn lemma1_bound(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::ZeroDimension("answer set".into()));
    }
    Ok(1.0 - 1.0 / d as f64)
}

/// Distinguishing bound for a query pair with answer multiplicities
/// `di`, `dj`: `1 − 1/max(di, dj)`.
pub fn specific_bound(di: usize, dj: usize) -> Result<f64> {
    if di == 0 || dj == 0 {
        return Err(Error::ZeroDimension("answer set".into()));
    }
    Ok(1.0 - 1.0 / di.max(dj) as f64)
}

/// Per-step failure bound of the sequential extraction: `l·(3√ε + ε)`.
/// Values above 1 are meaningful to the proof algebra and are not clamped.
pub fn step_bound(l: usize, epsilon: f64) -> f64 {
    l as f64 * (3.0 * epsilon.sqrt() + epsilon)
}

/// Overall success bound of the `m`-entry extraction: `1 − 2m²√ε`,
/// clamped below at 0.
pub fn theorem1_bound(m: usize, epsilon: f64) -> Result<f64> {
    if m < 2 {
        return Err(Error::Config(format!(
            "extraction bound requires m >= 2, got {m}"
        )));
    }
    Ok((1.0 - 2.0 * (m * m) as f64 * epsilon.sqrt()).max(0.0))
}

/// The four disturbance bounds at slack `ε`:
/// `(√ε, √ε + ε, 2√ε, 3√ε + ε)` — single-outcome gentle measurement,
/// cq gentle measurement, rotation closeness, and one extraction step.
pub fn gentle_bounds(epsilon: f64) -> (f64, f64, f64, f64) {
    let root = epsilon.sqrt();
    (root, root + epsilon, 2.0 * root, 3.0 * root + epsilon)
}

/// Whether the impossibility argument covers a database shape at slack ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum CorollaryVerdict {
    /// No protocol for this database can be ε-correct and ε-secure for
    /// both parties.
    Impossible,
    /// The argument is silent here, with the reason.
    NotCovered { reason: String },
}

/// The impossibility verdict: `Impossible` when at least two queries admit
/// multiple valid answers and `ε ≤ 1/64`.
pub fn corollary1_verdict(epsilon: f64, n: usize, multiplicities: &[usize]) -> Result<CorollaryVerdict> {
    if n == 0 || multiplicities.len() != n {
        return Err(Error::Config(format!(
            "expected {n} multiplicities, got {}",
            multiplicities.len()
        )));
    }
    let multi_valued = multiplicities.iter().filter(|&&d| d >= 2).count();
    if multi_valued < 2 {
        return Ok(CorollaryVerdict::NotCovered {
            reason: "at most one query admits multiple valid answers; a \
                     computationally unbounded user reconstructs the rest directly"
                .into(),
        });
    }
    if epsilon > 1.0 / 64.0 {
        return Ok(CorollaryVerdict::NotCovered {
            reason: format!("epsilon {epsilon} above the 1/64 threshold"),
        });
    }
    Ok(CorollaryVerdict::Impossible)
}
