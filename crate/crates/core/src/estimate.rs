//! Numeric values annotated with bound direction, plus sampled-check reports.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Exact,
    Upper,
    Lower,
    Approx,
}

impl BoundKind {
    /// Kind of `max(x, y)` given the kinds of `x` and `y`.
    pub fn max_of(self, other: BoundKind) -> BoundKind {
        use BoundKind::*;
        match (self, other) {
            (Exact, k) | (k, Exact) => k,
            (Lower, Lower) => Lower,
            (Upper, Upper) => Upper,
            _ => Approx,
        }
    }

    /// Kind of `x + y`.
    pub fn sum_of(self, other: BoundKind) -> BoundKind {
        self.max_of(other)
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BoundKind::Exact => "exact",
            BoundKind::Upper => "upper",
            BoundKind::Lower => "lower",
            BoundKind::Approx => "approx",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub kind: BoundKind,
    pub tol: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Vec<f64>>,
    /// Set when the quantity is `+infinity`; `value` is then meaningless.
    #[serde(default)]
    pub infinite: bool,
}

impl Estimate {
    pub fn new(value: f64, kind: BoundKind, tol: f64, iterations: usize) -> Self {
        Self { value, kind, tol, iterations, certificate: None, infinite: false }
    }

    pub fn exact(value: f64) -> Self {
        Self::new(value, BoundKind::Exact, 0.0, 0)
    }

    pub fn lower(value: f64, tol: f64, iterations: usize) -> Self {
        Self::new(value, BoundKind::Lower, tol, iterations)
    }

    pub fn upper(value: f64, tol: f64, iterations: usize) -> Self {
        Self::new(value, BoundKind::Upper, tol, iterations)
    }

    pub fn approx(value: f64, tol: f64, iterations: usize) -> Self {
        Self::new(value, BoundKind::Approx, tol, iterations)
    }

    pub fn infinite() -> Self {
        Self { value: 0.0, kind: BoundKind::Exact, tol: 0.0, iterations: 0, certificate: None, infinite: true }
    }

    pub fn with_certificate(mut self, c: Vec<f64>) -> Self {
        self.certificate = Some(c);
        self
    }

    pub fn finite(&self) -> Option<f64> {
        if self.infinite {
            None
        } else {
            Some(self.value)
        }
    }

    pub fn max(&self, other: &Estimate) -> Estimate {
        if self.infinite || other.infinite {
            return Estimate::infinite();
        }
        let value = self.value.max(other.value);
        Estimate {
            value,
            kind: self.kind.max_of(other.kind),
            tol: self.tol.max(other.tol),
            iterations: self.iterations + other.iterations,
            certificate: None,
            infinite: false,
        }
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.infinite {
            write!(f, "inf ({})", self.kind)
        } else {
            write!(f, "{:.9} ({}, tol {:.1e})", self.value, self.kind, self.tol)
        }
    }
}

/// Outcome of a sampled inequality check. `worst_margin` is the smallest
/// value of `rhs - lhs` seen; the check passes when it is at least `-tol`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub samples: usize,
    pub worst_margin: f64,
    pub tol: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, tol: f64) -> Self {
        Self { name: name.into(), samples: 0, worst_margin: f64::INFINITY, tol, pass: true, witness: None }
    }

    /// Records one sample with margin `rhs - lhs`.
    pub fn record(&mut self, margin: f64, witness: impl FnOnce() -> String) {
        self.samples += 1;
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if margin < self.worst_margin {
            self.worst_margin = margin;
            if margin < -self.tol {
                self.witness = Some(witness());
            }
        }
        self.pass = self.worst_margin >= -self.tol;
    }

    pub fn merge(&mut self, other: &CheckReport) {
        self.samples += other.samples;
        if other.worst_margin < self.worst_margin {
            self.worst_margin = other.worst_margin;
            self.witness = other.witness.clone();
        }
        self.pass = self.pass && other.pass;
    }

    pub fn fail(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            samples: 0,
            worst_margin: f64::NEG_INFINITY,
            tol: 0.0,
            pass: false,
            witness: Some(reason.into()),
        }
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} (worst margin {:.3e} over {} samples)",
            self.name,
            if self.pass { "pass" } else { "FAIL" },
            self.worst_margin,
            self.samples
        )?;
        if let Some(w) = &self.witness {
            write!(f, " [{w}]")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_algebra() {
        use BoundKind::*;
        assert_eq!(Exact.max_of(Lower), Lower);
        assert_eq!(Upper.max_of(Upper), Upper);
        assert_eq!(Lower.max_of(Upper), Approx);
    }

    #[test]
    fn report_tracks_worst() {
        let mut r = CheckReport::new("x", 1e-8);
        r.record(0.5, String::new);
        r.record(-1e-9, String::new);
        assert!(r.pass);
        r.record(-1.0, || "bad".into());
        assert!(!r.pass);
        assert_eq!(r.witness.as_deref(), Some("bad"));
        assert_eq!(r.samples, 3);
    }
}
