//! Report records, JSON emission and the text table.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use proplab_core::estimate::Estimate;

use crate::scenario::SCHEMA;

/// One reported quantity. `pass` is present exactly when `paper_bound` is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub task_id: String,
    pub quantity: String,
    /// `None` when the value is infinite or the task failed.
    pub value: Option<f64>,
    pub bound_kind: String,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paper_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub witnesses: Vec<String>,
    /// Set when the computation itself failed, e.g. on budget exhaustion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Keys a record may carry.
pub const RECORD_KEYS: [&str; 9] = ["task_id", "quantity", "value", "bound_kind", "tolerance", "paper_bound", "pass", "witnesses", "error"];

impl Record {
    pub fn from_estimate(task_id: &str, quantity: &str, e: &Estimate, tol: f64) -> Self {
        let mut witnesses = Vec::new();
        if e.infinite {
            witnesses.push("infinite".into());
        }
        if let Some(c) = &e.certificate {
            witnesses.push(format!("certificate {c:?}"));
        }
        Self {
            task_id: task_id.into(),
            quantity: quantity.into(),
            value: e.finite(),
            bound_kind: e.kind.to_string(),
            tolerance: tol.max(e.tol),
            paper_bound: None,
            pass: None,
            witnesses,
            error: None,
        }
    }

    pub fn failed(task_id: &str, quantity: &str, tol: f64, message: String) -> Self {
        Self {
            task_id: task_id.into(),
            quantity: quantity.into(),
            value: None,
            bound_kind: "approx".into(),
            tolerance: tol,
            paper_bound: None,
            pass: None,
            witnesses: vec![],
            error: Some(message),
        }
    }

    /// Attaches `bound` and sets `pass` to `value <= bound + tolerance`.
    pub fn bounded_by(mut self, bound: f64) -> Self {
        self.paper_bound = Some(bound);
        self.pass = Some(self.value.is_some_and(|v| v <= bound + self.tolerance));
        self
    }

    pub fn witness(mut self, w: impl Into<String>) -> Self {
        self.witnesses.push(w.into());
        self
    }

    pub fn ok(&self) -> bool {
        self.error.is_none() && self.pass != Some(false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub timestamp: u64,
    pub records: Vec<Record>,
}

impl Report {
    pub fn new(seed: u64, records: Vec<Record>) -> Self {
        let timestamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self { schema: SCHEMA.into(), seed, timestamp, records }
    }

    pub fn all_pass(&self) -> bool {
        self.records.iter().all(Record::ok)
    }

    /// 0 when every record passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_pass() {
            0
        } else {
            1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut rows = vec![["task", "quantity", "value", "kind", "bound", "pass"].map(String::from).to_vec()];
        for r in &self.records {
            rows.push(vec![
                r.task_id.clone(),
                r.quantity.clone(),
                match (&r.error, r.value) {
                    (Some(_), _) => "error".into(),
                    (None, Some(v)) => format!("{v:.6e}"),
                    (None, None) => "inf".into(),
                },
                r.bound_kind.clone(),
                r.paper_bound.map_or("-".into(), |b| format!("{b:.6e}")),
                match r.pass {
                    Some(true) => "PASS".into(),
                    Some(false) => "FAIL".into(),
                    None => "-".into(),
                },
            ]);
        }
        let widths: Vec<usize> = (0..6).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        for r in self.records.iter().filter(|r| r.error.is_some()) {
            let _ = writeln!(out, "{}: {}", r.task_id, r.error.as_deref().unwrap_or(""));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proplab_core::estimate::BoundKind;

    #[test]
    fn pass_flag_follows_bound() {
        let e = Estimate::new(1.0, BoundKind::Exact, 0.0, 0);
        let r = Record::from_estimate("t", "q", &e, 1e-6);
        assert_eq!(r.pass, None);
        assert!(r.clone().bounded_by(1.0).pass.unwrap());
        assert!(!r.bounded_by(0.5).pass.unwrap());
    }

    #[test]
    fn serialized_keys_are_documented() {
        let e = Estimate::new(1.0, BoundKind::Upper, 0.0, 0);
        let r = Record::from_estimate("t", "q", &e, 1e-6).bounded_by(2.0).witness("w");
        let v = serde_json::to_value(&r).unwrap();
        for k in v.as_object().unwrap().keys() {
            assert!(RECORD_KEYS.contains(&k.as_str()), "{k}");
        }
    }
}
