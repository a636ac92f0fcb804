use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AflError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// `|empirical - analytic| <= tolerance`
    Equality,
    /// `empirical <= analytic * (1 + tolerance)`
    Bound,
    /// `empirical >= analytic`; used for pass-rate thresholds.
    Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub analytic: f64,
    pub empirical: f64,
    pub tolerance: f64,
    pub trials: usize,
    pub pass: bool,
    pub kind: CheckKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(
        name: impl Into<String>,
        kind: CheckKind,
        analytic: f64,
        empirical: f64,
        tolerance: f64,
        trials: usize,
    ) -> Self {
        let pass = match kind {
            CheckKind::Equality => (empirical - analytic).abs() <= tolerance,
            CheckKind::Bound => empirical <= analytic * (1.0 + tolerance),
            CheckKind::Rate => empirical >= analytic,
        };
        Self {
            name: name.into(),
            analytic,
            empirical,
            tolerance,
            trials,
            pass,
            kind,
            std_error: None,
            notes: Vec::new(),
        }
    }

    pub fn equality(name: impl Into<String>, analytic: f64, empirical: f64, tol: f64, trials: usize) -> Self {
        Self::new(name, CheckKind::Equality, analytic, empirical, tol, trials)
    }

    pub fn bound(name: impl Into<String>, analytic: f64, empirical: f64, tol: f64, trials: usize) -> Self {
        Self::new(name, CheckKind::Bound, analytic, empirical, tol, trials)
    }

    pub fn with_std_error(mut self, se: f64) -> Self {
        self.std_error = Some(se);
        self
    }

    pub fn note(mut self, text: impl Into<String>) -> Self {
        self.notes.push(text.into());
        self
    }

    /// Forces failure when a side condition does not hold.
    pub fn require(mut self, ok: bool, why: impl Into<String>) -> Self {
        if !ok {
            self.pass = false;
            self.notes.push(why.into());
        }
        self
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {}: analytic={:.6e} empirical={:.6e} tol={:.1e} trials={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.analytic,
            self.empirical,
            self.tolerance,
            self.trials
        )
    }
}

pub fn export_reports(reports: &[VerificationReport], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AflError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(reports).map_err(|e| AflError::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| AflError::io(path, e))
}

pub fn import_reports(path: &Path) -> Result<Vec<VerificationReport>> {
    let text = fs::read_to_string(path).map_err(|e| AflError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AflError::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_rules() {
        assert!(VerificationReport::equality("a", 1.0, 1.05, 0.1, 1).pass);
        assert!(!VerificationReport::equality("a", 1.0, 1.2, 0.1, 1).pass);
        assert!(VerificationReport::bound("b", 1.0, 1.05, 0.1, 1).pass);
        assert!(VerificationReport::bound("b", 1.0, 0.0, 0.0, 1).pass);
        assert!(!VerificationReport::bound("b", 1.0, 1.2, 0.1, 1).pass);
        assert!(VerificationReport::new("c", CheckKind::Rate, 0.95, 0.97, 0.0, 1).pass);
        assert!(!VerificationReport::bound("b", 1.0, 0.5, 0.0, 1).require(false, "x").pass);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out/reports.json");
        let reps = vec![
            VerificationReport::equality("a", 0.75, 0.75, 1e-12, 10).note("exact"),
            VerificationReport::bound("b", 3.0, 1.0 / 3.0, 0.0, 5).with_std_error(0.1),
        ];
        export_reports(&reps, &path).unwrap();
        assert_eq!(import_reports(&path).unwrap(), reps);
        let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        for key in ["name", "analytic", "empirical", "tolerance", "trials", "pass"] {
            assert!(raw[0].get(key).is_some(), "{key}");
        }
    }
}
