//! Sampled residual reports.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Statistics of one condition family over a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub condition_family: String,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub verdict: Verdict,
}

/// Per-family residual statistics with an overall verdict.
///
/// Serialized with the aggregate fields at top level plus a `families` list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub schema_version: u32,
    pub condition_family: String,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub verdict: Verdict,
    pub families: Vec<FamilyReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn verdict(max: f64, tol: f64) -> Verdict {
    if max <= tol {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

impl ResidualReport {
    /// Builds a report from per-sample residuals of each named family.
    pub fn from_samples(families: &[(&str, Vec<f64>)], seed: u64, tol: f64) -> ResidualReport {
        let fams: Vec<FamilyReport> = families
            .iter()
            .map(|(name, vals)| {
                let n = vals.len();
                let max = vals.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
                let mean = if n == 0 {
                    0.0
                } else {
                    vals.iter().map(|v| v.abs()).sum::<f64>() / n as f64
                };
                FamilyReport {
                    condition_family: name.to_string(),
                    max_residual: max,
                    mean_residual: mean,
                    samples: n,
                    seed,
                    tol,
                    verdict: verdict(max, tol),
                }
            })
            .collect();
        ResidualReport::merge(fams, seed, tol)
    }

    fn merge(families: Vec<FamilyReport>, seed: u64, tol: f64) -> ResidualReport {
        let name = families
            .iter()
            .map(|f| f.condition_family.as_str())
            .collect::<Vec<_>>()
            .join("+");
        let max = families.iter().fold(0.0f64, |m, f| {
            if f.max_residual.is_nan() {
                f64::NAN
            } else {
                m.max(f.max_residual)
            }
        });
        let total: usize = families.iter().map(|f| f.samples).sum();
        let mean = if total == 0 {
            0.0
        } else {
            families.iter().map(|f| f.mean_residual * f.samples as f64).sum::<f64>() / total as f64
        };
        let samples = families.iter().map(|f| f.samples).max().unwrap_or(0);
        let all_pass = families.iter().all(|f| f.verdict.passed());
        ResidualReport {
            schema_version: SCHEMA_VERSION,
            condition_family: name,
            max_residual: max,
            mean_residual: mean,
            samples,
            seed,
            tol,
            verdict: if all_pass { Verdict::Pass } else { Verdict::Fail },
            families,
            notes: Vec::new(),
        }
    }

    /// A report for a family that holds vacuously.
    pub fn vacuous(family: &str, seed: u64, tol: f64, note: &str) -> ResidualReport {
        let mut r = ResidualReport::from_samples(&[(family, Vec::new())], seed, tol);
        r.notes.push(note.to_string());
        r
    }

    pub fn with_note(mut self, note: impl Into<String>) -> ResidualReport {
        self.notes.push(note.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict.passed()
    }

    pub fn family(&self, name: &str) -> Option<&FamilyReport> {
        self.families.iter().find(|f| f.condition_family == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}
