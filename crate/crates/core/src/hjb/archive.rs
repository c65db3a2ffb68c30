//! JSON archive of a hierarchy run: the problem, every degree's results, and
//! the selected degree.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::problem::{HjbProblem, ProblemFile};
use super::solve::{from_history, CertifiedSolution, DegreeRecord};
use super::HjbError;

pub const ARCHIVE_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionArchive {
    pub format: u32,
    pub problem: ProblemFile,
    pub lambda: f64,
    pub best_degree: u32,
    pub epsilon: f64,
    pub history: Vec<DegreeRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SolutionArchive {
    pub fn new(prob: &HjbProblem, sol: &CertifiedSolution) -> Self {
        SolutionArchive {
            format: ARCHIVE_FORMAT,
            problem: prob.source.clone(),
            lambda: sol.lambda,
            best_degree: sol.degree,
            epsilon: sol.epsilon,
            history: sol.history.clone(),
            warnings: sol.warnings.clone(),
        }
    }

    /// Rebuilds the problem and the solution at the stored best degree.
    pub fn restore(&self) -> Result<(HjbProblem, CertifiedSolution), HjbError> {
        if self.format != ARCHIVE_FORMAT {
            return Err(HjbError::Input(format!("unsupported archive format {}", self.format)));
        }
        let prob = HjbProblem::from_file(self.problem.clone())?;
        let (lo, hi) = match (self.history.first(), self.history.last()) {
            (Some(a), Some(b)) => (a.degree, b.degree),
            _ => return Err(HjbError::Input("archive has no degree records".into())),
        };
        let sol = from_history(&prob, self.history.clone(), self.warnings.clone(), lo, hi)?;
        let sol = sol
            .at_degree(&prob, self.best_degree)
            .ok_or_else(|| HjbError::Input(format!("archive's best degree {} is not feasible", self.best_degree)))?;
        Ok((prob, sol))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("archive serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HjbError> {
        serde_json::from_str(text).map_err(|e| HjbError::Input(format!("archive JSON, line {} column {}: {e}", e.line(), e.column())))
    }

    pub fn read(path: &Path) -> Result<Self, HjbError> {
        let text = std::fs::read_to_string(path).map_err(|e| HjbError::Input(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}
