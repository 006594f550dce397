//! The JSON fit-file shared by the solvers, the command line and the
//! simulation harness.
//!
//! ```json
//! {"k": 3, "method": "mle", "support": [0.8, 4.1], "weights": [0.3, 0.7],
//!  "mass": 1.0, "diagnostics": {"converged": true, "iterations": 12}}
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces every value bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, KmError, Result};
use crate::mixture::{KMonotoneMixture, MixingMeasure};
use crate::support::{FitMethod, FitResult};

/// Solver diagnostics. Every field is optional so hand-written files stay
/// short.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_gradient: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_fenchel_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationarity_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub k: u32,
    pub method: FitMethod,
    pub support: Vec<f64>,
    pub weights: Vec<f64>,
    pub mass: f64,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl FitFile {
    /// Records `fit`; `tol` is the certificate tolerance it was run with.
    pub fn from_fit(fit: &FitResult, tol: Option<f64>) -> Self {
        let lse = fit.method == FitMethod::Lse;
        Self {
            k: fit.mixture.k(),
            method: fit.method,
            support: fit.mixture.support().to_vec(),
            weights: fit.mixture.weights().to_vec(),
            mass: fit.mass(),
            diagnostics: Diagnostics {
                objective: Some(fit.objective),
                max_gradient: Some(fit.max_gradient),
                atom_residual: Some(fit.atom_residual),
                iterations: Some(fit.iterations),
                converged: Some(fit.converged),
                tol,
                ceiling: Some(fit.ceiling),
                min_fenchel_gap: fit.min_fenchel_gap,
                stationarity_residual: fit.stationarity_residual,
                scale: fit.scale,
                mass: lse.then(|| fit.mass()),
            },
        }
    }

    /// A hand-specified mixture.
    pub fn manual(mixture: &KMonotoneMixture) -> Self {
        Self {
            k: mixture.k(),
            method: FitMethod::Manual,
            support: mixture.support().to_vec(),
            weights: mixture.weights().to_vec(),
            mass: mixture.mass(),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn mixture(&self) -> Result<KMonotoneMixture> {
        if self.support.len() != self.weights.len() {
            return Err(invalid(format!(
                "support has {} points but weights has {}",
                self.support.len(),
                self.weights.len()
            )));
        }
        if self.support.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("support must be strictly ascending"));
        }
        let mixture = KMonotoneMixture::new(self.k, MixingMeasure::new(self.support.clone(), self.weights.clone())?)?;
        let mass = mixture.mass();
        if !((mass - self.mass).abs() <= 1e-9 * mass.max(1.0)) {
            return Err(invalid(format!("mass {} does not match the weights, which sum to {mass}", self.mass)));
        }
        Ok(mixture)
    }

    /// Rebuilds a [`FitResult`] for the verifiers. Diagnostics missing from
    /// the file come back as "not converged" with zero counters.
    pub fn to_fit_result(&self) -> Result<FitResult> {
        let mixture = self.mixture()?;
        let d = &self.diagnostics;
        Ok(FitResult {
            method: self.method,
            objective: d.objective.unwrap_or(f64::NAN),
            max_gradient: d.max_gradient.unwrap_or(f64::NAN),
            atom_residual: d.atom_residual.unwrap_or(f64::NAN),
            iterations: d.iterations.unwrap_or(0),
            converged: d.converged.unwrap_or(false),
            ceiling: d.ceiling.unwrap_or(0.0),
            history: Vec::new(),
            min_fenchel_gap: d.min_fenchel_gap,
            stationarity_residual: d.stationarity_residual,
            scale: d.scale,
            mixture,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit-file serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: FitFile = serde_json::from_str(text).map_err(|e| KmError::Parse { line: e.line(), msg: e.to_string() })?;
        f.mixture()?;
        Ok(f)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| KmError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| KmError::Io(format!("{}: {e}", path.display())))
    }
}
