//! Weighted nonlinear least squares for the dynamics and spectral models,
//! with model-selection metrics.

pub mod dynamics;
pub mod lm;
pub mod spectrum;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use lm::LmOutcome;

pub use dynamics::{
    fit_dynamics, fit_dynamics_nested, threshold_sweep, DynamicsFitOptions, SweepOptions, ThresholdSweepResult,
};
pub use spectrum::{fit_peak, fit_spectrum_joint, PeakShape, SpectrumFitOptions, SpectrumModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub chi2: f64,
    pub chi2_red: f64,
    pub aic: f64,
    pub bic: f64,
}

/// χ² of `residuals/sigmas`; AIC = χ² + 2k and BIC = χ² + k ln n, dropping
/// likelihood constants.
pub fn goodness_metrics(residuals: &[f64], sigmas: &[f64], n_params: usize) -> Result<GoodnessOfFit> {
    if residuals.len() != sigmas.len() {
        return Err(Error::InvalidParameter("residuals and sigmas differ in length".into()));
    }
    let n = residuals.len();
    if n <= n_params {
        return Err(Error::InvalidParameter(format!(
            "{n} points cannot constrain {n_params} parameters"
        )));
    }
    let chi2: f64 = residuals.iter().zip(sigmas).map(|(r, s)| (r / s).powi(2)).sum();
    Ok(metrics_from_chi2(chi2, n, n_params))
}

fn metrics_from_chi2(chi2: f64, n: usize, k: usize) -> GoodnessOfFit {
    let kf = k as f64;
    GoodnessOfFit {
        chi2,
        chi2_red: if n > k { chi2 / (n - k) as f64 } else { f64::NAN },
        aic: chi2 + 2.0 * kf,
        bic: chi2 + kf * (n as f64).ln(),
    }
}

/// `(Σ v/σ², (Σ 1/σ²)^{-1/2})`. Exact values (σ = 0) take over the mean.
pub fn inverse_variance_mean(values: &[f64], sigmas: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no values to average".into()));
    }
    if values.len() != sigmas.len() {
        return Err(Error::InvalidParameter("values and sigmas differ in length".into()));
    }
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidParameter("sigmas must be finite and non-negative".into()));
    }
    let exact: Vec<f64> = values.iter().zip(sigmas).filter(|(_, s)| **s == 0.0).map(|(v, _)| *v).collect();
    if !exact.is_empty() {
        return Ok((exact.iter().sum::<f64>() / exact.len() as f64, 0.0));
    }
    let w: f64 = sigmas.iter().map(|s| 1.0 / (s * s)).sum();
    let m: f64 = values.iter().zip(sigmas).map(|(v, s)| v / (s * s)).sum::<f64>() / w;
    Ok((m, w.sqrt().recip()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    /// Free parameters, in fit order.
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Row-major covariance of the free parameters, rescaled by χ²_red.
    pub covariance: Vec<f64>,
    /// Parameters held fixed during the fit.
    pub fixed: Vec<(String, f64)>,
    pub chi2: f64,
    pub chi2_red: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_points: usize,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl FitResult {
    pub(crate) fn from_outcome(model: &str, params: &[lm::Param], out: &LmOutcome) -> Self {
        let k = out.free.len();
        let g = metrics_from_chi2(out.chi2, out.n_points, k);
        // Rescale so the residual variance matches the weights.
        let s = if g.chi2_red.is_finite() { g.chi2_red } else { 1.0 };
        let cov: Vec<f64> = out.covariance.transpose().iter().map(|c| c * s).collect();
        let errors = (0..k).map(|i| (out.covariance[(i, i)] * s).max(0.0).sqrt()).collect();
        Self {
            model: model.to_string(),
            names: out.free.iter().map(|&i| params[i].name.clone()).collect(),
            values: out.free.iter().map(|&i| out.values[i]).collect(),
            errors,
            covariance: cov,
            fixed: params
                .iter()
                .enumerate()
                .filter(|(i, _)| !out.free.contains(i))
                .map(|(i, p)| (p.name.clone(), out.values[i]))
                .collect(),
            chi2: g.chi2,
            chi2_red: g.chi2_red,
            aic: g.aic,
            bic: g.bic,
            n_points: out.n_points,
            n_params: k,
            converged: out.converged,
            iterations: out.iterations,
            config_hash: None,
        }
    }

    /// Free or fixed parameter by name.
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
            .or_else(|| self.fixed.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.errors[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
