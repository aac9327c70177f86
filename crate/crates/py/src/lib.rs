//! Python bindings: spectral responses, threshold posteriors, dynamics
//! models, the simulator driven by a JSON config, and the fitters.

use std::collections::BTreeMap;

use checkprobe_core::bayes::{self, FrequencyGrid};
use checkprobe_core::config::ExperimentConfig;
use checkprobe_core::dynamics::{self, DynamicsParams, ModelVariant};
use checkprobe_core::error::Error;
use checkprobe_core::fit::{self, DynamicsFitOptions};
use checkprobe_core::io;
use checkprobe_core::lindblad::{lzs_lindblad_oracle, OracleControls};
use checkprobe_core::protocol::{self, DataPoint, ForwardBackwardDataset};
use checkprobe_core::spectral::{DualTransitionParams, LzsParams, SpectralResponse};
use checkprobe_core::units::Frequency;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NonConvergence(_) | Error::GridTooNarrow { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Mean counts per check block as a function of detuning (Hz).
#[pyclass(name = "Response", frozen)]
struct PyResponse {
    inner: SpectralResponse,
}

#[pymethods]
impl PyResponse {
    #[staticmethod]
    fn lorentzian(c0: f64, gamma_hz: f64) -> PyResult<Self> {
        let inner = SpectralResponse::lorentzian(c0, Frequency(gamma_hz)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn lzs(c0: f64, stark_amplitude_hz: f64, rabi_hz: f64, drive_hz: f64, t1_s: f64, t2_s: f64) -> PyResult<Self> {
        let p = LzsParams {
            c0,
            rabi: rabi_hz,
            stark_amplitude: stark_amplitude_hz,
            drive: drive_hz,
            t1: t1_s,
            t2: t2_s,
        };
        Ok(Self {
            inner: SpectralResponse::lzs(p).map_err(py_err)?,
        })
    }

    /// Two transitions, A2 sitting `delta_hz` above A1, initialised on A1
    /// with probability `p`.
    #[staticmethod]
    #[pyo3(signature = (p, gamma_a1_hz, gamma_a2_hz, delta_hz, c0_a1, c0_a2))]
    fn dual(p: f64, gamma_a1_hz: f64, gamma_a2_hz: f64, delta_hz: f64, c0_a1: f64, c0_a2: f64) -> PyResult<Self> {
        let d = DualTransitionParams {
            p,
            gamma_a1: gamma_a1_hz,
            gamma_a2: gamma_a2_hz,
            delta: delta_hz,
            c0_a1,
            c0_a2,
        };
        Ok(Self {
            inner: SpectralResponse::dual(d).map_err(py_err)?,
        })
    }

    fn __call__(&self, f: f64) -> f64 {
        self.inner.eval(f)
    }

    fn eval(&self, f: Vec<f64>) -> Vec<f64> {
        f.into_iter().map(|x| self.inner.eval(x)).collect()
    }

    #[getter]
    fn width(&self) -> f64 {
        self.inner.width()
    }

    #[getter]
    fn peak(&self) -> f64 {
        self.inner.peak()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Probability that Poisson counts with mean `lam` reach `t`.
#[pyfunction]
fn pass_probability(lam: f64, t: u32) -> f64 {
    bayes::pass_probability(lam, t)
}

/// `(frequencies, density)` of the detuning after a check with `counts >= t`.
#[pyfunction]
#[pyo3(signature = (response, t, f1 = 0.0))]
fn posterior(response: &PyResponse, t: u32, f1: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let g = FrequencyGrid::adequate_for(&response.inner, f1, t).map_err(py_err)?;
    let p = bayes::spectral_posterior(&response.inner, f1, t, &g).map_err(py_err)?;
    Ok((p.grid.points(), p.density))
}

#[pyfunction]
#[pyo3(signature = (response, t, f1 = 0.0))]
fn posterior_fwhm(response: &PyResponse, t: u32, f1: f64) -> PyResult<f64> {
    let g = FrequencyGrid::adequate_for(&response.inner, f1, t).map_err(py_err)?;
    let p = bayes::spectral_posterior(&response.inner, f1, t, &g).map_err(py_err)?;
    bayes::posterior_fwhm(&p).map_err(py_err)
}

/// Mean probe counts at the offsets `f2 − f1` (Hz) after a check with threshold `t`.
#[pyfunction]
#[pyo3(signature = (response, t, offsets, f1 = 0.0))]
fn probe_signal(response: &PyResponse, t: u32, offsets: Vec<f64>, f1: f64) -> PyResult<Vec<f64>> {
    let g = FrequencyGrid::adequate_for(&response.inner, f1, t).map_err(py_err)?;
    let s = bayes::probe_signal_at(&response.inner, f1, t, &g, &offsets).map_err(py_err)?;
    Ok(s.values)
}

/// Steady-state master-equation emission for an LZS response, on the same
/// scale as the sideband formula with `c0 = 1`.
#[pyfunction]
fn lzs_oracle(response: &PyResponse, f: f64) -> PyResult<f64> {
    let SpectralResponse::Lzs(s) = &response.inner else {
        return Err(PyValueError::new_err("the oracle needs an LZS response"));
    };
    let r = lzs_lindblad_oracle(f, s.params(), &OracleControls::default()).map_err(py_err)?;
    Ok(r.relative_emission)
}

fn variant(name: &str) -> PyResult<ModelVariant> {
    name.parse().map_err(py_err)
}

#[pyfunction]
fn model_variants() -> Vec<&'static str> {
    ModelVariant::ALL.iter().map(|v| v.name()).collect()
}

/// Closed-form mean counts at signed delays `t` (s); rates in Hz and Hz/s.
#[pyfunction]
#[pyo3(signature = (t, model, c0, gamma_hz, gamma_d = 0.0, gamma_i = 0.0, gamma_r = 0.0, gamma_i0 = 0.0))]
#[allow(clippy::too_many_arguments)]
fn mean_counts(
    t: Vec<f64>,
    model: &str,
    c0: f64,
    gamma_hz: f64,
    gamma_d: f64,
    gamma_i: f64,
    gamma_r: f64,
    gamma_i0: f64,
) -> PyResult<Vec<f64>> {
    let v = variant(model)?;
    let p = DynamicsParams {
        c0,
        gamma: gamma_hz,
        gamma_d,
        gamma_i,
        gamma_r,
        gamma_i0,
    };
    p.validate().map_err(py_err)?;
    Ok(t.into_iter().map(|x| dynamics::mean_counts(x, &p, v)).collect())
}

/// Post-selected dynamics data, one row per signed delay.
#[pyclass(name = "Dataset", frozen, get_all)]
struct PyDataset {
    threshold: u32,
    delays: Vec<f64>,
    mean: Vec<f64>,
    sem: Vec<f64>,
    n_pass: Vec<u64>,
    n_total: Vec<u64>,
}

impl PyDataset {
    fn from_core(d: &ForwardBackwardDataset) -> Self {
        Self {
            threshold: d.threshold,
            delays: d.delays(),
            mean: d.means(),
            sem: d.sems(),
            n_pass: d.points.iter().map(|p| p.n_pass).collect(),
            n_total: d.points.iter().map(|p| p.n_total).collect(),
        }
    }

    fn to_core(&self) -> ForwardBackwardDataset {
        let points = (0..self.delays.len())
            .map(|i| DataPoint {
                x: self.delays[i],
                mean: self.mean[i],
                sem: self.sem[i],
                n_pass: self.n_pass[i],
                n_total: self.n_total[i],
            })
            .collect();
        ForwardBackwardDataset {
            threshold: self.threshold,
            points,
        }
    }
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(threshold: u32, delays: Vec<f64>, mean: Vec<f64>, sem: Vec<f64>) -> PyResult<Self> {
        if mean.len() != delays.len() || sem.len() != delays.len() {
            return Err(PyValueError::new_err("delays, mean and sem differ in length"));
        }
        let n = delays.len();
        Ok(Self {
            threshold,
            delays,
            mean,
            sem,
            n_pass: vec![0; n],
            n_total: vec![0; n],
        })
    }

    fn __len__(&self) -> usize {
        self.delays.len()
    }

    fn to_csv(&self) -> String {
        io::dataset_table(&self.to_core()).to_csv_string()
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        let t = io::Table::parse(text).map_err(py_err)?;
        Ok(Self::from_core(&io::dataset_from_table(&t).map_err(py_err)?))
    }
}

/// Runs the check-probe dynamics sequence described by a JSON config and
/// post-selects at `threshold` (the config's own threshold by default).
#[pyfunction]
#[pyo3(signature = (config_json, seed = None, threshold = None))]
fn simulate_dynamics(py: Python<'_>, config_json: &str, seed: Option<u64>, threshold: Option<u32>) -> PyResult<PyDataset> {
    let mut cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let setup = cfg.setup().map_err(py_err)?;
    let delays = cfg.delays();
    let t = threshold.unwrap_or(cfg.threshold_counts);
    let data = py.detach(|| {
        let recs = protocol::simulate_dynamics_records(&setup, &protocol::delay_magnitudes(&delays));
        protocol::post_select_dynamics(&recs, &delays, t)
    });
    Ok(PyDataset::from_core(&data))
}

#[pyfunction]
fn config_hash(config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    io::config_hash(&cfg).map_err(py_err)
}

#[pyclass(name = "FitResult", frozen)]
struct PyFitResult {
    inner: fit::FitResult,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn model(&self) -> &str {
        &self.inner.model
    }

    #[getter]
    fn values(&self) -> BTreeMap<String, f64> {
        self.inner.names.iter().cloned().zip(self.inner.values.iter().copied()).collect()
    }

    #[getter]
    fn errors(&self) -> BTreeMap<String, f64> {
        self.inner.names.iter().cloned().zip(self.inner.errors.iter().copied()).collect()
    }

    #[getter]
    fn chi2_red(&self) -> f64 {
        self.inner.chi2_red
    }

    #[getter]
    fn aic(&self) -> f64 {
        self.inner.aic
    }

    #[getter]
    fn bic(&self) -> f64 {
        self.inner.bic
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    /// Free or fixed parameter by name.
    fn __getitem__(&self, name: &str) -> PyResult<f64> {
        self.inner
            .get(name)
            .ok_or_else(|| PyValueError::new_err(format!("no parameter `{name}`")))
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let params: Vec<String> = self
            .inner
            .names
            .iter()
            .zip(&self.inner.values)
            .map(|(n, v)| format!("{n}={v:.4e}"))
            .collect();
        format!("FitResult({}, {}, chi2_red={:.3})", self.inner.model, params.join(", "), self.inner.chi2_red)
    }
}

/// Weighted fit of one model variant with `Γ` held at `gamma_hz`.
#[pyfunction]
#[pyo3(signature = (data, model = "no-recap", gamma_hz = 36e6))]
fn fit_dynamics(py: Python<'_>, data: &PyDataset, model: &str, gamma_hz: f64) -> PyResult<PyFitResult> {
    let v = variant(model)?;
    let d = data.to_core();
    let inner = py
        .detach(|| fit::fit_dynamics(&d, v, gamma_hz, &DynamicsFitOptions::default()))
        .map_err(py_err)?;
    Ok(PyFitResult { inner })
}

/// Fits every variant; returns `{name: FitResult}` for those that converge to a result.
#[pyfunction]
#[pyo3(signature = (data, gamma_hz = 36e6))]
fn compare_models(py: Python<'_>, data: &PyDataset, gamma_hz: f64) -> BTreeMap<&'static str, PyFitResult> {
    let d = data.to_core();
    let fits = py.detach(|| {
        fit::fit_dynamics_nested(&d, &ModelVariant::ALL, gamma_hz, &DynamicsFitOptions::default())
    });
    fits.into_iter()
        .filter_map(|(v, r)| r.ok().map(|inner| (v.name(), PyFitResult { inner })))
        .collect()
}

#[pymodule]
fn checkprobe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyResponse>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(pass_probability, m)?)?;
    m.add_function(wrap_pyfunction!(posterior, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_fwhm, m)?)?;
    m.add_function(wrap_pyfunction!(probe_signal, m)?)?;
    m.add_function(wrap_pyfunction!(lzs_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(model_variants, m)?)?;
    m.add_function(wrap_pyfunction!(mean_counts, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(fit_dynamics, m)?)?;
    m.add_function(wrap_pyfunction!(compare_models, m)?)?;
    Ok(())
}
