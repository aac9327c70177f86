//! JSON experiment configuration. Every dimensional key carries its unit.

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsParams;
use crate::error::{Error, Result, Violation};
use crate::protocol::{log_spaced_delays, ScanSettings, Setup};
use crate::sim::{DetuningPrior, EmitterModel, PerturbationKind, PerturbationSpec};
use crate::spectral::{DualTransitionParams, LzsParams, SpectralResponse};

const MHZ: f64 = 1e6;
const GHZ: f64 = 1e9;
const MS: f64 = 1e-3;
const NS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponseConfig {
    Lorentzian {
        c0_counts: f64,
        #[serde(rename = "gamma_MHz")]
        gamma_mhz: f64,
    },
    Lzs {
        c0_counts: f64,
        #[serde(rename = "rabi_MHz")]
        rabi_mhz: f64,
        #[serde(rename = "stark_amplitude_MHz")]
        stark_amplitude_mhz: f64,
        #[serde(rename = "drive_MHz")]
        drive_mhz: f64,
        t1_ns: f64,
        t2_ns: f64,
    },
    Dual {
        p: f64,
        #[serde(rename = "gamma_a1_MHz")]
        gamma_a1_mhz: f64,
        #[serde(rename = "gamma_a2_MHz")]
        gamma_a2_mhz: f64,
        #[serde(rename = "delta_MHz")]
        delta_mhz: f64,
        c0_a1_counts: f64,
        c0_a2_counts: f64,
    },
}

impl ResponseConfig {
    pub fn build(&self) -> Result<SpectralResponse> {
        match *self {
            ResponseConfig::Lorentzian { c0_counts, gamma_mhz } => {
                SpectralResponse::lorentzian(c0_counts, crate::units::Frequency::mhz(gamma_mhz))
            }
            ResponseConfig::Lzs {
                c0_counts,
                rabi_mhz,
                stark_amplitude_mhz,
                drive_mhz,
                t1_ns,
                t2_ns,
            } => SpectralResponse::lzs(LzsParams {
                c0: c0_counts,
                rabi: rabi_mhz * MHZ,
                stark_amplitude: stark_amplitude_mhz * MHZ,
                drive: drive_mhz * MHZ,
                t1: t1_ns * NS,
                t2: t2_ns * NS,
            }),
            ResponseConfig::Dual {
                p,
                gamma_a1_mhz,
                gamma_a2_mhz,
                delta_mhz,
                c0_a1_counts,
                c0_a2_counts,
            } => SpectralResponse::dual(DualTransitionParams {
                p,
                gamma_a1: gamma_a1_mhz * MHZ,
                gamma_a2: gamma_a2_mhz * MHZ,
                delta: delta_mhz * MHZ,
                c0_a1: c0_a1_counts,
                c0_a2: c0_a2_counts,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterConfig {
    pub response: ResponseConfig,
    #[serde(default)]
    pub background_counts_per_s: f64,
    #[serde(default = "one")]
    pub initial_bright_probability: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    Gaussian {
        #[serde(default, rename = "center_GHz")]
        center_ghz: f64,
        #[serde(rename = "fwhm_GHz")]
        fwhm_ghz: f64,
        #[serde(default)]
        reflecting_envelope: bool,
    },
    Uniform {
        #[serde(rename = "low_MHz")]
        low_mhz: f64,
        #[serde(rename = "high_MHz")]
        high_mhz: f64,
    },
    Fixed {
        #[serde(rename = "detuning_MHz")]
        detuning_mhz: f64,
    },
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::Gaussian {
            center_ghz: 0.0,
            fwhm_ghz: 2.4,
            reflecting_envelope: false,
        }
    }
}

impl PriorConfig {
    pub fn build(&self) -> DetuningPrior {
        match *self {
            PriorConfig::Gaussian { center_ghz, fwhm_ghz, .. } => DetuningPrior::Gaussian {
                center: center_ghz * GHZ,
                fwhm: fwhm_ghz * GHZ,
            },
            PriorConfig::Uniform { low_mhz, high_mhz } => DetuningPrior::Uniform {
                low: low_mhz * MHZ,
                high: high_mhz * MHZ,
            },
            PriorConfig::Fixed { detuning_mhz } => DetuningPrior::Fixed {
                detuning: detuning_mhz * MHZ,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub check_ms: f64,
    /// Defaults to the check duration.
    #[serde(default)]
    pub probe_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserConfig {
    /// Reference laser; recorded for bookkeeping, all detunings are relative to it.
    #[serde(default, rename = "f1_MHz")]
    pub f1_mhz: f64,
    /// Probe laser offset `f2 − f1` for the dynamics sequence.
    #[serde(default, rename = "probe_offset_MHz")]
    pub probe_offset_mhz: f64,
    /// Second laser `f2 − f1` during check blocks of the telegraph trace.
    #[serde(default, rename = "two_laser_offset_MHz")]
    pub two_laser_offset_mhz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub kind: PerturbationKind,
    #[serde(default)]
    pub gamma_d_ghz_per_s: f64,
    #[serde(default)]
    pub gamma_i_per_s: f64,
    #[serde(default)]
    pub gamma_i0_per_s: f64,
    #[serde(default)]
    pub gamma_r_per_s: f64,
    #[serde(default)]
    pub resonant_ionisation: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            kind: PerturbationKind::Dark,
            gamma_d_ghz_per_s: 0.0,
            gamma_i_per_s: 0.0,
            gamma_i0_per_s: 0.0,
            gamma_r_per_s: 0.0,
            resonant_ionisation: false,
        }
    }
}

impl PerturbationConfig {
    pub fn build(&self) -> PerturbationSpec {
        PerturbationSpec {
            kind: self.kind,
            gamma_d: self.gamma_d_ghz_per_s * GHZ,
            gamma_i: self.gamma_i_per_s,
            gamma_i0: self.gamma_i0_per_s,
            gamma_r: self.gamma_r_per_s,
            resonant_ionisation: self.resonant_ionisation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "start_MHz")]
    pub start_mhz: f64,
    #[serde(rename = "stop_MHz")]
    pub stop_mhz: f64,
    pub points: usize,
}

impl GridConfig {
    pub fn values_hz(&self) -> Vec<f64> {
        let n = self.points;
        if n == 1 {
            return vec![self.start_mhz * MHZ];
        }
        (0..n)
            .map(|i| (self.start_mhz + (self.stop_mhz - self.start_mhz) * i as f64 / (n - 1) as f64) * MHZ)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    /// Explicit signed delays; overrides the log spacing when present.
    #[serde(default)]
    pub delays_s: Option<Vec<f64>>,
    #[serde(default = "default_log_min")]
    pub log_min_s: f64,
    #[serde(default = "one")]
    pub log_max_s: f64,
    #[serde(default = "default_points")]
    pub points_per_branch: usize,
}

fn default_log_min() -> f64 {
    1e-3
}

fn default_points() -> usize {
    13
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            delays_s: None,
            log_min_s: default_log_min(),
            log_max_s: one(),
            points_per_branch: default_points(),
        }
    }
}

impl DelayConfig {
    pub fn delays(&self) -> Vec<f64> {
        match &self.delays_s {
            Some(d) => d.clone(),
            None => log_spaced_delays(self.log_min_s, self.log_max_s, self.points_per_branch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectroscopyConfig {
    pub f2_grid: GridConfig,
    #[serde(default)]
    pub wait_ms: f64,
    /// Defaults to the top-level threshold.
    #[serde(default)]
    pub thresholds: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanningConfig {
    pub f2_grid: GridConfig,
    pub laser_on_ms_per_scan: f64,
    pub n_scans: u64,
    pub gamma_d_ghz_per_s: f64,
    #[serde(default)]
    pub check_threshold: Option<u32>,
    #[serde(default = "default_attempts")]
    pub max_check_attempts: u32,
}

fn default_attempts() -> u32 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub emitter: EmitterConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    pub blocks: BlockConfig,
    #[serde(default)]
    pub lasers: LaserConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    /// Laser-induced dynamics during check and probe blocks.
    #[serde(default)]
    pub readout_perturbation: PerturbationConfig,
    #[serde(default)]
    pub threshold_counts: u32,
    pub repetitions: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub substeps: Option<usize>,
    #[serde(default)]
    pub dynamics: Option<DelayConfig>,
    #[serde(default)]
    pub ple: Option<GridConfig>,
    #[serde(default)]
    pub two_laser: Option<GridConfig>,
    #[serde(default)]
    pub spectroscopy: Option<SpectroscopyConfig>,
    #[serde(default)]
    pub scanning: Option<ScanningConfig>,
}

struct Checker {
    v: Vec<Violation>,
}

impl Checker {
    fn finite(&mut self, field: &str, x: f64) -> bool {
        if x.is_finite() {
            true
        } else {
            self.v.push(Violation::new(field, "must be finite"));
            false
        }
    }

    fn positive_duration(&mut self, field: &str, x: f64) {
        if self.finite(field, x) && x <= 0.0 {
            self.v.push(Violation::new(field, "duration must be positive"));
        }
    }

    fn non_negative_duration(&mut self, field: &str, x: f64) {
        if self.finite(field, x) && x < 0.0 {
            self.v.push(Violation::new(field, "duration must be non-negative"));
        }
    }

    fn rate(&mut self, field: &str, x: f64) {
        if self.finite(field, x) && x < 0.0 {
            self.v.push(Violation::new(field, "rate must be non-negative"));
        }
    }

    fn positive(&mut self, field: &str, x: f64) {
        if self.finite(field, x) && x <= 0.0 {
            self.v.push(Violation::new(field, "must be positive"));
        }
    }

    fn non_negative(&mut self, field: &str, x: f64) {
        if self.finite(field, x) && x < 0.0 {
            self.v.push(Violation::new(field, "must be non-negative"));
        }
    }

    fn probability(&mut self, field: &str, x: f64) {
        if self.finite(field, x) && !(0.0..=1.0).contains(&x) {
            self.v.push(Violation::new(field, "probability must lie in [0, 1]"));
        }
    }

    fn grid(&mut self, field: &str, g: &GridConfig) {
        self.finite(&format!("{field}.start_MHz"), g.start_mhz);
        self.finite(&format!("{field}.stop_MHz"), g.stop_mhz);
        if g.points == 0 {
            self.v.push(Violation::new(format!("{field}.points"), "must be at least 1"));
        }
        if g.stop_mhz < g.start_mhz {
            self.v.push(Violation::new(field, "stop must not be below start"));
        }
    }

    fn perturbation(&mut self, field: &str, p: &PerturbationConfig) {
        self.rate(&format!("{field}.gamma_d_ghz_per_s"), p.gamma_d_ghz_per_s);
        self.rate(&format!("{field}.gamma_i_per_s"), p.gamma_i_per_s);
        self.rate(&format!("{field}.gamma_i0_per_s"), p.gamma_i0_per_s);
        self.rate(&format!("{field}.gamma_r_per_s"), p.gamma_r_per_s);
        if p.kind == PerturbationKind::Dark
            && (p.gamma_d_ghz_per_s != 0.0 || p.gamma_i_per_s != 0.0 || p.gamma_i0_per_s != 0.0 || p.gamma_r_per_s != 0.0)
        {
            self.v.push(Violation::new(field, "a dark perturbation must have all rates zero"));
        }
    }
}

/// Returns every violated constraint, or `Ok` when the config is usable.
pub fn validate_config(cfg: &ExperimentConfig) -> std::result::Result<(), Vec<Violation>> {
    let mut c = Checker { v: Vec::new() };
    c.positive_duration("blocks.check_ms", cfg.blocks.check_ms);
    if let Some(p) = cfg.blocks.probe_ms {
        c.positive_duration("blocks.probe_ms", p);
    }
    if cfg.repetitions == 0 {
        c.v.push(Violation::new("repetitions", "must be at least 1"));
    }
    match cfg.emitter.response {
        ResponseConfig::Lorentzian { c0_counts, gamma_mhz } => {
            c.non_negative("emitter.response.c0_counts", c0_counts);
            c.positive("emitter.response.gamma_MHz", gamma_mhz);
        }
        ResponseConfig::Lzs {
            c0_counts,
            rabi_mhz,
            stark_amplitude_mhz,
            drive_mhz,
            t1_ns,
            t2_ns,
        } => {
            c.non_negative("emitter.response.c0_counts", c0_counts);
            c.non_negative("emitter.response.rabi_MHz", rabi_mhz);
            c.non_negative("emitter.response.stark_amplitude_MHz", stark_amplitude_mhz);
            c.positive("emitter.response.drive_MHz", drive_mhz);
            c.positive("emitter.response.t1_ns", t1_ns);
            c.positive("emitter.response.t2_ns", t2_ns);
            if t2_ns > 2.0 * t1_ns * (1.0 + 1e-12) {
                c.v.push(Violation::new("emitter.response.t2_ns", "must not exceed 2*T1"));
            }
        }
        ResponseConfig::Dual {
            p,
            gamma_a1_mhz,
            gamma_a2_mhz,
            delta_mhz,
            c0_a1_counts,
            c0_a2_counts,
        } => {
            c.probability("emitter.response.p", p);
            c.positive("emitter.response.gamma_a1_MHz", gamma_a1_mhz);
            c.positive("emitter.response.gamma_a2_MHz", gamma_a2_mhz);
            c.finite("emitter.response.delta_MHz", delta_mhz);
            c.non_negative("emitter.response.c0_a1_counts", c0_a1_counts);
            c.non_negative("emitter.response.c0_a2_counts", c0_a2_counts);
        }
    }
    c.rate("emitter.background_counts_per_s", cfg.emitter.background_counts_per_s);
    c.probability("emitter.initial_bright_probability", cfg.emitter.initial_bright_probability);
    match cfg.prior {
        PriorConfig::Gaussian { center_ghz, fwhm_ghz, .. } => {
            c.finite("prior.center_GHz", center_ghz);
            c.non_negative("prior.fwhm_GHz", fwhm_ghz);
        }
        PriorConfig::Uniform { low_mhz, high_mhz } => {
            if c.finite("prior.low_MHz", low_mhz) && c.finite("prior.high_MHz", high_mhz) && high_mhz < low_mhz {
                c.v.push(Violation::new("prior", "high must not be below low"));
            }
        }
        PriorConfig::Fixed { detuning_mhz } => {
            c.finite("prior.detuning_MHz", detuning_mhz);
        }
    }
    c.finite("lasers.f1_MHz", cfg.lasers.f1_mhz);
    c.finite("lasers.probe_offset_MHz", cfg.lasers.probe_offset_mhz);
    if let Some(d) = cfg.lasers.two_laser_offset_mhz {
        c.finite("lasers.two_laser_offset_MHz", d);
    }
    c.perturbation("perturbation", &cfg.perturbation);
    c.perturbation("readout_perturbation", &cfg.readout_perturbation);
    if cfg.substeps == Some(0) {
        c.v.push(Violation::new("substeps", "must be at least 1"));
    }
    if let Some(d) = &cfg.dynamics {
        match &d.delays_s {
            Some(list) => {
                if list.is_empty() {
                    c.v.push(Violation::new("dynamics.delays_s", "must not be empty"));
                }
                for x in list {
                    c.finite("dynamics.delays_s", *x);
                }
            }
            None => {
                c.positive_duration("dynamics.log_min_s", d.log_min_s);
                c.positive_duration("dynamics.log_max_s", d.log_max_s);
                if d.log_max_s < d.log_min_s {
                    c.v.push(Violation::new("dynamics", "log_max_s must not be below log_min_s"));
                }
                if d.points_per_branch == 0 {
                    c.v.push(Violation::new("dynamics.points_per_branch", "must be at least 1"));
                }
            }
        }
    }
    if let Some(g) = &cfg.ple {
        c.grid("ple", g);
    }
    if let Some(g) = &cfg.two_laser {
        c.grid("two_laser", g);
    }
    if let Some(s) = &cfg.spectroscopy {
        c.grid("spectroscopy.f2_grid", &s.f2_grid);
        c.non_negative_duration("spectroscopy.wait_ms", s.wait_ms);
        if s.thresholds.as_ref().is_some_and(|t| t.is_empty()) {
            c.v.push(Violation::new("spectroscopy.thresholds", "must not be empty"));
        }
    }
    if let Some(s) = &cfg.scanning {
        c.grid("scanning.f2_grid", &s.f2_grid);
        c.positive_duration("scanning.laser_on_ms_per_scan", s.laser_on_ms_per_scan);
        c.rate("scanning.gamma_d_ghz_per_s", s.gamma_d_ghz_per_s);
        if s.n_scans == 0 {
            c.v.push(Violation::new("scanning.n_scans", "must be at least 1"));
        }
        if s.max_check_attempts == 0 {
            c.v.push(Violation::new("scanning.max_check_attempts", "must be at least 1"));
        }
    }
    if c.v.is_empty() {
        Ok(())
    } else {
        Err(c.v)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validated(self) -> Result<Self> {
        validate_config(&self).map_err(Error::InvalidConfig)?;
        Ok(self)
    }

    pub fn check_duration(&self) -> f64 {
        self.blocks.check_ms * MS
    }

    pub fn probe_duration(&self) -> f64 {
        self.blocks.probe_ms.unwrap_or(self.blocks.check_ms) * MS
    }

    /// Signed delays of the dynamics sequence, log-spaced 1 ms to 1 s by default.
    pub fn delays(&self) -> Vec<f64> {
        self.dynamics.clone().unwrap_or_default().delays()
    }

    /// Runtime setup for the protocol engine.
    pub fn setup(&self) -> Result<Setup> {
        validate_config(self).map_err(Error::InvalidConfig)?;
        let response = self.emitter.response.build()?;
        let prior = self.prior.build();
        let mut model = EmitterModel::new(response, self.check_duration());
        model.background_rate = self.emitter.background_counts_per_s;
        if let PriorConfig::Gaussian {
            reflecting_envelope: true,
            ..
        } = self.prior
        {
            model.envelope = prior.three_sigma_envelope();
        }
        let mut s = Setup::new(model, prior, self.seed);
        s.initial_bright_probability = self.emitter.initial_bright_probability;
        s.check_duration = self.check_duration();
        s.probe_duration = self.probe_duration();
        s.probe_offset = self.lasers.probe_offset_mhz * MHZ;
        s.perturbation = self.perturbation.build();
        s.readout_perturbation = self.readout_perturbation.build();
        s.repetitions = self.repetitions;
        s.n_substeps = self.substeps;
        Ok(s)
    }

    /// Closed-form model parameters implied by the emitter and perturbation.
    pub fn dynamics_params(&self) -> Result<DynamicsParams> {
        let r = self.emitter.response.build()?;
        let p = self.perturbation.build();
        Ok(DynamicsParams {
            c0: r.peak() * self.probe_duration() / self.check_duration(),
            gamma: r.width(),
            gamma_d: p.gamma_d,
            gamma_i: p.gamma_i,
            gamma_r: p.gamma_r,
            gamma_i0: p.gamma_i0,
        })
    }

    pub fn scan_settings(&self) -> Option<ScanSettings> {
        self.scanning.as_ref().map(|s| ScanSettings {
            laser_on_per_scan: s.laser_on_ms_per_scan * MS,
            n_scans: s.n_scans,
            gamma_d: s.gamma_d_ghz_per_s * GHZ,
            check_threshold: s.check_threshold,
            max_check_attempts: s.max_check_attempts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "emitter": {"response": {"kind": "lorentzian", "c0_counts": 25, "gamma_MHz": 36}},
                "blocks": {"check_ms": 2},
                "perturbation": {"kind": "nir", "gamma_d_ghz_per_s": 0.6, "gamma_i_per_s": 1},
                "threshold_counts": 10,
                "repetitions": 10000
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn paper_config_is_valid() {
        assert!(validate_config(&base()).is_ok());
        let s = base().setup().unwrap();
        assert_eq!(s.check_duration, 2e-3);
        assert_eq!(s.perturbation.gamma_d, 0.6e9);
        let dp = base().dynamics_params().unwrap();
        assert_eq!((dp.c0, dp.gamma), (25.0, 36e6));
    }

    #[test]
    fn zero_duration_rejected() {
        let mut c = base();
        c.blocks.check_ms = 0.0;
        let v = validate_config(&c).unwrap_err();
        assert_eq!(v, vec![Violation::new("blocks.check_ms", "duration must be positive")]);
    }

    #[test]
    fn negative_rate_rejected() {
        let mut c = base();
        c.perturbation.gamma_d_ghz_per_s = -1.0;
        let v = validate_config(&c).unwrap_err();
        assert!(v.iter().any(|x| x.constraint == "rate must be non-negative"));
    }

    #[test]
    fn all_violations_reported() {
        let mut c = base();
        c.repetitions = 0;
        c.blocks.check_ms = f64::NAN;
        c.emitter.initial_bright_probability = 2.0;
        let v = validate_config(&c).unwrap_err();
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(matches!(c.setup(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_json(
            r#"{"emitter": {"response": {"kind": "lorentzian", "c0_counts": 1, "gamma": 36}},
                "blocks": {"check_ms": 2}, "repetitions": 1}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = base();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }
}
