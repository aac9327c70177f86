//! Stochastic single-emitter simulator.
//!
//! The transition frequency performs a Cauchy random walk, the charge state
//! flips between bright and ionised as a two-state Markov process, and photon
//! counts are Poisson given the bright time spent at each detuning.

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{lorentzian_shape, SpectralResponse};

pub const MIN_SUBSTEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Charge {
    Bright,
    Ionised,
}

impl Charge {
    pub fn name(self) -> &'static str {
        match self {
            Charge::Bright => "bright",
            Charge::Ionised => "ionised",
        }
    }
}

/// Emitter frequency relative to the reference laser `f1`, and charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterState {
    pub detuning: f64,
    pub charge: Charge,
}

impl EmitterState {
    pub fn bright(detuning: f64) -> Self {
        Self {
            detuning,
            charge: Charge::Bright,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Dark,
    Nir,
    Repump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub gamma_d: f64,
    pub gamma_i: f64,
    pub gamma_i0: f64,
    pub gamma_r: f64,
    /// Ionise at `γi0·L²(detuning)` instead of the flat `γi`.
    pub resonant_ionisation: bool,
}

impl PerturbationSpec {
    pub const DARK: PerturbationSpec = PerturbationSpec {
        kind: PerturbationKind::Dark,
        gamma_d: 0.0,
        gamma_i: 0.0,
        gamma_i0: 0.0,
        gamma_r: 0.0,
        resonant_ionisation: false,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_d", self.gamma_d),
            ("gamma_i", self.gamma_i),
            ("gamma_i0", self.gamma_i0),
            ("gamma_r", self.gamma_r),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "rate {name} must be non-negative, got {v}"
                )));
            }
        }
        if self.kind == PerturbationKind::Dark
            && (self.gamma_d != 0.0 || self.gamma_i != 0.0 || self.gamma_i0 != 0.0 || self.gamma_r != 0.0)
        {
            return Err(Error::InvalidParameter(
                "a dark perturbation must have all rates zero".into(),
            ));
        }
        Ok(())
    }

    pub fn is_static(&self) -> bool {
        self.gamma_d == 0.0 && self.gamma_i == 0.0 && self.gamma_r == 0.0 && !self.resonant_ionisation
    }

    fn ionisation_rate(&self, detuning: f64, gamma: f64) -> f64 {
        if self.resonant_ionisation {
            let l = lorentzian_shape(detuning, gamma);
            self.gamma_i0 * l * l
        } else {
            self.gamma_i
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Illumination {
    Off,
    /// One laser at `f1 + offset`.
    Single { offset: f64 },
    TwoLaser { offset1: f64, offset2: f64 },
}

/// Inhomogeneous distribution the detuning is redrawn from after a repump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetuningPrior {
    Gaussian { center: f64, fwhm: f64 },
    Uniform { low: f64, high: f64 },
    Fixed { detuning: f64 },
}

impl DetuningPrior {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DetuningPrior::Gaussian { center, fwhm } => center.is_finite() && fwhm.is_finite() && fwhm >= 0.0,
            DetuningPrior::Uniform { low, high } => low.is_finite() && high.is_finite() && high >= low,
            DetuningPrior::Fixed { detuning } => detuning.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid detuning prior {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DetuningPrior::Gaussian { center, fwhm } => {
                let sigma = fwhm_to_sigma(fwhm);
                if sigma == 0.0 {
                    center
                } else {
                    Normal::new(center, sigma).expect("finite sigma").sample(rng)
                }
            }
            DetuningPrior::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            DetuningPrior::Fixed { detuning } => detuning,
        }
    }

    /// Reflecting bounds at three standard deviations, for Gaussian priors.
    pub fn three_sigma_envelope(&self) -> Option<(f64, f64)> {
        match *self {
            DetuningPrior::Gaussian { center, fwhm } if fwhm > 0.0 => {
                let s = fwhm_to_sigma(fwhm);
                Some((center - 3.0 * s, center + 3.0 * s))
            }
            _ => None,
        }
    }
}

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (8.0 * std::f64::consts::LN_2).sqrt()
}

/// Everything about the emitter that is fixed over a run.
#[derive(Debug, Clone)]
pub struct EmitterModel {
    pub response: SpectralResponse,
    /// Block length over which `response` gives the mean counts.
    pub reference_duration: f64,
    /// Detector background, counts per second while a laser is on.
    pub background_rate: f64,
    /// Reflecting bounds for the detuning walk.
    pub envelope: Option<(f64, f64)>,
}

impl EmitterModel {
    pub fn new(response: SpectralResponse, reference_duration: f64) -> Self {
        Self {
            response,
            reference_duration,
            background_rate: 0.0,
            envelope: None,
        }
    }

    /// Mean counts per reference block for a bright emitter.
    pub fn emission(&self, detuning: f64, illum: &Illumination) -> f64 {
        match *illum {
            Illumination::Off => 0.0,
            Illumination::Single { offset } => self.response.eval(detuning - offset),
            Illumination::TwoLaser { offset1, offset2 } => match &self.response {
                SpectralResponse::Dual(d) => {
                    d.two_laser_eval(detuning - offset1, detuning - offset2 + d.delta)
                }
                r => r.eval(detuning - offset1) + r.eval(detuning - offset2),
            },
        }
    }

    fn reflect(&self, x: f64) -> f64 {
        match self.envelope {
            None => x,
            Some((lo, hi)) => {
                let w = hi - lo;
                let period = 2.0 * w;
                let mut y = (x - lo).rem_euclid(period);
                if y > w {
                    y = period - y;
                }
                lo + y
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub duration: f64,
    pub illumination: Illumination,
    pub perturbation: PerturbationSpec,
    /// `None` picks `default_substeps`.
    pub n_substeps: Option<usize>,
}

impl Block {
    pub fn laser(duration: f64, offset: f64) -> Self {
        Self {
            duration,
            illumination: Illumination::Single { offset },
            perturbation: PerturbationSpec::DARK,
            n_substeps: None,
        }
    }

    pub fn dark(duration: f64) -> Self {
        Self {
            duration,
            illumination: Illumination::Off,
            perturbation: PerturbationSpec::DARK,
            n_substeps: None,
        }
    }

    pub fn perturb(duration: f64, perturbation: PerturbationSpec) -> Self {
        Self {
            duration,
            illumination: Illumination::Off,
            perturbation,
            n_substeps: None,
        }
    }
}

/// Enough substeps that the linewidth grows by less than `Γ/10` in each, and
/// at least `MIN_SUBSTEPS`.
pub fn default_substeps(duration: f64, gamma_d: f64, gamma: f64) -> usize {
    let need = (gamma_d * duration / (0.1 * gamma)).ceil();
    if need.is_finite() {
        (need as usize).max(MIN_SUBSTEPS)
    } else {
        MIN_SUBSTEPS
    }
}

/// Cauchy increment with half-width `γd·dt/2`; sums over `t` have FWHM `γd·t`.
pub fn sample_diffusion_step<R: Rng + ?Sized>(dt: f64, gamma_d: f64, rng: &mut R) -> f64 {
    let scale = 0.5 * gamma_d * dt;
    if scale <= 0.0 {
        return 0.0;
    }
    Cauchy::new(0.0, scale).expect("positive scale").sample(rng)
}

/// Exact two-state evolution over `dt` at fixed rates; returns the bright time.
fn evolve_charge<R: Rng + ?Sized>(charge: &mut Charge, dt: f64, gi: f64, gr: f64, rng: &mut R) -> f64 {
    let mut t = 0.0;
    let mut bright = 0.0;
    loop {
        let rate = match charge {
            Charge::Bright => gi,
            Charge::Ionised => gr,
        };
        let wait = if rate > 0.0 {
            Exp::new(rate).expect("positive rate").sample(rng)
        } else {
            f64::INFINITY
        };
        if t + wait >= dt {
            if *charge == Charge::Bright {
                bright += dt - t;
            }
            return bright;
        }
        if *charge == Charge::Bright {
            bright += wait;
        }
        t += wait;
        *charge = match charge {
            Charge::Bright => Charge::Ionised,
            Charge::Ionised => Charge::Bright,
        };
    }
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean).expect("finite mean").sample(rng) as u64
    } else {
        0
    }
}

/// Runs one block and returns the detected counts and the final state.
pub fn simulate_block<R: Rng + ?Sized>(
    state: EmitterState,
    block: &Block,
    model: &EmitterModel,
    rng: &mut R,
) -> (u64, EmitterState) {
    let mut s = state;
    let dur = block.duration;
    if dur <= 0.0 {
        return (0, s);
    }
    let pert = &block.perturbation;
    let lit = !matches!(block.illumination, Illumination::Off);
    let gamma = model.response.width();
    // With static detuning the rates are constant, so one step is exact.
    let n = if pert.gamma_d == 0.0 || (!lit && !pert.resonant_ionisation) {
        1
    } else {
        block
            .n_substeps
            .unwrap_or_else(|| default_substeps(dur, pert.gamma_d, gamma))
            .max(1)
    };
    let dt = dur / n as f64;
    let per_second = 1.0 / model.reference_duration;
    let mut mean = 0.0;
    for _ in 0..n {
        if pert.gamma_d > 0.0 {
            s.detuning = model.reflect(s.detuning + sample_diffusion_step(dt, pert.gamma_d, rng));
        }
        let gi = pert.ionisation_rate(s.detuning, gamma);
        let bright = evolve_charge(&mut s.charge, dt, gi, pert.gamma_r, rng);
        if lit {
            mean += model.emission(s.detuning, &block.illumination) * per_second * bright
                + model.background_rate * dt;
        }
    }
    (poisson(mean, rng), s)
}

/// Per-repetition check counts with the detuning redrawn before every check.
pub fn simulate_telegraph_trace(
    model: &EmitterModel,
    prior: &DetuningPrior,
    check: &Block,
    initial_bright_probability: f64,
    n_reps: u64,
    master_seed: u64,
) -> Vec<u64> {
    use crate::rng::{stream_index, RngSeed};
    use rayon::prelude::*;
    (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = RngSeed::new(master_seed, stream_index(0, rep)).rng();
            let state = EmitterState {
                detuning: prior.sample(&mut rng),
                charge: if rng.random::<f64>() < initial_bright_probability {
                    Charge::Bright
                } else {
                    Charge::Ionised
                },
            };
            simulate_block(state, check, model, &mut rng).0
        })
        .collect()
}
