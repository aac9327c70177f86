//! Homogeneous emitter lineshapes `λ(f)`: mean detected counts per reference
//! block as a function of the detuning `f` between emitter and laser.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::bessel_j_orders;
use crate::units::Frequency;

/// Default cap on the number of LZS sidebands on either side of the carrier.
pub const LZS_K_MAX_CAP: usize = 200;
/// Bessel amplitude below which LZS sidebands are dropped.
pub const LZS_BESSEL_CUTOFF: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams {
    /// Mean counts on resonance.
    pub c0: f64,
    /// FWHM in Hz.
    pub gamma: f64,
}

impl LorentzianParams {
    pub fn new(c0: f64, gamma: Frequency) -> Result<Self> {
        let p = Self {
            c0,
            gamma: gamma.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0.is_finite() && self.c0 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "C0 must be finite and non-negative, got {}",
                self.c0
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "linewidth must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Unit-peak Lorentzian with FWHM `gamma`.
#[inline]
pub fn lorentzian_shape(f: f64, gamma: f64) -> f64 {
    let hw = 0.5 * gamma;
    hw * hw / (f * f + hw * hw)
}

pub fn lorentzian_response(f: Frequency, p: &LorentzianParams) -> f64 {
    p.c0 * lorentzian_shape(f.0, p.gamma)
}

/// Parameters of the fast-passage Landau-Zener-Stückelberg spectrum. All
/// frequencies are ordinary frequencies in Hz, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LzsParams {
    pub c0: f64,
    /// Optical Rabi frequency.
    pub rabi: f64,
    /// Stark-shift amplitude.
    pub stark_amplitude: f64,
    /// Microwave drive frequency.
    pub drive: f64,
    pub t1: f64,
    pub t2: f64,
}

impl LzsParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("C0", self.c0),
            ("rabi", self.rabi),
            ("stark_amplitude", self.stark_amplitude),
            ("drive", self.drive),
            ("t1", self.t1),
            ("t2", self.t2),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.drive <= 0.0 || self.t1 <= 0.0 || self.t2 <= 0.0 {
            return Err(Error::InvalidParameter(
                "drive frequency, T1 and T2 must be positive".into(),
            ));
        }
        if self.t2 > 2.0 * self.t1 * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "T2 = {} s exceeds the lifetime limit 2*T1 = {} s",
                self.t2,
                2.0 * self.t1
            )));
        }
        Ok(())
    }

    /// Modulation index `A/ω`.
    pub fn modulation_index(&self) -> f64 {
        self.stark_amplitude / self.drive
    }

    /// Smallest `k` such that `|J_j(A/ω)| < 1e-6` for every `j > k`, capped.
    pub fn default_k_max(&self) -> usize {
        let j = bessel_j_orders(LZS_K_MAX_CAP + 1, self.modulation_index());
        let mut k = LZS_K_MAX_CAP;
        while k > 0 && j[k].abs() < LZS_BESSEL_CUTOFF {
            k -= 1;
        }
        (k).min(LZS_K_MAX_CAP)
    }

    /// `1/(T1 T2)` expressed in Hz², i.e. divided by `(2π)²`.
    ///
    /// The sideband formula is the steady state of the Bloch equations written
    /// in angular units; keeping ordinary frequencies everywhere else requires
    /// this factor on the relaxation term.
    fn relaxation_hz2(&self) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        1.0 / (two_pi * two_pi * self.t1 * self.t2)
    }
}

/// Precomputed sideband weights for repeated evaluation of one LZS spectrum.
#[derive(Debug, Clone)]
pub struct LzsSpectrum {
    params: LzsParams,
    /// `Ω_k²` for `k = 0..=k_max`; symmetric in `k`.
    rabi_k_sq: Vec<f64>,
}

impl LzsSpectrum {
    pub fn new(params: LzsParams, k_max: usize) -> Self {
        let j = bessel_j_orders(k_max + 2, params.modulation_index());
        // The first omitted order bounds the truncation error.
        if j[k_max + 1].abs() > LZS_BESSEL_CUTOFF {
            log::warn!(
                "LZS sideband sum truncated at k_max = {k_max} with |J_(k_max+1)| = {:.3e}",
                j[k_max + 1].abs()
            );
        }
        let rabi_k_sq = j[..=k_max]
            .iter()
            .map(|jk| (params.rabi * jk).powi(2))
            .collect();
        Self { params, rabi_k_sq }
    }

    pub fn with_default_k_max(params: LzsParams) -> Self {
        let k = params.default_k_max();
        Self::new(params, k)
    }

    pub fn params(&self) -> &LzsParams {
        &self.params
    }

    pub fn k_max(&self) -> usize {
        self.rabi_k_sq.len() - 1
    }

    /// Sum rule check: `Σ_k Ω_k²`, which tends to `Ω²`.
    pub fn total_rabi_sq(&self) -> f64 {
        self.rabi_k_sq[0] + 2.0 * self.rabi_k_sq[1..].iter().sum::<f64>()
    }

    pub fn eval(&self, f: f64) -> f64 {
        let p = &self.params;
        let relax = p.relaxation_hz2();
        let ratio = p.t2 / p.t1;
        let term = |k: f64, ok2: f64| {
            let d = k * p.drive - f;
            ok2 / (relax + ratio * d * d + ok2)
        };
        let mut s = term(0.0, self.rabi_k_sq[0]);
        for (k, &ok2) in self.rabi_k_sq.iter().enumerate().skip(1) {
            let k = k as f64;
            s += term(k, ok2) + term(-k, ok2);
        }
        p.c0 * s
    }
}

/// Fast-passage LZS spectrum truncated to `|k| <= k_max`.
pub fn lzs_response(f: Frequency, p: &LzsParams, k_max: usize) -> f64 {
    LzsSpectrum::new(*p, k_max).eval(f.0)
}

/// `A·ω/Ω²`; values well above one indicate fast passage.
pub fn fast_passage_ratio(p: &LzsParams) -> Result<f64> {
    if !(p.rabi > 0.0) {
        return Err(Error::InvalidParameter(
            "fast-passage ratio needs a positive Rabi frequency".into(),
        ));
    }
    Ok(p.stark_amplitude * p.drive / (p.rabi * p.rabi))
}

/// Two optical transitions (A1, A2) with splitting `delta`. The single-laser
/// response is the `p`-weighted mixture of the two Lorentzians, A2 sitting
/// `delta` above A1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualTransitionParams {
    /// Probability of initialising on A1.
    pub p: f64,
    pub gamma_a1: f64,
    pub gamma_a2: f64,
    pub delta: f64,
    pub c0_a1: f64,
    pub c0_a2: f64,
}

impl DualTransitionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidParameter(format!(
                "initialisation probability must lie in [0, 1], got {}",
                self.p
            )));
        }
        if !(self.gamma_a1 > 0.0 && self.gamma_a2 > 0.0)
            || !self.gamma_a1.is_finite()
            || !self.gamma_a2.is_finite()
        {
            return Err(Error::InvalidParameter(
                "transition linewidths must be positive".into(),
            ));
        }
        if !self.delta.is_finite() || self.c0_a1 < 0.0 || self.c0_a2 < 0.0 {
            return Err(Error::InvalidParameter(
                "splitting must be finite and brightnesses non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, f: f64) -> f64 {
        self.p * self.c0_a1 * lorentzian_shape(f, self.gamma_a1)
            + (1.0 - self.p) * self.c0_a2 * lorentzian_shape(f + self.delta, self.gamma_a2)
    }

    /// Emission with one laser on each transition: `δ1` is the A1 detuning
    /// from the first laser, `δ2` the A2 detuning from the second. Without a
    /// second laser the emitter is pumped dark, so the product of both
    /// Lorentzians sets the brightness.
    pub fn two_laser_eval(&self, delta1: f64, delta2: f64) -> f64 {
        (self.c0_a1 + self.c0_a2)
            * lorentzian_shape(delta1, self.gamma_a1)
            * lorentzian_shape(delta2, self.gamma_a2)
    }
}

/// `p Γ_A1 + (1 − p) Γ_A2`.
pub fn mean_linewidth_approx(gamma_a1: Frequency, gamma_a2: Frequency, p: f64) -> Result<Frequency> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "weight must lie in [0, 1], got {p}"
        )));
    }
    Ok(Frequency(p * gamma_a1.0 + (1.0 - p) * gamma_a2.0))
}

/// FWHM of `p·L(Γ_A1) + (1 − p)·L(Γ_A2)` (unit-peak, co-centred Lorentzians)
/// by bisection on the half-maximum crossing.
pub fn mixture_fwhm_numeric(params: &DualTransitionParams) -> Result<Frequency> {
    params.validate()?;
    let mix = |f: f64| {
        params.p * lorentzian_shape(f, params.gamma_a1)
            + (1.0 - params.p) * lorentzian_shape(f, params.gamma_a2)
    };
    let half = 0.5 * mix(0.0);
    let tol = 1e-4 * params.gamma_a1.min(params.gamma_a2) * 0.5;
    // Each component is at or below half maximum beyond its own half width.
    let mut lo = 0.0;
    let mut hi = 0.5 * params.gamma_a1.max(params.gamma_a2);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mix(mid) > half {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Frequency(lo + hi))
}

/// Any of the supported homogeneous lineshapes.
#[derive(Debug, Clone)]
pub enum SpectralResponse {
    Lorentzian(LorentzianParams),
    Lzs(LzsSpectrum),
    Dual(DualTransitionParams),
}

impl SpectralResponse {
    pub fn lorentzian(c0: f64, gamma: Frequency) -> Result<Self> {
        Ok(SpectralResponse::Lorentzian(LorentzianParams::new(c0, gamma)?))
    }

    pub fn lzs(params: LzsParams) -> Result<Self> {
        params.validate()?;
        Ok(SpectralResponse::Lzs(LzsSpectrum::with_default_k_max(params)))
    }

    pub fn dual(params: DualTransitionParams) -> Result<Self> {
        params.validate()?;
        Ok(SpectralResponse::Dual(params))
    }

    /// Mean counts per reference block at emitter-minus-laser detuning `f` (Hz).
    pub fn eval(&self, f: f64) -> f64 {
        match self {
            SpectralResponse::Lorentzian(p) => p.c0 * lorentzian_shape(f, p.gamma),
            SpectralResponse::Lzs(s) => s.eval(f),
            SpectralResponse::Dual(d) => d.eval(f),
        }
    }

    /// A frequency scale for the main feature (used to size grids and steps).
    pub fn width(&self) -> f64 {
        match self {
            SpectralResponse::Lorentzian(p) => p.gamma,
            SpectralResponse::Lzs(s) => {
                // Carrier FWHM without Stark modulation.
                let p = s.params();
                2.0 * ((p.relaxation_hz2() + p.rabi * p.rabi) * p.t1 / p.t2).sqrt()
            }
            SpectralResponse::Dual(d) => d.gamma_a1.min(d.gamma_a2),
        }
    }

    /// Half-span of frequencies that carry appreciable response.
    pub fn support_half_span(&self) -> f64 {
        match self {
            SpectralResponse::Lorentzian(p) => 20.0 * p.gamma,
            SpectralResponse::Lzs(s) => {
                let p = s.params();
                p.stark_amplitude + 6.0 * p.drive
            }
            SpectralResponse::Dual(d) => d.delta.abs() + 20.0 * d.gamma_a1.max(d.gamma_a2),
        }
    }

    /// Maximum of the response, found on a dense scan for structured shapes.
    pub fn peak(&self) -> f64 {
        match self {
            SpectralResponse::Lorentzian(p) => p.c0,
            _ => {
                let span = self.support_half_span();
                let n = 20_001;
                (0..n)
                    .map(|i| self.eval(-span + 2.0 * span * i as f64 / (n - 1) as f64))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Copy with every count scale multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            SpectralResponse::Lorentzian(p) => SpectralResponse::Lorentzian(LorentzianParams {
                c0: p.c0 * factor,
                ..*p
            }),
            SpectralResponse::Lzs(s) => {
                let mut params = *s.params();
                params.c0 *= factor;
                SpectralResponse::Lzs(LzsSpectrum::new(params, s.k_max()))
            }
            SpectralResponse::Dual(d) => SpectralResponse::Dual(DualTransitionParams {
                c0_a1: d.c0_a1 * factor,
                c0_a2: d.c0_a2 * factor,
                ..*d
            }),
        }
    }
}
