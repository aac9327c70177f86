//! Closed-form spectral-diffusion and ionisation dynamics.
//!
//! After a successful resonance check the emitter frequency performs a Lévy
//! flight whose propagator is a Lorentzian of FWHM `γd·t`. Convolving with the
//! homogeneous line gives the power-law factor `(1 + γd|t|/Γ)⁻¹`; charge
//! dynamics multiply in an exponential.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::lorentzian_shape;

/// Above this accumulated diffusion width (Hz) the Lorentzian propagator is
/// no longer a fair description of the line.
pub const PROPAGATOR_VALIDITY_HZ: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub c0: f64,
    /// Homogeneous FWHM, Hz.
    pub gamma: f64,
    /// Linewidth growth rate, Hz/s.
    pub gamma_d: f64,
    pub gamma_i: f64,
    pub gamma_r: f64,
    /// On-resonance ionisation rate for the resonant variant.
    pub gamma_i0: f64,
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0.is_finite() && self.c0 >= 0.0) {
            return Err(Error::InvalidParameter(format!("C0 must be >= 0, got {}", self.c0)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Gamma must be positive, got {}",
                self.gamma
            )));
        }
        for (name, v) in [
            ("gamma_d", self.gamma_d),
            ("gamma_i", self.gamma_i),
            ("gamma_r", self.gamma_r),
            ("gamma_i0", self.gamma_i0),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "rate {name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    Full,
    FullResIon,
    NoRecap,
    DiffOnly,
    NoDiff,
    IonOnly,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::Full,
        ModelVariant::FullResIon,
        ModelVariant::NoRecap,
        ModelVariant::DiffOnly,
        ModelVariant::NoDiff,
        ModelVariant::IonOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::FullResIon => "full-res-ion",
            ModelVariant::NoRecap => "no-recap",
            ModelVariant::DiffOnly => "diff-only",
            ModelVariant::NoDiff => "no-diff",
            ModelVariant::IonOnly => "ion-only",
        }
    }

    pub fn has_diffusion(self) -> bool {
        !matches!(self, ModelVariant::NoDiff | ModelVariant::IonOnly)
    }

    /// Plain forward ionisation rate `γi`.
    pub fn has_ionisation(self) -> bool {
        matches!(
            self,
            ModelVariant::Full | ModelVariant::NoRecap | ModelVariant::NoDiff | ModelVariant::IonOnly
        )
    }

    pub fn has_resonant_ionisation(self) -> bool {
        self == ModelVariant::FullResIon
    }

    pub fn has_recapture(self) -> bool {
        matches!(
            self,
            ModelVariant::Full | ModelVariant::FullResIon | ModelVariant::NoDiff
        )
    }

    /// Names of the free rate parameters, in fit order after `C0`.
    pub fn rate_names(self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.has_diffusion() {
            v.push("gamma_d");
        }
        if self.has_ionisation() {
            v.push("gamma_i");
        }
        if self.has_resonant_ionisation() {
            v.push("gamma_i0");
        }
        if self.has_recapture() {
            v.push("gamma_r");
        }
        v
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// How the time-dependent resonant ionisation rate enters the survival factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResIonExponent {
    /// `∫₀ᵗ γi(t′) dt′`.
    #[default]
    Integral,
    /// `γi(t)·t`.
    RateTimesT,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Propagator {
    Density(f64),
    /// Zero elapsed width: the propagator is `δ(f)`.
    Delta,
}

/// Lorentzian transition-frequency density after time `t`, FWHM `γd·t`.
pub fn spectral_propagator(f: f64, t: f64, gamma_d: f64) -> Propagator {
    let w = gamma_d * t.abs();
    if w <= 0.0 {
        return Propagator::Delta;
    }
    let h = 0.5 * w;
    Propagator::Density(h / (std::f64::consts::PI * (f * f + h * h)))
}

pub fn ionisation_rate_resonant(f: f64, gamma: f64, gamma_i0: f64) -> f64 {
    let l = lorentzian_shape(f, gamma);
    gamma_i0 * l * l
}

/// Resonant ionisation rate averaged over the propagator at time `t`.
pub fn effective_ionisation_rate(t: f64, p: &DynamicsParams) -> f64 {
    let g = p.gamma_d * t.abs();
    let gg = p.gamma;
    0.5 * p.gamma_i0 * (gg * g + 2.0 * gg * gg) / ((g + gg) * (g + gg))
}

/// Survival exponent `∫₀ᵗ γi(t′) dt′` of the effective resonant rate, t ≥ 0.
pub fn resonant_ionisation_exponent(t: f64, p: &DynamicsParams) -> f64 {
    let t = t.abs();
    if p.gamma_d <= 0.0 {
        return p.gamma_i0 * t;
    }
    let g = p.gamma_d * t;
    let gg = p.gamma;
    let x = g / gg;
    // ln(1+x) loses precision for tiny x; ln_1p keeps the t → 0 limit exact.
    p.gamma_i0 / (2.0 * p.gamma_d) * (gg * x.ln_1p() + gg * x / (1.0 + x))
}

/// Mean probe (forward, `t > 0`) or check (backward, `t < 0`) counts.
pub fn mean_counts(t: f64, p: &DynamicsParams, variant: ModelVariant) -> f64 {
    mean_counts_with(t, p, variant, ResIonExponent::default())
}

pub fn mean_counts_with(
    t: f64,
    p: &DynamicsParams,
    variant: ModelVariant,
    exponent: ResIonExponent,
) -> f64 {
    if variant.has_diffusion() && p.gamma_d * t.abs() > PROPAGATOR_VALIDITY_HZ {
        // Fits probe many trial rates; once per process is enough.
        static WARNED: std::sync::Once = std::sync::Once::new();
        WARNED.call_once(|| {
            log::warn!(
                "diffusion width {:.3e} Hz at t = {t} s exceeds the propagator validity range",
                p.gamma_d * t.abs()
            )
        });
    }
    let diffusion = if variant.has_diffusion() {
        1.0 / (1.0 + p.gamma_d * t.abs() / p.gamma)
    } else {
        1.0
    };
    let charge = if t > 0.0 {
        if variant.has_resonant_ionisation() {
            let e = match exponent {
                ResIonExponent::Integral => resonant_ionisation_exponent(t, p),
                ResIonExponent::RateTimesT => effective_ionisation_rate(t, p) * t,
            };
            (-e).exp()
        } else if variant.has_ionisation() {
            (-p.gamma_i * t).exp()
        } else {
            1.0
        }
    } else if t < 0.0 && variant.has_recapture() {
        (p.gamma_r * t).exp()
    } else {
        1.0
    };
    p.c0 * diffusion * charge
}

/// Diffusion factor evaluated with the post-selected initial distribution
/// instead of a sharp start on resonance.
///
/// `initial` holds `(detuning, weight)` pairs of a normalised density sampled
/// on a uniform grid with spacing `df`. The result is
/// `C0 ∫ P₀(f) L_{Γ+γd|t|}(f) df` times the charge factor, i.e. the
/// convolution of the initial density, the propagator and the line.
pub fn mean_counts_from_initial(
    t: f64,
    p: &DynamicsParams,
    variant: ModelVariant,
    initial: &[(f64, f64)],
    df: f64,
) -> f64 {
    let width = if variant.has_diffusion() {
        p.gamma + p.gamma_d * t.abs()
    } else {
        p.gamma
    };
    let scale = p.gamma / width;
    let overlap: f64 = initial
        .iter()
        .map(|&(f, w)| w * lorentzian_shape(f, width))
        .sum::<f64>()
        * df;
    let sharp = mean_counts(t, p, variant);
    let diffusion_sharp = if variant.has_diffusion() {
        1.0 / (1.0 + p.gamma_d * t.abs() / p.gamma)
    } else {
        1.0
    };
    // `sharp / diffusion_sharp` is C0 times the charge factor.
    sharp / diffusion_sharp * scale * overlap
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nir() -> DynamicsParams {
        DynamicsParams {
            c0: 25.0,
            gamma: 36e6,
            gamma_d: 0.6e9,
            gamma_i: 1.0,
            gamma_r: 0.0,
            gamma_i0: 3.0,
        }
    }

    #[test]
    fn propagator_values() {
        let Propagator::Density(d) = spectral_propagator(0.0, 0.1, 1e9) else {
            panic!()
        };
        assert!((d - 2.0 / (std::f64::consts::PI * 1e8)).abs() < 1e-20);
        let Propagator::Density(h) = spectral_propagator(5e7, 0.1, 1e9) else {
            panic!()
        };
        assert!((h / d - 0.5).abs() < 1e-14);
        assert_eq!(spectral_propagator(1.0, 0.0, 1e9), Propagator::Delta);
        assert_eq!(spectral_propagator(1.0, 1.0, 0.0), Propagator::Delta);
    }

    #[test]
    fn propagator_normalised() {
        // Substitute f = (w/2) tan θ so the tails are integrated exactly.
        let w = 1e8;
        let n = 200_000;
        let mut s = 0.0;
        for i in 0..n {
            let th = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
            let f = 0.5 * w * th.tan();
            let jac = 0.5 * w / th.cos().powi(2);
            if let Propagator::Density(d) = spectral_propagator(f, 0.1, 1e9) {
                s += d * jac * std::f64::consts::PI / n as f64;
            }
        }
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn resonant_rate() {
        assert_eq!(ionisation_rate_resonant(0.0, 36e6, 3.0), 3.0);
        assert!((ionisation_rate_resonant(18e6, 36e6, 3.0) - 0.75).abs() < 1e-14);
    }

    #[test]
    fn effective_rate_limits() {
        let mut p = nir();
        p.gamma_i0 = 3.0;
        assert!((effective_ionisation_rate(0.0, &p) - 3.0).abs() < 1e-14);
        let t = p.gamma / p.gamma_d;
        assert!((effective_ionisation_rate(t, &p) - 0.375 * 3.0).abs() < 1e-12);
        assert!(effective_ionisation_rate(1e6, &p) < 1e-6);
    }

    #[test]
    fn effective_rate_is_propagator_average() {
        // Average the resonant rate over the propagator numerically.
        let p = nir();
        for &t in &[0.01, 0.06, 0.3] {
            let w = p.gamma_d * t;
            let n = 400_000;
            let mut s = 0.0;
            for i in 0..n {
                let th = -std::f64::consts::FRAC_PI_2
                    + std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                let f = 0.5 * w * th.tan();
                let jac = 0.5 * w / th.cos().powi(2);
                if let Propagator::Density(d) = spectral_propagator(f, t, p.gamma_d) {
                    s += d * jac * ionisation_rate_resonant(f, p.gamma, p.gamma_i0);
                }
            }
            s *= std::f64::consts::PI / n as f64;
            let e = effective_ionisation_rate(t, &p);
            assert!((s - e).abs() / e < 1e-6, "t={t}: {s} vs {e}");
        }
    }

    #[test]
    fn exponent_integral_matches_quadrature() {
        let p = nir();
        for &t in &[1e-4, 0.05, 0.7, 3.0] {
            let n = 100_000;
            let h = t / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                s += w * effective_ionisation_rate(i as f64 * h, &p);
            }
            s *= h / 3.0;
            let a = resonant_ionisation_exponent(t, &p);
            assert!((s - a).abs() / a < 1e-8, "t={t}: {s} vs {a}");
        }
        assert!((resonant_ionisation_exponent(1e-12, &p) / 1e-12 - 3.0).abs() < 1e-6);
    }

    #[test]
    fn mean_counts_examples() {
        let p = nir();
        for v in ModelVariant::ALL {
            assert_eq!(mean_counts(0.0, &p, v), p.c0);
        }
        let c = mean_counts(0.06, &p, ModelVariant::NoRecap);
        assert!((c / p.c0 - 0.5 * (-0.06f64).exp()).abs() < 1e-12);
        assert!((c / p.c0 - 0.4706).abs() < 1e-3);
        let t = -p.gamma / p.gamma_d;
        assert!((mean_counts(t, &p, ModelVariant::DiffOnly) - 0.5 * p.c0).abs() < 1e-12);
    }

    #[test]
    fn variant_table() {
        let p = DynamicsParams {
            gamma_r: 2.0,
            ..nir()
        };
        let t = 0.2;
        let d = 1.0 / (1.0 + p.gamma_d * t / p.gamma);
        let fi = (-p.gamma_i * t).exp();
        let br = (-p.gamma_r * t).exp();
        let cases = [
            (ModelVariant::Full, d * fi, d * br),
            (ModelVariant::NoRecap, d * fi, d),
            (ModelVariant::DiffOnly, d, d),
            (ModelVariant::NoDiff, fi, br),
            (ModelVariant::IonOnly, fi, 1.0),
        ];
        for (v, fwd, bwd) in cases {
            assert!((mean_counts(t, &p, v) / p.c0 - fwd).abs() < 1e-14, "{v}");
            assert!((mean_counts(-t, &p, v) / p.c0 - bwd).abs() < 1e-14, "{v}");
        }
        let res = mean_counts(t, &p, ModelVariant::FullResIon) / p.c0;
        assert!((res - d * (-resonant_ionisation_exponent(t, &p)).exp()).abs() < 1e-14);
        assert!((mean_counts(-t, &p, ModelVariant::FullResIon) / p.c0 - d * br).abs() < 1e-14);
        let alt = mean_counts_with(t, &p, ModelVariant::FullResIon, ResIonExponent::RateTimesT);
        assert!((alt / p.c0 - d * (-effective_ionisation_rate(t, &p) * t).exp()).abs() < 1e-14);
    }

    #[test]
    fn variant_reductions() {
        let base = DynamicsParams {
            gamma_r: 0.7,
            ..nir()
        };
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        for i in 0..100 {
            let t = -1.0 + 2.0 * i as f64 / 99.0;
            let no_r = DynamicsParams { gamma_r: 0.0, ..base };
            assert!(rel(
                mean_counts(t, &no_r, ModelVariant::Full),
                mean_counts(t, &base, ModelVariant::NoRecap)
            ));
            let no_ir = DynamicsParams {
                gamma_r: 0.0,
                gamma_i: 0.0,
                ..base
            };
            assert!(rel(
                mean_counts(t, &no_ir, ModelVariant::Full),
                mean_counts(t, &base, ModelVariant::DiffOnly)
            ));
            let no_d = DynamicsParams { gamma_d: 0.0, ..base };
            assert!(rel(
                mean_counts(t, &no_d, ModelVariant::Full),
                mean_counts(t, &base, ModelVariant::NoDiff)
            ));
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        assert!(matches!("lorentz".parse::<ModelVariant>(), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn initial_density_reduces_to_sharp_start() {
        let p = nir();
        let df = 1e3;
        let initial = [(0.0, 1.0 / df)];
        for &t in &[-0.3, 0.0, 0.05, 0.5] {
            let a = mean_counts_from_initial(t, &p, ModelVariant::NoRecap, &initial, df);
            let b = mean_counts(t, &p, ModelVariant::NoRecap);
            assert!((a - b).abs() < 1e-12 * b);
        }
    }

    proptest! {
        #[test]
        fn diffusion_factor_even(t in 0.0f64..2.0, gd in 0.0f64..5e9, gamma in 1e6f64..1e8) {
            let p = DynamicsParams { c0: 1.0, gamma, gamma_d: gd, gamma_i: 0.0, gamma_r: 0.0, gamma_i0: 0.0 };
            for v in ModelVariant::ALL {
                let a = mean_counts(t, &p, v);
                let b = mean_counts(-t, &p, v);
                prop_assert!((a - b).abs() <= 1e-15);
            }
        }

        #[test]
        fn non_increasing_in_abs_t(
            t1 in 0.0f64..1.0, dt in 0.0f64..1.0,
            gd in 0.0f64..5e9, gi in 0.0f64..5.0, gr in 0.0f64..5.0, gi0 in 0.0f64..5.0,
        ) {
            let p = DynamicsParams { c0: 10.0, gamma: 36e6, gamma_d: gd, gamma_i: gi, gamma_r: gr, gamma_i0: gi0 };
            for v in ModelVariant::ALL {
                prop_assert!(mean_counts(t1 + dt, &p, v) <= mean_counts(t1, &p, v) * (1.0 + 1e-14));
                prop_assert!(mean_counts(-t1 - dt, &p, v) <= mean_counts(-t1, &p, v) * (1.0 + 1e-14));
            }
        }

        #[test]
        fn effective_rate_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let p = DynamicsParams { c0: 1.0, gamma: 36e6, gamma_d: 0.6e9, gamma_i: 0.0, gamma_r: 0.0, gamma_i0: 3.0 };
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(effective_ionisation_rate(hi, &p) <= effective_ionisation_rate(lo, &p) + 1e-15);
        }
    }
}
