//! Unit-carrying scalar types.
//!
//! Frequencies are ordinary frequencies in hertz, rates are events (or hertz of
//! linewidth growth) per second and durations are seconds. Angular frequency
//! only appears inside the Bloch-equation oracle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinary frequency (or detuning) in Hz.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frequency(pub f64);

impl Frequency {
    pub const ZERO: Frequency = Frequency(0.0);

    pub fn hz(v: f64) -> Self {
        Frequency(v)
    }

    pub fn mhz(v: f64) -> Self {
        Frequency(v * 1e6)
    }

    pub fn ghz(v: f64) -> Self {
        Frequency(v * 1e9)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn in_unit(self, unit: FrequencyUnit) -> f64 {
        self.0 / unit.scale()
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} Hz", self.0)
    }
}

/// Event rate in s⁻¹. The spectral diffusion rate uses the same type with
/// units of Hz of linewidth growth per second.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rate(pub f64);

impl Rate {
    pub const ZERO: Rate = Rate(0.0);

    pub fn per_second(v: f64) -> Self {
        Rate(v)
    }

    /// Diffusion rate given in GHz/s.
    pub fn ghz_per_second(v: f64) -> Self {
        Rate(v * 1e9)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_valid(self) -> bool {
        self.0.is_finite() && self.0 >= 0.0
    }
}

/// Time span in seconds. Signed delays use plain `f64`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Duration(pub f64);

impl Duration {
    pub const ZERO: Duration = Duration(0.0);

    pub fn seconds(v: f64) -> Self {
        Duration(v)
    }

    pub fn millis(v: f64) -> Self {
        Duration(v * 1e-3)
    }

    pub fn micros(v: f64) -> Self {
        Duration(v * 1e-6)
    }

    pub fn nanos(v: f64) -> Self {
        Duration(v * 1e-9)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_valid(self) -> bool {
        self.0.is_finite() && self.0 >= 0.0
    }
}

/// Minimum number of detected counts for a block to pass the check.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CountsThreshold(pub u32);

impl CountsThreshold {
    pub fn value(self) -> u32 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrequencyUnit {
    Hz,
    MHz,
    GHz,
}

impl FrequencyUnit {
    pub fn scale(self) -> f64 {
        match self {
            FrequencyUnit::Hz => 1.0,
            FrequencyUnit::MHz => 1e6,
            FrequencyUnit::GHz => 1e9,
        }
    }
}

impl FromStr for FrequencyUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Hz" | "hz" | "HZ" => Ok(FrequencyUnit::Hz),
            "MHz" | "mhz" | "MHZ" => Ok(FrequencyUnit::MHz),
            "GHz" | "ghz" | "GHZ" => Ok(FrequencyUnit::GHz),
            other => Err(Error::UnknownUnit(other.to_string())),
        }
    }
}

/// Scales `value` given in `unit` to hertz.
pub fn convert_frequency(value: f64, unit: FrequencyUnit) -> Result<Frequency> {
    if !value.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "frequency must be finite, got {value}"
        )));
    }
    Ok(Frequency(value * unit.scale()))
}

/// Parses strings such as `"36 MHz"`, `"2.4GHz"` or `"1e6"` (bare numbers are Hz).
pub fn parse_frequency(s: &str) -> Result<Frequency> {
    let s = s.trim();
    let split = s
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse frequency `{s}`")))?;
    let unit = if unit.trim().is_empty() {
        FrequencyUnit::Hz
    } else {
        unit.parse()?
    };
    convert_frequency(value, unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn converts_paper_values() {
        assert_eq!(convert_frequency(36.0, FrequencyUnit::MHz).unwrap().0, 3.6e7);
        assert_eq!(convert_frequency(0.0, FrequencyUnit::GHz).unwrap().0, 0.0);
        assert_eq!(convert_frequency(2.4, FrequencyUnit::GHz).unwrap().0, 2.4e9);
    }

    #[test]
    fn rejects_unknown_unit_and_non_finite() {
        assert!(matches!("THz".parse::<FrequencyUnit>(), Err(Error::UnknownUnit(_))));
        assert!(convert_frequency(f64::NAN, FrequencyUnit::Hz).is_err());
    }

    #[test]
    fn parses_suffixed_strings() {
        assert_eq!(parse_frequency("36 MHz").unwrap().0, 3.6e7);
        assert_eq!(parse_frequency("2.4GHz").unwrap().0, 2.4e9);
        assert_eq!(parse_frequency("1e6").unwrap().0, 1e6);
        assert_eq!(parse_frequency("1.5e-3 GHz").unwrap().0, 1.5e6);
        assert!(parse_frequency("12 furlongs").is_err());
    }

    proptest! {
        #[test]
        fn ghz_round_trip_within_one_ulp(x in -1e12f64..1e12) {
            let f = convert_frequency(x, FrequencyUnit::Hz).unwrap();
            let back = convert_frequency(f.in_unit(FrequencyUnit::GHz), FrequencyUnit::GHz).unwrap().0;
            let ulp = f64::EPSILON * x.abs().max(f64::MIN_POSITIVE);
            prop_assert!((back - x).abs() <= ulp);
        }
    }
}
