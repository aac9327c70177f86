//! Threshold-conditioned spectral posterior and the probe signal it implies.
//!
//! Passing a check with at least `T` counts turns a flat prior over the
//! emitter frequency into `P(f | m ≥ T) ∝ P(Pois(λ(f − f1)) ≥ T)`. The mean
//! probe counts at `f2` are that density convolved with the line.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::poisson_tail;
use crate::spectral::SpectralResponse;

pub const DEFAULT_GRID_POINTS: usize = 2048;
/// Response at the grid edges, relative to its maximum on the grid, above
/// which the grid is considered too narrow.
pub const EDGE_RESPONSE_LIMIT: f64 = 1e-3;
/// Largest tolerated estimate of posterior mass lost beyond the grid.
pub const TRUNCATION_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub start: f64,
    pub stop: f64,
    pub n_points: usize,
}

impl FrequencyGrid {
    pub fn new(start: f64, stop: f64, n_points: usize) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite()) || stop <= start {
            return Err(Error::InvalidParameter(format!(
                "grid must be strictly increasing, got [{start}, {stop}]"
            )));
        }
        if n_points < 3 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 3 points, got {n_points}"
            )));
        }
        Ok(Self {
            start,
            stop,
            n_points,
        })
    }

    /// Symmetric grid around `center`.
    pub fn centered(center: f64, half_span: f64, n_points: usize) -> Result<Self> {
        Self::new(center - half_span, center + half_span, n_points)
    }

    /// Default grid for a response probed at `f1`.
    pub fn for_response(response: &SpectralResponse, f1: f64) -> Result<Self> {
        Self::centered(f1, response.support_half_span(), DEFAULT_GRID_POINTS)
    }

    /// Default grid widened (at constant resolution) until both the response
    /// edge check and the truncation check pass for threshold `t`.
    pub fn adequate_for(response: &SpectralResponse, f1: f64, t: u32) -> Result<Self> {
        let mut grid = Self::for_response(response, f1)?;
        for _ in 0..12 {
            let post = match spectral_posterior(response, f1, t.max(1), &grid) {
                Err(Error::GridTooNarrow { .. }) => None,
                other => Some(other?),
            };
            if let Some(p) = post {
                if p.truncation_estimate(f1) <= TRUNCATION_LIMIT {
                    return Ok(grid);
                }
            }
            grid = Self::centered(f1, grid.span(), 2 * grid.n_points - 1)?;
        }
        Err(Error::GridTooNarrow {
            reason: "could not find an adequate grid".into(),
            suggested_span_hz: grid.span(),
        })
    }

    pub fn step(&self) -> f64 {
        (self.stop - self.start) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.stop
        } else {
            self.start + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    pub fn span(&self) -> f64 {
        self.stop - self.start
    }
}

/// Trapezoid weights on a uniform grid.
fn trapz(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    let inner: f64 = values.iter().sum();
    step * (inner - 0.5 * (values[0] + values[n - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    /// Improper flat prior, normalised on the grid.
    #[default]
    Flat,
    Gaussian { center: f64, fwhm: f64 },
}

impl Prior {
    fn weight(&self, f: f64) -> f64 {
        match *self {
            Prior::Flat => 1.0,
            Prior::Gaussian { center, fwhm } => {
                let sigma = fwhm / (8.0 * std::f64::consts::LN_2).sqrt();
                let z = (f - center) / sigma;
                (-0.5 * z * z).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Posterior {
    pub grid: FrequencyGrid,
    pub density: Vec<f64>,
    pub threshold: u32,
    /// Trapezoid integral of the unnormalised density.
    pub normalization: f64,
}

impl Posterior {
    pub fn integral(&self) -> f64 {
        trapz(&self.density, self.grid.step())
    }

    /// Mass beyond the grid edges. Far from the line `λ ∝ f⁻²` and the pass
    /// probability behaves as `λ^T`, so each tail integrates to
    /// `density_edge · distance / (2T − 1)`.
    pub fn truncation_estimate(&self, center: f64) -> f64 {
        let n = self.density.len();
        let k = (2 * self.threshold.max(1) - 1) as f64;
        (self.density[0] * (center - self.grid.start).abs()
            + self.density[n - 1] * (self.grid.stop - center).abs())
            / k
    }
}

/// `P(m ≥ T)` for Poisson counts of mean `lambda`.
pub fn pass_probability(lambda: f64, t: u32) -> f64 {
    poisson_tail(lambda, t)
}

pub fn spectral_posterior(
    response: &SpectralResponse,
    f1: f64,
    t: u32,
    grid: &FrequencyGrid,
) -> Result<Posterior> {
    spectral_posterior_with_prior(response, f1, t, grid, &Prior::Flat)
}

pub fn spectral_posterior_with_prior(
    response: &SpectralResponse,
    f1: f64,
    t: u32,
    grid: &FrequencyGrid,
    prior: &Prior,
) -> Result<Posterior> {
    if t == 0 && matches!(prior, Prior::Flat) {
        return Err(Error::ImproperPosterior);
    }
    let lambdas: Vec<f64> = grid.points().into_iter().map(|f| response.eval(f - f1)).collect();
    let lam_max = lambdas.iter().cloned().fold(0.0, f64::max);
    let n = lambdas.len();
    let edge = lambdas[0].max(lambdas[n - 1]) / lam_max;
    if lam_max > 0.0 && edge > EDGE_RESPONSE_LIMIT {
        // Lorentzian-like tails fall as 1/f², so the span has to grow with
        // the square root of the excess.
        let suggested = grid.span() * (edge / EDGE_RESPONSE_LIMIT).sqrt() * 1.1;
        return Err(Error::GridTooNarrow {
            reason: format!("response at the grid edge is {edge:.2e} of its maximum"),
            suggested_span_hz: suggested,
        });
    }
    let raw: Vec<f64> = grid
        .points()
        .into_iter()
        .zip(&lambdas)
        .map(|(f, &lam)| prior.weight(f) * pass_probability(lam, t))
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::DegenerateModel(format!(
            "no frequency on the grid passes threshold {t}"
        )));
    }
    let norm = trapz(&raw, grid.step());
    let density = raw.into_iter().map(|v| v / norm).collect();
    Ok(Posterior {
        grid: *grid,
        density,
        threshold: t,
        normalization: norm,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalCurve {
    /// Probe detuning `f2 − f1`, Hz.
    pub offsets: Vec<f64>,
    pub values: Vec<f64>,
}

/// Mean probe counts `C(f2) = ∫ P(f | m ≥ T) λ(f − f2) df`, on the grid's own
/// points expressed as offsets from `f1`.
pub fn probe_signal(
    response: &SpectralResponse,
    f1: f64,
    t: u32,
    grid: &FrequencyGrid,
) -> Result<SignalCurve> {
    let offsets: Vec<f64> = grid.points().into_iter().map(|f| f - f1).collect();
    probe_signal_at(response, f1, t, grid, &offsets)
}

pub fn probe_signal_at(
    response: &SpectralResponse,
    f1: f64,
    t: u32,
    grid: &FrequencyGrid,
    offsets: &[f64],
) -> Result<SignalCurve> {
    let post = spectral_posterior(response, f1, t, grid)?;
    probe_signal_from_posterior(&post, response, f1, offsets)
}

pub fn probe_signal_from_posterior(
    post: &Posterior,
    response: &SpectralResponse,
    f1: f64,
    offsets: &[f64],
) -> Result<SignalCurve> {
    let trunc = post.truncation_estimate(f1);
    if trunc > TRUNCATION_LIMIT {
        let k = (2 * post.threshold.max(1) - 1) as f64;
        let suggested = post.grid.span() * (trunc / TRUNCATION_LIMIT).powf(1.0 / k) * 1.1;
        return Err(Error::GridTooNarrow {
            reason: format!("estimated posterior mass beyond the grid is {trunc:.2e}"),
            suggested_span_hz: suggested,
        });
    }
    let freqs = post.grid.points();
    let step = post.grid.step();
    let values = offsets
        .par_iter()
        .map(|&off| {
            let f2 = f1 + off;
            let vals: Vec<f64> = freqs
                .iter()
                .zip(&post.density)
                .map(|(&f, &d)| d * response.eval(f - f2))
                .collect();
            trapz(&vals, step)
        })
        .collect();
    Ok(SignalCurve {
        offsets: offsets.to_vec(),
        values,
    })
}

/// Probe signals for several thresholds sharing one grid, without the grid
/// adequacy checks. The response matrix is evaluated once and reused for
/// every threshold, which keeps repeated model evaluations (fits) cheap.
pub fn probe_signals_multi(
    response: &SpectralResponse,
    f1: f64,
    thresholds: &[u32],
    grid: &FrequencyGrid,
    offsets: &[f64],
) -> Vec<Vec<f64>> {
    let freqs = grid.points();
    let step = grid.step();
    let lambdas: Vec<f64> = freqs.iter().map(|&f| response.eval(f - f1)).collect();
    let kernel: Vec<Vec<f64>> = offsets
        .par_iter()
        .map(|&off| freqs.iter().map(|&f| response.eval(f - f1 - off)).collect())
        .collect();
    thresholds
        .par_iter()
        .map(|&t| {
            let raw: Vec<f64> = lambdas.iter().map(|&l| pass_probability(l, t)).collect();
            let norm = trapz(&raw, step);
            kernel
                .iter()
                .map(|row| {
                    if norm <= 0.0 {
                        return 0.0;
                    }
                    let prod: Vec<f64> = row.iter().zip(&raw).map(|(a, b)| a * b).collect();
                    trapz(&prod, step) / norm
                })
                .collect()
        })
        .collect()
}

/// Total width of all regions where `y` exceeds half its maximum, with linear
/// interpolation at each crossing. `None` if a region reaches the boundary
/// while other points lie below half maximum.
pub fn super_half_max_width(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = y.len();
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let half = 0.5 * max;
    if y.iter().all(|&v| v > half) || y.iter().all(|&v| v == max) {
        return Some(x[n - 1] - x[0]);
    }
    if y[0] > half || y[n - 1] > half {
        return None;
    }
    let cross = |i: usize| {
        // Crossing between i and i+1.
        let t = (half - y[i]) / (y[i + 1] - y[i]);
        x[i] + t * (x[i + 1] - x[i])
    };
    let mut width = 0.0;
    let mut rise = None;
    for i in 0..n - 1 {
        let (a, b) = (y[i] > half, y[i + 1] > half);
        if !a && b {
            rise = Some(cross(i));
        } else if a && !b {
            width += cross(i) - rise.take().unwrap_or(x[0]);
        }
    }
    Some(width)
}

pub fn posterior_fwhm(p: &Posterior) -> Result<f64> {
    super_half_max_width(&p.grid.points(), &p.density).ok_or_else(|| Error::GridTooNarrow {
        reason: "half-maximum region touches the grid boundary".into(),
        suggested_span_hz: 2.0 * p.grid.span(),
    })
}
