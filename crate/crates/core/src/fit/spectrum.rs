//! Joint fits of probe spectra across thresholds, and single-peak fits.

use serde::{Deserialize, Serialize};

use super::lm::{least_squares, LmOptions, Param};
use super::FitResult;
use crate::bayes::{probe_signals_multi, FrequencyGrid};
use crate::error::{Error, Result};
use crate::protocol::Spectrum;
use crate::spectral::{LzsParams, SpectralResponse};
use crate::units::Frequency;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumModel {
    /// Free: `c0`, `gamma`, `center`.
    Lorentzian,
    /// Free: `stark_amplitude`, `rabi`, `t2`, `c0`, `offset`; fixed `drive`, `t1`.
    Lzs { drive: f64, t1: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct SpectrumFitOptions {
    pub initial: Vec<(String, f64)>,
    pub fixed: Vec<(String, f64)>,
    pub lm: LmOptions,
}

fn lookup(list: &[(String, f64)], name: &str) -> Option<f64> {
    list.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
}

/// One parameter set, all thresholds: the threshold dependence enters only
/// through the check posterior.
pub fn fit_spectrum_joint(curves: &[Spectrum], model: SpectrumModel, opts: &SpectrumFitOptions) -> Result<FitResult> {
    if curves.is_empty() {
        return Err(Error::EmptyInput("no spectra to fit".into()));
    }
    let x = curves[0].x();
    for c in curves {
        if c.threshold.is_none() {
            return Err(Error::InvalidParameter("every spectrum needs its threshold".into()));
        }
        let cx = c.x();
        if cx.len() != x.len() || cx.iter().zip(&x).any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0)) {
            return Err(Error::InvalidParameter("spectra are on incompatible frequency grids".into()));
        }
    }
    let thresholds: Vec<u32> = curves.iter().map(|c| c.threshold.unwrap_or(1)).collect();
    let t_min = *thresholds.iter().min().unwrap_or(&1);
    let y: Vec<Vec<f64>> = curves.iter().map(|c| c.means()).collect();
    let s: Vec<Vec<f64>> = curves.iter().map(|c| c.sems()).collect();
    let peak = y.iter().flatten().cloned().fold(0.0, f64::max).max(1e-6);
    let span = x.last().unwrap() - x[0];

    let (names, defaults): (Vec<&str>, Vec<f64>) = match model {
        SpectrumModel::Lorentzian => {
            // Centre of mass and second moment of the highest-threshold curve.
            let yc = &y[thresholds.iter().enumerate().max_by_key(|(_, t)| **t).unwrap().0];
            let w: f64 = yc.iter().map(|v| v.max(0.0)).sum::<f64>().max(1e-12);
            let c = x.iter().zip(yc).map(|(a, b)| a * b.max(0.0)).sum::<f64>() / w;
            let var = x.iter().zip(yc).map(|(a, b)| (a - c).powi(2) * b.max(0.0)).sum::<f64>() / w;
            (
                vec!["c0", "gamma", "center"],
                vec![peak * 1.2, (var.sqrt()).clamp(span / 200.0, span / 2.0), c],
            )
        }
        SpectrumModel::Lzs { drive, t1 } => (
            vec!["stark_amplitude", "rabi", "t2", "c0", "offset"],
            vec![2.0 * drive, 0.4 * drive, 1.7 * t1, 1.5 * peak, 0.0],
        ),
    };
    let params: Vec<Param> = names
        .iter()
        .zip(&defaults)
        .map(|(&n, &d)| {
            let start = lookup(&opts.initial, n).unwrap_or(d);
            let scale = match n {
                "center" | "offset" => span.max(1.0) / 100.0,
                _ => start.abs().max(1e-12),
            };
            let scale = if n == "offset" { peak / 100.0 } else { scale };
            let p = match (n, model) {
                ("center" | "offset", _) => Param::free(n, start, scale),
                // Physical coherence times stop at the lifetime limit.
                ("t2", SpectrumModel::Lzs { t1, .. }) => Param::bounded(n, start, 0.0, 2.0 * t1),
                _ => Param::non_negative(n, start, scale),
            };
            match lookup(&opts.fixed, n) {
                Some(v) => Param { value: v, ..p }.fixed(),
                None => p,
            }
        })
        .collect();

    let build = |p: &[f64]| -> Result<(SpectralResponse, f64, f64)> {
        match model {
            SpectrumModel::Lorentzian => Ok((
                SpectralResponse::lorentzian(p[0], Frequency(p[1].max(1.0)))?,
                p[2],
                0.0,
            )),
            SpectrumModel::Lzs { drive, t1 } => {
                let lp = LzsParams {
                    c0: p[3],
                    rabi: p[1],
                    stark_amplitude: p[0],
                    drive,
                    t1,
                    t2: p[2],
                };
                Ok((SpectralResponse::Lzs(crate::spectral::LzsSpectrum::with_default_k_max(lp)), 0.0, p[4]))
            }
        }
    };
    // One grid for the whole fit, sized on the starting point with margin, so
    // the objective stays smooth.
    let start: Vec<f64> = params.iter().map(|p| p.value).collect();
    let (r0, c0, _) = build(&start)?;
    let g0 = FrequencyGrid::adequate_for(&r0, c0, t_min)?;
    let grid = FrequencyGrid::centered(c0, g0.span(), 2 * g0.n_points - 1)?;
    let grid = FrequencyGrid::new(
        grid.start.min(x[0] - 0.5 * span),
        grid.stop.max(x[x.len() - 1] + 0.5 * span),
        grid.n_points,
    )?;

    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        let (r, center, offset) = build(p)?;
        let offs: Vec<f64> = x.iter().map(|v| v - center).collect();
        let model = probe_signals_multi(&r, center, &thresholds, &grid, &offs);
        let mut out = Vec::with_capacity(x.len() * curves.len());
        for k in 0..curves.len() {
            for i in 0..x.len() {
                out.push((model[k][i] + offset - y[k][i]) / s[k][i]);
            }
        }
        Ok(out)
    };
    let out = least_squares(&params, residuals, &opts.lm)?;
    let name = match model {
        SpectrumModel::Lorentzian => "lorentzian",
        SpectrumModel::Lzs { .. } => "lzs",
    };
    let mut res = FitResult::from_outcome(name, &params, &out);
    if let SpectrumModel::Lzs { drive, t1 } = model {
        res.fixed.push(("drive".into(), drive));
        res.fixed.push(("t1".into(), t1));
    }
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakShape {
    Gaussian,
    Lorentzian,
}

/// Single peak plus constant offset. Free: `amplitude`, `center`, `fwhm`, `offset`.
pub fn fit_peak(x: &[f64], y: &[f64], sigma: &[f64], shape: PeakShape) -> Result<FitResult> {
    if x.len() != y.len() || x.len() != sigma.len() {
        return Err(Error::InvalidParameter("x, y and sigma differ in length".into()));
    }
    if x.len() < 6 {
        return Err(Error::EmptyInput("a peak fit needs at least six points".into()));
    }
    let base = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let (imax, ymax) = y
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    let amp = (ymax - base).max(1e-12);
    let width = crate::bayes::super_half_max_width(x, &y.iter().map(|v| v - base).collect::<Vec<_>>())
        .filter(|w| *w > 0.0)
        .unwrap_or((x[x.len() - 1] - x[0]) / 4.0);
    let params = [
        Param::non_negative("amplitude", amp, amp),
        Param::free("center", x[imax], width),
        Param::non_negative("fwhm", width, width),
        Param::free("offset", base, amp),
    ];
    let f = |p: &[f64], t: f64| -> f64 {
        let z = t - p[1];
        let core = match shape {
            PeakShape::Gaussian => {
                let s = crate::sim::fwhm_to_sigma(p[2]);
                (-0.5 * (z / s).powi(2)).exp()
            }
            PeakShape::Lorentzian => crate::spectral::lorentzian_shape(z, p[2]),
        };
        p[0] * core + p[3]
    };
    let out = least_squares(
        &params,
        |p| Ok(x.iter().zip(y).zip(sigma).map(|((t, v), s)| (f(p, *t) - v) / s).collect()),
        &LmOptions::default(),
    )?;
    let name = match shape {
        PeakShape::Gaussian => "gaussian",
        PeakShape::Lorentzian => "lorentzian_peak",
    };
    Ok(FitResult::from_outcome(name, &params, &out))
}
