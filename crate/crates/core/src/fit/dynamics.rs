//! Fits of the mean-counts dynamics model to forward/backward datasets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{least_squares, LmOptions, Param};
use super::FitResult;
use crate::dynamics::{mean_counts_with, DynamicsParams, ModelVariant, ResIonExponent};
use crate::error::{Error, Result};
use crate::protocol::{post_select_dynamics, ForwardBackwardDataset, RepetitionRecord};

#[derive(Debug, Clone, Default)]
pub struct DynamicsFitOptions {
    /// Starting values overriding the data-driven guesses.
    pub initial: Vec<(String, f64)>,
    pub fixed: Vec<(String, f64)>,
    pub lm: LmOptions,
    pub exponent: ResIonExponent,
}

/// Data-driven starting values: C0 from the points nearest `t = 0`, `γd` from
/// the half-decay time, `γi` from the forward/backward ratio at long delays.
pub fn initial_guesses(data: &ForwardBackwardDataset, gamma: f64) -> Vec<(String, f64)> {
    let mut pts = data.points.clone();
    pts.sort_by(|a, b| a.x.abs().total_cmp(&b.x.abs()));
    let c0 = if pts.is_empty() {
        1.0
    } else {
        let m = pts.len().min(2);
        (pts[..m].iter().map(|p| p.mean).sum::<f64>() / m as f64).max(1e-3)
    };
    let t_max = pts.last().map(|p| p.x.abs()).unwrap_or(1.0).max(1e-12);

    // Diffusion from the branch least affected by charge dynamics.
    let branch: Vec<_> = if data.has_backward() {
        pts.iter().filter(|p| p.x < 0.0).collect()
    } else {
        pts.iter().collect()
    };
    let gamma_d = branch
        .iter()
        .find(|p| p.mean < 0.5 * c0)
        .map(|p| gamma / p.x.abs())
        .or_else(|| {
            branch.last().map(|p| {
                let ratio = (c0 / p.mean.max(1e-9) - 1.0).max(0.05);
                gamma * ratio / p.x.abs().max(1e-12)
            })
        })
        .unwrap_or(gamma / t_max);

    // Ionisation from the forward/backward ratio at the longest mirrored delay.
    let gamma_i = pts
        .iter()
        .rev()
        .filter(|p| p.x > 0.0)
        .find_map(|f| {
            pts.iter()
                .find(|b| b.x == -f.x)
                .map(|b| -(f.mean.max(1e-9) / b.mean.max(1e-9)).ln() / f.x)
        })
        .or_else(|| {
            pts.iter()
                .rev()
                .find(|p| p.x > 0.0)
                .map(|p| -(p.mean.max(1e-9) / c0).ln() / p.x)
        })
        .unwrap_or(0.0)
        .max(0.05 / t_max);

    vec![
        ("c0".into(), c0),
        ("gamma_d".into(), gamma_d.max(1e-3 * gamma / t_max)),
        ("gamma_i".into(), gamma_i),
        ("gamma_i0".into(), 2.0 * gamma_i),
        ("gamma_r".into(), 0.1 / t_max),
    ]
}

fn lookup(list: &[(String, f64)], name: &str) -> Option<f64> {
    list.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
}

pub fn fit_dynamics(
    data: &ForwardBackwardDataset,
    variant: ModelVariant,
    gamma: f64,
    opts: &DynamicsFitOptions,
) -> Result<FitResult> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter("Gamma must be positive".into()));
    }
    let guesses = initial_guesses(data, gamma);
    let is_fixed = |n: &str| lookup(&opts.fixed, n).is_some();
    if variant.has_recapture() && !data.has_backward() && !is_fixed("gamma_r") {
        return Err(Error::DegenerateModel(format!(
            "{variant} fits a recapture rate but the data has no backward branch"
        )));
    }
    if (variant.has_ionisation() || variant.has_resonant_ionisation())
        && !data.has_forward()
        && !is_fixed("gamma_i")
        && !is_fixed("gamma_i0")
    {
        return Err(Error::DegenerateModel(format!(
            "{variant} fits an ionisation rate but the data has no forward branch"
        )));
    }

    let mut names = vec!["c0"];
    names.extend(variant.rate_names());
    let params: Vec<Param> = names
        .iter()
        .map(|&n| {
            let start = lookup(&opts.initial, n)
                .or_else(|| lookup(&guesses, n))
                .unwrap_or(1.0);
            let scale = lookup(&guesses, n).unwrap_or(start).abs().max(1e-12);
            match lookup(&opts.fixed, n) {
                Some(v) => Param::non_negative(n, v, scale).fixed(),
                None => Param::non_negative(n, start, scale),
            }
        })
        .collect();
    let n_free = params.iter().filter(|p| !p.fixed).count();
    if data.points.len() < n_free + 2 {
        return Err(Error::DegenerateModel(format!(
            "{} points are too few for {n_free} free parameters",
            data.points.len()
        )));
    }

    let model = |p: &[f64], t: f64| {
        let mut dp = DynamicsParams {
            c0: p[0],
            gamma,
            gamma_d: 0.0,
            gamma_i: 0.0,
            gamma_r: 0.0,
            gamma_i0: 0.0,
        };
        for (name, v) in names.iter().zip(p).skip(1) {
            match *name {
                "gamma_d" => dp.gamma_d = *v,
                "gamma_i" => dp.gamma_i = *v,
                "gamma_r" => dp.gamma_r = *v,
                "gamma_i0" => dp.gamma_i0 = *v,
                _ => {}
            }
        }
        mean_counts_with(t, &dp, variant, opts.exponent)
    };
    let residuals = |p: &[f64]| -> Result<Vec<f64>> {
        Ok(data
            .points
            .iter()
            .map(|pt| (model(p, pt.x) - pt.mean) / pt.sem)
            .collect())
    };
    let out = least_squares(&params, residuals, &opts.lm)?;
    let mut res = FitResult::from_outcome(variant.name(), &params, &out);
    res.fixed.push(("gamma".into(), gamma));
    Ok(res)
}

/// Fits every variant, also starting each one from the solutions of the
/// variants it contains, and keeps the lowest χ² per variant. This makes a
/// larger model never fit worse than a nested one.
pub fn fit_dynamics_nested(
    data: &ForwardBackwardDataset,
    variants: &[ModelVariant],
    gamma: f64,
    opts: &DynamicsFitOptions,
) -> Vec<(ModelVariant, Result<FitResult>)> {
    const ORDER: [ModelVariant; 6] = [
        ModelVariant::DiffOnly,
        ModelVariant::IonOnly,
        ModelVariant::NoDiff,
        ModelVariant::NoRecap,
        ModelVariant::Full,
        ModelVariant::FullResIon,
    ];
    let guesses = initial_guesses(data, gamma);
    let mut done: Vec<(ModelVariant, FitResult)> = Vec::new();
    let mut out = Vec::new();
    for v in ORDER {
        let wanted = variants.contains(&v);
        let needed_later = ORDER
            .iter()
            .skip_while(|&&w| w != v)
            .skip(1)
            .any(|w| variants.contains(w));
        if !wanted && !needed_later {
            continue;
        }
        let mut starts = vec![opts.initial.clone()];
        let names = v.rate_names();
        for (_, prev) in &done {
            let mut s = opts.initial.clone();
            for (n, g) in &guesses {
                let val = prev.get(n).filter(|_| n == "c0" || names.contains(&n.as_str()));
                let v = match val {
                    Some(x) if prev.names.contains(n) => x,
                    _ => 0.01 * g,
                };
                s.retain(|(m, _)| m != n);
                s.push((n.clone(), v));
            }
            starts.push(s);
        }
        let mut best: Option<Result<FitResult>> = None;
        for s in starts {
            let o = DynamicsFitOptions {
                initial: s,
                ..opts.clone()
            };
            let r = fit_dynamics(data, v, gamma, &o);
            best = match (best, r) {
                (None, r) => Some(r),
                (Some(Ok(b)), Ok(r)) => Some(Ok(if r.chi2 < b.chi2 { r } else { b })),
                (Some(Err(_)), r) => Some(r),
                (Some(Ok(b)), Err(_)) => Some(Ok(b)),
            };
        }
        let best = best.expect("at least one start");
        if let Ok(b) = &best {
            done.push((v, b.clone()));
        }
        if wanted {
            out.push((v, best));
        }
    }
    // Report in the caller's order.
    variants
        .iter()
        .filter_map(|v| out.iter().position(|(w, _)| w == v).map(|i| out.swap_remove(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Half-width of the accepted band around the median, relative.
    pub band: f64,
    /// Absolute tolerance floor for rates near zero.
    pub abs_floor: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            band: 0.25,
            abs_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub threshold: u32,
    pub fits: Vec<(ModelVariant, Option<FitResult>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionAverage {
    pub variant: ModelVariant,
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSweepResult {
    pub entries: Vec<SweepEntry>,
    /// Longest threshold interval where every rate of the first variant stays
    /// inside the band around its median.
    pub region: Option<(u32, u32)>,
    pub averages: Vec<RegionAverage>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Longest run `[lo, hi]` of indices whose series all stay within the band.
pub fn convergence_region(series: &[Vec<Option<f64>>], opts: &SweepOptions) -> Option<(usize, usize)> {
    let n = series.first().map(|s| s.len()).unwrap_or(0);
    let mut best: Option<(usize, usize)> = None;
    for lo in 0..n {
        for hi in lo..n {
            if let Some((a, b)) = best {
                if hi - lo <= b - a {
                    continue;
                }
            }
            let ok = series.iter().all(|s| {
                let vals: Option<Vec<f64>> = s[lo..=hi].iter().copied().collect();
                let Some(mut vals) = vals else { return false };
                let med = median(&mut vals.clone());
                let tol = (opts.band * med.abs()).max(opts.abs_floor);
                vals.iter_mut().all(|x| (*x - med).abs() <= tol)
            });
            if ok {
                best = Some((lo, hi));
            }
        }
    }
    best
}

pub fn threshold_sweep(
    records: &[RepetitionRecord],
    delays: &[f64],
    variants: &[ModelVariant],
    thresholds: std::ops::RangeInclusive<u32>,
    gamma: f64,
    fit_opts: &DynamicsFitOptions,
    opts: &SweepOptions,
) -> Result<ThresholdSweepResult> {
    if variants.is_empty() {
        return Err(Error::EmptyInput("no model variants to fit".into()));
    }
    let ts: Vec<u32> = thresholds.collect();
    let entries: Vec<SweepEntry> = ts
        .par_iter()
        .map(|&t| {
            let data = post_select_dynamics(records, delays, t);
            let fits = fit_dynamics_nested(&data, variants, gamma, fit_opts)
                .into_iter()
                .map(|(v, r)| (v, r.ok().filter(|f| f.converged)))
                .collect();
            SweepEntry { threshold: t, fits }
        })
        .collect();

    let primary = variants[0];
    let rate_names = primary.rate_names();
    let series: Vec<Vec<Option<f64>>> = rate_names
        .iter()
        .map(|n| {
            entries
                .iter()
                .map(|e| e.fits.iter().find(|(v, _)| *v == primary).and_then(|(_, f)| f.as_ref()).and_then(|f| f.get(n)))
                .collect()
        })
        .collect();
    let region = convergence_region(&series, opts);
    let mut averages = Vec::new();
    if let Some((lo, hi)) = region {
        for v in variants {
            let mut names = vec!["c0"];
            names.extend(v.rate_names());
            for n in names {
                let vals: Vec<f64> = entries[lo..=hi]
                    .iter()
                    .filter_map(|e| e.fits.iter().find(|(w, _)| w == v).and_then(|(_, f)| f.as_ref()).and_then(|f| f.get(n)))
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let sd = if vals.len() > 1 {
                    (vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                averages.push(RegionAverage {
                    variant: *v,
                    name: n.to_string(),
                    mean: m,
                    std: sd,
                });
            }
        }
    }
    Ok(ThresholdSweepResult {
        region: region.map(|(a, b)| (ts[a], ts[b])),
        entries,
        averages,
    })
}
