//! Pulse sequences built from simulator blocks, and threshold post-selection.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_index, RngSeed};
use crate::sim::{
    simulate_block, Block, Charge, DetuningPrior, EmitterModel, EmitterState, Illumination,
    PerturbationSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    DiffusionAveragedPle,
    TwoLaserPle,
    CheckProbeDynamics,
    CheckProbeSpectroscopy,
    ScanningPle,
}

/// Runtime description of an experiment shared by all sequences.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: EmitterModel,
    pub prior: DetuningPrior,
    pub initial_bright_probability: f64,
    pub check_duration: f64,
    pub probe_duration: f64,
    /// Probe laser offset `f2 − f1` for the dynamics sequence.
    pub probe_offset: f64,
    pub perturbation: PerturbationSpec,
    /// Laser-induced dynamics during check and probe blocks.
    pub readout_perturbation: PerturbationSpec,
    pub repetitions: u64,
    pub seed: u64,
    pub n_substeps: Option<usize>,
}

impl Setup {
    pub fn new(model: EmitterModel, prior: DetuningPrior, seed: u64) -> Self {
        let d = model.reference_duration;
        Self {
            model,
            prior,
            initial_bright_probability: 1.0,
            check_duration: d,
            probe_duration: d,
            probe_offset: 0.0,
            perturbation: PerturbationSpec::DARK,
            readout_perturbation: PerturbationSpec::DARK,
            repetitions: 1000,
            seed,
            n_substeps: None,
        }
    }

    fn fresh_state<R: Rng + ?Sized>(&self, rng: &mut R) -> EmitterState {
        let detuning = self.prior.sample(rng);
        let charge = if rng.random::<f64>() < self.initial_bright_probability {
            Charge::Bright
        } else {
            Charge::Ionised
        };
        EmitterState { detuning, charge }
    }

    fn readout(&self, duration: f64, illumination: Illumination) -> Block {
        Block {
            duration,
            illumination,
            perturbation: self.readout_perturbation,
            n_substeps: self.n_substeps,
        }
    }

    fn rng(&self, point: usize, rep: u64) -> (RngSeed, rand_chacha::ChaCha8Rng) {
        let seed = RngSeed::new(self.seed, stream_index(point, rep));
        (seed, seed.rng())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub point: usize,
    pub rep_index: u64,
    /// Perturbation length (dynamics) or dark wait (spectroscopy), seconds.
    pub delay: f64,
    pub probe_offset: f64,
    pub check_counts: u64,
    pub probe_counts: u64,
    pub final_state: EmitterState,
    pub seed: RngSeed,
}

/// Runs `reps` repetitions for each point in parallel, ordered by point then
/// repetition regardless of scheduling.
fn run_points<F>(setup: &Setup, n_points: usize, f: F) -> Vec<RepetitionRecord>
where
    F: Fn(usize, u64) -> RepetitionRecord + Sync,
{
    let reps = setup.repetitions;
    (0..n_points as u64 * reps)
        .into_par_iter()
        .map(|k| f((k / reps) as usize, k % reps))
        .collect()
}

/// One aggregated measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub mean: f64,
    /// Poisson standard error of the mean, `√(max(Σ counts, 1))/n`.
    pub sem: f64,
    pub n_pass: u64,
    pub n_total: u64,
}

impl DataPoint {
    fn from_counts(x: f64, counts: impl Iterator<Item = u64>, n_total: u64) -> Option<Self> {
        let (mut sum, mut n) = (0u64, 0u64);
        for c in counts {
            sum += c;
            n += 1;
        }
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        Some(Self {
            x,
            mean: sum as f64 / nf,
            sem: (sum.max(1) as f64).sqrt() / nf,
            n_pass: n,
            n_total,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardBackwardDataset {
    pub threshold: u32,
    /// Signed delays: forward `t > 0`, backward `t < 0`. Points without any
    /// passing repetition are absent.
    pub points: Vec<DataPoint>,
}

impl ForwardBackwardDataset {
    pub fn delays(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn sems(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.sem).collect()
    }

    pub fn has_backward(&self) -> bool {
        self.points.iter().any(|p| p.x < 0.0)
    }

    pub fn has_forward(&self) -> bool {
        self.points.iter().any(|p| p.x > 0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub threshold: Option<u32>,
    pub points: Vec<DataPoint>,
}

impl Spectrum {
    pub fn x(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn sems(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.sem).collect()
    }
}

/// Check, perturbation of length `|t|`, probe. One record set serves both
/// the forward and the backward branch.
pub fn simulate_dynamics_records(setup: &Setup, magnitudes: &[f64]) -> Vec<RepetitionRecord> {
    run_points(setup, magnitudes.len(), |point, rep| {
        let (seed, mut rng) = setup.rng(point, rep);
        let delay = magnitudes[point];
        let s = setup.fresh_state(&mut rng);
        let check = setup.readout(setup.check_duration, Illumination::Single { offset: 0.0 });
        let (check_counts, s) = simulate_block(s, &check, &setup.model, &mut rng);
        let pert = Block {
            duration: delay,
            illumination: Illumination::Off,
            perturbation: setup.perturbation,
            n_substeps: setup.n_substeps,
        };
        let (_, s) = simulate_block(s, &pert, &setup.model, &mut rng);
        let probe = setup.readout(
            setup.probe_duration,
            Illumination::Single {
                offset: setup.probe_offset,
            },
        );
        let (probe_counts, s) = simulate_block(s, &probe, &setup.model, &mut rng);
        RepetitionRecord {
            point,
            rep_index: rep,
            delay,
            probe_offset: setup.probe_offset,
            check_counts,
            probe_counts,
            final_state: s,
            seed,
        }
    })
}

/// Distinct `|t|` in first-appearance order.
pub fn delay_magnitudes(delays: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for d in delays {
        let m = d.abs();
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out
}

/// Forward points keep repetitions with `check ≥ T` and average the probe;
/// backward points keep `probe ≥ T` and average the check.
pub fn post_select_dynamics(records: &[RepetitionRecord], delays: &[f64], t: u32) -> ForwardBackwardDataset {
    let t = t as u64;
    let points = delays
        .iter()
        .filter_map(|&d| {
            let m = d.abs();
            let group = records.iter().filter(move |r| r.delay == m);
            let n_total = group.clone().count() as u64;
            if d >= 0.0 {
                DataPoint::from_counts(
                    d,
                    group.filter(|r| r.check_counts >= t).map(|r| r.probe_counts),
                    n_total,
                )
            } else {
                DataPoint::from_counts(
                    d,
                    group.filter(|r| r.probe_counts >= t).map(|r| r.check_counts),
                    n_total,
                )
            }
        })
        .collect();
    ForwardBackwardDataset {
        threshold: t as u32,
        points,
    }
}

pub fn run_check_probe_dynamics(setup: &Setup, delays: &[f64], t: u32) -> ForwardBackwardDataset {
    let mags = delay_magnitudes(delays);
    let records = simulate_dynamics_records(setup, &mags);
    post_select_dynamics(&records, delays, t)
}

/// `n` delays log-spaced in `[lo, hi]`, mirrored to negative values.
pub fn log_spaced_delays(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let pos: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                lo
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect();
    let mut out: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    out.extend(pos);
    out
}

/// Mean counts with a fresh detuning every repetition, one laser at each `f1`.
pub fn run_diffusion_averaged_ple(setup: &Setup, f1_offsets: &[f64]) -> Spectrum {
    let recs = run_points(setup, f1_offsets.len(), |point, rep| {
        let (seed, mut rng) = setup.rng(point, rep);
        let s = setup.fresh_state(&mut rng);
        let b = setup.readout(
            setup.check_duration,
            Illumination::Single {
                offset: f1_offsets[point],
            },
        );
        let (c, s) = simulate_block(s, &b, &setup.model, &mut rng);
        unconditioned_record(point, rep, f1_offsets[point], c, s, seed)
    });
    unconditioned_spectrum(&recs, f1_offsets)
}

/// Two lasers at `f1` and `f1 + x` with a fresh detuning every repetition.
pub fn run_two_laser_ple(setup: &Setup, f2_minus_f1: &[f64]) -> Spectrum {
    let recs = run_points(setup, f2_minus_f1.len(), |point, rep| {
        let (seed, mut rng) = setup.rng(point, rep);
        let s = setup.fresh_state(&mut rng);
        let b = setup.readout(
            setup.check_duration,
            Illumination::TwoLaser {
                offset1: 0.0,
                offset2: f2_minus_f1[point],
            },
        );
        let (c, s) = simulate_block(s, &b, &setup.model, &mut rng);
        unconditioned_record(point, rep, f2_minus_f1[point], c, s, seed)
    });
    unconditioned_spectrum(&recs, f2_minus_f1)
}

fn unconditioned_record(
    point: usize,
    rep: u64,
    x: f64,
    counts: u64,
    s: EmitterState,
    seed: RngSeed,
) -> RepetitionRecord {
    RepetitionRecord {
        point,
        rep_index: rep,
        delay: 0.0,
        probe_offset: x,
        check_counts: counts,
        probe_counts: 0,
        final_state: s,
        seed,
    }
}

fn unconditioned_spectrum(recs: &[RepetitionRecord], xs: &[f64]) -> Spectrum {
    let points = xs
        .iter()
        .enumerate()
        .filter_map(|(i, &x)| {
            let group: Vec<u64> = recs.iter().filter(|r| r.point == i).map(|r| r.check_counts).collect();
            DataPoint::from_counts(x, group.iter().copied(), group.len() as u64)
        })
        .collect();
    Spectrum {
        threshold: None,
        points,
    }
}

/// Check at `f1`, optional dark wait, probe at `f1 + f2_offset`.
pub fn simulate_spectroscopy_records(setup: &Setup, f2_offsets: &[f64], wait: f64) -> Vec<RepetitionRecord> {
    run_points(setup, f2_offsets.len(), |point, rep| {
        let (seed, mut rng) = setup.rng(point, rep);
        let s = setup.fresh_state(&mut rng);
        let check = setup.readout(setup.check_duration, Illumination::Single { offset: 0.0 });
        let (check_counts, s) = simulate_block(s, &check, &setup.model, &mut rng);
        let (_, s) = simulate_block(s, &Block::dark(wait), &setup.model, &mut rng);
        let probe = setup.readout(
            setup.probe_duration,
            Illumination::Single {
                offset: f2_offsets[point],
            },
        );
        let (probe_counts, s) = simulate_block(s, &probe, &setup.model, &mut rng);
        RepetitionRecord {
            point,
            rep_index: rep,
            delay: wait,
            probe_offset: f2_offsets[point],
            check_counts,
            probe_counts,
            final_state: s,
            seed,
        }
    })
}

/// Mean probe counts of repetitions whose check passed `t`, per `f2`.
pub fn post_select_spectrum(records: &[RepetitionRecord], f2_offsets: &[f64], t: u32) -> Spectrum {
    let tt = t as u64;
    let points = f2_offsets
        .iter()
        .enumerate()
        .filter_map(|(i, &x)| {
            let group = records.iter().filter(move |r| r.point == i);
            let n_total = group.clone().count() as u64;
            DataPoint::from_counts(
                x,
                group.filter(|r| r.check_counts >= tt).map(|r| r.probe_counts),
                n_total,
            )
        })
        .collect();
    Spectrum {
        threshold: Some(t),
        points,
    }
}

pub fn run_check_probe_spectroscopy(
    setup: &Setup,
    f2_offsets: &[f64],
    thresholds: &[u32],
    wait: f64,
) -> Vec<Spectrum> {
    let records = simulate_spectroscopy_records(setup, f2_offsets, wait);
    thresholds
        .iter()
        .map(|&t| post_select_spectrum(&records, f2_offsets, t))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    /// Total laser-on time of one sweep, seconds.
    pub laser_on_per_scan: f64,
    pub n_scans: u64,
    /// Laser-induced diffusion rate while scanning, Hz/s.
    pub gamma_d: f64,
    /// Verify resonance with a check at `f1` before every sweep.
    pub check_threshold: Option<u32>,
    pub max_check_attempts: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    pub offsets: Vec<f64>,
    /// `n_scans × offsets.len()` counts, row-major.
    pub scans: Vec<Vec<u64>>,
    pub summed: Vec<u64>,
    /// Check attempts used before each sweep.
    pub check_attempts: Vec<u32>,
}

/// Repeated linescans; the detuning wanders during every laser-on step and
/// carries over between steps of one sweep.
pub fn run_scanning_ple(setup: &Setup, offsets: &[f64], scan: &ScanSettings) -> Result<ScanResult> {
    if offsets.is_empty() || scan.n_scans == 0 || !(scan.laser_on_per_scan > 0.0) {
        return Err(Error::InvalidParameter(
            "scanning needs offsets, at least one scan and positive laser-on time".into(),
        ));
    }
    let step = scan.laser_on_per_scan / offsets.len() as f64;
    let mut pert = setup.readout_perturbation;
    pert.gamma_d = scan.gamma_d;
    if scan.gamma_d > 0.0 && pert.kind == crate::sim::PerturbationKind::Dark {
        pert.kind = crate::sim::PerturbationKind::Nir;
    }
    let rows: Vec<(Vec<u64>, u32)> = (0..scan.n_scans)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngSeed::new(setup.seed, stream_index(0, k)).rng();
            let mut s = setup.fresh_state(&mut rng);
            let mut attempts = 0;
            if let Some(t) = scan.check_threshold {
                let check = setup.readout(setup.check_duration, Illumination::Single { offset: 0.0 });
                loop {
                    attempts += 1;
                    let (c, next) = simulate_block(s, &check, &setup.model, &mut rng);
                    s = next;
                    if c >= t as u64 || attempts >= scan.max_check_attempts {
                        break;
                    }
                    s = setup.fresh_state(&mut rng);
                }
            }
            let row = offsets
                .iter()
                .map(|&x| {
                    let b = Block {
                        duration: step,
                        illumination: Illumination::Single { offset: x },
                        perturbation: pert,
                        n_substeps: setup.n_substeps,
                    };
                    let (c, next) = simulate_block(s, &b, &setup.model, &mut rng);
                    s = next;
                    c
                })
                .collect();
            (row, attempts)
        })
        .collect();
    let mut summed = vec![0u64; offsets.len()];
    for (row, _) in &rows {
        for (acc, c) in summed.iter_mut().zip(row) {
            *acc += c;
        }
    }
    Ok(ScanResult {
        offsets: offsets.to_vec(),
        check_attempts: rows.iter().map(|r| r.1).collect(),
        scans: rows.into_iter().map(|r| r.0).collect(),
        summed,
    })
}
