use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};

use checkprobe_core::bayes::{probe_signal_at, spectral_posterior, FrequencyGrid};
use checkprobe_core::dynamics::{mean_counts, spectral_propagator, DynamicsParams, ModelVariant, Propagator};
use checkprobe_core::io::{curve_table, numeric_table, posterior_table, Table};
use checkprobe_core::protocol::log_spaced_delays;
use checkprobe_core::spectral::{LzsParams, LzsSpectrum, SpectralResponse};
use checkprobe_core::units::Frequency;

use crate::error::{write_output, CliError};
use crate::simulate::load_config;

const MHZ: f64 = 1e6;

#[derive(Subcommand)]
pub enum ModelCommand {
    /// Mean counts against signed delay.
    EvalDynamics(DynamicsArgs),
    /// Emitter-frequency posterior after a passed check.
    Posterior(PosteriorArgs),
    /// Mean probe counts against probe detuning.
    ProbeSignal(PosteriorArgs),
    /// LZS spectrum, optionally swept over the Stark amplitude.
    LzsSpectrum(LzsArgs),
    /// Diffusion propagator density at one delay.
    Propagator(PropagatorArgs),
}

#[derive(Args)]
pub struct OutArg {
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DynamicsArgs {
    #[arg(long, default_value = "full")]
    pub variant: String,
    #[arg(long, default_value_t = 25.0)]
    pub c0: f64,
    #[arg(long, default_value_t = 36.0)]
    pub gamma_mhz: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma_d_ghz_per_s: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma_i_per_s: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma_i0_per_s: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma_r_per_s: f64,
    /// Evaluate at a single signed delay (s) instead of a grid.
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub t_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 50)]
    pub points: usize,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum ResponseKind {
    Lorentzian,
    Lzs,
}

#[derive(Args)]
pub struct ResponseArgs {
    /// Take the emitter response from an experiment config instead of flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lorentzian")]
    pub response: ResponseKind,
    #[arg(long, default_value_t = 6.5)]
    pub c0: f64,
    #[arg(long, default_value_t = 33.0)]
    pub gamma_mhz: f64,
    #[command(flatten)]
    pub lzs: LzsShape,
}

#[derive(Args)]
pub struct LzsShape {
    #[arg(long, default_value_t = 118.0)]
    pub stark_amplitude_mhz: f64,
    #[arg(long, default_value_t = 26.0)]
    pub rabi_mhz: f64,
    #[arg(long, default_value_t = 70.0)]
    pub drive_mhz: f64,
    #[arg(long, default_value_t = 8.7)]
    pub t1_ns: f64,
    #[arg(long, default_value_t = 16.4)]
    pub t2_ns: f64,
}

impl LzsShape {
    fn params(&self, c0: f64, amplitude_mhz: f64) -> LzsParams {
        LzsParams {
            c0,
            rabi: self.rabi_mhz * MHZ,
            stark_amplitude: amplitude_mhz * MHZ,
            drive: self.drive_mhz * MHZ,
            t1: self.t1_ns * 1e-9,
            t2: self.t2_ns * 1e-9,
        }
    }
}

impl ResponseArgs {
    fn build(&self) -> Result<SpectralResponse, CliError> {
        if let Some(path) = &self.config {
            return Ok(load_config(path, None)?.emitter.response.build()?);
        }
        Ok(match self.response {
            ResponseKind::Lorentzian => SpectralResponse::lorentzian(self.c0, Frequency::mhz(self.gamma_mhz))?,
            ResponseKind::Lzs => SpectralResponse::lzs(self.lzs.params(self.c0, self.lzs.stark_amplitude_mhz))?,
        })
    }
}

#[derive(Args)]
pub struct PosteriorArgs {
    #[command(flatten)]
    pub response: ResponseArgs,
    /// Check threshold, counts.
    #[arg(long = "T", alias = "threshold")]
    pub threshold: u32,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub f1_mhz: f64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args)]
pub struct LzsArgs {
    #[arg(long, default_value_t = 1.0)]
    pub c0: f64,
    #[command(flatten)]
    pub shape: LzsShape,
    /// Stark amplitude sweep `start:stop:n` in MHz; overrides the single amplitude.
    #[arg(long)]
    pub amplitude_sweep: Option<String>,
    /// Frequency grid `start:stop:n` in MHz.
    #[arg(long, default_value = "-300:300:601", allow_hyphen_values = true)]
    pub f_range: String,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args)]
pub struct PropagatorArgs {
    #[arg(long)]
    pub t_s: f64,
    #[arg(long, default_value_t = 0.6)]
    pub gamma_d_ghz_per_s: f64,
    /// Frequency grid `start:stop:n` in MHz.
    #[arg(long, default_value = "-500:500:1001", allow_hyphen_values = true)]
    pub f_range: String,
    #[command(flatten)]
    pub out: OutArg,
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::usage(format!("expected start:stop:n, got '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    Ok((0..n)
        .map(|i| if n == 1 { a } else { a + (b - a) * i as f64 / (n - 1) as f64 })
        .collect())
}

fn emit(out: &OutArg, table: Table) -> Result<(), CliError> {
    let text = table.to_csv_string();
    match &out.out {
        Some(p) => write_output(p, &text),
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(e.to_string())),
                _ => Ok(()),
            }
        }
    }
}

pub fn run(cmd: &ModelCommand) -> Result<(), CliError> {
    match cmd {
        ModelCommand::EvalDynamics(a) => {
            let variant: ModelVariant = a.variant.parse()?;
            let p = DynamicsParams {
                c0: a.c0,
                gamma: a.gamma_mhz * MHZ,
                gamma_d: a.gamma_d_ghz_per_s * 1e9,
                gamma_i: a.gamma_i_per_s,
                gamma_r: a.gamma_r_per_s,
                gamma_i0: a.gamma_i0_per_s,
            };
            p.validate()?;
            let ts = match a.t {
                Some(t) => vec![t],
                None => {
                    if !(a.t_min > 0.0 && a.t_max >= a.t_min && a.points > 0) {
                        return Err(CliError::usage("need 0 < t_min <= t_max and points >= 1"));
                    }
                    log_spaced_delays(a.t_min, a.t_max, a.points)
                }
            };
            let rows: Vec<Vec<f64>> = ts.iter().map(|&t| vec![t, mean_counts(t, &p, variant)]).collect();
            emit(&a.out, numeric_table(&["t_s", "value"], &rows).with_meta("variant", variant))
        }
        ModelCommand::Posterior(a) => {
            let r = a.response.build()?;
            let f1 = a.f1_mhz * MHZ;
            if a.threshold == 0 {
                // Surfaces the improper-posterior error from the library.
                spectral_posterior(&r, f1, 0, &FrequencyGrid::for_response(&r, f1)?)?;
            }
            let grid = FrequencyGrid::adequate_for(&r, f1, a.threshold)?;
            let post = spectral_posterior(&r, f1, a.threshold, &grid)?;
            emit(&a.out, posterior_table(&post))
        }
        ModelCommand::ProbeSignal(a) => {
            let r = a.response.build()?;
            let f1 = a.f1_mhz * MHZ;
            if a.threshold == 0 {
                spectral_posterior(&r, f1, 0, &FrequencyGrid::for_response(&r, f1)?)?;
            }
            let grid = FrequencyGrid::adequate_for(&r, f1, a.threshold)?;
            let half = r.support_half_span();
            let offsets: Vec<f64> = (0..=400).map(|i| -half + 2.0 * half * i as f64 / 400.0).collect();
            let s = probe_signal_at(&r, f1, a.threshold, &grid, &offsets)?;
            emit(&a.out, curve_table(&s.offsets, &s.values).with_meta("threshold", a.threshold))
        }
        ModelCommand::LzsSpectrum(a) => {
            let freqs = parse_grid(&a.f_range)?;
            let amps = match &a.amplitude_sweep {
                Some(s) => parse_grid(s)?,
                None => vec![a.shape.stark_amplitude_mhz],
            };
            let mut rows = Vec::with_capacity(amps.len() * freqs.len());
            for &amp in &amps {
                let p = a.shape.params(a.c0, amp);
                p.validate()?;
                let s = LzsSpectrum::with_default_k_max(p);
                rows.extend(freqs.iter().map(|&f| vec![amp * MHZ, f * MHZ, s.eval(f * MHZ)]));
            }
            emit(&a.out, numeric_table(&["A_Hz", "f_Hz", "value"], &rows))
        }
        ModelCommand::Propagator(a) => {
            let freqs = parse_grid(&a.f_range)?;
            let mut ys = Vec::with_capacity(freqs.len());
            for &f in &freqs {
                match spectral_propagator(f * MHZ, a.t_s, a.gamma_d_ghz_per_s * 1e9) {
                    Propagator::Density(d) => ys.push(d),
                    Propagator::Delta => {
                        return Err(CliError::usage("zero diffusion width: the propagator is a delta function"))
                    }
                }
            }
            let xs: Vec<f64> = freqs.iter().map(|f| f * MHZ).collect();
            emit(&a.out, curve_table(&xs, &ys).with_meta("t_s", a.t_s))
        }
    }
}
