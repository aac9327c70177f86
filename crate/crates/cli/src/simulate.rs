use std::path::Path;

use checkprobe_core::config::ExperimentConfig;
use checkprobe_core::io::{
    config_hash, dataset_table, format_float, numeric_table, records_table, spectrum_table, RunManifest, Table,
};
use checkprobe_core::protocol::{
    delay_magnitudes, post_select_dynamics, post_select_spectrum, run_diffusion_averaged_ple,
    run_scanning_ple, run_two_laser_ple, simulate_dynamics_records, simulate_spectroscopy_records, Spectrum,
};
use checkprobe_core::sim::{simulate_telegraph_trace, Block, Illumination};

use crate::error::{read_input, write_output, CliError};
use crate::plot::{line_plot, Series};
use crate::{PlotFormat, Protocol, SimulateArgs};

const MS: f64 = 1e-3;

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = read_input(path)?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg.validated()?)
}

struct Outputs<'a> {
    dir: &'a Path,
    hash: String,
    seed: u64,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn csv(&mut self, name: &str, table: Table) -> Result<(), CliError> {
        let mut t = table;
        // Provenance first, then whatever the table already carries.
        let mut meta = vec![
            ("config_hash".to_string(), self.hash.clone()),
            ("seed".to_string(), self.seed.to_string()),
        ];
        meta.extend(t.meta.into_iter().filter(|(k, _)| k != "seed"));
        t.meta = meta;
        self.file(name, &t.to_csv_string())
    }

    fn file(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        write_output(&self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn spectrum_series(s: &Spectrum, label: String) -> Series {
    Series {
        label,
        x: s.x().iter().map(|v| v / 1e6).collect(),
        y: s.means(),
    }
}

pub fn run(a: &SimulateArgs) -> Result<(), CliError> {
    let started = chrono::Utc::now().to_rfc3339();
    let cfg = load_config(&a.config, a.seed)?;
    let setup = cfg.setup()?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(format!("cannot create {}: {e}", a.out.display())))?;
    let mut out = Outputs {
        dir: &a.out,
        hash: config_hash(&cfg)?,
        seed: cfg.seed,
        files: Vec::new(),
    };
    let missing = |section: &str| CliError::usage(format!("config has no '{section}' section"));

    let plot = match a.protocol {
        Protocol::Dynamics => {
            let delays = cfg.delays();
            let records = simulate_dynamics_records(&setup, &delay_magnitudes(&delays));
            let list: Vec<String> = delays.iter().map(|&d| format_float(d)).collect();
            out.csv(
                "records.csv",
                records_table(&records, cfg.seed).with_meta("delays_s", list.join(" ")),
            )?;
            let data = post_select_dynamics(&records, &delays, cfg.threshold_counts);
            out.csv("dataset.csv", dataset_table(&data))?;
            let branch = |sign: f64| Series {
                label: if sign > 0.0 { "forward".into() } else { "backward".into() },
                x: data.points.iter().filter(|p| p.x * sign > 0.0).map(|p| p.x.abs()).collect(),
                y: data.points.iter().filter(|p| p.x * sign > 0.0).map(|p| p.mean).collect(),
            };
            line_plot("Check-probe dynamics", "|t| (s)", "mean counts", &[branch(1.0), branch(-1.0)], true)
        }
        Protocol::Telegraph => {
            let illumination = match cfg.lasers.two_laser_offset_mhz {
                Some(d) => Illumination::TwoLaser {
                    offset1: 0.0,
                    offset2: d * 1e6,
                },
                None => Illumination::Single { offset: 0.0 },
            };
            let check = Block {
                illumination,
                perturbation: setup.readout_perturbation,
                ..Block::laser(setup.check_duration, 0.0)
            };
            let counts = simulate_telegraph_trace(
                &setup.model,
                &setup.prior,
                &check,
                setup.initial_bright_probability,
                cfg.repetitions,
                cfg.seed,
            );
            let mut t = Table::new(["rep_index", "check_counts"]).with_meta("kind", "telegraph");
            for (i, c) in counts.iter().enumerate() {
                t.push_row(vec![i.to_string(), c.to_string()]);
            }
            out.csv("telegraph.csv", t)?;
            let s = Series {
                label: "check".into(),
                x: (0..counts.len()).map(|i| i as f64).collect(),
                y: counts.iter().map(|&c| c as f64).collect(),
            };
            line_plot("Telegraph trace", "repetition", "counts", &[s], false)
        }
        Protocol::Ple => {
            let grid = cfg.ple.as_ref().ok_or_else(|| missing("ple"))?;
            let s = run_diffusion_averaged_ple(&setup, &grid.values_hz());
            out.csv("ple.csv", spectrum_table(&s))?;
            line_plot("PLE", "f1 (MHz)", "mean counts", &[spectrum_series(&s, "ple".into())], false)
        }
        Protocol::TwoLaser => {
            let grid = cfg.two_laser.as_ref().ok_or_else(|| missing("two_laser"))?;
            let s = run_two_laser_ple(&setup, &grid.values_hz());
            out.csv("two_laser.csv", spectrum_table(&s))?;
            let series = [spectrum_series(&s, "two-laser".into())];
            line_plot("Two-laser PLE", "f2 - f1 (MHz)", "mean counts", &series, false)
        }
        Protocol::Spectroscopy => {
            let sc = cfg.spectroscopy.as_ref().ok_or_else(|| missing("spectroscopy"))?;
            let offs = sc.f2_grid.values_hz();
            let thresholds = sc.thresholds.clone().unwrap_or_else(|| vec![cfg.threshold_counts]);
            let records = simulate_spectroscopy_records(&setup, &offs, sc.wait_ms * MS);
            out.csv("records.csv", records_table(&records, cfg.seed))?;
            let mut series = Vec::new();
            for &t in &thresholds {
                let s = post_select_spectrum(&records, &offs, t);
                out.csv(&format!("spectrum_T{t}.csv"), spectrum_table(&s))?;
                series.push(spectrum_series(&s, format!("T={t}")));
            }
            line_plot("Check-probe spectroscopy", "f2 - f1 (MHz)", "mean probe counts", &series, false)
        }
        Protocol::Scanning => {
            let sc = cfg.scanning.as_ref().ok_or_else(|| missing("scanning"))?;
            let settings = cfg.scan_settings().ok_or_else(|| missing("scanning"))?;
            let offs = sc.f2_grid.values_hz();
            let r = run_scanning_ple(&setup, &offs, &settings)?;
            let mut t = Table::new(["scan", "check_attempts", "f2_offset_Hz", "counts"]).with_meta("kind", "scans");
            for (i, row) in r.scans.iter().enumerate() {
                for (f, c) in offs.iter().zip(row) {
                    t.push_row(vec![i.to_string(), r.check_attempts[i].to_string(), format_float(*f), c.to_string()]);
                }
            }
            out.csv("scans.csv", t)?;
            let rows: Vec<Vec<f64>> = offs.iter().zip(&r.summed).map(|(f, c)| vec![*f, *c as f64]).collect();
            out.csv("summed.csv", numeric_table(&["f2_offset_Hz", "counts"], &rows).with_meta("kind", "summed"))?;
            let s = Series {
                label: "summed".into(),
                x: offs.iter().map(|f| f / 1e6).collect(),
                y: r.summed.iter().map(|&c| c as f64).collect(),
            };
            line_plot("Scanning PLE", "f2 - f1 (MHz)", "counts", &[s], false)
        }
    };
    if a.emit_plot == Some(PlotFormat::Svg) {
        out.file("plot.svg", &plot)?;
    }

    let manifest = RunManifest {
        command: format!("simulate {}", protocol_name(a.protocol)),
        config_hash: out.hash.clone(),
        seed: cfg.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: chrono::Utc::now().to_rfc3339(),
        outputs: out.files.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_output(&a.out.join("manifest.json"), &(text + "\n"))?;
    println!("wrote {} files to {}", out.files.len() + 1, a.out.display());
    Ok(())
}

fn protocol_name(p: Protocol) -> &'static str {
    match p {
        Protocol::Dynamics => "dynamics",
        Protocol::Telegraph => "telegraph",
        Protocol::Ple => "ple",
        Protocol::TwoLaser => "two-laser",
        Protocol::Spectroscopy => "spectroscopy",
        Protocol::Scanning => "scanning",
    }
}
