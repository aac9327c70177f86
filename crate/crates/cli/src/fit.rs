use checkprobe_core::dynamics::ModelVariant;
use checkprobe_core::fit::lm::LmOptions;
use checkprobe_core::fit::{
    fit_dynamics_nested, fit_spectrum_joint, threshold_sweep, DynamicsFitOptions, FitResult, SpectrumFitOptions,
    SpectrumModel, SweepOptions,
};
use checkprobe_core::io::{dataset_from_table, records_from_table, spectrum_from_table, Table};
use checkprobe_core::protocol::{post_select_spectrum, RepetitionRecord, Spectrum};

use crate::error::{read_input, write_output, CliError};
use crate::{FitArgs, FitKind};

fn parse_fixed(items: &[String]) -> Result<Vec<(String, f64)>, CliError> {
    items
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--fixed expects name=value, got '{s}'")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("--fixed {k}: '{v}' is not a number")))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

fn lm_options(args: &FitArgs) -> LmOptions {
    LmOptions {
        max_iterations: args.max_iterations,
        ..Default::default()
    }
}

fn parse_range(s: &str) -> Result<std::ops::RangeInclusive<u32>, CliError> {
    let bad = || CliError::usage(format!("--threshold-range expects A:B, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if b < a {
        return Err(bad());
    }
    Ok(a..=b)
}

/// Maps conventional symbols onto fit parameter names.
fn canonical_name(k: &str) -> &str {
    match k {
        "omega" | "drive" => "drive",
        "T1" | "t1" => "t1",
        "T2" | "t2" => "t2",
        "A" | "stark_amplitude" => "stark_amplitude",
        "Omega" | "rabi" => "rabi",
        "C0" | "c0" => "c0",
        "Gamma" | "gamma" => "gamma",
        other => other,
    }
}

fn load_table(path: &std::path::Path) -> Result<Table, CliError> {
    let text = read_input(path)?;
    Table::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn kind(t: &Table) -> &str {
    t.meta_value("kind").unwrap_or("")
}

/// Signed delays of a records file: the recorded list when present,
/// otherwise every magnitude mirrored.
fn record_delays(t: &Table, records: &[RepetitionRecord]) -> Result<Vec<f64>, CliError> {
    if let Some(list) = t.meta_value("delays_s") {
        return list
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| CliError::usage(format!("bad delays_s entry '{x}'"))))
            .collect();
    }
    let mut mags: Vec<f64> = Vec::new();
    for r in records {
        if !mags.contains(&r.delay) {
            mags.push(r.delay);
        }
    }
    mags.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = mags.iter().rev().filter(|&&m| m > 0.0).map(|m| -m).collect();
    out.extend(mags);
    Ok(out)
}

fn record_offsets(records: &[RepetitionRecord]) -> Vec<f64> {
    let n = records.iter().map(|r| r.point + 1).max().unwrap_or(0);
    let mut offs = vec![f64::NAN; n];
    for r in records {
        offs[r.point] = r.probe_offset;
    }
    offs.into_iter().filter(|x| !x.is_nan()).collect()
}

fn summary(r: &FitResult) -> String {
    let mut s = format!("model {}  converged={}  iterations={}\n", r.model, r.converged, r.iterations);
    for (i, n) in r.names.iter().enumerate() {
        s += &format!("  {n:<16} = {:.6e} +/- {:.2e}\n", r.values[i], r.errors[i]);
    }
    for (n, v) in &r.fixed {
        s += &format!("  {n:<16} = {v:.6e} (fixed)\n");
    }
    s += &format!(
        "  chi2_red = {:.4}  aic = {:.3}  bic = {:.3}  n = {}\n",
        r.chi2_red, r.aic, r.bic, r.n_points
    );
    s
}

fn emit(args: &FitArgs, json: String) -> Result<(), CliError> {
    if let Some(p) = &args.out {
        write_output(p, &(json + "\n"))?;
    }
    Ok(())
}

fn check_converged(results: &[&FitResult]) -> Result<(), CliError> {
    let bad: Vec<&str> = results.iter().filter(|r| !r.converged).map(|r| r.model.as_str()).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::numerical(format!("fit did not converge for: {}", bad.join(", "))))
    }
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let fixed: Vec<(String, f64)> = parse_fixed(&args.fixed)?
        .into_iter()
        .map(|(k, v)| (canonical_name(&k).to_string(), v))
        .collect();
    match args.kind {
        FitKind::Dynamics => fit_dynamics_cmd(args, fixed),
        FitKind::Spectrum | FitKind::Lzs => fit_spectrum_cmd(args, fixed),
    }
}

fn fit_dynamics_cmd(args: &FitArgs, mut fixed: Vec<(String, f64)>) -> Result<(), CliError> {
    let variants: Vec<ModelVariant> = match args.model.as_deref().unwrap_or("no-recap") {
        "all" => ModelVariant::ALL.to_vec(),
        list => list.split(',').map(str::parse).collect::<Result<_, _>>()?,
    };
    if args.data.len() != 1 {
        return Err(CliError::usage("dynamics fits take exactly one --data file"));
    }
    let gamma = match fixed.iter().position(|(k, _)| k == "gamma") {
        Some(i) => fixed.remove(i).1,
        None => args.gamma_mhz * 1e6,
    };
    let opts = DynamicsFitOptions {
        fixed,
        lm: lm_options(args),
        ..Default::default()
    };
    let table = load_table(&args.data[0])?;
    let hash = table.meta_value("config_hash").map(str::to_string);

    if kind(&table) == "records" {
        let records = records_from_table(&table)?;
        let delays = record_delays(&table, &records)?;
        let range = match (&args.threshold_range, args.threshold) {
            (Some(r), _) => parse_range(r)?,
            (None, Some(t)) => t..=t,
            (None, None) => return Err(CliError::usage("records input needs --threshold or --threshold-range")),
        };
        let sweep = threshold_sweep(&records, &delays, &variants, range, gamma, &opts, &SweepOptions::default())?;
        for e in &sweep.entries {
            for (v, f) in &e.fits {
                match f {
                    Some(f) => print!("T={} {}", e.threshold, summary(f)),
                    None => println!("T={} {v}: no converged fit", e.threshold),
                }
            }
        }
        match sweep.region {
            Some((a, b)) => println!("convergence region: T = {a}..{b}"),
            None => println!("no convergence region found"),
        }
        for a in &sweep.averages {
            println!("  {} {} = {:.6e} +/- {:.2e}", a.variant, a.name, a.mean, a.std);
        }
        emit(args, serde_json::to_string_pretty(&sweep).expect("sweep serializes"))?;
        if sweep.entries.iter().all(|e| e.fits.iter().all(|(_, f)| f.is_none())) {
            return Err(CliError::numerical("no threshold produced a converged fit"));
        }
        return Ok(());
    }

    let data = dataset_from_table(&table)?;
    let mut results = Vec::new();
    for (v, r) in fit_dynamics_nested(&data, &variants, gamma, &opts) {
        let mut r = r.map_err(|e| CliError::from(e).prefixed(v.name()))?;
        r.config_hash = hash.clone();
        print!("{}", summary(&r));
        results.push(r);
    }
    let json = if results.len() == 1 {
        results[0].to_json()?
    } else {
        serde_json::to_string_pretty(&results).expect("fit results serialize")
    };
    emit(args, json)?;
    check_converged(&results.iter().collect::<Vec<_>>())
}

fn fit_spectrum_cmd(args: &FitArgs, mut fixed: Vec<(String, f64)>) -> Result<(), CliError> {
    let name = match (args.kind, args.model.as_deref()) {
        (FitKind::Lzs, None | Some("lzs")) => "lzs",
        (FitKind::Spectrum | FitKind::Dynamics, None) => "lorentzian",
        (FitKind::Spectrum, Some(m @ ("lorentzian" | "lzs"))) => m,
        (_, Some(m)) => return Err(CliError::usage(format!("unknown model '{m}'"))),
    };
    let model = if name == "lzs" {
        let mut take = |k: &str| -> Result<f64, CliError> {
            let i = fixed
                .iter()
                .position(|(n, _)| n == k)
                .ok_or_else(|| CliError::usage(format!("the lzs model needs --fixed {k}=<value>")))?;
            Ok(fixed.remove(i).1)
        };
        let drive = take("drive")?;
        let t1 = take("t1")?;
        SpectrumModel::Lzs { drive, t1 }
    } else {
        SpectrumModel::Lorentzian
    };

    let mut curves: Vec<Spectrum> = Vec::new();
    let mut hash = None;
    for path in &args.data {
        let table = load_table(path)?;
        hash = hash.or_else(|| table.meta_value("config_hash").map(str::to_string));
        if kind(&table) == "records" {
            let records = records_from_table(&table)?;
            let offs = record_offsets(&records);
            let range = match (&args.threshold_range, args.threshold) {
                (Some(r), _) => parse_range(r)?,
                (None, Some(t)) => t..=t,
                (None, None) => return Err(CliError::usage("records input needs --threshold or --threshold-range")),
            };
            curves.extend(range.map(|t| post_select_spectrum(&records, &offs, t)));
        } else {
            let s = spectrum_from_table(&table)?;
            let keep = match (&args.threshold_range, s.threshold) {
                (Some(r), Some(t)) => parse_range(r)?.contains(&t),
                _ => true,
            };
            if keep {
                curves.push(s);
            }
        }
    }
    // Thresholds no repetition passed at every frequency carry no information.
    curves.retain(|c| !c.points.is_empty());
    let x0 = curves.first().map(|c| c.x()).unwrap_or_default();
    let before = curves.len();
    curves.retain(|c| c.x() == x0);
    if curves.len() < before {
        eprintln!("note: skipped {} spectra with missing points", before - curves.len());
    }

    let opts = SpectrumFitOptions {
        fixed,
        lm: lm_options(args),
        ..Default::default()
    };
    let mut r = fit_spectrum_joint(&curves, model, &opts)?;
    r.config_hash = hash;
    print!("{}", summary(&r));
    emit(args, r.to_json()?)?;
    check_converged(&[&r])
}
