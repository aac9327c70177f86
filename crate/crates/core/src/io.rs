//! CSV and JSON serialization of records, datasets and curves, plus run
//! manifests. CSV files are comma-separated with LF endings; leading
//! `# key=value` lines carry metadata. Floats use Rust's shortest round-trip
//! formatting so a write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{Posterior, SignalCurve};
use crate::error::{Error, Result};
use crate::protocol::{DataPoint, ForwardBackwardDataset, RepetitionRecord, Spectrum};
use crate::rng::{stream_index, RngSeed};
use crate::sim::{Charge, EmitterState};

/// A parsed CSV file: metadata, header and raw cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            meta: Vec::new(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("missing column '{name}'")))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.header.iter().any(|h| h == name)
    }

    /// Parses every cell of a column.
    pub fn column<T: std::str::FromStr>(&self, name: &str) -> Result<Vec<T>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row[i]
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: bad value '{}' in column '{name}'", r + 1, row[i])))
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}={v}");
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        // Writing to memory cannot fail.
        w.write_record(&self.header).expect("in-memory CSV write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory CSV write");
        }
        let body = w.into_inner().expect("in-memory CSV flush");
        s.push_str(&String::from_utf8(body).expect("CSV cells are UTF-8"));
        s
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut t = Table::default();
        let mut body = String::new();
        for line in text.lines() {
            match line.strip_prefix('#') {
                Some(rest) => {
                    if let Some((k, v)) = rest.trim_start().split_once('=') {
                        t.meta.push((k.trim().to_string(), v.trim().to_string()));
                    }
                }
                None => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let mut have_header = false;
        for rec in rd.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let cells: Vec<String> = rec.iter().map(str::to_string).collect();
            if have_header {
                t.rows.push(cells);
            } else {
                t.header = cells;
                have_header = true;
            }
        }
        if !have_header {
            return Err(Error::EmptyInput("CSV has no header line".into()));
        }
        Ok(t)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }
}

/// Shortest round-trip decimal; exponent form keeps tiny and huge values short.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

const RECORD_COLUMNS: [&str; 8] = [
    "point",
    "rep_index",
    "delay_s",
    "f2_offset_Hz",
    "check_counts",
    "probe_counts",
    "final_charge",
    "final_detuning_Hz",
];

/// Per-repetition records. `seed` is the master seed; per-record streams are
/// reconstructed from it when reading.
pub fn records_table(records: &[RepetitionRecord], seed: u64) -> Table {
    let mut t = Table::new(RECORD_COLUMNS).with_meta("kind", "records").with_meta("seed", seed);
    for r in records {
        t.push_row(vec![
            r.point.to_string(),
            r.rep_index.to_string(),
            format_float(r.delay),
            format_float(r.probe_offset),
            r.check_counts.to_string(),
            r.probe_counts.to_string(),
            r.final_state.charge.name().to_string(),
            format_float(r.final_state.detuning),
        ]);
    }
    t
}

fn parse_charge(s: &str) -> Result<Charge> {
    match s {
        "bright" => Ok(Charge::Bright),
        "ionised" => Ok(Charge::Ionised),
        _ => Err(Error::Parse(format!("unknown charge state '{s}'"))),
    }
}

pub fn records_from_table(t: &Table) -> Result<Vec<RepetitionRecord>> {
    let seed: u64 = match t.meta_value("seed") {
        Some(s) => s.parse().map_err(|_| Error::Parse(format!("bad seed '{s}'")))?,
        None => 0,
    };
    let n = t.rows.len();
    let point: Vec<usize> = if t.has_column("point") { t.column("point")? } else { vec![0; n] };
    let rep: Vec<u64> = t.column("rep_index")?;
    let delay: Vec<f64> = t.column("delay_s")?;
    let offset: Vec<f64> = if t.has_column("f2_offset_Hz") {
        t.column("f2_offset_Hz")?
    } else {
        vec![0.0; n]
    };
    let check: Vec<u64> = t.column("check_counts")?;
    let probe: Vec<u64> = t.column("probe_counts")?;
    let charge: Vec<String> = t.column("final_charge")?;
    let det: Vec<f64> = if t.has_column("final_detuning_Hz") {
        t.column("final_detuning_Hz")?
    } else {
        vec![0.0; n]
    };
    (0..n)
        .map(|i| {
            Ok(RepetitionRecord {
                point: point[i],
                rep_index: rep[i],
                delay: delay[i],
                probe_offset: offset[i],
                check_counts: check[i],
                probe_counts: probe[i],
                final_state: EmitterState {
                    detuning: det[i],
                    charge: parse_charge(&charge[i])?,
                },
                seed: RngSeed::new(seed, stream_index(point[i], rep[i])),
            })
        })
        .collect()
}

/// One JSON object per line.
pub fn write_json_lines<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_json_lines<R: BufRead, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

const POINT_COLUMNS: [&str; 4] = ["mean", "sem", "n_pass", "n_total"];

fn points_table(x_name: &str, points: &[DataPoint]) -> Table {
    let mut t = Table::new(std::iter::once(x_name).chain(POINT_COLUMNS));
    for p in points {
        t.push_row(vec![
            format_float(p.x),
            format_float(p.mean),
            format_float(p.sem),
            p.n_pass.to_string(),
            p.n_total.to_string(),
        ]);
    }
    t
}

fn points_from_table(t: &Table, x_name: &str) -> Result<Vec<DataPoint>> {
    let x: Vec<f64> = t.column(x_name)?;
    let mean: Vec<f64> = t.column("mean")?;
    let sem: Vec<f64> = t.column("sem")?;
    let n_pass: Vec<u64> = t.column("n_pass")?;
    let n_total: Vec<u64> = t.column("n_total")?;
    Ok((0..x.len())
        .map(|i| DataPoint {
            x: x[i],
            mean: mean[i],
            sem: sem[i],
            n_pass: n_pass[i],
            n_total: n_total[i],
        })
        .collect())
}

fn parse_threshold(t: &Table) -> Result<Option<u32>> {
    match t.meta_value("threshold") {
        None | Some("none") => Ok(None),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| Error::Parse(format!("bad threshold '{s}'"))),
    }
}

/// Forward/backward dataset; negative `delay_s` rows form the backward branch.
pub fn dataset_table(d: &ForwardBackwardDataset) -> Table {
    let mut t = points_table("delay_s", &d.points);
    t.meta = vec![
        ("kind".into(), "dynamics".into()),
        ("threshold".into(), d.threshold.to_string()),
    ];
    t
}

pub fn dataset_from_table(t: &Table) -> Result<ForwardBackwardDataset> {
    Ok(ForwardBackwardDataset {
        threshold: parse_threshold(t)?.unwrap_or(0),
        points: points_from_table(t, "delay_s")?,
    })
}

pub fn spectrum_table(s: &Spectrum) -> Table {
    let mut t = points_table("f2_offset_Hz", &s.points);
    t.meta = vec![
        ("kind".into(), "spectrum".into()),
        (
            "threshold".into(),
            s.threshold.map_or_else(|| "none".to_string(), |v| v.to_string()),
        ),
    ];
    t
}

pub fn spectrum_from_table(t: &Table) -> Result<Spectrum> {
    Ok(Spectrum {
        threshold: parse_threshold(t)?,
        points: points_from_table(t, "f2_offset_Hz")?,
    })
}

/// Two-column `f_Hz,value` curve.
pub fn curve_table(x: &[f64], y: &[f64]) -> Table {
    let mut t = Table::new(["f_Hz", "value"]);
    for (a, b) in x.iter().zip(y) {
        t.push_row(vec![format_float(*a), format_float(*b)]);
    }
    t
}

pub fn curve_from_table(t: &Table) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((t.column("f_Hz")?, t.column("value")?))
}

pub fn posterior_table(p: &Posterior) -> Table {
    curve_table(&p.grid.points(), &p.density).with_meta("threshold", p.threshold)
}

pub fn signal_table(s: &SignalCurve) -> Table {
    curve_table(&s.offsets, &s.values)
}

/// Numeric table with arbitrary columns, e.g. a 2D sweep in long format.
pub fn numeric_table(header: &[&str], rows: &[Vec<f64>]) -> Table {
    let mut t = Table::new(header.iter().copied());
    for r in rows {
        t.push_row(r.iter().map(|x| format_float(*x)).collect());
    }
    t
}

/// JSON text with object keys sorted and no insignificant whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Value keeps object keys in a BTreeMap, so keys come out sorted.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Stable digest of a config: SHA-256 of its canonical JSON.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(config)?.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_records() -> Vec<RepetitionRecord> {
        (0..5)
            .map(|i| RepetitionRecord {
                point: i / 2,
                rep_index: i as u64 % 2,
                delay: -1e-3 * i as f64,
                probe_offset: 0.1 + i as f64 * 1e6 / 3.0,
                check_counts: 3 * i as u64,
                probe_counts: 7,
                final_state: EmitterState {
                    detuning: 1.0 / 7.0 * 1e9,
                    charge: if i % 2 == 0 { Charge::Bright } else { Charge::Ionised },
                },
                seed: RngSeed::new(42, stream_index(i / 2, i as u64 % 2)),
            })
            .collect()
    }

    #[test]
    fn records_round_trip() {
        let recs = sample_records();
        let text = records_table(&recs, 42).to_csv_string();
        assert!(text.starts_with("# kind=records\n# seed=42\npoint,rep_index,"));
        assert!(!text.contains('\r'));
        let back = records_from_table(&Table::parse(&text).unwrap()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn json_lines_round_trip() {
        let recs = sample_records();
        let mut buf = Vec::new();
        write_json_lines(&mut buf, &recs).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), recs.len());
        let back: Vec<RepetitionRecord> = read_json_lines(&buf[..]).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn spectrum_round_trip_without_threshold() {
        let s = Spectrum {
            threshold: None,
            points: vec![DataPoint {
                x: -3e8,
                mean: 0.1,
                sem: 0.01,
                n_pass: 10,
                n_total: 10,
            }],
        };
        let back = spectrum_from_table(&Table::parse(&spectrum_table(&s).to_csv_string()).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn ragged_row_rejected() {
        assert!(matches!(Table::parse("a,b\n1,2\n3\n"), Err(Error::Parse(_))));
        assert!(matches!(Table::parse("# only=meta\n"), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b": 1, "a": {"d": 2, "c": 3}}"#).unwrap();
        assert_eq!(canonical_json(&a).unwrap(), r#"{"a":{"c":3,"d":2},"b":1}"#);
        let b: serde_json::Value = serde_json::from_str(r#"{"a": {"c": 3, "d": 2}, "b": 1}"#).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    proptest! {
        #[test]
        fn dataset_round_trip_is_bit_exact(
            vals in prop::collection::vec((-1e3f64..1e3, any::<f64>().prop_filter("finite", |x| x.is_finite()), 0f64..1e3, 0u64..1000), 1..20),
            threshold in 0u32..50,
        ) {
            let d = ForwardBackwardDataset {
                threshold,
                points: vals
                    .iter()
                    .map(|&(x, mean, sem, n)| DataPoint { x, mean, sem, n_pass: n, n_total: n + 3 })
                    .collect(),
            };
            let text = dataset_table(&d).to_csv_string();
            let back = dataset_from_table(&Table::parse(&text).unwrap()).unwrap();
            prop_assert_eq!(back.threshold, d.threshold);
            for (a, b) in back.points.iter().zip(&d.points) {
                prop_assert_eq!(a.x.to_bits(), b.x.to_bits());
                prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
                prop_assert_eq!(a.sem.to_bits(), b.sem.to_bits());
            }
        }

        #[test]
        fn hash_changes_with_any_field(delta in 1u64..1000) {
            use crate::config::ExperimentConfig;
            let base = ExperimentConfig::from_json(
                r#"{"emitter": {"response": {"kind": "lorentzian", "c0_counts": 25, "gamma_MHz": 36}},
                    "blocks": {"check_ms": 2}, "repetitions": 100}"#,
            ).unwrap();
            let h0 = config_hash(&base).unwrap();
            let mut c = base.clone();
            c.seed += delta;
            prop_assert_ne!(config_hash(&c).unwrap(), h0.clone());
            let mut c = base.clone();
            c.repetitions += delta;
            prop_assert_ne!(config_hash(&c).unwrap(), h0.clone());
            let mut c = base.clone();
            c.blocks.check_ms += delta as f64 * 1e-6;
            prop_assert_ne!(config_hash(&c).unwrap(), h0.clone());
            prop_assert_eq!(config_hash(&base.clone()).unwrap(), h0);
        }
    }
}
