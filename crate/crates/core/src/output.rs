//! CSV writers and readers for per-slot traces, run summaries, sweep tables
//! and queue trajectories.
//!
//! Every file starts with one comment line `# config_hash=<hex> seed=<n>`
//! followed by a header row. Column order is fixed:
//!
//! | file       | columns |
//! |------------|---------|
//! | per-slot   | `slot,region,h,q,scheduled,b,ap,penalty` |
//! | summary    | `run_id,scheduler,seed,axis,axis_value,b_fixed,mean_ap,mean_penalty,mean_volume,max_budget_violation,compliance_slot` |
//! | sweep      | `axis,axis_value,scheduler,b_fixed,replications,mean_ap,stderr_ap,mean_penalty,stderr_penalty,mean_volume` |
//! | trajectory | `slot,mean_q,mean_avg_volume,mean_ap` |
//!
//! Empty fields mean "not applicable": `ap`/`penalty` before the first
//! completed task under the exclude cold start, `axis`/`axis_value` for a
//! single run, `b_fixed` for TAMP.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::FitSample;
use crate::sched::SchedulerKind;
use crate::sim::{RunRecord, RunSummary, SlotRow, SweepAxis, SweepRow, TrajectoryPoint};

pub const SLOT_COLUMNS: &[&str] = &["slot", "region", "h", "q", "scheduled", "b", "ap", "penalty"];
pub const SUMMARY_COLUMNS: &[&str] = &[
    "run_id",
    "scheduler",
    "seed",
    "axis",
    "axis_value",
    "b_fixed",
    "mean_ap",
    "mean_penalty",
    "mean_volume",
    "max_budget_violation",
    "compliance_slot",
];
pub const SWEEP_COLUMNS: &[&str] = &[
    "axis",
    "axis_value",
    "scheduler",
    "b_fixed",
    "replications",
    "mean_ap",
    "stderr_ap",
    "mean_penalty",
    "stderr_penalty",
    "mean_volume",
];
pub const TRAJECTORY_COLUMNS: &[&str] = &["slot", "mean_q", "mean_avg_volume", "mean_ap"];

/// Provenance written as the leading comment of every CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvMeta {
    pub config_hash: String,
    pub seed: u64,
}

impl CsvMeta {
    pub fn header_line(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }

    /// Parses a `# config_hash=<hex> seed=<n>` line.
    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::domain(format!("malformed CSV metadata line: {line:?}"));
        let rest = line.trim().strip_prefix('#').ok_or_else(bad)?;
        let mut hash = None;
        let mut seed = None;
        for token in rest.split_whitespace() {
            match token.split_once('=') {
                Some(("config_hash", v)) => hash = Some(v.to_string()),
                Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                _ => {}
            }
        }
        Ok(CsvMeta {
            config_hash: hash.ok_or_else(bad)?,
            seed: seed.ok_or_else(bad)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SlotRecord {
    slot: u64,
    region: usize,
    h: u32,
    q: f64,
    scheduled: u8,
    b: f64,
    ap: Option<f64>,
    penalty: Option<f64>,
}

/// One line of the summary file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: usize,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub axis: Option<SweepAxis>,
    pub axis_value: Option<f64>,
    pub b_fixed: Option<f64>,
    pub mean_ap: f64,
    pub mean_penalty: f64,
    pub mean_volume: f64,
    pub max_budget_violation: f64,
    pub compliance_slot: u64,
}

impl SummaryRow {
    /// Row for a standalone run; `b_fixed` is set for baselines.
    pub fn from_run(run_id: usize, s: &RunSummary, b_fixed: Option<f64>) -> Self {
        SummaryRow {
            run_id,
            scheduler: s.scheduler,
            seed: s.seed,
            axis: None,
            axis_value: None,
            b_fixed,
            mean_ap: s.mean_ap,
            mean_penalty: s.mean_penalty,
            mean_volume: s.mean_volume(),
            max_budget_violation: s.budget_violation,
            compliance_slot: s.compliance_slot,
        }
    }
}

impl From<&RunRecord> for SummaryRow {
    fn from(r: &RunRecord) -> Self {
        SummaryRow {
            run_id: r.run_id,
            scheduler: r.scheduler,
            seed: r.seed,
            axis: Some(r.axis),
            axis_value: Some(r.axis_value),
            b_fixed: r.b_fixed,
            mean_ap: r.mean_ap,
            mean_penalty: r.mean_penalty,
            mean_volume: r.mean_volume,
            max_budget_violation: r.max_budget_violation,
            compliance_slot: r.compliance_slot,
        }
    }
}

fn write_table<W: Write, T: Serialize>(mut out: W, meta: &CsvMeta, columns: &[&str], rows: &[T]) -> Result<()> {
    writeln!(out, "{}", meta.header_line())?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(columns)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_table<R: Read, T: for<'de> Deserialize<'de>>(input: R, columns: &[&str]) -> Result<(CsvMeta, Vec<T>)> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let meta = CsvMeta::parse(&first)?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != columns {
        return Err(Error::domain(format!("unexpected CSV columns {header:?}, expected {columns:?}")));
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok((meta, rows))
}

pub fn write_slot_rows<W: Write>(out: W, meta: &CsvMeta, rows: &[SlotRow]) -> Result<()> {
    let records: Vec<SlotRecord> = rows
        .iter()
        .map(|r| SlotRecord {
            slot: r.slot,
            region: r.region,
            h: r.h,
            q: r.q,
            scheduled: u8::from(r.scheduled),
            b: r.b,
            ap: r.ap,
            penalty: r.penalty,
        })
        .collect();
    write_table(out, meta, SLOT_COLUMNS, &records)
}

pub fn read_slot_rows<R: Read>(input: R) -> Result<(CsvMeta, Vec<SlotRow>)> {
    let (meta, records): (CsvMeta, Vec<SlotRecord>) = read_table(input, SLOT_COLUMNS)?;
    let rows = records
        .into_iter()
        .map(|r| SlotRow {
            slot: r.slot,
            region: r.region,
            h: r.h,
            q: r.q,
            scheduled: r.scheduled != 0,
            b: r.b,
            ap: r.ap,
            penalty: r.penalty,
        })
        .collect();
    Ok((meta, rows))
}

pub fn write_summary<W: Write>(out: W, meta: &CsvMeta, rows: &[SummaryRow]) -> Result<()> {
    write_table(out, meta, SUMMARY_COLUMNS, rows)
}

pub fn read_summary<R: Read>(input: R) -> Result<(CsvMeta, Vec<SummaryRow>)> {
    read_table(input, SUMMARY_COLUMNS)
}

pub fn write_sweep<W: Write>(out: W, meta: &CsvMeta, rows: &[SweepRow]) -> Result<()> {
    write_table(out, meta, SWEEP_COLUMNS, rows)
}

pub fn read_sweep<R: Read>(input: R) -> Result<(CsvMeta, Vec<SweepRow>)> {
    read_table(input, SWEEP_COLUMNS)
}

pub fn write_trajectory<W: Write>(out: W, meta: &CsvMeta, points: &[TrajectoryPoint]) -> Result<()> {
    write_table(out, meta, TRAJECTORY_COLUMNS, points)
}

pub fn read_trajectory<R: Read>(input: R) -> Result<(CsvMeta, Vec<TrajectoryPoint>)> {
    read_table(input, TRAJECTORY_COLUMNS)
}

/// Reads fitting samples from a plain CSV with columns `h_s,b_log,ap`.
/// Lines starting with `#` are ignored.
pub fn read_fit_samples<R: Read>(input: R) -> Result<Vec<FitSample>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    #[derive(Deserialize)]
    struct Raw {
        h_s: f64,
        b_log: f64,
        ap: f64,
    }
    r.deserialize::<Raw>()
        .map(|row| {
            let row = row?;
            Ok(FitSample { h_s: row.h_s, b_log: row.b_log, ap: row.ap })
        })
        .collect()
}

/// Creates `path` (and missing parent directories) for buffered writing.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CsvMeta {
        CsvMeta { config_hash: "ab12".into(), seed: 7 }
    }

    #[test]
    fn metadata_line_round_trips() {
        let m = meta();
        assert_eq!(m.header_line(), "# config_hash=ab12 seed=7");
        assert_eq!(CsvMeta::parse(&m.header_line()).unwrap(), m);
        assert!(CsvMeta::parse("config_hash=ab seed=1").is_err());
        assert!(CsvMeta::parse("# seed=1").is_err());
    }

    #[test]
    fn slot_rows_layout_and_round_trip() {
        let rows = vec![
            SlotRow { slot: 0, region: 1, h: 3, q: 0.5, scheduled: true, b: 8.0, ap: Some(0.7), penalty: Some(0.05) },
            SlotRow { slot: 0, region: 2, h: 1, q: 0.0, scheduled: false, b: 0.0, ap: None, penalty: None },
        ];
        let mut buf = Vec::new();
        write_slot_rows(&mut buf, &meta(), &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_hash=ab12 seed=7");
        assert_eq!(lines[1], "slot,region,h,q,scheduled,b,ap,penalty");
        assert_eq!(lines[2], "0,1,3,0.5,1,8.0,0.7,0.05");
        assert_eq!(lines[3], "0,2,1,0.0,0,0.0,,");
        let (m, back) = read_slot_rows(buf.as_slice()).unwrap();
        assert_eq!(m, meta());
        assert_eq!(back, rows);
    }

    #[test]
    fn sweep_rows_round_trip() {
        let rows = vec![SweepRow {
            axis: SweepAxis::RateHi,
            axis_value: 20.0,
            scheduler: SchedulerKind::Gea,
            b_fixed: Some(8.0),
            replications: 10,
            mean_ap: 0.5,
            stderr_ap: 0.01,
            mean_penalty: 0.2,
            stderr_penalty: 0.01,
            mean_volume: 1.9,
        }];
        let mut buf = Vec::new();
        write_sweep(&mut buf, &meta(), &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(2).unwrap().starts_with("rate_hi,20.0,gea,8.0,10,"));
        assert_eq!(read_sweep(buf.as_slice()).unwrap().1, rows);
    }

    #[test]
    fn wrong_columns_are_rejected() {
        let text = "# config_hash=x seed=0\nslot,mean_q\n1,2\n";
        assert!(read_trajectory(text.as_bytes()).is_err());
    }

    #[test]
    fn fit_samples_parse() {
        let text = "# synthetic\nh_s,b_log,ap\n0.0,20.0,0.7\n0.5,18.0,0.4\n";
        let s = read_fit_samples(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].b_log, 18.0);
    }
}
