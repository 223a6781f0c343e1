//! Slot loop, run metrics, parameter sweeps and the single-region renewal oracle.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ColdStart, ScenarioConfig};
use crate::env::{
    event_rng, sample_region_extraction_delay, total_task_delay, transmission_delay_ms, StreamPurpose, TaskDelayDist,
};
use crate::error::{Error, Result};
use crate::penalty::PenaltyModel;
use crate::region::{RegionState, TaskRecord};
use crate::sched::{schedule, SchedulerKind, SlotView};
use crate::volume::task_delay_dist;

/// Cumulative average volume may exceed the budget by this factor and still
/// count as compliant.
pub const COMPLIANCE_SLACK: f64 = 1.05;

/// One region in one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRow {
    pub slot: u64,
    pub region: usize,
    pub h: u32,
    pub q: f64,
    pub scheduled: bool,
    pub b: f64,
    /// Empty when cold start leaves the AP undefined.
    pub ap: Option<f64>,
    pub penalty: Option<f64>,
}

/// Cross-region averages at one slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub slot: u64,
    pub mean_q: f64,
    /// Mean over regions of the cumulative average volume (Mb/slot).
    pub mean_avg_volume: f64,
    pub mean_ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub horizon: u64,
    pub warmup: u64,
    /// Surrogate AP averaged over post-warmup slots and regions.
    pub mean_ap: f64,
    pub mean_penalty: f64,
    /// `sum_k b_{a,k} / K` for each region (Mb/slot).
    pub per_region_avg_volume: Vec<f64>,
    pub per_region_gamma: Vec<f64>,
    /// Virtual queue of each region after the last slot.
    pub final_q: Vec<f64>,
    /// Max over regions of `(avg volume - Γ) / Γ`.
    pub budget_violation: f64,
    /// First slot after which every region's cumulative average volume stays
    /// within the compliance slack of its budget.
    pub compliance_slot: u64,
    /// Number of tasks whose split had to clip the requested volume.
    pub clipped_splits: u64,
    pub trajectory: Vec<TrajectoryPoint>,
    #[serde(skip)]
    pub slots: Vec<SlotRow>,
    #[serde(skip)]
    pub wall_ms: f64,
}

impl RunSummary {
    pub fn mean_volume(&self) -> f64 {
        mean(&self.per_region_avg_volume)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep one [`SlotRow`] per region and slot.
    pub record_slots: bool,
    /// Keep the per-slot cross-region trajectory.
    pub record_trajectory: bool,
}

/// Simulates one scenario for `cfg.horizon` slots.
///
/// Each slot: sample every region's rate, schedule idle regions, sample the
/// delays of new tasks and start them, charge the scheduled volume to the
/// virtual queues, record AP and penalty, then count tasks down and advance
/// the age of information.
pub fn run(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunSummary> {
    let started = Instant::now();
    cfg.validate()?;
    let specs = cfg.build_regions()?;
    let models: Vec<PenaltyModel> = specs.iter().map(|s| s.model).collect();
    let env = &cfg.env;
    let bounds = &cfg.volume;
    let sched = &cfg.scheduler;
    let n = specs.len();
    let horizon = cfg.horizon;

    let d_bar_seed_for = |n_sensors: usize| {
        env.expected_task_delay_slots(n_sensors, bounds.midpoint(), env.rate.mean())
    };
    let initial_volume = match cfg.cold_start {
        ColdStart::MaxVolume => Some(bounds.b_max),
        ColdStart::Exclude => None,
    };
    let mut regions = specs
        .iter()
        .map(|s| {
            RegionState::new(
                s.id,
                s.kind,
                s.sensors.clone(),
                s.gamma,
                s.v,
                initial_volume,
                d_bar_seed_for(s.sensors.len()),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rates = vec![0.0; n];
    let mut cum_volume = vec![0.0; n];
    let mut last_violation: Vec<Option<u64>> = vec![None; n];
    let mut ap_sum = 0.0;
    let mut penalty_sum = 0.0;
    let mut samples = 0u64;
    let mut clipped_splits = 0u64;
    let mut trajectory = Vec::new();
    let mut slot_rows = Vec::new();
    if opts.record_slots {
        slot_rows.reserve(horizon as usize * n);
    }

    for k in 0..horizon {
        for (a, rate) in rates.iter_mut().enumerate() {
            *rate = env.rate.sample(&mut event_rng(cfg.seed, a, k, StreamPurpose::Rate));
        }
        let view = SlotView {
            seed: cfg.seed,
            slot: k,
            regions: &regions,
            models: &models,
            rates: &rates,
            env,
            bounds,
        };
        let decision = schedule(sched, &view)?;
        clipped_splits += decision.clipped.len() as u64;

        let active_after = regions.iter().filter(|r| !r.is_idle()).count() + decision.selected.len();
        if active_after > sched.capacity_m {
            return Err(Error::Invariant {
                slot: k,
                region: decision.selected.last().copied().unwrap_or(0),
                reason: format!("{active_after} active regions exceed capacity {}", sched.capacity_m),
            });
        }
        if active_after as f64 * decision.b_share > sched.b_total * (1.0 + 1e-12) {
            return Err(Error::Invariant {
                slot: k,
                region: decision.selected.last().copied().unwrap_or(0),
                reason: "bandwidth cap exceeded".into(),
            });
        }

        for &a in &decision.selected {
            let region = &mut regions[a];
            let n_sensors = region.n_sensors();
            let ext = sample_region_extraction_delay(
                &mut event_rng(cfg.seed, a, k, StreamPurpose::Extraction),
                &env.ext,
                n_sensors,
            );
            let det = env.det.sample(&mut event_rng(cfg.seed, a, k, StreamPurpose::Detection));
            let sensor_rates: Vec<f64> = decision.bandwidth[a]
                .iter()
                .map(|bw| rates[a] * bw / decision.b_share)
                .collect();
            let tr = transmission_delay_ms(&decision.b_sensor[a], &sensor_rates, env.compression_factor)?;
            let delays = total_task_delay(ext, tr, det, env.tau_ms);
            let task = TaskRecord {
                start_slot: k,
                finish_slot: k + delays.total_slots as u64,
                b_region: decision.b_region[a],
                b_per_sensor: decision.b_sensor[a].clone(),
                bandwidth_per_sensor: decision.bandwidth[a].clone(),
                delays,
            };
            region.begin_task(task).map_err(|e| Error::Invariant {
                slot: k,
                region: a,
                reason: e.to_string(),
            })?;
        }

        let mut slot_ap = 0.0;
        let mut slot_ap_n = 0usize;
        for (a, region) in regions.iter_mut().enumerate() {
            let b = decision.b_region[a];
            region.update_virtual_queue(b);
            cum_volume[a] += b;
            if cum_volume[a] / (k + 1) as f64 > COMPLIANCE_SLACK * region.gamma {
                last_violation[a] = Some(k);
            }
            let ap = region.instantaneous_ap(&models[a]);
            let penalty = region.instantaneous_penalty(&models[a]);
            if let (Some(ap), Some(pen)) = (ap, penalty) {
                if !(-1e-12..=1.05).contains(&ap) {
                    return Err(Error::Invariant {
                        slot: k,
                        region: a,
                        reason: format!("AP {ap} outside [0, 1.05]"),
                    });
                }
                slot_ap += ap;
                slot_ap_n += 1;
                if k >= cfg.warmup {
                    ap_sum += ap;
                    penalty_sum += pen;
                    samples += 1;
                }
            }
            if opts.record_slots {
                slot_rows.push(SlotRow {
                    slot: k,
                    region: a,
                    h: region.h,
                    q: region.q,
                    scheduled: decision.u[a],
                    b,
                    ap,
                    penalty,
                });
            }
        }
        if opts.record_trajectory {
            trajectory.push(TrajectoryPoint {
                slot: k,
                mean_q: mean(&regions.iter().map(|r| r.q).collect::<Vec<_>>()),
                mean_avg_volume: cum_volume.iter().sum::<f64>() / (n as f64 * (k + 1) as f64),
                mean_ap: if slot_ap_n > 0 { slot_ap / slot_ap_n as f64 } else { 0.0 },
            });
        }

        for (a, region) in regions.iter_mut().enumerate() {
            let done = region.tick();
            region.step_aoi(done.as_ref()).map_err(|e| Error::Invariant {
                slot: k,
                region: a,
                reason: e.to_string(),
            })?;
        }
    }

    let per_region_avg_volume: Vec<f64> = cum_volume.iter().map(|c| c / horizon as f64).collect();
    let per_region_gamma: Vec<f64> = regions.iter().map(|r| r.gamma).collect();
    let budget_violation = per_region_avg_volume
        .iter()
        .zip(&per_region_gamma)
        .map(|(v, g)| if *g > 0.0 { (v - g) / g } else if *v > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(f64::NEG_INFINITY, f64::max);
    let compliance_slot = last_violation.iter().map(|v| v.map_or(0, |k| k + 1)).max().unwrap_or(0);
    let (mean_ap, mean_penalty) = if samples > 0 {
        (ap_sum / samples as f64, penalty_sum / samples as f64)
    } else {
        (0.0, 0.0)
    };

    Ok(RunSummary {
        scheduler: sched.kind,
        seed: cfg.seed,
        horizon,
        warmup: cfg.warmup,
        mean_ap,
        mean_penalty,
        per_region_avg_volume,
        per_region_gamma,
        final_q: regions.iter().map(|r| r.q).collect(),
        budget_violation,
        compliance_slot,
        clipped_splits,
        trajectory,
        slots: slot_rows,
        wall_ms: started.elapsed().as_secs_f64() * 1000.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Upper end of the uniform rate distribution (Mbps).
    RateHi,
    /// Per-region volume budget (Mb/slot).
    Gamma,
    /// Mean extraction delay (ms); the shift is kept and the scale adjusted.
    ExtDelayMean,
    CapacityM,
    VParam,
    /// Fixed baseline volume (Mb).
    BFixed,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::RateHi => "rate_hi",
            SweepAxis::Gamma => "gamma",
            SweepAxis::ExtDelayMean => "ext_delay_mean",
            SweepAxis::CapacityM => "capacity_m",
            SweepAxis::VParam => "v_param",
            SweepAxis::BFixed => "b_fixed",
        }
    }

    /// Sets this axis to `value` in `cfg`.
    pub fn apply(self, cfg: &mut ScenarioConfig, value: f64) -> Result<()> {
        match self {
            SweepAxis::RateHi => cfg.env.rate.hi_mbps = value,
            SweepAxis::Gamma => {
                cfg.roster.gamma_mb = value;
                for o in cfg.regions.values_mut() {
                    o.gamma_mb = None;
                }
            }
            SweepAxis::ExtDelayMean => {
                let scale = value - cfg.env.ext.shift_ms;
                if !(scale > 0.0) {
                    return Err(Error::config(
                        "sweep.values",
                        format!("extraction mean {value} ms must exceed the shift {} ms", cfg.env.ext.shift_ms),
                    ));
                }
                cfg.env.ext.scale_ms = scale;
            }
            SweepAxis::CapacityM => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::config("sweep.values", format!("capacity must be a positive integer, got {value}")));
                }
                cfg.scheduler.capacity_m = value as usize;
            }
            SweepAxis::VParam => {
                cfg.roster.v = value;
                for o in cfg.regions.values_mut() {
                    o.v = None;
                }
            }
            SweepAxis::BFixed => {
                cfg.scheduler.b_fixed_mb = value;
                cfg.b_fixed_list = vec![value];
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepAxis::RateHi,
            SweepAxis::Gamma,
            SweepAxis::ExtDelayMean,
            SweepAxis::CapacityM,
            SweepAxis::VParam,
            SweepAxis::BFixed,
        ]
        .into_iter()
        .find(|a| a.as_str() == s)
        .ok_or_else(|| Error::config("sweep.axis", format!("unknown axis `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schedulers: Vec<SchedulerKind>,
    pub replications: usize,
    pub base: ScenarioConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep.values", "must not be empty"));
        }
        if self.schedulers.is_empty() {
            return Err(Error::config("sweep.schedulers", "must not be empty"));
        }
        if self.replications == 0 {
            return Err(Error::config("sweep.replications", "must be >= 1"));
        }
        for &value in &self.values {
            let mut cfg = self.base.clone();
            self.axis.apply(&mut cfg, value)?;
            cfg.validate()?;
        }
        Ok(())
    }

    /// Reads a sweep file: a scenario config plus a `[sweep]` table with
    /// `axis`, `values`, `schedulers` and `replications`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let sweep = match table.remove("sweep") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(Error::config("sweep", "must be a table")),
            None => return Err(Error::config("sweep", "missing [sweep] table")),
        };
        let mut base = ScenarioConfig::default();
        for (key, value) in crate::config::flatten_toml(&table) {
            base.set(&key, &value)?;
        }
        let mut spec = SweepSpec {
            axis: SweepAxis::RateHi,
            values: Vec::new(),
            schedulers: SchedulerKind::ALL.to_vec(),
            replications: 10,
            base,
        };
        for (k, v) in sweep {
            let key = format!("sweep.{k}");
            match k.as_str() {
                "axis" => {
                    spec.axis = v
                        .as_str()
                        .ok_or_else(|| Error::config(&key, "expected a string"))?
                        .parse()?
                }
                "values" => {
                    spec.values = v
                        .as_array()
                        .ok_or_else(|| Error::config(&key, "expected a list"))?
                        .iter()
                        .map(|x| {
                            x.as_float()
                                .or_else(|| x.as_integer().map(|i| i as f64))
                                .ok_or_else(|| Error::config(&key, "expected numbers"))
                        })
                        .collect::<Result<_>>()?
                }
                "schedulers" => {
                    spec.schedulers = v
                        .as_array()
                        .ok_or_else(|| Error::config(&key, "expected a list"))?
                        .iter()
                        .map(|x| x.as_str().ok_or_else(|| Error::config(&key, "expected strings"))?.parse())
                        .collect::<Result<_>>()?
                }
                "replications" => {
                    spec.replications = v
                        .as_integer()
                        .filter(|i| *i >= 0)
                        .ok_or_else(|| Error::config(&key, "expected a nonnegative integer"))?
                        as usize
                }
                _ => return Err(Error::config(key, "unknown key")),
            }
        }
        Ok(spec)
    }
}

/// Metrics of one run inside a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub scheduler: SchedulerKind,
    /// Fixed volume for baselines, `None` for TAMP.
    pub b_fixed: Option<f64>,
    pub replication: usize,
    pub seed: u64,
    pub mean_ap: f64,
    pub mean_penalty: f64,
    pub mean_volume: f64,
    pub max_budget_violation: f64,
    pub compliance_slot: u64,
    pub wall_ms: f64,
}

/// Aggregate over replications of one `(axis value, scheduler, b_fixed)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub scheduler: SchedulerKind,
    pub b_fixed: Option<f64>,
    pub replications: usize,
    pub mean_ap: f64,
    pub stderr_ap: f64,
    pub mean_penalty: f64,
    pub stderr_penalty: f64,
    pub mean_volume: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub runs: Vec<RunRecord>,
    pub rows: Vec<SweepRow>,
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(xs);
    if n == 1 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

impl SweepResult {
    /// For each axis value and baseline, the row whose fixed volume gave the
    /// highest mean AP; TAMP rows pass through.
    pub fn best_rows(&self) -> Vec<SweepRow> {
        let mut best: BTreeMap<(u64, SchedulerKind), SweepRow> = BTreeMap::new();
        for row in &self.rows {
            let key = (row.axis_value.to_bits(), row.scheduler);
            match best.get(&key) {
                Some(b) if b.mean_ap >= row.mean_ap => {}
                _ => {
                    best.insert(key, row.clone());
                }
            }
        }
        let mut out: Vec<SweepRow> = best.into_values().collect();
        out.sort_by(|a, b| {
            a.axis_value
                .total_cmp(&b.axis_value)
                .then(sched_order(a.scheduler).cmp(&sched_order(b.scheduler)))
        });
        out
    }

    /// Per-replication AP of one `(axis value, scheduler, b_fixed)` cell, in replication order.
    pub fn replication_ap(&self, axis_value: f64, scheduler: SchedulerKind, b_fixed: Option<f64>) -> Vec<f64> {
        let mut runs: Vec<&RunRecord> = self
            .runs
            .iter()
            .filter(|r| r.axis_value == axis_value && r.scheduler == scheduler && r.b_fixed == b_fixed)
            .collect();
        runs.sort_by_key(|r| r.replication);
        runs.iter().map(|r| r.mean_ap).collect()
    }
}

fn sched_order(kind: SchedulerKind) -> usize {
    SchedulerKind::ALL.iter().position(|k| *k == kind).unwrap_or(usize::MAX)
}

/// Runs the cross product of axis values, schedulers, fixed volumes (for
/// baselines) and replications. Replication `r` uses seed `base.seed + r`
/// for every scheduler, so all schedulers face the same random streams.
pub fn sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    struct Job {
        axis_value: f64,
        kind: SchedulerKind,
        b_fixed: Option<f64>,
        replication: usize,
        cfg: ScenarioConfig,
    }
    let mut jobs = Vec::new();
    for &value in &spec.values {
        let mut cfg_v = spec.base.clone();
        spec.axis.apply(&mut cfg_v, value)?;
        for &kind in &spec.schedulers {
            let fixed: Vec<Option<f64>> = if kind.uses_fixed_volume() {
                cfg_v.b_fixed_list.iter().map(|b| Some(*b)).collect()
            } else {
                vec![None]
            };
            for b_fixed in fixed {
                for replication in 0..spec.replications {
                    let mut cfg = cfg_v.with_scheduler(kind);
                    if let Some(b) = b_fixed {
                        cfg.scheduler.b_fixed_mb = b;
                    }
                    cfg.seed = spec.base.seed.wrapping_add(replication as u64);
                    jobs.push(Job { axis_value: value, kind, b_fixed, replication, cfg });
                }
            }
        }
    }

    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .enumerate()
        .map(|(run_id, job)| {
            let s = run(&job.cfg, RunOptions::default())?;
            Ok(RunRecord {
                run_id,
                axis: spec.axis,
                axis_value: job.axis_value,
                scheduler: job.kind,
                b_fixed: job.b_fixed,
                replication: job.replication,
                seed: job.cfg.seed,
                mean_ap: s.mean_ap,
                mean_penalty: s.mean_penalty,
                mean_volume: s.mean_volume(),
                max_budget_violation: s.budget_violation,
                compliance_slot: s.compliance_slot,
                wall_ms: s.wall_ms,
            })
        })
        .collect::<Result<_>>()?;

    let mut cells: BTreeMap<(usize, usize, Option<u64>), Vec<&RunRecord>> = BTreeMap::new();
    for r in &runs {
        let vi = spec.values.iter().position(|v| *v == r.axis_value).unwrap_or(0);
        cells
            .entry((vi, sched_order(r.scheduler), r.b_fixed.map(f64::to_bits)))
            .or_default()
            .push(r);
    }
    let rows = cells
        .into_values()
        .map(|cell| {
            let first = cell[0];
            let ap: Vec<f64> = cell.iter().map(|r| r.mean_ap).collect();
            let pen: Vec<f64> = cell.iter().map(|r| r.mean_penalty).collect();
            let vol: Vec<f64> = cell.iter().map(|r| r.mean_volume).collect();
            let (mean_ap, stderr_ap) = mean_stderr(&ap);
            let (mean_penalty, stderr_penalty) = mean_stderr(&pen);
            SweepRow {
                axis: first.axis,
                axis_value: first.axis_value,
                scheduler: first.scheduler,
                b_fixed: first.b_fixed,
                replications: cell.len(),
                mean_ap,
                stderr_ap,
                mean_penalty,
                stderr_penalty,
                mean_volume: mean(&vol),
            }
        })
        .collect();
    Ok(SweepResult { runs, rows })
}

/// Delay of each task in the single-region oracle.
#[derive(Clone, Copy, Debug)]
pub enum OracleDelay {
    /// Every task takes exactly this many slots (at least one).
    Fixed(u32),
    Random(TaskDelayDist),
}

/// Single-region refresh policy for the renewal oracle: a new task starts
/// after the region has been idle for `wait_slots` slots.
#[derive(Clone, Copy, Debug)]
pub struct RenewalSetup {
    pub model: PenaltyModel,
    pub b_mb: f64,
    pub wait_slots: u32,
    pub delay: OracleDelay,
    pub horizon: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenewalOutcome {
    /// Per-slot penalty averaged over the simulated horizon.
    pub simulated_avg: f64,
    /// Exact long-run average from the interval decomposition.
    pub renewal_avg: f64,
    /// `(1/(h+1)) [F~(h + d + 1) - E F(d)]` with mean interval `h + 1` and
    /// mean delay `d + 1` slots.
    pub jensen_bound: f64,
}

impl RenewalSetup {
    /// Deterministic periodic refresh: one task every `period` slots, each
    /// lasting `delay` slots.
    pub fn periodic(model: PenaltyModel, b_mb: f64, period: u32, delay: u32, horizon: u64) -> Result<Self> {
        if delay == 0 || period < delay {
            return Err(Error::domain(format!("need 1 <= delay <= period, got delay {delay}, period {period}")));
        }
        Ok(RenewalSetup {
            model,
            b_mb,
            wait_slots: period - delay,
            delay: OracleDelay::Fixed(delay),
            horizon,
            seed: 0,
        })
    }

    fn delay_pmf(&self) -> Vec<f64> {
        match self.delay {
            OracleDelay::Fixed(d) => {
                let mut pmf = vec![0.0; d as usize];
                pmf[d as usize - 1] = 1.0;
                pmf
            }
            OracleDelay::Random(dist) => dist.slot_pmf(1e-13),
        }
    }
}

/// Runs a single region under the setup's refresh policy and compares the
/// simulated average penalty with the renewal-reward value.
///
/// With task durations `D` (slots) and `W` idle slots before each start, the
/// interval between completions is `T = W + D'`. The ages seen in it run
/// from the previous duration `D` up to `D + T - 1`, so the long-run average
/// is `E[F(D + T - 1) - F(D - 1)] / E[T]`.
pub fn renewal_oracle(setup: &RenewalSetup) -> Result<RenewalOutcome> {
    let curve = setup.model.curve(setup.b_mb)?;
    let pmf = setup.delay_pmf();
    let w = setup.wait_slots as usize;
    let max_age = 2 * pmf.len() + w + 2;
    let prefix = curve.discrete_prefix(max_age as u32);
    let f_at = |d: usize| prefix[d];

    let mean_d: f64 = pmf.iter().enumerate().map(|(i, p)| p * (i + 1) as f64).sum();
    let mean_t = w as f64 + mean_d;
    let mut expected_sum = 0.0;
    for (i, pi) in pmf.iter().enumerate() {
        let d_prev = i + 1;
        for (j, pj) in pmf.iter().enumerate() {
            let t = w + j + 1;
            expected_sum += pi * pj * (f_at(d_prev + t - 1) - f_at(d_prev - 1));
        }
    }
    let renewal_avg = expected_sum / mean_t;

    let e_f_d: f64 = pmf.iter().enumerate().map(|(i, p)| p * f_at(i)).sum();
    let h_bar = mean_t - 1.0;
    let d_bar = mean_d - 1.0;
    let jensen_bound = (curve.big_f(h_bar + d_bar + 1.0) - e_f_d) / (h_bar + 1.0);

    let sensors = vec![crate::region::SensorSpec { id: 0, saliency_weight: 1.0 }];
    let mut region = RegionState::new(0, setup.model.kind(), sensors, 0.0, 0.0, Some(setup.b_mb), mean_d)?;
    let mut idle_for = 0u32;
    let mut total = 0.0;
    for k in 0..setup.horizon {
        if region.is_idle() {
            if idle_for >= setup.wait_slots {
                let slots = match setup.delay {
                    OracleDelay::Fixed(d) => d.max(1),
                    OracleDelay::Random(dist) => {
                        let mut rng = event_rng(setup.seed, 0, k, StreamPurpose::Extraction);
                        dist.sample_slots(&mut rng)
                    }
                };
                let delays = total_task_delay((slots as f64 - 0.5) * setup.model.tau_ms, 0.0, 0.0, setup.model.tau_ms);
                region.begin_task(TaskRecord {
                    start_slot: k,
                    finish_slot: k + slots as u64,
                    b_region: setup.b_mb,
                    b_per_sensor: vec![setup.b_mb],
                    bandwidth_per_sensor: vec![1.0],
                    delays,
                })?;
                idle_for = 0;
            } else {
                idle_for += 1;
            }
        }
        total += curve.f(region.h as f64);
        let done = region.tick();
        region.step_aoi(done.as_ref())?;
    }
    Ok(RenewalOutcome {
        simulated_avg: total / setup.horizon as f64,
        renewal_avg,
        jensen_bound,
    })
}

/// Random single-region oracle setup with shifted-exponential delays.
pub fn random_renewal_setup<R: Rng + ?Sized>(rng: &mut R, model: PenaltyModel, horizon: u64) -> RenewalSetup {
    let b_mb = rng.random_range(0.5..16.0);
    let env = crate::env::EnvConfig::default();
    let rate = rng.random_range(1.0..20.0);
    let n_sensors = rng.random_range(1..=4);
    RenewalSetup {
        model,
        b_mb,
        wait_slots: rng.random_range(0..40),
        delay: OracleDelay::Random(task_delay_dist(&env, n_sensors, b_mb, rate)),
        horizon,
        seed: rng.random(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::SchedulerKind;

    fn small(kind: SchedulerKind) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.scheduler.kind = kind;
        cfg.horizon = 400;
        cfg.warmup = 50;
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn runs_every_scheduler() {
        for kind in SchedulerKind::ALL {
            let s = run(&small(kind), RunOptions::default()).unwrap();
            assert!(s.mean_ap > 0.0 && s.mean_ap <= 1.05, "{kind}: {}", s.mean_ap);
            assert!(s.per_region_avg_volume.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn telescoped_budget_identity() {
        for kind in [SchedulerKind::Tamp, SchedulerKind::MaxWeight, SchedulerKind::AgePrio] {
            let mut cfg = small(kind);
            cfg.roster.gamma_mb = 0.3;
            let s = run(&cfg, RunOptions::default()).unwrap();
            for a in 0..s.final_q.len() {
                let lhs = s.per_region_avg_volume[a];
                let rhs = s.per_region_gamma[a] + s.final_q[a] / cfg.horizon as f64;
                assert!(lhs <= rhs + 1e-9, "{kind} region {a}: {lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = small(SchedulerKind::Tamp);
        let opts = RunOptions { record_slots: true, record_trajectory: true };
        let a = run(&cfg, opts).unwrap();
        let b = run(&cfg, opts).unwrap();
        assert_eq!(a.slots, b.slots);
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.mean_ap, b.mean_ap);
    }

    #[test]
    fn saturated_capacity_refreshes_every_slot() {
        let mut cfg = ScenarioConfig { horizon: 10, warmup: 0, ..Default::default() };
        cfg.scheduler.capacity_m = cfg.roster.count;
        cfg.env.rate.lo_mbps = 1e12;
        cfg.env.rate.hi_mbps = 1e12;
        cfg.env.ext.shift_ms = 0.0;
        cfg.env.ext.scale_ms = 1e-9;
        cfg.env.det.shift_ms = 0.0;
        cfg.env.det.scale_ms = 1e-9;
        let s = run(&cfg, RunOptions { record_slots: true, record_trajectory: false }).unwrap();
        for row in &s.slots {
            assert!(row.scheduled, "slot {} region {}", row.slot, row.region);
            assert_eq!(row.h, 1);
        }
    }

    #[test]
    fn periodic_oracle_matches_interval_value() {
        let model = PenaltyModel::default_corridor(10.0, 16.0).unwrap();
        let setup = RenewalSetup::periodic(model, 6.0, 5, 2, 10_000).unwrap();
        let out = renewal_oracle(&setup).unwrap();
        let curve = model.curve(6.0).unwrap();
        let direct: f64 = (2..7).map(|x| curve.f(x as f64)).sum::<f64>() / 5.0;
        assert!((out.renewal_avg - direct).abs() < 1e-12);
        assert!((out.simulated_avg - out.renewal_avg).abs() / out.renewal_avg < 0.005);
        assert!(out.renewal_avg >= out.jensen_bound);
    }

    #[test]
    fn unit_period_oracle_is_constant() {
        let model = PenaltyModel::default_intersection(10.0, 16.0).unwrap();
        let setup = RenewalSetup::periodic(model, 3.0, 1, 1, 1000).unwrap();
        let out = renewal_oracle(&setup).unwrap();
        let f1 = model.penalty(1.0, 3.0).unwrap();
        assert!((out.renewal_avg - f1).abs() < 1e-12);
        assert!((out.simulated_avg - f1).abs() < 1e-12);
    }

    #[test]
    fn sweep_aggregates_replications() {
        let mut base = small(SchedulerKind::Tamp);
        base.horizon = 120;
        base.warmup = 20;
        let spec = SweepSpec {
            axis: SweepAxis::RateHi,
            values: vec![5.0, 20.0],
            schedulers: vec![SchedulerKind::Tamp, SchedulerKind::AgePrio],
            replications: 3,
            base,
        };
        let res = sweep(&spec).unwrap();
        assert_eq!(res.runs.len(), 2 * (3 + 2 * 3));
        assert_eq!(res.rows.len(), 2 * (1 + 2));
        assert!(res.rows.iter().all(|r| r.replications == 3));
        let best = res.best_rows();
        assert_eq!(best.len(), 4);
    }

    #[test]
    fn sweep_file_parses() {
        let text = "seed = 4\n[sim]\nhorizon = 100\nwarmup = 10\n\
                    [sweep]\naxis = 'gamma'\nvalues = [0.5, 1]\nschedulers = ['tamp', 'gea']\nreplications = 2";
        let spec = SweepSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.axis, SweepAxis::Gamma);
        assert_eq!(spec.values, vec![0.5, 1.0]);
        assert_eq!(spec.schedulers, vec![SchedulerKind::Tamp, SchedulerKind::Gea]);
        assert_eq!(spec.base.horizon, 100);
        assert!(SweepSpec::from_toml_str("[sweep]\naxis = 'colour'").is_err());
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_stderr(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
