//! TAMP and the baseline schedulers, plus volume splitting and bandwidth allocation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::env::{event_rng, EnvConfig, StreamPurpose};
use crate::error::{Error, Result};
use crate::penalty::PenaltyModel;
use crate::region::{RegionState, SensorSpec};
use crate::volume::{
    expected_f_of_delay, expected_f_of_delay_mc, optimal_volume, task_delay_dist, DelayModel, ExpectationMethod,
    VolumeBounds,
};

/// Draws per evaluation when `E[F(d, b)]` is estimated by Monte Carlo.
pub const MC_DRAWS: usize = 2000;

/// Maximum bisection steps in [`split_volume`].
pub const SPLIT_MAX_ITERS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Tamp,
    AgePrio,
    RatePrio,
    Gea,
    MaxWeight,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [
        SchedulerKind::Tamp,
        SchedulerKind::AgePrio,
        SchedulerKind::RatePrio,
        SchedulerKind::Gea,
        SchedulerKind::MaxWeight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Tamp => "tamp",
            SchedulerKind::AgePrio => "age_prio",
            SchedulerKind::RatePrio => "rate_prio",
            SchedulerKind::Gea => "gea",
            SchedulerKind::MaxWeight => "max_weight",
        }
    }

    /// Baselines transmit a fixed volume instead of optimizing it.
    pub fn uses_fixed_volume(self) -> bool {
        self != SchedulerKind::Tamp
    }

    /// Schedulers whose priority reads the virtual queue.
    pub fn uses_virtual_queue(self) -> bool {
        matches!(self, SchedulerKind::Tamp | SchedulerKind::MaxWeight)
    }
}

impl std::fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchedulerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("scheduler.kind", format!("unknown scheduler '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub kind: SchedulerKind,
    /// Volume used by the fixed-volume baselines (Mb).
    pub b_fixed_mb: f64,
    /// Tolerance of the sensor split search (Mb).
    pub xi_tol_mb: f64,
    /// Maximum number of concurrently active regions.
    pub capacity_m: usize,
    /// Total bandwidth, shared equally by `capacity_m` region slots.
    pub b_total: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            kind: SchedulerKind::Tamp,
            b_fixed_mb: 8.0,
            xi_tol_mb: 1e-3,
            capacity_m: 5,
            b_total: 1.0,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity_m == 0 {
            return Err(Error::config("scheduler.capacity_m", "must be >= 1"));
        }
        if !(self.b_fixed_mb > 0.0 && self.b_fixed_mb.is_finite()) {
            return Err(Error::config("scheduler.b_fixed_mb", "must be > 0"));
        }
        if !(self.xi_tol_mb > 0.0) {
            return Err(Error::config("scheduler.xi_tol_mb", "must be > 0"));
        }
        if !(self.b_total > 0.0 && self.b_total.is_finite()) {
            return Err(Error::config("scheduler.b_total", "must be > 0"));
        }
        Ok(())
    }

    pub fn b_share(&self) -> f64 {
        self.b_total / self.capacity_m as f64
    }
}

/// Everything a scheduler may look at in one slot.
#[derive(Clone, Copy, Debug)]
pub struct SlotView<'a> {
    pub seed: u64,
    pub slot: u64,
    pub regions: &'a [RegionState],
    /// Penalty model of each region.
    pub models: &'a [PenaltyModel],
    /// Region rate sampled for this slot (Mbps).
    pub rates: &'a [f64],
    pub env: &'a EnvConfig,
    pub bounds: &'a VolumeBounds,
}

impl SlotView<'_> {
    fn check(&self) -> Result<()> {
        let n = self.regions.len();
        if self.models.len() != n || self.rates.len() != n {
            return Err(Error::State(format!(
                "slot {}: {} regions, {} models, {} rates",
                self.slot,
                n,
                self.models.len(),
                self.rates.len()
            )));
        }
        Ok(())
    }

    fn active_count(&self) -> usize {
        self.regions.iter().filter(|r| !r.is_idle()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityEntry {
    /// Region id.
    pub region: usize,
    pub pi: f64,
    pub b_star: f64,
}

/// One slot's scheduling output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decision {
    pub u: Vec<bool>,
    /// Regional volume of each newly scheduled region, 0 elsewhere (Mb).
    pub b_region: Vec<f64>,
    /// Per-sensor volumes, empty for unscheduled regions.
    pub b_sensor: Vec<Vec<f64>>,
    /// Per-sensor bandwidth, empty for unscheduled regions.
    pub bandwidth: Vec<Vec<f64>>,
    /// Bandwidth given to every active region.
    pub b_share: f64,
    /// Positions (in the view) of newly scheduled regions, in selection order.
    /// Every per-region vector here is indexed by position.
    pub selected: Vec<usize>,
    /// Regions whose volume could not be split within the sensor bounds
    /// and was clipped to the nearest feasible total.
    pub clipped: Vec<usize>,
    /// Scores of every evaluated idle region.
    pub priorities: Vec<PriorityEntry>,
}

/// Descending by score, then ascending by region id.
fn rank(a: &PriorityEntry, b: &PriorityEntry) -> Ordering {
    b.pi.total_cmp(&a.pi).then(a.region.cmp(&b.region))
}

/// TAMP score `U(h, b*) - V Q b*` of an idle region.
pub fn tamp_priority(
    region: &RegionState,
    model: &PenaltyModel,
    rate_mbps: f64,
    env: &EnvConfig,
    bounds: &VolumeBounds,
) -> Result<PriorityEntry> {
    tamp_priority_at(region, model, rate_mbps, env, bounds, None)
}

fn tamp_priority_at(
    region: &RegionState,
    model: &PenaltyModel,
    rate_mbps: f64,
    env: &EnvConfig,
    bounds: &VolumeBounds,
    stream: Option<(u64, u64)>,
) -> Result<PriorityEntry> {
    let h = region.h as f64;
    let n = region.n_sensors();
    let b_star = optimal_volume(model, h, rate_mbps, bounds, env, n)?.b;
    let delay = DelayModel::Random(task_delay_dist(env, n, b_star, rate_mbps));
    let e_f_d = match bounds.e_f_method {
        ExpectationMethod::Pmf => expected_f_of_delay(model, b_star, &delay)?.value,
        ExpectationMethod::MonteCarlo => {
            let (seed, slot) = stream.unwrap_or((0, 0));
            let mut rng = event_rng(seed, region.id, slot, StreamPurpose::Expectation);
            expected_f_of_delay_mc(model, b_star, &delay, MC_DRAWS, &mut rng)?.value
        }
    };
    let u = model.utility_index(h, b_star, region.d_bar_est, e_f_d)?;
    Ok(PriorityEntry {
        region: region.id,
        pi: u - region.v * region.q * b_star,
        b_star,
    })
}

/// Value of the per-slot bracket `u * (U - V Q b*)` for one region.
pub fn per_slot_bracket(u: bool, entry: &PriorityEntry) -> f64 {
    if u {
        entry.pi
    } else {
        0.0
    }
}

/// Action maximizing the per-slot bracket, ties resolved toward scheduling.
pub fn bracket_maximizer(entry: &PriorityEntry) -> bool {
    per_slot_bracket(true, entry) >= per_slot_bracket(false, entry)
}

pub fn tamp_schedule(cfg: &SchedulerConfig, view: &SlotView<'_>) -> Result<Decision> {
    view.check()?;
    let mut priorities = Vec::new();
    for (i, region) in view.regions.iter().enumerate() {
        if region.is_idle() {
            let stream = Some((view.seed, view.slot));
            priorities.push(tamp_priority_at(
                region,
                &view.models[i],
                view.rates[i],
                view.env,
                view.bounds,
                stream,
            )?);
        }
    }
    let mut candidates: Vec<PriorityEntry> = priorities.iter().copied().filter(|p| p.pi >= 0.0).collect();
    candidates.sort_by(rank);
    let m_rem = cfg.capacity_m.saturating_sub(view.active_count());
    candidates.truncate(m_rem);
    let picks: Vec<(usize, f64)> = candidates.iter().map(|p| (p.region, p.b_star)).collect();
    assemble(cfg, view, &picks, priorities)
}

/// Score of an idle region under a baseline, using the fixed volume.
pub fn baseline_priority(
    kind: SchedulerKind,
    region: &RegionState,
    model: &PenaltyModel,
    rate_mbps: f64,
    env: &EnvConfig,
    b_fixed_mb: f64,
) -> Result<f64> {
    let h = region.h as f64;
    Ok(match kind {
        SchedulerKind::AgePrio => h,
        SchedulerKind::RatePrio => rate_mbps,
        SchedulerKind::Gea => gea_priority(h, env.expected_task_delay_slots(region.n_sensors(), b_fixed_mb, rate_mbps)),
        SchedulerKind::MaxWeight => {
            let d_bar = region.d_bar_est;
            let w = max_weight_gain(model, h, d_bar, b_fixed_mb)?;
            w / d_bar.max(f64::MIN_POSITIVE) - region.v * region.q * b_fixed_mb
        }
        SchedulerKind::Tamp => {
            return Err(Error::config("scheduler.kind", "tamp is not a baseline"));
        }
    })
}

/// Projected AoI if left idle minus the expected AoI if scheduled, in slots
/// (one slot of waiting).
pub fn gea_priority(h: f64, expected_delay_slots: f64) -> f64 {
    h + 1.0 - expected_delay_slots
}

/// Cumulative-penalty gain of refreshing now: `F~(h + d, b) - F~(d, b)`.
pub fn max_weight_gain(model: &PenaltyModel, h: f64, d_bar: f64, b_mb: f64) -> Result<f64> {
    let curve = model.curve(b_mb)?;
    Ok(curve.big_f(h + d_bar) - curve.big_f(d_bar))
}

pub fn baseline_schedule(cfg: &SchedulerConfig, view: &SlotView<'_>) -> Result<Decision> {
    view.check()?;
    let mut priorities = Vec::new();
    for (i, region) in view.regions.iter().enumerate() {
        if region.is_idle() {
            let pi = baseline_priority(cfg.kind, region, &view.models[i], view.rates[i], view.env, cfg.b_fixed_mb)?;
            priorities.push(PriorityEntry {
                region: region.id,
                pi,
                b_star: cfg.b_fixed_mb,
            });
        }
    }
    let mut ranked = priorities.clone();
    ranked.sort_by(rank);
    let m_rem = cfg.capacity_m.saturating_sub(view.active_count());
    let picks: Vec<(usize, f64)> = ranked.iter().take(m_rem).map(|p| (p.region, cfg.b_fixed_mb)).collect();
    assemble(cfg, view, &picks, priorities)
}

/// Dispatches on the configured scheduler kind.
pub fn schedule(cfg: &SchedulerConfig, view: &SlotView<'_>) -> Result<Decision> {
    match cfg.kind {
        SchedulerKind::Tamp => tamp_schedule(cfg, view),
        _ => baseline_schedule(cfg, view),
    }
}

/// Per-sensor volume bounds used when splitting a region volume: the
/// region floor is spread over the sensors, the ceiling applies per sensor.
pub fn sensor_bounds(bounds: &VolumeBounds, n_sensors: usize) -> (f64, f64) {
    (bounds.b_min / n_sensors.max(1) as f64, bounds.b_max)
}

/// Builds the decision for `picks`, given as `(region id, volume)`.
fn assemble(
    cfg: &SchedulerConfig,
    view: &SlotView<'_>,
    picks: &[(usize, f64)],
    priorities: Vec<PriorityEntry>,
) -> Result<Decision> {
    let n = view.regions.len();
    let b_share = cfg.b_share();
    let mut decision = Decision {
        u: vec![false; n],
        b_region: vec![0.0; n],
        b_sensor: vec![Vec::new(); n],
        bandwidth: vec![Vec::new(); n],
        b_share,
        selected: Vec::with_capacity(picks.len()),
        clipped: Vec::new(),
        priorities,
    };
    for &(id, b) in picks {
        let idx = view
            .regions
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| Error::State(format!("slot {}: no region with id {id}", view.slot)))?;
        let region = &view.regions[idx];
        if !region.is_idle() || decision.u[idx] {
            return Err(Error::Invariant {
                slot: view.slot,
                region: idx,
                reason: "selected a region that is not idle".into(),
            });
        }
        let (lo, hi) = sensor_bounds(view.bounds, region.n_sensors());
        let split = split_volume(b, &region.sensors, lo, hi, cfg.xi_tol_mb)?;
        if split.clipped {
            decision.clipped.push(idx);
        }
        decision.u[idx] = true;
        decision.b_region[idx] = split.volumes.iter().sum();
        decision.bandwidth[idx] = allocate_sensor_bandwidth(&split.volumes, b_share)?;
        decision.b_sensor[idx] = split.volumes;
        decision.selected.push(idx);
    }
    Ok(decision)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub volumes: Vec<f64>,
    /// Confidence threshold reached by the search.
    pub theta: f64,
    /// The requested total was outside the feasible range and was clipped.
    pub clipped: bool,
}

/// Distributes a region volume over sensors by bisecting a confidence
/// threshold `theta`: sensor `n` keeps `clamp(w_n * S * (1 - theta), lo, hi)`.
pub fn split_volume(b_region: f64, sensors: &[SensorSpec], lo: f64, hi: f64, xi: f64) -> Result<SplitResult> {
    if !(b_region > 0.0 && b_region.is_finite()) {
        return Err(Error::domain(format!("region volume must be > 0 Mb, got {b_region}")));
    }
    if !(lo >= 0.0 && lo <= hi) {
        return Err(Error::domain(format!("sensor bounds must satisfy 0 <= lo <= hi, got [{lo}, {hi}]")));
    }
    let total_w: f64 = sensors.iter().map(|s| s.saliency_weight).sum();
    if sensors.is_empty() || !(total_w > 0.0) || sensors.iter().any(|s| s.saliency_weight < 0.0) {
        return Err(Error::domain("saliency weights must be nonnegative with a positive sum"));
    }
    let n = sensors.len() as f64;
    let weights: Vec<f64> = sensors.iter().map(|s| s.saliency_weight / total_w).collect();
    let (floor, ceil) = (lo * n, hi * n);
    if b_region <= floor || b_region >= ceil {
        let at = if b_region <= floor { lo } else { hi };
        return Ok(SplitResult {
            volumes: vec![at; sensors.len()],
            theta: if b_region <= floor { 1.0 } else { 0.0 },
            clipped: b_region < floor || b_region > ceil,
        });
    }

    let min_w = weights.iter().copied().filter(|w| *w > 0.0).fold(f64::INFINITY, f64::min);
    let scale = hi / min_w;
    let retained = |theta: f64| -> Vec<f64> {
        weights.iter().map(|w| (w * scale * (1.0 - theta)).clamp(lo, hi)).collect()
    };
    let (mut t_lo, mut t_hi) = (0.0, 1.0);
    let mut theta = 0.5;
    let mut volumes = retained(theta);
    for _ in 0..SPLIT_MAX_ITERS {
        let sum: f64 = volumes.iter().sum();
        if (sum - b_region).abs() <= xi {
            break;
        }
        if sum > b_region {
            t_lo = theta;
        } else {
            t_hi = theta;
        }
        theta = 0.5 * (t_lo + t_hi);
        volumes = retained(theta);
    }
    let sum: f64 = volumes.iter().sum();
    let residual = b_region - sum;
    for v in &mut volumes {
        *v += residual * *v / sum;
    }
    Ok(SplitResult { volumes, theta, clipped: false })
}

/// Bandwidth proportional to sensor volume so every sensor finishes
/// transmitting at the same time.
pub fn allocate_sensor_bandwidth(b_sensor: &[f64], share: f64) -> Result<Vec<f64>> {
    if b_sensor.iter().any(|b| !(*b >= 0.0)) {
        return Err(Error::domain("sensor volumes must be >= 0"));
    }
    if b_sensor.is_empty() {
        return Ok(Vec::new());
    }
    let total: f64 = b_sensor.iter().sum();
    if total == 0.0 {
        return Ok(vec![share / b_sensor.len() as f64; b_sensor.len()]);
    }
    Ok(b_sensor.iter().map(|b| share * b / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::transmission_delay_ms;
    use crate::penalty::ScenarioKind;
    use crate::region::TaskRecord;
    use approx::assert_relative_eq;

    fn sensors(weights: &[f64]) -> Vec<SensorSpec> {
        weights
            .iter()
            .enumerate()
            .map(|(id, &w)| SensorSpec { id, saliency_weight: w })
            .collect()
    }

    fn region(id: usize, h: u32, q: f64, v: f64) -> RegionState {
        let mut r = RegionState::new(id, ScenarioKind::Corridor, sensors(&[1.0, 0.6]), 2.0, v, Some(16.0), 4.0).unwrap();
        r.h = h;
        r.q = q;
        r
    }

    fn occupy(r: &mut RegionState) {
        let delays = crate::env::total_task_delay(25.0, 0.0, 0.0, 10.0);
        r.begin_task(TaskRecord {
            start_slot: 0,
            finish_slot: 3,
            b_region: 1.0,
            b_per_sensor: vec![0.5, 0.5],
            bandwidth_per_sensor: vec![0.1, 0.1],
            delays,
        })
        .unwrap();
    }

    struct World {
        regions: Vec<RegionState>,
        models: Vec<PenaltyModel>,
        rates: Vec<f64>,
        env: EnvConfig,
        bounds: VolumeBounds,
    }

    impl World {
        fn new(regions: Vec<RegionState>, rates: Vec<f64>) -> Self {
            let models = regions
                .iter()
                .map(|r| PenaltyModel::default_for(r.kind, 10.0, 16.0).unwrap())
                .collect();
            World {
                regions,
                models,
                rates,
                env: EnvConfig::default(),
                bounds: VolumeBounds::default(),
            }
        }

        fn view(&self) -> SlotView<'_> {
            SlotView {
                seed: 0,
                slot: 0,
                regions: &self.regions,
                models: &self.models,
                rates: &self.rates,
                env: &self.env,
                bounds: &self.bounds,
            }
        }
    }

    fn cfg(kind: SchedulerKind, m: usize) -> SchedulerConfig {
        SchedulerConfig { kind, capacity_m: m, ..Default::default() }
    }

    #[test]
    fn zero_queue_priority_is_the_utility() {
        let w = World::new(vec![region(0, 12, 0.0, 1e-3)], vec![8.0]);
        let r = &w.regions[0];
        let p = tamp_priority(r, &w.models[0], 8.0, &w.env, &w.bounds).unwrap();
        let delay = DelayModel::Random(task_delay_dist(&w.env, 2, p.b_star, 8.0));
        let e = expected_f_of_delay(&w.models[0], p.b_star, &delay).unwrap().value;
        let u = w.models[0].utility_index(12.0, p.b_star, r.d_bar_est, e).unwrap();
        assert_eq!(p.pi, u);
    }

    #[test]
    fn larger_queue_lowers_priority() {
        let w = World::new(vec![region(0, 12, 0.0, 1e-3)], vec![8.0]);
        let base = tamp_priority(&w.regions[0], &w.models[0], 8.0, &w.env, &w.bounds).unwrap();
        let mut r = w.regions[0].clone();
        r.q = 50.0;
        let loaded = tamp_priority(&r, &w.models[0], 8.0, &w.env, &w.bounds).unwrap();
        assert_eq!(base.b_star, loaded.b_star);
        assert!(loaded.pi < base.pi);
        assert_relative_eq!(base.pi - loaded.pi, 1e-3 * 50.0 * base.b_star, max_relative = 1e-12);
    }

    #[test]
    fn zero_v_ranks_by_utility() {
        let regions: Vec<_> = (0..8).map(|i| region(i, 2 + 5 * i as u32, 10.0 * i as f64, 0.0)).collect();
        let rates = vec![3.0, 17.0, 8.0, 12.0, 1.5, 19.0, 6.0, 10.0];
        let w = World::new(regions, rates);
        let d = tamp_schedule(&cfg(SchedulerKind::Tamp, 3), &w.view()).unwrap();
        let mut by_u = d.priorities.clone();
        by_u.sort_by(rank);
        let expected: Vec<usize> = by_u.iter().filter(|p| p.pi >= 0.0).take(3).map(|p| p.region).collect();
        assert_eq!(d.selected, expected);
    }

    #[test]
    fn full_capacity_selects_nothing() {
        let mut regions: Vec<_> = (0..3).map(|i| region(i, 10, 0.0, 1e-3)).collect();
        for r in regions.iter_mut().take(2) {
            occupy(r);
        }
        let w = World::new(regions, vec![10.0; 3]);
        for kind in SchedulerKind::ALL {
            let d = schedule(&cfg(kind, 2), &w.view()).unwrap();
            assert!(d.selected.is_empty(), "{kind}");
        }
    }

    #[test]
    fn single_idle_candidate_is_selected() {
        let w = World::new(vec![region(0, 30, 0.0, 1e-3)], vec![10.0]);
        let d = tamp_schedule(&cfg(SchedulerKind::Tamp, 5), &w.view()).unwrap();
        assert!(d.priorities[0].pi >= 0.0);
        assert_eq!(d.selected, vec![0]);
        assert!(d.u[0]);
        assert_relative_eq!(d.b_region[0], d.priorities[0].b_star, epsilon = 1e-9);
    }

    #[test]
    fn negative_score_is_not_a_candidate() {
        let w = World::new(vec![region(0, 30, 1e6, 1.0)], vec![10.0]);
        let d = tamp_schedule(&cfg(SchedulerKind::Tamp, 5), &w.view()).unwrap();
        assert!(d.priorities[0].pi < 0.0);
        assert!(d.selected.is_empty());
    }

    #[test]
    fn bracket_maximizer_matches_threshold() {
        for pi in [-1.0, -1e-12, 0.0, 1e-12, 3.0] {
            let e = PriorityEntry { region: 0, pi, b_star: 1.0 };
            assert_eq!(bracket_maximizer(&e), pi >= 0.0);
        }
    }

    #[test]
    fn age_prio_picks_stalest() {
        let regions = vec![region(0, 9, 0.0, 0.0), region(1, 5, 0.0, 0.0), region(2, 7, 0.0, 0.0)];
        let w = World::new(regions, vec![10.0; 3]);
        let d = baseline_schedule(&cfg(SchedulerKind::AgePrio, 2), &w.view()).unwrap();
        assert_eq!(d.selected, vec![0, 2]);
        assert!(d.b_region.iter().zip(&d.u).all(|(b, u)| !*u || (*b - 8.0).abs() < 1e-9));
    }

    #[test]
    fn rate_prio_picks_fastest() {
        let w = World::new(vec![region(0, 9, 0.0, 0.0), region(1, 5, 0.0, 0.0)], vec![5.0, 15.0]);
        let d = baseline_schedule(&cfg(SchedulerKind::RatePrio, 1), &w.view()).unwrap();
        assert_eq!(d.selected, vec![1]);
    }

    #[test]
    fn gea_slot_units() {
        assert_eq!(gea_priority(10.0, 3.0), 8.0);
    }

    #[test]
    fn baselines_fill_capacity_even_with_negative_scores() {
        let regions: Vec<_> = (0..4).map(|i| region(i, 1, 1e6, 1.0)).collect();
        let w = World::new(regions, vec![10.0; 4]);
        for kind in [SchedulerKind::Gea, SchedulerKind::MaxWeight] {
            let d = baseline_schedule(&cfg(kind, 3), &w.view()).unwrap();
            assert_eq!(d.selected.len(), 3, "{kind}");
        }
    }

    #[test]
    fn max_weight_gain_grows_with_age() {
        let m = PenaltyModel::default_intersection(10.0, 16.0).unwrap();
        let mut prev = 0.0;
        for h in 1..60 {
            let w = max_weight_gain(&m, h as f64, 4.0, 8.0).unwrap();
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn ties_break_by_lowest_id() {
        let regions: Vec<_> = (0..5).map(|i| region(i, 7, 0.0, 0.0)).collect();
        let w = World::new(regions, vec![10.0; 5]);
        for kind in SchedulerKind::ALL {
            let d = schedule(&cfg(kind, 2), &w.view()).unwrap();
            assert_eq!(d.selected, vec![0, 1], "{kind}");
        }
    }

    #[test]
    fn split_symmetric_and_proportional() {
        let s = split_volume(4.0, &sensors(&[1.0, 1.0]), 0.01, 100.0, 1e-3).unwrap();
        assert_relative_eq!(s.volumes[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(s.volumes[1], 2.0, epsilon = 1e-9);
        let s = split_volume(4.0, &sensors(&[3.0, 1.0]), 0.01, 100.0, 1e-3).unwrap();
        assert_relative_eq!(s.volumes[0], 3.0, epsilon = 1e-9);
        assert_relative_eq!(s.volumes[1], 1.0, epsilon = 1e-9);
        assert!(!s.clipped);
    }

    #[test]
    fn split_respects_bounds_when_clamped() {
        let s = split_volume(10.0, &sensors(&[10.0, 1.0]), 0.5, 6.0, 1e-3).unwrap();
        assert_relative_eq!(s.volumes.iter().sum::<f64>(), 10.0, epsilon = 1e-9);
        assert!(s.volumes[0] <= 6.0 + 1e-3);
        assert!(s.volumes[1] >= 0.5 - 1e-3);
    }

    #[test]
    fn infeasible_split_is_clipped_and_flagged() {
        let s = split_volume(0.2, &sensors(&[1.0, 1.0]), 0.5, 6.0, 1e-3).unwrap();
        assert!(s.clipped);
        assert_eq!(s.volumes, vec![0.5, 0.5]);
        let s = split_volume(20.0, &sensors(&[1.0, 1.0]), 0.5, 6.0, 1e-3).unwrap();
        assert!(s.clipped);
        assert_eq!(s.volumes, vec![6.0, 6.0]);
    }

    #[test]
    fn bandwidth_examples() {
        assert_eq!(allocate_sensor_bandwidth(&[1.0, 2.0], 3.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(allocate_sensor_bandwidth(&[5.0], 0.2).unwrap(), vec![0.2]);
        assert_eq!(allocate_sensor_bandwidth(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        let b = [0.7, 2.9, 1.3];
        let share = 0.25;
        let bw = allocate_sensor_bandwidth(&b, share).unwrap();
        let rate = 12.0;
        let delays: Vec<f64> = b
            .iter()
            .zip(&bw)
            .map(|(bn, bwn)| transmission_delay_ms(&[*bn], &[rate * bwn / share], 32.0).unwrap())
            .collect();
        for d in &delays {
            assert!((d - delays[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!("round_robin".parse::<SchedulerKind>(), Err(Error::Config { .. })));
        assert_eq!("max_weight".parse::<SchedulerKind>().unwrap(), SchedulerKind::MaxWeight);
    }
}
