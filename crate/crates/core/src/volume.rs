//! Per-slot volume optimization and the refresh-age objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, TaskDelayDist};
use crate::error::{Error, Result};
use crate::penalty::{PenaltyCurve, PenaltyModel};

/// Mass left in the delay tail when the slot pmf is truncated.
const PMF_TAIL_TOL: f64 = 1e-12;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeBounds {
    pub b_min: f64,
    pub b_max: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_golden_tol")]
    pub golden_tol_mb: f64,
    /// How the scheduler evaluates `E[F(d, b)]`.
    #[serde(default = "default_e_f_method")]
    pub e_f_method: ExpectationMethod,
}

fn default_e_f_method() -> ExpectationMethod {
    ExpectationMethod::Pmf
}

fn default_grid_points() -> usize {
    64
}

fn default_golden_tol() -> f64 {
    1e-3
}

impl Default for VolumeBounds {
    fn default() -> Self {
        VolumeBounds {
            b_min: 0.5,
            b_max: 16.0,
            grid_points: default_grid_points(),
            golden_tol_mb: default_golden_tol(),
            e_f_method: default_e_f_method(),
        }
    }
}

impl VolumeBounds {
    pub fn new(b_min: f64, b_max: f64) -> Result<Self> {
        let bounds = VolumeBounds { b_min, b_max, ..Default::default() };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_min > 0.0 && self.b_min < self.b_max && self.b_max.is_finite()) {
            return Err(Error::domain(format!(
                "volume bounds need 0 < b_min < b_max, got [{}, {}]",
                self.b_min, self.b_max
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::domain("grid_points must be >= 2"));
        }
        if !(self.golden_tol_mb > 0.0) {
            return Err(Error::domain("golden_tol_mb must be > 0"));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.b_min + self.b_max)
    }

    pub fn clamp(&self, b: f64) -> f64 {
        b.clamp(self.b_min, self.b_max)
    }

    fn grid_step(&self) -> f64 {
        (self.b_max - self.b_min) / (self.grid_points - 1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationMethod {
    Pmf,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpectedCumulative {
    pub value: f64,
    pub method: ExpectationMethod,
}

/// Where the task delay (in slots) comes from.
#[derive(Clone, Copy, Debug)]
pub enum DelayModel {
    Fixed(u32),
    Random(TaskDelayDist),
}

/// Delay distribution of a region task of volume `b_mb` at region rate `rate_mbps`.
pub fn task_delay_dist(env: &EnvConfig, n_sensors: usize, b_mb: f64, rate_mbps: f64) -> TaskDelayDist {
    let tr = if rate_mbps.is_infinite() {
        0.0
    } else {
        env.region_transmission_ms(b_mb, rate_mbps)
    };
    env.delay_distribution(n_sensors, tr)
}

/// `E[F(d, b)]` with `F(d, b) = sum_{x=0}^{d} f(x, b)`, using the slot pmf.
pub fn expected_f_of_delay(model: &PenaltyModel, b_mb: f64, delay: &DelayModel) -> Result<ExpectedCumulative> {
    let curve = model.curve(b_mb)?;
    let value = match delay {
        DelayModel::Fixed(d) => curve.discrete_sum(*d),
        DelayModel::Random(dist) => {
            let pmf = dist.slot_pmf(PMF_TAIL_TOL);
            let prefix = curve.discrete_prefix(pmf.len() as u32);
            let covered: f64 = pmf.iter().sum();
            let body: f64 = pmf.iter().zip(&prefix[1..]).map(|(p, f)| p * f).sum();
            body + (1.0 - covered).max(0.0) * prefix[pmf.len()]
        }
    };
    Ok(ExpectedCumulative {
        value: value.max(0.0),
        method: ExpectationMethod::Pmf,
    })
}

/// Monte Carlo estimate of `E[F(d, b)]` from `n_draws` sampled delays.
pub fn expected_f_of_delay_mc<R: Rng + ?Sized>(
    model: &PenaltyModel,
    b_mb: f64,
    delay: &DelayModel,
    n_draws: usize,
    rng: &mut R,
) -> Result<ExpectedCumulative> {
    if n_draws == 0 {
        return Err(Error::domain("Monte Carlo needs at least one draw"));
    }
    let curve = model.curve(b_mb)?;
    let draws: Vec<u32> = match delay {
        DelayModel::Fixed(d) => vec![*d; n_draws],
        DelayModel::Random(dist) => (0..n_draws).map(|_| dist.sample_slots(rng)).collect(),
    };
    let max_d = draws.iter().copied().max().unwrap_or(0);
    let prefix = curve.discrete_prefix(max_d);
    let value = draws.iter().map(|&d| prefix[d as usize]).sum::<f64>() / n_draws as f64;
    Ok(ExpectedCumulative {
        value,
        method: ExpectationMethod::MonteCarlo,
    })
}

/// `F(d, b)` at fractional `d`, linear between neighbouring whole slots.
pub fn interpolated_discrete_sum(curve: &PenaltyCurve, d: f64) -> f64 {
    let lo = d.floor();
    let base = curve.discrete_sum(lo.min(u32::MAX as f64) as u32);
    let frac = d - lo;
    if frac > 0.0 {
        base + frac * curve.f(lo + 1.0)
    } else {
        base
    }
}

/// `(1/h) [F~(h + d, b) - F(d, b)]`, with `F` interpolated at fractional `d`.
pub fn per_slot_objective(model: &PenaltyModel, h: f64, d: f64, b_mb: f64) -> Result<f64> {
    if !(h >= 1.0) {
        return Err(Error::domain(format!("per-slot objective needs h >= 1, got {h}")));
    }
    if !(d >= 0.0) {
        return Err(Error::domain(format!("delay must be >= 0 slots, got {d}")));
    }
    let curve = model.curve(b_mb)?;
    Ok((curve.big_f(h + d) - interpolated_discrete_sum(&curve, d)) / h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeChoice {
    pub b: f64,
    pub objective: f64,
}

/// Minimizes the per-slot objective over `b` in the bounds, with the delay
/// set to its expectation at `b` and the given region rate.
pub fn optimal_volume(
    model: &PenaltyModel,
    h: f64,
    rate_mbps: f64,
    bounds: &VolumeBounds,
    env: &EnvConfig,
    n_sensors: usize,
) -> Result<VolumeChoice> {
    if !(rate_mbps > 0.0) {
        return Err(Error::domain(format!("rate must be > 0 Mbps, got {rate_mbps}")));
    }
    bounds.validate()?;
    let eval = |b: f64| -> Result<f64> {
        let d = env.expected_task_delay_slots(n_sensors, b, rate_mbps);
        per_slot_objective(model, h, d, b)
    };

    let step = bounds.grid_step();
    let n = bounds.grid_points;
    let mut best = VolumeChoice { b: bounds.b_min, objective: f64::INFINITY };
    let mut best_idx = 0;
    for i in 0..n {
        let b = if i + 1 == n { bounds.b_max } else { bounds.b_min + step * i as f64 };
        let y = eval(b)?;
        if y < best.objective {
            best = VolumeChoice { b, objective: y };
            best_idx = i;
        }
    }

    let mut lo = bounds.b_min + step * best_idx.saturating_sub(1) as f64;
    let mut hi = bounds.clamp(bounds.b_min + step * (best_idx + 1) as f64);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut y1 = eval(x1)?;
    let mut y2 = eval(x2)?;
    while hi - lo > bounds.golden_tol_mb {
        if y1 <= y2 {
            hi = x2;
            x2 = x1;
            y2 = y1;
            x1 = hi - INV_PHI * (hi - lo);
            y1 = eval(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            y1 = y2;
            x2 = lo + INV_PHI * (hi - lo);
            y2 = eval(x2)?;
        }
    }
    for (b, y) in [(x1, y1), (x2, y2)] {
        if y < best.objective {
            best = VolumeChoice { b, objective: y };
        }
    }
    Ok(best)
}

/// Refresh-age objective `(1/h)(F~(h + d_bar, b) - e_f_d)`.
pub fn p2_objective(model: &PenaltyModel, h: f64, d_bar: f64, b_mb: f64, e_f_d: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("refresh objective needs h > 0, got {h}")));
    }
    Ok(model.curve(b_mb)?.refresh_objective(h, d_bar, e_f_d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::event_rng;
    use crate::env::StreamPurpose;
    use approx::assert_relative_eq;

    fn models() -> Vec<PenaltyModel> {
        vec![
            PenaltyModel::default_intersection(10.0, 16.0).unwrap(),
            PenaltyModel::default_corridor(10.0, 16.0).unwrap(),
        ]
    }

    #[test]
    fn fixed_delay_gives_point_value() {
        for m in models() {
            let e = expected_f_of_delay(&m, 4.0, &DelayModel::Fixed(3)).unwrap();
            assert_eq!(e.value, m.discrete_cumulative(3, 4.0).unwrap());
        }
    }

    #[test]
    fn pmf_matches_monte_carlo() {
        let env = EnvConfig::default();
        for m in models() {
            for (b, rate) in [(2.0, 5.0), (8.0, 10.0), (16.0, 1.0)] {
                let delay = DelayModel::Random(task_delay_dist(&env, 2, b, rate));
                let pmf = expected_f_of_delay(&m, b, &delay).unwrap().value;
                let mut rng = event_rng(7, 0, 0, StreamPurpose::Expectation);
                let mc = expected_f_of_delay_mc(&m, b, &delay, 100_000, &mut rng).unwrap().value;
                assert!((pmf - mc).abs() / mc < 0.01, "pmf {pmf} mc {mc}");
            }
        }
    }

    #[test]
    fn smaller_volume_costs_more_at_equal_delay() {
        let env = EnvConfig::default();
        let dist = DelayModel::Random(task_delay_dist(&env, 2, 8.0, 10.0));
        for m in models() {
            let lo = expected_f_of_delay(&m, 0.5, &dist).unwrap().value;
            let hi = expected_f_of_delay(&m, 16.0, &dist).unwrap().value;
            assert!(lo > hi);
        }
    }

    #[test]
    fn objective_tends_to_plateau() {
        for m in models() {
            let plateau = m.penalty(1e9, 4.0).unwrap();
            let y = per_slot_objective(&m, 1e7, 3.0, 4.0).unwrap();
            assert_relative_eq!(y, plateau, max_relative = 1e-4);
        }
    }

    #[test]
    fn objective_within_riemann_bounds() {
        for m in models() {
            let curve = m.curve(6.0).unwrap();
            for h in [1u32, 3, 10, 40, 200] {
                for d in [1u32, 2, 5, 9] {
                    let y = per_slot_objective(&m, h as f64, d as f64, 6.0).unwrap();
                    let f_d = curve.discrete_sum(d);
                    let n = h + d;
                    let left: f64 = (0..n).map(|x| curve.f(x as f64)).sum();
                    let right: f64 = (1..=n).map(|x| curve.f(x as f64)).sum();
                    let lower = (left - f_d) / h as f64;
                    let upper = (right - f_d) / h as f64;
                    assert!(y >= lower - 1e-12 && y <= upper + 1e-12, "{lower} <= {y} <= {upper}");
                }
            }
        }
    }

    #[test]
    fn objective_non_increasing_in_volume_at_fixed_delay() {
        for m in models() {
            for h in [2.0, 5.0, 30.0] {
                let mut prev = f64::INFINITY;
                for i in 0..=40 {
                    let b = 0.5 + i as f64 * 15.5 / 40.0;
                    let y = per_slot_objective(&m, h, 4.0, b).unwrap();
                    assert!(y <= prev + 1e-12);
                    prev = y;
                }
            }
        }
    }

    #[test]
    fn objective_can_rise_with_volume_at_unit_age() {
        // At h = 1 the sum over d + 1 points outweighs the integral over d,
        // so a larger f(0) lowers the objective near saturation.
        let m = PenaltyModel::default_corridor(10.0, 16.0).unwrap();
        let small = per_slot_objective(&m, 1.0, 4.0, 0.5).unwrap();
        let larger = per_slot_objective(&m, 1.0, 4.0, 0.8875).unwrap();
        assert!(larger > small);
    }

    #[test]
    fn interpolation_is_exact_at_whole_slots() {
        let m = &models()[0];
        let curve = m.curve(3.0).unwrap();
        for d in 0..8u32 {
            assert_eq!(interpolated_discrete_sum(&curve, d as f64), curve.discrete_sum(d));
        }
        let mid = interpolated_discrete_sum(&curve, 2.5);
        assert_relative_eq!(mid, 0.5 * (curve.discrete_sum(2) + curve.discrete_sum(3)), epsilon = 1e-15);
    }

    #[test]
    fn objective_rejects_zero_age() {
        let m = &models()[0];
        assert!(per_slot_objective(m, 0.0, 2.0, 4.0).is_err());
        assert!(p2_objective(m, 0.0, 2.0, 4.0, 0.1).is_err());
    }

    #[test]
    fn infinite_rate_picks_largest_volume() {
        let env = EnvConfig::default();
        let bounds = VolumeBounds::default();
        for m in models() {
            for h in [2.0, 10.0, 100.0] {
                let choice = optimal_volume(&m, h, f64::INFINITY, &bounds, &env, 2).unwrap();
                assert_eq!(choice.b, bounds.b_max);
            }
        }
    }

    fn dense_scan(m: &PenaltyModel, h: f64, rate: f64, bounds: &VolumeBounds, env: &EnvConfig) -> (f64, f64) {
        let mut best = (bounds.b_min, f64::INFINITY);
        for i in 0..4096 {
            let b = bounds.b_min + (bounds.b_max - bounds.b_min) * i as f64 / 4095.0;
            let d = env.expected_task_delay_slots(2, b, rate);
            let y = per_slot_objective(m, h, d, b).unwrap();
            if y < best.1 {
                best = (b, y);
            }
        }
        best
    }

    #[test]
    fn grid_golden_matches_dense_scan() {
        let env = EnvConfig::default();
        let bounds = VolumeBounds::default();
        let step = (bounds.b_max - bounds.b_min) / (bounds.grid_points - 1) as f64;
        for m in models() {
            for h in [1.0, 2.0, 5.0, 12.0, 40.0, 150.0] {
                for rate in [1.0, 3.0, 7.5, 20.0, 60.0] {
                    let choice = optimal_volume(&m, h, rate, &bounds, &env, 2).unwrap();
                    let (b_scan, y_scan) = dense_scan(&m, h, rate, &bounds, &env);
                    assert!(
                        (choice.b - b_scan).abs() <= step + 1e-9,
                        "h={h} rate={rate}: {} vs scan {b_scan}",
                        choice.b
                    );
                    assert!(choice.objective <= y_scan + 1e-4 * y_scan.abs(), "h={h} rate={rate}: {} vs {y_scan}", choice.objective);
                }
            }
        }
    }

    #[test]
    fn volume_grows_with_rate() {
        let env = EnvConfig::default();
        let bounds = VolumeBounds::default();
        for m in models() {
            for h in [1.0, 5.0, 20.0, 80.0] {
                let slow = dense_scan(&m, h, 1.0, &bounds, &env).0;
                let fast = dense_scan(&m, h, 20.0, &bounds, &env).0;
                assert!(slow <= fast, "h={h}: b*(1)={slow} b*(20)={fast}");
                let slow = optimal_volume(&m, h, 1.0, &bounds, &env, 2).unwrap().b;
                let fast = optimal_volume(&m, h, 20.0, &bounds, &env, 2).unwrap().b;
                assert!(slow <= fast);
            }
        }
    }

    #[test]
    fn optimal_volume_is_deterministic() {
        let env = EnvConfig::default();
        let bounds = VolumeBounds::default();
        let m = &models()[1];
        let a = optimal_volume(m, 7.0, 4.2, &bounds, &env, 2).unwrap();
        let b = optimal_volume(m, 7.0, 4.2, &bounds, &env, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn p2_blows_up_near_zero() {
        for m in models() {
            let curve = m.curve(4.0).unwrap();
            let c = curve.big_f(3.0) - 0.05;
            let near = p2_objective(&m, 1e-6, 3.0, 4.0, c).unwrap();
            assert!(near > 1e3);
        }
    }

    #[test]
    fn bounds_validation() {
        assert!(VolumeBounds::new(0.0, 1.0).is_err());
        assert!(VolumeBounds::new(2.0, 1.0).is_err());
        assert!(VolumeBounds::new(0.5, 16.0).is_ok());
    }
}
