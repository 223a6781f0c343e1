//! Self-check batteries run by the `oracle` subcommand: the single-region
//! renewal identity and lower bound, and the shape of the refresh-age
//! objective.

use rand::Rng;

use crate::env::{event_rng, StreamPurpose};
use crate::error::Result;
use crate::penalty::{CorridorParams, IntersectionParams, PenaltyModel, PenaltyCurve, SurfaceParams};
use crate::sim::{random_renewal_setup, renewal_oracle, RenewalSetup};

/// Points on the age grid of the refresh-objective checks.
pub const P2_GRID_POINTS: usize = 512;
/// Random levels probed per case by the sublevel-set check.
pub const SUBLEVEL_LEVELS: usize = 10;
/// Relative tolerance between simulated and renewal averages.
pub const RENEWAL_REL_TOL: f64 = 0.005;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn default_models(tau_ms: f64, b_max: f64) -> Result<[PenaltyModel; 2]> {
    Ok([
        PenaltyModel::default_intersection(tau_ms, b_max)?,
        PenaltyModel::default_corridor(tau_ms, b_max)?,
    ])
}

/// Periodic refresh against the interval decomposition, plus the
/// Jensen-type lower bound over `n_random` random setups.
pub fn renewal_battery(seed: u64, horizon: u64, n_random: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for model in default_models(10.0, 16.0)? {
        let kind = model.kind().as_str();
        let setup = RenewalSetup::periodic(model, 8.0, 5, 2, horizon)?;
        let out = renewal_oracle(&setup)?;
        let rel = (out.simulated_avg - out.renewal_avg).abs() / out.renewal_avg;
        checks.push(Check::new(
            format!("renewal periodic P=5 d=2 ({kind})"),
            rel < RENEWAL_REL_TOL,
            format!("simulated {:.6} renewal {:.6} rel {rel:.2e}", out.simulated_avg, out.renewal_avg),
        ));
    }

    let mut rng = event_rng(seed, 0, 0, StreamPurpose::Expectation);
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    for i in 0..n_random {
        let model = random_model(&mut rng)?;
        let setup = random_renewal_setup(&mut rng, model, horizon);
        let out = renewal_oracle(&setup)?;
        let slack = out.renewal_avg - out.jensen_bound;
        worst = worst.min(slack);
        if slack < -1e-12 {
            violations += 1;
            checks.push(Check::new(
                format!("jensen bound case {i}"),
                false,
                format!("exact {:.6} < bound {:.6}", out.renewal_avg, out.jensen_bound),
            ));
        }
    }
    checks.push(Check::new(
        format!("jensen lower bound ({n_random} random setups)"),
        violations == 0,
        format!("{violations} violations, min slack {worst:.3e}"),
    ));
    Ok(checks)
}

/// Random surface near the defaults, calibrated so the penalty vanishes at
/// zero age and 16 Mb.
pub fn random_model<R: Rng + ?Sized>(rng: &mut R) -> Result<PenaltyModel> {
    let mut jitter = || rng.random_range(0.7..1.3);
    let surface = if jitter() < 1.0 {
        SurfaceParams::Intersection(IntersectionParams {
            alpha: 0.40 * jitter(),
            beta: 2.5 * jitter(),
            gamma: 946.0 * jitter(),
            delta: 0.5,
            epsilon: 0.377 * jitter(),
            rho_max: 1.0,
        })
    } else {
        SurfaceParams::Corridor(CorridorParams {
            kappa: 0.824 * jitter(),
            lambda: 1.2 * jitter(),
            lambda0: 17.0,
            nu: 3.0 * jitter(),
            mu: 0.05,
            rho_max: 1.0,
        })
    };
    PenaltyModel::new(surface, 10.0)?.with_rho_max_at(16.0)
}

/// One refresh-objective case: `y(h) = (F~(h + d_bar) - c) / h` with `c`
/// placed so that the stationary point sits at `h_root`.
#[derive(Clone, Copy, Debug)]
pub struct P2Case {
    pub model: PenaltyModel,
    pub b_mb: f64,
    pub d_bar: f64,
    pub h_root: f64,
    pub e_f_d: f64,
}

impl P2Case {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Result<Self> {
        let model = random_model(rng)?;
        let b_mb = rng.random_range(2.0..16.0);
        let d_bar = rng.random_range(0.0..10.0);
        let h_root = rng.random_range(1.0..40.0);
        let curve = model.curve(b_mb)?;
        let x = h_root + d_bar;
        let e_f_d = curve.big_f(x) - h_root * curve.f(x);
        Ok(P2Case { model, b_mb, d_bar, h_root, e_f_d })
    }

    /// Uniform age grid covering the stationary point with margin.
    pub fn grid(&self) -> Vec<f64> {
        let lo = self.h_root / 20.0;
        let hi = 4.0 * self.h_root + 20.0;
        let step = (hi - lo) / (P2_GRID_POINTS - 1) as f64;
        (0..P2_GRID_POINTS).map(|i| lo + step * i as f64).collect()
    }

    fn curve(&self) -> Result<PenaltyCurve> {
        self.model.curve(self.b_mb)
    }
}

/// Number of interior local minima of a sampled sequence, counting a flat
/// run as one.
pub fn local_minima(ys: &[f64]) -> usize {
    let slopes: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).filter(|s| *s != 0.0).collect();
    let mut count = 0;
    if slopes.first().is_some_and(|s| *s > 0.0) {
        count += 1;
    }
    count + slopes.windows(2).filter(|w| w[0] < 0.0 && w[1] > 0.0).count()
        + usize::from(slopes.last().is_some_and(|s| *s < 0.0))
}

/// Whether `{i : ys[i] <= level}` is a contiguous index range.
pub fn sublevel_is_interval(ys: &[f64], level: f64) -> bool {
    let inside: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] <= level).collect();
    inside.windows(2).all(|w| w[1] == w[0] + 1)
}

/// Single local minimum and interval sublevel sets on `n_cases` random
/// cases, and agreement of the grid minimizer with the sign change of `U`.
pub fn p2_battery(seed: u64, n_cases: usize) -> Result<Vec<Check>> {
    let mut rng = event_rng(seed, 1, 0, StreamPurpose::Expectation);
    let mut shape_fail = Vec::new();
    let mut kkt_fail = Vec::new();
    for i in 0..n_cases {
        let case = P2Case::random(&mut rng)?;
        let curve = case.curve()?;
        let grid = case.grid();
        let ys: Vec<f64> = grid.iter().map(|&h| curve.refresh_objective(h, case.d_bar, case.e_f_d)).collect();
        let minima = local_minima(&ys);
        let (y_min, y_max) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
        let intervals = (0..SUBLEVEL_LEVELS).all(|_| sublevel_is_interval(&ys, rng.random_range(y_min..=y_max)));
        if minima != 1 || !intervals {
            shape_fail.push(format!("case {i}: {minima} minima, intervals {intervals}"));
        }

        let argmin = (0..ys.len()).min_by(|&a, &b| ys[a].total_cmp(&ys[b])).unwrap_or(0);
        let sign_change = grid
            .iter()
            .position(|&h| curve.utility(h, case.d_bar, case.e_f_d) >= 0.0)
            .unwrap_or(grid.len());
        if argmin.abs_diff(sign_change) > 1 {
            kkt_fail.push(format!("case {i}: argmin index {argmin}, sign change index {sign_change}"));
        }
    }
    let summary = |fails: &[String]| {
        if fails.is_empty() {
            format!("{n_cases} cases")
        } else {
            fails.join("; ")
        }
    };
    Ok(vec![
        Check::new(
            format!("refresh objective quasi-convex ({n_cases} cases, {P2_GRID_POINTS}-point grid)"),
            shape_fail.is_empty(),
            summary(&shape_fail),
        ),
        Check::new(
            "grid minimizer within one step of the sign change of U",
            kkt_fail.is_empty(),
            summary(&kkt_fail),
        ),
    ])
}

/// All batteries with their default sizes.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut checks = renewal_battery(seed, 10_000, 50)?;
    checks.extend(p2_battery(seed, 20)?);
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_minimum_counting() {
        assert_eq!(local_minima(&[3.0, 2.0, 1.0, 2.0, 3.0]), 1);
        assert_eq!(local_minima(&[3.0, 1.0, 2.0, 1.0, 3.0]), 2);
        assert_eq!(local_minima(&[1.0, 2.0, 3.0]), 1);
        assert_eq!(local_minima(&[3.0, 2.0, 2.0, 2.0, 3.0]), 1);
    }

    #[test]
    fn sublevel_intervals() {
        let ys = [3.0, 1.0, 2.0, 1.0, 3.0];
        assert!(sublevel_is_interval(&ys, 0.5));
        assert!(sublevel_is_interval(&ys, 2.5));
        assert!(!sublevel_is_interval(&ys, 1.5));
    }

    #[test]
    fn stationary_point_has_zero_utility() {
        let mut rng = event_rng(3, 0, 0, StreamPurpose::Expectation);
        for _ in 0..20 {
            let case = P2Case::random(&mut rng).unwrap();
            let u = case.curve().unwrap().utility(case.h_root, case.d_bar, case.e_f_d);
            assert!(u.abs() < 1e-12, "U at root {u}");
        }
    }

    #[test]
    fn batteries_pass_on_defaults() {
        let checks = run_all(0).unwrap();
        for c in &checks {
            assert!(c.passed, "{}", c.line());
        }
    }
}
