//! Empirical AP surfaces and the penalty functions derived from them.
//!
//! Two scenario surfaces are supported. The intersection surface is a
//! dual exponential in (age, log-volume):
//!
//! ```text
//! ap(h_s, b_log) = alpha * exp(-beta * h_s) - gamma * exp(-delta * b_log) + epsilon
//! ```
//!
//! The corridor surface is a sigmoid in log-volume damped exponentially in age:
//!
//! ```text
//! ap(h_s, b_log) = (kappa * sigmoid(lambda * (b_log - lambda0)) - mu) * exp(-nu * h_s)
//! ```
//!
//! At a fixed volume both reduce to `amp * exp(-rate * h_s) + floor`, which is
//! what [`PenaltyCurve`] works with. Ages enter the scheduler in slots and
//! volumes in megabits; they are mapped to seconds and `log2(bytes)` before
//! the surface is evaluated.
//!
//! For ages inside the compensation window the AP follows a straight line from
//! its zero-age value, dropping by at most `compensation_cap_ap` over the
//! window. Past the window the uncompensated surface applies. Model outputs
//! below zero are clamped to zero AP, and the penalty `rho_max - ap` is
//! clamped to `[0, rho_max]`.

mod curve;
pub mod fit;

pub use curve::PenaltyCurve;
pub use fit::{fit_model, FitReport, FitSample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_COMPENSATION_WINDOW_S: f64 = 0.1;
pub const DEFAULT_COMPENSATION_CAP_AP: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Intersection,
    Corridor,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::Corridor => "corridor",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intersection" => Ok(ScenarioKind::Intersection),
            "corridor" => Ok(ScenarioKind::Corridor),
            other => Err(Error::domain(format!("unknown scenario kind `{other}`"))),
        }
    }
}

/// Dual-exponential surface parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionParams {
    pub alpha: f64,
    /// Age decay, per second.
    pub beta: f64,
    pub gamma: f64,
    /// Volume decay, per log2-byte.
    pub delta: f64,
    pub epsilon: f64,
    pub rho_max: f64,
}

/// Sigmoid-exponential surface parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorridorParams {
    pub kappa: f64,
    pub lambda: f64,
    /// Sigmoid midpoint in log2(bytes).
    pub lambda0: f64,
    /// Age decay, per second.
    pub nu: f64,
    pub mu: f64,
    pub rho_max: f64,
}

impl IntersectionParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("intersection {name} must be finite and >= 0, got {v}")));
            }
        }
        check_rho_max(self.rho_max)
    }

    /// Uncompensated surface value; may leave [0, 1] at the extremes.
    pub fn raw_ap(&self, h_s: f64, b_log: f64) -> f64 {
        self.alpha * (-self.beta * h_s).exp() - self.gamma * (-self.delta * b_log).exp() + self.epsilon
    }
}

impl CorridorParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("lambda0", self.lambda0),
            ("nu", self.nu),
            ("mu", self.mu),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("corridor {name} must be finite and >= 0, got {v}")));
            }
        }
        if self.lambda <= 0.0 {
            return Err(Error::domain("corridor lambda must be > 0"));
        }
        if self.kappa <= self.mu {
            return Err(Error::domain(format!(
                "corridor kappa ({}) must exceed mu ({})",
                self.kappa, self.mu
            )));
        }
        check_rho_max(self.rho_max)
    }

    pub fn raw_ap(&self, h_s: f64, b_log: f64) -> f64 {
        self.volume_amplitude(b_log) * (-self.nu * h_s).exp()
    }

    fn volume_amplitude(&self, b_log: f64) -> f64 {
        self.kappa / (1.0 + (-self.lambda * (b_log - self.lambda0)).exp()) - self.mu
    }
}

fn check_rho_max(rho_max: f64) -> Result<()> {
    if rho_max > 0.0 && rho_max <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("rho_max must lie in (0, 1], got {rho_max}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceParams {
    Intersection(IntersectionParams),
    Corridor(CorridorParams),
}

impl SurfaceParams {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            SurfaceParams::Intersection(_) => ScenarioKind::Intersection,
            SurfaceParams::Corridor(_) => ScenarioKind::Corridor,
        }
    }

    pub fn rho_max(&self) -> f64 {
        match self {
            SurfaceParams::Intersection(p) => p.rho_max,
            SurfaceParams::Corridor(p) => p.rho_max,
        }
    }

    fn set_rho_max(&mut self, rho_max: f64) {
        match self {
            SurfaceParams::Intersection(p) => p.rho_max = rho_max,
            SurfaceParams::Corridor(p) => p.rho_max = rho_max,
        }
    }

    pub fn raw_ap(&self, h_s: f64, b_log: f64) -> f64 {
        match self {
            SurfaceParams::Intersection(p) => p.raw_ap(h_s, b_log),
            SurfaceParams::Corridor(p) => p.raw_ap(h_s, b_log),
        }
    }

    /// `(amp, rate, floor)` such that the surface at `b_log` is
    /// `amp * exp(-rate * h_s) + floor`.
    fn age_profile(&self, b_log: f64) -> (f64, f64, f64) {
        match self {
            SurfaceParams::Intersection(p) => {
                (p.alpha, p.beta, p.epsilon - p.gamma * (-p.delta * b_log).exp())
            }
            SurfaceParams::Corridor(p) => {
                // A non-positive amplitude means the surface is below zero at
                // every age, i.e. zero AP once clamped.
                (p.volume_amplitude(b_log).max(0.0), p.nu, 0.0)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SurfaceParams::Intersection(p) => p.validate(),
            SurfaceParams::Corridor(p) => p.validate(),
        }
    }
}

/// A fitted AP surface plus the slot length and latency-compensation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyModel {
    #[serde(flatten)]
    pub surface: SurfaceParams,
    pub tau_ms: f64,
    #[serde(default = "default_window")]
    pub compensation_window_s: f64,
    #[serde(default = "default_cap")]
    pub compensation_cap_ap: f64,
}

fn default_window() -> f64 {
    DEFAULT_COMPENSATION_WINDOW_S
}

fn default_cap() -> f64 {
    DEFAULT_COMPENSATION_CAP_AP
}

/// Megabits to `log2(bytes)`.
pub fn volume_to_log2_bytes(b_mb: f64) -> f64 {
    (b_mb * 1e6 / 8.0).log2()
}

impl PenaltyModel {
    pub fn new(surface: SurfaceParams, tau_ms: f64) -> Result<Self> {
        let model = PenaltyModel {
            surface,
            tau_ms,
            compensation_window_s: DEFAULT_COMPENSATION_WINDOW_S,
            compensation_cap_ap: DEFAULT_COMPENSATION_CAP_AP,
        };
        model.validate()?;
        Ok(model)
    }

    /// Calibration placeholder for the intersection surface: about 0.75 AP at
    /// zero age and 16 Mb, decaying toward a 0.35 static-scene floor.
    pub fn default_intersection(tau_ms: f64, b_max_mb: f64) -> Result<Self> {
        let surface = SurfaceParams::Intersection(IntersectionParams {
            alpha: 0.40,
            beta: 2.5,
            gamma: 946.0,
            delta: 0.5,
            epsilon: 0.377,
            rho_max: 1.0,
        });
        PenaltyModel::new(surface, tau_ms)?.with_rho_max_at(b_max_mb)
    }

    /// Calibration placeholder for the corridor surface: about 0.75 AP at zero
    /// age and 16 Mb, a steep volume sigmoid and no static floor.
    pub fn default_corridor(tau_ms: f64, b_max_mb: f64) -> Result<Self> {
        let surface = SurfaceParams::Corridor(CorridorParams {
            kappa: 0.824,
            lambda: 1.2,
            lambda0: 18.0,
            nu: 3.0,
            mu: 0.05,
            rho_max: 1.0,
        });
        PenaltyModel::new(surface, tau_ms)?.with_rho_max_at(b_max_mb)
    }

    pub fn default_for(kind: ScenarioKind, tau_ms: f64, b_max_mb: f64) -> Result<Self> {
        match kind {
            ScenarioKind::Intersection => Self::default_intersection(tau_ms, b_max_mb),
            ScenarioKind::Corridor => Self::default_corridor(tau_ms, b_max_mb),
        }
    }

    /// Sets `rho_max` to the surface value at zero age and `b_max_mb`, so the
    /// penalty vanishes exactly at `(0, b_max)`.
    pub fn with_rho_max_at(mut self, b_max_mb: f64) -> Result<Self> {
        if !(b_max_mb > 0.0) {
            return Err(Error::domain("b_max must be positive"));
        }
        let ap0 = self.surface.raw_ap(0.0, volume_to_log2_bytes(b_max_mb)).max(0.0);
        self.surface.set_rho_max(ap0.min(1.0));
        self.validate()?;
        Ok(self)
    }

    pub fn kind(&self) -> ScenarioKind {
        self.surface.kind()
    }

    pub fn rho_max(&self) -> f64 {
        self.surface.rho_max()
    }

    pub fn validate(&self) -> Result<()> {
        self.surface.validate()?;
        if !(self.tau_ms > 0.0 && self.tau_ms.is_finite()) {
            return Err(Error::domain(format!("tau_ms must be > 0, got {}", self.tau_ms)));
        }
        if !(self.compensation_window_s >= 0.0 && self.compensation_window_s.is_finite()) {
            return Err(Error::domain("compensation_window_s must be >= 0"));
        }
        if !(self.compensation_cap_ap >= 0.0 && self.compensation_cap_ap.is_finite()) {
            return Err(Error::domain("compensation_cap_ap must be >= 0"));
        }
        Ok(())
    }

    pub(crate) fn tau_s(&self) -> f64 {
        self.tau_ms / 1000.0
    }

    /// Fixed-volume slice of the model, with `b_log` given directly.
    pub fn curve_at_log(&self, b_log: f64) -> Result<PenaltyCurve> {
        if !b_log.is_finite() {
            return Err(Error::domain(format!("log-volume must be finite, got {b_log}")));
        }
        Ok(PenaltyCurve::new(self, b_log))
    }

    /// Fixed-volume slice of the model for a volume in megabits.
    pub fn curve(&self, b_mb: f64) -> Result<PenaltyCurve> {
        if !(b_mb > 0.0) {
            return Err(Error::domain(format!("volume must be > 0 Mb, got {b_mb}")));
        }
        self.curve_at_log(volume_to_log2_bytes(b_mb))
    }

    /// Compensated, clamped AP at age `h_s` seconds and volume `b_log`.
    pub fn ap_value(&self, h_s: f64, b_log: f64) -> Result<f64> {
        if !(h_s >= 0.0) {
            return Err(Error::domain(format!("age must be >= 0 s, got {h_s}")));
        }
        Ok(self.curve_at_log(b_log)?.ap(h_s / self.tau_s()))
    }

    /// Instantaneous penalty at age `h` slots and volume `b_mb`.
    pub fn penalty(&self, h: f64, b_mb: f64) -> Result<f64> {
        check_age(h)?;
        Ok(self.curve(b_mb)?.f(h))
    }

    /// Integral of the penalty over ages `[0, h]` slots.
    pub fn cumulative_penalty(&self, h: f64, b_mb: f64) -> Result<f64> {
        check_age(h)?;
        Ok(self.curve(b_mb)?.big_f(h))
    }

    /// Discrete cumulative penalty `sum_{x=0}^{d} f(x, b)`.
    pub fn discrete_cumulative(&self, d: u32, b_mb: f64) -> Result<f64> {
        Ok(self.curve(b_mb)?.discrete_sum(d))
    }

    /// Scheduling utility `U(h, b)` given the mean delay `d_bar` and the
    /// expected discrete cumulative penalty over the delay, `e_f_d`.
    pub fn utility_index(&self, h: f64, b_mb: f64, d_bar: f64, e_f_d: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::domain(format!("utility index needs h > 0, got {h}")));
        }
        if !(d_bar >= 0.0) {
            return Err(Error::domain(format!("mean delay must be >= 0, got {d_bar}")));
        }
        Ok(self.curve(b_mb)?.utility(h, d_bar, e_f_d))
    }
}

fn check_age(h: f64) -> Result<()> {
    if h >= 0.0 && !h.is_nan() {
        Ok(())
    } else {
        Err(Error::domain(format!("age must be >= 0 slots, got {h}")))
    }
}

/// Utility index for the intersection surface evaluated in closed form.
///
/// Valid when the surface needs no clamping over `[0, h + d_bar]` and
/// compensation is disabled; with `q = beta * tau_s` and
/// `c0 = rho_max - epsilon + gamma * exp(-delta * b_log)`:
///
/// ```text
/// U = [ -alpha*h*e^{-q(h+d)} + (alpha/q)(1 - e^{-q(h+d)}) - c0*d + E[F(d)] ] / h^2
/// ```
pub fn intersection_utility_closed_form(
    params: &IntersectionParams,
    tau_ms: f64,
    h: f64,
    b_mb: f64,
    d_bar: f64,
    e_f_d: f64,
) -> f64 {
    let q = params.beta * tau_ms / 1000.0;
    let b_log = volume_to_log2_bytes(b_mb);
    let c0 = params.rho_max - params.epsilon + params.gamma * (-params.delta * b_log).exp();
    let decay = (-q * (h + d_bar)).exp();
    let integral_term = if q > 0.0 {
        params.alpha / q * (1.0 - decay)
    } else {
        params.alpha * (h + d_bar)
    };
    (-params.alpha * h * decay + integral_term - c0 * d_bar + e_f_d) / (h * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn models() -> [PenaltyModel; 2] {
        [
            PenaltyModel::default_intersection(10.0, 16.0).unwrap(),
            PenaltyModel::default_corridor(10.0, 16.0).unwrap(),
        ]
    }

    #[test]
    fn intersection_limit_is_alpha_plus_epsilon() {
        let mut m = PenaltyModel::default_intersection(10.0, 16.0).unwrap();
        m.compensation_window_s = 0.0;
        let SurfaceParams::Intersection(p) = m.surface else { unreachable!() };
        let ap = m.ap_value(0.0, 400.0).unwrap();
        assert_relative_eq!(ap, p.alpha + p.epsilon, epsilon = 1e-12);
    }

    #[test]
    fn corridor_sigmoid_midpoint() {
        let m = PenaltyModel::default_corridor(10.0, 16.0).unwrap();
        let SurfaceParams::Corridor(p) = m.surface else { unreachable!() };
        let ap = m.ap_value(0.0, p.lambda0).unwrap();
        assert_relative_eq!(ap, p.kappa / 2.0 - p.mu, epsilon = 1e-12);
    }

    #[test]
    fn intersection_direct_formula_outside_window() {
        let m = PenaltyModel::default_intersection(10.0, 16.0).unwrap();
        // 0.4*e^{-0.5} - 946*e^{-10} + 0.377 evaluated independently
        let expected = 0.4 * (-0.5f64).exp() - 946.0 * (-10.0f64).exp() + 0.377;
        assert!((m.ap_value(0.2, 20.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn negative_or_nan_age_is_rejected() {
        let m = models()[0];
        assert!(matches!(m.ap_value(-0.1, 18.0), Err(Error::Domain(_))));
        assert!(matches!(m.ap_value(f64::NAN, 18.0), Err(Error::Domain(_))));
        assert!(matches!(m.penalty(-1.0, 2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn nonpositive_volume_is_rejected() {
        for m in models() {
            assert!(matches!(m.penalty(3.0, 0.0), Err(Error::Domain(_))));
            assert!(matches!(m.penalty(3.0, -2.0), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn zero_penalty_at_fresh_max_volume() {
        for m in models() {
            assert_eq!(m.penalty(0.0, 16.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn penalty_is_rho_max_minus_ap() {
        let m = models()[0];
        let h = 30.0;
        let b = 2.0;
        let ap = m.ap_value(h * 0.010, (b * 1e6 / 8.0f64).log2()).unwrap();
        assert_relative_eq!(m.penalty(h, b).unwrap(), m.rho_max() - ap, epsilon = 1e-12);
    }

    #[test]
    fn compensation_caps_the_drop_inside_window() {
        for m in models() {
            let b_log = volume_to_log2_bytes(8.0);
            let ap0 = m.ap_value(0.0, b_log).unwrap();
            let just_inside = m.ap_value(0.0999, b_log).unwrap();
            assert!(ap0 - just_inside <= m.compensation_cap_ap + 1e-12);
            let mid = m.ap_value(0.05, b_log).unwrap();
            assert_relative_eq!(ap0 - mid, (ap0 - just_inside) * 0.05 / 0.0999, epsilon = 1e-9);
        }
    }

    #[test]
    fn fixed_default_values_stay_in_sanity_band() {
        for m in models() {
            for i in 0..=64 {
                let h_s = i as f64 * 0.05;
                let (lo, hi) = (volume_to_log2_bytes(0.5), volume_to_log2_bytes(16.0));
                for j in 0..=64 {
                    let b_log = lo + j as f64 * (hi - lo) / 64.0;
                    let raw = m.surface.raw_ap(h_s, b_log);
                    assert!((-0.05..=1.05).contains(&raw), "{raw} at ({h_s}, {b_log})");
                }
            }
        }
    }

    #[test]
    fn corridor_rejects_kappa_below_mu() {
        let p = CorridorParams {
            kappa: 0.1,
            lambda: 1.0,
            lambda0: 18.0,
            nu: 3.0,
            mu: 0.2,
            rho_max: 0.7,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn utility_rejects_zero_age() {
        let m = models()[1];
        assert!(matches!(m.utility_index(0.0, 4.0, 3.0, 0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn utility_closed_form_matches_generic() {
        let mut m = PenaltyModel::default_intersection(10.0, 16.0).unwrap();
        m.compensation_window_s = 0.0;
        let SurfaceParams::Intersection(p) = m.surface else { unreachable!() };
        for &(h, b, d, c) in &[(1.0, 2.0, 3.0, 0.4), (7.5, 8.0, 4.2, 1.1), (40.0, 14.0, 2.5, 0.05)] {
            let generic = m.utility_index(h, b, d, c).unwrap();
            let closed = intersection_utility_closed_form(&p, m.tau_ms, h, b, d, c);
            assert!((generic - closed).abs() < 1e-9, "{generic} vs {closed}");
        }
    }

    #[test]
    fn model_block_round_trips_through_toml() {
        for m in models() {
            let text = toml::to_string(&m).unwrap();
            assert!(text.contains("kind = "));
            let back: PenaltyModel = toml::from_str(&text).unwrap();
            assert_eq!(back, m);
        }
    }
}
