//! Random delays and channel rates, and the deterministic delay pipeline.
//!
//! A task's physical delay is extraction (slowest sensor) + transmission
//! (slowest sensor) + detection, rounded up to whole slots with a minimum of
//! one slot.
//!
//! Every random draw comes from a stream keyed by `(seed, region, slot,
//! purpose)`, so what one region samples in one slot never depends on what
//! the scheduler did elsewhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `shift + Exp(scale)` in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedExp {
    pub shift_ms: f64,
    pub scale_ms: f64,
}

impl ShiftedExp {
    pub fn new(shift_ms: f64, scale_ms: f64) -> Result<Self> {
        if !(shift_ms >= 0.0 && shift_ms.is_finite()) {
            return Err(Error::domain(format!("shift must be >= 0 ms, got {shift_ms}")));
        }
        if !(scale_ms > 0.0 && scale_ms.is_finite()) {
            return Err(Error::domain(format!("scale must be > 0 ms, got {scale_ms}")));
        }
        Ok(ShiftedExp { shift_ms, scale_ms })
    }

    pub fn mean(&self) -> f64 {
        self.shift_ms + self.scale_ms
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        self.shift_ms + self.scale_ms * e
    }

    /// Mean of the maximum of `n` independent draws: `shift + scale * H_n`.
    pub fn mean_of_max(&self, n: usize) -> f64 {
        self.shift_ms + self.scale_ms * harmonic(n)
    }
}

pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|i| 1.0 / i as f64).sum()
}

/// Uniform channel rate in Mbps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateDist {
    pub lo_mbps: f64,
    pub hi_mbps: f64,
}

impl RateDist {
    pub fn new(lo_mbps: f64, hi_mbps: f64) -> Result<Self> {
        if !(lo_mbps > 0.0 && lo_mbps <= hi_mbps && hi_mbps.is_finite()) {
            return Err(Error::domain(format!(
                "rate bounds need 0 < lo <= hi, got [{lo_mbps}, {hi_mbps}]"
            )));
        }
        Ok(RateDist { lo_mbps, hi_mbps })
    }

    pub fn mean(&self) -> f64 {
        0.5 * (self.lo_mbps + self.hi_mbps)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi_mbps > self.lo_mbps {
            rng.random_range(self.lo_mbps..=self.hi_mbps)
        } else {
            self.lo_mbps
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub ext_ms: f64,
    pub tr_ms: f64,
    pub det_ms: f64,
    pub total_ms: f64,
    pub total_slots: u32,
}

/// Everything the delay pipeline needs besides the task itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub ext: ShiftedExp,
    pub det: ShiftedExp,
    pub rate: RateDist,
    pub compression_factor: f64,
    pub tau_ms: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            ext: ShiftedExp { shift_ms: 2.0, scale_ms: 8.0 },
            det: ShiftedExp { shift_ms: 2.0, scale_ms: 8.0 },
            rate: RateDist { lo_mbps: 1.0, hi_mbps: 20.0 },
            compression_factor: 32.0,
            tau_ms: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        ShiftedExp::new(self.ext.shift_ms, self.ext.scale_ms)?;
        ShiftedExp::new(self.det.shift_ms, self.det.scale_ms)?;
        RateDist::new(self.rate.lo_mbps, self.rate.hi_mbps)?;
        if !(self.compression_factor > 0.0) {
            return Err(Error::domain("compression factor must be > 0"));
        }
        if !(self.tau_ms > 0.0) {
            return Err(Error::domain("tau must be > 0"));
        }
        Ok(())
    }

    /// Transmission time of a whole region volume at region rate `rate_mbps`,
    /// assuming the delay-equalizing bandwidth split.
    pub fn region_transmission_ms(&self, b_mb: f64, rate_mbps: f64) -> f64 {
        b_mb / self.compression_factor / rate_mbps * 1000.0
    }

    /// Mean task delay in (fractional) slots: no ceiling applied.
    pub fn expected_task_delay_slots(&self, n_sensors: usize, b_mb: f64, rate_mbps: f64) -> f64 {
        let tr = if rate_mbps.is_infinite() {
            0.0
        } else {
            self.region_transmission_ms(b_mb, rate_mbps)
        };
        (self.ext.mean_of_max(n_sensors) + tr + self.det.mean()) / self.tau_ms
    }

    pub fn delay_distribution(&self, n_sensors: usize, tr_ms: f64) -> TaskDelayDist {
        TaskDelayDist {
            ext: self.ext,
            det: self.det,
            n_sensors: n_sensors.max(1),
            tr_ms,
            tau_ms: self.tau_ms,
        }
    }
}

/// Maximum of `n_sensors` i.i.d. shifted-exponential extraction delays.
pub fn sample_region_extraction_delay<R: Rng + ?Sized>(rng: &mut R, dist: &ShiftedExp, n_sensors: usize) -> f64 {
    (0..n_sensors.max(1))
        .map(|_| dist.sample(rng))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Slowest-sensor transmission delay in ms for per-sensor volumes (Mb) and rates (Mbps).
pub fn transmission_delay_ms(b_n: &[f64], r_n: &[f64], compression_factor: f64) -> Result<f64> {
    if b_n.len() != r_n.len() {
        return Err(Error::domain(format!(
            "{} volumes but {} rates",
            b_n.len(),
            r_n.len()
        )));
    }
    if !(compression_factor > 0.0) {
        return Err(Error::domain("compression factor must be > 0"));
    }
    let mut worst: f64 = 0.0;
    for (&b, &r) in b_n.iter().zip(r_n) {
        if b <= 0.0 {
            continue;
        }
        if !(r > 0.0) {
            return Err(Error::domain(format!("sensor rate must be > 0 Mbps, got {r}")));
        }
        worst = worst.max(b / compression_factor / r * 1000.0);
    }
    Ok(worst)
}

/// Sums the phase delays and rounds up to slots, never below one slot.
pub fn total_task_delay(ext_ms: f64, tr_ms: f64, det_ms: f64, tau_ms: f64) -> DelayBreakdown {
    let total_ms = ext_ms + tr_ms + det_ms;
    DelayBreakdown {
        ext_ms,
        tr_ms,
        det_ms,
        total_ms,
        total_slots: slots_for(total_ms, tau_ms),
    }
}

fn slots_for(total_ms: f64, tau_ms: f64) -> u32 {
    let slots = (total_ms / tau_ms).ceil();
    if slots < 1.0 {
        1
    } else {
        slots.min(u32::MAX as f64) as u32
    }
}

/// Distribution of one task's delay at fixed transmission time.
#[derive(Clone, Copy, Debug)]
pub struct TaskDelayDist {
    pub ext: ShiftedExp,
    pub det: ShiftedExp,
    pub n_sensors: usize,
    pub tr_ms: f64,
    pub tau_ms: f64,
}

impl TaskDelayDist {
    fn offset_ms(&self) -> f64 {
        self.ext.shift_ms + self.det.shift_ms + self.tr_ms
    }

    /// `P(total_ms <= t)`.
    ///
    /// The extraction maximum has CDF `(1 - e^{-x/s_e})^n`; expanding the power
    /// binomially turns the convolution with the detection exponential into a
    /// finite sum of exponentials.
    pub fn cdf_ms(&self, t_ms: f64) -> f64 {
        let x = t_ms - self.offset_ms();
        if x <= 0.0 {
            return 0.0;
        }
        let c = 1.0 / self.det.scale_ms;
        let mut total = 1.0 - (-c * x).exp();
        let mut binom = 1.0;
        let n = self.n_sensors;
        for j in 1..=n {
            binom *= (n - j + 1) as f64 / j as f64;
            let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
            let a = j as f64 / self.ext.scale_ms;
            let diff = a - c;
            let conv = if diff.abs() < 1e-9 * c.max(a) {
                c * x * (-c * x).exp()
            } else {
                c * ((-c * x).exp() - (-a * x).exp()) / diff
            };
            total += sign * binom * conv;
        }
        total.clamp(0.0, 1.0)
    }

    /// Probability mass over whole-slot delays `1, 2, ...` until the
    /// remaining tail mass drops below `tail_tol`. Index 0 of the result is
    /// the mass at one slot.
    pub fn slot_pmf(&self, tail_tol: f64) -> Vec<f64> {
        let mut pmf = Vec::new();
        let mut prev = 0.0;
        let mut k = 1u32;
        loop {
            let cdf = self.cdf_ms(k as f64 * self.tau_ms);
            pmf.push(cdf - prev);
            prev = cdf;
            if 1.0 - cdf < tail_tol || k >= 100_000 {
                break;
            }
            k += 1;
        }
        pmf
    }

    pub fn sample_slots<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let ext = sample_region_extraction_delay(rng, &self.ext, self.n_sensors);
        let det = self.det.sample(rng);
        total_task_delay(ext, self.tr_ms, det, self.tau_ms).total_slots
    }

    pub fn mean_ms(&self) -> f64 {
        self.ext.mean_of_max(self.n_sensors) + self.tr_ms + self.det.mean()
    }
}

/// What a random stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamPurpose {
    Rate = 1,
    Extraction = 2,
    Detection = 3,
    Expectation = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for one `(region, slot, purpose)` event.
pub fn event_rng(seed: u64, region: usize, slot: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    let mut key = splitmix64(seed);
    key = splitmix64(key ^ region as u64);
    key = splitmix64(key ^ slot);
    key = splitmix64(key ^ purpose as u64);
    ChaCha8Rng::seed_from_u64(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degenerate_exponential_returns_shift() {
        let d = ShiftedExp::new(3.5, 1e-300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = sample_region_extraction_delay(&mut rng, &d, 1);
        assert_relative_eq!(x, 3.5, epsilon = 1e-12);
    }

    #[test]
    fn single_sensor_mean_is_ten_ms() {
        let d = ShiftedExp::new(2.0, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_region_extraction_delay(&mut rng, &d, 1)).sum::<f64>() / n as f64;
        assert!((mean - 10.0).abs() < 0.2, "{mean}");
    }

    #[test]
    fn four_sensor_mean_follows_harmonic_number() {
        let d = ShiftedExp::new(2.0, 8.0).unwrap();
        let analytic = 2.0 + 8.0 * 25.0 / 12.0;
        assert_relative_eq!(d.mean_of_max(4), analytic, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_region_extraction_delay(&mut rng, &d, 4)).sum::<f64>() / n as f64;
        assert!((mean - analytic).abs() < 0.3, "{mean} vs {analytic}");
    }

    #[test]
    fn samples_never_below_shift() {
        let d = ShiftedExp::new(2.0, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!((0..10_000).all(|_| d.sample(&mut rng) >= 2.0));
        let r = RateDist::new(1.0, 20.0).unwrap();
        assert!((0..10_000).map(|_| r.sample(&mut rng)).all(|x| (1.0..=20.0).contains(&x)));
    }

    #[test]
    fn transmission_examples() {
        assert_relative_eq!(transmission_delay_ms(&[2.0], &[10.0], 32.0).unwrap(), 6.25);
        assert_relative_eq!(transmission_delay_ms(&[1.0, 2.0], &[10.0, 10.0], 32.0).unwrap(), 6.25);
        assert!(transmission_delay_ms(&[1.0], &[0.0], 32.0).is_err());
        assert!(transmission_delay_ms(&[1.0, 2.0], &[3.0], 32.0).is_err());
    }

    #[test]
    fn bandwidth_proportional_to_volume_equalizes_delay() {
        // rates scale with bandwidth share; shares proportional to volume
        let b = [1.0, 2.0];
        let region_rate = 9.0;
        let rates: Vec<f64> = b.iter().map(|x| region_rate * x / 3.0).collect();
        let d0 = transmission_delay_ms(&b[..1], &rates[..1], 32.0).unwrap();
        let d1 = transmission_delay_ms(&b[1..], &rates[1..], 32.0).unwrap();
        assert_relative_eq!(d0, d1, epsilon = 1e-12);
    }

    #[test]
    fn total_delay_rounds_up() {
        let d = total_task_delay(10.0, 6.25, 9.0, 10.0);
        assert_relative_eq!(d.total_ms, 25.25);
        assert_eq!(d.total_slots, 3);
        assert_eq!(total_task_delay(0.0, 0.0, 0.0, 10.0).total_slots, 1);
        assert_eq!(total_task_delay(10.0, 6.25, 9.0, 1.0).total_slots, 26);
    }

    #[test]
    fn expected_delay_examples() {
        let env = EnvConfig::default();
        assert_relative_eq!(env.expected_task_delay_slots(2, 2.0, 10.0), 3.025, epsilon = 1e-12);
        let no_tr = (2.0 + 8.0 * 1.5 + 10.0) / 10.0;
        assert_relative_eq!(env.expected_task_delay_slots(2, 0.0, 10.0), no_tr, epsilon = 1e-12);
        assert_relative_eq!(env.expected_task_delay_slots(2, 2.0, 1e15), no_tr, epsilon = 1e-9);
    }

    #[test]
    fn expected_delay_matches_monte_carlo() {
        let env = EnvConfig::default();
        let dist = env.delay_distribution(2, env.region_transmission_ms(2.0, 10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| sample_region_extraction_delay(&mut rng, &env.ext, 2) + dist.tr_ms + env.det.sample(&mut rng))
            .sum::<f64>()
            / n as f64
            / env.tau_ms;
        let analytic = env.expected_task_delay_slots(2, 2.0, 10.0);
        assert!((mean - analytic).abs() / analytic < 0.01);
    }

    #[test]
    fn closed_form_cdf_matches_empirical() {
        for (n, ext_scale) in [(1usize, 8.0), (2, 8.0), (4, 8.0), (3, 5.0)] {
            let env = EnvConfig {
                ext: ShiftedExp { shift_ms: 2.0, scale_ms: ext_scale },
                ..EnvConfig::default()
            };
            let dist = env.delay_distribution(n, 4.0);
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let draws: Vec<f64> = (0..50_000)
                .map(|_| sample_region_extraction_delay(&mut rng, &env.ext, n) + 4.0 + env.det.sample(&mut rng))
                .collect();
            for t in [10.0, 20.0, 30.0, 45.0, 70.0] {
                let emp = draws.iter().filter(|&&x| x <= t).count() as f64 / draws.len() as f64;
                assert!((emp - dist.cdf_ms(t)).abs() < 0.01, "n={n} t={t}: {emp} vs {}", dist.cdf_ms(t));
            }
        }
    }

    #[test]
    fn slot_pmf_sums_to_one() {
        let env = EnvConfig::default();
        let pmf = env.delay_distribution(4, 12.0).slot_pmf(1e-12);
        let total: f64 = pmf.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(pmf.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn event_streams_are_reproducible_and_distinct() {
        let mut a = event_rng(42, 3, 100, StreamPurpose::Rate);
        let mut b = event_rng(42, 3, 100, StreamPurpose::Rate);
        let mut c = event_rng(42, 3, 101, StreamPurpose::Rate);
        let xa: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.random()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.random()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }
}
