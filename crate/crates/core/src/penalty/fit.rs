//! Nonlinear least-squares fitting of the AP surfaces.
//!
//! Projected Levenberg-Marquardt with analytic Jacobians, restarted from a
//! small grid of initial guesses. Parameters are projected onto the
//! nonnegative orthant after every step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CorridorParams, IntersectionParams, ScenarioKind, SurfaceParams};
use crate::error::{Error, Result};

const MIN_SAMPLES: usize = 10;
const MAX_ITERS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub h_s: f64,
    pub b_log: f64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub surface: SurfaceParams,
    pub rmse: f64,
    pub iterations: usize,
}

/// Internal parameterization of one surface family.
trait Family {
    const DIM: usize;
    fn eval(&self, theta: &[f64], s: &FitSample) -> f64;
    fn grad(&self, theta: &[f64], s: &FitSample, out: &mut [f64]);
    fn starts(&self, samples: &[FitSample]) -> Vec<Vec<f64>>;
    fn project(&self, theta: &mut [f64]);
    fn finish(&self, theta: &[f64], samples: &[FitSample]) -> SurfaceParams;
}

/// Intersection surface with the volume term re-centred at `b_ref`:
/// theta = [alpha, beta, gamma * exp(-delta * b_ref), delta, epsilon].
struct Dual {
    b_ref: f64,
}

impl Family for Dual {
    const DIM: usize = 5;

    fn eval(&self, t: &[f64], s: &FitSample) -> f64 {
        t[0] * (-t[1] * s.h_s).exp() - t[2] * (-t[3] * (s.b_log - self.b_ref)).exp() + t[4]
    }

    fn grad(&self, t: &[f64], s: &FitSample, out: &mut [f64]) {
        let age = (-t[1] * s.h_s).exp();
        let db = s.b_log - self.b_ref;
        let vol = (-t[3] * db).exp();
        out[0] = age;
        out[1] = -t[0] * s.h_s * age;
        out[2] = -vol;
        out[3] = t[2] * db * vol;
        out[4] = 1.0;
    }

    fn starts(&self, samples: &[FitSample]) -> Vec<Vec<f64>> {
        let (lo, hi) = ap_range(samples);
        let mut v = Vec::new();
        for &beta in &[0.5, 2.0, 8.0] {
            for &delta in &[0.2, 0.6, 1.5] {
                v.push(vec![(hi - lo).max(0.05), beta, 0.05, delta, lo]);
            }
        }
        v
    }

    fn project(&self, t: &mut [f64]) {
        for x in t.iter_mut() {
            *x = x.max(0.0);
        }
    }

    fn finish(&self, t: &[f64], samples: &[FitSample]) -> SurfaceParams {
        let mut p = IntersectionParams {
            alpha: t[0],
            beta: t[1],
            gamma: t[2] * (t[3] * self.b_ref).exp(),
            delta: t[3],
            epsilon: t[4],
            rho_max: 1.0,
        };
        p.rho_max = rho_at_best_volume(samples, |b| p.raw_ap(0.0, b));
        SurfaceParams::Intersection(p)
    }
}

/// Corridor surface, theta = [kappa, lambda, lambda0, nu, mu].
struct SigmoidExp;

impl Family for SigmoidExp {
    const DIM: usize = 5;

    fn eval(&self, t: &[f64], s: &FitSample) -> f64 {
        let sig = sigmoid(t[1] * (s.b_log - t[2]));
        (t[0] * sig - t[4]) * (-t[3] * s.h_s).exp()
    }

    fn grad(&self, t: &[f64], s: &FitSample, out: &mut [f64]) {
        let sig = sigmoid(t[1] * (s.b_log - t[2]));
        let age = (-t[3] * s.h_s).exp();
        let dsig = sig * (1.0 - sig);
        out[0] = sig * age;
        out[1] = t[0] * dsig * (s.b_log - t[2]) * age;
        out[2] = -t[0] * dsig * t[1] * age;
        out[3] = -s.h_s * (t[0] * sig - t[4]) * age;
        out[4] = -age;
    }

    fn starts(&self, samples: &[FitSample]) -> Vec<Vec<f64>> {
        let (_, hi) = ap_range(samples);
        let mut bs: Vec<f64> = samples.iter().map(|s| s.b_log).collect();
        bs.sort_by(f64::total_cmp);
        let quart = |q: f64| bs[((bs.len() - 1) as f64 * q) as usize];
        let mut v = Vec::new();
        for &lambda in &[0.5, 1.5, 4.0] {
            for &mid in &[quart(0.25), quart(0.5), quart(0.75)] {
                for &nu in &[0.5, 3.0, 10.0] {
                    v.push(vec![hi * 1.1 + 0.05, lambda, mid, nu, 0.02]);
                }
            }
        }
        v
    }

    fn project(&self, t: &mut [f64]) {
        for x in t.iter_mut() {
            *x = x.max(0.0);
        }
        t[1] = t[1].max(1e-6);
    }

    fn finish(&self, t: &[f64], samples: &[FitSample]) -> SurfaceParams {
        let mut p = CorridorParams {
            kappa: t[0],
            lambda: t[1],
            lambda0: t[2],
            nu: t[3],
            mu: t[4],
            rho_max: 1.0,
        };
        p.rho_max = rho_at_best_volume(samples, |b| p.raw_ap(0.0, b));
        SurfaceParams::Corridor(p)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn ap_range(samples: &[FitSample]) -> (f64, f64) {
    samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.ap), hi.max(s.ap)))
}

fn rho_at_best_volume(samples: &[FitSample], ap0: impl Fn(f64) -> f64) -> f64 {
    let b_top = samples.iter().map(|s| s.b_log).fold(f64::NEG_INFINITY, f64::max);
    ap0(b_top).clamp(1e-6, 1.0)
}

fn sse<F: Family>(fam: &F, t: &[f64], samples: &[FitSample]) -> f64 {
    samples.iter().map(|s| (fam.eval(t, s) - s.ap).powi(2)).sum()
}

fn levenberg_marquardt<F: Family>(fam: &F, start: &[f64], samples: &[FitSample]) -> (Vec<f64>, f64, usize) {
    let n = F::DIM;
    let m = samples.len();
    let mut theta = start.to_vec();
    fam.project(&mut theta);
    let mut cost = sse(fam, &theta, samples);
    let mut damping = 1e-3;
    let mut row = vec![0.0; n];
    let mut iters = 0;

    while iters < MAX_ITERS {
        iters += 1;
        let mut jac = DMatrix::<f64>::zeros(m, n);
        let mut res = DVector::<f64>::zeros(m);
        for (i, s) in samples.iter().enumerate() {
            fam.grad(&theta, s, &mut row);
            for j in 0..n {
                jac[(i, j)] = row[j];
            }
            res[i] = fam.eval(&theta, s) - s.ap;
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        if jtr.amax() < 1e-15 {
            break;
        }

        let mut improved = false;
        while damping < 1e12 {
            let mut lhs = jtj.clone();
            for j in 0..n {
                lhs[(j, j)] += damping * jtj[(j, j)].max(1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-&jtr)) else {
                damping *= 4.0;
                continue;
            };
            let mut cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            fam.project(&mut cand);
            let cand_cost = sse(fam, &cand, samples);
            if cand_cost.is_finite() && cand_cost < cost {
                let rel = cand
                    .iter()
                    .zip(&theta)
                    .map(|(a, b)| (a - b).abs() / (b.abs() + 1e-9))
                    .fold(0.0, f64::max);
                theta = cand;
                let gain = cost - cand_cost;
                cost = cand_cost;
                damping = (damping / 3.0).max(1e-12);
                improved = true;
                if rel < 1e-13 || gain < 1e-30 {
                    return (theta, cost, iters);
                }
                break;
            }
            damping *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (theta, cost, iters)
}

fn run_family<F: Family>(fam: &F, samples: &[FitSample]) -> Result<FitReport> {
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    for start in fam.starts(samples) {
        let (theta, cost, iters) = levenberg_marquardt(fam, &start, samples);
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((theta, cost, iters));
        }
    }
    let (theta, cost, iterations) = best.ok_or_else(|| Error::Fit("no starting point".into()))?;
    let surface = fam.finish(&theta, samples);
    surface
        .validate()
        .map_err(|e| Error::Fit(format!("fitted parameters rejected: {e}")))?;
    Ok(FitReport {
        surface,
        rmse: (cost / samples.len() as f64).sqrt(),
        iterations,
    })
}

/// Fits a surface of the given kind to AP samples.
///
/// Needs at least ten samples with more than one distinct age and more than
/// one distinct volume.
pub fn fit_model(samples: &[FitSample], kind: ScenarioKind) -> Result<FitReport> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Fit(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    for s in samples {
        if !(s.h_s >= 0.0 && s.b_log.is_finite() && (0.0..=1.0).contains(&s.ap)) {
            return Err(Error::Fit(format!("invalid sample {s:?}")));
        }
    }
    let spans = |get: fn(&FitSample) -> f64| {
        let first = get(&samples[0]);
        samples.iter().any(|s| (get(s) - first).abs() > 1e-12)
    };
    if !spans(|s| s.h_s) || !spans(|s| s.b_log) {
        return Err(Error::Fit("samples must span both age and volume".into()));
    }
    match kind {
        ScenarioKind::Intersection => {
            let b_ref = samples.iter().map(|s| s.b_log).sum::<f64>() / samples.len() as f64;
            run_family(&Dual { b_ref }, samples)
        }
        ScenarioKind::Corridor => run_family(&SigmoidExp, samples),
    }
}
