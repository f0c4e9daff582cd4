//! Least-squares fits: stretched-exponential echo decay and power laws.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cce::CoherenceCurve;

/// Points with |ℒ| below this are excluded from the decay fit.
pub const DECAY_FLOOR: f64 = 0.02;
/// The curve must fall below this somewhere for a decay fit to be attempted.
pub const DECAY_THRESHOLD: f64 = 0.9;
pub const MIN_FIT_POINTS: usize = 8;
pub const ETA_MIN: f64 = 0.5;
pub const ETA_MAX: f64 = 6.0;
/// Per-point σ floor used when the curve carries standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-4;

const MAX_ITERATIONS: usize = 500;
const GRADIENT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("signal never drops below {DECAY_THRESHOLD} (minimum {min_signal:.4}); extend t_max")]
    NoDecay { min_signal: f64 },
    #[error("fit did not converge after {iterations} iterations (gradient {gradient:.3e}, cost {cost:.3e})")]
    NonConvergence {
        iterations: usize,
        gradient: f64,
        cost: f64,
    },
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T2Fit {
    #[serde(rename = "t2_s")]
    pub t2: f64,
    pub eta: f64,
    #[serde(rename = "stderr_t2_s")]
    pub stderr_t2: f64,
    pub stderr_eta: f64,
    #[serde(rename = "rms_residual")]
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub coefficient: f64,
    pub exponent: f64,
    pub stderr_coefficient: f64,
    pub stderr_exponent: f64,
}

impl PowerLawFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficient * x.powf(self.exponent)
    }
}

struct Sample {
    t: f64,
    y: f64,
    w: f64,
}

/// exp(−(t/T₂)^η) and its derivatives with respect to ln T₂ and η.
fn model(t: f64, ln_t2: f64, eta: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (1.0, 0.0, 0.0);
    }
    let lr = t.ln() - ln_t2;
    let u = (eta * lr).exp();
    let m = (-u).exp();
    (m, m * u * eta, -m * u * lr)
}

fn cost(samples: &[Sample], p: [f64; 2]) -> f64 {
    samples
        .iter()
        .map(|s| s.w * (s.y - model(s.t, p[0], p[1]).0).powi(2))
        .sum()
}

/// Weighted normal equations (JᵀWJ, JᵀWr) at `p`.
fn normal_equations(samples: &[Sample], p: [f64; 2]) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut a = [[0.0; 2]; 2];
    let mut g = [0.0; 2];
    for s in samples {
        let (m, d0, d1) = model(s.t, p[0], p[1]);
        let r = s.y - m;
        let j = [d0, d1];
        for p in 0..2 {
            g[p] += s.w * j[p] * r;
            for q in 0..2 {
                a[p][q] += s.w * j[p] * j[q];
            }
        }
    }
    (a, g)
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        (b[0] * a[1][1] - b[1] * a[0][1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ])
}

fn invert2(a: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ])
}

struct Solution {
    p: [f64; 2],
    cost: f64,
}

fn levenberg_marquardt(samples: &[Sample], start: [f64; 2]) -> Result<Solution, FitError> {
    let mut p = start;
    let mut c = cost(samples, p);
    let mut lambda = 1e-3;
    let mut gradient = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let (a, g) = normal_equations(samples, p);
        // Gradient relative to the curvature scale of each parameter.
        gradient = (0..2)
            .map(|k| g[k].abs() / (a[k][k] * c.max(f64::MIN_POSITIVE)).sqrt().max(1e-300))
            .fold(0.0, f64::max);
        if gradient < GRADIENT_TOLERANCE || c == 0.0 {
            return Ok(Solution { p, cost: c });
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let damped = [
                [a[0][0] * (1.0 + lambda), a[0][1]],
                [a[1][0], a[1][1] * (1.0 + lambda)],
            ];
            let Some(step) = solve2(damped, g) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], (p[1] + step[1]).clamp(ETA_MIN, ETA_MAX)];
            let tc = cost(samples, trial);
            if tc.is_finite() && tc <= c {
                let converged_step =
                    (trial[0] - p[0]).abs() < 1e-14 && (trial[1] - p[1]).abs() < 1e-14;
                p = trial;
                c = tc;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if converged_step {
                    return Ok(Solution { p, cost: c });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: p is a (possibly bound-constrained) minimum.
            return Ok(Solution { p, cost: c });
        }
    }
    Err(FitError::NonConvergence {
        iterations: MAX_ITERATIONS,
        gradient,
        cost: c,
    })
}

/// Undamped Gauss-Newton steps from an LM minimum, stopped once steps stop shrinking. Near the
/// optimum the cost is flat to rounding, so acceptance is judged by step size instead.
fn polish(samples: &[Sample], mut sol: Solution) -> Solution {
    let mut last = f64::INFINITY;
    for _ in 0..8 {
        let (a, g) = normal_equations(samples, sol.p);
        let Some(step) = solve2(a, g) else { break };
        let size = step[0].abs().max(step[1].abs());
        let trial = [sol.p[0] + step[0], sol.p[1] + step[1]];
        if !(size < last) || !(ETA_MIN..=ETA_MAX).contains(&trial[1]) {
            break;
        }
        let tc = cost(samples, trial);
        if !tc.is_finite() || tc > sol.cost * (1.0 + 1e-12) {
            break;
        }
        sol = Solution { p: trial, cost: tc };
        last = size;
        if size < 1e-15 {
            break;
        }
    }
    sol
}

/// Time at which the curve first falls through 1/e (linear interpolation), or an
/// estimate from the deepest point under the given η.
fn initial_t2(samples: &[Sample], eta: f64) -> f64 {
    let target = (-1.0f64).exp();
    for w in samples.windows(2) {
        if w[0].y >= target && w[1].y < target {
            let f = (w[0].y - target) / (w[0].y - w[1].y);
            return w[0].t + f * (w[1].t - w[0].t);
        }
    }
    let deepest = samples
        .iter()
        .filter(|s| s.t > 0.0 && s.y < 1.0)
        .min_by(|a, b| a.y.total_cmp(&b.y));
    match deepest {
        Some(s) => s.t / (-s.y.ln()).powf(1.0 / eta),
        None => samples.last().map_or(1.0, |s| s.t),
    }
}

/// Fits |ℒ(t)| to exp(−(t/T₂)^η).
pub fn fit_stretched_exponential(curve: &CoherenceCurve) -> Result<T2Fit, FitError> {
    let n = curve.times.len();
    if curve.signal.len() != n || curve.stderr.len() != n {
        return Err(FitError::Domain("curve arrays differ in length".into()));
    }
    if n < MIN_FIT_POINTS {
        return Err(FitError::TooFewPoints {
            needed: MIN_FIT_POINTS,
            got: n,
        });
    }
    let min_signal = curve.signal.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_signal < DECAY_THRESHOLD) {
        return Err(FitError::NoDecay { min_signal });
    }
    let weighted = curve.stderr.iter().any(|&s| s > 0.0);
    let mut samples: Vec<Sample> = (0..n)
        .filter(|&k| curve.signal[k].abs() >= DECAY_FLOOR && curve.times[k] >= 0.0)
        .map(|k| Sample {
            t: curve.times[k],
            y: curve.signal[k],
            w: if weighted {
                curve.stderr[k].max(SIGMA_FLOOR).powi(-2)
            } else {
                1.0
            },
        })
        .collect();
    samples.sort_by(|a, b| a.t.total_cmp(&b.t));
    if samples.len() < 3 {
        return Err(FitError::TooFewPoints {
            needed: 3,
            got: samples.len(),
        });
    }

    let mut best: Option<Solution> = None;
    let mut last_err = None;
    for eta in [1.0, 2.0, 3.0] {
        let t0 = initial_t2(&samples, eta);
        if !(t0 > 0.0) || !t0.is_finite() {
            continue;
        }
        match levenberg_marquardt(&samples, [t0.ln(), eta]) {
            Ok(sol) => {
                let sol = polish(&samples, sol);
                if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
                    best = Some(sol);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let sol = best.ok_or_else(|| {
        last_err.unwrap_or(FitError::Domain("could not initialize decay fit".into()))
    })?;

    let (a, _) = normal_equations(&samples, sol.p);
    let dof = samples.len().saturating_sub(2).max(1) as f64;
    let scale = sol.cost / dof;
    let (se_ln, se_eta) = match invert2(a) {
        Some(cov) => (
            (cov[0][0] * scale).max(0.0).sqrt(),
            (cov[1][1] * scale).max(0.0).sqrt(),
        ),
        None => (f64::NAN, f64::NAN),
    };
    let t2 = sol.p[0].exp();
    let residual = (samples
        .iter()
        .map(|s| (s.y - model(s.t, sol.p[0], sol.p[1]).0).powi(2))
        .sum::<f64>()
        / samples.len() as f64)
        .sqrt();
    Ok(T2Fit {
        t2,
        eta: sol.p[1],
        stderr_t2: t2 * se_ln,
        stderr_eta: se_eta,
        residual,
    })
}

/// A data point for [`fit_power_law`]: (x, y, optional σ_y).
pub type PowerPoint = (f64, f64, Option<f64>);

fn log_points(points: &[PowerPoint]) -> Result<Vec<(f64, f64, f64)>, FitError> {
    points
        .iter()
        .map(|&(x, y, sigma)| {
            if !(x > 0.0) || !(y > 0.0) || !x.is_finite() || !y.is_finite() {
                return Err(FitError::Domain(format!(
                    "power-law data must be positive, got ({x}, {y})"
                )));
            }
            // σ of ln y is σ_y / y.
            let w = match sigma {
                Some(s) if s > 0.0 => (y / s).powi(2),
                _ => 1.0,
            };
            Ok((x.ln(), y.ln(), w))
        })
        .collect()
}

/// Weighted log-log regression y = a·x^α.
pub fn fit_power_law(points: &[PowerPoint]) -> Result<PowerLawFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    power_law_regression(points)
}

/// Log-log regression for two or more points; the standard errors are NaN with exactly two.
pub(crate) fn power_law_regression(points: &[PowerPoint]) -> Result<PowerLawFit, FitError> {
    if points.len() < 2 {
        return Err(FitError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    let lp = log_points(points)?;
    let sw: f64 = lp.iter().map(|p| p.2).sum();
    let mx = lp.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = lp.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = lp.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(FitError::Domain(
            "power-law fit needs at least two distinct x values".into(),
        ));
    }
    let sxy: f64 = lp.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let chi2: f64 = lp
        .iter()
        .map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let s2 = if lp.len() > 2 {
        chi2 / (lp.len() - 2) as f64
    } else {
        f64::NAN
    };
    let se_slope = (s2 / sxx).sqrt();
    let se_intercept = (s2 * (1.0 / sw + mx * mx / sxx)).sqrt();
    let coefficient = intercept.exp();
    Ok(PowerLawFit {
        coefficient,
        exponent: slope,
        stderr_coefficient: coefficient * se_intercept,
        stderr_exponent: se_slope,
    })
}

/// Coefficient of y = a·x^α with α held fixed.
pub fn fit_power_law_fixed_exponent(
    points: &[PowerPoint],
    exponent: f64,
) -> Result<PowerLawFit, FitError> {
    if points.is_empty() {
        return Err(FitError::TooFewPoints { needed: 1, got: 0 });
    }
    let lp = log_points(points)?;
    let sw: f64 = lp.iter().map(|p| p.2).sum();
    let ln_a = lp.iter().map(|p| p.2 * (p.1 - exponent * p.0)).sum::<f64>() / sw;
    let se = if lp.len() > 1 {
        let chi2: f64 = lp
            .iter()
            .map(|p| p.2 * (p.1 - exponent * p.0 - ln_a).powi(2))
            .sum();
        (chi2 / (lp.len() - 1) as f64 / sw).sqrt()
    } else {
        0.0
    };
    let coefficient = ln_a.exp();
    Ok(PowerLawFit {
        coefficient,
        exponent,
        stderr_coefficient: coefficient * se,
        stderr_exponent: 0.0,
    })
}
