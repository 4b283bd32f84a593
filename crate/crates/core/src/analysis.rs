//! Quantities extracted from simulated coherence curves.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::SequenceKind;

/// `P₂` level that defines the coherence time, `½(1 − 1/e)`.
pub const COHERENCE_THRESHOLD: f64 = 0.5 * (1.0 - 1.0 / std::f64::consts::E);

/// Default slope window in units of the coherence time.
pub const DEFAULT_SLOPE_WINDOW: (f64, f64) = (0.3, 1.2);

/// Fewest points accepted by a slope fit.
const MIN_SLOPE_POINTS: usize = 4;
/// Fewest distinct pulse counts accepted by the limiting-rate fit.
const MIN_FIT_COUNTS: usize = 4;
/// Closest the fitted pole may come to the smallest pulse count.
const POLE_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// s.
    pub tau_total: f64,
    pub p2: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub kind: SequenceKind,
    pub n_pi: usize,
    /// Fingerprint of the configuration that produced the curve.
    pub fingerprint: Option<String>,
    points: Vec<CurvePoint>,
}

impl CoherenceCurve {
    pub fn new(kind: SequenceKind, n_pi: usize, points: Vec<CurvePoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].tau_total > w[0].tau_total)) {
            return Err(Error::invalid(
                "tau_total",
                "curve times must be strictly increasing",
            ));
        }
        if points.iter().any(|p| !(p.p2 >= 0.0) || !(p.stderr >= 0.0)) {
            return Err(Error::invalid(
                "p2",
                "curve values and errors must be non-negative",
            ));
        }
        Ok(Self {
            kind,
            n_pi,
            fingerprint: None,
            points,
        })
    }

    /// Curve from bare `(τ, P₂)` samples with zero error bars.
    pub fn from_samples(
        kind: SequenceKind,
        n_pi: usize,
        samples: impl IntoIterator<Item = (f64, f64)>,
    ) -> Result<Self> {
        let points = samples
            .into_iter()
            .map(|(tau_total, p2)| CurvePoint {
                tau_total,
                p2,
                stderr: 0.0,
            })
            .collect();
        Self::new(kind, n_pi, points)
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }
}

/// Straight-line fit `y = intercept + slope · t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub slope: f64,
    pub stderr: f64,
}

/// Time of the first upward crossing of [`COHERENCE_THRESHOLD`], by linear
/// interpolation between the bracketing points.
pub fn coherence_time(curve: &CoherenceCurve) -> Result<f64> {
    crossing_time(curve, COHERENCE_THRESHOLD)
}

/// First upward crossing of `threshold`.
pub fn crossing_time(curve: &CoherenceCurve, threshold: f64) -> Result<f64> {
    let pts = curve.points();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.p2 < threshold && b.p2 >= threshold {
            let frac = (threshold - a.p2) / (b.p2 - a.p2);
            return Ok(a.tau_total + frac * (b.tau_total - a.tau_total));
        }
    }
    Err(Error::NoCrossing { threshold })
}

/// Weighted least-squares line through `(t, y, σ)`. Points are weighted by
/// `1/σ²` when every error is positive; otherwise all weights are equal
/// and the slope error comes from the scatter of the residuals.
pub fn fit_line(points: &[CurvePoint]) -> Result<(SlopeEstimate, f64)> {
    if points.len() < MIN_SLOPE_POINTS {
        return Err(Error::DegenerateWindow {
            points: points.len(),
        });
    }
    let weighted = points.iter().all(|p| p.stderr > 0.0);
    let weight = |p: &CurvePoint| {
        if weighted {
            p.stderr.powi(-2)
        } else {
            1.0
        }
    };
    let s: f64 = points.iter().map(weight).sum();
    let sx: f64 = points.iter().map(|p| weight(p) * p.tau_total).sum();
    let sy: f64 = points.iter().map(|p| weight(p) * p.p2).sum();
    let (mx, my) = (sx / s, sy / s);
    let sxx: f64 = points
        .iter()
        .map(|p| weight(p) * (p.tau_total - mx).powi(2))
        .sum();
    let sxy: f64 = points
        .iter()
        .map(|p| weight(p) * (p.tau_total - mx) * (p.p2 - my))
        .sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateWindow {
            points: points.len(),
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if weighted {
        (1.0 / sxx).sqrt()
    } else {
        let rss: f64 = points
            .iter()
            .map(|p| (p.p2 - intercept - slope * p.tau_total).powi(2))
            .sum();
        (rss / (points.len() - 2) as f64 / sxx).sqrt()
    };
    Ok((SlopeEstimate { slope, stderr }, intercept))
}

/// Twice the slope of the curve inside `window` (s, inclusive) minus the
/// long-time slope. The factor two converts the rise of `P₂` into a decay
/// rate of the coherence, which contributes half of its loss to `P₂`.
pub fn intermediate_slope(
    curve: &CoherenceCurve,
    window: (f64, f64),
    long_time_slope: f64,
) -> Result<SlopeEstimate> {
    let inside: Vec<CurvePoint> = curve
        .points()
        .iter()
        .copied()
        .filter(|p| p.tau_total >= window.0 && p.tau_total <= window.1)
        .collect();
    let (fit, _) = fit_line(&inside)?;
    Ok(SlopeEstimate {
        slope: 2.0 * (fit.slope - long_time_slope),
        stderr: 2.0 * fit.stderr,
    })
}

/// Slope window `[lo·τ_c, hi·τ_c]`.
pub fn default_window(tau_c: f64) -> (f64, f64) {
    (DEFAULT_SLOPE_WINDOW.0 * tau_c, DEFAULT_SLOPE_WINDOW.1 * tau_c)
}

/// `P₂` left by vibrational mixing alone once the motional phases have
/// dephased: `½(1 − o^{2(n_π+1)})`.
pub fn asymptotic_mixing(overlap_diag: f64, n_pi: usize) -> f64 {
    0.5 * (1.0 - overlap_diag.powi(2 * (n_pi as i32 + 1)))
}

/// Fit of `rate(n) = a + b / (n − c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// s⁻¹.
    pub a: f64,
    /// s⁻¹.
    pub b: f64,
    pub c: f64,
    /// Covariance of `(a, b, c)`.
    pub covariance: [[f64; 3]; 3],
    /// Weighted sum of squared residuals.
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    /// Upper bound imposed on `c`.
    pub c_max: f64,
}

impl FitResult {
    pub fn a_err(&self) -> f64 {
        self.covariance[0][0].sqrt()
    }
    pub fn b_err(&self) -> f64 {
        self.covariance[1][1].sqrt()
    }
    pub fn c_err(&self) -> f64 {
        self.covariance[2][2].sqrt()
    }
    pub fn predict(&self, n: f64) -> f64 {
        self.a + self.b / (n - self.c)
    }
}

struct FitData {
    n: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl FitData {
    fn chi2(&self, p: &Vector3<f64>) -> f64 {
        self.n
            .iter()
            .zip(&self.y)
            .zip(&self.w)
            .map(|((&n, &y), &w)| w * (y - p[0] - p[1] / (n - p[2])).powi(2))
            .sum()
    }

    /// `(JᵀWJ, JᵀW r)` at `p`.
    fn normal_equations(&self, p: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for ((&n, &y), &w) in self.n.iter().zip(&self.y).zip(&self.w) {
            let d = n - p[2];
            let j = Vector3::new(1.0, 1.0 / d, p[1] / (d * d));
            let r = y - p[0] - p[1] / d;
            jtj += w * j * j.transpose();
            jtr += w * r * j;
        }
        (jtj, jtr)
    }

    /// Best `(a, b)` for fixed `c`, by linear least squares.
    fn linear_start(&self, c: f64) -> Vector3<f64> {
        let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((&n, &y), &w) in self.n.iter().zip(&self.y).zip(&self.w) {
            let x = 1.0 / (n - c);
            s += w;
            sx += w * x;
            sy += w * y;
            sxx += w * x * x;
            sxy += w * x * y;
        }
        let det = s * sxx - sx * sx;
        let b = (s * sxy - sx * sy) / det;
        let a = (sy - b * sx) / s;
        Vector3::new(a, b, c)
    }
}

/// Levenberg-Marquardt from `start`, keeping `c` below `c_max`.
fn levenberg_marquardt(
    data: &FitData,
    start: Vector3<f64>,
    c_max: f64,
) -> Option<(Vector3<f64>, f64, usize)> {
    const MAX_ITER: usize = 2000;
    let mut p = start;
    let mut chi2 = data.chi2(&p);
    if !chi2.is_finite() {
        return None;
    }
    let mut lambda = 1e-3;
    for iter in 1..=MAX_ITER {
        let (jtj, jtr) = data.normal_equations(&p);
        let mut damped = jtj;
        for k in 0..3 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
        }
        let Some(step) = damped.cholesky().map(|ch| ch.solve(&jtr)) else {
            lambda *= 10.0;
            if lambda > 1e30 {
                return Some((p, chi2, iter));
            }
            continue;
        };
        let trial = p + step;
        let trial_chi2 = if trial[2] < c_max {
            data.chi2(&trial)
        } else {
            f64::INFINITY
        };
        if trial_chi2.is_finite() && trial_chi2 <= chi2 {
            let small = relative_step(&step, &p) <= 1e-13;
            let stalled = chi2 - trial_chi2 <= 1e-14 * chi2;
            p = trial;
            chi2 = trial_chi2;
            lambda = (lambda * 0.2).max(1e-15);
            if small || stalled || chi2 < 1e-300 {
                return Some(polish(data, p, c_max, iter));
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e30 {
                return Some(polish(data, p, c_max, iter));
            }
        }
    }
    None
}

fn relative_step(step: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    (0..3)
        .map(|k| step[k].abs() / (p[k].abs() + 1e-13))
        .fold(0.0, f64::max)
}

/// Undamped Gauss-Newton steps from a converged damped solution, taken
/// while they keep shrinking. Near the minimum these converge much faster
/// than the damped iteration, which stalls once `χ²` stops changing in
/// the last digits while the parameters still move.
fn polish(data: &FitData, mut p: Vector3<f64>, c_max: f64, mut iter: usize) -> (Vector3<f64>, f64, usize) {
    let mut chi2 = data.chi2(&p);
    let mut last = f64::INFINITY;
    for _ in 0..30 {
        let (jtj, jtr) = data.normal_equations(&p);
        let Some(step) = jtj.cholesky().map(|ch| ch.solve(&jtr)) else {
            break;
        };
        let size = relative_step(&step, &p);
        let trial = p + step;
        if !(size < last) || trial[2] >= c_max {
            break;
        }
        let trial_chi2 = data.chi2(&trial);
        if !(trial_chi2 <= chi2 * (1.0 + 1e-12)) {
            break;
        }
        p = trial;
        chi2 = trial_chi2;
        last = size;
        iter += 1;
        if size <= 1e-15 {
            break;
        }
    }
    (p, chi2, iter)
}

/// Weighted fit of `a + b/(n − c)` to `(n_π, rate, err)` triples.
///
/// Points are weighted by `1/err²` when every error is positive; otherwise
/// weights are equal and the covariance is scaled by the reduced `χ²`.
/// Several starting values of `c` are tried and the lowest `χ²` wins.
pub fn fit_limiting_rate(slopes: &[(usize, f64, f64)]) -> Result<FitResult> {
    let mut distinct: Vec<usize> = slopes.iter().map(|s| s.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < MIN_FIT_COUNTS {
        return Err(Error::Underdetermined {
            distinct: distinct.len(),
        });
    }
    if slopes.iter().any(|s| !s.1.is_finite()) {
        return Err(Error::invalid("rate", "every rate must be finite"));
    }
    let weighted = slopes.iter().all(|s| s.2.is_finite() && s.2 > 0.0);
    let data = FitData {
        n: slopes.iter().map(|s| s.0 as f64).collect(),
        y: slopes.iter().map(|s| s.1).collect(),
        w: slopes
            .iter()
            .map(|s| if weighted { s.2.powi(-2) } else { 1.0 })
            .collect(),
    };
    let n_min = distinct[0] as f64;
    let c_max = n_min - POLE_MARGIN;

    let mut best: Option<(Vector3<f64>, f64, usize)> = None;
    for c0 in [0.0, 0.5, 0.9 * n_min] {
        let c0 = c0.min(c_max - 1e-3);
        let start = data.linear_start(c0);
        if !start.iter().all(|v| v.is_finite()) {
            continue;
        }
        if let Some(found) = levenberg_marquardt(&data, start, c_max) {
            if best.as_ref().is_none_or(|b| found.1 < b.1) {
                best = Some(found);
            }
        }
    }
    let Some((p, chi2, iterations)) = best else {
        return Err(Error::FitDiverged {
            reason: "no starting point converged".into(),
        });
    };
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::FitDiverged {
            reason: format!("non-finite parameters {p:?}"),
        });
    }
    let dof = slopes.len().saturating_sub(3);
    let (jtj, _) = data.normal_equations(&p);
    let mut cov = jtj.try_inverse().unwrap_or(Matrix3::from_element(f64::INFINITY));
    if !weighted && dof > 0 {
        cov *= chi2 / dof as f64;
    }
    let mut covariance = [[0.0; 3]; 3];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = cov[(i, j)];
        }
    }
    Ok(FitResult {
        a: p[0],
        b: p[1],
        c: p[2],
        covariance,
        chi2,
        dof,
        iterations,
        c_max,
    })
}
