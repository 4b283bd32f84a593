//! Experiment orchestration: curves, pulse-count scans and calibration.
//! Nothing here touches the file system.

use rayon::prelude::*;
use serde::Serialize;

use trapcoh::analysis::{crossing_time, fit_line};
use trapcoh::fock::{recommended_basis_size, reduced_temperature};
use trapcoh::rng::derive_seed;
use trapcoh::{
    fit_limiting_rate, intermediate_slope, overlap_matrix, simulate_ensemble, CoherenceCurve,
    CurvePoint, Error, FitResult, InitialMotion, NoiseConfig, SequenceKind, TrapModel,
    VibrationalLevel,
};

use crate::config::{EngineKind, ExperimentConfig};
use crate::error::{CliError, Result};

/// Stable label of a sequence kind inside derived seeds.
pub fn kind_label(kind: SequenceKind) -> u64 {
    match kind {
        SequenceKind::Ramsey => 0,
        SequenceKind::Echo => 1,
        SequenceKind::MultiPi => 2,
        SequenceKind::PiPi => 3,
    }
}

/// Seed of scan point `tau_index` of the `(kind, n_pi)` curve.
pub fn point_seed(master: u64, kind: SequenceKind, n_pi: usize, tau_index: usize) -> u64 {
    derive_seed(master, &[kind_label(kind), n_pi as u64, tau_index as u64])
}

/// One row of a curve file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub tau_total: f64,
    pub p2: f64,
    pub stderr: f64,
    /// Atoms averaged at this point; 0 for the deterministic Fock engine.
    pub n_atoms: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRun {
    pub kind: SequenceKind,
    pub n_pi: usize,
    pub rows: Vec<CurveRow>,
}

impl CurveRun {
    pub fn curve(&self, fingerprint: Option<String>) -> Result<CoherenceCurve> {
        let points = self
            .rows
            .iter()
            .map(|r| CurvePoint {
                tau_total: r.tau_total,
                p2: r.p2,
                stderr: r.stderr,
            })
            .collect();
        let mut c = CoherenceCurve::new(self.kind, self.n_pi, points)?;
        c.fingerprint = fingerprint;
        Ok(c)
    }

    /// File stem such as `multi_pi_n4`.
    pub fn stem(&self) -> String {
        format!("{}_n{}", self.kind.name(), self.n_pi)
    }
}

/// Trap actually handed to the Fock engine.
pub fn fock_trap(cfg: &ExperimentConfig) -> Result<TrapModel> {
    let trap = cfg.trap_model();
    Ok(match cfg.engine.reduced_mean_occupation {
        Some(nbar) => reduced_temperature(&trap, nbar)?,
        None => trap,
    })
}

/// Simulates one curve of `kind` with `n_pi` pulses over the configured
/// grid, with `noise` in place of the configured noise.
pub fn run_curve_with(
    cfg: &ExperimentConfig,
    kind: SequenceKind,
    n_pi: usize,
    noise: &NoiseConfig,
) -> Result<CurveRun> {
    let mut cfg = cfg.clone();
    cfg.sequence.kind = kind;
    let taus = cfg.tau_values();
    let master = cfg.engine.master_seed;
    let rows = match cfg.engine.kind {
        EngineKind::Bloch => {
            let trap = cfg.trap_model();
            let n_atoms = cfg.engine.n_atoms;
            taus.iter()
                .enumerate()
                .map(|(i, &tau)| {
                    let seed = point_seed(master, kind, n_pi, i);
                    let s = cfg.schedule(n_pi, tau)?;
                    let r = simulate_ensemble(&trap, &s, noise, n_atoms, seed)?;
                    Ok(CurveRow {
                        tau_total: tau,
                        p2: r.p2_mean,
                        stderr: r.p2_stderr,
                        n_atoms,
                        seed,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        EngineKind::Fock => {
            let trap = fock_trap(&cfg)?;
            let size = cfg
                .engine
                .basis_size
                .unwrap_or_else(|| recommended_basis_size(&trap));
            let overlap = overlap_matrix(trap.differential_factor, size)?;
            let initial = match &cfg.engine.initial_level {
                Some(q) => InitialMotion::Level(VibrationalLevel::new(q)),
                None => InitialMotion::Thermal,
            };
            let cfg = &cfg;
            taus.par_iter()
                .enumerate()
                .map(|(i, &tau)| {
                    let s = cfg.schedule(n_pi, tau)?;
                    let p2 = trapcoh::fock::run_with_overlap(&trap, &s, &overlap, initial)?;
                    Ok(CurveRow {
                        tau_total: tau,
                        p2,
                        stderr: 0.0,
                        n_atoms: 0,
                        seed: point_seed(master, kind, n_pi, i),
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(CurveRun { kind, n_pi, rows })
}

/// Every curve the configured sequence section asks for.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<CurveRun>> {
    let noise = cfg.noise_model();
    cfg.sequence
        .pulse_counts()
        .into_iter()
        .map(|n| run_curve_with(cfg, cfg.sequence.kind, n, &noise))
        .collect()
}

/// One line of the pulse-count summary. Missing values come from curves
/// that never cross the threshold or windows with too few points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n_pi: usize,
    pub tau_c: Option<f64>,
    pub slope: Option<f64>,
    pub slope_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    pub curves: Vec<CurveRun>,
    pub rows: Vec<SummaryRow>,
    pub fit: Option<FitResult>,
    pub warnings: Vec<String>,
}

/// Coherence time and intermediate slope of one curve, per the analysis
/// section. Failures become warnings.
pub fn summarize_curve(
    cfg: &ExperimentConfig,
    run: &CurveRun,
    warnings: &mut Vec<String>,
) -> Result<SummaryRow> {
    let a = &cfg.analysis;
    let curve = run.curve(None)?;
    let mut row = SummaryRow {
        n_pi: run.n_pi,
        tau_c: None,
        slope: None,
        slope_err: None,
    };
    let tau_c = match crossing_time(&curve, a.threshold) {
        Ok(t) => t,
        Err(e @ Error::NoCrossing { .. }) => {
            warnings.push(format!("n_pi = {}: {e}", run.n_pi));
            return Ok(row);
        }
        Err(e) => return Err(e.into()),
    };
    row.tau_c = Some(tau_c);
    let long = match a.long_time_window {
        Some([lo, hi]) => {
            let tail: Vec<CurvePoint> = curve
                .points()
                .iter()
                .copied()
                .filter(|p| p.tau_total >= lo.0 && p.tau_total <= hi.0)
                .collect();
            match fit_line(&tail) {
                Ok((fit, _)) => fit.slope,
                Err(e) => {
                    warnings.push(format!("n_pi = {}: long-time window: {e}", run.n_pi));
                    return Ok(row);
                }
            }
        }
        None => a.long_time_slope,
    };
    let window = (a.slope_window[0] * tau_c, a.slope_window[1] * tau_c);
    match intermediate_slope(&curve, window, long) {
        Ok(s) => {
            row.slope = Some(s.slope);
            row.slope_err = Some(s.stderr);
        }
        Err(e @ Error::DegenerateWindow { .. }) => {
            warnings.push(format!("n_pi = {}: {e}", run.n_pi))
        }
        Err(e) => return Err(e.into()),
    }
    Ok(row)
}

/// Limiting-rate fit of the rows that carry a slope, or a warning.
pub fn fit_rows(rows: &[SummaryRow], warnings: &mut Vec<String>) -> Option<FitResult> {
    let data: Vec<(usize, f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.n_pi, r.slope?, r.slope_err?)))
        .collect();
    match fit_limiting_rate(&data) {
        Ok(f) => Some(f),
        Err(e) => {
            warnings.push(format!("limiting-rate fit skipped: {e}"));
            None
        }
    }
}

/// Multiple-π curves for every configured pulse count, their summary
/// table and the limiting-rate fit.
pub fn scan_pulses(cfg: &ExperimentConfig) -> Result<ScanOutcome> {
    if cfg.sequence.kind != SequenceKind::MultiPi {
        return Err(CliError::config(
            "scan-pulses needs sequence kind `multi_pi`",
        ));
    }
    let mut warnings = Vec::new();
    let curves = simulate(cfg)?;
    let rows = curves
        .iter()
        .map(|c| summarize_curve(cfg, c, &mut warnings))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_rows(&rows, &mut warnings);
    Ok(ScanOutcome {
        curves,
        rows,
        fit,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParameter {
    RayleighRate,
    PowerSigma,
}

impl FreeParameter {
    pub fn name(self) -> &'static str {
        match self {
            FreeParameter::RayleighRate => "rayleigh_rate",
            FreeParameter::PowerSigma => "power_sigma",
        }
    }

    /// Default search interval.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            FreeParameter::RayleighRate => (0.1, 200.0),
            FreeParameter::PowerSigma => (1e-4, 0.5),
        }
    }

    fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<()> {
        match self {
            FreeParameter::RayleighRate => cfg.noise.rayleigh_rate = value,
            FreeParameter::PowerSigma => match cfg.noise.power_noise.as_mut() {
                Some(ou) => ou.sigma = value,
                None => {
                    return Err(CliError::config(
                        "calibrating power_sigma needs a `power_noise` entry",
                    ))
                }
            },
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRequest {
    /// s.
    pub target: f64,
    pub parameter: FreeParameter,
    pub bounds: (f64, f64),
    /// Relative tolerance on the coherence time.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl CalibrationRequest {
    pub fn new(target: f64, parameter: FreeParameter) -> Self {
        Self {
            target,
            parameter,
            bounds: parameter.default_bounds(),
            tolerance: 0.05,
            max_iterations: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationStep {
    pub value: f64,
    /// s; `None` when the echo curve never crossed the threshold.
    pub tau_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub value: f64,
    pub tau_c: f64,
    pub history: Vec<CalibrationStep>,
    /// Input config with the calibrated value substituted.
    pub config: ExperimentConfig,
}

/// Echo coherence time as an ordering key: a curve that stays below the
/// threshold has a coherence time beyond the grid, one that starts above
/// it a coherence time before the grid.
fn echo_tau_c(cfg: &ExperimentConfig) -> Result<(Option<f64>, f64)> {
    let run = run_curve_with(cfg, SequenceKind::Echo, 1, &cfg.noise_model())?;
    let curve = run.curve(None)?;
    match crossing_time(&curve, cfg.analysis.threshold) {
        Ok(t) => Ok((Some(t), t)),
        Err(Error::NoCrossing { .. }) => {
            let above = curve.points()[0].p2 >= cfg.analysis.threshold;
            Ok((None, if above { 0.0 } else { f64::INFINITY }))
        }
        Err(e) => Err(e.into()),
    }
}

/// Bisection in log space on a noise magnitude until the echo coherence
/// time is within the relative tolerance of the target. More noise always
/// means a shorter coherence time, and the seeds stay fixed across
/// evaluations so the response is monotone.
pub fn calibrate(cfg: &ExperimentConfig, req: &CalibrationRequest) -> Result<CalibrationOutcome> {
    if !(req.target.is_finite() && req.target > 0.0) {
        return Err(CliError::config(format!(
            "calibration target must be a positive time, got {}",
            req.target
        )));
    }
    let (lo, hi) = req.bounds;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(CliError::config(
            "calibration bounds must satisfy 0 < lower < upper",
        ));
    }
    if !(req.tolerance > 0.0) || req.max_iterations == 0 {
        return Err(CliError::config(
            "tolerance and max_iterations must be positive",
        ));
    }
    let mut history = Vec::new();
    let eval =
        |value: f64, history: &mut Vec<CalibrationStep>| -> Result<(ExperimentConfig, f64)> {
            let mut c = cfg.clone();
            req.parameter.apply(&mut c, value)?;
            c.validate()?;
            let (tau_c, key) = echo_tau_c(&c)?;
            history.push(CalibrationStep { value, tau_c });
            Ok((c, key))
        };
    let close = |t: f64| (t / req.target - 1.0).abs() < req.tolerance;
    let done = |value, tau_c, config, history| CalibrationOutcome {
        value,
        tau_c,
        history,
        config,
    };

    let (c_lo, t_lo) = eval(lo, &mut history)?;
    if close(t_lo) {
        return Ok(done(lo, t_lo, c_lo, history));
    }
    let (c_hi, t_hi) = eval(hi, &mut history)?;
    if close(t_hi) {
        return Ok(done(hi, t_hi, c_hi, history));
    }
    if !(t_lo > req.target && t_hi < req.target) {
        return Err(CliError::Numerical(Error::FitDiverged {
            reason: format!(
                "{} in [{lo}, {hi}] does not bracket a coherence time of {} s \
                 (ends give {t_lo} s and {t_hi} s)",
                req.parameter.name(),
                req.target
            ),
        }));
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..req.max_iterations {
        let mid = (a * b).sqrt();
        let (c_mid, t_mid) = eval(mid, &mut history)?;
        if close(t_mid) {
            return Ok(done(mid, t_mid, c_mid, history));
        }
        if t_mid > req.target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Err(CliError::Numerical(Error::FitDiverged {
        reason: format!(
            "calibration of {} did not reach {} s within {} iterations (bracket [{a}, {b}])",
            req.parameter.name(),
            req.target,
            req.max_iterations
        ),
    }))
}
