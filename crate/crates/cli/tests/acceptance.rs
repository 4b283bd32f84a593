//! Acceptance suite. Every criterion runs at its pinned tolerance and
//! prints one PASS or FAIL line; the process fails if any criterion does.
//!
//! Run with `cargo test --release -p trapcoh-cli --test acceptance`.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};

use trapcoh::analysis::fit_line;
use trapcoh::fock::{
    recommended_basis_size, reduced_temperature, run_with_overlap, thermal_diagonal_overlap,
};
use trapcoh::sequence::{Pulse, PulseSchedule};
use trapcoh::{
    build_schedule, overlap_matrix, CurvePoint, FitResult, InitialMotion, PhaseConvention,
    SequenceKind, TrapModel, VibrationalLevel,
};
use trapcoh_cli::output::curve_csv;
use trapcoh_cli::run::{self, CalibrationRequest, CurveRun, FreeParameter, SummaryRow};
use trapcoh_cli::ExperimentConfig;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(text).expect("acceptance configs are valid")
}

fn curve(cfg: &ExperimentConfig) -> CurveRun {
    let mut runs = run::simulate(cfg).expect("simulation runs");
    assert_eq!(runs.len(), 1);
    runs.remove(0)
}

fn points(run: &CurveRun) -> Vec<CurvePoint> {
    run.rows
        .iter()
        .map(|r| CurvePoint {
            tau_total: r.tau_total,
            p2: r.p2,
            stderr: r.stderr,
        })
        .collect()
}

fn slope_between(run: &CurveRun, lo: f64, hi: f64) -> (f64, f64) {
    let inside: Vec<CurvePoint> = points(run)
        .into_iter()
        .filter(|p| p.tau_total >= lo - 1e-12 && p.tau_total <= hi + 1e-12)
        .collect();
    let (fit, _) = fit_line(&inside).expect("window holds enough points");
    (fit.slope, fit.stderr)
}

// ---------------------------------------------------------------------------
// 1. Echo refocusing and Ramsey dephasing of a noiseless thermal ensemble

fn refocusing() -> Verdict {
    let start = Instant::now();
    let echo = curve(&config(
        r#"
[sequence]
kind = "echo"
tau_total = { start = "1ms", stop = "100ms", points = 100 }
[engine]
n_atoms = 10000
master_seed = 101
"#,
    ));
    let worst_echo = echo.rows.iter().map(|r| r.p2).fold(0.0, f64::max);

    let ramsey = |convention: &str| {
        curve(&config(&format!(
            r#"
[sequence]
kind = "ramsey"
phase_convention = "{convention}"
tau_total = {{ start = "0.25ms", stop = "20ms", points = 80 }}
[engine]
n_atoms = 10000
master_seed = 102
"#
        )))
    };
    let in_phase = ramsey("constant");
    let quadrature = ramsey("alternating");
    let elapsed = start.elapsed().as_secs_f64();

    let reaches = in_phase
        .rows
        .iter()
        .any(|r| r.tau_total <= 15e-3 && r.p2 >= 0.3);
    // fringe contrast from the two readout quadratures
    let contrast: Vec<(f64, f64)> = in_phase
        .rows
        .iter()
        .zip(&quadrature.rows)
        .map(|(a, b)| {
            let c = ((2.0 * a.p2 - 1.0).powi(2) + (2.0 * b.p2 - 1.0).powi(2)).sqrt();
            (a.tau_total, c)
        })
        .collect();
    let target = (-1.0f64).exp();
    let decay = contrast.windows(2).find_map(|w| {
        let ((t0, c0), (t1, c1)) = (w[0], w[1]);
        (c0 > target && c1 <= target).then(|| t0 + (c0 - target) / (c0 - c1) * (t1 - t0))
    });
    let decay_ok = decay.is_some_and(|t| (1.5e-3..=15e-3).contains(&t));
    verdict(
        worst_echo < 1e-9 && reaches && decay_ok && elapsed < 60.0,
        format!(
            "max echo P2 {worst_echo:.2e} (< 1e-9), Ramsey P2 >= 0.3 by 15 ms: {reaches}, \
             contrast 1/e at {} (1.5 to 15 ms), {elapsed:.1} s (< 60 s)",
            decay.map_or("never".to_string(), |t| format!("{:.2} ms", t * 1e3))
        ),
    )
}

// ---------------------------------------------------------------------------
// 2 to 4. Calibrated pulse-count scan

const PULSE_COUNTS: [usize; 6] = [1, 2, 4, 6, 8, 10];
const MIXING_LOSS_PER_PULSE: f64 = 0.01;

struct CalibratedScan {
    rate: f64,
    echo_tau_c: f64,
    eta_eff: f64,
    mixing_overlap: f64,
    rows: Vec<SummaryRow>,
    tau_c_err: Vec<Option<f64>>,
    fit: Option<FitResult>,
    fit_warning: Option<String>,
    seconds: f64,
}

const CALIBRATION: &str = r#"
[noise]
rayleigh_rate = 40.0
recoil_model = "resample_thermal"
power_noise = { sigma = 0.01, tau_corr = "30ms" }
f_changing_rate = 0.6
mf_changing_rate = 1.2
[sequence]
kind = "echo"
tau_total = { start = "2ms", stop = "100ms", points = 50 }
[engine]
n_atoms = 10000
master_seed = 2026
"#;

/// Differential factor at which the thermal per-pulse probability of
/// leaving the motional state, `1 − (Σ p_n ⟨n'|n⟩²)^dims`, equals `loss`.
/// The search runs on the reduced-temperature trap of the Fock engine and
/// is mapped back through the `η n̄` scaling.
fn mixing_for_loss(trap: &TrapModel, loss: f64) -> (f64, f64) {
    let cold = reduced_temperature(trap, 10.0).expect("reducible trap");
    let size = recommended_basis_size(&cold);
    let dims = trap.transverse_dims as i32;
    let kept = |eta: f64| {
        let t = TrapModel {
            differential_factor: eta,
            ..cold
        };
        let o = overlap_matrix(eta, size).expect("basis holds the thermal state");
        thermal_diagonal_overlap(&t, &o).powi(dims)
    };
    let (mut lo, mut hi) = (1e-6f64, 0.5f64);
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if 1.0 - kept(mid) < loss {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eta_cold = (lo * hi).sqrt();
    let eta_eff = eta_cold * trap.differential_factor / cold.differential_factor;
    (eta_eff, kept(eta_cold).sqrt())
}

/// Standard error of a threshold crossing from the errors of the two
/// bracketing points.
fn crossing_error(run: &CurveRun, threshold: f64) -> Option<f64> {
    run.rows.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (a.p2 < threshold && b.p2 >= threshold).then(|| {
            let f = (threshold - a.p2) / (b.p2 - a.p2);
            let slope = (b.p2 - a.p2) / (b.tau_total - a.tau_total);
            ((a.stderr * (1.0 - f)).powi(2) + (b.stderr * f).powi(2)).sqrt() / slope
        })
    })
}

fn calibrated_scan() -> &'static CalibratedScan {
    static SCAN: OnceLock<CalibratedScan> = OnceLock::new();
    SCAN.get_or_init(|| {
        let start = Instant::now();
        let base = config(CALIBRATION);
        let cal = run::calibrate(
            &base,
            &CalibrationRequest::new(26e-3, FreeParameter::RayleighRate),
        )
        .expect("calibration converges");
        let (eta_eff, mixing_overlap) =
            mixing_for_loss(&base.trap_model(), MIXING_LOSS_PER_PULSE);

        let mut cfg = cal.config.clone();
        cfg.noise.mixing_overlap = mixing_overlap;
        cfg.sequence.kind = SequenceKind::MultiPi;
        cfg.sequence.n_pi = PULSE_COUNTS.to_vec();
        cfg.sequence.tau_total = trapcoh_cli::config::TauGrid::range(2e-3, 150e-3, 75);
        cfg.validate().expect("scan config is valid");
        let scan = run::scan_pulses(&cfg).expect("scan runs");
        let tau_c_err = scan
            .curves
            .iter()
            .map(|c| crossing_error(c, cfg.analysis.threshold))
            .collect();
        CalibratedScan {
            rate: cal.value,
            echo_tau_c: cal.tau_c,
            eta_eff,
            mixing_overlap,
            rows: scan.rows,
            tau_c_err,
            fit_warning: scan.warnings.iter().find(|w| w.contains("fit")).cloned(),
            fit: scan.fit,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn fmt_ms(x: Option<f64>) -> String {
    x.map_or("none".to_string(), |t| format!("{:.1}", t * 1e3))
}

fn scan_shape() -> Verdict {
    let s = calibrated_scan();
    let taus: Vec<Option<f64>> = s.rows.iter().map(|r| r.tau_c).collect();
    let listing = s
        .rows
        .iter()
        .map(|r| format!("{}:{}", r.n_pi, fmt_ms(r.tau_c)))
        .collect::<Vec<_>>()
        .join(" ");
    let header = format!(
        "rayleigh_rate {:.2} s^-1, echo tau_c {:.2} ms, eta_eff {:.3e} (o = {:.5}), tau_c/ms {listing}",
        s.rate,
        s.echo_tau_c * 1e3,
        s.eta_eff,
        s.mixing_overlap
    );
    let calibrated = (s.echo_tau_c - 26e-3).abs() <= 1.3e-3;
    let Some(values) = taus.iter().copied().collect::<Option<Vec<f64>>>() else {
        return verdict(false, format!("{header}; a curve never crossed"));
    };
    let peak = (0..values.len())
        .max_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    let rising = values[..=peak].windows(2).all(|w| w[1] > w[0]);
    let ratio = values[peak] / s.echo_tau_c;
    // past the peak the curve decreases by construction; a peak at the
    // last pulse count needs a last step that is not significantly rising
    let levels_off = if peak + 1 < values.len() {
        true
    } else {
        let (a, b) = (values.len() - 2, values.len() - 1);
        let sigma = s.tau_c_err[a]
            .unwrap_or(0.0)
            .hypot(s.tau_c_err[b].unwrap_or(0.0));
        values[b] - values[a] <= 2.0 * sigma
    };
    verdict(
        calibrated && rising && ratio >= 2.0 && levels_off && s.seconds < 900.0,
        format!(
            "{header}; echo within 26 +/- 1.3 ms: {calibrated}, rising to the peak: {rising}, \
             peak at n_pi = {} with {ratio:.2}x echo (>= 2.0), flattens or decreases after it: \
             {levels_off}, {:.0} s (< 900 s)",
            PULSE_COUNTS[peak], s.seconds
        ),
    )
}

fn slope_suppression() -> Verdict {
    let s = calibrated_scan();
    let slope = |i: usize| s.rows[i].slope;
    let peak = s
        .rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| Some((i, r.tau_c?)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let listing = s
        .rows
        .iter()
        .map(|r| format!("{}:{}", r.n_pi, r.slope.map_or("none".into(), |v| format!("{v:.2}"))))
        .collect::<Vec<_>>()
        .join(" ");
    match (slope(0), peak.and_then(slope)) {
        (Some(echo), Some(best)) => {
            let factor = echo / best;
            verdict(
                factor >= 4.0,
                format!(
                    "intermediate slopes/s^-1 {listing}; echo/best = {factor:.2} (>= 4) at n_pi = {}",
                    PULSE_COUNTS[peak.unwrap()]
                ),
            )
        }
        _ => verdict(false, format!("missing slopes: {listing}")),
    }
}

fn limiting_rate() -> Verdict {
    let s = calibrated_scan();
    match &s.fit {
        Some(f) => verdict(
            (0.9..=2.1).contains(&f.a),
            format!(
                "a = {:.3} +/- {:.3} s^-1 (within [0.9, 2.1]), b = {:.3}, c = {:.3}, chi2/dof = {:.2}",
                f.a,
                f.a_err(),
                f.b,
                f.c,
                f.chi2 / f.dof.max(1) as f64
            ),
        ),
        None => verdict(
            false,
            format!(
                "fit unavailable: {}",
                s.fit_warning.clone().unwrap_or_default()
            ),
        ),
    }
}

// ---------------------------------------------------------------------------
// 5. π-π leakage against rate equations, and the half-slope relation

/// `P₂` after π, free leakage for `t`, π: fourth-order Runge-Kutta on the
/// populations of the two clock states and the two reservoirs.
fn rate_equation_pi_pi(gamma_f: f64, gamma_mf: f64, t: f64) -> f64 {
    let total = gamma_f + gamma_mf;
    let rhs = |y: [f64; 4]| {
        [
            -total * y[0],
            -total * y[1],
            gamma_mf * y[0] + gamma_f * y[1],
            gamma_f * y[0] + gamma_mf * y[1],
        ]
    };
    let mut y = [0.0, 1.0, 0.0, 0.0];
    let steps = 20_000;
    let h = t / steps as f64;
    let shift = |a: [f64; 4], k: [f64; 4], s: f64| std::array::from_fn(|i| a[i] + s * k[i]);
    for _ in 0..steps {
        let k1 = rhs(y);
        let k2 = rhs(shift(y, k1, 0.5 * h));
        let k3 = rhs(shift(y, k2, 0.5 * h));
        let k4 = rhs(shift(y, k3, h));
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    y[0] + y[3]
}

fn leakage() -> Verdict {
    let pipi = curve(&config(
        r#"
[noise]
f_changing_rate = 0.6
mf_changing_rate = 1.2
[sequence]
kind = "pi_pi"
tau_total = { values = [0.01, 0.02, 0.03, 0.04, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0] }
[engine]
n_atoms = 10000
master_seed = 501
"#,
    ));
    let mut worst_z: f64 = 0.0;
    for r in &pipi.rows {
        let oracle = rate_equation_pi_pi(0.6, 1.2, r.tau_total);
        worst_z = worst_z.max((r.p2 - oracle).abs() / r.stderr.max(1e-4));
    }
    let monotone = pipi.rows.windows(2).all(|w| w[1].p2 > w[0].p2);
    // initial slope over the first 50 ms against the oracle's slope there
    let (mc_slope, mc_err) = slope_between(&pipi, 10e-3, 50e-3);
    let oracle_points: Vec<CurvePoint> = pipi
        .rows
        .iter()
        .filter(|r| r.tau_total <= 50e-3 + 1e-12)
        .map(|r| CurvePoint {
            tau_total: r.tau_total,
            p2: rate_equation_pi_pi(0.6, 1.2, r.tau_total),
            stderr: r.stderr,
        })
        .collect();
    let oracle_slope = fit_line(&oracle_points).unwrap().0.slope;
    let slope_ok = (mc_slope - oracle_slope).abs() < 3.0 * mc_err;

    // half slope with hyperfine-preserving leakage only
    let half = |kind: &str, n: usize| {
        curve(&config(&format!(
            r#"
[noise]
mf_changing_rate = 1.2
[sequence]
kind = "{kind}"
n_pi = [{n}]
tau_total = {{ start = "50ms", stop = "1s", points = 20 }}
[engine]
n_atoms = 10000
master_seed = 502
"#
        )))
    };
    let (pp, _) = slope_between(&half("pi_pi", 1), 0.2, 1.0);
    let (mp, _) = slope_between(&half("multi_pi", 10), 0.2, 1.0);
    let ratio = mp / pp;
    let half_ok = (ratio / 0.5 - 1.0).abs() <= 0.15;
    verdict(
        worst_z < 3.0 && monotone && slope_ok && half_ok,
        format!(
            "pi-pi worst deviation {worst_z:.2} sigma (< 3), increasing: {monotone}, initial slope \
             {mc_slope:.3} +/- {mc_err:.3} vs oracle {oracle_slope:.3} s^-1, \
             multi-pi/pi-pi long-time slope {ratio:.3} (0.5 within 15%)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Motional revivals

fn revival_config(basis: Option<usize>) -> ExperimentConfig {
    let basis = basis.map_or(String::new(), |n| format!("basis_size = {n}"));
    config(&format!(
        r#"
[sequence]
kind = "multi_pi"
n_pi = [10]
tau_total = {{ start = "3.5ms", stop = "17.5ms", points = 41 }}
[engine]
kind = "fock"
reduced_mean_occupation = 10.0
master_seed = 601
{basis}
"#
    ))
}

fn revivals() -> Verdict {
    let start = Instant::now();
    let cfg = revival_config(None);
    let coarse = curve(&cfg);
    let size = recommended_basis_size(&run::fock_trap(&cfg).unwrap());
    let fine = curve(&revival_config(Some(2 * size)));
    let elapsed = start.elapsed().as_secs_f64();
    // numerical tolerance: change of the result when the basis is doubled
    let tolerance = coarse
        .rows
        .iter()
        .zip(&fine.rows)
        .map(|(a, b)| (a.p2 - b.p2).abs())
        .fold(f64::MIN_POSITIVE, f64::max);
    let check = |tau_total: f64| {
        let i = coarse
            .rows
            .iter()
            .position(|r| (r.tau_total - tau_total).abs() < 1e-9)
            .expect("grid holds the revival point");
        let p = coarse.rows[i].p2;
        let depth = (coarse.rows[i - 1].p2 - p).min(coarse.rows[i + 1].p2 - p);
        (depth > 3.0 * tolerance, p, depth)
    };
    let (ok7, p7, d7) = check(7e-3);
    let (ok14, p14, d14) = check(14e-3);
    verdict(
        ok7 && ok14 && elapsed < 600.0,
        format!(
            "spacing 0.7 ms: P2 {p7:.2e}, {d7:.2e} below both neighbours; spacing 1.4 ms: P2 \
             {p14:.2e}, {d14:.2e} below; tolerance {tolerance:.1e} from basis doubling \
             (N = {size}), {elapsed:.1} s (< 600 s)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Asymptotic mixing

/// Square roots of the first primes; interval `j` of sample `k` sits at
/// the fractional part of `k·√p_j`, so no two intervals are commensurate
/// with each other or with the trap period.
const IRRATIONALS: [f64; 7] = [2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0];

/// Multiple-π schedule whose free intervals are mutually incommensurate,
/// with the odd intervals rescaled so that time spent on either side of
/// each inversion balances and a fixed detuning still refocuses.
fn incommensurate_schedule(n_pi: usize, period: f64, k: usize) -> PulseSchedule {
    let template = build_schedule(SequenceKind::MultiPi, n_pi, 1.0, PhaseConvention::Constant)
        .expect("template schedule");
    let mut intervals: Vec<f64> = (0..=n_pi)
        .map(|j| period * (10.0 + 100.0 * ((k as f64 + 1.0) * IRRATIONALS[j].sqrt()).fract()))
        .collect();
    let even: f64 = intervals.iter().step_by(2).sum();
    let odd: f64 = intervals.iter().skip(1).step_by(2).sum();
    for x in intervals.iter_mut().skip(1).step_by(2) {
        *x *= even / odd;
    }
    let mut t = 0.0;
    let pulses = template
        .pulses()
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if j > 0 {
                t += intervals[j - 1];
            }
            Pulse::ideal(t, p.area, p.phase)
        })
        .collect();
    PulseSchedule::from_pulses(SequenceKind::MultiPi, pulses).expect("ordered pulses")
}

fn asymptotic_mixing() -> Verdict {
    let eta = 0.05;
    let level = 8u32;
    let trap = TrapModel {
        differential_factor: eta,
        transverse_dims: 1,
        ..TrapModel::default()
    };
    let o = overlap_matrix(eta, 90).unwrap();
    let diag = o.diagonal(level as usize);
    let initial = InitialMotion::Level(VibrationalLevel::new(&[level]));
    let samples = 2000;
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let average = |schedule: &dyn Fn(usize) -> PulseSchedule| {
        (0..samples)
            .map(|k| run_with_overlap(&trap, &schedule(k), &o, initial).unwrap())
            .sum::<f64>()
            / samples as f64
    };
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for n in [1usize, 2, 4, 6] {
        let mean = average(&|k| incommensurate_schedule(n, trap.transverse_period, k));
        // one repeated spacing, reported for comparison only
        let uniform = average(&|k| {
            let spacing = trap.transverse_period * (10.0 + 100.0 * ((k as f64 + 0.5) * golden).fract());
            build_schedule(SequenceKind::MultiPi, n, spacing * n as f64, PhaseConvention::Constant)
                .unwrap()
        });
        let want = trapcoh::asymptotic_mixing(diag, n);
        worst = worst.max((mean / want - 1.0).abs());
        parts.push(format!(
            "n_pi {n}: {mean:.4e} vs {want:.4e} (uniform spacing {uniform:.4e})"
        ));
    }
    verdict(
        worst <= 0.05,
        format!(
            "eta {eta}, level {level}, o = {diag:.5}; {}; worst {:.1}% (<= 5%)",
            parts.join(", "),
            worst * 100.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Overlap matrix against grid diagonalization

const GRID_POINTS: usize = 321;
const GRID_HALF_WIDTH: f64 = 16.0;

/// Lowest `count` eigenvectors of `p²/2 + ω²x²/2` (ħ = m = 1) in a sinc
/// discrete variable representation, signed positive beyond the outer
/// turning point.
fn grid_eigenstates(omega: f64, count: usize) -> DMatrix<f64> {
    let h = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
    let x: Vec<f64> = (0..GRID_POINTS).map(|i| -GRID_HALF_WIDTH + i as f64 * h).collect();
    let ham = DMatrix::from_fn(GRID_POINTS, GRID_POINTS, |i, j| {
        let kinetic = if i == j {
            PI * PI / 3.0
        } else {
            let d = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            2.0 * sign / (d * d)
        } / (2.0 * h * h);
        kinetic + if i == j { 0.5 * omega * omega * x[i] * x[i] } else { 0.0 }
    });
    let eig = SymmetricEigen::new(ham);
    let mut order: Vec<usize> = (0..GRID_POINTS).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vecs = DMatrix::zeros(GRID_POINTS, count);
    for (k, &idx) in order.iter().take(count).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let turning = ((2 * k + 1) as f64 / omega).sqrt();
        let outer: f64 = x
            .iter()
            .zip(v.iter())
            .filter(|(&xi, _)| xi > turning)
            .map(|(_, &vi)| vi)
            .sum();
        if outer < 0.0 {
            v.neg_mut();
        }
        vecs.set_column(k, &v);
    }
    vecs
}

fn overlap_oracle() -> Verdict {
    let mut worst: f64 = 0.0;
    for eta in [1e-3, 1e-2, 1e-1] {
        let lower = grid_eigenstates(1.0, 40);
        let upper = grid_eigenstates(1.0 + eta, 40);
        let oracle = upper.transpose() * lower;
        for size in [5usize, 20, 40] {
            let o = overlap_matrix(eta, size).unwrap();
            for m in 0..size {
                for n in 0..size {
                    worst = worst.max((o.get(m, n) - oracle[(m, n)]).abs());
                }
            }
        }
    }
    let mut ortho: f64 = 0.0;
    let mut parity = true;
    for eta in [1e-3, 1e-2, 1e-1] {
        let size = 120;
        let o = overlap_matrix(eta, size).unwrap();
        for n in 0..40 {
            for k in 0..40 {
                let dot: f64 = (0..size).map(|m| o.get(m, n) * o.get(m, k)).sum();
                ortho = ortho.max((dot - if n == k { 1.0 } else { 0.0 }).abs());
                parity &= (n + k) % 2 == 0 || o.get(n, k) == 0.0;
            }
        }
    }
    verdict(
        worst < 1e-6 && ortho < 1e-10 && parity,
        format!(
            "max deviation {worst:.1e} (< 1e-6), orthonormality {ortho:.1e} (< 1e-10), \
             odd-parity elements zero: {parity}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Leakage sets a floor that π-pulses cannot lower

fn t1_floor() -> Verdict {
    let cfg = config(
        r#"
[noise]
f_changing_rate = 0.6
mf_changing_rate = 1.2
[sequence]
kind = "multi_pi"
n_pi = [1, 2, 4, 6, 8, 10]
tau_total = { start = "20ms", stop = "600ms", points = 30 }
[engine]
n_atoms = 10000
master_seed = 901
"#,
    );
    let runs = run::simulate(&cfg).unwrap();
    // coherence loss rate from −ln(1 − 2P₂) against τ
    let rates: Vec<f64> = runs
        .iter()
        .map(|r| {
            let pts: Vec<CurvePoint> = r
                .rows
                .iter()
                .map(|row| {
                    let c = 1.0 - 2.0 * row.p2;
                    CurvePoint {
                        tau_total: row.tau_total,
                        p2: -c.ln(),
                        stderr: 2.0 * row.stderr / c,
                    }
                })
                .collect();
            fit_line(&pts).unwrap().0.slope
        })
        .collect();
    let reference = rates[0];
    let spread = rates
        .iter()
        .map(|r| (r / reference - 1.0).abs())
        .fold(0.0, f64::max);
    let listing = PULSE_COUNTS
        .iter()
        .zip(&rates)
        .map(|(n, r)| format!("{n}:{r:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        spread <= 0.10,
        format!("decay rates/s^-1 {listing}; largest departure from n_pi = 1 is {:.1}% (<= 10%)", spread * 100.0),
    )
}

// ---------------------------------------------------------------------------
// 10. Determinism and worker-count invariance

const DETERMINISM: &str = r#"
[noise]
rayleigh_rate = 50.0
power_noise = { sigma = 0.01, tau_corr = "30ms" }
zeeman_noise = { sigma = 5.0, tau_corr = "5ms" }
f_changing_rate = 0.6
mf_changing_rate = 1.2
mixing_overlap = 0.995
[sequence]
kind = "multi_pi"
n_pi = [1, 4, 10]
tau_total = { start = "2ms", stop = "80ms", points = 20 }
[engine]
n_atoms = 2000
master_seed = 1001
"#;

fn determinism() -> Verdict {
    let cfg = config(DETERMINISM);
    let bytes = |threads: usize| -> Vec<Vec<u8>> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run::simulate(&cfg).unwrap().iter().map(curve_csv).collect())
    };
    let reference = bytes(1);
    let in_process = [1, 2, 4, 7].iter().all(|&t| bytes(t) == reference);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.toml");
    std::fs::write(&path, DETERMINISM).unwrap();
    // every run writes to the same directory so the manifests are comparable
    let out = dir.path().join("out");
    let binary = |threads: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_trapcoh"))
            .args(["--threads", threads, "scan-pulses"])
            .arg(&path)
            .arg("-o")
            .arg(&out)
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        let files = ["multi_pi_n1.csv", "multi_pi_n4.csv", "multi_pi_n10.csv", "summary.csv", "manifest.json"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect::<Vec<_>>();
        std::fs::remove_dir_all(&out).unwrap();
        files
    };
    let a = binary("1");
    let end_to_end = a == binary("1") && a == binary("5");
    verdict(
        in_process && end_to_end,
        format!(
            "curves identical for 1, 2, 4 and 7 workers: {in_process}; repeated and re-threaded \
             CLI scans byte-identical: {end_to_end}"
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("echo refocusing and Ramsey dephasing", refocusing),
        ("calibrated pulse-count scan shape", scan_shape),
        ("intermediate-slope suppression", slope_suppression),
        ("limiting-rate extrapolation", limiting_rate),
        ("pi-pi leakage and half slope", leakage),
        ("motional revivals", revivals),
        ("asymptotic mixing", asymptotic_mixing),
        ("overlap oracle", overlap_oracle),
        ("leakage floor", t1_floor),
        ("determinism and worker invariance", determinism),
    ];
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !only.is_empty() && !only.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {number:>2} {} {name} [{:.1} s]: {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
