//! Joint evolution of the internal and motional state in a truncated
//! harmonic-oscillator basis.
//!
//! Vectors are always expressed in the eigenbasis of the `|1⟩` potential.
//! Free evolution of the `|2⟩` component passes through the scaled basis
//! with the overlap matrix, which is where pulse-induced mixing between
//! vibrational levels comes from. Pulses act identically on every
//! motional component.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::neumaier_sum;
use crate::error::{Error, Result};
use crate::sequence::{rotation_matrix, Pulse, PulseSchedule};
use crate::trap::{overlap_matrix, OverlapMatrix, TrapModel, VibrationalLevel};

/// Largest population allowed in the top tenth of the basis after
/// evolution.
pub const TAIL_TOLERANCE: f64 = 1e-6;
/// Largest thermal population allowed beyond `0.9 N` at the start.
pub const INITIAL_TAIL_TOLERANCE: f64 = 1e-8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Motional starting condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialMotion {
    /// A single vibrational level.
    Level(VibrationalLevel),
    /// Incoherent thermal mixture at the trap temperature.
    Thermal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    /// Amplitudes of internal `|1⟩` over the motional basis.
    pub a1: Vec<Complex64>,
    /// Amplitudes of internal `|2⟩` over the same basis.
    pub a2: Vec<Complex64>,
}

impl JointState {
    /// Internal `|1⟩` with the atom in motional level `n`.
    pub fn lower(n: usize, size: usize) -> Self {
        let mut a1 = vec![ZERO; size];
        a1[n] = Complex64::new(1.0, 0.0);
        Self {
            a1,
            a2: vec![ZERO; size],
        }
    }

    pub fn size(&self) -> usize {
        self.a1.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.a1) + norm_sqr(&self.a2)
    }

    /// Total population of internal `|2⟩`.
    pub fn p2(&self) -> f64 {
        norm_sqr(&self.a2)
    }

    /// Population in basis states with index above `0.9 N`.
    pub fn tail(&self) -> f64 {
        let start = tail_start(self.size());
        norm_sqr(&self.a1[start..]) + norm_sqr(&self.a2[start..])
    }
}

fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(Complex64::norm_sqr).sum()
}

fn tail_start(size: usize) -> usize {
    ((0.9 * size as f64).floor() as usize + 1).min(size)
}

/// Harmonic free evolution in the two internal-state potentials.
struct Propagator<'a> {
    omega: f64,
    overlap: &'a OverlapMatrix,
}

impl Propagator<'_> {
    fn lower(&self, v: &mut [Complex64], dt: f64) {
        for (n, x) in v.iter_mut().enumerate() {
            *x *= Complex64::from_polar(1.0, -self.omega * (n as f64 + 0.5) * dt);
        }
    }

    fn upper(&self, v: &mut [Complex64], dt: f64, scratch: &mut [Complex64]) {
        let w = self.omega * (1.0 + self.overlap.eta());
        self.overlap.to_scaled(v, scratch);
        for (m, y) in scratch.iter_mut().enumerate() {
            *y *= Complex64::from_polar(1.0, -w * (m as f64 + 0.5) * dt);
        }
        self.overlap.to_unscaled(scratch, v);
    }

    fn check_size(&self, size: usize) -> Result<()> {
        if size != self.overlap.size() {
            return Err(Error::invalid(
                "N",
                format!(
                    "state has {size} basis states but the overlap matrix has {}",
                    self.overlap.size()
                ),
            ));
        }
        Ok(())
    }
}

fn tail_check(tail: f64, size: usize) -> Result<()> {
    if tail > TAIL_TOLERANCE {
        Err(Error::BasisTooSmall { tail, size })
    } else {
        Ok(())
    }
}

/// Free evolution over `dt` in the potentials of `trap`, with the `|2⟩`
/// potential described by `overlap` (whose `eta` is used).
pub fn free_evolve(
    state: &JointState,
    dt: f64,
    trap: &TrapModel,
    overlap: &OverlapMatrix,
) -> Result<JointState> {
    if !(dt >= 0.0) {
        return Err(Error::invalid("dt", format!("must be >= 0, got {dt}")));
    }
    let prop = Propagator {
        omega: trap.angular_frequency(),
        overlap,
    };
    prop.check_size(state.size())?;
    let mut out = state.clone();
    let mut scratch = vec![ZERO; state.size()];
    prop.lower(&mut out.a1, dt);
    prop.upper(&mut out.a2, dt, &mut scratch);
    tail_check(out.tail(), out.size())?;
    Ok(out)
}

/// Applies the internal rotation of `pulse` to every motional component.
/// The motional state does not take part in the pulse.
pub fn apply_pulse_joint(state: &JointState, pulse: &Pulse) -> JointState {
    let u = rotation_matrix(pulse, 0.0);
    let mut out = state.clone();
    for (x1, x2) in out.a1.iter_mut().zip(out.a2.iter_mut()) {
        let (c1, c2) = (*x1, *x2);
        *x1 = u[0][0] * c1 + u[0][1] * c2;
        *x2 = u[1][0] * c1 + u[1][1] * c2;
    }
    out
}

/// Smallest basis whose top tenth holds less than
/// [`INITIAL_TAIL_TOLERANCE`] of the thermal population of `trap`.
pub fn recommended_basis_size(trap: &TrapModel) -> usize {
    let cutoff = trap.level_cutoff(INITIAL_TAIL_TOLERANCE) as usize;
    ((cutoff as f64 / 0.9).ceil() as usize).max(cutoff + 1).max(8)
}

/// Mean vibrational occupation per dimension of the truncated thermal
/// distribution.
pub fn mean_occupation(trap: &TrapModel) -> f64 {
    let levels = trap.level_cutoff(1e-16);
    neumaier_sum((0..levels).map(|n| n as f64 * trap.level_probability(n)))
}

/// A colder copy of `trap` with mean occupation `nbar` and a differential
/// factor enlarged so that `η n̄` stays fixed. Mixing depends on the level
/// only through `η n`, so this keeps the physics while shrinking the
/// motional basis.
pub fn reduced_temperature(trap: &TrapModel, nbar: f64) -> Result<TrapModel> {
    if !(nbar > 0.0) {
        return Err(Error::invalid("nbar", "must be positive"));
    }
    let product = trap.differential_factor * mean_occupation(trap);
    let mut cold = *trap;
    cold.temperature = trap.quantum_temperature() / (1.0 / nbar).ln_1p();
    // refine against truncation of the distribution
    for _ in 0..3 {
        let ratio = mean_occupation(&cold) / nbar;
        cold.temperature /= ratio.powf(0.9);
    }
    cold.differential_factor = product / mean_occupation(&cold);
    cold.validate()?;
    Ok(cold)
}

/// Thermal average of the squared diagonal overlap `Σ_n p_n ⟨n'|n⟩²` in
/// one dimension: the probability that a single pulse leaves the motional
/// state of that dimension untouched.
pub fn thermal_diagonal_overlap(trap: &TrapModel, overlap: &OverlapMatrix) -> f64 {
    let levels = (trap.level_cutoff(1e-12) as usize).min(overlap.size());
    let weight = neumaier_sum((0..levels).map(|n| trap.level_probability(n as u32)));
    neumaier_sum(
        (0..levels).map(|n| trap.level_probability(n as u32) * overlap.diagonal(n).powi(2)),
    ) / weight
}

fn check_schedule(schedule: &PulseSchedule) -> Result<()> {
    if schedule.pulses().iter().any(|p| p.duration > 0.0) {
        return Err(Error::invalid(
            "schedule",
            "the motional engine takes instantaneous pulses only",
        ));
    }
    Ok(())
}

/// Full sequence from `|1⟩ ⊗ |n⟩`; returns the final state.
pub fn run_level_1d(
    trap: &TrapModel,
    schedule: &PulseSchedule,
    overlap: &OverlapMatrix,
    n: usize,
) -> Result<JointState> {
    check_schedule(schedule)?;
    let size = overlap.size();
    if n >= tail_start(size) {
        return Err(Error::BasisTooSmall { tail: 1.0, size });
    }
    let prop = Propagator {
        omega: trap.angular_frequency(),
        overlap,
    };
    let mut state = JointState::lower(n, size);
    let mut scratch = vec![ZERO; size];
    let mut t = schedule.pulses()[0].start_time;
    for pulse in schedule.pulses() {
        let dt = pulse.start_time - t;
        if dt > 0.0 {
            prop.lower(&mut state.a1, dt);
            prop.upper(&mut state.a2, dt, &mut scratch);
            t = pulse.start_time;
        }
        state = apply_pulse_joint(&state, pulse);
    }
    Ok(state)
}

/// Per-level quantities of a schedule whose interior pulses all invert
/// the internal state: the two internal histories that end in `|2⟩` and
/// the motional overlap between them.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TwoPath {
    norm_a: f64,
    norm_b: f64,
    cross: Complex64,
}

/// Internal amplitudes `(w_a, w_b)` of the two histories, `a` leaving the
/// opening pulse in `|1⟩` and `b` in `|2⟩`, or `None` if some interior
/// pulse does not invert.
fn two_path_weights(schedule: &PulseSchedule) -> Option<(Complex64, Complex64)> {
    let pulses = schedule.pulses();
    if pulses.len() < 2 || !pulses[1..pulses.len() - 1].iter().all(Pulse::is_inversion) {
        return None;
    }
    let open = rotation_matrix(&pulses[0], 0.0);
    let path = |mut s: usize, start: Complex64| {
        let mut w = start;
        for p in &pulses[1..pulses.len() - 1] {
            let u = rotation_matrix(p, 0.0);
            w *= u[1 - s][s];
            s = 1 - s;
        }
        let close = rotation_matrix(pulses.last().unwrap(), 0.0);
        w * close[1][s]
    };
    Some((path(0, open[0][0]), path(1, open[1][0])))
}

fn run_two_path(
    trap: &TrapModel,
    schedule: &PulseSchedule,
    overlap: &OverlapMatrix,
    n: usize,
) -> Result<(TwoPath, f64)> {
    let size = overlap.size();
    if n >= tail_start(size) {
        return Err(Error::BasisTooSmall { tail: 1.0, size });
    }
    let prop = Propagator {
        omega: trap.angular_frequency(),
        overlap,
    };
    let mut va = vec![ZERO; size];
    va[n] = Complex64::new(1.0, 0.0);
    let mut vb = va.clone();
    let mut scratch = vec![ZERO; size];
    let pulses = schedule.pulses();
    // internal state of each history during the current interval
    let (mut sa, mut sb) = (0usize, 1usize);
    for w in pulses.windows(2) {
        let dt = w[1].start_time - w[0].start_time;
        for (v, s) in [(&mut va, sa), (&mut vb, sb)] {
            if s == 0 {
                prop.lower(v, dt);
            } else {
                prop.upper(v, dt, &mut scratch);
            }
        }
        (sa, sb) = (1 - sa, 1 - sb);
    }
    let start = tail_start(size);
    let tail = norm_sqr(&va[start..]).max(norm_sqr(&vb[start..]));
    let cross = va
        .iter()
        .zip(&vb)
        .fold(ZERO, |acc, (a, b)| acc + a.conj() * b);
    Ok((
        TwoPath {
            norm_a: norm_sqr(&va),
            norm_b: norm_sqr(&vb),
            cross,
        },
        tail,
    ))
}

fn two_path_p2(wa: Complex64, wb: Complex64, norm_a: f64, norm_b: f64, cross: Complex64) -> f64 {
    wa.norm_sqr() * norm_a + wb.norm_sqr() * norm_b + 2.0 * (wa.conj() * wb * cross).re
}

/// Thermal weights over the levels that fit the basis.
fn thermal_levels(trap: &TrapModel, size: usize) -> Result<Vec<f64>> {
    let start = tail_start(size);
    let outside = 1.0 - neumaier_sum((0..start).map(|n| trap.level_probability(n as u32)));
    if outside > INITIAL_TAIL_TOLERANCE {
        return Err(Error::BasisTooSmall {
            tail: outside,
            size,
        });
    }
    let levels = (trap.level_cutoff(1e-14) as usize).min(start);
    Ok((0..levels)
        .map(|n| trap.level_probability(n as u32))
        .collect())
}

/// Detected `P₂` at the end of `schedule` computed in a motional basis of
/// `size` states, with the trap's differential factor as `η`.
///
/// One transverse dimension is propagated directly and works for any
/// schedule of instantaneous pulses. Two dimensions factorize when every
/// interior pulse inverts the internal state, which covers Ramsey, echo
/// and multiple-π schedules.
pub fn run_sequence_fock(
    trap: &TrapModel,
    schedule: &PulseSchedule,
    size: usize,
    initial: InitialMotion,
) -> Result<f64> {
    trap.validate()?;
    check_schedule(schedule)?;
    let overlap = overlap_matrix(trap.differential_factor, size)?;
    run_with_overlap(trap, schedule, &overlap, initial)
}

/// As [`run_sequence_fock`] with a prebuilt overlap matrix, for scans that
/// reuse one basis.
pub fn run_with_overlap(
    trap: &TrapModel,
    schedule: &PulseSchedule,
    overlap: &OverlapMatrix,
    initial: InitialMotion,
) -> Result<f64> {
    check_schedule(schedule)?;
    let size = overlap.size();
    let dims = trap.transverse_dims;
    if let InitialMotion::Level(level) = initial {
        if level.dims() != dims {
            return Err(Error::invalid(
                "initial_level",
                format!("has {} quantum numbers, trap has {dims} dimensions", level.dims()),
            ));
        }
    }

    if dims == 1 {
        let single = |n: usize| -> Result<(f64, f64)> {
            let st = run_level_1d(trap, schedule, overlap, n)?;
            Ok((st.p2(), st.tail()))
        };
        return match initial {
            InitialMotion::Level(level) => {
                let (p2, tail) = single(level.quanta()[0] as usize)?;
                tail_check(tail, size)?;
                Ok(p2)
            }
            InitialMotion::Thermal => {
                let weights = thermal_levels(trap, size)?;
                let runs: Vec<(f64, f64)> = (0..weights.len())
                    .into_par_iter()
                    .map(single)
                    .collect::<Result<_>>()?;
                let total = neumaier_sum(weights.iter().copied());
                let tail = neumaier_sum(weights.iter().zip(&runs).map(|(w, r)| w * r.1)) / total;
                tail_check(tail, size)?;
                Ok(neumaier_sum(weights.iter().zip(&runs).map(|(w, r)| w * r.0)) / total)
            }
        };
    }

    let (wa, wb) = two_path_weights(schedule).ok_or_else(|| {
        Error::invalid(
            "schedule",
            "two-dimensional motion needs every interior pulse to be an inversion",
        )
    })?;
    match initial {
        InitialMotion::Level(level) => {
            let q = level.quanta();
            let (x, tx) = run_two_path(trap, schedule, overlap, q[0] as usize)?;
            let (y, ty) = run_two_path(trap, schedule, overlap, q[1] as usize)?;
            tail_check(tx.max(ty), size)?;
            Ok(two_path_p2(
                wa,
                wb,
                x.norm_a * y.norm_a,
                x.norm_b * y.norm_b,
                x.cross * y.cross,
            ))
        }
        InitialMotion::Thermal => {
            let weights = thermal_levels(trap, size)?;
            let runs: Vec<(TwoPath, f64)> = (0..weights.len())
                .into_par_iter()
                .map(|n| run_two_path(trap, schedule, overlap, n))
                .collect::<Result<_>>()?;
            let total = neumaier_sum(weights.iter().copied());
            let mean = |f: &dyn Fn(&(TwoPath, f64)) -> f64| {
                neumaier_sum(weights.iter().zip(&runs).map(|(w, r)| w * f(r))) / total
            };
            tail_check(mean(&|r| r.1), size)?;
            let norm_a = mean(&|r| r.0.norm_a);
            let norm_b = mean(&|r| r.0.norm_b);
            let cross = Complex64::new(mean(&|r| r.0.cross.re), mean(&|r| r.0.cross.im));
            Ok(two_path_p2(
                wa,
                wb,
                norm_a * norm_a,
                norm_b * norm_b,
                cross * cross,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{build_schedule, PhaseConvention, SequenceKind};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn trap_1d(eta: f64) -> TrapModel {
        TrapModel {
            differential_factor: eta,
            transverse_dims: 1,
            ..TrapModel::default()
        }
    }

    #[test]
    fn zero_interval_is_identity() {
        let trap = trap_1d(0.05);
        let o = overlap_matrix(0.05, 40).unwrap();
        let mut s = JointState::lower(3, 40);
        s.a2[5] = Complex64::new(0.0, 0.6);
        s.a1[3] = Complex64::new(0.8, 0.0);
        let out = free_evolve(&s, 0.0, &trap, &o).unwrap();
        for (a, b) in out.a2.iter().zip(&s.a2) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(out.a1, s.a1);
    }

    #[test]
    fn upper_period_is_identity_up_to_phase() {
        let eta = 0.05;
        let trap = trap_1d(eta);
        let o = overlap_matrix(eta, 80).unwrap();
        let mut s = JointState::lower(0, 80);
        s.a1[0] = ZERO;
        s.a2[2] = Complex64::new(1.0, 0.0);
        let period = trap.transverse_period / (1.0 + eta);
        let out = free_evolve(&s, period, &trap, &o).unwrap();
        // the zero-point energy leaves a global phase of -π
        for (a, b) in out.a2.iter().zip(&s.a2) {
            assert!((a + b).norm() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn pi_pulse_moves_everything_up() {
        let s = JointState::lower(4, 20);
        let out = apply_pulse_joint(&s, &Pulse::ideal(0.0, PI, 0.0));
        assert_relative_eq!(out.p2(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(out.a2[4].norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn quarter_turns_compose() {
        let s = JointState::lower(2, 10);
        let half = Pulse::ideal(0.0, FRAC_PI_2, 0.4);
        let two = apply_pulse_joint(&apply_pulse_joint(&s, &half), &half);
        let one = apply_pulse_joint(&s, &Pulse::ideal(0.0, PI, 0.4));
        for (a, b) in two.a2.iter().zip(&one.a2) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn echo_at_tiny_eta_is_quiet() {
        let trap = trap_1d(2e-4);
        let o = overlap_matrix(2e-4, 60).unwrap();
        let mut worst: f64 = 0.0;
        for n in 0..=20 {
            let bound = 2.0 * (1.0 - o.diagonal(n).powi(4));
            for i in 1..=40 {
                let s = build_schedule(SequenceKind::Echo, 1, i as f64 * 0.37e-3, PhaseConvention::Constant)
                    .unwrap();
                let level = InitialMotion::Level(VibrationalLevel::new(&[n as u32]));
                let p2 = run_sequence_fock(&trap, &s, 60, level).unwrap();
                assert!(p2 <= bound, "n = {n}: {p2} above {bound}");
                if n <= 5 {
                    assert!(p2 < 1e-6, "n = {n}: {p2}");
                }
                worst = worst.max(p2);
            }
        }
        assert!(worst > 1e-7, "mixing should be visible at n = 20");
    }

    #[test]
    fn two_path_agrees_with_direct_propagation() {
        let trap = trap_1d(0.03);
        let o = overlap_matrix(0.03, 60).unwrap();
        for (kind, n_pi) in [
            (SequenceKind::Ramsey, 0),
            (SequenceKind::Echo, 1),
            (SequenceKind::MultiPi, 4),
        ] {
            let s = build_schedule(kind, n_pi, 3.3e-3, PhaseConvention::Alternating).unwrap();
            let (wa, wb) = two_path_weights(&s).unwrap();
            for n in [0, 3, 7] {
                let direct = run_level_1d(&trap, &s, &o, n).unwrap().p2();
                let (tp, _) = run_two_path(&trap, &s, &o, n).unwrap();
                let paths = two_path_p2(wa, wb, tp.norm_a, tp.norm_b, tp.cross);
                assert_relative_eq!(direct, paths, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn two_dimensional_ground_ramsey_matches_detuning() {
        // with both dimensions in the ground state the only effect left is
        // the differential zero-point shift
        let eta = 1e-3;
        let trap = TrapModel {
            differential_factor: eta,
            ..TrapModel::default()
        };
        let t = 0.37;
        let s = build_schedule(SequenceKind::Ramsey, 0, t, PhaseConvention::Constant).unwrap();
        let p2 = run_sequence_fock(&trap, &s, 30, InitialMotion::Level(VibrationalLevel::ground(2)))
            .unwrap();
        let o = overlap_matrix(eta, 30).unwrap();
        let delta = eta * trap.angular_frequency();
        // two histories: |1⟩ then |2⟩ after the second pulse, and vice versa
        let c = {
            let (tp, _) = run_two_path(&trap_1d(eta), &s, &o, 0).unwrap();
            tp.cross * tp.cross
        };
        assert_relative_eq!(c.arg(), -delta * t, epsilon = 1e-5);
        assert!((p2 - 0.5 * (1.0 + c.re)).abs() < 1e-12);
    }

    #[test]
    fn reduced_temperature_keeps_the_product() {
        let trap = TrapModel::default();
        let nbar = mean_occupation(&trap);
        // mean of the geometric law cut at N: q/(1-q) - N q^N/(1-q^N)
        let q = (-trap.boltzmann_exponent()).exp();
        let big_n = trap.n_bound() as f64;
        let closed = q / (1.0 - q) - big_n * q.powf(big_n) / (1.0 - q.powf(big_n));
        assert_relative_eq!(nbar, closed, max_relative = 1e-9);
        let cold = reduced_temperature(&trap, 10.0).unwrap();
        assert_relative_eq!(mean_occupation(&cold), 10.0, max_relative = 1e-6);
        assert_relative_eq!(
            cold.differential_factor * 10.0,
            trap.differential_factor * nbar,
            max_relative = 1e-6
        );
        let n = recommended_basis_size(&cold);
        assert!((150..300).contains(&n), "{n}");
    }

    #[test]
    fn undersized_basis_is_rejected() {
        let cold = reduced_temperature(&trap_1d(2e-4), 10.0).unwrap();
        let s = build_schedule(SequenceKind::Echo, 1, 5e-3, PhaseConvention::Constant).unwrap();
        assert!(matches!(
            run_sequence_fock(&cold, &s, 40, InitialMotion::Thermal),
            Err(Error::BasisTooSmall { .. })
        ));
        assert!(matches!(
            run_sequence_fock(&cold, &s, 40, InitialMotion::Level(VibrationalLevel::new(&[38]))),
            Err(Error::BasisTooSmall { .. })
        ));
    }

    #[test]
    fn finite_pulses_are_rejected() {
        let trap = trap_1d(0.01);
        let s = build_schedule(SequenceKind::Echo, 1, 5e-3, PhaseConvention::Constant)
            .unwrap()
            .with_finite_pulses(1e5)
            .unwrap();
        assert!(run_sequence_fock(&trap, &s, 20, InitialMotion::Thermal).is_err());
    }
}
