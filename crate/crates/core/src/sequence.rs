//! Pulse schedules and two-level rotations.
//!
//! Amplitudes are `(c₁, c₂)` for `|1⟩ = |F=2, m_F=0⟩` and
//! `|2⟩ = |F=3, m_F=0⟩` in the frame rotating at the microwave frequency.
//! Free evolution at detuning `δ` multiplies `c₂` by `e^{-iδt}`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default microwave Rabi frequency, rad/s (5 kHz).
pub const DEFAULT_RABI_FREQUENCY: f64 = 2.0 * PI * 5e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    /// π/2, free evolution, π/2.
    Ramsey,
    /// π/2, π, π/2 with equal gaps.
    Echo,
    /// π/2, then `n_pi` π-pulses spaced by τ with τ/2 margins, then a
    /// closing π/2 or 3π/2.
    MultiPi,
    /// Two population-inverting π-pulses with nothing in between.
    PiPi,
}

impl SequenceKind {
    pub fn name(self) -> &'static str {
        match self {
            SequenceKind::Ramsey => "ramsey",
            SequenceKind::Echo => "echo",
            SequenceKind::MultiPi => "multi_pi",
            SequenceKind::PiPi => "pi_pi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseConvention {
    /// Every pulse rotates about the same equatorial axis.
    #[default]
    Constant,
    /// π-pulses alternate between the 90° and 0° axes, starting at 90°.
    /// A Ramsey schedule closes on the 90° axis (quadrature readout).
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    /// s.
    pub start_time: f64,
    /// Rotation angle, rad.
    pub area: f64,
    /// Azimuth of the rotation axis in the equatorial plane, rad.
    pub phase: f64,
    /// s; zero for an instantaneous ideal pulse.
    pub duration: f64,
    /// rad/s; only used when `duration > 0`.
    pub rabi_frequency: f64,
}

impl Pulse {
    pub fn ideal(start_time: f64, area: f64, phase: f64) -> Self {
        Self {
            start_time,
            area,
            phase,
            duration: 0.0,
            rabi_frequency: DEFAULT_RABI_FREQUENCY,
        }
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration
    }

    /// True for a pulse whose area is an odd multiple of π.
    pub fn is_inversion(&self) -> bool {
        let turns = self.area / PI;
        (turns - turns.round()).abs() < 1e-12 && (turns.round() as i64) % 2 != 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pulses: Vec<Pulse>,
    total_time: f64,
    n_pi: usize,
    kind: SequenceKind,
}

impl PulseSchedule {
    /// Wraps an explicit pulse list after checking ordering and overlap.
    pub fn from_pulses(kind: SequenceKind, pulses: Vec<Pulse>) -> Result<Self> {
        if pulses.is_empty() {
            return Err(Error::invalid("pulses", "schedule needs at least one pulse"));
        }
        for p in &pulses {
            if !(p.start_time >= 0.0 && p.area > 0.0 && p.duration >= 0.0) {
                return Err(Error::invalid(
                    "pulses",
                    format!("pulse {p:?} needs start_time >= 0, area > 0, duration >= 0"),
                ));
            }
            if p.duration > 0.0 && (p.rabi_frequency * p.duration - p.area).abs() > 1e-9 * p.area
            {
                return Err(Error::invalid(
                    "pulses",
                    "finite pulse area must equal rabi_frequency * duration",
                ));
            }
        }
        for w in pulses.windows(2) {
            if w[1].start_time <= w[0].start_time || w[1].start_time < w[0].end_time() {
                return Err(Error::invalid(
                    "pulses",
                    "pulses must be strictly time-ordered and must not overlap",
                ));
            }
        }
        let total_time = pulses.last().unwrap().start_time - pulses[0].start_time;
        let n_pi = pulses
            .iter()
            .filter(|p| (p.area - PI).abs() < 1e-12)
            .count();
        Ok(Self {
            pulses,
            total_time,
            n_pi,
            kind,
        })
    }

    pub fn pulses(&self) -> &[Pulse] {
        &self.pulses
    }

    /// Time between the first and the last pulse, s.
    pub fn total_time(&self) -> f64 {
        self.total_time
    }

    /// Time until the end of the last pulse, s.
    pub fn end_time(&self) -> f64 {
        self.pulses.last().map_or(0.0, Pulse::end_time)
    }

    pub fn n_pi(&self) -> usize {
        self.n_pi
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    /// Same timing with every pulse given a finite duration at Rabi
    /// frequency `rabi_frequency`. Pulses keep their start times.
    pub fn with_finite_pulses(&self, rabi_frequency: f64) -> Result<Self> {
        if !(rabi_frequency > 0.0) {
            return Err(Error::invalid("rabi_frequency", "must be positive"));
        }
        let pulses = self
            .pulses
            .iter()
            .map(|p| Pulse {
                duration: p.area / rabi_frequency,
                rabi_frequency,
                ..*p
            })
            .collect();
        Self::from_pulses(self.kind, pulses)
    }

    /// Returns `|c₂|²` for an atom starting in `|1⟩` at zero detuning.
    pub fn coherent_p2(&self) -> f64 {
        let mut amps = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        for p in &self.pulses {
            amps = apply_rotation(amps, p, 0.0);
        }
        amps[1].norm_sqr()
    }
}

/// Builds the timed schedule for `kind` spanning `tau_total`.
///
/// `n_pi` is only read for [`SequenceKind::MultiPi`]. The last pulse of a
/// multiple-π schedule is a π/2 or 3π/2, whichever brings a resonant atom
/// back to `|1⟩`, so that a fully coherent ensemble reads `P₂ = 0`.
pub fn build_schedule(
    kind: SequenceKind,
    n_pi: usize,
    tau_total: f64,
    phases: PhaseConvention,
) -> Result<PulseSchedule> {
    if !(tau_total.is_finite() && tau_total > 0.0) {
        return Err(Error::invalid(
            "tau_total",
            format!("must be positive, got {tau_total}"),
        ));
    }
    let pi_phase = |j: usize| match phases {
        PhaseConvention::Constant => 0.0,
        PhaseConvention::Alternating if j % 2 == 0 => FRAC_PI_2,
        PhaseConvention::Alternating => 0.0,
    };
    let pulses = match kind {
        SequenceKind::Ramsey => {
            let closing_phase = match phases {
                PhaseConvention::Constant => 0.0,
                PhaseConvention::Alternating => FRAC_PI_2,
            };
            vec![
                Pulse::ideal(0.0, FRAC_PI_2, 0.0),
                Pulse::ideal(tau_total, FRAC_PI_2, closing_phase),
            ]
        }
        SequenceKind::Echo => closing_for_refocus(
            kind,
            vec![
                Pulse::ideal(0.0, FRAC_PI_2, 0.0),
                Pulse::ideal(0.5 * tau_total, PI, pi_phase(0)),
                Pulse::ideal(tau_total, FRAC_PI_2, 0.0),
            ],
        )?,
        SequenceKind::PiPi => vec![Pulse::ideal(0.0, PI, 0.0), Pulse::ideal(tau_total, PI, 0.0)],
        SequenceKind::MultiPi => {
            if n_pi < 1 {
                return Err(Error::invalid(
                    "n_pi",
                    "multiple-π schedules need at least one π-pulse",
                ));
            }
            let tau = tau_total / n_pi as f64;
            let mut pulses = Vec::with_capacity(n_pi + 2);
            pulses.push(Pulse::ideal(0.0, FRAC_PI_2, 0.0));
            pulses.extend((0..n_pi).map(|j| Pulse::ideal(0.5 * tau + j as f64 * tau, PI, pi_phase(j))));
            pulses.push(Pulse::ideal(tau_total, FRAC_PI_2, 0.0));
            closing_for_refocus(kind, pulses)?
        }
    };
    PulseSchedule::from_pulses(kind, pulses)
}

/// Turns the closing π/2 into a 3π/2 when that is what brings a resonant
/// atom back to `|1⟩`.
fn closing_for_refocus(kind: SequenceKind, mut pulses: Vec<Pulse>) -> Result<Vec<Pulse>> {
    let quarter = PulseSchedule::from_pulses(kind, pulses.clone())?;
    if quarter.coherent_p2() > 0.5 {
        pulses.last_mut().unwrap().area = 3.0 * FRAC_PI_2;
    }
    Ok(pulses)
}

/// Propagator of one pulse at detuning `detuning`.
///
/// Ideal pulses ignore the detuning and rotate by `area` about the axis at
/// azimuth `phase`. Finite pulses apply `exp(-iHt)` with
/// `H = δ|2⟩⟨2| + (Ω/2)(e^{-iφ}|1⟩⟨2| + e^{iφ}|2⟩⟨1|)`.
pub fn rotation_matrix(pulse: &Pulse, detuning: f64) -> [[Complex64; 2]; 2] {
    let e_phase = Complex64::from_polar(1.0, pulse.phase);
    let minus_i = Complex64::new(0.0, -1.0);
    if pulse.duration <= 0.0 {
        let (s, c) = (0.5 * pulse.area).sin_cos();
        let c = Complex64::from(c);
        return [
            [c, minus_i * e_phase.conj() * s],
            [minus_i * e_phase * s, c],
        ];
    }
    let omega = pulse.rabi_frequency;
    let t = pulse.duration;
    let w = omega.hypot(detuning);
    let (s, c) = (0.5 * w * t).sin_cos();
    let global = Complex64::from_polar(1.0, -0.5 * detuning * t);
    // exp(-i (W t / 2) n·σ) with n = (Ω cos φ, Ω sin φ, -δ) / W
    let d = minus_i * (s / w);
    [
        [global * (c - d * detuning), global * d * omega * e_phase.conj()],
        [global * d * omega * e_phase, global * (c + d * detuning)],
    ]
}

/// Applies one pulse to `(c₁, c₂)`.
pub fn apply_rotation(amps: [Complex64; 2], pulse: &Pulse, detuning: f64) -> [Complex64; 2] {
    let u = rotation_matrix(pulse, detuning);
    [
        u[0][0] * amps[0] + u[0][1] * amps[1],
        u[1][0] * amps[0] + u[1][1] * amps[1],
    ]
}
