//! Monte Carlo ensemble engine over the internal amplitudes.
//!
//! Each atom carries `(c₁, c₂)` plus two inert reservoirs for population
//! that has leaked out of the clock states. Between events the relative
//! phase is integrated exactly, so there is no time stepping.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::noise::{sample_realization, LeakageChannel, NoiseConfig, NoiseRealization};
use crate::rng::{stream, Stream};
use crate::sequence::{apply_rotation, PulseSchedule};
use crate::trap::{detuning_of_level, sample_thermal_level, TrapModel, VibrationalLevel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomState {
    pub c1: Complex64,
    pub c2: Complex64,
    /// Population parked in `m_F ≠ 0` sublevels of the lower manifold.
    pub leak_f2: f64,
    /// Population parked in `m_F ≠ 0` sublevels of the upper manifold.
    pub leak_f3: f64,
    pub level: VibrationalLevel,
}

impl AtomState {
    /// All population in `|1⟩`.
    pub fn new(level: VibrationalLevel) -> Self {
        Self {
            c1: Complex64::new(1.0, 0.0),
            c2: Complex64::new(0.0, 0.0),
            leak_f2: 0.0,
            leak_f3: 0.0,
            level,
        }
    }

    pub fn total_population(&self) -> f64 {
        self.c1.norm_sqr() + self.c2.norm_sqr() + self.leak_f2 + self.leak_f3
    }

    /// Population seen by hyperfine-selective detection of the upper
    /// manifold.
    pub fn detected(&self) -> f64 {
        self.c2.norm_sqr() + self.leak_f3
    }

    /// Moves the clock-state populations into the reservoirs and drops
    /// their coherence.
    pub fn leak(&mut self, channel: LeakageChannel) {
        let (p1, p2) = (self.c1.norm_sqr(), self.c2.norm_sqr());
        match channel {
            LeakageChannel::FChanging => {
                self.leak_f3 += p1;
                self.leak_f2 += p2;
            }
            LeakageChannel::MfChanging => {
                self.leak_f2 += p1;
                self.leak_f3 += p2;
            }
        }
        self.c1 = Complex64::new(0.0, 0.0);
        self.c2 = Complex64::new(0.0, 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomOutcome {
    pub detected: f64,
    pub initial_level: VibrationalLevel,
    pub scatter_count: usize,
    pub leakage: Option<LeakageChannel>,
    /// Pulses at which vibrational mixing scrambled the phase.
    pub mixing_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub p2_mean: f64,
    pub p2_stderr: f64,
    pub n_atoms: usize,
    pub mean_scatter_count: f64,
    pub f_changing_fraction: f64,
    pub mf_changing_fraction: f64,
}

/// Phase kicks applied just before each pulse, `None` where the pulse
/// leaves the motional state alone.
fn sample_mixing<R: Rng + ?Sized>(overlap: f64, pulses: usize, rng: &mut R) -> Vec<Option<f64>> {
    if overlap >= 1.0 {
        return vec![None; pulses];
    }
    let p_mix = 1.0 - overlap * overlap;
    let mut kicks = vec![None; pulses];
    for kick in kicks.iter_mut().skip(1) {
        let (u, phase): (f64, f64) = (rng.random(), rng.random());
        if u < p_mix {
            *kick = Some(TAU * phase);
        }
    }
    kicks
}

/// Evolves one atom with all of its randomness drawn from `rng`.
///
/// The draws happen in a fixed order: initial level, noise realization,
/// then mixing kicks.
pub fn evolve_atom<R: Rng + ?Sized>(
    trap: &TrapModel,
    schedule: &PulseSchedule,
    noise: &NoiseConfig,
    rng: &mut R,
) -> AtomOutcome {
    let initial_level = sample_thermal_level(trap, rng);
    let realization = sample_realization(noise, trap, &initial_level, schedule.end_time(), rng);
    let mixing = sample_mixing(noise.mixing_overlap, schedule.pulses().len(), rng);
    let state = evolve_realization(trap, schedule, initial_level, &realization, &mixing);
    AtomOutcome {
        detected: state.detected(),
        initial_level,
        scatter_count: realization.scatter_times.len(),
        leakage: realization.leakage_event.map(|(_, c)| c),
        mixing_events: mixing.iter().flatten().count(),
    }
}

/// Deterministic propagation of one atom through `schedule` given its
/// starting level, noise history and per-pulse mixing kicks.
///
/// Scattering and leakage events that fall inside a finite pulse take
/// effect at the end of that pulse.
pub fn evolve_realization(
    trap: &TrapModel,
    schedule: &PulseSchedule,
    initial_level: VibrationalLevel,
    realization: &NoiseRealization,
    mixing: &[Option<f64>],
) -> AtomState {
    let mut state = AtomState::new(initial_level);
    let mut detuning = detuning_of_level(trap, &initial_level);
    let mut scatters = realization
        .scatter_times
        .iter()
        .zip(&realization.scatter_levels)
        .peekable();
    let mut leakage = realization.leakage_event;
    let mut t = schedule.pulses().first().map_or(0.0, |p| p.start_time);
    let mut phase = 0.0;

    // Free evolution from `t` to `until` with every event on the way.
    let mut advance = |state: &mut AtomState,
                       detuning: &mut f64,
                       phase: &mut f64,
                       t: &mut f64,
                       until: f64,
                       leakage: &mut Option<(f64, LeakageChannel)>| {
        loop {
            let next_scatter = scatters.peek().map_or(f64::INFINITY, |(&ts, _)| ts);
            let next_leak = leakage.map_or(f64::INFINITY, |(tl, _)| tl);
            let stop = until.min(next_scatter).min(next_leak);
            if stop > *t {
                *phase += *detuning * realization.power_integral(*t, stop)
                    + realization.zeeman_integral(*t, stop);
                *t = stop;
            }
            if next_leak <= until && next_leak <= next_scatter {
                let (_, channel) = leakage.take().unwrap();
                state.leak(channel);
            } else if next_scatter <= until {
                let (_, level) = scatters.next().unwrap();
                state.level = *level;
                *detuning = detuning_of_level(trap, level);
            } else {
                break;
            }
        }
    };

    for (pulse, kick) in schedule.pulses().iter().zip(mixing) {
        advance(
            &mut state,
            &mut detuning,
            &mut phase,
            &mut t,
            pulse.start_time,
            &mut leakage,
        );
        let total = phase + kick.unwrap_or(0.0);
        state.c2 *= Complex64::from_polar(1.0, -total);
        phase = 0.0;
        let live = detuning * realization.power_factor(t)
            + realization.zeeman.as_ref().map_or(0.0, |z| z.value(t));
        let [c1, c2] = apply_rotation([state.c1, state.c2], pulse, live);
        state.c1 = c1;
        state.c2 = c2;
        if pulse.duration > 0.0 {
            // the pulse propagator already carries its own phase; only
            // the events inside it remain to be processed
            let end = pulse.end_time();
            let mut inside = 0.0;
            advance(&mut state, &mut detuning, &mut inside, &mut t, end, &mut leakage);
        }
    }
    state
}

/// Compensated (Neumaier) summation.
pub(crate) fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Per-atom random stream for atom `index` of a run seeded by `seed`.
pub fn atom_stream(seed: u64, index: usize) -> Stream {
    stream(seed, index as u64)
}

/// Runs `n_atoms` independent atoms in parallel and averages the detected
/// signal. The result depends only on `master_seed`, never on the number
/// of worker threads.
pub fn simulate_ensemble(
    trap: &TrapModel,
    schedule: &PulseSchedule,
    noise: &NoiseConfig,
    n_atoms: usize,
    master_seed: u64,
) -> Result<EnsembleResult> {
    if n_atoms < 1 {
        return Err(Error::invalid("n_atoms", "need at least one atom"));
    }
    trap.validate()?;
    noise.validate()?;
    let outcomes: Vec<AtomOutcome> = (0..n_atoms)
        .into_par_iter()
        .map(|i| evolve_atom(trap, schedule, noise, &mut atom_stream(master_seed, i)))
        .collect();
    Ok(summarize(&outcomes))
}

/// Ensemble statistics of a set of atom outcomes, summed in index order.
pub fn summarize(outcomes: &[AtomOutcome]) -> EnsembleResult {
    let n = outcomes.len() as f64;
    let mean = neumaier_sum(outcomes.iter().map(|o| o.detected)) / n;
    let stderr = if outcomes.len() > 1 {
        let ss = neumaier_sum(outcomes.iter().map(|o| (o.detected - mean).powi(2)));
        (ss / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    let count = |channel| outcomes.iter().filter(|o| o.leakage == Some(channel)).count() as f64;
    EnsembleResult {
        p2_mean: mean.clamp(0.0, 1.0),
        p2_stderr: stderr,
        n_atoms: outcomes.len(),
        mean_scatter_count: neumaier_sum(outcomes.iter().map(|o| o.scatter_count as f64)) / n,
        f_changing_fraction: count(LeakageChannel::FChanging) / n,
        mf_changing_fraction: count(LeakageChannel::MfChanging) / n,
    }
}
