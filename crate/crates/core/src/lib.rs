//! Simulation and analysis of microwave pulse-sequence spectroscopy on
//! optically trapped two-level atoms.
//!
//! The crate is split along the physics:
//!
//! * [`trap`] holds the motional structure of the trap: thermal level
//!   sampling, level-dependent differential detuning and the overlap
//!   matrix between the motional eigenstates of the two internal-state
//!   potentials.
//! * [`sequence`] builds Ramsey, echo and multiple-π schedules and applies
//!   the two-level rotations.
//! * [`noise`] samples per-atom realizations of the dephasing and
//!   leakage processes.
//! * [`bloch`] is the Monte Carlo ensemble engine over internal amplitudes.
//! * [`fock`] evolves the joint internal and motional state in a truncated
//!   harmonic-oscillator basis.
//! * [`analysis`] extracts coherence times, intermediate slopes and the
//!   limiting-rate fit from simulated curves.

pub mod analysis;
pub mod bloch;
pub mod error;
pub mod fock;
pub mod noise;
pub mod rng;
pub mod sequence;
pub mod trap;

pub use analysis::{
    asymptotic_mixing, coherence_time, fit_limiting_rate, intermediate_slope, CoherenceCurve,
    CurvePoint, FitResult, SlopeEstimate, COHERENCE_THRESHOLD,
};
pub use bloch::{evolve_atom, simulate_ensemble, AtomOutcome, AtomState, EnsembleResult};
pub use error::{Error, Result};
pub use fock::{run_sequence_fock, InitialMotion, JointState};
pub use noise::{
    sample_realization, LeakageChannel, NoiseConfig, NoiseRealization, OuParams, RecoilModel,
};
pub use sequence::{
    apply_rotation, build_schedule, PhaseConvention, Pulse, PulseSchedule, SequenceKind,
};
pub use trap::{
    detuning_of_level, overlap_matrix, sample_thermal_level, OverlapMatrix, TrapModel,
    VibrationalLevel,
};

pub use num_complex::Complex64;

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
