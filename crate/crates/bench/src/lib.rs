//! Fixtures shared by the engine benchmarks.

use trapcoh::{
    build_schedule, NoiseConfig, OuParams, PhaseConvention, PulseSchedule, SequenceKind, TrapModel,
};

/// Noise with every dephasing and leakage channel switched on.
pub fn busy_noise() -> NoiseConfig {
    NoiseConfig {
        rayleigh_rate: 60.0,
        power_noise: Some(OuParams {
            sigma: 0.01,
            tau_corr: 30e-3,
        }),
        f_changing_rate: 0.6,
        mf_changing_rate: 1.2,
        ..NoiseConfig::quiet()
    }
}

pub fn one_dimensional_trap() -> TrapModel {
    TrapModel {
        transverse_dims: 1,
        ..TrapModel::default()
    }
}

pub fn schedule(kind: SequenceKind, n_pi: usize, tau_total: f64) -> PulseSchedule {
    build_schedule(kind, n_pi, tau_total, PhaseConvention::Constant).expect("valid schedule")
}
