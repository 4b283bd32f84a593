//! Per-atom realizations of the dephasing and leakage processes.
//!
//! A realization is drawn once per atom before its evolution starts, so
//! the amplitudes can then be propagated event by event with exact phase
//! integrals.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trap::{sample_thermal_level, TrapModel, VibrationalLevel};

/// Smallest power factor a sampled trajectory may take.
const MIN_POWER_FACTOR: f64 = 1e-6;

/// Fewest grid intervals used to sample an Ornstein-Uhlenbeck process.
const MIN_OU_INTERVALS: usize = 64;
/// Grid intervals per correlation time.
const OU_INTERVALS_PER_TAU: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RecoilModel {
    /// Every scattering event redraws the vibrational level from the
    /// thermal distribution.
    ResampleThermal,
    /// Every scattering event adds `delta_e` (K) to one randomly chosen
    /// dimension and rounds to the nearest level.
    EnergyKick { delta_e: f64 },
}

/// Stationary Ornstein-Uhlenbeck process with standard deviation `sigma`
/// and correlation time `tau_corr` (s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub sigma: f64,
    pub tau_corr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakageChannel {
    /// Transition to the other hyperfine manifold.
    FChanging,
    /// Transition to an `m_F ≠ 0` sublevel of the same manifold.
    MfChanging,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Poisson rate of elastic photon scattering, s⁻¹.
    pub rayleigh_rate: f64,
    pub recoil_model: RecoilModel,
    /// Relative fluctuation of every level-dependent detuning.
    pub power_noise: Option<OuParams>,
    /// Additive common-mode detuning fluctuation; `sigma` in rad/s.
    pub zeeman_noise: Option<OuParams>,
    /// s⁻¹.
    pub f_changing_rate: f64,
    /// s⁻¹.
    pub mf_changing_rate: f64,
    /// Per-pulse diagonal motional overlap `o`. Each pulse after the first
    /// scrambles the atom's phase with probability `1 - o²`, an effective
    /// description of pulse-induced vibrational mixing. `1` disables it.
    pub mixing_overlap: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self::quiet()
    }
}

impl NoiseConfig {
    /// No noise source active.
    pub fn quiet() -> Self {
        Self {
            rayleigh_rate: 0.0,
            recoil_model: RecoilModel::ResampleThermal,
            power_noise: None,
            zeeman_noise: None,
            f_changing_rate: 0.0,
            mf_changing_rate: 0.0,
            mixing_overlap: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |name, value: f64| {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be >= 0, got {value}")))
            }
        };
        rate("rayleigh_rate", self.rayleigh_rate)?;
        rate("f_changing_rate", self.f_changing_rate)?;
        rate("mf_changing_rate", self.mf_changing_rate)?;
        if let RecoilModel::EnergyKick { delta_e } = self.recoil_model {
            if !delta_e.is_finite() {
                return Err(Error::invalid("delta_e", "must be finite"));
            }
        }
        if let Some(ou) = self.power_noise {
            validate_ou("power_noise", ou)?;
            if ou.sigma >= 1.0 {
                return Err(Error::invalid(
                    "power_noise",
                    format!("relative sigma must be < 1, got {}", ou.sigma),
                ));
            }
        }
        if let Some(ou) = self.zeeman_noise {
            validate_ou("zeeman_noise", ou)?;
        }
        if !(self.mixing_overlap > 0.0 && self.mixing_overlap <= 1.0) {
            return Err(Error::invalid(
                "mixing_overlap",
                format!("must lie in (0, 1], got {}", self.mixing_overlap),
            ));
        }
        Ok(())
    }

    pub fn total_leakage_rate(&self) -> f64 {
        self.f_changing_rate + self.mf_changing_rate
    }
}

fn validate_ou(name: &'static str, ou: OuParams) -> Result<()> {
    if !(ou.sigma.is_finite() && ou.sigma >= 0.0) {
        return Err(Error::invalid(name, format!("sigma must be >= 0, got {}", ou.sigma)));
    }
    if !(ou.tau_corr.is_finite() && ou.tau_corr > 0.0) {
        return Err(Error::invalid(
            name,
            format!("tau_corr must be positive, got {}", ou.tau_corr),
        ));
    }
    Ok(())
}

/// Exact Ornstein-Uhlenbeck update over `dt`.
pub fn ou_step<R: Rng + ?Sized>(x: f64, dt: f64, tau_corr: f64, sigma: f64, rng: &mut R) -> f64 {
    let decay = (-dt / tau_corr).exp();
    let spread = sigma * (-(-2.0 * dt / tau_corr).exp_m1()).sqrt();
    let g: f64 = StandardNormal.sample(rng);
    x * decay + spread * g
}

/// A process sampled on a uniform grid and linearly interpolated between
/// nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledProcess {
    step: f64,
    values: Vec<f64>,
    /// Running integral at each node.
    cumulative: Vec<f64>,
}

impl SampledProcess {
    fn from_values(step: f64, values: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in values.windows(2) {
            acc += 0.5 * step * (w[0] + w[1]);
            cumulative.push(acc);
        }
        Self {
            step,
            values,
            cumulative,
        }
    }

    fn ou<R: Rng + ?Sized>(ou: OuParams, duration: f64, rng: &mut R) -> Self {
        let intervals = ((duration / ou.tau_corr) * OU_INTERVALS_PER_TAU)
            .ceil()
            .max(MIN_OU_INTERVALS as f64) as usize;
        let step = duration / intervals as f64;
        let mut values = Vec::with_capacity(intervals + 1);
        let g: f64 = StandardNormal.sample(rng);
        let mut x = ou.sigma * g;
        values.push(x);
        for _ in 0..intervals {
            x = ou_step(x, step, ou.tau_corr, ou.sigma, rng);
            values.push(x);
        }
        Self::from_values(step, values)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn nodes(&self) -> &[f64] {
        &self.values
    }

    /// Value at `t`, held constant beyond the last node.
    pub fn value(&self, t: f64) -> f64 {
        let (i, frac) = self.locate(t);
        if i + 1 >= self.values.len() {
            return *self.values.last().unwrap();
        }
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    /// `∫₀ᵗ x(s) ds`.
    pub fn integral(&self, t: f64) -> f64 {
        let (i, frac) = self.locate(t);
        let last = self.values.len() - 1;
        if i >= last {
            let end = last as f64 * self.step;
            return self.cumulative[last] + (t - end).max(0.0) * self.values[last];
        }
        let dt = frac * self.step;
        let x0 = self.values[i];
        let x1 = x0 + frac * (self.values[i + 1] - x0);
        self.cumulative[i] + 0.5 * dt * (x0 + x1)
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let s = (t / self.step).max(0.0);
        let i = s.floor();
        let i_int = (i as usize).min(self.values.len() - 1);
        (i_int, s - i_int as f64)
    }
}

/// Everything random that happens to one atom during a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    /// Sorted scattering times, s.
    pub scatter_times: Vec<f64>,
    /// Vibrational level after each scattering event.
    pub scatter_levels: Vec<VibrationalLevel>,
    /// Relative power excursion `ε(t)`; the power factor is `1 + ε`.
    pub power: Option<SampledProcess>,
    /// Common-mode detuning, rad/s.
    pub zeeman: Option<SampledProcess>,
    pub leakage_event: Option<(f64, LeakageChannel)>,
}

impl NoiseRealization {
    pub fn empty() -> Self {
        Self {
            scatter_times: Vec::new(),
            scatter_levels: Vec::new(),
            power: None,
            zeeman: None,
            leakage_event: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.scatter_times.is_empty()
            && self.power.is_none()
            && self.zeeman.is_none()
            && self.leakage_event.is_none()
    }

    /// Multiplicative detuning factor at `t`.
    pub fn power_factor(&self, t: f64) -> f64 {
        self.power.as_ref().map_or(1.0, |p| 1.0 + p.value(t))
    }

    /// `∫_{t0}^{t1} power_factor`.
    pub fn power_integral(&self, t0: f64, t1: f64) -> f64 {
        let base = t1 - t0;
        self.power
            .as_ref()
            .map_or(base, |p| base + p.integral(t1) - p.integral(t0))
    }

    /// `∫_{t0}^{t1} zeeman_shift`.
    pub fn zeeman_integral(&self, t0: f64, t1: f64) -> f64 {
        self.zeeman
            .as_ref()
            .map_or(0.0, |z| z.integral(t1) - z.integral(t0))
    }
}

/// Samples the noise history of one atom over `[0, duration]`.
///
/// `initial` is the level the atom starts in; it matters only for the
/// energy-kick recoil model, where each kick builds on the previous level.
pub fn sample_realization<R: Rng + ?Sized>(
    config: &NoiseConfig,
    trap: &TrapModel,
    initial: &VibrationalLevel,
    duration: f64,
    rng: &mut R,
) -> NoiseRealization {
    let mut out = NoiseRealization::empty();

    if config.rayleigh_rate > 0.0 {
        let gap = Exp::new(config.rayleigh_rate).expect("positive rate");
        let mut t = gap.sample(rng);
        let mut level = *initial;
        while t < duration {
            level = recoil(config.recoil_model, trap, &level, rng);
            out.scatter_times.push(t);
            out.scatter_levels.push(level);
            t += gap.sample(rng);
        }
    }

    if let Some(ou) = config.power_noise {
        let mut p = SampledProcess::ou(ou, duration, rng);
        for v in &mut p.values {
            *v = v.max(MIN_POWER_FACTOR - 1.0);
        }
        out.power = Some(SampledProcess::from_values(p.step, p.values));
    }
    if let Some(ou) = config.zeeman_noise {
        out.zeeman = Some(SampledProcess::ou(ou, duration, rng));
    }

    let mut first: Option<(f64, LeakageChannel)> = None;
    for (rate, channel) in [
        (config.f_changing_rate, LeakageChannel::FChanging),
        (config.mf_changing_rate, LeakageChannel::MfChanging),
    ] {
        if rate > 0.0 {
            let t = Exp::new(rate).expect("positive rate").sample(rng);
            if t < duration && first.is_none_or(|(t0, _)| t < t0) {
                first = Some((t, channel));
            }
        }
    }
    out.leakage_event = first;
    out
}

fn recoil<R: Rng + ?Sized>(
    model: RecoilModel,
    trap: &TrapModel,
    prior: &VibrationalLevel,
    rng: &mut R,
) -> VibrationalLevel {
    match model {
        RecoilModel::ResampleThermal => sample_thermal_level(trap, rng),
        RecoilModel::EnergyKick { delta_e } => {
            let mut level = *prior;
            let dims = level.dims() as usize;
            let d = if dims > 1 { rng.random_range(0..dims) } else { 0 };
            let top = trap.n_bound().saturating_sub(1) as f64;
            let q = &mut level.quanta_mut()[d];
            let shifted = (*q as f64 + delta_e / trap.quantum_temperature()).round();
            *q = shifted.clamp(0.0, top) as u32;
            level
        }
    }
}
