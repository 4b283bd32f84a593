//! Experiment configuration: a TOML document with `trap`, `noise`,
//! `sequence`, `engine`, `analysis` and `output` sections.
//!
//! Times accept either a bare number of seconds or a string with a unit
//! suffix (`"13ms"`, `"250 us"`, `"0.1s"`); they are normalized to seconds
//! at parse time. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use trapcoh::analysis::DEFAULT_SLOPE_WINDOW;
use trapcoh::{
    NoiseConfig, OuParams, PhaseConvention, RecoilModel, SequenceKind, TrapModel,
    COHERENCE_THRESHOLD,
};

use crate::error::{CliError, Result};

/// A time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Seconds(pub f64);

impl Seconds {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let t = text.trim();
        let number = t.trim_end_matches(|c: char| c.is_alphabetic() || c == 'µ');
        let unit = &t[number.len()..];
        let value: f64 = number
            .trim()
            .parse()
            .map_err(|_| format!("`{text}` is not a time"))?;
        // dividing keeps "13ms" identical to 0.013
        let divisor = match unit.trim() {
            "" | "s" => 1.0,
            "ms" => 1e3,
            "us" | "µs" => 1e6,
            "ns" => 1e9,
            other => return Err(format!("unknown time unit `{other}` in `{text}`")),
        };
        Ok(Seconds(value / divisor))
    }
}

impl<'de> Deserialize<'de> for Seconds {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct SecondsVisitor;

        impl Visitor<'_> for SecondsVisitor {
            type Value = Seconds;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("seconds as a number or a string such as \"13ms\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Seconds, E> {
                Ok(Seconds(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Seconds, E> {
                Ok(Seconds(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Seconds, E> {
                Ok(Seconds(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Seconds, E> {
                Seconds::parse(v).map_err(E::custom)
            }
        }

        deserializer.deserialize_any(SecondsVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapSection {
    pub transverse_period: Seconds,
    /// K.
    pub trap_depth: f64,
    /// K.
    pub temperature: f64,
    pub differential_factor: f64,
    pub transverse_dims: u8,
}

impl Default for TrapSection {
    fn default() -> Self {
        let t = TrapModel::default();
        Self {
            transverse_period: Seconds(t.transverse_period),
            trap_depth: t.trap_depth,
            temperature: t.temperature,
            differential_factor: t.differential_factor,
            transverse_dims: t.transverse_dims,
        }
    }
}

impl TrapSection {
    pub fn model(&self) -> TrapModel {
        TrapModel {
            transverse_period: self.transverse_period.0,
            trap_depth: self.trap_depth,
            temperature: self.temperature,
            differential_factor: self.differential_factor,
            transverse_dims: self.transverse_dims,
            ..TrapModel::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RecoilKind {
    #[default]
    ResampleThermal,
    EnergyKick,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSection {
    pub sigma: f64,
    pub tau_corr: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// s⁻¹.
    pub rayleigh_rate: f64,
    pub recoil_model: RecoilKind,
    /// Energy added per scattering event under `energy_kick`, K.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recoil_energy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_noise: Option<OuSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeeman_noise: Option<OuSection>,
    /// s⁻¹.
    pub f_changing_rate: f64,
    /// s⁻¹.
    pub mf_changing_rate: f64,
    pub mixing_overlap: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            rayleigh_rate: 0.0,
            recoil_model: RecoilKind::ResampleThermal,
            recoil_energy: None,
            power_noise: None,
            zeeman_noise: None,
            f_changing_rate: 0.0,
            mf_changing_rate: 0.0,
            mixing_overlap: 1.0,
        }
    }
}

impl NoiseSection {
    pub fn model(&self) -> Result<NoiseConfig> {
        let recoil_model = match (self.recoil_model, self.recoil_energy) {
            (RecoilKind::ResampleThermal, None) => RecoilModel::ResampleThermal,
            (RecoilKind::ResampleThermal, Some(_)) => {
                return Err(CliError::config(
                    "`recoil_energy` is only read by the energy_kick recoil model",
                ))
            }
            (RecoilKind::EnergyKick, Some(delta_e)) => RecoilModel::EnergyKick { delta_e },
            (RecoilKind::EnergyKick, None) => {
                return Err(CliError::config(
                    "the energy_kick recoil model needs `recoil_energy`",
                ))
            }
        };
        let ou = |s: Option<OuSection>| {
            s.map(|s| OuParams {
                sigma: s.sigma,
                tau_corr: s.tau_corr.0,
            })
        };
        Ok(NoiseConfig {
            rayleigh_rate: self.rayleigh_rate,
            recoil_model,
            power_noise: ou(self.power_noise),
            zeeman_noise: ou(self.zeeman_noise),
            f_changing_rate: self.f_changing_rate,
            mf_changing_rate: self.mf_changing_rate,
            mixing_overlap: self.mixing_overlap,
        })
    }
}

/// Free-evolution times of a scan: either an explicit list or `points`
/// evenly spaced values from `start` to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TauGrid {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Seconds>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<Seconds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Seconds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

impl TauGrid {
    pub fn range(start: f64, stop: f64, points: usize) -> Self {
        Self {
            values: None,
            start: Some(Seconds(start)),
            stop: Some(Seconds(stop)),
            points: Some(points),
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let taus = match (&self.values, self.start, self.stop, self.points) {
            (Some(v), None, None, None) => v.iter().map(|s| s.0).collect::<Vec<_>>(),
            (None, Some(a), Some(b), Some(n)) => {
                if n < 2 {
                    return Err(CliError::config("`points` must be at least 2"));
                }
                (0..n)
                    .map(|i| a.0 + (b.0 - a.0) * i as f64 / (n - 1) as f64)
                    .collect()
            }
            _ => {
                return Err(CliError::config(
                    "tau_total needs either `values` or all of `start`, `stop` and `points`",
                ))
            }
        };
        if taus.is_empty() {
            return Err(CliError::config("tau_total grid is empty"));
        }
        if taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(CliError::config("tau_total values must be positive"));
        }
        if taus.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CliError::config(
                "tau_total values must be strictly increasing",
            ));
        }
        Ok(taus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSection {
    pub kind: SequenceKind,
    /// Pulse counts scanned for `multi_pi`; ignored by the other kinds.
    #[serde(default = "default_n_pi")]
    pub n_pi: Vec<usize>,
    pub tau_total: TauGrid,
    #[serde(default)]
    pub phase_convention: PhaseConvention,
    /// Rabi frequency of finite-duration pulses, rad/s. Pulses are
    /// instantaneous when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_frequency: Option<f64>,
}

fn default_n_pi() -> Vec<usize> {
    vec![1]
}

impl SequenceSection {
    /// Pulse counts the kind actually runs.
    pub fn pulse_counts(&self) -> Vec<usize> {
        match self.kind {
            SequenceKind::MultiPi => self.n_pi.clone(),
            SequenceKind::Echo => vec![1],
            SequenceKind::Ramsey | SequenceKind::PiPi => vec![0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    #[default]
    Bloch,
    Fock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(default)]
    pub kind: EngineKind,
    #[serde(default = "default_n_atoms")]
    pub n_atoms: usize,
    /// Motional basis size of the Fock engine; sized from the thermal
    /// distribution when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_size: Option<usize>,
    /// Run the Fock engine at the temperature giving this mean occupation,
    /// with the differential factor scaled to keep the dephasing rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced_mean_occupation: Option<f64>,
    /// Start the Fock engine in this level instead of a thermal state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_level: Option<Vec<u32>>,
    pub master_seed: u64,
}

fn default_n_atoms() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub threshold: f64,
    /// Intermediate-slope window in units of each curve's coherence time.
    pub slope_window: [f64; 2],
    /// Long-time slope subtracted from every intermediate slope, s⁻¹.
    pub long_time_slope: f64,
    /// Fit the long-time slope of each curve over this window instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub long_time_window: Option<[Seconds; 2]>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            threshold: COHERENCE_THRESHOLD,
            slope_window: [DEFAULT_SLOPE_WINDOW.0, DEFAULT_SLOPE_WINDOW.1],
            long_time_slope: 0.0,
            long_time_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub trap: TrapSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub sequence: SequenceSection,
    pub engine: EngineSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Parses and validates a TOML document. Diagnostics carry the line of
    /// the offending key when it can be located.
    pub fn from_toml(source: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(source).map_err(|e| CliError::Config {
            line: e.span().map(|s| line_of(source, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|err| match err {
            CliError::Config { message, .. } => {
                let line = cfg.locate(source, &message);
                CliError::Config { line, message }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the resolved config stored in a run
    /// manifest when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("manifest is not JSON: {e}")))?;
            let config = manifest
                .get("config")
                .ok_or_else(|| CliError::config("manifest has no `config` entry"))?;
            let cfg: ExperimentConfig = serde_json::from_value(config.clone())
                .map_err(|e| CliError::config(format!("manifest config: {e}")))?;
            cfg.validate()?;
            Ok(cfg)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.trap.model().validate()?;
        self.noise.model()?.validate()?;
        let taus = self.sequence.tau_total.values()?;
        if self.sequence.kind == SequenceKind::MultiPi {
            if self.sequence.n_pi.is_empty() {
                return Err(CliError::config("n_pi list is empty"));
            }
            if self.sequence.n_pi.contains(&0) {
                return Err(CliError::config("n_pi values must be at least 1"));
            }
            let mut sorted = self.sequence.n_pi.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.sequence.n_pi.len() {
                return Err(CliError::config("n_pi values must be distinct"));
            }
        }
        if let Some(omega) = self.sequence.rabi_frequency {
            if !(omega.is_finite() && omega > 0.0) {
                return Err(CliError::config(format!(
                    "rabi_frequency must be positive, got {omega}"
                )));
            }
            // the longest pulse train must fit inside the shortest schedule
            for n in self.sequence.pulse_counts() {
                self.schedule(n, taus[0])?;
            }
        }
        let e = &self.engine;
        if e.kind == EngineKind::Bloch && e.n_atoms == 0 {
            return Err(CliError::config("n_atoms must be at least 1"));
        }
        if e.kind == EngineKind::Fock && self.sequence.rabi_frequency.is_some() {
            return Err(CliError::config(
                "rabi_frequency: the fock engine only runs instantaneous pulses",
            ));
        }
        if let Some(size) = e.basis_size {
            if size < 2 {
                return Err(CliError::config("basis_size must be at least 2"));
            }
        }
        if let Some(nbar) = e.reduced_mean_occupation {
            if !(nbar.is_finite() && nbar > 0.0) {
                return Err(CliError::config(format!(
                    "reduced_mean_occupation must be positive, got {nbar}"
                )));
            }
        }
        if let Some(level) = &e.initial_level {
            if level.len() != self.trap.transverse_dims as usize {
                return Err(CliError::config(format!(
                    "initial_level has {} entries for a {}-dimensional trap",
                    level.len(),
                    self.trap.transverse_dims
                )));
            }
        }
        let a = &self.analysis;
        if !(a.threshold > 0.0 && a.threshold < 1.0) {
            return Err(CliError::config(format!(
                "threshold must lie in (0, 1), got {}",
                a.threshold
            )));
        }
        if !(a.slope_window[0] >= 0.0 && a.slope_window[1] > a.slope_window[0]) {
            return Err(CliError::config(
                "slope_window must be an increasing pair of non-negative factors",
            ));
        }
        if !a.long_time_slope.is_finite() {
            return Err(CliError::config("long_time_slope must be finite"));
        }
        if let Some([lo, hi]) = a.long_time_window {
            if !(lo.0 >= 0.0 && hi.0 > lo.0) {
                return Err(CliError::config(
                    "long_time_window must be an increasing pair of times",
                ));
            }
            if a.long_time_slope != 0.0 {
                return Err(CliError::config(
                    "long_time_slope and long_time_window are mutually exclusive",
                ));
            }
        }
        Ok(())
    }

    pub fn tau_values(&self) -> Vec<f64> {
        self.sequence
            .tau_total
            .values()
            .expect("grid validated at load time")
    }

    pub fn trap_model(&self) -> TrapModel {
        self.trap.model()
    }

    pub fn noise_model(&self) -> NoiseConfig {
        self.noise.model().expect("noise validated at load time")
    }

    /// Schedule for one scan point.
    pub fn schedule(&self, n_pi: usize, tau_total: f64) -> Result<trapcoh::PulseSchedule> {
        let s = trapcoh::build_schedule(
            self.sequence.kind,
            n_pi,
            tau_total,
            self.sequence.phase_convention,
        )?;
        Ok(match self.sequence.rabi_frequency {
            Some(omega) => s.with_finite_pulses(omega)?,
            None => s,
        })
    }

    /// Stable SHA-256 of the normalized configuration. The output section
    /// is left out so that a rerun into another directory keeps the same
    /// fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("configuration always serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        let text = serde_json::to_string(&value).expect("JSON value always serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Line of the key a validation message names.
    fn locate(&self, source: &str, message: &str) -> Option<usize> {
        KEYS.iter()
            .filter(|(_, key)| message.contains(key))
            .find_map(|(section, key)| find_key(source, section, key))
    }
}

/// Every key validation may complain about, with its section.
const KEYS: &[(&str, &str)] = &[
    ("trap", "transverse_period"),
    ("trap", "trap_depth"),
    ("trap", "temperature"),
    ("trap", "differential_factor"),
    ("trap", "transverse_dims"),
    ("noise", "rayleigh_rate"),
    ("noise", "recoil_energy"),
    ("noise", "f_changing_rate"),
    ("noise", "mf_changing_rate"),
    ("noise", "mixing_overlap"),
    ("noise", "power_noise"),
    ("noise", "zeeman_noise"),
    ("noise", "recoil_model"),
    ("sequence", "n_pi"),
    ("sequence", "rabi_frequency"),
    ("sequence", "tau_total"),
    ("sequence", "points"),
    ("engine", "n_atoms"),
    ("engine", "basis_size"),
    ("engine", "reduced_mean_occupation"),
    ("engine", "initial_level"),
    ("analysis", "threshold"),
    ("analysis", "slope_window"),
    ("analysis", "long_time_slope"),
    ("analysis", "long_time_window"),
];

fn line_of(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// 1-based line on which `key` is assigned inside `[section]` or one of
/// its subtables, or on which the `[section.key]` table opens.
fn find_key(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = header.trim().to_string();
            if current == format!("{section}.{key}") {
                return Some(i + 1);
            }
            continue;
        }
        let in_section = current == section || current.starts_with(&format!("{section}."));
        if in_section {
            if let Some((lhs, _)) = line.split_once('=') {
                if lhs.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
