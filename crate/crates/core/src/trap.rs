//! Motional structure of the trapped atom.
//!
//! The transverse potential is treated as harmonic with angular frequency
//! `ω_t`, truncated at the trap depth. The internal state `|2⟩` sees the
//! same potential scaled by `1 + η`, which gives every vibrational level a
//! differential shift proportional to its energy and makes the motional
//! eigenstates of the two internal states slightly non-orthogonal.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{HBAR, K_B};

/// Largest column-norm deficit tolerated before an overlap matrix is
/// rejected as truncated.
pub const TRUNCATION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapModel {
    /// Transverse oscillation period, s.
    pub transverse_period: f64,
    /// Trap depth expressed as a temperature, K.
    pub trap_depth: f64,
    /// Temperature of the atomic ensemble, K.
    pub temperature: f64,
    /// Relative potential difference `δV / V₁` between the two internal states.
    pub differential_factor: f64,
    /// Number of transverse dimensions (1 or 2).
    pub transverse_dims: u8,
    /// Hyperfine splitting, rad/s. Only carried along; all dynamics run in
    /// the frame rotating at this frequency.
    pub hyperfine_splitting: f64,
}

impl Default for TrapModel {
    /// ⁸⁵Rb in a 100 µK deep far-detuned dipole trap at 20 µK with a
    /// 1.4 ms transverse period.
    fn default() -> Self {
        Self {
            transverse_period: 1.4e-3,
            trap_depth: 100e-6,
            temperature: 20e-6,
            differential_factor: 2e-4,
            transverse_dims: 2,
            hyperfine_splitting: 2.0 * PI * 3.036e9,
        }
    }
}

impl TrapModel {
    pub fn validate(&self) -> Result<()> {
        let positive = |name, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {value}")))
            }
        };
        positive("transverse_period", self.transverse_period)?;
        positive("trap_depth", self.trap_depth)?;
        positive("temperature", self.temperature)?;
        if !(self.differential_factor > 0.0 && self.differential_factor < 1.0) {
            return Err(Error::invalid(
                "differential_factor",
                format!("must lie in (0, 1), got {}", self.differential_factor),
            ));
        }
        if !matches!(self.transverse_dims, 1 | 2) {
            return Err(Error::invalid(
                "transverse_dims",
                format!("must be 1 or 2, got {}", self.transverse_dims),
            ));
        }
        if self.n_bound() < 1 {
            return Err(Error::invalid(
                "trap_depth",
                "shallower than one vibrational quantum",
            ));
        }
        Ok(())
    }

    /// Transverse angular frequency `ω_t = 2π / T_osc`, rad/s.
    pub fn angular_frequency(&self) -> f64 {
        2.0 * PI / self.transverse_period
    }

    /// One vibrational quantum `ħω_t / k_B`, K.
    pub fn quantum_temperature(&self) -> f64 {
        HBAR * self.angular_frequency() / K_B
    }

    /// Bound harmonic levels per dimension.
    pub fn n_bound(&self) -> u32 {
        let levels = (self.trap_depth / self.quantum_temperature()).floor();
        levels.min(u32::MAX as f64) as u32
    }

    /// `ħω_t / k_B T`, the Boltzmann exponent per quantum.
    pub fn boltzmann_exponent(&self) -> f64 {
        self.quantum_temperature() / self.temperature
    }

    /// Differential detuning added by one vibrational quantum, rad/s.
    pub fn detuning_per_quantum(&self) -> f64 {
        self.differential_factor * self.angular_frequency()
    }

    /// Occupation probability of level `n` in one dimension.
    pub fn level_probability(&self, n: u32) -> f64 {
        let n_bound = self.n_bound();
        if n >= n_bound {
            return 0.0;
        }
        let x = self.boltzmann_exponent();
        // (1 - q) q^n / (1 - q^N) with q = e^{-x}
        let norm = -(-x * n_bound as f64).exp_m1();
        -(-x).exp_m1() * (-x * n as f64).exp() / norm
    }

    /// Smallest `n` such that the one-dimensional thermal population of
    /// levels `>= n` is below `tail`.
    pub fn level_cutoff(&self, tail: f64) -> u32 {
        let x = self.boltzmann_exponent();
        let n_bound = self.n_bound();
        // P(n >= k) = (q^k - q^N)/(1 - q^N)
        let q_top = (-x * n_bound as f64).exp();
        let norm = -(-x * n_bound as f64).exp_m1();
        let k = ((tail * norm + q_top).ln() / -x).ceil().max(1.0);
        (k.min(n_bound as f64)) as u32
    }
}

/// Vibrational quantum numbers, one per transverse dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VibrationalLevel {
    quanta: [u32; 2],
    dims: u8,
}

impl VibrationalLevel {
    pub fn new(quanta: &[u32]) -> Self {
        assert!(
            matches!(quanta.len(), 1 | 2),
            "vibrational levels carry one or two quantum numbers"
        );
        let mut q = [0; 2];
        q[..quanta.len()].copy_from_slice(quanta);
        Self {
            quanta: q,
            dims: quanta.len() as u8,
        }
    }

    pub fn ground(dims: u8) -> Self {
        Self::new(&[0; 2][..dims as usize])
    }

    pub fn quanta(&self) -> &[u32] {
        &self.quanta[..self.dims as usize]
    }

    pub(crate) fn quanta_mut(&mut self) -> &mut [u32] {
        &mut self.quanta[..self.dims as usize]
    }

    pub fn dims(&self) -> u8 {
        self.dims
    }

    /// Total number of quanta.
    pub fn total(&self) -> u64 {
        self.quanta().iter().map(|&n| n as u64).sum()
    }
}

/// One quantum number from the Boltzmann law truncated at `N_bound`, by
/// inverting its cumulative distribution.
pub(crate) fn sample_quantum<R: Rng + ?Sized>(x: f64, n_bound: u32, rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    // CDF(n) = (1 - q^{n+1}) / (1 - q^N), q = e^{-x}
    let span = -(-x * n_bound as f64).exp_m1();
    let n = ((-u * span).ln_1p() / -x).floor();
    if n.is_finite() && n >= 0.0 {
        (n as u32).min(n_bound - 1)
    } else {
        0
    }
}

/// Draws an initial vibrational level from the thermal distribution.
pub fn sample_thermal_level<R: Rng + ?Sized>(trap: &TrapModel, rng: &mut R) -> VibrationalLevel {
    let x = trap.boltzmann_exponent();
    let n_bound = trap.n_bound();
    let mut level = VibrationalLevel::ground(trap.transverse_dims);
    for q in level.quanta_mut() {
        *q = sample_quantum(x, n_bound, rng);
    }
    level
}

/// Differential shift of the two-level resonance for an atom in `level`:
/// `η ω_t Σ_d (n_d + 1/2)`, rad/s.
pub fn detuning_of_level(trap: &TrapModel, level: &VibrationalLevel) -> f64 {
    let energy: f64 = level.quanta().iter().map(|&n| n as f64 + 0.5).sum();
    trap.detuning_per_quantum() * energy
}

/// Overlaps `O[m][n] = ⟨m'|n⟩` between the eigenstates `|n⟩` of an
/// oscillator of frequency `ω` and `|m'⟩` of the concentric oscillator of
/// frequency `ω(1 + η)`, truncated to `N × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    eta: f64,
    size: usize,
    // row-major, row = index in the scaled oscillator
    entries: Vec<f64>,
    // per row, the column range holding entries above ~1e-17
    support: Vec<(usize, usize)>,
}

impl OverlapMatrix {
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `⟨m'|n⟩`.
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.entries[m * self.size + n]
    }

    pub fn diagonal(&self, n: usize) -> f64 {
        self.get(n, n)
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.entries[m * self.size..(m + 1) * self.size]
    }

    /// `1 - Σ_m O[m][n]²`: the weight of `|n⟩` that falls outside the basis.
    pub fn column_deficit(&self, n: usize) -> f64 {
        let norm: f64 = (0..self.size).map(|m| self.get(m, n).powi(2)).sum();
        1.0 - norm
    }

    /// Number of leading columns whose deficit is below
    /// [`TRUNCATION_TOLERANCE`].
    pub fn converged_columns(&self) -> usize {
        (0..self.size)
            .take_while(|&n| self.column_deficit(n).abs() <= TRUNCATION_TOLERANCE)
            .count()
    }

    /// `y = O x`: coefficients in the scaled basis from coefficients in the
    /// unscaled one.
    pub fn to_scaled<T>(&self, x: &[T], y: &mut [T])
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        for (m, out) in y.iter_mut().enumerate() {
            let (lo, hi) = self.support[m];
            let row = &self.row(m)[lo..hi];
            *out = row
                .iter()
                .zip(&x[lo..hi])
                .fold(T::default(), |acc, (&o, &v)| acc + v * o);
        }
    }

    /// `x = Oᵀ y`: back from the scaled basis.
    pub fn to_unscaled<T>(&self, y: &[T], x: &mut [T])
    where
        T: Copy + Default + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        x.iter_mut().for_each(|v| *v = T::default());
        for (m, &ym) in y.iter().enumerate() {
            let (lo, hi) = self.support[m];
            for (v, &o) in x[lo..hi].iter_mut().zip(&self.row(m)[lo..hi]) {
                *v = *v + ym * o;
            }
        }
    }
}

/// Builds the `N × N` overlap matrix between the eigenstates of two
/// concentric oscillators whose frequencies differ by the factor `1 + eta`.
///
/// Uses the ladder-operator recursion that follows from
/// `a = μ a' − ν a'†`, with `μ = (√s + 1/√s)/2`, `ν = (√s − 1/√s)/2` and
/// `s = 1 + eta`; every entry is computed exactly up to rounding, so only
/// the columns close to `N` lose norm to states outside the basis.
pub fn overlap_matrix(eta: f64, size: usize) -> Result<OverlapMatrix> {
    if size == 0 {
        return Err(Error::invalid("N", "basis size must be at least 1"));
    }
    if !(eta.is_finite() && eta.abs() < 0.5) {
        return Err(Error::invalid("eta", format!("|eta| must be < 0.5, got {eta}")));
    }
    let s = 1.0 + eta;
    let root = s.sqrt();
    let mu = 0.5 * (root + 1.0 / root);
    let nu = 0.5 * (root - 1.0 / root);

    // column-major scratch: col[n][m] = ⟨m'|n⟩
    let mut cols = vec![vec![0.0; size]; size];
    cols[0][0] = (2.0 * root / (1.0 + s)).sqrt();
    for m in 1..size - 1 {
        // ⟨m+1'|0⟩ = (ν/μ) sqrt(m/(m+1)) ⟨m-1'|0⟩
        cols[0][m + 1] = nu / mu * (m as f64 / (m + 1) as f64).sqrt() * cols[0][m - 1];
    }
    for n in 1..size {
        let (done, rest) = cols.split_at_mut(n);
        let prev = &done[n - 1];
        let col = &mut rest[0];
        let sn = (n as f64).sqrt();
        // ⟨0'|n⟩ = -ν ⟨1'|n-1⟩ / √n
        col[0] = if size > 1 { -nu * prev[1] / sn } else { 0.0 };
        for m in 0..size - 1 {
            // √n ⟨m'|n-1⟩ = μ √(m+1) ⟨m+1'|n⟩ − ν √m ⟨m-1'|n⟩
            let lower = if m > 0 { col[m - 1] } else { 0.0 };
            col[m + 1] =
                (sn * prev[m] + nu * (m as f64).sqrt() * lower) / (mu * ((m + 1) as f64).sqrt());
        }
        // parity is exact; clear rounding residue
        for m in ((n + 1) % 2..size).step_by(2) {
            col[m] = 0.0;
        }
    }

    let mut entries = vec![0.0; size * size];
    for (n, col) in cols.iter().enumerate() {
        for (m, &v) in col.iter().enumerate() {
            entries[m * size + n] = v;
        }
    }
    let support = (0..size)
        .map(|m| {
            let row = &entries[m * size..(m + 1) * size];
            let significant = |v: &f64| v.abs() > 1e-17;
            let lo = row.iter().position(significant).unwrap_or(0);
            let hi = row.iter().rposition(significant).map_or(0, |i| i + 1);
            (lo, hi.max(lo))
        })
        .collect();

    let matrix = OverlapMatrix {
        eta,
        size,
        entries,
        support,
    };
    let deficit = matrix.column_deficit(0);
    if deficit.abs() > TRUNCATION_TOLERANCE {
        return Err(Error::Truncation {
            column: 0,
            deficit,
            size,
        });
    }
    Ok(matrix)
}
