//! Motional engine against propagation on a position grid, plus its
//! structural properties.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};

use trapcoh::fock::{apply_pulse_joint, free_evolve, run_with_overlap, JointState};
use trapcoh::{
    build_schedule, overlap_matrix, run_sequence_fock, InitialMotion, PhaseConvention, Pulse,
    SequenceKind, TrapModel, VibrationalLevel,
};

const POINTS: usize = 301;
const HALF_WIDTH: f64 = 15.0;

struct Grid {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
}

/// Sinc-DVR Hamiltonian `p²/2 + ω²x²/2` (ħ = m = 1), fully diagonalized.
fn grid_oscillator(omega: f64) -> Grid {
    let h = 2.0 * HALF_WIDTH / (POINTS - 1) as f64;
    let ham = DMatrix::from_fn(POINTS, POINTS, |i, j| {
        let kinetic = if i == j {
            PI * PI / 3.0
        } else {
            let d = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            2.0 * sign / (d * d)
        } / (2.0 * h * h);
        let x = -HALF_WIDTH + i as f64 * h;
        kinetic + if i == j { 0.5 * omega * omega * x * x } else { 0.0 }
    });
    let eig = SymmetricEigen::new(ham);
    Grid {
        values: eig.eigenvalues,
        vectors: eig.eigenvectors,
    }
}

impl Grid {
    fn ground(&self) -> DVector<f64> {
        let k = self.values.imin();
        self.vectors.column(k).into_owned()
    }

    /// `e^{-iHt} ψ` through the eigendecomposition.
    fn propagate(&self, psi: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        let mut out = DVector::from_element(POINTS, Complex64::new(0.0, 0.0));
        for k in 0..POINTS {
            let v = self.vectors.column(k);
            let proj: Complex64 = v.iter().zip(psi.iter()).map(|(a, b)| b * *a).sum();
            let phase = Complex64::from_polar(1.0, -self.values[k] * t) * proj;
            for (o, a) in out.iter_mut().zip(v.iter()) {
                *o += phase * *a;
            }
        }
        out
    }
}

/// `⟨0|e^{iH₁t} e^{-iH₂t}|0⟩` on the grid, `t` in units of `1/ω`.
fn grid_ramsey_overlap(eta: f64, t: f64) -> Complex64 {
    let lower = grid_oscillator(1.0);
    let upper = grid_oscillator(1.0 + eta);
    let psi: DVector<Complex64> = lower.ground().map(|v| Complex64::new(v, 0.0));
    let a = lower.propagate(&psi, t);
    let b = upper.propagate(&psi, t);
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn trap_1d(eta: f64) -> TrapModel {
    TrapModel {
        differential_factor: eta,
        transverse_dims: 1,
        ..TrapModel::default()
    }
}

#[test]
fn ramsey_interference_matches_grid_propagation() {
    let eta = 0.05;
    let size = 60;
    let trap = trap_1d(eta);
    let omega = trap.angular_frequency();
    let o = overlap_matrix(eta, size).unwrap();
    for periods in [0.13, 0.5, 1.37, 4.71] {
        let t = periods * trap.transverse_period;
        let oracle = grid_ramsey_overlap(eta, omega * t);

        let open = Pulse::ideal(0.0, FRAC_PI_2, 0.0);
        let split = apply_pulse_joint(&JointState::lower(0, size), &open);
        let evolved = free_evolve(&split, t, &trap, &o).unwrap();
        // after the opening pulse c₁ = 1/√2 and c₂ = -i/√2
        let inner: Complex64 = evolved
            .a1
            .iter()
            .zip(&evolved.a2)
            .map(|(a, b)| a.conj() * b)
            .sum();
        let engine = inner * Complex64::new(0.0, 2.0);
        assert!(
            (engine.norm() - oracle.norm()).abs() < 1e-6,
            "{periods}: |C| {} vs {}",
            engine.norm(),
            oracle.norm()
        );
        let dphi = (engine / oracle).arg();
        assert!(dphi.abs() < 1e-6, "{periods}: phase off by {dphi}");

        let s = build_schedule(SequenceKind::Ramsey, 0, t, PhaseConvention::Constant).unwrap();
        let p2 = run_with_overlap(
            &trap,
            &s,
            &o,
            InitialMotion::Level(VibrationalLevel::new(&[0])),
        )
        .unwrap();
        assert!((p2 - 0.5 * (1.0 + oracle.re)).abs() < 1e-6);
    }
}

#[test]
fn norm_is_preserved_through_sequences() {
    let eta = 0.02;
    let size = 120;
    let trap = trap_1d(eta);
    let o = overlap_matrix(eta, size).unwrap();
    let mut state = JointState::lower(7, size);
    let s = build_schedule(SequenceKind::MultiPi, 8, 23e-3, PhaseConvention::Alternating).unwrap();
    let mut t = 0.0;
    for p in s.pulses() {
        state = free_evolve(&state, p.start_time - t, &trap, &o).unwrap();
        t = p.start_time;
        state = apply_pulse_joint(&state, p);
        assert!((state.norm_sqr() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn identical_potentials_refocus_exactly() {
    // at η → 0 the engine must agree with a resonant two-level atom
    let trap = trap_1d(1e-14);
    for (kind, n) in [(SequenceKind::Echo, 1), (SequenceKind::MultiPi, 6)] {
        let s = build_schedule(kind, n, 11e-3, PhaseConvention::Constant).unwrap();
        let p2 = run_sequence_fock(&trap, &s, 40, InitialMotion::Level(VibrationalLevel::new(&[9])))
            .unwrap();
        assert!(p2 < 1e-20, "{kind:?}: {p2}");
    }
}

#[test]
fn doubling_the_basis_changes_nothing() {
    let eta = 0.02;
    let trap = TrapModel {
        temperature: 0.15e-6,
        ..trap_1d(eta)
    };
    let size = trapcoh::fock::recommended_basis_size(&trap);
    let s = build_schedule(SequenceKind::MultiPi, 4, 9.1e-3, PhaseConvention::Constant).unwrap();
    let a = run_sequence_fock(&trap, &s, size, InitialMotion::Thermal).unwrap();
    let b = run_sequence_fock(&trap, &s, 2 * size, InitialMotion::Thermal).unwrap();
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    assert!(a > 1e-4, "mixing should be visible: {a}");
}

#[test]
fn two_dimensional_thermal_factorizes() {
    // each excited dimension adds its own mixing on top of the other
    let eta = 0.03;
    let s = build_schedule(SequenceKind::MultiPi, 2, 4.4e-3, PhaseConvention::Constant).unwrap();
    let one = run_sequence_fock(&trap_1d(eta), &s, 80, InitialMotion::Level(VibrationalLevel::new(&[6])))
        .unwrap();
    let two_trap = TrapModel {
        differential_factor: eta,
        ..TrapModel::default()
    };
    let both = run_sequence_fock(&two_trap, &s, 80, InitialMotion::Level(VibrationalLevel::new(&[6, 6])))
        .unwrap();
    let zero =
        run_sequence_fock(&two_trap, &s, 80, InitialMotion::Level(VibrationalLevel::new(&[6, 0])))
            .unwrap();
    assert!(both > one && one > 0.0);
    assert!(zero > 0.0 && zero <= both);
}
