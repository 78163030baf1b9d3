// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

//! Lattice geometry, tight-binding Hamiltonians and state types.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Tolerance for unit norm, unit trace and Hermiticity.
pub const STATE_TOLERANCE: f64 = 1e-10;
/// Most negative eigenvalue still accepted for a density matrix.
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

/// Finite one-dimensional lattice. Energies in units of J, lengths in units of a.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub n_sites: usize,
    #[serde(default = "default_one")]
    pub hopping: f64,
    #[serde(default = "default_one")]
    pub spacing: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

fn default_one() -> f64 {
    1.0
}

impl LatticeSpec {
    pub fn new(n_sites: usize, hopping: f64, spacing: f64, boundary: Boundary) -> Result<Self> {
        let spec = Self {
            n_sites,
            hopping,
            spacing,
            boundary,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Open chain with J = 1 and a = 1.
    pub fn open(n_sites: usize) -> Result<Self> {
        Self::new(n_sites, 1.0, 1.0, Boundary::Open)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 2 {
            return Err(Error::InvalidParameter(format!(
                "lattice needs at least 2 sites, got {}",
                self.n_sites
            )));
        }
        if self.boundary == Boundary::Periodic && self.n_sites < 3 {
            return Err(Error::InvalidParameter(
                "periodic boundary needs at least 3 sites".into(),
            ));
        }
        if !(self.hopping > 0.0 && self.hopping.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "hopping must be positive, got {}",
                self.hopping
            )));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }

    /// Lattice midpoint in site units, `(n - 1) / 2`.
    pub fn midpoint(&self) -> f64 {
        (self.n_sites as f64 - 1.0) / 2.0
    }
}

/// Identifies the random stream a realization was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedTag {
    pub master_seed: u64,
    pub index: u64,
}

/// One draw of the on-site energies.
#[derive(Debug, Clone, PartialEq)]
pub struct DisorderRealization {
    onsite: Vec<f64>,
    seed_tag: SeedTag,
}

impl DisorderRealization {
    pub fn new(onsite: Vec<f64>, seed_tag: SeedTag) -> Result<Self> {
        if let Some(bad) = onsite.iter().find(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "on-site energy {bad} is not finite"
            )));
        }
        Ok(Self { onsite, seed_tag })
    }

    pub fn onsite(&self) -> &[f64] {
        &self.onsite
    }

    pub fn seed_tag(&self) -> SeedTag {
        self.seed_tag
    }

    pub fn len(&self) -> usize {
        self.onsite.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsite.is_empty()
    }
}

/// Tridiagonal tight-binding Hamiltonian: on-site energies plus uniform
/// nearest-neighbour coupling `-hopping`, wrapped around for periodic chains.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    diagonal: Vec<f64>,
    hopping: f64,
    boundary: Boundary,
}

impl Hamiltonian {
    /// Builds from raw parts. Unlike [`LatticeSpec`], a zero hopping is
    /// accepted here so that the purely dissipative limit can be expressed.
    pub fn from_parts(diagonal: Vec<f64>, hopping: f64, boundary: Boundary) -> Result<Self> {
        if diagonal.len() < 2 {
            return Err(Error::InvalidParameter("hamiltonian needs at least 2 sites".into()));
        }
        if !hopping.is_finite() || diagonal.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidParameter("hamiltonian entries must be finite".into()));
        }
        if boundary == Boundary::Periodic && diagonal.len() < 3 {
            return Err(Error::InvalidParameter(
                "periodic boundary needs at least 3 sites".into(),
            ));
        }
        Ok(Self {
            diagonal,
            hopping,
            boundary,
        })
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    /// Hopping constant J; the matrix element between neighbours is `-J`.
    pub fn hopping(&self) -> f64 {
        self.hopping
    }

    /// Amplitude on each nearest-neighbour coupling.
    pub fn off_diagonal(&self) -> f64 {
        -self.hopping
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Nearest-neighbour bonds `(j, j')` with `j < j'`.
    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.dim();
        let wrap = (self.boundary == Boundary::Periodic).then_some((0, n - 1));
        (0..n - 1).map(|j| (j, j + 1)).chain(wrap)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (j, &e) in self.diagonal.iter().enumerate() {
            m[(j, j)] = e;
        }
        let t = self.off_diagonal();
        for (a, b) in self.bonds() {
            m[(a, b)] = t;
            m[(b, a)] = t;
        }
        m
    }

    /// `H x` for a complex vector, exploiting the tridiagonal structure.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let n = self.dim();
        let t = self.off_diagonal();
        let mut y: Vec<C64> = x.iter().zip(&self.diagonal).map(|(v, &e)| v * e).collect();
        for (a, b) in self.bonds() {
            y[a] += x[b] * t;
            y[b] += x[a] * t;
        }
        debug_assert_eq!(y.len(), n);
        y
    }
}

/// Average Hamiltonian: pure hopping, zero diagonal.
pub fn build_average_hamiltonian(spec: &LatticeSpec) -> Hamiltonian {
    Hamiltonian {
        diagonal: vec![0.0; spec.n_sites],
        hopping: spec.hopping,
        boundary: spec.boundary,
    }
}

/// Hamiltonian of a single disorder realization.
pub fn build_realization_hamiltonian(
    spec: &LatticeSpec,
    realization: &DisorderRealization,
) -> Result<Hamiltonian> {
    if realization.len() != spec.n_sites {
        return Err(Error::Dimension {
            context: "realization hamiltonian",
            expected: spec.n_sites,
            found: realization.len(),
        });
    }
    Ok(Hamiltonian {
        diagonal: realization.onsite.clone(),
        hopping: spec.hopping,
        boundary: spec.boundary,
    })
}

/// Normalized pure state on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C64>,
}

impl StateVector {
    /// Wraps amplitudes that are already normalized.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let norm = l2_norm(&amplitudes);
        if (norm - 1.0).abs() > STATE_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "state vector norm {norm} differs from 1"
            )));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes arbitrary nonzero amplitudes.
    pub fn normalized(mut amplitudes: Vec<C64>) -> Result<Self> {
        let norm = l2_norm(&amplitudes);
        if !(norm > 1e-150) || !norm.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cannot normalize a vector of norm {norm}"
            )));
        }
        let inv = 1.0 / norm;
        amplitudes.iter_mut().for_each(|a| *a *= inv);
        Ok(Self { amplitudes })
    }

    /// Site basis state `|j⟩`.
    pub fn basis(n: usize, j: usize) -> Result<Self> {
        if j >= n {
            return Err(Error::Dimension {
                context: "basis state",
                expected: n,
                found: j,
            });
        }
        let mut amps = vec![C64::new(0.0, 0.0); n];
        amps[j] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes: amps })
    }

    pub(crate) fn from_raw(amplitudes: Vec<C64>) -> Self {
        Self { amplitudes }
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.amplitudes)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Expectation of the site index.
    pub fn mean_position(&self) -> f64 {
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(j, a)| j as f64 * a.norm_sqr())
            .sum()
    }

    pub fn to_dvector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.amplitudes)
    }
}

fn l2_norm(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// Gaussian packet `∝ exp(-(j - center)² / (4 width²)) · exp(i momentum j)`.
///
/// `width` is the standard deviation of the position density.
pub fn gaussian_wavepacket(
    spec: &LatticeSpec,
    center: f64,
    width: f64,
    momentum: f64,
) -> Result<StateVector> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidParameter(format!("packet width must be positive, got {width}")));
    }
    if !center.is_finite() || !momentum.is_finite() {
        return Err(Error::InvalidParameter("packet center and momentum must be finite".into()));
    }
    let n = spec.n_sites as f64;
    if center < -10.0 * width || center > n - 1.0 + 10.0 * width {
        return Err(Error::InvalidParameter(format!(
            "packet center {center} lies outside the lattice"
        )));
    }
    let amps: Vec<C64> = (0..spec.n_sites)
        .map(|j| {
            let x = j as f64;
            let envelope = (-(x - center).powi(2) / (4.0 * width * width)).exp();
            C64::from_polar(envelope, momentum * x)
        })
        .collect();
    StateVector::normalized(amps)
}

/// Normalized `(a + e^{iφ} b)`.
pub fn superposition_state(
    a: &StateVector,
    b: &StateVector,
    relative_phase: f64,
) -> Result<StateVector> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            context: "superposition",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let phase = C64::from_polar(1.0, relative_phase);
    let amps: Vec<C64> = a
        .amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x + phase * y)
        .collect();
    if l2_norm(&amps) < 1e-12 {
        return Err(Error::InvalidParameter(
            "superposition cancels to the zero vector".into(),
        ));
    }
    StateVector::normalized(amps)
}

/// Numerical health of a density matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub trace_error: f64,
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
}

impl InvariantReport {
    pub fn is_valid(&self) -> bool {
        self.trace_error <= STATE_TOLERANCE
            && self.hermiticity_defect <= STATE_TOLERANCE
            && self.min_eigenvalue >= -POSITIVITY_TOLERANCE
    }
}

/// Hermitian, unit-trace, positive semidefinite state of the lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    elements: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, trace and positivity.
    pub fn new(elements: DMatrix<C64>) -> Result<Self> {
        if !elements.is_square() {
            return Err(Error::Dimension {
                context: "density matrix",
                expected: elements.nrows(),
                found: elements.ncols(),
            });
        }
        let rho = Self { elements };
        let report = rho.invariants();
        let checks = [
            ("trace error", report.trace_error, STATE_TOLERANCE),
            ("hermiticity defect", report.hermiticity_defect, STATE_TOLERANCE),
            ("negative eigenvalue", (-report.min_eigenvalue).max(0.0), POSITIVITY_TOLERANCE),
        ];
        for (what, magnitude, tolerance) in checks {
            if magnitude > tolerance {
                return Err(Error::InvariantViolation {
                    time: f64::NAN,
                    what,
                    magnitude,
                    tolerance,
                });
            }
        }
        Ok(rho)
    }

    /// Skips validation; callers guarantee the invariants by construction.
    pub(crate) fn from_matrix_unchecked(elements: DMatrix<C64>) -> Self {
        Self { elements }
    }

    /// Projector `|ψ⟩⟨ψ|`.
    pub fn from_pure(psi: &StateVector) -> Self {
        let n = psi.dim();
        let a = psi.amplitudes();
        Self {
            elements: DMatrix::from_fn(n, n, |j, k| a[j] * a[k].conj()),
        }
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self {
            elements: DMatrix::from_diagonal_element(n, n, C64::new(1.0 / n as f64, 0.0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.elements
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.elements
    }

    pub fn get(&self, j: usize, k: usize) -> C64 {
        self.elements[(j, k)]
    }

    pub fn trace(&self) -> C64 {
        self.elements.trace()
    }

    /// Site populations.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.elements[(j, j)].re).collect()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for k in j..n {
                let d = (self.elements[(j, k)] - self.elements[(k, j)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let mut herm = (&self.elements + self.elements.adjoint()) * C64::new(0.5, 0.0);
        // Near-underflow tails break the QR iteration. Dropping them moves
        // the spectrum by at most n · 1e-30 · max|ρ|.
        let cutoff = 1e-30 * herm.iter().map(|z| z.norm()).fold(0.0, f64::max);
        herm.apply(|z| {
            if z.norm() < cutoff {
                *z = C64::new(0.0, 0.0);
            }
        });
        herm.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn invariants(&self) -> InvariantReport {
        InvariantReport {
            trace_error: (self.trace() - C64::new(1.0, 0.0)).norm(),
            hermiticity_defect: self.hermiticity_defect(),
            min_eigenvalue: self.min_eigenvalue(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn average_hamiltonian_three_sites_open() {
        let spec = LatticeSpec::open(3).unwrap();
        let h = build_average_hamiltonian(&spec).to_dense();
        for j in 0..3 {
            assert_eq!(h[(j, j)], 0.0);
        }
        assert_eq!(h[(0, 1)], -1.0);
        assert_eq!(h[(1, 2)], -1.0);
        assert_eq!(h[(0, 2)], 0.0);
        assert_eq!(h[(2, 0)], 0.0);
    }

    #[test]
    fn average_hamiltonian_two_sites_strong_hopping() {
        let spec = LatticeSpec::new(2, 2.0, 1.0, Boundary::Open).unwrap();
        let h = build_average_hamiltonian(&spec).to_dense();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.0, -2.0, -2.0, 0.0]));
    }

    #[test]
    fn periodic_wraps_around() {
        let spec = LatticeSpec::new(5, 1.0, 1.0, Boundary::Periodic).unwrap();
        let h = build_average_hamiltonian(&spec).to_dense();
        assert_eq!(h[(0, 4)], -1.0);
        assert_eq!(h[(4, 0)], -1.0);
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn realization_hamiltonian_adds_onsite() {
        let spec = LatticeSpec::open(2).unwrap();
        let r = DisorderRealization::new(vec![0.5, -0.5], SeedTag { master_seed: 0, index: 0 }).unwrap();
        let h = build_realization_hamiltonian(&spec, &r).unwrap().to_dense();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.5, -1.0, -1.0, -0.5]));
        let eig = h.symmetric_eigenvalues();
        let expected = (0.25f64 + 1.0).sqrt();
        let mut e: Vec<f64> = eig.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!((e[0] + expected).abs() < 1e-12 && (e[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_disorder_equals_average() {
        let spec = LatticeSpec::open(6).unwrap();
        let r = DisorderRealization::new(vec![0.0; 6], SeedTag { master_seed: 1, index: 2 }).unwrap();
        assert_eq!(
            build_realization_hamiltonian(&spec, &r).unwrap(),
            build_average_hamiltonian(&spec)
        );
    }

    #[test]
    fn realization_length_mismatch() {
        let spec = LatticeSpec::open(4).unwrap();
        let r = DisorderRealization::new(vec![0.0; 3], SeedTag { master_seed: 0, index: 0 }).unwrap();
        assert!(matches!(
            build_realization_hamiltonian(&spec, &r),
            Err(Error::Dimension { expected: 4, found: 3, .. })
        ));
    }

    #[test]
    fn lattice_validation() {
        assert!(LatticeSpec::open(1).is_err());
        assert!(LatticeSpec::new(4, 0.0, 1.0, Boundary::Open).is_err());
        assert!(LatticeSpec::new(4, 1.0, -1.0, Boundary::Open).is_err());
        assert!(LatticeSpec::new(2, 1.0, 1.0, Boundary::Periodic).is_err());
    }

    #[test]
    fn wavepacket_normalized_and_centered() {
        let spec = LatticeSpec::open(128).unwrap();
        let psi = gaussian_wavepacket(&spec, spec.midpoint(), 4.0, 0.0).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        assert!(psi.amplitudes().iter().all(|a| a.im == 0.0 && a.re > 0.0));
        // Oracle: direct summation of j |ψ_j|² with the unnormalized envelope.
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..128 {
            let w = (-(j as f64 - 63.5f64).powi(2) / 32.0).exp().powi(2);
            num += j as f64 * w;
            den += w;
        }
        assert!((num / den - 63.5).abs() < 0.01);
        assert!((psi.mean_position() - 63.5).abs() < 0.01);
    }

    #[test]
    fn wavepacket_rejects_bad_input() {
        let spec = LatticeSpec::open(16).unwrap();
        assert!(gaussian_wavepacket(&spec, 8.0, 0.0, 0.0).is_err());
        assert!(gaussian_wavepacket(&spec, 8.0, -1.0, 0.0).is_err());
        assert!(gaussian_wavepacket(&spec, 1e4, 1.0, 0.0).is_err());
        assert!(gaussian_wavepacket(&spec, -30.0, 0.05, 0.0).is_err());
    }

    #[test]
    fn superposition_cases() {
        let spec = LatticeSpec::open(32).unwrap();
        let a = gaussian_wavepacket(&spec, 10.0, 2.0, 0.3).unwrap();
        let same = superposition_state(&a, &a, 0.0).unwrap();
        for (x, y) in same.amplitudes().iter().zip(a.amplitudes()) {
            assert!((x - y).norm() < 1e-14);
        }
        assert!(superposition_state(&a, &a, std::f64::consts::PI).is_err());

        let e0 = StateVector::basis(32, 3).unwrap();
        let e1 = StateVector::basis(32, 7).unwrap();
        let s = superposition_state(&e0, &e1, 0.0).unwrap();
        let w = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.amplitudes()[3].re - w).abs() < 1e-15);
        assert!((s.amplitudes()[7].re - w).abs() < 1e-15);
        assert!((s.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn density_matrix_validation() {
        let psi = StateVector::basis(3, 1).unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        assert!(DensityMatrix::new(rho.matrix().clone()).is_ok());
        let mut bad = rho.matrix().clone();
        bad[(0, 0)] = c(0.5);
        assert!(DensityMatrix::new(bad).is_err());
        let neg = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.1), c(-0.1), c(0.0)]));
        assert!(DensityMatrix::new(neg).is_err());
    }

    proptest! {
        #[test]
        fn realization_hamiltonian_is_linear_and_symmetric(
            e1 in proptest::collection::vec(-5.0f64..5.0, 8),
            e2 in proptest::collection::vec(-5.0f64..5.0, 8),
            periodic in any::<bool>(),
        ) {
            let boundary = if periodic { Boundary::Periodic } else { Boundary::Open };
            let spec = LatticeSpec::new(8, 1.3, 1.0, boundary).unwrap();
            let tag = SeedTag { master_seed: 0, index: 0 };
            let sum: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| a + b).collect();
            let h0 = build_average_hamiltonian(&spec).to_dense();
            let h1 = build_realization_hamiltonian(&spec, &DisorderRealization::new(e1, tag).unwrap()).unwrap().to_dense();
            let h2 = build_realization_hamiltonian(&spec, &DisorderRealization::new(e2, tag).unwrap()).unwrap().to_dense();
            let h12 = build_realization_hamiltonian(&spec, &DisorderRealization::new(sum, tag).unwrap()).unwrap().to_dense();
            prop_assert_eq!(&h1, &h1.transpose());
            let lhs = &h12 - &h0;
            let rhs = (&h1 - &h0) + (&h2 - &h0);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn packets_have_unit_norm(
            center in 0.0f64..64.0,
            width in 0.3f64..20.0,
            k in -3.14f64..3.14,
        ) {
            let spec = LatticeSpec::open(64).unwrap();
            let psi = gaussian_wavepacket(&spec, center, width, k).unwrap();
            prop_assert!((psi.norm() - 1.0).abs() < 1e-10);
        }
    }
}
