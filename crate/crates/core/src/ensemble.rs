// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

//! Exact unitary evolution of disorder realizations and their ensemble average.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderSampler, DisorderSpec};
use crate::error::{Error, Result};
use crate::model::{build_realization_hamiltonian, DensityMatrix, Hamiltonian, LatticeSpec, StateVector};
use crate::C64;

/// Strictly increasing, non-negative output times (units ħ/J).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidParameter("time grid is empty".into()));
        }
        if times.iter().any(|t| !t.is_finite()) || times[0] < 0.0 {
            return Err(Error::InvalidParameter("times must be finite and non-negative".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("times must be strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// `start, start + step, ...` up to and including `stop` (within rounding).
    pub fn uniform(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || stop < start {
            return Err(Error::InvalidParameter(format!(
                "bad uniform grid [{start}, {stop}] step {step}"
            )));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        Self::new((0..=count).map(|i| start + i as f64 * step).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.times.last().expect("grid is non-empty")
    }

    /// Index of the grid time within `tol` of `t`.
    pub fn index_of(&self, t: f64, tol: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.times
    }
}

/// Spectral propagator `exp(-iHt)` from one dense eigendecomposition.
#[derive(Debug, Clone)]
pub struct SpectralPropagator {
    energies: DVector<f64>,
    modes: DMatrix<f64>,
}

impl SpectralPropagator {
    pub fn new(h: &Hamiltonian) -> Result<Self> {
        let dense = h.to_dense();
        let n = dense.nrows();
        let norm = dense.norm();
        let asymmetry = (&dense - dense.transpose()).amax();
        let eig = SymmetricEigen::try_new(dense, f64::EPSILON, 0).ok_or(Error::Eigendecomposition {
            n,
            norm,
            asymmetry,
        })?;
        if eig.eigenvalues.iter().any(|e| !e.is_finite()) {
            return Err(Error::Eigendecomposition { n, norm, asymmetry });
        }
        Ok(Self {
            energies: eig.eigenvalues,
            modes: eig.eigenvectors,
        })
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    /// Evolves to every time in `times`; `t = 0` returns `psi0` unchanged.
    pub fn evolve(&self, psi0: &StateVector, times: &TimeGrid) -> Result<Vec<StateVector>> {
        let n = self.energies.len();
        if psi0.dim() != n {
            return Err(Error::Dimension {
                context: "unitary evolution",
                expected: n,
                found: psi0.dim(),
            });
        }
        let amps = psi0.amplitudes();
        // Mode coefficients c = Vᵀ ψ0.
        let coeffs: Vec<C64> = (0..n)
            .map(|m| {
                self.modes
                    .column(m)
                    .iter()
                    .zip(amps)
                    .map(|(v, a)| a * *v)
                    .sum()
            })
            .collect();
        let mut out = Vec::with_capacity(times.len());
        let mut phased = vec![C64::new(0.0, 0.0); n];
        for &t in times.times() {
            if t == 0.0 {
                out.push(psi0.clone());
                continue;
            }
            for ((p, c), e) in phased.iter_mut().zip(&coeffs).zip(self.energies.iter()) {
                *p = c * C64::from_polar(1.0, -e * t);
            }
            let mut psi = vec![C64::new(0.0, 0.0); n];
            for (m, p) in phased.iter().enumerate() {
                for (dst, v) in psi.iter_mut().zip(self.modes.column(m).iter()) {
                    *dst += p * *v;
                }
            }
            let state = StateVector::from_raw(psi);
            let norm = state.norm();
            if (norm - 1.0).abs() > 1e-10 {
                return Err(Error::InvariantViolation {
                    time: t,
                    what: "norm error",
                    magnitude: (norm - 1.0).abs(),
                    tolerance: 1e-10,
                });
            }
            out.push(state);
        }
        Ok(out)
    }
}

/// `ψ(t) = exp(-iHt) ψ0` at every grid time.
pub fn evolve_unitary(h: &Hamiltonian, psi0: &StateVector, times: &TimeGrid) -> Result<Vec<StateVector>> {
    SpectralPropagator::new(h)?.evolve(psi0, times)
}

/// Number of projectors accumulated sequentially at a leaf of the reduction tree.
const LEAF_SIZE: usize = 8;

/// Upper triangle (column-major, `j ≤ k`) of `Σ |ψ⟩⟨ψ|` over `states`,
/// summed along a fixed binary tree.
fn tree_sum(states: &[&[C64]], n: usize) -> Vec<C64> {
    if states.len() <= LEAF_SIZE {
        let mut acc = vec![C64::new(0.0, 0.0); n * n];
        for psi in states {
            for k in 0..n {
                let ck = psi[k].conj();
                let col = &mut acc[k * n..k * n + k + 1];
                for (dst, a) in col.iter_mut().zip(psi.iter()) {
                    *dst += a * ck;
                }
            }
        }
        return acc;
    }
    let mid = states.len() / 2;
    let (mut left, right) = rayon::join(|| tree_sum(&states[..mid], n), || tree_sum(&states[mid..], n));
    for (l, r) in left.iter_mut().zip(&right) {
        *l += r;
    }
    left
}

/// `(1/K) Σ_k |ψ_k⟩⟨ψ_k|`, reduced in a fixed order independent of the
/// thread count. The result is exactly Hermitian.
pub fn average_projectors(states: &[StateVector]) -> Result<DensityMatrix> {
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidParameter("cannot average an empty ensemble".into()))?;
    let n = first.dim();
    if let Some(bad) = states.iter().find(|s| s.dim() != n) {
        return Err(Error::Dimension {
            context: "projector average",
            expected: n,
            found: bad.dim(),
        });
    }
    let refs: Vec<&[C64]> = states.iter().map(|s| s.amplitudes()).collect();
    Ok(assemble_hermitian(tree_sum(&refs, n), n, states.len()))
}

fn assemble_hermitian(upper: Vec<C64>, n: usize, k: usize) -> DensityMatrix {
    let inv = 1.0 / k as f64;
    let mut m = DMatrix::from_vec(n, n, upper);
    for col in 0..n {
        for row in 0..col {
            let v = m[(row, col)] * inv;
            m[(row, col)] = v;
            m[(col, row)] = v.conj();
        }
        let d = m[(col, col)];
        m[(col, col)] = C64::new(d.re * inv, 0.0);
    }
    DensityMatrix::from_matrix_unchecked(m)
}

/// Purity of the ensemble and its delete-one jackknife standard error,
/// from the overlaps `|⟨ψ_k|ψ_l⟩|²`.
pub fn purity_with_error(states: &[StateVector]) -> (f64, f64) {
    let k = states.len();
    if k < 2 {
        return (1.0, 0.0);
    }
    let mut row_sums = vec![0.0; k];
    for a in 0..k {
        row_sums[a] += 1.0;
        for b in a + 1..k {
            let g = states[a].inner(&states[b]).norm_sqr();
            row_sums[a] += g;
            row_sums[b] += g;
        }
    }
    let total: f64 = row_sums.iter().sum();
    let kf = k as f64;
    let purity = total / (kf * kf);
    let loo: Vec<f64> = row_sums
        .iter()
        .map(|r| (total - 2.0 * r + 1.0) / ((kf - 1.0) * (kf - 1.0)))
        .collect();
    let mean = loo.iter().sum::<f64>() / kf;
    let var = (kf - 1.0) / kf * loo.iter().map(|p| (p - mean).powi(2)).sum::<f64>();
    (purity, var.sqrt())
}

/// `ρ_ens(t)` for every grid time plus the inputs that produced it.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: TimeGrid,
    pub states: Vec<DensityMatrix>,
    /// Jackknife standard error of the purity at each time.
    pub purity_stderr: Vec<f64>,
    pub k_realizations: usize,
    pub master_seed: u64,
    pub lattice: LatticeSpec,
    pub disorder: DisorderSpec,
    pub initial: StateVector,
}

impl EnsembleResult {
    pub fn purities(&self) -> Vec<f64> {
        self.states.iter().map(crate::observables::purity).collect()
    }
}

/// Monte-Carlo average over realizations `0..k` of the ensemble seeded by
/// `master_seed`. Bitwise reproducible for any thread count.
pub fn ensemble_average(
    lattice: &LatticeSpec,
    disorder: &DisorderSpec,
    psi0: &StateVector,
    times: &TimeGrid,
    k: usize,
    master_seed: u64,
) -> Result<EnsembleResult> {
    lattice.validate()?;
    if k == 0 {
        return Err(Error::InvalidParameter("ensemble needs K >= 1".into()));
    }
    if psi0.dim() != lattice.n_sites {
        return Err(Error::Dimension {
            context: "initial state",
            expected: lattice.n_sites,
            found: psi0.dim(),
        });
    }
    let sampler = DisorderSampler::new(disorder, lattice)?;
    let trajectories: Vec<Vec<StateVector>> = (0..k as u64)
        .into_par_iter()
        .map(|idx| {
            let r = sampler.sample(master_seed, idx);
            let h = build_realization_hamiltonian(lattice, &r)?;
            evolve_unitary(&h, psi0, times)
        })
        .collect::<Result<_>>()?;

    let n = lattice.n_sites;
    let (states, purity_stderr): (Vec<_>, Vec<_>) = (0..times.len())
        .into_par_iter()
        .map(|i| {
            if times.times()[i] == 0.0 {
                return (DensityMatrix::from_pure(psi0), 0.0);
            }
            let slice: Vec<StateVector> = trajectories.iter().map(|tr| tr[i].clone()).collect();
            let refs: Vec<&[C64]> = slice.iter().map(|s| s.amplitudes()).collect();
            let rho = assemble_hermitian(tree_sum(&refs, n), n, k);
            (rho, purity_with_error(&slice).1)
        })
        .unzip();

    Ok(EnsembleResult {
        times: times.clone(),
        states,
        purity_stderr,
        k_realizations: k,
        master_seed,
        lattice: *lattice,
        disorder: disorder.clone(),
        initial: psi0.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_average_hamiltonian, gaussian_wavepacket, Boundary};
    use crate::observables::purity;

    /// exp(-iHt) by scaling and squaring of a Taylor series.
    fn expm_oracle(h: &DMatrix<f64>, t: f64) -> DMatrix<C64> {
        let n = h.nrows();
        let a: DMatrix<C64> = h.map(|v| C64::new(0.0, -v * t));
        let norm = a.iter().map(|z| z.norm()).fold(0.0, f64::max) * n as f64;
        let s = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
        let scaled = &a / C64::new(2f64.powi(s), 0.0);
        let mut term = DMatrix::<C64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &scaled / C64::new(k as f64, 0.0);
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn zero_time_returns_initial_state() {
        let lattice = LatticeSpec::open(16).unwrap();
        let psi = gaussian_wavepacket(&lattice, 7.0, 2.0, 0.4).unwrap();
        let h = build_average_hamiltonian(&lattice);
        let out = evolve_unitary(&h, &psi, &TimeGrid::new(vec![0.0, 0.5]).unwrap()).unwrap();
        assert_eq!(out[0], psi);
        assert!((out[1].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_hamiltonian_only_adds_phases() {
        let eps = vec![0.3, -1.2, 0.7, 2.0];
        let h = Hamiltonian::from_parts(eps.clone(), 0.0, Boundary::Open).unwrap();
        let psi = StateVector::basis(4, 2).unwrap();
        let times = TimeGrid::uniform(0.0, 3.0, 0.5).unwrap();
        for (state, &t) in evolve_unitary(&h, &psi, &times).unwrap().iter().zip(times.times()) {
            let expected = C64::from_polar(1.0, -eps[2] * t);
            assert!((state.amplitudes()[2] - expected).norm() < 1e-12);
            for j in [0, 1, 3] {
                assert!(state.amplitudes()[j].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_matrix_exponential_oracle() {
        let lattice = LatticeSpec::open(64).unwrap();
        let psi = gaussian_wavepacket(&lattice, lattice.midpoint(), 4.0, 0.0).unwrap();
        let h = build_average_hamiltonian(&lattice);
        let out = evolve_unitary(&h, &psi, &TimeGrid::new(vec![1.0]).unwrap()).unwrap();
        let u = expm_oracle(&h.to_dense(), 1.0);
        let expected = &u * psi.to_dvector();
        let err = out[0]
            .amplitudes()
            .iter()
            .zip(expected.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "max error {err}");
    }

    #[test]
    fn single_realization_stays_pure() {
        let lattice = LatticeSpec::open(32).unwrap();
        let psi = gaussian_wavepacket(&lattice, lattice.midpoint(), 3.0, 0.0).unwrap();
        let times = TimeGrid::uniform(0.0, 1.0, 0.25).unwrap();
        let res = ensemble_average(&lattice, &DisorderSpec::anderson(10.0), &psi, &times, 1, 3).unwrap();
        for rho in &res.states {
            assert!((purity(rho) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn initial_state_is_exact_and_invariants_hold() {
        let lattice = LatticeSpec::open(24).unwrap();
        let psi = gaussian_wavepacket(&lattice, lattice.midpoint(), 2.5, 0.2).unwrap();
        let times = TimeGrid::uniform(0.0, 0.6, 0.2).unwrap();
        let res = ensemble_average(&lattice, &DisorderSpec::anderson(6.0), &psi, &times, 37, 9).unwrap();
        assert_eq!(res.states[0], DensityMatrix::from_pure(&psi));
        for rho in &res.states {
            let inv = rho.invariants();
            assert!(inv.trace_error < 1e-10);
            assert_eq!(inv.hermiticity_defect, 0.0);
            assert!(inv.min_eigenvalue > -1e-10);
            assert!(purity(rho) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn identical_members_give_a_pure_average() {
        let lattice = LatticeSpec::open(20).unwrap();
        let psi = gaussian_wavepacket(&lattice, 9.0, 2.0, 0.5).unwrap();
        let copies = vec![psi.clone(); 13];
        let rho = average_projectors(&copies).unwrap();
        assert!((purity(&rho) - 1.0).abs() < 1e-12);
        let (p, se) = purity_with_error(&copies);
        assert!((p - 1.0).abs() < 1e-12 && se < 1e-12);
    }

    #[test]
    fn jackknife_purity_agrees_with_density_matrix() {
        let lattice = LatticeSpec::open(16).unwrap();
        let psi = gaussian_wavepacket(&lattice, 7.5, 2.0, 0.0).unwrap();
        let sampler = DisorderSampler::new(&DisorderSpec::anderson(4.0), &lattice).unwrap();
        let grid = TimeGrid::new(vec![0.7]).unwrap();
        let states: Vec<StateVector> = (0..20)
            .map(|i| {
                let h = build_realization_hamiltonian(&lattice, &sampler.sample(1, i)).unwrap();
                evolve_unitary(&h, &psi, &grid).unwrap().remove(0)
            })
            .collect();
        let (p, se) = purity_with_error(&states);
        assert!((p - purity(&average_projectors(&states).unwrap())).abs() < 1e-12);
        assert!(se > 0.0);
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(vec![]).is_err());
        assert!(TimeGrid::new(vec![-0.1, 0.2]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.1]).is_err());
        let g = TimeGrid::uniform(0.0, 1.0, 0.02).unwrap();
        assert_eq!(g.len(), 51);
        assert!(g.index_of(0.2, 1e-9).is_some());
    }
}
