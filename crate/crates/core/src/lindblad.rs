// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

//! Short-time disorder master equation.
//!
//! For diagonal disorder the ensemble-averaged state obeys, at short times,
//!
//! ```text
//! dρ/dt = -i[H̄, ρ] + D(t, ρ),
//! D(t, ρ)_{jj'} = 2t (Σ_{jj'} - (Σ_{jj} + Σ_{j'j'})/2) ρ_{jj'},
//! ```
//!
//! where `Σ` is the covariance of the on-site energies and `H̄` the average
//! Hamiltonian. For homogeneous disorder the damping factor is
//! `-2t F(j - j')` with the localization function `F(Δj) = C(0) - C(Δj)`, and
//! the same dissipator can be written as a weighted average over momentum
//! kicks `e^{iqx} ρ e^{-iqx} - ρ` with weight `G(q)`, the Fourier transform
//! of `C`. Both forms are implemented; the propagator uses the position-basis
//! one.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::disorder::{correlation, covariance_matrix, DisorderSpec};
use crate::ensemble::TimeGrid;
use crate::error::{Error, Result};
use crate::model::{
    build_average_hamiltonian, Boundary, DensityMatrix, Hamiltonian, InvariantReport, LatticeSpec,
    POSITIVITY_TOLERANCE, STATE_TOLERANCE,
};
use crate::C64;

/// Default RK4 step (units ħ/J).
pub const DEFAULT_STEP: f64 = 0.005;
/// Default number of Brillouin-zone points for reporting `G(q)`.
pub const DEFAULT_Q_POINTS: usize = 1024;
/// Largest element change tolerated by the step-halving check.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;

/// Second moments of the disorder that enter the dissipator.
///
/// `energy_scale` is the bookkeeping scale `E₀` of the Lindblad operators
/// `(H_ε - H̄)/E₀`; it cancels against the rates and is never used
/// numerically.
#[derive(Debug, Clone, PartialEq)]
pub struct DissipatorSpec {
    pub covariance: DMatrix<f64>,
    pub energy_scale: f64,
}

impl DissipatorSpec {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() {
            return Err(Error::Dimension {
                context: "dissipator covariance",
                expected: covariance.nrows(),
                found: covariance.ncols(),
            });
        }
        Ok(Self {
            covariance,
            energy_scale: 1.0,
        })
    }

    pub fn from_disorder(spec: &DisorderSpec, n: usize) -> Result<Self> {
        spec.validate()?;
        Self::new(covariance_matrix(spec, n)?)
    }

    pub fn with_energy_scale(mut self, e0: f64) -> Self {
        self.energy_scale = e0;
        self
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// `Σ_{jj'} - (Σ_{jj} + Σ_{j'j'})/2`; zero on the diagonal.
    pub fn damping_matrix(&self) -> DMatrix<f64> {
        let s = &self.covariance;
        let n = s.nrows();
        DMatrix::from_fn(n, n, |j, k| {
            if j == k {
                0.0
            } else {
                s[(j, k)] - 0.5 * (s[(j, j)] + s[(k, k)])
            }
        })
    }
}

/// `F(Δj) = C(0) - C(Δj)`.
pub fn localization_function(spec: &DisorderSpec, dj: i64) -> Result<f64> {
    if !spec.is_homogeneous() {
        return Err(Error::UnsupportedVariant {
            operation: "localization_function",
            variant: spec.variant_name(),
        });
    }
    Ok(correlation(spec, 0)? - correlation(spec, dj)?)
}

/// Localization function of the path-integral treatment of Gaussian
/// correlations, `ξ (1 - (1 + 2 (Δx/L)²)^{-1/2})`. Used for comparison only.
pub fn path_integral_localization_function(xi: f64, corr_length: f64, dx: f64) -> Result<f64> {
    if !(corr_length > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "correlation length must be positive, got {corr_length}"
        )));
    }
    let u = dx / corr_length;
    Ok(xi * (1.0 - (1.0 + 2.0 * u * u).powf(-0.5)))
}

/// Uniform Brillouin-zone grid `q_k = 2πk/m - π`, `k = 0..m`.
pub fn bz_grid(m: usize) -> Vec<f64> {
    (0..m).map(|k| 2.0 * PI * k as f64 / m as f64 - PI).collect()
}

/// Largest separation with `C(Δj) ≥ 1e-12 C(0)`.
fn correlation_range(spec: &DisorderSpec) -> Result<i64> {
    let c0 = correlation(spec, 0)?;
    if c0 == 0.0 {
        return Ok(0);
    }
    let mut d = 0i64;
    while correlation(spec, d + 1)?.abs() >= 1e-12 * c0 {
        d += 1;
        if d > 1_000_000 {
            return Err(Error::InvalidParameter("correlation function is not summable".into()));
        }
    }
    Ok(d)
}

/// `G(q) = (1/2π) Σ_j e^{-iqj} C(j)`, the momentum-transfer density.
pub fn momentum_transfer_distribution(spec: &DisorderSpec, q_grid: &[f64]) -> Result<Vec<f64>> {
    if !spec.is_homogeneous() {
        return Err(Error::UnsupportedVariant {
            operation: "momentum_transfer_distribution",
            variant: spec.variant_name(),
        });
    }
    let range = correlation_range(spec)?;
    let c: Vec<f64> = (0..=range).map(|d| correlation(spec, d)).collect::<Result<_>>()?;
    Ok(q_grid
        .iter()
        .map(|&q| {
            let tail: f64 = c
                .iter()
                .enumerate()
                .skip(1)
                .map(|(d, cd)| 2.0 * cd * (q * d as f64).cos())
                .sum();
            (c[0] + tail) / (2.0 * PI)
        })
        .collect())
}

/// Rectangle-rule integral of a periodic function sampled on [`bz_grid`].
pub fn bz_integral(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * 2.0 * PI / values.len() as f64
}

/// `F(Δj)` for `Δj ∈ [-(n-1), n-1]` together with `G(q)` on a BZ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationProfile {
    pub separations: Vec<i64>,
    pub f: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub g: Vec<f64>,
}

impl LocalizationProfile {
    pub fn compute(spec: &DisorderSpec, n: usize, q_points: usize) -> Result<Self> {
        let m = n.saturating_sub(1) as i64;
        let separations: Vec<i64> = (-m..=m).collect();
        let f = separations
            .iter()
            .map(|&d| localization_function(spec, d))
            .collect::<Result<_>>()?;
        let q_grid = bz_grid(q_points);
        let g = momentum_transfer_distribution(spec, &q_grid)?;
        Ok(Self {
            separations,
            f,
            q_grid,
            g,
        })
    }

    pub fn f_at(&self, dj: i64) -> Option<f64> {
        self.separations.iter().position(|&d| d == dj).map(|i| self.f[i])
    }
}

/// Commutator-free solution `ρ_{jj'}(t) = exp(-t² F(j - j')) ρ0_{jj'}`.
pub fn dephasing_closed_form(rho0: &DensityMatrix, spec: &DisorderSpec, t: f64) -> Result<DensityMatrix> {
    let n = rho0.dim();
    let factors: Vec<f64> = (0..n as i64)
        .map(|d| localization_function(spec, d).map(|f| (-t * t * f).exp()))
        .collect::<Result<_>>()?;
    let mut m = rho0.matrix().clone();
    for k in 0..n {
        for j in 0..n {
            if j != k {
                m[(j, k)] *= factors[j.abs_diff(k)];
            }
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

/// Position-basis dissipator `D(t, ρ)`.
pub fn second_moment_dissipator(d: &DissipatorSpec, rho: &DensityMatrix, t: f64) -> Result<DMatrix<C64>> {
    if d.dim() != rho.dim() {
        return Err(Error::Dimension {
            context: "second-moment dissipator",
            expected: d.dim(),
            found: rho.dim(),
        });
    }
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!("dissipator time must be >= 0, got {t}")));
    }
    let damping = d.damping_matrix();
    Ok(rho.matrix().zip_map(&damping, |r, m| r * (2.0 * t * m)))
}

/// Momentum-kick form `2t Σ_q w G(q) (e^{iqx} ρ e^{-iqx} - ρ)`, evaluated by
/// quadrature of `g` on the uniform grid `q_grid`.
pub fn momentum_kick_dissipator(
    q_grid: &[f64],
    g: &[f64],
    rho: &DensityMatrix,
    t: f64,
) -> Result<DMatrix<C64>> {
    if q_grid.len() != g.len() || q_grid.is_empty() {
        return Err(Error::Dimension {
            context: "momentum-kick dissipator",
            expected: q_grid.len(),
            found: g.len(),
        });
    }
    let n = rho.dim();
    let weight = 2.0 * PI / q_grid.len() as f64;
    // Kick-averaged phase for every separation j - j'.
    let kicked: Vec<C64> = (-(n as i64 - 1)..n as i64)
        .map(|d| {
            q_grid
                .iter()
                .zip(g)
                .map(|(&q, &gq)| C64::from_polar(gq * weight, q * d as f64) - gq * weight)
                .sum()
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |j, k| {
        let d = j as i64 - k as i64 + n as i64 - 1;
        rho.get(j, k) * kicked[d as usize] * (2.0 * t)
    }))
}

/// States and diagnostics along one master-equation integration.
#[derive(Debug, Clone)]
pub struct MePropagation {
    pub times: TimeGrid,
    pub states: Vec<DensityMatrix>,
    pub invariants: Vec<InvariantReport>,
}

impl MePropagation {
    pub fn purities(&self) -> Vec<f64> {
        self.states.iter().map(crate::observables::purity).collect()
    }

    /// Worst values over the whole run.
    pub fn worst_invariants(&self) -> InvariantReport {
        self.invariants.iter().fold(
            InvariantReport {
                trace_error: 0.0,
                hermiticity_defect: 0.0,
                min_eigenvalue: f64::INFINITY,
            },
            |acc, r| InvariantReport {
                trace_error: acc.trace_error.max(r.trace_error),
                hermiticity_defect: acc.hermiticity_defect.max(r.hermiticity_defect),
                min_eigenvalue: acc.min_eigenvalue.min(r.min_eigenvalue),
            },
        )
    }
}

/// The disorder master equation for a fixed average Hamiltonian and
/// covariance, integrated with classic RK4.
#[derive(Debug, Clone)]
pub struct MasterEquation {
    hamiltonian: Hamiltonian,
    /// Column-major damping factors `Σ_{jj'} - (Σ_{jj}+Σ_{j'j'})/2`.
    damping: Vec<f64>,
}

impl MasterEquation {
    pub fn new(lattice: &LatticeSpec, spec: &DisorderSpec) -> Result<Self> {
        lattice.validate()?;
        let d = DissipatorSpec::from_disorder(spec, lattice.n_sites)?;
        Self::from_parts(build_average_hamiltonian(lattice), &d)
    }

    pub fn from_parts(hamiltonian: Hamiltonian, dissipator: &DissipatorSpec) -> Result<Self> {
        if hamiltonian.dim() != dissipator.dim() {
            return Err(Error::Dimension {
                context: "master equation",
                expected: hamiltonian.dim(),
                found: dissipator.dim(),
            });
        }
        Ok(Self {
            hamiltonian,
            damping: dissipator.damping_matrix().as_slice().to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// `dρ/dt` at time `t`, written into `out`.
    fn rhs(&self, t: f64, rho: &[C64], out: &mut [C64]) {
        let n = self.dim();
        let h = &self.hamiltonian;
        let diag = h.diagonal();
        let hop = h.off_diagonal();
        let periodic = h.boundary() == Boundary::Periodic;
        let at = |j: usize, k: usize| rho[k * n + j];
        let minus_i = C64::new(0.0, -1.0);
        for k in 0..n {
            for j in 0..n {
                let r = at(j, k);
                // (Hρ)_{jk}
                let mut left = r * diag[j];
                if j > 0 {
                    left += at(j - 1, k) * hop;
                } else if periodic {
                    left += at(n - 1, k) * hop;
                }
                if j + 1 < n {
                    left += at(j + 1, k) * hop;
                } else if periodic {
                    left += at(0, k) * hop;
                }
                // (ρH)_{jk}
                let mut right = r * diag[k];
                if k > 0 {
                    right += at(j, k - 1) * hop;
                } else if periodic {
                    right += at(j, n - 1) * hop;
                }
                if k + 1 < n {
                    right += at(j, k + 1) * hop;
                } else if periodic {
                    right += at(j, 0) * hop;
                }
                out[k * n + j] = minus_i * (left - right) + r * (2.0 * t * self.damping[k * n + j]);
            }
        }
    }

    /// Integrates from `t = 0` (where `rho0` is given) through every grid time.
    ///
    /// Between consecutive output times the interval is split into equal
    /// steps no longer than `step`. Trace and Hermiticity are checked after
    /// every step, positivity at every output time.
    pub fn propagate(&self, rho0: &DensityMatrix, times: &TimeGrid, step: f64) -> Result<MePropagation> {
        let n = self.dim();
        if rho0.dim() != n {
            return Err(Error::Dimension {
                context: "master equation initial state",
                expected: n,
                found: rho0.dim(),
            });
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
        }
        let len = n * n;
        let mut rho: Vec<C64> = rho0.matrix().as_slice().to_vec();
        let zero = C64::new(0.0, 0.0);
        let (mut k1, mut k2, mut k3, mut k4) = (vec![zero; len], vec![zero; len], vec![zero; len], vec![zero; len]);
        let mut stage = vec![zero; len];
        let mut t = 0.0f64;
        let mut states = Vec::with_capacity(times.len());
        let mut invariants = Vec::with_capacity(times.len());

        for &target in times.times() {
            let span = target - t;
            let steps = if span > 0.0 { (span / step - 1e-9).ceil().max(1.0) as usize } else { 0 };
            let t_start = t;
            for s in 0..steps {
                let t0 = t_start + span * s as f64 / steps as f64;
                let t1 = t_start + span * (s + 1) as f64 / steps as f64;
                let h = t1 - t0;
                let tm = t0 + 0.5 * h;
                self.rhs(t0, &rho, &mut k1);
                axpy(&rho, 0.5 * h, &k1, &mut stage);
                self.rhs(tm, &stage, &mut k2);
                axpy(&rho, 0.5 * h, &k2, &mut stage);
                self.rhs(tm, &stage, &mut k3);
                axpy(&rho, h, &k3, &mut stage);
                self.rhs(t1, &stage, &mut k4);
                for i in 0..len {
                    rho[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0);
                }
                check_cheap_invariants(&rho, n, t1)?;
            }
            t = target;
            let state = DensityMatrix::from_matrix_unchecked(DMatrix::from_column_slice(n, n, &rho));
            let report = state.invariants();
            if report.min_eigenvalue < -POSITIVITY_TOLERANCE {
                return Err(Error::InvariantViolation {
                    time: target,
                    what: "negative eigenvalue",
                    magnitude: -report.min_eigenvalue,
                    tolerance: POSITIVITY_TOLERANCE,
                });
            }
            invariants.push(report);
            states.push(state);
        }
        Ok(MePropagation {
            times: times.clone(),
            states,
            invariants,
        })
    }

    /// Largest element change between integrating with `step` and `step / 2`.
    pub fn step_halving_delta(&self, rho0: &DensityMatrix, times: &TimeGrid, step: f64) -> Result<f64> {
        let coarse = self.propagate(rho0, times, step)?;
        let fine = self.propagate(rho0, times, step / 2.0)?;
        Ok(coarse
            .states
            .iter()
            .zip(&fine.states)
            .map(|(a, b)| (a.matrix() - b.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max))
    }
}

fn axpy(base: &[C64], a: f64, x: &[C64], out: &mut [C64]) {
    for ((o, b), v) in out.iter_mut().zip(base).zip(x) {
        *o = b + v * a;
    }
}

fn check_cheap_invariants(rho: &[C64], n: usize, t: f64) -> Result<()> {
    let trace: C64 = (0..n).map(|j| rho[j * n + j]).sum();
    let trace_error = (trace - 1.0).norm();
    if trace_error > STATE_TOLERANCE {
        return Err(Error::InvariantViolation {
            time: t,
            what: "trace error",
            magnitude: trace_error,
            tolerance: STATE_TOLERANCE,
        });
    }
    let mut herm = 0.0f64;
    for k in 0..n {
        for j in 0..k {
            herm = herm.max((rho[k * n + j] - rho[j * n + k].conj()).norm());
        }
    }
    if herm > STATE_TOLERANCE {
        return Err(Error::InvariantViolation {
            time: t,
            what: "hermiticity defect",
            magnitude: herm,
            tolerance: STATE_TOLERANCE,
        });
    }
    Ok(())
}

/// Master-equation evolution of `rho0` under the average Hamiltonian of
/// `lattice` and the dissipator of `spec`.
pub fn propagate_master_equation(
    lattice: &LatticeSpec,
    spec: &DisorderSpec,
    rho0: &DensityMatrix,
    times: &TimeGrid,
    step: f64,
) -> Result<MePropagation> {
    MasterEquation::new(lattice, spec)?.propagate(rho0, times, step)
}

/// First time at which `|p_me/p_ens - 1|` exceeds `threshold`, linearly
/// interpolated between grid points. `f64::INFINITY` if it never does.
pub fn tmax_estimate(times: &[f64], purities_me: &[f64], purities_ens: &[f64], threshold: f64) -> Result<f64> {
    if purities_me.len() != times.len() || purities_ens.len() != times.len() {
        return Err(Error::Dimension {
            context: "t_max estimate",
            expected: times.len(),
            found: purities_me.len().min(purities_ens.len()),
        });
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be positive, got {threshold}")));
    }
    let deviation: Vec<f64> = purities_me
        .iter()
        .zip(purities_ens)
        .map(|(m, e)| (m / e - 1.0).abs())
        .collect();
    for i in 0..deviation.len() {
        if deviation[i] > threshold {
            if i == 0 {
                return Ok(times[0]);
            }
            let (d0, d1) = (deviation[i - 1], deviation[i]);
            let frac = (threshold - d0) / (d1 - d0);
            return Ok(times[i - 1] + frac * (times[i] - times[i - 1]));
        }
    }
    Ok(f64::INFINITY)
}
