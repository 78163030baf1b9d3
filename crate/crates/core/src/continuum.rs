// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

//! Disordered particle on a continuous line.
//!
//! States are sampled on a periodic grid, `c_i = ψ(x_i) √dx`, so the discrete
//! vector has unit Euclidean norm and the lattice [`DensityMatrix`] and purity
//! machinery applies unchanged. Propagation is Strang split-step Fourier.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::ensemble::{average_projectors, purity_with_error};
use crate::error::{Error, Result};
use crate::model::{DensityMatrix, StateVector};
use crate::observables::{coherence_ratio_map_relative, RatioMap, DEFAULT_RATIO_FLOOR};
use crate::rng::{realization_rng, StreamDomain};
use crate::C64;

/// Largest momentum population allowed in the Nyquist band.
pub const ALIASING_TOLERANCE: f64 = 1e-6;
/// Fraction of the momentum range, at each end, treated as the Nyquist band.
pub const NYQUIST_BAND_FRACTION: f64 = 1.0 / 16.0;
/// Largest norm drift tolerated along a propagation.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Periodic grid on `[-extent/2, extent/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_points: usize,
    pub extent: f64,
    #[serde(default = "unit_mass")]
    pub mass: f64,
}

fn unit_mass() -> f64 {
    1.0
}

impl GridSpec {
    pub fn new(n_points: usize, extent: f64, mass: f64) -> Result<Self> {
        let grid = Self {
            n_points,
            extent,
            mass,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 64 || !self.n_points.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "grid size must be a power of two >= 64, got {}",
                self.n_points
            )));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid extent must be positive, got {}", self.extent)));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {}", self.mass)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.extent / self.n_points as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -0.5 * self.extent + i as f64 * self.dx()
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Angular wavenumbers in FFT order.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n_points as i64;
        let dk = 2.0 * PI / self.extent;
        (0..n)
            .map(|i| if i < n / 2 { i } else { i - n })
            .map(|i| i as f64 * dk)
            .collect()
    }

    pub fn nyquist(&self) -> f64 {
        PI / self.dx()
    }
}

/// Wavefunction sampled on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumState {
    grid: GridSpec,
    state: StateVector,
}

impl ContinuumState {
    /// From grid-normalized amplitudes `c_i` with `Σ|c_i|² = 1`.
    pub fn new(grid: GridSpec, amplitudes: Vec<C64>) -> Result<Self> {
        grid.validate()?;
        if amplitudes.len() != grid.n_points {
            return Err(Error::Dimension {
                context: "continuum state",
                expected: grid.n_points,
                found: amplitudes.len(),
            });
        }
        Ok(Self {
            grid,
            state: StateVector::new(amplitudes)?,
        })
    }

    /// `ψ(x) ∝ exp(-(x - x0)²/(4σ0²) + i p0 x)`; `σ0` is the position spread.
    pub fn gaussian(grid: GridSpec, center: f64, sigma0: f64, momentum: f64) -> Result<Self> {
        grid.validate()?;
        if !(sigma0 > 0.0) {
            return Err(Error::InvalidParameter(format!("packet width must be positive, got {sigma0}")));
        }
        if 16.0 * sigma0 > grid.extent {
            return Err(Error::Resolution(format!(
                "domain of extent {} holds fewer than 16 packet widths ({sigma0})",
                grid.extent
            )));
        }
        let amps = (0..grid.n_points)
            .map(|i| {
                let x = grid.x(i);
                let d = x - center;
                C64::from_polar((-d * d / (4.0 * sigma0 * sigma0)).exp(), momentum * x)
            })
            .collect();
        Ok(Self {
            grid,
            state: StateVector::normalized(amps)?,
        })
    }

    /// Ground state of `m ω² x²/2` displaced to `center`.
    pub fn coherent(grid: GridSpec, omega: f64, center: f64) -> Result<Self> {
        if !(omega > 0.0) {
            return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
        }
        Self::gaussian(grid, center, (0.5 / (grid.mass * omega)).sqrt(), 0.0)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[C64] {
        self.state.amplitudes()
    }

    pub fn as_state_vector(&self) -> &StateVector {
        &self.state
    }

    pub fn norm(&self) -> f64 {
        self.state.norm()
    }

    pub fn mean_position(&self) -> f64 {
        self.amplitudes()
            .iter()
            .enumerate()
            .map(|(i, a)| a.norm_sqr() * self.grid.x(i))
            .sum()
    }

    pub fn position_variance(&self) -> f64 {
        let mean = self.mean_position();
        self.amplitudes()
            .iter()
            .enumerate()
            .map(|(i, a)| a.norm_sqr() * (self.grid.x(i) - mean).powi(2))
            .sum()
    }

    /// Momentum-space population of the Nyquist band.
    pub fn nyquist_population(&self) -> f64 {
        let n = self.grid.n_points;
        let mut buf = self.amplitudes().to_vec();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let edge = self.grid.nyquist() * (1.0 - NYQUIST_BAND_FRACTION);
        self.grid
            .wavenumbers()
            .iter()
            .zip(&buf)
            .filter(|(k, _)| k.abs() >= edge)
            .map(|(_, z)| z.norm_sqr() / n as f64)
            .sum()
    }

    /// Position-space population of the outer `fraction` of the domain at
    /// each end.
    pub fn edge_population(&self, fraction: f64) -> f64 {
        let n = self.grid.n_points;
        let margin = ((n as f64 * fraction).ceil() as usize).max(1);
        let a = self.amplitudes();
        a[..margin].iter().chain(&a[n - margin..]).map(|z| z.norm_sqr()).sum()
    }
}

/// Random potential on the continuous line; `ε ~ Normal(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContinuumDisorder {
    /// `H_ε = p²/2m + ε x`.
    LinearForce { sigma: f64 },
    /// `H_ε = p²/2m + (m ω²/2)(x - ε)²`.
    HarmonicCenter { omega: f64, sigma: f64 },
}

impl ContinuumDisorder {
    pub fn sigma(&self) -> f64 {
        match self {
            ContinuumDisorder::LinearForce { sigma } | ContinuumDisorder::HarmonicCenter { sigma, .. } => *sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = self.sigma();
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        if let ContinuumDisorder::HarmonicCenter { omega, .. } = self {
            if !(*omega > 0.0 && omega.is_finite()) {
                return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
            }
        }
        Ok(())
    }
}

/// Strang split-step propagator for `p²/2m + V(x)`, optionally without the
/// kinetic term.
pub struct SplitStep {
    grid: GridSpec,
    potential: Vec<f64>,
    kinetic: Option<Vec<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SplitStep {
    pub fn new(grid: GridSpec, potential: impl Fn(f64) -> f64, include_kinetic: bool) -> Result<Self> {
        grid.validate()?;
        let potential: Vec<f64> = grid.positions().into_iter().map(potential).collect();
        if let Some(i) = potential.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("potential is not finite at x = {}", grid.x(i))));
        }
        let kinetic = include_kinetic.then(|| {
            grid.wavenumbers()
                .into_iter()
                .map(|k| k * k / (2.0 * grid.mass))
                .collect()
        });
        let mut planner = FftPlanner::new();
        Ok(Self {
            grid,
            potential,
            kinetic,
            forward: planner.plan_fft_forward(grid.n_points),
            inverse: planner.plan_fft_inverse(grid.n_points),
        })
    }

    fn advance(&self, psi: &mut [C64], duration: f64, max_step: f64) {
        if duration == 0.0 {
            return;
        }
        let Some(kinetic) = &self.kinetic else {
            for (a, v) in psi.iter_mut().zip(&self.potential) {
                *a *= C64::from_polar(1.0, -v * duration);
            }
            return;
        };
        let steps = ((duration / max_step) - 1e-9).ceil().max(1.0) as usize;
        let dt = duration / steps as f64;
        let n = self.grid.n_points as f64;
        let half: Vec<C64> = self.potential.iter().map(|v| C64::from_polar(1.0, -0.5 * v * dt)).collect();
        let full: Vec<C64> = half.iter().map(|h| h * h).collect();
        let kin: Vec<C64> = kinetic.iter().map(|e| C64::from_polar(1.0 / n, -e * dt)).collect();
        let mut scratch = vec![C64::new(0.0, 0.0); self.forward.get_inplace_scratch_len().max(self.inverse.get_inplace_scratch_len())];
        for (a, h) in psi.iter_mut().zip(&half) {
            *a *= h;
        }
        for s in 0..steps {
            self.forward.process_with_scratch(psi, &mut scratch);
            for (a, k) in psi.iter_mut().zip(&kin) {
                *a *= k;
            }
            self.inverse.process_with_scratch(psi, &mut scratch);
            let phase = if s + 1 == steps { &half } else { &full };
            for (a, p) in psi.iter_mut().zip(phase) {
                *a *= p;
            }
        }
    }

    /// States at each of `times` (non-decreasing, starting from `t = 0`).
    pub fn trajectory(&self, psi0: &ContinuumState, times: &[f64], step: f64) -> Result<Vec<ContinuumState>> {
        if psi0.grid != self.grid {
            return Err(Error::InvalidParameter("state and propagator use different grids".into()));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
        }
        let mut buf = psi0.amplitudes().to_vec();
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            if !(t >= now) {
                return Err(Error::InvalidParameter(format!("output times must be non-decreasing from 0, got {t}")));
            }
            self.advance(&mut buf, t - now, step);
            now = t;
            let state = ContinuumState {
                grid: self.grid,
                state: StateVector::from_raw(buf.clone()),
            };
            let drift = (state.norm() - 1.0).abs();
            if drift > NORM_TOLERANCE {
                return Err(Error::InvariantViolation {
                    time: t,
                    what: "norm",
                    magnitude: drift,
                    tolerance: NORM_TOLERANCE,
                });
            }
            let band = state.nyquist_population();
            if band > ALIASING_TOLERANCE {
                return Err(Error::Resolution(format!(
                    "momentum population {band:.3e} in the Nyquist band at t = {t}"
                )));
            }
            out.push(state);
        }
        Ok(out)
    }

    pub fn evolve(&self, psi0: &ContinuumState, t: f64, step: f64) -> Result<ContinuumState> {
        Ok(self.trajectory(psi0, &[t], step)?.pop().expect("one output time"))
    }
}

/// Evolve `psi0` for time `t` under `p²/2m + V(x)`.
pub fn split_step_evolve(
    grid: GridSpec,
    potential: impl Fn(f64) -> f64,
    psi0: &ContinuumState,
    t: f64,
    step: f64,
) -> Result<ContinuumState> {
    SplitStep::new(grid, potential, true)?.evolve(psi0, t, step)
}

fn draw_normal(seed: u64, index: u64, sigma: f64, bound: Option<f64>) -> f64 {
    let mut rng = realization_rng(seed, index, StreamDomain::ContinuumDisorder);
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let eps = sigma * z;
        match bound {
            Some(b) if eps.abs() > b => continue,
            _ => return eps,
        }
    }
}

/// Biased (divisor K) sample variance.
fn sample_variance(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64
}

/// Ensemble average of the random linear potential at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDephasingReport {
    pub time: f64,
    pub sigma: f64,
    pub k_realizations: usize,
    pub include_kinetic: bool,
    /// Variance of the drawn forces (divisor K).
    pub force_variance: f64,
    pub ratio_map: RatioMap,
    #[serde(skip)]
    pub ensemble: Option<DensityMatrix>,
    #[serde(skip)]
    pub reference: Option<DensityMatrix>,
    pub grid: GridSpec,
}

impl LinearDephasingReport {
    /// Mean of `|ρ̄(x, x+Δx)| / |ρ_ref(x, x+Δx)|` over unmasked pairs.
    pub fn coherence_ratio(&self, separation: f64) -> Result<f64> {
        let bins = separation / self.grid.dx();
        let d = bins.round();
        if (bins - d).abs() > 1e-9 || d < 0.0 || d as usize >= self.grid.n_points {
            return Err(Error::Resolution(format!(
                "separation {separation} is not a grid multiple of {}",
                self.grid.dx()
            )));
        }
        let d = d as usize;
        let n = self.grid.n_points;
        let vals: Vec<f64> = (0..n - d).filter_map(|i| self.ratio_map.get(i, i + d)).collect();
        if vals.is_empty() {
            return Err(Error::DegenerateComparison {
                floor: self.ratio_map.floor,
            });
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// `exp(-σ² t² Δx² / 2)`.
    pub fn predicted_ratio(&self, separation: f64) -> f64 {
        (-0.5 * (self.sigma * self.time * separation).powi(2)).exp()
    }
}

/// Monte-Carlo average over `ε ~ Normal(0, σ²)` of evolution under
/// `[p²/2m +] ε x`, compared elementwise with the `ε = 0` evolution.
pub fn linear_dephasing_check(
    grid: GridSpec,
    sigma: f64,
    psi0: &ContinuumState,
    times: &[f64],
    k: usize,
    seed: u64,
    include_kinetic: bool,
    step: f64,
) -> Result<Vec<LinearDephasingReport>> {
    ContinuumDisorder::LinearForce { sigma }.validate()?;
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 realizations, got {k}")));
    }
    let forces: Vec<f64> = (0..k as u64).map(|i| draw_normal(seed, i, sigma, None)).collect();
    let runs: Vec<Vec<ContinuumState>> = forces
        .par_iter()
        .map(|&eps| SplitStep::new(grid, |x| eps * x, include_kinetic)?.trajectory(psi0, times, step))
        .collect::<Result<_>>()?;
    let reference = SplitStep::new(grid, |_| 0.0, include_kinetic)?.trajectory(psi0, times, step)?;
    let force_variance = sample_variance(&forces);
    times
        .par_iter()
        .enumerate()
        .map(|(ti, &t)| {
            let members: Vec<StateVector> = runs.iter().map(|r| r[ti].state.clone()).collect();
            let ensemble = average_projectors(&members)?;
            let reference = DensityMatrix::from_pure(&reference[ti].state);
            let ratio_map = coherence_ratio_map_relative(&ensemble, &reference, DEFAULT_RATIO_FLOOR)?;
            Ok(LinearDephasingReport {
                time: t,
                sigma,
                k_realizations: k,
                include_kinetic,
                force_variance,
                ratio_map,
                ensemble: Some(ensemble),
                reference: Some(reference),
                grid,
            })
        })
        .collect()
}

/// Least-squares fit `ln(-ln r) = c + a ln t + b ln Δx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub t_exponent: f64,
    pub separation_exponent: f64,
    pub r_squared: f64,
}

/// Fit damping exponents from `(t, Δx, ratio)` samples with `0 < ratio < 1`.
pub fn fit_damping_exponents(samples: &[(f64, f64, f64)]) -> Result<ExponentFit> {
    if samples.len() < 4 {
        return Err(Error::InvalidParameter("exponent fit needs at least 4 samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| !(s.0 > 0.0 && s.1 > 0.0 && s.2 > 0.0 && s.2 < 1.0)) {
        return Err(Error::InvalidParameter(format!("sample {s:?} outside the fit domain")));
    }
    let m = samples.len();
    let a = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => 1.0,
        1 => samples[i].0.ln(),
        _ => samples[i].1.ln(),
    });
    let y = nalgebra::DVector::from_iterator(m, samples.iter().map(|s| (-s.2.ln()).ln()));
    let coef = (a.transpose() * &a)
        .cholesky()
        .ok_or_else(|| Error::Factorization("degenerate exponent fit".into()))?
        .solve(&(a.transpose() * &y));
    let fitted = &a * &coef;
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    Ok(ExponentFit {
        t_exponent: coef[1],
        separation_exponent: coef[2],
        r_squared: 1.0 - ss_res / ss_tot,
    })
}

/// Ensemble purity of the random harmonic center over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicRevivalReport {
    pub omega: f64,
    pub sigma: f64,
    pub period: f64,
    pub times: Vec<f64>,
    pub purity: Vec<f64>,
    pub purity_stderr: Vec<f64>,
    /// Purity of the same sampled centers from exact coherent-state overlaps.
    pub sample_oracle: Vec<f64>,
    /// `1/√(1 + 4mωσ²(1 - cos ωt))`, the infinite-ensemble limit.
    pub infinite_ensemble: Vec<f64>,
    pub centers: Vec<f64>,
    /// Variance of the sampled centers (divisor K).
    pub center_variance: f64,
    #[serde(skip)]
    pub final_ensemble: Option<DensityMatrix>,
}

impl HarmonicRevivalReport {
    pub fn interior_minimum(&self) -> f64 {
        let n = self.purity.len();
        self.purity[1..n.saturating_sub(1)].iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `1 - p(t) ≈ c t²`: least-squares `c` over `0 < t ≤ t_fit`.
    pub fn short_time_coefficient(&self, t_fit: f64) -> Option<f64> {
        let (num, den) = self
            .times
            .iter()
            .zip(&self.purity)
            .filter(|(t, _)| **t > 0.0 && **t <= t_fit + 1e-12)
            .fold((0.0, 0.0), |(num, den), (t, p)| (num + (1.0 - p) * t * t, den + t.powi(4)));
        (den > 0.0).then(|| num / den)
    }

    /// Coefficient implied by the double-commutator generator with force
    /// variance `(m ω²)² s²`, for a coherent initial packet: `m ω³ s²`.
    pub fn expected_short_time_coefficient(&self, mass: f64) -> f64 {
        mass * self.omega.powi(3) * self.center_variance
    }
}

/// Purity of the ensemble of coherent states in `m ω²(x - ε)²/2` over
/// `times` (typically `[0, 2π/ω]`). Centers are drawn from `Normal(0, σ²)`
/// restricted to `|ε| ≤ extent/8`.
pub fn harmonic_revival_check(
    grid: GridSpec,
    omega: f64,
    sigma: f64,
    psi0: &ContinuumState,
    times: &[f64],
    k: usize,
    seed: u64,
    step: f64,
) -> Result<HarmonicRevivalReport> {
    ContinuumDisorder::HarmonicCenter { omega, sigma }.validate()?;
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 realizations, got {k}")));
    }
    let bound = grid.extent / 8.0;
    let centers: Vec<f64> = (0..k as u64).map(|i| draw_normal(seed, i, sigma, Some(bound))).collect();
    let m = grid.mass;
    let runs: Vec<Vec<ContinuumState>> = centers
        .par_iter()
        .map(|&eps| {
            let run = SplitStep::new(grid, |x| 0.5 * m * omega * omega * (x - eps).powi(2), true)?
                .trajectory(psi0, times, step)?;
            for (state, t) in run.iter().zip(times) {
                let clip = state.edge_population(NYQUIST_BAND_FRACTION);
                if clip > ALIASING_TOLERANCE {
                    return Err(Error::Resolution(format!(
                        "displaced packet (center {eps}) reaches the domain edge at t = {t}: {clip:.3e}"
                    )));
                }
            }
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let (purity, purity_stderr): (Vec<f64>, Vec<f64>) = (0..times.len())
        .into_par_iter()
        .map(|ti| {
            let members: Vec<StateVector> = runs.iter().map(|r| r[ti].state.clone()).collect();
            purity_with_error(&members)
        })
        .unzip();
    let sample_oracle = times
        .iter()
        .map(|&t| {
            let a = m * omega * (1.0 - (omega * t).cos());
            let total: f64 = centers
                .iter()
                .flat_map(|x| centers.iter().map(move |y| (-a * (x - y).powi(2)).exp()))
                .sum();
            total / (k * k) as f64
        })
        .collect();
    let infinite_ensemble = times
        .iter()
        .map(|&t| 1.0 / (1.0 + 4.0 * m * omega * sigma * sigma * (1.0 - (omega * t).cos())).sqrt())
        .collect();
    let last: Vec<StateVector> = runs.iter().map(|r| r[times.len() - 1].state.clone()).collect();
    Ok(HarmonicRevivalReport {
        omega,
        sigma,
        period: 2.0 * PI / omega,
        times: times.to_vec(),
        purity,
        purity_stderr,
        sample_oracle,
        infinite_ensemble,
        center_variance: sample_variance(&centers),
        centers,
        final_ensemble: Some(average_projectors(&last)?),
    })
}
