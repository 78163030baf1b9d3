// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

//! Statistical models of the on-site energies and their deterministic sampling.
//!
//! All models have zero mean. The two homogeneous variants are characterized
//! by a translation-invariant two-point function `C(Δj)` (units J²):
//!
//! * Anderson box disorder, `ε_j ~ U[-W/2, W/2]` i.i.d., `C(Δj) = W²/12 δ_{Δj,0}`;
//! * Gaussian-correlated disorder, `C(Δj) = ξ exp(-Δj²/L²)`.
//!
//! A custom covariance matrix may be supplied instead; it is sampled as a
//! zero-mean Gaussian vector but has no correlation function.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DisorderRealization, LatticeSpec, SeedTag};
use crate::rng::{realization_rng, StreamDomain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisorderSpec {
    AndersonBox {
        #[serde(rename = "W")]
        strength: f64,
    },
    GaussianCorrelated {
        xi: f64,
        #[serde(rename = "L")]
        corr_length: f64,
    },
    #[serde(rename = "custom")]
    CustomCovariance { sigma: Vec<Vec<f64>> },
}

impl DisorderSpec {
    pub fn anderson(strength: f64) -> Self {
        DisorderSpec::AndersonBox { strength }
    }

    pub fn gaussian(xi: f64, corr_length: f64) -> Self {
        DisorderSpec::GaussianCorrelated { xi, corr_length }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            DisorderSpec::AndersonBox { .. } => "anderson_box",
            DisorderSpec::GaussianCorrelated { .. } => "gaussian_correlated",
            DisorderSpec::CustomCovariance { .. } => "custom",
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        !matches!(self, DisorderSpec::CustomCovariance { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DisorderSpec::AndersonBox { strength } => {
                if !(strength.is_finite() && *strength >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "disorder strength W must be non-negative, got {strength}"
                    )));
                }
            }
            DisorderSpec::GaussianCorrelated { xi, corr_length } => {
                if !(xi.is_finite() && *xi >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "correlation strength xi must be non-negative, got {xi}"
                    )));
                }
                if !(corr_length.is_finite() && *corr_length > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "correlation length L must be positive, got {corr_length}"
                    )));
                }
            }
            DisorderSpec::CustomCovariance { sigma } => {
                let n = sigma.len();
                if n == 0 || sigma.iter().any(|row| row.len() != n) {
                    return Err(Error::InvalidParameter("custom covariance must be a non-empty square matrix".into()));
                }
                let scale = sigma
                    .iter()
                    .flatten()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
                    .max(1.0);
                for j in 0..n {
                    for k in 0..j {
                        if (sigma[j][k] - sigma[k][j]).abs() > 1e-12 * scale {
                            return Err(Error::InvalidParameter(format!(
                                "custom covariance is not symmetric at ({j}, {k})"
                            )));
                        }
                    }
                }
                if sigma.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("custom covariance has non-finite entries".into()));
                }
            }
        }
        Ok(())
    }
}

/// Two-point correlation `C(Δj)` of a homogeneous model.
pub fn correlation(spec: &DisorderSpec, dj: i64) -> Result<f64> {
    match *spec {
        DisorderSpec::AndersonBox { strength } => {
            Ok(if dj == 0 { strength * strength / 12.0 } else { 0.0 })
        }
        DisorderSpec::GaussianCorrelated { xi, corr_length } => {
            let d = dj as f64;
            Ok(xi * (-(d * d) / (corr_length * corr_length)).exp())
        }
        DisorderSpec::CustomCovariance { .. } => Err(Error::UnsupportedVariant {
            operation: "correlation",
            variant: "custom",
        }),
    }
}

/// `C(Δj)` tabulated for `Δj ∈ [-(n-1), n-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    max_separation: usize,
    values: Vec<f64>,
}

impl CorrelationProfile {
    pub fn new(spec: &DisorderSpec, n: usize) -> Result<Self> {
        let max_separation = n.saturating_sub(1);
        let m = max_separation as i64;
        let values = (-m..=m).map(|d| correlation(spec, d)).collect::<Result<_>>()?;
        Ok(Self {
            max_separation,
            values,
        })
    }

    pub fn max_separation(&self) -> usize {
        self.max_separation
    }

    pub fn get(&self, dj: i64) -> Option<f64> {
        let idx = dj + self.max_separation as i64;
        usize::try_from(idx).ok().and_then(|i| self.values.get(i).copied())
    }

    /// `(Δj, C(Δj))` pairs in increasing `Δj`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let m = self.max_separation as i64;
        (-m..=m).zip(self.values.iter().copied())
    }
}

/// Covariance of `n` consecutive on-site energies.
pub fn covariance_matrix(spec: &DisorderSpec, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("covariance matrix needs n >= 1".into()));
    }
    match spec {
        DisorderSpec::CustomCovariance { sigma } => {
            if sigma.len() != n {
                return Err(Error::Dimension {
                    context: "custom covariance",
                    expected: n,
                    found: sigma.len(),
                });
            }
            Ok(DMatrix::from_fn(n, n, |j, k| sigma[j][k]))
        }
        _ => {
            let profile = CorrelationProfile::new(spec, n)?;
            Ok(DMatrix::from_fn(n, n, |j, k| {
                profile
                    .get(j as i64 - k as i64)
                    .expect("separation within profile range")
            }))
        }
    }
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Box { half_width: f64 },
    Convolution { weights: Vec<f64>, half_width: usize },
    Factor(DMatrix<f64>),
}

/// Symmetric kernel with lattice autocorrelation `exp(-Δj²/L²)`, unnormalized.
///
/// The kernel is the inverse transform of the square root of the (positive)
/// lattice spectral density. For `L ≳ 3` it approaches the sampled Gaussian
/// `exp(-k²/(2s²))`, `s = L/2`; for shorter lengths the sampled Gaussian no
/// longer reproduces the target correlation, so the spectral form is used
/// throughout.
fn spectral_kernel(corr_length: f64) -> Vec<f64> {
    const QUAD_POINTS: usize = 8192;
    let l2 = corr_length * corr_length;
    let reach = (corr_length * (40.0f64).sqrt()).ceil() as usize + 1;
    let dq = 2.0 * std::f64::consts::PI / QUAD_POINTS as f64;
    let sqrt_density: Vec<f64> = (0..QUAD_POINTS)
        .map(|m| {
            let q = m as f64 * dq;
            let s = 1.0
                + 2.0
                    * (1..=reach)
                        .map(|j| (-((j * j) as f64) / l2).exp() * (q * j as f64).cos())
                        .sum::<f64>();
            s.max(0.0).sqrt()
        })
        .collect();
    let coeff = |k: usize| {
        sqrt_density
            .iter()
            .enumerate()
            .map(|(m, v)| v * (m as f64 * dq * k as f64).cos())
            .sum::<f64>()
            / QUAD_POINTS as f64
    };
    let w0 = coeff(0);
    let mut half = vec![w0];
    for k in 1..QUAD_POINTS / 4 {
        let w = coeff(k);
        if w.abs() < 1e-10 * w0 && k > corr_length as usize {
            break;
        }
        half.push(w);
    }
    half.iter().rev().chain(half.iter().skip(1)).copied().collect()
}

/// Prepared sampler for one (disorder model, lattice) pair.
///
/// Gaussian-correlated fields are i.i.d. normals convolved with a kernel
/// `w_k` whose autocorrelation is `exp(-Δj²/L²)` on the lattice, scaled so
/// that `Σ w_k² = ξ`. The normals are drawn on a lattice padded by the kernel
/// half width, so every physical site sees the full kernel.
#[derive(Debug, Clone)]
pub struct DisorderSampler {
    n_sites: usize,
    kind: SamplerKind,
}

impl DisorderSampler {
    pub fn new(spec: &DisorderSpec, lattice: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        let n = lattice.n_sites;
        let kind = match spec {
            DisorderSpec::AndersonBox { strength } => SamplerKind::Box {
                half_width: strength / 2.0,
            },
            DisorderSpec::GaussianCorrelated { xi, corr_length } => {
                let raw = spectral_kernel(*corr_length);
                let half_width = raw.len() / 2;
                let norm2: f64 = raw.iter().map(|w| w * w).sum();
                let amp = (xi / norm2).sqrt();
                SamplerKind::Convolution {
                    weights: raw.into_iter().map(|w| amp * w).collect(),
                    half_width,
                }
            }
            DisorderSpec::CustomCovariance { .. } => {
                let sigma = covariance_matrix(spec, n)?;
                SamplerKind::Factor(symmetric_factor(sigma)?)
            }
        };
        Ok(Self { n_sites: n, kind })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// Correlation actually realized by the sampler at separation `dj`.
    ///
    /// For the Gaussian-correlated model this is the kernel autocorrelation,
    /// which differs from `ξ exp(-Δj²/L²)` only by discretization error.
    pub fn realized_correlation(&self, dj: i64) -> Option<f64> {
        match &self.kind {
            SamplerKind::Box { half_width } => {
                Some(if dj == 0 { (2.0 * half_width).powi(2) / 12.0 } else { 0.0 })
            }
            SamplerKind::Convolution { weights, .. } => {
                let d = dj.unsigned_abs() as usize;
                Some(
                    weights
                        .iter()
                        .zip(weights.iter().skip(d))
                        .map(|(a, b)| a * b)
                        .sum(),
                )
            }
            SamplerKind::Factor(_) => None,
        }
    }

    /// Realization `index` of the ensemble seeded by `master_seed`.
    pub fn sample(&self, master_seed: u64, index: u64) -> DisorderRealization {
        let mut rng = realization_rng(master_seed, index, StreamDomain::LatticeDisorder);
        let n = self.n_sites;
        let onsite = match &self.kind {
            SamplerKind::Box { half_width } => {
                let h = *half_width;
                (0..n)
                    .map(|_| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 })
                    .collect()
            }
            SamplerKind::Convolution { weights, half_width } => {
                let padded: Vec<f64> = (0..n + 2 * half_width)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                (0..n)
                    .map(|j| {
                        weights
                            .iter()
                            .zip(&padded[j..j + weights.len()])
                            .map(|(w, z)| w * z)
                            .sum()
                    })
                    .collect()
            }
            SamplerKind::Factor(factor) => {
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                let z = nalgebra::DVector::from_vec(z);
                (factor * z).iter().copied().collect()
            }
        };
        DisorderRealization::new(
            onsite,
            SeedTag {
                master_seed,
                index,
            },
        )
        .expect("sampled energies are finite")
    }
}

/// `B` with `B Bᵀ = Σ`, from the symmetric eigendecomposition.
fn symmetric_factor(sigma: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    let eig = sigma.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(Error::Factorization(format!(
            "covariance is not positive semidefinite (min eigenvalue {min:.3e})"
        )));
    }
    let mut factor = eig.eigenvectors;
    for k in 0..n {
        let s = eig.eigenvalues[k].max(0.0).sqrt();
        factor.column_mut(k).scale_mut(s);
    }
    Ok(factor)
}

/// One-shot sampling; prefer [`DisorderSampler`] when drawing many realizations.
pub fn sample_realization(
    spec: &DisorderSpec,
    lattice: &LatticeSpec,
    master_seed: u64,
    index: u64,
) -> Result<DisorderRealization> {
    Ok(DisorderSampler::new(spec, lattice)?.sample(master_seed, index))
}

/// Sample covariance (divisor K, sample mean removed).
pub fn empirical_covariance(realizations: &[DisorderRealization]) -> Result<DMatrix<f64>> {
    if realizations.len() < 2 {
        return Err(Error::InvalidParameter(
            "empirical covariance needs at least 2 realizations".into(),
        ));
    }
    let n = realizations[0].len();
    if let Some(bad) = realizations.iter().find(|r| r.len() != n) {
        return Err(Error::Dimension {
            context: "empirical covariance",
            expected: n,
            found: bad.len(),
        });
    }
    let k = realizations.len() as f64;
    let mut mean = vec![0.0; n];
    for r in realizations {
        for (m, e) in mean.iter_mut().zip(r.onsite()) {
            *m += e;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut cov = DMatrix::zeros(n, n);
    let mut centered = vec![0.0; n];
    for r in realizations {
        for ((c, e), m) in centered.iter_mut().zip(r.onsite()).zip(&mean) {
            *c = e - m;
        }
        for j in 0..n {
            for l in j..n {
                cov[(j, l)] += centered[j] * centered[l];
            }
        }
    }
    for j in 0..n {
        for l in j..n {
            let v = cov[(j, l)] / k;
            cov[(j, l)] = v;
            cov[(l, j)] = v;
        }
    }
    Ok(cov)
}
