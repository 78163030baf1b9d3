// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

//! Scalar and array diagnostics of lattice density matrices.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DensityMatrix;
use crate::C64;

/// Relative floor for [`coherence_ratio_map`]: `1e-4 · max|ρ_b|`.
pub const DEFAULT_RATIO_FLOOR: f64 = 1e-4;

/// `tr ρ²`, computed as `Σ |ρ_{jj'}|²` (valid for Hermitian ρ).
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.matrix().iter().map(|z| z.norm_sqr()).sum()
}

/// `tr ρ²` by explicit matrix product; used to cross-check [`purity`].
pub fn purity_by_trace(rho: &DensityMatrix) -> f64 {
    (rho.matrix() * rho.matrix()).trace().re
}

/// `q_k = 2πk/n - π` for `k = 0..n`.
pub fn momentum_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64 - PI).collect()
}

/// `n(q_k) = (1/n) Σ_{jj'} e^{-i q_k (j - j')} ρ_{jj'}` on [`momentum_grid`].
///
/// Implemented through the diagonal sums `s(Δ) = Σ_j ρ_{j+Δ, j}`, which is
/// O(n²) instead of O(n³).
pub fn momentum_distribution(rho: &DensityMatrix) -> Vec<f64> {
    let n = rho.dim();
    let m = rho.matrix();
    // s(Δ) for Δ = 0..n; s(-Δ) = conj(s(Δ)) for Hermitian ρ.
    let diag_sums: Vec<C64> = (0..n)
        .map(|d| (0..n - d).map(|j| m[(j + d, j)]).sum())
        .collect();
    momentum_grid(n)
        .iter()
        .map(|&q| {
            let mut acc = diag_sums[0].re;
            for (d, s) in diag_sums.iter().enumerate().skip(1) {
                // e^{-iqΔ} s(Δ) + e^{iqΔ} conj(s(Δ)) = 2 Re(e^{-iqΔ} s(Δ))
                acc += 2.0 * (C64::from_polar(1.0, -q * d as f64) * s).re;
            }
            acc / n as f64
        })
        .collect()
}

/// Closed interval in momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QWindow {
    pub lo: f64,
    pub hi: f64,
}

impl QWindow {
    /// Centered on `q = 0`, one fringe period to each side.
    pub fn around_zero(period: f64) -> Self {
        Self {
            lo: -period,
            hi: period,
        }
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.lo - 1e-12 && q <= self.hi + 1e-12
    }
}

/// `(max - min)/(max + min)` of `n_q` over the grid points inside `window`.
pub fn visibility(q_grid: &[f64], n_q: &[f64], window: QWindow) -> Result<f64> {
    if q_grid.len() != n_q.len() {
        return Err(Error::Dimension {
            context: "visibility",
            expected: q_grid.len(),
            found: n_q.len(),
        });
    }
    let inside: Vec<f64> = q_grid
        .iter()
        .zip(n_q)
        .filter(|(q, _)| window.contains(**q))
        .map(|(_, v)| *v)
        .collect();
    if inside.is_empty() {
        return Err(Error::UndefinedVisibility("window contains no grid points".into()));
    }
    let max = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = inside.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max + min > 0.0) {
        return Err(Error::UndefinedVisibility("signal vanishes in the window".into()));
    }
    Ok(((max - min) / (max + min)).clamp(0.0, 1.0))
}

/// Mean spacing of the local maxima of `n_q` inside `window`, with each
/// maximum refined by a three-point parabola.
pub fn fringe_period(q_grid: &[f64], n_q: &[f64], window: QWindow) -> Option<f64> {
    if q_grid.len() < 3 || q_grid.len() != n_q.len() {
        return None;
    }
    let dq = q_grid[1] - q_grid[0];
    let mut peaks = Vec::new();
    for i in 1..q_grid.len() - 1 {
        if !window.contains(q_grid[i]) {
            continue;
        }
        let (a, b, c) = (n_q[i - 1], n_q[i], n_q[i + 1]);
        if b > a && b >= c {
            let denom = a - 2.0 * b + c;
            let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            peaks.push(q_grid[i] + shift * dq);
        }
    }
    if peaks.len() < 2 {
        return None;
    }
    Some((peaks[peaks.len() - 1] - peaks[0]) / (peaks.len() - 1) as f64)
}

/// Elementwise `|ρ_a| / |ρ_b|`, masked where `|ρ_b|` is below the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioMap {
    pub dim: usize,
    pub floor: f64,
    /// Row-major; `None` marks a masked element.
    pub values: Vec<Option<f64>>,
    pub masked_count: usize,
}

/// Summary of the unmasked part of a [`RatioMap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub unmasked: usize,
    pub masked: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub max_abs_deviation: f64,
}

impl RatioMap {
    pub fn get(&self, j: usize, k: usize) -> Option<f64> {
        self.values[j * self.dim + k]
    }

    pub fn stats(&self) -> RatioStats {
        let vals: Vec<f64> = self.values.iter().flatten().copied().collect();
        let count = vals.len();
        let mean = if count > 0 { vals.iter().sum::<f64>() / count as f64 } else { f64::NAN };
        let var = if count > 0 {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64
        } else {
            f64::NAN
        };
        RatioStats {
            unmasked: count,
            masked: self.masked_count,
            mean,
            std_dev: var.sqrt(),
            max_abs_deviation: vals.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max),
        }
    }
}

/// Ratio map with an absolute floor.
pub fn coherence_ratio_map(a: &DensityMatrix, b: &DensityMatrix, floor: f64) -> Result<RatioMap> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            context: "ratio map",
            expected: b.dim(),
            found: a.dim(),
        });
    }
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("ratio floor must be positive, got {floor}")));
    }
    let n = a.dim();
    let mut values = Vec::with_capacity(n * n);
    let mut masked_count = 0;
    for j in 0..n {
        for k in 0..n {
            let denom = b.get(j, k).norm();
            if denom >= floor {
                values.push(Some(a.get(j, k).norm() / denom));
            } else {
                masked_count += 1;
                values.push(None);
            }
        }
    }
    if masked_count == n * n {
        return Err(Error::DegenerateComparison { floor });
    }
    Ok(RatioMap {
        dim: n,
        floor,
        values,
        masked_count,
    })
}

/// Ratio map with the floor set relative to `max|ρ_b|`.
pub fn coherence_ratio_map_relative(a: &DensityMatrix, b: &DensityMatrix, rel_floor: f64) -> Result<RatioMap> {
    let max = b.matrix().iter().map(|z| z.norm()).fold(0.0, f64::max);
    coherence_ratio_map(a, b, rel_floor * max)
}

/// Population on the outer `margin` sites at each end of the lattice.
pub fn edge_leakage(rho: &DensityMatrix, margin: usize) -> Result<f64> {
    let n = rho.dim();
    if margin == 0 || 2 * margin >= n {
        return Err(Error::InvalidParameter(format!(
            "edge margin must satisfy 0 < margin < n/2, got {margin} for n = {n}"
        )));
    }
    let pops = rho.populations();
    Ok(pops[..margin].iter().sum::<f64>() + pops[n - margin..].iter().sum::<f64>())
}

/// Purity-ratio series together with the elementwise comparison at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub ratio_map: RatioMap,
    /// `(t, p_a(t) / p_b(t))`.
    pub purity_ratio_series: Vec<(f64, f64)>,
    /// `None` when the deviation threshold is never crossed.
    pub tmax: Option<f64>,
}
