// Copyright 2026 The disorder-ensemble Authors
// SPDX-License-Identifier: Apache-2.0

//! Scenario configuration and the artifact bundle writer.
//!
//! A [`ScenarioInput`] is what a user writes; [`ScenarioInput::resolve`] fills
//! every default and yields a [`ScenarioConfig`] in which nothing is implicit.
//! The resolved config is stored in `manifest.json` and, loaded back, runs
//! the same scenario again.
//!
//! Bundle layout:
//!
//! ```text
//! manifest.json           resolved config, seeds, version, wall-clock, errors
//! report.json             scalar results (no timing information)
//! purity.csv              t,p_ens,p_me,ratio
//! momentum.csv            t,q,n_ens,n_me
//! density/ens_t<t>.csv    j,jp,re,im  (also me_t<t>.csv)
//! ```
//!
//! `correlation_sweep` writes one `purity_L<L>.csv` per correlation length
//! plus `localization.csv` and `momentum_transfer.csv`. Continuum scenarios
//! put the closed-form reference in the `p_me` column.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::continuum::{
    fit_damping_exponents, harmonic_revival_check, linear_dephasing_check, ContinuumDisorder, ContinuumState,
    GridSpec,
};
use crate::disorder::DisorderSpec;
use crate::ensemble::{ensemble_average, EnsembleResult, TimeGrid};
use crate::error::{Error, Result};
use crate::lindblad::{
    tmax_estimate, LocalizationProfile, MasterEquation, MePropagation, CONVERGENCE_TOLERANCE, DEFAULT_Q_POINTS,
    DEFAULT_STEP,
};
use crate::model::{gaussian_wavepacket, superposition_state, DensityMatrix, LatticeSpec, StateVector};
use crate::observables::{
    coherence_ratio_map_relative, edge_leakage, fringe_period, momentum_distribution, momentum_grid, purity,
    visibility, QWindow, RatioStats, DEFAULT_RATIO_FLOOR,
};

/// Elements below this magnitude are omitted from density CSVs.
pub const DENSITY_WRITE_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DoubleSlit,
    Compare,
    CorrelationSweep,
    ContinuumLinear,
    ContinuumHarmonic,
}

impl ScenarioKind {
    pub fn is_lattice(self) -> bool {
        matches!(
            self,
            ScenarioKind::DoubleSlit | ScenarioKind::Compare | ScenarioKind::CorrelationSweep
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::DoubleSlit => "double_slit",
            ScenarioKind::Compare => "compare",
            ScenarioKind::CorrelationSweep => "correlation_sweep",
            ScenarioKind::ContinuumLinear => "continuum_linear",
            ScenarioKind::ContinuumHarmonic => "continuum_harmonic",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown scenario '{s}'")))
    }
}

/// Initial state. Lattice positions are in sites, continuum positions in
/// length units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Gaussian { center: f64, width: f64, momentum: f64 },
    /// `(|a⟩ + e^{iφ}|b⟩)/norm` for packets at `center ± separation/2`.
    TwoPackets {
        center: f64,
        separation: f64,
        width: f64,
        phase: f64,
    },
    /// Harmonic-oscillator ground state displaced to `center`.
    Coherent { center: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// RK4 step for the master equation, or split-step size on the grid.
    pub step: f64,
    /// Relative purity-ratio deviation that defines `t_max`.
    pub tmax_threshold: f64,
    /// Ratio-map floor relative to `max|ρ_me|`.
    pub ratio_floor: f64,
    pub convergence_check: bool,
    /// Sites at each lattice end counted as edge leakage.
    pub edge_margin: usize,
    pub q_points: usize,
    pub include_kinetic: bool,
}

/// Fully resolved scenario. Fields that do not apply to the scenario kind
/// are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub master_seed: Option<u64>,
    pub k_realizations: usize,
    pub lattice: Option<LatticeSpec>,
    pub disorder: Option<DisorderSpec>,
    pub correlation_lengths: Option<Vec<f64>>,
    pub grid: Option<GridSpec>,
    pub continuum_disorder: Option<ContinuumDisorder>,
    pub initial_state: InitialState,
    pub times: TimeGrid,
    /// Subset of `times` at which density matrices and momentum
    /// distributions are written.
    pub snapshot_times: Vec<f64>,
    /// Coherence separations evaluated by `continuum_linear`.
    pub separations: Option<Vec<f64>>,
    pub solver: SolverSettings,
    pub output_dir: Option<PathBuf>,
}

/// User-facing config; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioInput {
    pub scenario: Option<ScenarioKind>,
    pub master_seed: Option<u64>,
    pub k_realizations: Option<usize>,
    pub lattice: Option<LatticeSpec>,
    pub disorder: Option<DisorderSpec>,
    pub correlation_lengths: Option<Vec<f64>>,
    pub grid: Option<GridSpec>,
    pub continuum_disorder: Option<ContinuumDisorder>,
    pub initial_state: Option<InitialState>,
    pub times: Option<TimeGrid>,
    pub snapshot_times: Option<Vec<f64>>,
    pub separations: Option<Vec<f64>>,
    pub solver: Option<SolverInput>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverInput {
    pub step: Option<f64>,
    pub tmax_threshold: Option<f64>,
    pub ratio_floor: Option<f64>,
    pub convergence_check: Option<bool>,
    pub edge_margin: Option<usize>,
    pub q_points: Option<usize>,
    pub include_kinetic: Option<bool>,
}

fn lattice_or_default(input: &Option<LatticeSpec>) -> Result<LatticeSpec> {
    match input {
        Some(l) => {
            l.validate()?;
            Ok(*l)
        }
        None => LatticeSpec::open(128),
    }
}

impl ScenarioInput {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        // A manifest carries the resolved config under "config".
        let value = match value {
            Value::Object(mut map) if map.contains_key("config") && map.contains_key("bundle_version") => {
                map.remove("config").expect("checked")
            }
            other => other,
        };
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fill every default for the chosen scenario kind.
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let kind = self
            .scenario
            .ok_or_else(|| Error::Config("missing field 'scenario'".into()))?;
        let s = self.solver.clone().unwrap_or_default();
        let continuum = !kind.is_lattice();
        let solver = SolverSettings {
            step: s.step.unwrap_or(match kind {
                ScenarioKind::ContinuumLinear => 0.01,
                ScenarioKind::ContinuumHarmonic => 0.001,
                _ => DEFAULT_STEP,
            }),
            tmax_threshold: s.tmax_threshold.unwrap_or(0.05),
            ratio_floor: s.ratio_floor.unwrap_or(DEFAULT_RATIO_FLOOR),
            convergence_check: s.convergence_check.unwrap_or(!continuum),
            edge_margin: s.edge_margin.unwrap_or(10),
            q_points: s.q_points.unwrap_or(DEFAULT_Q_POINTS),
            include_kinetic: s.include_kinetic.unwrap_or(kind == ScenarioKind::ContinuumHarmonic),
        };

        let lattice = if continuum { None } else { Some(lattice_or_default(&self.lattice)?) };
        let mid = lattice.map(|l| l.midpoint()).unwrap_or(0.0);

        let (disorder, correlation_lengths) = match kind {
            ScenarioKind::Compare => (Some(self.disorder.clone().unwrap_or(DisorderSpec::anderson(10.0))), None),
            ScenarioKind::DoubleSlit => (Some(self.disorder.clone().unwrap_or(DisorderSpec::anderson(5.0))), None),
            ScenarioKind::CorrelationSweep => {
                let d = self.disorder.clone().unwrap_or(DisorderSpec::gaussian(1.0, 1.0));
                if !matches!(d, DisorderSpec::GaussianCorrelated { .. }) {
                    return Err(Error::Config("correlation_sweep needs gaussian_correlated disorder".into()));
                }
                let lengths = self.correlation_lengths.clone().unwrap_or_else(|| vec![1.0, 2.0, 4.0]);
                (Some(d), Some(lengths))
            }
            _ => (None, None),
        };

        let (grid, continuum_disorder) = match kind {
            ScenarioKind::ContinuumLinear => (
                Some(self.grid.unwrap_or(GridSpec::new(256, 32.0, 1.0)?)),
                Some(self.continuum_disorder.unwrap_or(ContinuumDisorder::LinearForce { sigma: 1.0 })),
            ),
            ScenarioKind::ContinuumHarmonic => (
                Some(self.grid.unwrap_or(GridSpec::new(256, 20.0, 1.0)?)),
                Some(
                    self.continuum_disorder
                        .unwrap_or(ContinuumDisorder::HarmonicCenter { omega: 1.0, sigma: 0.5 }),
                ),
            ),
            _ => (None, None),
        };

        let initial_state = self.initial_state.clone().unwrap_or(match kind {
            ScenarioKind::Compare | ScenarioKind::CorrelationSweep => InitialState::Gaussian {
                center: mid,
                width: 4.0,
                momentum: 0.0,
            },
            ScenarioKind::DoubleSlit => InitialState::TwoPackets {
                center: mid,
                separation: 24.0,
                width: 3.0,
                phase: 0.0,
            },
            ScenarioKind::ContinuumLinear => InitialState::Gaussian {
                center: 0.0,
                width: 1.0,
                momentum: 0.0,
            },
            ScenarioKind::ContinuumHarmonic => InitialState::Coherent { center: 0.0 },
        });

        let times = match &self.times {
            Some(t) => t.clone(),
            None => match kind {
                ScenarioKind::Compare => TimeGrid::uniform(0.0, 2.0, 0.02)?,
                ScenarioKind::CorrelationSweep => TimeGrid::uniform(0.0, 1.0, 0.02)?,
                ScenarioKind::DoubleSlit => TimeGrid::new(vec![0.0, 0.2, 0.4, 0.8])?,
                ScenarioKind::ContinuumLinear => TimeGrid::new(vec![0.0, 0.25, 0.5, 0.75, 1.0])?,
                ScenarioKind::ContinuumHarmonic => {
                    let omega = match continuum_disorder {
                        Some(ContinuumDisorder::HarmonicCenter { omega, .. }) => omega,
                        _ => 1.0,
                    };
                    let period = 2.0 * std::f64::consts::PI / omega;
                    TimeGrid::new((0..=64).map(|i| period * i as f64 / 64.0).collect())?
                }
            },
        };

        let snapshot_times = match &self.snapshot_times {
            Some(s) => s.clone(),
            None => {
                let wanted: Vec<f64> = match kind {
                    ScenarioKind::Compare => vec![0.0, 0.2, 0.5, 1.0, 2.0],
                    ScenarioKind::CorrelationSweep => vec![0.0, 0.5, 1.0],
                    ScenarioKind::ContinuumHarmonic => vec![0.0, times.last() / 2.0, times.last()],
                    _ => times.times().to_vec(),
                };
                wanted
                    .into_iter()
                    .filter_map(|t| times.index_of(t, 1e-9).map(|i| times.times()[i]))
                    .collect()
            }
        };

        let separations = match kind {
            ScenarioKind::ContinuumLinear => Some(self.separations.clone().unwrap_or_else(|| vec![0.5, 1.0, 1.5])),
            _ => None,
        };

        let k_realizations = self.k_realizations.unwrap_or(match kind {
            ScenarioKind::Compare => 200,
            ScenarioKind::DoubleSlit | ScenarioKind::CorrelationSweep => 100,
            ScenarioKind::ContinuumLinear => 4096,
            ScenarioKind::ContinuumHarmonic => 64,
        });

        Ok(ScenarioConfig {
            scenario: kind,
            master_seed: self.master_seed,
            k_realizations,
            lattice,
            disorder,
            correlation_lengths,
            grid,
            continuum_disorder,
            initial_state,
            times,
            snapshot_times,
            separations,
            solver,
            output_dir: self.output_dir.clone(),
        })
    }
}

impl From<&ScenarioConfig> for ScenarioInput {
    fn from(c: &ScenarioConfig) -> Self {
        let s = &c.solver;
        Self {
            scenario: Some(c.scenario),
            master_seed: c.master_seed,
            k_realizations: Some(c.k_realizations),
            lattice: c.lattice,
            disorder: c.disorder.clone(),
            correlation_lengths: c.correlation_lengths.clone(),
            grid: c.grid,
            continuum_disorder: c.continuum_disorder,
            initial_state: Some(c.initial_state.clone()),
            times: Some(c.times.clone()),
            snapshot_times: Some(c.snapshot_times.clone()),
            separations: c.separations.clone(),
            solver: Some(SolverInput {
                step: Some(s.step),
                tmax_threshold: Some(s.tmax_threshold),
                ratio_floor: Some(s.ratio_floor),
                convergence_check: Some(s.convergence_check),
                edge_margin: Some(s.edge_margin),
                q_points: Some(s.q_points),
                include_kinetic: Some(s.include_kinetic),
            }),
            output_dir: c.output_dir.clone(),
        }
    }
}

/// Result of [`validate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
}

impl Diagnostics {
    pub fn is_empty(&self) -> bool {
        self.warnings.is_empty() && self.errors.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        !self.errors.is_empty()
    }
}

/// Static checks that do not run any propagation.
pub fn validate(config: &ScenarioConfig) -> Diagnostics {
    let mut d = Diagnostics::default();
    if config.master_seed.is_none() {
        d.errors.push("master_seed is missing".into());
    }
    if config.k_realizations < 2 {
        d.errors.push(format!("k_realizations must be >= 2, got {}", config.k_realizations));
    }
    for t in &config.snapshot_times {
        if config.times.index_of(*t, 1e-9).is_none() {
            d.errors.push(format!("snapshot time {t} is not on the time grid"));
        }
    }
    let s = &config.solver;
    if !(s.step > 0.0) {
        d.errors.push(format!("solver step must be positive, got {}", s.step));
    } else if config.scenario.is_lattice() && s.step > 0.01 {
        d.warnings.push(format!("master-equation step {} exceeds 0.01", s.step));
    }
    if !(s.tmax_threshold > 0.0) {
        d.errors.push("tmax_threshold must be positive".into());
    }
    if !(s.ratio_floor > 0.0) {
        d.errors.push("ratio_floor must be positive".into());
    }
    if let Some(disorder) = &config.disorder {
        if let Err(e) = disorder.validate() {
            d.errors.push(e.to_string());
        }
    }
    if let Some(lengths) = &config.correlation_lengths {
        if lengths.is_empty() || lengths.iter().any(|l| !(*l > 0.0)) {
            d.errors.push("correlation lengths must be positive".into());
        }
    }
    if let Some(lattice) = &config.lattice {
        if let Err(e) = lattice.validate() {
            d.errors.push(e.to_string());
        } else {
            light_cone_checks(config, lattice, &mut d);
        }
    }
    if let Some(grid) = &config.grid {
        if let Err(e) = grid.validate() {
            d.errors.push(e.to_string());
        } else {
            aliasing_checks(config, grid, &mut d);
        }
    }
    let state = if config.scenario.is_lattice() {
        build_lattice_state(config).map(|_| ())
    } else {
        build_continuum_state(config).map(|_| ())
    };
    if let Err(e) = state {
        d.errors.push(format!("initial state: {e}"));
    }
    d
}

/// Packet extents `(lo, hi)` in sites, three widths to each side.
fn packet_extent(state: &InitialState) -> (f64, f64) {
    match *state {
        InitialState::Gaussian { center, width, .. } => (center - 3.0 * width, center + 3.0 * width),
        InitialState::TwoPackets {
            center,
            separation,
            width,
            ..
        } => (
            center - 0.5 * separation - 3.0 * width,
            center + 0.5 * separation + 3.0 * width,
        ),
        InitialState::Coherent { center } => (center, center),
    }
}

fn light_cone_checks(config: &ScenarioConfig, lattice: &LatticeSpec, d: &mut Diagnostics) {
    // Group speed 2J sites per unit time, doubled for safety.
    let reach = 2.0 * (2.0 * lattice.hopping * config.times.last());
    let (lo, hi) = packet_extent(&config.initial_state);
    let margin = config.solver.edge_margin as f64;
    let last = (lattice.n_sites - 1) as f64;
    if lo - reach < margin || hi + reach > last - margin {
        d.warnings.push(format!(
            "light cone: packet span [{lo:.1}, {hi:.1}] plus ballistic reach {reach:.1} leaves the \
             {n}-site lattice interior (edge margin {margin})",
            n = lattice.n_sites
        ));
    }
}

fn aliasing_checks(config: &ScenarioConfig, grid: &GridSpec, d: &mut Diagnostics) {
    let t = config.times.last();
    let (width, p0, center) = match config.initial_state {
        InitialState::Gaussian { width, momentum, center } => (width, momentum, center),
        InitialState::Coherent { center } => {
            let omega = match config.continuum_disorder {
                Some(ContinuumDisorder::HarmonicCenter { omega, .. }) => omega,
                _ => 1.0,
            };
            ((0.5 / (grid.mass * omega)).sqrt(), 0.0, center)
        }
        InitialState::TwoPackets { .. } => {
            d.errors.push("two_packets initial state is lattice-only".into());
            return;
        }
    };
    if 16.0 * width > grid.extent {
        d.errors.push(format!("grid extent {} holds fewer than 16 packet widths", grid.extent));
    }
    let kick = match config.continuum_disorder {
        Some(ContinuumDisorder::LinearForce { sigma }) => 5.0 * sigma * t,
        Some(ContinuumDisorder::HarmonicCenter { omega, .. }) => grid.mass * omega * grid.extent / 8.0,
        None => 0.0,
    };
    let k_max = p0.abs() + 5.0 / (2.0 * width) + kick;
    if k_max > 0.9 * grid.nyquist() {
        d.warnings.push(format!(
            "aliasing risk: momenta up to {k_max:.2} against Nyquist {:.2}",
            grid.nyquist()
        ));
    }
    if center.abs() + 6.0 * width > 0.5 * grid.extent {
        d.warnings.push("initial packet is close to the periodic boundary".into());
    }
}

fn build_lattice_state(config: &ScenarioConfig) -> Result<StateVector> {
    let lattice = config
        .lattice
        .as_ref()
        .ok_or_else(|| Error::Config("lattice scenario without lattice".into()))?;
    match config.initial_state {
        InitialState::Gaussian { center, width, momentum } => gaussian_wavepacket(lattice, center, width, momentum),
        InitialState::TwoPackets {
            center,
            separation,
            width,
            phase,
        } => {
            let a = gaussian_wavepacket(lattice, center - 0.5 * separation, width, 0.0)?;
            let b = gaussian_wavepacket(lattice, center + 0.5 * separation, width, 0.0)?;
            superposition_state(&a, &b, phase)
        }
        InitialState::Coherent { .. } => Err(Error::Config("coherent initial state is continuum-only".into())),
    }
}

fn build_continuum_state(config: &ScenarioConfig) -> Result<ContinuumState> {
    let grid = config
        .grid
        .ok_or_else(|| Error::Config("continuum scenario without grid".into()))?;
    match config.initial_state {
        InitialState::Gaussian { center, width, momentum } => ContinuumState::gaussian(grid, center, width, momentum),
        InitialState::Coherent { center } => match config.continuum_disorder {
            Some(ContinuumDisorder::HarmonicCenter { omega, .. }) => ContinuumState::coherent(grid, omega, center),
            _ => Err(Error::Config("coherent initial state needs harmonic_center disorder".into())),
        },
        InitialState::TwoPackets { .. } => Err(Error::Config("two_packets initial state is lattice-only".into())),
    }
}

/// Failure of one pipeline, recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineError {
    pub pipeline: String,
    pub message: String,
    pub config_error: bool,
}

/// What [`run`] wrote.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
    pub errors: Vec<PipelineError>,
    pub report: Value,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.errors.is_empty()
    }
}

struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
}

impl Bundle {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir.join("density"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_density(&mut self, prefix: &str, t: f64, rho: &DensityMatrix) -> Result<()> {
        self.write(&format!("density/{prefix}_t{t:.4}.csv"), &density_csv(rho))
    }
}

/// Density matrix as `j,jp,re,im` rows, row-major, skipping tiny elements.
pub fn density_csv(rho: &DensityMatrix) -> String {
    let mut out = String::from("j,jp,re,im\n");
    let n = rho.dim();
    for j in 0..n {
        for k in 0..n {
            let z = rho.get(j, k);
            if z.norm() > DENSITY_WRITE_THRESHOLD {
                let _ = writeln!(out, "{j},{k},{},{}", z.re, z.im);
            }
        }
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into())
}

fn purity_csv(times: &[f64], p_ens: &[f64], p_ref: Option<&[f64]>) -> String {
    let mut out = String::from("t,p_ens,p_me,ratio\n");
    for (i, t) in times.iter().enumerate() {
        let me = p_ref.map(|p| p[i]);
        let _ = writeln!(
            out,
            "{t},{},{},{}",
            p_ens[i],
            fmt_opt(me),
            fmt_opt(me.map(|m| m / p_ens[i]))
        );
    }
    out
}

fn momentum_rows(out: &mut String, t: f64, q: &[f64], ens: &[f64], me: Option<&[f64]>) {
    for (i, qi) in q.iter().enumerate() {
        let _ = writeln!(out, "{t},{qi},{},{}", ens[i], fmt_opt(me.map(|m| m[i])));
    }
}

fn json_f64(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn stats_json(s: &RatioStats) -> Value {
    json!({
        "unmasked": s.unmasked,
        "masked": s.masked,
        "mean": json_f64(s.mean),
        "std_dev": json_f64(s.std_dev),
        "max_abs_deviation": json_f64(s.max_abs_deviation),
    })
}

fn time_key(t: f64) -> String {
    format!("{t}")
}

fn config_error(e: &Error) -> bool {
    e.is_config_error()
}

/// Run `config`, writing the bundle to `out` (or the configured directory).
///
/// Pipeline failures are recorded in the manifest and the returned outcome;
/// only I/O failures and invalid configs abort with `Err`.
pub fn run(config: &ScenarioConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let diag = validate(config);
    if diag.has_errors() {
        return Err(Error::Config(diag.errors.join("; ")));
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory given".into()))?;
    let started = Instant::now();
    let started_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut bundle = Bundle::create(&dir)?;
    let mut errors = Vec::new();
    let report = match config.scenario {
        ScenarioKind::Compare | ScenarioKind::DoubleSlit => run_lattice(config, &mut bundle, &mut errors)?,
        ScenarioKind::CorrelationSweep => run_sweep(config, &mut bundle, &mut errors)?,
        ScenarioKind::ContinuumLinear => run_linear(config, &mut bundle, &mut errors)?,
        ScenarioKind::ContinuumHarmonic => run_harmonic(config, &mut bundle, &mut errors)?,
    };
    bundle.write("report.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    let manifest = json!({
        "bundle_version": 1,
        "code_version": env!("CARGO_PKG_VERSION"),
        "scenario": config.scenario.name(),
        "config": config,
        "seeds": {
            "master_seed": config.master_seed,
            "realization_indices": [0, config.k_realizations],
        },
        "diagnostics": diag,
        "wall_clock": {
            "started_unix": started_at,
            "elapsed_seconds": started.elapsed().as_secs_f64(),
        },
        "files": bundle.files,
        "errors": errors,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunOutcome {
        output_dir: dir,
        files: bundle.files,
        errors,
        report,
    })
}

fn record<T>(errors: &mut Vec<PipelineError>, pipeline: &str, r: Result<T>) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            errors.push(PipelineError {
                pipeline: pipeline.to_string(),
                message: e.to_string(),
                config_error: config_error(&e),
            });
            None
        }
    }
}

/// Ensemble and master-equation runs for one disorder model.
struct LatticeRuns {
    ensemble: Option<EnsembleResult>,
    me: Option<MePropagation>,
    step_delta: Option<f64>,
}

fn lattice_runs(
    config: &ScenarioConfig,
    disorder: &DisorderSpec,
    psi0: &StateVector,
    errors: &mut Vec<PipelineError>,
    label: &str,
) -> LatticeRuns {
    let lattice = config.lattice.expect("validated lattice scenario");
    let seed = config.master_seed.expect("validated seed");
    let rho0 = DensityMatrix::from_pure(psi0);
    let (ens, me) = rayon::join(
        || ensemble_average(&lattice, disorder, psi0, &config.times, config.k_realizations, seed),
        || -> Result<(MePropagation, Option<f64>)> {
            let eq = MasterEquation::new(&lattice, disorder)?;
            let prop = eq.propagate(&rho0, &config.times, config.solver.step)?;
            let delta = if config.solver.convergence_check {
                let delta = eq.step_halving_delta(&rho0, &config.times, config.solver.step)?;
                if delta > CONVERGENCE_TOLERANCE {
                    return Err(Error::Convergence {
                        delta,
                        tolerance: CONVERGENCE_TOLERANCE,
                    });
                }
                Some(delta)
            } else {
                None
            };
            Ok((prop, delta))
        },
    );
    let ensemble = record(errors, &format!("{label}exact_ensemble"), ens);
    let (me, step_delta) = match record(errors, &format!("{label}master_equation"), me) {
        Some((p, d)) => (Some(p), d),
        None => (None, None),
    };
    LatticeRuns {
        ensemble,
        me,
        step_delta,
    }
}

/// Scalar purity/t_max summary shared by the lattice scenarios.
fn purity_summary(config: &ScenarioConfig, runs: &LatticeRuns) -> Result<BTreeMap<String, Value>> {
    let mut r = BTreeMap::new();
    let times = config.times.times();
    if let Some(ens) = &runs.ensemble {
        let p = ens.purities();
        for t in [0.2, 0.5, 1.0, 2.0] {
            if let Some(i) = config.times.index_of(t, 1e-9) {
                r.insert(format!("purity_loss_at_{t}"), json!(1.0 - p[i]));
            }
        }
        r.insert("p_ens_final".into(), json!(p[p.len() - 1]));
        r.insert(
            "purity_stderr_max".into(),
            json!(ens.purity_stderr.iter().copied().fold(0.0, f64::max)),
        );
        let leak = ens
            .states
            .iter()
            .map(|s| edge_leakage(s, config.solver.edge_margin))
            .collect::<Result<Vec<_>>>()?;
        r.insert("edge_leakage_max".into(), json!(leak.iter().copied().fold(0.0, f64::max)));
    }
    if let Some(me) = &runs.me {
        let w = me.worst_invariants();
        r.insert(
            "me_invariants".into(),
            json!({
                "trace_error_max": w.trace_error,
                "hermiticity_defect_max": w.hermiticity_defect,
                "min_eigenvalue_min": w.min_eigenvalue,
            }),
        );
        r.insert("step_halving_delta".into(), runs.step_delta.map(json_f64).unwrap_or(Value::Null));
    }
    if let (Some(ens), Some(me)) = (&runs.ensemble, &runs.me) {
        let p_ens = ens.purities();
        let p_me = me.purities();
        let tmax = tmax_estimate(times, &p_me, &p_ens, config.solver.tmax_threshold)?;
        r.insert("t_max".into(), json_f64(tmax));
        r.insert("tmax_threshold".into(), json!(config.solver.tmax_threshold));
        if tmax.is_finite() {
            // Ensemble purity loss at t_max, interpolated on the grid.
            let i = times.iter().position(|&t| t >= tmax).unwrap_or(times.len() - 1).max(1);
            let f = ((tmax - times[i - 1]) / (times[i] - times[i - 1])).clamp(0.0, 1.0);
            let p = p_ens[i - 1] + f * (p_ens[i] - p_ens[i - 1]);
            r.insert("purity_loss_at_tmax".into(), json!(1.0 - p));
        }
        let mut ratio_stats = BTreeMap::new();
        for &t in &config.snapshot_times {
            let i = config.times.index_of(t, 1e-9).expect("validated snapshot");
            let map = coherence_ratio_map_relative(&ens.states[i], &me.states[i], config.solver.ratio_floor)?;
            ratio_stats.insert(time_key(t), stats_json(&map.stats()));
        }
        r.insert("ratio_map_stats".into(), json!(ratio_stats));
    }
    Ok(r)
}

fn run_lattice(config: &ScenarioConfig, bundle: &mut Bundle, errors: &mut Vec<PipelineError>) -> Result<Value> {
    let disorder = config.disorder.clone().expect("resolved disorder");
    let psi0 = build_lattice_state(config)?;
    let runs = lattice_runs(config, &disorder, &psi0, errors, "");
    let times = config.times.times();
    let n = psi0.dim();

    let p_ens: Option<Vec<f64>> = runs.ensemble.as_ref().map(|e| e.purities());
    let p_me: Option<Vec<f64>> = runs.me.as_ref().map(|m| m.purities());
    if let Some(p) = &p_ens {
        bundle.write("purity.csv", &purity_csv(times, p, p_me.as_deref()))?;
    }

    let q = momentum_grid(n);
    let mut momentum = String::from("t,q,n_ens,n_me\n");
    let mut spectra = Vec::new();
    for &t in &config.snapshot_times {
        let i = config.times.index_of(t, 1e-9).expect("validated snapshot");
        let n_ens = runs.ensemble.as_ref().map(|e| momentum_distribution(&e.states[i]));
        let n_me = runs.me.as_ref().map(|m| momentum_distribution(&m.states[i]));
        if let Some(ne) = &n_ens {
            momentum_rows(&mut momentum, t, &q, ne, n_me.as_deref());
        }
        if let Some(e) = &runs.ensemble {
            bundle.write_density("ens", t, &e.states[i])?;
        }
        if let Some(m) = &runs.me {
            bundle.write_density("me", t, &m.states[i])?;
        }
        spectra.push((t, n_ens, n_me));
    }
    if runs.ensemble.is_some() {
        bundle.write("momentum.csv", &momentum)?;
    }

    let mut report = purity_summary(config, &runs)?;
    report.insert("scenario".into(), json!(config.scenario.name()));
    report.insert("k_realizations".into(), json!(config.k_realizations));
    if let Some(p) = &p_ens {
        if let (Some(i), Some(j)) = (config.times.index_of(1.0, 1e-9), config.times.index_of(2.0, 1e-9)) {
            report.insert("plateau".into(), json!({ "p_at_1": p[i], "p_at_2": p[j], "difference": p[j] - p[i] }));
        }
    }
    if let InitialState::TwoPackets { separation, .. } = config.initial_state {
        let period = 2.0 * std::f64::consts::PI / separation;
        let window = QWindow::around_zero(period);
        let mut series = Vec::new();
        for (t, n_ens, n_me) in &spectra {
            let v_ens = n_ens.as_ref().map(|v| visibility(&q, v, window)).transpose();
            let v_me = n_me.as_ref().map(|v| visibility(&q, v, window)).transpose();
            let fringe = n_ens.as_ref().and_then(|v| fringe_period(&q, v, QWindow::around_zero(2.0 * period)));
            series.push(json!({
                "t": t,
                "visibility_ens": record(errors, "visibility", v_ens).flatten().map(json_f64),
                "visibility_me": record(errors, "visibility", v_me).flatten().map(json_f64),
                "fringe_period_ens": fringe.map(json_f64),
            }));
        }
        report.insert("visibility_window".into(), json!({ "lo": window.lo, "hi": window.hi }));
        report.insert("expected_fringe_period".into(), json!(period));
        report.insert("momentum_bin".into(), json!(2.0 * std::f64::consts::PI / n as f64));
        report.insert("visibility_series".into(), json!(series));
    }
    Ok(json!(report))
}

fn run_sweep(config: &ScenarioConfig, bundle: &mut Bundle, errors: &mut Vec<PipelineError>) -> Result<Value> {
    let xi = match config.disorder {
        Some(DisorderSpec::GaussianCorrelated { xi, .. }) => xi,
        _ => return Err(Error::Config("correlation_sweep needs gaussian_correlated disorder".into())),
    };
    let lattice = config.lattice.expect("resolved lattice");
    let psi0 = build_lattice_state(config)?;
    let lengths = config.correlation_lengths.clone().expect("resolved lengths");
    let n = lattice.n_sites;
    let mut members = Vec::new();
    let mut localization = String::from("L,dj,F\n");
    let mut transfer = String::from("L,q,G\n");
    for &l in &lengths {
        let spec = DisorderSpec::gaussian(xi, l);
        let label = format!("L={l}/");
        if let Some(profile) = record(errors, &format!("{label}localization"), LocalizationProfile::compute(&spec, n, config.solver.q_points)) {
            for (dj, f) in profile.separations.iter().zip(&profile.f) {
                let _ = writeln!(localization, "{l},{dj},{f}");
            }
            for (q, g) in profile.q_grid.iter().zip(&profile.g) {
                let _ = writeln!(transfer, "{l},{q},{g}");
            }
        }
        let runs = lattice_runs(config, &spec, &psi0, errors, &label);
        if let Some(e) = &runs.ensemble {
            let p_me = runs.me.as_ref().map(|m| m.purities());
            bundle.write(&format!("purity_L{l}.csv"), &purity_csv(config.times.times(), &e.purities(), p_me.as_deref()))?;
        }
        for &t in &config.snapshot_times {
            let i = config.times.index_of(t, 1e-9).expect("validated snapshot");
            if let Some(e) = &runs.ensemble {
                bundle.write_density(&format!("ens_L{l}"), t, &e.states[i])?;
            }
            if let Some(m) = &runs.me {
                bundle.write_density(&format!("me_L{l}"), t, &m.states[i])?;
            }
        }
        let mut summary = purity_summary(config, &runs)?;
        summary.insert("L".into(), json!(l));
        members.push(json!(summary));
    }
    bundle.write("localization.csv", &localization)?;
    bundle.write("momentum_transfer.csv", &transfer)?;
    Ok(json!({
        "scenario": config.scenario.name(),
        "k_realizations": config.k_realizations,
        "xi": xi,
        "members": members,
    }))
}

fn continuum_momentum(rho: &DensityMatrix, dx: f64) -> (Vec<f64>, Vec<f64>) {
    let q = momentum_grid(rho.dim());
    (q.iter().map(|v| v / dx).collect(), momentum_distribution(rho))
}

fn run_linear(config: &ScenarioConfig, bundle: &mut Bundle, errors: &mut Vec<PipelineError>) -> Result<Value> {
    let grid = config.grid.expect("resolved grid");
    let sigma = config.continuum_disorder.expect("resolved disorder").sigma();
    let psi0 = build_continuum_state(config)?;
    let times = config.times.times();
    let seed = config.master_seed.expect("validated seed");
    let seps = config.separations.clone().expect("resolved separations");
    let Some(reports) = record(
        errors,
        "continuum_linear",
        linear_dephasing_check(
            grid,
            sigma,
            &psi0,
            times,
            config.k_realizations,
            seed,
            config.solver.include_kinetic,
            config.solver.step,
        ),
    ) else {
        return Ok(json!({ "scenario": config.scenario.name() }));
    };

    let p_ens: Vec<f64> = reports.iter().map(|r| purity(r.ensemble.as_ref().expect("kept"))).collect();
    // Closed-form reference: ρ0(x,x') exp(-σ²t²(x-x')²/2) applied to the ε = 0 state.
    let p_ref: Vec<f64> = reports
        .iter()
        .map(|r| {
            let reference = r.reference.as_ref().expect("kept");
            let n = grid.n_points;
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let d = (i as f64 - j as f64) * grid.dx();
                    total += reference.get(i, j).norm_sqr() * (-(sigma * r.time * d).powi(2)).exp();
                }
            }
            total
        })
        .collect();
    bundle.write("purity.csv", &purity_csv(times, &p_ens, Some(&p_ref)))?;

    let mut coherence = String::from("t,dx,ratio,predicted\n");
    let mut fit_samples = Vec::new();
    let mut series = Vec::new();
    for r in &reports {
        for &s in &seps {
            if let Some(ratio) = record(errors, "coherence_ratio", r.coherence_ratio(s)) {
                let pred = r.predicted_ratio(s);
                let _ = writeln!(coherence, "{},{s},{ratio},{pred}", r.time);
                if r.time > 0.0 && ratio < 1.0 {
                    fit_samples.push((r.time, s, ratio));
                }
                series.push(json!({ "t": r.time, "dx": s, "ratio": ratio, "predicted": pred }));
            }
        }
    }
    bundle.write("coherence.csv", &coherence)?;

    let mut momentum = String::from("t,q,n_ens,n_me\n");
    for &t in &config.snapshot_times {
        let i = config.times.index_of(t, 1e-9).expect("validated snapshot");
        let r = &reports[i];
        let ens = r.ensemble.as_ref().expect("kept");
        let (k, n_ens) = continuum_momentum(ens, grid.dx());
        let (_, n_ref) = continuum_momentum(r.reference.as_ref().expect("kept"), grid.dx());
        momentum_rows(&mut momentum, t, &k, &n_ens, Some(&n_ref));
        bundle.write_density("ens", t, ens)?;
    }
    bundle.write("momentum.csv", &momentum)?;

    let fit = record(errors, "exponent_fit", fit_damping_exponents(&fit_samples));
    let stats: BTreeMap<String, Value> = reports
        .iter()
        .map(|r| (time_key(r.time), stats_json(&r.ratio_map.stats())))
        .collect();
    Ok(json!({
        "scenario": config.scenario.name(),
        "k_realizations": config.k_realizations,
        "sigma": sigma,
        "include_kinetic": config.solver.include_kinetic,
        "force_variance": reports[0].force_variance,
        "coherence_series": series,
        "exponent_fit": fit,
        "ratio_map_stats": stats,
        "monte_carlo_tolerance": 3.0 / (config.k_realizations as f64).sqrt(),
    }))
}

fn run_harmonic(config: &ScenarioConfig, bundle: &mut Bundle, errors: &mut Vec<PipelineError>) -> Result<Value> {
    let grid = config.grid.expect("resolved grid");
    let (omega, sigma) = match config.continuum_disorder {
        Some(ContinuumDisorder::HarmonicCenter { omega, sigma }) => (omega, sigma),
        _ => return Err(Error::Config("continuum_harmonic needs harmonic_center disorder".into())),
    };
    let psi0 = build_continuum_state(config)?;
    let times = config.times.times();
    let seed = config.master_seed.expect("validated seed");
    let Some(rep) = record(
        errors,
        "continuum_harmonic",
        harmonic_revival_check(grid, omega, sigma, &psi0, times, config.k_realizations, seed, config.solver.step),
    ) else {
        return Ok(json!({ "scenario": config.scenario.name() }));
    };
    bundle.write("purity.csv", &purity_csv(times, &rep.purity, Some(&rep.infinite_ensemble)))?;
    let mut oracle = String::from("t,p_ens,p_sample_oracle,stderr\n");
    for i in 0..times.len() {
        let _ = writeln!(oracle, "{},{},{},{}", times[i], rep.purity[i], rep.sample_oracle[i], rep.purity_stderr[i]);
    }
    bundle.write("purity_oracle.csv", &oracle)?;
    if let Some(rho) = &rep.final_ensemble {
        let (k, n) = continuum_momentum(rho, grid.dx());
        let mut momentum = String::from("t,q,n_ens,n_me\n");
        momentum_rows(&mut momentum, times[times.len() - 1], &k, &n, None);
        bundle.write("momentum.csv", &momentum)?;
        bundle.write_density("ens", times[times.len() - 1], rho)?;
    }
    let max_oracle_dev = rep
        .purity
        .iter()
        .zip(&rep.sample_oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let t_fit = 0.1 / omega;
    Ok(json!({
        "scenario": config.scenario.name(),
        "k_realizations": config.k_realizations,
        "omega": omega,
        "sigma": sigma,
        "period": rep.period,
        "purity_at_period": rep.purity[rep.purity.len() - 1],
        "interior_minimum": rep.interior_minimum(),
        "max_deviation_from_sample_oracle": max_oracle_dev,
        "center_variance": rep.center_variance,
        "short_time_coefficient": rep.short_time_coefficient(t_fit).map(json_f64),
        "expected_short_time_coefficient": rep.expected_short_time_coefficient(grid.mass),
    }))
}

/// Load a config file (plain or a previous bundle's manifest) and resolve it.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    ScenarioInput::from_path(path)?.resolve()
}
