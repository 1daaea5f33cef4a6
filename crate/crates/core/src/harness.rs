//! Scenario files, experiment runners and their outputs.
//!
//! A scenario is a JSON document describing the plant, the average system
//! and gain, the switching signal, initial data, grid and controller. The
//! runners here are pure with respect to the filesystem except for
//! [`Scenario::from_path`]; the CLI owns output files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{certify, decay_fit, lyapunov_along, mismatch_bound_along, Certificate, DecayFit};
use crate::error::Error;
use crate::matops::{matrix_from_rows, Matrix, Vector, NORM_LABEL};
use crate::plant::{simulate, Controller, Grid, Mode, SwitchedPlant, Trajectory, ZeroController};
use crate::predictor::{
    average_controller, exact_oracle_controller, mean_system, single_mode_feedback, AverageSystem, PredictionContext,
};
use crate::switching::{SignalRecord, SwitchingSignal};

/// Harness failure, classified by process exit code.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) | Self::Config(_) => 2,
            Self::Precondition(_) => 3,
            Self::Runtime(_) => 4,
        }
    }

    fn config(e: Error) -> Self {
        Self::classify(e, Self::Config)
    }

    fn runtime(e: Error) -> Self {
        Self::classify(e, Self::Runtime)
    }

    fn classify(e: Error, other: fn(String) -> Self) -> Self {
        match e {
            Error::NotControllable => Self::Precondition(format!("(Ā, B̄) controllable: {e}")),
            Error::NotHurwitz { .. } => Self::Precondition(format!("Ā + B̄K̄ Hurwitz: {e}")),
            Error::LyapunovInfeasible { .. } => Self::Precondition(e.to_string()),
            e => other(e.to_string()),
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageRule {
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AverageSpec {
    Rule(AverageRule),
    Explicit { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

impl Default for AverageSpec {
    fn default() -> Self {
        Self::Rule(AverageRule::Mean)
    }
}

/// A pole as a real number or a `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoleSpec {
    Real(f64),
    Complex([f64; 2]),
}

impl PoleSpec {
    fn value(self) -> Complex<f64> {
        match self {
            Self::Real(r) => Complex::new(r, 0.0),
            Self::Complex([re, im]) => Complex::new(re, im),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSpec {
    Poles(Vec<PoleSpec>),
    K(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    Explicit {
        initial_mode: usize,
        #[serde(default)]
        switch_times: Vec<f64>,
        #[serde(default)]
        modes: Vec<usize>,
    },
    Random {
        seed: u64,
        #[serde(default = "default_extra_dwell")]
        mean_extra_dwell: f64,
    },
    Periodic {
        period: f64,
    },
}

fn default_extra_dwell() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputRule {
    Zero,
}

/// Initial input on `[−D, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputInitSpec {
    Rule(InputRule),
    Constant { constant: f64 },
    /// Values equally spaced over `[−D, 0]`, linearly interpolated; the last
    /// one is the limit at `0⁻`.
    Samples { samples: Vec<f64> },
}

impl Default for InputInitSpec {
    fn default() -> Self {
        Self::Rule(InputRule::Zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    SamplesPerDelay(usize),
    Step(f64),
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::SamplesPerDelay(Grid::DEFAULT_SAMPLES_PER_DELAY)
    }
}

/// Which law closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ControllerKind {
    #[default]
    Average,
    /// Predictor built from mode `i` alone (0-based).
    SingleMode(usize),
    ExactOracle,
    None,
}

impl FromStr for ControllerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> HarnessResult<Self> {
        let s = s.trim();
        match s {
            "average" => Ok(Self::Average),
            "exact_oracle" => Ok(Self::ExactOracle),
            "none" => Ok(Self::None),
            _ => s
                .strip_prefix("single_mode:")
                .and_then(|i| i.parse().ok())
                .map(Self::SingleMode)
                .ok_or_else(|| {
                    HarnessError::Config(format!(
                        "unknown controller {s:?}; expected average, single_mode:<i>, exact_oracle or none"
                    ))
                }),
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Average => write!(f, "average"),
            Self::SingleMode(i) => write!(f, "single_mode:{i}"),
            Self::ExactOracle => write!(f, "exact_oracle"),
            Self::None => write!(f, "none"),
        }
    }
}

impl Serialize for ControllerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ControllerKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSpec {
    pub lyapunov: bool,
    pub w: bool,
    pub bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub modes: Vec<ModeSpec>,
    pub delay: f64,
    pub dwell_time: f64,
    #[serde(default)]
    pub average: AverageSpec,
    pub gain: GainSpec,
    pub signal: SignalSpec,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub u_init: InputInitSpec,
    #[serde(default)]
    pub grid: GridSpec,
    pub horizon: f64,
    #[serde(default)]
    pub controller: ControllerKind,
    /// Lyapunov weight; identity when absent.
    #[serde(default)]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    /// Scales every `(A_i − Ā, B_i − B̄)`; 1 leaves the plant unchanged.
    #[serde(default = "one")]
    pub epsilon_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Scenario {
    pub fn from_json_str(text: &str) -> HarnessResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            HarnessError::Parse(format!(
                "line {} column {}, field `{path}`: {inner}",
                inner.line(),
                inner.column()
            ))
        })
    }

    pub fn from_path(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            HarnessError::Parse(m) => HarnessError::Parse(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Checks and assembles every object the runners need.
    pub fn build(&self) -> HarnessResult<Setup> {
        let cfg = HarnessError::config;
        if self.modes.is_empty() {
            return Err(HarnessError::Config("scenario needs at least one mode".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(HarnessError::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.epsilon_scale >= 0.0 && self.epsilon_scale.is_finite()) {
            return Err(HarnessError::Config("epsilon_scale must be finite and nonnegative".into()));
        }
        let raw: Vec<Mode> = self
            .modes
            .iter()
            .map(|m| Mode::new(matrix_from_rows(&m.a)?, matrix_from_rows(&m.b)?))
            .collect::<Result<_, _>>()
            .map_err(cfg)?;
        let raw_plant = SwitchedPlant::new(raw, self.delay).map_err(cfg)?;
        let (a_bar, b_bar) = match &self.average {
            AverageSpec::Rule(AverageRule::Mean) => mean_system(&raw_plant),
            AverageSpec::Explicit { a, b } => (
                matrix_from_rows(a).map_err(cfg)?,
                matrix_from_rows(b).map_err(cfg)?,
            ),
        };
        let avg = match &self.gain {
            GainSpec::Poles(p) => {
                let poles: Vec<Complex<f64>> = p.iter().map(|p| p.value()).collect();
                AverageSystem::from_poles(a_bar, b_bar, &poles)
            }
            GainSpec::K(k) => AverageSystem::new(a_bar, b_bar, Matrix::from_row_slice(1, k.len(), k)),
        }
        .map_err(cfg)?;
        let plant = scale_deviation(&raw_plant, &avg, self.epsilon_scale).map_err(cfg)?;

        let grid = match self.grid {
            GridSpec::SamplesPerDelay(n) => Grid::new(self.delay, n),
            GridSpec::Step(h) => Grid::from_step(self.delay, h),
        }
        .map_err(cfg)?;
        let h = grid.step();
        // horizon snapped to the grid
        let horizon = (self.horizon / h).round() * h;
        let coverage = horizon + self.delay;
        let signal = match &self.signal {
            SignalSpec::Explicit {
                initial_mode,
                switch_times,
                modes,
            } => SwitchingSignal::new(*initial_mode, switch_times, modes, self.dwell_time, coverage, false),
            SignalSpec::Random { seed, mean_extra_dwell } => SwitchingSignal::generate_random(
                plant.num_modes(),
                self.dwell_time,
                coverage,
                *seed,
                *mean_extra_dwell,
            ),
            SignalSpec::Periodic { period } => {
                SwitchingSignal::periodic(plant.num_modes(), *period, self.dwell_time, coverage)
            }
        }
        .map_err(cfg)?;
        signal.validate_for(plant.num_modes()).map_err(cfg)?;

        if self.x0.len() != plant.state_dim() {
            return Err(HarnessError::Config(format!(
                "x0 has {} entries, plant state dimension is {}",
                self.x0.len(),
                plant.state_dim()
            )));
        }
        let q = self
            .q
            .as_ref()
            .map(|q| matrix_from_rows(q))
            .transpose()
            .map_err(cfg)?;
        if let ControllerKind::SingleMode(i) = self.controller {
            plant.mode(i).map_err(cfg)?;
        }
        let u_init = match &self.u_init {
            InputInitSpec::Rule(InputRule::Zero) => InitialInput::Constant(0.0),
            InputInitSpec::Constant { constant } => InitialInput::Constant(*constant),
            InputInitSpec::Samples { samples } => {
                if samples.len() < 2 || samples.iter().any(|v| !v.is_finite()) {
                    return Err(HarnessError::Config(
                        "u_init samples need at least two finite values".into(),
                    ));
                }
                InitialInput::Samples(samples.clone())
            }
        };
        Ok(Setup {
            name: self.name.clone().unwrap_or_else(|| "scenario".into()),
            plant,
            avg,
            signal,
            grid,
            x0: Vector::from_vec(self.x0.clone()),
            u_init,
            horizon,
            controller: self.controller,
            dwell_time: self.dwell_time,
            q,
            diagnostics: self.diagnostics,
        })
    }
}

/// Moves every mode toward (or away from) the average:
/// `A_i ← Ā + s(A_i − Ā)`, `B_i ← B̄ + s(B_i − B̄)`.
pub fn scale_deviation(plant: &SwitchedPlant, avg: &AverageSystem, s: f64) -> crate::Result<SwitchedPlant> {
    if s == 1.0 {
        return Ok(plant.clone());
    }
    let modes = plant
        .modes()
        .iter()
        .map(|m| {
            Mode::new(
                &avg.a_bar + (&m.a - &avg.a_bar) * s,
                &avg.b_bar + (&m.b - &avg.b_bar) * s,
            )
        })
        .collect::<crate::Result<_>>()?;
    SwitchedPlant::new(modes, plant.delay())
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialInput {
    Constant(f64),
    Samples(Vec<f64>),
}

impl InitialInput {
    pub fn eval(&self, theta: f64, delay: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Samples(s) => {
                let pos = ((theta + delay) / delay).clamp(0.0, 1.0) * (s.len() - 1) as f64;
                let j = (pos.floor() as usize).min(s.len() - 2);
                let f = pos - j as f64;
                s[j] + f * (s[j + 1] - s[j])
            }
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Setup {
    pub name: String,
    pub plant: SwitchedPlant,
    pub avg: AverageSystem,
    pub signal: SwitchingSignal,
    pub grid: Grid,
    pub x0: Vector,
    pub u_init: InitialInput,
    pub horizon: f64,
    pub controller: ControllerKind,
    pub dwell_time: f64,
    pub q: Option<Matrix>,
    pub diagnostics: DiagnosticsSpec,
}

impl Setup {
    pub fn certificate(&self) -> HarnessResult<Certificate> {
        certify(&self.plant, &self.avg, self.dwell_time, self.q.as_ref()).map_err(HarnessError::config)
    }

    /// Closed-loop simulation under `kind`, without diagnostics.
    pub fn simulate(&self, kind: ControllerKind) -> HarnessResult<Trajectory> {
        let ctrl: Box<dyn Controller + '_> = match kind {
            ControllerKind::Average => Box::new(average_controller(&self.avg, self.grid).map_err(HarnessError::config)?),
            ControllerKind::SingleMode(i) => Box::new(
                single_mode_feedback(&self.plant, i, &self.avg.k_bar, self.grid).map_err(HarnessError::config)?,
            ),
            ControllerKind::ExactOracle => Box::new(
                exact_oracle_controller(&self.plant, &self.signal, &self.avg.k_bar, self.grid)
                    .map_err(HarnessError::config)?,
            ),
            ControllerKind::None => Box::new(ZeroController),
        };
        let d = self.plant.delay();
        let u_init = |th: f64| self.u_init.eval(th, d);
        simulate(&self.plant, &self.signal, ctrl.as_ref(), &self.x0, &u_init, self.grid, self.horizon)
            .map_err(HarnessError::runtime)
    }

    pub fn context(&self) -> HarnessResult<PredictionContext<'_>> {
        PredictionContext::new(&self.plant, &self.avg, &self.signal, self.grid).map_err(HarnessError::config)
    }
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct Summary {
    pub name: String,
    pub controller: String,
    pub epsilon: f64,
    pub epsilon_star: f64,
    pub stable: bool,
    pub xi_hat: Option<f64>,
    pub rho_hat: Option<f64>,
    pub max_bound_violation_ratio: f64,
    pub bound_violations: usize,
    pub final_state_norm: f64,
    pub peak_state_norm: f64,
    pub peak_abs_input: f64,
    pub norm_label: String,
    #[serde(rename = "Q_used")]
    pub q_used: Vec<Vec<f64>>,
    pub signal: SignalRecord,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub certificate: Certificate,
    pub summary: Summary,
}

fn peaks(tr: &Trajectory) -> (f64, f64) {
    let px = tr.states.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let pu = tr.inputs.iter().map(|u| u.abs()).fold(0.0, f64::max);
    (px, pu)
}

fn fit_or_note(tr: &Trajectory, delay: f64, notes: &mut Vec<String>) -> Option<DecayFit> {
    match decay_fit(tr, delay) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("decay fit skipped: {e}"));
            None
        }
    }
}

/// Certificate, simulation, mismatch monitoring and summary for one setup.
pub fn run_setup(setup: &Setup) -> HarnessResult<RunOutput> {
    let cert = setup.certificate()?;
    let mut tr = setup.simulate(setup.controller)?;
    let mut notes = Vec::new();
    let ctx = setup.context()?;
    let w = ctx.w_along(&tr).map_err(HarnessError::runtime)?;
    let report = mismatch_bound_along(&tr, &cert, &w).map_err(HarnessError::runtime)?;
    if setup.diagnostics.lyapunov {
        tr.diagnostics.lyapunov = Some(lyapunov_along(&tr, &cert, &w).map_err(HarnessError::runtime)?);
    }
    if setup.diagnostics.w {
        tr.diagnostics.w_abs = Some(report.w_abs.clone());
    }
    if setup.diagnostics.bound {
        tr.diagnostics.w_bound = Some(report.bound.clone());
    }
    let fit = fit_or_note(&tr, setup.plant.delay(), &mut notes);
    if !cert.stable {
        notes.push("epsilon >= epsilon_star: no stability guarantee (the condition is sufficient only)".into());
    }
    let (peak_state_norm, peak_abs_input) = peaks(&tr);
    let summary = Summary {
        name: setup.name.clone(),
        controller: setup.controller.to_string(),
        epsilon: cert.epsilon,
        epsilon_star: cert.epsilon_star,
        stable: cert.stable,
        xi_hat: fit.map(|f| f.xi_hat),
        rho_hat: fit.map(|f| f.rho_hat),
        max_bound_violation_ratio: report.max_ratio,
        bound_violations: report.violations,
        final_state_norm: tr.final_state().norm(),
        peak_state_norm,
        peak_abs_input,
        norm_label: NORM_LABEL.into(),
        q_used: cert.q.clone(),
        signal: setup.signal.to_record(),
        notes,
    };
    Ok(RunOutput {
        trajectory: tr,
        certificate: cert,
        summary,
    })
}

pub fn run_scenario(scenario: &Scenario) -> HarnessResult<RunOutput> {
    run_setup(&scenario.build()?)
}

/// Certificate only; no simulation.
pub fn certify_scenario(scenario: &Scenario) -> HarnessResult<Certificate> {
    scenario.build()?.certificate()
}

/// One arm of a paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub controller: String,
    pub final_state_norm: Option<f64>,
    pub xi_hat: Option<f64>,
    pub peak_abs_input: Option<f64>,
    pub peak_state_norm: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub entries: Vec<ComparisonEntry>,
    /// Controllers ordered by final `|X|`, failed runs last.
    pub ranking: Vec<String>,
}

/// Runs every controller on the same signal and initial data.
pub fn compare_controllers(scenario: &Scenario, controllers: &[ControllerKind]) -> HarnessResult<Comparison> {
    let setup = scenario.build()?;
    let delay = setup.plant.delay();
    let entries: Vec<ComparisonEntry> = controllers
        .par_iter()
        .map(|&kind| match setup.simulate(kind) {
            Ok(tr) => {
                let (px, pu) = peaks(&tr);
                let mut notes = Vec::new();
                let fit = fit_or_note(&tr, delay, &mut notes);
                ComparisonEntry {
                    controller: kind.to_string(),
                    final_state_norm: Some(tr.final_state().norm()),
                    xi_hat: fit.map(|f| f.xi_hat),
                    peak_abs_input: Some(pu),
                    peak_state_norm: Some(px),
                    error: None,
                }
            }
            Err(e) => ComparisonEntry {
                controller: kind.to_string(),
                final_state_norm: None,
                xi_hat: None,
                peak_abs_input: None,
                peak_state_norm: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let mut order: Vec<&ComparisonEntry> = entries.iter().collect();
    order.sort_by(|a, b| {
        let key = |e: &ComparisonEntry| e.final_state_norm.filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b))
    });
    let ranking = order.iter().map(|e| e.controller.clone()).collect();
    Ok(Comparison {
        name: setup.name,
        entries,
        ranking,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "D")]
    Delay,
    #[serde(rename = "tau_d")]
    DwellTime,
    #[serde(rename = "epsilon_scale")]
    EpsilonScale,
}

impl FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> HarnessResult<Self> {
        match s {
            "D" => Ok(Self::Delay),
            "tau_d" => Ok(Self::DwellTime),
            "epsilon_scale" => Ok(Self::EpsilonScale),
            _ => Err(HarnessError::Config(format!(
                "unknown sweep axis {s:?}; expected D, tau_d or epsilon_scale"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub epsilon_star: Option<f64>,
    pub stable: Option<bool>,
    pub xi_hat: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: [&str; 6] = ["axis_value", "seed", "epsilon", "epsilon_star", "stable", "xi_hat"];

/// Scenario variant at one sweep point; random signals take `seed`.
pub fn sweep_variant(base: &Scenario, axis: SweepAxis, value: f64, seed: u64) -> Scenario {
    let mut s = base.clone();
    match axis {
        SweepAxis::Delay => s.delay = value,
        SweepAxis::DwellTime => s.dwell_time = value,
        SweepAxis::EpsilonScale => s.epsilon_scale = value,
    }
    if let SignalSpec::Random { seed: sd, .. } = &mut s.signal {
        *sd = seed;
    }
    s
}

/// Seeds used by a sweep: the scenario's own seed and its successors.
pub fn sweep_seeds(base: &Scenario, count: usize) -> Vec<u64> {
    let first = match base.signal {
        SignalSpec::Random { seed, .. } => seed,
        _ => 0,
    };
    (0..count as u64).map(|i| first.wrapping_add(i)).collect()
}

fn sweep_point(base: &Scenario, axis: SweepAxis, value: f64, seed: u64) -> SweepRow {
    let mut row = SweepRow {
        axis_value: value,
        seed,
        epsilon: None,
        epsilon_star: None,
        stable: None,
        xi_hat: None,
        error: None,
    };
    let result = (|| {
        let setup = sweep_variant(base, axis, value, seed).build()?;
        let cert = setup.certificate()?;
        row.epsilon = Some(cert.epsilon);
        row.epsilon_star = Some(cert.epsilon_star);
        row.stable = Some(cert.stable);
        let tr = setup.simulate(setup.controller)?;
        row.xi_hat = Some(decay_fit(&tr, setup.plant.delay()).map_err(HarnessError::runtime)?.xi_hat);
        Ok::<_, HarnessError>(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

/// Every `value × seed` point, certificate plus simulation; failures are
/// recorded per row.
pub fn sweep(base: &Scenario, axis: SweepAxis, values: &[f64], seeds: usize) -> HarnessResult<Vec<SweepRow>> {
    for &v in values {
        let ok = match axis {
            SweepAxis::EpsilonScale => v >= 0.0 && v.is_finite(),
            _ => v > 0.0 && v.is_finite(),
        };
        if !ok {
            return Err(HarnessError::Config(format!("invalid {axis:?} sweep value {v}")));
        }
    }
    if seeds == 0 {
        return Err(HarnessError::Config("sweep needs at least one seed".into()));
    }
    let points: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| sweep_seeds(base, seeds).into_iter().map(move |s| (v, s)))
        .collect();
    Ok(points
        .into_par_iter()
        .map(|(v, s)| sweep_point(base, axis, v, s))
        .collect())
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> HarnessResult<()> {
    let io = |e: csv::Error| HarnessError::Runtime(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            format!("{:.16e}", r.axis_value),
            r.seed.to_string(),
            opt_num(r.epsilon),
            opt_num(r.epsilon_star),
            r.stable.map(|b| b.to_string()).unwrap_or_default(),
            opt_num(r.xi_hat),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::Runtime(e.to_string()))
}
