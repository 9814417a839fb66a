//! Declarative scenarios: a TOML file describing a base system, an optional
//! one- or two-axis sweep, and the pipelines to run, turned into CSV and
//! JSON artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv::{self, Table};
use crate::error::Error;
use crate::monte_carlo::{average_rates_detailed, MonteCarloReport, DEFAULT_TRIALS};
use crate::optimize::{
    optimize_pilot_length_mmse, optimize_pilot_length_mrc, optimize_scheduling_mmse,
    optimize_scheduling_mrc, OptimizationResult, DEFAULT_J_MAX, DEFAULT_MMSE_STEP,
};
use crate::params::{dbm_to_watts, noise_power, Activity, PathlossModel, Placement, SystemConfig};
use crate::rates::{high_snr_rates, known_activity_rates, rate_report, Beamformer, RateQuery};
use crate::state_evolution::{
    estimation_stats, high_snr_tau2, solve_state_evolution, BetaLaw, NoiseStateResult,
    StateEvolutionInput, DEFAULT_MAX_ITER, DEFAULT_TOL,
};

pub const PRESETS: [&str; 4] = [
    "fig_fixed_point",
    "fig_mrc_sumrate",
    "fig_mmse_sumrate",
    "fig_scheduling",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Analytic,
    MonteCarlo,
    #[default]
    Both,
}

impl Mode {
    fn analytic(self) -> bool {
        self != Mode::MonteCarlo
    }

    fn monte_carlo(self) -> bool {
        self != Mode::Analytic
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "analytic" => Ok(Mode::Analytic),
            "monte_carlo" | "mc" => Ok(Mode::MonteCarlo),
            "both" => Ok(Mode::Both),
            other => Err(format!(
                "unknown mode `{other}` (expected analytic, monte_carlo or both)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PilotLen,
    JIntervals,
    NAntennas,
    Epsilon,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PilotLen => "pilot_len",
            SweepAxis::JIntervals => "j_intervals",
            SweepAxis::NAntennas => "n_antennas",
            SweepAxis::Epsilon => "epsilon",
        }
    }

    fn is_integer(self) -> bool {
        self != SweepAxis::Epsilon
    }

    fn format(self, v: f64) -> String {
        if self.is_integer() {
            format!("{}", v as u64)
        } else {
            csv::float(v)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    /// The sampled active population.
    #[default]
    Empirical,
    /// A large fixed-seed sample of the pathloss model.
    Analytic,
}

fn default_seed() -> u64 {
    1
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}
fn default_beamformers() -> Vec<Beamformer> {
    vec![Beamformer::Mrc, Beamformer::Mmse]
}
fn default_coherence() -> u32 {
    1000
}
fn default_power_dbm() -> f64 {
    23.0
}
fn default_psd() -> f64 {
    -169.0
}
fn default_bandwidth() -> f64 {
    1e6
}
fn default_one() -> u32 {
    1
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

/// `[system]`. Only `n_users`, `n_antennas` and one of `epsilon` or
/// `active_users` are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_users: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_users: Option<u32>,
    pub n_antennas: u32,
    /// Defaults to `min(2K, T - 1)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_len: Option<u32>,
    #[serde(default = "default_coherence")]
    pub coherence_len: u32,
    #[serde(default = "default_power_dbm")]
    pub pilot_power_dbm: f64,
    /// Overrides `pilot_power_dbm` with the power giving this pilot SNR at the cell edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_edge_snr_db: Option<f64>,
    #[serde(default = "default_power_dbm")]
    pub data_power_dbm: f64,
    #[serde(default = "default_psd")]
    pub noise_psd_dbm_hz: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_one")]
    pub j_intervals: u32,
}

/// `[pathloss]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathlossSection {
    pub d_min_km: f64,
    pub d_max_km: f64,
    pub intercept_db: f64,
    pub slope_db: f64,
    pub placement: Placement,
}

impl Default for PathlossSection {
    fn default() -> Self {
        let m = PathlossModel::default();
        Self {
            d_min_km: m.d_min_km,
            d_max_km: m.d_max_km,
            intercept_db: m.intercept_db,
            slope_db: m.slope_db,
            placement: m.placement,
        }
    }
}

/// `[state_evolution]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateEvolutionSection {
    pub tol: f64,
    pub max_iter: usize,
    pub law: LawKind,
}

impl Default for StateEvolutionSection {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            law: LawKind::Empirical,
        }
    }
}

/// `[sweep]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_axis: Option<SweepAxis>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series_values: Vec<f64>,
}

/// `[optimize]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeSection {
    pub pilot_len: bool,
    pub scheduling: bool,
    pub j_max: u32,
    pub mmse_step: u32,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            pilot_len: false,
            scheduling: false,
            j_max: DEFAULT_J_MAX,
            mmse_step: DEFAULT_MMSE_STEP,
        }
    }
}

/// `[output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    #[serde(default)]
    pub verbose: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
            verbose: false,
        }
    }
}

/// A scenario file as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSweep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_beamformers")]
    pub beamformers: Vec<Beamformer>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub system: SystemSection,
    #[serde(default)]
    pub pathloss: PathlossSection,
    #[serde(default)]
    pub state_evolution: StateEvolutionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub optimize: OptimizeSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug)]
pub enum ScenarioError {
    /// Unparseable or invalid configuration; exit status 1.
    Config(String),
    /// A numerical routine failed at a sweep point; exit status 2.
    Numerical { point: String, source: Error },
    /// Output could not be written; exit status 1.
    Io(String),
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) | ScenarioError::Io(_) => 1,
            ScenarioError::Numerical { .. } => 2,
        }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Config(m) => write!(f, "config error: {m}"),
            ScenarioError::Numerical { point, source } => {
                write!(f, "numerical failure at {point}: {source}")
            }
            ScenarioError::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

fn config_err(m: impl Into<String>) -> ScenarioError {
    ScenarioError::Config(m.into())
}

impl ScenarioSweep {
    /// Parses and validates TOML text. Diagnostics carry the line and the field.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            ScenarioError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn pathloss_model(&self) -> PathlossModel {
        let p = &self.pathloss;
        PathlossModel {
            d_min_km: p.d_min_km,
            d_max_km: p.d_max_km,
            intercept_db: p.intercept_db,
            slope_db: p.slope_db,
            placement: p.placement,
        }
    }

    /// The base system before any sweep value is applied.
    pub fn base_config(&self) -> Result<SystemConfig, ScenarioError> {
        let s = &self.system;
        let activity = match (s.epsilon, s.active_users) {
            (Some(e), None) => Activity::Probability(e),
            (None, Some(k)) => Activity::Count(k),
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "system: give either `epsilon` or `active_users`, not both",
                ))
            }
            (None, None) => {
                return Err(config_err(
                    "system: one of `epsilon` or `active_users` is required",
                ))
            }
        };
        let mut c = SystemConfig {
            n_users: s.n_users,
            activity,
            pilot_len: 1,
            coherence_len: s.coherence_len,
            n_antennas: s.n_antennas,
            pilot_power: dbm_to_watts(s.pilot_power_dbm),
            data_power: dbm_to_watts(s.data_power_dbm),
            noise_power: noise_power(s.noise_psd_dbm_hz, s.bandwidth_hz),
            bandwidth_hz: s.bandwidth_hz,
        };
        c.pilot_len = s.pilot_len.unwrap_or_else(|| {
            (2 * c.active_users() as u32).clamp(1, c.coherence_len.saturating_sub(1).max(1))
        });
        if let Some(snr) = s.pilot_edge_snr_db {
            let model = self.pathloss_model();
            c.pilot_power = c.pilot_power_for_snr(&model, model.d_max_km, snr);
        }
        c.validate()
            .map_err(|e| config_err(format!("system: {e}")))?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.pathloss_model()
            .validate()
            .map_err(|e| config_err(format!("pathloss: {e}")))?;
        if self.beamformers.is_empty() {
            return Err(config_err("beamformers: at least one is required"));
        }
        if self.mode.monte_carlo() && self.trials < 2 {
            return Err(config_err("trials: Monte Carlo needs at least 2"));
        }
        if self.system.j_intervals == 0 {
            return Err(config_err("system.j_intervals: must be at least 1"));
        }
        if self.state_evolution.tol.is_nan()
            || self.state_evolution.tol <= 0.0
            || self.state_evolution.max_iter == 0
        {
            return Err(config_err(
                "state_evolution: tol and max_iter must be positive",
            ));
        }
        if self.optimize.j_max == 0 || self.optimize.mmse_step == 0 {
            return Err(config_err("optimize: j_max and mmse_step must be positive"));
        }
        let base = self.base_config()?;
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() {
                return Err(config_err(format!(
                    "sweep: sweep_axis requires at least one value (axis `{}`)",
                    sw.axis.name()
                )));
            }
            match (sw.series_axis, sw.series_values.is_empty()) {
                (Some(a), true) => {
                    return Err(config_err(format!(
                        "sweep: series_axis requires at least one value (axis `{}`)",
                        a.name()
                    )))
                }
                (None, false) => {
                    return Err(config_err("sweep: series_values given without series_axis"))
                }
                (Some(a), false) if a == sw.axis => {
                    return Err(config_err("sweep: series_axis must differ from axis"))
                }
                _ => {}
            }
            for (series, value) in self.points() {
                let mut c = base.clone();
                if let Some((a, v)) = series {
                    apply(&mut c, a, v).map_err(config_err)?;
                }
                apply(&mut c, sw.axis, value).map_err(config_err)?;
                c.validate().map_err(|e| {
                    config_err(format!(
                        "sweep point {}: {e}",
                        point_label(series, sw.axis, value)
                    ))
                })?;
            }
        }
        Ok(())
    }

    fn series(&self) -> Vec<Option<(SweepAxis, f64)>> {
        match &self.sweep {
            Some(SweepSection {
                series_axis: Some(a),
                series_values,
                ..
            }) => series_values.iter().map(|&v| Some((*a, v))).collect(),
            _ => vec![None],
        }
    }

    /// All `(series, sweep value)` pairs in output order.
    fn points(&self) -> Vec<(Option<(SweepAxis, f64)>, f64)> {
        let Some(sw) = &self.sweep else {
            return Vec::new();
        };
        self.series()
            .into_iter()
            .flat_map(|s| sw.values.iter().map(move |&v| (s, v)))
            .collect()
    }
}

fn as_count(axis: SweepAxis, v: f64) -> Result<u32, String> {
    if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(format!(
            "sweep: `{}` value {v} must be a positive integer",
            axis.name()
        ));
    }
    Ok(v as u32)
}

/// Sets one axis of `c`. The `j_intervals` axis lives outside
/// [`SystemConfig`] and is accepted here without change.
fn apply(c: &mut SystemConfig, axis: SweepAxis, v: f64) -> Result<(), String> {
    match axis {
        SweepAxis::PilotLen => c.pilot_len = as_count(axis, v)?,
        SweepAxis::NAntennas => c.n_antennas = as_count(axis, v)?,
        SweepAxis::JIntervals => {
            as_count(axis, v)?;
        }
        SweepAxis::Epsilon => {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("sweep: epsilon value {v} must lie in (0, 1]"));
            }
            c.activity = Activity::Probability(v);
        }
    }
    Ok(())
}

fn point_label(series: Option<(SweepAxis, f64)>, axis: SweepAxis, v: f64) -> String {
    match series {
        Some((a, s)) => format!(
            "{}={}, {}={}",
            a.name(),
            a.format(s),
            axis.name(),
            axis.format(v)
        ),
        None => format!("{}={}", axis.name(), axis.format(v)),
    }
}

/// Built-in scenarios with the reference setup: `N = 2000`, `T = 1000`,
/// 23 dBm on both phases, -169 dBm/Hz over 1 MHz.
pub fn preset(name: &str) -> Result<ScenarioSweep, ScenarioError> {
    let system = |m: u32, eps: f64, l: u32| SystemSection {
        n_users: 2000,
        epsilon: Some(eps),
        active_users: None,
        n_antennas: m,
        pilot_len: Some(l),
        coherence_len: 1000,
        pilot_power_dbm: 23.0,
        pilot_edge_snr_db: None,
        data_power_dbm: 23.0,
        noise_psd_dbm_hz: -169.0,
        bandwidth_hz: 1e6,
        j_intervals: 1,
    };
    let pilot_grid: Vec<f64> = [
        105u32, 110, 120, 140, 160, 180, 200, 250, 300, 400, 500, 600, 700, 800, 900,
    ]
    .iter()
    .map(|&l| l as f64)
    .collect();
    let base = |sys: SystemSection| ScenarioSweep {
        name: Some(name.to_string()),
        seed: 1,
        mode: Mode::Both,
        beamformers: default_beamformers(),
        trials: DEFAULT_TRIALS,
        system: sys,
        pathloss: PathlossSection::default(),
        state_evolution: StateEvolutionSection::default(),
        sweep: None,
        optimize: OptimizeSection::default(),
        output: OutputSection::default(),
    };
    let s = match name {
        "fig_fixed_point" => ScenarioSweep {
            mode: Mode::Analytic,
            sweep: Some(SweepSection {
                axis: SweepAxis::PilotLen,
                values: (120..=400).step_by(20).map(f64::from).collect(),
                series_axis: Some(SweepAxis::Epsilon),
                series_values: vec![0.05, 0.075],
            }),
            ..base(system(128, 0.05, 200))
        },
        "fig_mrc_sumrate" | "fig_mmse_sumrate" => {
            let bf = if name == "fig_mrc_sumrate" {
                Beamformer::Mrc
            } else {
                Beamformer::Mmse
            };
            ScenarioSweep {
                beamformers: vec![bf],
                sweep: Some(SweepSection {
                    axis: SweepAxis::PilotLen,
                    values: pilot_grid,
                    series_axis: Some(SweepAxis::NAntennas),
                    series_values: vec![128.0, 256.0],
                }),
                optimize: OptimizeSection {
                    pilot_len: true,
                    ..OptimizeSection::default()
                },
                ..base(system(128, 0.05, 200))
            }
        }
        "fig_scheduling" => ScenarioSweep {
            sweep: Some(SweepSection {
                axis: SweepAxis::JIntervals,
                values: (1..=10).map(f64::from).collect(),
                series_axis: None,
                series_values: Vec::new(),
            }),
            optimize: OptimizeSection {
                scheduling: true,
                ..OptimizeSection::default()
            },
            ..base(system(64, 0.15, 400))
        },
        other => {
            return Err(config_err(format!(
                "unknown preset `{other}` (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    s.validate()?;
    Ok(s)
}

/// Results at one sweep point.
#[derive(Debug, Clone, Serialize)]
pub struct PointResult {
    pub series_value: Option<f64>,
    pub sweep_value: f64,
    pub config: SystemConfig,
    pub j_intervals: u32,
    pub active_users: usize,
    pub state_evolution: NoiseStateResult,
    pub tau2_high_snr: Option<f64>,
    pub rates: Vec<PointRates>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointRates {
    pub beamformer: Beamformer,
    pub analytic: Option<f64>,
    pub high_snr: Option<f64>,
    pub known_activity: Option<f64>,
    pub monte_carlo: Option<f64>,
    pub mc_halfwidth: Option<f64>,
    pub mc_uneven_blocks: bool,
    #[serde(skip)]
    pub mc_report: Option<MonteCarloReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesOptimum {
    pub series_value: Option<f64>,
    pub beamformer: Beamformer,
    pub pilot_len: Option<OptimizationResult>,
    pub scheduling: Option<OptimizationResult>,
}

/// Everything a run produces, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub points: Vec<PointResult>,
    pub optima: Vec<SeriesOptimum>,
    /// File name to contents, in name order.
    pub files: BTreeMap<String, String>,
    pub manifest: serde_json::Value,
}

fn numerical(label: &str) -> impl Fn(Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Numerical {
        point: label.to_string(),
        source,
    }
}

fn evaluate_point(
    s: &ScenarioSweep,
    series: Option<(SweepAxis, f64)>,
    axis: Option<SweepAxis>,
    value: f64,
    index: usize,
) -> Result<PointResult, ScenarioError> {
    let mut config = s.base_config()?;
    let mut j = s.system.j_intervals;
    let label = match axis {
        Some(a) => point_label(series, a, value),
        None => "base configuration".to_string(),
    };
    for (a, v) in series.into_iter().chain(axis.map(|a| (a, value))) {
        apply(&mut config, a, v).map_err(config_err)?;
        if a == SweepAxis::JIntervals {
            j = v as u32;
        }
    }
    let err = numerical(&label);
    let model = s.pathloss_model();
    let pop = model.population(config.active_users(), s.seed);
    let betas = &pop.betas;
    let law = match s.state_evolution.law {
        LawKind::Empirical => BetaLaw::Empirical(betas),
        LawKind::Analytic => BetaLaw::Analytic(model),
    };
    let input = StateEvolutionInput::from_config(&config, law);
    let se = solve_state_evolution(&input, s.state_evolution.tol, s.state_evolution.max_iter)
        .map_err(&err)?;
    let tau2_high_snr = high_snr_tau2(&config).ok();
    let k = betas.len();

    let mut rates = Vec::new();
    for &bf in &s.beamformers {
        let mut r = PointRates {
            beamformer: bf,
            analytic: None,
            high_snr: None,
            known_activity: None,
            monte_carlo: None,
            mc_halfwidth: None,
            mc_uneven_blocks: false,
            mc_report: None,
        };
        if s.mode.analytic() {
            let q = RateQuery::from_config(&config, betas, se.tau2, bf, j);
            r.analytic = Some(rate_report(&q).map_err(&err)?.sum_rate);
            if config.pilot_len as usize > k {
                r.high_snr = Some(
                    high_snr_rates(&config, betas, bf, j)
                        .map_err(&err)?
                        .sum_rate,
                );
            }
            if config.pilot_len as usize >= k && j == 1 {
                r.known_activity = Some(
                    known_activity_rates(&config, betas, bf)
                        .map_err(&err)?
                        .sum_rate,
                );
            }
        }
        if s.mode.monte_carlo() {
            let stats = estimation_stats(betas, se.tau2).map_err(&err)?;
            let mc_seed = s.seed.wrapping_add(index as u64 + 1);
            let mc =
                average_rates_detailed(&stats, &config, bf, j, s.trials, mc_seed, s.output.verbose)
                    .map_err(&err)?;
            r.monte_carlo = Some(mc.report.sum_rate);
            r.mc_halfwidth = Some(mc.sum_rate_halfwidth);
            r.mc_uneven_blocks = mc.uneven_blocks;
            r.mc_report = Some(mc);
        }
        rates.push(r);
    }
    Ok(PointResult {
        series_value: series.map(|(_, v)| v),
        sweep_value: value,
        config,
        j_intervals: j,
        active_users: k,
        state_evolution: se,
        tau2_high_snr,
        rates,
    })
}

fn optimize_series(
    s: &ScenarioSweep,
    series: Option<(SweepAxis, f64)>,
) -> Result<Vec<SeriesOptimum>, ScenarioError> {
    let mut config = s.base_config()?;
    if let Some((a, v)) = series {
        apply(&mut config, a, v).map_err(config_err)?;
    }
    let label = match series {
        Some((a, v)) => format!("optimization with {}={}", a.name(), a.format(v)),
        None => "optimization".to_string(),
    };
    let err = numerical(&label);
    let pop = s.pathloss_model().population(config.active_users(), s.seed);
    let betas = &pop.betas;
    let mut out = Vec::new();
    for &bf in &s.beamformers {
        let pilot_len = if s.optimize.pilot_len {
            Some(
                match bf {
                    Beamformer::Mrc => optimize_pilot_length_mrc(&config, betas),
                    Beamformer::Mmse => {
                        optimize_pilot_length_mmse(&config, betas, s.optimize.mmse_step)
                    }
                }
                .map_err(&err)?,
            )
        } else {
            None
        };
        let scheduling = if s.optimize.scheduling {
            Some(
                match bf {
                    Beamformer::Mrc => optimize_scheduling_mrc(&config, betas, s.optimize.j_max),
                    Beamformer::Mmse => optimize_scheduling_mmse(&config, betas, s.optimize.j_max),
                }
                .map_err(&err)?,
            )
        } else {
            None
        };
        if pilot_len.is_some() || scheduling.is_some() {
            out.push(SeriesOptimum {
                series_value: series.map(|(_, v)| v),
                beamformer: bf,
                pilot_len,
                scheduling,
            });
        }
    }
    Ok(out)
}

fn header(series: Option<SweepAxis>, rest: &[&str]) -> Vec<String> {
    series
        .map(|a| a.name().to_string())
        .into_iter()
        .chain(rest.iter().map(|s| s.to_string()))
        .collect()
}

fn lead(series_axis: Option<SweepAxis>, series: Option<f64>) -> Vec<String> {
    match (series_axis, series) {
        (Some(a), Some(v)) => vec![a.format(v)],
        _ => Vec::new(),
    }
}

fn render_files(
    s: &ScenarioSweep,
    points: &[PointResult],
    optima: &[SeriesOptimum],
) -> BTreeMap<String, String> {
    let mut files = BTreeMap::new();
    let series_axis = s.sweep.as_ref().and_then(|w| w.series_axis);
    if let Some(sw) = &s.sweep {
        let axis = sw.axis.name();
        let mut fp = Table::new(header(
            series_axis,
            &[
                axis,
                "active_users",
                "tau2_state_evolution",
                "tau2_high_snr",
                "lower_bound",
                "upper_bound",
                "iterations",
            ],
        ));
        for p in points {
            let se = &p.state_evolution;
            let mut row = lead(series_axis, p.series_value);
            row.extend([
                sw.axis.format(p.sweep_value),
                p.active_users.to_string(),
                csv::float(se.tau2),
                csv::opt_float(p.tau2_high_snr),
                csv::float(se.lower_bound),
                csv::opt_float(se.upper_bound),
                se.iterations.to_string(),
            ]);
            fp.push(row);
        }
        files.insert("fixed_point.csv".to_string(), fp.render());

        for (i, &bf) in s.beamformers.iter().enumerate() {
            let mut t = Table::new(header(
                series_axis,
                &[
                    axis,
                    "sum_rate_analytic",
                    "sum_rate_high_snr",
                    "sum_rate_known_activity",
                    "sum_rate_monte_carlo",
                    "mc_halfwidth",
                ],
            ));
            for p in points {
                let r = &p.rates[i];
                let mut row = lead(series_axis, p.series_value);
                row.extend([
                    sw.axis.format(p.sweep_value),
                    csv::opt_float(r.analytic),
                    csv::opt_float(r.high_snr),
                    csv::opt_float(r.known_activity),
                    csv::opt_float(r.monte_carlo),
                    csv::opt_float(r.mc_halfwidth),
                ]);
                t.push(row);
            }
            files.insert(format!("sum_rate_{bf}.csv"), t.render());
        }

        if s.output.verbose {
            for (idx, p) in points.iter().enumerate() {
                let mut t = Table::new(["iteration", "tau2"]);
                for (it, v) in p.state_evolution.trace.iter().enumerate() {
                    t.push(vec![it.to_string(), csv::float(*v)]);
                }
                files.insert(format!("trace_{idx:03}.csv"), t.render());
                for r in &p.rates {
                    if let Some(mc) = &r.mc_report {
                        files.insert(
                            format!("trials_{}_{idx:03}.csv", r.beamformer),
                            mc.trials_csv(),
                        );
                    }
                }
            }
        }
    }

    for (kind, name, pick) in [
        ("pilot_len", "optimize_pilot", 0usize),
        ("j_intervals", "optimize_scheduling", 1),
    ] {
        for &bf in &s.beamformers {
            let mut t = Table::new(header(series_axis, &[kind, "sum_rate"]));
            let mut any = false;
            for o in optima.iter().filter(|o| o.beamformer == bf) {
                let res = if pick == 0 {
                    &o.pilot_len
                } else {
                    &o.scheduling
                };
                if let Some(res) = res {
                    any = true;
                    for (c, v) in &res.profile {
                        let mut row = lead(series_axis, o.series_value);
                        row.extend([c.to_string(), csv::float(*v)]);
                        t.push(row);
                    }
                }
            }
            if any {
                files.insert(format!("{name}_{bf}.csv"), t.render());
            }
        }
    }
    files
}

/// Runs every sweep point and optimization in parallel and renders the
/// artifacts in memory. Nothing is written.
pub fn compute_scenario(s: &ScenarioSweep) -> Result<RunOutput, ScenarioError> {
    s.validate()?;
    let start = Instant::now();
    let axis = s.sweep.as_ref().map(|w| w.axis);
    let points: Vec<PointResult> = s
        .points()
        .into_par_iter()
        .enumerate()
        .map(|(i, (series, v))| evaluate_point(s, series, axis, v, i))
        .collect::<Result<_, _>>()?;
    let optima: Vec<SeriesOptimum> = if s.optimize.pilot_len || s.optimize.scheduling {
        let per: Vec<Vec<SeriesOptimum>> = s
            .series()
            .into_par_iter()
            .map(|series| optimize_series(s, series))
            .collect::<Result<_, _>>()?;
        per.into_iter().flatten().collect()
    } else {
        Vec::new()
    };
    let base = s.base_config()?;
    let base_point = if s.sweep.is_none() {
        Some(evaluate_point(s, None, None, 0.0, 0)?)
    } else {
        None
    };
    let csv_on = s.output.formats.contains(&Format::Csv);
    let mut files = if csv_on {
        render_files(s, &points, &optima)
    } else {
        BTreeMap::new()
    };
    if s.output.formats.contains(&Format::Json) {
        let summary = serde_json::json!({
            "points": points,
            "base_point": base_point,
            "optima": optima,
        });
        files.insert(
            "summary.json".to_string(),
            serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
        );
    }
    let manifest = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "scenario": s,
        "resolved_base": base,
        "seeds": {
            "population": s.seed,
            "monte_carlo": "seed + 1 + point index, one stream per trial",
        },
        "points": s.points().len(),
        "optima": optima.iter().map(|o| serde_json::json!({
            "series_value": o.series_value,
            "beamformer": o.beamformer,
            "pilot_len": o.pilot_len.as_ref().map(|r| r.argmax),
            "pilot_len_objective": o.pilot_len.as_ref().map(|r| r.objective),
            "j_intervals": o.scheduling.as_ref().map(|r| r.argmax),
            "j_intervals_objective": o.scheduling.as_ref().map(|r| r.objective),
        })).collect::<Vec<_>>(),
        "files": files.keys().collect::<Vec<_>>(),
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    Ok(RunOutput {
        points,
        optima,
        files,
        manifest,
    })
}

/// Computes the scenario and writes its artifacts to `dir` (the output
/// section's directory when `None`). Returns the written paths.
pub fn run_scenario(
    s: &ScenarioSweep,
    dir: Option<&Path>,
) -> Result<(RunOutput, Vec<PathBuf>), ScenarioError> {
    let dir = dir
        .map(Path::to_path_buf)
        .or_else(|| s.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let out = compute_scenario(s)?;
    std::fs::create_dir_all(&dir)
        .map_err(|e| ScenarioError::Io(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    let manifest = serde_json::to_string_pretty(&out.manifest).expect("manifest serializes") + "\n";
    for (name, body) in out
        .files
        .iter()
        .map(|(n, b)| (n.as_str(), b.as_str()))
        .chain([("manifest.json", manifest.as_str())])
    {
        let path = dir.join(name);
        std::fs::write(&path, body)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok((out, written))
}
