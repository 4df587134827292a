//! Seeded Monte-Carlo sweeps over one system parameter, with CSV output.
//!
//! Every realization index maps to a fixed channel seed, so all schemes and
//! all sweep values see the same underlying draws. Only the swept parameter
//! changes between sweep points.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams, Geometry};
use crate::error::{Error, Result};
use crate::schemes::{run_scheme, AoSettings, Scheme, SchemeResult};
use crate::system::SystemParams;
use crate::units::{db_to_linear, dbm_to_watts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKey {
    /// Number of surface elements.
    Elements,
    /// Residual self-interference variance, dB.
    Rsi,
    /// Uplink power cap, dBm.
    Pumax,
    /// Per-element circuit power, dBm.
    Ps,
}

impl SweepKey {
    pub fn name(self) -> &'static str {
        match self {
            SweepKey::Elements => "elements",
            SweepKey::Rsi => "rsi",
            SweepKey::Pumax => "pumax",
            SweepKey::Ps => "ps",
        }
    }
}

impl fmt::Display for SweepKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "elements" => Ok(SweepKey::Elements),
            "rsi" => Ok(SweepKey::Rsi),
            "pumax" => Ok(SweepKey::Pumax),
            "ps" => Ok(SweepKey::Ps),
            _ => Err(Error::Config(format!("unknown sweep key '{s}' (expected elements, rsi, pumax or ps)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 20 realizations, 16 elements.
    Fast,
    /// 100 realizations, 50 elements.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fast" => Ok(Preset::Fast),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::Config(format!("unknown preset '{s}' (expected fast or paper)"))),
        }
    }
}

/// Channel and system parameters of one sweep point, in linear units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: Geometry,
    pub channel: ChannelParams,
    pub system: SystemParams,
}

impl Scenario {
    /// Copy with the swept parameter set to `value` (in the key's unit).
    pub fn with(&self, key: SweepKey, value: f64) -> Result<Scenario> {
        let mut s = *self;
        match key {
            SweepKey::Elements => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("element count must be a positive integer, got {value}")));
                }
                s.channel.num_elements = value as usize;
            }
            SweepKey::Rsi => s.channel.sigma_si_sq = db_to_linear(value),
            SweepKey::Pumax => s.system.constraints.p_u_max = dbm_to_watts(value),
            SweepKey::Ps => s.system.power.p_s = dbm_to_watts(value),
        }
        Ok(s)
    }

    pub fn run(&self, scheme: Scheme, seed: u64, settings: &AoSettings) -> Result<SchemeResult> {
        let cs = channel::draw_channel_set(&self.geometry, &self.channel, seed)?;
        let cc = channel::composite_channels(&cs)?;
        run_scheme(scheme, &cc, &self.system, settings)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sweep: SweepKey,
    pub values: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub realizations: usize,
    pub base_seed: u64,
    pub geometry: Geometry,
    pub channel: ChannelParams,
    pub system: SystemParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Paper)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let (realizations, m) = match preset {
            Preset::Fast => (20, 16),
            Preset::Paper => (100, 50),
        };
        let channel = ChannelParams { num_elements: m, ..ChannelParams::default() };
        Self {
            sweep: SweepKey::Elements,
            values: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            schemes: Scheme::ALL.to_vec(),
            realizations,
            base_seed: 0,
            geometry: Geometry::default(),
            channel,
            system: SystemParams::default(),
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario { geometry: self.geometry, channel: self.channel, system: self.system }
    }

    /// Values in `text` override those of `base`; missing keys keep the base.
    pub fn from_toml_over(base: &ExperimentConfig, text: &str) -> Result<Self> {
        let overlay: toml::Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| Error::Config(format!("config: {e}")))?;
        merge(&mut merged, overlay);
        let cfg: ExperimentConfig =
            toml::Value::Table(merged).try_into().map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep values must be non-empty".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep values must be finite".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        self.geometry.validate()?;
        self.channel.validate()?;
        self.system.power.validate()?;
        for &v in &self.values {
            self.scenario().with(self.sweep, v)?;
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Outcome of one realization. `None` EE marks an infeasible one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationOutcome {
    pub seed: u64,
    pub ee: Option<f64>,
    pub ao_iters: usize,
    pub dinkelbach_iters: usize,
    pub outer_penalty_iters: usize,
    pub inner_sca_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    /// Mean over feasible realizations; NaN if there are none.
    pub mean_ee: f64,
    /// Sample standard deviation over feasible realizations (0 for one).
    pub std_ee: f64,
    pub feasible_count: usize,
    pub outcomes: Vec<RealizationOutcome>,
}

impl MonteCarloSummary {
    pub fn from_outcomes(outcomes: Vec<RealizationOutcome>) -> Self {
        let ees: Vec<f64> = outcomes.iter().filter_map(|o| o.ee).collect();
        let n = ees.len();
        let mean_ee = if n == 0 { f64::NAN } else { ees.iter().sum::<f64>() / n as f64 };
        let std_ee = match n {
            0 => f64::NAN,
            1 => 0.0,
            _ => (ees.iter().map(|e| (e - mean_ee).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt(),
        };
        Self { mean_ee, std_ee, feasible_count: n, outcomes }
    }

    fn mean_counter(&self, f: impl Fn(&RealizationOutcome) -> usize) -> f64 {
        let feasible: Vec<_> = self.outcomes.iter().filter(|o| o.ee.is_some()).collect();
        if feasible.is_empty() {
            return f64::NAN;
        }
        feasible.iter().map(|o| f(o) as f64).sum::<f64>() / feasible.len() as f64
    }
}

/// Runs `scheme` on seeds `base_seed..base_seed + realizations`. A
/// realization counts as infeasible when no feasible start exists or the
/// final point fails the constraint check.
pub fn monte_carlo_ee(
    scheme: Scheme,
    scenario: &Scenario,
    realizations: usize,
    base_seed: u64,
    settings: &AoSettings,
) -> Result<MonteCarloSummary> {
    if realizations == 0 {
        return Err(Error::Config("realizations must be at least 1".into()));
    }
    let mut outcomes = Vec::with_capacity(realizations);
    for i in 0..realizations as u64 {
        let seed = base_seed.wrapping_add(i);
        let outcome = match scenario.run(scheme, seed, settings) {
            Ok(r) => RealizationOutcome {
                seed,
                ee: r.feasible.then_some(r.ee),
                ao_iters: r.iteration_counts.ao,
                dinkelbach_iters: r.iteration_counts.dinkelbach,
                outer_penalty_iters: r.iteration_counts.outer_penalty,
                inner_sca_iters: r.iteration_counts.inner_sca,
            },
            Err(Error::InfeasibleInit(_)) => RealizationOutcome {
                seed,
                ee: None,
                ao_iters: 0,
                dinkelbach_iters: 0,
                outer_penalty_iters: 0,
                inner_sca_iters: 0,
            },
            Err(e) => return Err(e),
        };
        outcomes.push(outcome);
    }
    Ok(MonteCarloSummary::from_outcomes(outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_key: SweepKey,
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub mean_ee: f64,
    pub std_ee: f64,
    pub feasible_count: usize,
    pub realizations: usize,
    pub mean_ao_iters: f64,
    pub mean_dinkelbach_iters: f64,
    pub mean_outer_penalty_iters: f64,
    pub mean_inner_sca_iters: f64,
}

impl SweepRow {
    fn new(key: SweepKey, value: f64, scheme: Scheme, s: &MonteCarloSummary) -> Self {
        Self {
            sweep_key: key,
            sweep_value: value,
            scheme,
            mean_ee: s.mean_ee,
            std_ee: s.std_ee,
            feasible_count: s.feasible_count,
            realizations: s.outcomes.len(),
            mean_ao_iters: s.mean_counter(|o| o.ao_iters),
            mean_dinkelbach_iters: s.mean_counter(|o| o.dinkelbach_iters),
            mean_outer_penalty_iters: s.mean_counter(|o| o.outer_penalty_iters),
            mean_inner_sca_iters: s.mean_counter(|o| o.inner_sca_iters),
        }
    }
}

/// One row per (value, scheme), sorted by value and then scheme.
pub fn run_sweep(cfg: &ExperimentConfig, settings: &AoSettings) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let mut values = cfg.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut schemes = cfg.schemes.clone();
    schemes.sort();
    schemes.dedup();

    let mut rows = Vec::with_capacity(values.len() * schemes.len());
    for &v in &values {
        let scenario = cfg.scenario().with(cfg.sweep, v)?;
        for &scheme in &schemes {
            let summary = monte_carlo_ee(scheme, &scenario, cfg.realizations, cfg.base_seed, settings)?;
            rows.push(SweepRow::new(cfg.sweep, v, scheme, &summary));
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: [&str; 11] = [
    "sweep_key",
    "sweep_value",
    "scheme",
    "mean_ee",
    "std_ee",
    "feasible_count",
    "realizations",
    "mean_ao_iters",
    "mean_dinkelbach_iters",
    "mean_outer_penalty_iters",
    "mean_inner_sca_iters",
];

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.sweep_key.to_string(),
            r.sweep_value.to_string(),
            r.scheme.to_string(),
            r.mean_ee.to_string(),
            r.std_ee.to_string(),
            r.feasible_count.to_string(),
            r.realizations.to_string(),
            r.mean_ao_iters.to_string(),
            r.mean_dinkelbach_iters.to_string(),
            r.mean_outer_penalty_iters.to_string(),
            r.mean_inner_sca_iters.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

pub fn write_csv_file(rows: &[SweepRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_csv(rows, std::io::BufWriter::new(f))
}
