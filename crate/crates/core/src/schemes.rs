//! Alternating optimization over powers and surface profile, and the three
//! baselines built from the same pieces.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beamformer::{BeamformerSettings, BeamformingProblem, PenaltyIterRecord, ProfileStatus, SurfaceMode};
use crate::channel::CompositeChannels;
use crate::error::{Error, Result};
use crate::power::{Objective, PowerIterRecord, PowerProblem, PowerSettings, PowerStatus};
use crate::system::{self, check_solution, random_phases, Duplex, PowerAllocation, StarRisProfile, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// STAR surface, full duplex, energy-efficiency objective.
    #[serde(rename = "SR-FD-EEM")]
    SrFdEem,
    /// STAR surface, half duplex.
    #[serde(rename = "SR-HD-EEM")]
    SrHdEem,
    /// Conventional surface: half the elements transmit, half reflect.
    #[serde(rename = "CR-FD-EEM")]
    CrFdEem,
    /// STAR surface, full duplex, sum-rate objective.
    #[serde(rename = "SR-FD-SRM")]
    SrFdSrm,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::SrFdEem, Scheme::SrHdEem, Scheme::CrFdEem, Scheme::SrFdSrm];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::SrFdEem => "SR-FD-EEM",
            Scheme::SrHdEem => "SR-HD-EEM",
            Scheme::CrFdEem => "CR-FD-EEM",
            Scheme::SrFdSrm => "SR-FD-SRM",
        }
    }

    fn duplex(self) -> Duplex {
        match self {
            Scheme::SrHdEem => Duplex::Half,
            _ => Duplex::Full,
        }
    }

    fn mode(self) -> SurfaceMode {
        match self {
            Scheme::CrFdEem => SurfaceMode::ModeSwitching,
            _ => SurfaceMode::EnergySplitting,
        }
    }

    fn objective(self) -> Objective {
        match self {
            Scheme::SrFdSrm => Objective::SumRate,
            _ => Objective::EnergyEfficiency,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoSettings {
    pub max_ao_iterations: usize,
    /// Stop once the fractional increase of the tracked objective is below this.
    pub ao_tolerance: f64,
    pub init_restarts: usize,
    /// Seeds the random profiles tried when the first initialization fails.
    pub init_seed: u64,
    pub power: PowerSettings,
    pub beamformer: BeamformerSettings,
}

impl Default for AoSettings {
    fn default() -> Self {
        Self {
            max_ao_iterations: 30,
            ao_tolerance: 1e-4,
            init_restarts: 20,
            init_seed: 0,
            power: PowerSettings::default(),
            beamformer: BeamformerSettings::default(),
        }
    }
}

impl AoSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_ao_iterations == 0 || !(self.ao_tolerance > 0.0) || self.init_restarts == 0 {
            return Err(Error::Config("AO settings must be positive".into()));
        }
        self.beamformer.schedule.validate()
    }
}

/// Totals over one scheme run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCounts {
    pub ao: usize,
    /// Power subproblems solved.
    pub dinkelbach: usize,
    /// Penalty-factor updates.
    pub outer_penalty: usize,
    /// Beamforming subproblems solved.
    pub inner_sca: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AoIterRecord {
    pub iteration: usize,
    pub ee_after_power: f64,
    pub ee_after_profile: f64,
    pub power_status: PowerStatus,
    pub profile_status: ProfileStatus,
    pub profile_kept: bool,
    pub power_records: Vec<PowerIterRecord>,
    pub penalty_records: Vec<PenaltyIterRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    pub ee: f64,
    pub r_u: f64,
    pub r_d: f64,
    pub allocation: PowerAllocation,
    pub profile: StarRisProfile,
    /// Energy efficiency at the start and after every AO iteration.
    pub ao_trace: Vec<f64>,
    pub iteration_counts: IterationCounts,
    /// Profiles tried before a feasible one was found.
    pub init_attempts: usize,
    /// The final point passes every constraint check.
    pub feasible: bool,
    pub records: Vec<AoIterRecord>,
}

/// Coefficients co-phased with `h`: `q[m]` has the phase of `h[m]`.
fn aligned_phases(h: &crate::CVector) -> DVector<f64> {
    DVector::from_fn(h.len(), |m, _| -h[m].arg())
}

fn split_for(mode: SurfaceMode, m: usize) -> DVector<f64> {
    match mode {
        SurfaceMode::EnergySplitting => DVector::from_element(m, 0.5),
        SurfaceMode::ModeSwitching => DVector::from_fn(m, |k, _| if k < m / 2 { 1.0 } else { 0.0 }),
    }
}

/// First a profile co-phased with the useful channels, then random phases,
/// until one admits powers meeting both rate thresholds.
fn initialize(
    scheme: Scheme,
    cc: &CompositeChannels,
    sys: &SystemParams,
    settings: &AoSettings,
) -> Result<(StarRisProfile, PowerAllocation, usize)> {
    let m = cc.num_elements();
    let beta = split_for(scheme.mode(), m);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.init_seed);
    for attempt in 1..=settings.init_restarts {
        let (phi_t, phi_r) = if attempt == 1 {
            (aligned_phases(&cc.h2), aligned_phases(&cc.h1))
        } else {
            (random_phases(&mut rng, m), random_phases(&mut rng, m))
        };
        let profile = StarRisProfile::new(beta.clone(), phi_t, phi_r)?;
        let prob = PowerProblem::new(system::effective_gains(&profile, cc), m, sys);
        if let Some(p) = prob.feasible_start() {
            return Ok((profile, p, attempt));
        }
    }
    Err(Error::InfeasibleInit(settings.init_restarts))
}

pub fn run_scheme(scheme: Scheme, cc: &CompositeChannels, base: &SystemParams, settings: &AoSettings) -> Result<SchemeResult> {
    settings.validate()?;
    let m = cc.num_elements();
    if scheme.mode() == SurfaceMode::ModeSwitching && m % 2 != 0 {
        return Err(Error::Config(format!("{scheme} needs an even element count, got {m}")));
    }
    let sys = SystemParams { duplex: scheme.duplex(), ..*base };
    let (mut profile, mut powers, init_attempts) = initialize(scheme, cc, &sys, settings)?;
    let power_settings = PowerSettings { objective: scheme.objective(), ..settings.power };

    let ee = |p: &PowerAllocation, prof: &StarRisProfile| system::energy_efficiency(p, prof, cc, &sys);
    let tracked = |p: &PowerAllocation, prof: &StarRisProfile| match scheme.objective() {
        Objective::EnergyEfficiency => ee(p, prof),
        Objective::SumRate => {
            let g = system::effective_gains(prof, cc);
            let (ru, rd) = system::rates(p, &g, &sys.noise, sys.duplex);
            ru + rd
        }
    };

    let mut counts = IterationCounts::default();
    let mut trace = vec![ee(&powers, &profile)];
    let mut records = Vec::new();
    let mut value = tracked(&powers, &profile);
    for iteration in 1..=settings.max_ao_iterations {
        counts.ao = iteration;
        let prob = PowerProblem::new(system::effective_gains(&profile, cc), m, &sys);
        let power = prob.optimize(powers, &power_settings);
        counts.dinkelbach += power.iterations;
        powers = power.allocation;
        let ee_after_power = ee(&powers, &profile);

        let beam = BeamformingProblem::new(cc, powers, &sys, scheme.mode())?.optimize(&profile, &settings.beamformer);
        counts.outer_penalty += beam.outer_iterations;
        counts.inner_sca += beam.inner_iterations;
        profile = beam.profile;
        let ee_after_profile = ee(&powers, &profile);
        trace.push(ee_after_profile);
        records.push(AoIterRecord {
            iteration,
            ee_after_power,
            ee_after_profile,
            power_status: power.status,
            profile_status: beam.status,
            profile_kept: beam.kept_input,
            power_records: power.records,
            penalty_records: beam.records,
        });

        let next = tracked(&powers, &profile);
        let increase = (next - value) / value.abs().max(f64::MIN_POSITIVE);
        value = next;
        if increase < settings.ao_tolerance {
            break;
        }
    }

    let report = check_solution(&powers, &profile, cc, &sys);
    Ok(SchemeResult {
        scheme,
        ee: report.ee,
        r_u: report.r_u,
        r_d: report.r_d,
        allocation: powers,
        profile,
        ao_trace: trace,
        iteration_counts: counts,
        init_attempts,
        feasible: report.is_feasible(),
        records,
    })
}

pub fn run_sr_fd_eem(cc: &CompositeChannels, sys: &SystemParams, settings: &AoSettings) -> Result<SchemeResult> {
    run_scheme(Scheme::SrFdEem, cc, sys, settings)
}

pub fn run_sr_hd_eem(cc: &CompositeChannels, sys: &SystemParams, settings: &AoSettings) -> Result<SchemeResult> {
    run_scheme(Scheme::SrHdEem, cc, sys, settings)
}

pub fn run_cr_fd_eem(cc: &CompositeChannels, sys: &SystemParams, settings: &AoSettings) -> Result<SchemeResult> {
    run_scheme(Scheme::CrFdEem, cc, sys, settings)
}

pub fn run_sr_fd_srm(cc: &CompositeChannels, sys: &SystemParams, settings: &AoSettings) -> Result<SchemeResult> {
    run_scheme(Scheme::SrFdSrm, cc, sys, settings)
}
