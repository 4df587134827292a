//! Closed-form system quantities: effective gains, rates, power consumption,
//! energy efficiency and constraint checking.

use std::f64::consts::{PI, TAU};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channel::CompositeChannels;
use crate::error::{Error, Result};
use crate::units::dbm_to_watts;
use crate::{CVector, C64};

/// Constraint slack at or above `-FEASIBILITY_TOL` counts as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Duplex {
    /// Simultaneous UL and DL; suffers RSI and co-channel interference.
    Full,
    /// UL and DL in equal, orthogonal half slots.
    Half,
}

impl Duplex {
    pub fn prelog(self) -> f64 {
        match self {
            Duplex::Full => 1.0,
            Duplex::Half => 0.5,
        }
    }
}

/// Per-element energy split and phases of the surface.
///
/// Element `m` applies `sqrt(beta) * exp(j*phi)` to the incident signal, so the
/// coefficient vector used in `q^H h` products is the conjugate of that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarRisProfile {
    pub beta_t: DVector<f64>,
    pub beta_r: DVector<f64>,
    pub phi_t: DVector<f64>,
    pub phi_r: DVector<f64>,
}

fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl StarRisProfile {
    /// Builds a profile from the transmission split; `beta_r = 1 - beta_t`.
    pub fn new(beta_t: DVector<f64>, phi_t: DVector<f64>, phi_r: DVector<f64>) -> Result<Self> {
        let m = beta_t.len();
        for v in [&phi_t, &phi_r] {
            if v.len() != m {
                return Err(Error::Dimension { expected: m, got: v.len() });
            }
        }
        if let Some(b) = beta_t.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::Domain(format!("energy split {b} outside [0, 1]")));
        }
        let beta_r = beta_t.map(|b| 1.0 - b);
        Ok(Self {
            beta_t,
            beta_r,
            phi_t: phi_t.map(wrap_phase),
            phi_r: phi_r.map(wrap_phase),
        })
    }

    /// Equal split with the given phases.
    pub fn uniform(phi_t: DVector<f64>, phi_r: DVector<f64>) -> Result<Self> {
        let m = phi_t.len();
        Self::new(DVector::from_element(m, 0.5), phi_t, phi_r)
    }

    pub fn num_elements(&self) -> usize {
        self.beta_t.len()
    }

    /// `q_t` with `q_t[m] = sqrt(beta_t) * exp(-j*phi_t)`.
    pub fn q_t(&self) -> CVector {
        q_vector(&self.beta_t, &self.phi_t)
    }

    pub fn q_r(&self) -> CVector {
        q_vector(&self.beta_r, &self.phi_r)
    }

    /// Inverse of [`StarRisProfile::q_t`]/[`StarRisProfile::q_r`] for a pair of
    /// coefficient vectors. Amplitudes are clipped into `[0, 1]` and the
    /// reflection split is set to `1 - beta_t`.
    pub fn from_q_vectors(q_t: &CVector, q_r: &CVector) -> Result<Self> {
        if q_t.len() != q_r.len() {
            return Err(Error::Dimension { expected: q_t.len(), got: q_r.len() });
        }
        let beta_t = q_t.map(|z| z.norm_sqr().clamp(0.0, 1.0));
        let phi_t = q_t.map(|z| -z.arg());
        let phi_r = q_r.map(|z| -z.arg());
        Self::new(beta_t, phi_t, phi_r)
    }

    pub fn energy_split_error(&self) -> f64 {
        self.beta_t
            .iter()
            .zip(self.beta_r.iter())
            .map(|(t, r)| (t + r - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn q_vector(beta: &DVector<f64>, phi: &DVector<f64>) -> CVector {
    CVector::from_fn(beta.len(), |i, _| C64::from_polar(beta[i].max(0.0).sqrt(), -phi[i]))
}

/// Random phases in `[0, 2*pi)` drawn from `rng`.
pub fn random_phases<R: rand::Rng + ?Sized>(rng: &mut R, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.gen::<f64>() * 2.0 * PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub p_u: f64,
    pub p_d: f64,
}

impl PowerAllocation {
    pub fn new(p_u: f64, p_d: f64) -> Self {
        Self { p_u, p_d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModelParams {
    /// Other circuit power.
    pub p_c: f64,
    /// Per-element power.
    pub p_s: f64,
    /// SIC circuit power.
    pub p_c0: f64,
    /// Isolation factor of propagation-domain SIC.
    pub xi: f64,
    /// Amplifier efficiency.
    pub rho: f64,
}

impl PowerModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.p_c < 0.0 || self.p_s < 0.0 || self.p_c0 < 0.0 || self.xi < 0.0 {
            return Err(Error::Domain("power model terms must be non-negative".into()));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Domain(format!("amplifier efficiency {} outside (0, 1]", self.rho)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_u_sq: f64,
    pub sigma_d_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstraints {
    /// Minimum UL rate, bps/Hz.
    pub r_u_th: f64,
    /// Minimum DL rate, bps/Hz.
    pub r_d_th: f64,
    pub p_u_max: f64,
    pub p_d_max: f64,
}

impl RateConstraints {
    /// Linear SINR targets `2^(R_th / prelog) - 1` for (UL, DL).
    pub fn sinr_targets(&self, duplex: Duplex) -> (f64, f64) {
        let pre = duplex.prelog();
        ((self.r_u_th / pre).exp2() - 1.0, (self.r_d_th / pre).exp2() - 1.0)
    }
}

/// Everything apart from channels and decision variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub noise: NoiseParams,
    pub constraints: RateConstraints,
    pub power: PowerModelParams,
    pub duplex: Duplex,
}

impl Default for SystemParams {
    /// Full duplex, -90 dBm noise, thresholds of 1 (UL) and 3 (DL) bps/Hz,
    /// caps of 20 dBm (UL) and 30 dBm (DL), 30 dBm circuit power, 50 mW for
    /// SIC, 6 dBm per element, isolation 0.1 and amplifier efficiency 0.8.
    fn default() -> Self {
        let noise = dbm_to_watts(-90.0);
        Self {
            noise: NoiseParams { sigma_u_sq: noise, sigma_d_sq: noise },
            constraints: RateConstraints {
                r_u_th: 1.0,
                r_d_th: 3.0,
                p_u_max: dbm_to_watts(20.0),
                p_d_max: dbm_to_watts(30.0),
            },
            power: PowerModelParams { p_c: dbm_to_watts(30.0), p_s: dbm_to_watts(6.0), p_c0: 0.05, xi: 0.1, rho: 0.8 },
            duplex: Duplex::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveGains {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma_bb: f64,
}

impl EffectiveGains {
    /// Gains as seen in the given duplex mode: half duplex has neither RSI
    /// nor co-channel interference.
    pub fn for_duplex(self, duplex: Duplex) -> Self {
        match duplex {
            Duplex::Full => self,
            Duplex::Half => Self { gamma3: 0.0, gamma_bb: 0.0, ..self },
        }
    }
}

pub fn effective_gains(profile: &StarRisProfile, cc: &CompositeChannels) -> EffectiveGains {
    let q_t = profile.q_t();
    let q_r = profile.q_r();
    EffectiveGains {
        gamma1: q_r.dotc(&cc.h1).norm_sqr(),
        gamma2: q_t.dotc(&cc.h2).norm_sqr(),
        gamma3: q_t.dotc(&cc.h3).norm_sqr(),
        gamma_bb: cc.h_bb.norm_sqr(),
    }
}

pub fn rate_uplink(p: &PowerAllocation, g: &EffectiveGains, n: &NoiseParams) -> f64 {
    (1.0 + p.p_u * g.gamma1 / (p.p_d * g.gamma_bb + n.sigma_u_sq)).log2()
}

pub fn rate_downlink(p: &PowerAllocation, g: &EffectiveGains, n: &NoiseParams) -> f64 {
    (1.0 + p.p_d * g.gamma2 / (p.p_u * g.gamma3 + n.sigma_d_sq)).log2()
}

/// (UL, DL) rates in the given duplex mode.
pub fn rates(p: &PowerAllocation, g: &EffectiveGains, n: &NoiseParams, duplex: Duplex) -> (f64, f64) {
    let g = g.for_duplex(duplex);
    let pre = duplex.prelog();
    (pre * rate_uplink(p, &g, n), pre * rate_downlink(p, &g, n))
}

/// Total consumption as an affine function of (p_u, p_d).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerCost {
    pub constant: f64,
    pub per_uplink: f64,
    pub per_downlink: f64,
}

impl PowerCost {
    pub fn new(m: usize, pm: &PowerModelParams, duplex: Duplex) -> Self {
        let elements = m as f64 * pm.p_s;
        match duplex {
            Duplex::Full => Self {
                constant: pm.p_c + elements + pm.p_c0,
                per_uplink: 1.0 / pm.rho,
                per_downlink: 1.0 / pm.rho + pm.xi,
            },
            // Each terminal is active for half the time and no SIC is needed.
            Duplex::Half => Self {
                constant: pm.p_c + elements,
                per_uplink: 0.5 / pm.rho,
                per_downlink: 0.5 / pm.rho,
            },
        }
    }

    pub fn eval(&self, p: &PowerAllocation) -> f64 {
        self.constant + self.per_uplink * p.p_u + self.per_downlink * p.p_d
    }
}

/// Full-duplex consumption `P_c + (p_u + p_d)/rho + M*P_s + xi*p_d + P_c0`.
pub fn total_power(p: &PowerAllocation, m: usize, pm: &PowerModelParams) -> f64 {
    PowerCost::new(m, pm, Duplex::Full).eval(p)
}

/// Sum rate over total power, bps/Hz per watt.
pub fn energy_efficiency(
    p: &PowerAllocation,
    profile: &StarRisProfile,
    cc: &CompositeChannels,
    sys: &SystemParams,
) -> f64 {
    let g = effective_gains(profile, cc);
    let (ru, rd) = rates(p, &g, &sys.noise, sys.duplex);
    (ru + rd) / PowerCost::new(profile.num_elements(), &sys.power, sys.duplex).eval(p)
}

/// The four log terms whose combination `f1 + f2 - f3 - f4` is the
/// full-duplex sum rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposedRate {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f4: f64,
}

impl DecomposedRate {
    pub fn sum_rate(&self) -> f64 {
        self.f1 + self.f2 - self.f3 - self.f4
    }
}

pub fn decomposed_sum_rate(p: &PowerAllocation, g: &EffectiveGains, n: &NoiseParams) -> DecomposedRate {
    let ul_interf = p.p_d * g.gamma_bb + n.sigma_u_sq;
    let dl_interf = p.p_u * g.gamma3 + n.sigma_d_sq;
    DecomposedRate {
        f1: (ul_interf + p.p_u * g.gamma1).log2(),
        f2: (dl_interf + p.p_d * g.gamma2).log2(),
        f3: ul_interf.log2(),
        f4: dl_interf.log2(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintId {
    UplinkRate,
    DownlinkRate,
    UplinkPowerLower,
    UplinkPowerUpper,
    DownlinkPowerLower,
    DownlinkPowerUpper,
    EnergySplit,
    AmplitudeRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub r_u: f64,
    pub r_d: f64,
    pub ee: f64,
    pub violations: Vec<(ConstraintId, f64)>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_solution(
    p: &PowerAllocation,
    profile: &StarRisProfile,
    cc: &CompositeChannels,
    sys: &SystemParams,
) -> FeasibilityReport {
    let g = effective_gains(profile, cc);
    let (r_u, r_d) = rates(p, &g, &sys.noise, sys.duplex);
    let cost = PowerCost::new(profile.num_elements(), &sys.power, sys.duplex);
    let ee = (r_u + r_d) / cost.eval(p);
    let c = &sys.constraints;

    let amplitude_slack = profile
        .beta_t
        .iter()
        .chain(profile.beta_r.iter())
        .map(|b| b.min(1.0 - b))
        .fold(f64::INFINITY, f64::min);

    let slacks = [
        (ConstraintId::UplinkRate, r_u - c.r_u_th),
        (ConstraintId::DownlinkRate, r_d - c.r_d_th),
        (ConstraintId::UplinkPowerLower, p.p_u),
        (ConstraintId::UplinkPowerUpper, c.p_u_max - p.p_u),
        (ConstraintId::DownlinkPowerLower, p.p_d),
        (ConstraintId::DownlinkPowerUpper, c.p_d_max - p.p_d),
        (ConstraintId::EnergySplit, -profile.energy_split_error()),
        (ConstraintId::AmplitudeRange, amplitude_slack),
    ];
    let violations = slacks
        .into_iter()
        .filter(|(_, s)| !(*s >= -FEASIBILITY_TOL))
        .collect();
    FeasibilityReport { r_u, r_d, ee, violations }
}
