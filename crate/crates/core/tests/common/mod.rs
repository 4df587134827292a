//! Independent oracles shared by the integration tests. Rates and power are
//! re-derived here from the raw link vectors rather than taken from the
//! library.

#![allow(dead_code)]

use std::f64::consts::PI;

use star_ris_ee::channel::{draw_channel_set, ChannelParams, ChannelSet, Geometry};
use star_ris_ee::system::SystemParams;
use star_ris_ee::{CVector, C64};

pub fn channels(m: usize, seed: u64) -> ChannelSet {
    let params = ChannelParams { num_elements: m, ..ChannelParams::default() };
    draw_channel_set(&Geometry::default(), &params, seed).unwrap()
}

/// Thresholds of zero leave only the power box.
pub fn unconstrained() -> SystemParams {
    let mut sys = SystemParams::default();
    sys.constraints.r_u_th = 0.0;
    sys.constraints.r_d_th = 0.0;
    sys
}

/// Received power of the cascade `h_a^H Diag(c) h_b` for coefficients `c`.
fn cascade(h_a: &CVector, c: &[C64], h_b: &CVector) -> f64 {
    let s: C64 = (0..c.len()).map(|m| h_a[m].conj() * c[m] * h_b[m]).sum();
    s.norm_sqr()
}

/// (gamma1, gamma2, gamma3) of a surface described by per-element
/// transmission amplitudes squared and phases.
pub fn gains(cs: &ChannelSet, beta_t: &[f64], phi_t: &[f64], phi_r: &[f64]) -> (f64, f64, f64) {
    let ct: Vec<C64> = beta_t.iter().zip(phi_t).map(|(&b, &p)| C64::from_polar(b.sqrt(), p)).collect();
    let cr: Vec<C64> = beta_t.iter().zip(phi_r).map(|(&b, &p)| C64::from_polar((1.0 - b).sqrt(), p)).collect();
    (cascade(&cs.h_ib, &cr, &cs.h_ui), cascade(&cs.h_id, &ct, &cs.h_bi), cascade(&cs.h_id, &ct, &cs.h_ui))
}

pub struct Evaluation {
    pub r_u: f64,
    pub r_d: f64,
    pub power: f64,
}

impl Evaluation {
    pub fn ee(&self) -> f64 {
        (self.r_u + self.r_d) / self.power
    }

    pub fn meets(&self, sys: &SystemParams) -> bool {
        self.r_u >= sys.constraints.r_u_th && self.r_d >= sys.constraints.r_d_th
    }
}

/// Full-duplex rates and consumed power at powers `(p_u, p_d)`.
pub fn evaluate(g: (f64, f64, f64), gamma_bb: f64, p_u: f64, p_d: f64, m: usize, sys: &SystemParams) -> Evaluation {
    let (g1, g2, g3) = g;
    let n = &sys.noise;
    let pm = &sys.power;
    Evaluation {
        r_u: (1.0 + p_u * g1 / (p_d * gamma_bb + n.sigma_u_sq)).log2(),
        r_d: (1.0 + p_d * g2 / (p_u * g3 + n.sigma_d_sq)).log2(),
        power: pm.p_c + (p_u + p_d) / pm.rho + m as f64 * pm.p_s + pm.xi * p_d + pm.p_c0,
    }
}

fn levels(n: usize, max: f64) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| max * k as f64 / (n - 1) as f64)
}

/// Keeps triples not dominated by another one with larger-or-equal useful
/// gains and smaller-or-equal interference. Rates, EE and both constraints
/// are monotone in each gain at any fixed powers, so the optimum over the
/// full set equals the optimum over the survivors.
fn pareto(mut v: Vec<(f64, f64, f64)>) -> Vec<(f64, f64, f64)> {
    v.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.total_cmp(&b.2)));
    let mut kept: Vec<(f64, f64, f64)> = Vec::new();
    for c in v {
        if !kept.iter().any(|k| k.0 >= c.0 && k.1 >= c.1 && k.2 <= c.2) {
            kept.push(c);
        }
    }
    kept
}

/// Gains of every two-element profile on the grid of `phase_levels` phases
/// and `beta_levels` transmission splits per element, with the first
/// element's phases at zero on both sides (a common phase does not change
/// any gain). Dominated triples are dropped.
pub fn two_element_gain_grid(cs: &ChannelSet, phase_levels: usize, beta_levels: usize) -> Vec<(f64, f64, f64)> {
    assert_eq!(cs.h_ui.len(), 2);
    let phases: Vec<f64> = (0..phase_levels).map(|k| 2.0 * PI * k as f64 / phase_levels as f64).collect();
    let betas: Vec<f64> = levels(beta_levels, 1.0).collect();
    let mut all = Vec::new();
    for &b0 in &betas {
        for &b1 in &betas {
            let beta = [b0, b1];
            let g1 = phases.iter().map(|&p| gains(cs, &beta, &[0.0, 0.0], &[0.0, p]).0).fold(0.0, f64::max);
            for &p in &phases {
                let (_, g2, g3) = gains(cs, &beta, &[0.0, p], &[0.0, 0.0]);
                all.push((g1, g2, g3));
            }
        }
    }
    pareto(all)
}

/// Highest constrained EE over the gain grid and a `power_levels` x
/// `power_levels` grid spanning each power box, endpoints included.
pub fn joint_exhaustive_ee(cs: &ChannelSet, sys: &SystemParams, power_levels: usize) -> f64 {
    let m = cs.h_ui.len();
    let gamma_bb = cs.h_bb.norm_sqr();
    let grid = two_element_gain_grid(cs, 32, 21);
    let mut best = f64::NEG_INFINITY;
    for p_u in levels(power_levels, sys.constraints.p_u_max) {
        for p_d in levels(power_levels, sys.constraints.p_d_max) {
            for &g in &grid {
                let e = evaluate(g, gamma_bb, p_u, p_d, m, sys);
                if e.meets(sys) {
                    best = best.max(e.ee());
                }
            }
        }
    }
    best
}

/// Highest constrained sum rate over the gain grid at fixed powers.
pub fn profile_exhaustive_rate(cs: &ChannelSet, sys: &SystemParams, p_u: f64, p_d: f64) -> f64 {
    let gamma_bb = cs.h_bb.norm_sqr();
    two_element_gain_grid(cs, 32, 21)
        .into_iter()
        .map(|g| evaluate(g, gamma_bb, p_u, p_d, 2, sys))
        .filter(|e| e.meets(sys))
        .map(|e| e.r_u + e.r_d)
        .fold(f64::NEG_INFINITY, f64::max)
}
