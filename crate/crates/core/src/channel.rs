//! Channel generation: large-scale path loss times Rician small-scale fading
//! for the four RIS-side links, plus the Rayleigh residual self-interference
//! coefficient at the base station.
//!
//! The surface is modelled as a half-wavelength uniform linear array lying on
//! the x-axis, so the line-of-sight component towards a terminal is the
//! steering vector `exp(j*pi*m*sin(theta))` with `sin(theta) = dx / d`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::db_to_linear;
use crate::{CVector, C64};

pub type Position = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub bs_pos: Position,
    pub ris_pos: Position,
    pub ul_pos: Position,
    pub dl_pos: Position,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            bs_pos: [5.0, 45.0],
            ris_pos: [0.0, 50.0],
            ul_pos: [0.0, 35.0],
            dl_pos: [0.0, 100.0],
        }
    }
}

fn distance(a: Position, b: Position) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Geometry {
    pub fn ris_to_bs(&self) -> f64 {
        distance(self.ris_pos, self.bs_pos)
    }

    pub fn ris_to_ul(&self) -> f64 {
        distance(self.ris_pos, self.ul_pos)
    }

    pub fn ris_to_dl(&self) -> f64 {
        distance(self.ris_pos, self.dl_pos)
    }

    /// Sine of the angle between the surface normal and the direction to `p`.
    fn sin_angle(&self, p: Position) -> f64 {
        let d = distance(self.ris_pos, p);
        (p[0] - self.ris_pos[0]) / d
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [
            ("RIS-BS", self.ris_to_bs()),
            ("RIS-UL", self.ris_to_ul()),
            ("RIS-DL", self.ris_to_dl()),
        ] {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Domain(format!("{name} distance must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// Propagation parameters, all in linear units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Path-loss gain at the 1 m reference distance.
    pub reference_gain: f64,
    pub exponent: f64,
    /// Rician K factor. `f64::INFINITY` gives a pure line-of-sight channel.
    pub rician_k: f64,
    pub num_elements: usize,
    /// Variance of the residual self-interference coefficient.
    pub sigma_si_sq: f64,
}

impl Default for ChannelParams {
    /// -30 dB at 1 m, exponent 2.2, 3 dB Rician factor, 50 elements and
    /// -100 dB residual self-interference.
    fn default() -> Self {
        Self {
            reference_gain: db_to_linear(-30.0),
            exponent: 2.2,
            rician_k: db_to_linear(3.0),
            num_elements: 50,
            sigma_si_sq: db_to_linear(-100.0),
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.exponent > 0.0) {
            return Err(Error::Domain(format!("path-loss exponent must be positive, got {}", self.exponent)));
        }
        if !(self.rician_k >= 0.0) {
            return Err(Error::Domain(format!("Rician factor must be non-negative, got {}", self.rician_k)));
        }
        if self.num_elements == 0 {
            return Err(Error::Domain("need at least one element".into()));
        }
        if !(self.sigma_si_sq >= 0.0) {
            return Err(Error::Domain(format!("RSI variance must be non-negative, got {}", self.sigma_si_sq)));
        }
        if !(self.reference_gain > 0.0) {
            return Err(Error::Domain("reference gain must be positive".into()));
        }
        Ok(())
    }
}

/// One realization of every link in the system.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// UL user to surface.
    pub h_ui: CVector,
    /// Surface to BS; the row channel is `h_ib^H`.
    pub h_ib: CVector,
    /// BS to surface.
    pub h_bi: CVector,
    /// Surface to DL user; the row channel is `h_id^H`.
    pub h_id: CVector,
    /// Residual self-interference at the BS.
    pub h_bb: C64,
}

impl ChannelSet {
    pub fn num_elements(&self) -> usize {
        self.h_ui.len()
    }
}

/// Cascaded channels seen through a diagonal surface response.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeChannels {
    /// `Diag(h_ib^H) h_ui`, UL user to BS through the reflection side.
    pub h1: CVector,
    /// `Diag(h_id^H) h_bi`, BS to DL user through the transmission side.
    pub h2: CVector,
    /// `Diag(h_id^H) h_ui`, UL user to DL user (co-channel interference).
    pub h3: CVector,
    pub h_bb: C64,
}

impl CompositeChannels {
    pub fn num_elements(&self) -> usize {
        self.h1.len()
    }
}

pub fn path_loss_gain(d: f64, params: &ChannelParams) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {d}")));
    }
    // d0 = 1 m
    Ok(params.reference_gain * d.powf(-params.exponent))
}

fn complex_normal(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn rician_link(
    rng: &mut ChaCha8Rng,
    m: usize,
    gain: f64,
    sin_angle: f64,
    k: f64,
) -> CVector {
    let (los_w, nlos_w) = if k.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    };
    let amp = gain.sqrt();
    DVector::from_fn(m, |i, _| {
        let los = C64::from_polar(1.0, std::f64::consts::PI * i as f64 * sin_angle);
        let nlos = complex_normal(rng);
        (los * los_w + nlos * nlos_w) * amp
    })
}

/// Draws all links from a seeded stream. The RSI coefficient is drawn as a
/// unit-variance sample and then scaled, so changing `sigma_si_sq` alone
/// rescales `h_bb` without disturbing any other draw.
pub fn draw_channel_set(geometry: &Geometry, params: &ChannelParams, seed: u64) -> Result<ChannelSet> {
    geometry.validate()?;
    params.validate()?;
    let m = params.num_elements;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = params.rician_k;

    let g_ui = path_loss_gain(geometry.ris_to_ul(), params)?;
    let g_ib = path_loss_gain(geometry.ris_to_bs(), params)?;
    let g_id = path_loss_gain(geometry.ris_to_dl(), params)?;

    let s_ul = geometry.sin_angle(geometry.ul_pos);
    let s_bs = geometry.sin_angle(geometry.bs_pos);
    let s_dl = geometry.sin_angle(geometry.dl_pos);

    let h_ui = rician_link(&mut rng, m, g_ui, s_ul, k);
    let h_ib = rician_link(&mut rng, m, g_ib, s_bs, k);
    let h_bi = rician_link(&mut rng, m, g_ib, s_bs, k);
    let h_id = rician_link(&mut rng, m, g_id, s_dl, k);
    let h_bb = complex_normal(&mut rng) * params.sigma_si_sq.sqrt();

    Ok(ChannelSet { h_ui, h_ib, h_bi, h_id, h_bb })
}

fn check_len(v: &CVector, m: usize) -> Result<()> {
    if v.len() != m {
        return Err(Error::Dimension { expected: m, got: v.len() });
    }
    Ok(())
}

pub fn composite_channels(cs: &ChannelSet) -> Result<CompositeChannels> {
    let m = cs.h_ui.len();
    check_len(&cs.h_ib, m)?;
    check_len(&cs.h_bi, m)?;
    check_len(&cs.h_id, m)?;
    let h1 = cs.h_ib.zip_map(&cs.h_ui, |b, u| b.conj() * u);
    let h2 = cs.h_id.zip_map(&cs.h_bi, |d, b| d.conj() * b);
    let h3 = cs.h_id.zip_map(&cs.h_ui, |d, u| d.conj() * u);
    Ok(CompositeChannels { h1, h2, h3, h_bb: cs.h_bb })
}
