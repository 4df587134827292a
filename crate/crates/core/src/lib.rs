//! Energy-efficiency optimization for a STAR-RIS assisted full-duplex link.
//!
//! A full-duplex base station serves an uplink and a downlink user through a
//! simultaneously transmitting and reflecting surface. The crate generates
//! channels, evaluates rates and power consumption, and jointly optimizes
//! transmit powers (Dinkelbach iterations with linearized interference terms)
//! and the surface profile (penalized semidefinite relaxation with successive
//! convex approximation) under alternating optimization. Baseline schemes and
//! Monte-Carlo sweeps sit on top.

pub mod beamformer;
pub mod channel;
pub mod convex;
pub mod error;
pub mod harness;
pub mod power;
pub mod schemes;
pub mod system;
pub mod units;

pub use error::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;
pub type CVector = nalgebra::DVector<C64>;
pub type CMatrix = nalgebra::DMatrix<C64>;
