//! Monte Carlo simulator for the laser phase-noise tolerance of uniformly
//! and probabilistically shaped square QAM.
//!
//! The pipeline is: [`constellation`] (Gray-labelled QAM, Maxwell-Boltzmann
//! priors) → [`framing`] (training, pilots, i.i.d. payload) → [`channel`]
//! (Wiener phase noise + AWGN) → [`cpr`] (pilot-assisted decision-directed
//! PLL) → [`metrics`] (LLR, GMI, NGMI, AIR). [`harness`] runs gain
//! optimization, required-SNR searches and sweeps on top, and [`cli`]
//! handles configuration and result files.

pub mod channel;
pub mod cli;
pub mod config;
pub mod constellation;
pub mod cpr;
pub mod error;
pub mod framing;
pub mod harness;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
