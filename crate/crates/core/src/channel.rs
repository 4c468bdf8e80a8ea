//! Wiener laser phase noise plus AWGN at symbol rate.
//!
//! `r(n) = t(n) e^{jφ(n)} + N(n)` with `φ(n) = φ(n-1) + w(n)`,
//! `w(n) ~ N(0, 2π Δf τ)` and circular complex noise of total power
//! `10^(-snr_db/10)` relative to a unit-power signal.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_SYMBOL_RATE: f64 = 16e9;

/// Initial laser phase `φ(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPhase {
    #[default]
    Zero,
    /// Uniform on `[-π, π)`, drawn from its own substream.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Combined transmitter and receiver linewidth (Hz).
    pub linewidth_hz: f64,
    pub symbol_rate_baud: f64,
    /// Signal power over total complex noise power; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
    pub initial_phase: InitialPhase,
}

impl ChannelParams {
    pub fn new(linewidth_hz: f64, snr_db: f64, seed: u64) -> Self {
        ChannelParams {
            linewidth_hz,
            symbol_rate_baud: DEFAULT_SYMBOL_RATE,
            snr_db,
            seed,
            initial_phase: InitialPhase::Zero,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.linewidth_hz >= 0.0 && self.linewidth_hz.is_finite()) {
            return Err(Error::config("linewidth_hz", "must be finite and >= 0"));
        }
        if !(self.symbol_rate_baud > 0.0 && self.symbol_rate_baud.is_finite()) {
            return Err(Error::config("symbol_rate_baud", "must be finite and > 0"));
        }
        if self.snr_db.is_nan() {
            return Err(Error::config("snr_db", "must not be NaN"));
        }
        Ok(())
    }

    /// Per-symbol variance of the Wiener increments, `2π Δf τ` (rad²).
    pub fn phase_increment_variance(&self) -> f64 {
        increment_variance(self.linewidth_hz, self.symbol_rate_baud)
    }

    pub fn noise_var(&self) -> f64 {
        noise_var_for_snr(self.snr_db)
    }
}

pub fn increment_variance(linewidth_hz: f64, symbol_rate_baud: f64) -> f64 {
    TAU * linewidth_hz / symbol_rate_baud
}

/// Total complex noise power for a unit-power signal.
pub fn noise_var_for_snr(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// Approximate single-polarization OSNR in a 12.5 GHz reference bandwidth.
pub fn snr_to_osnr_db(snr_db: f64, symbol_rate_baud: f64) -> f64 {
    snr_db + 10.0 * (symbol_rate_baud / 12.5e9).log10()
}

#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub phase: Vec<f64>,
    pub rx_symbols: Vec<Complex64>,
    /// Total complex noise power used to draw `N(n)`.
    pub noise_var: f64,
}

fn initial_phase(params: &ChannelParams) -> f64 {
    match params.initial_phase {
        InitialPhase::Zero => 0.0,
        InitialPhase::Uniform => {
            let mut rng = stream_rng(params.seed, Stream::InitialPhase);
            rng.random_range(-PI..PI)
        }
    }
}

/// Wiener phase path of `n_symbols` samples.
pub fn wiener_phase(n_symbols: usize, params: &ChannelParams) -> Vec<f64> {
    let sigma = params.phase_increment_variance().sqrt();
    let mut rng = stream_rng(params.seed, Stream::Phase);
    let mut phase = Vec::with_capacity(n_symbols);
    let mut phi = initial_phase(params);
    for n in 0..n_symbols {
        if n > 0 {
            let w: f64 = rng.sample(StandardNormal);
            phi += sigma * w;
        }
        phase.push(phi);
    }
    phase
}

/// Unit-variance circular noise draws, scaled per SNR later.
fn unit_noise(n_symbols: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = stream_rng(seed, Stream::Noise);
    (0..n_symbols)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        })
        .collect()
}

/// Channel randomness for one seed, reusable across SNR values.
///
/// Noise is stored at unit power, so every SNR sees the same underlying
/// draws scaled by `σ_N`.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub phase: Vec<f64>,
    unit_noise: Vec<Complex64>,
}

impl ChannelDraw {
    pub fn new(n_symbols: usize, params: &ChannelParams) -> Self {
        ChannelDraw {
            phase: wiener_phase(n_symbols, params),
            unit_noise: unit_noise(n_symbols, params.seed),
        }
    }

    /// Uses a caller-supplied phase path instead of the Wiener process.
    pub fn with_phase(phase: Vec<f64>, seed: u64) -> Self {
        let unit_noise = unit_noise(phase.len(), seed);
        ChannelDraw { phase, unit_noise }
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    pub fn apply(&self, tx_symbols: &[Complex64], snr_db: f64) -> Result<ChannelRealization> {
        if tx_symbols.len() != self.phase.len() {
            return Err(Error::LengthMismatch {
                what: "tx symbols",
                got: tx_symbols.len(),
                expected: self.phase.len(),
            });
        }
        let noise_var = noise_var_for_snr(snr_db);
        let sigma = noise_var.sqrt();
        let rx_symbols = tx_symbols
            .iter()
            .zip(&self.phase)
            .zip(&self.unit_noise)
            .map(|((t, &phi), z)| {
                let rotated = if phi == 0.0 { *t } else { t * Complex64::cis(phi) };
                if sigma == 0.0 {
                    rotated
                } else {
                    rotated + z * sigma
                }
            })
            .collect();
        Ok(ChannelRealization {
            phase: self.phase.clone(),
            rx_symbols,
            noise_var,
        })
    }
}

/// Passes `tx_symbols` (unit average power) through the channel.
pub fn apply_channel(tx_symbols: &[Complex64], params: &ChannelParams) -> Result<ChannelRealization> {
    params.validate()?;
    ChannelDraw::new(tx_symbols.len(), params).apply(tx_symbols, params.snr_db)
}

/// Same as [`apply_channel`] with a forced phase path.
pub fn apply_with_phase(
    tx_symbols: &[Complex64],
    phase: Vec<f64>,
    params: &ChannelParams,
) -> Result<ChannelRealization> {
    params.validate()?;
    ChannelDraw::with_phase(phase, params.seed).apply(tx_symbols, params.snr_db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|k| Complex64::cis(0.25 * PI + 0.5 * PI * (k % 4) as f64))
            .collect()
    }

    #[test]
    fn zero_linewidth_is_flat() {
        let p = ChannelParams::new(0.0, 20.0, 1);
        assert!(wiener_phase(1000, &p).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn increment_variance_50khz() {
        let p = ChannelParams::new(50e3, 20.0, 1);
        assert!((p.phase_increment_variance() - 1.9635e-5).abs() < 1e-9);
    }

    #[test]
    fn identity_channel() {
        let t = tx(64);
        let r = apply_channel(&t, &ChannelParams::new(0.0, f64::INFINITY, 9)).unwrap();
        assert_eq!(r.rx_symbols, t);
        assert_eq!(r.noise_var, 0.0);
    }

    #[test]
    fn half_turn() {
        let t = tx(16);
        let r = apply_with_phase(&t, vec![PI; 16], &ChannelParams::new(0.0, f64::INFINITY, 1)).unwrap();
        for (a, b) in r.rx_symbols.iter().zip(&t) {
            assert!((a + b).norm() < 1e-15);
        }
    }

    #[test]
    fn noise_power_at_10db() {
        let t = tx(1_000_000);
        let r = apply_channel(&t, &ChannelParams::new(0.0, 10.0, 4)).unwrap();
        let p: f64 = r
            .rx_symbols
            .iter()
            .zip(&t)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / t.len() as f64;
        assert!((p - 0.1).abs() < 0.001, "noise power {p}");
    }

    #[test]
    fn phase_path_ignores_snr() {
        let a = ChannelDraw::new(500, &ChannelParams::new(40e3, 10.0, 77));
        let b = ChannelDraw::new(500, &ChannelParams::new(40e3, 25.0, 77));
        assert_eq!(a.phase, b.phase);
    }

    #[test]
    fn uniform_initial_phase_differs_by_seed() {
        let mut p = ChannelParams::new(0.0, 10.0, 1);
        p.initial_phase = InitialPhase::Uniform;
        let a = wiener_phase(3, &p)[0];
        p.seed = 2;
        let b = wiener_phase(3, &p)[0];
        assert!(a != b && a.abs() <= PI && b.abs() <= PI);
    }

    #[test]
    fn length_mismatch_rejected() {
        let d = ChannelDraw::new(10, &ChannelParams::new(0.0, 10.0, 1));
        assert!(d.apply(&tx(9), 10.0).is_err());
    }

    #[test]
    fn osnr_helper() {
        assert!((snr_to_osnr_db(20.0, 12.5e9) - 20.0).abs() < 1e-12);
        assert!((snr_to_osnr_db(20.0, 16e9) - (20.0 + 10.0 * 1.28f64.log10())).abs() < 1e-12);
    }
}
