//! Browser bindings. Every export returns a JSON string; the native
//! functions behind them are plain Rust and tested without a browser.

use psqam_core::constellation::{ConstellationExport, DEFAULT_CODE_RATE};
use psqam_core::cpr::UpdatePolicy;
use psqam_core::framing::PilotRatio;
use psqam_core::harness::{Format, Gains, SimSettings, Simulator};
use psqam_core::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Longest series handed to the page; longer traces are decimated.
pub const MAX_PLOT_POINTS: usize = 1500;
const MAX_SCATTER_POINTS: usize = 3000;

/// Uniform `order`-QAM, or when `shaped_for` is set the shaped `order`-QAM
/// carrying the rate of uniform `shaped_for`-QAM.
pub fn format(order: usize, shaped_for: Option<usize>) -> Result<Format> {
    match shaped_for {
        None => Format::uniform(order, DEFAULT_CODE_RATE),
        Some(us) => Format::equal_rate_pair(order, us, DEFAULT_CODE_RATE).map(|(ps, _)| ps),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Tracking {
    pub format: String,
    pub gmi: f64,
    pub ngmi: f64,
    pub air: f64,
    pub decision_error_rate: f64,
    /// Symbol index of each plotted sample.
    pub n: Vec<usize>,
    pub phi: Vec<f64>,
    pub phi_hat: Vec<f64>,
    /// Compensated payload symbols after the settling guard.
    pub scatter: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvePoint {
    pub snr_db: f64,
    pub gmi: f64,
    pub ngmi: f64,
    pub air: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Link {
    pub linewidth_hz: f64,
    pub gains: Gains,
    pub pilot_period: usize,
    pub pilot_only: bool,
    pub payload_symbols: usize,
    pub seed: u64,
}

impl Link {
    fn settings(&self) -> SimSettings {
        SimSettings {
            payload_symbols: self.payload_symbols,
            seeds: 1,
            master_seed: self.seed,
            settle_guard: 500,
            ..SimSettings::default()
        }
    }

    fn policy(&self) -> UpdatePolicy {
        if self.pilot_only {
            UpdatePolicy::PilotOnly
        } else {
            UpdatePolicy::AllSymbols
        }
    }
}

fn stride(len: usize, max: usize) -> usize {
    len.div_ceil(max).max(1)
}

pub fn constellation(order: usize, shaped_for: Option<usize>) -> Result<ConstellationExport> {
    Ok(format(order, shaped_for)?.constellation.export())
}

pub fn phase_tracking(order: usize, shaped_for: Option<usize>, snr_db: f64, link: &Link) -> Result<Tracking> {
    let f = format(order, shaped_for)?;
    let settings = link.settings();
    let sim = Simulator::new(&settings, &f);
    let prep = sim.prepare_seed(link.linewidth_hz, PilotRatio::from_period(link.pilot_period)?, 0)?;
    let (outcome, trace) = sim.run_traced(&prep, snr_db, link.gains, link.policy())?;

    let k = stride(trace.phi_hat.len(), MAX_PLOT_POINTS);
    let n: Vec<usize> = (0..trace.phi_hat.len()).step_by(k).collect();
    let pos = prep.metric_positions();
    let scatter = pos
        .iter()
        .step_by(stride(pos.len(), MAX_SCATTER_POINTS))
        .map(|&i| [trace.compensated[i].re, trace.compensated[i].im])
        .collect();
    Ok(Tracking {
        format: f.name.clone(),
        gmi: outcome.gmi,
        ngmi: outcome.ngmi,
        air: outcome.air,
        decision_error_rate: outcome.decision_error_rate,
        phi: n.iter().map(|&i| prep.draw.phase[i]).collect(),
        phi_hat: n.iter().map(|&i| trace.phi_hat[i]).collect(),
        n,
        scatter,
    })
}

/// NGMI against SNR on one shared frame and channel draw.
pub fn ngmi_curve(order: usize, shaped_for: Option<usize>, snr_db: &[f64], link: &Link) -> Result<Vec<CurvePoint>> {
    let f = format(order, shaped_for)?;
    let settings = link.settings();
    let sim = Simulator::new(&settings, &f);
    let prep = sim.prepare_seed(link.linewidth_hz, PilotRatio::from_period(link.pilot_period)?, 0)?;
    snr_db
        .iter()
        .map(|&s| {
            let o = sim.run(&prep, s, link.gains, link.policy())?;
            Ok(CurvePoint {
                snr_db: s,
                gmi: o.gmi,
                ngmi: o.ngmi,
                air: o.air,
            })
        })
        .collect()
}

fn json<T: Serialize>(value: &T) -> std::result::Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

fn shaped(us_order: usize) -> Option<usize> {
    (us_order > 0).then_some(us_order)
}

/// `shaped_for = 0` selects the uniform constellation.
#[wasm_bindgen]
pub fn constellation_json(order: usize, shaped_for: usize) -> std::result::Result<String, JsError> {
    json(&constellation(order, shaped(shaped_for))?)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn phase_tracking_json(
    order: usize,
    shaped_for: usize,
    linewidth_hz: f64,
    snr_db: f64,
    k1: f64,
    k2: f64,
    pilot_period: usize,
    pilot_only: bool,
    payload_symbols: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    let link = Link {
        linewidth_hz,
        gains: Gains::new(k1, k2),
        pilot_period,
        pilot_only,
        payload_symbols,
        seed: seed.into(),
    };
    json(&phase_tracking(order, shaped(shaped_for), snr_db, &link)?)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn ngmi_curve_json(
    order: usize,
    shaped_for: usize,
    linewidth_hz: f64,
    k1: f64,
    k2: f64,
    pilot_period: usize,
    pilot_only: bool,
    snr_from_db: f64,
    snr_to_db: f64,
    steps: usize,
    payload_symbols: usize,
    seed: u32,
) -> std::result::Result<String, JsError> {
    let steps = steps.max(2);
    let grid: Vec<f64> = (0..steps)
        .map(|i| snr_from_db + (snr_to_db - snr_from_db) * i as f64 / (steps - 1) as f64)
        .collect();
    let link = Link {
        linewidth_hz,
        gains: Gains::new(k1, k2),
        pilot_period,
        pilot_only,
        payload_symbols,
        seed: seed.into(),
    };
    json(&ngmi_curve(order, shaped(shaped_for), &grid, &link)?)
}
