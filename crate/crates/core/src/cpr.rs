//! Pilot-assisted, decision-directed second-order digital PLL.
//!
//! For every symbol `n ≥ 1` the loop consumes the previous compensated
//! symbol:
//!
//! ```text
//! φe(n) = arg[r(n-1) e^{-jφ̂(n-1)}] - arg[t̂(n-1)]     (phase comparator)
//! φi(n) = φi(n-1) + K1 φe(n)                           (loop filter)
//! φd(n) = φi(n) + K2 φe(n)
//! φ̂(n)  = φ̂(n-1) + φd(n)                               (NCO)
//! ```
//!
//! `t̂` is the known symbol at training and pilot positions and the hard
//! decision elsewhere. With [`UpdatePolicy::PilotOnly`] the comparator only
//! fires after reference symbols; in between, the loop either keeps
//! advancing by the held `φi` ([`PilotHold::Flywheel`]) or stops
//! ([`PilotHold::Freeze`]).

use std::f64::consts::{PI, TAU};
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::constellation::{Constellation, Pam};
use crate::error::{Error, Result};
use crate::framing::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePolicy {
    #[default]
    AllSymbols,
    PilotOnly,
}

impl UpdatePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdatePolicy::AllSymbols => "all_symbols",
            UpdatePolicy::PilotOnly => "pilot_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotHold {
    #[default]
    Flywheel,
    Freeze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Nearest point, priors ignored.
    #[default]
    Ml,
    /// Maximum a posteriori with the channel noise variance.
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PllConfig {
    pub k1: f64,
    pub k2: f64,
    pub policy: UpdatePolicy,
    pub pilot_only_hold: PilotHold,
    pub decision: DecisionRule,
    /// `φ̂(0)`.
    pub initial_estimate: f64,
}

impl PllConfig {
    pub fn new(k1: f64, k2: f64) -> Self {
        PllConfig {
            k1,
            k2,
            policy: UpdatePolicy::AllSymbols,
            pilot_only_hold: PilotHold::Flywheel,
            decision: DecisionRule::Ml,
            initial_estimate: 0.0,
        }
    }

    pub fn with_policy(mut self, policy: UpdatePolicy) -> Self {
        self.policy = policy;
        self
    }
}

#[derive(Debug, Clone)]
pub struct PllTrace {
    pub phi_hat: Vec<f64>,
    pub phi_e: Vec<f64>,
    pub phi_i: Vec<f64>,
    pub phi_d: Vec<f64>,
    pub compensated: Vec<Complex64>,
    /// Decided point index at payload positions, `u32::MAX` elsewhere.
    pub decided: Vec<u32>,
    /// Wrong decisions over all payload positions.
    pub decision_errors: usize,
}

impl PllTrace {
    pub fn decision_errors_in(&self, frame: &Frame, positions: &[usize]) -> usize {
        positions
            .iter()
            .filter(|&&n| self.decided[n] != frame.tx_index[n])
            .count()
    }

    /// Writes `n,phi,phi_hat,phi_e` rows for loop inspection.
    pub fn write_csv<W: Write>(&self, phase: &[f64], mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,phi,phi_hat,phi_e")?;
        for n in 0..self.phi_hat.len() {
            writeln!(
                w,
                "{n},{:.16e},{:.16e},{:.16e}",
                phase[n], self.phi_hat[n], self.phi_e[n]
            )?;
        }
        Ok(())
    }
}

/// Wraps to `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[inline]
fn phase_error(y: Complex64, reference: Complex64) -> f64 {
    (y * reference.conj()).arg()
}

/// `arg(y) - arg(reference)` wrapped to `(-π, π]`.
pub fn phase_comparator(y: Complex64, reference: Complex64) -> Result<f64> {
    if reference == Complex64::new(0.0, 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(wrap_phase(phase_error(y, reference)))
}

/// Nearest level in one dimension; ties go to the lower index.
#[inline]
fn slice_nearest(levels: &[f64], v: f64) -> usize {
    let last = levels.len() - 1;
    let t = (v - levels[0]) / (levels[1] - levels[0]);
    let mut i = ((t - 0.5).ceil().max(0.0) as usize).min(last);
    let dist = |k: usize| (v - levels[k]) * (v - levels[k]);
    while i > 0 && dist(i - 1) <= dist(i) {
        i -= 1;
    }
    while i < last && dist(i + 1) < dist(i) {
        i += 1;
    }
    i
}

/// Nearest constellation point to `y`, lowest index on ties.
pub fn decide(y: Complex64, constellation: &Constellation) -> usize {
    let levels = constellation.pam().levels();
    constellation.index_of(slice_nearest(levels, y.re), slice_nearest(levels, y.im))
}

/// Per-dimension hard decision.
#[derive(Debug, Clone)]
struct Slicer {
    levels: Vec<f64>,
    // -ln P(a) * noise_var, empty for ML.
    bias: Vec<f64>,
    side: usize,
}

impl Slicer {
    fn new(pam: &Pam, rule: DecisionRule, noise_var: f64) -> Self {
        let bias = match rule {
            DecisionRule::Map if noise_var > 0.0 => {
                pam.prior().iter().map(|p| -p.ln() * noise_var).collect()
            }
            _ => Vec::new(),
        };
        Slicer {
            levels: pam.levels().to_vec(),
            bias,
            side: pam.len(),
        }
    }

    #[inline]
    fn dim(&self, v: f64) -> usize {
        if self.bias.is_empty() {
            return slice_nearest(&self.levels, v);
        }
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for (k, (a, b)) in self.levels.iter().zip(&self.bias).enumerate() {
            let cost = (v - a) * (v - a) + b;
            if cost < best_cost {
                best_cost = cost;
                best = k;
            }
        }
        best
    }

    #[inline]
    fn decide(&self, y: Complex64) -> usize {
        self.dim(y.re) * self.side + self.dim(y.im)
    }
}

/// MAP decision: minimizes `|y - x|² - σ² ln P(x)`.
pub fn decide_map(y: Complex64, constellation: &Constellation, noise_var: f64) -> usize {
    Slicer::new(constellation.pam(), DecisionRule::Map, noise_var).decide(y)
}

/// Runs the loop over a received frame.
pub fn pll_run(
    realization: &ChannelRealization,
    frame: &Frame,
    constellation: &Constellation,
    config: &PllConfig,
) -> Result<PllTrace> {
    let n_sym = frame.tx_symbols.len();
    if realization.rx_symbols.len() != n_sym {
        return Err(Error::LengthMismatch {
            what: "received symbols",
            got: realization.rx_symbols.len(),
            expected: n_sym,
        });
    }
    let roles = frame.layout.roles();
    let slicer = Slicer::new(constellation.pam(), config.decision, realization.noise_var);
    let points = constellation.points();

    let mut phi_hat = Vec::with_capacity(n_sym);
    let mut phi_e = Vec::with_capacity(n_sym);
    let mut phi_i = Vec::with_capacity(n_sym);
    let mut phi_d = Vec::with_capacity(n_sym);
    let mut compensated = Vec::with_capacity(n_sym);
    let mut decided = vec![u32::MAX; n_sym];
    let mut decision_errors = 0;

    let mut est = config.initial_estimate;
    let mut integ = 0.0;
    let mut prev_ref = Complex64::new(0.0, 0.0);
    for n in 0..n_sym {
        let (mut e, mut d) = (0.0, 0.0);
        if n > 0 {
            let after_reference = roles[n - 1].is_reference();
            let update = after_reference || config.policy == UpdatePolicy::AllSymbols;
            if update {
                e = phase_error(compensated[n - 1], prev_ref);
                integ += config.k1 * e;
                d = integ + config.k2 * e;
            } else if config.pilot_only_hold == PilotHold::Flywheel {
                d = integ;
            }
            est += d;
        }
        let y = realization.rx_symbols[n] * Complex64::cis(-est);
        if roles[n].is_reference() {
            prev_ref = frame.tx_symbols[n];
        } else {
            let k = slicer.decide(y);
            decided[n] = k as u32;
            if k as u32 != frame.tx_index[n] {
                decision_errors += 1;
            }
            prev_ref = points[k];
        }
        phi_hat.push(est);
        phi_e.push(e);
        phi_i.push(integ);
        phi_d.push(d);
        compensated.push(y);
    }
    Ok(PllTrace {
        phi_hat,
        phi_e,
        phi_i,
        phi_d,
        compensated,
        decided,
        decision_errors,
    })
}

/// Ideal phase removal with the true channel phase.
pub fn genie_compensate(realization: &ChannelRealization) -> Vec<Complex64> {
    realization
        .rx_symbols
        .iter()
        .zip(&realization.phase)
        .map(|(r, &phi)| r * Complex64::cis(-phi))
        .collect()
}
