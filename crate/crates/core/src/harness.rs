//! Monte Carlo experiment orchestration.
//!
//! Every point of an experiment is evaluated on `seeds` independent runs.
//! Run `s` uses the seed `mix_seed(master_seed, s)` for every format,
//! linewidth, SNR and policy, so comparisons across those axes share the
//! same payload, phase and noise draws (common random numbers).
//!
//! Metrics are taken over payload symbols after the training preamble and
//! an additional settling guard. An all-pilot frame has no payload; its
//! metrics are computed on the post-guard pilot symbols against the pilot
//! alphabet, which makes AIR exactly zero and the two update policies
//! identical.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelDraw, ChannelParams, InitialPhase};
use crate::constellation::{solve_shaping_factor, target_entropy, Constellation, ShapingSpec};
use crate::cpr::{pll_run, DecisionRule, PilotHold, PllConfig, PllTrace, UpdatePolicy};
use crate::error::{Error, Result};
use crate::framing::{build_layout, sample_frame_with, Frame, FrameLayout, PilotRatio};
use crate::metrics::{air, estimate_noise_var, gmi_from_symbols, ngmi};
use crate::rng::mix_seed;

/// A modulation format under test.
#[derive(Debug, Clone, PartialEq)]
pub struct Format {
    pub name: String,
    pub constellation: Constellation,
    /// Net information rate (bit/QAM symbol) under the configured code rate.
    pub ir_bits: f64,
}

impl Format {
    pub fn uniform(order: usize, code_rate: f64) -> Result<Self> {
        let constellation = Constellation::uniform(order)?;
        let ir_bits = constellation.bits_per_symbol() as f64 * code_rate;
        Ok(Format {
            name: format!("US-{order}QAM"),
            constellation,
            ir_bits,
        })
    }

    pub fn shaped(order: usize, entropy_bits: f64, code_rate: f64) -> Result<Self> {
        let constellation = solve_shaping_factor(order, entropy_bits)?;
        let m = constellation.bits_per_symbol() as f64;
        Ok(Format {
            name: format!("PS-{order}QAM"),
            constellation,
            ir_bits: entropy_bits - m * (1.0 - code_rate),
        })
    }

    /// Shaped `ps_order` format at the information rate of uniform `us_order`.
    pub fn equal_rate_pair(ps_order: usize, us_order: usize, code_rate: f64) -> Result<(Self, Self)> {
        let spec = ShapingSpec::equal_rate(us_order, ps_order, code_rate)?;
        let h = target_entropy(&spec)?;
        Ok((Format::shaped(ps_order, h, code_rate)?, Format::uniform(us_order, code_rate)?))
    }

    pub fn entropy_bits(&self) -> f64 {
        self.constellation.entropy_bits()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.constellation.bits_per_symbol()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotAlphabet {
    /// Uniform unit-power QPSK.
    #[default]
    Qpsk,
    /// Drawn from the payload constellation prior.
    Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlrNoise {
    /// True channel noise variance.
    #[default]
    Genie,
    /// Mean squared pilot error after phase compensation.
    PilotEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSchedule {
    /// Optimize once at the bracket midpoint and reuse for every probe.
    #[default]
    BracketMidpoint,
    /// Re-optimize at every bisection probe.
    EveryProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub k1: f64,
    pub k2: f64,
}

impl Gains {
    pub const DEFAULT: Gains = Gains { k1: 0.01, k2: 0.1 };

    pub fn new(k1: f64, k2: f64) -> Self {
        Gains { k1, k2 }
    }
}

pub const STANDARD_K1: (f64, f64) = (1e-7, 1e-1);
pub const STANDARD_K2: (f64, f64) = (1e-3, 0.5);

/// Cartesian grid of loop gains, each axis sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GainGrid {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
}

fn log_spaced(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..steps)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (steps - 1) as f64))
        .collect()
}

/// Inserts `v`, replacing an existing value equal to it up to rounding.
fn insert_sorted(axis: &mut Vec<f64>, v: f64) {
    match axis.iter_mut().find(|x| (**x - v).abs() <= 1e-12 * v.abs()) {
        Some(x) => *x = v,
        None => {
            axis.push(v);
            axis.sort_by(f64::total_cmp);
        }
    }
}

impl GainGrid {
    pub fn log(k1: (f64, f64), k1_steps: usize, k2: (f64, f64), k2_steps: usize) -> Self {
        GainGrid {
            k1: log_spaced(k1.0, k1.1, k1_steps),
            k2: log_spaced(k2.0, k2.1, k2_steps),
        }
    }

    /// The default 13 x 13 grid over `K1 ∈ [1e-7, 1e-1]`, `K2 ∈ [1e-3, 0.5]`,
    /// extended to contain [`Gains::DEFAULT`].
    ///
    /// Near-zero integral gain is the optimum at small linewidths, so the
    /// `K1` axis spans six decades.
    pub fn standard() -> Self {
        GainGrid::log(STANDARD_K1, 13, STANDARD_K2, 13).with_point(Gains::DEFAULT)
    }

    pub fn single(g: Gains) -> Self {
        GainGrid {
            k1: vec![g.k1],
            k2: vec![g.k2],
        }
    }

    pub fn with_point(mut self, g: Gains) -> Self {
        insert_sorted(&mut self.k1, g.k1);
        insert_sorted(&mut self.k2, g.k2);
        self
    }

    pub fn len(&self) -> usize {
        self.k1.len() * self.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid points with `k1` major, both ascending.
    pub fn points(&self) -> Vec<Gains> {
        self.k1
            .iter()
            .flat_map(|&k1| self.k2.iter().map(move |&k2| Gains { k1, k2 }))
            .collect()
    }

    fn on_boundary(&self, g: Gains) -> bool {
        let edge = |axis: &[f64], v: f64| axis.len() > 1 && (v == axis[0] || v == axis[axis.len() - 1]);
        edge(&self.k1, g.k1) || edge(&self.k2, g.k2)
    }
}

/// Settings shared by every run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub symbol_rate_baud: f64,
    pub training_len: usize,
    pub settle_guard: usize,
    /// Minimum number of metric-bearing payload symbols per run.
    pub payload_symbols: usize,
    pub seeds: usize,
    pub master_seed: u64,
    pub pilot_alphabet: PilotAlphabet,
    pub pilot_only_hold: PilotHold,
    pub decision: DecisionRule,
    pub llr_noise: LlrNoise,
    pub initial_phase: InitialPhase,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            symbol_rate_baud: crate::channel::DEFAULT_SYMBOL_RATE,
            training_len: 100,
            settle_guard: 1000,
            payload_symbols: 1 << 17,
            seeds: 4,
            master_seed: 1,
            pilot_alphabet: PilotAlphabet::Qpsk,
            pilot_only_hold: PilotHold::Flywheel,
            decision: DecisionRule::Ml,
            llr_noise: LlrNoise::Genie,
            initial_phase: InitialPhase::Zero,
        }
    }
}

impl SimSettings {
    pub fn run_seed(&self, index: usize) -> u64 {
        mix_seed(self.master_seed, index as u64)
    }

    /// Frame layout giving at least `payload_symbols` payload symbols after
    /// the settling guard (post-guard pilots for an all-pilot frame).
    pub fn layout(&self, pilot: PilotRatio) -> Result<FrameLayout> {
        let p = pilot.period();
        let data_per_block = if p == 1 { 1 } else { p - 1 };
        let blocks = self.settle_guard.div_ceil(p) + self.payload_symbols.div_ceil(data_per_block);
        build_layout(self.training_len + blocks * p, self.training_len, pilot)
    }
}

/// One drawn frame and its channel randomness.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub seed: u64,
    pub frame: Frame,
    pub draw: ChannelDraw,
    metric_positions: Vec<usize>,
    metric_bits: Vec<u8>,
    on_pilots: bool,
}

impl PreparedRun {
    /// Positions whose compensated symbols enter the metrics.
    pub fn metric_positions(&self) -> &[usize] {
        &self.metric_positions
    }
}

/// Result of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub gmi: f64,
    pub ngmi: f64,
    pub air: f64,
    pub n_payload: usize,
    pub decision_error_rate: f64,
    pub noise_var_used: f64,
}

/// Runs one format under fixed settings.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    pub settings: &'a SimSettings,
    pub format: &'a Format,
    pilot_alphabet: Constellation,
}

impl<'a> Simulator<'a> {
    pub fn new(settings: &'a SimSettings, format: &'a Format) -> Self {
        let pilot_alphabet = match settings.pilot_alphabet {
            PilotAlphabet::Qpsk => Constellation::uniform(4).expect("QPSK is supported"),
            PilotAlphabet::Payload => format.constellation.clone(),
        };
        Simulator {
            settings,
            format,
            pilot_alphabet,
        }
    }

    pub fn channel_params(&self, linewidth_hz: f64, snr_db: f64, seed: u64) -> ChannelParams {
        ChannelParams {
            linewidth_hz,
            symbol_rate_baud: self.settings.symbol_rate_baud,
            snr_db,
            seed,
            initial_phase: self.settings.initial_phase,
        }
    }

    pub fn prepare_seed(&self, linewidth_hz: f64, pilot: PilotRatio, index: usize) -> Result<PreparedRun> {
        let layout = self.settings.layout(pilot)?;
        let seed = self.settings.run_seed(index);
        let params = self.channel_params(linewidth_hz, f64::INFINITY, seed);
        params.validate()?;
        let draw = ChannelDraw::new(layout.total_symbols(), &params);
        self.finish(layout, seed, draw)
    }

    /// Like [`Simulator::prepare_seed`] with the phase path `phase(n)` in
    /// place of the Wiener process.
    pub fn prepare_with_phase<F>(&self, pilot: PilotRatio, index: usize, phase: F) -> Result<PreparedRun>
    where
        F: Fn(usize) -> f64,
    {
        let layout = self.settings.layout(pilot)?;
        let seed = self.settings.run_seed(index);
        let draw = ChannelDraw::with_phase((0..layout.total_symbols()).map(phase).collect(), seed);
        self.finish(layout, seed, draw)
    }

    fn finish(&self, layout: FrameLayout, seed: u64, draw: ChannelDraw) -> Result<PreparedRun> {
        let frame = sample_frame_with(&self.format.constellation, &self.pilot_alphabet, &layout, seed);
        let start = self.settings.training_len + self.settings.settle_guard;
        let on_pilots = layout.payload_positions().is_empty();
        let (metric_positions, metric_bits) = if on_pilots {
            let pos: Vec<usize> = layout.pilot_positions().iter().copied().filter(|&n| n >= start).collect();
            let m = self.pilot_alphabet.bits_per_symbol();
            let bits = pos
                .iter()
                .flat_map(|&n| {
                    let k = frame.tx_index[n] as usize;
                    (0..m).map(move |b| (k, b))
                })
                .map(|(k, b)| self.pilot_alphabet.bit(k, b))
                .collect();
            (pos, bits)
        } else {
            let m = self.format.bits_per_symbol();
            let skip = layout.payload_positions().partition_point(|&n| n < start);
            let pos = layout.payload_positions()[skip..].to_vec();
            let bits = frame.tx_bits[skip * m..].to_vec();
            (pos, bits)
        };
        if metric_positions.is_empty() {
            return Err(Error::EmptyPayload);
        }
        Ok(PreparedRun {
            seed,
            frame,
            draw,
            metric_positions,
            metric_bits,
            on_pilots,
        })
    }

    pub fn prepare(&self, linewidth_hz: f64, pilot: PilotRatio) -> Result<Vec<PreparedRun>> {
        (0..self.settings.seeds)
            .into_par_iter()
            .map(|s| self.prepare_seed(linewidth_hz, pilot, s))
            .collect()
    }

    pub fn pll_config(&self, gains: Gains, policy: UpdatePolicy) -> PllConfig {
        PllConfig {
            k1: gains.k1,
            k2: gains.k2,
            policy,
            pilot_only_hold: self.settings.pilot_only_hold,
            decision: self.settings.decision,
            initial_estimate: 0.0,
        }
    }

    /// Runs the receiver and returns the outcome together with the PLL trace.
    pub fn run_traced(
        &self,
        prep: &PreparedRun,
        snr_db: f64,
        gains: Gains,
        policy: UpdatePolicy,
    ) -> Result<(RunOutcome, PllTrace)> {
        let realization = prep.draw.apply(&prep.frame.tx_symbols, snr_db)?;
        let cfg = self.pll_config(gains, policy);
        let trace = pll_run(&realization, &prep.frame, &self.format.constellation, &cfg)?;
        let symbols: Vec<Complex64> = prep.metric_positions.iter().map(|&n| trace.compensated[n]).collect();
        let noise_var = match self.settings.llr_noise {
            LlrNoise::Genie => realization.noise_var,
            LlrNoise::PilotEstimate => {
                let start = self.settings.training_len + self.settings.settle_guard;
                let pilots: Vec<usize> = prep
                    .frame
                    .layout
                    .pilot_positions()
                    .iter()
                    .copied()
                    .filter(|&n| n >= start)
                    .collect();
                let rx: Vec<Complex64> = pilots.iter().map(|&n| trace.compensated[n]).collect();
                let tx: Vec<Complex64> = pilots.iter().map(|&n| prep.frame.tx_symbols[n]).collect();
                estimate_noise_var(&rx, &tx)?
            }
        };
        let alphabet = if prep.on_pilots {
            &self.pilot_alphabet
        } else {
            &self.format.constellation
        };
        let g = gmi_from_symbols(&symbols, &prep.metric_bits, alphabet, noise_var)?;
        let n = symbols.len();
        let decision_error_rate = if prep.on_pilots {
            0.0
        } else {
            trace.decision_errors_in(&prep.frame, &prep.metric_positions) as f64 / n as f64
        };
        let outcome = RunOutcome {
            seed: prep.seed,
            gmi: g,
            ngmi: ngmi(g, alphabet.entropy_bits(), alphabet.bits_per_symbol()),
            air: air(g, prep.frame.layout.pilot_ratio().value()),
            n_payload: n,
            decision_error_rate,
            noise_var_used: noise_var,
        };
        Ok((outcome, trace))
    }

    pub fn run(&self, prep: &PreparedRun, snr_db: f64, gains: Gains, policy: UpdatePolicy) -> Result<RunOutcome> {
        self.run_traced(prep, snr_db, gains, policy).map(|(o, _)| o)
    }

    pub fn run_all(
        &self,
        preps: &[PreparedRun],
        snr_db: f64,
        gains: Gains,
        policy: UpdatePolicy,
    ) -> Result<Vec<RunOutcome>> {
        preps
            .par_iter()
            .map(|p| self.run(p, snr_db, gains, policy))
            .collect()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean (0 for fewer than two samples).
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

fn mean_ngmi(outcomes: &[RunOutcome]) -> f64 {
    mean(&outcomes.iter().map(|o| o.ngmi).collect::<Vec<_>>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSearch {
    pub gains: Gains,
    pub ngmi: f64,
    /// Best point lies on the edge of the grid.
    pub on_boundary: bool,
    /// Mean NGMI at every grid point, in [`GainGrid::points`] order.
    pub surface: Vec<(Gains, f64)>,
}

/// Exhaustive grid search for the gains maximizing mean NGMI over `preps`.
///
/// Ties go to the earliest grid point, i.e. the smallest `K1`, then `K2`.
pub fn optimize_gains(
    sim: &Simulator<'_>,
    preps: &[PreparedRun],
    snr_db: f64,
    policy: UpdatePolicy,
    grid: &GainGrid,
) -> Result<GainSearch> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::EmptyGainGrid);
    }
    let scores: Vec<f64> = points
        .par_iter()
        .map(|&g| {
            let mut acc = Vec::with_capacity(preps.len());
            for p in preps {
                acc.push(sim.run(p, snr_db, g, policy)?.ngmi);
            }
            Ok(mean(&acc))
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(GainSearch {
        gains: points[best],
        ngmi: scores[best],
        on_boundary: grid.on_boundary(points[best]),
        surface: points.into_iter().zip(scores).collect(),
    })
}

/// How loop gains are chosen for an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum GainChoice {
    Fixed(Gains),
    Optimize(GainGrid),
}

impl GainChoice {
    fn resolve(
        &self,
        sim: &Simulator<'_>,
        preps: &[PreparedRun],
        snr_db: f64,
        policy: UpdatePolicy,
    ) -> Result<(Gains, bool)> {
        match self {
            GainChoice::Fixed(g) => Ok((*g, false)),
            GainChoice::Optimize(grid) => {
                let s = optimize_gains(sim, preps, snr_db, policy, grid)?;
                Ok((s.gains, s.on_boundary))
            }
        }
    }
}

/// Required-SNR search settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrSearch {
    /// Explicit bracket in dB; `None` derives one from the format's rate.
    pub bracket_db: Option<(f64, f64)>,
    pub tolerance_db: f64,
    pub ngmi_target: f64,
    pub gains: GainChoice,
    pub schedule: GainSchedule,
    /// Largest NGMI decrease between increasing probes tolerated as
    /// Monte Carlo noise by the monotonicity guard.
    pub monotone_slack: f64,
}

pub const DEFAULT_MONOTONE_SLACK: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub snr_db: f64,
    pub ngmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequiredSnr {
    /// Root of the seed-averaged NGMI curve.
    pub snr_db: f64,
    /// Root of each seed's own NGMI curve.
    pub per_seed_db: Vec<f64>,
    pub stderr_db: f64,
    pub gains: Gains,
    pub gain_boundary: bool,
    pub probes: Vec<Probe>,
}

/// Bracket for the NGMI target derived from the AWGN capacity at the
/// target GMI, widened to cover BICM and phase-noise penalties.
pub fn auto_bracket(format: &Format, ngmi_target: f64) -> (f64, f64) {
    let m = format.bits_per_symbol() as f64;
    let target_gmi = format.entropy_bits() - m * (1.0 - ngmi_target);
    let shannon_db = 10.0 * (2f64.powf(target_gmi) - 1.0).log10();
    (shannon_db - 0.5, shannon_db + 4.5)
}

fn check_monotone(probes: &[Probe], slack: f64) -> Result<()> {
    let mut sorted = probes.to_vec();
    sorted.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    for w in sorted.windows(2) {
        if w[1].ngmi < w[0].ngmi - slack {
            return Err(Error::NonMonotone {
                snr_lo_db: w[0].snr_db,
                ngmi_lo: w[0].ngmi,
                snr_hi_db: w[1].snr_db,
                ngmi_hi: w[1].ngmi,
            });
        }
    }
    Ok(())
}

/// Bisection for the SNR at which `ngmi_at` crosses `target`.
fn bisect<F>(mut lo: (f64, f64), mut hi: (f64, f64), target: f64, tol: f64, mut ngmi_at: F) -> Result<(f64, Vec<Probe>)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut probes = Vec::new();
    while hi.0 - lo.0 > tol {
        let mid = 0.5 * (lo.0 + hi.0);
        let v = ngmi_at(mid)?;
        probes.push(Probe { snr_db: mid, ngmi: v });
        if v >= target {
            hi = (mid, v);
        } else {
            lo = (mid, v);
        }
    }
    Ok((0.5 * (lo.0 + hi.0), probes))
}

/// SNR at which mean NGMI reaches `search.ngmi_target`.
pub fn required_snr(
    sim: &Simulator<'_>,
    linewidth_hz: f64,
    pilot: PilotRatio,
    policy: UpdatePolicy,
    search: &SnrSearch,
) -> Result<RequiredSnr> {
    let preps = sim.prepare(linewidth_hz, pilot)?;
    required_snr_prepared(sim, &preps, policy, search)
}

pub fn required_snr_prepared(
    sim: &Simulator<'_>,
    preps: &[PreparedRun],
    policy: UpdatePolicy,
    search: &SnrSearch,
) -> Result<RequiredSnr> {
    let target = search.ngmi_target;
    let (mut lo, mut hi) = search
        .bracket_db
        .unwrap_or_else(|| auto_bracket(sim.format, target));
    if !(lo < hi) {
        return Err(Error::config("snr_bracket_db", "low end must be below high end"));
    }
    let (gains, gain_boundary) = search.gains.resolve(sim, preps, 0.5 * (lo + hi), policy)?;

    let eval = |snr: f64| -> Result<Vec<RunOutcome>> {
        let g = match search.schedule {
            GainSchedule::BracketMidpoint => gains,
            GainSchedule::EveryProbe => search.gains.resolve(sim, preps, snr, policy)?.0,
        };
        sim.run_all(preps, snr, g, policy)
    };

    // Per-seed NGMI at every probe, reused to narrow the per-seed searches.
    let mut table: Vec<(f64, Vec<f64>)> = Vec::new();
    let record = |snr: f64, out: &[RunOutcome], table: &mut Vec<(f64, Vec<f64>)>| {
        table.push((snr, out.iter().map(|o| o.ngmi).collect()));
        mean_ngmi(out)
    };

    let lo_out = eval(lo)?;
    let mut ngmi_lo = record(lo, &lo_out, &mut table);
    let hi_out = eval(hi)?;
    let mut ngmi_hi = record(hi, &hi_out, &mut table);
    if search.bracket_db.is_none() {
        // Derived brackets may be shifted; slide them before giving up.
        let mut tries = 0;
        while !(ngmi_lo < target && ngmi_hi >= target) && tries < 4 {
            let width = hi - lo;
            if ngmi_hi < target {
                lo = hi;
                ngmi_lo = ngmi_hi;
                hi += width;
                let out = eval(hi)?;
                ngmi_hi = record(hi, &out, &mut table);
            } else {
                hi = lo;
                ngmi_hi = ngmi_lo;
                lo -= width;
                let out = eval(lo)?;
                ngmi_lo = record(lo, &out, &mut table);
            }
            tries += 1;
        }
    }
    if !(ngmi_lo < target && ngmi_hi >= target) {
        return Err(Error::BracketFailure {
            target,
            lo_db: lo,
            hi_db: hi,
            ngmi_lo,
            ngmi_hi,
        });
    }

    let (root, _) = bisect((lo, ngmi_lo), (hi, ngmi_hi), target, search.tolerance_db, |snr| {
        let out = eval(snr)?;
        Ok(record(snr, &out, &mut table))
    })?;
    let probes: Vec<Probe> = table
        .iter()
        .map(|(snr, v)| Probe {
            snr_db: *snr,
            ngmi: mean(v),
        })
        .collect();
    check_monotone(&probes, search.monotone_slack)?;

    let mut per_seed_db = Vec::with_capacity(preps.len());
    for (s, prep) in preps.iter().enumerate() {
        let seed_ngmi = |snr: f64| -> Result<f64> {
            let g = match search.schedule {
                GainSchedule::BracketMidpoint => gains,
                GainSchedule::EveryProbe => search.gains.resolve(sim, preps, snr, policy)?.0,
            };
            Ok(sim.run(prep, snr, g, policy)?.ngmi)
        };
        let mut all: Vec<Probe> = table
            .iter()
            .map(|(snr, v)| Probe { snr_db: *snr, ngmi: v[s] })
            .collect();
        all.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        // Highest probe below target, then the first probe above it reaching target.
        let step = (hi - lo).max(search.tolerance_db);
        let mut below = match all.iter().rev().find(|p| p.ngmi < target) {
            Some(p) => *p,
            None => {
                let mut snr = all[0].snr_db;
                loop {
                    snr -= step;
                    let v = seed_ngmi(snr)?;
                    all.insert(0, Probe { snr_db: snr, ngmi: v });
                    if v < target {
                        break all[0];
                    }
                    if all.len() > table.len() + 8 {
                        return Err(Error::BracketFailure { target, lo_db: snr, hi_db: hi, ngmi_lo: v, ngmi_hi });
                    }
                }
            }
        };
        let above = match all.iter().find(|p| p.snr_db > below.snr_db && p.ngmi >= target) {
            Some(p) => *p,
            None => {
                let mut snr = all[all.len() - 1].snr_db;
                let mut tries = 0;
                loop {
                    snr += step;
                    let v = seed_ngmi(snr)?;
                    all.push(Probe { snr_db: snr, ngmi: v });
                    if v >= target {
                        break Probe { snr_db: snr, ngmi: v };
                    }
                    tries += 1;
                    if tries > 8 {
                        return Err(Error::BracketFailure { target, lo_db: lo, hi_db: snr, ngmi_lo, ngmi_hi: v });
                    }
                    below = Probe { snr_db: snr, ngmi: v };
                }
            }
        };
        let (r, seed_probes) = bisect(
            (below.snr_db, below.ngmi),
            (above.snr_db, above.ngmi),
            target,
            search.tolerance_db,
            seed_ngmi,
        )?;
        all.extend(seed_probes);
        check_monotone(&all, search.monotone_slack)?;
        per_seed_db.push(r);
    }
    Ok(RequiredSnr {
        snr_db: root,
        stderr_db: std_error(&per_seed_db),
        per_seed_db,
        gains,
        gain_boundary,
        probes,
    })
}

/// One output row: one seed at one experiment point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub format: String,
    pub order: usize,
    pub entropy_bits: f64,
    pub ir_bits: f64,
    pub linewidth_hz: f64,
    pub snr_db: f64,
    pub pilot_ratio: f64,
    pub k1: f64,
    pub k2: f64,
    pub policy: UpdatePolicy,
    pub seed: u64,
    pub n_payload: usize,
    pub gmi: f64,
    pub ngmi: f64,
    pub air: f64,
    pub decision_error_rate: f64,
}

impl SweepRow {
    pub fn new(
        format: &Format,
        linewidth_hz: f64,
        snr_db: f64,
        pilot: PilotRatio,
        gains: Gains,
        policy: UpdatePolicy,
        o: &RunOutcome,
    ) -> Self {
        SweepRow {
            format: format.name.clone(),
            order: format.constellation.order(),
            entropy_bits: format.entropy_bits(),
            ir_bits: format.ir_bits,
            linewidth_hz,
            snr_db,
            pilot_ratio: pilot.value(),
            k1: gains.k1,
            k2: gains.k2,
            policy,
            seed: o.seed,
            n_payload: o.n_payload,
            gmi: o.gmi,
            ngmi: o.ngmi,
            air: o.air,
            decision_error_rate: o.decision_error_rate,
        }
    }
}

/// A PS/US pair referenced by index into a format list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    pub shaped: usize,
    pub uniform: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthPoint {
    pub linewidth_hz: f64,
    #[serde(flatten)]
    pub required: RequiredSnr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatCurve {
    pub format: String,
    pub points: Vec<LinewidthPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub linewidth_hz: f64,
    /// `required_snr(US) - required_snr(PS)` on the seed-averaged curves.
    pub gain_db: f64,
    /// Paired per-seed gains.
    pub per_seed_db: Vec<f64>,
    pub stderr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingGainCurve {
    pub shaped: String,
    pub uniform: String,
    pub points: Vec<GainPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthSweep {
    pub pilot_ratio: f64,
    pub ngmi_target: f64,
    pub curves: Vec<FormatCurve>,
    pub shaping_gains: Vec<ShapingGainCurve>,
    #[serde(skip)]
    pub rows: Vec<SweepRow>,
}

/// Required SNR of every format at every linewidth, plus shaping gains.
pub fn sweep_linewidth(
    settings: &SimSettings,
    formats: &[Format],
    pairs: &[PairIndex],
    linewidths_hz: &[f64],
    pilot: PilotRatio,
    policy: UpdatePolicy,
    search: &SnrSearch,
) -> Result<LinewidthSweep> {
    let tasks: Vec<(usize, usize)> = (0..formats.len())
        .flat_map(|f| (0..linewidths_hz.len()).map(move |l| (f, l)))
        .collect();
    let results: Vec<(RequiredSnr, Vec<SweepRow>)> = tasks
        .par_iter()
        .map(|&(f, l)| {
            let sim = Simulator::new(settings, &formats[f]);
            let lw = linewidths_hz[l];
            let preps = sim.prepare(lw, pilot)?;
            let req = required_snr_prepared(&sim, &preps, policy, search)?;
            let rows = sim
                .run_all(&preps, req.snr_db, req.gains, policy)?
                .iter()
                .map(|o| SweepRow::new(&formats[f], lw, req.snr_db, pilot, req.gains, policy, o))
                .collect();
            Ok((req, rows))
        })
        .collect::<Result<_>>()?;

    let at = |f: usize, l: usize| &results[f * linewidths_hz.len() + l].0;
    let curves = formats
        .iter()
        .enumerate()
        .map(|(f, fmt)| FormatCurve {
            format: fmt.name.clone(),
            points: linewidths_hz
                .iter()
                .enumerate()
                .map(|(l, &lw)| LinewidthPoint {
                    linewidth_hz: lw,
                    required: at(f, l).clone(),
                })
                .collect(),
        })
        .collect();
    let shaping_gains = pairs
        .iter()
        .map(|pair| ShapingGainCurve {
            shaped: formats[pair.shaped].name.clone(),
            uniform: formats[pair.uniform].name.clone(),
            points: linewidths_hz
                .iter()
                .enumerate()
                .map(|(l, &lw)| {
                    let (ps, us) = (at(pair.shaped, l), at(pair.uniform, l));
                    let per_seed: Vec<f64> = us
                        .per_seed_db
                        .iter()
                        .zip(&ps.per_seed_db)
                        .map(|(u, p)| u - p)
                        .collect();
                    GainPoint {
                        linewidth_hz: lw,
                        gain_db: us.snr_db - ps.snr_db,
                        stderr_db: std_error(&per_seed),
                        per_seed_db: per_seed,
                    }
                })
                .collect(),
        })
        .collect();
    Ok(LinewidthSweep {
        pilot_ratio: pilot.value(),
        ngmi_target: search.ngmi_target,
        curves,
        shaping_gains,
        rows: results.into_iter().flat_map(|(_, r)| r).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotPoint {
    pub pilot_ratio: f64,
    pub k1: f64,
    pub k2: f64,
    pub gmi_mean: f64,
    pub ngmi_mean: f64,
    pub air_mean: f64,
    pub air_stderr: f64,
    /// Required SNR at this ratio, when requested and defined.
    pub required_snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotCurve {
    pub format: String,
    pub linewidth_hz: f64,
    pub points: Vec<PilotPoint>,
    pub best_pilot_ratio: f64,
    pub best_air: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirComparison {
    pub shaped: String,
    pub uniform: String,
    pub linewidth_hz: f64,
    /// Per tested ratio (ascending), whether the shaped format has the higher mean AIR.
    pub pilot_ratios: Vec<f64>,
    pub shaped_wins: Vec<bool>,
    /// Smallest ratio from which the shaped format wins at every higher tested ratio
    /// with a nonzero AIR.
    pub crossover_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotSweep {
    pub snr_db: f64,
    pub curves: Vec<PilotCurve>,
    pub comparisons: Vec<AirComparison>,
    #[serde(skip)]
    pub rows: Vec<SweepRow>,
}

/// AIR versus pilot ratio at a fixed SNR, with gains optimized per point.
#[allow(clippy::too_many_arguments)]
pub fn sweep_pilot_ratio(
    settings: &SimSettings,
    formats: &[Format],
    pairs: &[PairIndex],
    linewidths_hz: &[f64],
    pilots: &[PilotRatio],
    snr_db: f64,
    policy: UpdatePolicy,
    gains: &GainChoice,
    required: Option<&SnrSearch>,
) -> Result<PilotSweep> {
    let mut pilots = pilots.to_vec();
    pilots.sort_by_key(|p| std::cmp::Reverse(p.period()));
    let tasks: Vec<(usize, usize, usize)> = (0..formats.len())
        .flat_map(|f| {
            let np = pilots.len();
            (0..linewidths_hz.len()).flat_map(move |l| (0..np).map(move |p| (f, l, p)))
        })
        .collect();
    let results: Vec<(PilotPoint, Vec<SweepRow>)> = tasks
        .par_iter()
        .map(|&(f, l, p)| {
            let sim = Simulator::new(settings, &formats[f]);
            let (lw, pilot) = (linewidths_hz[l], pilots[p]);
            let preps = sim.prepare(lw, pilot)?;
            let (g, _) = gains.resolve(&sim, &preps, snr_db, policy)?;
            let out = sim.run_all(&preps, snr_db, g, policy)?;
            let airs: Vec<f64> = out.iter().map(|o| o.air).collect();
            let required_snr_db = match required {
                Some(search) if pilot.period() > 1 => {
                    Some(required_snr_prepared(&sim, &preps, policy, search)?.snr_db)
                }
                _ => None,
            };
            let point = PilotPoint {
                pilot_ratio: pilot.value(),
                k1: g.k1,
                k2: g.k2,
                gmi_mean: mean(&out.iter().map(|o| o.gmi).collect::<Vec<_>>()),
                ngmi_mean: mean_ngmi(&out),
                air_mean: mean(&airs),
                air_stderr: std_error(&airs),
                required_snr_db,
            };
            let rows = out
                .iter()
                .map(|o| SweepRow::new(&formats[f], lw, snr_db, pilot, g, policy, o))
                .collect();
            Ok((point, rows))
        })
        .collect::<Result<_>>()?;

    let np = pilots.len();
    let idx = |f: usize, l: usize, p: usize| (f * linewidths_hz.len() + l) * np + p;
    let mut curves = Vec::new();
    for (f, fmt) in formats.iter().enumerate() {
        for (l, &lw) in linewidths_hz.iter().enumerate() {
            let points: Vec<PilotPoint> = (0..np).map(|p| results[idx(f, l, p)].0.clone()).collect();
            let best = points
                .iter()
                .fold(None::<&PilotPoint>, |b, p| match b {
                    Some(b) if b.air_mean >= p.air_mean => Some(b),
                    _ => Some(p),
                })
                .expect("at least one pilot ratio");
            curves.push(PilotCurve {
                format: fmt.name.clone(),
                linewidth_hz: lw,
                best_pilot_ratio: best.pilot_ratio,
                best_air: best.air_mean,
                points,
            });
        }
    }
    let mut comparisons = Vec::new();
    for pair in pairs {
        for (l, &lw) in linewidths_hz.iter().enumerate() {
            let ratios: Vec<f64> = pilots.iter().map(|p| p.value()).collect();
            let wins: Vec<bool> = (0..np)
                .map(|p| results[idx(pair.shaped, l, p)].0.air_mean > results[idx(pair.uniform, l, p)].0.air_mean)
                .collect();
            let informative: Vec<usize> = (0..np).filter(|&p| pilots[p].period() > 1).collect();
            let crossover_ratio = informative
                .iter()
                .position(|&p| informative.iter().filter(|&&q| q >= p).all(|&q| wins[q]))
                .map(|i| ratios[informative[i]]);
            comparisons.push(AirComparison {
                shaped: formats[pair.shaped].name.clone(),
                uniform: formats[pair.uniform].name.clone(),
                linewidth_hz: lw,
                pilot_ratios: ratios,
                shaped_wins: wins,
                crossover_ratio,
            });
        }
    }
    Ok(PilotSweep {
        snr_db,
        curves,
        comparisons,
        rows: results.into_iter().flat_map(|(_, r)| r).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub format: String,
    pub linewidth_hz: f64,
    pub pilot_ratio: f64,
    pub gains_all: Gains,
    pub gains_pilot_only: Gains,
    pub gmi_all_mean: f64,
    pub gmi_pilot_only_mean: f64,
    /// Mean of paired per-seed `GMI(all) - GMI(pilot only)`.
    pub delta_gmi: f64,
    pub delta_gmi_stderr: f64,
    pub per_seed_delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub snr_db: f64,
    pub points: Vec<PolicyPoint>,
    #[serde(skip)]
    pub rows: Vec<SweepRow>,
}

/// ΔGMI between all-symbol and pilot-only updating on shared draws, with
/// gains optimized separately for each policy.
pub fn compare_policies(
    settings: &SimSettings,
    formats: &[Format],
    linewidths_hz: &[f64],
    pilots: &[PilotRatio],
    snr_db: f64,
    gains: &GainChoice,
) -> Result<PolicyComparison> {
    let tasks: Vec<(usize, usize, usize)> = (0..formats.len())
        .flat_map(|f| {
            let np = pilots.len();
            (0..linewidths_hz.len()).flat_map(move |l| (0..np).map(move |p| (f, l, p)))
        })
        .collect();
    let results: Vec<(PolicyPoint, Vec<SweepRow>)> = tasks
        .par_iter()
        .map(|&(f, l, p)| {
            let sim = Simulator::new(settings, &formats[f]);
            let (lw, pilot) = (linewidths_hz[l], pilots[p]);
            let preps = sim.prepare(lw, pilot)?;
            let mut rows = Vec::new();
            let mut per_policy = Vec::new();
            for policy in [UpdatePolicy::AllSymbols, UpdatePolicy::PilotOnly] {
                let (g, _) = gains.resolve(&sim, &preps, snr_db, policy)?;
                let out = sim.run_all(&preps, snr_db, g, policy)?;
                rows.extend(
                    out.iter()
                        .map(|o| SweepRow::new(&formats[f], lw, snr_db, pilot, g, policy, o)),
                );
                per_policy.push((g, out));
            }
            let (ga, all) = &per_policy[0];
            let (gp, po) = &per_policy[1];
            let deltas: Vec<f64> = all.iter().zip(po).map(|(a, b)| a.gmi - b.gmi).collect();
            let point = PolicyPoint {
                format: formats[f].name.clone(),
                linewidth_hz: lw,
                pilot_ratio: pilot.value(),
                gains_all: *ga,
                gains_pilot_only: *gp,
                gmi_all_mean: mean(&all.iter().map(|o| o.gmi).collect::<Vec<_>>()),
                gmi_pilot_only_mean: mean(&po.iter().map(|o| o.gmi).collect::<Vec<_>>()),
                delta_gmi: mean(&deltas),
                delta_gmi_stderr: std_error(&deltas),
                per_seed_delta: deltas,
            };
            Ok((point, rows))
        })
        .collect::<Result<_>>()?;
    let (points, rows): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(PolicyComparison {
        snr_db,
        points,
        rows: rows.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimSettings {
        SimSettings {
            payload_symbols: 4096,
            settle_guard: 200,
            seeds: 2,
            ..SimSettings::default()
        }
    }

    #[test]
    fn standard_grid_contains_default() {
        let g = GainGrid::standard();
        assert!(g.k1.contains(&0.01));
        assert!(g.k2.contains(&0.1));
        assert_eq!(g.k1.len(), 13);
        assert_eq!(g.k2.len(), 14);
        assert!(g.k1.windows(2).all(|w| w[0] < w[1]));
        assert!((g.k1[0] - 1e-7).abs() < 1e-20 && (g.k2[13] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn layout_has_requested_payload() {
        let s = small();
        for p in [1, 2, 16, 32] {
            let l = s.layout(PilotRatio::from_period(p).unwrap()).unwrap();
            let start = s.training_len + s.settle_guard;
            let count = if p == 1 {
                l.pilot_positions().iter().filter(|&&n| n >= start).count()
            } else {
                l.payload_positions().iter().filter(|&&n| n >= start).count()
            };
            assert!(count >= s.payload_symbols, "P={p}: {count}");
        }
    }

    #[test]
    fn equal_rate_pairs() {
        let (ps, us) = Format::equal_rate_pair(1024, 256, crate::constellation::DEFAULT_CODE_RATE).unwrap();
        assert!((ps.entropy_bits() - 8.347).abs() < 1e-3);
        assert!((ps.ir_bits - us.ir_bits).abs() < 1e-12);
        assert_eq!(ps.name, "PS-1024QAM");
    }

    #[test]
    fn single_point_grid() {
        let s = small();
        let f = Format::uniform(16, 1.0 / 1.21).unwrap();
        let sim = Simulator::new(&s, &f);
        let preps = sim.prepare(0.0, PilotRatio::from_period(16).unwrap()).unwrap();
        let g = Gains::new(0.003, 0.02);
        let r = optimize_gains(&sim, &preps, 14.0, UpdatePolicy::AllSymbols, &GainGrid::single(g)).unwrap();
        assert_eq!(r.gains, g);
        assert!(!r.on_boundary);
    }

    #[test]
    fn empty_grid_rejected() {
        let s = small();
        let f = Format::uniform(16, 1.0 / 1.21).unwrap();
        let sim = Simulator::new(&s, &f);
        let preps = sim.prepare(0.0, PilotRatio::from_period(16).unwrap()).unwrap();
        let grid = GainGrid { k1: vec![], k2: vec![0.1] };
        assert!(matches!(
            optimize_gains(&sim, &preps, 14.0, UpdatePolicy::AllSymbols, &grid),
            Err(Error::EmptyGainGrid)
        ));
    }

    #[test]
    fn all_pilot_air_is_zero() {
        let s = small();
        let f = Format::uniform(64, 1.0 / 1.21).unwrap();
        let sim = Simulator::new(&s, &f);
        let preps = sim.prepare(10e3, PilotRatio::from_period(1).unwrap()).unwrap();
        let a = sim.run(&preps[0], 20.0, Gains::DEFAULT, UpdatePolicy::AllSymbols).unwrap();
        let b = sim.run(&preps[0], 20.0, Gains::DEFAULT, UpdatePolicy::PilotOnly).unwrap();
        assert_eq!(a.air, 0.0);
        assert_eq!(a.gmi, b.gmi);
    }

    #[test]
    fn unreachable_target_fails_bracket() {
        let s = small();
        let f = Format::uniform(16, 1.0 / 1.21).unwrap();
        let sim = Simulator::new(&s, &f);
        let search = SnrSearch {
            bracket_db: Some((5.0, 12.0)),
            tolerance_db: 0.05,
            ngmi_target: 1.01,
            gains: GainChoice::Fixed(Gains::DEFAULT),
            schedule: GainSchedule::BracketMidpoint,
            monotone_slack: DEFAULT_MONOTONE_SLACK,
        };
        let r = required_snr(&sim, 0.0, PilotRatio::from_period(16).unwrap(), UpdatePolicy::AllSymbols, &search);
        assert!(matches!(r, Err(Error::BracketFailure { .. })));
    }

    #[test]
    fn std_error_basics() {
        assert_eq!(std_error(&[1.0]), 0.0);
        assert!((std_error(&[1.0, 3.0]) - 1.0).abs() < 1e-12);
    }
}
