//! JSON experiment configuration.
//!
//! Every field is optional; missing fields take the defaults below.
//! Unknown keys are rejected.
//!
//! | field | default |
//! |---|---|
//! | `schema_version` | 1 |
//! | `master_seed` | 1 |
//! | `pairs` | `[{ps_order: 64, us_order: 16}, {256, 64}, {1024, 256}]` |
//! | `formats` | `[]` (extra single formats `{order, entropy_bits?}`) |
//! | `code_rate` | 1/1.21 |
//! | `symbol_rate_baud` | 16e9 |
//! | `training_symbols` | 100 |
//! | `settle_guard_symbols` | 1000 |
//! | `payload_symbols` | 131072 |
//! | `seeds_per_point` | 4 |
//! | `ngmi_target` | 0.857 |
//! | `pilot_ratio` | 1/16 |
//! | `pilot_ratios` | 1/32, 1/16, 1/8, 1/4, 1/2, 1 |
//! | `linewidth_hz` | 0 |
//! | `linewidths_hz` | 0, 10k, 20k, 30k, 40k, 50k |
//! | `snr_db` | 22 |
//! | `snr_bracket_db` | `null` (derived per format) |
//! | `snr_tolerance_db` | 0.02 |
//! | `monotone_slack` | 0.005 |
//! | `gain_grid` | 13 x 13 log grid, `K1 ∈ [1e-7, 1e-1]`, `K2 ∈ [1e-3, 0.5]`, plus the default gains |
//! | `default_gains` | `{k1: 0.01, k2: 0.1}` |
//! | `gains` | `null` (optimize over `gain_grid`); set to fix the gains |
//! | `gain_schedule` | `bracket_midpoint` |
//! | `policy` | `all_symbols` |
//! | `pilot_only_hold` | `flywheel` |
//! | `pilot_alphabet` | `qpsk` |
//! | `decision_rule` | `ml` |
//! | `llr_noise` | `genie` |
//! | `initial_phase` | `zero` |
//! | `required_snr_vs_pilot` | `false` |

use serde::{Deserialize, Serialize};

use crate::channel::{InitialPhase, DEFAULT_SYMBOL_RATE};
use crate::constellation::{DEFAULT_CODE_RATE, SUPPORTED_ORDERS};
use crate::cpr::{DecisionRule, PilotHold, UpdatePolicy};
use crate::error::{Error, Result};
use crate::framing::PilotRatio;
use crate::harness::{
    Format, GainChoice, GainGrid, GainSchedule, Gains, LlrNoise, PairIndex, PilotAlphabet, SimSettings, SnrSearch,
    DEFAULT_MONOTONE_SLACK, STANDARD_K1, STANDARD_K2,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub ps_order: usize,
    pub us_order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatSpec {
    pub order: usize,
    /// Target entropy of a shaped format; omitted for uniform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_bits: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainGridSpec {
    pub k1_min: f64,
    pub k1_max: f64,
    pub k1_steps: usize,
    pub k2_min: f64,
    pub k2_max: f64,
    pub k2_steps: usize,
    /// Add `default_gains` to the grid axes.
    pub include_default: bool,
}

impl Default for GainGridSpec {
    fn default() -> Self {
        GainGridSpec {
            k1_min: STANDARD_K1.0,
            k1_max: STANDARD_K1.1,
            k1_steps: 13,
            k2_min: STANDARD_K2.0,
            k2_max: STANDARD_K2.1,
            k2_steps: 13,
            include_default: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub pairs: Vec<PairSpec>,
    pub formats: Vec<FormatSpec>,
    pub code_rate: f64,
    pub symbol_rate_baud: f64,
    pub training_symbols: usize,
    pub settle_guard_symbols: usize,
    pub payload_symbols: usize,
    pub seeds_per_point: usize,
    pub ngmi_target: f64,
    pub pilot_ratio: PilotRatio,
    pub pilot_ratios: Vec<PilotRatio>,
    pub linewidth_hz: f64,
    pub linewidths_hz: Vec<f64>,
    pub snr_db: f64,
    pub snr_bracket_db: Option<[f64; 2]>,
    pub snr_tolerance_db: f64,
    pub monotone_slack: f64,
    pub gain_grid: GainGridSpec,
    pub default_gains: Gains,
    pub gains: Option<Gains>,
    pub gain_schedule: GainSchedule,
    pub policy: UpdatePolicy,
    pub pilot_only_hold: PilotHold,
    pub pilot_alphabet: PilotAlphabet,
    pub decision_rule: DecisionRule,
    pub llr_noise: LlrNoise,
    pub initial_phase: InitialPhase,
    pub required_snr_vs_pilot: bool,
}

fn ratio(p: usize) -> PilotRatio {
    PilotRatio::from_period(p).expect("nonzero period")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            master_seed: 1,
            pairs: vec![
                PairSpec { ps_order: 64, us_order: 16 },
                PairSpec { ps_order: 256, us_order: 64 },
                PairSpec { ps_order: 1024, us_order: 256 },
            ],
            formats: Vec::new(),
            code_rate: DEFAULT_CODE_RATE,
            symbol_rate_baud: DEFAULT_SYMBOL_RATE,
            training_symbols: 100,
            settle_guard_symbols: 1000,
            payload_symbols: 1 << 17,
            seeds_per_point: 4,
            ngmi_target: 0.857,
            pilot_ratio: ratio(16),
            pilot_ratios: [32, 16, 8, 4, 2, 1].into_iter().map(ratio).collect(),
            linewidth_hz: 0.0,
            linewidths_hz: vec![0.0, 10e3, 20e3, 30e3, 40e3, 50e3],
            snr_db: 22.0,
            snr_bracket_db: None,
            snr_tolerance_db: 0.02,
            monotone_slack: DEFAULT_MONOTONE_SLACK,
            gain_grid: GainGridSpec::default(),
            default_gains: Gains::DEFAULT,
            gains: None,
            gain_schedule: GainSchedule::BracketMidpoint,
            policy: UpdatePolicy::AllSymbols,
            pilot_only_hold: PilotHold::Flywheel,
            pilot_alphabet: PilotAlphabet::Qpsk,
            decision_rule: DecisionRule::Ml,
            llr_noise: LlrNoise::Genie,
            initial_phase: InitialPhase::Zero,
            required_snr_vs_pilot: false,
        }
    }
}

/// Formats of a config, with pair membership.
#[derive(Debug, Clone)]
pub struct FormatSet {
    pub formats: Vec<Format>,
    pub pairs: Vec<PairIndex>,
}

fn check(cond: bool, field: &str, message: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(field, message))
    }
}

fn check_order(order: usize, field: &str) -> Result<()> {
    check(
        SUPPORTED_ORDERS.contains(&order),
        field,
        &format!("QAM order {order} not in {SUPPORTED_ORDERS:?}"),
    )
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            &format!("must be {SCHEMA_VERSION}"),
        )?;
        check(
            !self.pairs.is_empty() || !self.formats.is_empty(),
            "pairs",
            "pairs and formats must not both be empty",
        )?;
        for (i, p) in self.pairs.iter().enumerate() {
            check_order(p.ps_order, &format!("pairs[{i}].ps_order"))?;
            check_order(p.us_order, &format!("pairs[{i}].us_order"))?;
            check(
                p.ps_order > p.us_order,
                &format!("pairs[{i}].ps_order"),
                "must exceed us_order",
            )?;
        }
        for (i, f) in self.formats.iter().enumerate() {
            check_order(f.order, &format!("formats[{i}].order"))?;
            if let Some(h) = f.entropy_bits {
                let m = f.order.trailing_zeros() as f64;
                check(
                    h > 2.0 && h <= m,
                    &format!("formats[{i}].entropy_bits"),
                    &format!("must lie in (2, {m}]"),
                )?;
            }
        }
        check(
            self.code_rate > 0.0 && self.code_rate <= 1.0,
            "code_rate",
            "must lie in (0, 1]",
        )?;
        check(
            self.symbol_rate_baud > 0.0 && self.symbol_rate_baud.is_finite(),
            "symbol_rate_baud",
            "must be finite and > 0",
        )?;
        check(self.payload_symbols >= 1, "payload_symbols", "must be >= 1")?;
        check(self.seeds_per_point >= 1, "seeds_per_point", "must be >= 1")?;
        check(
            self.ngmi_target > 0.0 && self.ngmi_target <= 1.0,
            "ngmi_target",
            "must lie in (0, 1]",
        )?;
        check(!self.pilot_ratios.is_empty(), "pilot_ratios", "must not be empty")?;
        check(
            self.linewidth_hz >= 0.0 && self.linewidth_hz.is_finite(),
            "linewidth_hz",
            "must be finite and >= 0",
        )?;
        check(!self.linewidths_hz.is_empty(), "linewidths_hz", "must not be empty")?;
        for (i, &lw) in self.linewidths_hz.iter().enumerate() {
            check(
                lw >= 0.0 && lw.is_finite(),
                &format!("linewidths_hz[{i}]"),
                "must be finite and >= 0",
            )?;
        }
        check(self.snr_db.is_finite(), "snr_db", "must be finite")?;
        if let Some([lo, hi]) = self.snr_bracket_db {
            check(
                lo.is_finite() && hi.is_finite() && lo < hi,
                "snr_bracket_db",
                "must be finite with low < high",
            )?;
        }
        check(
            self.snr_tolerance_db > 0.0 && self.snr_tolerance_db.is_finite(),
            "snr_tolerance_db",
            "must be finite and > 0",
        )?;
        check(
            self.monotone_slack >= 0.0 && self.monotone_slack.is_finite(),
            "monotone_slack",
            "must be finite and >= 0",
        )?;
        let g = &self.gain_grid;
        check(
            g.k1_min > 0.0 && g.k1_min <= g.k1_max && g.k1_max.is_finite(),
            "gain_grid.k1_min",
            "need 0 < k1_min <= k1_max < inf",
        )?;
        check(
            g.k2_min > 0.0 && g.k2_min <= g.k2_max && g.k2_max.is_finite(),
            "gain_grid.k2_min",
            "need 0 < k2_min <= k2_max < inf",
        )?;
        check(g.k1_steps >= 1, "gain_grid.k1_steps", "must be >= 1")?;
        check(g.k2_steps >= 1, "gain_grid.k2_steps", "must be >= 1")?;
        for (name, gains) in [("default_gains", Some(self.default_gains)), ("gains", self.gains)] {
            if let Some(gains) = gains {
                check(
                    gains.k1 >= 0.0 && gains.k2 >= 0.0 && gains.k1.is_finite() && gains.k2.is_finite(),
                    name,
                    "gains must be finite and >= 0",
                )?;
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> SimSettings {
        SimSettings {
            symbol_rate_baud: self.symbol_rate_baud,
            training_len: self.training_symbols,
            settle_guard: self.settle_guard_symbols,
            payload_symbols: self.payload_symbols,
            seeds: self.seeds_per_point,
            master_seed: self.master_seed,
            pilot_alphabet: self.pilot_alphabet,
            pilot_only_hold: self.pilot_only_hold,
            decision: self.decision_rule,
            llr_noise: self.llr_noise,
            initial_phase: self.initial_phase,
        }
    }

    pub fn grid(&self) -> GainGrid {
        let g = &self.gain_grid;
        let grid = GainGrid::log((g.k1_min, g.k1_max), g.k1_steps, (g.k2_min, g.k2_max), g.k2_steps);
        if g.include_default {
            grid.with_point(self.default_gains)
        } else {
            grid
        }
    }

    pub fn gain_choice(&self) -> GainChoice {
        match self.gains {
            Some(g) => GainChoice::Fixed(g),
            None => GainChoice::Optimize(self.grid()),
        }
    }

    pub fn snr_search(&self) -> SnrSearch {
        SnrSearch {
            bracket_db: self.snr_bracket_db.map(|[lo, hi]| (lo, hi)),
            tolerance_db: self.snr_tolerance_db,
            ngmi_target: self.ngmi_target,
            gains: self.gain_choice(),
            schedule: self.gain_schedule,
            monotone_slack: self.monotone_slack,
        }
    }

    /// Builds every format: each pair's shaped then uniform member, then the
    /// single formats. Identical formats appear once.
    pub fn format_set(&self) -> Result<FormatSet> {
        let mut formats: Vec<Format> = Vec::new();
        let push = |f: Format, formats: &mut Vec<Format>| -> usize {
            match formats.iter().position(|g| g.name == f.name && g.constellation == f.constellation) {
                Some(i) => i,
                None => {
                    formats.push(f);
                    formats.len() - 1
                }
            }
        };
        let mut pairs = Vec::new();
        for p in &self.pairs {
            let (ps, us) = Format::equal_rate_pair(p.ps_order, p.us_order, self.code_rate)?;
            let shaped = push(ps, &mut formats);
            let uniform = push(us, &mut formats);
            pairs.push(PairIndex { shaped, uniform });
        }
        for f in &self.formats {
            let format = match f.entropy_bits {
                Some(h) => Format::shaped(f.order, h, self.code_rate)?,
                None => Format::uniform(f.order, self.code_rate)?,
            };
            push(format, &mut formats);
        }
        Ok(FormatSet { formats, pairs })
    }

    /// Canonical JSON with every field present.
    pub fn normalized_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a JSON config; missing fields take defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let message = e.into_inner().to_string();
        Error::Config { field, message }
    })?;
    de.end().map_err(|e| Error::config(".", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let c = parse_config("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.symbol_rate_baud, 16e9);
        assert_eq!(c.pilot_ratio.period(), 16);
        assert_eq!(c.training_symbols, 100);
        assert!((c.code_rate - 1.0 / 1.21).abs() < 1e-15);
        assert_eq!(c.ngmi_target, 0.857);
    }

    #[test]
    fn unit_fraction_suggestion() {
        let e = parse_config(r#"{"pilot_ratio": 0.05}"#).unwrap_err();
        match e {
            Error::Config { field, message } => {
                assert_eq!(field, "pilot_ratio");
                assert!(message.contains("1/20"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(parse_config(r#"{"pilot_ratio": "1/20"}"#).unwrap().pilot_ratio.period(), 20);
        assert_eq!(parse_config(r#"{"pilot_ratio": 0.0625}"#).unwrap().pilot_ratio.period(), 16);
    }

    #[test]
    fn unknown_keys_rejected() {
        match parse_config(r#"{"snr_dB": 20}"#).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "snr_dB"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_config(r#"{"gain_grid": {"k1_mn": 1e-3}}"#).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "gain_grid.k1_mn"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn range_errors_name_field() {
        for (text, field) in [
            (r#"{"code_rate": 1.5}"#, "code_rate"),
            (r#"{"seeds_per_point": 0}"#, "seeds_per_point"),
            (r#"{"linewidths_hz": [0, -1]}"#, "linewidths_hz[1]"),
            (r#"{"pairs": [{"ps_order": 16, "us_order": 64}]}"#, "pairs[0].ps_order"),
            (r#"{"formats": [{"order": 32}]}"#, "formats[0].order"),
            (r#"{"snr_bracket_db": [20, 10]}"#, "snr_bracket_db"),
        ] {
            match parse_config(text).unwrap_err() {
                Error::Config { field: f, .. } => assert_eq!(f, field, "{text}"),
                other => panic!("unexpected {other:?} for {text}"),
            }
        }
    }

    #[test]
    fn round_trip() {
        let text = r#"{"pilot_ratio": "1/20", "linewidths_hz": [0, 5000], "gains": {"k1": 0.001, "k2": 0.05}}"#;
        let c = parse_config(text).unwrap();
        let again = parse_config(&c.normalized_json()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.normalized_json(), again.normalized_json());
    }

    #[test]
    fn default_formats() {
        let set = ExperimentConfig::default().format_set().unwrap();
        let names: Vec<_> = set.formats.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(
            names,
            ["PS-64QAM", "US-16QAM", "PS-256QAM", "US-64QAM", "PS-1024QAM", "US-256QAM"]
        );
        assert_eq!(set.pairs[2], PairIndex { shaped: 4, uniform: 5 });
    }

    #[test]
    fn default_grid_matches_standard() {
        assert_eq!(ExperimentConfig::default().grid(), GainGrid::standard());
    }
}
