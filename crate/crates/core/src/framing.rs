//! Frame layout and transmit symbol generation.
//!
//! A frame starts with `training_len` known symbols, followed by a
//! post-training region in which every `P`-th symbol (starting with the
//! first) is a pilot and the rest carry payload. Payload symbols are drawn
//! i.i.d. from the constellation prior; training and pilot symbols come from
//! a separate pilot alphabet (uniform QPSK unless configured otherwise).

use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Pilot ratio restricted to unit fractions `1/P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PilotRatio {
    period: usize,
}

impl PilotRatio {
    pub fn from_period(period: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::config("pilot_ratio", "period must be >= 1"));
        }
        Ok(PilotRatio { period })
    }

    /// Accepts a decimal ratio only when it is exactly `1/P`.
    ///
    /// Only powers of two have exact binary reciprocals, so `0.0625` is
    /// accepted while `0.05` is rejected with the suggestion `1/20`; use
    /// [`PilotRatio::from_period`] or the `"1/P"` string form for other
    /// periods.
    pub fn from_fraction(ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::config("pilot_ratio", "must lie in (0, 1]"));
        }
        let nearest = (1.0 / ratio).round().max(1.0) as usize;
        if nearest.is_power_of_two() && ratio == 1.0 / nearest as f64 {
            Ok(PilotRatio { period: nearest })
        } else {
            Err(Error::PilotRatioNotUnitFraction {
                ratio,
                suggested_period: nearest,
            })
        }
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn value(&self) -> f64 {
        1.0 / self.period as f64
    }
}

impl fmt::Display for PilotRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1/{}", self.period)
    }
}

impl std::str::FromStr for PilotRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(p) = s.strip_prefix("1/") {
            let period = p
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::config("pilot_ratio", format!("cannot parse `{s}`")))?;
            return PilotRatio::from_period(period);
        }
        let r = s
            .parse::<f64>()
            .map_err(|_| Error::config("pilot_ratio", format!("cannot parse `{s}`")))?;
        PilotRatio::from_fraction(r)
    }
}

impl Serialize for PilotRatio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.period.is_power_of_two() {
            s.serialize_f64(self.value())
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for PilotRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(r) => PilotRatio::from_fraction(r),
            Raw::Text(t) => t.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolRole {
    Training,
    Pilot,
    Payload,
}

impl SymbolRole {
    pub fn is_reference(self) -> bool {
        !matches!(self, SymbolRole::Payload)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLayout {
    total_symbols: usize,
    training_len: usize,
    pilot: PilotRatio,
    roles: Vec<SymbolRole>,
    pilot_positions: Vec<usize>,
    payload_positions: Vec<usize>,
}

impl FrameLayout {
    pub fn total_symbols(&self) -> usize {
        self.total_symbols
    }

    pub fn training_len(&self) -> usize {
        self.training_len
    }

    pub fn pilot_ratio(&self) -> PilotRatio {
        self.pilot
    }

    pub fn roles(&self) -> &[SymbolRole] {
        &self.roles
    }

    pub fn role(&self, n: usize) -> SymbolRole {
        self.roles[n]
    }

    pub fn pilot_positions(&self) -> &[usize] {
        &self.pilot_positions
    }

    pub fn payload_positions(&self) -> &[usize] {
        &self.payload_positions
    }

    /// Pilot fraction of the post-training region.
    pub fn achieved_pilot_ratio(&self) -> f64 {
        self.pilot_positions.len() as f64 / (self.total_symbols - self.training_len) as f64
    }
}

/// Lays out `total` symbols: training first, then a pilot every `P` symbols.
///
/// The post-training region must be a whole number of pilot periods so the
/// achieved ratio is exactly `1/P`.
pub fn build_layout(total: usize, training_len: usize, pilot: PilotRatio) -> Result<FrameLayout> {
    let p = pilot.period();
    if total <= training_len + p {
        return Err(Error::InvalidLayout(format!(
            "total {total} must exceed training {training_len} + pilot period {p}"
        )));
    }
    let post = total - training_len;
    if !post.is_multiple_of(p) {
        return Err(Error::InvalidLayout(format!(
            "post-training length {post} is not a multiple of the pilot period {p}; \
             use total = {}",
            training_len + post.div_ceil(p) * p
        )));
    }
    let mut roles = vec![SymbolRole::Training; training_len];
    let mut pilot_positions = Vec::with_capacity(post / p);
    let mut payload_positions = Vec::with_capacity(post - post / p);
    for k in 0..post {
        let n = training_len + k;
        if k % p == 0 {
            roles.push(SymbolRole::Pilot);
            pilot_positions.push(n);
        } else {
            roles.push(SymbolRole::Payload);
            payload_positions.push(n);
        }
    }
    Ok(FrameLayout {
        total_symbols: total,
        training_len,
        pilot,
        roles,
        pilot_positions,
        payload_positions,
    })
}

/// Transmitted frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub layout: FrameLayout,
    pub tx_symbols: Vec<Complex64>,
    /// Point index of every symbol, into the payload constellation at payload
    /// positions and into the pilot alphabet elsewhere.
    pub tx_index: Vec<u32>,
    /// Bits of every payload symbol, `m` per symbol in payload order.
    pub tx_bits: Vec<u8>,
    pub seed: u64,
}

/// Inverse-CDF sampler over a discrete prior.
#[derive(Debug, Clone)]
pub struct PriorSampler {
    cdf: Vec<f64>,
}

impl PriorSampler {
    pub fn new(prior: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = prior
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = f64::INFINITY;
        }
        PriorSampler { cdf }
    }

    pub fn index(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c <= u)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.index(rng.random::<f64>())
    }
}

/// Draws a frame with uniform QPSK training and pilot symbols.
pub fn sample_frame(constellation: &Constellation, layout: &FrameLayout, seed: u64) -> Frame {
    let qpsk = Constellation::uniform(4).expect("QPSK is supported");
    sample_frame_with(constellation, &qpsk, layout, seed)
}

/// Draws a frame whose reference symbols come from `pilot_alphabet`.
pub fn sample_frame_with(
    constellation: &Constellation,
    pilot_alphabet: &Constellation,
    layout: &FrameLayout,
    seed: u64,
) -> Frame {
    let payload = PriorSampler::new(constellation.prior());
    let pilots = PriorSampler::new(pilot_alphabet.prior());
    let mut payload_rng = stream_rng(seed, Stream::Payload);
    let mut pilot_rng = stream_rng(seed, Stream::Pilot);
    let m = constellation.bits_per_symbol();

    let n = layout.total_symbols();
    let mut tx_symbols = Vec::with_capacity(n);
    let mut tx_index = Vec::with_capacity(n);
    let mut tx_bits = Vec::with_capacity(layout.payload_positions().len() * m);
    for &role in layout.roles() {
        let (k, x) = if role.is_reference() {
            let k = pilots.sample(&mut pilot_rng);
            (k, pilot_alphabet.points()[k])
        } else {
            let k = payload.sample(&mut payload_rng);
            tx_bits.extend((0..m).map(|b| constellation.bit(k, b)));
            (k, constellation.points()[k])
        };
        tx_symbols.push(x);
        tx_index.push(k as u32);
    }
    Frame {
        layout: layout.clone(),
        tx_symbols,
        tx_index,
        tx_bits,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::solve_shaping_factor;

    #[test]
    fn ratio_sixteenth() {
        let l = build_layout(100 + 16 * 64, 100, PilotRatio::from_period(16).unwrap()).unwrap();
        assert_eq!(l.achieved_pilot_ratio(), 0.0625);
        assert_eq!(l.pilot_positions()[0], 100);
        assert_eq!(l.pilot_positions()[1], 116);
    }

    #[test]
    fn ratio_thirty_second() {
        let l = build_layout(100 + 32 * 10, 100, PilotRatio::from_period(32).unwrap()).unwrap();
        assert_eq!(l.achieved_pilot_ratio(), 0.03125);
        assert!((l.achieved_pilot_ratio() * 100.0 - 3.13).abs() < 0.01);
    }

    #[test]
    fn all_pilot_layout() {
        let l = build_layout(200, 100, PilotRatio::from_period(1).unwrap()).unwrap();
        assert!(l.payload_positions().is_empty());
        assert_eq!(l.pilot_positions().len(), 100);
    }

    #[test]
    fn layout_partitions_frame() {
        let l = build_layout(100 + 8 * 50, 100, PilotRatio::from_period(8).unwrap()).unwrap();
        let mut seen = vec![0u8; l.total_symbols()];
        for n in 0..l.training_len() {
            seen[n] += 1;
        }
        for &n in l.pilot_positions().iter().chain(l.payload_positions()) {
            seen[n] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn layout_rejects_partial_period() {
        let p = PilotRatio::from_period(16).unwrap();
        assert!(matches!(build_layout(1000, 100, p), Err(Error::InvalidLayout(_))));
        assert!(build_layout(110, 100, p).is_err());
    }

    #[test]
    fn non_unit_fraction_suggests_period() {
        match PilotRatio::from_fraction(0.05) {
            Err(Error::PilotRatioNotUnitFraction {
                suggested_period, ..
            }) => assert_eq!(suggested_period, 20),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(PilotRatio::from_fraction(0.0625).unwrap().period(), 16);
        assert_eq!("1/20".parse::<PilotRatio>().unwrap().period(), 20);
        assert!(PilotRatio::from_fraction(0.3).is_err());
    }

    #[test]
    fn qpsk_frequencies() {
        let c = Constellation::uniform(4).unwrap();
        let sampler = PriorSampler::new(c.prior());
        let mut rng = stream_rng(11, Stream::Payload);
        let mut counts = [0usize; 4];
        let n = 1_000_000;
        for _ in 0..n {
            counts[sampler.sample(&mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.002);
        }
    }

    #[test]
    fn shaped_empirical_entropy() {
        let c = solve_shaping_factor(64, 4.347).unwrap();
        let sampler = PriorSampler::new(c.prior());
        let mut rng = stream_rng(3, Stream::Payload);
        let n = 1_000_000;
        let mut counts = vec![0usize; 64];
        for _ in 0..n {
            counts[sampler.sample(&mut rng)] += 1;
        }
        // Plug-in entropy of the empirical histogram.
        let h: f64 = counts
            .iter()
            .filter(|&&k| k > 0)
            .map(|&k| {
                let p = k as f64 / n as f64;
                -p * p.log2()
            })
            .sum();
        assert!((h - 4.347).abs() < 0.01, "empirical entropy {h}");
    }

    #[test]
    fn frames_are_deterministic() {
        let c = solve_shaping_factor(256, 6.347).unwrap();
        let l = build_layout(100 + 16 * 100, 100, PilotRatio::from_period(16).unwrap()).unwrap();
        let a = sample_frame(&c, &l, 42);
        let b = sample_frame(&c, &l, 42);
        assert_eq!(a.tx_symbols, b.tx_symbols);
        assert_eq!(a.tx_bits, b.tx_bits);
        let d = sample_frame(&c, &l, 43);
        assert_ne!(a.tx_symbols, d.tx_symbols);
    }

    #[test]
    fn bits_follow_labels() {
        let c = Constellation::uniform(16).unwrap();
        let l = build_layout(10 + 4 * 20, 10, PilotRatio::from_period(4).unwrap()).unwrap();
        let f = sample_frame(&c, &l, 5);
        for (j, &n) in l.payload_positions().iter().enumerate() {
            let k = f.tx_index[n] as usize;
            assert_eq!(f.tx_symbols[n], c.points()[k]);
            for b in 0..4 {
                assert_eq!(f.tx_bits[j * 4 + b], c.bit(k, b));
            }
        }
    }
}
