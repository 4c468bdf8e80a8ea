//! Square QAM constellations with per-dimension Gray labels and
//! Maxwell-Boltzmann shaped priors.
//!
//! A constellation is the product of two identical PAM alphabets. Point `k`
//! has in-phase level `k / L` and quadrature level `k % L` (with `L = sqrt(M)`),
//! and its label is the Gray code of the in-phase level followed by the Gray
//! code of the quadrature level, most significant bit first.
//!
//! The bit labeling is an assumption: binary-reflected Gray per dimension.
//! GMI at low SNR depends on it.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUPPORTED_ORDERS: [usize; 5] = [4, 16, 64, 256, 1024];

/// Default FEC code rate (21 % overhead).
pub const DEFAULT_CODE_RATE: f64 = 1.0 / 1.21;

const SOLVER_TOL_BITS: f64 = 1e-12;

/// One real dimension of a square QAM constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct Pam {
    levels: Vec<f64>,
    prior: Vec<f64>,
    labels: Vec<u32>,
    bits: usize,
}

impl Pam {
    /// Builds an alphabet from explicit levels, prior and labels.
    ///
    /// Labels are `bits`-wide integers, most significant bit first.
    pub fn new(levels: Vec<f64>, prior: Vec<f64>, labels: Vec<u32>, bits: usize) -> Result<Self> {
        if levels.len() != prior.len() || levels.len() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "PAM prior/labels",
                got: prior.len().min(labels.len()),
                expected: levels.len(),
            });
        }
        if levels.len() != 1 << bits {
            return Err(Error::InvalidLayout(format!(
                "{} levels cannot carry {bits} bits",
                levels.len()
            )));
        }
        Ok(Pam {
            levels,
            prior,
            labels,
            bits,
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Level spacing (uniform grids only).
    pub fn spacing(&self) -> f64 {
        self.levels[1] - self.levels[0]
    }
}

/// Binary-reflected Gray code.
pub fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

/// Odd-integer amplitudes `-(L-1), ..., -1, 1, ..., L-1`.
fn odd_levels(side: usize) -> Vec<f64> {
    (0..side)
        .map(|i| 2.0 * i as f64 - (side as f64 - 1.0))
        .collect()
}

/// Per-dimension Maxwell-Boltzmann prior `P(a) ∝ exp(-λ a²)` on odd integers.
pub fn mb_pam_prior(side: usize, lambda: f64) -> Vec<f64> {
    let levels = odd_levels(side);
    // Shift by the innermost energy (a² = 1) so large λ never underflows the mode.
    let w: Vec<f64> = levels
        .iter()
        .map(|a| (-lambda * (a * a - 1.0)).exp())
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn entropy_bits(prior: &[f64]) -> f64 {
    -prior
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

fn side_of(order: usize) -> Result<(usize, usize)> {
    if !SUPPORTED_ORDERS.contains(&order) {
        return Err(Error::UnsupportedOrder(order));
    }
    let bits = order.trailing_zeros() as usize;
    Ok((1 << (bits / 2), bits))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    order: usize,
    pam: Pam,
    points: Vec<Complex64>,
    labels: Vec<u32>,
    prior: Vec<f64>,
    entropy_bits: f64,
    shaping_factor: f64,
}

impl Constellation {
    /// Uniform square QAM.
    pub fn uniform(order: usize) -> Result<Self> {
        let (side, bits) = side_of(order)?;
        let prior = vec![1.0 / side as f64; side];
        let mut c = Self::from_unnormalized(side, prior, 0.0)?;
        c.entropy_bits = bits as f64;
        Ok(c)
    }

    /// Maxwell-Boltzmann shaped QAM with the given shaping factor, defined on
    /// the odd-integer grid before power normalization.
    pub fn maxwell_boltzmann(order: usize, lambda: f64) -> Result<Self> {
        let (side, _) = side_of(order)?;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("shaping_factor", "must be finite and >= 0"));
        }
        if lambda == 0.0 {
            return Self::uniform(order);
        }
        Self::from_unnormalized(side, mb_pam_prior(side, lambda), lambda)
    }

    /// Square QAM whose I and Q amplitudes share an arbitrary prior on the
    /// odd-integer grid.
    pub fn with_pam_prior(order: usize, pam_prior: &[f64]) -> Result<Self> {
        let (side, _) = side_of(order)?;
        if pam_prior.len() != side {
            return Err(Error::LengthMismatch {
                what: "per-dimension prior",
                got: pam_prior.len(),
                expected: side,
            });
        }
        if pam_prior.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::config("prior", "every probability must be > 0"));
        }
        let z: f64 = pam_prior.iter().sum();
        let prior = pam_prior.iter().map(|p| p / z).collect();
        Self::from_unnormalized(side, prior, 0.0)
    }

    fn from_unnormalized(side: usize, pam_prior: Vec<f64>, lambda: f64) -> Result<Self> {
        let half_bits = side.trailing_zeros() as usize;
        let raw = odd_levels(side);
        let pam_energy: f64 = raw.iter().zip(&pam_prior).map(|(a, p)| p * a * a).sum();
        let scale = 1.0 / (2.0 * pam_energy).sqrt();
        let levels: Vec<f64> = raw.iter().map(|a| a * scale).collect();
        let pam_labels: Vec<u32> = (0..side as u32).map(gray).collect();

        let order = side * side;
        let mut points = Vec::with_capacity(order);
        let mut labels = Vec::with_capacity(order);
        let mut prior = Vec::with_capacity(order);
        for i in 0..side {
            for q in 0..side {
                points.push(Complex64::new(levels[i], levels[q]));
                labels.push((pam_labels[i] << half_bits) | pam_labels[q]);
                prior.push(pam_prior[i] * pam_prior[q]);
            }
        }
        let entropy = entropy_bits(&prior);
        let pam = Pam::new(levels, pam_prior, pam_labels, half_bits)?;
        Ok(Constellation {
            order,
            pam,
            points,
            labels,
            prior,
            entropy_bits: entropy,
            shaping_factor: lambda,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.pam.bits
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn entropy_bits(&self) -> f64 {
        self.entropy_bits
    }

    pub fn shaping_factor(&self) -> f64 {
        self.shaping_factor
    }

    pub fn is_uniform(&self) -> bool {
        self.shaping_factor == 0.0 && self.entropy_bits == self.bits_per_symbol() as f64
    }

    /// The shared per-dimension alphabet.
    pub fn pam(&self) -> &Pam {
        &self.pam
    }

    /// Bit `k` (0 = most significant) of point `index`.
    pub fn bit(&self, index: usize, k: usize) -> u8 {
        ((self.labels[index] >> (self.bits_per_symbol() - 1 - k)) & 1) as u8
    }

    /// Label of `index` as a string of '0'/'1'.
    pub fn label_string(&self, index: usize) -> String {
        (0..self.bits_per_symbol())
            .map(|k| if self.bit(index, k) == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn index_of(&self, i_level: usize, q_level: usize) -> usize {
        i_level * self.pam.len() + q_level
    }

    pub fn average_power(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.prior)
            .map(|(x, p)| p * x.norm_sqr())
            .sum()
    }

    pub fn export(&self) -> ConstellationExport {
        ConstellationExport {
            schema_version: 1,
            order: self.order,
            bits_per_symbol: self.bits_per_symbol(),
            entropy_bits: self.entropy_bits,
            shaping_factor: self.shaping_factor,
            average_power: self.average_power(),
            points: self.points.iter().map(|p| [p.re, p.im]).collect(),
            labels: (0..self.order).map(|k| self.label_string(k)).collect(),
            prior: self.prior.clone(),
        }
    }
}

/// JSON form of a constellation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConstellationExport {
    pub schema_version: u32,
    pub order: usize,
    pub bits_per_symbol: usize,
    pub entropy_bits: f64,
    pub shaping_factor: f64,
    pub average_power: f64,
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<String>,
    pub prior: Vec<f64>,
}

pub fn build_uniform(order: usize) -> Result<Constellation> {
    Constellation::uniform(order)
}

/// Information rate and FEC code rate of a shaped format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapingSpec {
    pub information_rate: f64,
    pub base_bits: usize,
    pub code_rate: f64,
}

impl ShapingSpec {
    /// Shaped format carrying the same information rate as a uniform
    /// `us_order` format under `code_rate`.
    pub fn equal_rate(us_order: usize, ps_order: usize, code_rate: f64) -> Result<Self> {
        let (_, us_bits) = side_of(us_order)?;
        let (_, ps_bits) = side_of(ps_order)?;
        Ok(ShapingSpec {
            information_rate: us_bits as f64 * code_rate,
            base_bits: ps_bits,
            code_rate,
        })
    }
}

/// Entropy a shaped constellation needs to carry `information_rate` under
/// `code_rate`: `IR + m (1 - R_c)`.
pub fn target_entropy(spec: &ShapingSpec) -> Result<f64> {
    if !(spec.code_rate > 0.0 && spec.code_rate <= 1.0) {
        return Err(Error::config("code_rate", "must lie in (0, 1]"));
    }
    let m = spec.base_bits as f64;
    let h = spec.information_rate + m * (1.0 - spec.code_rate);
    if !(h > 2.0 && h <= m) {
        return Err(Error::InfeasibleShaping {
            target: h,
            min: 2.0,
            max: m,
        });
    }
    Ok(h)
}

/// Entropy in bits of the 2-D MB constellation with factor `lambda`.
pub fn mb_entropy(side: usize, lambda: f64) -> f64 {
    2.0 * entropy_bits(&mb_pam_prior(side, lambda))
}

/// Finds the shaping factor whose constellation entropy equals `target_h`.
///
/// Entropy falls strictly from `m` at `λ = 0` towards 2 bits, so the root is
/// bracketed by doubling and then bisected.
pub fn solve_shaping_factor(order: usize, target_h: f64) -> Result<Constellation> {
    let (side, bits) = side_of(order)?;
    let m = bits as f64;
    if !(target_h > 2.0 && target_h <= m) {
        return Err(Error::InfeasibleShaping {
            target: target_h,
            min: 2.0,
            max: m,
        });
    }
    if target_h == m {
        return Constellation::uniform(order);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while mb_entropy(side, hi) >= target_h {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InfeasibleShaping {
                target: target_h,
                min: 2.0,
                max: m,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let h = mb_entropy(side, mid);
        if (h - target_h).abs() < SOLVER_TOL_BITS {
            lo = mid;
            hi = mid;
            break;
        }
        if h > target_h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Constellation::maxwell_boltzmann(order, 0.5 * (lo + hi))
}
