//! Bit-metric decoding rates.
//!
//! LLRs use the Gaussian auxiliary channel with the constellation prior,
//! `Λ_k = ln Σ_{x: b_k=0} P(x) e^{-|y-x|²/σ²} - ln Σ_{x: b_k=1} P(x) e^{-|y-x|²/σ²}`,
//! evaluated per dimension because both the prior and the labels factor
//! into identical I and Q parts. The noise variance is not inflated to
//! account for residual phase error: the mismatch is part of what gets
//! measured.
//!
//! NGMI follows the `1 - (H - GMI)/m` convention. The 0.857 FEC threshold
//! used by the harness is only meaningful under this convention.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constellation::{Constellation, Pam};
use crate::cpr::UpdatePolicy;
use crate::error::{Error, Result};

/// Per-dimension LLR evaluator for a fixed alphabet and noise variance.
#[derive(Debug, Clone)]
pub struct PamDemapper {
    levels: Vec<f64>,
    log_prior: Vec<f64>,
    inv_noise_var: f64,
    bits: usize,
    // For each bit, the level indices whose label bit is 0 and 1.
    zeros: Vec<Vec<usize>>,
    ones: Vec<Vec<usize>>,
}

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(xs: I) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl PamDemapper {
    pub fn new(pam: &Pam, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::NonPositiveNoiseVar(noise_var));
        }
        let bits = pam.bits();
        let mut zeros = vec![Vec::new(); bits];
        let mut ones = vec![Vec::new(); bits];
        for (k, &label) in pam.labels().iter().enumerate() {
            for b in 0..bits {
                if (label >> (bits - 1 - b)) & 1 == 0 {
                    zeros[b].push(k);
                } else {
                    ones[b].push(k);
                }
            }
        }
        Ok(PamDemapper {
            levels: pam.levels().to_vec(),
            log_prior: pam.prior().iter().map(|p| p.ln()).collect(),
            inv_noise_var: 1.0 / noise_var,
            bits,
            zeros,
            ones,
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    /// Writes `bits` LLRs for the real observation `v` into `out`.
    ///
    /// `scratch` must hold two values per level.
    pub fn llr_into(&self, v: f64, out: &mut [f64], scratch: &mut [f64]) {
        let n = self.levels.len();
        let (metric, weight) = scratch[..2 * n].split_at_mut(n);
        let mut peak = f64::NEG_INFINITY;
        for k in 0..n {
            let d = v - self.levels[k];
            metric[k] = self.log_prior[k] - d * d * self.inv_noise_var;
            peak = peak.max(metric[k]);
        }
        for k in 0..n {
            weight[k] = (metric[k] - peak).exp();
        }
        for b in 0..self.bits {
            let s0: f64 = self.zeros[b].iter().map(|&k| weight[k]).sum();
            let s1: f64 = self.ones[b].iter().map(|&k| weight[k]).sum();
            out[b] = if s0 > f64::MIN_POSITIVE && s1 > f64::MIN_POSITIVE {
                s0.ln() - s1.ln()
            } else {
                // One side underflowed relative to the peak; redo in the log domain.
                log_sum_exp(self.zeros[b].iter().map(|&k| metric[k]))
                    - log_sum_exp(self.ones[b].iter().map(|&k| metric[k]))
            };
        }
    }

    pub fn scratch_len(&self) -> usize {
        2 * self.levels.len()
    }
}

/// LLRs of a real observation against a 1-D alphabet.
pub fn pam_llr(v: f64, pam: &Pam, noise_var: f64) -> Result<Vec<f64>> {
    let d = PamDemapper::new(pam, noise_var)?;
    let mut out = vec![0.0; d.bits()];
    let mut scratch = vec![0.0; d.scratch_len()];
    d.llr_into(v, &mut out, &mut scratch);
    Ok(out)
}

/// LLR evaluator for a square QAM constellation.
#[derive(Debug, Clone)]
pub struct Demapper {
    pam: PamDemapper,
}

impl Demapper {
    pub fn new(constellation: &Constellation, noise_var: f64) -> Result<Self> {
        Ok(Demapper {
            pam: PamDemapper::new(constellation.pam(), noise_var)?,
        })
    }

    pub fn bits_per_symbol(&self) -> usize {
        2 * self.pam.bits
    }

    /// `out[..m/2]` get the in-phase bits, `out[m/2..]` the quadrature bits.
    pub fn llr_into(&self, y: Complex64, out: &mut [f64], scratch: &mut [f64]) {
        let h = self.pam.bits;
        self.pam.llr_into(y.re, &mut out[..h], scratch);
        self.pam.llr_into(y.im, &mut out[h..2 * h], scratch);
    }

    pub fn scratch_len(&self) -> usize {
        self.pam.scratch_len()
    }
}

pub fn llr(y: Complex64, constellation: &Constellation, noise_var: f64) -> Result<Vec<f64>> {
    let d = Demapper::new(constellation, noise_var)?;
    let mut out = vec![0.0; d.bits_per_symbol()];
    let mut scratch = vec![0.0; d.scratch_len()];
    d.llr_into(y, &mut out, &mut scratch);
    Ok(out)
}

/// `log2(1 + e^x)` without overflow.
#[inline]
fn softplus_bits(x: f64) -> f64 {
    (x.max(0.0) + (-x.abs()).exp().ln_1p()) * std::f64::consts::LOG2_E
}

/// Penalty `log2(1 + e^{-sΛ})` with `s = +1` for bit 0.
#[inline]
pub fn bit_penalty(llr: f64, bit: u8) -> f64 {
    let signed = if bit == 0 { llr } else { -llr };
    softplus_bits(-signed)
}

/// Fixed-order pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// GMI estimate `H - (1/N) Σ_n Σ_k log2(1 + e^{-s Λ})` over aligned
/// LLR/bit rows of `bits_per_symbol` entries.
pub fn gmi(llrs: &[f64], tx_bits: &[u8], bits_per_symbol: usize, entropy_bits: f64) -> Result<f64> {
    if llrs.len() != tx_bits.len() {
        return Err(Error::LengthMismatch {
            what: "LLRs",
            got: llrs.len(),
            expected: tx_bits.len(),
        });
    }
    if llrs.is_empty() {
        return Err(Error::EmptyPayload);
    }
    let per_symbol: Vec<f64> = llrs
        .chunks(bits_per_symbol)
        .zip(tx_bits.chunks(bits_per_symbol))
        .map(|(l, b)| l.iter().zip(b).map(|(&l, &b)| bit_penalty(l, b)).sum())
        .collect();
    Ok(entropy_bits - pairwise_sum(&per_symbol) / per_symbol.len() as f64)
}

/// GMI straight from received symbols, without materializing the LLRs.
pub fn gmi_from_symbols(
    symbols: &[Complex64],
    tx_bits: &[u8],
    constellation: &Constellation,
    noise_var: f64,
) -> Result<f64> {
    let m = constellation.bits_per_symbol();
    if symbols.len() * m != tx_bits.len() {
        return Err(Error::LengthMismatch {
            what: "payload bits",
            got: tx_bits.len(),
            expected: symbols.len() * m,
        });
    }
    if symbols.is_empty() {
        return Err(Error::EmptyPayload);
    }
    let d = Demapper::new(constellation, noise_var)?;
    let mut l = vec![0.0; m];
    let mut scratch = vec![0.0; d.scratch_len()];
    let per_symbol: Vec<f64> = symbols
        .iter()
        .zip(tx_bits.chunks(m))
        .map(|(&y, bits)| {
            d.llr_into(y, &mut l, &mut scratch);
            l.iter().zip(bits).map(|(&l, &b)| bit_penalty(l, b)).sum()
        })
        .collect();
    Ok(constellation.entropy_bits() - pairwise_sum(&per_symbol) / symbols.len() as f64)
}

pub fn ngmi(gmi: f64, entropy_bits: f64, bits_per_symbol: usize) -> f64 {
    1.0 - (entropy_bits - gmi) / bits_per_symbol as f64
}

/// Achievable rate after pilot overhead, `(1 - r) GMI`.
pub fn air(gmi: f64, pilot_ratio: f64) -> f64 {
    (1.0 - pilot_ratio) * gmi
}

pub fn delta_gmi(gmi_all: f64, gmi_pilot_only: f64) -> f64 {
    gmi_all - gmi_pilot_only
}

/// Parameters of the run that produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub format: String,
    pub linewidth_hz: f64,
    pub snr_db: f64,
    pub pilot_period: usize,
    pub seed: u64,
    pub policy: UpdatePolicy,
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub gmi_bits: f64,
    pub ngmi: f64,
    pub air_bits: f64,
    pub n_payload: usize,
    pub noise_var_used: f64,
    pub config_echo: RunEcho,
}

impl MetricReport {
    pub fn new(
        gmi_bits: f64,
        constellation: &Constellation,
        pilot_ratio: f64,
        n_payload: usize,
        noise_var_used: f64,
        config_echo: RunEcho,
    ) -> Self {
        MetricReport {
            gmi_bits,
            ngmi: ngmi(gmi_bits, constellation.entropy_bits(), constellation.bits_per_symbol()),
            air_bits: air(gmi_bits, pilot_ratio),
            n_payload,
            noise_var_used,
            config_echo,
        }
    }
}

/// ΔGMI between two reports that differ only in update policy and gains.
pub fn delta_gmi_checked(all: &MetricReport, pilot_only: &MetricReport) -> Result<f64> {
    let (a, b) = (&all.config_echo, &pilot_only.config_echo);
    let mismatch = [
        (a.format != b.format, "format"),
        (a.linewidth_hz != b.linewidth_hz, "linewidth_hz"),
        (a.snr_db != b.snr_db, "snr_db"),
        (a.pilot_period != b.pilot_period, "pilot_period"),
        (a.seed != b.seed, "seed"),
        (all.n_payload != pilot_only.n_payload, "n_payload"),
    ];
    if let Some((_, field)) = mismatch.iter().find(|(m, _)| *m) {
        return Err(Error::ConfigMismatch(field.to_string()));
    }
    Ok(delta_gmi(all.gmi_bits, pilot_only.gmi_bits))
}

/// Mean `|y - t|²` over known reference symbols.
pub fn estimate_noise_var(received: &[Complex64], reference: &[Complex64]) -> Result<f64> {
    if received.len() != reference.len() {
        return Err(Error::LengthMismatch {
            what: "reference symbols",
            got: reference.len(),
            expected: received.len(),
        });
    }
    if received.is_empty() {
        return Err(Error::EmptyPayload);
    }
    let e: Vec<f64> = received
        .iter()
        .zip(reference)
        .map(|(y, t)| (y - t).norm_sqr())
        .collect();
    Ok(pairwise_sum(&e) / e.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::solve_shaping_factor;

    fn antipodal(p_plus: f64) -> Pam {
        // +1 carries bit 0.
        Pam::new(vec![-1.0, 1.0], vec![1.0 - p_plus, p_plus], vec![1, 0], 1).unwrap()
    }

    #[test]
    fn bpsk_closed_form() {
        let pam = antipodal(0.5);
        assert!((pam_llr(0.5, &pam, 1.0).unwrap()[0] - 2.0).abs() < 1e-12);
        assert_eq!(pam_llr(0.0, &pam, 1.0).unwrap()[0], 0.0);
    }

    #[test]
    fn prior_only_llr() {
        let pam = antipodal(0.9);
        assert!((pam_llr(0.0, &pam, 1.0).unwrap()[0] - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn non_positive_noise_rejected() {
        let c = Constellation::uniform(16).unwrap();
        assert!(matches!(
            llr(Complex64::new(0.1, 0.2), &c, 0.0),
            Err(Error::NonPositiveNoiseVar(_))
        ));
        assert!(llr(Complex64::new(0.1, 0.2), &c, -1.0).is_err());
    }

    #[test]
    fn llr_signs_on_points_at_low_noise() {
        let c = solve_shaping_factor(256, 6.347).unwrap();
        for k in [0, 17, 100, 255] {
            let l = llr(c.points()[k], &c, 1e-6).unwrap();
            for (b, &v) in l.iter().enumerate() {
                assert!(v.abs() > 100.0);
                assert_eq!(v < 0.0, c.bit(k, b) == 1);
            }
        }
    }

    #[test]
    fn extreme_llrs_stay_finite() {
        let c = Constellation::uniform(1024).unwrap();
        let l = llr(Complex64::new(5.0, -5.0), &c, 1e-6).unwrap();
        assert!(l.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gmi_limits() {
        let bits = vec![0u8, 1, 1, 0];
        let perfect = vec![f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::INFINITY];
        assert_eq!(gmi(&perfect, &bits, 2, 2.0).unwrap(), 2.0);
        let zeros = vec![0.0; 4];
        assert!((gmi(&zeros, &bits, 2, 2.0).unwrap()).abs() < 1e-15);
        assert!((gmi(&zeros, &bits, 2, 1.7).unwrap() - (1.7 - 2.0)).abs() < 1e-15);
        assert!(matches!(gmi(&[], &[], 2, 2.0), Err(Error::EmptyPayload)));
    }

    #[test]
    fn ngmi_examples() {
        assert_eq!(ngmi(6.0, 6.0, 6), 1.0);
        assert!((ngmi(6.856, 8.0, 8) - 0.857).abs() < 1e-12);
        assert!((ngmi(6.917, 8.347, 10) - 0.857).abs() < 1e-12);
        // Uniform formats: NGMI = GMI / m.
        assert_eq!(ngmi(3.2, 4.0, 4), 3.2 / 4.0);
    }

    #[test]
    fn air_examples() {
        assert_eq!(air(6.8, 0.0), 6.8);
        assert_eq!(air(6.8, 1.0), 0.0);
        assert!((air(6.8, 0.0625) - 6.375).abs() < 1e-12);
    }

    #[test]
    fn delta_gmi_checks_echo() {
        let c = Constellation::uniform(16).unwrap();
        let echo = RunEcho {
            format: "US-16QAM".into(),
            linewidth_hz: 1e3,
            snr_db: 12.0,
            pilot_period: 16,
            seed: 1,
            policy: UpdatePolicy::AllSymbols,
            k1: 0.01,
            k2: 0.1,
        };
        let a = MetricReport::new(3.5, &c, 1.0 / 16.0, 10, 0.1, echo.clone());
        let mut e2 = echo.clone();
        e2.policy = UpdatePolicy::PilotOnly;
        e2.k2 = 0.3;
        let b = MetricReport::new(3.4, &c, 1.0 / 16.0, 10, 0.1, e2.clone());
        assert!((delta_gmi_checked(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(delta_gmi_checked(&a, &a).unwrap(), 0.0);
        e2.snr_db = 13.0;
        let c2 = MetricReport::new(3.4, &c, 1.0 / 16.0, 10, 0.1, e2);
        assert!(matches!(delta_gmi_checked(&a, &c2), Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn symbol_path_matches_llr_path() {
        let c = solve_shaping_factor(64, 4.347).unwrap();
        let ys: Vec<Complex64> = (0..50)
            .map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 0.71).cos()))
            .collect();
        let bits: Vec<u8> = (0..50 * 6).map(|k| ((k * 7) % 3 == 0) as u8).collect();
        let mut llrs = Vec::new();
        for &y in &ys {
            llrs.extend(llr(y, &c, 0.05).unwrap());
        }
        let a = gmi(&llrs, &bits, 6, c.entropy_bits()).unwrap();
        let b = gmi_from_symbols(&ys, &bits, &c, 0.05).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|k| (k as f64).sqrt()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-9);
    }
}
