//! Independent reference computations for tests.
//!
//! Everything here works on the full 2-D constellation by brute force and
//! shares no code with the per-dimension demapper under test.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;
use psqam_core::constellation::Constellation;

/// Gauss-Hermite nodes and weights for `∫ f(t) e^{-t²} dt`, by Newton
/// iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-14 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Bit LLRs by summing over every constellation point.
pub fn brute_llr(y: Complex64, c: &Constellation, noise_var: f64) -> Vec<f64> {
    let m = c.bits_per_symbol();
    let metric: Vec<f64> = c
        .points()
        .iter()
        .zip(c.prior())
        .map(|(x, p)| p.ln() - (y - x).norm_sqr() / noise_var)
        .collect();
    let lse = |bit: usize, value: u8| {
        let sel: Vec<f64> = (0..metric.len()).filter(|&k| c.bit(k, bit) == value).map(|k| metric[k]).collect();
        let peak = sel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        peak + sel.iter().map(|v| (v - peak).exp()).sum::<f64>().ln()
    };
    (0..m).map(|b| lse(b, 0) - lse(b, 1)).collect()
}

pub fn brute_nearest(y: Complex64, c: &Constellation) -> usize {
    let mut best = 0;
    for (k, x) in c.points().iter().enumerate() {
        if (y - x).norm_sqr() < (y - c.points()[best]).norm_sqr() {
            best = k;
        }
    }
    best
}

fn penalty(llr: f64, bit: u8) -> f64 {
    let s = if bit == 0 { llr } else { -llr };
    // log2(1 + e^{-s})
    ((-s).max(0.0) + (-s.abs()).exp().ln_1p()) / std::f64::consts::LN_2
}

/// AWGN GMI by 2-D Gauss-Hermite quadrature over the noise, exact sum over
/// the transmitted point.
pub fn gmi_quadrature(c: &Constellation, noise_var: f64, nodes: usize) -> f64 {
    let (t, w) = gauss_hermite(nodes);
    // per-dimension standard deviation sqrt(noise_var / 2): n = sqrt(noise_var) t
    let scale = noise_var.sqrt();
    let mut loss = 0.0;
    for (k, (x, p)) in c.points().iter().zip(c.prior()).enumerate() {
        let mut acc = 0.0;
        for (ti, wi) in t.iter().zip(&w) {
            for (tj, wj) in t.iter().zip(&w) {
                let y = x + Complex64::new(scale * ti, scale * tj);
                let l = brute_llr(y, c, noise_var);
                let s: f64 = l.iter().enumerate().map(|(b, &v)| penalty(v, c.bit(k, b))).sum();
                acc += wi * wj * s;
            }
        }
        loss += p * acc / PI;
    }
    c.entropy_bits() - loss
}

/// SNR (dB) at which the quadrature NGMI reaches `target`.
pub fn awgn_required_snr(c: &Constellation, target_ngmi: f64, nodes: usize) -> f64 {
    let m = c.bits_per_symbol() as f64;
    let ngmi = |snr: f64| 1.0 - (c.entropy_bits() - gmi_quadrature(c, 10f64.powf(-snr / 10.0), nodes)) / m;
    let (mut lo, mut hi) = (-5.0, 35.0);
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if ngmi(mid) >= target_ngmi {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Noiseless PLL recurrence with perfect references, advanced by hand.
pub fn reference_loop(phase: &[f64], k1: f64, k2: f64) -> Vec<f64> {
    let mut est = vec![0.0; phase.len()];
    let mut integ = 0.0;
    for n in 1..phase.len() {
        let raw = phase[n - 1] - est[n - 1];
        let e = raw.sin().atan2(raw.cos());
        integ += k1 * e;
        est[n] = est[n - 1] + integ + k2 * e;
    }
    est
}
