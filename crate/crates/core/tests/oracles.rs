mod common;

use num_complex::Complex64;
use psqam_core::channel::{apply_channel, ChannelParams};
use psqam_core::constellation::{solve_shaping_factor, Constellation};
use psqam_core::cpr::{decide, genie_compensate, pll_run, PllConfig, UpdatePolicy};
use psqam_core::framing::{build_layout, sample_frame, PilotRatio};
use psqam_core::harness::{
    required_snr, Format, GainChoice, GainGrid, GainSchedule, Gains, SimSettings, Simulator, SnrSearch,
    DEFAULT_MONOTONE_SLACK, STANDARD_K1, STANDARD_K2,
};
use psqam_core::metrics::{gmi_from_symbols, llr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn gauss_hermite_moments() {
    let (x, w) = gauss_hermite(40);
    let sum: f64 = w.iter().sum();
    assert!((sum - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    // ∫ t² e^{-t²} = √π/2, ∫ t⁴ e^{-t²} = 3√π/4
    let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
    let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
    assert!((m2 - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
    assert!((m4 - 0.75 * std::f64::consts::PI.sqrt()).abs() < 1e-11);
}

fn random_prior(rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    // symmetric, as the constellation requires
    let half: Vec<f64> = (0..side / 2).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut p: Vec<f64> = half.iter().rev().chain(half.iter()).copied().collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

#[test]
fn llr_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for order in [4usize, 16, 64, 256] {
        let side = (order as f64).sqrt() as usize;
        let shaped = if side > 2 {
            Some(Constellation::with_pam_prior(order, &random_prior(&mut rng, side)).unwrap())
        } else {
            None
        };
        for c in [Some(Constellation::uniform(order).unwrap()), shaped].into_iter().flatten() {
            for snr_db in [0.0, 10.0, 25.0] {
                let nv = 10f64.powf(-snr_db / 10.0);
                for _ in 0..300 {
                    let y = Complex64::new(rng.random_range(-1.6..1.6), rng.random_range(-1.6..1.6));
                    let fast = llr(y, &c, nv).unwrap();
                    let slow = brute_llr(y, &c, nv);
                    for (a, b) in fast.iter().zip(&slow) {
                        assert!(
                            (a - b).abs() <= 1e-10 * b.abs().max(1.0),
                            "order {order} snr {snr_db}: {a} vs {b}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn llr_matches_brute_force_on_mb_1024() {
    let c = solve_shaping_factor(1024, 8.347).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let y = Complex64::new(rng.random_range(-1.8..1.8), rng.random_range(-1.8..1.8));
        let fast = llr(y, &c, 0.006).unwrap();
        let slow = brute_llr(y, &c, 0.006);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn decide_is_nearest_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for order in [4usize, 16, 64, 256, 1024] {
        let c = Constellation::uniform(order).unwrap();
        let n = if order == 1024 { 20_000 } else { 100_000 };
        for _ in 0..n {
            let y = Complex64::new(rng.random_range(-1.7..1.7), rng.random_range(-1.7..1.7));
            let k = decide(y, &c);
            let best = brute_nearest(y, &c);
            let (dk, db) = ((y - c.points()[k]).norm_sqr(), (y - c.points()[best]).norm_sqr());
            assert!(dk <= db + 1e-12, "order {order}: {y} decided {k} (d²={dk}) but {best} (d²={db})");
        }
    }
}

#[test]
fn genie_gmi_matches_quadrature() {
    for (order, snr_db) in [(4, 5.0), (16, 10.0), (16, 15.0)] {
        let c = Constellation::uniform(order).unwrap();
        let layout = build_layout(200_100, 100, PilotRatio::from_period(2000).unwrap()).unwrap();
        let frame = sample_frame(&c, &layout, 21);
        let real = apply_channel(&frame.tx_symbols, &ChannelParams::new(0.0, snr_db, 21)).unwrap();
        let comp = genie_compensate(&real);
        let pos = layout.payload_positions();
        let symbols: Vec<Complex64> = pos.iter().map(|&n| comp[n]).collect();
        let mc = gmi_from_symbols(&symbols, &frame.tx_bits, &c, real.noise_var).unwrap();
        let oracle = gmi_quadrature(&c, real.noise_var, 32);
        assert!((mc - oracle).abs() < 0.02, "{order}QAM {snr_db} dB: MC {mc} vs oracle {oracle}");
    }
}

#[test]
fn wiener_variance_at_1000() {
    let params = |seed| ChannelParams::new(50e3, f64::INFINITY, seed);
    let n = 2000;
    let samples: Vec<f64> = (0..n)
        .map(|s| psqam_core::channel::wiener_phase(1001, &params(s))[1000])
        .collect();
    let var = samples.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let expect = 1000.0 * params(0).phase_increment_variance();
    // 2000 samples: relative standard error of a variance is sqrt(2/2000) ≈ 3%
    assert!((var / expect - 1.0).abs() < 0.12, "{var} vs {expect}");
}

#[test]
fn noiseless_offset_converges() {
    let c = Constellation::uniform(16).unwrap();
    let layout = build_layout(4100, 100, PilotRatio::from_period(16).unwrap()).unwrap();
    let frame = sample_frame(&c, &layout, 2);
    let phase = vec![0.3; 4100];
    let real = psqam_core::channel::apply_with_phase(&frame.tx_symbols, phase.clone(), &ChannelParams::new(0.0, f64::INFINITY, 2)).unwrap();
    let trace = pll_run(&real, &frame, &c, &PllConfig::new(0.01, 0.1)).unwrap();
    for n in 2001..4100 {
        assert!((trace.phi_hat[n] - 0.3).abs() < 1e-3, "n={n}: {}", trace.phi_hat[n]);
    }
    // matches the hand-advanced recurrence while decisions are correct
    let reference = reference_loop(&phase, 0.01, 0.1);
    for n in 0..4100 {
        assert!((trace.phi_hat[n] - reference[n]).abs() < 1e-12, "n={n}");
    }
}

#[test]
fn us16_required_snr_matches_awgn_oracle() {
    let settings = SimSettings {
        payload_symbols: 1 << 15,
        seeds: 2,
        ..SimSettings::default()
    };
    let format = Format::uniform(16, 1.0 / 1.21).unwrap();
    let sim = Simulator::new(&settings, &format);
    let search = SnrSearch {
        bracket_db: None,
        tolerance_db: 0.02,
        ngmi_target: 0.857,
        gains: GainChoice::Optimize(GainGrid::log(STANDARD_K1, 4, STANDARD_K2, 4).with_point(Gains::DEFAULT)),
        schedule: GainSchedule::BracketMidpoint,
        monotone_slack: DEFAULT_MONOTONE_SLACK,
    };
    let got = required_snr(&sim, 0.0, PilotRatio::from_period(16).unwrap(), UpdatePolicy::AllSymbols, &search).unwrap();
    let oracle = awgn_required_snr(&format.constellation, 0.857, 24);
    assert!(
        (got.snr_db - oracle).abs() < 0.15,
        "harness {} dB vs oracle {oracle} dB",
        got.snr_db
    );
    assert_eq!(got.per_seed_db.len(), 2);
}
