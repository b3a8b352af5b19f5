use afc_core::correlator::{correlate, StreamingCorrelator};
use afc_core::memory::{decay_factor, echo_efficiency_parametric, efficiency_finesse_derivative, optimal_finesse};
use afc_core::pulse::{crest_factor, pulse_spectrum, tone_comb};
use afc_core::pumping::{fastest_rate, propagate_exact, rate_step, DriveRates, HyperfineSystem, PopulationState};
use afc_core::{BinSpec, CorrelatorConfig, EventStream, IDLER, SIGNAL, SYNC};
use proptest::prelude::*;

fn gated_records(raw: &[(u8, u32)], trials: u64, period: u64) -> Vec<(u8, u64)> {
    let mut rec: Vec<(u8, u64)> = (0..trials).map(|j| (SYNC, 1_000 + j * period)).collect();
    rec.extend(raw.iter().map(|&(c, t)| (c % 2, 1_000 + t as u64 % (trials * period))));
    rec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chunking_never_changes_correlation(
        raw in proptest::collection::vec((0u8..2, any::<u32>()), 0..600),
        cuts in proptest::collection::vec(1usize..200, 1..8),
        shifts in 0usize..4,
    ) {
        let period = 40_000u64;
        let stream = EventStream::from_records(gated_records(&raw, 50, period), Some(period));
        let ev = stream.events();
        let bins = BinSpec::anchored(-10_000, 30_000, 1_000, 20_000).unwrap();
        let cfg = CorrelatorConfig {
            trial_period_ps: Some(period as i64),
            shifts,
            windows: vec![(15_000, 25_000)],
            ..CorrelatorConfig::plain(IDLER, SIGNAL, bins)
        };
        let whole = correlate(ev, cfg.clone()).unwrap();
        let mut s = StreamingCorrelator::new(cfg).unwrap();
        let mut rest = ev;
        let mut k = 0;
        while !rest.is_empty() {
            let n = cuts[k % cuts.len()].min(rest.len());
            s.push(&rest[..n]).unwrap();
            rest = &rest[n..];
            k += 1;
        }
        prop_assert_eq!(s.finish(), whole);
    }

    #[test]
    fn finesse_derivative_matches_central_difference(
        d in 0.1f64..10.0,
        f in 1.2f64..12.0,
        d0 in 0.0f64..0.5,
    ) {
        let h = 1e-5 * f;
        let up = echo_efficiency_parametric(d, f + h, d0).unwrap();
        let down = echo_efficiency_parametric(d, f - h, d0).unwrap();
        let fd = (up - down) / (2.0 * h);
        let a = efficiency_finesse_derivative(d, f, d0).unwrap();
        prop_assert!((a - fd).abs() <= 1e-6 * a.abs().max(1e-6), "{a} vs {fd}");
    }

    #[test]
    fn efficiency_is_unimodal_in_finesse(d in 0.2f64..10.0, d0 in 0.0f64..0.5) {
        let (f_opt, eta_opt) = optimal_finesse(d, d0).unwrap();
        let mut prev = 0.0;
        for i in 1..400 {
            let f = 1.0 + 0.05 * i as f64;
            let eta = echo_efficiency_parametric(d, f, d0).unwrap();
            prop_assert!(eta <= eta_opt * (1.0 + 1e-9));
            if f + 0.05 < f_opt {
                prop_assert!(eta >= prev, "falls before the optimum at F = {f}");
            } else if f - 0.05 > f_opt {
                prop_assert!(eta <= prev, "rises after the optimum at F = {f}");
            }
            prev = eta;
        }
    }

    #[test]
    fn decay_is_multiplicative(a in 0.0f64..100.0, b in 0.0f64..100.0, t2 in 1.0f64..500.0) {
        let lhs = decay_factor(a + b, t2);
        let rhs = decay_factor(a, t2) * decay_factor(b, t2);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300));
    }

    #[test]
    fn pumping_conserves_population(
        rates in proptest::collection::vec(0.0f64..5e3, 16),
        duration in 1e-6f64..0.05,
        start in 0usize..5,
    ) {
        let sys = HyperfineSystem::default();
        let mut drive = DriveRates::none();
        for (k, r) in rates.iter().enumerate() {
            drive.w[k / 4][k % 4] = *r;
        }
        let s0 = if start == 4 { PopulationState::thermal() } else { PopulationState::in_ground(start) };
        let exact = propagate_exact(&sys, &s0, &drive, duration).unwrap();
        prop_assert!((exact.total() - 1.0).abs() < 1e-9);
        let dt = 0.05 / fastest_rate(&sys, &drive);
        let step = rate_step(&sys, &s0, &drive, dt).unwrap();
        prop_assert!((step.total() - 1.0).abs() < 1e-12);
        prop_assert!(step.p.iter().all(|&p| p >= -1e-15));
    }

    #[test]
    fn tone_combs_obey_parseval_and_crest_bound(
        phases in proptest::collection::vec(0.0f64..std::f64::consts::TAU, 1..64),
    ) {
        let w = tone_comb(&phases, 256).unwrap();
        let c = crest_factor(&w).unwrap();
        prop_assert!(c >= 1.0 - 1e-12 && c <= phases.len() as f64 * (1.0 + 1e-9));
        let time: f64 = w.samples().iter().map(|a| a.norm_sqr()).sum();
        prop_assert!((pulse_spectrum(&w).unwrap().total() - time).abs() <= 1e-9 * time);
    }
}
