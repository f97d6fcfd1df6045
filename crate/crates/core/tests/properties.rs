use cdma_pme::mc_sim::{self, McConfig};
use cdma_pme::replica_solver::{self, SolverOptions};
use cdma_pme::scalar_channel::{self, ScalarParams};
use cdma_pme::{ChannelKind, Constellation, DetectorSpec, PostulatedNoise, Quadrature, SnrProfile, StandardConstellation as S, SystemSpec};
use proptest::prelude::*;

fn quad() -> Quadrature {
    Quadrature::default()
}

fn any_standard() -> impl Strategy<Value = S> {
    prop_oneof![
        Just(S::Bpsk),
        Just(S::Qpsk),
        Just(S::Psk8),
        Just(S::Qam16),
        Just(S::GaussianReal),
        Just(S::GaussianComplex),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mmse_is_a_decreasing_fraction(p in any_standard(), g in 0.01f64..40.0) {
        let c = Constellation::standard(p);
        let m = scalar_channel::mmse(g, &c, &quad()).unwrap();
        let m2 = scalar_channel::mmse(g * 1.5, &c, &quad()).unwrap();
        prop_assert!(m > 0.0 && m <= 1.0);
        prop_assert!(m2 <= m + 1e-12);
    }

    #[test]
    fn mismatch_never_beats_mmse(
        snr in 0.1f64..20.0,
        eta in 0.05f64..1.0,
        xi in 0.02f64..3.0,
        p in prop_oneof![Just(S::Bpsk), Just(S::GaussianReal)],
        q in prop_oneof![Just(S::Bpsk), Just(S::GaussianReal)],
    ) {
        let (p, q) = (Constellation::standard(p), Constellation::standard(q));
        let params = ScalarParams::new(snr, eta, xi).unwrap();
        let e = scalar_channel::mse(&params, &p, &q, &quad()).unwrap();
        let m = scalar_channel::mmse(eta * snr, &p, &quad()).unwrap();
        prop_assert!(e >= m - 1e-10, "mse {e} < mmse {m}");
    }

    #[test]
    fn information_is_bounded_by_entropy(p in any_standard(), g in 0.01f64..30.0) {
        let c = Constellation::standard(p);
        let i = scalar_channel::mutual_info(g, &c, &quad()).unwrap();
        prop_assert!(i >= 0.0);
        if !c.is_gaussian() {
            prop_assert!(i <= c.entropy() + 1e-9);
        } else {
            let dims = c.channel().dims() as f64;
            prop_assert!((i - 0.5 * dims * (1.0 + g).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn decision_round_trip(z in -4.0f64..4.0, snr in 0.2f64..10.0, xi in 0.05f64..2.0) {
        let b = Constellation::standard(S::Bpsk);
        let params = ScalarParams::new(snr, 1.0, xi).unwrap();
        let v = scalar_channel::decision([z, 0.0], &params, &b);
        prop_assert!(v[0].abs() < 1.0);
        if let Ok(back) = scalar_channel::decision_inverse(v, &params, &b) {
            let again = scalar_channel::decision(back, &params, &b);
            prop_assert!((again[0] - v[0]).abs() < 1e-11);
            // Rounding in v is amplified by dz/dv = 1 / (xi sqrt(snr) (1 - v^2)).
            let cond = 1.0 / (xi * snr.sqrt() * (1.0 - v[0] * v[0]));
            prop_assert!((back[0] - z).abs() < 1e-9 * z.abs().max(1.0) + 1e-15 * cond);
        } else {
            // Only a decision numerically at +-1 may fail to invert.
            prop_assert!(v[0].abs() > 1.0 - 1e-12);
        }
    }

    #[test]
    fn lmmse_solves_tse_hanly(beta in 0.1f64..4.0, snr in 0.1f64..30.0) {
        let c = Constellation::standard(S::GaussianReal);
        let spec = SystemSpec::for_prior(beta, SnrProfile::equal(snr).unwrap(), c, DetectorSpec::lmmse(ChannelKind::Real)).unwrap();
        let eta = replica_solver::lmmse_eta(&spec);
        prop_assert!(eta > 0.0 && eta <= 1.0);
        let rhs = 1.0 / (1.0 + beta * snr / (1.0 + eta * snr));
        prop_assert!((eta - rhs).abs() < 1e-10);
    }

    #[test]
    fn efficiency_ordering(beta in 0.1f64..0.9, snr_db in -5.0f64..12.0) {
        // matched filter <= lmmse <= individually optimal, and decorrelator <= lmmse
        let b = Constellation::standard(S::Bpsk);
        let prof = SnrProfile::equal_db(snr_db).unwrap();
        let opts = SolverOptions::default();
        let eta = |d: DetectorSpec| {
            let s = SystemSpec::for_prior(beta, prof.clone(), b.clone(), d).unwrap();
            replica_solver::solve(&s, &opts).unwrap().eta
        };
        let mf = eta(DetectorSpec::matched_filter(ChannelKind::Real));
        let dec = eta(DetectorSpec::decorrelator(ChannelKind::Real));
        let lm = eta(DetectorSpec::lmmse(ChannelKind::Real));
        let io = eta(DetectorSpec::individually_optimal(&b));
        prop_assert!(mf <= lm + 1e-12 && dec <= lm + 1e-12);
        prop_assert!(lm <= io + 1e-9, "lmmse {lm} io {io}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stratified_assignment_matches_weights(users in 1usize..200, w in 0.05f64..0.95) {
        let prof = SnrProfile::new(vec![
            cdma_pme::SnrAtom { snr: 1.0, weight: w },
            cdma_pme::SnrAtom { snr: 4.0, weight: 1.0 - w },
        ]).unwrap();
        let snrs = prof.assign(users);
        let low = snrs.iter().filter(|&&s| s == 1.0).count() as f64;
        prop_assert!((low - w * users as f64).abs() <= 1.0);
    }

    #[test]
    fn posterior_means_stay_in_the_hull(seed in any::<u64>(), snr_db in -5.0f64..15.0, users in 1usize..7) {
        let b = Constellation::standard(S::Bpsk);
        let mut cfg = McConfig::new(users, 6, SnrProfile::equal_db(snr_db).unwrap(), b.clone(), DetectorSpec::individually_optimal(&b));
        cfg.seed = seed;
        let sys = mc_sim::generate_system(&cfg, 0);
        let est = mc_sim::detect(&cfg, &sys).unwrap();
        prop_assert!(est.iter().all(|v| v[0].abs() <= 1.0 && v[1] == 0.0));
        let jo = mc_sim::detect_exact(&sys, &b, None, 12).unwrap();
        prop_assert!(jo.iter().all(|v| v[0].abs() == 1.0));
    }

    #[test]
    fn systems_depend_only_on_seed_and_trial(seed in any::<u64>(), trial in 0u64..1000) {
        let b = Constellation::standard(S::Bpsk);
        let cfg = McConfig { seed, ..McConfig::new(3, 5, SnrProfile::equal(2.0).unwrap(), b, DetectorSpec::lmmse(ChannelKind::Real)) };
        let other = McConfig { detector: DetectorSpec::matched_filter(ChannelKind::Real), ..cfg.clone() };
        prop_assert_eq!(mc_sim::generate_system(&cfg, trial), mc_sim::generate_system(&other, trial));
    }

    #[test]
    fn large_sigma_linear_tends_to_matched_filter(seed in any::<u64>()) {
        let b = Constellation::standard(S::Bpsk);
        let cfg = McConfig { seed, ..McConfig::new(4, 6, SnrProfile::equal(2.0).unwrap(), b, DetectorSpec::lmmse(ChannelKind::Real)) };
        let sys = mc_sim::generate_system(&cfg, 0);
        let mf = mc_sim::detect_linear(&sys, PostulatedNoise::InfiniteLimit).unwrap();
        let lin = mc_sim::detect_linear(&sys, PostulatedNoise::Finite(1e4)).unwrap();
        for (a, l) in mf.iter().zip(&lin) {
            prop_assert!((a[0] - 1e8 * l[0]).abs() < 1e-5 * a[0].abs().max(1.0));
        }
    }
}
