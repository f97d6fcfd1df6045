use cdma_pme::constellation::{db_to_linear, Point};
use cdma_pme::mc_sim::{self, ChipLaw, McConfig};
use cdma_pme::replica_solver::{self, SolverOptions};
use cdma_pme::{ChannelKind, Constellation, DetectorSpec, SnrProfile, StandardConstellation as S};

fn bpsk() -> Constellation {
    Constellation::standard(S::Bpsk)
}

fn config(users: usize, spreading: usize, snr_db: f64, det: DetectorSpec, trials: usize, seed: u64) -> McConfig {
    let mut c = McConfig::new(users, spreading, SnrProfile::equal(db_to_linear(snr_db)).unwrap(), bpsk(), det);
    c.trials = trials;
    c.seed = seed;
    c
}

/// Per-sample squared errors of `det` on the systems generated by `base`.
fn squared_errors(base: &McConfig, det: DetectorSpec, rescale: impl Fn(Point, f64) -> Point) -> Vec<f64> {
    let cfg = McConfig { detector: det, ..base.clone() };
    (0..base.trials as u64)
        .flat_map(|t| {
            let sys = mc_sim::generate_system(base, t);
            let est = mc_sim::detect(&cfg, &sys).unwrap();
            est.into_iter()
                .zip(sys.x0.clone())
                .zip(sys.snrs.clone())
                .map(|((v, x), snr)| {
                    let v = rescale(v, snr);
                    (v[0] - x[0]).powi(2) + (v[1] - x[1]).powi(2)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn identity(v: Point, _: f64) -> Point {
    v
}

/// The matched filter output divided by the user's SNR is an unbiased
/// estimate; scaling it this way keeps the comparison meaningful.
fn mf_scale(v: Point, snr: f64) -> Point {
    [v[0] / snr, v[1] / snr]
}

#[test]
fn lmmse_has_lowest_mse_among_linear_detectors() {
    let base = config(8, 12, 2.0, DetectorSpec::lmmse(ChannelKind::Real), 2000, 3);
    let (lmmse, _) = mean_se(&squared_errors(&base, DetectorSpec::lmmse(ChannelKind::Real), identity));
    let (mf, _) = mean_se(&squared_errors(&base, DetectorSpec::matched_filter(ChannelKind::Real), mf_scale));
    let (dec, _) = mean_se(&squared_errors(&base, DetectorSpec::decorrelator(ChannelKind::Real), identity));
    assert!(lmmse < mf && lmmse < dec, "lmmse {lmmse}, mf {mf}, dec {dec}");
}

#[test]
fn posterior_mean_dominates_every_detector() {
    let base = config(8, 12, 2.0, DetectorSpec::individually_optimal(&bpsk()), 1500, 5);
    let (io, _) = mean_se(&squared_errors(&base, DetectorSpec::individually_optimal(&bpsk()), identity));
    let others = [
        ("matched filter", squared_errors(&base, DetectorSpec::matched_filter(ChannelKind::Real), mf_scale)),
        ("decorrelator", squared_errors(&base, DetectorSpec::decorrelator(ChannelKind::Real), identity)),
        ("lmmse", squared_errors(&base, DetectorSpec::lmmse(ChannelKind::Real), identity)),
        ("jointly optimal", squared_errors(&base, DetectorSpec::jointly_optimal(&bpsk()), identity)),
        (
            "bpsk prior, sigma 0.5",
            squared_errors(&base, DetectorSpec::custom(bpsk(), cdma_pme::PostulatedNoise::Finite(0.5)).unwrap(), identity),
        ),
    ];
    for (name, errs) in others {
        let (m, se) = mean_se(&errs);
        assert!(io <= m + 3.0 * se, "{name}: io {io} vs {m} ± {se}");
    }
}

/// Least-squares slope of the outputs on the transmitted symbols.
fn regression_gain(cfg: &McConfig) -> f64 {
    let (mut xy, mut xx) = (0.0, 0.0);
    for t in 0..cfg.trials as u64 {
        let sys = mc_sim::generate_system(cfg, t);
        let est = mc_sim::detect(cfg, &sys).unwrap();
        for (v, x) in est.iter().zip(&sys.x0) {
            xy += v[0] * x[0];
            xx += x[0] * x[0];
        }
    }
    xy / xx
}

#[test]
fn linear_detector_gains_at_64_users() {
    let snr = db_to_linear(4.0);
    let mk = |det| config(64, 128, 4.0, det, 300, 11);
    let mf = regression_gain(&mk(DetectorSpec::matched_filter(ChannelKind::Real)));
    assert!((mf / snr - 1.0).abs() < 0.02, "matched filter gain {mf}");
    let dec = regression_gain(&mk(DetectorSpec::decorrelator(ChannelKind::Real)));
    assert!((dec - 1.0).abs() < 0.02, "decorrelator gain {dec}");
    let cfg = mk(DetectorSpec::lmmse(ChannelKind::Real));
    let xi = replica_solver::solve(&cfg.system_spec().unwrap(), &SolverOptions::default())
        .unwrap()
        .xi
        .unwrap();
    let want = xi * snr / (1.0 + xi * snr);
    let got = regression_gain(&cfg);
    assert!((got / want - 1.0).abs() < 0.02, "lmmse gain {got} vs {want}");
}

#[test]
fn matched_filter_interference_is_nearly_gaussian() {
    let mut cfg = config(64, 96, 2.0, DetectorSpec::matched_filter(ChannelKind::Real), 600, 13);
    cfg.chip_law = ChipLaw::BinaryPm1;
    let sol = replica_solver::solve(&cfg.system_spec().unwrap(), &SolverOptions::default()).unwrap();
    let records = mc_sim::run_trials(&cfg, &sol).unwrap();
    let report = mc_sim::decoupling_report(&cfg, &sol, &records);
    let k = report.atoms[0].residual.excess_kurtosis;
    assert!(k.abs() < 0.1, "excess kurtosis {k}");
}

#[test]
fn ber_gap_shrinks_with_size() {
    let mut gaps = vec![];
    for (k, trials) in [(8, 12_000), (16, 6_000), (32, 3_000)] {
        let cfg = config(k, k * 3 / 2, 6.0, DetectorSpec::decorrelator(ChannelKind::Real), trials, 17);
        let sol = replica_solver::solve(&cfg.system_spec().unwrap(), &SolverOptions::default()).unwrap();
        let records = mc_sim::run_trials(&cfg, &sol).unwrap();
        let atom = &mc_sim::decoupling_report(&cfg, &sol, &records).atoms[0];
        let predicted = atom.predicted_ber.unwrap();
        gaps.push((atom.ber - predicted).abs() / predicted);
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "relative gaps {gaps:?}");
}

#[test]
fn linear_detectors_never_saturate() {
    for det in [
        DetectorSpec::matched_filter(ChannelKind::Real),
        DetectorSpec::decorrelator(ChannelKind::Real),
        DetectorSpec::lmmse(ChannelKind::Real),
    ] {
        let cfg = config(10, 12, 8.0, det, 300, 19);
        let sol = replica_solver::solve(&cfg.system_spec().unwrap(), &SolverOptions::default()).unwrap();
        let records = mc_sim::run_trials(&cfg, &sol).unwrap();
        assert!(records.iter().flat_map(|r| &r.users).all(|u| u.hidden_z.is_some()));
        let report = mc_sim::decoupling_report(&cfg, &sol, &records);
        assert_eq!(report.atoms[0].residual.saturated, 0);
    }
}

#[test]
fn qpsk_decoupling_is_close_at_small_size() {
    let q = Constellation::standard(S::Qpsk);
    let mut cfg = McConfig::new(6, 9, SnrProfile::equal(db_to_linear(2.0)).unwrap(), q.clone(), DetectorSpec::individually_optimal(&q));
    cfg.trials = 1500;
    let sol = replica_solver::solve(&cfg.system_spec().unwrap(), &SolverOptions::default()).unwrap();
    let records = mc_sim::run_trials(&cfg, &sol).unwrap();
    let report = mc_sim::decoupling_report(&cfg, &sol, &records);
    for s in &report.atoms[0].per_symbol {
        assert!((s.mean[0] - s.symbol[0]).abs() < 0.15 && (s.mean[1] - s.symbol[1]).abs() < 0.15);
        assert!(s.ks < 0.1, "ks {}", s.ks);
    }
}

#[test]
fn two_group_profile_reports_each_atom() {
    let mut cfg = McConfig::new(
        8,
        12,
        SnrProfile::two_group(3.0, 6.0).unwrap(),
        bpsk(),
        DetectorSpec::lmmse(ChannelKind::Real),
    );
    cfg.trials = 400;
    let sol = replica_solver::solve(&cfg.system_spec().unwrap(), &SolverOptions::default()).unwrap();
    let records = mc_sim::run_trials(&cfg, &sol).unwrap();
    let report = mc_sim::decoupling_report(&cfg, &sol, &records);
    assert_eq!(report.atoms.len(), 2);
    assert_eq!(report.atoms[0].samples, 1600);
    // The stronger group decodes better.
    assert!(report.atoms[1].ber < report.atoms[0].ber);
}
