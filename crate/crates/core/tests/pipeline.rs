use simavg::averaging::{combine, fit_ensemble, weigh, Method};
use simavg::data::{enumerate_candidates, make_partition, Dataset};
use simavg::estimator::FitOptions;
use simavg::kernel::DEFAULT_KAPPA_GRID;
use simavg::monte_carlo::{generate, DgpSpec, Link, Situation};
use simavg::screening::screen_by_correlation;

fn sample(seed: u64) -> simavg::monte_carlo::Sample {
    generate(&DgpSpec::new(Link::Sin, Situation::One, 100, 0.7), seed, 0).unwrap()
}

#[test]
fn fit_weigh_predict_round_trip() {
    let s = sample(3);
    let specs = enumerate_candidates(s.train.p(), &[0], &[6], &[1, 2, 3]).unwrap();
    assert_eq!(specs.len(), 7);
    let partition = make_partition(s.train.n(), 50).unwrap();
    let ensemble = fit_ensemble(&s.train, &specs, None, &partition, &FitOptions::default()).unwrap();
    assert_eq!(ensemble.len() + ensemble.dropped.len(), specs.len());

    let weighting = weigh(&s.train, &ensemble, &Method::ALL).unwrap();
    for (m, w) in &weighting.weights {
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "{m} weights sum to {total}");
        assert!(w.iter().all(|&v| v >= -1e-12));
        if m.is_selection() {
            assert_eq!(w.iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }

    let pred = ensemble.predict(&s.train, &s.x_test).unwrap();
    assert_eq!(pred.shape(), (ensemble.len(), s.x_test.nrows()));
    let w = weighting.weights_of(Method::Jcvma).unwrap();
    let avg = combine(w, &pred);
    let mspe: f64 = avg.iter().zip(&s.mu_test).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        / avg.len() as f64;
    let var_mu = {
        let m = s.mu_test.iter().sum::<f64>() / s.mu_test.len() as f64;
        s.mu_test.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.mu_test.len() as f64
    };
    // Averaging should explain a good share of the signal at R^2 = 0.7.
    assert!(mspe < var_mu, "mspe {mspe} vs signal variance {var_mu}");
}

#[test]
fn in_sample_prediction_reproduces_fitted_means() {
    let s = sample(9);
    let specs = enumerate_candidates(s.train.p(), &[0], &[], &[1, 2]).unwrap();
    let partition = make_partition(s.train.n(), 50).unwrap();
    let ensemble = fit_ensemble(&s.train, &specs, None, &partition, &FitOptions::default()).unwrap();
    let pred = ensemble.predict(&s.train, s.train.x()).unwrap();
    for (k, fit) in ensemble.fits.iter().enumerate() {
        for i in 0..s.train.n() {
            assert!((pred[(k, i)] - fit.mu_hat[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn correlation_screen_feeds_ensemble() {
    let s = sample(4);
    let screen = screen_by_correlation(&s.train, &[0], &[], 4).unwrap();
    assert_eq!(screen.len(), 4);
    for pair in screen.candidates.windows(2) {
        assert_eq!(pair[1].len(), pair[0].len() + 1);
        assert!(pair[0].indices().iter().all(|&j| pair[1].contains(j)));
    }
    let partition = make_partition(s.train.n(), 50).unwrap();
    let ensemble =
        fit_ensemble(&s.train, &screen.candidates, None, &partition, &FitOptions::default()).unwrap();
    let weighting = weigh(&s.train, &ensemble, &[Method::Full, Method::Jcvma]).unwrap();
    assert_eq!(weighting.selected_by(Method::Full), Some(ensemble.len() - 1));
}

#[test]
fn csv_round_trip_preserves_data() {
    let s = sample(2);
    let mut buf = Vec::new();
    s.train.write_csv(&mut buf).unwrap();
    let back = Dataset::from_csv_reader(buf.as_slice()).unwrap();
    assert_eq!(back.n(), s.train.n());
    assert_eq!(back.p(), s.train.p());
    assert_eq!(back.y(), s.train.y());
    assert_eq!(back.x(), s.train.x());
}

#[test]
fn fits_are_deterministic() {
    let s = sample(6);
    let specs = enumerate_candidates(s.train.p(), &[0], &[], &[1]).unwrap();
    let partition = make_partition(s.train.n(), 50).unwrap();
    let opts = FitOptions {
        kappa_grid: DEFAULT_KAPPA_GRID.to_vec(),
        ..FitOptions::default()
    };
    let a = fit_ensemble(&s.train, &specs, None, &partition, &opts).unwrap();
    let b = fit_ensemble(&s.train, &specs, None, &partition, &opts).unwrap();
    for (x, y) in a.fits.iter().zip(&b.fits) {
        assert_eq!(x.mu_tilde, y.mu_tilde);
        assert_eq!(x.bandwidth.h, y.bandwidth.h);
    }
}
