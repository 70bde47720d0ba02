use nalgebra::DMatrix;
use proptest::prelude::*;

use simavg::data::BlockPartition;
use simavg::kernel::{fitted_means, smoother_matrix, Bandwidth, SmootherMode};
use simavg::weights::{kkt_certificate, project_simplex, softmax_half, solve_simplex_qp, CvGram};

fn design(n: usize, p: usize) -> impl Strategy<Value = (DMatrix<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-2.0f64..2.0, n * p),
        prop::collection::vec(-1.0f64..1.0, p),
        prop::collection::vec(-3.0f64..3.0, n),
    )
        .prop_map(move |(xs, mut b, y)| {
            b[0] = 1.0;
            (DMatrix::from_vec(n, p, xs), b, y)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fitted_means_stay_within_response_range((x, b, y) in design(24, 3), kappa in 0.5f64..3.0) {
        let h = Bandwidth::from_kappa(kappa, 24).unwrap();
        let part = BlockPartition::new(24, 6).unwrap();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for mode in [SmootherMode::Full, SmootherMode::LeaveOneOut, SmootherMode::LeaveBlockOut(part)] {
            let s = smoother_matrix(&x, &b, &h, mode).unwrap();
            for v in fitted_means(&s, &y) {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn smoother_ignores_constant_shift_of_response((x, b, y) in design(20, 2), c in -5.0f64..5.0) {
        let h = Bandwidth::from_kappa(1.0, 20).unwrap();
        let s = smoother_matrix(&x, &b, &h, SmootherMode::LeaveOneOut).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        for (a, z) in fitted_means(&s, &y).iter().zip(fitted_means(&s, &shifted)) {
            prop_assert!((a + c - z).abs() < 1e-9);
        }
    }

    #[test]
    fn simplex_qp_satisfies_kkt(entries in prop::collection::vec(-1.0f64..1.0, 5 * 3)) {
        let b = DMatrix::from_vec(5, 3, entries);
        let g = CvGram::from_matrix(&b * b.transpose()).unwrap();
        let sol = solve_simplex_qp(&g).unwrap();
        let w = sol.weights.as_slice();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!(kkt_certificate(g.matrix(), w, 1e-6));
        for k in 0..5 {
            let mut e = vec![0.0; 5];
            e[k] = 1.0;
            prop_assert!(sol.objective <= g.objective(&e) + 1e-9);
        }
    }

    #[test]
    fn projection_lands_on_simplex(v in prop::collection::vec(-10.0f64..10.0, 1..12)) {
        let w = project_simplex(&v);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        let again = project_simplex(&w);
        for (a, b) in w.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_weights_order_follows_scores(v in prop::collection::vec(-50.0f64..50.0, 2..8)) {
        let w = softmax_half(&v).unwrap();
        let w = w.as_slice();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }
}
