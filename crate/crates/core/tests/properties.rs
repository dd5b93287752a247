use ddc_core::index::{normalize_theta, pss_estimate};
use ddc_core::kernels::KernelSpec;
use ddc_core::matrix::{norm, RowMatrix};
use ddc_core::panel::{load_panel, write_panel, Observation, PanelSample, PanelSchema};
use proptest::prelude::*;

fn data(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (prop::collection::vec(-3.0..3.0f64, 2 * n), prop::collection::vec(0u8..2, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flip_negates_exactly((xs, y) in data(40), h in 0.2..2.0f64) {
        let m = RowMatrix::from_vec(40, 2, xs);
        let k = KernelSpec::high_order(4, 2).unwrap();
        let a = pss_estimate(&m, &y, &k, h).unwrap();
        let f: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        let b = pss_estimate(&m, &f, &k, h).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u + v).abs() <= 1e-10);
        }
    }

    #[test]
    fn reversal_is_bit_exact((xs, y) in data(30)) {
        let m = RowMatrix::from_vec(30, 2, xs);
        let k = KernelSpec::high_order(4, 2).unwrap();
        let idx: Vec<usize> = (0..30).rev().collect();
        let yr: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        prop_assert_eq!(pss_estimate(&m, &y, &k, 0.7).unwrap(), pss_estimate(&m.select_rows(&idx), &yr, &k, 0.7).unwrap());
    }

    #[test]
    fn normalization_ignores_positive_scale(v in prop::collection::vec(-5.0..5.0f64, 3), c in 0.01..100.0f64) {
        prop_assume!(norm(&v) > 1e-3);
        let a = normalize_theta(&v, None).unwrap();
        let w: Vec<f64> = v.iter().map(|x| c * x).collect();
        let b = normalize_theta(&w, None).unwrap();
        for (p, q) in a.theta_star.iter().zip(&b.theta_star) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
        let s = normalize_theta(&v, Some(2.5)).unwrap();
        prop_assert!((norm(&s.theta_star) - 2.5).abs() <= 1e-12);
    }

    #[test]
    fn panel_csv_round_trip(rows in prop::collection::vec((0i64..4, 0u8..2, -1e6..1e6f64, 0.0..1e3f64), 1..40)) {
        let mut next = [0i64; 4];
        let obs: Vec<Observation> = rows
            .iter()
            .map(|(p, y, a, b)| {
                next[*p as usize] += 1;
                Observation { path_id: *p, t: next[*p as usize] - 1, y: *y, x: vec![*a, *b] }
            })
            .collect();
        let s = PanelSample::new(obs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.csv");
        write_panel(&f, &s).unwrap();
        let back = load_panel(&f, &PanelSchema::default()).unwrap();
        prop_assert_eq!(back.observations(), s.observations());
    }
}
