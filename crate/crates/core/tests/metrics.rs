mod common;

use std::collections::BTreeMap;

use common::{rng, uniform};
use proptest::prelude::*;
use tfformer::color::RgbImage;
use tfformer::metrics::*;

fn outcome(w: &str, l: &str, k: f64) -> RankingOutcome {
    RankingOutcome::new(w, l, k)
}

#[test]
fn psnr_closed_forms() {
    let a = RgbImage::filled(4, 4, [0.3; 3]);
    let b = RgbImage::filled(4, 4, [0.4; 3]);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-6);

    let x = RgbImage::filled(3, 5, [100.0, 40.0, 7.0]);
    let y = RgbImage::filled(3, 5, [110.0, 30.0, 17.0]);
    let want = 10.0 * (255.0f64 * 255.0 / 100.0).log10();
    assert!((psnr(&x, &y, 255.0).unwrap() - want).abs() < 1e-6);
    assert!((want - 28.13).abs() < 5e-3);

    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    assert!(psnr(&a, &RgbImage::filled(4, 5, [0.0; 3]), 1.0).is_err());
}

#[test]
fn ssim_constant_cases() {
    let zero = RgbImage::filled(12, 12, [0.0; 3]);
    let one = RgbImage::filled(12, 12, [1.0; 3]);
    let half = RgbImage::filled(12, 12, [0.5; 3]);
    assert_eq!(ssim(&half, &half).unwrap(), 1.0);
    let c1 = 0.01f64 * 0.01;
    assert!((ssim(&zero, &one).unwrap() - c1 / (1.0 + c1)).abs() < 1e-15);
    assert!(matches!(ssim(&RgbImage::filled(10, 20, [0.0; 3]), &RgbImage::filled(10, 20, [0.0; 3])), Err(MetricError::TooSmall { .. })));
}

#[test]
fn ssim_of_noise_against_itself() {
    let mut g = rng(1);
    for _ in 0..5 {
        let a = RgbImage::from_planar(13, 16, uniform(&mut g, 3 * 13 * 16, 0.0, 1.0)).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn two_item_ratio() {
    let fit = bradley_terry_fit(&[outcome("A", "B", 3.0), outcome("B", "A", 1.0)], &BtOptions::default()).unwrap();
    let ratio = fit.strength("A").unwrap() / fit.strength("B").unwrap();
    assert!((ratio - 3.0).abs() < 1e-9, "{ratio}");
    assert!(fit.converged);
    assert!((fit.strengths.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn symmetric_three_items() {
    let mut o = Vec::new();
    for (a, b) in [("x", "y"), ("y", "z"), ("z", "x")] {
        o.push(outcome(a, b, 2.0));
        o.push(outcome(b, a, 2.0));
    }
    let fit = bradley_terry_fit(&o, &BtOptions::default()).unwrap();
    for s in &fit.strengths {
        assert!((s - 1.0 / 3.0).abs() < 1e-12);
    }
}

fn three_item_instance() -> Vec<RankingOutcome> {
    vec![
        outcome("a", "b", 5.0),
        outcome("b", "a", 2.0),
        outcome("b", "c", 4.0),
        outcome("c", "b", 3.0),
        outcome("a", "c", 6.0),
        outcome("c", "a", 1.0),
    ]
}

/// Log-likelihood of the instance at log-strengths (0, u, v), written out
/// term by term.
fn ll(u: f64, v: f64) -> f64 {
    let (a, b, c) = (1.0f64, u.exp(), v.exp());
    let term = |k: f64, p: f64, q: f64| k * (p / (p + q)).ln();
    term(5.0, a, b) + term(2.0, b, a) + term(4.0, b, c) + term(3.0, c, b) + term(6.0, a, c) + term(1.0, c, a)
}

#[test]
fn matches_grid_refinement_oracle() {
    let (mut u, mut v) = (0.0, 0.0);
    let mut step = 1.0;
    while step > 1e-12 {
        let mut best = (ll(u, v), u, v);
        for du in -10..=10 {
            for dv in -10..=10 {
                let (uu, vv) = (u + du as f64 * step / 10.0, v + dv as f64 * step / 10.0);
                let val = ll(uu, vv);
                if val > best.0 {
                    best = (val, uu, vv);
                }
            }
        }
        if best.1 == u && best.2 == v {
            step /= 4.0;
        }
        u = best.1;
        v = best.2;
    }
    let raw = [1.0, u.exp(), v.exp()];
    let total: f64 = raw.iter().sum();
    let fit = bradley_terry_fit(&three_item_instance(), &BtOptions::default()).unwrap();
    assert_eq!(fit.ids, vec!["a", "b", "c"]);
    for (got, want) in fit.strengths.iter().zip(raw.iter().map(|r| r / total)) {
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
    assert_eq!(fit.ranking(), vec!["a", "b", "c"]);

    let map: BTreeMap<String, f64> = fit.ids.iter().cloned().zip(fit.strengths.iter().cloned()).collect();
    let here = bradley_terry_log_likelihood(&three_item_instance(), &map).unwrap();
    assert!((here - ll(u, v)).abs() < 1e-9);
}

#[test]
fn scaling_weights_keeps_strengths() {
    let base = bradley_terry_fit(&three_item_instance(), &BtOptions::default()).unwrap();
    let scaled: Vec<_> = three_item_instance().into_iter().map(|o| RankingOutcome { weight: o.weight * 7.0, ..o }).collect();
    let fit = bradley_terry_fit(&scaled, &BtOptions::default()).unwrap();
    for (a, b) in base.strengths.iter().zip(&fit.strengths) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn disconnected_graph_lists_components() {
    let err = bradley_terry_fit(&[outcome("a", "b", 1.0), outcome("c", "d", 2.0)], &BtOptions::default()).unwrap_err();
    match &err {
        MetricError::Disconnected(groups) => assert_eq!(groups, &vec![vec!["a".to_string(), "b".into()], vec!["c".into(), "d".into()]]),
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("{a, b}"));
}

#[test]
fn invalid_outcomes() {
    assert!(bradley_terry_fit(&[outcome("a", "a", 1.0)], &BtOptions::default()).is_err());
    assert!(bradley_terry_fit(&[outcome("a", "b", 0.5)], &BtOptions::default()).is_err());
    assert!(bradley_terry_fit(&[], &BtOptions::default()).is_err());
}

#[test]
fn winless_item_with_smoothing() {
    let o = [outcome("a", "b", 2.0), outcome("b", "c", 1.0)];
    let fit = bradley_terry_fit(&o, &BtOptions::smoothed()).unwrap();
    assert!(fit.strengths.iter().all(|&s| s > 0.0 && s.is_finite()));
    assert_eq!(fit.ranking(), vec!["a", "b", "c"]);
}

#[test]
fn distribution_report_rows_and_bins() {
    let black = RgbImage::filled(4, 4, [0.0; 3]);
    let r = distribution_report(std::slice::from_ref(&black)).unwrap();
    assert_eq!(r.rows, vec![ImageStats { mean_intensity: 0.0, sharpness: 0.0 }]);

    let gray = RgbImage::filled(4, 4, [0.5; 3]);
    let noisy = RgbImage::from_planar(5, 5, uniform(&mut rng(3), 75, 0.0, 1.0)).unwrap();
    let r = distribution_report(&[gray, black, noisy]).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert_eq!(r.rows[0].mean_intensity, 127.5);
    assert_eq!(r.rows[1].mean_intensity, 0.0);
    assert_eq!(r.intensity.total(), 3);
    assert_eq!(r.sharpness.total(), 3);
    assert_eq!(r.intensity.counts.len(), HISTOGRAM_BINS);
    let tsv = r.to_tsv();
    assert!(tsv.starts_with("index\tmean_intensity\tsharpness\n0\t127.500000"));
    assert!(distribution_report(&[]).is_err());
}

#[test]
fn results_table_footer() {
    let mut t = ResultsTable::default();
    t.push("p1", 20.0, 0.5);
    t.push("p2", 31.0, 0.75);
    let (p, s) = t.means().unwrap();
    assert!((p - 25.5).abs() < 1e-9 && (s - 0.625).abs() < 1e-9);
    let tsv = t.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert!(lines[0].starts_with('#') && lines[0].contains("LPIPS"));
    assert_eq!(lines[1], "pair_id\tpsnr_db\tssim");
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[4], "mean\t25.500000\t0.625000");
}

proptest! {
    #[test]
    fn psnr_is_symmetric(a in prop::collection::vec(0.0f64..1.0, 12), b in prop::collection::vec(0.0f64..1.0, 12)) {
        let (x, y) = (RgbImage::from_planar(2, 2, a).unwrap(), RgbImage::from_planar(2, 2, b).unwrap());
        prop_assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
    }

    #[test]
    fn ssim_is_symmetric(seed in 0u64..1000) {
        let mut g = rng(seed);
        let x = RgbImage::from_planar(11, 12, uniform(&mut g, 396, 0.0, 1.0)).unwrap();
        let y = RgbImage::from_planar(11, 12, uniform(&mut g, 396, 0.0, 1.0)).unwrap();
        let (p, q) = (ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
        prop_assert!((p - q).abs() < 1e-14);
        prop_assert!((-1.0..=1.0).contains(&p));
    }

    #[test]
    fn bt_is_scale_invariant(w in prop::collection::vec(1u32..9, 6), k in 1u32..20) {
        let pairs = [("a", "b"), ("b", "a"), ("b", "c"), ("c", "b"), ("a", "c"), ("c", "a")];
        let mk = |m: f64| -> Vec<RankingOutcome> { pairs.iter().zip(&w).map(|((p, q), &n)| outcome(p, q, n as f64 * m)).collect() };
        let (f1, f2) = (bradley_terry_fit(&mk(1.0), &BtOptions::default()).unwrap(), bradley_terry_fit(&mk(k as f64), &BtOptions::default()).unwrap());
        for (a, b) in f1.strengths.iter().zip(&f2.strengths) {
            prop_assert!((a - b).abs() < 1e-8);
        }
        prop_assert_eq!(f1.ranking(), f2.ranking());
    }
}
