mod common;

use common::{fd_check, probe_loss, rng, uniform};
use proptest::prelude::*;
use tfformer::color::{decompose, decompose_tensor, recompose, recompose_tensor, LcPair, RgbImage};
use tfformer::tensor::{self, Tensor};

#[test]
fn random_images_round_trip_bit_exactly() {
    let mut g = rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let img = RgbImage::from_planar(8, 8, uniform(&mut g, 192, 0.0, 1.0)).unwrap();
        let back = recompose(&decompose(&img)).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            worst = worst.max((a - b).abs());
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    assert_eq!(worst, 0.0);
}

#[test]
fn eight_bit_images_round_trip_within_one_ulp_scale() {
    let mut g = rng(5);
    for _ in 0..100 {
        let data = uniform(&mut g, 48, 0.0, 256.0).into_iter().map(|v| v.floor() / 255.0).collect();
        let img = RgbImage::from_planar(4, 4, data).unwrap();
        let back = recompose(&decompose(&img)).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 2.0 * f64::EPSILON, "{a} vs {b}");
        }
    }
}

#[test]
fn batched_decomposition_matches_per_image() {
    let mut g = rng(6);
    let imgs: Vec<RgbImage> = (0..3)
        .map(|_| RgbImage::from_planar(2, 5, uniform(&mut g, 30, 0.0, 1.0)).unwrap())
        .collect();
    let lc = decompose_tensor(&RgbImage::stack(&imgs).unwrap()).unwrap();
    assert_eq!(lc.luminance.shape(), [3, 1, 2, 5]);
    for (i, img) in imgs.iter().enumerate() {
        let single = decompose(img);
        assert_eq!(&lc.luminance.data()[i * 10..(i + 1) * 10], single.luminance.data());
        assert_eq!(&lc.chrominance.data()[i * 30..(i + 1) * 30], single.chrominance.data());
    }
    let back = recompose_tensor(&lc).unwrap();
    assert_eq!(RgbImage::unstack(&back).unwrap()[2].data(), imgs[2].data());
}

#[test]
fn recomposed_gray_keeps_stored_luminance() {
    let lum: Vec<f64> = uniform(&mut rng(8), 12, 0.0, 1.0);
    let lc = LcPair {
        luminance: Tensor::from_vec(vec![1, 3, 4], lum.clone()).unwrap(),
        chrominance: Tensor::zeros(&[3, 3, 4]),
    };
    let again = decompose(&recompose(&lc).unwrap());
    assert_eq!(again.luminance.data(), &lum[..]);
}

#[test]
fn decomposition_gradient() {
    let mut g = rng(9);
    let x = common::rand_leaf(&mut g, &[2, 3, 3, 2]);
    let err = fd_check(&[x], |p| {
        let lc = decompose_tensor(&p[0]).unwrap();
        tensor::add(&probe_loss(&lc.luminance, 1), &probe_loss(&lc.chrominance, 2)).unwrap()
    });
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn rejects_non_rgb_shapes() {
    assert!(decompose_tensor(&Tensor::zeros(&[4, 2, 2])).is_err());
    assert!(RgbImage::new(Tensor::zeros(&[1, 2, 2])).is_err());
}

proptest! {
    #[test]
    fn decompose_is_linear(
        x in prop::collection::vec(-2.0f64..2.0, 12),
        y in prop::collection::vec(-2.0f64..2.0, 12),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let img = |d: Vec<f64>| RgbImage::from_planar(2, 2, d).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = decompose(&img(mix));
        let (dx, dy) = (decompose(&img(x)), decompose(&img(y)));
        let combine = |u: &Tensor, v: &Tensor| -> Vec<f64> {
            u.data().iter().zip(v.data()).map(|(p, q)| a * p + b * q).collect()
        };
        for (got, want) in [
            (lhs.luminance.to_vec(), combine(&dx.luminance, &dy.luminance)),
            (lhs.chrominance.to_vec(), combine(&dx.chrominance, &dy.chrominance)),
        ] {
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-12, "{} vs {}", g, w);
            }
        }
    }

    #[test]
    fn round_trip_error_is_at_most_one_rounding(d in prop::collection::vec(0.0f64..1.0, 27)) {
        let img = RgbImage::from_planar(3, 3, d).unwrap();
        let lc = decompose(&img);
        let back = recompose(&lc).unwrap();
        for (k, (a, b)) in img.data().iter().zip(back.data()).enumerate() {
            let l = lc.luminance.data()[k % 9];
            // the residual is rounded once at the scale of max(|a|, |l|)
            prop_assert!((a - b).abs() <= f64::EPSILON * a.abs().max(l.abs()), "{} vs {}", a, b);
        }
    }
}
