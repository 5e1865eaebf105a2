mod common;

use common::naive_rfft2;

use std::f64::consts::PI;

use dfssm::fft::{self, ComplexSpectrum};
use dfssm::gradcheck::{self, Options};
use dfssm::{Float, Shape, Tape, Tensor};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: Float>(shape: Shape, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(
        shape,
        (0..shape.numel()).map(|_| T::of(rng.random_range(-1.0..1.0))).collect(),
    )
    .unwrap()
}

const SIZES: [(usize, usize); 6] = [(4, 4), (8, 8), (3, 5), (6, 7), (5, 6), (1, 9)];

#[test]
fn rfft2_matches_naive_dft() {
    for (i, &(h, w)) in SIZES.iter().enumerate() {
        let x = random::<f64>(Shape::new(2, 3, h, w), i as u64);
        let s = fft::rfft2(&x);
        assert_eq!(s.shape, Shape::new(2, 3, h, w / 2 + 1));
        for p in 0..6 {
            let want = naive_rfft2(&x.data()[p * h * w..(p + 1) * h * w], h, w);
            for (k, v) in want.iter().enumerate() {
                let idx = p * want.len() + k;
                let got = Complex64::new(s.re[idx], s.im[idx]);
                assert!((got - v).norm() < 1e-9, "{h}x{w} plane {p} bin {k}: {got} vs {v}");
            }
        }
    }
}

#[test]
fn delta_has_flat_spectrum() {
    let mut x = Tensor::<f64>::zeros(Shape::new(1, 1, 6, 8));
    x.data_mut()[0] = 1.0;
    let s = fft::rfft2(&x);
    assert!(s.re.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert!(s.im.iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn constant_concentrates_at_dc() {
    let x = Tensor::<f64>::full(Shape::new(1, 1, 5, 7), 2.0);
    let s = fft::rfft2(&x);
    assert!((s.get([0, 0, 0, 0]).re - 70.0).abs() < 1e-10);
    let rest: f64 = (1..s.re.len()).map(|i| s.re[i].abs() + s.im[i].abs()).sum();
    assert!(rest < 1e-9);
}

#[test]
fn round_trip_recovers_input() {
    for (i, &(h, w)) in SIZES.iter().enumerate() {
        let x = random::<f64>(Shape::new(1, 2, h, w), 100 + i as u64);
        let back = fft::irfft2(&fft::rfft2(&x)).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12, "{h}x{w}");
        let x32 = x.cast::<f32>();
        let back32 = fft::irfft2(&fft::rfft2(&x32)).unwrap();
        assert!(back32.max_abs_diff(&x32) < 1e-5);
    }
}

#[test]
fn parseval_with_hermitian_weights() {
    for (i, &(h, w)) in SIZES.iter().enumerate() {
        let x = random::<f64>(Shape::new(1, 1, h, w), 200 + i as u64);
        let s = fft::rfft2(&x);
        let wh = w / 2 + 1;
        let energy: f64 = (0..s.re.len())
            .map(|k| {
                let l = k % wh;
                let c = if l == 0 || (w % 2 == 0 && l == w / 2) { 1.0 } else { 2.0 };
                c * (s.re[k] * s.re[k] + s.im[k] * s.im[k])
            })
            .sum();
        let direct: f64 = x.data().iter().map(|v| v * v).sum();
        assert!((energy / (h * w) as f64 - direct).abs() < 1e-10, "{h}x{w}");
    }
}

#[test]
fn stacked_layout_round_trips() {
    let x = random::<f64>(Shape::new(2, 3, 4, 6), 7);
    let s = fft::rfft2(&x);
    let t = s.to_stacked();
    assert_eq!(t.shape(), Shape::new(2, 6, 4, 4));
    assert_eq!(t.at([1, 4, 2, 3]), s.im[((3 + 1) * 4 + 2) * 4 + 3]);
    assert_eq!(ComplexSpectrum::from_stacked(&t, 6).unwrap(), s);
    assert!(ComplexSpectrum::from_stacked(&t, 9).is_err());
}

#[test]
fn rfft2_stacked_gradcheck() {
    for (i, &(h, w)) in SIZES.iter().enumerate() {
        let inputs = [random::<f64>(Shape::new(2, 2, h, w), 300 + i as u64)];
        let report = gradcheck::check_inputs(
            &inputs,
            |_, v| gradcheck::project(&fft::rfft2_stacked(&v[0])?, i as u64),
            &Options::for_precision::<f64>().with_coords(None),
        )
        .unwrap();
        assert!(report.worst() < 1e-6, "{h}x{w}: {:?}", report.errors);
    }
}

#[test]
fn irfft2_stacked_gradcheck() {
    for (i, &(h, w)) in SIZES.iter().enumerate() {
        let inputs = [random::<f64>(Shape::new(1, 4, h, w / 2 + 1), 400 + i as u64)];
        let report = gradcheck::check_inputs(
            &inputs,
            |_, v| gradcheck::project(&fft::irfft2_stacked(&v[0], w)?, i as u64),
            &Options::for_precision::<f64>().with_coords(None),
        )
        .unwrap();
        assert!(report.worst() < 1e-6, "{h}x{w}: {:?}", report.errors);
    }
}

#[test]
fn spectral_pipeline_gradcheck_f32() {
    let inputs = [random::<f32>(Shape::new(1, 2, 8, 8), 9)];
    let report = gradcheck::check_inputs(
        &inputs,
        |_, v| {
            let s = fft::rfft2_stacked(&v[0])?;
            gradcheck::project(&fft::irfft2_stacked(&s, 8)?, 3)
        },
        &Options::for_precision::<f32>(),
    )
    .unwrap();
    assert!(report.worst() < 1e-3, "{:?}", report.errors);
}

#[test]
fn complex_abs_values_and_gradient() {
    let tape = Tape::<f64>::new();
    let s = tape.leaf(
        Tensor::from_vec(Shape::new(1, 2, 1, 3), vec![3.0, 0.0, -1.0, 4.0, 0.0, 0.0]).unwrap(),
        true,
    );
    let m = fft::complex_abs(&s).unwrap();
    assert_eq!(m.value().data(), &[5.0, 0.0, 1.0]);
    let loss = dfssm::tensor::ops::sum(&m).unwrap();
    let g = tape.backward(&loss).unwrap().wrt(&s);
    assert_eq!(g.data(), &[0.6, 0.0, -1.0, 0.8, 0.0, 0.0]);

    let inputs = [random::<f64>(Shape::new(2, 4, 3, 3), 11)];
    let report = gradcheck::check_inputs(
        &inputs,
        |_, v| gradcheck::project(&fft::complex_abs(&v[0])?, 5),
        &Options::for_precision::<f64>(),
    )
    .unwrap();
    assert!(report.worst() < 1e-6, "{:?}", report.errors);
}

#[test]
fn spectrum_image_is_normalized_and_centered() {
    let x = Tensor::<f32>::from_fn(Shape::new(1, 3, 16, 16), |[_, c, y, x]| {
        0.5 + 0.1 * c as f32 + 0.3 * ((x as f32) * 0.7 + (y as f32) * 0.2).sin()
    });
    let img = fft::spectrum_image(&x, true).unwrap();
    assert_eq!(img.shape(), Shape::new(1, 1, 16, 16));
    let max = img.data().iter().copied().fold(f32::MIN, f32::max);
    let min = img.data().iter().copied().fold(f32::MAX, f32::min);
    assert!((max - 1.0).abs() < 1e-6 && min.abs() < 1e-6);
    // DC dominates and sits at the center after shifting
    assert_eq!(img.at([0, 0, 8, 8]), 1.0);
    assert!(fft::spectrum_image(&Tensor::<f32>::zeros(Shape::new(2, 3, 4, 4)), true).is_err());
}

#[test]
fn orientation_of_grating() {
    let (h, w) = (64, 64);
    for (kx, ky) in [(8.0, 0.0), (0.0, 8.0), (6.0, 6.0), (6.0, -6.0), (8.0, 3.0)] {
        let plane: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                (2.0 * PI * (kx * x / w as f64 + ky * y / h as f64)).cos()
            })
            .collect();
        let amp = fft::full_amplitude(&plane, h, w);
        let hist = fft::orientation_histogram(&amp, h, w, 90, 0.02);
        let got = fft::dominant_orientation(&hist, 0);
        let want = (ky as f64).atan2(kx).to_degrees().rem_euclid(180.0);
        assert!(fft::orientation_distance(got, want) <= 2.0, "({kx},{ky}): {got} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rfft2_is_linear(h in 1usize..7, w in 1usize..7, a in -3.0f64..3.0, seed in 0u64..1000) {
        let x = random::<f64>(Shape::new(1, 1, h, w), seed);
        let y = random::<f64>(Shape::new(1, 1, h, w), seed + 1);
        let combo = Tensor::from_vec(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + q).collect()).unwrap();
        let (sx, sy, sc) = (fft::rfft2(&x), fft::rfft2(&y), fft::rfft2(&combo));
        for k in 0..sc.re.len() {
            prop_assert!((sc.re[k] - (a * sx.re[k] + sy.re[k])).abs() < 1e-9);
            prop_assert!((sc.im[k] - (a * sx.im[k] + sy.im[k])).abs() < 1e-9);
        }
    }

    #[test]
    fn round_trip_any_size(h in 1usize..12, w in 1usize..12, seed in 0u64..1000) {
        let x = random::<f64>(Shape::new(1, 1, h, w), seed);
        let back = fft::irfft2(&fft::rfft2(&x)).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-11);
    }
}
