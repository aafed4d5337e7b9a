//! Pitch estimation, unit assignment and the F0 quantizer against analytic
//! references.

mod common;

use std::time::Instant;

use common::{f0_round_trip, f0_sweep_config, f0_sweep_options, sine_sweep, synthetic_contours};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocalmotion::metrics::{gpe, vde};
use vocalmotion::numerics::Tensor;
use vocalmotion::vocal::{analyze, estimate_f0, fit_kmeans, train_f0_codec, KMeansConfig, F0_MAX, F0_MIN};

#[test]
fn tones_are_tracked() {
    for hz in [110.0, 220.0, 330.0, 440.0] {
        let x = sine_sweep(hz, hz, 1.0, 16000);
        let (f0, v) = estimate_f0(&x, 16000, 0.02, F0_MIN, F0_MAX).unwrap();
        let n = f0.len();
        let truth = vec![hz; n - 4];
        let on = vec![true; n - 4];
        assert!(gpe(&truth, &on, &f0[2..n - 2], &v[2..n - 2]).unwrap() < 1.0);
        assert_eq!(vde(&on, &v[2..n - 2]).unwrap(), 0.0);
    }
}

#[test]
fn sweep_is_tracked() {
    let x = sine_sweep(110.0, 440.0, 2.0, 16000);
    let (f0, v) = estimate_f0(&x, 16000, 0.02, F0_MIN, F0_MAX).unwrap();
    let n = f0.len();
    let truth: Vec<f64> = (0..n).map(|i| 110.0 + 165.0 * i as f64 * 0.02).collect();
    let on = vec![true; n];
    assert!(gpe(&truth[2..n - 2], &on[2..n - 2], &f0[2..n - 2], &v[2..n - 2]).unwrap() < 1.0);
}

#[test]
fn shared_hop_gives_equal_lengths() {
    for sr in [16000, 22050, 44100] {
        let x = sine_sweep(200.0, 300.0, 0.73, sr);
        let a = analyze(&x, sr, 0.02).unwrap();
        assert_eq!(a.features.len(), a.len() * 40);
        assert_eq!(a.voiced.len(), a.len());
        assert_eq!(a.len(), 36);
        for (f, v) in a.f0_hz.iter().zip(&a.voiced) {
            assert_eq!(*f > 0.0, *v);
        }
    }
}

#[test]
fn unit_assignment_is_brute_force_nearest() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<f64>> = (0..600)
        .map(|_| (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let model = fit_kmeans(
        &Tensor::from_rows(&rows).unwrap(),
        &KMeansConfig {
            k: 40,
            ..Default::default()
        },
    )
    .unwrap();
    // Snap some queries onto centroids and midpoints so ties actually occur.
    let mut queries: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect())
        .collect();
    for (i, q) in queries.iter_mut().enumerate().take(100) {
        let (a, b) = (model.centroid(i % 40), model.centroid((i * 7 + 1) % 40));
        *q = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    }
    for q in &queries {
        let mut best = (f64::INFINITY, 0);
        for k in 0..model.k {
            let d: f64 = q.iter().zip(model.centroid(k)).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        assert_eq!(model.assign_row(q), best.1);
    }
}

#[test]
fn f0_codebook_size_sweep() {
    let train = synthetic_contours(48, 200, 4, 1);
    let held_out = synthetic_contours(12, 200, 4, 2);
    let t = Instant::now();
    let (c20, _) = train_f0_codec(&train, &f0_sweep_config(20), &f0_sweep_options()).unwrap();
    let (c5, _) = train_f0_codec(&train, &f0_sweep_config(5), &f0_sweep_options()).unwrap();
    let (g20, m20) = f0_round_trip(&c20, &held_out);
    let (g5, m5) = f0_round_trip(&c5, &held_out);
    eprintln!(
        "20 codes: GPE {g20:.3}% mse {m20:.5}; 5 codes: GPE {g5:.3}% mse {m5:.5}; {:?}",
        t.elapsed()
    );
    assert!(g20 < 5.0);
    assert!(g5 > g20);
    assert!(m20 <= m5);
    let ids = c20
        .encode(&held_out[0].f0_hz, &held_out[0].voiced, &held_out[0].singer)
        .unwrap();
    assert!(ids.iter().all(|&k| k < 20));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn analysis_length_rule(samples in 320usize..8000) {
        let x = sine_sweep(150.0, 150.0, samples as f64 / 16000.0, 16000);
        let a = analyze(&x, 16000, 0.02).unwrap();
        prop_assert_eq!(a.len(), x.len() / 320);
        prop_assert!(a.features.iter().all(|v| v.is_finite()));
    }
}
