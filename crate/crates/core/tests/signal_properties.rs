use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nvkit::signal::{
    contrast_image, localize_emitters, lockin_demodulate, percent_contrast_image, synthesize_detector_signal,
    synthesize_widefield_pair, ContrastImage, Emitter, ImageGeometry, ModulationSpec,
};

fn frames() -> impl Strategy<Value = (ContrastImage<f64>, ContrastImage<f64>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(w, h)| {
        (
            proptest::collection::vec(1.0..1000.0f64, w * h),
            proptest::collection::vec(0.9..1.0f64, w * h),
        )
            .prop_map(move |(off, ratio)| {
                let on: Vec<f64> = off.iter().zip(&ratio).map(|(o, r)| o * r).collect();
                (ContrastImage::new(w, h, 0.5, on).unwrap(), ContrastImage::new(w, h, 0.5, off).unwrap())
            })
    })
}

fn demod(background: f64, depth: f64, noise: f64, seed: u64) -> f64 {
    let m = ModulationSpec { depth, ..ModulationSpec::default() };
    let ts = synthesize_detector_signal(background, 0.97, 1.0, &m, 40_000, 1e5, noise, seed).unwrap();
    lockin_demodulate(&ts, m.f_mod).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn difference_image_ignores_frame_order((on, off) in frames()) {
        let a = contrast_image(&on, &off).unwrap();
        let b = contrast_image(&off, &on).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.pixels.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn percent_contrast_swap_relation((on, off) in frames()) {
        let c = percent_contrast_image(&on, &off).unwrap();
        let swapped = percent_contrast_image(&off, &on).unwrap();
        for k in 0..c.pixels.len() {
            // 1 − off/on = −(1 − on/off)·off/on.
            let expected = -c.pixels[k] * off.pixels[k] / on.pixels[k];
            prop_assert!((swapped.pixels[k] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            prop_assert!(c.pixels[k] >= 0.0 && swapped.pixels[k] <= 0.0);
        }
    }

    #[test]
    fn lockin_rejects_any_constant_background(background in 0.0..1e3f64, seed in 0u64..100) {
        let clean = demod(0.0, 1.0, 0.0, seed);
        let shifted = demod(background, 1.0, 0.0, seed);
        prop_assert!((shifted - clean).abs() < 0.005 * clean);
    }
}

#[test]
fn lockin_reads_half_the_modulated_difference() {
    let r = demod(50.0, 1.0, 0.0, 0);
    // Sampling N points per period scales the square-wave fundamental by (π/N)/sin(π/N).
    let n = 100.0;
    let x = std::f64::consts::PI / n;
    let oracle = 0.015 * x / x.sin();
    assert!((r - oracle).abs() < 1e-12, "{r} vs {oracle}");
    assert!((r / 0.015 - 1.0).abs() < 2e-4);
}

#[test]
fn lockin_background_rejection_with_noise() {
    // Equal seeds give equal noise; the background is the only change.
    for seed in 0..5 {
        let clean = demod(0.0, 1.0, 0.002, seed);
        let shifted = demod(3.0, 1.0, 0.002, seed);
        assert!((shifted - clean).abs() < 0.005 * clean);
    }
}

#[test]
fn lockin_is_linear_in_depth() {
    let full = demod(10.0, 1.0, 0.0, 0);
    for d in [0.1, 0.5, 1.0] {
        let r = demod(10.0, d, 0.0, 0);
        assert!((r - d * full).abs() <= 0.01 * d * full, "depth {d}: {r} vs {}", d * full);
    }
}

fn place(n: usize, size: usize, min_sep: f64, margin: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let span = size as f64 - 1.0 - 2.0 * margin;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    while pts.len() < n {
        let p = (margin + span * rng.random::<f64>(), margin + span * rng.random::<f64>());
        if pts.iter().all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= min_sep) {
            pts.push(p);
        }
    }
    pts
}

#[test]
fn localization_is_complete_and_exact_up_to_fifty_emitters() {
    let (size, px, psf, snr, background, brightness, contrast) = (128, 0.5, 1.5, 10.0, 100.0, 50.0, 2.0);
    let signal = brightness * contrast / 100.0;
    let noise = signal / (snr * std::f64::consts::SQRT_2);
    let geo = ImageGeometry { width: size, height: size, px_size: px };
    for n in [30, 50] {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let pts = place(n, size, 4.0 * psf, 3.0 * psf, &mut rng);
            let emitters: Vec<Emitter<f64>> =
                pts.iter().map(|&(x, y)| Emitter { x: x * px, y: y * px, contrast, brightness }).collect();
            let (on, off) = synthesize_widefield_pair(&emitters, psf * px, background, noise, &geo, seed).unwrap();
            let img = contrast_image(&on, &off).unwrap();
            let det = localize_emitters(&img, 0.55 * signal, 3.0 * psf).unwrap();
            assert_eq!(det.len(), n, "n={n} seed={seed}");
            for &(x, y) in &pts {
                let d = det.iter().map(|q| (q.x - x).hypot(q.y - y)).fold(f64::INFINITY, f64::min);
                assert!(d < 1.5, "n={n} seed={seed}: nearest detection {d} px");
            }
            assert!(det.windows(2).all(|w| w[0].peak >= w[1].peak));
        }
    }
}

#[test]
fn noiseless_spot_localizes_to_a_fifth_of_a_pixel() {
    let geo = ImageGeometry { width: 32, height: 40, px_size: 1.0 };
    let e = Emitter::<f64> { x: 10.0, y: 20.0, contrast: 2.0, brightness: 100.0 };
    let (on, off) = synthesize_widefield_pair(&[e], 1.5, 10.0, 0.0, &geo, 0).unwrap();
    let det = localize_emitters(&contrast_image(&on, &off).unwrap(), 0.5, 3.0).unwrap();
    assert_eq!(det.len(), 1);
    assert!((det[0].x - 10.0).hypot(det[0].y - 20.0) < 0.2);
}
