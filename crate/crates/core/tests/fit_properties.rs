use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use nvkit::fit::{
    covariance_min_eigenvalue, emg_pdf, erfc, fit_two_peak, initial_guess, peak_mode, EmgParams, TwoPeakFit,
};
use nvkit::lindblad::{OdmrSpectrum, SpectrumMeta};

fn emg() -> impl Strategy<Value = EmgParams<f64>> {
    (2840.0..2900.0f64, 0.3..4.0f64, 0.05..5.0f64, 0.1..10.0f64)
        .prop_map(|(mu, sigma, lambda, amplitude)| EmgParams { mu, sigma, lambda, amplitude })
}

fn axis() -> Vec<f64> {
    (0..301).map(|i| 2830.0 + 0.25 * i as f64).collect()
}

fn noisy_spectrum(truth: &TwoPeakFit<f64>, noise: f64, seed: u64) -> OdmrSpectrum<f64> {
    let freqs = axis();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, noise).unwrap();
    let y = freqs.iter().map(|&f| truth.evaluate(f) + n.sample(&mut rng)).collect();
    OdmrSpectrum::new(freqs, y, SpectrumMeta::default()).unwrap()
}

fn doublet(mu1: f64, mu2: f64, amp: f64) -> TwoPeakFit<f64> {
    TwoPeakFit::from_params(
        EmgParams { mu: mu1, sigma: 1.4, lambda: 0.7, amplitude: amp },
        EmgParams { mu: mu2, sigma: 1.6, lambda: 0.5, amplitude: 0.9 * amp },
        0.05,
    )
}

fn fit(spec: &OdmrSpectrum<f64>) -> TwoPeakFit<f64> {
    fit_two_peak(spec, &initial_guess(spec).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn emg_is_nonnegative(p in emg(), x in 2700.0..3000.0f64) {
        let v = emg_pdf(x, &p);
        prop_assert!(v >= 0.0 && v.is_finite());
    }

    #[test]
    fn emg_is_translation_equivariant(p in emg(), xi in 2_867_200i64..3_020_800, mi in 2_867_200i64..2_969_600, delta in -50i32..50) {
        // Dyadic grids keep x + δ and μ + δ exact, so only x − μ matters.
        let (x, mu) = (xi as f64 / 1024.0, mi as f64 / 1024.0);
        let p = EmgParams { mu, ..p };
        let d = f64::from(delta);
        let a = emg_pdf(x + d, &p.shifted(d));
        let b = emg_pdf(x, &p);
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{a} vs {b}");
    }

    #[test]
    fn erfc_agrees_with_statrs(x in -6.0..6.0f64) {
        let ours = erfc(x);
        let reference = statrs::function::erf::erfc(x);
        prop_assert!((ours - reference).abs() <= 1e-9 * reference, "x={x}: {ours:e} vs {reference:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fits_decrease_cost_and_have_psd_covariance(
        mu1 in 2855.0..2863.0f64,
        gap in 12.0..25.0f64,
        amp in 2.0..6.0f64,
        seed in 0u64..1000,
    ) {
        let f = fit(&noisy_spectrum(&doublet(mu1, mu1 + gap, amp), 0.02, seed));
        prop_assert!(f.cost_history.len() >= 2);
        prop_assert!(f.cost_history.windows(2).all(|w| w[1] <= w[0]));
        let trace: f64 = (0..9).map(|i| f.covariance[i][i]).sum();
        for i in 0..9 {
            for j in 0..9 {
                prop_assert!((f.covariance[i][j] - f.covariance[j][i]).abs() <= 1e-12 * trace);
            }
        }
        prop_assert!(covariance_min_eigenvalue(&f) >= -1e-12 * trace);
    }

    #[test]
    fn swapped_initial_labels_give_same_modes(
        mu1 in 2855.0..2863.0f64,
        gap in 12.0..25.0f64,
        seed in 0u64..1000,
    ) {
        let spec = noisy_spectrum(&doublet(mu1, mu1 + gap, 4.0), 0.02, seed);
        let init = initial_guess(&spec).unwrap();
        let a = fit_two_peak(&spec, &init).unwrap();
        let b = fit_two_peak(&spec, &init.with_peaks_swapped()).unwrap();
        prop_assert!((a.peak_modes.0 - b.peak_modes.0).abs() < 1e-3);
        prop_assert!((a.peak_modes.1 - b.peak_modes.1).abs() < 1e-3);
    }
}

#[test]
fn erfc_matches_high_precision_values() {
    // 20-digit values from arbitrary-precision evaluation, every 0.8 on [−5, 26.2].
    let table: [(f64, f64); 40] = [
        (-5.0, 1.9999999999984625402),
        (-4.2, 1.9999999971445058204),
        (-3.4, 1.9999984780066371377),
        (-2.6, 1.9997639655834706509),
        (-1.8, 1.9890905016357307161),
        (-1.0, 1.8427007929497148693),
        (-0.2, 1.2227025892104784662),
        (0.6, 0.39614390915207409492),
        (1.4, 0.0477148802373512036),
        (2.2, 0.0018628462979818898586),
        (3.0, 0.000022090496998585441373),
        (3.8, 7.7003927456964236041e-8),
        (4.6, 7.7495995974418577945e-11),
        (5.4, 2.2276786794677860964e-14),
        (6.2, 1.81667561723812702e-18),
        (7.0, 4.1838256077794143986e-23),
        (7.8, 2.7124113294366098528e-28),
        (8.6, 4.9387695707742086089e-34),
        (9.4, 2.5212336392626995563e-40),
        (10.2, 3.6038304009246658253e-47),
        (11.0, 1.4408661379436946803e-54),
        (11.8, 1.6100287709848043768e-62),
        (12.6, 5.024645267271239904e-71),
        (13.4, 4.3772572462571945463e-80),
        (14.2, 1.0639643548641680477e-89),
        (15.0, 7.2129941724512066666e-100),
        (15.8, 1.3634147431378202293e-110),
        (16.6, 7.1836483323527841197e-122),
        (17.4, 1.05478558515502473e-133),
        (18.2, 4.3151548698993638212e-146),
        (19.0, 4.9177228392564754464e-159),
        (19.8, 1.5609861600555382297e-172),
        (20.6, 1.3798799241981682226e-186),
        (21.4, 3.3965458629894160486e-201),
        (22.2, 2.3277703713110525515e-216),
        (23.0, 4.4412659480880572441e-232),
        (23.8, 2.3588442450132551673e-248),
        (24.6, 3.4872509398477119503e-265),
        (25.4, 1.4349192870633965722e-282),
        (26.2, 1.6432507924389462061e-300),
    ];
    for (x, want) in table {
        let got = erfc(x);
        let (abs, rel) = ((got - want).abs(), ((got - want) / want).abs());
        if x.abs() <= 10.0 {
            assert!(abs <= 1e-12 && rel < 1e-12, "x={x}: {got:e} vs {want:e}");
        } else {
            assert!(rel < 1e-13, "x={x}: {got:e} vs {want:e}");
        }
    }
}

#[test]
fn baseline_offset_leaves_zfs_and_splitting() {
    for seed in 0..5 {
        let base = noisy_spectrum(&doublet(2861.0, 2878.5, 4.0), 0.02, seed);
        let reference = fit(&base);
        for c in [0.0, 1.0, 10.0] {
            let shifted = OdmrSpectrum::new(
                base.freqs.clone(),
                base.contrast.iter().map(|y| y + c).collect(),
                SpectrumMeta::default(),
            )
            .unwrap();
            let f = fit(&shifted);
            assert!((f.zfs - reference.zfs).abs() < 1e-3, "c={c}: zfs {} vs {}", f.zfs, reference.zfs);
            assert!((f.splitting - reference.splitting).abs() < 1e-3);
            assert!((f.baseline - reference.baseline - c).abs() < 1e-6);
        }
    }
}

#[test]
fn peak_modes_sit_at_model_maxima() {
    let truth = doublet(2861.0, 2878.5, 4.0);
    let f = fit(&noisy_spectrum(&truth, 0.0, 0));
    for (p, m) in [(f.peak1, f.peak_modes.0), (f.peak2, f.peak_modes.1)] {
        let h = 1e-4;
        assert!((m - peak_mode(&p)).abs() < 1e-9);
        assert!(emg_pdf(m, &p) >= emg_pdf(m - h, &p) && emg_pdf(m, &p) >= emg_pdf(m + h, &p));
    }
    assert!((f.zfs - 0.5 * (f.peak_modes.0 + f.peak_modes.1)).abs() < 1e-12);
}

#[test]
fn wide_gaussian_limit_matches_mean_matched_gaussian() {
    // For λσ ≫ 1 the density approaches a Gaussian centred at μ + 1/λ.
    let p = EmgParams { mu: 2870.0, sigma: 2.0, lambda: 50.0, amplitude: 1.0 };
    let g = |x: f64| {
        let z = (x - p.mu - 1.0 / p.lambda) / p.sigma;
        (-0.5 * z * z).exp() / (p.sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let peak = g(p.mu + 1.0 / p.lambda);
    for k in -40..=40 {
        let x = p.mu + 0.2 * k as f64;
        assert!((emg_pdf(x, &p) - g(x)).abs() < 2e-3 * peak, "x={x}");
    }
}
