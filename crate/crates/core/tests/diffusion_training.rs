mod common;

use accomp_core::diffusion::{guided_denoise, ConditioningBundle, Denoiser};
use common::ldm::{dropout_over_steps, guidance_inputs, tiny_model};

#[test]
fn each_source_is_dropped_half_the_time_over_ten_thousand_steps() {
    let d = dropout_over_steps(10_000, 4, 7);
    assert_eq!(d.items, 40_000);
    assert!((d.context_rate() - 0.5).abs() < 0.02, "{}", d.context_rate());
    assert!((d.style_rate() - 0.5).abs() < 0.02, "{}", d.style_rate());
    assert!((d.joint_rate() - 0.25).abs() < 0.02, "{}", d.joint_rate());
}

#[test]
fn guidance_at_unit_and_zero_strength_is_bitwise_exact() {
    let model = tiny_model(3);
    let g = guidance_inputs(4);
    for sigma in [0.05, 0.7, 12.0] {
        let full = model.denoise(&g.x, sigma, Some(&g.context), Some(&g.style)).unwrap();
        let uncond = model.denoise(&g.x, sigma, None, None).unwrap();
        let at = |cc: f64, cs: f64| {
            let cond = ConditioningBundle::new(Some(g.context.clone()), Some(g.style.clone()), cc, cs);
            guided_denoise(&g.x, sigma, &cond, &model).unwrap()
        };
        assert_eq!(at(1.0, 1.0), full);
        assert_eq!(at(0.0, 0.0), uncond);
        assert_ne!(full, uncond);
    }
}

#[test]
fn extrapolated_guidance_matches_explicit_combination() {
    let model = tiny_model(5);
    let g = guidance_inputs(6);
    let sigma = 0.9;
    let f0 = model.denoise(&g.x, sigma, None, None).unwrap();
    let fc = model.denoise(&g.x, sigma, Some(&g.context), None).unwrap();
    let ff = model.denoise(&g.x, sigma, Some(&g.context), Some(&g.style)).unwrap();
    let cond = ConditioningBundle::new(Some(g.context.clone()), Some(g.style.clone()), 1.5, 2.0);
    let got = guided_denoise(&g.x, sigma, &cond, &model).unwrap();
    for i in 0..got.len() {
        let (a, b, c) = (f0.data()[i], fc.data()[i], ff.data()[i]);
        let want = a + 1.5 * (b - a) + 2.0 * (c - b);
        assert!((got.data()[i] - want).abs() < 1e-12);
    }
}
