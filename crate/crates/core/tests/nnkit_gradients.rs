mod common;

use common::gradcases::{check_layer, LAYERS};

#[test]
fn every_layer_matches_finite_differences_f64() {
    for layer in LAYERS {
        let mut worst = 0.0f64;
        for seed in 0..100 {
            let r = check_layer::<f64>(layer, seed, 1e-6, 1e-3).unwrap();
            worst = worst.max(r.max_rel_err);
        }
        assert!(worst < 1e-6, "{layer}: max rel err {worst:e}");
    }
}

// 32-bit loss round-off dominates small gradients, so errors are measured
// relative to max(|g|, 1).
#[test]
fn every_layer_matches_finite_differences_f32() {
    for layer in LAYERS {
        let mut worst = 0.0f64;
        for seed in 0..100 {
            let r = check_layer::<f32>(layer, 1000 + seed, 3e-3, 1.0).unwrap();
            worst = worst.max(r.max_rel_err);
        }
        assert!(worst < 1e-3, "{layer}: max rel err {worst:e}");
    }
}
